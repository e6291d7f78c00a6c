//! Seeded synthetic street/table scenes with a known set of injected
//! convention violations.
//!
//! Every clean scene follows three conventions: the sky band sits above the
//! ground band, every car rests on the ground, and every ball rests on a
//! table. A fixed number of scenes (`round(n_scenes * anomaly_rate)`) break
//! one of them on purpose, and the generator records which.

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{graphs_from_document, AnnotatedImage, AnnotatedObject, AnnotationDocument, IngestOptions};
use crate::scene::{Predicate, SceneGraph};
use crate::vocab::Vocabulary;

const CANVAS: i64 = 1000;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("generator config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub n_scenes: usize,
    pub seed: u64,
    /// Labels for background clutter objects standing on the ground.
    pub label_pool: Vec<String>,
    pub anomaly_rate: f64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            n_scenes: 100,
            seed: 7,
            label_pool: default_label_pool(),
            anomaly_rate: 0.01,
        }
    }
}

pub fn default_label_pool() -> Vec<String> {
    [
        "tree", "person", "dog", "lamp", "bench", "bicycle", "mailbox", "hydrant", "bush", "sign",
        "trash can", "cat", "bird", "motorcycle", "truck", "fence", "pole", "umbrella", "statue",
        "fountain", "cart", "box", "barrel", "kiosk",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    SkyAboveGround,
    CarOnGround,
    BallOnTable,
}

impl Convention {
    pub const ALL: [Convention; 3] = [
        Convention::SkyAboveGround,
        Convention::CarOnGround,
        Convention::BallOnTable,
    ];

    /// Checks the convention on a graph. Vacuously true when the labels it
    /// talks about are absent.
    pub fn holds(self, graph: &SceneGraph) -> bool {
        let ids = |label: &str| -> Vec<u32> {
            graph
                .objects
                .iter()
                .filter(|o| o.label == label)
                .map(|o| o.object_id)
                .collect()
        };
        let every_rests_on = |top: &str, support: &str| {
            let supports = ids(support);
            ids(top)
                .into_iter()
                .all(|t| supports.iter().any(|&s| graph.has_relation(t, Predicate::On, s)))
        };
        match self {
            Convention::SkyAboveGround => {
                let grounds = ids("ground");
                ids("sky")
                    .into_iter()
                    .all(|s| grounds.iter().all(|&g| graph.has_relation(s, Predicate::Above, g)))
            }
            Convention::CarOnGround => every_rests_on("car", "ground"),
            Convention::BallOnTable => every_rests_on("ball", "table"),
        }
    }
}

/// The kind of deliberate violation injected into an anomalous scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// A car floats inside the sky band.
    CarInSky,
    /// The ball lies on the ground beneath its table.
    BallUnderTable,
    /// The whole scene is mirrored vertically: ground on top, sky below.
    UpsideDown,
}

impl Violation {
    /// The convention this violation is built to break.
    pub fn convention(self) -> Convention {
        match self {
            Violation::CarInSky => Convention::CarOnGround,
            Violation::BallUnderTable => Convention::BallOnTable,
            Violation::UpsideDown => Convention::SkyAboveGround,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub image_id: String,
    pub violation: Option<Violation>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub document: AnnotationDocument,
    pub graphs: Vec<SceneGraph>,
    pub truth: Vec<SceneTruth>,
}

impl SyntheticCorpus {
    pub fn anomalous_ids(&self) -> Vec<&str> {
        self.truth
            .iter()
            .filter(|t| t.violation.is_some())
            .map(|t| t.image_id.as_str())
            .collect()
    }
}

/// Timestamp stamped on synthetic graphs so that output depends on the seed
/// alone.
pub fn synthetic_epoch() -> DateTime<Utc> {
    DateTime::<Utc>::UNIX_EPOCH
}

struct Placed {
    label: String,
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    depth: Option<i64>,
    colors: Vec<&'static str>,
    shape: Option<&'static str>,
}

impl Placed {
    fn to_annotation(&self) -> AnnotatedObject {
        AnnotatedObject {
            label: self.label.clone(),
            bbox_px: [self.x as f64, self.y as f64, self.w as f64, self.h as f64],
            depth: self.depth.map(|d| d as f64 / 100.0),
            colors: (!self.colors.is_empty()).then(|| self.colors.iter().map(|c| c.to_string()).collect()),
            shape: self.shape.map(String::from),
            confidence: None,
            attributes: None,
        }
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// A ground-standing object waiting for a horizontal slot.
struct Standing {
    label: String,
    w: i64,
    h: i64,
    depth: i64,
    colors: Vec<&'static str>,
    shape: Option<&'static str>,
    /// Extra clearance on both sides of the slot.
    margin: i64,
    /// Table carrying a ball on top.
    with_ball: bool,
}

// Size, depth and spacing ranges are chosen so that clean scenes agree on
// almost every size, depth and support relation between the fixed labels:
// buildings are wider than `near` reach plus margin, cars always dwarf tables,
// tables sit behind cars, and only the sky/ground bands share x-extent with
// the standing objects.
fn layout_scene(
    rng: &mut ChaCha8Rng,
    pool: &[String],
    violation: Option<Violation>,
) -> Vec<Placed> {
    let sky_h = rng.random_range(180..=280);
    let ground_top = rng.random_range(680..=760);
    let mut placed = vec![
        Placed {
            label: "sky".into(),
            x: 0,
            y: 0,
            w: CANVAS,
            h: sky_h,
            depth: Some(100),
            colors: vec![if rng.random_bool(0.8) { "blue" } else { "gray" }],
            shape: None,
        },
        Placed {
            label: "ground".into(),
            x: 0,
            y: ground_top,
            w: CANVAS,
            h: CANVAS - ground_top,
            depth: None,
            colors: vec![pick(rng, &["green", "brown", "gray"])],
            shape: None,
        },
    ];

    let mut cars = Vec::new();
    let n_cars = if violation == Some(Violation::CarInSky) {
        2
    } else {
        rng.random_range(1..=2)
    };
    for _ in 0..n_cars {
        cars.push(Standing {
            label: "car".into(),
            w: rng.random_range(150..=180),
            h: rng.random_range(85..=105),
            depth: rng.random_range(30..=45),
            colors: vec![pick(rng, &["red", "blue", "black", "white", "gray"])],
            shape: None,
            margin: 0,
            with_ball: false,
        });
    }
    let mut standing = Vec::new();
    if violation == Some(Violation::CarInSky) {
        for car in cars {
            let x = rng.random_range(0..=(CANVAS - car.w));
            let y = rng.random_range(10..=(sky_h - car.h - 10));
            placed.push(Placed {
                label: car.label,
                x,
                y,
                w: car.w,
                h: car.h,
                depth: Some(car.depth),
                colors: car.colors,
                shape: car.shape,
            });
        }
    } else {
        standing.extend(cars);
    }
    if rng.random_bool(0.6) {
        standing.push(Standing {
            label: "building".into(),
            w: rng.random_range(200..=260),
            h: rng.random_range(260..=330),
            depth: rng.random_range(80..=85),
            colors: vec![pick(rng, &["gray", "brown", "white", "beige"])],
            shape: Some("rectangular"),
            margin: 80,
            with_ball: false,
        });
    }
    let forced_table = violation == Some(Violation::BallUnderTable);
    if forced_table || rng.random_bool(0.5) {
        standing.push(Standing {
            label: "table".into(),
            w: rng.random_range(80..=95),
            h: rng.random_range(70..=78),
            depth: rng.random_range(55..=60),
            colors: vec![pick(rng, &["brown", "white", "black"])],
            shape: Some("rectangular"),
            margin: 0,
            with_ball: true,
        });
    }
    for _ in 0..rng.random_range(0..=2) {
        standing.push(Standing {
            label: pool[rng.random_range(0..pool.len())].clone(),
            w: rng.random_range(40..=120),
            h: rng.random_range(70..=220),
            depth: rng.random_range(25..=70),
            colors: vec![],
            shape: None,
            margin: 0,
            with_ball: false,
        });
    }
    standing.shuffle(rng);

    // Non-overlapping horizontal slots; clutter and other droppable objects
    // are removed from the end until everything fits.
    let gap = 20;
    let footprint = |s: &Standing| s.w + 2 * s.margin + gap;
    let mut total: i64 = gap + standing.iter().map(footprint).sum::<i64>();
    while total > CANVAS {
        let Some(idx) = standing
            .iter()
            .rposition(|s| s.label != "car" && !(s.with_ball && forced_table))
        else {
            break;
        };
        total -= footprint(&standing.remove(idx));
    }
    let jitter = (CANVAS - total).max(0) / standing.len().max(1) as i64;
    let mut x = gap;
    for s in standing {
        x += rng.random_range(0..=jitter) + s.margin;
        if s.with_ball {
            let table_sink = if forced_table {
                rng.random_range(8..=15)
            } else {
                rng.random_range(1..=10)
            };
            let table_y = ground_top + table_sink - s.h;
            let ball = rng.random_range(40..=50);
            let ball_x = x + (s.w - ball) / 2 + rng.random_range(-5..=5);
            let ball_y = if forced_table {
                ground_top + rng.random_range(1..=7) - ball
            } else {
                table_y + rng.random_range(0..=3) - ball
            };
            placed.push(Placed {
                label: s.label,
                x,
                y: table_y,
                w: s.w,
                h: s.h,
                depth: Some(s.depth),
                colors: s.colors,
                shape: s.shape,
            });
            placed.push(Placed {
                label: "ball".into(),
                x: ball_x,
                y: ball_y,
                w: ball,
                h: ball,
                depth: Some(s.depth - 1),
                colors: vec![pick(rng, &["red", "blue", "yellow", "green", "orange"])],
                shape: Some("round"),
            });
        } else {
            // Buildings are flush with the ground; everything else sinks a little.
            let sink = if s.label == "building" { 0 } else { rng.random_range(1..=15) };
            placed.push(Placed {
                label: s.label,
                x,
                y: ground_top + sink - s.h,
                w: s.w,
                h: s.h,
                depth: Some(s.depth),
                colors: s.colors,
                shape: s.shape,
            });
        }
        x += s.w + s.margin + gap;
    }

    if violation == Some(Violation::UpsideDown) {
        for p in placed.iter_mut() {
            p.y = CANVAS - p.y - p.h;
        }
    }
    placed
}

/// Generates the corpus. Output is a pure function of `spec`.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<SyntheticCorpus, GenError> {
    if spec.label_pool.is_empty() {
        return Err(GenError::Config("label_pool is empty".into()));
    }
    if spec.n_scenes == 0 {
        return Err(GenError::Config("n_scenes must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.anomaly_rate) {
        return Err(GenError::Config(format!(
            "anomaly_rate {} outside [0, 1]",
            spec.anomaly_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_anomalies = (spec.n_scenes as f64 * spec.anomaly_rate).round() as usize;
    let mut order: Vec<usize> = (0..spec.n_scenes).collect();
    order.shuffle(&mut rng);
    let mut violations = vec![None; spec.n_scenes];
    let kinds = [Violation::CarInSky, Violation::BallUnderTable, Violation::UpsideDown];
    for (k, &idx) in order.iter().take(n_anomalies).enumerate() {
        violations[idx] = Some(kinds[k % kinds.len()]);
    }

    let mut images = Vec::with_capacity(spec.n_scenes);
    let mut truth = Vec::with_capacity(spec.n_scenes);
    for (i, violation) in violations.into_iter().enumerate() {
        let image_id = format!("scene-{i:06}");
        let placed = layout_scene(&mut rng, &spec.label_pool, violation);
        images.push(AnnotatedImage {
            image_id: image_id.clone(),
            image_uri: None,
            width_px: CANVAS as f64,
            height_px: CANVAS as f64,
            objects: placed.iter().map(Placed::to_annotation).collect(),
        });
        truth.push(SceneTruth { image_id, violation });
    }
    let document = AnnotationDocument { images };
    let graphs = graphs_from_document(
        &document,
        &Vocabulary::default(),
        &IngestOptions::default(),
        synthetic_epoch(),
    )
    .map_err(|e| GenError::Config(format!("generated layout rejected: {e}")))?
    .graphs;
    Ok(SyntheticCorpus {
        document,
        graphs,
        truth,
    })
}
