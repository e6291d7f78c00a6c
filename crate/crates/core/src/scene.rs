//! Scene-graph domain types and the geometric rules that turn annotated
//! boxes into relation triples.
//!
//! Coordinates are normalized to `[0, 1]` with the origin at the top-left
//! corner and `y` growing downward.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack applied to every rule comparison so that values sitting exactly on
/// a threshold evaluate the same way regardless of floating-point noise
/// introduced by pixel/normalized conversions.
pub const GEOM_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("scene has no objects")]
    EmptyScene,
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, SceneError> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(SceneError::InvalidBBox {
                x_min,
                y_min,
                x_max,
                y_max,
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        let finite = [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        finite
            && 0.0 <= self.x_min
            && self.x_min < self.x_max
            && self.x_max <= 1.0
            && 0.0 <= self.y_min
            && self.y_min < self.y_max
            && self.y_max <= 1.0
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// Length of the overlap of the two x-intervals (0 when disjoint).
    pub fn x_overlap(&self, other: &BBox) -> f64 {
        (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0)
    }

    /// Non-strict containment: edges may coincide.
    pub fn encloses(&self, other: &BBox) -> bool {
        self.x_min <= other.x_min + GEOM_EPS
            && self.y_min <= other.y_min + GEOM_EPS
            && other.x_max <= self.x_max + GEOM_EPS
            && other.y_max <= self.y_max + GEOM_EPS
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        (ax - bx).hypot(ay - by)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub object_id: u32,
    pub label: String,
    pub bbox: BBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default)]
    pub colors: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<String>,
    pub confidence: f64,
    /// Opaque pass-through attributes (e.g. expressions on people); never
    /// interpreted by the engine.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub area: f64,
    #[serde(default)]
    pub size_rank: u32,
    #[serde(default)]
    pub salience: f64,
}

impl SceneObject {
    /// An object with derived fields left unset; run [`normalize_sizes`]
    /// before deriving relations.
    pub fn new(object_id: u32, label: impl Into<String>, bbox: BBox) -> Self {
        SceneObject {
            object_id,
            label: label.into(),
            bbox,
            depth: None,
            colors: BTreeSet::new(),
            shape: None,
            confidence: 1.0,
            attributes: Vec::new(),
            area: 0.0,
            size_rank: 0,
            salience: 0.0,
        }
    }

    pub fn with_depth(mut self, depth: f64) -> Self {
        self.depth = Some(depth);
        self
    }

    pub fn with_color(mut self, color: impl Into<String>) -> Self {
        self.colors.insert(color.into());
        self
    }

    pub fn with_shape(mut self, shape: impl Into<String>) -> Self {
        self.shape = Some(shape.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    Above,
    Below,
    LeftOf,
    RightOf,
    InFrontOf,
    Behind,
    Contains,
    Inside,
    On,
    Near,
    BiggerThan,
    SmallerThan,
}

impl Predicate {
    pub const ALL: [Predicate; 12] = [
        Predicate::Above,
        Predicate::Below,
        Predicate::LeftOf,
        Predicate::RightOf,
        Predicate::InFrontOf,
        Predicate::Behind,
        Predicate::Contains,
        Predicate::Inside,
        Predicate::On,
        Predicate::Near,
        Predicate::BiggerThan,
        Predicate::SmallerThan,
    ];

    /// The predicate stored for the reversed pair, if any. `on` has none;
    /// `near` is its own inverse.
    pub fn inverse(self) -> Option<Predicate> {
        use Predicate::*;
        match self {
            Above => Some(Below),
            Below => Some(Above),
            LeftOf => Some(RightOf),
            RightOf => Some(LeftOf),
            InFrontOf => Some(Behind),
            Behind => Some(InFrontOf),
            Contains => Some(Inside),
            Inside => Some(Contains),
            On => None,
            Near => Some(Near),
            BiggerThan => Some(SmallerThan),
            SmallerThan => Some(BiggerThan),
        }
    }

    pub fn as_str(self) -> &'static str {
        use Predicate::*;
        match self {
            Above => "above",
            Below => "below",
            LeftOf => "left_of",
            RightOf => "right_of",
            InFrontOf => "in_front_of",
            Behind => "behind",
            Contains => "contains",
            Inside => "inside",
            On => "on",
            Near => "near",
            BiggerThan => "bigger_than",
            SmallerThan => "smaller_than",
        }
    }

    pub(crate) fn code(self) -> u8 {
        Predicate::ALL.iter().position(|p| *p == self).unwrap() as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Predicate> {
        Predicate::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown predicate `{0}`")]
pub struct UnknownPredicate(pub String);

impl FromStr for Predicate {
    type Err = UnknownPredicate;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Predicate::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPredicate(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: u32,
    pub predicate: Predicate,
    pub object: u32,
}

impl RelationTriple {
    pub fn new(subject: u32, predicate: Predicate, object: u32) -> Self {
        RelationTriple {
            subject,
            predicate,
            object,
        }
    }

    pub fn inverse(&self) -> Option<RelationTriple> {
        self.predicate
            .inverse()
            .map(|p| RelationTriple::new(self.object, p, self.subject))
    }
}

/// Thresholds for the geometric relation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    /// Minimum vertical center gap for `above`.
    pub tau_v: f64,
    /// Minimum horizontal center gap for `left_of`.
    pub tau_h: f64,
    /// Maximum gap between a resting object's bottom and its support's top.
    pub eps_on: f64,
    /// Minimum depth gap for `in_front_of`.
    pub tau_d: f64,
    /// Maximum center distance for `near`.
    pub delta_near: f64,
    /// Largest inner/outer area ratio still counted as `contains`.
    pub kappa: f64,
    /// Area ratio at which `bigger_than` holds.
    pub sigma: f64,
    /// Fraction of the resting object's width that must overlap its support.
    pub on_min_overlap: f64,
    /// `above` additionally requires the x-intervals to overlap.
    pub above_requires_overlap: bool,
}

impl Default for RelationConfig {
    fn default() -> Self {
        RelationConfig {
            tau_v: 0.05,
            tau_h: 0.05,
            eps_on: 0.05,
            tau_d: 0.05,
            delta_near: 0.2,
            kappa: 0.9,
            sigma: 1.5,
            on_min_overlap: 0.5,
            above_requires_overlap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SalienceWeights {
    pub area: f64,
    pub centrality: f64,
}

impl Default for SalienceWeights {
    fn default() -> Self {
        SalienceWeights {
            area: 0.7,
            centrality: 0.3,
        }
    }
}

/// Fills in `area`, `size_rank` and `salience` for every object.
///
/// Ranks are assigned by descending area with ties broken by ascending
/// `object_id`. Salience mixes the area relative to the largest object with
/// the closeness of the box center to the image center.
pub fn normalize_sizes(
    mut objects: Vec<SceneObject>,
    weights: &SalienceWeights,
) -> Result<Vec<SceneObject>, SceneError> {
    if objects.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    for o in &objects {
        if !o.bbox.is_valid() {
            let b = o.bbox;
            return Err(SceneError::InvalidBBox {
                x_min: b.x_min,
                y_min: b.y_min,
                x_max: b.x_max,
                y_max: b.y_max,
            });
        }
    }
    for o in objects.iter_mut() {
        o.area = o.bbox.area();
    }
    let max_area = objects.iter().map(|o| o.area).fold(0.0_f64, f64::max);
    let corner = 0.5_f64.sqrt();

    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| {
        objects[b]
            .area
            .total_cmp(&objects[a].area)
            .then(objects[a].object_id.cmp(&objects[b].object_id))
    });
    for (rank, idx) in order.into_iter().enumerate() {
        objects[idx].size_rank = rank as u32 + 1;
    }

    for o in objects.iter_mut() {
        let (cx, cy) = o.bbox.center();
        let d_c = (cx - 0.5).hypot(cy - 0.5);
        let s = weights.area * (o.area / max_area) + weights.centrality * (1.0 - d_c / corner);
        o.salience = s.clamp(0.0, 1.0);
    }
    Ok(objects)
}

fn rule_contains(a: &SceneObject, b: &SceneObject, cfg: &RelationConfig) -> bool {
    a.bbox.encloses(&b.bbox) && b.area <= cfg.kappa * a.area + GEOM_EPS
}

/// Derives every relation licensed by the geometric rules, closed under
/// predicate inversion.
pub fn derive_relations(objects: &[SceneObject], cfg: &RelationConfig) -> BTreeSet<RelationTriple> {
    let mut out = BTreeSet::new();
    let mut emit = |s: u32, p: Predicate, o: u32| {
        let t = RelationTriple::new(s, p, o);
        if let Some(inv) = t.inverse() {
            out.insert(inv);
        }
        out.insert(t);
    };

    for a in objects {
        for b in objects {
            if a.object_id == b.object_id {
                continue;
            }
            let (ax, ay) = a.bbox.center();
            let (bx, by) = b.bbox.center();

            let overlap_ok = !cfg.above_requires_overlap || a.bbox.x_overlap(&b.bbox) > GEOM_EPS;
            if ay < by - cfg.tau_v - GEOM_EPS && overlap_ok {
                emit(a.object_id, Predicate::Above, b.object_id);
            }
            if ax < bx - cfg.tau_h - GEOM_EPS {
                emit(a.object_id, Predicate::LeftOf, b.object_id);
            }
            let a_contains_b = rule_contains(a, b, cfg);
            let b_contains_a = rule_contains(b, a, cfg);
            if a_contains_b {
                emit(a.object_id, Predicate::Contains, b.object_id);
            }
            if (a.bbox.y_max - b.bbox.y_min).abs() <= cfg.eps_on + GEOM_EPS
                && a.bbox.x_overlap(&b.bbox) >= cfg.on_min_overlap * a.bbox.width() - GEOM_EPS
                && !b_contains_a
            {
                emit(a.object_id, Predicate::On, b.object_id);
            }
            if let (Some(da), Some(db)) = (a.depth, b.depth) {
                if da < db - cfg.tau_d - GEOM_EPS {
                    emit(a.object_id, Predicate::InFrontOf, b.object_id);
                }
            }
            if a.object_id < b.object_id
                && a.bbox.center_distance(&b.bbox) <= cfg.delta_near + GEOM_EPS
                && !a_contains_b
                && !b_contains_a
            {
                emit(a.object_id, Predicate::Near, b.object_id);
            }
            if a.area >= cfg.sigma * b.area - GEOM_EPS {
                emit(a.object_id, Predicate::BiggerThan, b.object_id);
            }
        }
    }
    out
}

/// One inequality inside a rule, evaluated on concrete geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleClause {
    pub expr: String,
    pub lhs: f64,
    pub op: String,
    pub rhs: f64,
    pub holds: bool,
}

impl fmt::Display for RuleClause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} = {:.4} {} {:.4} [{}]",
            self.expr,
            self.lhs,
            self.op,
            self.rhs,
            if self.holds { "ok" } else { "fails" }
        )
    }
}

/// The clauses of the rule behind `predicate(a, b)` evaluated on the two
/// objects. Inverse predicates are evaluated through their forward rule with
/// the arguments swapped.
pub fn rule_evidence(
    predicate: Predicate,
    a: &SceneObject,
    b: &SceneObject,
    cfg: &RelationConfig,
) -> Vec<RuleClause> {
    use Predicate::*;
    let (p, s, o) = match predicate {
        Below | RightOf | Behind | Inside | SmallerThan => (predicate.inverse().unwrap(), b, a),
        _ => (predicate, a, b),
    };
    let (sl, ol) = (&s.label, &o.label);
    let lt = |expr: String, lhs: f64, rhs: f64| RuleClause {
        holds: lhs < rhs - GEOM_EPS,
        expr,
        lhs,
        op: "<".into(),
        rhs,
    };
    let le = |expr: String, lhs: f64, rhs: f64| RuleClause {
        holds: lhs <= rhs + GEOM_EPS,
        expr,
        lhs,
        op: "<=".into(),
        rhs,
    };
    let ge = |expr: String, lhs: f64, rhs: f64| RuleClause {
        holds: lhs >= rhs - GEOM_EPS,
        expr,
        lhs,
        op: ">=".into(),
        rhs,
    };
    let flag = |expr: String, value: bool| RuleClause {
        expr,
        lhs: if value { 1.0 } else { 0.0 },
        op: "==".into(),
        rhs: 1.0,
        holds: value,
    };
    match p {
        Above => {
            let mut v = vec![lt(
                format!("y_center({sl}) - y_center({ol})"),
                s.bbox.center().1 - o.bbox.center().1,
                -cfg.tau_v,
            )];
            if cfg.above_requires_overlap {
                let ov = s.bbox.x_overlap(&o.bbox);
                v.push(RuleClause {
                    expr: format!("x_overlap({sl}, {ol})"),
                    lhs: ov,
                    op: ">".into(),
                    rhs: 0.0,
                    holds: ov > GEOM_EPS,
                });
            }
            v
        }
        LeftOf => vec![lt(
            format!("x_center({sl}) - x_center({ol})"),
            s.bbox.center().0 - o.bbox.center().0,
            -cfg.tau_h,
        )],
        Contains => vec![
            flag(format!("box({sl}) encloses box({ol})"), s.bbox.encloses(&o.bbox)),
            le(format!("area({ol}) / area({sl})"), o.area / s.area, cfg.kappa),
        ],
        On => vec![
            le(
                format!("|y_max({sl}) - y_min({ol})|"),
                (s.bbox.y_max - o.bbox.y_min).abs(),
                cfg.eps_on,
            ),
            ge(
                format!("x_overlap({sl}, {ol}) / width({sl})"),
                s.bbox.x_overlap(&o.bbox) / s.bbox.width(),
                cfg.on_min_overlap,
            ),
            flag(format!("not contains({ol}, {sl})"), !rule_contains(o, s, cfg)),
        ],
        InFrontOf => match (s.depth, o.depth) {
            (Some(ds), Some(dl)) => vec![lt(format!("depth({sl}) - depth({ol})"), ds - dl, -cfg.tau_d)],
            _ => vec![flag(format!("depth({sl}) and depth({ol}) annotated"), false)],
        },
        Near => vec![
            le(
                format!("center_distance({sl}, {ol})"),
                s.bbox.center_distance(&o.bbox),
                cfg.delta_near,
            ),
            flag(
                format!("neither of {sl}, {ol} contains the other"),
                !rule_contains(s, o, cfg) && !rule_contains(o, s, cfg),
            ),
        ],
        BiggerThan => vec![ge(format!("area({sl}) / area({ol})"), s.area / o.area, cfg.sigma)],
        Below | RightOf | Behind | Inside | SmallerThan => unreachable!(),
    }
}

/// One image's symbolic content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_uri: Option<String>,
    pub objects: Vec<SceneObject>,
    pub relations: BTreeSet<RelationTriple>,
    pub built_at: DateTime<Utc>,
}

impl SceneGraph {
    /// Normalizes sizes and derives relations. An empty object list yields an
    /// empty graph.
    pub fn build(
        image_id: impl Into<String>,
        image_uri: Option<String>,
        objects: Vec<SceneObject>,
        relations: &RelationConfig,
        salience: &SalienceWeights,
        built_at: DateTime<Utc>,
    ) -> Result<Self, SceneError> {
        let objects = if objects.is_empty() {
            objects
        } else {
            normalize_sizes(objects, salience)?
        };
        let relations = derive_relations(&objects, relations);
        Ok(SceneGraph {
            image_id: image_id.into(),
            image_uri,
            objects,
            relations,
            built_at,
        })
    }

    pub fn object(&self, object_id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn has_relation(&self, subject: u32, predicate: Predicate, object: u32) -> bool {
        self.relations
            .contains(&RelationTriple::new(subject, predicate, object))
    }

    /// True when the relation is stored directly or via its inverse form.
    pub fn holds(&self, subject: u32, predicate: Predicate, object: u32) -> bool {
        self.has_relation(subject, predicate, object)
            || predicate
                .inverse()
                .is_some_and(|inv| self.has_relation(object, inv, subject))
    }

    /// Relations expanded to `(subject_label, predicate, object_label)`.
    pub fn labeled_relations(&self) -> impl Iterator<Item = (&SceneObject, Predicate, &SceneObject)> + '_ {
        self.relations.iter().filter_map(move |t| {
            Some((self.object(t.subject)?, t.predicate, self.object(t.object)?))
        })
    }
}
