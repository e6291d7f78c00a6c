//! End-to-end acceptance checks. Each test writes one `PASS`/`FAIL` line
//! to stderr (bypassing output capture) before asserting.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::{Duration, Instant};

use chrono::Utc;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use horse::config::{EngineConfig, MatchWeights};
use horse::index::{IndexHandle, Term};
use horse::matcher::{self, MatchMode, MatchResult, SearchOptions};
use horse::priors::{rank_by_uniqueness, RelationPriors, ScoringConfig};
use horse::query::{parse, unparse, QueryEdge, QueryGraph, QueryNode, SizeWord};
use horse::scene::{BBox, Predicate, RelationConfig, SalienceWeights, SceneGraph, SceneObject};
use horse::synth::{generate_synthetic, GeneratorSpec};
use horse::vocab::Vocabulary;

fn report(criterion: &str, ok: bool, detail: impl AsRef<str>) {
    let line = format!(
        "[{}] {criterion}: {}\n",
        if ok { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(ok, "{criterion} failed: {}", detail.as_ref());
}

// ---------------------------------------------------------------------------
// Random scenes on a 1/200 grid, so rule thresholds can be checked with exact
// integer arithmetic.

const GRID: i64 = 200;

#[derive(Debug, Clone)]
struct GridBox {
    x0: i64,
    y0: i64,
    x1: i64,
    y1: i64,
    /// Hundredths.
    depth: Option<i64>,
}

impl GridBox {
    fn area(&self) -> i64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

fn random_box(rng: &mut ChaCha8Rng, prev: &[GridBox]) -> GridBox {
    let depth = rng.random_bool(0.7).then(|| rng.random_range(0..=100));
    if let (true, Some(p)) = (rng.random_bool(0.4), prev.choose(rng)) {
        let p = p.clone();
        if rng.random_bool(0.5) {
            // resting near the top edge of an earlier box
            let w = rng.random_range(1..=(p.x1 - p.x0 + 10).min(GRID));
            let x0 = (p.x0 + rng.random_range(-10..=10)).clamp(0, GRID - w);
            let y1 = (p.y0 + rng.random_range(-12..=12)).clamp(1, GRID);
            let h = rng.random_range(1..=y1.min(60));
            return GridBox { x0, y0: y1 - h, x1: x0 + w, y1, depth };
        }
        // inside (or nearly inside) an earlier box
        let x0 = rng.random_range(p.x0..p.x1);
        let y0 = rng.random_range(p.y0..p.y1);
        let x1 = rng.random_range(x0 + 1..=(p.x1 + 2).min(GRID));
        let y1 = rng.random_range(y0 + 1..=(p.y1 + 2).min(GRID));
        return GridBox { x0, y0, x1, y1, depth };
    }
    let x0 = rng.random_range(0..GRID);
    let y0 = rng.random_range(0..GRID);
    let x1 = rng.random_range(x0 + 1..=GRID.min(x0 + 120));
    let y1 = rng.random_range(y0 + 1..=GRID.min(y0 + 120));
    GridBox { x0, y0, x1, y1, depth }
}

const LABELS: [&str; 6] = ["ball", "table", "box", "lamp", "cup", "chair"];
const SOME_COLORS: [&str; 4] = ["red", "blue", "green", "white"];
const SOME_SHAPES: [&str; 2] = ["round", "square"];

fn random_scene(rng: &mut ChaCha8Rng, id: &str, max_objects: usize) -> (SceneGraph, Vec<GridBox>) {
    let n = rng.random_range(2..=max_objects);
    let mut boxes: Vec<GridBox> = Vec::new();
    let mut objects = Vec::new();
    for i in 0..n {
        let b = random_box(rng, &boxes);
        let bbox = BBox::new(
            b.x0 as f64 / GRID as f64,
            b.y0 as f64 / GRID as f64,
            b.x1 as f64 / GRID as f64,
            b.y1 as f64 / GRID as f64,
        )
        .unwrap();
        let mut o = SceneObject::new(i as u32, *LABELS.choose(rng).unwrap(), bbox);
        if let Some(d) = b.depth {
            o = o.with_depth(d as f64 / 100.0);
        }
        for _ in 0..rng.random_range(0..=2) {
            o = o.with_color(*SOME_COLORS.choose(rng).unwrap());
        }
        if rng.random_bool(0.5) {
            o = o.with_shape(*SOME_SHAPES.choose(rng).unwrap());
        }
        objects.push(o);
        boxes.push(b);
    }
    let g = SceneGraph::build(
        id,
        None,
        objects,
        &RelationConfig::default(),
        &SalienceWeights::default(),
        Utc::now(),
    )
    .unwrap();
    (g, boxes)
}

fn inverse_of(p: &str) -> Option<&'static str> {
    Some(match p {
        "above" => "below",
        "below" => "above",
        "left_of" => "right_of",
        "right_of" => "left_of",
        "in_front_of" => "behind",
        "behind" => "in_front_of",
        "contains" => "inside",
        "inside" => "contains",
        "near" => "near",
        "bigger_than" => "smaller_than",
        "smaller_than" => "bigger_than",
        _ => return None,
    })
}

/// Rule inequalities evaluated in grid units (thresholds: 0.05 = 10,
/// 0.2 = 40, depth 0.05 = 5 hundredths).
fn oracle_relations(boxes: &[GridBox]) -> BTreeSet<(u32, String, u32)> {
    let encloses = |a: &GridBox, b: &GridBox| a.x0 <= b.x0 && a.y0 <= b.y0 && b.x1 <= a.x1 && b.y1 <= a.y1;
    let contains = |a: &GridBox, b: &GridBox| encloses(a, b) && 10 * b.area() <= 9 * a.area();
    let mut facts = BTreeSet::new();
    for (i, a) in boxes.iter().enumerate() {
        for (j, b) in boxes.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut add = |p: &str| {
                facts.insert((i as u32, p.to_string(), j as u32));
            };
            let overlap = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0);
            // doubled centers
            let (acx, acy) = (a.x0 + a.x1, a.y0 + a.y1);
            let (bcx, bcy) = (b.x0 + b.x1, b.y0 + b.y1);
            if acy < bcy - 20 && overlap > 0 {
                add("above");
            }
            if acx < bcx - 20 {
                add("left_of");
            }
            if contains(a, b) {
                add("contains");
            }
            if (a.y1 - b.y0).abs() <= 10 && 2 * overlap >= a.x1 - a.x0 && !contains(b, a) {
                add("on");
            }
            if let (Some(da), Some(db)) = (a.depth, b.depth) {
                if da < db - 5 {
                    add("in_front_of");
                }
            }
            let (dx, dy) = (acx - bcx, acy - bcy);
            if dx * dx + dy * dy <= 80 * 80 && !contains(a, b) && !contains(b, a) {
                add("near");
            }
            if 2 * a.area() >= 3 * b.area() {
                add("bigger_than");
            }
        }
    }
    let inverses: Vec<_> = facts
        .iter()
        .filter_map(|(s, p, o)| inverse_of(p).map(|q| (*o, q.to_string(), *s)))
        .collect();
    facts.extend(inverses);
    facts
}

#[test]
fn relation_rule_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut pairs = 0usize;
    let mut disagreements = Vec::new();
    let mut seen_predicates = BTreeSet::new();
    for i in 0..1000 {
        let (g, boxes) = random_scene(&mut rng, &format!("r{i}"), 10);
        pairs += boxes.len() * (boxes.len() - 1);
        let got: BTreeSet<(u32, String, u32)> = g
            .relations
            .iter()
            .map(|t| (t.subject, t.predicate.to_string(), t.object))
            .collect();
        let want = oracle_relations(&boxes);
        seen_predicates.extend(want.iter().map(|t| t.1.clone()));
        if got != want {
            let diff: Vec<_> = got.symmetric_difference(&want).take(3).cloned().collect();
            disagreements.push(format!("{}: {diff:?}", g.image_id));
        }
    }
    let elapsed = start.elapsed();
    report(
        "relation-rule oracle",
        disagreements.is_empty() && seen_predicates.len() == 12 && elapsed < Duration::from_secs(10),
        format!(
            "1000 scenes, {pairs} ordered pairs, {} disagreeing scenes, {} predicates exercised, {:.2?}{}",
            disagreements.len(),
            seen_predicates.len(),
            elapsed,
            disagreements.first().map(|d| format!("; first: {d}")).unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

/// Node spec: `label` optionally followed by `color=`, `shape=`, `size=`.
fn node(id: u32, spec: &str) -> QueryNode {
    let mut parts = spec.split_whitespace();
    let mut n = QueryNode::new(id, parts.next().unwrap().replace('_', " "));
    for kv in parts {
        let (k, v) = kv.split_once('=').unwrap();
        n = match k {
            "color" => n.with_color(v),
            "shape" => n.with_shape(v),
            "size" => n.with_size(if v == "big" { SizeWord::Big } else { SizeWord::Small }),
            _ => panic!("bad spec {spec}"),
        };
    }
    n
}

fn expected(nodes: &[&str], edges: &[(u32, &str, u32)]) -> (Vec<QueryNode>, Vec<QueryEdge>) {
    (
        nodes.iter().enumerate().map(|(i, s)| node(i as u32, s)).collect(),
        edges
            .iter()
            .map(|(f, p, t)| QueryEdge {
                from_node: *f,
                predicate: p.parse().unwrap(),
                to_node: *t,
            })
            .collect(),
    )
}

type Case = (&'static str, &'static [&'static str], &'static [(u32, &'static str, u32)]);

const PARSER_CORPUS: &[Case] = &[
    // the three example queries
    ("Find images with a red ball", &["ball color=red"], &[]),
    ("a red ball on a table", &["ball color=red", "table"], &[(0, "on", 1)]),
    ("find images where the car is in front of a building", &["car", "building"], &[(0, "in_front_of", 1)]),
    // every relation phrase
    ("lamp above table", &["lamp", "table"], &[(0, "above", 1)]),
    ("lamp over table", &["lamp", "table"], &[(0, "above", 1)]),
    ("cat below table", &["cat", "table"], &[(0, "below", 1)]),
    ("cat under the table", &["cat", "table"], &[(0, "below", 1)]),
    ("cup on top of a box", &["cup", "box"], &[(0, "on", 1)]),
    ("cup on box", &["cup", "box"], &[(0, "on", 1)]),
    ("dog to the left of a tree", &["dog", "tree"], &[(0, "left_of", 1)]),
    ("dog left of tree", &["dog", "tree"], &[(0, "left_of", 1)]),
    ("dog to the right of a tree", &["dog", "tree"], &[(0, "right_of", 1)]),
    ("dog right of tree", &["dog", "tree"], &[(0, "right_of", 1)]),
    ("bike in front of house", &["bike", "building"], &[(0, "in_front_of", 1)]),
    ("bike behind a fence", &["bike", "fence"], &[(0, "behind", 1)]),
    ("ball inside a box", &["ball", "box"], &[(0, "inside", 1)]),
    ("ball in box", &["ball", "box"], &[(0, "inside", 1)]),
    ("box containing a ball", &["box", "ball"], &[(0, "contains", 1)]),
    ("bench next to a lamp", &["bench", "lamp"], &[(0, "near", 1)]),
    ("bench near lamp", &["bench", "lamp"], &[(0, "near", 1)]),
    ("truck bigger than a car", &["truck", "car"], &[(0, "bigger_than", 1)]),
    ("cat smaller than dog", &["cat", "dog"], &[(0, "smaller_than", 1)]),
    // adjectives
    ("a blue car", &["car color=blue"], &[]),
    ("a grey cat", &["cat color=gray"], &[]),
    ("round table", &["table shape=round"], &[]),
    ("a circular clock", &["clock shape=round"], &[]),
    ("big dog", &["dog size=big"], &[]),
    ("a large tree", &["tree size=big"], &[]),
    ("small bird", &["bird size=small"], &[]),
    ("tiny red square box", &["box color=red shape=square size=small"], &[]),
    ("big white round plate on a small brown table", &["plate color=white shape=round size=big", "table color=brown size=small"], &[(0, "on", 1)]),
    // boilerplate and fillers
    ("show me a dog", &["dog"], &[]),
    ("show me images with a cat on a sofa", &["cat", "sofa"], &[(0, "on", 1)]),
    ("show me images where the sun is above the sea", &["sun", "sea"], &[(0, "above", 1)]),
    ("images with a kite", &["kite"], &[]),
    ("images where the boat is near the shore", &["boat", "shore"], &[(0, "near", 1)]),
    ("find images with dogs", &["dog"], &[]),
    ("a cat that is on a mat", &["cat", "mat"], &[(0, "on", 1)]),
    ("a lamp which is next to a bed", &["lamp", "bed"], &[(0, "near", 1)]),
    ("dogs that are behind a fence", &["dog", "fence"], &[(0, "behind", 1)]),
    ("birds which are above trees", &["bird", "tree"], &[(0, "above", 1)]),
    ("the cars are on the road", &["car", "road"], &[(0, "on", 1)]),
    // conjunctions and unification
    ("red ball on table and table near lamp", &["ball color=red", "table", "lamp"], &[(0, "on", 1), (1, "near", 2)]),
    ("a ball on a table, a lamp", &["ball", "table", "lamp"], &[(0, "on", 1)]),
    ("a ball on a table, and a cat under the table", &["ball", "table", "cat"], &[(0, "on", 1), (2, "below", 1)]),
    ("red ball near blue ball", &["ball color=red", "ball color=blue"], &[(0, "near", 1)]),
    ("red ball on table and ball near lamp", &["ball color=red", "table", "ball", "lamp"], &[(0, "on", 1), (2, "near", 3)]),
    ("cat and dog", &["cat", "dog"], &[]),
    ("cat, dog, bird", &["cat", "dog", "bird"], &[]),
    ("dog near cat and dog near cat", &["dog", "cat"], &[(0, "near", 1)]),
    // vocabulary
    ("an automobile on the ground", &["car", "ground"], &[(0, "on", 1)]),
    ("people near a kiosk", &["person", "kiosk"], &[(0, "near", 1)]),
    ("a trash can next to a bench", &["trash_can", "bench"], &[(0, "near", 1)]),
    ("green trash cans behind a fire hydrant", &["trash_can color=green", "fire_hydrant"], &[(0, "behind", 1)]),
    ("an orange on a plate", &["orange", "plate"], &[(0, "on", 1)]),
    ("A Red BALL On A Table.", &["ball color=red", "table"], &[(0, "on", 1)]),
    ("puppy in front of a kitten?", &["dog", "cat"], &[(0, "in_front_of", 1)]),
];

#[test]
fn parser_corpus() {
    let vocab = Vocabulary::default();
    let mut failures = Vec::new();
    let mut predicates = BTreeSet::new();
    for (text, nodes, edges) in PARSER_CORPUS {
        let (want_nodes, want_edges) = expected(nodes, edges);
        let g = match parse(text, &vocab) {
            Ok(g) => g,
            Err(e) => {
                failures.push(format!("{text}: {e}"));
                continue;
            }
        };
        if g.nodes != want_nodes || g.edges != want_edges {
            failures.push(format!("{text}: got {:?} / {:?}", g.nodes, g.edges));
            continue;
        }
        predicates.extend(g.edges.iter().map(|e| e.predicate));
        let text1 = unparse(&g);
        let g1 = parse(&text1, &vocab).unwrap();
        let text2 = unparse(&g1);
        if !g1.equivalent(&g) || text1 != text2 {
            failures.push(format!("{text}: round trip `{text1}` -> `{text2}`"));
        }
    }
    let ok = failures.is_empty() && PARSER_CORPUS.len() >= 50 && predicates.len() == 12;
    report(
        "parser corpus",
        ok,
        format!(
            "{} queries, {} predicates covered, {} failures{}",
            PARSER_CORPUS.len(),
            predicates.len(),
            failures.len(),
            failures.first().map(|f| format!("; first: {f}")).unwrap_or_default()
        ),
    );
}

// ---------------------------------------------------------------------------

fn build(graphs: Vec<SceneGraph>) -> IndexHandle {
    let priors = RelationPriors::fit(&graphs, 1.0).unwrap();
    IndexHandle::build(graphs, priors, EngineConfig::default()).unwrap()
}

/// Postings derived by scanning every stored scene.
fn scanned_postings(docs: &[SceneGraph]) -> BTreeMap<String, BTreeMap<String, BTreeSet<u32>>> {
    let mut out: BTreeMap<String, BTreeMap<String, BTreeSet<u32>>> = BTreeMap::new();
    let mut put = |term: String, image: &str, object: u32| {
        out.entry(term).or_default().entry(image.to_string()).or_default().insert(object);
    };
    for g in docs {
        for o in &g.objects {
            put(format!("label:{}", o.label), &g.image_id, o.object_id);
            for c in &o.colors {
                put(format!("attr:{}:color:{c}", o.label), &g.image_id, o.object_id);
            }
            if let Some(s) = &o.shape {
                put(format!("attr:{}:shape:{s}", o.label), &g.image_id, o.object_id);
            }
        }
        for t in &g.relations {
            let s = g.objects.iter().find(|o| o.object_id == t.subject).unwrap();
            let o = g.objects.iter().find(|o| o.object_id == t.object).unwrap();
            put(format!("rel:{}:{}:{}", s.label, t.predicate, o.label), &g.image_id, s.object_id);
        }
    }
    out
}

#[test]
fn index_completeness() {
    let corpus = generate_synthetic(&GeneratorSpec {
        n_scenes: 1000,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let handle = build(corpus.graphs);
    let truth = scanned_postings(handle.documents());
    let (mut hits, mut returned, mut relevant) = (0usize, 0usize, 0usize);
    let mut mismatched = Vec::new();
    let terms: BTreeSet<String> = handle.terms().map(String::from).chain(truth.keys().cloned()).collect();
    for term in &terms {
        let parsed: Term = term.parse().unwrap();
        let got: BTreeMap<String, BTreeSet<u32>> = handle
            .lookup(&parsed)
            .into_iter()
            .map(|p| (p.image_id, p.object_ids.into_iter().collect()))
            .collect();
        let want = truth.get(term).cloned().unwrap_or_default();
        returned += got.len();
        relevant += want.len();
        hits += got.iter().filter(|(k, v)| want.get(*k) == Some(v)).count();
        if got != want {
            mismatched.push(term.clone());
        }
    }
    let precision = hits as f64 / returned as f64;
    let recall = hits as f64 / relevant as f64;
    report(
        "index completeness",
        mismatched.is_empty() && precision == 1.0 && recall == 1.0,
        format!(
            "{} terms, {} postings, precision={precision} recall={recall}, {} mismatched terms",
            terms.len(),
            relevant,
            mismatched.len()
        ),
    );
}

// ---------------------------------------------------------------------------
// Brute-force matcher: every injective label-consistent binding, no index.

fn holds(g: &SceneGraph, s: u32, p: Predicate, o: u32) -> bool {
    let has = |s: u32, name: &str, o: u32| {
        g.relations
            .iter()
            .any(|t| t.subject == s && t.object == o && t.predicate.to_string() == name)
    };
    let name = p.to_string();
    has(s, &name, o) || inverse_of(&name).is_some_and(|inv| has(o, inv, s))
}

fn brute_bind(g: &SceneGraph, q: &QueryGraph, strict: bool) -> Option<MatchResult> {
    let n = g.objects.len();
    let third = n.div_ceil(3) as u32;
    let total = q
        .nodes
        .iter()
        .map(|x| x.color.is_some() as usize + x.shape.is_some() as usize + x.size_word.is_some() as usize)
        .sum::<usize>()
        + q.edges.len();
    let mut best: Option<(f64, f64, Vec<u32>)> = None;
    let mut stack: Vec<Vec<usize>> = vec![vec![]];
    while let Some(partial) = stack.pop() {
        if partial.len() < q.nodes.len() {
            let qn = &q.nodes[partial.len()];
            for (k, o) in g.objects.iter().enumerate() {
                if o.label == qn.label && !partial.contains(&k) {
                    let mut next = partial.clone();
                    next.push(k);
                    stack.push(next);
                }
            }
            continue;
        }
        let obj = |node_id: u32| {
            let i = q.nodes.iter().position(|x| x.node_id == node_id).unwrap();
            &g.objects[partial[i]]
        };
        let mut sat = 0usize;
        for (qn, &k) in q.nodes.iter().zip(&partial) {
            let o = &g.objects[k];
            if let Some(c) = &qn.color {
                sat += o.colors.contains(c) as usize;
            }
            if let Some(s) = &qn.shape {
                sat += (o.shape.as_ref() == Some(s)) as usize;
            }
            match qn.size_word {
                Some(SizeWord::Big) => sat += (o.size_rank <= third) as usize,
                Some(SizeWord::Small) => sat += (o.size_rank > n as u32 - third) as usize,
                None => {}
            }
        }
        for e in &q.edges {
            sat += holds(g, obj(e.from_node).object_id, e.predicate, obj(e.to_node).object_id) as usize;
        }
        let score = if total == 0 { 1.0 } else { sat as f64 / total as f64 };
        if strict && sat != total {
            continue;
        }
        let sal = partial.iter().map(|&k| g.objects[k].salience).sum::<f64>() / partial.len().max(1) as f64;
        let ids: Vec<u32> = partial.iter().map(|&k| g.objects[k].object_id).collect();
        let better = match &best {
            None => true,
            Some((bs, bsal, bids)) => (score, sal) > (*bs, *bsal) || ((score, sal) == (*bs, *bsal) && ids < *bids),
        };
        if better {
            best = Some((score, sal, ids));
        }
    }
    best.map(|(score, mean_salience, ids)| MatchResult {
        image_id: g.image_id.clone(),
        score,
        mean_salience,
        binding: q.nodes.iter().map(|x| x.node_id).zip(ids).collect(),
        satisfied: Vec::new(),
        violated: Vec::new(),
    })
}

fn brute_search(docs: &[SceneGraph], q: &QueryGraph, k: usize, strict: bool) -> Vec<MatchResult> {
    let mut out: Vec<MatchResult> = docs.iter().filter_map(|g| brute_bind(g, q, strict)).collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(b.mean_salience.partial_cmp(&a.mean_salience).unwrap())
            .then(a.image_id.cmp(&b.image_id))
    });
    out.truncate(k);
    out
}

type Outcome = (String, f64, BTreeMap<u32, u32>);

fn key(results: &[MatchResult]) -> Vec<Outcome> {
    results
        .iter()
        .map(|r| (r.image_id.clone(), r.score, r.binding.clone()))
        .collect()
}

fn random_query(rng: &mut ChaCha8Rng) -> QueryGraph {
    let n = rng.random_range(1..=4);
    let mut nodes = Vec::new();
    for i in 0..n {
        let mut node = QueryNode::new(i, *LABELS[..4].choose(rng).unwrap());
        if rng.random_bool(0.3) {
            node = node.with_color(*SOME_COLORS.choose(rng).unwrap());
        }
        if rng.random_bool(0.2) {
            node = node.with_shape(*SOME_SHAPES.choose(rng).unwrap());
        }
        if rng.random_bool(0.2) {
            node = node.with_size(if rng.random_bool(0.5) { SizeWord::Big } else { SizeWord::Small });
        }
        nodes.push(node);
    }
    let mut edges: Vec<QueryEdge> = Vec::new();
    for to in 1..n {
        if rng.random_bool(0.8) {
            let edge = QueryEdge {
                from_node: rng.random_range(0..to),
                predicate: *Predicate::ALL.choose(rng).unwrap(),
                to_node: to,
            };
            edges.push(if rng.random_bool(0.5) {
                QueryEdge { from_node: edge.to_node, to_node: edge.from_node, ..edge }
            } else {
                edge
            });
        }
    }
    QueryGraph {
        nodes,
        edges,
        raw_text: String::new(),
    }
}

fn matching_fixture() -> (Vec<SceneGraph>, Vec<QueryGraph>) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let graphs: Vec<SceneGraph> = (0..200)
        .map(|i| random_scene(&mut rng, &format!("m{i:03}"), 10).0)
        .collect();
    let vocab = Vocabulary::default();
    let mut queries: Vec<QueryGraph> = [
        "red ball on table",
        "ball",
        "lamp near box",
        "big table and small cup",
    ]
    .iter()
    .map(|t| parse(t, &vocab).unwrap())
    .collect();
    while queries.len() < 30 {
        queries.push(random_query(&mut rng));
    }
    (graphs, queries)
}

/// Runs every query in both modes and compares with brute force. Returns
/// the number of disagreements and the outputs.
fn run_matching_suite(handle: &IndexHandle, queries: &[QueryGraph]) -> (usize, Vec<Vec<Outcome>>, usize) {
    let mut bad = 0;
    let mut outputs = Vec::new();
    let mut nonempty = 0;
    for q in queries {
        for (mode, strict) in [(MatchMode::Ranked, false), (MatchMode::Strict, true)] {
            for k in [10, usize::MAX] {
                let opts = SearchOptions {
                    k,
                    mode,
                    use_relation_terms: true,
                    weights: MatchWeights::default(),
                };
                let got = key(&matcher::search_with(handle, q, &opts).unwrap().results);
                let want = key(&brute_search(handle.documents(), q, k, strict));
                if got != want {
                    bad += 1;
                }
                nonempty += !got.is_empty() as usize;
                outputs.push(got);
            }
        }
    }
    (bad, outputs, nonempty)
}

#[test]
fn matching_oracle() {
    let start = Instant::now();
    let (graphs, queries) = matching_fixture();
    let handle = build(graphs);
    let (bad, _, nonempty) = run_matching_suite(&handle, &queries);
    let elapsed = start.elapsed();
    report(
        "matching oracle",
        bad == 0 && elapsed < Duration::from_secs(30) && nonempty > 60,
        format!(
            "200 scenes x {} queries x 2 modes x 2 cutoffs, {bad} disagreements, {nonempty} non-empty result lists, {:.2?}",
            queries.len(),
            elapsed
        ),
    );
}

// ---------------------------------------------------------------------------

fn car_ground_sky(id: usize, car_in_sky: bool) -> SceneGraph {
    let jitter = (id % 5) as f64 * 0.005;
    let car = if car_in_sky {
        BBox::new(0.42 + jitter, 0.08, 0.58 + jitter, 0.18).unwrap()
    } else {
        BBox::new(0.42 + jitter, 0.58, 0.58 + jitter, 0.70).unwrap()
    };
    SceneGraph::build(
        format!("street-{id:03}"),
        None,
        vec![
            SceneObject::new(0, "sky", BBox::new(0.0, 0.0, 1.0, 0.3).unwrap()),
            SceneObject::new(1, "ground", BBox::new(0.0, 0.7, 1.0, 1.0).unwrap()),
            SceneObject::new(2, "car", car),
        ],
        &RelationConfig::default(),
        &SalienceWeights::default(),
        Utc::now(),
    )
    .unwrap()
}

#[test]
fn car_on_ground_prior() {
    let graphs: Vec<SceneGraph> = (0..100).map(|i| car_ground_sky(i, i == 63)).collect();
    let priors = RelationPriors::fit(&graphs, 1.0).unwrap();
    let p = priors.probability("car", Predicate::On, "ground");
    let expected = (99.0 + 1.0) / (100.0 + 2.0);
    let surprisal = priors.surprisal("car", Predicate::On, "ground");
    let ranking = rank_by_uniqueness(&priors, &graphs, &ScoringConfig::default());
    let ok = priors.count("car", Predicate::On, "ground") == 99
        && priors.pair_total("car", "ground") == 100
        && (p - expected).abs() <= 1e-9
        && (p - 0.98039).abs() <= 1e-5
        && (surprisal + expected.log2()).abs() <= 1e-12
        && ranking[0].image_id == "street-063"
        && ranking[0].uniqueness > ranking[1].uniqueness;
    report(
        "car on ground prior",
        ok,
        format!(
            "P(on|car,ground)={p:.9} (expected {expected:.9}), surprisal={surprisal:.9} bits, top image {} ({:.3} bits vs {:.3})",
            ranking[0].image_id, ranking[0].uniqueness, ranking[1].uniqueness
        ),
    );
}

#[test]
fn anomaly_recovery() {
    let mut details = Vec::new();
    let mut ok = true;
    for seed in [7, 42, 123] {
        let corpus = generate_synthetic(&GeneratorSpec {
            n_scenes: 1000,
            seed,
            anomaly_rate: 0.01,
            ..GeneratorSpec::default()
        })
        .unwrap();
        let priors = RelationPriors::fit(&corpus.graphs, 1.0).unwrap();
        let ranking = rank_by_uniqueness(&priors, &corpus.graphs, &ScoringConfig::default());
        let top: BTreeSet<&str> = ranking[..10].iter().map(|r| r.image_id.as_str()).collect();
        let injected: BTreeSet<&str> = corpus.anomalous_ids().into_iter().collect();
        let found = injected.intersection(&top).count();
        ok &= injected.len() == 10 && found == 10;
        details.push(format!("seed {seed}: {found}/{} in top 10", injected.len()));
    }
    report("anomaly recovery", ok, details.join(", "));
}

#[test]
fn acceleration() {
    let corpus = generate_synthetic(&GeneratorSpec {
        n_scenes: 10_000,
        seed: 11,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let handle = build(corpus.graphs);
    let n = handle.len();
    let selective: Vec<(String, usize)> = handle
        .terms_with_prefix("label:")
        .map(|t| (t["label:".len()..].to_string(), handle.lookup_str(t).len()))
        .filter(|(_, df)| *df * 20 <= n)
        .collect();
    let mut worst = 0.0f64;
    let mut identical = true;
    for (label, _) in &selective {
        let q = QueryGraph {
            nodes: vec![QueryNode::new(0, label.clone())],
            edges: vec![],
            raw_text: label.clone(),
        };
        for (mode, strict) in [(MatchMode::Ranked, false), (MatchMode::Strict, true)] {
            let opts = SearchOptions {
                k: usize::MAX,
                mode,
                ..SearchOptions::default()
            };
            let outcome = matcher::search_with(&handle, &q, &opts).unwrap();
            worst = worst.max(outcome.stats.verified as f64 / n as f64);
            identical &= key(&outcome.results) == key(&brute_search(handle.documents(), &q, usize::MAX, strict));
        }
    }
    report(
        "acceleration",
        !selective.is_empty() && worst <= 0.20 && identical,
        format!(
            "{} selective labels on {n} scenes, max verified fraction {:.2}%, results identical to full scan: {identical}",
            selective.len(),
            worst * 100.0
        ),
    );
}

#[test]
fn persistence() {
    let (graphs, queries) = matching_fixture();
    let priors = RelationPriors::fit(&graphs, 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index");
    let built = IndexHandle::build_to_dir(graphs, priors, EngineConfig::default(), &path).unwrap();
    let (bad_built, before, _) = run_matching_suite(&built, &queries);
    let reopened = IndexHandle::open(&path).unwrap();
    let (bad_reopened, after, _) = run_matching_suite(&reopened, &queries);
    let terms_equal = built.terms().eq(reopened.terms())
        && built.terms().all(|t| built.lookup_str(t) == reopened.lookup_str(t));
    report(
        "persistence",
        bad_built == 0 && bad_reopened == 0 && before == after && terms_equal,
        format!(
            "{} result lists before and after reopen, identical: {}, oracle disagreements after reopen: {bad_reopened}",
            before.len(),
            before == after
        ),
    );
}
