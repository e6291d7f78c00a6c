//! Query execution: candidate generation from the index, backtracking
//! binding of query nodes to scene objects, ranking and explanations.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::MatchWeights;
use crate::index::{intersect_sorted, IndexHandle, Term};
use crate::query::{QueryGraph, QueryNode, SizeWord};
use crate::scene::{rule_evidence, Predicate, RelationConfig, RelationTriple, RuleClause, SceneGraph, SceneObject};

pub const MAX_QUERY_NODES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("query has {nodes} nodes; at most {MAX_QUERY_NODES} are supported")]
    QueryTooLarge { nodes: usize },
    #[error("image `{0}` is not in the index")]
    NotFound(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    Strict,
    #[default]
    Ranked,
}

impl fmt::Display for MatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MatchMode::Strict => "strict",
            MatchMode::Ranked => "ranked",
        })
    }
}

impl FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(MatchMode::Strict),
            "ranked" => Ok(MatchMode::Ranked),
            other => Err(format!("unknown mode `{other}` (expected strict or ranked)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Constraint {
    Label { node: u32, label: String },
    Color { node: u32, color: String },
    Shape { node: u32, shape: String },
    Size { node: u32, size: SizeWord },
    Edge { from_node: u32, predicate: Predicate, to_node: u32 },
}

impl Constraint {
    pub fn is_label(&self) -> bool {
        matches!(self, Constraint::Label { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub constraint: Constraint,
    /// Human-readable form, e.g. `ball.color=red` or `on(ball,table)`.
    pub text: String,
    /// Stored triple realizing a satisfied edge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triple: Option<RelationTriple>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<RuleClause>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub image_id: String,
    pub score: f64,
    pub mean_salience: f64,
    /// Query node id to scene object id. Unbound nodes are absent.
    pub binding: BTreeMap<u32, u32>,
    pub satisfied: Vec<ConstraintCheck>,
    pub violated: Vec<ConstraintCheck>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub k: usize,
    pub mode: MatchMode,
    /// Also intersect attribute and relation postings in strict mode.
    pub use_relation_terms: bool,
    pub weights: MatchWeights,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            k: 20,
            mode: MatchMode::Ranked,
            use_relation_terms: true,
            weights: MatchWeights::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchStats {
    pub corpus: usize,
    pub candidates: usize,
    pub verified: usize,
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub results: Vec<MatchResult>,
    pub stats: SearchStats,
}

fn check_size(q: &QueryGraph) -> Result<(), MatchError> {
    if q.nodes.len() > MAX_QUERY_NODES {
        Err(MatchError::QueryTooLarge { nodes: q.nodes.len() })
    } else {
        Ok(())
    }
}

/// Images containing every query label. An empty query yields the whole
/// corpus.
pub fn candidates(handle: &IndexHandle, q: &QueryGraph) -> Vec<String> {
    candidate_ordinals(handle, q, false)
        .into_iter()
        .map(|d| handle.document_at(d).image_id.clone())
        .collect()
}

fn candidate_ordinals(handle: &IndexHandle, q: &QueryGraph, strict_terms: bool) -> Vec<u32> {
    let mut lists: Vec<Vec<u32>> = Vec::new();
    let ords = |term: &Term| -> Vec<u32> {
        handle
            .raw_postings(&term.to_string())
            .iter()
            .map(|p| p.doc)
            .collect()
    };
    for n in &q.nodes {
        lists.push(ords(&Term::label(&n.label)));
        if strict_terms {
            if let Some(c) = &n.color {
                lists.push(ords(&Term::color(&n.label, c)));
            }
            if let Some(s) = &n.shape {
                lists.push(ords(&Term::shape(&n.label, s)));
            }
        }
    }
    if strict_terms {
        for e in &q.edges {
            let (Some(a), Some(b)) = (q.node(e.from_node), q.node(e.to_node)) else {
                continue;
            };
            let mut list = ords(&Term::rel(&a.label, e.predicate, &b.label));
            if let Some(inv) = e.predicate.inverse() {
                list.extend(ords(&Term::rel(&b.label, inv, &a.label)));
                list.sort_unstable();
                list.dedup();
            }
            lists.push(list);
        }
    }
    if lists.is_empty() {
        return handle.all_ordinals();
    }
    let refs: Vec<&[u32]> = lists.iter().map(Vec::as_slice).collect();
    intersect_sorted(&refs)
}

fn size_ok(obj: &SceneObject, size: SizeWord, n_objects: usize) -> bool {
    let third = n_objects.div_ceil(3) as u32;
    match size {
        SizeWord::Big => obj.size_rank <= third,
        SizeWord::Small => obj.size_rank > n_objects as u32 - third,
    }
}

/// Attribute constraints of one node, in a fixed order, with satisfaction
/// under the given object.
fn attribute_checks(node: &QueryNode, obj: Option<&SceneObject>, n_objects: usize) -> Vec<(Constraint, bool)> {
    let mut out = Vec::new();
    if let Some(c) = &node.color {
        out.push((
            Constraint::Color { node: node.node_id, color: c.clone() },
            obj.is_some_and(|o| o.colors.contains(c)),
        ));
    }
    if let Some(s) = &node.shape {
        out.push((
            Constraint::Shape { node: node.node_id, shape: s.clone() },
            obj.is_some_and(|o| o.shape.as_deref() == Some(s.as_str())),
        ));
    }
    if let Some(z) = node.size_word {
        out.push((
            Constraint::Size { node: node.node_id, size: z },
            obj.is_some_and(|o| size_ok(o, z, n_objects)),
        ));
    }
    out
}

/// Candidate ranking key of a complete or partial binding.
#[derive(Debug, Clone)]
struct Scored {
    bound: usize,
    score: f64,
    salience: f64,
    ids: Vec<Option<u32>>,
}

impl Scored {
    /// `Greater` means better.
    fn cmp_quality(&self, other: &Scored) -> Ordering {
        self.bound
            .cmp(&other.bound)
            .then(self.score.total_cmp(&other.score))
            .then(self.salience.total_cmp(&other.salience))
            // smaller ids win
            .then_with(|| other.ids.cmp(&self.ids))
    }
}

struct Binder<'a> {
    graph: &'a SceneGraph,
    q: &'a QueryGraph,
    mode: MatchMode,
    allow_unbound: bool,
    weights: &'a MatchWeights,
    /// Node indices in search order.
    order: Vec<usize>,
    options: Vec<Vec<usize>>,
    assign: Vec<Option<usize>>,
    used: Vec<bool>,
    total_weight: f64,
    best: Option<Scored>,
}

impl<'a> Binder<'a> {
    fn new(graph: &'a SceneGraph, q: &'a QueryGraph, mode: MatchMode, allow_unbound: bool, weights: &'a MatchWeights) -> Self {
        let n = graph.objects.len();
        let options: Vec<Vec<usize>> = q
            .nodes
            .iter()
            .map(|node| {
                graph
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.label == node.label)
                    .filter(|(_, o)| {
                        mode == MatchMode::Ranked
                            || attribute_checks(node, Some(o), n).iter().all(|(_, ok)| *ok)
                    })
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let mut order: Vec<usize> = (0..q.nodes.len()).collect();
        order.sort_by_key(|&i| (options[i].len(), i));
        let total_weight = q
            .nodes
            .iter()
            .map(|n| n.attribute_count() as f64 * weights.attribute)
            .sum::<f64>()
            + q.edges.len() as f64 * weights.edge;
        Binder {
            graph,
            q,
            mode,
            allow_unbound,
            weights,
            order,
            options,
            assign: vec![None; q.nodes.len()],
            used: vec![false; n],
            total_weight,
            best: None,
        }
    }

    fn node_index(&self, id: u32) -> Option<usize> {
        self.q.nodes.iter().position(|n| n.node_id == id)
    }

    fn edge_ok(&self, from: usize, predicate: Predicate, to: usize) -> bool {
        let a = self.graph.objects[from].object_id;
        let b = self.graph.objects[to].object_id;
        self.graph.holds(a, predicate, b)
    }

    /// In strict mode, checks every edge whose endpoints are both assigned
    /// and one of which is `node`.
    fn strict_edges_ok(&self, node: usize) -> bool {
        self.q.edges.iter().all(|e| {
            let (Some(f), Some(t)) = (self.node_index(e.from_node), self.node_index(e.to_node)) else {
                return false;
            };
            if f != node && t != node {
                return true;
            }
            match (self.assign[f], self.assign[t]) {
                (Some(a), Some(b)) => self.edge_ok(a, e.predicate, b),
                _ => true,
            }
        })
    }

    fn evaluate(&self) -> Scored {
        let n = self.graph.objects.len();
        let mut satisfied = 0.0;
        for (i, node) in self.q.nodes.iter().enumerate() {
            let obj = self.assign[i].map(|k| &self.graph.objects[k]);
            let ok = attribute_checks(node, obj, n).iter().filter(|(_, ok)| *ok).count();
            satisfied += ok as f64 * self.weights.attribute;
        }
        for e in &self.q.edges {
            let f = self.node_index(e.from_node).and_then(|i| self.assign[i]);
            let t = self.node_index(e.to_node).and_then(|i| self.assign[i]);
            if let (Some(a), Some(b)) = (f, t) {
                if self.edge_ok(a, e.predicate, b) {
                    satisfied += self.weights.edge;
                }
            }
        }
        let score = if self.total_weight > 0.0 {
            satisfied / self.total_weight
        } else {
            1.0
        };
        let bound: Vec<usize> = self.assign.iter().flatten().copied().collect();
        let salience = if bound.is_empty() {
            0.0
        } else {
            bound.iter().map(|&k| self.graph.objects[k].salience).sum::<f64>() / bound.len() as f64
        };
        Scored {
            bound: bound.len(),
            score,
            salience,
            ids: self
                .assign
                .iter()
                .map(|a| a.map(|k| self.graph.objects[k].object_id))
                .collect(),
        }
    }

    fn search(&mut self, depth: usize) {
        if depth == self.order.len() {
            let s = self.evaluate();
            if self.mode == MatchMode::Strict && s.score < 1.0 {
                return;
            }
            if self.best.as_ref().is_none_or(|b| s.cmp_quality(b) == Ordering::Greater) {
                self.best = Some(s);
            }
            return;
        }
        let node = self.order[depth];
        for k in 0..self.options[node].len() {
            let obj = self.options[node][k];
            if self.used[obj] {
                continue;
            }
            self.assign[node] = Some(obj);
            self.used[obj] = true;
            if self.mode == MatchMode::Ranked || self.strict_edges_ok(node) {
                self.search(depth + 1);
            }
            self.used[obj] = false;
            self.assign[node] = None;
        }
        if self.allow_unbound {
            self.search(depth + 1);
        }
    }
}

fn describe(q: &QueryGraph, c: &Constraint) -> String {
    let label = |id: u32| q.node(id).map(|n| n.label.as_str()).unwrap_or("?");
    match c {
        Constraint::Label { label: l, .. } => l.clone(),
        Constraint::Color { node, color } => format!("{}.color={color}", label(*node)),
        Constraint::Shape { node, shape } => format!("{}.shape={shape}", label(*node)),
        Constraint::Size { node, size } => format!("{}.size={}", label(*node), size.as_str()),
        Constraint::Edge { from_node, predicate, to_node } => {
            format!("{predicate}({},{})", label(*from_node), label(*to_node))
        }
    }
}

fn check(q: &QueryGraph, constraint: Constraint) -> ConstraintCheck {
    ConstraintCheck {
        text: describe(q, &constraint),
        constraint,
        triple: None,
        evidence: Vec::new(),
        detail: None,
    }
}

fn build_result(
    graph: &SceneGraph,
    q: &QueryGraph,
    best: &Scored,
    with_evidence: bool,
    relations: &RelationConfig,
) -> MatchResult {
    let n = graph.objects.len();
    let obj_of = |node_id: u32| -> Option<&SceneObject> {
        let i = q.nodes.iter().position(|x| x.node_id == node_id)?;
        best.ids[i].and_then(|id| graph.object(id))
    };
    let mut satisfied = Vec::new();
    let mut violated = Vec::new();
    for node in &q.nodes {
        let obj = obj_of(node.node_id);
        let c = check(q, Constraint::Label { node: node.node_id, label: node.label.clone() });
        if obj.is_some() { satisfied.push(c) } else { violated.push(c) }
        for (constraint, ok) in attribute_checks(node, obj, n) {
            let mut c = check(q, constraint);
            if with_evidence {
                c.detail = obj.map(|o| match &c.constraint {
                    Constraint::Color { .. } => format!(
                        "object {} colors: [{}]",
                        o.object_id,
                        o.colors.iter().cloned().collect::<Vec<_>>().join(", ")
                    ),
                    Constraint::Shape { .. } => format!(
                        "object {} shape: {}",
                        o.object_id,
                        o.shape.as_deref().unwrap_or("unknown")
                    ),
                    _ => format!("object {} size rank {} of {}", o.object_id, o.size_rank, n),
                });
            }
            if ok { satisfied.push(c) } else { violated.push(c) }
        }
    }
    for e in &q.edges {
        let mut c = check(
            q,
            Constraint::Edge { from_node: e.from_node, predicate: e.predicate, to_node: e.to_node },
        );
        let ok = match (obj_of(e.from_node), obj_of(e.to_node)) {
            (Some(a), Some(b)) => {
                let ok = graph.holds(a.object_id, e.predicate, b.object_id);
                if ok {
                    c.triple = Some(if graph.has_relation(a.object_id, e.predicate, b.object_id) {
                        RelationTriple::new(a.object_id, e.predicate, b.object_id)
                    } else {
                        RelationTriple::new(a.object_id, e.predicate, b.object_id).inverse().expect("stored via inverse")
                    });
                }
                if with_evidence {
                    c.evidence = rule_evidence(e.predicate, a, b, relations);
                }
                ok
            }
            _ => {
                if with_evidence {
                    c.detail = Some("an endpoint is unbound".into());
                }
                false
            }
        };
        if ok { satisfied.push(c) } else { violated.push(c) }
    }
    MatchResult {
        image_id: graph.image_id.clone(),
        score: best.score,
        mean_salience: best.salience,
        binding: q
            .nodes
            .iter()
            .zip(&best.ids)
            .filter_map(|(n, id)| id.map(|id| (n.node_id, id)))
            .collect(),
        satisfied,
        violated,
    }
}

/// Best binding of the query into one scene. Strict mode only returns a
/// binding satisfying every constraint; ranked mode returns the binding
/// with the highest score. `None` when no label-consistent injective
/// binding exists.
pub fn bind(
    graph: &SceneGraph,
    q: &QueryGraph,
    mode: MatchMode,
    weights: &MatchWeights,
) -> Result<Option<MatchResult>, MatchError> {
    check_size(q)?;
    let mut b = Binder::new(graph, q, mode, false, weights);
    b.search(0);
    Ok(b
        .best
        .map(|best| build_result(graph, q, &best, false, &RelationConfig::default())))
}

/// Result order: score, then mean salience (both descending), then image id.
pub fn result_order(a: &MatchResult, b: &MatchResult) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(b.mean_salience.total_cmp(&a.mean_salience))
        .then_with(|| a.image_id.cmp(&b.image_id))
}

pub fn search(handle: &IndexHandle, q: &QueryGraph, k: usize, mode: MatchMode) -> Result<Vec<MatchResult>, MatchError> {
    let opts = SearchOptions {
        k,
        mode,
        weights: handle.config().matching.clone(),
        ..SearchOptions::default()
    };
    Ok(search_with(handle, q, &opts)?.results)
}

pub fn search_with(handle: &IndexHandle, q: &QueryGraph, opts: &SearchOptions) -> Result<SearchOutcome, MatchError> {
    check_size(q)?;
    let strict_terms = opts.use_relation_terms && opts.mode == MatchMode::Strict;
    let cands = candidate_ordinals(handle, q, strict_terms);
    let mut results = Vec::new();
    for &d in &cands {
        if let Some(r) = bind(handle.document_at(d), q, opts.mode, &opts.weights)? {
            results.push(r);
        }
    }
    let matched = results.len();
    results.sort_by(result_order);
    results.truncate(opts.k);
    Ok(SearchOutcome {
        results,
        stats: SearchStats {
            corpus: handle.len(),
            candidates: cands.len(),
            verified: cands.len(),
            matched,
        },
    })
}

/// Ranked binding of the query into one image, with the geometric
/// evidence behind every edge. Nodes that cannot be bound stay unbound and
/// all their constraints are reported as violated.
pub fn explain(handle: &IndexHandle, image_id: &str, q: &QueryGraph) -> Result<MatchResult, MatchError> {
    check_size(q)?;
    let graph = handle
        .document(image_id)
        .ok_or_else(|| MatchError::NotFound(image_id.to_string()))?;
    let weights = &handle.config().matching;
    let mut b = Binder::new(graph, q, MatchMode::Ranked, true, weights);
    b.search(0);
    let best = b.best.expect("the empty binding is always available");
    Ok(build_result(graph, q, &best, true, &handle.config().relations))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::priors::RelationPriors;
    use crate::query::parse;
    use crate::scene::{BBox, SalienceWeights};
    use crate::vocab::Vocabulary;
    use chrono::Utc;

    fn scene(id: &str, ball_color: &str) -> SceneGraph {
        SceneGraph::build(
            id,
            None,
            vec![
                SceneObject::new(0, "ball", BBox::new(0.45, 0.30, 0.55, 0.50).unwrap()).with_color(ball_color),
                SceneObject::new(1, "table", BBox::new(0.30, 0.50, 0.70, 0.80).unwrap()),
            ],
            &RelationConfig::default(),
            &SalienceWeights::default(),
            Utc::now(),
        )
        .unwrap()
    }

    fn q(text: &str) -> QueryGraph {
        parse(text, &Vocabulary::default()).unwrap()
    }

    fn handle(graphs: Vec<SceneGraph>) -> IndexHandle {
        let priors = RelationPriors::fit(&graphs, 1.0).unwrap();
        IndexHandle::build(graphs, priors, EngineConfig::default()).unwrap()
    }

    #[test]
    fn exact_match_scores_one() {
        let r = bind(&scene("a", "red"), &q("red ball on table"), MatchMode::Ranked, &MatchWeights::default())
            .unwrap()
            .unwrap();
        assert_eq!(r.score, 1.0);
        assert!(r.violated.is_empty());
        assert_eq!(r.binding, BTreeMap::from([(0, 0), (1, 1)]));
    }

    #[test]
    fn wrong_color_scores_half() {
        let g = scene("a", "red");
        let query = q("blue ball on table");
        let r = bind(&g, &query, MatchMode::Ranked, &MatchWeights::default()).unwrap().unwrap();
        assert_eq!(r.score, 0.5);
        assert_eq!(r.violated.len(), 1);
        assert_eq!(r.violated[0].text, "ball.color=blue");
        assert!(bind(&g, &query, MatchMode::Strict, &MatchWeights::default()).unwrap().is_none());
    }

    #[test]
    fn inverse_edges_are_satisfied() {
        let g = scene("a", "red");
        let r = bind(&g, &q("table below ball"), MatchMode::Strict, &MatchWeights::default()).unwrap();
        assert!(r.is_some());
    }

    #[test]
    fn too_many_nodes() {
        let text = (0..9).map(|i| format!("thing{i}")).collect::<Vec<_>>().join(" and ");
        let err = bind(&scene("a", "red"), &q(&text), MatchMode::Ranked, &MatchWeights::default()).unwrap_err();
        assert_eq!(err, MatchError::QueryTooLarge { nodes: 9 });
    }

    #[test]
    fn candidates_and_ordering() {
        let mut lone = scene("c", "red");
        lone.objects.retain(|o| o.label == "table");
        lone.relations.clear();
        let h = handle(vec![scene("b", "blue"), scene("a", "red"), lone]);
        assert_eq!(candidates(&h, &q("ball")), vec!["a", "b"]);
        assert!(candidates(&h, &q("unicorn")).is_empty());
        let results = search(&h, &q("red ball on table"), 10, MatchMode::Ranked).unwrap();
        let ids: Vec<_> = results.iter().map(|r| (r.image_id.as_str(), r.score)).collect();
        assert_eq!(ids, vec![("a", 1.0), ("b", 0.5)]);
        let strict = search(&h, &q("red ball on table"), 10, MatchMode::Strict).unwrap();
        assert_eq!(strict.len(), 1);
        assert_eq!(search(&h, &q("ball"), 1, MatchMode::Ranked).unwrap()[0].image_id, "a");
    }

    #[test]
    fn explain_cites_the_on_rule() {
        let h = handle(vec![scene("a", "red")]);
        let r = explain(&h, "a", &q("ball on table")).unwrap();
        let on = &r.satisfied.iter().find(|c| !c.constraint.is_label()).unwrap();
        assert_eq!(on.triple, Some(RelationTriple::new(0, Predicate::On, 1)));
        let clause = on.evidence.iter().find(|c| c.expr.starts_with("|y_max")).unwrap();
        assert_eq!(clause.op, "<=");
        assert_eq!(clause.rhs, 0.05);
        assert!(clause.holds);

        let r = explain(&h, "a", &q("ball on table and lamp near table")).unwrap();
        assert!(r.score < 1.0);
        assert!(r.violated.iter().any(|c| c.text == "lamp"));
        assert!(r.violated.iter().any(|c| c.text == "near(lamp,table)"));
        assert_eq!(r.binding.len(), 2);

        assert_eq!(explain(&h, "zzz", &q("ball")).unwrap_err(), MatchError::NotFound("zzz".into()));
    }
}
