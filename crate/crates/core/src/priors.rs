//! Corpus relation statistics and per-image uniqueness scoring.
//!
//! Each `(subject_label, predicate, object_label)` fact is modelled as an
//! independent Bernoulli event over co-occurring object pairs of that label
//! pair, estimated with Laplace smoothing. An image's uniqueness is the mean
//! surprisal of its most atypical facts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{Predicate, RelationTriple, SceneGraph};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PriorsError {
    #[error("cannot fit priors on an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationPriors {
    counts: BTreeMap<(String, Predicate, String), u64>,
    pair_totals: BTreeMap<(String, String), u64>,
    alpha: f64,
}

impl RelationPriors {
    pub fn fit(graphs: &[SceneGraph], alpha: f64) -> Result<Self, PriorsError> {
        if graphs.is_empty() {
            return Err(PriorsError::EmptyCorpus);
        }
        let mut priors = RelationPriors {
            counts: BTreeMap::new(),
            pair_totals: BTreeMap::new(),
            alpha,
        };
        for g in graphs {
            for a in &g.objects {
                for b in &g.objects {
                    if a.object_id != b.object_id {
                        *priors
                            .pair_totals
                            .entry((a.label.clone(), b.label.clone()))
                            .or_default() += 1;
                    }
                }
            }
            for (s, p, o) in g.labeled_relations() {
                *priors
                    .counts
                    .entry((s.label.clone(), p, o.label.clone()))
                    .or_default() += 1;
            }
        }
        Ok(priors)
    }

    /// Rebuilds priors from raw tables (used when reading persisted segments).
    pub fn from_parts(
        counts: BTreeMap<(String, Predicate, String), u64>,
        pair_totals: BTreeMap<(String, String), u64>,
        alpha: f64,
    ) -> Self {
        RelationPriors {
            counts,
            pair_totals,
            alpha,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn predicate_count(&self) -> usize {
        Predicate::ALL.len()
    }

    pub fn counts(&self) -> &BTreeMap<(String, Predicate, String), u64> {
        &self.counts
    }

    pub fn pair_totals(&self) -> &BTreeMap<(String, String), u64> {
        &self.pair_totals
    }

    pub fn count(&self, subject: &str, predicate: Predicate, object: &str) -> u64 {
        self.counts
            .get(&(subject.to_string(), predicate, object.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn pair_total(&self, subject: &str, object: &str) -> u64 {
        self.pair_totals
            .get(&(subject.to_string(), object.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Laplace-smoothed `P(predicate | subject, object)`; an unseen label pair
    /// gives 0.5.
    pub fn probability(&self, subject: &str, predicate: Predicate, object: &str) -> f64 {
        let n = self.count(subject, predicate, object) as f64;
        let total = self.pair_total(subject, object) as f64;
        (n + self.alpha) / (total + 2.0 * self.alpha)
    }

    pub fn surprisal(&self, subject: &str, predicate: Predicate, object: &str) -> f64 {
        -self.probability(subject, predicate, object).log2()
    }

    /// Human-readable table of the fitted statistics.
    pub fn dump(&self) -> PriorsDump {
        let pairs = self
            .pair_totals
            .iter()
            .map(|((s, o), &total)| {
                let predicates = Predicate::ALL
                    .iter()
                    .filter_map(|&p| {
                        let count = self.count(s, p, o);
                        (count > 0).then(|| PredicateStat {
                            predicate: p,
                            count,
                            probability: self.probability(s, p, o),
                        })
                    })
                    .collect();
                PairStats {
                    subject: s.clone(),
                    object: o.clone(),
                    pair_total: total,
                    predicates,
                }
            })
            .collect();
        PriorsDump {
            alpha: self.alpha,
            predicate_count: self.predicate_count(),
            pairs,
        }
    }

    /// Every predicate's probability for one label pair.
    pub fn pair_stats(&self, subject: &str, object: &str) -> PairStats {
        PairStats {
            subject: subject.to_string(),
            object: object.to_string(),
            pair_total: self.pair_total(subject, object),
            predicates: Predicate::ALL
                .iter()
                .map(|&p| PredicateStat {
                    predicate: p,
                    count: self.count(subject, p, object),
                    probability: self.probability(subject, p, object),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateStat {
    pub predicate: Predicate,
    pub count: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub subject: String,
    pub object: String,
    pub pair_total: u64,
    pub predicates: Vec<PredicateStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorsDump {
    pub alpha: f64,
    pub predicate_count: usize,
    pub pairs: Vec<PairStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoringConfig {
    /// Facts with probability below this are reported as anomalous.
    pub theta: f64,
    /// Number of most surprising facts averaged into the uniqueness score.
    pub top_k: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            theta: 0.05,
            top_k: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTriple {
    pub subject_id: u32,
    pub subject_label: String,
    pub predicate: Predicate,
    pub object_id: u32,
    pub object_label: String,
    pub probability: f64,
    pub surprisal: f64,
}

impl ScoredTriple {
    pub fn triple(&self) -> RelationTriple {
        RelationTriple::new(self.subject_id, self.predicate, self.object_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub image_id: String,
    /// Sorted by descending surprisal.
    pub triple_surprisals: Vec<ScoredTriple>,
    pub uniqueness: f64,
    pub anomalous_triples: Vec<ScoredTriple>,
}

/// Scores each fact of `graph` once: of a triple and its stored inverse only
/// the form with the smaller `(subject_label, predicate)` key is kept.
pub fn score_image(priors: &RelationPriors, graph: &SceneGraph, cfg: &ScoringConfig) -> TypicalityReport {
    let key = |t: &RelationTriple| {
        let s = graph.object(t.subject).map(|o| o.label.as_str()).unwrap_or("");
        let o = graph.object(t.object).map(|o| o.label.as_str()).unwrap_or("");
        (s, t.predicate.as_str(), o, t.subject, t.object)
    };
    let mut scored = Vec::new();
    for t in &graph.relations {
        if let Some(inv) = t.inverse() {
            if graph.relations.contains(&inv) && key(&inv) < key(t) {
                continue;
            }
        }
        let (Some(s), Some(o)) = (graph.object(t.subject), graph.object(t.object)) else {
            continue;
        };
        let probability = priors.probability(&s.label, t.predicate, &o.label);
        scored.push(ScoredTriple {
            subject_id: s.object_id,
            subject_label: s.label.clone(),
            predicate: t.predicate,
            object_id: o.object_id,
            object_label: o.label.clone(),
            probability,
            surprisal: -probability.log2(),
        });
    }
    scored.sort_by(|a, b| {
        b.surprisal
            .total_cmp(&a.surprisal)
            .then_with(|| a.triple().cmp(&b.triple()))
    });
    let k = cfg.top_k.min(scored.len());
    let uniqueness = if k == 0 {
        0.0
    } else {
        scored[..k].iter().map(|t| t.surprisal).sum::<f64>() / k as f64
    };
    let anomalous_triples = scored
        .iter()
        .filter(|t| t.probability < cfg.theta)
        .cloned()
        .collect();
    TypicalityReport {
        image_id: graph.image_id.clone(),
        triple_surprisals: scored,
        uniqueness,
        anomalous_triples,
    }
}

/// Reports for every graph, most unique first (ties by ascending image id).
pub fn rank_by_uniqueness(
    priors: &RelationPriors,
    graphs: &[SceneGraph],
    cfg: &ScoringConfig,
) -> Vec<TypicalityReport> {
    let mut reports: Vec<_> = graphs.iter().map(|g| score_image(priors, g, cfg)).collect();
    reports.sort_by(|a, b| {
        b.uniqueness
            .total_cmp(&a.uniqueness)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    reports
}
