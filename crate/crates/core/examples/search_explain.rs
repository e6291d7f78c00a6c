//! Ranked and strict search over a synthetic corpus, then an explanation of
//! the top hit.

use horse::config::EngineConfig;
use horse::index::IndexHandle;
use horse::matcher::{explain, search_with, MatchMode, SearchOptions};
use horse::priors::RelationPriors;
use horse::query::parse;
use horse::synth::{generate_synthetic, GeneratorSpec};
use horse::vocab::Vocabulary;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&GeneratorSpec { n_scenes: 1000, ..Default::default() })?;
    let priors = RelationPriors::fit(&corpus.graphs, 1.0)?;
    let handle = IndexHandle::build(corpus.graphs, priors, EngineConfig::default())?;

    let q = parse("a person left of a red car", &Vocabulary::default())?;
    for mode in [MatchMode::Ranked, MatchMode::Strict] {
        let opts = SearchOptions { k: 3, mode, ..Default::default() };
        let out = search_with(&handle, &q, &opts)?;
        println!("{mode}: {:?}", out.stats);
        for r in &out.results {
            println!("  {} score={:.3} binding={:?}", r.image_id, r.score, r.binding);
        }
    }

    let top = search_with(&handle, &q, &SearchOptions { k: 1, ..Default::default() })?;
    if let Some(hit) = top.results.first() {
        let why = explain(&handle, &hit.image_id, &q)?;
        for c in why.satisfied.iter().map(|c| ("+", c)).chain(why.violated.iter().map(|c| ("-", c))) {
            println!("{} {}", c.0, c.1.text);
            for clause in &c.1.evidence {
                println!("    {clause}");
            }
        }
    }
    Ok(())
}
