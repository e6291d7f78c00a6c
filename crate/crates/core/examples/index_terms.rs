//! Builds an inverted index, saves it, reopens it and looks up postings.

use horse::config::EngineConfig;
use horse::index::{IndexHandle, Term};
use horse::priors::RelationPriors;
use horse::synth::{generate_synthetic, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&GeneratorSpec { n_scenes: 300, ..Default::default() })?;
    let priors = RelationPriors::fit(&corpus.graphs, 1.0)?;
    let handle = IndexHandle::build(corpus.graphs, priors, EngineConfig::default())?;

    let dir = std::env::temp_dir().join("horse-example-index");
    handle.save(&dir)?;
    let handle = IndexHandle::open(&dir)?;
    println!("{:?}", handle.stats());

    let term: Term = "rel:car:on:ground".parse()?;
    println!("{term}: {} images", handle.lookup(&term).len());
    let cars = handle.lookup_str("label:car");
    let trees = handle.lookup_str("label:tree");
    let both = handle.intersect(&[&cars, &trees]);
    println!("car and tree: {} of {} images", both.len(), handle.len());
    for t in handle.terms_with_prefix("attr:car:").take(5) {
        println!("  {t}");
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
