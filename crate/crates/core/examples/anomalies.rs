//! Fits relation priors on a synthetic corpus and lists the least typical
//! scenes next to the injected ground truth.

use horse::priors::{rank_by_uniqueness, RelationPriors, ScoringConfig};
use horse::scene::Predicate;
use horse::synth::{generate_synthetic, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&GeneratorSpec { n_scenes: 500, seed: 123, ..Default::default() })?;
    let priors = RelationPriors::fit(&corpus.graphs, 1.0)?;
    println!(
        "P(on | car, ground) = {:.4}",
        priors.probability("car", Predicate::On, "ground")
    );

    println!("injected: {:?}", corpus.anomalous_ids());
    for r in rank_by_uniqueness(&priors, &corpus.graphs, &ScoringConfig::default()).iter().take(5) {
        let worst = r.triple_surprisals.first();
        println!(
            "{:<14} uniqueness={:.3} worst={}",
            r.image_id,
            r.uniqueness,
            worst.map(|t| format!("{}({},{})", t.predicate, t.subject_label, t.object_label)).unwrap_or_default()
        );
    }
    Ok(())
}
