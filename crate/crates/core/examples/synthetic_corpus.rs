//! Generates a seeded street-scene corpus with a few convention violations.

use horse::synth::{generate_synthetic, GeneratorSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = GeneratorSpec { n_scenes: 200, seed: 42, anomaly_rate: 0.02, ..Default::default() };
    let corpus = generate_synthetic(&spec)?;
    let objects: usize = corpus.graphs.iter().map(|g| g.objects.len()).sum();
    println!("{} scenes, {} objects", corpus.graphs.len(), objects);
    for t in corpus.truth.iter().filter(|t| t.violation.is_some()) {
        println!("{} violates {:?}", t.image_id, t.violation.unwrap());
    }
    Ok(())
}
