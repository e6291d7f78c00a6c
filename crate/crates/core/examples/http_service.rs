//! Serves the JSON API over a synthetic index on 127.0.0.1:8080.
//!
//!     curl 'http://127.0.0.1:8080/api/search?q=car+on+ground&k=3'

use std::sync::Arc;

use horse::config::EngineConfig;
use horse::index::IndexHandle;
use horse::priors::RelationPriors;
use horse::service::{serve, AppState, Engine};
use horse::synth::{generate_synthetic, GeneratorSpec};
use horse::vocab::Vocabulary;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = generate_synthetic(&GeneratorSpec { n_scenes: 500, ..Default::default() })?;
    let priors = RelationPriors::fit(&corpus.graphs, 1.0)?;
    let handle = IndexHandle::build(corpus.graphs, priors, EngineConfig::default())?;
    let engine = Engine::new(handle, Vocabulary::default());
    let state = AppState::new(Some(Arc::new(engine)), ".");
    println!("listening on http://127.0.0.1:8080");
    serve(state, "127.0.0.1", 8080).await?;
    Ok(())
}
