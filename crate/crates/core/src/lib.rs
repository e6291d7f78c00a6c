pub mod cli;
pub mod config;
pub mod index;
pub mod ingest;
pub mod matcher;
pub mod priors;
pub mod query;
pub mod scene;
pub mod service;
pub mod synth;
pub mod vocab;
