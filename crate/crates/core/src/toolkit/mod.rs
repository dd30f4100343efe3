//! Corpus generation, embedding export, 2D projection and the command line.

pub mod cli;
pub mod export;
pub mod generate;
pub mod project;

pub use export::{export_embeddings, parse_embeddings, write_embeddings};
pub use generate::{generate_corpus, GenConfig, GenManifest, ManifestEntry};
pub use project::{covariance, project_2d, Projection};
