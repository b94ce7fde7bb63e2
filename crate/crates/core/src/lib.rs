//! Graph-structured retrieval memory: chunked documents tagged with generated
//! questions, a complete similarity graph, spectral theme summaries and
//! budgeted retrieval for question answering.

pub mod corpus;
pub mod engine;
mod error;
pub mod evalqa;
pub mod graph;
mod parallel;
pub mod providers;
pub mod retrieval;
pub mod spectral;
pub mod store;
pub mod synthesis;

pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result, Stage};
