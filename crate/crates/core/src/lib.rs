//! Numeral-to-tag recommendation for financial reports.
//!
//! A generator writes a tag-style description for each numeral, an
//! embedding index retrieves the closest taxonomy entries, and repeated
//! shuffled listwise ranking over small groups votes on the final tag.

pub mod backends;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod prompting;
pub mod rerank;
pub mod retrieval;
pub mod seed;
pub mod sim;

pub use corpus::{NumeralRecord, TagDocument, TaxonomyCorpus};
pub use error::{Error, Result};
pub use eval::{EvalReport, PredictionSet, SweepAxis, SweepTable};
pub use pipeline::{Pipeline, Prediction, RunOutput};
pub use rerank::{GroupOrdering, RerankConfig, VoteMode};
pub use retrieval::{Candidate, EmbeddingVector, VectorIndex};
