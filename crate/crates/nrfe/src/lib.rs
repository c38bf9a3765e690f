//! Negative-reasoning fake news detection.
//!
//! Pipeline: SR3 harvests positive and negative LLM reasoning per news
//! item, the NRFE teacher learns news/reasoning semantic consistency with
//! cross-attention and cosine-margin heads, and the NRFE-D student
//! distills the teacher's fused representation so inference needs news
//! text only.

pub mod autodiff;
pub mod checkpoint;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod sr3;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
