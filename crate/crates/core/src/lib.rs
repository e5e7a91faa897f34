//! Retrieval-based answer ranking with evidence-level Shapley explanations.
//!
//! The pipeline: link and mask answer entities in a corpus ([`corpus`]),
//! train a masked-language-model encoder over the answer set ([`encoder`]),
//! index evidence embeddings per answer ([`index`]), score each answer from
//! its retrieved evidence with a set-transformer reasoner ([`reasoner`]),
//! and attribute scores to individual passages ([`attribution`]).

mod answers;
pub mod attribution;
pub mod corpus;
pub mod diffkernel;
pub mod encoder;
pub mod eval;
pub mod index;
pub mod pipeline;
mod io_util;
pub mod ranking;
pub mod reasoner;
pub mod scalar;

pub use answers::AnswerSet;
pub use ranking::{RankBasis, RankedAnswer, RankedAnswerList};
pub use scalar::{DType, Scalar};

pub type Tensor32 = diffkernel::Tensor<f32>;
pub type Tensor64 = diffkernel::Tensor<f64>;
pub type MlmModel32 = encoder::MlmModel<f32>;
pub type MlmModel64 = encoder::MlmModel<f64>;
pub type Reasoner32 = reasoner::Reasoner<f32>;
pub type Reasoner64 = reasoner::Reasoner<f64>;
