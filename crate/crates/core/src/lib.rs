//! Learning and evaluating visual-analogy embeddings on a procedural glyph
//! corpus.
//!
//! Images are labelled with a (category, property) pair. A shared-parameter
//! encoder maps each image to a feature vector; the unit-normalized
//! difference of two features is the embedding of the transformation between
//! them. Training pulls embeddings of analogous pairs together with a
//! contrastive loss (single or double margin), and questions of the form
//! `A : B :: C : ?` are answered by ranking candidates `D` by the cosine
//! between `T(A, B)` and `T(C, D)`.

pub mod config;
pub mod corpus;
pub mod error;
pub mod model;
pub mod quadruples;
pub mod retrieval;
pub mod rng;
pub mod selfcheck;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
