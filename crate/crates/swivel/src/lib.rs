//! Swivel: low-dimensional feature embeddings from a co-occurrence matrix.
//!
//! The library factorizes the point-wise mutual information (PMI) matrix of
//! a corpus by stochastic gradient descent over k x k submatrix shards. A
//! piecewise loss treats observed and unobserved co-occurrences distinctly:
//! observed cells must reconstruct their PMI, unobserved cells must not
//! over-estimate a smoothed upper bound. The pipeline covers corpus
//! tokenization, vocabulary and co-occurrence counting, frequency-interleaved
//! sharding, Adagrad training with optional lock-free multi-worker execution,
//! embedding export, and word-similarity/analogy evaluation.
//!
//! Built with the `parallel` feature (default), the counting, training, and
//! evaluation inner loops run on rayon; the sequential fallback produces
//! bit-identical results.

pub mod checkpoint;
pub mod corpus;
mod error;
pub mod eval;
mod hogwild;
pub mod math;
pub mod matrix;
pub mod objective;
pub mod trainer;

pub use error::{Result, SwivelError};
