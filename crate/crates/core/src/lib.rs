//! Coarse-to-fine listwise ranking losses for graph contrastive learning.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autodiff`]), a GAT/GCN encoder ([`encoder`]), the ranking losses
//! ([`losses`]), full-batch pre-training ([`trainer`]) and linear-probe
//! evaluation ([`eval`]).

pub mod augment;
pub mod autodiff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod graph;
pub mod io;
pub mod losses;
pub mod reference;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use graph::Graph;
pub use tensor::Tensor;
