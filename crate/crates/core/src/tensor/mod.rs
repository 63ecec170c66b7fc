//! Dense tensors, the autodiff tape, seeded randomness and parameter storage.

mod array;
pub mod gradcheck;
mod graph;
mod params;
mod rng;

pub use array::Tensor;
pub use gradcheck::{finite_difference_check, finite_difference_check_at};
pub use graph::{BatchStats, Graph, LcGeometry, Var};
pub use params::{ParamId, ParamStore};
pub use rng::{RngStream, RNG_ALGORITHM};
