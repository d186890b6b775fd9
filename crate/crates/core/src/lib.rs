//! Continuous-action Q-learning with exact and approximate max-Q solvers.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`). Training,
//! bounds and the MIP solver are normally run in `f64`; the aliases below
//! name the common instantiations.

pub mod agent;
pub mod approx;
pub mod bounds;
pub mod cluster;
pub mod dualfilter;
pub mod env;
pub mod error;
pub mod linalg;
pub mod mip;
pub mod net;
mod scalar;
mod solution;

pub use error::{CaqlError, Result};
pub use scalar::Scalar;
pub use solution::{MaxQSolution, SolveStatus};

pub type Net = net::ReluNet<f64>;
pub type NetF32 = net::ReluNet<f32>;
pub type Box64 = bounds::BoxDomain<f64>;
pub type BoxF32 = bounds::BoxDomain<f32>;
pub type Bounds = bounds::LayerBounds<f64>;
pub type Solution = MaxQSolution<f64>;
pub type Transition = agent::Transition<f64>;
pub type Buffer = agent::ReplayBuffer<f64>;
pub type Agent = agent::Agent<f64>;
