pub mod acqopt;
pub mod bench;
pub mod acquisition;
pub mod design;
pub mod driver;
pub mod error;
pub mod kernel;
pub mod noise;
pub mod quadrature;
pub mod special;
pub mod surrogate;
pub mod types;

pub use acqopt::{OptBudget, SearchBox};
pub use error::{Result, TvrError};
pub use kernel::{h_cross, k_joint, s0_sq, GpHyperParams, NoiseIntegral};
pub use noise::{ChainTransform, CustomTransform, DiscreteNoise, Marginal, NoiseSpec};
pub use types::{
    clamp_to_bounds, derive_rng, seeded_rng, sub_seed, Bounds, ControlPoint, Dataset, NoisePoint,
    ProblemSpec, Rng, Simulator,
};
