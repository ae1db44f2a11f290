//! Shared numerical core: scalar-generic reverse-mode autodiff over ndarray,
//! layer vocabulary, optimizer, deterministic RNG streams, run configuration,
//! domain value types, and the binary array container used for checkpoints.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod types;

pub use config::Config;
pub use error::{Error, Result};
pub use rng::{rng_fork, RandomStream};
pub use scalar::Scalar;
pub use tape::{Grads, Tape, Var};
pub use types::{Frame, GaussianLatent, MotionLatentSet, VideoClip};

/// Training scalar type. Gradient checks run at [`Check`] precision.
pub type Real = f32;
/// High-precision scalar for finite-difference verification.
pub type Check = f64;
