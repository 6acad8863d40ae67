//! Granular-pile manipulation planning on density fields.
//!
//! The crate learns a field-based pushing dynamics model with a shallow
//! fully-convolutional network and plans curvilinear pusher trajectories by
//! gradient descent through the fully differentiable chain
//! spline -> rendered actions -> dynamics rollout -> task cost.
//!
//! Module map:
//! - [`grid`]: fields, masks, exact distance transforms, Voronoi partitions
//! - [`raster`]: differentiable capsule rasterizer r: SE(2) -> R^{HxW}
//! - [`spline`]: Bezier / B-spline trajectories and their gradients
//! - [`sim`]: quasistatic ground-truth simulator and dataset generation
//! - [`net`]: the U-Net field dynamics model, MLP baseline, training
//! - [`costs`]: planning objectives with exact gradients
//! - [`planner`]: random shooting and batched trajectory optimization
//! - [`analysis`]: spatial correlation study, parameter/FLOP accounting
//! - [`harness`]: prediction metrics, closed-loop episodes, benchmarks

pub mod error;
pub mod grid;
pub mod net;
pub mod pgm;
pub mod dataset;
pub mod raster;
pub mod real;
pub mod rng;
pub mod sim;
pub mod spline;

pub use error::{Error, Result};
pub use real::Real;
