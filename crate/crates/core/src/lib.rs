//! Scene-prior learning from 2D supervision, end to end on the CPU.
//!
//! A latent hypersphere is mapped by a permutation-invariant transformer to
//! sequences of labeled, boxed, meshed objects. Training uses only multi-view
//! instance masks: predictions are rendered (or projected to 2D boxes), matched
//! to ground truth with Hungarian assignment, and supervised with view losses.
//! The trained decoder supports scene synthesis, latent interpolation, and
//! single-view reconstruction by latent optimization.

pub mod autodiff;
pub mod camera;
pub mod dataset;
pub mod decoders;
pub mod error;
pub mod generator;
pub mod gradsuite;
pub mod latent;
pub mod losses;
pub mod matching;
pub mod metrics;
pub mod render;
pub mod rng;
pub mod scene;
pub mod tasks;
pub mod train;

pub use autodiff::{ParamId, ParamStore, ParamTensor, Tape, TensorId};
pub use camera::{Box2D, Camera};
pub use error::{Error, Result};
pub use latent::{AnchorSet, LatentVector, WeightSimplex};
pub use scene::{CategoryTable, Mesh, ObjectInstance, Scene, TemplateSphere};
