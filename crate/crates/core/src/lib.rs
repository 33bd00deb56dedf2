//! Splattable neural primitives: a CPU renderer and trainer for radiance
//! fields built from ellipsoid-bounded shallow periodic density networks.
//!
//! Each primitive bounds a one-hidden-layer cosine network with an ellipsoid.
//! Along any view ray the density line integral has a closed form, so the
//! per-primitive opacity kernel is evaluated with two antiderivative queries
//! instead of ray marching. Front-to-back alpha blending of those kernels
//! renders images; analytic gradients of every trainable scalar drive an
//! Adam-based training loop with population control.
//!
//! The `oracle` module holds the independent reference machinery (adaptive
//! quadrature, finite differences, a ray-marching renderer) that the checks
//! in `checks` and the acceptance suite validate the closed forms against.

pub mod appearance;
pub mod checks;
pub mod error;
pub mod geometry;
pub mod image_buf;
pub mod io;
pub mod metrics;
pub mod neural_field;
pub mod oracle;
pub mod renderer;
pub mod scene;
pub mod training;

pub use error::Error;
pub use geometry::{Ellipsoid, Ray, SegmentHit};
pub use image_buf::ImageF;
pub use neural_field::{DensityNet, NetGradient, NeuralPrimitive};
pub use renderer::{render, render_backward, Camera, RenderConfig, RenderOutput};
pub use scene::{GradientBuffer, PrimitiveGradient, Scene};
pub use training::{init_scene, train, TrainConfig, TrainReport};
