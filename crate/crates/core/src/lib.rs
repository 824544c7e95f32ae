//! Dynamical implicit neural representations.
//!
//! Coordinate networks whose latent feature is pushed through a learned vector
//! field by a fixed-step ODE solver before decoding, alongside their static
//! counterparts. The crate carries its own reverse-mode autodiff tape, signal
//! generation and corruption, training, fidelity/spectral metrics, and the
//! numerical machinery used to probe the models' theory (empirical NTK spectra,
//! Jacobian rank propagation, Lipschitz and Rademacher bounds).

pub mod autodiff;
pub mod error;
pub mod fft;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod theory;
pub mod training;

pub use autodiff::{GradientVector, Tape};
pub use error::{Error, Result};
pub use models::{Backbone, Mode, Model, ModelSpec, Solver, TrajectoryRecord};
pub use signal::{GridSignal, SignalDataset, SynthSpec};
pub use tensor::Tensor;
pub use training::{TrainConfig, TrainHistory};
