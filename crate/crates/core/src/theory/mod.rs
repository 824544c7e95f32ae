//! Numerical checks of the models theory: empirical NTK spectra, closed-form
//! gradients, rank propagation, Lipschitz and complexity bounds, and the
//! Riccati flow.

pub mod bounds;
pub mod gradient;
pub mod linalg;
pub mod lipschitz;
pub mod ntk;
pub mod rank;
pub mod riccati;

/// Relative singular-value (or eigenvalue) threshold for numerical rank.
pub const RANK_TOL: f64 = 1e-8;

pub use bounds::{rademacher_bound, universal_constant, BoundInputs, BoundVariant};
pub use gradient::{closed_form_dinr_gradient, ClosedForm, JacobianChain};
pub use linalg::{eigen_sym, numerical_rank, singular_values};
pub use lipschitz::{flow_lipschitz_check, lipschitz_estimate, spectral_norm, FlowLipschitzReport, LipschitzEstimate};
pub use ntk::{condition_number, effective_rank, empirical_ntk, lognormal_fit, ntk_rank_compare, ntk_report, NtkReport};
pub use rank::{rank_propagation_check, RankReport};
pub use riccati::{riccati_numeric, riccati_reference};
