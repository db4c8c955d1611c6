//! Exact asymptotic variances.
//!
//! Finite models are first turned into a [`FiniteChain`] and solved into
//! [`ChainLaws`]; every variance object is then a finite sum over those
//! laws. Functionals are `n x d` tables (one row per state) and variances
//! are `d x d` matrices.
//!
//! Two independent routes are provided for the selection variances: the
//! forward recursion ([`recursion_variances`]) and the operator closed form
//! ([`closed_form_variance`], plus [`residual_gap`] for residual
//! selection).

mod chain;
mod closed_form;
pub mod fixed_param;
mod quadrature;
mod recursion;
pub mod stability;

pub use chain::{ChainLaws, ChainStep, FiniteChain, StepLaw};
pub use closed_form::{
    cascade, closed_form_residual_variance, closed_form_variance, residual_gap, sis_variance, WeightOperator,
};
pub use fixed_param::{fixed_param_variances, sir_fixed_param_variance, sis_variance_beta, FixedParamVariances};
pub use quadrature::{integrate, Quadrature};
pub use recursion::{
    fractional_part, max_eigenvalue, min_eigenvalue, recursion_variance, recursion_variances, residual_term,
    variance_under, VarianceReport, VarianceStep, INTEGER_SNAP,
};
pub use stability::{
    dobrushin_coefficient, operator_oscillation_bound, oscillation, stability_bound, stability_limit,
    variation_product_check, StabilityParams, VariationCheck,
};
