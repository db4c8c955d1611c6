//! One function per experiment kind. Each returns a [`Report`] whose
//! checks decide the exit status.

mod clt;
mod compare;
mod degeneracy;
mod rates;
mod rb;
mod run;
mod stability;

use anyhow::Result;
use nalgebra::DMatrix;
use smc_core::models::FiniteHmm;
use smc_core::SelectionScheme;

use crate::config::{config_error, BuiltModel, ExperimentConfig, ExperimentKind, FunctionalSpec};
use crate::report::Report;

pub use clt::clt_check;
pub use compare::compare_schemes;
pub use degeneracy::weight_degeneracy;
pub use rates::rate_fit;
pub use rb::rb_compare;
pub use run::run;
pub use stability::stability;

/// Tolerance of exact identities.
pub const EXACT_TOL: f64 = 1e-10;

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    match cfg.experiment {
        ExperimentKind::Run => run(cfg, seed),
        ExperimentKind::CltCheck => clt_check(cfg, seed),
        ExperimentKind::RateFit => rate_fit(cfg, seed),
        ExperimentKind::Stability => stability(cfg, seed),
        ExperimentKind::CompareSchemes => compare_schemes(cfg, seed),
        ExperimentKind::RbCompare => rb_compare(cfg, seed),
        ExperimentKind::WeightDegeneracy => weight_degeneracy(cfg, seed),
    }
}

pub(crate) fn finite_model(cfg: &ExperimentConfig, seed: u64, what: &str) -> Result<FiniteHmm> {
    match cfg.model.build(cfg.filter.steps, seed)? {
        BuiltModel::Finite(h) => Ok(h),
        _ => Err(config_error(format!(
            "{what} needs a finite model with exact variances (two_state_hmm, mixing_hmm or finite_hmm)"
        ))),
    }
}

/// First configured functional as an `n x 1` table, or `default`.
pub(crate) fn finite_functional(
    cfg: &ExperimentConfig,
    n: usize,
    default: FunctionalSpec,
) -> Result<(String, Vec<f64>)> {
    let spec = cfg.functionals.first().cloned().unwrap_or(default);
    Ok((spec.name(), spec.table(n)?))
}

pub(crate) fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

pub(crate) fn variance_scheme(scheme: SelectionScheme) -> Result<SelectionScheme> {
    match scheme {
        SelectionScheme::Multinomial | SelectionScheme::Residual => Ok(scheme),
        other => Err(config_error(format!(
            "no exact asymptotic variance for scheme `{}`",
            other.as_str()
        ))),
    }
}

/// Horizon to use: `filter.steps` capped by the model horizon.
pub(crate) fn horizon(cfg: &ExperimentConfig, model_horizon: usize) -> Result<usize> {
    let t = cfg.filter.steps.unwrap_or(model_horizon);
    if t > model_horizon {
        return Err(config_error(format!(
            "filter.steps = {t} exceeds the model horizon {model_horizon}"
        )));
    }
    Ok(t)
}

/// Normal-approximation interval for a sample variance with the given
/// excess kurtosis.
pub(crate) fn variance_ci(var: f64, excess_kurtosis: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let rel = (2.0 / (nf - 1.0) + excess_kurtosis / nf).max(0.0).sqrt();
    (var * (1.0 - 1.96 * rel), var * (1.0 + 1.96 * rel))
}
