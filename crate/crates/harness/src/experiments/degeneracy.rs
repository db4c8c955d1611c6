use anyhow::Result;
use smc_core::engine::{run_sis, run_sis_tracked, FilterConfig, Model};

use super::horizon;
use crate::config::{config_error, BuiltModel, ExperimentConfig};
use crate::report::{Report, Row};
use crate::stats::{linear_fit, sample_variance};

pub const MIN_R_SQUARED: f64 = 0.95;

/// Threshold defining a degenerate system in the reported trajectory.
const DEGENERATE_WEIGHT: f64 = 0.99;

/// Per-step variance of `log(w1 / w2)` over independent pairs and the
/// largest normalised weight of a full run.
fn tracked<M: Model>(model: &M, steps: usize, pairs: usize, particles: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, log_w) = run_sis_tracked(model, &FilterConfig::sis(2 * pairs, steps, seed), &[])?;
    let var = log_w
        .iter()
        .map(|lw| {
            let d: Vec<f64> = (0..pairs).map(|i| lw[2 * i] - lw[2 * i + 1]).collect();
            sample_variance(&d)
        })
        .collect();
    let trace = run_sis(model, &FilterConfig::sis(particles, steps, seed).with_stream(1), &[])?;
    Ok((var, trace.steps.iter().map(|s| s.max_weight).collect()))
}

pub fn weight_degeneracy(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let pairs = cfg.filter.pairs;
    let h = cfg.filter.particles;
    let (var, max_w) = match cfg.model.build(cfg.filter.steps, seed)? {
        BuiltModel::Finite(hmm) => tracked(&hmm.filter()?, horizon(cfg, hmm.horizon())?, pairs, h, seed)?,
        BuiltModel::Gaussian(ssm) => tracked(&ssm, horizon(cfg, ssm.horizon())?, pairs, h, seed)?,
        _ => return Err(config_error("weight-degeneracy needs a state space model (finite HMM or linear Gaussian)")),
    };
    let steps = var.len() - 1;
    let [lo, hi] = cfg.filter.fit_window.unwrap_or([10.min(steps), steps]);
    if hi > steps || hi < lo + 2 {
        return Err(config_error(format!("fit window [{lo}, {hi}] needs 3 steps within 0..={steps}")));
    }
    let x: Vec<f64> = (lo..=hi).map(|t| t as f64).collect();
    let fit = linear_fit(&x, &var[lo..=hi])?;

    let mut report = Report::new(cfg.experiment, seed);
    for (t, v) in var.iter().enumerate() {
        report.rows.push(Row::exact(t, "log_weight_ratio_variance", "none", 0.0).without_exact().with_empirical(*v, None, pairs));
    }
    for (t, w) in max_w.iter().enumerate() {
        report.rows.push(Row::exact(t, "max_normalized_weight", "none", 0.0).without_exact().with_empirical(*w, None, 1));
    }
    let half = 1.96 * fit.slope_se;
    report.rows.push(
        Row::exact(0, "variance_slope", "none", 0.0)
            .without_exact()
            .with_empirical(fit.slope, Some((fit.slope - half, fit.slope + half)), pairs)
            .untimed(),
    );
    report.metric("slope", fit.slope);
    report.metric("intercept", fit.intercept);
    report.metric("r_squared", fit.r_squared);
    report.metric("fit_window", [lo, hi]);
    report.metric("pairs", pairs);
    report.metric("particles", h);
    report.metric("first_t_max_weight_above_0_99", max_w.iter().position(|w| *w > DEGENERATE_WEIGHT));
    report.metric("final_max_weight", max_w.last().copied());
    report.check(
        "linear_growth",
        fit.r_squared > MIN_R_SQUARED,
        format!("R^2 = {:.4} over t in [{lo}, {hi}], slope {:.4e}", fit.r_squared, fit.slope),
    );
    Ok(report)
}
