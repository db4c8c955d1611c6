use anyhow::Result;
use smc_core::variance::{dobrushin_coefficient, recursion_variances, sis_variance, stability_bound};
use smc_core::SelectionScheme;

use super::{column, finite_functional, finite_model, horizon, variance_scheme};
use crate::config::{ExperimentConfig, FunctionalSpec};
use crate::report::{Report, Row};

pub const PLATEAU_FACTOR: f64 = 1.05;
pub const SMOOTHING_HORIZON: usize = 50;

/// Exact filtering variance against the stability bound, the plateau
/// diagnostic, the geometric forgetting of the conditionals and the
/// growing variance of a first-state functional.
pub fn stability(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let hmm = finite_model(cfg, seed, "stability")?;
    let t_max = horizon(cfg, hmm.horizon())?;
    let hmm = hmm.with_observations(hmm.observations[..t_max].to_vec())?;
    let n = hmm.states();
    let (name, table) = finite_functional(cfg, n, FunctionalSpec::Indicator { state: 0 })?;
    let scheme = variance_scheme(cfg.filter.schemes[0])?;
    let lo = table.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let params = hmm.stability_params(hi - lo)?;
    let laws = hmm.chain()?.solve()?;
    let phi = column(&table);
    let variances = recursion_variances(&laws, &phi, t_max, scheme)?;

    let mut report = Report::new(cfg.experiment, seed);
    report.metric("functional", &name);
    report.metric("c", params.c);
    report.metric("f_lo", params.f_lo);
    report.metric("f_hi", params.f_hi);
    let s = scheme.as_str();
    let mut v = Vec::with_capacity(t_max + 1);
    let mut violations = Vec::new();
    for t in 0..=t_max {
        let vt = variances.at(t).v[(0, 0)];
        let bound = stability_bound(&params, t)?;
        if vt > bound {
            violations.push(t);
        }
        v.push(vt);
        report.rows.push(Row::exact(t, "v", s, vt));
        report.rows.push(Row::exact(t, "bound", s, bound));
    }
    report.check(
        "below_bound",
        violations.is_empty(),
        format!("V_t above the bound at t = {violations:?}"),
    );
    let max_v = v.iter().copied().fold(0.0, f64::max);
    report.metric("max_v", max_v);
    report.metric("bound_at_t_max", stability_bound(&params, t_max)?);

    let half = t_max / 2;
    if half >= 1 {
        let early = v[1..=half].iter().copied().fold(0.0, f64::max);
        let late = v[half + 1..].iter().copied().fold(0.0, f64::max);
        let ratio = late / early;
        report.metric("plateau_ratio", ratio);
        report.check(
            "plateau",
            ratio <= PLATEAU_FACTOR,
            format!("sup_(t > {half}) V_t / sup_(t <= {half}) V_t = {ratio:.5}"),
        );
    }

    let horizon_c = cfg.filter.contraction_horizon.unwrap_or(20).min(t_max);
    let rate = 1.0 - 1.0 / (params.c * params.c);
    let mut worst: f64 = 0.0;
    for t in 1..=horizon_c {
        let fwd = hmm.forward(t)?;
        for (k, table) in fwd.conditionals.iter().enumerate() {
            let d = dobrushin_coefficient(table)?;
            worst = worst.max(d / rate.powi((t - k) as i32));
        }
    }
    report.metric("contraction_worst_ratio", worst);
    report.check(
        "contraction",
        worst <= 1.0 + 1e-12,
        format!("max over k < t <= {horizon_c} of delta / (1 - C^-2)^(t-k) = {worst:.5}"),
    );

    // first-state functional on the chain that carries x_0 along, with the
    // first observation attached to x_0
    let t_s = SMOOTHING_HORIZON.min(t_max.saturating_sub(1));
    if t_s >= 2 {
        let short = if hmm.initial_observation.is_some() {
            hmm.with_observations(hmm.observations[..t_s].to_vec())?
        } else {
            hmm.with_observations(hmm.observations[..=t_s].to_vec())?.observing_first_state()?
        };
        let origin = short.origin_chain()?.solve()?;
        let phi0 = column(&(0..n * n).map(|i| table[i / n]).collect::<Vec<_>>());
        let multi = recursion_variances(&origin, &phi0, t_s, SelectionScheme::Multinomial)?;
        let resid = recursion_variances(&origin, &phi0, t_s, SelectionScheme::Residual)?;
        let mut ordered_until = None;
        let mut contiguous = true;
        let mut decreasing = Vec::new();
        for t in 1..=t_s {
            let (vm, vr) = (multi.at(t).v[(0, 0)], resid.at(t).v[(0, 0)]);
            let vs = sis_variance(&origin, &phi0, t)?[(0, 0)];
            if contiguous && vm >= vr && vr > vs {
                ordered_until = Some(t);
            } else {
                contiguous = false;
            }
            if t >= 3 && vm < multi.at(t - 1).v[(0, 0)] * (1.0 - 1e-12) {
                decreasing.push(t);
            }
            report.rows.push(Row::exact(t, "first_state_v", "multinomial", vm));
            report.rows.push(Row::exact(t, "first_state_v", "residual", vr));
            report.rows.push(Row::exact(t, "first_state_v", "none", vs));
        }
        report.metric("first_state_ordering_holds_through_t", ordered_until);
        report.check(
            "first_state_nondecreasing",
            decreasing.is_empty(),
            format!("decreases over t in [2, {t_s}] at {decreasing:?}"),
        );
    }
    Ok(report)
}
