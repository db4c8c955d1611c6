use anyhow::Result;
use smc_core::engine::{run_replicates, EvalTimes, FilterConfig};
use smc_core::variance::{recursion_variances, residual_gap};
use smc_core::{Functional, SelectionScheme};

use super::{column, finite_functional, finite_model, horizon, EXACT_TOL};
use crate::config::{ExperimentConfig, FunctionalSpec};
use crate::report::{Report, Row};
use crate::stats::moments;

/// Exact multinomial and residual variances with the closed-form gap;
/// with `trials` set, also replicate variances of both schemes.
pub fn compare_schemes(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let hmm = finite_model(cfg, seed, "compare-schemes")?;
    let t_max = horizon(cfg, hmm.horizon())?;
    let n = hmm.states();
    let (name, table) = finite_functional(cfg, n, FunctionalSpec::Indicator { state: n - 1 })?;
    let phi = column(&table);
    let laws = hmm.chain()?.solve()?;
    let multi = recursion_variances(&laws, &phi, t_max, SelectionScheme::Multinomial)?;
    let resid = recursion_variances(&laws, &phi, t_max, SelectionScheme::Residual)?;

    let mut report = Report::new(cfg.experiment, seed);
    report.metric("functional", &name);
    let (mut worst_gap, mut worst_route) = (f64::NEG_INFINITY, 0.0f64);
    for t in 1..=t_max {
        let v = multi.at(t).v[(0, 0)];
        let vr = resid.at(t).v[(0, 0)];
        let gap = residual_gap(&laws, &phi, t)?[(0, 0)];
        worst_gap = worst_gap.max(gap);
        worst_route = worst_route.max(((vr - v) - gap).abs() / v.abs().max(1.0));
        report.rows.push(Row::exact(t, "v", "multinomial", v));
        report.rows.push(Row::exact(t, "v", "residual", vr));
        report.rows.push(Row::exact(t, "gap", "residual", gap));
    }
    report.check(
        "gap_nonpositive",
        worst_gap <= EXACT_TOL,
        format!("max gap {worst_gap:.3e} over t = 1..{t_max}"),
    );
    report.check(
        "gap_matches_recursions",
        worst_route <= EXACT_TOL,
        format!("max |(V^r - V) - gap| {worst_route:.3e}"),
    );
    report.metric("max_gap", worst_gap);

    let trials = cfg.filter.trials.unwrap_or(0);
    if trials >= 2 {
        let h = cfg.filter.particles;
        let truth: f64 = hmm.filtering()?[t_max].iter().zip(&table).map(|(p, v)| p * v).sum();
        let funcs = [Functional::from_table(name, table.iter().map(|v| vec![*v]).collect())];
        let model = hmm.filter()?;
        let mut spread = Vec::new();
        for (scheme, exact) in [(SelectionScheme::Multinomial, &multi), (SelectionScheme::Residual, &resid)] {
            let fc = FilterConfig::new(h, t_max, scheme, seed).with_eval_times(EvalTimes::Final);
            let s = run_replicates(&model, &fc, &funcs, trials)?;
            let errors: Vec<f64> = s.functionals[0]
                .final_estimates
                .iter()
                .map(|e| (h as f64).sqrt() * (e[0] - truth))
                .collect();
            let m = moments(&errors);
            let v = exact.at(t_max).v[(0, 0)];
            report.rows.push(
                Row::exact(t_max, "replicate_variance", scheme.as_str(), v).with_empirical(m.variance, None, trials),
            );
            report.metric(&format!("{}_anchor_ratio", scheme.as_str()), m.variance / v);
            spread.push(m);
        }
        // one-sided test of Var(residual) <= Var(multinomial) on the log ratio
        let (a, b) = (spread[1], spread[0]);
        let log_ratio = (a.variance / b.variance).ln();
        let nf = trials as f64;
        let se = ((2.0 + a.excess_kurtosis) / nf + (2.0 + b.excess_kurtosis) / nf).max(0.0).sqrt();
        report.metric("empirical_log_variance_ratio", log_ratio);
        report.check(
            "residual_not_worse_95",
            log_ratio <= 1.645 * se,
            format!("log(var_r / var_m) = {log_ratio:.4}, one-sided 95% limit {:.4}", 1.645 * se),
        );
    }
    Ok(report)
}
