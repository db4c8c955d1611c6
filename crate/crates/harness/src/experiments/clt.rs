use anyhow::Result;
use smc_core::engine::{run_replicates, EvalTimes, FilterConfig};
use smc_core::variance::recursion_variances;
use smc_core::Functional;

use super::{column, finite_functional, finite_model, horizon, variance_ci, variance_scheme};
use crate::config::{ExperimentConfig, FunctionalSpec};
use crate::report::{Report, Row};
use crate::stats::{anderson_darling, moments, AD_CRITICAL_1PCT, KURTOSIS_BAND, SKEW_BAND};

/// Accepted band for empirical / exact variance.
pub const RATIO_BAND: (f64, f64) = (0.9, 1.1);

/// `M` independent filters; the spread of `sqrt(H) (estimate - truth)`
/// against the exact asymptotic variance, before and after selection.
pub fn clt_check(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let hmm = finite_model(cfg, seed, "clt-check")?;
    let t = horizon(cfg, hmm.horizon())?;
    let n = hmm.states();
    let (name, table) = finite_functional(cfg, n, FunctionalSpec::Indicator { state: n - 1 })?;
    let phi = column(&table);
    let truth: f64 = hmm.filtering()?[t].iter().zip(&table).map(|(p, v)| p * v).sum();
    let laws = hmm.chain()?.solve()?;
    let h = cfg.filter.particles;
    let trials = cfg.filter.trials.unwrap_or(0);
    let model = hmm.filter()?;
    let funcs = [Functional::from_table(name.clone(), table.iter().map(|v| vec![*v]).collect())];

    let mut report = Report::new(cfg.experiment, seed);
    report.metric("t", t);
    report.metric("particles", h);
    report.metric("trials", trials);
    report.metric("functional", &name);
    report.metric("truth", truth);
    let root_h = (h as f64).sqrt();

    for &scheme in &cfg.filter.schemes {
        let scheme = variance_scheme(scheme)?;
        let exact = recursion_variances(&laws, &phi, t, scheme)?;
        let step = exact.at(t);
        let fc = FilterConfig::new(h, t, scheme, seed).with_eval_times(EvalTimes::Final);
        let summary = run_replicates(&model, &fc, &funcs, trials)?;
        let f = &summary.functionals[0];
        let post = f
            .final_unweighted
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("no selection at the final step"))?;
        let s = scheme.as_str();
        for (label, estimates, exact_v) in [
            ("weighted", &f.final_estimates, step.v[(0, 0)]),
            ("unweighted", post, step.v_hat[(0, 0)]),
        ] {
            let errors: Vec<f64> = estimates.iter().map(|e| root_h * (e[0] - truth)).collect();
            let m = moments(&errors);
            let ad = anderson_darling(&errors);
            let ci = variance_ci(m.variance, m.excess_kurtosis, trials);
            report.rows.push(Row::exact(t, label, s, exact_v).with_empirical(m.variance, Some(ci), trials));
            report.rows.push(
                Row::exact(t, format!("{label}_mean"), s, truth)
                    .with_empirical(truth + m.mean / root_h, None, trials),
            );
            report.rows.push(Row::exact(t, format!("{label}_skewness"), s, 0.0).with_empirical(m.skewness, None, trials));
            report.rows.push(
                Row::exact(t, format!("{label}_excess_kurtosis"), s, 0.0).with_empirical(m.excess_kurtosis, None, trials),
            );
            report
                .rows
                .push(Row::exact(t, format!("{label}_anderson_darling"), s, 0.0).without_exact().with_empirical(ad, None, trials));

            let key = format!("{s}_{label}");
            if exact_v > 0.0 {
                let ratio = m.variance / exact_v;
                report.metric(&format!("{key}_ratio"), ratio);
                report.check(
                    format!("{key}_variance_ratio"),
                    (RATIO_BAND.0..=RATIO_BAND.1).contains(&ratio),
                    format!("empirical {:.6} / exact {exact_v:.6} = {ratio:.4}", m.variance),
                );
                report.check(
                    format!("{key}_skewness"),
                    m.skewness.abs() < SKEW_BAND,
                    format!("{:.4}", m.skewness),
                );
                report.check(
                    format!("{key}_excess_kurtosis"),
                    m.excess_kurtosis.abs() < KURTOSIS_BAND,
                    format!("{:.4}", m.excess_kurtosis),
                );
            } else {
                report.check(
                    format!("{key}_zero_variance"),
                    m.variance == 0.0,
                    format!("exact {exact_v:e}, empirical {:e}", m.variance),
                );
            }
            report.metric(&format!("{key}_exact_variance"), exact_v);
            report.metric(&format!("{key}_empirical_variance"), m.variance);
            report.metric(&format!("{key}_skewness"), m.skewness);
            report.metric(&format!("{key}_excess_kurtosis"), m.excess_kurtosis);
            report.metric(&format!("{key}_anderson_darling"), ad);
            report.metric(&format!("{key}_anderson_darling_below_1pct_critical"), ad < AD_CRITICAL_1PCT);
        }
    }
    Ok(report)
}
