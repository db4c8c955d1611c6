use anyhow::Result;
use smc_core::engine::{run_filter, run_replicates, summarize, FilterConfig, Model, ReplicateSummary};
use smc_core::models::{xi_of, BetaBernoulliModel, LinearGaussianSsm};
use smc_core::{Functional, SelectionScheme};

use super::horizon;
use crate::config::{BuiltModel, ExperimentConfig, FunctionalSpec};
use crate::report::{Report, Row};

fn filter_config(cfg: &ExperimentConfig, steps: usize, seed: u64) -> FilterConfig {
    let scheme = cfg.filter.schemes[0];
    let fc = FilterConfig::new(cfg.filter.particles, steps, scheme, seed);
    if scheme == SelectionScheme::None {
        fc
    } else {
        fc.with_schedule(cfg.filter.schedule.clone())
    }
}

fn replicated<M: Model>(
    model: &M,
    fc: &FilterConfig,
    functionals: &[Functional<M::State>],
    k: usize,
) -> Result<ReplicateSummary> {
    if k >= 2 {
        Ok(run_replicates(model, fc, functionals, k)?)
    } else {
        Ok(summarize(functionals, vec![run_filter(model, fc, functionals)?]))
    }
}

/// Rows for every evaluated step; checks the final weighted estimate
/// against the oracle when replicates allow a standard error.
fn emit(
    report: &mut Report,
    summary: &ReplicateSummary,
    prefix: &str,
    scheme: SelectionScheme,
    oracle: &dyn Fn(usize, usize) -> Option<f64>,
) {
    let k = summary.k;
    for (fi, f) in summary.functionals.iter().enumerate() {
        for (label, trajectory) in [("weighted", &f.weighted_trajectory), ("unweighted", &f.unweighted_trajectory)] {
            for m in trajectory {
                let se = (m.variance[0] / k as f64).sqrt();
                let ci = (k >= 2).then(|| (m.mean[0] - 1.96 * se, m.mean[0] + 1.96 * se));
                let mut row = Row::exact(m.t, format!("{prefix}{label}:{}", f.name), scheme.as_str(), 0.0)
                    .with_empirical(m.mean[0], ci, k);
                row.exact_value = oracle(fi, m.t);
                report.rows.push(row);
            }
        }
        if let (Some(last), true) = (f.weighted_trajectory.last(), k >= 2) {
            if let Some(truth) = oracle(fi, last.t) {
                let se = (last.variance[0] / k as f64).sqrt();
                let err = (last.mean[0] - truth).abs();
                report.check(
                    format!("{prefix}{}_within_5_se", f.name),
                    err <= 5.0 * se || err <= 1e-12,
                    format!("|{} - {truth}| = {err:.3e}, se {se:.3e}", last.mean[0]),
                );
            }
        }
    }
}

fn real_functionals(specs: &[FunctionalSpec]) -> Result<Vec<(FunctionalSpec, Functional<f64>)>> {
    let specs = if specs.is_empty() { vec![FunctionalSpec::Identity] } else { specs.to_vec() };
    specs
        .into_iter()
        .map(|s| {
            let f = s.real()?;
            let c = s.constant();
            Ok((s.clone(), Functional::scalar(s.name(), move |x: &f64| f(*x, c))))
        })
        .collect()
}

fn gaussian_oracle(ssm: &LinearGaussianSsm, spec: &FunctionalSpec, t: usize) -> Option<f64> {
    let k = ssm.kalman_filter().ok()?;
    let m = k.get(t)?;
    match spec {
        FunctionalSpec::Identity => Some(m.mean),
        FunctionalSpec::Square => Some(m.mean * m.mean + m.variance),
        FunctionalSpec::Constant { value } => Some(*value),
        _ => None,
    }
}

fn beta_oracle(model: &BetaBernoulliModel, spec: &FunctionalSpec, t: usize) -> Option<f64> {
    let mean = model.posterior_mean(t).ok()?;
    match spec {
        FunctionalSpec::Identity => Some(mean),
        FunctionalSpec::Square => Some(mean * mean + model.posterior_variance(t).ok()?),
        FunctionalSpec::Constant { value } => Some(*value),
        _ => None,
    }
}

/// A single filter, or `k` replicates, with per-step estimates next to
/// the exact filtering expectation.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let mut report = Report::new(cfg.experiment, seed);
    let k = cfg.filter.replicates.unwrap_or(1);
    let scheme = cfg.filter.schemes[0];
    match cfg.model.build(cfg.filter.steps, seed)? {
        BuiltModel::Finite(hmm) => {
            let steps = horizon(cfg, hmm.horizon())?;
            let n = hmm.states();
            let specs = if cfg.functionals.is_empty() {
                vec![FunctionalSpec::Indicator { state: n - 1 }]
            } else {
                cfg.functionals.clone()
            };
            let tables: Vec<Vec<f64>> = specs.iter().map(|s| s.table(n)).collect::<Result<_>>()?;
            let funcs: Vec<Functional<usize>> = specs
                .iter()
                .zip(&tables)
                .map(|(s, tab)| Functional::from_table(s.name(), tab.iter().map(|v| vec![*v]).collect()))
                .collect();
            let laws = hmm.filtering()?;
            let summary = replicated(&hmm.filter()?, &filter_config(cfg, steps, seed), &funcs, k)?;
            emit(&mut report, &summary, "", scheme, &|fi, t| {
                Some(laws[t].iter().zip(&tables[fi]).map(|(p, v)| p * v).sum())
            });
        }
        BuiltModel::Gaussian(ssm) => {
            let steps = horizon(cfg, ssm.horizon())?;
            let (specs, funcs): (Vec<_>, Vec<_>) = real_functionals(&cfg.functionals)?.into_iter().unzip();
            let summary = replicated(&ssm, &filter_config(cfg, steps, seed), &funcs, k)?;
            emit(&mut report, &summary, "", scheme, &|fi, t| gaussian_oracle(&ssm, &specs[fi], t));
        }
        BuiltModel::Beta { model, truth } => {
            report.metric("truth", truth);
            let steps = horizon(cfg, model.horizon())?;
            let (specs, funcs): (Vec<_>, Vec<_>) = real_functionals(&cfg.functionals)?.into_iter().unzip();
            let filter = model.filter(cfg.filter.moves)?;
            let summary = replicated(&filter, &filter_config(cfg, steps, seed), &funcs, k)?;
            emit(&mut report, &summary, "", scheme, &|fi, t| beta_oracle(&model, &specs[fi], t));
        }
        BuiltModel::Pair(pair) => {
            let steps = horizon(cfg, pair.horizon())?;
            let n = pair.xi_states();
            let specs = if cfg.functionals.is_empty() {
                vec![FunctionalSpec::Indicator { state: 0 }]
            } else {
                cfg.functionals.clone()
            };
            let tables: Vec<Vec<f64>> = specs.iter().map(|s| s.table(n)).collect::<Result<_>>()?;
            let funcs: Vec<Functional<usize>> = specs
                .iter()
                .zip(&tables)
                .map(|(s, tab)| Functional::from_table(s.name(), tab.iter().map(|v| vec![*v]).collect()))
                .collect();
            let lifted: Vec<Functional<(usize, usize)>> = funcs.iter().map(|f| f.map_state(xi_of)).collect();
            let laws = pair.marginal_chain()?.solve()?;
            let oracle = |fi: usize, t: usize| Some(laws.target(t).iter().zip(&tables[fi]).map(|(p, v)| p * v).sum());
            let fc = filter_config(cfg, steps, seed);
            let joint = replicated(&pair.joint_filter()?, &fc, &lifted, k)?;
            let marginal = replicated(&pair.marginal_filter()?, &fc.clone().with_stream(fc.stream + k as u64), &funcs, k)?;
            emit(&mut report, &joint, "joint_", scheme, &oracle);
            emit(&mut report, &marginal, "marginal_", scheme, &oracle);
        }
    }
    report.metric("particles", cfg.filter.particles);
    report.metric("replicates", k);
    report.metric("scheme", scheme.as_str());
    Ok(report)
}
