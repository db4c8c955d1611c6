use anyhow::Result;
use smc_core::engine::{run_marginal_pair, EvalTimes, FilterConfig};
use smc_core::models::xi_of;
use smc_core::variance::recursion_variances;
use smc_core::{Functional, SelectionScheme};

use super::{column, horizon, EXACT_TOL};
use crate::config::{config_error, BuiltModel, ExperimentConfig, FunctionalSpec};
use crate::report::{Report, Row};
use crate::stats::sample_variance;

/// Exact variances of the joint and the marginalised filter for both
/// selection schemes, plus paired replicate variances when `trials` is set.
pub fn rb_compare(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let pair = match cfg.model.build(cfg.filter.steps, seed)? {
        BuiltModel::Pair(p) => p,
        _ => return Err(config_error("rb-compare needs a marginal pair model")),
    };
    let t_max = horizon(cfg, pair.horizon())?;
    let spec = cfg.functionals.first().cloned().unwrap_or(FunctionalSpec::Indicator { state: 0 });
    let table = spec.table(pair.xi_states())?;
    let constant = table.iter().all(|v| *v == table[0]);
    let exact = pair.conditional_is_exact();
    let phi_m = column(&table);
    let phi_j = pair.lift_xi_table(&phi_m);
    let joint = pair.joint_chain()?.solve()?;
    let marginal = pair.marginal_chain()?.solve()?;

    let mut report = Report::new(cfg.experiment, seed);
    report.metric("functional", spec.name());
    report.metric("conditional_exact", exact);
    report.metric("cond_normalization_error", pair.cond_normalization_error());
    for scheme in [SelectionScheme::Multinomial, SelectionScheme::Residual] {
        let s = scheme.as_str();
        let vj = recursion_variances(&joint, &phi_j, t_max, scheme)?;
        let vm = recursion_variances(&marginal, &phi_m, t_max, scheme)?;
        let (mut dominated, mut min_gap, mut max_gap) = (true, f64::INFINITY, 0.0f64);
        let mut zero = true;
        for t in 0..=t_max {
            let (a, b) = (vj.at(t).v[(0, 0)], vm.at(t).v[(0, 0)]);
            dominated &= b <= a + EXACT_TOL;
            min_gap = min_gap.min(a - b);
            max_gap = max_gap.max((a - b).abs());
            zero &= a.abs() <= EXACT_TOL && b.abs() <= EXACT_TOL;
            report.rows.push(Row::exact(t, "joint", s, a));
            report.rows.push(Row::exact(t, "marginal", s, b));
        }
        report.check(
            format!("{s}_marginal_dominates"),
            dominated,
            format!("min V - V^m over t <= {t_max}: {min_gap:.3e}"),
        );
        if constant {
            report.check(format!("{s}_constant_zero"), zero, "constant functional has zero variance");
        } else if exact {
            report.check(
                format!("{s}_equal_when_exact"),
                max_gap <= EXACT_TOL,
                format!("max |V - V^m| = {max_gap:.3e}"),
            );
        } else {
            report.check(
                format!("{s}_strict_when_inexact"),
                min_gap > EXACT_TOL,
                format!("min V - V^m = {min_gap:.3e}"),
            );
        }
        report.metric(&format!("{s}_min_gap"), min_gap);
    }

    let trials = cfg.filter.trials.unwrap_or(0);
    if trials >= 2 {
        let h = cfg.filter.particles;
        let scheme = cfg.filter.schemes[0];
        let funcs = [Functional::from_table(spec.name(), table.iter().map(|v| vec![*v]).collect())];
        let jf = pair.joint_filter()?;
        let mf = pair.marginal_filter()?;
        let fc = FilterConfig::new(h, t_max, scheme, seed).with_eval_times(EvalTimes::Final);
        let runs = smc_core::par::try_map_range(trials, |i| {
            run_marginal_pair(&jf, &mf, xi_of, &fc.clone().with_stream(i as u64), &funcs)
                .map(|(j, m)| (j.last().weighted[0][0], m.last().weighted[0][0]))
        })?;
        let root_h = (h as f64).sqrt();
        let je: Vec<f64> = runs.iter().map(|r| root_h * r.0).collect();
        let me: Vec<f64> = runs.iter().map(|r| root_h * r.1).collect();
        let exact_scheme = if scheme == SelectionScheme::Residual { scheme } else { SelectionScheme::Multinomial };
        let vj = recursion_variances(&joint, &phi_j, t_max, exact_scheme)?.at(t_max).v[(0, 0)];
        let vm = recursion_variances(&marginal, &phi_m, t_max, exact_scheme)?.at(t_max).v[(0, 0)];
        let (sj, sm) = (sample_variance(&je), sample_variance(&me));
        report.rows.push(Row::exact(t_max, "joint_replicates", scheme.as_str(), vj).with_empirical(sj, None, trials));
        report.rows.push(Row::exact(t_max, "marginal_replicates", scheme.as_str(), vm).with_empirical(sm, None, trials));
        report.metric("empirical_joint_variance", sj);
        report.metric("empirical_marginal_variance", sm);
    }
    Ok(report)
}
