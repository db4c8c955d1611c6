use anyhow::Result;
use smc_core::models::BetaBernoulliModel;
use smc_core::variance::fixed_param_variances;
use smc_core::RngStream;

use crate::config::{config_error, BuiltModel, ExperimentConfig, FunctionalSpec, ModelConfig};
use crate::report::{Report, Row};
use crate::stats::{fit_loglog_slope, log_grid};

/// Allowed distance between fitted and predicted slopes.
pub const SLOPE_TOL: f64 = 0.1;

/// Data sets tried before giving up on a non-integral weight sequence.
const MAX_DATA_SETS: u64 = 32;

/// Log-log slopes of the exact fixed-parameter variances (parameter
/// dimension 1): importance sampling decays like `t^{-1/2}`, both
/// selection schemes are predicted to grow like `t^{1/2}`.
pub fn rate_fit(cfg: &ExperimentConfig, seed: u64) -> Result<Report> {
    let grid_spec = cfg.filter.grid.as_ref().ok_or_else(|| config_error("rate-fit needs filter.grid"))?;
    let grid = log_grid(grid_spec.t_min, grid_spec.t_max, grid_spec.points);
    let t_max = *grid.last().unwrap();
    let (mut model, truth) = match cfg.model.build(Some(t_max), seed)? {
        BuiltModel::Beta { model, truth } => (model, truth),
        _ => return Err(config_error("rate-fit needs the beta_bernoulli model")),
    };
    if model.horizon() < t_max {
        return Err(config_error(format!(
            "{} observations for a grid reaching t = {t_max}",
            model.horizon()
        )));
    }
    let given = matches!(cfg.model, ModelConfig::BetaBernoulli { observations: Some(_), .. });
    let mut data_index = 0;
    while let Err(e) = model.check_non_integral(truth, t_max) {
        data_index += 1;
        if given || data_index >= MAX_DATA_SETS {
            return Err(anyhow::anyhow!("weight sequence not admissible: {e}"));
        }
        let ys = BetaBernoulliModel::simulate(truth, t_max, &mut RngStream::data(seed, data_index));
        model = model.with_observations(ys);
    }
    let spec = cfg.functionals.first().cloned().unwrap_or(FunctionalSpec::Identity);
    let f = spec.real()?;
    let c = spec.constant();
    let phi = move |x: f64| f(x, c);

    let mut report = Report::new(cfg.experiment, seed);
    report.metric("truth", truth);
    report.metric("data_index", data_index);
    report.metric("functional", spec.name());
    report.metric("grid", &grid);
    let mut curves = [Vec::new(), Vec::new(), Vec::new()];
    for &t in &grid {
        let v = fixed_param_variances(&model, &phi, t)?;
        for (curve, (label, value)) in curves
            .iter_mut()
            .zip([("none", v.sis), ("multinomial", v.multinomial), ("residual", v.residual)])
        {
            curve.push(value);
            report.rows.push(Row::exact(t, "variance", label, value));
        }
    }
    let x: Vec<f64> = grid.iter().map(|&t| t as f64).collect();
    for (curve, (label, expected)) in curves.iter().zip([("none", -0.5), ("multinomial", 0.5), ("residual", 0.5)]) {
        let fit = fit_loglog_slope(&x, curve)?;
        report.rows.push(
            Row::exact(0, "loglog_slope", label, expected)
                .with_empirical(fit.slope, Some((fit.slope - fit.slope_half_width, fit.slope + fit.slope_half_width)), grid.len())
                .untimed(),
        );
        report.check(
            format!("slope_{label}"),
            (fit.slope - expected).abs() <= SLOPE_TOL,
            format!("fitted {:.4} (95% +/- {:.4}), predicted {expected} +/- {SLOPE_TOL}", fit.slope, fit.slope_half_width),
        );
        report.metric(&format!("slope_{label}"), fit);
    }
    Ok(report)
}
