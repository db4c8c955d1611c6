use nalgebra::DMatrix;

use super::chain::check_stochastic;
use crate::error::{Result, SmcError};

/// `1/2 max_{a, a'} || k(a, .) - k(a', .) ||_1` for a row-stochastic table.
pub fn dobrushin_coefficient(kernel: &DMatrix<f64>) -> Result<f64> {
    if kernel.nrows() == 0 {
        return Err(SmcError::invalid("empty kernel"));
    }
    check_stochastic(kernel, "kernel").map_err(|e| match e {
        SmcError::InvalidModel(m) => SmcError::InvalidArgument(m),
        other => other,
    })?;
    let mut best: f64 = 0.0;
    for a in 0..kernel.nrows() {
        for b in (a + 1)..kernel.nrows() {
            let l1: f64 = kernel.row(a).iter().zip(kernel.row(b).iter()).map(|(x, y)| (x - y).abs()).sum();
            best = best.max(0.5 * l1);
        }
    }
    Ok(best.min(1.0))
}

/// Constants of the mixing condition: kernel ratios bounded by `C`,
/// likelihood bounded in `[f_lo, f_hi]`, functional oscillation `delta_phi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilityParams {
    pub c: f64,
    pub f_lo: f64,
    pub f_hi: f64,
    pub delta_phi: f64,
}

impl StabilityParams {
    pub fn new(c: f64, f_lo: f64, f_hi: f64, delta_phi: f64) -> Result<Self> {
        if !(c >= 1.0) || !c.is_finite() {
            return Err(SmcError::invalid(format!("kernel ratio bound C = {c} must be finite and >= 1")));
        }
        if !(f_lo > 0.0) || !(f_hi >= f_lo) || !f_hi.is_finite() {
            return Err(SmcError::invalid(format!("need 0 < f_lo <= f_hi < inf, got [{f_lo}, {f_hi}]")));
        }
        if delta_phi.is_nan() || delta_phi < 0.0 {
            return Err(SmcError::invalid("oscillation of the functional must be nonnegative"));
        }
        Ok(StabilityParams { c, f_lo, f_hi, delta_phi })
    }

    pub fn c_f(&self) -> f64 {
        self.f_hi / self.f_lo - 1.0
    }

    pub fn rho(&self) -> f64 {
        1.0 - 1.0 / self.c
    }

    pub fn rho2(&self) -> f64 {
        1.0 - 1.0 / (self.c * self.c)
    }

    fn prefactor(&self) -> Result<f64> {
        if !self.delta_phi.is_finite() {
            return Err(SmcError::UnboundedFunctional);
        }
        let ratio = self.f_hi / self.f_lo;
        Ok(self.c.powi(4) * ratio * ratio * (2.0 * self.rho() * self.c_f() / (1.0 - self.rho2())).exp()
            * self.delta_phi
            * self.delta_phi)
    }
}

/// Upper bound on `V_t(phi)`:
/// `sum_{k=0}^t C^4 (f_hi/f_lo)^2 exp{2 rho C_f / (1 - rho2)} rho2^{2(t-k)} (delta phi)^2`.
pub fn stability_bound(params: &StabilityParams, t: usize) -> Result<f64> {
    let pre = params.prefactor()?;
    let r2 = params.rho2() * params.rho2();
    // powi(0) = 1 also covers rho2 = 0
    let series: f64 = (0..=t).map(|j| r2.powi(j as i32)).sum();
    Ok(pre * series)
}

/// Limit of [`stability_bound`] as `t -> inf`.
pub fn stability_limit(params: &StabilityParams) -> Result<f64> {
    let r2 = params.rho2() * params.rho2();
    Ok(params.prefactor()? / (1.0 - r2))
}

/// Bound on the oscillation of `E_{k+1:t}(phi_bar)` after `steps = t - k`
/// operators: `prod_{i=1}^{steps} (1 + rho rho2^{i-1} C_f) rho2^{steps} delta_phi`.
pub fn operator_oscillation_bound(params: &StabilityParams, steps: usize) -> f64 {
    let (rho, rho2, cf) = (params.rho(), params.rho2(), params.c_f());
    let prod: f64 = (1..=steps).map(|i| 1.0 + rho * rho2.powi(i as i32 - 1) * cf).product();
    prod * rho2.powi(steps as i32) * params.delta_phi
}

/// `max - min` of a table.
pub fn oscillation(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    max - min
}

/// Outcome of the variation product inequality check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VariationCheck {
    /// `Delta(phi psi)`.
    pub lhs: f64,
    /// `sup phi * Delta(psi)`.
    pub rhs: f64,
    /// `phi >= 0`, `sup psi >= 0`, `inf psi <= 0`.
    pub hypotheses_hold: bool,
    /// `Some(lhs <= rhs)` when the hypotheses hold.
    pub holds: Option<bool>,
}

/// Check `Delta(phi psi) <= sup phi Delta(psi)` on finite tables.
pub fn variation_product_check(phi: &[f64], psi: &[f64]) -> Result<VariationCheck> {
    if phi.len() != psi.len() || phi.is_empty() {
        return Err(SmcError::invalid("tables must be non-empty and of equal length"));
    }
    if phi.iter().chain(psi).any(|x| !x.is_finite()) {
        return Err(SmcError::UnboundedFunctional);
    }
    let product: Vec<f64> = phi.iter().zip(psi).map(|(a, b)| a * b).collect();
    let lhs = oscillation(&product);
    let sup_phi = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rhs = sup_phi * oscillation(psi);
    let sup_psi = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf_psi = psi.iter().copied().fold(f64::INFINITY, f64::min);
    let hypotheses_hold = phi.iter().all(|x| *x >= 0.0) && sup_psi >= 0.0 && inf_psi <= 0.0;
    Ok(VariationCheck {
        lhs,
        rhs,
        hypotheses_hold,
        holds: hypotheses_hold.then_some(lhs <= rhs),
    })
}
