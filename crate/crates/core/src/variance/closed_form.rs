use nalgebra::{DMatrix, DVector};

use super::chain::{second_moment, ChainLaws};
use super::recursion::residual_term;
use crate::error::{Result, SmcError};

/// The linear map `E_t(phi)(a) = sum_b k_t(a, b) v_t(a, b) phi(b)`, stored
/// as the table `k_t * v_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightOperator {
    pub t: usize,
    pub table: DMatrix<f64>,
}

impl WeightOperator {
    pub fn at(laws: &ChainLaws, t: usize) -> Self {
        let law = laws.step(t);
        WeightOperator {
            t,
            table: law.kernel.component_mul(&law.weight),
        }
    }

    pub fn apply(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        &self.table * phi
    }

    /// `|pi_{t-1}(E_t 1) - 1|`.
    pub fn normalization_error(&self, laws: &ChainLaws) -> f64 {
        let prev = &laws.step(self.t).prev;
        let ones = DMatrix::from_element(self.table.ncols(), 1, 1.0);
        let e1 = self.apply(&ones);
        (prev.iter().zip(e1.iter()).map(|(p, e)| p * e).sum::<f64>() - 1.0).abs()
    }
}

/// `E_{k+1:t}(phi_bar)` for `k = 0..=t`, where `phi_bar` is `phi` centred
/// under `pi_t`. Built right to left; entry `t` is `phi_bar` itself.
pub fn cascade(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![DMatrix::zeros(0, 0); t + 1];
    out[t] = laws.centre(t, phi);
    for k in (0..t).rev() {
        out[k] = WeightOperator::at(laws, k + 1).apply(&out[k + 1]);
    }
    out
}

fn check(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Result<()> {
    if t > laws.horizon() {
        return Err(SmcError::invalid(format!("t = {t} beyond horizon {}", laws.horizon())));
    }
    if phi.nrows() != laws.states() || phi.ncols() == 0 {
        return Err(SmcError::invalid(format!("functional table must be {} x d", laws.states())));
    }
    Ok(())
}

/// `sum_b sum_a pi~_k(a, b) v_k(a, b)^2` as a measure on the current state.
fn squared_weight_measure(laws: &ChainLaws, k: usize) -> DVector<f64> {
    let law = laws.step(k);
    let (p, n) = law.proposal.shape();
    DVector::from_iterator(
        n,
        (0..n).map(|b| (0..p).map(|a| law.proposal[(a, b)] * law.weight[(a, b)].powi(2)).sum::<f64>()),
    )
}

/// `V_t(phi) = sum_{k=0}^t E_{pi~_k}[v_k^2 E_{k+1:t}(phi_bar) E_{k+1:t}(phi_bar)']`.
pub fn closed_form_variance(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    check(laws, phi, t)?;
    let g = cascade(laws, phi, t);
    let terms = crate::par::map_range(t + 1, |k| second_moment(&squared_weight_measure(laws, k), &g[k]));
    let d = phi.ncols();
    Ok(terms.into_iter().fold(DMatrix::zeros(d, d), |acc, m| acc + m))
}

/// `V^r_t - V_t = sum_{k<t} [R_k(E_{k+1:t} phi_bar) - Var_{pi_k}(E_{k+1:t} phi_bar)]`.
pub fn residual_gap(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    check(laws, phi, t)?;
    let g = cascade(laws, phi, t);
    let d = phi.ncols();
    let terms = crate::par::map_range(t, |k| {
        residual_term(laws.step(k), &g[k]) - laws.target_variance(k, &g[k])
    });
    Ok(terms.into_iter().fold(DMatrix::zeros(d, d), |acc, m| acc + m))
}

/// Residual-selection variance `V^r_t` through the closed form plus the gap.
pub fn closed_form_residual_variance(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    Ok(closed_form_variance(laws, phi, t)? + residual_gap(laws, phi, t)?)
}

/// Importance sampling variance `E[W_t^2 phi_bar phi_bar']` with `W_t` the
/// product of the normalised weights along the path, computed from the
/// forward second-moment measure.
pub fn sis_variance(laws: &ChainLaws, phi: &DMatrix<f64>, t: usize) -> Result<DMatrix<f64>> {
    check(laws, phi, t)?;
    let mut m = DVector::from_element(1, 1.0);
    for s in 0..=t {
        let law = laws.step(s);
        let (p, n) = law.kernel.shape();
        let mut next = DVector::zeros(n);
        for a in 0..p {
            for b in 0..n {
                next[b] += m[a] * law.kernel[(a, b)] * law.weight[(a, b)].powi(2);
            }
        }
        m = next;
    }
    Ok(second_moment(&m, &laws.centre(t, phi)))
}
