use nalgebra::{DMatrix, DVector};

use super::chain::{covariance, ChainLaws, StepLaw};
use crate::error::{Result, SmcError};
use crate::resampling::SelectionScheme;

/// Relative distance to the nearest integer below which a normalised weight
/// is treated as integral by `r(x) = x - floor(x)`.
pub const INTEGER_SNAP: f64 = 1e-12;

/// `x - floor(x)`, with values within [`INTEGER_SNAP`] of an integer mapped
/// to zero.
pub fn fractional_part(x: f64) -> f64 {
    let n = x.round();
    if (x - n).abs() <= INTEGER_SNAP * x.abs().max(1.0) {
        0.0
    } else {
        x - x.floor()
    }
}

/// `R_t(phi) = E[r(v) phi phi'] - E[r(v) phi] E[r(v) phi]' / E[r(v)]` under
/// the pair proposal law of step `t`; zero when every weight is integral.
pub fn residual_term(law: &StepLaw, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, n) = law.proposal.shape();
    let d = phi.ncols();
    let mut mass = DVector::zeros(n);
    for a in 0..p {
        for b in 0..n {
            mass[b] += law.proposal[(a, b)] * fractional_part(law.weight[(a, b)]);
        }
    }
    let er: f64 = mass.sum();
    if er == 0.0 {
        return DMatrix::zeros(d, d);
    }
    let m1 = DVector::from_iterator(d, (0..d).map(|c| (0..n).map(|b| mass[b] * phi[(b, c)]).sum::<f64>()));
    let mut out = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in r..d {
            let m2: f64 = (0..n).map(|b| mass[b] * phi[(b, r)] * phi[(b, c)]).sum();
            let v = m2 - m1[r] * m1[c] / er;
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    out
}

/// One row of a [`VarianceReport`].
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceStep {
    pub t: usize,
    /// Pre-weighting variance `V~_t(phi)`.
    pub tilde: DMatrix<f64>,
    /// Variance of the weighted estimator, `V_t(phi)` (or `V^r_t` under
    /// residual selection).
    pub v: DMatrix<f64>,
    /// Variance of the post-selection estimator, `V^_t(phi)`.
    pub v_hat: DMatrix<f64>,
    pub target_variance: DMatrix<f64>,
    /// `R_t(phi)`, whatever the scheme.
    pub residual_term: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceReport {
    pub scheme: SelectionScheme,
    pub steps: Vec<VarianceStep>,
}

impl VarianceReport {
    pub fn at(&self, t: usize) -> &VarianceStep {
        &self.steps[t]
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone().symmetric_eigen().eigenvalues.max()
}

struct Recursion<'a> {
    laws: &'a ChainLaws,
    scheme: SelectionScheme,
    /// Second-moment measures `m_t(b) = E[W_t^2 1{x_t = b}]`, used when
    /// there is no selection.
    sq: Vec<DVector<f64>>,
}

impl<'a> Recursion<'a> {
    fn new(laws: &'a ChainLaws, scheme: SelectionScheme) -> Result<Self> {
        if scheme == SelectionScheme::Systematic {
            return Err(SmcError::invalid("no asymptotic variance is available for systematic selection"));
        }
        let mut sq: Vec<DVector<f64>> = Vec::new();
        if scheme == SelectionScheme::None {
            for t in 0..=laws.horizon() {
                let law = laws.step(t);
                let (p, n) = law.kernel.shape();
                let before = if t == 0 { DVector::from_element(1, 1.0) } else { sq[t - 1].clone() };
                let mut m = DVector::zeros(n);
                for a in 0..p {
                    for b in 0..n {
                        let w = law.weight[(a, b)];
                        m[b] += before[a] * law.kernel[(a, b)] * w * w;
                    }
                }
                sq.push(m);
            }
        }
        Ok(Recursion { laws, scheme, sq })
    }

    /// `V~_t(psi)` for a pair function given as one `n x d` block per
    /// previous index.
    fn tilde(&self, t: usize, psi: &[DMatrix<f64>]) -> DMatrix<f64> {
        let law = self.laws.step(t);
        let (p, n) = law.kernel.shape();
        let d = psi[0].ncols();
        let mut mu = DMatrix::zeros(p, d);
        let mut cond = DMatrix::zeros(d, d);
        for a in 0..p {
            for b in 0..n {
                let k = law.kernel[(a, b)];
                for c in 0..d {
                    mu[(a, c)] += k * psi[a][(b, c)];
                }
            }
            let measure = if t == 0 {
                1.0
            } else if self.scheme == SelectionScheme::None {
                self.sq[t - 1][a]
            } else {
                law.prev[a]
            };
            if measure == 0.0 {
                continue;
            }
            for b in 0..n {
                let k = law.kernel[(a, b)];
                if k == 0.0 {
                    continue;
                }
                for r in 0..d {
                    let dr = psi[a][(b, r)] - mu[(a, r)];
                    for c in r..d {
                        let dc = psi[a][(b, c)] - mu[(a, c)];
                        cond[(r, c)] += measure * k * dr * dc;
                    }
                }
            }
        }
        for r in 0..d {
            for c in 0..r {
                cond[(r, c)] = cond[(c, r)];
            }
        }
        if t == 0 {
            cond
        } else {
            self.v_hat(t - 1, &mu) + cond
        }
    }

    /// `V_t(phi) = V~_t(v_t (phi - E_{pi_t} phi))`.
    fn v(&self, t: usize, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let law = self.laws.step(t);
        let centred = self.laws.centre(t, phi);
        let p = law.kernel.nrows();
        let psi: Vec<DMatrix<f64>> = (0..p)
            .map(|a| DMatrix::from_fn(centred.nrows(), centred.ncols(), |b, c| law.weight[(a, b)] * centred[(b, c)]))
            .collect();
        self.tilde(t, &psi)
    }

    fn selection_term(&self, t: usize, phi: &DMatrix<f64>) -> DMatrix<f64> {
        match self.scheme {
            SelectionScheme::Multinomial => self.laws.target_variance(t, phi),
            SelectionScheme::Residual => residual_term(self.laws.step(t), phi),
            _ => DMatrix::zeros(phi.ncols(), phi.ncols()),
        }
    }

    fn v_hat(&self, t: usize, phi: &DMatrix<f64>) -> DMatrix<f64> {
        self.v(t, phi) + self.selection_term(t, phi)
    }
}

fn check_function(laws: &ChainLaws, phi: &DMatrix<f64>) -> Result<()> {
    if phi.nrows() != laws.states() || phi.ncols() == 0 {
        return Err(SmcError::invalid(format!(
            "functional table must be {} x d with d > 0",
            laws.states()
        )));
    }
    if let Some(index) = phi.iter().position(|x| !x.is_finite()) {
        return Err(SmcError::NonFiniteFunctional { index: index % phi.nrows() });
    }
    Ok(())
}

/// Exact asymptotic variances by the forward recursion, for `t = 0..=t_max`.
///
/// `scheme` selects the selection term: multinomial adds `Var_{pi_t}`,
/// residual adds `R_t`, and `None` gives the selection-free (importance
/// sampling) recursion in which the conditional-variance term is taken
/// under the squared-weight measure.
pub fn recursion_variances(
    laws: &ChainLaws,
    phi: &DMatrix<f64>,
    t_max: usize,
    scheme: SelectionScheme,
) -> Result<VarianceReport> {
    check_function(laws, phi)?;
    if t_max > laws.horizon() {
        return Err(SmcError::invalid(format!("t = {t_max} beyond horizon {}", laws.horizon())));
    }
    let rec = Recursion::new(laws, scheme)?;
    let steps = crate::par::map_range(t_max + 1, |t| {
        let law = laws.step(t);
        let p = law.kernel.nrows();
        let lifted: Vec<DMatrix<f64>> = vec![phi.clone(); p];
        let v = rec.v(t, phi);
        let v_hat = &v + rec.selection_term(t, phi);
        VarianceStep {
            t,
            tilde: rec.tilde(t, &lifted),
            v,
            v_hat,
            target_variance: laws.target_variance(t, phi),
            residual_term: residual_term(law, phi),
        }
    });
    Ok(VarianceReport { scheme, steps })
}

/// `V_t(phi)` alone.
pub fn recursion_variance(
    laws: &ChainLaws,
    phi: &DMatrix<f64>,
    t: usize,
    scheme: SelectionScheme,
) -> Result<DMatrix<f64>> {
    check_function(laws, phi)?;
    if t > laws.horizon() {
        return Err(SmcError::invalid(format!("t = {t} beyond horizon {}", laws.horizon())));
    }
    Ok(Recursion::new(laws, scheme)?.v(t, phi))
}

/// `Var` under an arbitrary law, re-exported for callers that hold tables.
pub fn variance_under(p: &DVector<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    covariance(p, phi)
}
