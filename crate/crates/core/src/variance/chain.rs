use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SmcError};

/// A finite-state target sequence: initial proposal and weight, then one
/// proposal kernel and one weight table `w_t(x_{t-1}, x_t)` per step.
///
/// Weights are unnormalised; [`FiniteChain::solve`] rescales them so that
/// `E_{pi~_t} v_t = 1`, which is the convention the residual term needs.
#[derive(Clone, Debug, PartialEq)]
pub struct FiniteChain {
    states: usize,
    initial: DVector<f64>,
    initial_weight: DVector<f64>,
    steps: Vec<ChainStep>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainStep {
    pub kernel: DMatrix<f64>,
    pub weight: DMatrix<f64>,
}

/// Exact laws of one step, written uniformly over a "previous" index `a`.
/// At `t = 0` there is a single previous index with mass one and the kernel
/// row is `pi~_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLaw {
    pub t: usize,
    /// `pi_{t-1}` (or `[1]` at `t = 0`).
    pub prev: DVector<f64>,
    pub kernel: DMatrix<f64>,
    /// Normalised weight `v_t(a, b)` with `E_{pi~_t} v_t = 1`.
    pub weight: DMatrix<f64>,
    /// Pair law `pi~_t(a, b) = prev(a) kernel(a, b)`.
    pub proposal: DMatrix<f64>,
    /// Marginal target `pi_t(b)`.
    pub target: DVector<f64>,
    /// Normalising constant removed from the raw weights.
    pub normalizer: f64,
}

impl StepLaw {
    /// Pair target `pi_t(a, b) = pi~_t(a, b) v_t(a, b)`.
    pub fn pair_target(&self) -> DMatrix<f64> {
        self.proposal.component_mul(&self.weight)
    }

    /// Marginal of the proposal on the current state.
    pub fn proposal_marginal(&self) -> DVector<f64> {
        column_sums(&self.proposal)
    }
}

pub(crate) fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.ncols(), (0..m.ncols()).map(|b| crate::sum::sum(m.column(b).iter().copied())))
}

fn check_distribution(p: &DVector<f64>, what: &str) -> Result<()> {
    if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SmcError::model(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = crate::sum::sum(p.iter().copied());
    if (s - 1.0).abs() > 1e-12 {
        return Err(SmcError::model(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

pub(crate) fn check_stochastic(k: &DMatrix<f64>, what: &str) -> Result<()> {
    for a in 0..k.nrows() {
        let row = DVector::from_iterator(k.ncols(), k.row(a).iter().copied());
        check_distribution(&row, &format!("{what} row {a}"))?;
    }
    Ok(())
}

impl FiniteChain {
    pub fn new(initial: DVector<f64>, initial_weight: DVector<f64>, steps: Vec<ChainStep>) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(SmcError::model("empty state space"));
        }
        check_distribution(&initial, "initial proposal")?;
        if initial_weight.len() != n || initial_weight.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(SmcError::model("initial weight must be a finite nonnegative vector over the states"));
        }
        for (i, s) in steps.iter().enumerate() {
            if s.kernel.shape() != (n, n) || s.weight.shape() != (n, n) {
                return Err(SmcError::model(format!("step {} tables must be {n} x {n}", i + 1)));
            }
            check_stochastic(&s.kernel, &format!("kernel at step {}", i + 1))?;
            if s.weight.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(SmcError::model(format!("weight at step {} must be finite and nonnegative", i + 1)));
            }
        }
        Ok(FiniteChain {
            states: n,
            initial,
            initial_weight,
            steps,
        })
    }

    pub fn states(&self) -> usize {
        self.states
    }

    /// Last step index.
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Exact laws for `t = 0..=horizon`.
    pub fn solve(&self) -> Result<ChainLaws> {
        let n = self.states;
        let mut laws = Vec::with_capacity(self.steps.len() + 1);
        let first = normalize_step(
            0,
            DVector::from_element(1, 1.0),
            DMatrix::from_row_slice(1, n, self.initial.as_slice()),
            DMatrix::from_row_slice(1, n, self.initial_weight.as_slice()),
        )?;
        laws.push(first);
        for (i, s) in self.steps.iter().enumerate() {
            let prev = laws[i].target.clone();
            laws.push(normalize_step(i + 1, prev, s.kernel.clone(), s.weight.clone())?);
        }
        Ok(ChainLaws { laws })
    }
}

fn normalize_step(t: usize, prev: DVector<f64>, kernel: DMatrix<f64>, raw: DMatrix<f64>) -> Result<StepLaw> {
    let (p, n) = kernel.shape();
    let proposal = DMatrix::from_fn(p, n, |a, b| prev[a] * kernel[(a, b)]);
    let c = crate::sum::sum(proposal.iter().zip(raw.iter()).map(|(q, w)| q * w));
    if !(c > 0.0) || !c.is_finite() {
        return Err(SmcError::ImpossibleObservation { t });
    }
    let weight = raw / c;
    let target = column_sums(&proposal.component_mul(&weight));
    Ok(StepLaw {
        t,
        prev,
        kernel,
        weight,
        proposal,
        target,
        normalizer: c,
    })
}

/// Exact laws of every step of a [`FiniteChain`].
#[derive(Clone, Debug, PartialEq)]
pub struct ChainLaws {
    laws: Vec<StepLaw>,
}

impl ChainLaws {
    pub fn horizon(&self) -> usize {
        self.laws.len() - 1
    }

    pub fn step(&self, t: usize) -> &StepLaw {
        &self.laws[t]
    }

    pub fn target(&self, t: usize) -> &DVector<f64> {
        &self.laws[t].target
    }

    pub fn states(&self) -> usize {
        self.laws[0].target.len()
    }

    /// `E_{pi_t} phi` for a state table (`n x d`), as a `d` vector.
    pub fn mean(&self, t: usize, phi: &DMatrix<f64>) -> DVector<f64> {
        weighted_mean(&self.laws[t].target, phi)
    }

    /// `phi - E_{pi_t} phi`.
    pub fn centre(&self, t: usize, phi: &DMatrix<f64>) -> DMatrix<f64> {
        centre_under(&self.laws[t].target, phi)
    }

    /// `Var_{pi_t}(phi)`.
    pub fn target_variance(&self, t: usize, phi: &DMatrix<f64>) -> DMatrix<f64> {
        covariance(&self.laws[t].target, phi)
    }
}

pub(crate) fn weighted_mean(p: &DVector<f64>, phi: &DMatrix<f64>) -> DVector<f64> {
    let d = phi.ncols();
    DVector::from_iterator(
        d,
        (0..d).map(|c| crate::sum::sum(p.iter().zip(phi.column(c).iter()).map(|(w, x)| w * x))),
    )
}

pub(crate) fn centre_under(p: &DVector<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    let m = weighted_mean(p, phi);
    DMatrix::from_fn(phi.nrows(), phi.ncols(), |i, c| phi[(i, c)] - m[c])
}

/// Second moment `sum_i p_i x_i x_i'` of the rows of `x`.
pub(crate) fn second_moment(p: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = x.ncols();
    let mut out = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in r..d {
            let v = crate::sum::sum(
                p.iter()
                    .enumerate()
                    .map(|(i, w)| w * x[(i, r)] * x[(i, c)]),
            );
            out[(r, c)] = v;
            out[(c, r)] = v;
        }
    }
    out
}

pub(crate) fn covariance(p: &DVector<f64>, phi: &DMatrix<f64>) -> DMatrix<f64> {
    second_moment(p, &centre_under(p, phi))
}
