use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{Model, StateSpace};
use crate::error::{Result, SmcError};
use crate::rng::RngStream;
use crate::variance::{ChainStep, FiniteChain};

/// A target on `(xi, lambda)` whose `lambda` conditional is known, so the
/// filter can run either on the pair or on `xi` alone.
///
/// The joint kernel moves `xi` with `xi_kernel` and redraws `lambda` from
/// `cond_proposal(. | xi')`; the joint weight is
/// `v^m_t(xi) * v^c(lambda | xi)` with `v^c = cond_target / cond_proposal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalPairModel {
    pub xi_initial: Vec<f64>,
    pub xi_kernel: Vec<Vec<f64>>,
    /// `cond_proposal[xi][lambda]`.
    pub cond_proposal: Vec<Vec<f64>>,
    /// `cond_target[xi][lambda]`.
    pub cond_target: Vec<Vec<f64>>,
    /// `marginal_weights[t][xi]` for `t = 0..=T`.
    pub marginal_weights: Vec<Vec<f64>>,
}

fn stochastic(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<()> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols || r.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(SmcError::model(format!("{what} row {i} must have {cols} nonnegative entries")));
        }
        let s: f64 = r.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(SmcError::model(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

impl MarginalPairModel {
    pub fn validate(&self) -> Result<()> {
        let a = self.xi_initial.len();
        if a == 0 || self.cond_proposal.len() != a || self.cond_target.len() != a || self.xi_kernel.len() != a {
            return Err(SmcError::model("xi tables must share one non-empty state count"));
        }
        stochastic(std::slice::from_ref(&self.xi_initial), a, "xi initial")?;
        stochastic(&self.xi_kernel, a, "xi kernel")?;
        let l = self.cond_proposal[0].len();
        if l == 0 {
            return Err(SmcError::model("empty lambda state set"));
        }
        stochastic(&self.cond_proposal, l, "conditional proposal")?;
        stochastic(&self.cond_target, l, "conditional target")?;
        for xi in 0..a {
            for lam in 0..l {
                if self.cond_proposal[xi][lam] == 0.0 && self.cond_target[xi][lam] > 0.0 {
                    return Err(SmcError::model(format!(
                        "conditional proposal misses lambda = {lam} at xi = {xi}"
                    )));
                }
            }
        }
        if self.marginal_weights.is_empty() {
            return Err(SmcError::model("marginal weights needed for at least t = 0"));
        }
        for (t, w) in self.marginal_weights.iter().enumerate() {
            if w.len() != a || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(SmcError::model(format!("marginal weight at t = {t} must have {a} nonnegative entries")));
            }
        }
        Ok(())
    }

    pub fn xi_states(&self) -> usize {
        self.xi_initial.len()
    }

    pub fn lambda_states(&self) -> usize {
        self.cond_proposal[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.marginal_weights.len() - 1
    }

    /// `v^c(lambda | xi)`.
    pub fn cond_weight(&self, xi: usize, lambda: usize) -> f64 {
        let q = self.cond_proposal[xi][lambda];
        if q > 0.0 {
            self.cond_target[xi][lambda] / q
        } else {
            0.0
        }
    }

    /// `max_xi |sum_lambda pi~^c v^c - 1|`.
    pub fn cond_normalization_error(&self) -> f64 {
        (0..self.xi_states())
            .map(|xi| {
                let s: f64 = (0..self.lambda_states())
                    .map(|l| self.cond_proposal[xi][l] * self.cond_weight(xi, l))
                    .sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Whether the conditional proposal is exact, which is when the two
    /// filters have equal variances.
    pub fn conditional_is_exact(&self) -> bool {
        self.cond_proposal == self.cond_target
    }

    /// Joint chain on `(xi, lambda)`, index `xi * L + lambda`.
    pub fn joint_chain(&self) -> Result<FiniteChain> {
        self.validate()?;
        let (a, l) = (self.xi_states(), self.lambda_states());
        let n = a * l;
        let init = DVector::from_fn(n, |i, _| self.xi_initial[i / l] * self.cond_proposal[i / l][i % l]);
        let w0 = DVector::from_fn(n, |i, _| self.marginal_weights[0][i / l] * self.cond_weight(i / l, i % l));
        let kernel = DMatrix::from_fn(n, n, |i, j| self.xi_kernel[i / l][j / l] * self.cond_proposal[j / l][j % l]);
        let steps = (1..=self.horizon())
            .map(|t| ChainStep {
                kernel: kernel.clone(),
                weight: DMatrix::from_fn(n, n, |_, j| {
                    self.marginal_weights[t][j / l] * self.cond_weight(j / l, j % l)
                }),
            })
            .collect();
        FiniteChain::new(init, w0, steps)
    }

    /// Chain on `xi` alone.
    pub fn marginal_chain(&self) -> Result<FiniteChain> {
        self.validate()?;
        let a = self.xi_states();
        let kernel = DMatrix::from_fn(a, a, |i, j| self.xi_kernel[i][j]);
        let steps = (1..=self.horizon())
            .map(|t| ChainStep {
                kernel: kernel.clone(),
                weight: DMatrix::from_fn(a, a, |_, j| self.marginal_weights[t][j]),
            })
            .collect();
        FiniteChain::new(
            DVector::from_vec(self.xi_initial.clone()),
            DVector::from_vec(self.marginal_weights[0].clone()),
            steps,
        )
    }

    /// Lift a table on `xi` to the joint state space.
    pub fn lift_xi_table(&self, table: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.lambda_states();
        DMatrix::from_fn(self.xi_states() * l, table.ncols(), |i, c| table[(i / l, c)])
    }

    /// Three `xi` states, two `lambda` states, `T` steps. With `exact` the
    /// conditional proposal equals the conditional target.
    pub fn example(steps: usize, exact: bool) -> Self {
        let cond_target = vec![vec![0.7, 0.3], vec![0.4, 0.6], vec![0.1, 0.9]];
        let cond_proposal = if exact {
            cond_target.clone()
        } else {
            vec![vec![0.5, 0.5]; 3]
        };
        let marginal_weights = (0..=steps)
            .map(|t| match t % 3 {
                0 => vec![1.0, 0.6, 0.3],
                1 => vec![0.4, 1.0, 0.5],
                _ => vec![0.2, 0.7, 1.2],
            })
            .collect();
        MarginalPairModel {
            xi_initial: vec![0.5, 0.3, 0.2],
            xi_kernel: vec![vec![0.7, 0.2, 0.1], vec![0.25, 0.5, 0.25], vec![0.1, 0.3, 0.6]],
            cond_proposal,
            cond_target,
            marginal_weights,
        }
    }

    pub fn joint_filter(&self) -> Result<JointPairFilter<'_>> {
        self.validate()?;
        Ok(JointPairFilter { model: self })
    }

    pub fn marginal_filter(&self) -> Result<MarginalFilter<'_>> {
        self.validate()?;
        Ok(MarginalFilter { model: self })
    }
}

/// Projection of a joint state on `xi`.
pub fn xi_of(state: &(usize, usize)) -> &usize {
    &state.0
}

pub struct JointPairFilter<'a> {
    model: &'a MarginalPairModel,
}

impl Model for JointPairFilter<'_> {
    type State = (usize, usize);
    type Tuning = ();

    fn horizon(&self) -> usize {
        self.model.horizon()
    }

    fn sample_initial(&self, rng: &mut RngStream) -> (usize, usize) {
        let xi = rng.categorical(&self.model.xi_initial);
        (xi, rng.categorical(&self.model.cond_proposal[xi]))
    }

    fn log_initial_weight(&self, x: &(usize, usize)) -> f64 {
        (self.model.marginal_weights[0][x.0] * self.model.cond_weight(x.0, x.1)).ln()
    }

    fn tune(&self, _: usize, _: &[(usize, usize)]) {}

    fn mutate(&self, _: usize, parent: &(usize, usize), _: &(), rng: &mut RngStream) -> (usize, usize) {
        let xi = rng.categorical(&self.model.xi_kernel[parent.0]);
        (xi, rng.categorical(&self.model.cond_proposal[xi]))
    }

    fn log_weight(&self, t: usize, _: &(usize, usize), x: &(usize, usize)) -> f64 {
        (self.model.marginal_weights[t][x.0] * self.model.cond_weight(x.0, x.1)).ln()
    }

    fn state_space(&self) -> StateSpace {
        StateSpace::ProductGrowing
    }
}

pub struct MarginalFilter<'a> {
    model: &'a MarginalPairModel,
}

impl Model for MarginalFilter<'_> {
    type State = usize;
    type Tuning = ();

    fn horizon(&self) -> usize {
        self.model.horizon()
    }

    fn sample_initial(&self, rng: &mut RngStream) -> usize {
        rng.categorical(&self.model.xi_initial)
    }

    fn log_initial_weight(&self, x: &usize) -> f64 {
        self.model.marginal_weights[0][*x].ln()
    }

    fn tune(&self, _: usize, _: &[usize]) {}

    fn mutate(&self, _: usize, parent: &usize, _: &(), rng: &mut RngStream) -> usize {
        rng.categorical(&self.model.xi_kernel[*parent])
    }

    fn log_weight(&self, t: usize, _: &usize, x: &usize) -> f64 {
        self.model.marginal_weights[t][*x].ln()
    }
}
