use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::engine::{Model, StateSpace};
use crate::error::{Result, SmcError};
use crate::rng::RngStream;
use crate::variance::{ChainStep, FiniteChain, StabilityParams};

/// Hidden Markov model on `{0, .., m-1}` with a finite observation
/// alphabet.
///
/// `x_0` is drawn from `initial`; observations `y_1, .., y_T` follow
/// `x_t ~ g(x_{t-1}, .)` and `y_t ~ f(x_t, .)`. Optionally `x_0` is observed
/// too, through `initial_observation`. Particles move with the proposal `q`
/// (default `g`) and start from `initial_proposal` (default `initial`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteHmm {
    pub initial: Vec<f64>,
    pub transition: Vec<Vec<f64>>,
    /// `emission[x][y] = f(y | x)`.
    pub emission: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposal: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_proposal: Option<Vec<f64>>,
    #[serde(default)]
    pub observations: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_observation: Option<usize>,
}

/// Verified mixing constants of a finite HMM.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixingConstants {
    pub c: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

/// Filtering law at step `t` and the conditionals `pi_t(x_t | x_k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardResult {
    pub filtering: DVector<f64>,
    /// `conditionals[k][(x_k, x_t)]` for `k = 0..t`.
    pub conditionals: Vec<DMatrix<f64>>,
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn check_row(row: &[f64], n: usize, what: &str) -> Result<()> {
    if row.len() != n {
        return Err(SmcError::model(format!("{what} has length {}, expected {n}", row.len())));
    }
    if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(SmcError::model(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(SmcError::model(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn normalise(v: &mut DVector<f64>) -> f64 {
    let s = v.sum();
    if s > 0.0 {
        *v /= s;
    }
    s
}

impl FiniteHmm {
    pub fn new(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
        observations: Vec<usize>,
    ) -> Result<Self> {
        let m = FiniteHmm {
            initial,
            transition,
            emission,
            proposal: None,
            initial_proposal: None,
            observations,
            initial_observation: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_proposal(mut self, proposal: Vec<Vec<f64>>) -> Result<Self> {
        self.proposal = Some(proposal);
        self.validate()?;
        Ok(self)
    }

    pub fn with_initial_proposal(mut self, initial_proposal: Vec<f64>) -> Result<Self> {
        self.initial_proposal = Some(initial_proposal);
        self.validate()?;
        Ok(self)
    }

    pub fn with_observations(&self, observations: Vec<usize>) -> Result<Self> {
        let m = FiniteHmm {
            observations,
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    /// The same model with the first observation attached to `x_0`, so
    /// that the first weights already carry data.
    pub fn observing_first_state(&self) -> Result<Self> {
        if self.initial_observation.is_some() || self.observations.is_empty() {
            return Err(SmcError::invalid("needs an unobserved x_0 and at least one observation"));
        }
        let m = FiniteHmm {
            initial_observation: Some(self.observations[0]),
            observations: self.observations[1..].to_vec(),
            ..self.clone()
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.initial.len();
        if n == 0 {
            return Err(SmcError::model("the state space is empty"));
        }
        check_row(&self.initial, n, "initial distribution")?;
        if self.transition.len() != n || self.emission.len() != n {
            return Err(SmcError::model(format!("transition and emission need {n} rows")));
        }
        for (i, row) in self.transition.iter().enumerate() {
            check_row(row, n, &format!("transition row {i}"))?;
        }
        let symbols = self.emission[0].len();
        if symbols == 0 {
            return Err(SmcError::model("the observation alphabet is empty"));
        }
        for (i, row) in self.emission.iter().enumerate() {
            if row.len() != symbols || row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(SmcError::model(format!(
                    "emission row {i} must have {symbols} nonnegative entries"
                )));
            }
        }
        if let Some(q) = &self.proposal {
            if q.len() != n {
                return Err(SmcError::model(format!("proposal needs {n} rows")));
            }
            for (i, row) in q.iter().enumerate() {
                check_row(row, n, &format!("proposal row {i}"))?;
                for (j, (qq, gg)) in row.iter().zip(&self.transition[i]).enumerate() {
                    if *qq == 0.0 && *gg > 0.0 {
                        return Err(SmcError::model(format!(
                            "proposal q({j} | {i}) = 0 where the transition is positive"
                        )));
                    }
                }
            }
        }
        if let Some(p) = &self.initial_proposal {
            check_row(p, n, "initial proposal")?;
            if p.iter().zip(&self.initial).any(|(q, g)| *q == 0.0 && *g > 0.0) {
                return Err(SmcError::model("initial proposal misses part of the initial support"));
            }
        }
        if let Some(y) = self.observations.iter().chain(&self.initial_observation).find(|y| **y >= symbols) {
            return Err(SmcError::model(format!("observation {y} outside the alphabet of size {symbols}")));
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn symbols(&self) -> usize {
        self.emission[0].len()
    }

    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.transition)
    }

    pub fn proposal_matrix(&self) -> DMatrix<f64> {
        to_matrix(self.proposal.as_ref().unwrap_or(&self.transition))
    }

    pub fn initial_proposal_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.initial_proposal.clone().unwrap_or_else(|| self.initial.clone()))
    }

    fn likelihood(&self, t: usize) -> DVector<f64> {
        let y = self.observations[t - 1];
        DVector::from_iterator(self.states(), self.emission.iter().map(|row| row[y]))
    }

    fn initial_likelihood(&self) -> DVector<f64> {
        match self.initial_observation {
            Some(y) => DVector::from_iterator(self.states(), self.emission.iter().map(|row| row[y])),
            None => DVector::from_element(self.states(), 1.0),
        }
    }

    /// Filtering laws `pi_0, .., pi_T`.
    pub fn filtering(&self) -> Result<Vec<DVector<f64>>> {
        let g = self.transition_matrix();
        let mut first = DVector::from_vec(self.initial.clone()).component_mul(&self.initial_likelihood());
        if !(normalise(&mut first) > 0.0) {
            return Err(SmcError::ImpossibleObservation { t: 0 });
        }
        let mut out = vec![first];
        for t in 1..=self.horizon() {
            let pred = g.tr_mul(&out[t - 1]);
            let mut post = pred.component_mul(&self.likelihood(t));
            if !(normalise(&mut post) > 0.0) {
                return Err(SmcError::ImpossibleObservation { t });
            }
            out.push(post);
        }
        Ok(out)
    }

    /// `pi_t` and every conditional `pi_t(x_t | x_k)`, `k < t`, each
    /// obtained by a forward pass from a point mass at `x_k`. Rows whose
    /// conditioning state cannot produce the observations are zero.
    pub fn forward(&self, t: usize) -> Result<ForwardResult> {
        if t > self.horizon() {
            return Err(SmcError::invalid(format!("t = {t} beyond horizon {}", self.horizon())));
        }
        let filtering = self.filtering()?.swap_remove(t);
        let n = self.states();
        let g = self.transition_matrix();
        let mut conditionals = Vec::with_capacity(t);
        for k in 0..t {
            let mut table = DMatrix::zeros(n, n);
            for start in 0..n {
                let mut p = DVector::zeros(n);
                p[start] = 1.0;
                let mut alive = true;
                for s in (k + 1)..=t {
                    p = g.tr_mul(&p).component_mul(&self.likelihood(s));
                    if !(normalise(&mut p) > 0.0) {
                        alive = false;
                        break;
                    }
                }
                if alive {
                    table.set_row(start, &p.transpose());
                }
            }
            conditionals.push(table);
        }
        Ok(ForwardResult {
            filtering,
            conditionals,
        })
    }

    /// Backward likelihoods `beta_k(x) = p(y_{k+1:t} | x_k = x)`, rescaled
    /// per step, for `k = 0..=t`.
    fn backward(&self, t: usize) -> Vec<DVector<f64>> {
        let n = self.states();
        let g = self.transition_matrix();
        let mut out = vec![DVector::from_element(n, 1.0); t + 1];
        for k in (0..t).rev() {
            let mut b = &g * out[k + 1].component_mul(&self.likelihood(k + 1));
            let m = b.max();
            if m > 0.0 {
                b /= m;
            }
            out[k] = b;
        }
        out
    }

    /// `pi_t(x_{k+1} | x_k)` for `k < t`, rows indexed by `x_k`.
    pub fn smoothing_transition(&self, t: usize, k: usize) -> Result<DMatrix<f64>> {
        if k >= t || t > self.horizon() {
            return Err(SmcError::invalid(format!("need k < t <= T, got k = {k}, t = {t}")));
        }
        let beta = self.backward(t);
        let g = self.transition_matrix();
        let lik = self.likelihood(k + 1);
        let n = self.states();
        let mut out = DMatrix::zeros(n, n);
        for a in 0..n {
            let mut row = DVector::from_fn(n, |b, _| g[(a, b)] * lik[b] * beta[k + 1][b]);
            if normalise(&mut row) > 0.0 {
                out.set_row(a, &row.transpose());
            }
        }
        Ok(out)
    }

    /// Exhaustively computed `C = max(g(x|x')/g(x|x''), q(x|x')/q(x|x''))`
    /// and the emission range `[f_lo, f_hi]` over all states and symbols.
    pub fn mixing_constants(&self) -> Result<MixingConstants> {
        let n = self.states();
        let mut c: f64 = 1.0;
        for (name, k) in [("g", self.transition_matrix()), ("q", self.proposal_matrix())] {
            for x in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let (num, den) = (k[(a, x)], k[(b, x)]);
                        if den == 0.0 && num > 0.0 {
                            return Err(SmcError::model(format!(
                                "ratio {name}({x}|{a}) / {name}({x}|{b}) is unbounded"
                            )));
                        }
                        if den > 0.0 {
                            c = c.max(num / den);
                        }
                    }
                }
            }
        }
        let all = self.emission.iter().flatten().copied();
        let f_lo = all.clone().fold(f64::INFINITY, f64::min);
        let f_hi = all.fold(0.0, f64::max);
        if !(f_lo > 0.0) {
            return Err(SmcError::model("emission lower bound f_lo is zero"));
        }
        Ok(MixingConstants { c, f_lo, f_hi })
    }

    pub fn stability_params(&self, delta_phi: f64) -> Result<StabilityParams> {
        let k = self.mixing_constants()?;
        StabilityParams::new(k.c, k.f_lo, k.f_hi, delta_phi)
    }

    fn step_weight(&self, t: usize) -> DMatrix<f64> {
        let g = self.transition_matrix();
        let q = self.proposal_matrix();
        let lik = self.likelihood(t);
        let n = self.states();
        DMatrix::from_fn(n, n, |a, b| {
            if q[(a, b)] > 0.0 {
                g[(a, b)] * lik[b] / q[(a, b)]
            } else {
                0.0
            }
        })
    }

    fn initial_weight(&self) -> DVector<f64> {
        let p = self.initial_proposal_vector();
        let lik = self.initial_likelihood();
        DVector::from_fn(self.states(), |x, _| if p[x] > 0.0 { self.initial[x] * lik[x] / p[x] } else { 0.0 })
    }

    /// The filter as a finite chain on `X`.
    pub fn chain(&self) -> Result<FiniteChain> {
        self.validate()?;
        let q = self.proposal_matrix();
        let steps = (1..=self.horizon())
            .map(|t| ChainStep {
                kernel: q.clone(),
                weight: self.step_weight(t),
            })
            .collect();
        FiniteChain::new(self.initial_proposal_vector(), self.initial_weight(), steps)
    }

    /// The filter as a finite chain on `X x X`, carrying `x_0` along, so
    /// that functionals of the first state can be evaluated at later steps.
    /// State `(o, x)` has index `o * m + x`.
    pub fn origin_chain(&self) -> Result<FiniteChain> {
        self.validate()?;
        let n = self.states();
        let q = self.proposal_matrix();
        let p0 = self.initial_proposal_vector();
        let w0 = self.initial_weight();
        let init = DVector::from_fn(n * n, |i, _| if i / n == i % n { p0[i % n] } else { 0.0 });
        let winit = DVector::from_fn(n * n, |i, _| w0[i % n]);
        let kernel = DMatrix::from_fn(n * n, n * n, |i, j| if i / n == j / n { q[(i % n, j % n)] } else { 0.0 });
        let steps = (1..=self.horizon())
            .map(|t| {
                let w = self.step_weight(t);
                ChainStep {
                    kernel: kernel.clone(),
                    weight: DMatrix::from_fn(n * n, n * n, |i, j| w[(i % n, j % n)]),
                }
            })
            .collect();
        FiniteChain::new(init, winit, steps)
    }

    /// Draw `(x_0, .., x_T)` and `(y_1, .., y_T)` from the model.
    pub fn simulate(&self, steps: usize, rng: &mut RngStream) -> (Vec<usize>, Vec<usize>) {
        let mut xs = Vec::with_capacity(steps + 1);
        let mut ys = Vec::with_capacity(steps);
        xs.push(rng.categorical(&self.initial));
        for _ in 0..steps {
            let x = rng.categorical(&self.transition[*xs.last().unwrap()]);
            ys.push(rng.categorical(&self.emission[x]));
            xs.push(x);
        }
        (xs, ys)
    }

    /// Two states, `g = [[0.9, 0.1], [0.2, 0.8]]`, `f(1 | x) = [0.8, 0.3]`.
    pub fn two_state(observations: Vec<usize>) -> Self {
        FiniteHmm {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.1], vec![0.2, 0.8]],
            emission: vec![vec![0.2, 0.8], vec![0.7, 0.3]],
            proposal: None,
            initial_proposal: None,
            observations,
            initial_observation: None,
        }
    }

    /// Three states with `C = 3` and `f_hi / f_lo = 2`, observations
    /// simulated on data stream `seed`.
    pub fn mixing_instance(steps: usize, seed: u64) -> Self {
        let third = 1.0 / 3.0;
        let mut m = FiniteHmm {
            initial: vec![third, third, third],
            transition: vec![vec![0.6, 0.2, 0.2], vec![0.2, 0.6, 0.2], vec![0.2, 0.2, 0.6]],
            emission: vec![vec![2.0 * third, third], vec![0.5, 0.5], vec![third, 2.0 * third]],
            proposal: None,
            initial_proposal: None,
            observations: Vec::new(),
            initial_observation: None,
        };
        let (_, ys) = m.simulate(steps, &mut RngStream::data(seed, 0));
        m.observations = ys;
        m
    }

    pub fn filter(&self) -> Result<HmmFilter<'_>> {
        self.validate()?;
        let n = self.states();
        let q = self.proposal_matrix();
        let log_weights = (1..=self.horizon())
            .map(|t| self.step_weight(t).map(f64::ln))
            .collect();
        Ok(HmmFilter {
            hmm: self,
            initial: self.initial_proposal_vector().iter().copied().collect(),
            log_initial: self.initial_weight().map(f64::ln),
            rows: (0..n).map(|a| q.row(a).iter().copied().collect()).collect(),
            log_weights,
        })
    }
}

/// Particle model for a [`FiniteHmm`] with tabulated log weights.
pub struct HmmFilter<'a> {
    hmm: &'a FiniteHmm,
    initial: Vec<f64>,
    log_initial: DVector<f64>,
    rows: Vec<Vec<f64>>,
    log_weights: Vec<DMatrix<f64>>,
}

impl Model for HmmFilter<'_> {
    type State = usize;
    type Tuning = ();

    fn horizon(&self) -> usize {
        self.hmm.horizon()
    }

    fn sample_initial(&self, rng: &mut RngStream) -> usize {
        rng.categorical(&self.initial)
    }

    fn log_initial_weight(&self, x: &usize) -> f64 {
        self.log_initial[*x]
    }

    fn tune(&self, _: usize, _: &[usize]) {}

    fn mutate(&self, _: usize, parent: &usize, _: &(), rng: &mut RngStream) -> usize {
        rng.categorical(&self.rows[*parent])
    }

    fn log_weight(&self, t: usize, parent: &usize, x: &usize) -> f64 {
        self.log_weights[t - 1][(*parent, *x)]
    }

    fn state_space(&self) -> StateSpace {
        StateSpace::Growing
    }
}
