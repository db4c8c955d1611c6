use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::engine::{Model, StateSpace};
use crate::error::{Result, SmcError};
use crate::rng::RngStream;

/// `x_0 ~ N(m0, s0^2)`, `x_t = a x_{t-1} + sigma e_t`, `y_t = x_t + tau u_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearGaussianSsm {
    pub a: f64,
    pub sigma: f64,
    pub tau: f64,
    #[serde(default)]
    pub initial_mean: f64,
    #[serde(default = "unit")]
    pub initial_sd: f64,
    #[serde(default)]
    pub observations: Vec<f64>,
}

fn unit() -> f64 {
    1.0
}

/// Exact filtering moments at one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMoments {
    pub mean: f64,
    pub variance: f64,
}

impl LinearGaussianSsm {
    pub fn new(a: f64, sigma: f64, tau: f64, initial_mean: f64, initial_sd: f64, observations: Vec<f64>) -> Result<Self> {
        let m = LinearGaussianSsm {
            a,
            sigma,
            tau,
            initial_mean,
            initial_sd,
            observations,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !(self.tau > 0.0) || !(self.initial_sd > 0.0) {
            return Err(SmcError::model("sigma, tau and the initial sd must be positive"));
        }
        if !self.a.is_finite() || !self.initial_mean.is_finite() || self.observations.iter().any(|y| !y.is_finite()) {
            return Err(SmcError::model("parameters and observations must be finite"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// Kalman filter: `N(mean_t, variance_t)` for `t = 0..=T`.
    pub fn kalman_filter(&self) -> Result<Vec<GaussianMoments>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.horizon() + 1);
        let mut m = self.initial_mean;
        let mut p = self.initial_sd * self.initial_sd;
        out.push(GaussianMoments { mean: m, variance: p });
        let r = self.tau * self.tau;
        for y in &self.observations {
            let mp = self.a * m;
            let pp = self.a * self.a * p + self.sigma * self.sigma;
            let gain = pp / (pp + r);
            m = mp + gain * (y - mp);
            p = (1.0 - gain) * pp;
            out.push(GaussianMoments { mean: m, variance: p });
        }
        Ok(out)
    }

    /// Draw `(x_0, .., x_T)` and `(y_1, .., y_T)`.
    pub fn simulate(&self, steps: usize, rng: &mut RngStream) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(steps + 1);
        let mut ys = Vec::with_capacity(steps);
        let e0: f64 = StandardNormal.sample(rng);
        xs.push(self.initial_mean + self.initial_sd * e0);
        for _ in 0..steps {
            let e: f64 = StandardNormal.sample(rng);
            let u: f64 = StandardNormal.sample(rng);
            let x = self.a * xs.last().unwrap() + self.sigma * e;
            ys.push(x + self.tau * u);
            xs.push(x);
        }
        (xs, ys)
    }

    /// `a = 0.9`, `sigma = tau = 1`, `x_0 ~ N(0, 1)`, observations simulated
    /// on data stream `seed`.
    pub fn ar1(steps: usize, seed: u64) -> Self {
        let mut m = LinearGaussianSsm {
            a: 0.9,
            sigma: 1.0,
            tau: 1.0,
            initial_mean: 0.0,
            initial_sd: 1.0,
            observations: Vec::new(),
        };
        m.observations = m.simulate(steps, &mut RngStream::data(seed, 0)).1;
        m
    }

    pub fn with_observations(&self, observations: Vec<f64>) -> Self {
        LinearGaussianSsm {
            observations,
            ..self.clone()
        }
    }
}

/// Bootstrap filter: particles move with the state dynamics and are
/// weighted by the observation density.
impl Model for LinearGaussianSsm {
    type State = f64;
    type Tuning = ();

    fn horizon(&self) -> usize {
        self.observations.len()
    }

    fn sample_initial(&self, rng: &mut RngStream) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.initial_mean + self.initial_sd * e
    }

    fn log_initial_weight(&self, _: &f64) -> f64 {
        0.0
    }

    fn tune(&self, _: usize, _: &[f64]) {}

    fn mutate(&self, _: usize, parent: &f64, _: &(), rng: &mut RngStream) -> f64 {
        let e: f64 = StandardNormal.sample(rng);
        self.a * parent + self.sigma * e
    }

    fn log_weight(&self, t: usize, _: &f64, x: &f64) -> f64 {
        let z = (self.observations[t - 1] - x) / self.tau;
        -0.5 * z * z
    }

    fn state_space(&self) -> StateSpace {
        StateSpace::Growing
    }
}
