use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::engine::{KernelKind, Model};
use crate::error::{Result, SmcError};
use crate::rng::RngStream;

/// `ln B(a, b)`.
pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Log density of `Beta(a, b)` at `theta` in `(0, 1)`.
pub fn ln_beta_pdf(a: f64, b: f64, theta: f64) -> f64 {
    (a - 1.0) * theta.ln() + (b - 1.0) * (-theta).ln_1p() - ln_beta_fn(a, b)
}

/// Bernoulli observations with a Beta prior on the success probability,
/// sampled from an instrumental `Beta(alpha0, beta0)` at `t = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBernoulliModel {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub alpha0: f64,
    #[serde(default = "one")]
    pub beta0: f64,
    #[serde(default)]
    pub observations: Vec<u8>,
}

fn one() -> f64 {
    1.0
}

impl BetaBernoulliModel {
    pub fn new(alpha: f64, beta: f64, alpha0: f64, beta0: f64, observations: Vec<u8>) -> Result<Self> {
        let m = BetaBernoulliModel {
            alpha,
            beta,
            alpha0,
            beta0,
            observations,
        };
        m.validate()?;
        Ok(m)
    }

    /// `Beta(2, 2)` prior with a uniform instrumental proposal.
    pub fn standard(observations: Vec<u8>) -> Self {
        BetaBernoulliModel {
            alpha: 2.0,
            beta: 2.0,
            alpha0: 1.0,
            beta0: 1.0,
            observations,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SmcError::model(format!("{name} = {v} must be positive")));
            }
        }
        if self.observations.iter().any(|y| *y > 1) {
            return Err(SmcError::model("observations must be 0 or 1"));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.observations.len()
    }

    /// Number of successes among `y_1..y_t`.
    pub fn successes(&self, t: usize) -> usize {
        self.observations[..t].iter().filter(|y| **y == 1).count()
    }

    /// `(alpha + s_t, beta + t - s_t)`.
    pub fn posterior(&self, t: usize) -> Result<(f64, f64)> {
        if t > self.horizon() {
            return Err(SmcError::invalid(format!("t = {t} beyond horizon {}", self.horizon())));
        }
        let s = self.successes(t) as f64;
        Ok((self.alpha + s, self.beta + t as f64 - s))
    }

    pub fn posterior_mean(&self, t: usize) -> Result<f64> {
        let (a, b) = self.posterior(t)?;
        Ok(a / (a + b))
    }

    pub fn posterior_variance(&self, t: usize) -> Result<f64> {
        let (a, b) = self.posterior(t)?;
        Ok(a * b / ((a + b) * (a + b) * (a + b + 1.0)))
    }

    /// Shape of the proposal `pi~_t`: the instrumental law at `t = 0`,
    /// `pi_{t-1}` afterwards.
    pub fn proposal_shape(&self, t: usize) -> Result<(f64, f64)> {
        if t == 0 {
            Ok((self.alpha0, self.beta0))
        } else {
            self.posterior(t - 1)
        }
    }

    /// Normalised weight `v_t(theta) = pi_t(theta) / pi~_t(theta)`.
    pub fn weight_at(&self, t: usize, theta: f64) -> Result<f64> {
        let (a, b) = self.posterior(t)?;
        let (a0, b0) = self.proposal_shape(t)?;
        if t == 0 {
            return Ok((ln_beta_pdf(a, b, theta) - ln_beta_pdf(a0, b0, theta)).exp());
        }
        let m = a0 / (a0 + b0);
        Ok(if self.observations[t - 1] == 1 {
            theta / m
        } else {
            (1.0 - theta) / (1.0 - m)
        })
    }

    /// Fails when `v_t(theta0)` is an integer for some `1 <= t <= t_max`.
    pub fn check_non_integral(&self, theta0: f64, t_max: usize) -> Result<()> {
        for t in 1..=t_max {
            let v = self.weight_at(t, theta0)?;
            if crate::variance::fractional_part(v) == 0.0 {
                return Err(SmcError::model(format!("v_{t}(theta0) = {v} is an integer")));
            }
        }
        Ok(())
    }

    /// `T` Bernoulli(`theta`) observations.
    pub fn simulate(theta: f64, steps: usize, rng: &mut RngStream) -> Vec<u8> {
        (0..steps).map(|_| u8::from(rng.uniform() < theta)).collect()
    }

    /// Draw `theta` from the prior, then the observations; returns both.
    pub fn simulate_from_prior(&self, steps: usize, rng: &mut RngStream) -> Result<(f64, Vec<u8>)> {
        let prior = Beta::new(self.alpha, self.beta).map_err(|e| SmcError::model(e.to_string()))?;
        let theta = prior.sample(rng);
        Ok((theta, Self::simulate(theta, steps, rng)))
    }

    pub fn with_observations(&self, observations: Vec<u8>) -> Self {
        BetaBernoulliModel {
            observations,
            ..self.clone()
        }
    }

    pub fn filter(&self, moves: bool) -> Result<BetaBernoulliFilter<'_>> {
        self.validate()?;
        Ok(BetaBernoulliFilter {
            model: self,
            instrumental: Beta::new(self.alpha0, self.beta0).map_err(|e| SmcError::model(e.to_string()))?,
            moves,
        })
    }
}

/// Particle filter for [`BetaBernoulliModel`]: identity kernel (plain
/// resampling) or a random-walk Metropolis move on `logit(theta)` that
/// leaves `pi_{t-1}` invariant.
pub struct BetaBernoulliFilter<'a> {
    model: &'a BetaBernoulliModel,
    instrumental: Beta<f64>,
    moves: bool,
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

fn expit(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Model for BetaBernoulliFilter<'_> {
    type State = f64;
    type Tuning = f64;

    fn horizon(&self) -> usize {
        self.model.horizon()
    }

    fn sample_initial(&self, rng: &mut RngStream) -> f64 {
        loop {
            let x = self.instrumental.sample(rng);
            if x > 0.0 && x < 1.0 {
                return x;
            }
        }
    }

    fn log_initial_weight(&self, x: &f64) -> f64 {
        let m = self.model;
        ln_beta_pdf(m.alpha, m.beta, *x) - ln_beta_pdf(m.alpha0, m.beta0, *x)
    }

    fn tune(&self, _t: usize, cloud: &[f64]) -> f64 {
        if !self.moves {
            return 0.0;
        }
        let z: Vec<f64> = cloud.iter().map(|x| logit(*x)).collect();
        2.4 * crate::sum::sample_variance(&z).sqrt()
    }

    fn mutate(&self, t: usize, parent: &f64, scale: &f64, rng: &mut RngStream) -> f64 {
        if !self.moves || *scale == 0.0 {
            return *parent;
        }
        let (a, b) = self.model.posterior(t - 1).expect("t within horizon");
        let z = logit(*parent);
        let normal: f64 = rand_distr::StandardNormal.sample(rng);
        let zp = z + scale * normal;
        let xp = expit(zp);
        if !(xp > 0.0 && xp < 1.0) {
            return *parent;
        }
        // target density in logit coordinates: theta^a (1 - theta)^b
        let log_ratio = a * (xp.ln() - parent.ln()) + b * ((-xp).ln_1p() - (-parent).ln_1p());
        if rng.uniform_open().ln() < log_ratio {
            xp
        } else {
            *parent
        }
    }

    fn log_weight(&self, t: usize, _parent: &f64, x: &f64) -> f64 {
        if self.model.observations[t - 1] == 1 {
            x.ln()
        } else {
            (-x).ln_1p()
        }
    }

    fn kernel_kind(&self) -> KernelKind {
        if self.moves {
            KernelKind::Invariant
        } else {
            KernelKind::Identity
        }
    }
}
