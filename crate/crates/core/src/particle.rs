//! Weighted particle systems, functionals and the basic estimators.

use std::fmt;
use std::sync::Arc;

use crate::error::{Result, SmcError};
use crate::sum::NeumaierSum;

/// The weighted slice `(theta_j, w_j)_{j <= H}` at a fixed step `t`.
///
/// Weights are held as unnormalised log weights; `-inf` encodes a zero
/// weight. Linear weights are only materialised after subtracting the
/// maximum, so long products of likelihood terms never underflow.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSystem<S> {
    particles: Vec<S>,
    log_weights: Vec<f64>,
    t: usize,
}

impl<S> ParticleSystem<S> {
    pub fn from_log_weights(particles: Vec<S>, log_weights: Vec<f64>, t: usize) -> Result<Self> {
        if particles.is_empty() {
            return Err(SmcError::invalid("particle system must hold at least one particle"));
        }
        if particles.len() != log_weights.len() {
            return Err(SmcError::invalid(format!(
                "{} particles but {} weights",
                particles.len(),
                log_weights.len()
            )));
        }
        if let Some(index) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(SmcError::NonFiniteWeight { t, index });
        }
        if log_weights.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(SmcError::DegenerateWeights);
        }
        Ok(ParticleSystem {
            particles,
            log_weights,
            t,
        })
    }

    /// Build from linear (unnormalised, nonnegative) weights.
    pub fn from_weights(particles: Vec<S>, weights: &[f64], t: usize) -> Result<Self> {
        if let Some(index) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(SmcError::NonFiniteWeight { t, index });
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Self::from_log_weights(particles, log_weights, t)
    }

    /// Unit weights, as produced by a selection step.
    pub fn unweighted(particles: Vec<S>, t: usize) -> Result<Self> {
        let n = particles.len();
        Self::from_log_weights(particles, vec![0.0; n], t)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn into_parts(self) -> (Vec<S>, Vec<f64>, usize) {
        (self.particles, self.log_weights, self.t)
    }

    /// Linear weights scaled so the largest equals one.
    pub fn weights(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        self.log_weights.iter().map(|w| (w - max).exp()).collect()
    }

    pub fn has_unit_weights(&self) -> bool {
        let first = self.log_weights[0];
        self.log_weights.iter().all(|w| *w == first)
    }

    /// Normalised weights `rho_j = w_j / sum w`.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalize_weights(&self.weights())
    }
}

/// A (possibly vector-valued) test function evaluated on particles.
pub struct Functional<S> {
    name: String,
    arity: usize,
    eval: Arc<dyn Fn(&S, &mut [f64]) + Send + Sync>,
    variation: Option<f64>,
}

impl<S> Clone for Functional<S> {
    fn clone(&self) -> Self {
        Functional {
            name: self.name.clone(),
            arity: self.arity,
            eval: Arc::clone(&self.eval),
            variation: self.variation,
        }
    }
}

impl<S> fmt::Debug for Functional<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Functional")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("variation", &self.variation)
            .finish()
    }
}

impl<S> Functional<S> {
    /// `eval` writes the `arity` components of `phi(x)` into its output slice.
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        eval: impl Fn(&S, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        assert!(arity > 0, "functional arity must be positive");
        Functional {
            name: name.into(),
            arity,
            eval: Arc::new(eval),
            variation: None,
        }
    }

    pub fn scalar(name: impl Into<String>, f: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(name, 1, move |x, out| out[0] = f(x))
    }

    /// Declared `sup |phi(x) - phi(x')|` (scalar functionals).
    pub fn with_variation(mut self, variation: f64) -> Self {
        self.variation = Some(variation);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn variation(&self) -> Option<f64> {
        self.variation
    }

    #[inline]
    pub fn eval_into(&self, x: &S, out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: &S) -> Vec<f64> {
        let mut out = vec![0.0; self.arity];
        self.eval_into(x, &mut out);
        out
    }

    /// Reinterpret the functional on another state type through a projection.
    pub fn map_state<T: 'static>(
        &self,
        project: impl Fn(&T) -> &S + Send + Sync + 'static,
    ) -> Functional<T>
    where
        S: 'static,
    {
        let inner = Arc::clone(&self.eval);
        Functional {
            name: self.name.clone(),
            arity: self.arity,
            eval: Arc::new(move |x: &T, out: &mut [f64]| inner(project(x), out)),
            variation: self.variation,
        }
    }
}

impl Functional<usize> {
    /// Functional on a finite state set given as a table (one row per state).
    pub fn from_table(name: impl Into<String>, table: Vec<Vec<f64>>) -> Self {
        let arity = table.first().map_or(1, Vec::len);
        assert!(table.iter().all(|row| row.len() == arity), "ragged functional table");
        let variation = if arity == 1 {
            let (lo, hi) = table
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[0]), hi.max(r[0])));
            Some(hi - lo)
        } else {
            None
        };
        let table = Arc::new(table);
        let mut f = Self::new(name, arity, move |x: &usize, out: &mut [f64]| {
            out.copy_from_slice(&table[*x])
        });
        f.variation = variation;
        f
    }

    pub fn indicator(name: impl Into<String>, n_states: usize, state: usize) -> Self {
        Self::from_table(
            name,
            (0..n_states)
                .map(|s| vec![if s == state { 1.0 } else { 0.0 }])
                .collect(),
        )
    }
}

impl Functional<f64> {
    pub fn identity() -> Self {
        Self::scalar("x", |x| *x)
    }
}

fn check_finite(values: &[f64], index: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SmcError::NonFiniteFunctional { index })
    }
}

/// Self-normalised estimate `sum w_j phi(theta_j) / sum w_j`.
pub fn weighted_estimate<S>(system: &ParticleSystem<S>, phi: &Functional<S>) -> Result<Vec<f64>> {
    let weights = system.weights();
    shifted_mean(system.particles(), Some(&weights), phi)
}

/// Plain average `H^{-1} sum phi(theta_j)`; ignores the weights.
pub fn unweighted_estimate<S>(system: &ParticleSystem<S>, phi: &Functional<S>) -> Result<Vec<f64>> {
    shifted_mean(system.particles(), None, phi)
}

pub(crate) fn plain_mean<S>(particles: &[S], phi: &Functional<S>) -> Result<Vec<f64>> {
    shifted_mean(particles, None, phi)
}

// Mean computed as phi(theta_0) + sum w (phi - phi(theta_0)) / sum w, so a
// constant functional is returned exactly and unit weights reproduce the
// plain mean bit for bit.
fn shifted_mean<S>(particles: &[S], weights: Option<&[f64]>, phi: &Functional<S>) -> Result<Vec<f64>> {
    let d = phi.arity();
    let mut origin = vec![0.0; d];
    phi.eval_into(&particles[0], &mut origin);
    check_finite(&origin, 0)?;
    let mut total = NeumaierSum::new();
    let mut acc = vec![NeumaierSum::new(); d];
    let mut buf = vec![0.0; d];
    for (index, x) in particles.iter().enumerate() {
        phi.eval_into(x, &mut buf);
        check_finite(&buf, index)?;
        let w = weights.map_or(1.0, |w| w[index]);
        if w == 0.0 {
            continue;
        }
        total.add(w);
        for ((a, v), o) in acc.iter_mut().zip(&buf).zip(&origin) {
            a.add(w * (v - o));
        }
    }
    let total = total.value();
    if total <= 0.0 {
        return Err(SmcError::DegenerateWeights);
    }
    Ok(acc
        .iter()
        .zip(&origin)
        .map(|(a, o)| o + a.value() / total)
        .collect())
}

/// `rho_j = w_j / sum w`; fails when every weight is zero.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(SmcError::invalid("weights must be finite and nonnegative"));
    }
    let total: f64 = weights.iter().copied().collect::<NeumaierSum>().value();
    if total <= 0.0 {
        return Err(SmcError::DegenerateWeights);
    }
    Ok(weights.iter().map(|w| w / total).collect())
}

/// `1 / sum rho_j^2` for normalised weights.
pub fn effective_sample_size(rho: &[f64]) -> f64 {
    1.0 / rho.iter().map(|r| r * r).collect::<NeumaierSum>().value()
}
