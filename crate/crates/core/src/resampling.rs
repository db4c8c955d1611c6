//! Selection schemes: replicate counts `n_j` with `sum n_j = H` and
//! `E(n_j) = H rho_j`.
//!
//! Counts, not copied particle vectors, are the primitive output;
//! [`apply_selection`] materialises the resampled system when needed.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::particle::ParticleSystem;
use crate::rng::RngStream;
use crate::sum::NeumaierSum;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionScheme {
    Multinomial,
    Residual,
    Systematic,
    /// No selection step (sequential importance sampling).
    None,
}

impl SelectionScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            SelectionScheme::Multinomial => "multinomial",
            SelectionScheme::Residual => "residual",
            SelectionScheme::Systematic => "systematic",
            SelectionScheme::None => "none",
        }
    }

    pub fn counts(&self, rho: &[f64], h: usize, rng: &mut RngStream) -> Result<SelectionCounts> {
        match self {
            SelectionScheme::Multinomial => multinomial_counts(rho, h, rng),
            SelectionScheme::Residual => residual_counts(rho, h, rng),
            SelectionScheme::Systematic => systematic_counts(rho, h, rng),
            SelectionScheme::None => Err(SmcError::invalid("scheme `none` produces no counts")),
        }
    }
}

impl std::fmt::Display for SelectionScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SelectionScheme {
    type Err = SmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(SelectionScheme::Multinomial),
            "residual" => Ok(SelectionScheme::Residual),
            "systematic" => Ok(SelectionScheme::Systematic),
            "none" => Ok(SelectionScheme::None),
            other => Err(SmcError::invalid(format!("unknown selection scheme `{other}`"))),
        }
    }
}

/// Replicate counts produced by one selection step.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionCounts {
    pub counts: Vec<usize>,
    pub target: usize,
    /// `H^r`, the number of multinomial draws in the residual stage
    /// (zero for the other schemes).
    pub residual_draws: usize,
}

impl SelectionCounts {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

const NORMALIZATION_TOL: f64 = 1e-9;

fn check_inputs(rho: &[f64], h: usize) -> Result<()> {
    if h == 0 {
        return Err(SmcError::invalid("selection target size H must be positive"));
    }
    if rho.is_empty() {
        return Err(SmcError::invalid("empty weight vector"));
    }
    if rho.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(SmcError::invalid("normalized weights must be finite and nonnegative"));
    }
    let total: f64 = rho.iter().copied().collect::<NeumaierSum>().value();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SmcError::invalid(format!(
            "weights are not normalized (sum = {total})"
        )));
    }
    Ok(())
}

/// Vose alias table for O(1) draws from a fixed discrete law.
#[derive(Clone, Debug)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// `weights` need not be normalised but must have a positive sum.
    pub fn new(weights: &[f64]) -> Self {
        let n = weights.len();
        let total: f64 = weights.iter().copied().collect::<NeumaierSum>().value();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let mut small = Vec::with_capacity(n);
        let mut large = Vec::with_capacity(n);
        for (i, &s) in scaled.iter().enumerate() {
            if s < 1.0 {
                small.push(i);
            } else {
                large.push(i);
            }
        }
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
            alias[i] = i;
        }
        // a zero-weight column must never be returned through its own slot
        for i in 0..n {
            if weights[i] == 0.0 && prob[i] >= 1.0 {
                prob[i] = 0.0;
                if alias[i] == i {
                    alias[i] = weights.iter().position(|w| *w > 0.0).unwrap_or(i);
                }
            }
        }
        AliasTable { prob, alias }
    }

    #[inline]
    pub fn sample(&self, rng: &mut RngStream) -> usize {
        let i = rng.below(self.prob.len());
        if rng.uniform() < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

fn multinomial_draws(weights: &[f64], draws: usize, counts: &mut [usize], rng: &mut RngStream) {
    if draws == 0 {
        return;
    }
    let table = AliasTable::new(weights);
    for _ in 0..draws {
        counts[table.sample(rng)] += 1;
    }
}

/// `H` independent draws from the categorical law `rho`.
pub fn multinomial_counts(rho: &[f64], h: usize, rng: &mut RngStream) -> Result<SelectionCounts> {
    check_inputs(rho, h)?;
    let mut counts = vec![0; rho.len()];
    multinomial_draws(rho, h, &mut counts, rng);
    Ok(SelectionCounts {
        counts,
        target: h,
        residual_draws: 0,
    })
}

/// `floor(H rho_j)` deterministic copies, then `H^r` multinomial draws with
/// probabilities proportional to the fractional parts.
pub fn residual_counts(rho: &[f64], h: usize, rng: &mut RngStream) -> Result<SelectionCounts> {
    check_inputs(rho, h)?;
    let hf = h as f64;
    let mut counts: Vec<usize> = rho.iter().map(|p| (hf * p).floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    if assigned > h {
        // only reachable through rounding of a sum slightly above one
        return Err(SmcError::invalid("weights sum above one"));
    }
    let residual_draws = h - assigned;
    if residual_draws > 0 {
        let fractions: Vec<f64> = rho
            .iter()
            .zip(&counts)
            .map(|(p, &c)| (hf * p - c as f64).max(0.0))
            .collect();
        if fractions.iter().all(|f| *f <= 0.0) {
            return Err(SmcError::invalid("no fractional mass left for residual draws"));
        }
        multinomial_draws(&fractions, residual_draws, &mut counts, rng);
    }
    Ok(SelectionCounts {
        counts,
        target: h,
        residual_draws,
    })
}

/// Single uniform `u`, points `(u + i) / H`, counted against the cumulative
/// weights laid out left to right in particle-index order.
pub fn systematic_counts(rho: &[f64], h: usize, rng: &mut RngStream) -> Result<SelectionCounts> {
    check_inputs(rho, h)?;
    let u = rng.uniform();
    Ok(SelectionCounts {
        counts: systematic_counts_with(rho, h, u),
        target: h,
        residual_draws: 0,
    })
}

/// Deterministic core of systematic resampling for a given offset `u`.
pub fn systematic_counts_with(rho: &[f64], h: usize, u: f64) -> Vec<usize> {
    let hf = h as f64;
    let last_positive = rho.iter().rposition(|p| *p > 0.0).unwrap_or(rho.len() - 1);
    let mut acc = NeumaierSum::new();
    let mut below_prev = 0usize;
    let mut counts = Vec::with_capacity(rho.len());
    for (j, &p) in rho.iter().enumerate() {
        acc.add(p);
        let below = if j >= last_positive {
            h
        } else {
            // #{i : (u + i) / H < C_j}
            ((hf * acc.value() - u).ceil().max(0.0) as usize).min(h)
        };
        let below = below.max(below_prev);
        counts.push(below - below_prev);
        below_prev = below;
    }
    counts
}

/// Replace the system by `counts[j]` copies of particle `j`, all with unit
/// weight; the time index is unchanged.
pub fn apply_selection<S: Clone>(
    system: &ParticleSystem<S>,
    counts: &SelectionCounts,
) -> Result<ParticleSystem<S>> {
    if counts.counts.len() != system.len() {
        return Err(SmcError::invalid(format!(
            "{} counts for {} particles",
            counts.counts.len(),
            system.len()
        )));
    }
    if counts.total() != system.len() {
        return Err(SmcError::invalid(format!(
            "counts sum to {} but the system holds {} particles",
            counts.total(),
            system.len()
        )));
    }
    let particles = replicate(system.particles(), &counts.counts);
    ParticleSystem::unweighted(particles, system.t())
}

pub(crate) fn replicate<S: Clone>(particles: &[S], counts: &[usize]) -> Vec<S> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for (x, &n) in particles.iter().zip(counts) {
        for _ in 0..n {
            out.push(x.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng() -> RngStream {
        RngStream::new(42, 0)
    }

    #[test]
    fn multinomial_single_atom() {
        let mut r = rng();
        for _ in 0..100 {
            assert_eq!(multinomial_counts(&[1.0], 5, &mut r).unwrap().counts, vec![5]);
        }
    }

    #[test]
    fn multinomial_mean_matches() {
        let mut r = rng();
        let trials = 100_000;
        let mut total = 0usize;
        for _ in 0..trials {
            total += multinomial_counts(&[0.75, 0.25], 4, &mut r).unwrap().counts[0];
        }
        let mean = total as f64 / trials as f64;
        let se = (4.0 * 0.75 * 0.25 / trials as f64).sqrt();
        assert!((mean - 3.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn multinomial_zero_atom_never_drawn() {
        let mut r = rng();
        for _ in 0..10_000 {
            assert_eq!(multinomial_counts(&[0.5, 0.5, 0.0], 10, &mut r).unwrap().counts[2], 0);
        }
    }

    #[test]
    fn residual_integer_quotas_are_deterministic() {
        let mut r = rng();
        let c = residual_counts(&[0.5, 0.3, 0.2], 10, &mut r).unwrap();
        assert_eq!(c.counts, vec![5, 3, 2]);
        assert_eq!(c.residual_draws, 0);
        assert_eq!(r.position(), 0, "no randomness consumed");
    }

    #[test]
    fn residual_single_draw_case() {
        let mut r = rng();
        let mut first = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let c = residual_counts(&[0.26, 0.74], 10, &mut r).unwrap();
            assert_eq!(c.residual_draws, 1);
            assert!(c.counts == vec![3, 7] || c.counts == vec![2, 8], "{:?}", c.counts);
            if c.counts[0] == 3 {
                first += 1;
            }
        }
        // residual probabilities [0.6, 0.4]
        let p = first as f64 / trials as f64;
        assert!((p - 0.6).abs() < 4.0 * (0.24 / trials as f64).sqrt());
    }

    #[test]
    fn residual_mean_matches() {
        let mut r = rng();
        let trials = 100_000;
        let mut total = 0usize;
        for _ in 0..trials {
            total += residual_counts(&[0.55, 0.45], 10, &mut r).unwrap().counts[0];
        }
        let mean = total as f64 / trials as f64;
        // floor 5 plus one Bernoulli(0.5) draw
        let se = (0.25 / trials as f64).sqrt();
        assert!((mean - 5.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn systematic_examples() {
        let mut r = rng();
        for _ in 0..1000 {
            assert_eq!(systematic_counts(&[0.5, 0.5], 10, &mut r).unwrap().counts, vec![5, 5]);
            let c = systematic_counts(&[0.26, 0.74], 10, &mut r).unwrap().counts;
            assert!(c == vec![2, 8] || c == vec![3, 7], "{c:?}");
            let third = 1.0 / 3.0;
            assert_eq!(
                systematic_counts(&[third, third, third], 3, &mut r).unwrap().counts,
                vec![1, 1, 1]
            );
        }
    }

    #[test]
    fn systematic_boundary_offsets() {
        assert_eq!(systematic_counts_with(&[0.5, 0.5], 10, 0.0), vec![5, 5]);
        assert_eq!(systematic_counts_with(&[0.26, 0.74], 10, 0.0), vec![3, 7]);
        assert_eq!(systematic_counts_with(&[0.26, 0.74], 10, 0.7), vec![2, 8]);
        assert_eq!(systematic_counts_with(&[0.0, 1.0, 0.0], 4, 0.3), vec![0, 4, 0]);
    }

    #[test]
    fn errors() {
        let mut r = rng();
        assert!(multinomial_counts(&[1.0], 0, &mut r).is_err());
        assert!(residual_counts(&[1.0], 0, &mut r).is_err());
        assert!(systematic_counts(&[1.0], 0, &mut r).is_err());
        assert!(multinomial_counts(&[0.5, 0.6], 3, &mut r).is_err());
        assert!(SelectionScheme::None.counts(&[1.0], 3, &mut r).is_err());
    }

    #[test]
    fn apply_selection_examples() {
        let s = ParticleSystem::from_weights(vec!['a', 'b'], &[3.0, 1.0], 4).unwrap();
        let c = SelectionCounts {
            counts: vec![2, 0],
            target: 2,
            residual_draws: 0,
        };
        let out = apply_selection(&s, &c).unwrap();
        assert_eq!(out.particles(), &['a', 'a']);
        assert_eq!(out.weights(), vec![1.0, 1.0]);
        assert_eq!(out.t(), 4);

        let c = SelectionCounts {
            counts: vec![1, 1],
            target: 2,
            residual_draws: 0,
        };
        assert_eq!(apply_selection(&s, &c).unwrap().particles(), &['a', 'b']);

        let s3 = ParticleSystem::from_weights(vec!['a', 'b', 'c'], &[0.0, 1.0, 0.0], 0).unwrap();
        let c = SelectionCounts {
            counts: vec![0, 3, 0],
            target: 3,
            residual_draws: 0,
        };
        assert_eq!(apply_selection(&s3, &c).unwrap().particles(), &['b', 'b', 'b']);

        let bad = SelectionCounts {
            counts: vec![1, 1],
            target: 3,
            residual_draws: 0,
        };
        assert!(apply_selection(&s3, &bad).is_err());
    }

    /// Exact variance of `H^{-1} sum n_j phi_j` for both schemes on a small
    /// instance, computed from the count laws (not by simulation).
    #[test]
    fn residual_conditional_variance_below_multinomial() {
        let rho = [0.13, 0.42, 0.07, 0.38];
        let phi = [1.0, -2.0, 5.0, 0.5];
        let h = 7.0;
        let mean: f64 = rho.iter().zip(&phi).map(|(p, f)| p * f).sum();
        let var_phi: f64 = rho.iter().zip(&phi).map(|(p, f)| p * (f - mean).powi(2)).sum();
        // multinomial: Var = Var_rho(phi) / H
        let multinomial = var_phi / h;
        // residual: H^r draws from the fractional law
        let floors: Vec<f64> = rho.iter().map(|p| (h * p).floor()).collect();
        let hr = h - floors.iter().sum::<f64>();
        let frac: Vec<f64> = rho.iter().zip(&floors).map(|(p, f)| (h * p - f) / hr).collect();
        let fmean: f64 = frac.iter().zip(&phi).map(|(p, f)| p * f).sum();
        let fvar: f64 = frac.iter().zip(&phi).map(|(p, f)| p * (f - fmean).powi(2)).sum();
        let residual = hr * fvar / (h * h);
        assert!(residual <= multinomial, "{residual} > {multinomial}");

        // and the simulated variances agree with these values
        let mut r = rng();
        let trials = 200_000;
        let est = |c: &SelectionCounts| c.counts.iter().zip(&phi).map(|(n, f)| *n as f64 * f).sum::<f64>() / h;
        let sim = |scheme: SelectionScheme, r: &mut RngStream| {
            let xs: Vec<f64> = (0..trials).map(|_| est(&scheme.counts(&rho, 7, r).unwrap())).collect();
            crate::sum::sample_variance(&xs)
        };
        let sm = sim(SelectionScheme::Multinomial, &mut r);
        let sr = sim(SelectionScheme::Residual, &mut r);
        assert!((sm / multinomial - 1.0).abs() < 0.02, "{sm} vs {multinomial}");
        assert!((sr / residual - 1.0).abs() < 0.02, "{sr} vs {residual}");
    }

    fn normalized(raw: Vec<f64>) -> Vec<f64> {
        let total: f64 = raw.iter().sum();
        raw.iter().map(|x| x / total).collect()
    }

    proptest! {
        #[test]
        fn counts_sum_and_bracketing(
            raw in prop::collection::vec(0.0f64..1.0, 1..12),
            h in 1usize..60,
            seed in 0u64..u64::MAX,
        ) {
            prop_assume!(raw.iter().any(|x| *x > 1e-6));
            let rho = normalized(raw);
            let mut r = RngStream::new(seed, 0);
            let hf = h as f64;
            for scheme in [SelectionScheme::Multinomial, SelectionScheme::Residual, SelectionScheme::Systematic] {
                let c = scheme.counts(&rho, h, &mut r).unwrap();
                prop_assert_eq!(c.total(), h);
                for (j, &n) in c.counts.iter().enumerate() {
                    if rho[j] == 0.0 {
                        prop_assert_eq!(n, 0);
                    }
                    match scheme {
                        SelectionScheme::Residual => prop_assert!(n >= (hf * rho[j]).floor() as usize),
                        SelectionScheme::Systematic => {
                            prop_assert!((n as f64 - hf * rho[j]).abs() < 1.0 + 1e-9, "n={} quota={}", n, hf * rho[j]);
                        }
                        _ => {}
                    }
                }
                if scheme == SelectionScheme::Residual {
                    let floors: usize = rho.iter().map(|p| (hf * p).floor() as usize).sum();
                    prop_assert_eq!(c.residual_draws, h - floors);
                }
            }
        }

        #[test]
        fn alias_never_returns_zero_mass(raw in prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..1.0], 2..10), seed in 0u64..1000) {
            prop_assume!(raw.iter().any(|x| *x > 0.0));
            let t = AliasTable::new(&raw);
            let mut r = RngStream::new(seed, 9);
            for _ in 0..500 {
                let i = t.sample(&mut r);
                prop_assert!(raw[i] > 0.0);
            }
        }
    }
}
