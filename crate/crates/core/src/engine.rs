//! Filter drivers built from mutation, correction and selection.
//!
//! [`run_filter`] is the generic loop. With an identity kernel it is the
//! sequential importance resampling algorithm; with a kernel that leaves the
//! previous target invariant it is resample-move; with the `Never` schedule
//! it is sequential importance sampling (see [`run_sis`]).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::par;
use crate::particle::{effective_sample_size, plain_mean, Functional, ParticleSystem};
use crate::resampling::{replicate, SelectionScheme};
use crate::rng::RngStream;
use crate::sum::{self, NeumaierSum};

/// How the mutation kernel relates to the targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// `k_t(theta, .) = delta_theta`: plain importance resampling.
    Identity,
    /// Leaves `pi_{t-1}` invariant (an MCMC move); the weight function is
    /// then the static-target weight.
    Invariant,
    /// A general proposal kernel.
    Proposal,
}

/// Shape of the state space `Theta_t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StateSpace {
    Fixed,
    /// `X^t`, stored as the suffix the weight function needs.
    Growing,
    /// `Theta x X^t`.
    ProductGrowing,
}

/// A target sequence described by its initial proposal, mutation kernels
/// and unnormalised weight functions.
pub trait Model: Sync {
    type State: Clone + Send + Sync;
    /// Per-step kernel parameters computed from the current cloud (for
    /// adaptive MCMC moves); `()` for fixed kernels.
    type Tuning: Send + Sync;

    /// Last step index `T` for which weights are defined.
    fn horizon(&self) -> usize;

    /// Draw from `pi~_0`.
    fn sample_initial(&self, rng: &mut RngStream) -> Self::State;

    /// `log v_0(x)` up to an additive constant.
    fn log_initial_weight(&self, x: &Self::State) -> f64;

    fn tune(&self, t: usize, cloud: &[Self::State]) -> Self::Tuning;

    /// Draw from `k_t(parent, .)`.
    fn mutate(
        &self,
        t: usize,
        parent: &Self::State,
        tuning: &Self::Tuning,
        rng: &mut RngStream,
    ) -> Self::State;

    /// `log v_t(x)` up to an additive constant; the parent is supplied for
    /// weight functions of `(x_{t-1}, x_t)`.
    fn log_weight(&self, t: usize, parent: &Self::State, x: &Self::State) -> f64;

    fn kernel_kind(&self) -> KernelKind {
        KernelKind::Proposal
    }

    fn state_space(&self) -> StateSpace {
        StateSpace::Fixed
    }
}

/// When selection steps happen.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    EveryStep,
    Never,
    At(BTreeSet<usize>),
}

impl Schedule {
    pub fn selects(&self, t: usize) -> bool {
        match self {
            Schedule::EveryStep => true,
            Schedule::Never => false,
            Schedule::At(times) => times.contains(&t),
        }
    }
}

/// Steps at which functionals are evaluated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTimes {
    All,
    Final,
    At(BTreeSet<usize>),
}

impl EvalTimes {
    fn includes(&self, t: usize, last: usize) -> bool {
        match self {
            EvalTimes::All => true,
            EvalTimes::Final => t == last,
            EvalTimes::At(times) => times.contains(&t),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub particles: usize,
    /// Run steps `0..=steps`.
    pub steps: usize,
    pub scheme: SelectionScheme,
    pub schedule: Schedule,
    pub eval_times: EvalTimes,
    pub seed: u64,
    pub stream: u64,
}

impl FilterConfig {
    pub fn new(particles: usize, steps: usize, scheme: SelectionScheme, seed: u64) -> Self {
        let schedule = if scheme == SelectionScheme::None {
            Schedule::Never
        } else {
            Schedule::EveryStep
        };
        FilterConfig {
            particles,
            steps,
            scheme,
            schedule,
            eval_times: EvalTimes::All,
            seed,
            stream: 0,
        }
    }

    /// Sequential importance sampling: no selection at any step.
    pub fn sis(particles: usize, steps: usize, seed: u64) -> Self {
        Self::new(particles, steps, SelectionScheme::None, seed)
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn with_eval_times(mut self, eval_times: EvalTimes) -> Self {
        self.eval_times = eval_times;
        self
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(SmcError::invalid("number of particles H must be positive"));
        }
        match &self.schedule {
            Schedule::Never => {}
            _ if self.scheme == SelectionScheme::None => {
                return Err(SmcError::invalid(
                    "a selection schedule other than `never` needs a selection scheme",
                ))
            }
            Schedule::At(times) => {
                if let Some(t) = times.iter().find(|t| **t > self.steps) {
                    return Err(SmcError::invalid(format!(
                        "selection time {t} beyond the last step {}",
                        self.steps
                    )));
                }
            }
            Schedule::EveryStep => {}
        }
        Ok(())
    }

    fn selects(&self, t: usize) -> bool {
        self.scheme != SelectionScheme::None && self.schedule.selects(t)
    }
}

/// Diagnostics and estimates for one step of one filter run.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: usize,
    /// Pre-selection self-normalised estimates, one vector per functional
    /// (empty when the step is not an evaluation time).
    pub weighted: Vec<Vec<f64>>,
    /// Post-selection plain averages; `None` when no selection happened.
    pub unweighted: Option<Vec<Vec<f64>>>,
    pub ess: f64,
    pub max_weight: f64,
    /// `log(H^{-1} sum w_j)` of the unnormalised (cumulative) weights.
    pub log_mean_weight: f64,
    pub selected: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterTrace {
    pub steps: Vec<StepRecord>,
    pub functional_names: Vec<String>,
}

impl FilterTrace {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("trace has at least one step")
    }

    pub fn at(&self, t: usize) -> Option<&StepRecord> {
        self.steps.get(t)
    }
}

fn log_mean_exp(lw: &[f64]) -> f64 {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s = sum::sum(lw.iter().map(|w| (w - max).exp()));
    max + (s / lw.len() as f64).ln()
}

const PARALLEL_WEIGHT_THRESHOLD: usize = 1 << 14;

fn log_weights<M: Model>(model: &M, t: usize, parents: &[M::State], children: &[M::State]) -> Vec<f64> {
    if par::is_parallel() && children.len() >= PARALLEL_WEIGHT_THRESHOLD {
        par::map_range(children.len(), |j| model.log_weight(t, &parents[j], &children[j]))
    } else {
        parents
            .iter()
            .zip(children)
            .map(|(p, x)| model.log_weight(t, p, x))
            .collect()
    }
}

/// Generic loop with an observer called on the weighted (pre-selection)
/// system at every step.
pub fn run_filter_observed<M: Model>(
    model: &M,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
    mut observer: impl FnMut(&ParticleSystem<M::State>),
) -> Result<FilterTrace> {
    config.validate()?;
    if config.steps > model.horizon() {
        return Err(SmcError::invalid(format!(
            "requested {} steps but the model defines weights up to t = {}",
            config.steps,
            model.horizon()
        )));
    }
    let h = config.particles;
    let mut rng = RngStream::new(config.seed, config.stream);
    let mut particles: Vec<M::State> = (0..h).map(|_| model.sample_initial(&mut rng)).collect();
    let mut lw: Vec<f64> = particles.iter().map(|x| model.log_initial_weight(x)).collect();
    let mut records = Vec::with_capacity(config.steps + 1);
    let mut selected_prev = false;

    for t in 0..=config.steps {
        if t > 0 {
            let tuning = model.tune(t, &particles);
            let children: Vec<M::State> = particles
                .iter()
                .map(|p| model.mutate(t, p, &tuning, &mut rng))
                .collect();
            let inc = log_weights(model, t, &particles, &children);
            if selected_prev {
                lw = inc;
            } else {
                for (w, i) in lw.iter_mut().zip(inc) {
                    *w += i;
                }
            }
            particles = children;
        }
        if let Some(index) = lw.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(SmcError::NonFiniteWeight { t, index });
        }
        if lw.iter().all(|w| *w == f64::NEG_INFINITY) {
            return Err(SmcError::WeightCollapse { t });
        }
        let system = ParticleSystem::from_log_weights(particles, lw, t)?;
        observer(&system);
        let evaluate = config.eval_times.includes(t, config.steps);
        let rho = system.normalized_weights()?;
        let weighted = if evaluate {
            functionals
                .iter()
                .map(|phi| crate::particle::weighted_estimate(&system, phi))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let ess = effective_sample_size(&rho);
        let max_weight = rho.iter().copied().fold(0.0, f64::max);
        let log_mean_weight = log_mean_exp(system.log_weights());
        let (ps, ws, _) = system.into_parts();
        let selected = config.selects(t);
        let unweighted = if selected {
            let counts = config.scheme.counts(&rho, h, &mut rng)?;
            particles = replicate(&ps, &counts.counts);
            lw = vec![0.0; h];
            if evaluate {
                Some(
                    functionals
                        .iter()
                        .map(|phi| plain_mean(&particles, phi))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                Some(Vec::new())
            }
        } else {
            particles = ps;
            lw = ws;
            None
        };
        selected_prev = selected;
        records.push(StepRecord {
            t,
            weighted,
            unweighted,
            ess,
            max_weight,
            log_mean_weight,
            selected,
        });
    }
    Ok(FilterTrace {
        steps: records,
        functional_names: functionals.iter().map(|f| f.name().to_string()).collect(),
    })
}

/// Run one filter; bit-reproducible for a fixed `(seed, stream)`.
pub fn run_filter<M: Model>(
    model: &M,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
) -> Result<FilterTrace> {
    run_filter_observed(model, config, functionals, |_| {})
}

/// Sequential importance sampling: weights accumulate multiplicatively and
/// particles are never resampled.
pub fn run_sis<M: Model>(
    model: &M,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
) -> Result<FilterTrace> {
    if config.schedule != Schedule::Never {
        return Err(SmcError::invalid("run_sis needs the `never` selection schedule"));
    }
    run_filter(model, config, functionals)
}

/// SIS run that also returns the cumulative log weights of every particle
/// at every step (`[t][j]`).
pub fn run_sis_tracked<M: Model>(
    model: &M,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
) -> Result<(FilterTrace, Vec<Vec<f64>>)> {
    if config.schedule != Schedule::Never {
        return Err(SmcError::invalid("run_sis_tracked needs the `never` selection schedule"));
    }
    let mut log_weights = Vec::with_capacity(config.steps + 1);
    let trace = run_filter_observed(model, config, functionals, |s| {
        log_weights.push(s.log_weights().to_vec())
    })?;
    Ok((trace, log_weights))
}

/// Joint filter on `(xi, lambda)` and marginal filter on `xi` sharing the
/// selection scheme and configuration. The functionals are defined on the
/// marginal state, so they cannot depend on `lambda`; the joint filter sees
/// them through `project`. The two filters use independent streams.
pub fn run_marginal_pair<J, M>(
    joint: &J,
    marginal: &M,
    project: fn(&J::State) -> &M::State,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
) -> Result<(FilterTrace, FilterTrace)>
where
    J: Model,
    M: Model,
    J::State: 'static,
    M::State: 'static,
{
    let lifted: Vec<Functional<J::State>> = functionals.iter().map(|f| f.map_state(project)).collect();
    let joint_config = config.clone().with_stream(config.stream.wrapping_mul(2));
    let marginal_config = config.clone().with_stream(config.stream.wrapping_mul(2).wrapping_add(1));
    let joint_trace = run_filter(joint, &joint_config, &lifted)?;
    let marginal_trace = run_filter(marginal, &marginal_config, functionals)?;
    Ok((joint_trace, marginal_trace))
}

/// Mean and across-replicate variance of one estimator at one step.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMoments {
    pub t: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionalSummary {
    pub name: String,
    /// `k x d` final weighted estimates.
    pub final_estimates: Vec<Vec<f64>>,
    /// `k x d` final post-selection estimates, when the last step selected.
    pub final_unweighted: Option<Vec<Vec<f64>>>,
    pub pooled_mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub weighted_trajectory: Vec<StepMoments>,
    pub unweighted_trajectory: Vec<StepMoments>,
}

/// Averaged estimator over `k` independent filters plus the empirical
/// variance of the `k` estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateSummary {
    pub k: usize,
    pub functionals: Vec<FunctionalSummary>,
    pub traces: Vec<FilterTrace>,
}

fn moments(values: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = values[0].len();
    let mut mean = Vec::with_capacity(d);
    let mut var = Vec::with_capacity(d);
    for c in 0..d {
        let col: Vec<f64> = values.iter().map(|v| v[c]).collect();
        mean.push(sum::mean(&col));
        var.push(sum::sample_variance(&col));
    }
    (mean, var)
}

/// `k` independent replicates on streams `config.stream + i`.
pub fn run_replicates<M: Model>(
    model: &M,
    config: &FilterConfig,
    functionals: &[Functional<M::State>],
    k: usize,
) -> Result<ReplicateSummary> {
    if k < 2 {
        return Err(SmcError::invalid("at least two replicates are needed"));
    }
    config.validate()?;
    let traces = par::try_map_range(k, |i| {
        let cfg = config.clone().with_stream(config.stream.wrapping_add(i as u64));
        run_filter(model, &cfg, functionals).map_err(|e| SmcError::Replicate {
            replicate: i,
            source: Box::new(e),
        })
    })?;
    Ok(summarize(functionals, traces))
}

pub fn summarize<S>(functionals: &[Functional<S>], traces: Vec<FilterTrace>) -> ReplicateSummary {
    let k = traces.len();
    let steps = traces[0].steps.len();
    let mut summaries = Vec::with_capacity(functionals.len());
    for (fi, phi) in functionals.iter().enumerate() {
        let mut weighted_trajectory = Vec::new();
        let mut unweighted_trajectory = Vec::new();
        for t in 0..steps {
            let rec0 = &traces[0].steps[t];
            if !rec0.weighted.is_empty() {
                let vals: Vec<Vec<f64>> = traces.iter().map(|tr| tr.steps[t].weighted[fi].clone()).collect();
                let (mean, variance) = moments(&vals);
                weighted_trajectory.push(StepMoments { t, mean, variance });
            }
            if rec0.unweighted.as_ref().is_some_and(|u| !u.is_empty()) {
                let vals: Vec<Vec<f64>> = traces
                    .iter()
                    .map(|tr| tr.steps[t].unweighted.as_ref().unwrap()[fi].clone())
                    .collect();
                let (mean, variance) = moments(&vals);
                unweighted_trajectory.push(StepMoments { t, mean, variance });
            }
        }
        let final_estimates: Vec<Vec<f64>> = traces
            .iter()
            .map(|tr| tr.last().weighted.get(fi).cloned().unwrap_or_default())
            .collect();
        let final_unweighted = traces[0]
            .last()
            .unweighted
            .as_ref()
            .filter(|u| !u.is_empty())
            .map(|_| {
                traces
                    .iter()
                    .map(|tr| tr.last().unweighted.as_ref().unwrap()[fi].clone())
                    .collect()
            });
        let (pooled_mean, variance) = if final_estimates[0].is_empty() {
            (Vec::new(), Vec::new())
        } else {
            moments(&final_estimates)
        };
        summaries.push(FunctionalSummary {
            name: phi.name().to_string(),
            final_estimates,
            final_unweighted,
            pooled_mean,
            variance,
            weighted_trajectory,
            unweighted_trajectory,
        });
    }
    ReplicateSummary {
        k,
        functionals: summaries,
        traces,
    }
}

/// Sum of a slice with the crate's fixed reduction order.
pub fn pooled(values: &[f64]) -> f64 {
    values.iter().copied().collect::<NeumaierSum>().value()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Proposal equals target: unit weights, Gaussian random walk.
    struct UnitWeights;

    impl Model for UnitWeights {
        type State = f64;
        type Tuning = ();
        fn horizon(&self) -> usize {
            100
        }
        fn sample_initial(&self, rng: &mut RngStream) -> f64 {
            rng.uniform()
        }
        fn log_initial_weight(&self, _: &f64) -> f64 {
            0.0
        }
        fn tune(&self, _: usize, _: &[f64]) {}
        fn mutate(&self, _: usize, p: &f64, _: &(), rng: &mut RngStream) -> f64 {
            p + rng.uniform() - 0.5
        }
        fn log_weight(&self, _: usize, _: &f64, _: &f64) -> f64 {
            0.0
        }
    }

    /// Deterministic kernel and unit weights: every replicate is identical.
    struct Deterministic;

    impl Model for Deterministic {
        type State = f64;
        type Tuning = ();
        fn horizon(&self) -> usize {
            10
        }
        fn sample_initial(&self, _: &mut RngStream) -> f64 {
            1.0
        }
        fn log_initial_weight(&self, _: &f64) -> f64 {
            0.0
        }
        fn tune(&self, _: usize, _: &[f64]) {}
        fn mutate(&self, t: usize, p: &f64, _: &(), _: &mut RngStream) -> f64 {
            p * 0.5 + t as f64
        }
        fn log_weight(&self, _: usize, _: &f64, _: &f64) -> f64 {
            0.0
        }
    }

    /// Weights collapse to zero at t = 3.
    struct Collapsing;

    impl Model for Collapsing {
        type State = f64;
        type Tuning = ();
        fn horizon(&self) -> usize {
            10
        }
        fn sample_initial(&self, rng: &mut RngStream) -> f64 {
            rng.uniform()
        }
        fn log_initial_weight(&self, _: &f64) -> f64 {
            0.0
        }
        fn tune(&self, _: usize, _: &[f64]) {}
        fn mutate(&self, _: usize, p: &f64, _: &(), _: &mut RngStream) -> f64 {
            *p
        }
        fn log_weight(&self, t: usize, _: &f64, _: &f64) -> f64 {
            if t == 3 {
                f64::NEG_INFINITY
            } else {
                0.0
            }
        }
    }

    #[test]
    fn unit_weights_estimates_agree_with_plain_mean() {
        let cfg = FilterConfig::new(500, 5, SelectionScheme::Multinomial, 3);
        let phi = Functional::<f64>::identity();
        let mut means = Vec::new();
        let trace = run_filter_observed(&UnitWeights, &cfg, std::slice::from_ref(&phi), |s| {
            means.push(plain_mean(s.particles(), &phi).unwrap()[0])
        })
        .unwrap();
        for (rec, m) in trace.steps.iter().zip(&means) {
            assert_eq!(rec.weighted[0][0], *m);
            assert!((rec.ess - 500.0).abs() < 1e-9);
        }
    }

    #[test]
    fn reproducible_with_same_seed() {
        let cfg = FilterConfig::new(300, 8, SelectionScheme::Systematic, 11);
        let phi = [Functional::<f64>::identity()];
        let a = run_filter(&UnitWeights, &cfg, &phi).unwrap();
        let b = run_filter(&UnitWeights, &cfg, &phi).unwrap();
        assert_eq!(a, b);
        let c = run_filter(&UnitWeights, &cfg.clone().with_stream(1), &phi).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn unweighted_slot_only_on_selection_steps() {
        let times: BTreeSet<usize> = [2, 4].into_iter().collect();
        let cfg = FilterConfig::new(50, 5, SelectionScheme::Residual, 1).with_schedule(Schedule::At(times));
        let trace = run_filter(&UnitWeights, &cfg, &[Functional::<f64>::identity()]).unwrap();
        for rec in &trace.steps {
            assert_eq!(rec.unweighted.is_some(), rec.t == 2 || rec.t == 4);
            assert_eq!(rec.selected, rec.t == 2 || rec.t == 4);
        }
    }

    #[test]
    fn collapse_reports_step() {
        let cfg = FilterConfig::new(20, 6, SelectionScheme::Multinomial, 1);
        let err = run_filter(&Collapsing, &cfg, &[]).unwrap_err();
        assert_eq!(err, SmcError::WeightCollapse { t: 3 });
        let err = run_replicates(&Collapsing, &cfg, &[], 3).unwrap_err();
        assert!(matches!(err, SmcError::Replicate { replicate: 0, .. }));
    }

    #[test]
    fn deterministic_model_has_zero_replicate_variance() {
        let cfg = FilterConfig::new(30, 6, SelectionScheme::Multinomial, 5);
        let s = run_replicates(&Deterministic, &cfg, &[Functional::<f64>::identity()], 10).unwrap();
        assert_eq!(s.functionals[0].variance, vec![0.0]);
        let expected = (1..=6).fold(1.0, |x, t| x * 0.5 + t as f64);
        assert_eq!(s.functionals[0].pooled_mean, vec![expected]);
    }

    #[test]
    fn config_validation() {
        let bad = FilterConfig::new(10, 3, SelectionScheme::None, 0).with_schedule(Schedule::EveryStep);
        assert!(bad.validate().is_err());
        let bad = FilterConfig::new(10, 3, SelectionScheme::Multinomial, 0)
            .with_schedule(Schedule::At([5].into_iter().collect()));
        assert!(bad.validate().is_err());
        assert!(FilterConfig::new(0, 3, SelectionScheme::Multinomial, 0).validate().is_err());
        let sir = FilterConfig::new(10, 3, SelectionScheme::Multinomial, 0);
        assert!(run_sis(&UnitWeights, &sir, &[]).is_err());
        let too_long = FilterConfig::new(10, 30, SelectionScheme::Multinomial, 0);
        assert!(run_filter(&Deterministic, &too_long, &[]).is_err());
    }

    #[test]
    fn sis_with_unit_weights_is_iterated_plain_monte_carlo() {
        let cfg = FilterConfig::sis(200, 4, 9);
        let phi = Functional::<f64>::identity();
        let (trace, lw) = run_sis_tracked(&UnitWeights, &cfg, std::slice::from_ref(&phi)).unwrap();
        // replay the same stream by hand
        let mut rng = RngStream::new(9, 0);
        let mut xs: Vec<f64> = (0..200).map(|_| rng.uniform()).collect();
        for t in 0..=4 {
            if t > 0 {
                xs = xs.iter().map(|p| p + rng.uniform() - 0.5).collect();
            }
            assert_eq!(trace.steps[t].weighted[0][0], plain_mean(&xs, &phi).unwrap()[0]);
            assert!(lw[t].iter().all(|w| *w == 0.0));
        }
    }
}
