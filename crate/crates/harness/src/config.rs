//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smc_core::engine::Schedule;
use smc_core::models::{BetaBernoulliModel, FiniteHmm, LinearGaussianSsm, MarginalPairModel};
use smc_core::{RngStream, SelectionScheme};

/// Usage or configuration problem; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Run,
    CltCheck,
    RateFit,
    Stability,
    CompareSchemes,
    RbCompare,
    WeightDegeneracy,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Run => "run",
            ExperimentKind::CltCheck => "clt-check",
            ExperimentKind::RateFit => "rate-fit",
            ExperimentKind::Stability => "stability",
            ExperimentKind::CompareSchemes => "compare-schemes",
            ExperimentKind::RbCompare => "rb-compare",
            ExperimentKind::WeightDegeneracy => "weight-degeneracy",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub model: ModelConfig,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub functionals: Vec<FunctionalSpec>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_prior() -> f64 {
    2.0
}

fn unit() -> f64 {
    1.0
}

/// Model reference (bundled instance) or inline model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    /// Two-state HMM; observations given or simulated for `steps` steps.
    TwoStateHmm {
        #[serde(default)]
        steps: Option<usize>,
        #[serde(default)]
        observations: Option<Vec<usize>>,
    },
    /// Three-state HMM with verified mixing constants.
    MixingHmm { steps: usize },
    FiniteHmm(FiniteHmm),
    /// AR(1) state observed in unit Gaussian noise.
    Ar1Ssm { steps: usize },
    LinearGaussian(LinearGaussianSsm),
    BetaBernoulli {
        #[serde(default = "default_prior")]
        alpha: f64,
        #[serde(default = "default_prior")]
        beta: f64,
        #[serde(default = "unit")]
        alpha0: f64,
        #[serde(default = "unit")]
        beta0: f64,
        /// Parameter generating the data; defaults to `1/pi`.
        #[serde(default)]
        truth: Option<f64>,
        #[serde(default)]
        observations: Option<Vec<u8>>,
        #[serde(default)]
        steps: Option<usize>,
    },
    MarginalPairExample { steps: usize, exact: bool },
    MarginalPair(MarginalPairModel),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_min: usize,
    pub t_max: usize,
    pub points: usize,
}

fn default_particles() -> usize {
    1000
}

fn default_schemes() -> Vec<SelectionScheme> {
    vec![SelectionScheme::Multinomial]
}

fn default_schedule() -> Schedule {
    Schedule::EveryStep
}

fn default_pairs() -> usize {
    2000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// `H`.
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// `T`; defaults to the model horizon.
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<SelectionScheme>,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    /// `k`, independent filters per estimate.
    #[serde(default)]
    pub replicates: Option<usize>,
    /// `M`, outer Monte Carlo trials.
    #[serde(default)]
    pub trials: Option<usize>,
    /// Particle pairs tracked by the weight-degeneracy experiment.
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    /// Inclusive `[t_lo, t_hi]` window for linear fits.
    #[serde(default)]
    pub fit_window: Option<[usize; 2]>,
    /// Horizon of the contraction check in the stability experiment.
    #[serde(default)]
    pub contraction_horizon: Option<usize>,
    /// Invariant MCMC move after each selection (resample-move), where the
    /// model provides one.
    #[serde(default)]
    pub moves: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for FilterSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FunctionalSpec {
    /// `1{x = state}` on a finite state set.
    Indicator { state: usize },
    /// One value per finite state.
    Table { values: Vec<f64> },
    /// `phi(x) = x` on a real state.
    Identity,
    /// `phi(x) = x^2` on a real state.
    Square,
    Constant { value: f64 },
}

impl FunctionalSpec {
    pub fn name(&self) -> String {
        match self {
            FunctionalSpec::Indicator { state } => format!("indicator_{state}"),
            FunctionalSpec::Table { .. } => "table".into(),
            FunctionalSpec::Identity => "identity".into(),
            FunctionalSpec::Square => "square".into(),
            FunctionalSpec::Constant { .. } => "constant".into(),
        }
    }

    /// Values on `{0, .., n-1}`.
    pub fn table(&self, n: usize) -> anyhow::Result<Vec<f64>> {
        match self {
            FunctionalSpec::Indicator { state } if *state < n => {
                Ok((0..n).map(|x| f64::from(u8::from(x == *state))).collect())
            }
            FunctionalSpec::Indicator { state } => Err(config_error(format!(
                "indicator state {state} outside the {n} model states"
            ))),
            FunctionalSpec::Table { values } if values.len() == n => Ok(values.clone()),
            FunctionalSpec::Table { values } => Err(config_error(format!(
                "table has {} values for {n} states",
                values.len()
            ))),
            FunctionalSpec::Constant { value } => Ok(vec![*value; n]),
            other => Err(config_error(format!(
                "functional `{}` needs a real-valued state",
                other.name()
            ))),
        }
    }

    /// Evaluation rule on a real state.
    pub fn real(&self) -> anyhow::Result<fn(f64, f64) -> f64> {
        match self {
            FunctionalSpec::Identity => Ok(|x, _| x),
            FunctionalSpec::Square => Ok(|x, _| x * x),
            FunctionalSpec::Constant { .. } => Ok(|_, c| c),
            other => Err(config_error(format!(
                "functional `{}` needs a finite state set",
                other.name()
            ))),
        }
    }

    pub fn constant(&self) -> f64 {
        match self {
            FunctionalSpec::Constant { value } => *value,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: Option<Format>,
    /// File stem; defaults to the experiment name.
    #[serde(default)]
    pub stem: Option<String>,
}

pub const DEFAULT_SEED: u64 = 1;

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_error(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let f = &self.filter;
        if f.particles < 10 {
            return Err(config_error("filter.particles (H) must be at least 10"));
        }
        if let Some(k) = f.replicates {
            if k < 2 && self.experiment != ExperimentKind::Run {
                return Err(config_error("filter.replicates (k) must be at least 2"));
            }
        }
        if f.schemes.is_empty() {
            return Err(config_error("filter.schemes must not be empty"));
        }
        match self.experiment {
            ExperimentKind::CltCheck => {
                if f.trials.unwrap_or(0) < 2 {
                    return Err(config_error("clt-check needs filter.trials (M) >= 2"));
                }
            }
            ExperimentKind::RateFit if f.grid.is_none() => {
                return Err(config_error("rate-fit needs filter.grid"));
            }
            ExperimentKind::WeightDegeneracy if f.pairs < 2 => {
                return Err(config_error("weight-degeneracy needs filter.pairs >= 2"));
            }
            _ => {}
        }
        if let Some(g) = &f.grid {
            if g.points < 3 || g.t_min == 0 || g.t_max <= g.t_min {
                return Err(config_error("grid needs 0 < t_min < t_max and at least 3 points"));
            }
        }
        Ok(())
    }

    /// Seed from the command line, then the config, then the default.
    pub fn seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.filter.seed).unwrap_or(DEFAULT_SEED)
    }
}

/// Concrete model built from a [`ModelConfig`].
#[derive(Clone, Debug)]
pub enum BuiltModel {
    Finite(FiniteHmm),
    Gaussian(LinearGaussianSsm),
    Beta { model: BetaBernoulliModel, truth: f64 },
    Pair(MarginalPairModel),
}

fn steps_or(cfg: Option<usize>, filter: Option<usize>, what: &str) -> anyhow::Result<usize> {
    cfg.or(filter)
        .ok_or_else(|| config_error(format!("{what}: number of steps needed (model.steps or filter.steps)")))
}

impl ModelConfig {
    /// Build the model; missing observations are simulated on data stream
    /// `(seed, 0)`.
    pub fn build(&self, filter_steps: Option<usize>, seed: u64) -> anyhow::Result<BuiltModel> {
        let mut data = RngStream::data(seed, 0);
        let built = match self {
            ModelConfig::TwoStateHmm { steps, observations } => {
                let obs = match observations {
                    Some(o) => o.clone(),
                    None => {
                        let n = steps_or(*steps, filter_steps, "two_state_hmm")?;
                        FiniteHmm::two_state(vec![]).simulate(n, &mut data).1
                    }
                };
                BuiltModel::Finite(FiniteHmm::two_state(obs))
            }
            ModelConfig::MixingHmm { steps } => BuiltModel::Finite(FiniteHmm::mixing_instance(*steps, seed)),
            ModelConfig::FiniteHmm(hmm) => {
                let mut hmm = hmm.clone();
                if hmm.observations.is_empty() {
                    if let Some(n) = filter_steps {
                        hmm.observations = hmm.simulate(n, &mut data).1;
                    }
                }
                hmm.validate().map_err(|e| config_error(e.to_string()))?;
                BuiltModel::Finite(hmm)
            }
            ModelConfig::Ar1Ssm { steps } => BuiltModel::Gaussian(LinearGaussianSsm::ar1(*steps, seed)),
            ModelConfig::LinearGaussian(ssm) => {
                let mut ssm = ssm.clone();
                ssm.validate().map_err(|e| config_error(e.to_string()))?;
                if ssm.observations.is_empty() {
                    if let Some(n) = filter_steps {
                        ssm.observations = ssm.simulate(n, &mut data).1;
                    }
                }
                BuiltModel::Gaussian(ssm)
            }
            ModelConfig::BetaBernoulli {
                alpha,
                beta,
                alpha0,
                beta0,
                truth,
                observations,
                steps,
            } => {
                let truth = truth.unwrap_or(std::f64::consts::FRAC_1_PI);
                if !(0.0..=1.0).contains(&truth) {
                    return Err(config_error("beta_bernoulli truth must lie in [0, 1]"));
                }
                let obs = match observations {
                    Some(o) => o.clone(),
                    None => BetaBernoulliModel::simulate(truth, steps_or(*steps, filter_steps, "beta_bernoulli")?, &mut data),
                };
                let model = BetaBernoulliModel::new(*alpha, *beta, *alpha0, *beta0, obs)
                    .map_err(|e| config_error(e.to_string()))?;
                BuiltModel::Beta { model, truth }
            }
            ModelConfig::MarginalPairExample { steps, exact } => {
                BuiltModel::Pair(MarginalPairModel::example(*steps, *exact))
            }
            ModelConfig::MarginalPair(m) => {
                m.validate().map_err(|e| config_error(e.to_string()))?;
                BuiltModel::Pair(m.clone())
            }
        };
        Ok(built)
    }
}

/// Built-in configuration of each experiment, used when no `--config` is
/// given.
pub fn default_config(kind: ExperimentKind) -> ExperimentConfig {
    let text = match kind {
        ExperimentKind::Run => {
            r#"{"model": {"kind": "two_state_hmm", "steps": 20},
                "filter": {"particles": 10000, "replicates": 30}}"#
        }
        ExperimentKind::CltCheck => {
            r#"{"model": {"kind": "two_state_hmm", "steps": 10},
                "filter": {"particles": 10000, "trials": 2000, "schemes": ["multinomial", "residual"]}}"#
        }
        ExperimentKind::RateFit => {
            r#"{"model": {"kind": "beta_bernoulli"},
                "filter": {"grid": {"t_min": 100, "t_max": 10000, "points": 9}}}"#
        }
        ExperimentKind::Stability => {
            r#"{"model": {"kind": "mixing_hmm", "steps": 200},
                "filter": {"contraction_horizon": 20}}"#
        }
        ExperimentKind::CompareSchemes => r#"{"model": {"kind": "two_state_hmm", "steps": 10}}"#,
        ExperimentKind::RbCompare => r#"{"model": {"kind": "marginal_pair_example", "steps": 10, "exact": false}}"#,
        ExperimentKind::WeightDegeneracy => {
            r#"{"model": {"kind": "two_state_hmm", "steps": 200},
                "filter": {"pairs": 2000, "particles": 1000, "fit_window": [10, 200]}}"#
        }
    };
    let mut value: serde_json::Value = serde_json::from_str(text).expect("built-in config is valid JSON");
    value["experiment"] = serde_json::to_value(kind).expect("kind serializes");
    let cfg: ExperimentConfig = serde_json::from_value(value).expect("built-in config parses");
    cfg.validate().expect("built-in config is valid");
    cfg
}
