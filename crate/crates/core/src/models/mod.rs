//! Model families with exact oracles.

pub mod beta_bernoulli;
pub mod finite_hmm;
pub mod linear_gaussian;
pub mod marginal_pair;

pub use beta_bernoulli::{BetaBernoulliFilter, BetaBernoulliModel};
pub use finite_hmm::{FiniteHmm, ForwardResult, HmmFilter, MixingConstants};
pub use linear_gaussian::{GaussianMoments, LinearGaussianSsm};
pub use marginal_pair::{xi_of, JointPairFilter, MarginalFilter, MarginalPairModel};
