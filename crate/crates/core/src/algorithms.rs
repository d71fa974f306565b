//! Model-based planning from generative samples.
//!
//! The discounted planner draws `n` next-state samples per state-action
//! pair, perturbs each reward by an independent Uniform(0, ξ) offset with
//! `ξ = (1−γ)ε/6`, and solves the perturbed empirical discounted MDP
//! `(P̂, r̃, γ)` exactly. The average-reward planner reduces to it: with a
//! span bound `H ≥ sp(h*)` and target accuracy `ε`, it plans on the same
//! samples at discount `γ̄ = 1 − ε/(12H)` with target accuracy `H`.

use crate::generative::{
    derive_stream_seed, unit_uniform, GenError, GenerativeModel, SeedStream, DOMAIN_PERTURB,
};
use crate::mdp::{Mdp, Policy};
use crate::solve::{solve_discounted_optimal, SolveError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AlgError {
    #[error("perturbation width must be nonnegative, got {xi}")]
    NegativePerturbation { xi: f64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Mdp(#[from] crate::mdp::MdpError),
}

/// Configuration of the discounted planner.
#[derive(Debug, Clone, PartialEq)]
pub struct Alg1Config {
    /// Samples per state-action pair.
    pub n: u64,
    /// Target accuracy, in `(0, H]` for the guarantee to apply.
    pub epsilon: f64,
    /// Discount factor in `(0, 1)`.
    pub gamma: f64,
    /// Seed of the reward-perturbation stream.
    pub seed: u64,
    /// Trial index, kept distinct across concurrent runs.
    pub trial: u64,
}

/// Configuration of the average-reward reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct Alg2Config {
    pub n: u64,
    /// Target accuracy on the gain, in `(0, 1]`.
    pub epsilon: f64,
    /// Any upper bound on the optimal bias span, at least 1.
    pub span_bound: f64,
    pub seed: u64,
    pub trial: u64,
}

/// Artifacts of a planning run, for diagnostics.
#[derive(Debug, Clone)]
pub struct Alg1Trace {
    /// The perturbed empirical model `(P̂, r̃)` actually solved.
    pub planted: Mdp,
    /// The perturbation width `ξ = (1−γ)ε/6`.
    pub xi: f64,
    /// The perturbed rewards `r̃`.
    pub perturbed_rewards: Vec<Vec<f64>>,
}

/// Adds an independent Uniform(0, xi) offset to every reward entry, drawn
/// from the perturbation stream for `(seed, trial)`. With `xi = 0` the
/// rewards are returned bit-identically.
pub fn perturb_rewards(
    rewards: &[Vec<f64>],
    xi: f64,
    seed: u64,
    trial: u64,
) -> Result<Vec<Vec<f64>>, AlgError> {
    if xi < 0.0 || !xi.is_finite() {
        return Err(AlgError::NegativePerturbation { xi });
    }
    Ok(rewards
        .iter()
        .enumerate()
        .map(|(s, row)| {
            row.iter()
                .enumerate()
                .map(|(a, &r)| {
                    let stream_seed = derive_stream_seed(
                        seed,
                        &[DOMAIN_PERTURB, trial, s as u64, a as u64],
                    );
                    let u = unit_uniform(SeedStream::new(stream_seed).draw(0));
                    r + u * xi
                })
                .collect()
        })
        .collect())
}

/// Perturbed empirical model-based planning for a discounted MDP:
/// samples, perturbs, solves `(P̂, r̃, γ)` exactly, and returns the
/// optimal policy of the perturbed empirical model.
pub fn run_algorithm1(g: &GenerativeModel, cfg: &Alg1Config) -> Result<Policy, AlgError> {
    run_algorithm1_traced(g, cfg).map(|(pi, _)| pi)
}

/// As [`run_algorithm1`], also returning the solved empirical model.
pub fn run_algorithm1_traced(
    g: &GenerativeModel,
    cfg: &Alg1Config,
) -> Result<(Policy, Alg1Trace), AlgError> {
    if !(cfg.epsilon > 0.0) {
        return Err(AlgError::BadConfig(format!(
            "target accuracy must be positive, got {}",
            cfg.epsilon
        )));
    }
    if !(cfg.gamma > 0.0 && cfg.gamma < 1.0) {
        return Err(AlgError::BadConfig(format!(
            "discount factor must lie in (0,1), got {}",
            cfg.gamma
        )));
    }
    let empirical = g.build_empirical_model(cfg.n, cfg.trial)?;
    let xi = (1.0 - cfg.gamma) * cfg.epsilon / 6.0;
    let perturbed_rewards = perturb_rewards(g.mdp().rewards(), xi, cfg.seed, cfg.trial)?;
    let planted = empirical
        .kernel()
        .with_rewards_for_planning(perturbed_rewards.clone())?;
    let tol = 1e-10 * (1.0 - cfg.gamma);
    let (_, policy) = solve_discounted_optimal(&planted, cfg.gamma, tol)?;
    Ok((
        policy,
        Alg1Trace {
            planted,
            xi,
            perturbed_rewards,
        },
    ))
}

/// Average-reward planning by reduction: plans at discount
/// `γ̄ = 1 − ε/(12H)` with target accuracy `H` on the same samples.
pub fn run_algorithm2(g: &GenerativeModel, cfg: &Alg2Config) -> Result<Policy, AlgError> {
    let inner = reduction_config(cfg)?;
    if !crate::mdp::is_weakly_communicating(g.mdp()) {
        return Err(AlgError::Solve(SolveError::NotWeaklyCommunicating));
    }
    run_algorithm1(g, &inner)
}

/// The discounted configuration the reduction delegates to. Exposed so the
/// two call paths can be checked to produce bit-identical policies.
pub fn reduction_config(cfg: &Alg2Config) -> Result<Alg1Config, AlgError> {
    if !(cfg.epsilon > 0.0 && cfg.epsilon <= 1.0) {
        return Err(AlgError::BadConfig(format!(
            "target accuracy must lie in (0,1], got {}",
            cfg.epsilon
        )));
    }
    if !(cfg.span_bound >= 1.0) {
        return Err(AlgError::BadConfig(format!(
            "span bound must be at least 1, got {}",
            cfg.span_bound
        )));
    }
    Ok(Alg1Config {
        n: cfg.n,
        epsilon: cfg.span_bound,
        gamma: 1.0 - cfg.epsilon / (12.0 * cfg.span_bound),
        seed: cfg.seed,
        trial: cfg.trial,
    })
}

/// Which sample-size guarantee to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleBound {
    /// Discounted planning: `n ≥ C·H/((1−γ)²ε²)·ln(SA/((1−γ)δε))`,
    /// applicable when `H ≤ 1/(1−γ)` and `ε ≤ H`.
    Discounted { gamma: f64 },
    /// Average-reward planning: `n ≥ C·H/ε²·ln(SA/(δε))`.
    Average,
}

/// Per-pair sample size from the chosen guarantee with caller-supplied
/// leading constant `c` (the guarantees only assert existence of a
/// constant; desk-scale runs calibrate one). Natural logarithm, result
/// ceiled and clamped to at least 1.
pub fn sample_size(
    bound: SampleBound,
    span: f64,
    epsilon: f64,
    delta: f64,
    num_states: usize,
    num_actions: usize,
    c: f64,
) -> Result<u64, AlgError> {
    if !(span >= 1.0) {
        return Err(AlgError::HypothesisViolated(format!(
            "span bound must be at least 1, got {span}"
        )));
    }
    if !(epsilon > 0.0) {
        return Err(AlgError::HypothesisViolated(format!(
            "accuracy must be positive, got {epsilon}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(AlgError::HypothesisViolated(format!(
            "failure probability must lie in (0,1), got {delta}"
        )));
    }
    if !(c > 0.0) {
        return Err(AlgError::HypothesisViolated(format!(
            "leading constant must be positive, got {c}"
        )));
    }
    let sa = (num_states * num_actions) as f64;
    let raw = match bound {
        SampleBound::Discounted { gamma } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                return Err(AlgError::HypothesisViolated(format!(
                    "discount factor must lie in (0,1), got {gamma}"
                )));
            }
            if span > 1.0 / (1.0 - gamma) + 1e-12 {
                return Err(AlgError::HypothesisViolated(format!(
                    "span {span} exceeds the effective horizon {}",
                    1.0 / (1.0 - gamma)
                )));
            }
            if epsilon > span + 1e-12 {
                return Err(AlgError::HypothesisViolated(format!(
                    "accuracy {epsilon} exceeds the span bound {span}"
                )));
            }
            let horizon = 1.0 - gamma;
            c * span / (horizon * horizon * epsilon * epsilon)
                * (sa / (horizon * delta * epsilon)).ln()
        }
        SampleBound::Average => {
            c * span / (epsilon * epsilon) * (sa / (delta * epsilon)).ln()
        }
    };
    Ok((raw.ceil() as u64).max(1))
}
