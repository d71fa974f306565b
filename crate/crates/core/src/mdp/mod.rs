//! Core data model: finite MDPs, deterministic policies, the span
//! semi-norm, validation, and the on-disk document format.
//!
//! An MDP is a transition tensor `P[s][a][s']` together with a reward
//! matrix `r[s][a]`, rewards in `[0, 1]`. Every transition row must sum to
//! one within [`ROW_SUM_TOL`]; generators are expected to renormalize rows
//! exactly before emitting (see `harness::renormalize_row_exact`).

mod mec;

pub use mec::{is_weakly_communicating, mec_decomposition, MecComponent, MecDecomposition};

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// A real-valued vector indexed by state, used for values `V`, biases `h`
/// and gains `ρ` alike.
pub type ValueVector = Vec<f64>;

/// Absolute tolerance on transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("transition row ({s},{a}) sums to {sum:.17}, not 1")]
    RowNotStochastic { s: usize, a: usize, sum: f64 },
    #[error("{field}{index} = {value} lies outside [0,1]")]
    ValueOutOfRange {
        field: &'static str,
        index: String,
        value: f64,
    },
    #[error("model must have at least one state and one action")]
    EmptyModel,
    #[error("span of an empty vector is undefined")]
    EmptyVector,
    #[error("malformed {field}: {detail}")]
    BadShape {
        field: &'static str,
        detail: String,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("policy assigns action {action} at state {s}, valid range is [0,{num_actions})")]
    BadPolicyAction {
        s: usize,
        action: usize,
        num_actions: usize,
    },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A finite MDP with `S` states, `A` actions, transition tensor
/// `P[s][a][s']` and reward matrix `r[s][a]` with entries in `[0, 1]`.
///
/// Instances are immutable after construction and validated on every
/// construction path, so downstream code may assume the invariants hold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mdp {
    num_states: usize,
    num_actions: usize,
    transitions: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<f64>>,
}

impl Mdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        let m = Mdp {
            num_states,
            num_actions,
            transitions,
            rewards,
        };
        m.validate()?;
        Ok(m)
    }

    /// Internal constructor for models whose rewards escape `[0, 1]`
    /// (perturbed rewards reach `1 + ξ`). Transition invariants still hold.
    pub(crate) fn with_unchecked_rewards(
        num_states: usize,
        num_actions: usize,
        transitions: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        let m = Mdp {
            num_states,
            num_actions,
            transitions,
            rewards,
        };
        m.check_shapes()?;
        m.check_transitions()?;
        Ok(m)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// The transition row `P(· | s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        &self.transitions[s][a]
    }

    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[s][a][next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s][a]
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn transitions(&self) -> &[Vec<Vec<f64>>] {
        &self.transitions
    }

    /// Same kernel, different reward matrix. Rewards are not range-checked;
    /// used for perturbed-reward planning.
    pub(crate) fn with_rewards_for_planning(
        &self,
        rewards: Vec<Vec<f64>>,
    ) -> Result<Self, MdpError> {
        Mdp::with_unchecked_rewards(
            self.num_states,
            self.num_actions,
            self.transitions.clone(),
            rewards,
        )
    }

    fn check_shapes(&self) -> Result<(), MdpError> {
        if self.num_states == 0 || self.num_actions == 0 {
            return Err(MdpError::EmptyModel);
        }
        if self.transitions.len() != self.num_states {
            return Err(MdpError::BadShape {
                field: "transitions",
                detail: format!(
                    "expected {} state entries, found {}",
                    self.num_states,
                    self.transitions.len()
                ),
            });
        }
        for (s, per_action) in self.transitions.iter().enumerate() {
            if per_action.len() != self.num_actions {
                return Err(MdpError::BadShape {
                    field: "transitions",
                    detail: format!(
                        "state {} has {} action rows, expected {}",
                        s,
                        per_action.len(),
                        self.num_actions
                    ),
                });
            }
            for (a, row) in per_action.iter().enumerate() {
                if row.len() != self.num_states {
                    return Err(MdpError::BadShape {
                        field: "transitions",
                        detail: format!(
                            "row ({s},{a}) has length {}, expected {}",
                            row.len(),
                            self.num_states
                        ),
                    });
                }
            }
        }
        if self.rewards.len() != self.num_states
            || self.rewards.iter().any(|r| r.len() != self.num_actions)
        {
            return Err(MdpError::BadShape {
                field: "rewards",
                detail: format!("expected shape [{}][{}]", self.num_states, self.num_actions),
            });
        }
        Ok(())
    }

    fn check_transitions(&self) -> Result<(), MdpError> {
        for (s, per_action) in self.transitions.iter().enumerate() {
            for (a, row) in per_action.iter().enumerate() {
                for (next, &p) in row.iter().enumerate() {
                    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                        return Err(MdpError::ValueOutOfRange {
                            field: "transitions",
                            index: format!("[{s}][{a}][{next}]"),
                            value: p,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(MdpError::RowNotStochastic { s, a, sum });
                }
            }
        }
        Ok(())
    }

    fn check_rewards(&self) -> Result<(), MdpError> {
        for (s, per_action) in self.rewards.iter().enumerate() {
            for (a, &r) in per_action.iter().enumerate() {
                if !(0.0..=1.0).contains(&r) || !r.is_finite() {
                    return Err(MdpError::ValueOutOfRange {
                        field: "rewards",
                        index: format!("[{s}][{a}]"),
                        value: r,
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks every structural invariant: shapes, `S, A ≥ 1`, probabilities
    /// and rewards in `[0, 1]`, and row sums within [`ROW_SUM_TOL`] of one.
    pub fn validate(&self) -> Result<(), MdpError> {
        self.check_shapes()?;
        self.check_transitions()?;
        self.check_rewards()
    }
}

/// Free-function form of [`Mdp::validate`], for documents deserialized
/// outside [`codec_load`].
pub fn validate_mdp(m: &Mdp) -> Result<(), MdpError> {
    m.validate()
}

/// The span semi-norm `sp(v) = max(v) − min(v)`.
///
/// Shift-invariant: `sp(v + α·1) = sp(v)`; zero exactly on constant
/// vectors.
pub fn span(v: &[f64]) -> Result<f64, MdpError> {
    if v.is_empty() {
        return Err(MdpError::EmptyVector);
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}

/// A deterministic stationary policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>, num_actions: usize) -> Result<Self, MdpError> {
        if actions.is_empty() {
            return Err(MdpError::EmptyModel);
        }
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(MdpError::BadPolicyAction {
                    s,
                    action: a,
                    num_actions,
                });
            }
        }
        Ok(Policy { actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn num_states(&self) -> usize {
        self.actions.len()
    }
}

/// Enumerates all `A^S` deterministic policies in lexicographic order
/// (state 0 is the least significant digit).
pub fn all_deterministic_policies(
    num_states: usize,
    num_actions: usize,
) -> impl Iterator<Item = Policy> {
    let total = (num_actions as u128).pow(num_states as u32);
    (0..total).map(move |mut k| {
        let mut actions = vec![0usize; num_states];
        for slot in actions.iter_mut() {
            *slot = (k % num_actions as u128) as usize;
            k /= num_actions as u128;
        }
        Policy { actions }
    })
}

/// Number of deterministic policies `A^S`, without overflow.
pub fn deterministic_policy_count(num_states: usize, num_actions: usize) -> u128 {
    (num_actions as u128).pow(num_states as u32)
}

/// Serializes an MDP to its JSON document form.
///
/// Probabilities and rewards are written at full round-trip precision, so
/// `codec_load_str(codec_save(m)) == m` bit-exactly.
pub fn codec_save(m: &Mdp) -> String {
    let mut out = serde_json::to_string_pretty(m).expect("MDP serialization cannot fail");
    out.push('\n');
    out
}

/// Parses and validates an MDP document from text.
pub fn codec_load_str(text: &str) -> Result<Mdp, MdpError> {
    let m: Mdp = serde_json::from_str(text).map_err(|e| MdpError::Parse(e.to_string()))?;
    // Shape problems (ragged rows and the like) are document defects, not
    // model invariant violations.
    m.check_shapes().map_err(|e| match e {
        MdpError::BadShape { field, detail } => MdpError::Parse(format!("{field}: {detail}")),
        other => other,
    })?;
    m.validate()?;
    Ok(m)
}

/// Reads and validates an MDP document from disk.
pub fn codec_load(path: &Path) -> Result<Mdp, MdpError> {
    let text = std::fs::read_to_string(path)?;
    codec_load_str(&text)
}
