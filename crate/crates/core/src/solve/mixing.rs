//! Mixing times of policy-induced chains, and their sup/inf over policy
//! classes.

use super::average::solve_average_optimal;
use super::chain::{class_period, policy_transition_matrix, recurrent_classes, stationary_distribution};
use super::SolveError;
use crate::mdp::{deterministic_policy_count, Mdp, Policy};
use serde::Serialize;

/// Cap on `A^S` when a computation must enumerate all deterministic
/// policies.
pub const POLICY_ENUM_CAP: u64 = 4096;

/// Membership tolerance for the argmax set of `q*` when forming the class
/// of average-optimal policies.
pub const ARGMAX_TOL: f64 = 1e-8;

/// Result of a mixing-time computation.
///
/// `tau` is the smallest `t ≥ 1` with
/// `max_s ‖e_s^T P_π^t − ν^T‖₁ ≤ 1/2`, or `None` when the chain is
/// periodic and the distance never drops (the chain "never mixes").
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingReport {
    pub tau: Option<u64>,
    pub stationary: Option<Vec<f64>>,
    pub iterations_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MixingMode {
    /// Supremum of mixing times over all deterministic policies.
    Uniform,
    /// Infimum over average-optimal deterministic policies with a unique
    /// stationary distribution.
    Optimal,
}

/// Mixing time of the chain induced by `pi`.
///
/// Requires a unique stationary distribution (exactly one recurrent
/// class); errors with `NoUniqueStationary` otherwise. A periodic
/// recurrent class keeps worst-start total variation at one forever, so
/// periodicity (detected from cycle-length gcd) reports `tau = None`
/// without iterating. An aperiodic chain that has not mixed within
/// `t_max` steps is a `NonConvergence` error.
pub fn mixing_time(m: &Mdp, pi: &Policy, t_max: u64) -> Result<MixingReport, SolveError> {
    let p = policy_transition_matrix(m, pi);
    let classes = recurrent_classes(&p);
    if classes.recurrent.len() != 1 {
        return Err(SolveError::NoUniqueStationary {
            classes: classes.recurrent.len(),
        });
    }
    let class = &classes.recurrent[0];
    let nu_class = stationary_distribution(&p, class)?;
    let mut nu = vec![0.0f64; m.num_states()];
    for (j, &s) in class.iter().enumerate() {
        nu[s] = nu_class[j];
    }

    if class_period(&p, class) > 1 {
        return Ok(MixingReport {
            tau: None,
            stationary: Some(nu),
            iterations_used: 0,
        });
    }

    let n = m.num_states();
    let mut power = p.clone();
    for t in 1..=t_max {
        let worst = (0..n)
            .map(|s| {
                (0..n)
                    .map(|next| (power[(s, next)] - nu[next]).abs())
                    .sum::<f64>()
            })
            .fold(0.0f64, f64::max);
        if worst <= 0.5 {
            return Ok(MixingReport {
                tau: Some(t),
                stationary: Some(nu),
                iterations_used: t,
            });
        }
        power = &power * &p;
    }
    Err(SolveError::NonConvergence { max_iters: t_max })
}

/// Supremum (`Uniform`) or infimum (`Optimal`) of mixing times over a
/// policy class; `None` encodes an infinite value.
///
/// `Uniform` ranges over all `A^S` deterministic policies and is infinite
/// as soon as any policy never mixes or lacks a unique stationary
/// distribution. `Optimal` ranges over deterministic policies greedy for
/// `q*` (within [`ARGMAX_TOL`]) that have a unique stationary
/// distribution, and is infinite when that set is empty or none of its
/// members mixes.
pub fn policy_class_mixing(
    m: &Mdp,
    mode: MixingMode,
    t_max: u64,
) -> Result<Option<u64>, SolveError> {
    let total = deterministic_policy_count(m.num_states(), m.num_actions());
    if total > POLICY_ENUM_CAP as u128 {
        return Err(SolveError::EnumerationTooLarge {
            required: total,
            cap: POLICY_ENUM_CAP,
        });
    }
    match mode {
        MixingMode::Uniform => {
            let mut worst: u64 = 0;
            for pi in crate::mdp::all_deterministic_policies(m.num_states(), m.num_actions()) {
                match mixing_time(m, &pi, t_max) {
                    Ok(MixingReport { tau: Some(t), .. }) => worst = worst.max(t),
                    Ok(MixingReport { tau: None, .. }) => return Ok(None),
                    Err(SolveError::NoUniqueStationary { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                }
            }
            Ok(Some(worst))
        }
        MixingMode::Optimal => {
            let (_, q, _) = solve_average_optimal(m, 1e-10)?;
            let argmax_sets: Vec<Vec<usize>> = q
                .values
                .iter()
                .map(|row| {
                    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (0..row.len())
                        .filter(|&a| row[a] >= best - ARGMAX_TOL)
                        .collect()
                })
                .collect();
            let mut best: Option<u64> = None;
            for pi in cartesian_policies(&argmax_sets, m.num_actions()) {
                match mixing_time(m, &pi, t_max) {
                    Ok(MixingReport { tau: Some(t), .. }) => {
                        best = Some(best.map_or(t, |b| b.min(t)));
                    }
                    Ok(MixingReport { tau: None, .. }) => {}
                    Err(SolveError::NoUniqueStationary { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(best)
        }
    }
}

/// All policies choosing, at each state, an action from that state's
/// candidate set.
fn cartesian_policies(candidates: &[Vec<usize>], num_actions: usize) -> Vec<Policy> {
    let mut acc: Vec<Vec<usize>> = vec![Vec::new()];
    for set in candidates {
        let mut next = Vec::with_capacity(acc.len() * set.len());
        for prefix in &acc {
            for &a in set {
                let mut row = prefix.clone();
                row.push(a);
                next.push(row);
            }
        }
        acc = next;
    }
    acc.into_iter()
        .map(|actions| Policy::new(actions, num_actions).expect("candidate actions are valid"))
        .collect()
}
