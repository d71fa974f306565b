//! Average-reward quantities: multichain policy evaluation (gain and
//! bias) and optimal control by relative value iteration.

use super::chain::{cesaro_limit_matrix, policy_rewards, policy_transition_matrix};
use super::SolveError;
use crate::mdp::{is_weakly_communicating, span, Mdp, Policy, ValueVector};
use nalgebra::DMatrix;

const POISSON_RESIDUAL_TOL: f64 = 1e-9;
const RVI_MAX_ITERS: u64 = 2_000_000;

/// Gain vector `ρ`, bias vector `h` normalized so `min h = 0`, and the
/// bias span `H = sp(h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainBias {
    pub gain: ValueVector,
    pub bias: ValueVector,
    pub span_h: f64,
}

/// State-action values of the average-reward optimality equation,
/// normalized jointly with the bias so that `max_a q(s, a) = h(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub values: Vec<Vec<f64>>,
}

/// Exact gain and bias of a policy on a possibly multichain transition
/// matrix.
///
/// The gain is `P*_π r_π` with `P*` the Cesaro-limit matrix (stationary
/// distribution per recurrent class, absorption mixture for transient
/// states); the bias solves the deviation system
/// `(I − P_π + P*_π) h = (I − P*_π) r_π`, which makes both equations of
/// the gain/bias characterization (`ρ = P_π ρ` and `ρ + h = r_π + P_π h`)
/// hold globally.
pub fn gain_bias_of_policy(m: &Mdp, pi: &Policy) -> Result<GainBias, SolveError> {
    let n = m.num_states();
    let p = policy_transition_matrix(m, pi);
    let r = policy_rewards(m, pi);
    let star = cesaro_limit_matrix(&p)?;
    let gain = &star * &r;

    let system = DMatrix::identity(n, n) - &p + &star;
    let rhs = &r - &star * &r;
    let h = system
        .lu()
        .solve(&rhs)
        .ok_or(SolveError::SingularSystem { residual: f64::NAN })?;

    // ρ + h = r + P h and ρ = P ρ must hold everywhere.
    let poisson = (&gain + &h - &r - &p * &h).amax();
    let gain_invariance = (&p * &gain - &gain).amax();
    let residual = poisson.max(gain_invariance);
    if residual > POISSON_RESIDUAL_TOL {
        return Err(SolveError::SingularSystem { residual });
    }

    let min_h = h.min();
    let bias: Vec<f64> = h.iter().map(|x| x - min_h).collect();
    let span_h = span(&bias)?;
    Ok(GainBias {
        gain: gain.iter().copied().collect(),
        bias,
        span_h,
    })
}

/// Optimal average-reward control for weakly communicating MDPs.
///
/// Runs relative value iteration on the aperiodicity-transformed model
/// `P' = ½I + ½P`, `r' = ½r` (the damping halves the gain and leaves the
/// bias unchanged, and is compensated exactly when mapping back). Stops
/// once the optimality-equation residual
/// `max_{s,a} |r(s,a) + (P h)(s,a) − ρ − q(s,a)|` of the mapped candidate
/// drops below `tol/2`.
///
/// Returns the gain (a scalar broadcast to all states), the bias
/// normalized to `min = 0`, the q-function normalized consistently, and
/// the greedy policy with lowest-index tie-breaking.
pub fn solve_average_optimal(
    m: &Mdp,
    tol: f64,
) -> Result<(GainBias, QFunction, Policy), SolveError> {
    if !is_weakly_communicating(m) {
        return Err(SolveError::NotWeaklyCommunicating);
    }
    let n = m.num_states();
    let a_count = m.num_actions();

    let mut h = vec![0.0f64; n];
    let mut q_raw = vec![vec![0.0f64; a_count]; n];
    for _ in 0..RVI_MAX_ITERS {
        // q_raw(s,a) = r(s,a)/2 + ½ h(s) + ½ Σ P(s'|s,a) h(s')
        for s in 0..n {
            for a in 0..a_count {
                let expected: f64 = m
                    .row(s, a)
                    .iter()
                    .zip(&h)
                    .map(|(&p, &val)| p * val)
                    .sum();
                q_raw[s][a] = 0.5 * m.reward(s, a) + 0.5 * h[s] + 0.5 * expected;
            }
        }
        let v_new: Vec<f64> = q_raw
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();

        let diffs: Vec<f64> = v_new.iter().zip(&h).map(|(a, b)| a - b).collect();
        let d_max = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let d_min = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let rho = d_max + d_min; // 2 · gain of the transformed model

        // The (costlier) optimality-equation residual of the mapped
        // candidate q = 2·q_raw − v_new(s) is only worth evaluating once
        // the per-sweep change has flattened.
        let mut residual = f64::INFINITY;
        if d_max - d_min <= tol {
            residual = 0.0;
            for s in 0..n {
                for a in 0..a_count {
                    let q_sa = 2.0 * q_raw[s][a] - v_new[s];
                    let expected: f64 = m
                        .row(s, a)
                        .iter()
                        .zip(&v_new)
                        .map(|(&p, &val)| p * val)
                        .sum();
                    let res = m.reward(s, a) + expected - rho - q_sa;
                    residual = residual.max(res.abs());
                }
            }
        }
        if residual <= 0.5 * tol {
            let min_v = v_new.iter().copied().fold(f64::INFINITY, f64::min);
            let mut q_values = vec![vec![0.0f64; a_count]; n];
            let mut actions = vec![0usize; n];
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                for a in 0..a_count {
                    q_values[s][a] = 2.0 * q_raw[s][a] - v_new[s] - min_v;
                    if q_values[s][a] > best {
                        best = q_values[s][a];
                        actions[s] = a;
                    }
                }
            }
            let bias: Vec<f64> = v_new.iter().map(|x| x - min_v).collect();
            let span_h = span(&bias)?;
            let gain_bias = GainBias {
                gain: vec![rho; n],
                bias,
                span_h,
            };
            let policy = Policy::new(actions, a_count)?;
            return Ok((gain_bias, QFunction { values: q_values }, policy));
        }

        // Normalize to keep the iterates bounded.
        let min_v = v_new.iter().copied().fold(f64::INFINITY, f64::min);
        h = v_new.iter().map(|x| x - min_v).collect();
    }
    Err(SolveError::NonConvergence {
        max_iters: RVI_MAX_ITERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::all_deterministic_policies;
    use approx::assert_abs_diff_eq;

    fn two_state_cycle() -> Mdp {
        Mdp::new(
            2,
            1,
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap()
    }

    #[test]
    fn cycle_gain_and_span() {
        let m = two_state_cycle();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        let gb = gain_bias_of_policy(&m, &pi).unwrap();
        assert_abs_diff_eq!(gb.gain[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gb.gain[1], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gb.span_h, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(gb.bias[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(gb.bias[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn self_loop_gain() {
        let m = Mdp::new(1, 1, vec![vec![vec![1.0]]], vec![vec![0.7]]).unwrap();
        let pi = Policy::new(vec![0], 1).unwrap();
        let gb = gain_bias_of_policy(&m, &pi).unwrap();
        assert_abs_diff_eq!(gb.gain[0], 0.7, epsilon = 1e-12);
        assert_eq!(gb.bias, vec![0.0]);
        assert_eq!(gb.span_h, 0.0);
    }

    #[test]
    fn multichain_per_class_gains() {
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.2], vec![0.9]],
        )
        .unwrap();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        let gb = gain_bias_of_policy(&m, &pi).unwrap();
        assert_abs_diff_eq!(gb.gain[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(gb.gain[1], 0.9, epsilon = 1e-12);
    }

    #[test]
    fn optimal_self_loop_choice() {
        let m = Mdp::new(
            1,
            2,
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![0.2, 0.9]],
        )
        .unwrap();
        let (gb, _, pi) = solve_average_optimal(&m, 1e-10).unwrap();
        assert_eq!(pi.actions(), &[1]);
        assert_abs_diff_eq!(gb.gain[0], 0.9, epsilon = 1e-9);
        assert!(gb.span_h < 1e-9);
    }

    #[test]
    fn cycle_optimal_gain() {
        // Plain value iteration would oscillate on this periodic chain;
        // the damped kernel converges.
        let m = two_state_cycle();
        let (gb, q, pi) = solve_average_optimal(&m, 1e-10).unwrap();
        assert_eq!(pi.actions(), &[0, 0]);
        assert_abs_diff_eq!(gb.gain[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(gb.span_h, 0.5, epsilon = 1e-9);
        // max_a q(s,·) = bias(s) after joint normalization.
        for s in 0..2 {
            let best = q.values[s].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(best, gb.bias[s], epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_non_weakly_communicating() {
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.2], vec![0.9]],
        )
        .unwrap();
        assert!(matches!(
            solve_average_optimal(&m, 1e-9),
            Err(SolveError::NotWeaklyCommunicating)
        ));
    }

    #[test]
    fn optimal_gain_dominates_every_policy() {
        let m = crate::harness::generate_garnet(4, 2, 3, 23).unwrap();
        let (gb, _, _) = solve_average_optimal(&m, 1e-10).unwrap();
        for pi in all_deterministic_policies(4, 2) {
            let g = gain_bias_of_policy(&m, &pi).unwrap();
            for s in 0..4 {
                assert!(
                    gb.gain[s] >= g.gain[s] - 1e-8,
                    "policy {:?} beats the optimum at state {s}",
                    pi.actions()
                );
            }
        }
    }

    #[test]
    fn returned_gain_matches_exact_evaluation_of_returned_policy() {
        for seed in [3u64, 14, 62] {
            let m = crate::harness::generate_garnet(5, 2, 3, seed).unwrap();
            let tol = 1e-9;
            let (gb, _, pi) = solve_average_optimal(&m, tol).unwrap();
            let exact = gain_bias_of_policy(&m, &pi).unwrap();
            for s in 0..5 {
                assert!(
                    (gb.gain[s] - exact.gain[s]).abs() <= tol,
                    "seed {seed}: gain mismatch {} vs {}",
                    gb.gain[s],
                    exact.gain[s]
                );
            }
        }
    }

    #[test]
    fn gain_matches_direct_cesaro_averaging() {
        // Independent oracle: ρ ≈ (1/T) Σ_{t<T} P^t r with O(1/T) error,
        // valid on multichain and periodic chains alike.
        let cases = vec![
            // Periodic cycle.
            two_state_cycle(),
            // Two separate self-loops.
            Mdp::new(
                2,
                1,
                vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
                vec![vec![0.2], vec![0.9]],
            )
            .unwrap(),
            // Transient feeder into a noisy class.
            Mdp::new(
                3,
                1,
                vec![
                    vec![vec![0.0, 0.5, 0.5]],
                    vec![vec![0.0, 0.3, 0.7]],
                    vec![vec![0.0, 0.6, 0.4]],
                ],
                vec![vec![0.0], vec![1.0], vec![0.25]],
            )
            .unwrap(),
        ];
        for m in cases {
            let pi = Policy::new(vec![0; m.num_states()], 1).unwrap();
            let gb = gain_bias_of_policy(&m, &pi).unwrap();
            let p = policy_transition_matrix(&m, &pi);
            let r = policy_rewards(&m, &pi);
            let t_total = 200_000;
            let mut acc = nalgebra::DVector::<f64>::zeros(m.num_states());
            let mut reward_now = r.clone();
            for _ in 0..t_total {
                acc += &reward_now;
                reward_now = &p * &reward_now;
            }
            for s in 0..m.num_states() {
                let avg = acc[s] / t_total as f64;
                assert!(
                    (avg - gb.gain[s]).abs() < 1e-4,
                    "cesaro {avg} vs gain {}",
                    gb.gain[s]
                );
            }
        }
    }

    #[test]
    fn poisson_residual_is_tiny_for_random_policies() {
        for seed in 0..5u64 {
            let m = crate::harness::generate_garnet(5, 3, 2, 100 + seed).unwrap();
            for pi in all_deterministic_policies(5, 3).step_by(41) {
                let gb = gain_bias_of_policy(&m, &pi).unwrap();
                let p = policy_transition_matrix(&m, &pi);
                let r = policy_rewards(&m, &pi);
                for s in 0..5 {
                    let ph: f64 = (0..5).map(|j| p[(s, j)] * gb.bias[j]).sum();
                    let res = gb.gain[s] + gb.bias[s] - r[s] - ph;
                    assert!(res.abs() <= 1e-9, "poisson residual {res} at {s}");
                }
            }
        }
    }
}
