//! Exact variance evaluators for discounted returns.
//!
//! Three routes into the same quantities keep each other honest:
//!
//! * the conditional next-state variance `𝕍_{P_π}[V]` evaluated directly;
//! * the return variance `σ² = 𝕍^π[Σ_t γ^t R_t]` from the variance
//!   Bellman system `σ² = γ²𝕍_{P_π}[V^π_γ] + γ²P_π σ²` (linear solve);
//! * a brute-force enumeration of all length-`T` trajectories for the
//!   finite-horizon variance, which ties the two together through the
//!   multistep identity
//!   `σ² = 𝕍^π[Σ_{t<T} γ^t R_t + γ^T V(S_T)] + γ^{2T} P_π^T σ²`.

use super::{CheckRecord, DiagError};
use crate::mdp::{Mdp, Policy, ValueVector};
use crate::solve::{policy_evaluation_discounted, policy_transition_matrix};
use nalgebra::{DMatrix, DVector};

/// Default cap on the number of support paths enumerated per start state.
pub const DEFAULT_PATH_CAP: u64 = 1_000_000;

const VARIANCE_RESIDUAL_TOL: f64 = 1e-10;

/// The three variance quantities of one `(m, π, γ)` triple.
#[derive(Debug, Clone)]
pub struct VarianceReport {
    pub conditional_variance: ValueVector,
    pub return_variance: ValueVector,
    pub weighted_std_norm: f64,
}

impl VarianceReport {
    pub fn compute(m: &Mdp, pi: &Policy, gamma: f64) -> Result<Self, DiagError> {
        let v = policy_evaluation_discounted(m, pi, gamma)?;
        Ok(VarianceReport {
            conditional_variance: conditional_variance(m, pi, &v)?,
            return_variance: return_variance(m, pi, gamma)?,
            weighted_std_norm: weighted_std_norm(m, pi, gamma)?,
        })
    }
}

/// `𝕍_{P_π}[v]` per state: the variance of `v(S')` for `S' ~ P_π(s, ·)`.
pub fn conditional_variance(m: &Mdp, pi: &Policy, v: &[f64]) -> Result<ValueVector, DiagError> {
    let n = m.num_states();
    if v.len() != n {
        return Err(DiagError::DimensionMismatch(format!(
            "value vector has length {}, model has {} states",
            v.len(),
            n
        )));
    }
    if pi.num_states() != n {
        return Err(DiagError::DimensionMismatch(format!(
            "policy covers {} states, model has {}",
            pi.num_states(),
            n
        )));
    }
    Ok((0..n)
        .map(|s| {
            let row = m.row(s, pi.action(s));
            let mean: f64 = row.iter().zip(v).map(|(&p, &x)| p * x).sum();
            row.iter()
                .zip(v)
                .map(|(&p, &x)| p * (x - mean) * (x - mean))
                .sum()
        })
        .collect())
}

/// The return variance `σ²(s) = 𝕍^π_s[Σ_t γ^t R_t]`, the unique solution
/// of `(I − γ²P_π) σ² = γ²𝕍_{P_π}[V^π_γ]`, checked to residual `1e-10`.
pub fn return_variance(m: &Mdp, pi: &Policy, gamma: f64) -> Result<ValueVector, DiagError> {
    let v = policy_evaluation_discounted(m, pi, gamma)?;
    let w = conditional_variance(m, pi, &v)?;
    let n = m.num_states();
    let p = policy_transition_matrix(m, pi);
    let system = DMatrix::identity(n, n) - gamma * gamma * &p;
    let rhs = DVector::from_iterator(n, w.iter().map(|x| gamma * gamma * x));
    let sigma2 = system
        .lu()
        .solve(&rhs)
        .ok_or(crate::solve::SolveError::SingularSystem { residual: f64::NAN })?;
    let residual = (&rhs - (DMatrix::identity(n, n) - gamma * gamma * &p) * &sigma2).amax();
    if residual > VARIANCE_RESIDUAL_TOL {
        return Err(DiagError::Solve(
            crate::solve::SolveError::SingularSystem { residual },
        ));
    }
    Ok(sigma2.iter().copied().collect())
}

/// `‖(I − γP_π)^{-1} √(𝕍_{P_π}[V^π_γ])‖∞`, the variance parameter
/// controlling the statistical error of empirical planning.
pub fn weighted_std_norm(m: &Mdp, pi: &Policy, gamma: f64) -> Result<f64, DiagError> {
    let v = policy_evaluation_discounted(m, pi, gamma)?;
    let w = conditional_variance(m, pi, &v)?;
    let n = m.num_states();
    let p = policy_transition_matrix(m, pi);
    let system = DMatrix::identity(n, n) - gamma * &p;
    let rhs = DVector::from_iterator(n, w.iter().map(|x| x.max(0.0).sqrt()));
    let x = system
        .lu()
        .solve(&rhs)
        .ok_or(crate::solve::SolveError::SingularSystem { residual: f64::NAN })?;
    Ok(x.amax())
}

/// Exact variance of `Σ_{t<T} γ^t R_t + γ^T v_tail(S_T)` per start state,
/// by exhaustive enumeration of all support trajectories of length `T`
/// with the default path cap.
pub fn finite_horizon_return_variance(
    m: &Mdp,
    pi: &Policy,
    gamma: f64,
    horizon: u32,
    v_tail: &[f64],
) -> Result<ValueVector, DiagError> {
    finite_horizon_return_variance_with_cap(m, pi, gamma, horizon, v_tail, DEFAULT_PATH_CAP)
}

/// As [`finite_horizon_return_variance`] with an explicit cap on the
/// number of positive-probability paths enumerated per start state;
/// larger requests error rather than subsample.
pub fn finite_horizon_return_variance_with_cap(
    m: &Mdp,
    pi: &Policy,
    gamma: f64,
    horizon: u32,
    v_tail: &[f64],
    cap: u64,
) -> Result<ValueVector, DiagError> {
    let n = m.num_states();
    if v_tail.len() != n {
        return Err(DiagError::DimensionMismatch(format!(
            "tail value vector has length {}, model has {} states",
            v_tail.len(),
            n
        )));
    }
    let powers: Vec<f64> = (0..=horizon).map(|t| gamma.powi(t as i32)).collect();
    let mut out = Vec::with_capacity(n);
    for start in 0..n {
        // Two passes: the mean first, then the centered second moment, to
        // avoid cancellation in E[X²] − E[X]².
        let mean = enumerate_paths(m, pi, horizon, v_tail, &powers, start, cap, PathStat::Mean)?;
        let var = enumerate_paths(
            m,
            pi,
            horizon,
            v_tail,
            &powers,
            start,
            cap,
            PathStat::CenteredSecondMoment(mean),
        )?;
        out.push(var);
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum PathStat {
    Mean,
    CenteredSecondMoment(f64),
}

/// DFS over positive-probability paths, accumulating `E[f(X)]` where `X`
/// is the discounted reward of the path plus the discounted tail value.
#[allow(clippy::too_many_arguments)]
fn enumerate_paths(
    m: &Mdp,
    pi: &Policy,
    horizon: u32,
    v_tail: &[f64],
    powers: &[f64],
    start: usize,
    cap: u64,
    stat: PathStat,
) -> Result<f64, DiagError> {
    fn go(
        m: &Mdp,
        pi: &Policy,
        horizon: u32,
        v_tail: &[f64],
        powers: &[f64],
        cap: u64,
        stat: PathStat,
        s: usize,
        depth: u32,
        prob: f64,
        reward_acc: f64,
        paths: &mut u64,
    ) -> Result<f64, DiagError> {
        if depth == horizon {
            *paths += 1;
            if *paths > cap {
                return Err(DiagError::EnumerationTooLarge { paths: *paths, cap });
            }
            let x = reward_acc + powers[horizon as usize] * v_tail[s];
            return Ok(match stat {
                PathStat::Mean => prob * x,
                PathStat::CenteredSecondMoment(mean) => prob * (x - mean) * (x - mean),
            });
        }
        let a = pi.action(s);
        let step_reward = powers[depth as usize] * m.reward(s, a);
        let mut acc = 0.0;
        for (next, &p) in m.row(s, a).iter().enumerate() {
            if p > 0.0 {
                acc += go(
                    m,
                    pi,
                    horizon,
                    v_tail,
                    powers,
                    cap,
                    stat,
                    next,
                    depth + 1,
                    prob * p,
                    reward_acc + step_reward,
                    paths,
                )?;
            }
        }
        Ok(acc)
    }
    let mut paths = 0u64;
    go(
        m, pi, horizon, v_tail, powers, cap, stat, start, 0, 1.0, 0.0, &mut paths,
    )
}

/// Verifies the multistep variance identity
/// `σ² = 𝕍^π[Σ_{t<T} γ^t R_t + γ^T V(S_T)] + γ^{2T} P_π^T σ²`
/// elementwise (residual tolerance `1e-8`) and its consequence
/// `‖σ²‖∞ ≤ ‖𝕍^π[Σ_{t<T} + γ^T V(S_T)]‖∞ / (1 − γ^{2T})`, with the
/// finite-horizon side evaluated by path enumeration.
pub fn check_multistep_variance_identity(
    m: &Mdp,
    pi: &Policy,
    gamma: f64,
    horizon: u32,
) -> Result<Vec<CheckRecord>, DiagError> {
    let v = policy_evaluation_discounted(m, pi, gamma)?;
    let sigma2 = return_variance(m, pi, gamma)?;
    let fh = finite_horizon_return_variance(m, pi, gamma, horizon, &v)?;

    let n = m.num_states();
    let p = policy_transition_matrix(m, pi);
    let mut p_t = DMatrix::identity(n, n);
    for _ in 0..horizon {
        p_t = &p_t * &p;
    }
    let sigma_vec = DVector::from_iterator(n, sigma2.iter().copied());
    let propagated = &p_t * &sigma_vec;
    let decay = gamma.powi(2 * horizon as i32);

    let residual = (0..n)
        .map(|s| (sigma2[s] - (fh[s] + decay * propagated[s])).abs())
        .fold(0.0f64, f64::max);
    let identity = CheckRecord::bound("multistep_variance_identity_residual", residual, 1e-8);

    let lhs = sigma2.iter().copied().fold(0.0f64, f64::max);
    let fh_max = fh.iter().copied().fold(0.0f64, f64::max);
    let inequality = CheckRecord::bound(
        "multistep_variance_truncation_bound",
        lhs,
        fh_max / (1.0 - decay),
    );
    Ok(vec![identity, inequality])
}

/// Verifies the elementary horizon inequality: for integer `H ≥ 1` and
/// `γ ∈ [1 − 1/H, 1)`, the series `(1 − γ^{2H})/(1 − γ)` is at least
/// `(1 − e^{-2})·H`, itself at least `(4/5)·H`.
pub fn check_horizon_inequality(h: u32, gamma: f64) -> Result<Vec<CheckRecord>, DiagError> {
    if h < 1 {
        return Err(DiagError::HypothesisViolated(
            "horizon must be a positive integer".into(),
        ));
    }
    if !(gamma < 1.0 && gamma >= 1.0 - 1.0 / h as f64) {
        return Err(DiagError::HypothesisViolated(format!(
            "discount {gamma} outside [1 - 1/{h}, 1)"
        )));
    }
    let series = (1.0 - gamma.powi(2 * h as i32)) / (1.0 - gamma);
    let tight = (1.0 - (-2.0f64).exp()) * h as f64;
    Ok(vec![
        CheckRecord::bound("discount_series_lower_bound_tight", tight, series),
        CheckRecord::bound("discount_series_lower_bound_coarse", 0.8 * h as f64, tight),
        CheckRecord::bound("discount_series_lower_bound_chain", 0.8 * h as f64, series),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn coin_row() -> (Mdp, Policy) {
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![0.5, 0.5]], vec![vec![0.5, 0.5]]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        (m, pi)
    }

    fn deterministic_cycle() -> (Mdp, Policy) {
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        (m, pi)
    }

    #[test]
    fn point_mass_rows_have_zero_conditional_variance() {
        let (m, pi) = deterministic_cycle();
        let v = vec![3.0, -1.0];
        assert_eq!(conditional_variance(&m, &pi, &v).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn coin_conditional_variance() {
        let (m, pi) = coin_row();
        let v = vec![0.0, 2.0];
        let out = conditional_variance(&m, &pi, &v).unwrap();
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_vector_has_zero_conditional_variance() {
        let (m, pi) = coin_row();
        let out = conditional_variance(&m, &pi, &[5.0, 5.0]).unwrap();
        assert!(out.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (m, pi) = coin_row();
        assert!(matches!(
            conditional_variance(&m, &pi, &[1.0]),
            Err(DiagError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn deterministic_trajectories_have_zero_return_variance() {
        // The cycle's rewards differ by state, but the trajectory from any
        // start is deterministic.
        let (m, pi) = deterministic_cycle();
        let sigma2 = return_variance(&m, &pi, 0.7).unwrap();
        assert!(sigma2.iter().all(|&x| x.abs() < 1e-12), "{sigma2:?}");
    }

    #[test]
    fn weighted_std_norm_zero_for_deterministic_chain() {
        let (m, pi) = deterministic_cycle();
        assert!(weighted_std_norm(&m, &pi, 0.9).unwrap() < 1e-12);
    }

    #[test]
    fn weighted_std_norm_respects_operator_bound() {
        for seed in [1u64, 2, 3] {
            let m = crate::harness::generate_garnet(3, 2, 2, seed).unwrap();
            let pi = Policy::new(vec![0, 1, 0], 2).unwrap();
            let gamma = 0.9;
            let v = policy_evaluation_discounted(&m, &pi, gamma).unwrap();
            let w = conditional_variance(&m, &pi, &v).unwrap();
            let bound = w.iter().map(|x| x.sqrt()).fold(0.0f64, f64::max) / (1.0 - gamma);
            let got = weighted_std_norm(&m, &pi, gamma).unwrap();
            assert!(got <= bound + 1e-9, "{got} > {bound}");
        }
    }

    #[test]
    fn weighted_std_norm_matches_neumann_series() {
        let m = crate::harness::generate_garnet(3, 2, 3, 17).unwrap();
        let pi = Policy::new(vec![1, 0, 1], 2).unwrap();
        let gamma = 0.9;
        let v = policy_evaluation_discounted(&m, &pi, gamma).unwrap();
        let w = conditional_variance(&m, &pi, &v).unwrap();
        let p = policy_transition_matrix(&m, &pi);
        // Truncated Σ_t (γP)^t √w.
        let sqrt_w = DVector::from_iterator(3, w.iter().map(|x| x.sqrt()));
        let mut acc = DVector::zeros(3);
        let mut term = sqrt_w.clone();
        for _ in 0..10_000 {
            acc += &term;
            term = gamma * (&p * &term);
        }
        let expected = acc.amax();
        let got = weighted_std_norm(&m, &pi, gamma).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-6);
    }

    #[test]
    fn finite_horizon_degenerate_cases() {
        let (m, pi) = deterministic_cycle();
        // T = 0: X = v_tail(start), constant.
        let out = finite_horizon_return_variance(&m, &pi, 0.5, 0, &[2.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        // T = 1 with deterministic transitions: still constant.
        let out = finite_horizon_return_variance(&m, &pi, 0.5, 1, &[2.0, 7.0]).unwrap();
        assert!(out.iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn finite_horizon_coin_variance() {
        // One step, zero rewards, γ = 0.5, tail (0, 2): variance
        // γ²·𝕍[v_tail(S₁)] = 0.25·1 = 0.25.
        let (m, pi) = coin_row();
        let out = finite_horizon_return_variance(&m, &pi, 0.5, 1, &[0.0, 2.0]).unwrap();
        assert_abs_diff_eq!(out[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn finite_horizon_approaches_return_variance() {
        // Sparse support keeps the T = 30 enumeration tiny; truncation
        // error is γ^{2T}/(1−γ)² ≈ 3.5e-18.
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![0.5, 0.5]], vec![vec![0.0, 1.0]]],
            vec![vec![0.3], vec![0.8]],
        )
        .unwrap();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        let gamma = 0.5;
        let sigma2 = return_variance(&m, &pi, gamma).unwrap();
        let v = policy_evaluation_discounted(&m, &pi, gamma).unwrap();
        let fh = finite_horizon_return_variance(&m, &pi, gamma, 30, &v).unwrap();
        for s in 0..2 {
            assert_abs_diff_eq!(sigma2[s], fh[s], epsilon = 1e-9);
        }
    }

    #[test]
    fn path_cap_is_enforced() {
        let (m, pi) = coin_row();
        let err = finite_horizon_return_variance_with_cap(&m, &pi, 0.5, 10, &[0.0, 0.0], 100)
            .unwrap_err();
        assert!(matches!(err, DiagError::EnumerationTooLarge { .. }));
    }

    #[test]
    fn multistep_identity_on_deterministic_instance() {
        let (m, pi) = deterministic_cycle();
        let recs = check_multistep_variance_identity(&m, &pi, 0.6, 3).unwrap();
        assert!(recs.iter().all(|r| r.passed()), "{recs:?}");
        assert!(recs[0].lhs < 1e-12);
    }

    #[test]
    fn multistep_identity_on_random_chain() {
        let m = crate::harness::generate_garnet(3, 1, 2, 2024).unwrap();
        let pi = Policy::new(vec![0, 0, 0], 1).unwrap();
        let recs = check_multistep_variance_identity(&m, &pi, 0.6, 3).unwrap();
        assert!(recs[0].lhs <= 1e-8, "residual {}", recs[0].lhs);
        assert!(recs.iter().all(|r| r.passed()), "{recs:?}");
    }

    #[test]
    fn one_step_identity_reduces_to_variance_bellman() {
        let m = crate::harness::generate_garnet(4, 2, 3, 5).unwrap();
        let pi = Policy::new(vec![0, 1, 1, 0], 2).unwrap();
        let recs = check_multistep_variance_identity(&m, &pi, 0.8, 1).unwrap();
        assert!(recs[0].lhs <= 1e-10, "residual {}", recs[0].lhs);
    }

    #[test]
    fn horizon_inequality_examples() {
        let recs = check_horizon_inequality(1, 0.0).unwrap();
        assert_abs_diff_eq!(recs[0].rhs, 1.0, epsilon = 1e-12);
        assert!(recs[0].lhs <= 0.8647);
        assert!(recs.iter().all(|r| r.passed()));

        let recs = check_horizon_inequality(2, 0.5).unwrap();
        assert_abs_diff_eq!(recs[0].rhs, 1.875, epsilon = 1e-12);
        assert!(recs[2].lhs == 1.6 && recs[2].rhs == 1.875);
        assert!(recs.iter().all(|r| r.passed()));

        assert!(matches!(
            check_horizon_inequality(1, -0.1),
            Err(DiagError::HypothesisViolated(_))
        ));
    }
}
