//! Instance auditing: evaluates every applicable structural inequality on
//! a concrete weakly communicating MDP and reports margins.

use super::variance::{return_variance, weighted_std_norm};
use super::{fmt_f64, CheckRecord, CheckStatus, DiagError};
use crate::generative::{derive_stream_seed, SeedStream};
use crate::mdp::{is_weakly_communicating, Mdp, Policy};
use crate::solve::{
    diameter, gain_bias_of_policy, policy_class_mixing, policy_evaluation_discounted,
    solve_average_optimal, solve_discounted_optimal, MixingMode, SolveError,
};
use serde::Serialize;

/// Instance-level quantities an audit computes along the way.
#[derive(Debug, Clone, Serialize)]
pub struct InstanceMeta {
    pub id: String,
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    /// Span of the optimal bias.
    pub span: f64,
    #[serde(serialize_with = "super::ser_f64")]
    pub diameter: f64,
    /// `None` when the policy enumeration was infeasible.
    pub tau_star: Option<TauValue>,
    pub tau_unif: Option<TauValue>,
}

/// A mixing time: finite number of steps, or never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TauValue {
    Finite(u64),
    Infinite,
}

impl TauValue {
    pub fn as_f64(self) -> f64 {
        match self {
            TauValue::Finite(t) => t as f64,
            TauValue::Infinite => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub instance: InstanceMeta,
    pub checks: Vec<CheckRecord>,
}

impl AuditReport {
    pub fn all_passed(&self) -> bool {
        self.checks
            .iter()
            .filter(|c| !c.is_advisory())
            .all(|c| c.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks
            .iter()
            .filter(|c| !c.is_advisory() && c.status == CheckStatus::Fail)
    }
}

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub id: String,
    /// Step cap for mixing-time searches.
    pub t_max: u64,
    /// Sweep cap for hitting-time value iteration.
    pub sweep_cap: u64,
    /// Number of seeded random policies audited alongside the optimal one.
    pub random_policies: usize,
    pub policy_seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            id: "mdp".into(),
            t_max: 10_000,
            sweep_cap: 1_000_000,
            random_policies: 5,
            policy_seed: 0xa0d17,
        }
    }
}

/// Audits one instance at one discount factor.
///
/// Computes the optimal gain, bias span `H`, diameter `D`, the mixing
/// times `τ*` and `τ_unif` (when the `A^S` enumeration is feasible;
/// otherwise the dependent checks degrade to skipped records), and the
/// exact discounted optimum at `gamma`, then records:
///
/// * the variance Bellman residual of every audited policy;
/// * the variance-parameter bound
///   `γ‖(I−γP_π)^{-1}√𝕍_{P_π}[V^π]‖∞ ≤ √(2/(1−γ))·√‖σ²_π‖∞`
///   for the discounted-optimal policy and seeded random policies;
/// * the optimal policy's return-variance bound
///   `‖σ²‖∞ ≤ 5⌈H⌉/(1−γ)` when `γ ≥ 1 − 1/⌈H⌉`;
/// * the discounted value-span bound
///   `max_s |V^{π*_γ}(s) − ρ*/(1−γ)| ≤ H`;
/// * the orderings `H ≤ D`, `H ≤ 8τ*`, `H ≤ 8τ_unif` wherever the right
///   side is available (infinite right sides pass trivially).
pub fn audit_instance(m: &Mdp, gamma: f64, opts: &AuditOptions) -> Result<AuditReport, DiagError> {
    if !is_weakly_communicating(m) {
        return Err(DiagError::Solve(SolveError::NotWeaklyCommunicating));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(DiagError::HypothesisViolated(format!(
            "discount {gamma} outside (0,1)"
        )));
    }
    let (gb_opt, _, _) = solve_average_optimal(m, 1e-10)?;
    let span_h = gb_opt.span_h;
    let rho_star = gb_opt.gain[0];
    let h_int = (span_h.ceil() as u64).max(1);

    let d = diameter(m, opts.sweep_cap)?;
    let tau_star = class_mixing_or_skip(m, MixingMode::Optimal, opts.t_max)?;
    let tau_unif = class_mixing_or_skip(m, MixingMode::Uniform, opts.t_max)?;

    let (_, pi_gamma) = solve_discounted_optimal(m, gamma, 1e-10)?;
    let v_gamma = policy_evaluation_discounted(m, &pi_gamma, gamma)?;

    let mut checks = Vec::new();

    // Policies under the variance microscope: the discounted optimum plus
    // seeded random ones.
    let mut policies = vec![("pi_star".to_string(), pi_gamma.clone())];
    for i in 0..opts.random_policies {
        let mut stream = SeedStream::new(derive_stream_seed(opts.policy_seed, &[i as u64]));
        let actions = (0..m.num_states())
            .map(|_| stream.next_index(m.num_actions()))
            .collect();
        policies.push((
            format!("rand{i}"),
            Policy::new(actions, m.num_actions()).expect("sampled actions are in range"),
        ));
    }

    let mut sigma2_pi_star_max = 0.0f64;
    for (label, pi) in &policies {
        let sigma2 = return_variance(m, pi, gamma)?;
        let sigma2_max = sigma2.iter().copied().fold(0.0f64, f64::max);
        if label == "pi_star" {
            sigma2_pi_star_max = sigma2_max;
        }
        // Residual of the variance Bellman system, recomputed explicitly.
        let v = policy_evaluation_discounted(m, pi, gamma)?;
        let cond = super::variance::conditional_variance(m, pi, &v)?;
        let p = crate::solve::policy_transition_matrix(m, pi);
        let residual = (0..m.num_states())
            .map(|s| {
                let psig: f64 = (0..m.num_states()).map(|j| p[(s, j)] * sigma2[j]).sum();
                (sigma2[s] - gamma * gamma * cond[s] - gamma * gamma * psig).abs()
            })
            .fold(0.0f64, f64::max);
        checks.push(CheckRecord::bound(
            format!("variance_bellman_residual.{label}"),
            residual,
            1e-10,
        ));

        let wstd = weighted_std_norm(m, pi, gamma)?;
        checks.push(CheckRecord::bound(
            format!("weighted_std_vs_return_variance.{label}"),
            gamma * wstd,
            (2.0 / (1.0 - gamma)).sqrt() * sigma2_max.sqrt(),
        ));
    }

    // Return-variance bound for the discounted optimum, in the regime
    // where the effective horizon covers the (integer-ceiled) span.
    if gamma >= 1.0 - 1.0 / h_int as f64 {
        checks.push(CheckRecord::bound(
            "opt_return_variance_span_bound",
            sigma2_pi_star_max,
            5.0 * h_int as f64 / (1.0 - gamma),
        ));
    } else {
        checks.push(CheckRecord::skipped("opt_return_variance_span_bound"));
    }

    let value_span = v_gamma
        .iter()
        .map(|&v| (v - rho_star / (1.0 - gamma)).abs())
        .fold(0.0f64, f64::max);
    checks.push(CheckRecord::bound("value_span_bound", value_span, span_h));

    checks.push(CheckRecord::bound("span_le_diameter", span_h, d));
    checks.push(match tau_star {
        Some(tau) => CheckRecord::bound("span_le_8tau_star", span_h, 8.0 * tau.as_f64()),
        None => CheckRecord::skipped("span_le_8tau_star"),
    });
    checks.push(match tau_unif {
        Some(tau) => CheckRecord::bound("span_le_8tau_unif", span_h, 8.0 * tau.as_f64()),
        None => CheckRecord::skipped("span_le_8tau_unif"),
    });

    Ok(AuditReport {
        instance: InstanceMeta {
            id: opts.id.clone(),
            num_states: m.num_states(),
            num_actions: m.num_actions(),
            gamma,
            span: span_h,
            diameter: d,
            tau_star,
            tau_unif,
        },
        checks,
    })
}

fn class_mixing_or_skip(
    m: &Mdp,
    mode: MixingMode,
    t_max: u64,
) -> Result<Option<TauValue>, DiagError> {
    match policy_class_mixing(m, mode, t_max) {
        Ok(Some(t)) => Ok(Some(TauValue::Finite(t))),
        Ok(None) => Ok(Some(TauValue::Infinite)),
        Err(SolveError::EnumerationTooLarge { .. }) => Ok(None),
        Err(SolveError::NonConvergence { .. }) => Ok(None),
        Err(e) => Err(DiagError::Solve(e)),
    }
}

/// Verifies the reduction bound: with `γ = 1 − ε/H` for a span bound
/// `H ≥ sp(h*)` and a policy `pi` that is `ε_γ`-optimal for the
/// discounted problem (verified here by exact evaluation), the
/// average-reward gap obeys `ρ* − ρ^π ≤ (8 + 3ε_γ/H)·ε` elementwise.
pub fn check_reduction(
    m: &Mdp,
    pi: &Policy,
    epsilon: f64,
    span_bound: f64,
    epsilon_gamma: f64,
) -> Result<CheckRecord, DiagError> {
    if !is_weakly_communicating(m) {
        return Err(DiagError::Solve(SolveError::NotWeaklyCommunicating));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(DiagError::HypothesisViolated(format!(
            "accuracy must lie in (0,1], got {epsilon}"
        )));
    }
    let (gb_opt, _, _) = solve_average_optimal(m, 1e-10)?;
    if gb_opt.span_h > span_bound + 1e-9 {
        return Err(DiagError::HypothesisViolated(format!(
            "span bound {span_bound} below the actual span {}",
            gb_opt.span_h
        )));
    }
    if epsilon >= span_bound {
        return Err(DiagError::HypothesisViolated(format!(
            "accuracy {epsilon} must stay below the span bound {span_bound} for γ ∈ (0,1)"
        )));
    }
    let gamma = 1.0 - epsilon / span_bound;
    if epsilon_gamma < 0.0 || epsilon_gamma > 1.0 / (1.0 - gamma) {
        return Err(DiagError::HypothesisViolated(format!(
            "discounted suboptimality {epsilon_gamma} outside [0, {}]",
            1.0 / (1.0 - gamma)
        )));
    }

    // Exact verification that pi is ε_γ-optimal for (P, r, γ).
    let (_, pi_star) = solve_discounted_optimal(m, gamma, 1e-10)?;
    let v_star = policy_evaluation_discounted(m, &pi_star, gamma)?;
    let v_pi = policy_evaluation_discounted(m, pi, gamma)?;
    let actual_gap = v_star
        .iter()
        .zip(&v_pi)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    if actual_gap > epsilon_gamma + 1e-7 {
        return Err(DiagError::HypothesisViolated(format!(
            "policy is only {actual_gap:.3e}-optimal for the discounted problem, claimed {epsilon_gamma}"
        )));
    }

    let gb_pi = gain_bias_of_policy(m, pi)?;
    let lhs = gb_opt
        .gain
        .iter()
        .zip(&gb_pi.gain)
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max);
    let rhs = (8.0 + 3.0 * epsilon_gamma / span_bound) * epsilon;
    Ok(CheckRecord::bound("average_gap_reduction_bound", lhs, rhs))
}

/// Everything an end-to-end planning run exposes for auditing.
pub struct EmpiricalRunContext<'a> {
    pub truth: &'a Mdp,
    /// The perturbed empirical model `(P̂, r̃)` the planner solved.
    pub planted: &'a Mdp,
    /// The planner's output, optimal for `planted`.
    pub pi_hat: &'a Policy,
    pub gamma: f64,
    pub epsilon: f64,
    pub span_bound: f64,
    /// Samples per state-action pair (advisory records only).
    pub n: u64,
    /// Nominal failure probability (advisory records only).
    pub delta: f64,
    /// Calibration constant standing in for the guarantee's existential
    /// one (advisory records only).
    pub c1: f64,
}

/// Audits one planning run.
///
/// Must-pass record: the perturbed return variance of the learned policy
/// on the true kernel obeys
/// `‖σ²‖∞ ≤ 15(H² + e₁² + e₂²)/(H(1−γ))` with
/// `e₁ = ‖V^π̂_γ − V̂^π̂_{γ,p}‖∞` and `e₂ = ‖V^{π*}_γ − V̂^{π*}_{γ,p}‖∞`
/// computed exactly (hats denote the planted model, `p` the perturbed
/// reward). A second variant of the same bound with the unperturbed
/// empirical values, and the two value-error concentration records (which
/// hold only with high probability and use the placeholder constant
/// `c1`), are advisory.
pub fn check_empirical_run(ctx: &EmpiricalRunContext) -> Result<Vec<CheckRecord>, DiagError> {
    let gamma = ctx.gamma;
    let h_int = (ctx.span_bound.ceil() as u64).max(1) as f64;
    // The variance bound is a regime statement: the effective horizon
    // must cover the (integer-ceiled) span bound and the accuracy must
    // not exceed it.
    let in_regime =
        gamma >= 1.0 - 1.0 / h_int && ctx.epsilon <= ctx.span_bound + 1e-12;

    let (_, pi_star) = solve_discounted_optimal(ctx.truth, gamma, 1e-10)?;
    let v_star = policy_evaluation_discounted(ctx.truth, &pi_star, gamma)?;
    let v_hat = policy_evaluation_discounted(ctx.truth, ctx.pi_hat, gamma)?;

    let v_hat_planted = policy_evaluation_discounted(ctx.planted, ctx.pi_hat, gamma)?;
    let v_star_planted = policy_evaluation_discounted(ctx.planted, &pi_star, gamma)?;

    let e1 = max_abs_diff(&v_hat, &v_hat_planted);
    let e2 = max_abs_diff(&v_star, &v_star_planted);

    // σ² of the learned policy on the true kernel with perturbed rewards.
    let perturbed_truth = ctx
        .truth
        .with_rewards_for_planning(ctx.planted.rewards().to_vec())
        .map_err(SolveError::from)?;
    let sigma2 = return_variance(&perturbed_truth, ctx.pi_hat, gamma)?;
    let sigma2_max = sigma2.iter().copied().fold(0.0f64, f64::max);

    let mut records = vec![if in_regime {
        CheckRecord::bound(
            "empirical_policy_return_variance_bound",
            sigma2_max,
            15.0 * (h_int * h_int + e1 * e1 + e2 * e2) / (h_int * (1.0 - gamma)),
        )
    } else {
        CheckRecord::skipped("empirical_policy_return_variance_bound")
    }];

    // Variant with the unperturbed empirical model, recorded for
    // comparison only.
    let unperturbed_planted = ctx
        .planted
        .with_rewards_for_planning(ctx.truth.rewards().to_vec())
        .map_err(SolveError::from)?;
    let v_hat_unp = policy_evaluation_discounted(&unperturbed_planted, ctx.pi_hat, gamma)?;
    let v_star_unp = policy_evaluation_discounted(&unperturbed_planted, &pi_star, gamma)?;
    let e1_unp = max_abs_diff(&v_hat, &v_hat_unp);
    let e2_unp = max_abs_diff(&v_star, &v_star_unp);
    records.push(if in_regime {
        CheckRecord::bound(
            "advisory.empirical_policy_return_variance_bound_unperturbed",
            sigma2_max,
            15.0 * (h_int * h_int + e1_unp * e1_unp + e2_unp * e2_unp) / (h_int * (1.0 - gamma)),
        )
    } else {
        CheckRecord::skipped("advisory.empirical_policy_return_variance_bound_unperturbed")
    });

    // Concentration records with the placeholder constant: these hold
    // with probability 1−δ, not always.
    let sa = (ctx.truth.num_states() * ctx.truth.num_actions()) as f64;
    let log_term = (sa / ((1.0 - gamma) * ctx.delta * ctx.epsilon)).ln();
    let w_star = weighted_std_norm(ctx.truth, &pi_star, gamma)?;
    let v_star_max = v_star.iter().copied().fold(0.0f64, f64::max);
    records.push(CheckRecord::bound(
        "advisory.value_error_bound.pi_star",
        e2,
        gamma * (ctx.c1 * log_term / ctx.n as f64).sqrt() * w_star
            + ctx.c1 * gamma * log_term / ((1.0 - gamma) * ctx.n as f64) * v_star_max
            + ctx.epsilon / 6.0,
    ));
    let v_hat_pert = policy_evaluation_discounted(&perturbed_truth, ctx.pi_hat, gamma)?;
    let cond = super::variance::conditional_variance(&perturbed_truth, ctx.pi_hat, &v_hat_pert)?;
    let n_states = ctx.truth.num_states();
    let p = crate::solve::policy_transition_matrix(ctx.truth, ctx.pi_hat);
    let system = nalgebra::DMatrix::identity(n_states, n_states) - gamma * &p;
    let rhs = nalgebra::DVector::from_iterator(n_states, cond.iter().map(|x| x.max(0.0).sqrt()));
    let w_hat = system
        .lu()
        .solve(&rhs)
        .ok_or(SolveError::SingularSystem { residual: f64::NAN })?
        .amax();
    let v_hat_pert_max = v_hat_pert.iter().copied().fold(0.0f64, f64::max);
    records.push(CheckRecord::bound(
        "advisory.value_error_bound.pi_hat",
        e1,
        gamma * (ctx.c1 * log_term / ctx.n as f64).sqrt() * w_hat
            + ctx.c1 * gamma * log_term / ((1.0 - gamma) * ctx.n as f64) * v_hat_pert_max
            + ctx.epsilon / 6.0,
    ));

    Ok(records)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max)
}

/// Flattens audit reports to CSV with columns
/// `instance_id,check,lhs,rhs,margin,pass`, rows sorted by
/// (instance id, check name). Skipped checks carry `skipped` in the pass
/// column.
pub fn audit_reports_to_csv(reports: &[AuditReport]) -> String {
    let mut rows: Vec<(String, &CheckRecord)> = reports
        .iter()
        .flat_map(|r| r.checks.iter().map(move |c| (r.instance.id.clone(), c)))
        .collect();
    rows.sort_by(|a, b| (a.0.as_str(), &a.1.name).cmp(&(b.0.as_str(), &b.1.name)));
    let mut out = String::from("instance_id,check,lhs,rhs,margin,pass\n");
    for (id, check) in rows {
        let pass = match check.status {
            CheckStatus::Pass => "true",
            CheckStatus::Fail => "false",
            CheckStatus::Skipped => "skipped",
        };
        out.push_str(&format!(
            "{id},{name},{lhs},{rhs},{margin},{pass}\n",
            name = check.name,
            lhs = fmt_f64(check.lhs),
            rhs = fmt_f64(check.rhs),
            margin = fmt_f64(check.margin),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{generate_chain, generate_garnet};

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
    fn cycle_audit_passes() {
        // H = 0.5, ⌈H⌉ = 1, γ = 0.5 sits exactly at the regime edge.
        let report = audit_instance(&two_state_cycle(), 0.5, &AuditOptions::default()).unwrap();
        assert!(report.all_passed(), "{:#?}", report.checks);
        assert_eq!(report.instance.tau_star, Some(TauValue::Infinite));
        assert!((report.instance.diameter - 1.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_self_loop_audit() {
        let m = Mdp::new(1, 1, vec![vec![vec![1.0]]], vec![vec![0.7]]).unwrap();
        let report = audit_instance(&m, 0.5, &AuditOptions::default()).unwrap();
        assert!(report.all_passed());
        assert_eq!(report.instance.span, 0.0);
        for check in &report.checks {
            if check.name.starts_with("span_le") || check.name == "value_span_bound" {
                assert_eq!(check.lhs, 0.0, "{}", check.name);
            }
        }
    }

    #[test]
    fn non_weakly_communicating_is_rejected() {
        let m = Mdp::new(
            2,
            1,
            vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
            vec![vec![0.0], vec![1.0]],
        )
        .unwrap();
        assert!(matches!(
            audit_instance(&m, 0.5, &AuditOptions::default()),
            Err(DiagError::Solve(SolveError::NotWeaklyCommunicating))
        ));
    }

    #[test]
    fn chain_audit_passes_in_regime() {
        let m = generate_chain(5, 0.1, 0).unwrap();
        let (gb, _, _) = solve_average_optimal(&m, 1e-10).unwrap();
        let h_int = (gb.span_h.ceil() as u64).max(1);
        let gamma = 1.0 - 1.0 / (2.0 * h_int as f64);
        let report = audit_instance(&m, gamma, &AuditOptions::default()).unwrap();
        assert!(report.all_passed(), "{:#?}", report.checks);
    }

    #[test]
    fn reduction_bound_for_exact_discounted_optimum() {
        for seed in [1u64, 2, 3] {
            let m = generate_garnet(4, 2, 3, seed).unwrap();
            let (gb, _, _) = solve_average_optimal(&m, 1e-10).unwrap();
            let span_bound = gb.span_h.max(1.0);
            let epsilon = 0.5;
            let gamma = 1.0 - epsilon / span_bound;
            let (_, pi_star) = solve_discounted_optimal(&m, gamma, 1e-10).unwrap();
            let rec = check_reduction(&m, &pi_star, epsilon, span_bound, 0.0).unwrap();
            assert!(rec.passed(), "{rec:?}");
            assert!(rec.rhs == 8.0 * epsilon);
        }
    }

    #[test]
    fn reduction_bound_trivial_on_one_policy_mdp() {
        let m = two_state_cycle();
        let pi = Policy::new(vec![0, 0], 1).unwrap();
        let rec = check_reduction(&m, &pi, 0.25, 1.0, 0.0).unwrap();
        assert!(rec.passed());
        assert!(rec.lhs.abs() < 1e-9);
    }

    #[test]
    fn reduction_rejects_suboptimal_policy_claimed_exact() {
        // On the better-self-loop MDP the bad action loses 0.7/(1−γ).
        let m = Mdp::new(
            1,
            2,
            vec![vec![vec![1.0], vec![1.0]]],
            vec![vec![0.2, 0.9]],
        )
        .unwrap();
        let bad = Policy::new(vec![0], 2).unwrap();
        assert!(matches!(
            check_reduction(&m, &bad, 0.5, 1.0, 0.0),
            Err(DiagError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn csv_serialization_shape() {
        let report = audit_instance(&two_state_cycle(), 0.5, &AuditOptions::default()).unwrap();
        let csv = audit_reports_to_csv(&[report]);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "instance_id,check,lhs,rhs,margin,pass");
        for line in lines {
            assert_eq!(line.split(',').count(), 6, "bad row: {line}");
        }
    }
}
