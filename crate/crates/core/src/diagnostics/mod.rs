//! Exact evaluators for return-variance quantities and numeric auditors
//! for the structural inequalities relating the optimal bias span to the
//! diameter, mixing times, discounted values, and variance parameters.
//!
//! Every check is evaluated with exact linear algebra (no Monte Carlo),
//! so a failed record is a genuine counterexample up to the [`CHECK_SLACK`]
//! rounding allowance rather than sampling noise. Checks whose name starts
//! with `advisory.` hold only with high probability over the sampling and
//! must not gate releases.

mod audit;
mod variance;

pub use audit::{
    audit_instance, audit_reports_to_csv, check_empirical_run, check_reduction, AuditOptions,
    AuditReport, EmpiricalRunContext, InstanceMeta,
};
pub use variance::{
    check_horizon_inequality, check_multistep_variance_identity, conditional_variance,
    finite_horizon_return_variance, finite_horizon_return_variance_with_cap, return_variance,
    weighted_std_norm, VarianceReport, DEFAULT_PATH_CAP,
};

use crate::solve::SolveError;
use serde::Serialize;
use thiserror::Error;

/// Margin slack below which a bound check is considered violated.
pub const CHECK_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("enumerating {paths} paths exceeds the cap of {cap}")]
    EnumerationTooLarge { paths: u64, cap: u64 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Prerequisite quantity unavailable (for example, a mixing time whose
    /// policy enumeration exceeds the cap).
    Skipped,
}

/// One audited inequality `lhs ≤ rhs`, with `margin = rhs − lhs`.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub name: String,
    #[serde(serialize_with = "ser_f64")]
    pub lhs: f64,
    #[serde(serialize_with = "ser_f64")]
    pub rhs: f64,
    #[serde(serialize_with = "ser_f64")]
    pub margin: f64,
    pub status: CheckStatus,
}

impl CheckRecord {
    /// A bound check `lhs ≤ rhs`, passing when the margin is no worse than
    /// `−CHECK_SLACK`.
    pub fn bound(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let margin = rhs - lhs;
        CheckRecord {
            name: name.into(),
            lhs,
            rhs,
            margin,
            status: if margin >= -CHECK_SLACK {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            },
        }
    }

    pub fn skipped(name: impl Into<String>) -> Self {
        CheckRecord {
            name: name.into(),
            lhs: f64::NAN,
            rhs: f64::NAN,
            margin: f64::NAN,
            status: CheckStatus::Skipped,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }

    /// Advisory records hold only with high probability and never gate.
    pub fn is_advisory(&self) -> bool {
        self.name.starts_with("advisory.")
    }
}

/// JSON-safe serialization of possibly non-finite floats.
fn ser_f64<S: serde::Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    if x.is_finite() {
        s.serialize_f64(*x)
    } else if x.is_nan() {
        s.serialize_str("nan")
    } else if *x > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

pub(crate) fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
