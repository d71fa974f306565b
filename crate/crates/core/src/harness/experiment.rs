//! Reproducible Monte Carlo experiment runner.
//!
//! Each trial runs the chosen planner on fresh seeded samples and
//! evaluates the returned policy *exactly* on the true MDP: gain gap for
//! the average-reward planner, discounted value gap for the discounted
//! one. Per-trial seeds derive from `(master_seed, n_index, trial)`, so
//! growing the `n` grid never perturbs earlier trials' randomness. The
//! emitted CSV is a pure function of the configuration (wall-clock
//! timings stay out of it), making reruns byte-identical.

use super::generate::{generate_chain, generate_garnet};
use super::HarnessError;
use crate::algorithms::{run_algorithm1, run_algorithm2, Alg1Config, Alg2Config};
use crate::generative::{derive_stream_seed, GenerativeModel, DOMAIN_TRIAL};
use crate::mdp::{codec_load, is_weakly_communicating, Mdp, Policy};
use crate::solve::{
    gain_bias_of_policy, policy_evaluation_discounted, solve_average_optimal,
    solve_discounted_optimal,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case")]
pub enum InstanceSpec {
    Chain {
        num_states: usize,
        p_slip: f64,
        seed: u64,
    },
    Garnet {
        num_states: usize,
        num_actions: usize,
        branching: usize,
        seed: u64,
    },
    File {
        path: String,
    },
}

impl InstanceSpec {
    pub fn resolve(&self) -> Result<Mdp, HarnessError> {
        match self {
            InstanceSpec::Chain {
                num_states,
                p_slip,
                seed,
            } => generate_chain(*num_states, *p_slip, *seed),
            InstanceSpec::Garnet {
                num_states,
                num_actions,
                branching,
                seed,
            } => generate_garnet(*num_states, *num_actions, *branching, *seed),
            InstanceSpec::File { path } => Ok(codec_load(std::path::Path::new(path))?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmChoice {
    Alg1,
    Alg2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub instance: InstanceSpec,
    pub algorithm: AlgorithmChoice,
    /// Strictly increasing grid of per-pair sample sizes.
    pub n_grid: Vec<u64>,
    pub epsilon: f64,
    pub delta: f64,
    /// Discount factor; required for [`AlgorithmChoice::Alg1`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// Span bound for [`AlgorithmChoice::Alg2`]; defaults to the exact
    /// optimal bias span of the instance (clamped up to 1).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_bound: Option<f64>,
    pub trials: u32,
    pub master_seed: u64,
    /// CSV destination; `None` leaves emission to the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::BadParameter(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::BadParameter("trials must be ≥ 1".into()));
        }
        if self.n_grid.is_empty() || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(HarnessError::BadParameter(
                "n grid must be nonempty and strictly increasing".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(HarnessError::BadParameter("epsilon must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(HarnessError::BadParameter("delta must lie in (0,1)".into()));
        }
        match self.algorithm {
            AlgorithmChoice::Alg1 => match self.gamma {
                Some(g) if g > 0.0 && g < 1.0 => Ok(()),
                _ => Err(HarnessError::BadParameter(
                    "the discounted planner needs gamma in (0,1)".into(),
                )),
            },
            AlgorithmChoice::Alg2 => Ok(()),
        }
    }
}

/// One planning trial, evaluated exactly on the true MDP.
#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub n: u64,
    pub trial: u32,
    pub seed: u64,
    /// `max_s (ρ*(s) − ρ^π̂(s))` for the average-reward planner,
    /// `‖V*_γ − V^π̂_γ‖∞` for the discounted one.
    pub gap: f64,
    /// The per-state gaps behind the max.
    pub per_state_gaps: Vec<f64>,
    pub epsilon_met: bool,
    /// Wall-clock time; informational only, never serialized to CSV.
    pub runtime_ms: u64,
}

/// Per-n aggregate.
#[derive(Debug, Clone, Serialize)]
pub struct NSummary {
    pub n: u64,
    pub trials: u32,
    pub success_rate: f64,
    pub median_gap: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub trials: Vec<TrialResult>,
    pub summaries: Vec<NSummary>,
    pub csv: String,
    /// Error text of the first failed trial, if any; when set, the CSV
    /// ends with a FAILED sentinel row and the trial list is partial.
    pub failed: Option<String>,
}

/// Derives the seed of one trial from the master seed, the position of
/// `n` in the grid, and the trial index.
pub fn trial_seed(master_seed: u64, n_index: usize, trial: u32) -> u64 {
    derive_stream_seed(master_seed, &[DOMAIN_TRIAL, n_index as u64, trial as u64])
}

/// Runs the full grid. Trials execute in parallel; results are keyed and
/// sorted so the output never depends on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    cfg.validate()?;
    let truth = cfg.instance.resolve()?;
    if !is_weakly_communicating(&truth) {
        return Err(HarnessError::BadParameter(
            "experiment instance must be weakly communicating".into(),
        ));
    }

    // Exact reference solution, shared across trials. The optimal gain is
    // re-evaluated by the exact multichain solve of the optimal policy so
    // that a trial recovering that policy scores a gap of exactly zero.
    let reference = match cfg.algorithm {
        AlgorithmChoice::Alg2 => {
            let (gb, _, pi_star) = solve_average_optimal(&truth, 1e-10)?;
            let span_bound = cfg.span_bound.unwrap_or(gb.span_h.max(1.0));
            Reference::Average {
                gain: gain_bias_of_policy(&truth, &pi_star)?.gain,
                span_bound,
            }
        }
        AlgorithmChoice::Alg1 => {
            let gamma = cfg.gamma.expect("validated");
            let (_, pi_star) = solve_discounted_optimal(&truth, gamma, 1e-10)?;
            let v_star = policy_evaluation_discounted(&truth, &pi_star, gamma)?;
            Reference::Discounted { v_star, gamma }
        }
    };

    let jobs: Vec<(usize, u64, u32)> = cfg
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..cfg.trials).map(move |t| (i, n, t)))
        .collect();

    let mut results: Vec<Result<TrialResult, String>> = jobs
        .par_iter()
        .map(|&(n_index, n, trial)| {
            run_one_trial(&truth, cfg, &reference, n_index, n, trial).map_err(|e| e.to_string())
        })
        .collect();

    // Keyed sort: (n, trial) — jobs is already in that order, and so is
    // the parallel collect, but sorting makes the contract explicit.
    let keys: Vec<(u64, u32)> = jobs.iter().map(|&(_, n, t)| (n, t)).collect();
    let mut keyed: Vec<((u64, u32), Result<TrialResult, String>)> =
        keys.into_iter().zip(results.drain(..)).collect();
    keyed.sort_by_key(|&(k, _)| k);

    let mut trials = Vec::new();
    let mut failed = None;
    for ((_, _), res) in keyed {
        match res {
            Ok(t) => trials.push(t),
            Err(msg) => {
                failed = Some(msg);
                break;
            }
        }
    }

    let summaries = summarize(cfg, &trials);
    let csv = render_csv(&trials, &summaries, failed.as_deref());
    if let Some(path) = &cfg.out {
        std::fs::write(path, &csv)?;
    }
    Ok(ExperimentOutcome {
        trials,
        summaries,
        csv,
        failed,
    })
}

enum Reference {
    Average { gain: Vec<f64>, span_bound: f64 },
    Discounted { v_star: Vec<f64>, gamma: f64 },
}

fn run_one_trial(
    truth: &Mdp,
    cfg: &ExperimentConfig,
    reference: &Reference,
    n_index: usize,
    n: u64,
    trial: u32,
) -> Result<TrialResult, HarnessError> {
    let seed = trial_seed(cfg.master_seed, n_index, trial);
    let start = Instant::now();
    let g = GenerativeModel::new(truth.clone(), seed);
    let policy: Policy = match reference {
        Reference::Average { span_bound, .. } => run_algorithm2(
            &g,
            &Alg2Config {
                n,
                epsilon: cfg.epsilon,
                span_bound: *span_bound,
                seed,
                trial: 0,
            },
        )?,
        Reference::Discounted { gamma, .. } => run_algorithm1(
            &g,
            &Alg1Config {
                n,
                epsilon: cfg.epsilon,
                gamma: *gamma,
                seed,
                trial: 0,
            },
        )?,
    };
    let per_state_gaps: Vec<f64> = match reference {
        Reference::Average { gain, .. } => {
            let gb = gain_bias_of_policy(truth, &policy)?;
            gain.iter().zip(&gb.gain).map(|(star, got)| star - got).collect()
        }
        Reference::Discounted { v_star, gamma } => {
            let v = policy_evaluation_discounted(truth, &policy, *gamma)?;
            v_star.iter().zip(&v).map(|(star, got)| (star - got).abs()).collect()
        }
    };
    let gap = per_state_gaps
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(gap >= -1e-9, "learned policy beats the optimum: {gap}");
    Ok(TrialResult {
        n,
        trial,
        seed,
        gap,
        per_state_gaps,
        epsilon_met: gap <= cfg.epsilon,
        runtime_ms: start.elapsed().as_millis() as u64,
    })
}

fn summarize(cfg: &ExperimentConfig, trials: &[TrialResult]) -> Vec<NSummary> {
    cfg.n_grid
        .iter()
        .filter_map(|&n| {
            let gaps: Vec<f64> = trials.iter().filter(|t| t.n == n).map(|t| t.gap).collect();
            if gaps.is_empty() {
                return None;
            }
            let successes = trials
                .iter()
                .filter(|t| t.n == n && t.epsilon_met)
                .count();
            Some(NSummary {
                n,
                trials: gaps.len() as u32,
                success_rate: successes as f64 / gaps.len() as f64,
                median_gap: median(gaps),
            })
        })
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("gaps are finite"));
    let k = xs.len();
    if k % 2 == 1 {
        xs[k / 2]
    } else {
        0.5 * (xs[k / 2 - 1] + xs[k / 2])
    }
}

fn render_csv(trials: &[TrialResult], summaries: &[NSummary], failed: Option<&str>) -> String {
    let mut out =
        String::from("row,n,trial,seed,gap,epsilon_met,success_rate,median_gap,note\n");
    for t in trials {
        out.push_str(&format!(
            "trial,{},{},{},{},{},,,\n",
            t.n, t.trial, t.seed, t.gap, t.epsilon_met
        ));
    }
    for s in summaries {
        out.push_str(&format!(
            "summary,{},,,,,{},{},\n",
            s.n, s.success_rate, s.median_gap
        ));
    }
    if let Some(msg) = failed {
        let sanitized = msg.replace([',', '\n'], ";");
        out.push_str(&format!("FAILED,,,,,,,,{sanitized}\n"));
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`. Returns NaN when any
/// point is non-positive, which callers should treat as a failed fit.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 || points.iter().any(|&(x, y)| x <= 0.0 || y <= 0.0) {
        return f64::NAN;
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let var: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_policy_config() -> ExperimentConfig {
        ExperimentConfig {
            instance: InstanceSpec::File {
                path: String::new(),
            },
            algorithm: AlgorithmChoice::Alg2,
            n_grid: vec![2, 4],
            epsilon: 0.5,
            delta: 0.1,
            gamma: None,
            span_bound: Some(1.0),
            trials: 3,
            master_seed: 11,
            out: None,
        }
    }

    #[test]
    fn one_policy_mdp_has_all_zero_gaps() {
        // The 2-state cycle admits a single policy, so every gap is 0.
        let doc = crate::mdp::codec_save(
            &Mdp::new(
                2,
                1,
                vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
                vec![vec![0.0], vec![1.0]],
            )
            .unwrap(),
        );
        let dir = std::env::temp_dir().join("tabmdp_experiment_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cycle.json");
        std::fs::write(&path, doc).unwrap();

        let mut cfg = one_policy_config();
        cfg.instance = InstanceSpec::File {
            path: path.to_string_lossy().into_owned(),
        };
        let outcome = run_experiment(&cfg).unwrap();
        assert!(outcome.failed.is_none());
        assert_eq!(outcome.trials.len(), 6);
        assert!(outcome.trials.iter().all(|t| t.gap.abs() < 1e-9));
        assert!(outcome
            .summaries
            .iter()
            .all(|s| s.success_rate == 1.0 && s.median_gap.abs() < 1e-9));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = ExperimentConfig {
            instance: InstanceSpec::Garnet {
                num_states: 4,
                num_actions: 2,
                branching: 2,
                seed: 5,
            },
            algorithm: AlgorithmChoice::Alg2,
            n_grid: vec![4, 16],
            epsilon: 0.4,
            delta: 0.2,
            gamma: None,
            span_bound: None,
            trials: 4,
            master_seed: 99,
            out: None,
        };
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.csv, b.csv);
        assert!(a.csv.starts_with("row,n,trial,seed,gap,epsilon_met"));
    }

    #[test]
    fn grid_extension_preserves_earlier_trials() {
        let mut cfg = ExperimentConfig {
            instance: InstanceSpec::Garnet {
                num_states: 3,
                num_actions: 2,
                branching: 2,
                seed: 8,
            },
            algorithm: AlgorithmChoice::Alg2,
            n_grid: vec![4, 8],
            epsilon: 0.4,
            delta: 0.2,
            gamma: None,
            span_bound: None,
            trials: 2,
            master_seed: 7,
            out: None,
        };
        let short = run_experiment(&cfg).unwrap();
        cfg.n_grid = vec![4, 8, 16];
        let long = run_experiment(&cfg).unwrap();
        for t in &short.trials {
            let matching = long
                .trials
                .iter()
                .find(|u| u.n == t.n && u.trial == t.trial)
                .unwrap();
            assert_eq!(matching.seed, t.seed);
            assert_eq!(matching.gap, t.gap);
        }
    }

    #[test]
    fn config_validation_rejects_bad_grids() {
        let mut cfg = one_policy_config();
        cfg.n_grid = vec![4, 4];
        assert!(cfg.validate().is_err());
        cfg.n_grid = vec![];
        assert!(cfg.validate().is_err());
        let mut cfg = one_policy_config();
        cfg.algorithm = AlgorithmChoice::Alg1;
        cfg.gamma = None;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            instance: InstanceSpec::Chain {
                num_states: 5,
                p_slip: 0.3,
                seed: 1,
            },
            algorithm: AlgorithmChoice::Alg2,
            n_grid: vec![64, 256],
            epsilon: 0.3,
            delta: 0.1,
            gamma: None,
            span_bound: None,
            trials: 10,
            master_seed: 3,
            out: Some("out.csv".into()),
        };
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back.n_grid, cfg.n_grid);
        assert_eq!(back.master_seed, cfg.master_seed);
    }

    #[test]
    fn slope_of_perfect_power_law() {
        let pts: Vec<(f64, f64)> = [64.0f64, 256.0, 1024.0]
            .iter()
            .map(|&n| (n, 10.0 * n.powf(-0.5)))
            .collect();
        let slope = log_log_slope(&pts);
        assert!((slope + 0.5).abs() < 1e-12);
        assert!(log_log_slope(&[(1.0, 0.0), (2.0, 1.0)]).is_nan());
    }
}
