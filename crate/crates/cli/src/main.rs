//! Command-line front end for the tabmdp toolkit.
//!
//! Exit codes: 0 on success, 1 on validation or usage errors, 2 when a
//! diagnostic audit finds a violated inequality.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tabmdp::algorithms::{
    run_algorithm1_traced, sample_size, Alg1Config, Alg2Config, SampleBound,
};
use tabmdp::diagnostics::{
    audit_instance, audit_reports_to_csv, check_empirical_run, check_horizon_inequality,
    check_multistep_variance_identity, AuditOptions, CheckStatus, EmpiricalRunContext,
};
use tabmdp::generative::GenerativeModel;
use tabmdp::harness::{run_experiment, ExperimentConfig};
use tabmdp::mdp::{codec_load, codec_save};
use tabmdp::{
    gain_bias_of_policy, policy_evaluation_discounted, solve_average_optimal,
    solve_discounted_optimal,
};

#[derive(Parser)]
#[command(name = "tabmdp", version, about = "Tabular MDP solvers, planners, and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an MDP document against all structural invariants.
    Validate { file: PathBuf },
    /// Solve the discounted optimal-control problem exactly.
    SolveDiscounted {
        file: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Solve the average-reward optimal-control problem exactly.
    SolveAverage {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        json: bool,
    },
    /// Audit the structural inequalities on one instance.
    Diagnose {
        file: PathBuf,
        #[arg(long)]
        gamma: f64,
        /// Also run the trajectory-enumeration variance identity and the
        /// discount-series checks.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0xa0d17)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        t_max: u64,
        #[arg(long, conflicts_with = "json")]
        csv: bool,
        #[arg(long)]
        json: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a benchmark instance document.
    #[command(subcommand)]
    Generate(GenerateCmd),
    /// Plan on generative samples at a fixed discount factor.
    RunAlg1 {
        file: PathBuf,
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        /// Number of independent trials (distinct trial indices).
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Also audit the run's variance and value-error bounds
        /// (exit code 2 if a non-advisory bound fails).
        #[arg(long)]
        audit: bool,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        json: bool,
    },
    /// Plan for average reward via the discounted reduction.
    RunAlg2 {
        file: PathBuf,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        n: u64,
        #[arg(long)]
        seed: u64,
        /// Upper bound on the optimal bias span; defaults to the exact
        /// span computed on the instance (clamped up to 1).
        #[arg(long)]
        span_bound: Option<f64>,
        /// Number of independent trials (distinct trial indices).
        #[arg(long, default_value_t = 1)]
        trials: u64,
        #[arg(long)]
        audit: bool,
        #[arg(long, default_value_t = 0.1)]
        delta: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run a Monte Carlo experiment grid described by a JSON config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenerateCmd {
    /// Birth-death chain with slip probability.
    Chain(ChainArgs),
    /// Random sparse MDP, regenerated until weakly communicating.
    Garnet(GarnetArgs),
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    states: usize,
    #[arg(long)]
    p_slip: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GarnetArgs {
    #[arg(long)]
    states: usize,
    #[arg(long)]
    actions: usize,
    #[arg(long)]
    branching: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { file } => {
            codec_load(&file).with_context(|| format!("validating {}", file.display()))?;
            println!("ok: {}", file.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveDiscounted {
            file,
            gamma,
            tol,
            json,
        } => {
            let m = codec_load(&file)?;
            let (v, pi) = solve_discounted_optimal(&m, gamma, tol)?;
            let v_exact = policy_evaluation_discounted(&m, &pi, gamma)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "gamma": gamma,
                        "optimal_value": v,
                        "policy": pi.actions(),
                        "policy_value": v_exact,
                    })
                );
            } else {
                println!("gamma: {gamma}");
                println!("policy: {:?}", pi.actions());
                println!("value: {v:?}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveAverage { file, tol, json } => {
            let m = codec_load(&file)?;
            let (gb, q, pi) = solve_average_optimal(&m, tol)?;
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "gain": gb.gain[0],
                        "bias": gb.bias,
                        "span": gb.span_h,
                        "q": q.values,
                        "policy": pi.actions(),
                    })
                );
            } else {
                println!("gain: {}", gb.gain[0]);
                println!("span: {}", gb.span_h);
                println!("policy: {:?}", pi.actions());
                println!("bias: {:?}", gb.bias);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose {
            file,
            gamma,
            full,
            seed,
            t_max,
            csv,
            json,
            out,
        } => {
            let m = codec_load(&file)?;
            let opts = AuditOptions {
                id: file
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "mdp".into()),
                t_max,
                policy_seed: seed,
                ..AuditOptions::default()
            };
            let mut report = audit_instance(&m, gamma, &opts)?;
            if full {
                let (gb, _, pi_avg) = solve_average_optimal(&m, 1e-10)?;
                report
                    .checks
                    .extend(check_multistep_variance_identity(&m, &pi_avg, gamma, 4)?);
                let h_int = (gb.span_h.ceil() as u32).max(1);
                if gamma >= 1.0 - 1.0 / h_int as f64 {
                    report
                        .checks
                        .extend(check_horizon_inequality(h_int, gamma)?);
                }
            }
            let rendered = if csv {
                audit_reports_to_csv(std::slice::from_ref(&report))
            } else if json {
                serde_json::to_string_pretty(&report)? + "\n"
            } else {
                let mut text = String::new();
                for c in &report.checks {
                    text.push_str(&format!(
                        "{:<55} lhs={:<24} rhs={:<24} {:?}\n",
                        c.name, c.lhs, c.rhs, c.status
                    ));
                }
                text
            };
            match out {
                Some(path) => std::fs::write(path, rendered)?,
                None => print!("{rendered}"),
            }
            if report.all_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                for failure in report.failures() {
                    eprintln!("FAILED: {} (margin {})", failure.name, failure.margin);
                }
                Ok(ExitCode::from(2))
            }
        }
        Command::Generate(cmd) => {
            let (m, out) = match cmd {
                GenerateCmd::Chain(args) => (
                    tabmdp::harness::generate_chain(args.states, args.p_slip, args.seed)?,
                    args.out,
                ),
                GenerateCmd::Garnet(args) => (
                    tabmdp::harness::generate_garnet(
                        args.states,
                        args.actions,
                        args.branching,
                        args.seed,
                    )?,
                    args.out,
                ),
            };
            let doc = codec_save(&m);
            match out {
                Some(path) => std::fs::write(path, doc)?,
                None => print!("{doc}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::RunAlg1 {
            file,
            gamma,
            epsilon,
            n,
            seed,
            trials,
            audit,
            delta,
            json,
        } => {
            let m = codec_load(&file)?;
            let g = GenerativeModel::new(m.clone(), seed);
            let (_, pi_star) = solve_discounted_optimal(&m, gamma, 1e-10)?;
            let v_star = policy_evaluation_discounted(&m, &pi_star, gamma)?;
            let span = span_of(&m)?;
            let theoretical = sample_size(
                SampleBound::Discounted { gamma },
                span.max(1.0),
                epsilon,
                delta,
                m.num_states(),
                m.num_actions(),
                1.0,
            )
            .ok();

            let mut rows = Vec::new();
            let mut audit_ok = true;
            for trial in 0..trials.max(1) {
                let cfg = Alg1Config {
                    n,
                    epsilon,
                    gamma,
                    seed,
                    trial,
                };
                let (pi, trace) = run_algorithm1_traced(&g, &cfg)?;
                let v_pi = policy_evaluation_discounted(&m, &pi, gamma)?;
                let gap = v_star
                    .iter()
                    .zip(&v_pi)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max);
                let audit_records = if audit {
                    let records = check_empirical_run(&EmpiricalRunContext {
                        truth: &m,
                        planted: &trace.planted,
                        pi_hat: &pi,
                        gamma,
                        epsilon,
                        span_bound: span.max(1.0),
                        n,
                        delta,
                        c1: 1.0,
                    })?;
                    audit_ok &= records
                        .iter()
                        .filter(|r| !r.is_advisory())
                        .all(|r| r.status != CheckStatus::Fail);
                    Some(records)
                } else {
                    None
                };
                rows.push((trial, pi, gap, audit_records));
            }
            render_trials(&rows, epsilon, theoretical, n, json, &[]);
            Ok(exit_for_audit(audit_ok))
        }
        Command::RunAlg2 {
            file,
            epsilon,
            n,
            seed,
            span_bound,
            trials,
            audit,
            delta,
            json,
        } => {
            let m = codec_load(&file)?;
            let (gb_opt, _, pi_avg) = solve_average_optimal(&m, 1e-10)?;
            let gain_star = gain_bias_of_policy(&m, &pi_avg)?.gain;
            let bound = span_bound.unwrap_or(gb_opt.span_h.max(1.0));
            let g = GenerativeModel::new(m.clone(), seed);
            let theoretical = sample_size(
                SampleBound::Average,
                bound,
                epsilon,
                delta,
                m.num_states(),
                m.num_actions(),
                1.0,
            )
            .ok();

            let mut rows = Vec::new();
            let mut audit_ok = true;
            let mut inner_gamma = 0.0;
            for trial in 0..trials.max(1) {
                let cfg = Alg2Config {
                    n,
                    epsilon,
                    span_bound: bound,
                    seed,
                    trial,
                };
                let inner = tabmdp::algorithms::reduction_config(&cfg)?;
                inner_gamma = inner.gamma;
                let (pi, trace) = run_algorithm1_traced(&g, &inner)?;
                let gb_pi = gain_bias_of_policy(&m, &pi)?;
                let gap = gain_star
                    .iter()
                    .zip(&gb_pi.gain)
                    .map(|(a, b)| a - b)
                    .fold(f64::NEG_INFINITY, f64::max);
                let audit_records = if audit {
                    let records = check_empirical_run(&EmpiricalRunContext {
                        truth: &m,
                        planted: &trace.planted,
                        pi_hat: &pi,
                        gamma: inner.gamma,
                        epsilon: inner.epsilon,
                        span_bound: bound,
                        n,
                        delta,
                        c1: 1.0,
                    })?;
                    audit_ok &= records
                        .iter()
                        .filter(|r| !r.is_advisory())
                        .all(|r| r.status != CheckStatus::Fail);
                    Some(records)
                } else {
                    None
                };
                rows.push((trial, pi, gap, audit_records));
            }
            let extra = [
                ("span_bound".to_string(), bound),
                ("reduction_gamma".to_string(), inner_gamma),
            ];
            render_trials(&rows, epsilon, theoretical, n, json, &extra);
            Ok(exit_for_audit(audit_ok))
        }
        Command::Experiment { config, out } => {
            let text = std::fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if let Some(path) = out {
                cfg.out = Some(path.to_string_lossy().into_owned());
            }
            // Context line: the guideline sample size at C = 1 next to the
            // user's grid.
            if let Ok(m) = cfg.instance.resolve() {
                let span = span_of(&m)?.max(1.0);
                let guideline = match cfg.algorithm {
                    tabmdp::harness::AlgorithmChoice::Alg2 => sample_size(
                        SampleBound::Average,
                        cfg.span_bound.unwrap_or(span),
                        cfg.epsilon,
                        cfg.delta,
                        m.num_states(),
                        m.num_actions(),
                        1.0,
                    ),
                    tabmdp::harness::AlgorithmChoice::Alg1 => sample_size(
                        SampleBound::Discounted {
                            gamma: cfg.gamma.unwrap_or(0.9),
                        },
                        span,
                        cfg.epsilon,
                        cfg.delta,
                        m.num_states(),
                        m.num_actions(),
                        1.0,
                    ),
                };
                if let Ok(g) = guideline {
                    eprintln!("guideline n at C=1: {g}; configured grid: {:?}", cfg.n_grid);
                }
            }
            let outcome = run_experiment(&cfg)?;
            if cfg.out.is_none() {
                print!("{}", outcome.csv);
            } else {
                for s in &outcome.summaries {
                    println!(
                        "n={:<8} trials={:<4} success_rate={:<8} median_gap={}",
                        s.n, s.trials, s.success_rate, s.median_gap
                    );
                }
            }
            match outcome.failed {
                None => Ok(ExitCode::SUCCESS),
                Some(msg) => Err(anyhow!("experiment failed mid-run: {msg}")),
            }
        }
    }
}

type TrialRow = (
    u64,
    tabmdp::Policy,
    f64,
    Option<Vec<tabmdp::diagnostics::CheckRecord>>,
);

fn render_trials(
    rows: &[TrialRow],
    epsilon: f64,
    theoretical: Option<u64>,
    n: u64,
    json: bool,
    extra: &[(String, f64)],
) {
    let successes = rows.iter().filter(|(_, _, gap, _)| *gap <= epsilon).count();
    if json {
        let trials: Vec<serde_json::Value> = rows
            .iter()
            .map(|(trial, pi, gap, audit)| {
                serde_json::json!({
                    "trial": trial,
                    "policy": pi.actions(),
                    "gap": gap,
                    "epsilon_met": *gap <= epsilon,
                    "audit": audit,
                })
            })
            .collect();
        let mut doc = serde_json::json!({
            "epsilon": epsilon,
            "n": n,
            "theoretical_n_c1": theoretical,
            "success_rate": successes as f64 / rows.len() as f64,
            "trials": trials,
        });
        for (k, v) in extra {
            doc[k] = serde_json::json!(v);
        }
        println!("{doc}");
    } else {
        for (trial, pi, gap, audit) in rows {
            println!(
                "trial {trial}: policy {:?}, exact gap {gap}, epsilon met: {}",
                pi.actions(),
                *gap <= epsilon
            );
            if let Some(records) = audit {
                for r in records {
                    println!(
                        "  {:<60} lhs={:<22} rhs={:<22} {:?}",
                        r.name, r.lhs, r.rhs, r.status
                    );
                }
            }
        }
        for (k, v) in extra {
            println!("{k}: {v}");
        }
        if let Some(t) = theoretical {
            println!("guideline n at C=1: {t} (ran with n={n})");
        }
        println!(
            "success rate: {}/{} at epsilon {epsilon}",
            successes,
            rows.len()
        );
    }
}

fn exit_for_audit(audit_ok: bool) -> ExitCode {
    if audit_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn span_of(m: &tabmdp::Mdp) -> Result<f64> {
    let (gb, _, _) = solve_average_optimal(m, 1e-10)?;
    Ok(gb.span_h)
}
