use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use submfq::experiment::{run_sweep, trend, write_csv, write_jsonl, ExperimentConfig, SeedLineage, VERSION};
use submfq::learner::{learn_with_progress, LearnReport};
use submfq::policy::{evaluate_with, execute_with, EvalSummary, ExecutionConfig};
use submfq::qtable::Layout;
use submfq::rng::{derive, tag};
use submfq::verify::{run_checks, Check, CheckReport, SuiteParams};
use submfq::{LearnedPolicy, QTable, Strategy, SystemSpec};

/// Tables written as CSV alongside the binary file when no larger than this.
const CSV_EXPORT_LIMIT: usize = 100_000;

#[derive(Parser)]
#[command(name = "submfq", version, about = "Subsampled mean-field Q-learning experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent sweep cells (and verify checks).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Residual tolerance; overrides the learner's `tol`.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Suppress progress and summaries on stderr.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Learn one subsystem table.
    Learn {
        /// Subsystem size; defaults to the first entry of `sweep.k`.
        #[arg(long)]
        k: Option<usize>,
        /// Sample count; defaults to the first entry of `sweep.m`, else `learner.m`.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Run a learned table on the full system.
    Execute {
        /// Binary table written by `learn`.
        #[arg(long)]
        qtable: PathBuf,
        /// Overrides `execution.strategy`.
        #[arg(long, value_parser = parse_strategy)]
        strategy: Option<Strategy>,
    },
    /// Learn and evaluate every cell of the sweep.
    Sweep,
    /// Run the verification suite.
    Verify {
        /// Checks to run; all when omitted.
        checks: Vec<String>,
        /// Evaluate discount-dependent bounds with this γ instead.
        #[arg(long)]
        perturb_gamma: Option<f64>,
        /// Instances per check.
        #[arg(long)]
        instances: Option<usize>,
        /// Random pairs or Monte Carlo trials per check.
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown strategy {s:?}"))
}

struct Loaded {
    config: ExperimentConfig,
    spec: SystemSpec,
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<Loaded> {
        let path = self.config.as_ref().context("--config is required for this command")?;
        let mut config = ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(tol) = self.tol {
            config.learner.tol = tol;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        let spec = config.validate().with_context(|| format!("validating config {}", path.display()))?;
        let out = config.output_dir.clone();
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Loaded { config, spec, out })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct LearnArtifact<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    k: usize,
    m: Option<usize>,
    layout: Layout,
    table_entries: u64,
    seeds: SeedLineage,
    learn: &'a LearnReport,
}

fn cmd_learn(common: &Common, k: Option<usize>, m: Option<usize>) -> Result<()> {
    let Loaded { config, spec, out } = common.load()?;
    let k = k.unwrap_or(config.sweep.k[0]);
    let m = m.unwrap_or_else(|| config.sweep.m.as_ref().map_or(config.learner.m, |ms| ms[0]));
    let seeds = config.seeds(k, m);
    let learn_cfg = config.learner.to_config(k, m, seeds.learn);
    learn_cfg.validate(&spec)?;
    let every = (learn_cfg.iterations / 20).max(1);
    let (q, report) = learn_with_progress(&spec, &learn_cfg, &mut |p| {
        if p.iteration % every == 0 {
            common.note(format!("sweep {:>6}  residual {:.3e}", p.iteration, p.residual));
        }
    })?;
    let artifact = LearnArtifact {
        version: VERSION,
        config: &config,
        k,
        m: report.m,
        layout: report.layout,
        table_entries: report.table_entries,
        seeds,
        learn: &report,
    };
    let meta = serde_json::to_value(&artifact)?;
    q.save(&out.join("qtable.bin"), Some(meta))?;
    write_json(&out.join("learn_report.json"), &artifact)?;
    if q.len() <= CSV_EXPORT_LIMIT {
        q.write_csv(File::create(out.join("qtable.csv"))?)?;
    }
    common.note(format!(
        "learned k={k} {} table ({} entries) in {} sweeps, residual {:.3e}, converged={}",
        report.layout.name(),
        report.table_entries,
        report.iterations_used,
        report.final_residual,
        report.converged
    ));
    Ok(())
}

#[derive(Serialize)]
struct ExecuteSummary<'a> {
    version: &'a str,
    config: &'a ExperimentConfig,
    qtable: &'a Path,
    k: usize,
    layout: Layout,
    seeds: SeedLineage,
    /// Seed of the logged trajectory: evaluation episode 0.
    trajectory_seed: u64,
    strategy: Strategy,
    horizon: usize,
    discounted_return: f64,
    evaluation: EvalSummary,
}

fn cmd_execute(common: &Common, qtable: &Path, strategy: Option<Strategy>) -> Result<()> {
    let Loaded { config, spec, out } = common.load()?;
    let (q, _) = QTable::load(qtable).with_context(|| format!("loading {}", qtable.display()))?;
    if q.dims() != spec.dims() {
        bail!("table {} does not match the configured system's sets", qtable.display());
    }
    let k = q.k();
    let layout = q.layout();
    let policy = LearnedPolicy::new(q)?;
    let strategy = strategy.unwrap_or(config.execution.strategy);
    let horizon = config.horizon(&spec);
    let seeds = config.seeds(k, config.learner.m);
    let initial = config
        .execution
        .initial
        .clone()
        .unwrap_or_else(|| config.environment.default_initial(&spec));
    let dynamics = config.dynamics();
    let trajectory_seed = derive(seeds.eval, &[tag::EVAL, 0]);
    let run = ExecutionConfig {
        strategy,
        horizon,
        seed: trajectory_seed,
        initial: initial.clone(),
    };
    let trajectory = execute_with(&spec, &policy, &run, dynamics.as_ref())?;
    trajectory.write_csv(File::create(out.join("trajectory.csv"))?)?;
    let evaluation = evaluate_with(
        &spec,
        &policy,
        strategy,
        config.execution.episodes,
        horizon,
        seeds.eval,
        &initial,
        dynamics.as_ref(),
    )?;
    let summary = ExecuteSummary {
        version: VERSION,
        config: &config,
        qtable,
        k,
        layout,
        seeds,
        trajectory_seed,
        strategy,
        horizon,
        discounted_return: trajectory.discounted_return,
        evaluation,
    };
    write_json(&out.join("execute_summary.json"), &summary)?;
    common.note(format!(
        "return {:.6} over {horizon} steps; mean {:.6} ± {:.6} over {} episodes",
        summary.discounted_return, summary.evaluation.mean, summary.evaluation.half_width, summary.evaluation.episodes
    ));
    Ok(())
}

fn cmd_sweep(common: &Common) -> Result<()> {
    let Loaded { config, out, .. } = common.load()?;
    let records = run_sweep(&config, common.jobs)?;
    write_jsonl(&records, File::create(out.join("records.jsonl"))?)?;
    write_csv(&records, File::create(out.join("sweep.csv"))?)?;
    let cells: Vec<_> = records.iter().map(|r| json!({"k": r.k, "m": r.m, "seeds": r.seeds})).collect();
    let summary = trend(&records);
    write_json(
        &out.join("manifest.json"),
        &json!({
            "version": VERSION,
            "config": config,
            "cells": cells,
            "trend": summary,
            "files": ["records.jsonl", "sweep.csv"],
        }),
    )?;
    if !common.quiet {
        eprintln!("{:>4} {:>6} {:>12} {:>10} {:>12}", "k", "m", "return", "±", "entries");
        for r in &records {
            let m = r.m.map_or("-".to_string(), |m| m.to_string());
            eprintln!(
                "{:>4} {:>6} {:>12.5} {:>10.5} {:>12}",
                r.k, m, r.evaluation.mean, r.evaluation.half_width, r.table_entries
            );
        }
    }
    Ok(())
}

fn cmd_verify(
    common: &Common,
    names: &[String],
    perturb_gamma: Option<f64>,
    instances: Option<usize>,
    trials: Option<usize>,
) -> Result<bool> {
    let checks: Vec<Check> = if names.is_empty() || names.iter().any(|n| n == "all") {
        Check::ALL.to_vec()
    } else {
        names.iter().map(|n| Check::from_name(n)).collect::<submfq::Result<_>>()?
    };
    let mut params = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SuiteParams>(&text).with_context(|| format!("parsing suite params {}", path.display()))?
        }
        None => SuiteParams::default(),
    };
    if let Some(seed) = common.seed {
        params.seed = seed;
    }
    params.perturb_gamma = perturb_gamma.or(params.perturb_gamma);
    params.instances = instances.or(params.instances);
    params.trials = trials.or(params.trials);
    if let Some(g) = params.perturb_gamma {
        if !(0.0..1.0).contains(&g) {
            bail!("--perturb-gamma must lie in [0, 1)");
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(common.jobs.max(1)).build()?;
    let reports: Vec<CheckReport> = pool.install(|| run_checks(&checks, &params))?;
    let text = serde_json::to_string_pretty(&reports)? + "\n";
    if let Some(out) = &common.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("verify.json"), &text)?;
    }
    std::io::stdout().write_all(text.as_bytes())?;
    if !common.quiet {
        eprintln!("{:<20} {:>6} {:>10} {:>10} {:>12}  {}", "check", "inst", "trials", "violations", "worst margin", "result");
        for r in &reports {
            let verdict = match (r.passed, r.statistical) {
                (true, _) => "pass",
                (false, true) => "fail (statistical)",
                (false, false) => "FAIL",
            };
            eprintln!(
                "{:<20} {:>6} {:>10} {:>10} {:>12.3e}  {verdict}",
                r.name, r.instances, r.trials, r.violations, r.worst_margin
            );
        }
    }
    Ok(reports.iter().all(|r| r.passed || r.statistical))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Learn { k, m } => cmd_learn(&cli.common, *k, *m).map(|_| true),
        Command::Execute { qtable, strategy } => cmd_execute(&cli.common, qtable, *strategy).map(|_| true),
        Command::Sweep => cmd_sweep(&cli.common).map(|_| true),
        Command::Verify {
            checks,
            perturb_gamma,
            instances,
            trials,
        } => cmd_verify(&cli.common, checks, *perturb_gamma, *instances, *trials),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
