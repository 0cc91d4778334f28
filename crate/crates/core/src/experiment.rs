//! Learn → evaluate sweeps over `k` (and optionally `m`), with a fixed seed
//! lineage and plot-ready exports.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envs::{
    constrained_exploration, random_instance, ConstrainedExplorationParams, CoupledSqueeze, GaussianSqueezeParams,
    RandomSizes,
};
use crate::error::{invalid, Error, Result};
use crate::learner::{
    learn, LearnConfig, LearnReport, LearningRates, Mode, RewardNoise, DEFAULT_EXACT_WORK_CAP,
};
use crate::mdp::{SpecDocument, SystemSpec};
use crate::policy::{
    default_horizon, evaluate_with, Dynamics, EvalSummary, InitialState, KernelDynamics, LearnedPolicy, Strategy,
};
use crate::qtable::{Layout, QTable, DEFAULT_MAX_TABLE_ENTRIES};
use crate::rng::{derive, tag};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The system a sweep runs on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum EnvironmentConfig {
    GaussianSqueeze(GaussianSqueezeParams),
    ConstrainedExploration(ConstrainedExplorationParams),
    Random {
        seed: u64,
        sizes: RandomSizes,
    },
    /// An inline system document.
    Spec(Box<SpecDocument>),
    /// A system document on disk, relative to the working directory.
    SpecFile { path: PathBuf },
}

impl EnvironmentConfig {
    pub fn build(&self) -> Result<SystemSpec> {
        match self {
            EnvironmentConfig::GaussianSqueeze(p) => p.build(),
            EnvironmentConfig::ConstrainedExploration(p) => constrained_exploration(*p),
            EnvironmentConfig::Random { seed, sizes } => random_instance(*seed, *sizes),
            EnvironmentConfig::Spec(doc) => doc.as_ref().clone().into_spec(),
            EnvironmentConfig::SpecFile { path } => SystemSpec::load(path),
        }
    }

    /// The task's own start state, or uniform product otherwise.
    pub fn default_initial(&self, spec: &SystemSpec) -> InitialState {
        match self {
            EnvironmentConfig::GaussianSqueeze(p) => InitialState::Fixed {
                state: p.initial_state(),
            },
            EnvironmentConfig::ConstrainedExploration(p) => InitialState::Fixed {
                state: p.initial_state(),
            },
            _ => {
                let d = spec.dims();
                InitialState::Product {
                    global: vec![1.0; d.global_states],
                    local: vec![1.0; d.local_states],
                }
            }
        }
    }
}

/// Every [`LearnConfig`] field except `k` and `seed`, which the sweep sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerBlock {
    pub mode: Mode,
    pub iterations: usize,
    /// Used when the sweep lists no `m`.
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Layout family forced on every run: `"explicit_subset"` or `"mean_field"`.
    #[serde(default)]
    pub layout: Option<LayoutKind>,
    #[serde(default)]
    pub learning_rates: Option<LearningRates>,
    #[serde(default)]
    pub reward_averaging: Option<usize>,
    #[serde(default)]
    pub reward_noise: RewardNoise,
    #[serde(default = "default_max_entries")]
    pub max_table_entries: u64,
    #[serde(default = "default_work_cap")]
    pub exact_work_cap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    ExplicitSubset,
    MeanField,
}

fn one() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_entries() -> u64 {
    DEFAULT_MAX_TABLE_ENTRIES
}

fn default_work_cap() -> f64 {
    DEFAULT_EXACT_WORK_CAP
}

impl LearnerBlock {
    pub fn to_config(&self, k: usize, m: usize, seed: u64) -> LearnConfig {
        LearnConfig {
            k,
            m,
            iterations: self.iterations,
            tol: self.tol,
            seed,
            mode: self.mode,
            layout: self.layout.map(|l| match l {
                LayoutKind::ExplicitSubset => Layout::ExplicitSubset { k },
                LayoutKind::MeanField => Layout::MeanField { k },
            }),
            learning_rates: self.learning_rates.clone(),
            reward_averaging: self.reward_averaging,
            reward_noise: self.reward_noise.clone(),
            max_table_entries: self.max_table_entries,
            exact_work_cap: self.exact_work_cap,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsKind {
    #[default]
    Kernel,
    /// Gaussian squeeze only: coupled global state plus the logged objective.
    CoupledSqueeze,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionBlock {
    pub strategy: Strategy,
    /// Defaults to `⌈ln(10^-3)/ln γ⌉`.
    #[serde(default)]
    pub horizon: Option<usize>,
    pub episodes: usize,
    #[serde(default)]
    pub dynamics: DynamicsKind,
    #[serde(default)]
    pub initial: Option<InitialState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub k: Vec<usize>,
    #[serde(default)]
    pub m: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub learner: LearnerBlock,
    pub execution: ExecutionBlock,
    pub sweep: SweepBlock,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    /// Checks everything that does not need the system, then the system itself.
    pub fn validate(&self) -> Result<SystemSpec> {
        let ctx = "experiment config";
        if self.sweep.k.is_empty() {
            return Err(invalid(ctx, "sweep.k must be nonempty"));
        }
        if matches!(&self.sweep.m, Some(m) if m.is_empty()) {
            return Err(invalid(ctx, "sweep.m must be nonempty when given"));
        }
        if self.execution.episodes == 0 {
            return Err(invalid(ctx, "execution.episodes must be at least 1"));
        }
        if self.execution.dynamics == DynamicsKind::CoupledSqueeze
            && !matches!(self.environment, EnvironmentConfig::GaussianSqueeze(_))
        {
            return Err(invalid(ctx, "coupled_squeeze dynamics need the gaussian_squeeze environment"));
        }
        let spec = self.environment.build()?;
        for &k in &self.sweep.k {
            for m in self.m_values() {
                self.learner.to_config(k, m, 0).validate(&spec)?;
            }
        }
        Ok(spec)
    }

    fn m_values(&self) -> Vec<usize> {
        self.sweep.m.clone().unwrap_or_else(|| vec![self.learner.m])
    }

    pub fn horizon(&self, spec: &SystemSpec) -> usize {
        self.execution.horizon.unwrap_or_else(|| default_horizon(spec.gamma()))
    }

    pub fn seeds(&self, k: usize, m: usize) -> SeedLineage {
        SeedLineage {
            master: self.seed,
            learn: derive(self.seed, &[tag::LEARN, k as u64, m as u64]),
            eval: derive(self.seed, &[tag::EVAL]),
        }
    }

    /// Dynamics used for evaluation: the coupled squeeze when configured, else the kernels.
    pub fn dynamics(&self) -> Box<dyn Dynamics> {
        match (&self.execution.dynamics, &self.environment) {
            (DynamicsKind::CoupledSqueeze, EnvironmentConfig::GaussianSqueeze(p)) => Box::new(CoupledSqueeze { params: *p }),
            _ => Box::new(KernelDynamics),
        }
    }
}

/// `learn = derive(master, [LEARN, k, m])`; `eval = derive(master, [EVAL])`
/// is shared by every run so that evaluations use common random numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedLineage {
    pub master: u64,
    pub learn: u64,
    pub eval: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub version: String,
    pub config: ExperimentConfig,
    pub k: usize,
    pub m: Option<usize>,
    pub layout: Layout,
    pub table_entries: u64,
    pub seeds: SeedLineage,
    pub learn: LearnReport,
    pub evaluation: EvalSummary,
    pub learn_seconds: f64,
    pub eval_seconds: f64,
}

/// Learns and evaluates one `(k, m)` cell.
pub fn run_cell(config: &ExperimentConfig, spec: &SystemSpec, k: usize, m: usize) -> Result<(QTable, ExperimentRecord)> {
    let seeds = config.seeds(k, m);
    let learn_cfg = config.learner.to_config(k, m, seeds.learn);
    let (q, report) = learn(spec, &learn_cfg)?;
    let policy = LearnedPolicy::new(q)?;
    let initial = config
        .execution
        .initial
        .clone()
        .unwrap_or_else(|| config.environment.default_initial(spec));
    let start = Instant::now();
    let evaluation = evaluate_with(
        spec,
        &policy,
        config.execution.strategy,
        config.execution.episodes,
        config.horizon(spec),
        seeds.eval,
        &initial,
        config.dynamics().as_ref(),
    )?;
    let eval_seconds = start.elapsed().as_secs_f64();
    let record = ExperimentRecord {
        version: VERSION.to_string(),
        config: config.clone(),
        k,
        m: (learn_cfg.mode == Mode::Sampled).then_some(m),
        layout: report.layout,
        table_entries: report.table_entries,
        seeds,
        learn_seconds: report.learn_seconds,
        learn: report,
        evaluation,
        eval_seconds,
    };
    Ok((policy.into_table(), record))
}

/// Runs every `(k, m)` cell, at most `jobs` at a time. Records come back
/// ordered by `k` then `m`.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    let spec = config.validate()?;
    let cells: Vec<(usize, usize)> = config
        .sweep
        .k
        .iter()
        .flat_map(|&k| config.m_values().into_iter().map(move |m| (k, m)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid("sweep", e.to_string()))?;
    let mut records: Vec<ExperimentRecord> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(k, m)| run_cell(config, &spec, k, m).map(|(_, r)| r))
            .collect::<Result<_>>()
    })?;
    records.sort_by_key(|r| (r.k, r.m));
    Ok(records)
}

/// One JSON object per line.
pub fn write_jsonl<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(text: &str) -> Result<Vec<ExperimentRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// `k[,m],return,half_width,learn_seconds,table_entries`; the `m` column
/// appears when any record has one.
pub fn write_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let with_m = records.iter().any(|r| r.m.is_some());
    if with_m {
        writeln!(w, "k,m,return,half_width,learn_seconds,table_entries")?;
    } else {
        writeln!(w, "k,return,half_width,learn_seconds,table_entries")?;
    }
    for r in records {
        write!(w, "{}", r.k)?;
        if with_m {
            write!(w, ",{}", r.m.map(|m| m.to_string()).unwrap_or_default())?;
        }
        writeln!(
            w,
            ",{:?},{:?},{:?},{}",
            r.evaluation.mean, r.evaluation.half_width, r.learn_seconds, r.table_entries
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Monotonicity of a `k` sweep: a drop from one `k` to the next larger one
/// counts only when it exceeds the two half-widths combined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub ks: Vec<usize>,
    pub returns: Vec<f64>,
    pub half_widths: Vec<f64>,
    /// `(k_small, k_large, drop)` for every significant decrease.
    pub significant_drops: Vec<(usize, usize, f64)>,
    pub nondecreasing: bool,
    /// Return of the largest `k` minus that of the smallest.
    pub largest_minus_smallest: f64,
    pub combined_half_width: f64,
    pub largest_beats_smallest: bool,
}

/// Compares every ordered pair `k < k'`, not only neighbours.
pub fn trend(records: &[ExperimentRecord]) -> Option<TrendSummary> {
    let mut rs: Vec<&ExperimentRecord> = records.iter().collect();
    rs.sort_by_key(|r| r.k);
    let (first, last) = (rs.first()?, rs.last()?);
    let mut drops = Vec::new();
    for (i, a) in rs.iter().enumerate() {
        for b in &rs[i + 1..] {
            let drop = a.evaluation.mean - b.evaluation.mean;
            if b.k > a.k && drop > a.evaluation.half_width + b.evaluation.half_width {
                drops.push((a.k, b.k, drop));
            }
        }
    }
    let diff = last.evaluation.mean - first.evaluation.mean;
    let hw = first.evaluation.half_width + last.evaluation.half_width;
    Some(TrendSummary {
        ks: rs.iter().map(|r| r.k).collect(),
        returns: rs.iter().map(|r| r.evaluation.mean).collect(),
        half_widths: rs.iter().map(|r| r.evaluation.half_width).collect(),
        nondecreasing: drops.is_empty(),
        significant_drops: drops,
        largest_minus_smallest: diff,
        combined_half_width: hw,
        largest_beats_smallest: diff > hw,
    })
}
