//! Value iteration on a `k`-agent subsystem.
//!
//! One sweep computes, for every table entry, the subsystem reward plus the
//! discounted expected best value of the successor, either exactly (full
//! enumeration of the product kernel) or from `m` sampled successors shared
//! by the max. Sampled sweeps draw from a stream keyed by
//! `(seed, sweep, entry)`, so results do not depend on scheduling.

mod explicit;
mod mean_field;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Error, Result};
use crate::mdp::{Dims, SystemSpec};
use crate::qtable::{max_abs_diff, Layout, QTable, DEFAULT_MAX_TABLE_ENTRIES};
use crate::rng::{stream, tag, Rng};

/// Default cap on the multiply-adds of one exact sweep.
pub const DEFAULT_EXACT_WORK_CAP: f64 = 5e9;

pub(crate) trait Backend: Sync {
    /// Subsystem reward of every entry.
    fn reward(&self) -> &[f64];
    /// Best value of every successor key.
    fn state_values(&self, q: &[f64]) -> Vec<f64>;
    /// Exact expected successor value of every entry.
    fn expected_next(&self, v: &[f64], out: &mut [f64]);
    /// Mean of `m` sampled successor values of every entry.
    fn sampled_next(&self, v: &[f64], m: usize, seed: u64, sweep: u64, out: &mut [f64]);
}

/// `explicit_subset` when `|Z_l|^(k-1) ≤ k^|Z_l|`, otherwise `mean_field`,
/// with `|Z_l| = |S_l|·|A_l|`.
pub fn choose_layout(k: usize, local_states: usize, local_actions: usize) -> Layout {
    let z = (local_states * local_actions) as u128;
    let explicit = match (z.checked_pow(k as u32 - 1), (k as u128).checked_pow(z as u32)) {
        (Some(lhs), Some(rhs)) => lhs <= rhs,
        (None, Some(_)) => false,
        (Some(_), None) => true,
        (None, None) => (k as f64 - 1.0) * (z as f64).ln() <= z as f64 * (k as f64).ln(),
    };
    if explicit {
        Layout::ExplicitSubset { k }
    } else {
        Layout::MeanField { k }
    }
}

/// How successor expectations are computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExactExpectation,
    Sampled,
}

/// Step sizes of the damped iteration `Q ← (1-η)Q + η·𝒯Q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRates {
    Constant(f64),
    /// `η_t` for sweep `t`; the last value repeats past the end.
    Schedule(Vec<f64>),
}

impl LearningRates {
    fn at(&self, t: usize) -> f64 {
        match self {
            LearningRates::Constant(e) => *e,
            LearningRates::Schedule(v) => v[t.min(v.len() - 1)],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |e: f64| (0.0..=1.0).contains(&e);
        match self {
            LearningRates::Constant(e) if ok(*e) => Ok(()),
            LearningRates::Schedule(v) if !v.is_empty() && v.iter().all(|&e| ok(e)) => Ok(()),
            _ => Err(invalid("learning rates", "every η_t must lie in [0, 1] and a schedule must be nonempty")),
        }
    }
}

/// Reward randomness layered on top of the deterministic reward tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardNoise {
    #[default]
    None,
    /// Independent `uniform(-c_g, c_g)` on the global reward and
    /// `uniform(-c_l, c_l)` on each local reward.
    Uniform { global_half_width: f64, local_half_width: f64 },
}

impl RewardNoise {
    pub fn is_deterministic(&self) -> bool {
        match self {
            RewardNoise::None => true,
            RewardNoise::Uniform {
                global_half_width,
                local_half_width,
            } => *global_half_width == 0.0 && *local_half_width == 0.0,
        }
    }

    /// Noise on the subsystem reward: global draw plus the mean of `k` local draws.
    fn draw(&self, rng: &mut Rng, k: usize) -> f64 {
        use rand::Rng as _;
        match self {
            RewardNoise::None => 0.0,
            RewardNoise::Uniform {
                global_half_width: g,
                local_half_width: l,
            } => {
                let mut u = |c: f64| if c > 0.0 { rng.random_range(-c..c) } else { 0.0 };
                let global = u(*g);
                let local: f64 = (0..k).map(|_| u(*l)).sum();
                global + local / k as f64
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RewardNoise::Uniform {
                global_half_width: g,
                local_half_width: l,
            } if !(g.is_finite() && l.is_finite() && *g >= 0.0 && *l >= 0.0) => {
                Err(invalid("reward noise", "half widths must be finite and nonnegative"))
            }
            _ => Ok(()),
        }
    }
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_table_entries() -> u64 {
    DEFAULT_MAX_TABLE_ENTRIES
}

fn default_exact_work_cap() -> f64 {
    DEFAULT_EXACT_WORK_CAP
}

/// Inputs of a learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnConfig {
    /// Subsystem size.
    pub k: usize,
    /// Successor samples per entry per sweep (sampled mode).
    #[serde(default = "default_m")]
    pub m: usize,
    /// Sweep budget `T`.
    pub iterations: usize,
    /// Stop once `‖Q^{t+1} − Q^t‖∞ < tol`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    pub mode: Mode,
    /// Overrides [`choose_layout`].
    #[serde(default)]
    pub layout: Option<Layout>,
    /// Damping schedule; `None` is plain value iteration.
    #[serde(default)]
    pub learning_rates: Option<LearningRates>,
    /// `Ξ`: reward draws averaged per entry per sweep.
    #[serde(default)]
    pub reward_averaging: Option<usize>,
    #[serde(default)]
    pub reward_noise: RewardNoise,
    #[serde(default = "default_max_table_entries")]
    pub max_table_entries: u64,
    #[serde(default = "default_exact_work_cap")]
    pub exact_work_cap: f64,
}

fn default_m() -> usize {
    1
}

impl LearnConfig {
    pub fn exact(k: usize, iterations: usize) -> Self {
        LearnConfig {
            k,
            m: 1,
            iterations,
            tol: default_tol(),
            seed: 0,
            mode: Mode::ExactExpectation,
            layout: None,
            learning_rates: None,
            reward_averaging: None,
            reward_noise: RewardNoise::None,
            max_table_entries: DEFAULT_MAX_TABLE_ENTRIES,
            exact_work_cap: DEFAULT_EXACT_WORK_CAP,
        }
    }

    pub fn sampled(k: usize, m: usize, iterations: usize, seed: u64) -> Self {
        LearnConfig {
            m,
            seed,
            mode: Mode::Sampled,
            ..Self::exact(k, iterations)
        }
    }

    pub fn validate(&self, spec: &SystemSpec) -> Result<()> {
        let ctx = "learn config";
        if self.k == 0 || self.k > spec.n() {
            return Err(invalid(ctx, format!("k must lie in 1..={}, got {}", spec.n(), self.k)));
        }
        if self.mode == Mode::Sampled && self.m == 0 {
            return Err(invalid(ctx, "m must be at least 1 in sampled mode"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid(ctx, "tol must be positive"));
        }
        if let Some(l) = self.layout {
            if l.k() != self.k || matches!(l, Layout::Joint { .. }) && self.k != spec.n() {
                return Err(invalid(ctx, "layout override must match k"));
            }
        }
        if let Some(r) = &self.learning_rates {
            r.validate()?;
        }
        if self.reward_averaging == Some(0) {
            return Err(invalid(ctx, "reward averaging needs at least one draw"));
        }
        self.reward_noise.validate()
    }

    pub fn resolved_layout(&self, dims: Dims) -> Layout {
        self.layout
            .unwrap_or_else(|| choose_layout(self.k, dims.local_states, dims.local_actions))
    }
}

/// Outcome of a learning run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub layout: Layout,
    pub k: usize,
    pub mode: Mode,
    pub m: Option<usize>,
    pub iterations_used: usize,
    pub final_residual: f64,
    pub converged: bool,
    pub table_entries: u64,
    /// `‖Q^{t+1} − Q^t‖∞` of every sweep.
    pub residuals: Vec<f64>,
    pub max_abs_value: f64,
    /// `‖Q̂_{k,m} − Q̂_k^*‖∞` when an exact comparison was made.
    pub epsilon_km_estimate: Option<f64>,
    pub learn_seconds: f64,
}

/// One line of the optional progress stream.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Progress {
    pub iteration: usize,
    pub residual: f64,
    pub elapsed_seconds: f64,
}

/// A prepared operator for one spec and layout.
pub struct Operator<'a> {
    spec: &'a SystemSpec,
    layout: Layout,
    backend: Box<dyn Backend + 'a>,
    entries: usize,
    exact_allowed: Result<()>,
}

impl<'a> Operator<'a> {
    pub fn new(spec: &'a SystemSpec, layout: Layout) -> Result<Self> {
        Self::with_caps(spec, layout, DEFAULT_MAX_TABLE_ENTRIES, DEFAULT_EXACT_WORK_CAP)
    }

    pub fn with_caps(spec: &'a SystemSpec, layout: Layout, max_entries: u64, exact_work_cap: f64) -> Result<Self> {
        let k = layout.k();
        if k == 0 || k > spec.n() {
            return Err(contract(format!("subsystem size {k} must lie in 1..={}", spec.n())));
        }
        if matches!(layout, Layout::Joint { n } if n != spec.n()) {
            return Err(contract("a joint table must cover all n agents"));
        }
        let entries = QTable::zeros_capped(layout, spec.dims(), max_entries)?.len();
        let (backend, work): (Box<dyn Backend + 'a>, Option<f64>) = match layout {
            Layout::MeanField { .. } => (
                Box::new(mean_field::MeanField::new(spec, k, entries)?),
                mean_field::MeanField::exact_work(spec, k),
            ),
            _ => (Box::new(explicit::Explicit::new(spec, k, entries)), Some(explicit::Explicit::exact_work(spec, k))),
        };
        let exact_allowed = match work {
            Some(w) if w <= exact_work_cap => Ok(()),
            other => Err(Error::Capacity {
                what: format!("exact successor enumeration for {} k={k}", layout.name()),
                required: other.unwrap_or(f64::INFINITY),
                cap: exact_work_cap,
            }),
        };
        Ok(Operator {
            spec,
            layout,
            backend,
            entries,
            exact_allowed,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn entries(&self) -> usize {
        self.entries
    }

    fn check(&self, q: &QTable) -> Result<()> {
        if q.layout() != self.layout || q.dims() != self.spec.dims() {
            return Err(contract("table does not match the operator's layout"));
        }
        Ok(())
    }

    /// `𝒯̂_k q`: subsystem reward plus the discounted exact expectation of the
    /// best successor value.
    pub fn adapted(&self, q: &QTable) -> Result<QTable> {
        self.check(q)?;
        let succ = self.successor_at(q.values(), None, 0, 0)?;
        let out = combine(self.backend.reward(), &succ, self.spec.gamma());
        q.with_values(out)
    }

    /// `𝒯̂_{k,m} q` with the sample stream of sweep `sweep` under `seed`.
    pub fn empirical(&self, q: &QTable, m: usize, seed: u64, sweep: u64) -> Result<QTable> {
        self.check(q)?;
        if m == 0 {
            return Err(contract("m must be at least 1"));
        }
        let succ = self.successor_at(q.values(), Some(m), seed, sweep)?;
        let out = combine(self.backend.reward(), &succ, self.spec.gamma());
        q.with_values(out)
    }

    fn successor_at(&self, q: &[f64], m: Option<usize>, seed: u64, sweep: u64) -> Result<Vec<f64>> {
        let v = self.backend.state_values(q);
        let mut out = vec![0.0; self.entries];
        match m {
            None => {
                if let Err(e) = &self.exact_allowed {
                    return Err(clone_capacity(e));
                }
                self.backend.expected_next(&v, &mut out)
            }
            Some(m) => self.backend.sampled_next(&v, m, seed, sweep, &mut out),
        }
        Ok(out)
    }
}

fn clone_capacity(e: &Error) -> Error {
    match e {
        Error::Capacity { what, required, cap } => Error::Capacity {
            what: what.clone(),
            required: *required,
            cap: *cap,
        },
        other => contract(other.to_string()),
    }
}

fn combine(reward: &[f64], succ: &[f64], gamma: f64) -> Vec<f64> {
    reward.par_iter().zip(succ.par_iter()).map(|(&r, &s)| r + gamma * s).collect()
}

/// `𝒯̂_k q` on the layout of `q`.
pub fn adapted_bellman(spec: &SystemSpec, q: &QTable) -> Result<QTable> {
    Operator::new(spec, q.layout())?.adapted(q)
}

/// `𝒯̂_{k,m} q` on the layout of `q`, drawing the samples of sweep `sweep`.
pub fn empirical_bellman(spec: &SystemSpec, q: &QTable, m: usize, seed: u64, sweep: u64) -> Result<QTable> {
    Operator::new(spec, q.layout())?.empirical(q, m, seed, sweep)
}

/// Value iteration from zero (plain, damped or reward-averaged depending on
/// the config).
pub fn learn(spec: &SystemSpec, config: &LearnConfig) -> Result<(QTable, LearnReport)> {
    learn_with_progress(spec, config, &mut |_| {})
}

/// [`learn`] with a callback receiving one [`Progress`] per sweep.
pub fn learn_with_progress(
    spec: &SystemSpec,
    config: &LearnConfig,
    progress: &mut dyn FnMut(&Progress),
) -> Result<(QTable, LearnReport)> {
    config.validate(spec)?;
    let start = Instant::now();
    let layout = config.resolved_layout(spec.dims());
    let op = Operator::with_caps(spec, layout, config.max_table_entries, config.exact_work_cap)?;
    if config.mode == Mode::ExactExpectation {
        if let Err(e) = &op.exact_allowed {
            return Err(clone_capacity(e));
        }
    }
    let gamma = spec.gamma();
    let k = layout.k();
    let reward = op.backend.reward();
    let noisy = config.reward_averaging.is_some() && !config.reward_noise.is_deterministic();
    let xi = config.reward_averaging.unwrap_or(1);

    let mut q = vec![0.0; op.entries];
    let mut residuals = Vec::new();
    let mut converged = false;
    for t in 0..config.iterations {
        let m = (config.mode == Mode::Sampled).then_some(config.m);
        let succ = op.successor_at(&q, m, config.seed, t as u64)?;
        let eta = config.learning_rates.as_ref().map(|r| r.at(t));
        let next: Vec<f64> = (0..op.entries)
            .into_par_iter()
            .map(|e| {
                let r = if noisy {
                    let mut rng = stream(config.seed, &[tag::REWARD, t as u64, e as u64]);
                    let mut mean = 0.0;
                    for j in 0..xi {
                        let x = reward[e] + config.reward_noise.draw(&mut rng, k);
                        mean += (x - mean) / (j + 1) as f64;
                    }
                    mean
                } else {
                    reward[e]
                };
                let backup = r + gamma * succ[e];
                match eta {
                    Some(eta) if eta != 1.0 => (1.0 - eta) * q[e] + eta * backup,
                    _ => backup,
                }
            })
            .collect();
        let residual = max_abs_diff(&next, &q);
        q = next;
        residuals.push(residual);
        progress(&Progress {
            iteration: t + 1,
            residual,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        if residual < config.tol {
            converged = true;
            break;
        }
    }
    let table = QTable::from_values(layout, spec.dims(), q)?;
    let report = LearnReport {
        layout,
        k,
        mode: config.mode,
        m: (config.mode == Mode::Sampled).then_some(config.m),
        iterations_used: residuals.len(),
        final_residual: residuals.last().copied().unwrap_or(0.0),
        converged,
        table_entries: table.len() as u64,
        residuals,
        max_abs_value: table.max_abs(),
        epsilon_km_estimate: None,
        learn_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((table, report))
}

/// Damped iteration `Q^{t+1} = (1-η_t)Q^t + η_t·𝒯Q^t`; `η_t ≡ 1` is [`learn`].
pub fn learn_stable(spec: &SystemSpec, config: &LearnConfig, rates: LearningRates) -> Result<(QTable, LearnReport)> {
    let config = LearnConfig {
        learning_rates: Some(rates),
        ..config.clone()
    };
    learn(spec, &config)
}

/// Averages `xi` draws of the noisy subsystem reward in every backup.
pub fn learn_stochastic_rewards(
    spec: &SystemSpec,
    config: &LearnConfig,
    noise: RewardNoise,
    xi: usize,
) -> Result<(QTable, LearnReport)> {
    let config = LearnConfig {
        reward_noise: noise,
        reward_averaging: Some(xi),
        ..config.clone()
    };
    learn(spec, &config)
}

/// Sampled learning followed by an exact run on the same layout; the report
/// carries `‖Q̂_{k,m} − Q̂_k^*‖∞`.
pub fn learn_with_noise_estimate(spec: &SystemSpec, config: &LearnConfig) -> Result<(QTable, LearnReport)> {
    let (q, mut report) = learn(spec, config)?;
    let exact = LearnConfig {
        mode: Mode::ExactExpectation,
        layout: Some(report.layout),
        iterations: config.iterations.max(10_000),
        learning_rates: None,
        reward_averaging: None,
        reward_noise: RewardNoise::None,
        ..config.clone()
    };
    let (q_star, _) = learn(spec, &exact)?;
    report.epsilon_km_estimate = Some(q.max_abs_diff(&q_star)?);
    Ok((q, report))
}

/// Sample size `m*` of the subsystem learner:
/// `2|S_g||A_g||S_l||A_l| k^{2.5+|S_l||A_l|} / (1-γ)^5 · ln(|S_g||A_g||A_l||S_l|) · ln(1/(1-γ)^2)`,
/// rounded up and clamped below at 1.
pub fn sample_size_mstar(dims: Dims, gamma: f64, k: usize) -> Result<u64> {
    if k == 0 {
        return Err(contract("k must be at least 1"));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(contract("gamma must lie in [0, 1)"));
    }
    let size = (dims.global_states * dims.global_actions * dims.local_states * dims.local_actions) as f64;
    let z = dims.local_cells() as f64;
    let value = 2.0 * size * (k as f64).powf(2.5 + z) / (1.0 - gamma).powi(5) * size.ln() * (1.0 / (1.0 - gamma).powi(2)).ln();
    let rounded = value.ceil();
    if !rounded.is_finite() || rounded > u64::MAX as f64 {
        return Err(Error::Capacity {
            what: format!("sample size m* (unrounded {value:e})"),
            required: value,
            cap: u64::MAX as f64,
        });
    }
    Ok((rounded as u64).max(1))
}

/// `Ξ = ⌈10·range·k^{1/4}·sqrt(ln(200·sqrt(k)))⌉`, the number of reward draws
/// averaged per backup; `range` is the width of the reward support.
pub fn hoeffding_repetitions(range: f64, k: usize) -> Result<usize> {
    if k == 0 || !(range >= 0.0) || !range.is_finite() {
        return Err(contract("k must be positive and the range finite and nonnegative"));
    }
    let k = k as f64;
    let x = 10.0 * range * k.powf(0.25) * (200.0 * k.sqrt()).ln().sqrt();
    Ok((x.ceil() as usize).max(1))
}
