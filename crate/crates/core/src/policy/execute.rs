use std::io::Write;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LearnedPolicy;
use crate::error::{contract, invalid, Result};
use crate::mdp::{system_reward, JointAction, JointState, SystemSpec};
use crate::meanfield::{sample_excluding, sample_without_replacement};
use crate::rng::{derive, stream, tag, Rng};

/// How the learned `k`-agent policy drives `n` agents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Fresh subsets for the global agent and for every local agent each step.
    Independent,
    /// Contiguous groups of `k`; each group shares one random ordering per step.
    WeakShared,
    /// A random partition into groups of `k`, fixed for the run; full groups
    /// act on themselves and the residual group is padded each step.
    StrongShared,
}

/// Distribution of the initial joint state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    Fixed { state: JointState },
    /// `s_g ~ global`, each `s_i ~ local` independently.
    Product { global: Vec<f64>, local: Vec<f64> },
}

impl InitialState {
    fn draw(&self, spec: &SystemSpec, rng: &mut Rng) -> Result<JointState> {
        use rand::Rng as _;
        let d = spec.dims();
        match self {
            InitialState::Fixed { state } => {
                spec.check_state(state)?;
                Ok(state.clone())
            }
            InitialState::Product { global, local } => {
                if global.len() != d.global_states || local.len() != d.local_states {
                    return Err(invalid("initial state", "distribution lengths must match the state sets"));
                }
                let pick = |w: &[f64], rng: &mut Rng| -> Result<usize> {
                    let total: f64 = w.iter().sum();
                    if w.iter().any(|x| !(*x >= 0.0)) || !(total > 0.0) {
                        return Err(invalid("initial state", "weights must be nonnegative with positive sum"));
                    }
                    let u: f64 = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    for (i, &x) in w.iter().enumerate() {
                        acc += x;
                        if u < acc {
                            return Ok(i);
                        }
                    }
                    Ok(w.iter().rposition(|&x| x > 0.0).unwrap_or(0))
                };
                let s_g = pick(global, rng)?;
                let s_locals = (0..spec.n()).map(|_| pick(local, rng)).collect::<Result<_>>()?;
                Ok(JointState::new(s_g, s_locals))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionConfig {
    pub strategy: Strategy,
    /// Number of steps `T'`.
    pub horizon: usize,
    pub seed: u64,
    pub initial: InitialState,
}

/// How joint states evolve.
pub trait Dynamics: Sync {
    fn step(&self, spec: &SystemSpec, rng: &mut Rng, s: &JointState, a: &JointAction) -> JointState;

    /// Extra per-step quantity logged next to the reward.
    fn objective(&self, _s: &JointState, _a: &JointAction) -> Option<f64> {
        None
    }

    fn name(&self) -> &'static str;
}

/// The system's own kernels. One uniform for the global agent, then one per
/// local agent in index order.
#[derive(Clone, Copy, Debug, Default)]
pub struct KernelDynamics;

impl Dynamics for KernelDynamics {
    fn step(&self, spec: &SystemSpec, rng: &mut Rng, s: &JointState, a: &JointAction) -> JointState {
        let s_g = spec.global_row(s.s_g, a.a_g).sample(rng);
        let s_locals = s
            .s_locals
            .iter()
            .zip(&a.a_locals)
            .map(|(&si, &ai)| spec.local_row(si, s.s_g, ai).sample(rng))
            .collect();
        JointState::new(s_g, s_locals)
    }

    fn name(&self) -> &'static str {
        "kernel"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: JointState,
    pub action: JointAction,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub gamma: f64,
    pub steps: Vec<Step>,
    /// `Σ_t γ^t r_t`.
    pub discounted_return: f64,
}

impl Trajectory {
    /// Recomputes `Σ_t γ^t r_t` from the step log in the order it was
    /// accumulated, reproducing `discounted_return` exactly.
    pub fn recompute_return(&self) -> f64 {
        discounted(self.gamma, self.steps.iter().map(|s| s.reward))
    }

    /// `step,s_g,s_1..s_n,a_g,a_1..a_n,reward[,objective]`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = std::io::BufWriter::new(out);
        let n = self.steps.first().map_or(0, |s| s.state.s_locals.len());
        let has_obj = self.steps.iter().any(|s| s.objective.is_some());
        let mut header = vec!["step".to_string(), "s_g".into()];
        header.extend((1..=n).map(|i| format!("s_{i}")));
        header.push("a_g".into());
        header.extend((1..=n).map(|i| format!("a_{i}")));
        header.push("reward".into());
        if has_obj {
            header.push("objective".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (t, s) in self.steps.iter().enumerate() {
            write!(w, "{t},{}", s.state.s_g)?;
            for x in &s.state.s_locals {
                write!(w, ",{x}")?;
            }
            write!(w, ",{}", s.action.a_g)?;
            for x in &s.action.a_locals {
                write!(w, ",{x}")?;
            }
            write!(w, ",{:?}", s.reward)?;
            if has_obj {
                write!(w, ",{:?}", s.objective.unwrap_or(f64::NAN))?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn discounted(gamma: f64, rewards: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut disc = 1.0;
    for r in rewards {
        total += disc * r;
        disc *= gamma;
    }
    total
}

/// Most frequent proposal; ties go to the smallest action index.
pub fn majority(proposals: &[usize], actions: usize) -> usize {
    let mut votes = vec![0usize; actions];
    for &p in proposals {
        votes[p] += 1;
    }
    let mut best = 0;
    for (a, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = a;
        }
    }
    best
}

/// Agent groups used by a shared strategy: contiguous blocks of `k` for
/// weak sharing, a seeded random partition for strong sharing, none for the
/// independent strategy. The last group holds `n mod k` agents when `k`
/// does not divide `n`.
pub fn partition(strategy: Strategy, n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    if k == 0 {
        return Vec::new();
    }
    match strategy {
        Strategy::Independent => Vec::new(),
        Strategy::WeakShared => (0..n).collect::<Vec<_>>().chunks(k).map(<[usize]>::to_vec).collect(),
        Strategy::StrongShared => {
            let mut prng = stream(seed, &[tag::PARTITION]);
            let order = index::sample(&mut prng, n, n).into_vec();
            order
                .chunks(k)
                .map(|c| {
                    let mut g = c.to_vec();
                    g.sort_unstable();
                    g
                })
                .collect()
        }
    }
}

/// Chooses joint actions for one run.
struct Controller<'a> {
    policy: &'a LearnedPolicy,
    strategy: Strategy,
    n: usize,
    k: usize,
    global_actions: usize,
    groups: Vec<Vec<usize>>,
    rng: Rng,
}

impl<'a> Controller<'a> {
    fn new(spec: &SystemSpec, policy: &'a LearnedPolicy, strategy: Strategy, seed: u64) -> Result<Self> {
        let (n, k) = (spec.n(), policy.k());
        if k > n {
            return Err(contract(format!("policy subsystem size {k} exceeds n={n}")));
        }
        if policy.table().dims() != spec.dims() {
            return Err(contract("policy table does not match the system's sets"));
        }
        let groups = partition(strategy, n, k, seed);
        Ok(Controller {
            policy,
            strategy,
            n,
            k,
            global_actions: spec.dims().global_actions,
            groups,
            rng: stream(seed, &[tag::POLICY]),
        })
    }

    fn act(&mut self, s: &JointState) -> Result<JointAction> {
        let (n, k) = (self.n, self.k);
        let states = |idx: &[usize]| idx.iter().map(|&i| s.s_locals[i]).collect::<Vec<_>>();
        let mut a_locals = vec![0; n];
        let a_g = match self.strategy {
            Strategy::Independent => {
                let delta = sample_without_replacement(&mut self.rng, n, k)?;
                let a_g = self.policy.greedy_global(s.s_g, &states(&delta))?;
                for (i, slot) in a_locals.iter_mut().enumerate() {
                    let peers = sample_excluding(&mut self.rng, n, &[i], k - 1)?;
                    *slot = self.policy.greedy_local(s.s_g, s.s_locals[i], &states(&peers))?;
                }
                a_g
            }
            Strategy::WeakShared => {
                let mut proposals = Vec::with_capacity(self.groups.len());
                for g in &self.groups {
                    let order = index::sample(&mut self.rng, n, n).into_vec();
                    proposals.push(self.policy.greedy_global(s.s_g, &states(&order[..k]))?);
                    for &j in g {
                        let peers: Vec<usize> = order.iter().copied().filter(|&x| x != j).take(k - 1).collect();
                        a_locals[j] = self.policy.greedy_local(s.s_g, s.s_locals[j], &states(&peers))?;
                    }
                }
                majority(&proposals, self.global_actions)
            }
            Strategy::StrongShared => {
                let mut proposals = Vec::with_capacity(self.groups.len());
                for g in &self.groups {
                    let mut members = g.clone();
                    if g.len() < k {
                        members.extend(sample_excluding(&mut self.rng, n, g, k - g.len())?);
                    }
                    proposals.push(self.policy.greedy_global(s.s_g, &states(&members))?);
                    for &j in g {
                        let peers: Vec<usize> = members.iter().copied().filter(|&x| x != j).collect();
                        a_locals[j] = self.policy.greedy_local(s.s_g, s.s_locals[j], &states(&peers))?;
                    }
                }
                majority(&proposals, self.global_actions)
            }
        };
        Ok(JointAction::new(a_g, a_locals))
    }
}

/// Runs the policy for `config.horizon` steps under the system's kernels.
pub fn execute(spec: &SystemSpec, policy: &LearnedPolicy, config: &ExecutionConfig) -> Result<Trajectory> {
    execute_with(spec, policy, config, &KernelDynamics)
}

/// [`execute`] with custom dynamics. The environment, the policy's subset
/// draws and the initial state use separate streams derived from the seed.
pub fn execute_with(
    spec: &SystemSpec,
    policy: &LearnedPolicy,
    config: &ExecutionConfig,
    dynamics: &dyn Dynamics,
) -> Result<Trajectory> {
    if config.horizon == 0 {
        return Err(invalid("execution config", "horizon must be at least 1"));
    }
    let mut controller = Controller::new(spec, policy, config.strategy, config.seed)?;
    let mut env = stream(config.seed, &[tag::ENV]);
    let mut s = config.initial.draw(spec, &mut stream(config.seed, &[tag::ENV, tag::INSTANCE]))?;
    let mut steps = Vec::with_capacity(config.horizon);
    let gamma = spec.gamma();
    let mut total = 0.0;
    let mut disc = 1.0;
    for t in 0..config.horizon {
        let a = controller.act(&s)?;
        let reward = system_reward(spec, &s, &a)?;
        total += disc * reward;
        disc *= gamma;
        let objective = dynamics.objective(&s, &a);
        let next = if t + 1 < config.horizon {
            Some(dynamics.step(spec, &mut env, &s, &a))
        } else {
            None
        };
        steps.push(Step {
            state: s.clone(),
            action: a,
            reward,
            objective,
        });
        if let Some(next) = next {
            s = next;
        }
    }
    Ok(Trajectory {
        gamma,
        steps,
        discounted_return: total,
    })
}

/// `⌈ln(10^-3)/ln γ⌉`: the horizon whose discounted tail is at most a
/// thousandth of the value bound.
pub fn default_horizon(gamma: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((1e-3f64).ln() / gamma.ln()).ceil().max(1.0) as usize
}

/// Monte Carlo estimate of the discounted return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub strategy: Strategy,
    pub episodes: usize,
    pub horizon: usize,
    pub mean: f64,
    pub std_dev: f64,
    /// `1.96·sd/sqrt(episodes)`.
    pub half_width: f64,
    /// `γ^horizon·r̃/(1−γ)`, the largest possible contribution of later steps.
    pub truncation_error: f64,
    /// Mean of the per-step objective over all steps, when the dynamics log one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_objective: Option<f64>,
}

/// Runs `episodes` independent episodes; episode `e` uses the seed
/// `derive(seed, [EVAL, e])`, so the result does not depend on scheduling.
pub fn evaluate_policy(
    spec: &SystemSpec,
    policy: &LearnedPolicy,
    strategy: Strategy,
    episodes: usize,
    horizon: usize,
    seed: u64,
    initial: &InitialState,
) -> Result<EvalSummary> {
    evaluate_with(spec, policy, strategy, episodes, horizon, seed, initial, &KernelDynamics)
}

#[allow(clippy::too_many_arguments)]
pub fn evaluate_with(
    spec: &SystemSpec,
    policy: &LearnedPolicy,
    strategy: Strategy,
    episodes: usize,
    horizon: usize,
    seed: u64,
    initial: &InitialState,
    dynamics: &dyn Dynamics,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(invalid("evaluation", "episodes must be at least 1"));
    }
    let runs: Vec<(f64, Option<f64>)> = (0..episodes)
        .into_par_iter()
        .map(|e| {
            let config = ExecutionConfig {
                strategy,
                horizon,
                seed: derive(seed, &[tag::EVAL, e as u64]),
                initial: initial.clone(),
            };
            let t = execute_with(spec, policy, &config, dynamics)?;
            let objs: Vec<f64> = t.steps.iter().filter_map(|s| s.objective).collect();
            let obj = (!objs.is_empty()).then(|| objs.iter().sum::<f64>() / objs.len() as f64);
            Ok((t.discounted_return, obj))
        })
        .collect::<Result<_>>()?;
    let n = episodes as f64;
    // Welford, in episode order: equal returns give a zero spread exactly.
    let (mut mean, mut m2) = (0.0, 0.0);
    for (i, r) in runs.iter().enumerate() {
        let delta = r.0 - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (r.0 - mean);
    }
    let var = if episodes > 1 { m2 / (n - 1.0) } else { 0.0 };
    let std_dev = var.sqrt();
    let objs: Vec<f64> = runs.iter().filter_map(|r| r.1).collect();
    Ok(EvalSummary {
        strategy,
        episodes,
        horizon,
        mean,
        std_dev,
        half_width: 1.96 * std_dev / n.sqrt(),
        truncation_error: spec.gamma().powi(horizon as i32) * spec.value_bound(),
        mean_objective: (!objs.is_empty()).then(|| objs.iter().sum::<f64>() / objs.len() as f64),
    })
}

/// Visits every `k`-subset of `pool` in lexicographic order.
fn for_each_subset(pool: &[usize], k: usize, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
    fn rec(pool: &[usize], k: usize, start: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize]) -> Result<()>) -> Result<()> {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..pool.len() {
            if pool.len() - i < k - cur.len() {
                break;
            }
            cur.push(pool[i]);
            rec(pool, k, i + 1, cur, f)?;
            cur.pop();
        }
        Ok(())
    }
    rec(pool, k, 0, &mut Vec::with_capacity(k), f)
}

/// Exact law of the independent strategy's global action at `s`: the
/// average over all `k`-subsets of the indicator of the greedy choice.
pub fn global_action_mixture(spec: &SystemSpec, policy: &LearnedPolicy, s: &JointState) -> Result<Vec<f64>> {
    spec.check_state(s)?;
    let mut counts = vec![0usize; spec.dims().global_actions];
    let pool: Vec<usize> = (0..spec.n()).collect();
    let mut total = 0usize;
    for_each_subset(&pool, policy.k(), &mut |sub| {
        let states: Vec<usize> = sub.iter().map(|&i| s.s_locals[i]).collect();
        counts[policy.greedy_global(s.s_g, &states)?] += 1;
        total += 1;
        Ok(())
    })?;
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}

/// Exact law of agent `i`'s action under the independent strategy.
pub fn local_action_mixture(spec: &SystemSpec, policy: &LearnedPolicy, s: &JointState, i: usize) -> Result<Vec<f64>> {
    spec.check_state(s)?;
    if i >= spec.n() {
        return Err(contract("agent index out of range"));
    }
    let mut counts = vec![0usize; spec.dims().local_actions];
    let pool: Vec<usize> = (0..spec.n()).filter(|&j| j != i).collect();
    let mut total = 0usize;
    for_each_subset(&pool, policy.k() - 1, &mut |sub| {
        let states: Vec<usize> = sub.iter().map(|&j| s.s_locals[j]).collect();
        counts[policy.greedy_local(s.s_g, s.s_locals[i], &states)?] += 1;
        total += 1;
        Ok(())
    })?;
    Ok(counts.iter().map(|&c| c as f64 / total as f64).collect())
}
