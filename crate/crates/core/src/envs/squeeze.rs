use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::{Dims, JointAction, JointState, Labels, SpecParts, SystemSpec};
use crate::policy::{Dynamics, KernelDynamics};
use crate::rng::Rng;

/// Gaussian squeeze. Local states are the values `1..=local_states`, local
/// actions the values `0..local_actions`, and the global state ranges over the
/// local state values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSqueezeParams {
    pub n: usize,
    /// Bernoulli increment probability.
    pub p: f64,
    /// Mean and width of the logged objective `x·exp(-(x-μ)²/σ²)`.
    pub mu: f64,
    pub sigma: f64,
    #[serde(default = "default_states")]
    pub local_states: usize,
    #[serde(default = "default_actions")]
    pub local_actions: usize,
    #[serde(default = "one")]
    pub global_actions: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_states() -> usize {
    20
}

fn default_actions() -> usize {
    10
}

fn one() -> usize {
    1
}

fn default_gamma() -> f64 {
    0.9
}

impl GaussianSqueezeParams {
    /// The full-size task: `S_l = {1,…,20}`, `A_l = {0,…,9}`.
    pub fn new(n: usize, p: f64, mu: f64, sigma: f64) -> Self {
        GaussianSqueezeParams {
            n,
            p,
            mu,
            sigma,
            local_states: default_states(),
            local_actions: default_actions(),
            global_actions: 1,
            gamma: default_gamma(),
        }
    }

    /// Global state at value 1, every local agent at the top value.
    pub fn initial_state(&self) -> JointState {
        JointState::new(0, vec![self.local_states - 1; self.n])
    }

    /// `⌈|S_l|/2⌉`, the value the surrogate global state drifts down to.
    pub fn global_target(&self) -> usize {
        self.local_states.div_ceil(2)
    }

    fn validate(&self) -> Result<()> {
        let ctx = "gaussian squeeze";
        if !(0.0..=1.0).contains(&self.p) {
            return Err(invalid(ctx, "p must lie in [0, 1]"));
        }
        if !(self.sigma > 0.0) || !self.mu.is_finite() {
            return Err(invalid(ctx, "sigma must be positive and mu finite"));
        }
        if self.local_states == 0 || self.local_actions == 0 || self.global_actions == 0 {
            return Err(invalid(ctx, "state and action sets must be nonempty"));
        }
        Ok(())
    }

    /// Surrogate kernels of the task.
    ///
    /// Local: `s_i' = clamp(s_i − 1{s_i > s_g} + Ber(p), 1, |S_l|)`.
    /// Global: `s_g' = clamp(s_g − 1{s_g > ⌈|S_l|/2⌉} + Ber(p), 1, |S_l|)`.
    /// Rewards: `r_g = −s_g`, `r_l = 4·1{s_i > s_g} − 2·1{a_i > s_g}`.
    pub fn build(&self) -> Result<SystemSpec> {
        self.validate()?;
        let (l, al, ag) = (self.local_states, self.local_actions, self.global_actions);
        let value = |idx: usize| idx + 1;
        let step = |from: usize, down: bool, out: &mut [f64]| {
            let base = value(from) - usize::from(down);
            let lo = base.clamp(1, l);
            let hi = (base + 1).clamp(1, l);
            out[lo - 1] += 1.0 - self.p;
            out[hi - 1] += self.p;
        };
        let mut p_global = vec![0.0; l * ag * l];
        let mut r_global = vec![0.0; l * ag];
        for g in 0..l {
            for a in 0..ag {
                let row = g * ag + a;
                step(g, value(g) > self.global_target(), &mut p_global[row * l..(row + 1) * l]);
                r_global[row] = -(value(g) as f64);
            }
        }
        let mut p_local = vec![0.0; l * l * al * l];
        let mut r_local = vec![0.0; l * l * al];
        for s in 0..l {
            for g in 0..l {
                for a in 0..al {
                    let row = (s * l + g) * al + a;
                    step(s, value(s) > value(g), &mut p_local[row * l..(row + 1) * l]);
                    let above = if value(s) > value(g) { 4.0 } else { 0.0 };
                    let over = if a > value(g) { 2.0 } else { 0.0 };
                    r_local[row] = above - over;
                }
            }
        }
        let states: Vec<String> = (1..=l).map(|v| v.to_string()).collect();
        SystemSpec::new(SpecParts {
            n: self.n,
            dims: Dims::new(l, l, ag, al),
            p_global,
            p_local,
            r_global,
            r_local,
            gamma: self.gamma,
            bound_global: None,
            bound_local: None,
            labels: Some(Labels {
                global_states: states.clone(),
                local_states: states,
                global_actions: (0..ag).map(|a| a.to_string()).collect(),
                local_actions: (0..al).map(|a| a.to_string()).collect(),
            }),
        })
    }
}

/// `x·exp(-(x-μ)²/σ²)`.
pub fn squeeze_objective(x: f64, mu: f64, sigma: f64) -> f64 {
    x * (-(x - mu).powi(2) / (sigma * sigma)).exp()
}

/// Simulation-only dynamics of the squeeze task with the coupled global state
/// `s_g' = ⌈mean of the local state values⌉`. Local agents move by the
/// surrogate kernel. Each step logs the objective with `x = Σ a_i`.
#[derive(Clone, Copy, Debug)]
pub struct CoupledSqueeze {
    pub params: GaussianSqueezeParams,
}

impl Dynamics for CoupledSqueeze {
    fn step(&self, spec: &SystemSpec, rng: &mut Rng, s: &JointState, a: &JointAction) -> JointState {
        // Same uniforms as the kernel dynamics; the global draw is discarded.
        let mut next = KernelDynamics.step(spec, rng, s, a);
        let total: usize = next.s_locals.iter().map(|&i| i + 1).sum();
        let mean = total.div_ceil(next.s_locals.len());
        next.s_g = mean.clamp(1, self.params.local_states) - 1;
        next
    }

    fn objective(&self, _s: &JointState, a: &JointAction) -> Option<f64> {
        let x: usize = a.a_locals.iter().sum();
        Some(squeeze_objective(x as f64, self.params.mu, self.params.sigma))
    }

    fn name(&self) -> &'static str {
        "coupled_squeeze"
    }
}
