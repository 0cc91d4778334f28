//! System factories: the Gaussian squeeze and constrained exploration tasks,
//! and random instances for property tests.

mod squeeze;

pub use squeeze::{squeeze_objective, CoupledSqueeze, GaussianSqueezeParams};

use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::mdp::{Dims, JointState, Labels, SpecParts, SystemSpec};
use crate::rng::{stream, tag};

/// Sizes of a random instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSizes {
    pub n: usize,
    pub global_states: usize,
    pub local_states: usize,
    pub global_actions: usize,
    pub local_actions: usize,
    pub gamma: f64,
    /// Symmetric Dirichlet concentration of every kernel row.
    #[serde(default = "one")]
    pub concentration: f64,
}

fn one() -> f64 {
    1.0
}

impl RandomSizes {
    pub fn new(n: usize, sg: usize, sl: usize, ag: usize, al: usize, gamma: f64) -> Self {
        RandomSizes {
            n,
            global_states: sg,
            local_states: sl,
            global_actions: ag,
            local_actions: al,
            gamma,
            concentration: 1.0,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.global_states, self.local_states, self.global_actions, self.local_actions)
    }
}

/// Largest kernel the random generator will fill.
pub const MAX_RANDOM_KERNEL_ENTRIES: usize = 10_000_000;

/// Kernel rows from a symmetric Dirichlet, rewards uniform on `[-1, 1]`.
pub fn random_instance(seed: u64, sizes: RandomSizes) -> Result<SystemSpec> {
    let d = sizes.dims();
    let kernel = d.local_states * d.global_states * d.local_actions * d.local_states
        + d.global_states * d.global_actions * d.global_states;
    if kernel > MAX_RANDOM_KERNEL_ENTRIES {
        return Err(Error::Capacity {
            what: "random instance kernels".into(),
            required: kernel as f64,
            cap: MAX_RANDOM_KERNEL_ENTRIES as f64,
        });
    }
    if !(sizes.concentration > 0.0) {
        return Err(invalid("random instance", "concentration must be positive"));
    }
    let gamma = Gamma::new(sizes.concentration, 1.0).map_err(|e| invalid("random instance", e.to_string()))?;
    let mut rng = stream(seed, &[tag::INSTANCE]);
    let mut rows = |count: usize, width: usize| -> Vec<f64> {
        let mut out = Vec::with_capacity(count * width);
        for _ in 0..count {
            let draws: Vec<f64> = (0..width).map(|_| gamma.sample(&mut rng).max(f64::MIN_POSITIVE)).collect();
            let total: f64 = draws.iter().sum();
            out.extend(draws.iter().map(|x| x / total));
        }
        out
    };
    let p_global = rows(d.global_states * d.global_actions, d.global_states);
    let p_local = rows(d.local_states * d.global_states * d.local_actions, d.local_states);
    let r_global = (0..d.global_states * d.global_actions).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let r_local = (0..d.local_states * d.global_states * d.local_actions)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    SystemSpec::new(SpecParts {
        n: sizes.n,
        dims: d,
        p_global,
        p_local,
        r_global,
        r_local,
        gamma: sizes.gamma,
        bound_global: Some(1.0),
        bound_local: Some(1.0),
        labels: None,
    })
}

/// The `M × M` grid task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstrainedExplorationParams {
    pub n: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

fn default_gamma() -> f64 {
    0.9
}

fn default_grid() -> usize {
    7
}

/// Moves `(0,0)`, `(0,1)`, `(1,0)`, `(1,1)` in index order.
pub const GRID_ACTIONS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

impl ConstrainedExplorationParams {
    pub fn new(n: usize) -> Self {
        ConstrainedExplorationParams {
            n,
            gamma: default_gamma(),
            grid: default_grid(),
        }
    }

    /// Cell index of `(x, y)`.
    pub fn cell(&self, x: usize, y: usize) -> usize {
        x * self.grid + y
    }

    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell / self.grid, cell % self.grid)
    }

    /// Everyone, global agent included, at the grid centre.
    pub fn initial_state(&self) -> JointState {
        let c = self.cell(self.grid / 2, self.grid / 2);
        JointState::new(c, vec![c; self.n])
    }
}

/// Deterministic grid kernels. Inside the local transition `|s_i − s_g|` is
/// the coordinatewise absolute difference; inside the local reward it is the
/// L1 distance. The zero move `(0,0)` is the rewarded action.
pub fn constrained_exploration(params: ConstrainedExplorationParams) -> Result<SystemSpec> {
    let m = params.grid;
    if m == 0 {
        return Err(invalid("constrained exploration", "grid must be nonempty"));
    }
    let cells = m * m;
    let na = GRID_ACTIONS.len();
    let clamp = |v: usize| v.min(m - 1);
    let mut p_global = vec![0.0; cells * na * cells];
    let mut r_global = vec![0.0; cells * na];
    for g in 0..cells {
        let (gx, gy) = params.coords(g);
        for (a, &(dx, dy)) in GRID_ACTIONS.iter().enumerate() {
            let next = params.cell(clamp(gx + dx), clamp(gy + dy));
            p_global[(g * na + a) * cells + next] = 1.0;
            r_global[g * na + a] = if a == 0 { 10.0 } else { 0.0 };
        }
    }
    let mut p_local = vec![0.0; cells * cells * na * cells];
    let mut r_local = vec![0.0; cells * cells * na];
    for s in 0..cells {
        let (sx, sy) = params.coords(s);
        for g in 0..cells {
            let (gx, gy) = params.coords(g);
            let (ex, ey) = (sx.abs_diff(gx), sy.abs_diff(gy));
            let l1 = (ex + ey) as f64;
            for (a, &(dx, dy)) in GRID_ACTIONS.iter().enumerate() {
                let next = params.cell(clamp(sx + ex + dx), clamp(sy + ey + dy));
                let row = (s * cells + g) * na + a;
                p_local[row * cells + next] = 1.0;
                let stay = if a == 0 { 1.0 } else { 0.0 };
                let near = if l1 == 1.0 { 4.0 } else { 0.0 };
                r_local[row] = stay + near - 2.0 * l1;
            }
        }
    }
    let coord_labels: Vec<String> = (0..cells)
        .map(|c| {
            let (x, y) = params.coords(c);
            format!("({x},{y})")
        })
        .collect();
    let action_labels: Vec<String> = GRID_ACTIONS.iter().map(|(x, y)| format!("({x},{y})")).collect();
    SystemSpec::new(SpecParts {
        n: params.n,
        dims: Dims::new(cells, cells, na, na),
        p_global,
        p_local,
        r_global,
        r_local,
        gamma: params.gamma,
        bound_global: None,
        bound_local: None,
        labels: Some(Labels {
            global_states: coord_labels.clone(),
            local_states: coord_labels,
            global_actions: action_labels.clone(),
            local_actions: action_labels,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_instances_are_reproducible_and_valid() {
        let sizes = RandomSizes::new(3, 2, 3, 2, 2, 0.9);
        let a = random_instance(5, sizes).unwrap();
        let b = random_instance(5, sizes).unwrap();
        assert_eq!(a.to_document(), b.to_document());
        let c = random_instance(6, sizes).unwrap();
        assert_ne!(a.to_document(), c.to_document());
    }

    #[test]
    fn grid_formulas() {
        let p = ConstrainedExplorationParams::new(2);
        let spec = constrained_exploration(p).unwrap();
        let mid = p.cell(3, 3);
        // Zero move at an interior cell.
        assert_eq!(spec.p_global(mid, 0, mid), 1.0);
        assert_eq!(spec.r_global(mid, 0), 10.0);
        assert_eq!(spec.r_global(mid, 3), 0.0);
        assert_eq!(spec.p_local(mid, mid, 0, mid), 1.0);
        assert_eq!(spec.r_local(mid, mid, 0), 1.0);
        // Corner clamp.
        let corner = p.cell(6, 6);
        assert_eq!(spec.p_global(corner, 3, corner), 1.0);
        // One step away in x, moving (0,1): (4,3) + (1,0) + (0,1) = (5,4).
        let s = p.cell(4, 3);
        assert_eq!(spec.p_local(s, mid, 1, p.cell(5, 4)), 1.0);
        assert_eq!(spec.r_local(s, mid, 1), 4.0 - 2.0);
        assert_eq!(spec.r_local(s, mid, 0), 1.0 + 4.0 - 2.0);
        assert!(spec.is_deterministic());
    }
}
