use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Result};
use crate::rng::Rng;

/// Row-sum tolerance for every transition kernel row.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Cardinalities of the four finite sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub global_states: usize,
    pub local_states: usize,
    pub global_actions: usize,
    pub local_actions: usize,
}

impl Dims {
    pub fn new(global_states: usize, local_states: usize, global_actions: usize, local_actions: usize) -> Self {
        Dims {
            global_states,
            local_states,
            global_actions,
            local_actions,
        }
    }

    /// `|S_l| * |A_l|`, the number of cells of a local (state, action) pair.
    pub fn local_cells(&self) -> usize {
        self.local_states * self.local_actions
    }
}

/// A finite distribution over `0..len`, kept in support form for sampling and
/// exact expectations.
#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    outcomes: Vec<usize>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl Categorical {
    fn from_dense(row: &[f64]) -> Self {
        let mut outcomes = Vec::new();
        let mut probs = Vec::new();
        let mut cdf = Vec::new();
        let mut acc = 0.0;
        for (i, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                outcomes.push(i);
                probs.push(p);
                cdf.push(acc);
            }
        }
        Categorical { outcomes, probs, cdf }
    }

    /// Nonzero-probability outcomes with their probabilities.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.outcomes.iter().copied().zip(self.probs.iter().copied())
    }

    pub fn support_len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_point_mass(&self) -> bool {
        self.outcomes.len() == 1
    }

    /// Inverse-CDF draw. Always consumes exactly one uniform, so streams stay
    /// aligned no matter which rows are visited.
    #[inline]
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
        for (i, &c) in self.cdf.iter().enumerate() {
            if u < c {
                return self.outcomes[i];
            }
        }
        self.outcomes[self.outcomes.len() - 1]
    }
}

/// Full description of a global/local system: sizes, kernels, rewards and
/// discount.
///
/// Kernels and rewards are dense, flattened row-major in the index order of
/// their accessors. Instances are validated on construction and immutable
/// afterwards.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    n: usize,
    dims: Dims,
    labels: Labels,
    p_global: Vec<f64>,
    p_local: Vec<f64>,
    r_global: Vec<f64>,
    r_local: Vec<f64>,
    gamma: f64,
    bound_global: f64,
    bound_local: f64,
    global_rows: Vec<Categorical>,
    local_rows: Vec<Categorical>,
}

/// Optional display names for every element of the four sets.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    pub global_states: Vec<String>,
    pub local_states: Vec<String>,
    pub global_actions: Vec<String>,
    pub local_actions: Vec<String>,
}

impl Labels {
    pub fn numbered(dims: Dims) -> Self {
        let f = |prefix: &str, len: usize| (0..len).map(|i| format!("{prefix}{i}")).collect();
        Labels {
            global_states: f("g", dims.global_states),
            local_states: f("l", dims.local_states),
            global_actions: f("ag", dims.global_actions),
            local_actions: f("al", dims.local_actions),
        }
    }
}

/// Raw, flattened inputs for [`SystemSpec::new`].
///
/// Layouts: `p_global[(sg * |A_g| + ag) * |S_g| + sg']`,
/// `p_local[((si * |S_g| + sg) * |A_l| + ai) * |S_l| + si']`,
/// `r_global[sg * |A_g| + ag]`, `r_local[(si * |S_g| + sg) * |A_l| + ai]`.
#[derive(Clone, Debug)]
pub struct SpecParts {
    pub n: usize,
    pub dims: Dims,
    pub p_global: Vec<f64>,
    pub p_local: Vec<f64>,
    pub r_global: Vec<f64>,
    pub r_local: Vec<f64>,
    pub gamma: f64,
    /// `None` takes the tightest bound, `max |r_g|`.
    pub bound_global: Option<f64>,
    pub bound_local: Option<f64>,
    pub labels: Option<Labels>,
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

impl SystemSpec {
    pub fn new(parts: SpecParts) -> Result<Self> {
        let SpecParts {
            n,
            dims,
            p_global,
            p_local,
            r_global,
            r_local,
            gamma,
            bound_global,
            bound_local,
            labels,
        } = parts;
        let ctx = "system spec";
        if n == 0 {
            return Err(invalid(ctx, "n must be positive"));
        }
        if dims.global_states == 0 || dims.local_states == 0 || dims.global_actions == 0 || dims.local_actions == 0 {
            return Err(invalid(ctx, "every state and action set must be nonempty"));
        }
        // gamma = 0 is admitted as the myopic limit.
        if !(0.0..1.0).contains(&gamma) {
            return Err(invalid(ctx, format!("gamma must lie in [0,1), got {gamma}")));
        }
        let (sg, sl, ag, al) = (dims.global_states, dims.local_states, dims.global_actions, dims.local_actions);
        let expect = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(invalid(ctx, format!("{name} has {got} entries, expected {want}")))
            } else {
                Ok(())
            }
        };
        expect("p_global", p_global.len(), sg * ag * sg)?;
        expect("p_local", p_local.len(), sl * sg * al * sl)?;
        expect("r_global", r_global.len(), sg * ag)?;
        expect("r_local", r_local.len(), sl * sg * al)?;

        let check_rows = |name: &str, table: &[f64], width: usize| -> Result<Vec<Categorical>> {
            table
                .chunks(width)
                .enumerate()
                .map(|(row, probs)| {
                    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                        return Err(invalid(ctx, format!("{name} row {row} has a negative or non-finite entry")));
                    }
                    let sum: f64 = probs.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_TOL {
                        return Err(invalid(ctx, format!("{name} row {row} sums to {sum:.17}, not 1")));
                    }
                    Ok(Categorical::from_dense(probs))
                })
                .collect()
        };
        let global_rows = check_rows("p_global", &p_global, sg)?;
        let local_rows = check_rows("p_local", &p_local, sl)?;

        if r_global.iter().chain(r_local.iter()).any(|r| !r.is_finite()) {
            return Err(invalid(ctx, "rewards must be finite"));
        }
        let bound_global = bound_global.unwrap_or_else(|| max_abs(&r_global));
        let bound_local = bound_local.unwrap_or_else(|| max_abs(&r_local));
        if max_abs(&r_global) > bound_global {
            return Err(invalid(ctx, format!("|r_g| exceeds its bound {bound_global}")));
        }
        if max_abs(&r_local) > bound_local {
            return Err(invalid(ctx, format!("|r_l| exceeds its bound {bound_local}")));
        }
        let labels = labels.unwrap_or_else(|| Labels::numbered(dims));
        if labels.global_states.len() != sg
            || labels.local_states.len() != sl
            || labels.global_actions.len() != ag
            || labels.local_actions.len() != al
        {
            return Err(invalid(ctx, "label lists must match the set sizes"));
        }

        Ok(SystemSpec {
            n,
            dims,
            labels,
            p_global,
            p_local,
            r_global,
            r_local,
            gamma,
            bound_global,
            bound_local,
            global_rows,
            local_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// `r̃_g`.
    pub fn reward_bound_global(&self) -> f64 {
        self.bound_global
    }

    /// `r̃_l`.
    pub fn reward_bound_local(&self) -> f64 {
        self.bound_local
    }

    /// `r̃ = r̃_g + r̃_l`.
    pub fn reward_bound(&self) -> f64 {
        self.bound_global + self.bound_local
    }

    /// `r̃ / (1 - γ)`, the sup-norm bound of every value iterate from zero.
    pub fn value_bound(&self) -> f64 {
        self.reward_bound() / (1.0 - self.gamma)
    }

    #[inline]
    pub fn p_global(&self, sg: usize, ag: usize, next: usize) -> f64 {
        let d = self.dims;
        self.p_global[(sg * d.global_actions + ag) * d.global_states + next]
    }

    #[inline]
    pub fn p_local(&self, si: usize, sg: usize, ai: usize, next: usize) -> f64 {
        let d = self.dims;
        self.p_local[((si * d.global_states + sg) * d.local_actions + ai) * d.local_states + next]
    }

    #[inline]
    pub fn r_global(&self, sg: usize, ag: usize) -> f64 {
        self.r_global[sg * self.dims.global_actions + ag]
    }

    #[inline]
    pub fn r_local(&self, si: usize, sg: usize, ai: usize) -> f64 {
        let d = self.dims;
        self.r_local[(si * d.global_states + sg) * d.local_actions + ai]
    }

    #[inline]
    pub fn global_row(&self, sg: usize, ag: usize) -> &Categorical {
        &self.global_rows[sg * self.dims.global_actions + ag]
    }

    #[inline]
    pub fn local_row(&self, si: usize, sg: usize, ai: usize) -> &Categorical {
        let d = self.dims;
        &self.local_rows[(si * d.global_states + sg) * d.local_actions + ai]
    }

    /// True when every kernel row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.global_rows.iter().chain(self.local_rows.iter()).all(Categorical::is_point_mass)
    }

    /// Same system with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.gamma = gamma;
        SystemSpec::new(parts)
    }

    /// Same system with a different number of local agents.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.n = n;
        SystemSpec::new(parts)
    }

    pub fn to_parts(&self) -> SpecParts {
        SpecParts {
            n: self.n,
            dims: self.dims,
            p_global: self.p_global.clone(),
            p_local: self.p_local.clone(),
            r_global: self.r_global.clone(),
            r_local: self.r_local.clone(),
            gamma: self.gamma,
            bound_global: Some(self.bound_global),
            bound_local: Some(self.bound_local),
            labels: Some(self.labels.clone()),
        }
    }

    pub(crate) fn check_state(&self, s: &JointState) -> Result<()> {
        if s.s_locals.len() != self.n {
            return Err(contract(format!("state has {} local agents, system has {}", s.s_locals.len(), self.n)));
        }
        if s.s_g >= self.dims.global_states || s.s_locals.iter().any(|&x| x >= self.dims.local_states) {
            return Err(contract("state index out of range"));
        }
        Ok(())
    }

    pub(crate) fn check_action(&self, a: &JointAction) -> Result<()> {
        if a.a_locals.len() != self.n {
            return Err(contract(format!("action has {} local agents, system has {}", a.a_locals.len(), self.n)));
        }
        if a.a_g >= self.dims.global_actions || a.a_locals.iter().any(|&x| x >= self.dims.local_actions) {
            return Err(contract("action index out of range"));
        }
        Ok(())
    }
}

/// `(s_g, s_1, ..., s_n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointState {
    pub s_g: usize,
    pub s_locals: Vec<usize>,
}

/// `(a_g, a_1, ..., a_n)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction {
    pub a_g: usize,
    pub a_locals: Vec<usize>,
}

impl JointState {
    pub fn new(s_g: usize, s_locals: Vec<usize>) -> Self {
        JointState { s_g, s_locals }
    }
}

impl JointAction {
    pub fn new(a_g: usize, a_locals: Vec<usize>) -> Self {
        JointAction { a_g, a_locals }
    }
}

// ---------------------------------------------------------------------------
// JSON document form
// ---------------------------------------------------------------------------

/// JSON form of a [`SystemSpec`] with nested arrays:
/// `p_global[s_g][a_g][s_g']`, `p_local[s_i][s_g][a_i][s_i']`,
/// `r_global[s_g][a_g]`, `r_local[s_i][s_g][a_i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDocument {
    pub n: usize,
    pub global_states: Vec<String>,
    pub local_states: Vec<String>,
    pub global_actions: Vec<String>,
    pub local_actions: Vec<String>,
    pub p_global: Vec<Vec<Vec<f64>>>,
    pub p_local: Vec<Vec<Vec<Vec<f64>>>>,
    pub r_global: Vec<Vec<f64>>,
    pub r_local: Vec<Vec<Vec<f64>>>,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_bound_global: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward_bound_local: Option<f64>,
}

fn flatten_checked<T: Clone>(name: &str, rows: &[Vec<T>], width: usize) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(invalid("system spec document", format!("{name}[{i}] has length {}, expected {width}", r.len())));
        }
        out.extend_from_slice(r);
    }
    Ok(out)
}

impl SpecDocument {
    pub fn into_spec(self) -> Result<SystemSpec> {
        let dims = Dims::new(
            self.global_states.len(),
            self.local_states.len(),
            self.global_actions.len(),
            self.local_actions.len(),
        );
        let ctx = "system spec document";
        let (sg, sl, ag, al) = (dims.global_states, dims.local_states, dims.global_actions, dims.local_actions);
        if self.p_global.len() != sg {
            return Err(invalid(ctx, "p_global outer length must equal |S_g|"));
        }
        let pg_rows: Vec<Vec<f64>> = self.p_global.iter().map(|a| flatten_checked("p_global[s_g]", a, sg)).collect::<Result<Vec<_>>>()?;
        let p_global = flatten_checked("p_global", &pg_rows, ag * sg)?;
        if self.p_local.len() != sl {
            return Err(invalid(ctx, "p_local outer length must equal |S_l|"));
        }
        let mut p_local = Vec::with_capacity(sl * sg * al * sl);
        for (i, per_sg) in self.p_local.iter().enumerate() {
            if per_sg.len() != sg {
                return Err(invalid(ctx, format!("p_local[{i}] must have |S_g| entries")));
            }
            for per_a in per_sg {
                if per_a.len() != al {
                    return Err(invalid(ctx, format!("p_local[{i}][..] must have |A_l| rows")));
                }
                p_local.extend(flatten_checked("p_local[s_i][s_g]", per_a, sl)?);
            }
        }
        let r_global = flatten_checked("r_global", &self.r_global, ag)?;
        if self.r_global.len() != sg {
            return Err(invalid(ctx, "r_global outer length must equal |S_g|"));
        }
        if self.r_local.len() != sl {
            return Err(invalid(ctx, "r_local outer length must equal |S_l|"));
        }
        let r_local_rows: Vec<Vec<f64>> =
            self.r_local.iter().map(|a| flatten_checked("r_local[s_i]", a, al)).collect::<Result<Vec<_>>>()?;
        let r_local = flatten_checked("r_local", &r_local_rows, sg * al)?;
        SystemSpec::new(SpecParts {
            n: self.n,
            dims,
            p_global,
            p_local,
            r_global,
            r_local,
            gamma: self.gamma,
            bound_global: self.reward_bound_global,
            bound_local: self.reward_bound_local,
            labels: Some(Labels {
                global_states: self.global_states,
                local_states: self.local_states,
                global_actions: self.global_actions,
                local_actions: self.local_actions,
            }),
        })
    }
}

impl SystemSpec {
    pub fn to_document(&self) -> SpecDocument {
        let d = self.dims;
        let (sg, sl, ag, al) = (d.global_states, d.local_states, d.global_actions, d.local_actions);
        SpecDocument {
            n: self.n,
            global_states: self.labels.global_states.clone(),
            local_states: self.labels.local_states.clone(),
            global_actions: self.labels.global_actions.clone(),
            local_actions: self.labels.local_actions.clone(),
            p_global: (0..sg)
                .map(|g| (0..ag).map(|a| (0..sg).map(|x| self.p_global(g, a, x)).collect()).collect())
                .collect(),
            p_local: (0..sl)
                .map(|s| {
                    (0..sg)
                        .map(|g| (0..al).map(|a| (0..sl).map(|x| self.p_local(s, g, a, x)).collect()).collect())
                        .collect()
                })
                .collect(),
            r_global: (0..sg).map(|g| (0..ag).map(|a| self.r_global(g, a)).collect()).collect(),
            r_local: (0..sl).map(|s| (0..sg).map(|g| (0..al).map(|a| self.r_local(s, g, a)).collect()).collect()).collect(),
            gamma: self.gamma,
            reward_bound_global: Some(self.bound_global),
            reward_bound_local: Some(self.bound_local),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let doc: SpecDocument = serde_json::from_str(text)?;
        doc.into_spec()
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
