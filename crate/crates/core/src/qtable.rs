//! Dense Q-tables in three indexings and their on-disk form.
//!
//! * `Joint { n }` and `ExplicitSubset { k }` share one layout: the state index
//!   is `s_g·|S_l|^k + Σ_i s_i·|S_l|^(k-1-i)`, the action index is
//!   `a_g·|A_l|^k + Σ_i a_i·|A_l|^(k-1-i)`, and the entry is
//!   `state·(|A_g|·|A_l|^k) + action`. Actions of one state are contiguous.
//! * `MeanField { k }` stores `(s_g, s_1, F_peers, a_1, a_g)` with
//!   `entry = (((s_g·|S_l| + s_1)·L + rank)·|A_l| + a_1)·|A_g| + a_g`, where
//!   `rank` indexes the `k-1` peers' (state, action) counts on the simplex
//!   lattice of size `L` and the cell of `(s, a)` is `s·|A_l| + a`.

use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Error, Result};
use crate::mdp::Dims;
use crate::meanfield::Lattice;

/// Default ceiling on the number of entries of any table.
pub const DEFAULT_MAX_TABLE_ENTRIES: u64 = 100_000_000;

/// Ceiling on the number of rows written by [`QTable::write_csv`].
pub const MAX_CSV_ROWS: usize = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layout {
    Joint { n: usize },
    ExplicitSubset { k: usize },
    MeanField { k: usize },
}

impl Layout {
    /// Number of local agents the table describes.
    pub fn k(&self) -> usize {
        match *self {
            Layout::Joint { n } => n,
            Layout::ExplicitSubset { k } | Layout::MeanField { k } => k,
        }
    }

    pub fn is_mean_field(&self) -> bool {
        matches!(self, Layout::MeanField { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layout::Joint { .. } => "joint",
            Layout::ExplicitSubset { .. } => "explicit_subset",
            Layout::MeanField { .. } => "mean_field",
        }
    }

    /// Exact number of entries, or `None` on overflow.
    pub fn entries(&self, dims: Dims) -> Option<u64> {
        let k = self.k();
        if k == 0 {
            return None;
        }
        let (sg, sl, ag, al) = (
            dims.global_states as u64,
            dims.local_states as u64,
            dims.global_actions as u64,
            dims.local_actions as u64,
        );
        match self {
            Layout::Joint { .. } | Layout::ExplicitSubset { .. } => {
                let per_agent = sl.checked_mul(al)?;
                per_agent.checked_pow(k as u32)?.checked_mul(sg)?.checked_mul(ag)
            }
            Layout::MeanField { .. } => {
                let l = crate::meanfield::lattice_size(k as u32 - 1, dims.local_cells())?;
                sg.checked_mul(sl)?.checked_mul(l)?.checked_mul(al)?.checked_mul(ag)
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Geometry {
    Explicit { state_pow: usize, action_pow: usize },
    MeanField { peers: Lattice },
}

/// A dense table of `f64` values over one of the three layouts.
#[derive(Clone, Debug)]
pub struct QTable {
    layout: Layout,
    dims: Dims,
    geometry: Geometry,
    values: Vec<f64>,
}

impl PartialEq for QTable {
    fn eq(&self, other: &Self) -> bool {
        self.layout == other.layout && self.dims == other.dims && self.values == other.values
    }
}

impl QTable {
    /// Zero table, refusing layouts above [`DEFAULT_MAX_TABLE_ENTRIES`].
    pub fn zeros(layout: Layout, dims: Dims) -> Result<Self> {
        Self::zeros_capped(layout, dims, DEFAULT_MAX_TABLE_ENTRIES)
    }

    pub fn zeros_capped(layout: Layout, dims: Dims, cap: u64) -> Result<Self> {
        let len = Self::check_size(layout, dims, cap)?;
        Self::from_values(layout, dims, vec![0.0; len])
    }

    fn check_size(layout: Layout, dims: Dims, cap: u64) -> Result<usize> {
        if layout.k() == 0 {
            return Err(contract("a table needs at least one local agent"));
        }
        match layout.entries(dims) {
            Some(e) if e <= cap => Ok(e as usize),
            other => Err(Error::Capacity {
                what: format!("{} table with k={}", layout.name(), layout.k()),
                required: other.map_or(f64::INFINITY, |e| e as f64),
                cap: cap as f64,
            }),
        }
    }

    pub fn from_values(layout: Layout, dims: Dims, values: Vec<f64>) -> Result<Self> {
        let k = layout.k();
        let expected = layout
            .entries(dims)
            .ok_or_else(|| contract(format!("{} table with k={k} overflows", layout.name())))?;
        if values.len() as u64 != expected {
            return Err(contract(format!("table needs {expected} values, got {}", values.len())));
        }
        let geometry = match layout {
            Layout::MeanField { .. } => Geometry::MeanField {
                peers: Lattice::new(k as u32 - 1, dims.local_cells())?,
            },
            _ => Geometry::Explicit {
                state_pow: dims.local_states.pow(k as u32),
                action_pow: dims.local_actions.pow(k as u32),
            },
        };
        Ok(QTable {
            layout,
            dims,
            geometry,
            values,
        })
    }

    /// Same shape, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(contract("value vector length does not match the table"));
        }
        Ok(QTable {
            values,
            ..self.clone()
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn k(&self) -> usize {
        self.layout.k()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖self − other‖∞`.
    pub fn max_abs_diff(&self, other: &QTable) -> Result<f64> {
        if self.layout != other.layout || self.dims != other.dims {
            return Err(contract("tables have different shapes"));
        }
        Ok(max_abs_diff(&self.values, &other.values))
    }

    /// Peer lattice of a mean-field table.
    pub fn peer_lattice(&self) -> Option<&Lattice> {
        match &self.geometry {
            Geometry::MeanField { peers } => Some(peers),
            Geometry::Explicit { .. } => None,
        }
    }

    /// `|S_l|^k` and `|A_g|·|A_l|^k` for explicit layouts.
    pub fn explicit_shape(&self) -> Option<(usize, usize)> {
        match self.geometry {
            Geometry::Explicit { state_pow, action_pow } => Some((state_pow, action_pow * self.dims.global_actions)),
            Geometry::MeanField { .. } => None,
        }
    }

    /// Entry index for an explicit or joint layout.
    pub fn explicit_index(&self, s_g: usize, s_locals: &[usize], a_g: usize, a_locals: &[usize]) -> Result<usize> {
        let (state_pow, block) = self.explicit_shape().ok_or_else(|| contract("explicit index on a mean-field table"))?;
        self.check_query(s_g, s_locals, a_g, a_locals)?;
        let d = self.dims;
        let state = s_g * state_pow + mixed_radix(s_locals, d.local_states);
        let action = a_g * (block / d.global_actions) + mixed_radix(a_locals, d.local_actions);
        Ok(state * block + action)
    }

    /// Inverse of [`QTable::explicit_index`].
    pub fn explicit_decode(&self, entry: usize) -> Result<(usize, Vec<usize>, usize, Vec<usize>)> {
        let (state_pow, block) = self.explicit_shape().ok_or_else(|| contract("explicit decode on a mean-field table"))?;
        if entry >= self.len() {
            return Err(contract("entry out of range"));
        }
        let d = self.dims;
        let k = self.k();
        let (state, action) = (entry / block, entry % block);
        let action_pow = block / d.global_actions;
        Ok((
            state / state_pow,
            digits(state % state_pow, d.local_states, k),
            action / action_pow,
            digits(action % action_pow, d.local_actions, k),
        ))
    }

    /// Entry index for a mean-field layout.
    pub fn mean_field_index(&self, s_g: usize, s_1: usize, peer_rank: usize, a_1: usize, a_g: usize) -> Result<usize> {
        let peers = self.peer_lattice().ok_or_else(|| contract("mean-field index on an explicit table"))?;
        let d = self.dims;
        if s_g >= d.global_states || s_1 >= d.local_states || a_1 >= d.local_actions || a_g >= d.global_actions {
            return Err(contract("mean-field query out of range"));
        }
        if peer_rank >= peers.len() {
            return Err(contract("peer rank out of range"));
        }
        Ok(mf_entry(d, peers.len(), s_g, s_1, peer_rank, a_1, a_g))
    }

    /// Inverse of [`QTable::mean_field_index`]: `(s_g, s_1, peer_counts, a_1, a_g)`.
    pub fn mean_field_decode(&self, entry: usize) -> Result<(usize, usize, Vec<u32>, usize, usize)> {
        let peers = self.peer_lattice().ok_or_else(|| contract("mean-field decode on an explicit table"))?;
        if entry >= self.len() {
            return Err(contract("entry out of range"));
        }
        let d = self.dims;
        let mut e = entry;
        let a_g = e % d.global_actions;
        e /= d.global_actions;
        let a_1 = e % d.local_actions;
        e /= d.local_actions;
        let rank = e % peers.len();
        e /= peers.len();
        let s_1 = e % d.local_states;
        let s_g = e / d.local_states;
        Ok((s_g, s_1, peers.unrank(rank)?, a_1, a_g))
    }

    /// Value at an ordered subsystem query; agent 0 is the focal agent of a
    /// mean-field table and the rest enter through their empirical
    /// distribution.
    pub fn get(&self, s_g: usize, s_locals: &[usize], a_g: usize, a_locals: &[usize]) -> Result<f64> {
        match &self.geometry {
            Geometry::Explicit { .. } => Ok(self.values[self.explicit_index(s_g, s_locals, a_g, a_locals)?]),
            Geometry::MeanField { peers } => {
                self.check_query(s_g, s_locals, a_g, a_locals)?;
                let d = self.dims;
                let mut counts = vec![0u32; d.local_cells()];
                for (&s, &a) in s_locals[1..].iter().zip(&a_locals[1..]) {
                    counts[s * d.local_actions + a] += 1;
                }
                let rank = peers.rank_unchecked(&counts);
                Ok(self.values[mf_entry(d, peers.len(), s_g, s_locals[0], rank, a_locals[0], a_g)])
            }
        }
    }

    fn check_query(&self, s_g: usize, s_locals: &[usize], a_g: usize, a_locals: &[usize]) -> Result<()> {
        let d = self.dims;
        let k = self.k();
        if s_locals.len() != k || a_locals.len() != k {
            return Err(contract(format!("query has {} states and {} actions, table has k={k}", s_locals.len(), a_locals.len())));
        }
        if s_g >= d.global_states
            || a_g >= d.global_actions
            || s_locals.iter().any(|&s| s >= d.local_states)
            || a_locals.iter().any(|&a| a >= d.local_actions)
        {
            return Err(contract("query index out of range"));
        }
        Ok(())
    }

    // -----------------------------------------------------------------------
    // Persistence
    // -----------------------------------------------------------------------

    /// Path of the JSON sidecar belonging to a binary table file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }

    /// Writes the values as little-endian `f64` to `path` and a JSON sidecar
    /// describing the layout to `<path>.json`.
    pub fn save(&self, path: &Path, metadata: Option<serde_json::Value>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        let sidecar = self.sidecar(metadata);
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn sidecar(&self, metadata: Option<serde_json::Value>) -> Sidecar {
        Sidecar {
            format: SIDECAR_FORMAT.to_string(),
            version: 1,
            value_type: "f64".into(),
            byte_order: "little".into(),
            layout: self.layout,
            dims: self.dims,
            entries: self.len() as u64,
            axes: self.axes(),
            peer_lattice: self.peer_lattice().map(|l| LatticeInfo {
                denominator: l.total(),
                cells: l.dim(),
                points: l.len() as u64,
                order: "colex".into(),
            }),
            metadata,
        }
    }

    fn axes(&self) -> Vec<Axis> {
        let d = self.dims;
        let k = self.k();
        let ax = |name: String, size: usize| Axis { name, size };
        match &self.geometry {
            Geometry::Explicit { .. } => {
                let mut v = vec![ax("s_g".into(), d.global_states)];
                v.extend((1..=k).map(|i| ax(format!("s_{i}"), d.local_states)));
                v.push(ax("a_g".into(), d.global_actions));
                v.extend((1..=k).map(|i| ax(format!("a_{i}"), d.local_actions)));
                v
            }
            Geometry::MeanField { peers } => vec![
                ax("s_g".into(), d.global_states),
                ax("s_1".into(), d.local_states),
                ax("peer_distribution".into(), peers.len()),
                ax("a_1".into(), d.local_actions),
                ax("a_g".into(), d.global_actions),
            ],
        }
    }

    /// Reads a table written by [`QTable::save`].
    pub fn load(path: &Path) -> Result<(Self, Sidecar)> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(Self::sidecar_path(path))?)?;
        if sidecar.format != SIDECAR_FORMAT || sidecar.value_type != "f64" || sidecar.byte_order != "little" {
            return Err(invalid("q-table sidecar", "unsupported format"));
        }
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() as u64 != sidecar.entries * 8 {
            return Err(invalid("q-table file", format!("expected {} bytes, found {}", sidecar.entries * 8, bytes.len())));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let table = QTable::from_values(sidecar.layout, sidecar.dims, values)?;
        Ok((table, sidecar))
    }

    /// One row per entry: the entry index, its coordinates and the value in
    /// shortest round-trip decimal form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        if self.len() > MAX_CSV_ROWS {
            return Err(Error::Capacity {
                what: "CSV export".into(),
                required: self.len() as f64,
                cap: MAX_CSV_ROWS as f64,
            });
        }
        let mut w = BufWriter::new(out);
        let k = self.k();
        match &self.geometry {
            Geometry::Explicit { .. } => {
                let mut header = vec!["entry".to_string(), "s_g".into()];
                header.extend((1..=k).map(|i| format!("s_{i}")));
                header.push("a_g".into());
                header.extend((1..=k).map(|i| format!("a_{i}")));
                header.push("value".into());
                writeln!(w, "{}", header.join(","))?;
                for (e, v) in self.values.iter().enumerate() {
                    let (sg, s, ag, a) = self.explicit_decode(e)?;
                    write!(w, "{e},{sg}")?;
                    for x in s {
                        write!(w, ",{x}")?;
                    }
                    write!(w, ",{ag}")?;
                    for x in a {
                        write!(w, ",{x}")?;
                    }
                    writeln!(w, ",{v:?}")?;
                }
            }
            Geometry::MeanField { .. } => {
                writeln!(w, "entry,s_g,s_1,peer_rank,peer_counts,a_1,a_g,value")?;
                for (e, v) in self.values.iter().enumerate() {
                    let (sg, s1, counts, a1, ag) = self.mean_field_decode(e)?;
                    let rank = (e / (self.dims.global_actions * self.dims.local_actions))
                        % self.peer_lattice().map_or(1, Lattice::len);
                    let c: Vec<String> = counts.iter().map(u32::to_string).collect();
                    writeln!(w, "{e},{sg},{s1},{rank},{},{a1},{ag},{v:?}", c.join(" "))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

const SIDECAR_FORMAT: &str = "submfq-qtable";

/// JSON description stored next to a binary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub format: String,
    pub version: u32,
    pub value_type: String,
    pub byte_order: String,
    pub layout: Layout,
    pub dims: Dims,
    pub entries: u64,
    /// Axes from most to least significant.
    pub axes: Vec<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer_lattice: Option<LatticeInfo>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeInfo {
    pub denominator: u32,
    pub cells: usize,
    pub points: u64,
    pub order: String,
}

#[inline]
pub(crate) fn mf_entry(d: Dims, lattice_len: usize, s_g: usize, s_1: usize, rank: usize, a_1: usize, a_g: usize) -> usize {
    (((s_g * d.local_states + s_1) * lattice_len + rank) * d.local_actions + a_1) * d.global_actions + a_g
}

/// Agent 0 is the most significant digit.
#[inline]
pub(crate) fn mixed_radix(xs: &[usize], base: usize) -> usize {
    xs.iter().fold(0, |acc, &x| acc * base + x)
}

pub(crate) fn digits(mut value: usize, base: usize, len: usize) -> Vec<usize> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = value % base;
        value /= base;
    }
    out
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Dims {
        Dims::new(2, 3, 2, 2)
    }

    #[test]
    fn sizes_are_closed_form() {
        let d = dims();
        assert_eq!(Layout::ExplicitSubset { k: 2 }.entries(d), Some(2 * 2 * 36));
        assert_eq!(Layout::Joint { n: 1 }.entries(d), Some(24));
        // Lattice(1, 6) has 6 points.
        assert_eq!(Layout::MeanField { k: 2 }.entries(d), Some(2 * 3 * 6 * 2 * 2));
        assert_eq!(Layout::MeanField { k: 1 }.entries(d), Some(24));
        assert!(QTable::zeros_capped(Layout::ExplicitSubset { k: 5 }, d, 1000).is_err());
    }

    #[test]
    fn explicit_index_round_trip() {
        let t = QTable::zeros(Layout::ExplicitSubset { k: 3 }, dims()).unwrap();
        for e in 0..t.len() {
            let (sg, s, ag, a) = t.explicit_decode(e).unwrap();
            assert_eq!(t.explicit_index(sg, &s, ag, &a).unwrap(), e);
        }
        assert!(t.explicit_index(0, &[0, 0], 0, &[0, 0, 0]).is_err());
    }

    #[test]
    fn mean_field_index_round_trip() {
        let t = QTable::zeros(Layout::MeanField { k: 3 }, dims()).unwrap();
        let lat = t.peer_lattice().unwrap().clone();
        for e in 0..t.len() {
            let (sg, s1, c, a1, ag) = t.mean_field_decode(e).unwrap();
            assert_eq!(t.mean_field_index(sg, s1, lat.rank(&c).unwrap(), a1, ag).unwrap(), e);
        }
    }

    #[test]
    fn mean_field_lookup_ignores_peer_order() {
        let d = dims();
        let n = Layout::MeanField { k: 3 }.entries(d).unwrap() as usize;
        let t = QTable::from_values(Layout::MeanField { k: 3 }, d, (0..n).map(|i| i as f64).collect()).unwrap();
        let a = t.get(1, &[2, 0, 1], 1, &[0, 1, 0]).unwrap();
        let b = t.get(1, &[2, 1, 0], 1, &[0, 0, 1]).unwrap();
        assert_eq!(a, b);
        let c = t.get(1, &[0, 2, 1], 1, &[1, 0, 0]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn save_load_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        for layout in [Layout::ExplicitSubset { k: 2 }, Layout::MeanField { k: 2 }] {
            let n = layout.entries(dims()).unwrap() as usize;
            let t = QTable::from_values(layout, dims(), (0..n).map(|i| (i as f64).sqrt() - 0.1).collect()).unwrap();
            let p = dir.path().join(format!("{}.bin", layout.name()));
            t.save(&p, Some(serde_json::json!({"seed": 3}))).unwrap();
            let (back, side) = QTable::load(&p).unwrap();
            assert_eq!(back, t);
            assert_eq!(side.metadata.unwrap()["seed"], 3);

            let mut csv = Vec::new();
            t.write_csv(&mut csv).unwrap();
            let text = String::from_utf8(csv).unwrap();
            let parsed: Vec<f64> =
                text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
            assert_eq!(parsed, t.values());
        }
    }
}
