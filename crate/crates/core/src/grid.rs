//! Rectangular state-space grids and scalar fields stored over them.
//!
//! Nodes include both endpoints of every axis, so an axis with `count`
//! nodes has `count - 1` cells. Field values are stored row-major with
//! axis 0 varying slowest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
}

impl TryFrom<RawGrid> for GridSpec {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        GridSpec::new(raw.lower, raw.upper, raw.counts)
    }
}

impl From<GridSpec> for RawGrid {
    fn from(g: GridSpec) -> Self {
        RawGrid { lower: g.lower, upper: g.upper, counts: g.counts }
    }
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = counts.len();
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one axis".into()));
        }
        if lower.len() != n || upper.len() != n {
            return Err(Error::InvalidGrid(format!(
                "axis lists disagree: {} lower, {} upper, {} counts",
                lower.len(),
                upper.len(),
                n
            )));
        }
        let mut total = 1usize;
        for axis in 0..n {
            if counts[axis] < 2 {
                return Err(Error::InvalidGrid(format!("axis {axis} needs at least 2 nodes")));
            }
            if !(lower[axis].is_finite() && upper[axis].is_finite()) || upper[axis] <= lower[axis] {
                return Err(Error::InvalidGrid(format!(
                    "axis {axis} bounds [{}, {}] are not an increasing finite interval",
                    lower[axis], upper[axis]
                )));
            }
            total = total
                .checked_mul(counts[axis])
                .ok_or_else(|| Error::InvalidGrid("node count overflows usize".into()))?;
        }
        let mut strides = vec![1usize; n];
        for axis in (0..n - 1).rev() {
            strides[axis] = strides[axis + 1] * counts[axis + 1];
        }
        Ok(Self { lower, upper, counts, strides, total })
    }

    /// Same bounds and node count on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![count; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn total_nodes(&self) -> usize {
        self.total
    }

    pub fn cell_width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.counts[axis] - 1) as f64
    }

    pub fn min_cell_width(&self) -> f64 {
        (0..self.dim()).map(|a| self.cell_width(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn max_cell_width(&self) -> f64 {
        (0..self.dim()).map(|a| self.cell_width(a)).fold(0.0, f64::max)
    }

    /// Coordinate of node `index` on `axis`. Written as a blend of the two
    /// endpoints so that the first and last nodes reproduce the bounds exactly.
    #[inline]
    pub fn node_coord(&self, axis: usize, index: usize) -> f64 {
        let s = index as f64 / (self.counts[axis] - 1) as f64;
        self.lower[axis] * (1.0 - s) + self.upper[axis] * s
    }

    pub fn index_to_state(&self, multi_index: &[usize]) -> Result<Vec<f64>> {
        if multi_index.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: multi_index.len() });
        }
        multi_index
            .iter()
            .enumerate()
            .map(|(axis, &index)| {
                if index >= self.counts[axis] {
                    Err(Error::IndexOutOfRange { axis, index, count: self.counts[axis] })
                } else {
                    Ok(self.node_coord(axis, index))
                }
            })
            .collect()
    }

    pub fn flat_index(&self, multi_index: &[usize]) -> Result<usize> {
        if multi_index.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: multi_index.len() });
        }
        let mut flat = 0;
        for (axis, &index) in multi_index.iter().enumerate() {
            if index >= self.counts[axis] {
                return Err(Error::IndexOutOfRange { axis, index, count: self.counts[axis] });
            }
            flat += index * self.strides[axis];
        }
        Ok(flat)
    }

    /// Inverse of [`flat_index`](Self::flat_index); `flat` must be below `total_nodes()`.
    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        debug_assert!(flat < self.total);
        self.strides.iter().zip(&self.counts).map(|(&stride, &count)| (flat / stride) % count).collect()
    }

    /// State of the node with row-major index `flat`.
    pub fn node_state(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_state_into(flat, &mut out);
        out
    }

    pub fn node_state_into(&self, flat: usize, out: &mut [f64]) {
        for axis in 0..self.dim() {
            let index = (flat / self.strides[axis]) % self.counts[axis];
            out[axis] = self.node_coord(axis, index);
        }
    }

    pub fn clamp_into(&self, state: &[f64], out: &mut [f64]) {
        for axis in 0..self.dim() {
            out[axis] = state[axis].clamp(self.lower[axis], self.upper[axis]);
        }
    }

    pub fn contains(&self, state: &[f64]) -> bool {
        state.iter().enumerate().all(|(a, &x)| x >= self.lower[a] && x <= self.upper[a])
    }

    /// Multilinear interpolation of `values` (laid out on this grid) at
    /// `state`. Each coordinate is clamped to the grid box first. Queries
    /// that land exactly on a node return the stored value unchanged.
    pub fn interpolate(&self, values: &[f64], state: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.total);
        debug_assert_eq!(state.len(), self.dim());

        let mut base = 0usize;
        let mut active: SmallVec<[(usize, f64); 8]> = SmallVec::new();
        for axis in 0..self.dim() {
            let count = self.counts[axis];
            let x = state[axis].clamp(self.lower[axis], self.upper[axis]);
            let t = (x - self.lower[axis]) / self.cell_width(axis);
            let nearest = (t.round().max(0.0) as usize).min(count - 1);
            if self.node_coord(axis, nearest) == x {
                base += nearest * self.strides[axis];
                continue;
            }
            let k0 = (t.floor().max(0.0) as usize).min(count - 2);
            let frac = (t - k0 as f64).clamp(0.0, 1.0);
            base += k0 * self.strides[axis];
            if frac > 0.0 {
                active.push((self.strides[axis], frac));
            }
        }

        let corners = 1usize << active.len();
        let mut buf: SmallVec<[f64; 64]> = SmallVec::with_capacity(corners);
        for mask in 0..corners {
            let mut idx = base;
            for (bit, &(stride, _)) in active.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    idx += stride;
                }
            }
            buf.push(values[idx]);
        }
        // Collapse the highest bit first: buf[i] and buf[i + half] differ only
        // in that axis.
        let mut len = corners;
        for &(_, frac) in active.iter().rev() {
            len /= 2;
            for i in 0..len {
                buf[i] = lerp(buf[i], buf[i + len], frac);
            }
        }
        buf[0]
    }
}

/// Linear blend clamped to the endpoint interval, so constant inputs stay
/// constant and results never leave the convex hull under rounding.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    let v = a + t * (b - a);
    v.clamp(a.min(b), a.max(b))
}

/// A scalar field over a [`GridSpec`], one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.total_nodes() {
            return Err(Error::DimensionMismatch { expected: grid.total_nodes(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        let values = vec![value; grid.total_nodes()];
        Self { grid, values }
    }

    /// Evaluates `f` at every node state.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut state = vec![0.0; grid.dim()];
        let values = (0..grid.total_nodes())
            .map(|flat| {
                grid.node_state_into(flat, &mut state);
                f(&state)
            })
            .collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
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

    pub fn interpolate(&self, state: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, state)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of nodes with a strictly positive value.
    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v > 0.0).count()
    }

    /// CSV dump: `i0..,x0..,value`, one row per node in row-major order,
    /// reals printed with 17 significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.grid.dim();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..n).map(|a| format!("i{a}")).collect();
        header.extend((0..n).map(|a| format!("x{a}")));
        header.push("value".into());
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(2 * n + 1);
        for (flat, value) in self.values.iter().enumerate() {
            record.clear();
            let multi = self.grid.multi_index(flat);
            record.extend(multi.iter().map(|i| i.to_string()));
            record.extend(multi.iter().enumerate().map(|(a, &i)| format_real(self.grid.node_coord(a, i))));
            record.push(format_real(*value));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a dump produced by [`write_csv`](Self::write_csv). The grid is
    /// reconstructed from the index and coordinate columns.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.len() < 3 || header.len() % 2 == 0 || header.get(header.len() - 1) != Some("value") {
            return Err(Error::MalformedField("header must be i0..,x0..,value".into()));
        }
        let n = (header.len() - 1) / 2;
        for a in 0..n {
            if header.get(a) != Some(format!("i{a}").as_str()) || header.get(n + a) != Some(format!("x{a}").as_str()) {
                return Err(Error::MalformedField(format!("unexpected header column for axis {a}")));
            }
        }

        let mut rows: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let bad = |what: &str| Error::MalformedField(format!("row {}: bad {what}", line + 2));
            let idx = (0..n)
                .map(|a| record[a].trim().parse::<usize>().map_err(|_| bad("index")))
                .collect::<Result<Vec<_>>>()?;
            let xs = (0..n)
                .map(|a| record[n + a].trim().parse::<f64>().map_err(|_| bad("coordinate")))
                .collect::<Result<Vec<_>>>()?;
            let v = record[2 * n].trim().parse::<f64>().map_err(|_| bad("value"))?;
            rows.push((idx, xs, v));
        }

        let mut counts = vec![0usize; n];
        for (idx, _, _) in &rows {
            for a in 0..n {
                counts[a] = counts[a].max(idx[a] + 1);
            }
        }
        let mut lower = vec![f64::NAN; n];
        let mut upper = vec![f64::NAN; n];
        for (idx, xs, _) in &rows {
            for a in 0..n {
                if idx[a] == 0 {
                    lower[a] = xs[a];
                }
                if idx[a] + 1 == counts[a] {
                    upper[a] = xs[a];
                }
            }
        }
        let grid = GridSpec::new(lower, upper, counts)?;
        if rows.len() != grid.total_nodes() {
            return Err(Error::MalformedField(format!("expected {} rows, found {}", grid.total_nodes(), rows.len())));
        }
        let mut values = vec![f64::NAN; grid.total_nodes()];
        let mut seen = vec![false; grid.total_nodes()];
        for (idx, xs, v) in rows {
            let flat = grid.flat_index(&idx)?;
            if seen[flat] {
                return Err(Error::MalformedField(format!("duplicate node {idx:?}")));
            }
            for a in 0..n {
                if grid.node_coord(a, idx[a]) != xs[a] {
                    return Err(Error::MalformedField(format!(
                        "coordinate {} of node {idx:?} does not match the grid",
                        xs[a]
                    )));
                }
            }
            seen[flat] = true;
            values[flat] = v;
        }
        Ok(Self { grid, values })
    }
}

pub(crate) fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// `max |a - b|` over nodes.
pub fn sup_norm_diff(a: &ValueField, b: &ValueField) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::GridMismatch);
    }
    Ok(a.values.iter().zip(&b.values).fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}
