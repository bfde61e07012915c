//! Binary PGM rendering of 2D field slices. Pixel `(i, j)` (column, row) is
//! node `(i, j)` of the two free axes, row 0 holding the lowest coordinate of
//! the second free axis.

use anyhow::{bail, Context, Result};
use reachavoid::ValueField;

pub fn parse_slice(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let Some((k, v)) = part.split_once('=') else {
            bail!("slice entries look like axis=value, got `{part}`");
        };
        let axis: usize = k.trim().parse().with_context(|| format!("bad slice axis `{k}`"))?;
        let value: f64 = v.trim().parse().with_context(|| format!("bad slice value `{v}`"))?;
        if out.iter().any(|&(a, _)| a == axis) {
            bail!("axis {axis} fixed twice");
        }
        out.push((axis, value));
    }
    Ok(out)
}

pub struct Slice {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height` rows of `width` values.
    pub values: Vec<f64>,
}

pub fn take_slice(field: &ValueField, fixed: &[(usize, f64)]) -> Result<Slice> {
    let g = field.grid();
    let n = g.dim();
    let mut state = vec![0.0; n];
    for &(axis, value) in fixed {
        if axis >= n {
            bail!("slice axis {axis} does not exist; the field has {n} axes");
        }
        if !(g.lower()[axis]..=g.upper()[axis]).contains(&value) {
            bail!("slice value {value} lies outside axis {axis} range [{}, {}]", g.lower()[axis], g.upper()[axis]);
        }
        state[axis] = value;
    }
    let free: Vec<usize> = (0..n).filter(|a| fixed.iter().all(|f| f.0 != *a)).collect();
    let [ax, ay] = free.as_slice() else {
        bail!("slice must leave exactly 2 free axes, leaves {}", free.len());
    };
    let (width, height) = (g.counts()[*ax], g.counts()[*ay]);
    let mut values = Vec::with_capacity(width * height);
    for j in 0..height {
        for i in 0..width {
            state[*ax] = g.node_coord(*ax, i);
            state[*ay] = g.node_coord(*ay, j);
            values.push(field.interpolate(&state));
        }
    }
    Ok(Slice { width, height, values })
}

fn pgm(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(pixels);
    out
}

/// Gray levels scaled linearly from the slice minimum (black) to maximum
/// (white). A flat slice renders white if positive and black otherwise.
pub fn heatmap_pgm(slice: &Slice) -> Vec<u8> {
    let lo = slice.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = slice.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let level = move |v: f64| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round() as u8
        } else if v > 0.0 {
            255
        } else {
            0
        }
    };
    pgm(slice.width, slice.height, slice.values.iter().map(|&v| level(v)))
}

/// White where the value is positive.
pub fn mask_pgm(slice: &Slice) -> Vec<u8> {
    pgm(slice.width, slice.height, slice.values.iter().map(|&v| if v > 0.0 { 255 } else { 0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use reachavoid::GridSpec;

    #[test]
    fn slice_of_six_dimensional_field() {
        let g = GridSpec::uniform(6, -2.0, 2.0, 5).unwrap();
        let f = ValueField::from_fn(g, |x| x[0] + 10.0 * x[1] + 100.0 * x[2]);
        let fixed = parse_slice("2=-1,3=1,4=1,5=-1").unwrap();
        let s = take_slice(&f, &fixed).unwrap();
        assert_eq!((s.width, s.height), (5, 5));
        assert_eq!(s.values[0], -2.0 - 20.0 - 100.0);
        assert_eq!(s.values[1], -1.0 - 20.0 - 100.0);
        assert_eq!(s.values[5], -2.0 - 10.0 - 100.0);
    }

    #[test]
    fn bad_slices() {
        let f = ValueField::constant(GridSpec::uniform(3, 0.0, 1.0, 3).unwrap(), 1.0);
        assert!(take_slice(&f, &[]).is_err());
        assert!(take_slice(&f, &[(0, 0.5), (1, 0.5)]).is_err());
        assert!(take_slice(&f, &[(7, 0.5)]).is_err());
        assert!(take_slice(&f, &[(0, 4.0)]).is_err());
        assert!(parse_slice("1=2,1=3").is_err());
        assert!(parse_slice("x").is_err());
    }

    #[test]
    fn constant_positive_field_is_all_on() {
        let f = ValueField::constant(GridSpec::uniform(2, 0.0, 1.0, 4).unwrap(), 0.3);
        let s = take_slice(&f, &[]).unwrap();
        let mask = mask_pgm(&s);
        assert!(mask.starts_with(b"P5\n4 4\n255\n"));
        assert!(mask[mask.len() - 16..].iter().all(|&b| b == 255));
        assert_eq!(heatmap_pgm(&s), mask);
    }
}
