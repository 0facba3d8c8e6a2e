//! Uniform grids over coordinate boxes and the real fields sampled on them.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::numerics::pairwise_sum;

/// Node-centred uniform grid: coordinate `i` takes `counts[i]` values from
/// `lower[i]` to `upper[i]` inclusive.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, counts: Vec<usize>) -> Result<Self> {
        let n = counts.len();
        if lower.len() != n || upper.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: lower.len().min(upper.len()),
            });
        }
        if n == 0 || counts.iter().any(|&c| c < 2) {
            return Err(Error::InvalidParameter("grid counts must be ≥ 2".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l)) {
            return Err(Error::InvalidParameter("grid upper must exceed lower".into()));
        }
        let spacing = (0..n)
            .map(|i| (upper[i] - lower[i]) / (counts[i] - 1) as f64)
            .collect();
        let mut strides = vec![1; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self {
            lower,
            upper,
            counts,
            spacing,
            strides,
        })
    }

    /// Box `[−R^{a_j}, R^{a_j}]` in each coordinate, `m` points per axis.
    /// With `m` odd the origin is a node.
    pub fn for_group(g: &GroupSpec, radius: f64, m: usize) -> Result<Self> {
        let half: Vec<f64> = g.exponents().iter().map(|a| radius.powf(*a)).collect();
        Self::new(
            half.iter().map(|h| -h).collect(),
            half,
            vec![m; g.dim()],
        )
    }

    /// Box with the given half-widths, `m` points per axis.
    pub fn symmetric(half: &[f64], m: usize) -> Result<Self> {
        Self::new(half.iter().map(|h| -h).collect(), half.to_vec(), vec![m; half.len()])
    }

    /// Box `[−m h, (m−1) h]` per axis with `2m` points: the origin is a node
    /// and the count is even.
    pub fn periodic_like(h: f64, m: usize, dim: usize) -> Result<Self> {
        let lo = -(m as f64) * h;
        let hi = (m as f64 - 1.0) * h;
        Self::new(vec![lo; dim], vec![hi; dim], vec![2 * m; dim])
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
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

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    #[inline]
    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing[axis]
    }

    /// Coordinates of the node with flat index `flat`.
    #[inline]
    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            let i = rem / self.strides[a];
            rem %= self.strides[a];
            out[a] = self.coord(a, i);
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(flat, &mut p);
        p
    }

    #[inline]
    pub fn multi_index(&self, flat: usize, out: &mut [usize]) {
        let mut rem = flat;
        for a in 0..self.dim() {
            out[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
    }

    #[inline]
    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Nearest node, if the point lies within half a cell of the box.
    pub fn nearest(&self, x: &[f64]) -> Option<usize> {
        let mut flat = 0;
        for a in 0..self.dim() {
            let t = ((x[a] - self.lower[a]) / self.spacing[a]).round();
            if t < 0.0 || t > (self.counts[a] - 1) as f64 {
                return None;
            }
            flat += t as usize * self.strides[a];
        }
        Some(flat)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *v >= *l - 1e-12 && *v <= *u + 1e-12)
    }

    /// Same box with each axis refined to `2(count−1)+1` nodes.
    pub fn refined(&self) -> Self {
        Self::new(
            self.lower.clone(),
            self.upper.clone(),
            self.counts.iter().map(|c| 2 * (c - 1) + 1).collect(),
        )
        .expect("refinement of a valid grid")
    }

    /// Grid with the same spacing extended by `pad[a]` nodes on both sides.
    pub fn padded(&self, pad: &[usize]) -> Self {
        let n = self.dim();
        Self::new(
            (0..n).map(|a| self.lower[a] - pad[a] as f64 * self.spacing[a]).collect(),
            (0..n).map(|a| self.upper[a] + pad[a] as f64 * self.spacing[a]).collect(),
            (0..n).map(|a| self.counts[a] + 2 * pad[a]).collect(),
        )
        .expect("padding a valid grid")
    }

    /// Whether both grids share spacing and node lattice.
    pub fn aligned_with(&self, other: &GridSpec) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|a| {
                let h = self.spacing[a];
                (h - other.spacing[a]).abs() < 1e-12 * h
                    && {
                        let off = (other.lower[a] - self.lower[a]) / h;
                        (off - off.round()).abs() < 1e-9
                    }
            })
    }
}

/// Real values on a [`GridSpec`], row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self {
            values: vec![0.0; grid.len()],
            grid: grid.clone(),
        }
    }

    pub fn from_values(grid: &GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at index {i}")));
        }
        Ok(Self {
            grid: grid.clone(),
            values,
        })
    }

    /// Sample `f` at every node (in parallel).
    pub fn from_fn<F>(grid: &GridSpec, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let n = grid.dim();
        let values = (0..grid.len())
            .into_par_iter()
            .map_init(
                || vec![0.0; n],
                |p, i| {
                    grid.point_into(i, p);
                    f(p)
                },
            )
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
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

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("fields live on different grids".into()));
        }
        Ok(())
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(Self {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn add_assign_scaled(&mut self, s: f64, other: &Self) -> Result<()> {
        self.check_same(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
        Ok(())
    }

    /// `Σ f · cellvol`.
    pub fn integral(&self) -> f64 {
        pairwise_sum(&self.values) * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(Σ |f|^p w cellvol)^{1/p}`, or the (weighted-support) max for `p = ∞`.
    pub fn lp_norm(&self, p: f64, weight: Option<&ScalarField>) -> Result<f64> {
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!("p must be ≥ 1, got {p}")));
        }
        if let Some(w) = weight {
            self.check_same(w)?;
            if w.values.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParameter("weight must be positive".into()));
            }
        }
        if p.is_infinite() {
            return Ok(self.max_abs());
        }
        let terms: Vec<f64> = match weight {
            Some(w) => self
                .values
                .iter()
                .zip(&w.values)
                .map(|(v, wv)| pow_abs(*v, p) * wv)
                .collect(),
            None => self.values.iter().map(|v| pow_abs(*v, p)).collect(),
        };
        Ok((pairwise_sum(&terms) * self.grid.cell_volume()).powf(1.0 / p))
    }

    /// Multilinear interpolation; zero outside the box.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.grid.dim();
        let mut base = 0usize;
        let mut frac = [0.0f64; 8];
        let mut offs = [0usize; 8];
        for a in 0..n {
            let t = (x[a] - self.grid.lower[a]) / self.grid.spacing[a];
            let last = (self.grid.counts[a] - 1) as f64;
            if !(t >= 0.0 && t <= last) {
                return 0.0;
            }
            let i = (t.floor() as usize).min(self.grid.counts[a] - 2);
            frac[a] = t - i as f64;
            offs[a] = self.grid.strides[a];
            base += i * self.grid.strides[a];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = base;
            for a in 0..n {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += offs[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    /// Resample onto another grid by interpolation.
    pub fn resample(&self, grid: &GridSpec) -> Self {
        Self::from_fn(grid, |x| self.interpolate(x))
    }

    /// Fraction of `Σ|f|` carried by boundary nodes.
    pub fn boundary_fraction(&self) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.abs()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let n = self.grid.dim();
        let mut idx = vec![0usize; n];
        let mut b = 0.0;
        for (flat, v) in self.values.iter().enumerate() {
            self.grid.multi_index(flat, &mut idx);
            if idx
                .iter()
                .zip(&self.grid.counts)
                .any(|(i, c)| *i == 0 || *i == c - 1)
            {
                b += v.abs();
            }
        }
        b / total
    }

    /// Largest boundary value relative to the global max.
    pub fn boundary_max_ratio(&self) -> f64 {
        let m = self.max_abs();
        if m == 0.0 {
            return 0.0;
        }
        let n = self.grid.dim();
        let mut idx = vec![0usize; n];
        let mut b: f64 = 0.0;
        for (flat, v) in self.values.iter().enumerate() {
            self.grid.multi_index(flat, &mut idx);
            if idx
                .iter()
                .zip(&self.grid.counts)
                .any(|(i, c)| *i == 0 || *i == c - 1)
            {
                b = b.max(v.abs());
            }
        }
        b / m
    }

    /// Write as text: `#`-prefixed grid header, then `x_1,…,x_n,value` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        let n = self.grid.dim();
        writeln!(out, "# field dim={n}")?;
        for a in 0..n {
            writeln!(
                out,
                "# axis {a} {:e} {:e} {}",
                self.grid.lower[a], self.grid.upper[a], self.grid.counts[a]
            )?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        w.write_record(&header)?;
        let mut p = vec![0.0; n];
        for (flat, v) in self.values.iter().enumerate() {
            self.grid.point_into(flat, &mut p);
            let mut rec: Vec<String> = p.iter().map(|c| format!("{c:e}")).collect();
            rec.push(format!("{v:e}"));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let n: usize = line
            .trim()
            .strip_prefix("# field dim=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config("missing field header".into()))?;
        let (mut lower, mut upper, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            line.clear();
            reader.read_line(&mut line)?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 6 || parts[1] != "axis" {
                return Err(Error::Config(format!("bad axis line: {}", line.trim())));
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Config(format!("bad number {s}")))
            };
            lower.push(parse(parts[3])?);
            upper.push(parse(parts[4])?);
            counts.push(
                parts[5]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad count {}", parts[5])))?,
            );
        }
        let grid = GridSpec::new(lower, upper, counts)?;
        let mut r = csv::Reader::from_reader(reader);
        let mut values = Vec::with_capacity(grid.len());
        for rec in r.records() {
            let rec = rec?;
            let v: f64 = rec
                .get(n)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config("bad value column".into()))?;
            values.push(v);
        }
        Self::from_values(&grid, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

#[inline]
fn pow_abs(v: f64, p: f64) -> f64 {
    let a = v.abs();
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else {
        a.powf(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_grid(m: usize) -> GridSpec {
        GridSpec::symmetric(&[2.0, 2.0], m).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = GridSpec::new(vec![0.0, -1.0], vec![1.0, 1.0], vec![3, 5]).unwrap();
        assert_eq!(g.spacing(), &[0.5, 0.5]);
        assert_eq!(g.len(), 15);
        assert_eq!(g.point(7), vec![0.5, 0.0]);
        assert_eq!(g.nearest(&[0.49, 0.01]), Some(7));
        assert!(GridSpec::new(vec![0.0], vec![1.0], vec![1]).is_err());
        let r = g.refined();
        assert_eq!(r.counts(), &[5, 9]);
        assert!(g.aligned_with(&g.padded(&[2, 1])));
    }

    #[test]
    fn indicator_l2_norm() {
        // indicator of [-1,1]^2 on a cell-centred-compatible grid
        let g = GridSpec::symmetric(&[2.0, 2.0], 401).unwrap();
        let f = ScalarField::from_fn(&g, |x| {
            let w = |t: f64| {
                if t.abs() < 1.0 {
                    1.0
                } else if (t.abs() - 1.0).abs() < 1e-9 {
                    0.5
                } else {
                    0.0
                }
            };
            w(x[0]) * w(x[1])
        });
        assert!((f.lp_norm(1.0, None).unwrap() - 4.0).abs() < 1e-9);
        assert!((f.lp_norm(2.0, None).unwrap() - 2.0).abs() < 1e-2);
        let one = ScalarField::from_fn(&g, |_| 1.0);
        assert_eq!(f.lp_norm(2.0, Some(&one)).unwrap(), f.lp_norm(2.0, None).unwrap());
        assert!(f.lp_norm(0.5, None).is_err());
    }

    #[test]
    fn interpolation_is_exact_for_bilinear() {
        let g = square_grid(9);
        let f = ScalarField::from_fn(&g, |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1]);
        let x = [0.37, -1.21];
        let exact = 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        assert!((f.interpolate(&x) - exact).abs() < 1e-12);
        assert_eq!(f.interpolate(&[3.0, 0.0]), 0.0);
        assert!((f.interpolate(&[2.0, 2.0]) - (1.0 + 4.0 - 2.0 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let g = square_grid(5);
        let f = ScalarField::from_fn(&g, |x| x[0] * 0.1 + x[1].sin());
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.grid(), f.grid());
        for (a, b) in back.values().iter().zip(f.values()) {
            assert!((a - b).abs() < 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn non_finite_rejected() {
        let g = square_grid(3);
        assert!(ScalarField::from_values(&g, vec![f64::NAN; 9]).is_err());
    }
}
