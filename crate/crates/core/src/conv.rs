//! Direct-summation group convolution `f∗k(x) = Σ_y f(y) k(y^{-1}x) |cell|`.
//!
//! For `z = y^{-1}x` each coordinate satisfies `z_j = x_j − y_j + S_j`, where
//! `S_j` depends only on coordinates below `j`. Two consequences drive the
//! engine:
//!
//! * the admissible `y_j` for a kernel supported in `ρ ≤ R` form an exact
//!   interval `[x_j + S_j − R^{a_j}, x_j + S_j + R^{a_j}]`, found coordinate
//!   by coordinate;
//! * along the last axis `z_n − (x_n − y_n)` is constant, so for a pair of
//!   grid lines the kernel is needed only on one arithmetic progression and
//!   the inner sum is a 1-d correlation.
//!
//! Output lines are independent and processed in parallel; each is
//! accumulated in a fixed order so results do not depend on the thread count.

use std::collections::HashMap;

use log::debug;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::GroupSpec;
use crate::kernels::{Kernel, TIE};

const MAXD: usize = 8;

/// Diagnostics for one convolution call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConvReport {
    /// Largest boundary value of the input relative to its max.
    pub input_boundary_ratio: f64,
    /// Share of `Σ|out|` on boundary nodes of the output grid (largest over a batch).
    pub output_boundary_fraction: f64,
    /// Number of kernel evaluations performed.
    pub kernel_evals: u64,
    /// Whether the line-correlation path was used.
    pub line_path: bool,
    /// Whether kernel lines were shared between translated line pairs.
    pub cached: bool,
}

/// A sampled field used as a convolution kernel (multilinear interpolation,
/// zero outside its box).
pub struct FieldKernel<'a> {
    field: &'a ScalarField,
    r_hi: f64,
}

impl<'a> FieldKernel<'a> {
    pub fn new(g: &GroupSpec, field: &'a ScalarField) -> Self {
        let grid = field.grid();
        let corner: Vec<f64> = (0..grid.dim())
            .map(|a| grid.lower()[a].abs().max(grid.upper()[a].abs()))
            .collect();
        Self {
            field,
            r_hi: g.quasi_norm(&corner),
        }
    }
}

impl Kernel for FieldKernel<'_> {
    fn eval(&self, z: &[f64]) -> f64 {
        self.field.interpolate(z)
    }
    fn support(&self) -> (f64, f64) {
        (0.0, self.r_hi)
    }
}

/// `f∗k` sampled on `out_grid`.
pub fn convolve<K: Kernel + ?Sized>(
    g: &GroupSpec,
    f: &ScalarField,
    k: &K,
    out_grid: &GridSpec,
) -> Result<ScalarField> {
    Ok(convolve_with_report(g, f, k, out_grid)?.0)
}

/// `f∗k` with diagnostics.
pub fn convolve_with_report<K: Kernel + ?Sized>(
    g: &GroupSpec,
    f: &ScalarField,
    k: &K,
    out_grid: &GridSpec,
) -> Result<(ScalarField, ConvReport)> {
    let (mut v, r) = convolve_batch(g, &[f], k, out_grid)?;
    Ok((v.pop().expect("one output per input"), r))
}

/// Convolve several fields on a common grid against one kernel, sharing
/// kernel evaluations.
pub fn convolve_batch<K: Kernel + ?Sized>(
    g: &GroupSpec,
    fs: &[&ScalarField],
    k: &K,
    out_grid: &GridSpec,
) -> Result<(Vec<ScalarField>, ConvReport)> {
    if fs.is_empty() {
        return Ok((Vec::new(), ConvReport::default()));
    }
    let in_grid = fs[0].grid();
    let n = g.dim();
    if n > MAXD {
        return Err(Error::InvalidGroup(format!("dimension {n} exceeds {MAXD}")));
    }
    for f in fs {
        if f.grid() != in_grid {
            return Err(Error::InvalidParameter("batched fields must share a grid".into()));
        }
    }
    if in_grid.dim() != n || out_grid.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: if in_grid.dim() != n { in_grid.dim() } else { out_grid.dim() },
        });
    }
    let input_boundary_ratio = fs.iter().map(|f| f.boundary_max_ratio()).fold(0.0, f64::max);
    if input_boundary_ratio > 1e-12 {
        debug!("convolution input not compactly supported in its grid (boundary/max = {input_boundary_ratio:.2e})");
    }
    let plan = Plan::new(g, in_grid, out_grid, k.support().1, None);
    let (outs, evals) = plan.run(fs, k);
    let mut fields = Vec::with_capacity(outs.len());
    for v in outs {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("convolution accumulation".into()));
        }
        fields.push(ScalarField::from_values(out_grid, v)?);
    }
    let report = ConvReport {
        input_boundary_ratio,
        output_boundary_fraction: fields.iter().map(|f| f.boundary_fraction()).fold(0.0, f64::max),
        kernel_evals: evals,
        line_path: plan.line_path,
        cached: plan.cache,
    };
    Ok((fields, report))
}

/// Maps one output line's binned block, indexed `[field·nbins + bin][i]`,
/// to any fixed number of reduced lines.
pub type LineReducer = dyn Fn(Vec<Vec<f64>>) -> Vec<Vec<f64>> + Sync;

/// Binned convolution of a batch, reduced line by line so that the full
/// `fields × bins` array never has to be stored.
pub fn convolve_binned_reduce<K: Kernel + ?Sized>(
    g: &GroupSpec,
    fs: &[&ScalarField],
    k: &K,
    edges: &[f64],
    out_grid: &GridSpec,
    reduce: &LineReducer,
) -> Result<(Vec<ScalarField>, ConvReport)> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("bin edges must be increasing, at least two".into()));
    }
    let n = g.dim();
    let Some(first) = fs.first() else {
        return Ok((Vec::new(), ConvReport::default()));
    };
    for f in fs {
        if f.grid() != first.grid() {
            return Err(Error::InvalidParameter("batch fields must share a grid".into()));
        }
    }
    if first.grid().dim() != n || out_grid.dim() != n || n > MAXD {
        return Err(Error::DimensionMismatch { expected: n, got: first.grid().dim() });
    }
    let input_boundary_ratio = fs.iter().map(|f| f.boundary_max_ratio()).fold(0.0, f64::max);
    let r_hi = k.support().1.min(edges[edges.len() - 1]);
    let plan = Plan::new(g, first.grid(), out_grid, r_hi, Some(edges));
    let (outs, evals) = plan.run_reduced(fs, k, reduce);
    let mut fields = Vec::with_capacity(outs.len());
    for v in outs {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("binned convolution accumulation".into()));
        }
        fields.push(ScalarField::from_values(out_grid, v)?);
    }
    let output_boundary_fraction = fields.iter().map(|f| f.boundary_fraction()).fold(0.0, f64::max);
    let report = ConvReport {
        input_boundary_ratio,
        output_boundary_fraction,
        kernel_evals: evals,
        line_path: plan.line_path,
        cached: plan.cache,
    };
    Ok((fields, report))
}

/// Split `f∗k` by the radius of `z = y^{-1}x`: output `b` collects the
/// contributions with `edges[b] < ρ(z) ≤ edges[b+1]`. Radii outside all bins
/// are dropped. Use a negative first edge to include `z = 0`.
pub fn convolve_binned<K: Kernel + ?Sized>(
    g: &GroupSpec,
    f: &ScalarField,
    k: &K,
    edges: &[f64],
    out_grid: &GridSpec,
) -> Result<(Vec<ScalarField>, ConvReport)> {
    convolve_binned_reduce(g, &[f], k, edges, out_grid, &|v| v)
}

/// Output grid large enough to hold `supp(f∗k)`: the input box grown by
/// `A0·(ρ_box + r_hi)` per coordinate on the input lattice.
pub fn default_out_grid<K: Kernel + ?Sized>(g: &GroupSpec, in_grid: &GridSpec, k: &K) -> GridSpec {
    let r_hi = k.support().1;
    if !r_hi.is_finite() {
        return in_grid.clone();
    }
    let corner: Vec<f64> = (0..in_grid.dim())
        .map(|a| in_grid.lower()[a].abs().max(in_grid.upper()[a].abs()))
        .collect();
    let reach = g.a0() * (g.quasi_norm(&corner) + r_hi);
    let pad: Vec<usize> = (0..in_grid.dim())
        .map(|a| {
            let need = reach.powf(g.exponents()[a]);
            let extra = (need - in_grid.upper()[a]).max(in_grid.lower()[a] + need).max(0.0);
            (extra / in_grid.spacing()[a]).ceil() as usize
        })
        .collect();
    in_grid.padded(&pad)
}

struct Plan<'a> {
    g: &'a GroupSpec,
    in_grid: &'a GridSpec,
    out_grid: &'a GridSpec,
    n: usize,
    radius: [f64; MAXD],
    line_path: bool,
    cache: bool,
    cell: f64,
    /// Radial bin edges; `None` means one bin covering everything.
    edges: Option<Vec<f64>>,
    dil: crate::group::Dilations,
}

/// An input line contributing to an output line.
struct Candidate {
    /// Flat index of the input line start.
    start: usize,
    /// Lattice offset (input minus output, first `n−1` axes) for caching.
    offset: [i64; MAXD],
    z: [f64; MAXD],
    /// `S_n` for the last coordinate.
    shift: f64,
}

impl<'a> Plan<'a> {
    fn new(
        g: &'a GroupSpec,
        in_grid: &'a GridSpec,
        out_grid: &'a GridSpec,
        r_hi: f64,
        edges: Option<&'a [f64]>,
    ) -> Self {
        let n = g.dim();
        let mut radius = [f64::INFINITY; MAXD];
        for (j, a) in g.exponents().iter().enumerate() {
            radius[j] = r_hi.powf(*a);
        }
        let last = n - 1;
        let h_in = in_grid.spacing()[last];
        let h_out = out_grid.spacing()[last];
        let line_path = (h_in - h_out).abs() < 1e-12 * h_in;
        let cache = g.is_abelian() && in_grid.aligned_with(out_grid);
        Self {
            g,
            in_grid,
            out_grid,
            n,
            radius,
            line_path,
            cache,
            cell: in_grid.cell_volume(),
            edges: edges.map(|e| e.iter().map(|v| v + v.abs() * TIE).collect()),
            dil: g.dilations().clone(),
        }
    }

    fn nbins(&self) -> usize {
        self.edges.as_ref().map_or(1, |e| e.len() - 1)
    }

    /// Kernel value and bin at `z`; values outside every bin are dropped.
    #[inline]
    fn eval_binned<K: Kernel + ?Sized>(&self, k: &K, z: &[f64]) -> (f64, u32) {
        match &self.edges {
            None => (k.eval(z), 0),
            Some(e) => {
                let r = self.dil.rho(z);
                let b = e.partition_point(|v| *v < r);
                if b == 0 || b >= e.len() {
                    (0.0, 0)
                } else {
                    (k.eval(z), (b - 1) as u32)
                }
            }
        }
    }

    fn lines(grid: &GridSpec) -> usize {
        grid.len() / grid.counts()[grid.dim() - 1]
    }

    /// Input lines whose `z_{<n}` lies in the support box, for output line
    /// with leading coordinates `x`.
    fn candidates(&self, x: &[f64; MAXD], out_idx: &[i64; MAXD], skip: &[bool], acc: &mut Vec<Candidate>) {
        let mut y = [0.0; MAXD];
        let mut u = [0.0; MAXD];
        let mut z = [0.0; MAXD];
        let mut idx = [0i64; MAXD];
        self.recurse(0, x, out_idx, &mut y, &mut u, &mut z, &mut idx, skip, acc);
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &self,
        j: usize,
        x: &[f64; MAXD],
        out_idx: &[i64; MAXD],
        y: &mut [f64; MAXD],
        u: &mut [f64; MAXD],
        z: &mut [f64; MAXD],
        idx: &mut [i64; MAXD],
        skip: &[bool],
        acc: &mut Vec<Candidate>,
    ) {
        let g = self.g;
        let n = self.n;
        // S_j = −Q_j(y, u) + Q_j(u, x); both vanish for coordinates without law terms
        let shift = -g.q_term(j, &y[..n], &u[..n]) + g.q_term(j, &u[..n], &x[..n]);
        if j == n - 1 {
            let mut start = 0usize;
            for a in 0..j {
                start += idx[a] as usize * self.in_grid.strides()[a];
            }
            if skip[start / self.in_grid.counts()[n - 1]] {
                return;
            }
            let mut offset = [0i64; MAXD];
            for a in 0..j {
                offset[a] = idx[a] - out_idx[a];
            }
            acc.push(Candidate {
                start,
                offset,
                z: *z,
                shift,
            });
            return;
        }
        let lo = self.in_grid.lower()[j];
        let h = self.in_grid.spacing()[j];
        let cnt = self.in_grid.counts()[j] as i64;
        let centre = x[j] + shift;
        let r = self.radius[j];
        let (i0, i1) = if r.is_finite() {
            let tol = 1e-9;
            (
                (((centre - r - lo) / h) - tol).ceil().max(0.0) as i64,
                (((centre + r - lo) / h) + tol).floor().min((cnt - 1) as f64) as i64,
            )
        } else {
            (0, cnt - 1)
        };
        for i in i0..=i1 {
            let yj = lo + i as f64 * h;
            y[j] = yj;
            // u = y^{-1}: u_j = −y_j − Q_j(y, u)
            u[j] = -yj - g.q_term(j, &y[..n], &u[..n]);
            z[j] = x[j] - yj + shift;
            idx[j] = i;
            self.recurse(j + 1, x, out_idx, y, u, z, idx, skip, acc);
        }
        y[j] = 0.0;
        u[j] = 0.0;
        z[j] = 0.0;
    }

    fn run<K: Kernel + ?Sized>(&self, fs: &[&ScalarField], k: &K) -> (Vec<Vec<f64>>, u64) {
        self.run_reduced(fs, k, &|v| v)
    }

    /// As [`Plan::run`], with each output line's `[field·nbins + bin]` block
    /// passed through `reduce` before assembly.
    fn run_reduced<K: Kernel + ?Sized>(&self, fs: &[&ScalarField], k: &K, reduce: &LineReducer) -> (Vec<Vec<f64>>, u64) {
        let n = self.n;
        let last = n - 1;
        let n_in = self.in_grid.counts()[last];
        let n_out = self.out_grid.counts()[last];
        let in_lines = Self::lines(self.in_grid);
        let out_lines = Self::lines(self.out_grid);
        // nonzero extent of each input line over the batch
        let extents: Vec<Option<(usize, usize)>> = (0..in_lines)
            .map(|l| {
                let mut ext: Option<(usize, usize)> = None;
                for f in fs {
                    let v = &f.values()[l * n_in..(l + 1) * n_in];
                    if let Some(a) = v.iter().position(|x| *x != 0.0) {
                        let b = v.iter().rposition(|x| *x != 0.0).unwrap_or(a);
                        ext = Some(match ext {
                            Some((p, q)) => (p.min(a), q.max(b)),
                            None => (a, b),
                        });
                    }
                }
                ext
            })
            .collect();
        let skip: Vec<bool> = extents.iter().map(|e| e.is_none()).collect();

        let per_line: Vec<(Vec<Vec<f64>>, u64)> = (0..out_lines)
            .into_par_iter()
            .map(|ol| {
                let mut x = [0.0; MAXD];
                let mut oidx = [0i64; MAXD];
                let mut rem = ol * n_out;
                for a in 0..last {
                    let s = self.out_grid.strides()[a];
                    oidx[a] = (rem / s) as i64;
                    rem %= s;
                    x[a] = self.out_grid.coord(a, oidx[a] as usize);
                }
                let mut cands = Vec::new();
                self.candidates(&x, &oidx, &skip, &mut cands);
                let mut out = vec![vec![0.0; n_out]; fs.len() * self.nbins()];
                let evals = if self.line_path {
                    self.line_sum(fs, k, &cands, &extents, &mut out)
                } else {
                    self.point_sum(fs, k, &cands, &extents, &mut out)
                };
                (reduce(out), evals)
            })
            .collect();

        let width = per_line.first().map_or(0, |l| l.0.len());
        let mut outs = vec![Vec::with_capacity(self.out_grid.len()); width];
        let mut evals = 0;
        for (lines, e) in per_line {
            evals += e;
            for (o, l) in outs.iter_mut().zip(lines) {
                o.extend_from_slice(&l);
            }
        }
        (outs, evals)
    }

    fn line_sum<K: Kernel + ?Sized>(
        &self,
        fs: &[&ScalarField],
        k: &K,
        cands: &[Candidate],
        extents: &[Option<(usize, usize)>],
        out: &mut [Vec<f64>],
    ) -> u64 {
        let last = self.n - 1;
        let n_in = self.in_grid.counts()[last] as i64;
        let n_out = self.out_grid.counts()[last] as i64;
        let h = self.in_grid.spacing()[last];
        let r = self.radius[last];
        let dlow = self.out_grid.lower()[last] - self.in_grid.lower()[last];
        let nb = self.nbins();
        let mut evals = 0u64;
        let mut line: Vec<f64> = Vec::new();
        let mut line_bins: Vec<u32> = Vec::new();
        let mut cache: HashMap<[i64; MAXD], (i64, Vec<f64>, Vec<u32>)> = HashMap::new();
        let mut zz = [0.0; MAXD];
        for c in cands {
            let (e0, e1) = extents[c.start / n_in as usize].expect("skipped lines are not candidates");
            // z_last = D + m h with m = i − l (i output, l input index)
            let d = dlow + c.shift;
            let (mut a0, mut a1) = (-(n_in - 1), n_out - 1);
            if r.is_finite() {
                a0 = a0.max(((-r - d) / h - 1e-9).ceil() as i64);
                a1 = a1.min(((r - d) / h + 1e-9).floor() as i64);
            }
            // only offsets that can meet a nonzero input value
            let m0 = a0.max(-(e1 as i64));
            let m1 = a1.min(n_out - 1 - e0 as i64);
            if m1 < m0 {
                continue;
            }
            let (vals, bins): (&[f64], &[u32]) = if self.cache {
                let entry = cache.entry(c.offset).or_insert_with(|| {
                    // full progression for this offset, independent of extents
                    zz[..last].copy_from_slice(&c.z[..last]);
                    let mut v = Vec::with_capacity((a1 - a0 + 1) as usize);
                    let mut b = Vec::with_capacity(v.capacity());
                    for m in a0..=a1 {
                        zz[last] = d + m as f64 * h;
                        let (kv, kb) = self.eval_binned(k, &zz[..=last]);
                        v.push(kv);
                        b.push(kb);
                    }
                    evals += (a1 - a0 + 1) as u64;
                    (a0, v, b)
                });
                let lo = (m0 - entry.0) as usize;
                let hi = (m1 - entry.0) as usize + 1;
                (&entry.1[lo..hi], &entry.2[lo..hi])
            } else {
                line.clear();
                line_bins.clear();
                zz[..last].copy_from_slice(&c.z[..last]);
                for m in m0..=m1 {
                    zz[last] = d + m as f64 * h;
                    let (kv, kb) = self.eval_binned(k, &zz[..=last]);
                    line.push(kv);
                    line_bins.push(kb);
                }
                evals += (m1 - m0 + 1) as u64;
                (&line, &line_bins)
            };
            for (bi, f) in fs.iter().enumerate() {
                let fl = &f.values()[c.start..c.start + n_in as usize];
                for (mi, (&kv, &kb)) in vals.iter().zip(bins).enumerate() {
                    if kv == 0.0 {
                        continue;
                    }
                    let m = m0 + mi as i64;
                    // i = l + m with l ∈ [e0, e1], i ∈ [0, n_out)
                    let l0 = (e0 as i64).max(-m);
                    let l1 = (e1 as i64).min(n_out - 1 - m);
                    if l1 < l0 {
                        continue;
                    }
                    let w = kv * self.cell;
                    let src = &fl[l0 as usize..=l1 as usize];
                    let o = &mut out[bi * nb + kb as usize];
                    let dst = &mut o[(l0 + m) as usize..=(l1 + m) as usize];
                    for (dv, sv) in dst.iter_mut().zip(src) {
                        *dv += w * sv;
                    }
                }
            }
        }
        evals
    }

    fn point_sum<K: Kernel + ?Sized>(
        &self,
        fs: &[&ScalarField],
        k: &K,
        cands: &[Candidate],
        extents: &[Option<(usize, usize)>],
        out: &mut [Vec<f64>],
    ) -> u64 {
        let last = self.n - 1;
        let n_in = self.in_grid.counts()[last];
        let n_out = self.out_grid.counts()[last];
        let h = self.in_grid.spacing()[last];
        let lo = self.in_grid.lower()[last];
        let r = self.radius[last];
        let nb = self.nbins();
        let mut evals = 0u64;
        let mut zz = [0.0; MAXD];
        for i in 0..n_out {
            let xl = self.out_grid.coord(last, i);
            for c in cands {
                let (e0, e1) = extents[c.start / n_in].expect("skipped lines are not candidates");
                zz[..last].copy_from_slice(&c.z[..last]);
                let centre = xl + c.shift;
                let (mut l0, mut l1) = (e0, e1);
                if r.is_finite() {
                    l0 = l0.max((((centre - r - lo) / h) - 1e-9).ceil().max(0.0) as usize);
                    let top = ((centre + r - lo) / h) + 1e-9;
                    if top < 0.0 {
                        continue;
                    }
                    l1 = l1.min(top.floor() as usize);
                }
                for l in l0..=l1.min(n_in - 1) {
                    zz[last] = centre - (lo + l as f64 * h);
                    let (kv, kb) = self.eval_binned(k, &zz[..=last]);
                    evals += 1;
                    if kv == 0.0 {
                        continue;
                    }
                    for (bi, f) in fs.iter().enumerate() {
                        out[bi * nb + kb as usize][i] += kv * self.cell * f.values()[c.start + l];
                    }
                }
            }
        }
        evals
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{LPCutoff, OmegaPreset, RadialKernel, SphereFunction};
    use crate::polar::{SphereQuadrature, DEFAULT_SHELL};
    use std::sync::Arc;

    struct Gauss(f64);
    impl Kernel for Gauss {
        fn eval(&self, z: &[f64]) -> f64 {
            (-z.iter().map(|v| v * v).sum::<f64>() / self.0).exp()
        }
        fn support(&self) -> (f64, f64) {
            (0.0, f64::INFINITY)
        }
    }

    /// Odd, non-radial kernel with bounded support.
    struct Odd;
    impl Kernel for Odd {
        fn eval(&self, z: &[f64]) -> f64 {
            let r2: f64 = z.iter().map(|v| v * v).sum();
            if r2 >= 1.0 {
                0.0
            } else {
                (z[0] + 0.5 * z[1] + z[z.len() - 1]) * (1.0 - r2).powi(2)
            }
        }
        fn support(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
    }

    fn bump(x: &[f64], c: &[f64], s: f64) -> f64 {
        let r2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / (s * s);
        if r2 >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - r2)).exp()
        }
    }

    fn brute<K: Kernel>(g: &GroupSpec, f: &ScalarField, k: &K, out: &GridSpec) -> ScalarField {
        let fg = f.grid().clone();
        let cell = fg.cell_volume();
        ScalarField::from_fn(out, |x| {
            let mut s = 0.0;
            for i in 0..fg.len() {
                let y = fg.point(i);
                let z = g.multiply(&g.inverse(&y).unwrap(), x).unwrap();
                s += f.values()[i] * k.eval(&z) * cell;
            }
            s
        })
    }

    fn rel_l2(a: &ScalarField, b: &ScalarField) -> f64 {
        let d = a.sub(b).unwrap();
        d.lp_norm(2.0, None).unwrap() / b.lp_norm(2.0, None).unwrap()
    }

    #[test]
    fn line_path_matches_brute_force_on_heisenberg() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 13).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.2, -0.1, 0.3], 1.3));
        let a = convolve(&g, &f, &Odd, &grid).unwrap();
        let b = brute(&g, &f, &Odd, &grid);
        assert!(rel_l2(&a, &b) < 1e-12);
    }

    #[test]
    fn point_path_matches_brute_force() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 11).unwrap();
        let out = GridSpec::for_group(&g, 1.7, 9).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.0, 0.3, -0.2], 1.4));
        let (a, rep) = convolve_with_report(&g, &f, &Odd, &out).unwrap();
        assert!(!rep.line_path);
        let b = brute(&g, &f, &Odd, &out);
        assert!(rel_l2(&a, &b) < 1e-12);
    }

    #[test]
    fn cached_abelian_path_matches_brute_force() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[2.0, 2.0], 21).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.3, 0.1], 1.2));
        let (a, rep) = convolve_with_report(&g, &f, &Odd, &grid).unwrap();
        assert!(rep.cached && rep.line_path);
        let b = brute(&g, &f, &Odd, &grid);
        assert!(rel_l2(&a, &b) < 1e-12);
    }

    #[test]
    fn batch_equals_individual() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 11).unwrap();
        let f1 = ScalarField::from_fn(&grid, |x| bump(x, &[0.2, 0.0, 0.0], 1.0));
        let f2 = ScalarField::from_fn(&grid, |x| bump(x, &[-0.2, 0.4, 0.5], 1.2));
        let (b, _) = convolve_batch(&g, &[&f1, &f2], &Odd, &grid).unwrap();
        assert_eq!(b[0], convolve(&g, &f1, &Odd, &grid).unwrap());
        assert_eq!(b[1], convolve(&g, &f2, &Odd, &grid).unwrap());
    }

    #[test]
    fn approximate_identity() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 256, DEFAULT_SHELL).unwrap();
        let lp = LPCutoff::new(&g, &quad, 0).unwrap();
        let grid = GridSpec::symmetric(&[0.5, 0.5], 501).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.0, 0.0], 0.45));
        // Δ[2]φ lives on 0.01 ≤ ρ ≤ 0.02, five to ten grid cells
        let s = convolve(&g, &f, &lp.dilated(2.0), &grid).unwrap();
        let err = s.sub(&f).unwrap().max_abs() / f.max_abs();
        assert!(err < 0.02, "err {err}");
    }

    #[test]
    fn euclidean_commutes_for_radial_kernel() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[2.0, 2.0], 41).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.3, -0.2], 0.9));
        let kf = ScalarField::from_fn(&grid, |x| Gauss(0.1).eval(x) * bump(x, &[0.0, 0.0], 1.0));
        let fk = convolve(&g, &f, &FieldKernel::new(&g, &kf), &grid).unwrap();
        let kf_ = convolve(&g, &kf, &FieldKernel::new(&g, &f), &grid).unwrap();
        assert!(rel_l2(&fk, &kf_) < 1e-6);
    }

    #[test]
    fn heisenberg_does_not_commute() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 25).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.4, 0.0, 0.0], 1.0));
        let kf = ScalarField::from_fn(&grid, |x| Odd.eval(x));
        let fk = convolve(&g, &f, &FieldKernel::new(&g, &kf), &grid).unwrap();
        let kff = convolve(&g, &kf, &FieldKernel::new(&g, &f), &grid).unwrap();
        let d = fk.sub(&kff).unwrap().lp_norm(2.0, None).unwrap();
        assert!(d > 0.01 * fk.lp_norm(2.0, None).unwrap());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 15).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.1, 0.2, 0.0], 1.3));
        let run = |t| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .unwrap()
                .install(|| convolve(&g, &f, &Odd, &grid).unwrap())
        };
        assert_eq!(run(1).values(), run(3).values());
    }

    #[test]
    fn young_inequality_at_grid_scale() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 256, DEFAULT_SHELL).unwrap();
        let om = Arc::new(SphereFunction::build(&g, &quad, OmegaPreset::FirstCoordinate, 0, false).unwrap());
        let k = RadialKernel::truncated(&g, om, 0.5, 0.25, 0.5);
        let grid = GridSpec::symmetric(&[2.0, 2.0], 81).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.0, 0.0], 1.0));
        let out = convolve(&g, &f, &k, &grid).unwrap();
        let lhs = out.lp_norm(1.0, None).unwrap();
        let rhs = f.lp_norm(1.0, None).unwrap() * k.total_variation();
        assert!(lhs <= rhs * 1.05);
    }

    #[test]
    fn binned_pieces_sum_to_full_convolution() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 13).unwrap();
        let f = ScalarField::from_fn(&grid, |x| bump(x, &[0.2, -0.1, 0.3], 1.3));
        let edges = [-1.0, 0.7, 0.9, 1.2, 2.0];
        let (pieces, _) = convolve_binned(&g, &f, &Odd, &edges, &grid).unwrap();
        assert_eq!(pieces.len(), 4);
        let sum = pieces.iter().skip(1).fold(pieces[0].clone(), |a, p| a.add(p).unwrap());
        let full = convolve(&g, &f, &Odd, &grid).unwrap();
        assert!(rel_l2(&sum, &full) < 1e-12);
        // the innermost bin only sees ρ(z) ≤ 0.7
        let inner = convolve(&g, &f, &RestrictedOdd(0.7), &grid).unwrap();
        let e = rel_l2(&pieces[0], &inner);
        assert!(inner.max_abs() > 0.0 && e < 1e-12, "inner bin error {e}");
    }

    struct RestrictedOdd(f64);
    impl Kernel for RestrictedOdd {
        fn eval(&self, z: &[f64]) -> f64 {
            if GroupSpec::heisenberg().quasi_norm(z) <= self.0 {
                Odd.eval(z)
            } else {
                0.0
            }
        }
        fn support(&self) -> (f64, f64) {
            (0.0, self.0)
        }
    }

    #[test]
    fn default_out_grid_contains_support() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 1.0, 9).unwrap();
        let out = default_out_grid(&g, &grid, &Odd);
        assert!(out.aligned_with(&grid));
        assert!(out.upper()[2] >= (g.a0() * 2.0f64).powi(2));
    }
}
