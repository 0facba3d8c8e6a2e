//! Polar coordinates on a homogeneous group.
//!
//! The surface measure on the unit quasi-sphere is realised by thin-shell
//! projection: grid cells meeting `{1 ≤ ρ ≤ 1+h}` are projected radially onto
//! the sphere and weighted by the volume they share with the shell, so that
//! `∫ f dx = ∫_0^∞ ∫_Σ f(r∘θ) r^{Q−1} dσ(θ) dr` holds exactly for shell
//! indicators.

use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::numerics::{log_simpson, pairwise_sum};

/// Default shell thickness.
pub const DEFAULT_SHELL: f64 = 0.02;
/// Radial Simpson intervals per octave.
pub const DEFAULT_PER_OCTAVE: usize = 64;

/// Nodes on the unit quasi-sphere with positive weights.
#[derive(Clone, Debug)]
pub struct SphereQuadrature {
    dim: usize,
    q_hom: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    shell: f64,
    resolution: usize,
}

impl SphereQuadrature {
    /// Thin-shell projection quadrature with `resolution` cells per axis.
    pub fn build(g: &GroupSpec, resolution: usize, h: f64) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::Resolution(format!(
                "sphere resolution {resolution} below 8"
            )));
        }
        if !(h > 0.0 && h <= 0.1) {
            return Err(Error::InvalidParameter(format!("shell thickness {h} not in (0, 0.1]")));
        }
        let n = g.dim();
        let q = g.q_hom();
        let dil = g.dilations();
        let half: Vec<f64> = g.exponents().iter().map(|a| (1.0 + h).powf(*a)).collect();
        let step: Vec<f64> = half.iter().map(|s| 2.0 * s / resolution as f64).collect();
        let scale = q / ((1.0 + h).powf(q) - 1.0);
        let inner: Vec<f64> = vec![1.0; n];
        let total = resolution.pow(n as u32);
        // Quasi-balls are coordinate boxes, so the part of a cell inside the
        // shell has an exact volume: |cell ∩ B(1+h)| − |cell ∩ B(1)|.
        let overlap = |lo: &[f64], hi: &[f64], box_half: &[f64]| -> f64 {
            let mut v = 1.0;
            for a in 0..n {
                let l = lo[a].max(-box_half[a]);
                let u = hi[a].min(box_half[a]);
                if u <= l {
                    return 0.0;
                }
                v *= u - l;
            }
            v
        };
        // Slabs along the first axis are processed in parallel; the per-slab
        // outputs are concatenated in order so node ordering is deterministic.
        let slabs: Vec<(Vec<f64>, Vec<f64>)> = (0..resolution)
            .into_par_iter()
            .map(|i0| {
                let mut nodes = Vec::new();
                let mut weights = Vec::new();
                let mut x = vec![0.0; n];
                let mut lo = vec![0.0; n];
                let mut hi = vec![0.0; n];
                let mut th = vec![0.0; n];
                let per = total / resolution;
                for rest in 0..per {
                    let mut r = rest;
                    for a in (0..n).rev() {
                        let i = if a == 0 {
                            i0
                        } else {
                            let i = r % resolution;
                            r /= resolution;
                            i
                        };
                        lo[a] = -half[a] + i as f64 * step[a];
                        hi[a] = lo[a] + step[a];
                        x[a] = lo[a] + 0.5 * step[a];
                    }
                    let vol = overlap(&lo, &hi, &half) - overlap(&lo, &hi, &inner);
                    if vol > 1e-15 * step.iter().product::<f64>() {
                        let rho = dil.rho(&x);
                        dil.project_into(&x, rho, &mut th);
                        nodes.extend_from_slice(&th);
                        weights.push(vol * scale);
                    }
                }
                (nodes, weights)
            })
            .collect();
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for (nd, w) in slabs {
            nodes.extend(nd);
            weights.extend(w);
        }
        if weights.is_empty() {
            return Err(Error::Resolution("no grid cell falls inside the shell".into()));
        }
        Ok(Self {
            dim: n,
            q_hom: q,
            nodes,
            weights,
            shell: h,
            resolution,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn q_hom(&self) -> f64 {
        self.q_hom
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn shell(&self) -> f64 {
        self.shell
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    #[inline]
    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `σ(Σ)`.
    pub fn total_weight(&self) -> f64 {
        pairwise_sum(&self.weights)
    }

    /// `∫_Σ Ω dσ` for values at the nodes.
    pub fn integrate_values(&self, values: &[f64]) -> f64 {
        let t: Vec<f64> = values.iter().zip(&self.weights).map(|(v, w)| v * w).collect();
        pairwise_sum(&t)
    }

    /// `∫_Σ Ω dσ` for a function of the sphere point.
    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let t: Vec<f64> = (0..self.len()).map(|i| f(self.node(i)) * self.weights[i]).collect();
        pairwise_sum(&t)
    }

    /// Largest `|ρ(node) − 1|`.
    pub fn max_node_error(&self, g: &GroupSpec) -> f64 {
        (0..self.len())
            .map(|i| (g.quasi_norm(self.node(i)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Text table, one node per line: `weight θ_1 … θ_n`.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# sphere dim={} q={} shell={} resolution={}",
            self.dim, self.q_hom, self.shell, self.resolution
        )?;
        for i in 0..self.len() {
            write!(out, "{:e}", self.weights[i])?;
            for c in self.node(i) {
                write!(out, " {c:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(input: R) -> Result<Self> {
        let reader = BufReader::new(input);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty sphere table".into()))??;
        let mut dim = 0;
        let mut q = 0.0;
        let mut shell = 0.0;
        let mut resolution = 0;
        for tok in header.trim_start_matches('#').split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                let bad = || Error::Config(format!("bad header field {tok}"));
                match k {
                    "dim" => dim = v.parse().map_err(|_| bad())?,
                    "q" => q = v.parse().map_err(|_| bad())?,
                    "shell" => shell = v.parse().map_err(|_| bad())?,
                    "resolution" => resolution = v.parse().map_err(|_| bad())?,
                    _ => {}
                }
            }
        }
        if dim == 0 {
            return Err(Error::Config("sphere header lacks dim".into()));
        }
        let mut nodes = Vec::new();
        let mut weights = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| Error::Config(format!("bad number {s}"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim + 1 {
                return Err(Error::DimensionMismatch {
                    expected: dim + 1,
                    got: vals.len(),
                });
            }
            weights.push(vals[0]);
            nodes.extend_from_slice(&vals[1..]);
        }
        Ok(Self {
            dim,
            q_hom: q,
            nodes,
            weights,
            shell,
            resolution,
        })
    }
}

/// `∫∫ f(r∘θ) r^{Q−1} dσ(θ) dr` over `r ∈ [r_min, r_max]`, log-Simpson in `r`.
pub fn integrate_polar(
    g: &GroupSpec,
    quad: &SphereQuadrature,
    f: impl Fn(&[f64]) -> f64 + Sync,
    r_min: f64,
    r_max: f64,
    per_octave: usize,
) -> Result<f64> {
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(Error::InvalidParameter(format!(
            "radial range [{r_min}, {r_max}] must satisfy 0 < r_min < r_max"
        )));
    }
    let (rs, ws) = log_simpson(r_min, r_max, per_octave);
    let q = g.q_hom();
    let dil = g.dilations();
    let n = g.dim();
    let shells: Vec<f64> = rs
        .par_iter()
        .zip(ws.par_iter())
        .map(|(&r, &wr)| {
            let mut x = vec![0.0; n];
            let terms: Vec<f64> = (0..quad.len())
                .map(|i| {
                    dil.dilate_into(r, quad.node(i), &mut x);
                    f(&x) * quad.weights()[i]
                })
                .collect();
            pairwise_sum(&terms) * r.powf(q - 1.0) * wr
        })
        .collect();
    let s = pairwise_sum(&shells);
    if !s.is_finite() {
        return Err(Error::NonFinite("polar integrand".into()));
    }
    Ok(s)
}

/// Separable integrand `u(r)·Ω(θ)`: `(∫ u r^{Q−1} dr)(∫ Ω dσ)`.
pub fn integrate_polar_separable(
    quad: &SphereQuadrature,
    u: impl Fn(f64) -> f64,
    omega: &[f64],
    r_min: f64,
    r_max: f64,
    per_octave: usize,
) -> Result<f64> {
    Ok(radial_integral(quad.q_hom(), u, r_min, r_max, per_octave)? * quad.integrate_values(omega))
}

/// `∫_{r_min}^{r_max} u(r) r^{Q−1} dr`.
pub fn radial_integral(
    q: f64,
    u: impl Fn(f64) -> f64,
    r_min: f64,
    r_max: f64,
    per_octave: usize,
) -> Result<f64> {
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(Error::InvalidParameter(format!(
            "radial range [{r_min}, {r_max}] must satisfy 0 < r_min < r_max"
        )));
    }
    let (rs, ws) = log_simpson(r_min, r_max, per_octave);
    let t: Vec<f64> = rs.iter().zip(&ws).map(|(r, w)| u(*r) * r.powf(q - 1.0) * w).collect();
    let s = pairwise_sum(&t);
    if !s.is_finite() {
        return Err(Error::NonFinite("radial integrand".into()));
    }
    Ok(s)
}

/// Volume of `B(0, r)` through the polar formula, with `|B(0, r)| = σ(Σ) r^Q / Q`
/// recovered by radial quadrature of the indicator.
pub fn ball_volume(g: &GroupSpec, quad: &SphereQuadrature, r: f64) -> Result<f64> {
    let r_min = r * 2f64.powi(-30);
    // nodes on the outer shell must not drop out through rounding of ρ
    let edge = r * (1.0 + 1e-12);
    let inner = integrate_polar(g, quad, |x| if g.quasi_norm(x) <= edge { 1.0 } else { 0.0 }, r_min, r, 16)?;
    // the excluded core contributes σ(Σ) r_min^Q / Q
    Ok(inner + quad.total_weight() * r_min.powf(g.q_hom()) / g.q_hom())
}

/// Monte-Carlo estimate of `|B(0,1)|` by uniform sampling of `[−1,1]^n`.
pub fn monte_carlo_ball_volume(g: &GroupSpec, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.dim();
    let mut x = vec![0.0; n];
    let mut hits = 0usize;
    for _ in 0..samples {
        for v in x.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        if g.quasi_norm(&x) <= 1.0 {
            hits += 1;
        }
    }
    2f64.powi(n as i32) * hits as f64 / samples as f64
}

/// `|B(0,1)|` for the max-type quasi-norm: the unit ball is the box `[−1,1]^n`.
pub fn unit_ball_volume(g: &GroupSpec) -> f64 {
    2f64.powi(g.dim() as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_sphere_total_weight() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 512, DEFAULT_SHELL).unwrap();
        assert!((quad.total_weight() - 8.0).abs() / 8.0 < 1e-2);
        assert!(quad.max_node_error(&g) < 1e-9);
        assert!(quad.weights().iter().all(|w| *w > 0.0));
    }

    #[test]
    fn low_resolution_rejected() {
        let g = GroupSpec::euclidean(2);
        assert!(SphereQuadrature::build(&g, 4, 0.02).is_err());
        assert!(SphereQuadrature::build(&g, 64, 0.5).is_err());
    }

    #[test]
    fn unit_square_area_by_polar_formula() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 512, DEFAULT_SHELL).unwrap();
        let v = ball_volume(&g, &quad, 1.0).unwrap();
        assert!((v - 4.0).abs() / 4.0 < 1e-2);
    }

    #[test]
    fn power_law_radial_integral() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 256, DEFAULT_SHELL).unwrap();
        let ones = vec![1.0; quad.len()];
        let (alpha, j) = (0.5f64, 1);
        let lo = 2f64.powi(j);
        let val = integrate_polar_separable(&quad, |r| r.powf(-2.0 - alpha), &ones, lo, 2.0 * lo, 64)
            .unwrap();
        let exact = quad.total_weight() * (lo.powf(-alpha) - (2.0 * lo).powf(-alpha)) / alpha;
        assert!((val - exact).abs() / exact < 1e-8);
    }

    #[test]
    fn odd_sphere_function_integrates_to_zero() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 128, DEFAULT_SHELL).unwrap();
        let s = quad.integrate(|t| t[0]);
        assert!(s.abs() < 1e-10);
        let v = integrate_polar_separable(&quad, |r| r, &(0..quad.len()).map(|i| quad.node(i)[0]).collect::<Vec<_>>(), 1.0, 2.0, 16).unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn polar_homogeneity() {
        let g = GroupSpec::heisenberg();
        let quad = SphereQuadrature::build(&g, 48, DEFAULT_SHELL).unwrap();
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1] + x[2].abs())).exp();
        let base = integrate_polar(&g, &quad, f, 1e-4, 40.0, 32).unwrap();
        let lam = 1.7f64;
        let scaled = integrate_polar(
            &g,
            &quad,
            |x| f(&g.dilations().dilate(lam, x)),
            1e-4,
            40.0,
            32,
        )
        .unwrap();
        assert!((scaled / base - lam.powf(-4.0)).abs() / lam.powf(-4.0) < 1e-3);
    }

    #[test]
    fn text_roundtrip() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 64, DEFAULT_SHELL).unwrap();
        let mut buf = Vec::new();
        quad.write_text(&mut buf).unwrap();
        let back = SphereQuadrature::read_text(buf.as_slice()).unwrap();
        assert_eq!(back.len(), quad.len());
        assert!((back.total_weight() - quad.total_weight()).abs() < 1e-12);
        assert_eq!(back.node(3), quad.node(3));
    }

    #[test]
    fn heisenberg_ball_volume_oracles() {
        let g = GroupSpec::heisenberg();
        let mc = monte_carlo_ball_volume(&g, 200_000, 7);
        assert!((mc - 8.0).abs() < 1e-12);
        assert_eq!(unit_ball_volume(&g), 8.0);
        let quad = SphereQuadrature::build(&g, 64, DEFAULT_SHELL).unwrap();
        let sigma = quad.total_weight();
        assert!((sigma - 4.0 * mc).abs() / (4.0 * mc) < 2e-2, "sigma = {sigma}");
    }
}
