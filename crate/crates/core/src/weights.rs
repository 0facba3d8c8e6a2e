//! Muckenhoupt weights, their characteristics and continuity moduli.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::GroupSpec;
use crate::kernels::TIE;
use crate::numerics::{log_simpson, pairwise_sum};
use crate::operators::{grid_diameter, rho_spacing};

/// Named weight families.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightPreset {
    One,
    /// `ρ(x)^β`, with `ρ` floored at half a grid step.
    Power(f64),
    /// `a` on `ρ < r0`, `b` outside.
    Step { r0: f64, a: f64, b: f64 },
}

impl WeightPreset {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unknown weight preset {s}"));
        if s == "one" {
            return Ok(Self::One);
        }
        let (name, rest) = s.split_once('(').ok_or_else(bad)?;
        let args: Vec<f64> = rest
            .strip_suffix(')')
            .ok_or_else(bad)?
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        match (name.trim(), args.as_slice()) {
            ("power", [b]) => Ok(Self::Power(*b)),
            ("step", [r0, a, b]) if *a > 0.0 && *b > 0.0 && *r0 > 0.0 => Ok(Self::Step { r0: *r0, a: *a, b: *b }),
            _ => Err(bad()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::One => "one".into(),
            Self::Power(b) => format!("power({b})"),
            Self::Step { r0, a, b } => format!("step({r0}, {a}, {b})"),
        }
    }

    pub fn field(&self, g: &GroupSpec, grid: &GridSpec) -> ScalarField {
        let floor = 0.5 * rho_spacing(g, grid);
        match *self {
            Self::One => ScalarField::from_fn(grid, |_| 1.0),
            Self::Power(beta) => ScalarField::from_fn(grid, |x| g.quasi_norm(x).max(floor).powf(beta)),
            Self::Step { r0, a, b } => ScalarField::from_fn(grid, |x| if g.quasi_norm(x) < r0 { a } else { b }),
        }
    }
}

/// `−Q < β < Q(p−1)` shrunk by `margin` of its length at each end.
pub fn admissible_power_range(q: f64, p: f64, margin: f64) -> (f64, f64) {
    let (lo, hi) = (-q, q * (p - 1.0));
    let w = hi - lo;
    (lo + margin * w / 2.0, hi - margin * w / 2.0)
}

/// Index ranges (inclusive) of the nodes that can lie in `B(c, r)`.
///
/// For `y = c·z` with `ρ(z) ≤ r`, each `z_j` ranges over `[−r^{a_j}, r^{a_j}]`;
/// the law terms are sampled at the corners and midpoints of that box,
/// which bounds the bilinear laws exactly.
pub fn ball_index_box(g: &GroupSpec, grid: &GridSpec, c: &[f64], r: f64) -> Option<(Vec<usize>, Vec<usize>)> {
    let n = grid.dim();
    let half: Vec<f64> = g.exponents().iter().map(|a| r.powf(*a)).collect();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    let mut z = vec![0.0; n];
    let mut y = vec![0.0; n];
    let combos = 3usize.pow(n as u32);
    for mut code in 0..combos {
        for a in 0..n {
            z[a] = half[a] * (code % 3) as f64 - half[a];
            code /= 3;
        }
        g.mul_into(c, &z, &mut y);
        for a in 0..n {
            lo[a] = lo[a].min(y[a]);
            hi[a] = hi[a].max(y[a]);
        }
    }
    let mut il = vec![0; n];
    let mut ih = vec![0; n];
    for a in 0..n {
        let h = grid.spacing()[a];
        let pad = if g.is_abelian() { 1e-9 * h } else { 0.05 * (hi[a] - lo[a]) + 1e-9 * h };
        let l = ((lo[a] - pad - grid.lower()[a]) / h).ceil().max(0.0);
        let u = ((hi[a] + pad - grid.lower()[a]) / h).floor().min((grid.counts()[a] - 1) as f64);
        if u < l {
            return None;
        }
        il[a] = l as usize;
        ih[a] = u as usize;
    }
    Some((il, ih))
}

/// Flat indices of the grid nodes `y` with `ρ(c^{-1}y) ≤ r`.
pub fn ball_nodes(g: &GroupSpec, grid: &GridSpec, c: &[f64], r: f64) -> Vec<usize> {
    let Some((lo, hi)) = ball_index_box(g, grid, c, r) else {
        return Vec::new();
    };
    let n = grid.dim();
    let mut cinv = vec![0.0; n];
    g.inv_into(c, &mut cinv);
    let mut idx = lo.clone();
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut out = Vec::new();
    let lim = r * (1.0 + TIE) + 1e-12;
    'outer: loop {
        for a in 0..n {
            y[a] = grid.coord(a, idx[a]);
        }
        g.mul_into(&cinv, &y, &mut z);
        if g.quasi_norm(&z) <= lim {
            out.push(grid.flat_index(&idx));
        }
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] <= hi[a] {
                continue 'outer;
            }
            idx[a] = lo[a];
        }
        break;
    }
    out
}

/// Centres on a sublattice and geometric radii.
#[derive(Clone, Debug, PartialEq)]
pub struct BallSampler {
    /// Every `stride`-th node per axis is a centre.
    pub stride: usize,
    pub radii_per_octave: usize,
    /// Smallest radius in grid steps `h_ρ`.
    pub min_radius_steps: f64,
}

impl Default for BallSampler {
    fn default() -> Self {
        Self {
            stride: 4,
            radii_per_octave: 2,
            min_radius_steps: 1.0,
        }
    }
}

impl BallSampler {
    /// A family roughly ten times denser.
    pub fn denser(&self) -> Self {
        Self {
            stride: (self.stride / 2).max(1),
            radii_per_octave: self.radii_per_octave * 3,
            min_radius_steps: self.min_radius_steps,
        }
    }

    pub fn centers(&self, grid: &GridSpec) -> Vec<usize> {
        let n = grid.dim();
        let s = self.stride.max(1);
        let per_axis: Vec<Vec<usize>> = grid
            .counts()
            .iter()
            .map(|c| {
                // centre the sublattice so both box edges are treated alike
                let off = ((c - 1) % s) / 2;
                (off..*c).step_by(s).collect()
            })
            .collect();
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        let total: usize = per_axis.iter().map(|v| v.len()).product();
        for mut t in 0..total {
            for a in (0..n).rev() {
                idx[a] = per_axis[a][t % per_axis[a].len()];
                t /= per_axis[a].len();
            }
            out.push(grid.flat_index(&idx));
        }
        out
    }

    pub fn radii(&self, g: &GroupSpec, grid: &GridSpec) -> Vec<f64> {
        let h = rho_spacing(g, grid);
        let top = grid_diameter(g, grid);
        let p = self.radii_per_octave.max(1) as f64;
        let mut r = Vec::new();
        let mut m = 0;
        loop {
            let v = self.min_radius_steps * h * 2f64.powf(m as f64 / p);
            if v > top {
                break;
            }
            r.push(v);
            m += 1;
        }
        r
    }
}

/// Quantitative weight characteristics from sampled balls.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightCharacteristics {
    pub p: f64,
    pub ap: f64,
    pub a_inf: f64,
    /// `[w^{1−p′}]_{A_∞}`.
    pub sigma_a_inf: f64,
    pub braces: f64,
    pub parens: f64,
    pub balls: usize,
}

impl WeightCharacteristics {
    fn from_parts(p: f64, ap: f64, a_inf: f64, sigma_a_inf: f64, balls: usize) -> Self {
        let pp = p / (p - 1.0);
        Self {
            p,
            ap,
            a_inf,
            sigma_a_inf,
            braces: ap.powf(1.0 / p) * a_inf.powf(1.0 / pp).max(sigma_a_inf.powf(1.0 / p)),
            parens: a_inf.max(sigma_a_inf),
            balls,
        }
    }
}

/// Per-ball averages of `w`, `σ = w^{1−p′}`, `log w`.
fn ball_averages(g: &GroupSpec, w: &ScalarField, p: f64, sampler: &BallSampler) -> Vec<[f64; 3]> {
    let grid = w.grid();
    let pp = p / (p - 1.0);
    let sig: Vec<f64> = w.values().iter().map(|v| v.powf(1.0 - pp)).collect();
    let lw: Vec<f64> = w.values().iter().map(|v| v.ln()).collect();
    let centers = sampler.centers(grid);
    let radii = sampler.radii(g, grid);
    let pairs: Vec<(usize, f64)> = centers.iter().flat_map(|c| radii.iter().map(move |r| (*c, *r))).collect();
    pairs
        .par_iter()
        .filter_map(|(c, r)| {
            let x = grid.point(*c);
            let nodes = ball_nodes(g, grid, &x, *r);
            if nodes.is_empty() {
                return None;
            }
            let k = nodes.len() as f64;
            let a = pairwise_sum(&nodes.iter().map(|i| w.values()[*i]).collect::<Vec<_>>()) / k;
            let b = pairwise_sum(&nodes.iter().map(|i| sig[*i]).collect::<Vec<_>>()) / k;
            let l = pairwise_sum(&nodes.iter().map(|i| lw[*i]).collect::<Vec<_>>()) / k;
            Some([a, b, l])
        })
        .collect()
}

/// `[w]_{A_p}`, `[w]_{A_∞}` (exp-log form), `[w^{1−p′}]_{A_∞}` and the derived
/// `{w}_{A_p}`, `(w)_{A_p}`, as sups over the sampled balls (grid-node averages).
pub fn ap_characteristics(g: &GroupSpec, w: &ScalarField, p: f64, sampler: &BallSampler) -> Result<WeightCharacteristics> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParameter(format!("p = {p} outside (1, ∞)")));
    }
    if let Some(i) = w.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::InvalidParameter(format!("weight not positive at node {i}")));
    }
    let pp = p / (p - 1.0);
    let avgs = ball_averages(g, w, p, sampler);
    if avgs.is_empty() {
        return Err(Error::Resolution("no sampled ball meets the grid".into()));
    }
    let (mut ap, mut ai, mut si) = (0.0f64, 0.0f64, 0.0f64);
    for [a, b, l] in &avgs {
        ap = ap.max(a * b.powf(p - 1.0));
        ai = ai.max(a * (-l).exp());
        // log σ = (1 − p′) log w
        si = si.max(b * (-(1.0 - pp) * l).exp());
    }
    Ok(WeightCharacteristics::from_parts(p, ap, ai, si, avgs.len()))
}

/// Sampled continuity modulus on a log grid of `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuityModulus {
    pub s: Vec<f64>,
    pub omega: Vec<f64>,
    pub dini: f64,
    pub increasing: bool,
    pub subadditive: bool,
}

impl ContinuityModulus {
    /// Sample `ω` on `[s_min, 1]`; the Dini integral `∫ ω(s) ds/s` adds the
    /// piece below `s_min` assuming `ω(s) ≤ ω(s_min)·s/s_min`.
    pub fn from_fn(omega: impl Fn(f64) -> f64, s_min: f64, per_octave: usize) -> Result<Self> {
        if !(s_min > 0.0 && s_min < 1.0) {
            return Err(Error::InvalidParameter(format!("s_min = {s_min} outside (0, 1)")));
        }
        let (s, wts) = log_simpson(s_min, 1.0, per_octave.max(2));
        let vals: Vec<f64> = s.iter().map(|v| omega(*v)).collect();
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("continuity modulus sample".into()));
        }
        let body = pairwise_sum(&vals.iter().zip(&s).zip(&wts).map(|((o, s), w)| o / s * w).collect::<Vec<_>>());
        let dini = body + vals[0];
        let increasing = vals.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-12));
        let interp = |t: f64| -> f64 {
            let i = s.partition_point(|v| *v < t).min(s.len() - 1);
            if i == 0 {
                return vals[0] * t / s[0];
            }
            let (a, b) = (s[i - 1], s[i]);
            vals[i - 1] + (vals[i] - vals[i - 1]) * (t - a) / (b - a)
        };
        let mut subadditive = true;
        for (i, a) in s.iter().enumerate().step_by(4) {
            for b in s[i..].iter().step_by(4) {
                if a + b <= 1.0 && interp(a + b) > interp(*a) + interp(*b) + 1e-12 {
                    subadditive = false;
                }
            }
        }
        Ok(Self {
            s,
            omega: vals,
            dini,
            increasing,
            subadditive,
        })
    }

    /// `ω_j(t) = ‖Ω‖ min{1, 2^{N(j)} t}`.
    pub fn regrouped(omega_norm: f64, n_j: i64, s_min: f64) -> Result<Self> {
        let scale = 2f64.powi(n_j as i32);
        Self::from_fn(|t| omega_norm * (scale * t).min(1.0), s_min, 16)
    }
}

/// Size constant and smoothness modulus of a kernel, sampled on dyadic
/// shells: `C_T = sup |K(x)| |B(0, ρ(x))|` and
/// `ω(t) = sup |K(y^{-1}x) − K(x)| |B(0, ρ(x))| / C_T` over `ρ(y) ≤ tρ(x)/(2A₀)`.
pub fn kernel_modulus(
    g: &GroupSpec,
    kernel: &(dyn Fn(&[f64]) -> f64 + Sync),
    radii: &[f64],
    directions: usize,
    seed: u64,
) -> Result<(f64, ContinuityModulus)> {
    use rand::{Rng, SeedableRng};
    let n = g.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dil = g.dilations();
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let r = dil.rho(&v).max(1e-12);
        let mut th = vec![0.0; n];
        dil.project_into(&v, r, &mut th);
        th
    };
    let ball = |r: f64| 2f64.powi(n as i32) * r.powf(g.q_hom());
    let mut xs = Vec::new();
    for r in radii {
        for _ in 0..directions {
            xs.push(dil.dilate(*r, &unit(&mut rng)));
        }
    }
    let c_t = xs
        .iter()
        .map(|x| kernel(x).abs() * ball(dil.rho(x)))
        .fold(0.0, f64::max);
    let ys: Vec<Vec<f64>> = (0..directions).map(|_| unit(&mut rng)).collect();
    let mut yinv = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut samples = Vec::new();
    for (m, t) in (0..12).map(|m| (m, 2f64.powi(-m))) {
        let _ = m;
        let mut best = 0.0f64;
        for x in &xs {
            let rx = dil.rho(x);
            for th in &ys {
                let y = dil.dilate(t * rx / (2.0 * g.a0()), th);
                g.inv_into(&y, &mut yinv);
                g.mul_into(&yinv, x, &mut z);
                best = best.max((kernel(&z) - kernel(x)).abs() * ball(rx));
            }
        }
        samples.push((t, if c_t > 0.0 { best / c_t } else { 0.0 }));
    }
    samples.reverse();
    let s_min = samples[0].0;
    let modulus = ContinuityModulus::from_fn(
        |t| {
            // running max keeps the sampled modulus nondecreasing
            samples.iter().filter(|(s, _)| *s <= t * (1.0 + 1e-12)).map(|(_, v)| *v).fold(0.0, f64::max)
        },
        s_min,
        4,
    )?;
    Ok((c_t, modulus))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_weights_have_unit_characteristics() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 33).unwrap();
        for c in [1.0, 7.5] {
            let w = ScalarField::from_fn(&grid, |_| c);
            let ch = ap_characteristics(&g, &w, 2.0, &BallSampler::default()).unwrap();
            for v in [ch.ap, ch.a_inf, ch.sigma_a_inf, ch.braces, ch.parens] {
                assert!((v - 1.0).abs() < 1e-9, "{v}");
            }
        }
    }

    #[test]
    fn derived_characteristics_follow_components() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 33).unwrap();
        let w = WeightPreset::Power(0.8).field(&g, &grid);
        let p = 3.0;
        let ch = ap_characteristics(&g, &w, p, &BallSampler::default()).unwrap();
        let pp = p / (p - 1.0);
        let braces = ch.ap.powf(1.0 / p) * ch.a_inf.powf(1.0 / pp).max(ch.sigma_a_inf.powf(1.0 / p));
        assert_eq!(ch.braces, braces);
        assert_eq!(ch.parens, ch.a_inf.max(ch.sigma_a_inf));
        assert!(ch.ap >= 1.0 - 1e-6 && ch.a_inf >= 1.0 - 1e-6 && ch.sigma_a_inf >= 1.0 - 1e-6);
        assert!(ch.braces >= ch.ap.powf(1.0 / p) * (1.0 - 1e-12));
    }

    #[test]
    fn nonpositive_weight_rejected() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 9).unwrap();
        let w = ScalarField::from_fn(&grid, |x| x[0]);
        assert!(ap_characteristics(&g, &w, 2.0, &BallSampler::default()).is_err());
    }

    #[test]
    fn preset_parsing() {
        assert_eq!(WeightPreset::parse("one").unwrap(), WeightPreset::One);
        assert_eq!(WeightPreset::parse("power(-0.5)").unwrap(), WeightPreset::Power(-0.5));
        assert_eq!(
            WeightPreset::parse("step(0.5, 1, 3)").unwrap(),
            WeightPreset::Step { r0: 0.5, a: 1.0, b: 3.0 }
        );
        assert!(WeightPreset::parse("power(x)").is_err());
        assert!(WeightPreset::parse("step(1, -1, 2)").is_err());
    }

    #[test]
    fn ball_nodes_match_brute_force_on_heisenberg() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 1.5, 15).unwrap();
        let c = vec![0.4, -0.3, 0.2];
        for r in [0.3, 0.7, 1.1] {
            let mut fast = ball_nodes(&g, &grid, &c, r);
            fast.sort();
            let cinv = g.inverse(&c).unwrap();
            let brute: Vec<usize> = (0..grid.len())
                .filter(|i| {
                    let z = g.multiply(&cinv, &grid.point(*i)).unwrap();
                    g.quasi_norm(&z) <= r * (1.0 + TIE) + 1e-12
                })
                .collect();
            assert_eq!(fast, brute);
        }
    }

    #[test]
    fn dini_of_power_modulus() {
        // ω(s) = s^{1/2}: ∫_0^1 s^{−1/2} ds = 2
        let m = ContinuityModulus::from_fn(|s| s.sqrt(), 1e-8, 16).unwrap();
        assert!((m.dini - 2.0).abs() < 1e-3, "{}", m.dini);
        assert!(m.increasing && m.subadditive);
        let r = ContinuityModulus::regrouped(1.0, 2, 1e-6).unwrap();
        // ∫ min(1, 4s)/s ds = 1 + ln 4
        assert!((r.dini - (1.0 + 4f64.ln())).abs() < 1e-3, "{}", r.dini);
    }

    #[test]
    fn admissible_range_margin() {
        let (lo, hi) = admissible_power_range(2.0, 2.0, 0.1);
        assert!((lo + 1.8).abs() < 1e-12 && (hi - 1.8).abs() < 1e-12);
    }
}
