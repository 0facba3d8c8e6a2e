//! Sphere functions with enforced cancellation, rough homogeneous kernels and
//! their dyadic truncations, and the Littlewood–Paley system built from a
//! radial bump.

use std::f64::consts::LN_2;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::group::{Dilations, GroupSpec};
use crate::numerics::{gauss_legendre, log_simpson, pairwise_sum, Bump, BumpShape};
use crate::polar::{radial_integral, SphereQuadrature, DEFAULT_PER_OCTAVE};

/// Largest tolerated Gram condition number in the cancellation projection.
pub const MAX_GRAM_CONDITION: f64 = 1e12;
/// Default width of surface-shell annuli, relative to `2^j`.
pub const DEFAULT_SHELL_WIDTH: f64 = 1.0 / 64.0;
/// Outer radius of the Littlewood–Paley bump.
pub const LP_OUTER: f64 = 1.0 / 100.0;
/// Relative slack on radial cuts: radii within rounding of a cut count as
/// inside it, so lattice points exactly on a sphere are classified the same
/// way on both sides of the identity.
pub const TIE: f64 = 1e-9;

/// A function on the group evaluated pointwise, with `ρ`-support in `[r_lo, r_hi]`.
pub trait Kernel: Sync {
    fn eval(&self, z: &[f64]) -> f64;
    /// `(r_lo, r_hi)`: the kernel vanishes unless `r_lo ≤ ρ(z) ≤ r_hi`.
    fn support(&self) -> (f64, f64);
}

impl<K: Kernel + ?Sized + Send> Kernel for Arc<K> {
    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
    fn support(&self) -> (f64, f64) {
        (**self).support()
    }
}

impl<K: Kernel + ?Sized> Kernel for &K {
    fn eval(&self, z: &[f64]) -> f64 {
        (**self).eval(z)
    }
    fn support(&self) -> (f64, f64) {
        (**self).support()
    }
}

/// Linear combination `Σ c_i K_i`.
pub struct SumKernel<K: Kernel> {
    pub parts: Vec<(f64, K)>,
}

impl<K: Kernel> Kernel for SumKernel<K> {
    fn eval(&self, z: &[f64]) -> f64 {
        self.parts.iter().map(|(c, k)| c * k.eval(z)).sum()
    }
    fn support(&self) -> (f64, f64) {
        self.parts.iter().fold((f64::INFINITY, 0.0), |(lo, hi), (_, k)| {
            let (a, b) = k.support();
            (lo.min(a), hi.max(b))
        })
    }
}

/// `x ↦ k(x^{-1})`.
pub struct Reflected<'a, K: Kernel> {
    pub kernel: K,
    pub group: &'a GroupSpec,
}

impl<K: Kernel> Kernel for Reflected<'_, K> {
    fn eval(&self, z: &[f64]) -> f64 {
        let mut w = [0.0; 8];
        let w = &mut w[..z.len()];
        self.group.inv_into(z, w);
        self.kernel.eval(w)
    }
    fn support(&self) -> (f64, f64) {
        // ρ(x^{-1}) ≤ c ρ(x) with c = 1 for the built-ins; widen by A0 otherwise.
        let (lo, hi) = self.kernel.support();
        let a = self.group.a0();
        (lo / a, hi * a)
    }
}

/// `Δ_α[t]k(x) = t^{−Q−α} k(t^{−1}∘x)`.
pub struct ScaleMapped<K: Kernel> {
    pub kernel: K,
    pub alpha: f64,
    pub t: f64,
    dil: Dilations,
}

impl<K: Kernel> ScaleMapped<K> {
    pub fn new(g: &GroupSpec, kernel: K, alpha: f64, t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!("scale t must be positive, got {t}")));
        }
        Ok(Self {
            kernel,
            alpha,
            t,
            dil: g.dilations().clone(),
        })
    }
}

impl<K: Kernel> Kernel for ScaleMapped<K> {
    fn eval(&self, z: &[f64]) -> f64 {
        let mut w = [0.0; 8];
        let w = &mut w[..z.len()];
        self.dil.dilate_into(1.0 / self.t, z, w);
        self.t.powf(-self.dil.q_hom() - self.alpha) * self.kernel.eval(w)
    }
    fn support(&self) -> (f64, f64) {
        let (lo, hi) = self.kernel.support();
        (lo * self.t, hi * self.t)
    }
}

/// `Δ_α[t]f` for a plain function.
pub fn scale_map<'a>(
    g: &'a GroupSpec,
    alpha: f64,
    t: f64,
    f: impl Fn(&[f64]) -> f64 + 'a,
) -> Result<impl Fn(&[f64]) -> f64 + 'a> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("scale t must be positive, got {t}")));
    }
    let dil = g.dilations().clone();
    let c = t.powf(-g.q_hom() - alpha);
    Ok(move |x: &[f64]| {
        let y = dil.dilate(1.0 / t, x);
        c * f(&y)
    })
}

// ---------------------------------------------------------------------------
// Sphere functions

/// Named Ω presets. All are functions of a point on the unit quasi-sphere.
#[derive(Clone, Debug, PartialEq)]
pub enum OmegaPreset {
    Zero,
    Constant(f64),
    /// `sign(θ_1)`.
    ConstantBalanced,
    /// `θ_1`.
    FirstCoordinate,
    /// `cos(k·atan2(θ_2, θ_1))`.
    ZonalHarmonic(u32),
    /// Piecewise constant on 8 bins per axis, i.i.d. values `±u^{−1/(2q)}`
    /// with `u` uniform on `(0, 1]`: in `L^r(Σ)` exactly for `r < 2q`.
    RoughRandom { seed: u64, q: f64 },
    /// `θ^β`.
    Monomial(Vec<u32>),
}

impl OmegaPreset {
    /// Parse names such as `first-coordinate`, `zonal-harmonic(3)`, `rough-random(7, 4)`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            _ => (s, None),
        };
        let nums: Vec<&str> = args
            .map(|a| a.split(',').map(str::trim).filter(|t| !t.is_empty()).collect())
            .unwrap_or_default();
        let bad = || Error::Config(format!("bad Omega preset {s}"));
        match (name.trim(), nums.len()) {
            ("zero", 0) => Ok(Self::Zero),
            ("constant", 0) => Ok(Self::Constant(1.0)),
            ("constant", 1) => Ok(Self::Constant(nums[0].parse().map_err(|_| bad())?)),
            ("constant-balanced", 0) => Ok(Self::ConstantBalanced),
            ("first-coordinate", 0) => Ok(Self::FirstCoordinate),
            ("zonal-harmonic", 1) => Ok(Self::ZonalHarmonic(nums[0].parse().map_err(|_| bad())?)),
            ("rough-random", 2) => Ok(Self::RoughRandom {
                seed: nums[0].parse().map_err(|_| bad())?,
                q: nums[1].parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Constant(c) => format!("constant({c})"),
            Self::ConstantBalanced => "constant-balanced".into(),
            Self::FirstCoordinate => "first-coordinate".into(),
            Self::ZonalHarmonic(k) => format!("zonal-harmonic({k})"),
            Self::RoughRandom { seed, q } => format!("rough-random({seed}, {q})"),
            Self::Monomial(b) => format!("monomial{b:?}"),
        }
    }

    #[inline]
    pub fn eval(&self, th: &[f64]) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant(c) => *c,
            Self::ConstantBalanced => {
                if th[0] > 0.0 {
                    1.0
                } else if th[0] < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Self::FirstCoordinate => th[0],
            Self::ZonalHarmonic(k) => {
                let y = if th.len() > 1 { th[1] } else { 0.0 };
                (*k as f64 * y.atan2(th[0])).cos()
            }
            Self::RoughRandom { seed, q } => rough_value(*seed, *q, th),
            Self::Monomial(b) => monomial(b, th),
        }
    }
}

#[inline]
fn monomial(beta: &[u32], th: &[f64]) -> f64 {
    beta.iter()
        .zip(th)
        .fold(1.0, |acc, (&e, &t)| if e == 0 { acc } else { acc * t.powi(e as i32) })
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn rough_value(seed: u64, q: f64, th: &[f64]) -> f64 {
    const BINS: f64 = 8.0;
    let mut h = splitmix(seed);
    for &t in th {
        let b = (((t + 1.0) * 0.5 * BINS).floor()).clamp(0.0, BINS - 1.0) as u64;
        h = splitmix(h ^ b);
    }
    let u = ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let sign = if splitmix(h) & 1 == 0 { 1.0 } else { -1.0 };
    sign * u.powf(-1.0 / (2.0 * q))
}

/// Ω on the unit quasi-sphere: a preset minus a polynomial correction,
/// times a scale, with cached values at the quadrature nodes.
#[derive(Clone, Debug)]
pub struct SphereFunction {
    preset: OmegaPreset,
    correction: Vec<(Vec<u32>, f64)>,
    scale: f64,
    values: Vec<f64>,
    cancellation_order: i32,
    l1: f64,
}

impl SphereFunction {
    pub fn from_preset(quad: &SphereQuadrature, preset: OmegaPreset) -> Self {
        let mut s = Self {
            preset,
            correction: Vec::new(),
            scale: 1.0,
            values: Vec::new(),
            cancellation_order: -1,
            l1: 0.0,
        };
        s.refresh(quad);
        s
    }

    /// Preset, projected to cancellation order `m` (skipped for `m < 0`) and
    /// scaled to unit `L¹(Σ)` norm when `unit_l1` is set.
    pub fn build(
        g: &GroupSpec,
        quad: &SphereQuadrature,
        preset: OmegaPreset,
        m: i32,
        unit_l1: bool,
    ) -> Result<Self> {
        let mut s = Self::from_preset(quad, preset);
        if m >= 0 {
            s = project_cancellation(g, quad, &s, m)?;
        }
        if unit_l1 && s.l1 > 0.0 {
            s = s.scaled(quad, 1.0 / s.l1);
        }
        Ok(s)
    }

    fn refresh(&mut self, quad: &SphereQuadrature) {
        self.values = (0..quad.len()).map(|i| self.eval(quad.node(i))).collect();
        self.l1 = quad.integrate_values(&self.values.iter().map(|v| v.abs()).collect::<Vec<_>>());
    }

    #[inline]
    pub fn eval(&self, th: &[f64]) -> f64 {
        let mut v = self.preset.eval(th);
        for (b, c) in &self.correction {
            v -= c * monomial(b, th);
        }
        self.scale * v
    }

    pub fn preset(&self) -> &OmegaPreset {
        &self.preset
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cancellation_order(&self) -> i32 {
        self.cancellation_order
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    pub fn is_zero(&self) -> bool {
        self.scale == 0.0 || self.values.iter().all(|v| *v == 0.0)
    }

    /// `(∫_Σ |Ω|^q dσ)^{1/q}`; `q = ∞` gives the max over nodes.
    pub fn lq_norm(&self, quad: &SphereQuadrature, q: f64) -> f64 {
        if q.is_infinite() {
            return self.values.iter().fold(0.0, |m, v| m.max(v.abs()));
        }
        let t: Vec<f64> = self.values.iter().map(|v| v.abs().powf(q)).collect();
        quad.integrate_values(&t).powf(1.0 / q)
    }

    pub fn scaled(&self, quad: &SphereQuadrature, s: f64) -> Self {
        let mut out = self.clone();
        out.scale *= s;
        out.refresh(quad);
        out
    }

    /// `∫_Σ Ω θ^β dσ`.
    pub fn moment(&self, quad: &SphereQuadrature, beta: &[u32]) -> f64 {
        let t: Vec<f64> = (0..quad.len())
            .map(|i| self.values[i] * monomial(beta, quad.node(i)) * quad.weights()[i])
            .collect();
        pairwise_sum(&t)
    }

    /// Largest `|∫ Ω P dσ|` over monomials of homogeneous degree `≤ m`.
    pub fn max_moment(&self, g: &GroupSpec, quad: &SphereQuadrature, m: i32) -> f64 {
        if m < 0 {
            return 0.0;
        }
        g.monomials_up_to(m as f64)
            .iter()
            .map(|b| self.moment(quad, b).abs())
            .fold(0.0, f64::max)
    }
}

/// Subtract the σ-orthogonal projection onto monomials of homogeneous degree `≤ m`.
pub fn project_cancellation(
    g: &GroupSpec,
    quad: &SphereQuadrature,
    omega: &SphereFunction,
    m: i32,
) -> Result<SphereFunction> {
    if m < 0 {
        return Err(Error::InvalidParameter(format!("cancellation order {m} < 0")));
    }
    let basis = g.monomials_up_to(m as f64);
    let k = basis.len();
    let nodes = quad.len();
    let mono: Vec<Vec<f64>> = basis
        .iter()
        .map(|b| (0..nodes).map(|i| monomial(b, quad.node(i))).collect())
        .collect();
    let w = quad.weights();
    let inner = |a: &[f64], b: &[f64]| -> f64 {
        let t: Vec<f64> = (0..nodes).map(|i| a[i] * b[i] * w[i]).collect();
        pairwise_sum(&t)
    };
    let mut gram = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in a..k {
            let v = inner(&mono[a], &mono[b]);
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let sv = gram.clone().svd(false, false).singular_values;
    let (smax, smin) = sv.iter().fold((0.0f64, f64::INFINITY), |(hi, lo), s| (hi.max(*s), lo.min(*s)));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= MAX_GRAM_CONDITION) {
        return Err(Error::SingularGram { condition });
    }
    let chol = gram
        .cholesky()
        .ok_or(Error::SingularGram { condition })?;
    let mut out = omega.clone();
    // Two passes: the second removes the rounding residue of the first.
    for _ in 0..2 {
        let rhs = DVector::from_iterator(k, mono.iter().map(|p| inner(&out.values, p)));
        let c = chol.solve(&rhs);
        for (i, b) in basis.iter().enumerate() {
            let coeff = c[i] / out.scale;
            match out.correction.iter_mut().find(|(bb, _)| bb == b) {
                Some(e) => e.1 += coeff,
                None => out.correction.push((b.clone(), coeff)),
            }
        }
        out.refresh(quad);
    }
    if out.l1 <= 1e-12 * omega.l1.max(f64::MIN_POSITIVE) {
        out.scale = 0.0;
        out.refresh(quad);
    }
    out.cancellation_order = m;
    Ok(out)
}

// ---------------------------------------------------------------------------
// One-dimensional scale cutoff

/// The cutoff `φ_time` on `[1/2, 2]` with `Σ_j 2^{−j} t φ_time(2^{−j} t) = 1/ln 2`,
/// built as `ψ(u) / (ln 2 · u · Σ_i ψ(2^i u))` from a smooth bump `ψ`.
#[derive(Clone, Debug)]
pub struct TimeCutoff {
    psi: Bump,
    // cumulative integrals on a uniform table over [1/2, 2]
    table_h: f64,
    cum: Vec<f64>,
    cum_t: Vec<f64>,
}

impl TimeCutoff {
    const TABLE: usize = 4096;

    pub fn new() -> Self {
        let psi = Bump::new(0.5, 2.0, BumpShape::Smooth);
        let mut tc = Self {
            psi,
            table_h: 1.5 / Self::TABLE as f64,
            cum: vec![0.0; Self::TABLE + 1],
            cum_t: vec![0.0; Self::TABLE + 1],
        };
        let (gx, gw) = gauss_legendre(8, 0.0, 1.0);
        for i in 0..Self::TABLE {
            let a = 0.5 + i as f64 * tc.table_h;
            let (mut s, mut st) = (0.0, 0.0);
            for (x, w) in gx.iter().zip(&gw) {
                let u = a + x * tc.table_h;
                let p = tc.phi(u);
                s += w * p;
                st += w * u * p;
            }
            tc.cum[i + 1] = tc.cum[i] + s * tc.table_h;
            tc.cum_t[i + 1] = tc.cum_t[i] + st * tc.table_h;
        }
        tc
    }

    /// `φ_time(u)`.
    #[inline]
    pub fn phi(&self, u: f64) -> f64 {
        let p = self.psi.eval(u);
        if p == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in -2..=2 {
            s += self.psi.eval(u * 2f64.powi(i));
        }
        p / (LN_2 * u * s)
    }

    /// Largest deviation of `Σ_j 2^{−j} t φ(2^{−j} t)` from `1/ln 2` over `samples` log-spaced `t`.
    pub fn partition_error(&self, samples: usize) -> f64 {
        (0..samples)
            .map(|i| {
                let t = 2f64.powf(-3.0 + 6.0 * i as f64 / samples as f64);
                let s: f64 = (-8..=8)
                    .map(|j| {
                        let u = 2f64.powi(-j) * t;
                        u * self.phi(u)
                    })
                    .sum();
                (s - 1.0 / LN_2).abs()
            })
            .fold(0.0, f64::max)
    }

    fn cumulative(&self, table: &[f64], v: f64, with_t: bool) -> f64 {
        if v <= 0.5 {
            return 0.0;
        }
        if v >= 2.0 {
            return table[Self::TABLE];
        }
        // cubic Hermite with exact derivatives
        let pos = (v - 0.5) / self.table_h;
        let i = (pos.floor() as usize).min(Self::TABLE - 1);
        let s = pos - i as f64;
        let (u0, u1) = (0.5 + i as f64 * self.table_h, 0.5 + (i + 1) as f64 * self.table_h);
        let d = |u: f64| if with_t { u * self.phi(u) } else { self.phi(u) };
        let (m0, m1) = (d(u0) * self.table_h, d(u1) * self.table_h);
        let (s2, s3) = (s * s, s * s * s);
        (2.0 * s3 - 3.0 * s2 + 1.0) * table[i]
            + (s3 - 2.0 * s2 + s) * m0
            + (-2.0 * s3 + 3.0 * s2) * table[i + 1]
            + (s3 - s2) * m1
    }

    /// `∫_0^v φ_time(u) du`.
    pub fn integral_to(&self, v: f64) -> f64 {
        self.cumulative(&self.cum, v, false)
    }

    /// `W(v) = ∫_{v/2}^{v} φ_time(u) du`; the smooth dyadic weight is `W(2^{−j} ρ)`.
    #[inline]
    pub fn window(&self, v: f64) -> f64 {
        if v <= 0.5 || v >= 4.0 {
            return 0.0;
        }
        self.integral_to(v) - self.integral_to(0.5 * v)
    }

    /// `∫_0^u t φ_time(t) dt`.
    pub fn tail_weight(&self, u: f64) -> f64 {
        self.cumulative(&self.cum_t, u, true)
    }

    /// `c = ∫ t φ_time(t) dt`.
    pub fn tail_constant(&self) -> f64 {
        self.cum_t[Self::TABLE]
    }
}

impl Default for TimeCutoff {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Rough kernels and their dyadic pieces

/// Which dyadic piece an [`AnnulusKernel`] represents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// Smooth truncation `A_j^α K_α^0`.
    SmoothAj,
    /// Sharp truncation `B_j^α Ω`, support `(2^j, 2^{j+1}]`.
    SharpBj,
    /// `B_{j,t}^α Ω`, support `(t 2^j, 2^{j+1}]`.
    ParametrizedBjt(f64),
    /// Thin-annulus stand-in for `2^{−j(Q−1+α)} t^{−Q−α} Ω dσ_{t 2^j}`.
    SurfaceShell(f64),
}

impl KernelKind {
    pub fn label(&self) -> &'static str {
        match self {
            Self::SmoothAj => "smooth_Aj",
            Self::SharpBj => "sharp_Bj",
            Self::ParametrizedBjt(_) => "parametrized_Bjt",
            Self::SurfaceShell(_) => "surface_shell",
        }
    }

    pub fn parse(s: &str, t: f64) -> Result<Self> {
        match s {
            "smooth_Aj" => Ok(Self::SmoothAj),
            "sharp_Bj" => Ok(Self::SharpBj),
            "parametrized_Bjt" => Ok(Self::ParametrizedBjt(t)),
            "surface_shell" => Ok(Self::SurfaceShell(t)),
            _ => Err(Error::Config(format!("unknown kernel kind {s}"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Profile {
    /// `r^{−Q−α}` on `(lo, hi]`.
    Power,
    /// `r^{−Q−α} W(2^{−j} r)`.
    SmoothDyadic { j: i32 },
    /// constant density on `(lo, hi]`.
    Flat { density: f64 },
    /// `r^{−Q−α} ∫ tφ(t) χ_{r ≥ 2^{k+1} t} dt`.
    SmoothTail { k: i32 },
}

/// `Ω(θ) · g(ρ)` with `g` a radial profile supported in `[r_lo, r_hi]`.
#[derive(Clone, Debug)]
pub struct RadialKernel {
    omega: Arc<SphereFunction>,
    alpha: f64,
    q: f64,
    dil: Dilations,
    profile: Profile,
    r_lo: f64,
    r_hi: f64,
    cutoff: Option<Arc<TimeCutoff>>,
}

impl RadialKernel {
    /// `K_α χ_{ε < ρ ≤ R}`.
    pub fn truncated(g: &GroupSpec, omega: Arc<SphereFunction>, alpha: f64, eps: f64, outer: f64) -> Self {
        Self {
            omega,
            alpha,
            q: g.q_hom(),
            dil: g.dilations().clone(),
            profile: Profile::Power,
            r_lo: eps,
            r_hi: outer,
            cutoff: None,
        }
    }

    /// `K_{α,k}` cut off at `outer`.
    pub fn smooth_tail(
        g: &GroupSpec,
        omega: Arc<SphereFunction>,
        alpha: f64,
        k: i32,
        outer: f64,
        cutoff: Arc<TimeCutoff>,
    ) -> Self {
        Self {
            omega,
            alpha,
            q: g.q_hom(),
            dil: g.dilations().clone(),
            profile: Profile::SmoothTail { k },
            r_lo: 2f64.powi(k),
            r_hi: outer,
            cutoff: Some(cutoff),
        }
    }

    pub fn omega(&self) -> &SphereFunction {
        &self.omega
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Radial profile `g(r)`, zero outside `(r_lo, r_hi]`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        if !(r > self.r_lo * (1.0 + TIE) && r <= self.r_hi * (1.0 + TIE)) {
            return 0.0;
        }
        let power = || r.powf(-self.q - self.alpha);
        match &self.profile {
            Profile::Power => power(),
            Profile::SmoothDyadic { j } => {
                let c = self.cutoff.as_ref().expect("smooth profile has a cutoff");
                power() * c.window(r * 2f64.powi(-j))
            }
            Profile::Flat { density } => *density,
            Profile::SmoothTail { k } => {
                let c = self.cutoff.as_ref().expect("tail profile has a cutoff");
                power() * c.tail_weight(r * 2f64.powi(-k - 1))
            }
        }
    }

    /// `∫|K| = ‖Ω‖₁ ∫ |g(r)| r^{Q−1} dr`.
    pub fn total_variation(&self) -> f64 {
        if self.omega.is_zero() || self.r_hi <= self.r_lo {
            return 0.0;
        }
        // shrink by a few ulps so rounded end nodes stay inside the half-open support
        let lo = self.r_lo.max(1e-300) * (1.0 + TIE) * (1.0 + 1e-14);
        let hi = self.r_hi * (1.0 + TIE) * (1.0 - 1e-14);
        let rad = radial_integral(self.q, |r| self.radial(r).abs(), lo, hi, DEFAULT_PER_OCTAVE)
            .unwrap_or(f64::NAN);
        self.omega.l1_norm() * rad
    }
}

impl Kernel for RadialKernel {
    #[inline]
    fn eval(&self, z: &[f64]) -> f64 {
        let r = self.dil.rho(z);
        let g = self.radial(r);
        if g == 0.0 {
            return 0.0;
        }
        let mut th = [0.0; 8];
        let th = &mut th[..z.len()];
        self.dil.project_into(z, r, th);
        self.omega.eval(th) * g
    }

    fn support(&self) -> (f64, f64) {
        (self.r_lo, self.r_hi)
    }
}

/// One dyadic kernel piece with its support annulus and total variation.
#[derive(Clone, Debug)]
pub struct AnnulusKernel {
    pub kind: KernelKind,
    pub j: i32,
    pub alpha: f64,
    inner: RadialKernel,
    total_variation: f64,
}

impl AnnulusKernel {
    /// Build a dyadic piece. `Ω` must carry cancellation of order `≥ [α]`
    /// unless it is identically zero.
    pub fn new(
        g: &GroupSpec,
        omega: Arc<SphereFunction>,
        alpha: f64,
        j: i32,
        kind: KernelKind,
        cutoff: Option<Arc<TimeCutoff>>,
    ) -> Result<Self> {
        Self::with_shell_width(g, omega, alpha, j, kind, cutoff, DEFAULT_SHELL_WIDTH)
    }

    pub fn with_shell_width(
        g: &GroupSpec,
        omega: Arc<SphereFunction>,
        alpha: f64,
        j: i32,
        kind: KernelKind,
        cutoff: Option<Arc<TimeCutoff>>,
        shell_width: f64,
    ) -> Result<Self> {
        if !(alpha >= 0.0 && alpha < g.q_hom()) {
            return Err(Error::InvalidParameter(format!("alpha {alpha} outside [0, Q)")));
        }
        let required = alpha.floor() as i32;
        if !omega.is_zero() && omega.cancellation_order() < required {
            return Err(Error::Cancellation {
                required,
                available: omega.cancellation_order(),
            });
        }
        let s = 2f64.powi(j);
        let q = g.q_hom();
        let (profile, lo, hi, cutoff) = match kind {
            KernelKind::SharpBj => (Profile::Power, s, 2.0 * s, None),
            KernelKind::ParametrizedBjt(t) => {
                check_t(t)?;
                (Profile::Power, t * s, 2.0 * s, None)
            }
            KernelKind::SmoothAj => (
                Profile::SmoothDyadic { j },
                0.5 * s,
                4.0 * s,
                Some(cutoff.unwrap_or_else(|| Arc::new(TimeCutoff::new()))),
            ),
            KernelKind::SurfaceShell(t) => {
                check_t(t)?;
                if !(shell_width > 0.0 && shell_width <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "shell width {shell_width} outside (0, 1]"
                    )));
                }
                let (lo, hi) = (t * s, t * s + shell_width * s);
                let vol = (hi.powf(q) - lo.powf(q)) / q;
                let density = s.powf(-alpha) * t.powf(-1.0 - alpha) / vol;
                (Profile::Flat { density }, lo, hi, None)
            }
        };
        let inner = RadialKernel {
            omega,
            alpha,
            q,
            dil: g.dilations().clone(),
            profile,
            r_lo: lo,
            r_hi: hi,
            cutoff,
        };
        let total_variation = inner.total_variation();
        Ok(Self {
            kind,
            j,
            alpha,
            inner,
            total_variation,
        })
    }

    pub fn total_variation(&self) -> f64 {
        self.total_variation
    }

    pub fn radial(&self, r: f64) -> f64 {
        self.inner.radial(r)
    }

    pub fn omega(&self) -> &SphereFunction {
        self.inner.omega()
    }

    /// Closed-form `‖B_j^α Ω‖₁ = ‖Ω‖₁ 2^{−αj}(1 − 2^{−α})/α` (`ln 2` at `α = 0`).
    pub fn sharp_norm_closed_form(omega_l1: f64, alpha: f64, j: i32) -> f64 {
        let radial = if alpha == 0.0 {
            LN_2
        } else {
            (1.0 - 2f64.powf(-alpha)) / alpha
        };
        omega_l1 * 2f64.powf(-alpha * j as f64) * radial
    }
}

impl Kernel for AnnulusKernel {
    #[inline]
    fn eval(&self, z: &[f64]) -> f64 {
        self.inner.eval(z)
    }
    fn support(&self) -> (f64, f64) {
        self.inner.support()
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(1.0..2.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [1, 2)")));
    }
    Ok(())
}

/// Partial sum `Σ_{|j| ≤ J}` of a kernel family, for reconstruction checks.
pub fn dyadic_sum(pieces: &[AnnulusKernel], x: &[f64]) -> f64 {
    pieces.iter().map(|k| k.eval(x)).sum()
}

// ---------------------------------------------------------------------------
// Littlewood–Paley system

/// Radial bump `φ = c·b(ρ)` on `{outer/2 ≤ ρ ≤ outer}` with unit mass.
#[derive(Clone, Debug)]
pub struct LPCutoff {
    bump: Bump,
    c: f64,
    outer: f64,
    q: f64,
    dil: Dilations,
    group: GroupSpec,
    symmetrize: bool,
}

impl LPCutoff {
    /// `smoothness = 0` picks the infinitely smooth profile, `k ≥ 1` a `C^{k−1}` one.
    pub fn new(g: &GroupSpec, quad: &SphereQuadrature, smoothness: u32) -> Result<Self> {
        Self::with_outer(g, quad, smoothness, LP_OUTER)
    }

    /// As [`LPCutoff::new`] with a different outer radius.
    pub fn with_outer(g: &GroupSpec, quad: &SphereQuadrature, smoothness: u32, outer: f64) -> Result<Self> {
        if !(outer > 0.0) {
            return Err(Error::InvalidParameter(format!("outer radius {outer} must be positive")));
        }
        let bump = Bump::new(0.5 * outer, outer, BumpShape::from_smoothness(smoothness));
        let rad = radial_integral(g.q_hom(), |r| bump.eval(r), 0.5 * outer, outer, 256)?;
        let c = 1.0 / (rad * quad.total_weight());
        Ok(Self {
            bump,
            c,
            outer,
            q: g.q_hom(),
            dil: g.dilations().clone(),
            group: g.clone(),
            symmetrize: !g.quasi_norm_is_symmetric(256, 11),
        })
    }

    pub fn outer(&self) -> f64 {
        self.outer
    }

    /// `Δ[t]φ(x) = t^{−Q} φ(t^{−1}∘x)`.
    #[inline]
    pub fn dilated_eval(&self, t: f64, x: &[f64]) -> f64 {
        let r = self.dil.rho(x) / t;
        let mut v = self.bump.eval(r);
        if self.symmetrize {
            let mut w = [0.0; 8];
            let w = &mut w[..x.len()];
            self.group.inv_into(x, w);
            v = 0.5 * (v + self.bump.eval(self.dil.rho(w) / t));
        }
        self.c * t.powf(-self.q) * v
    }

    pub fn phi(&self) -> LPKernel<'_> {
        self.dilated(1.0)
    }

    pub fn dilated(&self, t: f64) -> LPKernel<'_> {
        LPKernel {
            lp: self,
            piece: LPPiece::Dilated(t),
        }
    }

    /// `Ψ_j = Δ[2^{j−1}]φ − Δ[2^j]φ`.
    pub fn psi(&self, j: i32) -> LPKernel<'_> {
        LPKernel {
            lp: self,
            piece: LPPiece::Psi(j),
        }
    }

    /// The kernel of `S_j`: `Δ[2^{j−1}]φ`.
    pub fn s_kernel(&self, j: i32) -> LPKernel<'_> {
        self.dilated(2f64.powi(j - 1))
    }

    /// `∫ Δ[t]φ` by polar quadrature of the radial profile.
    pub fn mass(&self, quad: &SphereQuadrature, t: f64) -> Result<f64> {
        let rad = radial_integral(
            self.q,
            |r| self.c * t.powf(-self.q) * self.bump.eval(r / t),
            0.5 * self.outer * t,
            self.outer * t,
            256,
        )?;
        Ok(rad * quad.total_weight())
    }
}

#[derive(Clone, Copy, Debug)]
enum LPPiece {
    Dilated(f64),
    Psi(i32),
}

/// `Δ[t]φ` or `Ψ_j` as a [`Kernel`].
#[derive(Clone, Copy, Debug)]
pub struct LPKernel<'a> {
    lp: &'a LPCutoff,
    piece: LPPiece,
}

impl Kernel for LPKernel<'_> {
    #[inline]
    fn eval(&self, z: &[f64]) -> f64 {
        match self.piece {
            LPPiece::Dilated(t) => self.lp.dilated_eval(t, z),
            LPPiece::Psi(j) => {
                let s = 2f64.powi(j);
                self.lp.dilated_eval(0.5 * s, z) - self.lp.dilated_eval(s, z)
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        let a = if self.lp.symmetrize { self.lp.group.a0() } else { 1.0 };
        let (lo, hi) = match self.piece {
            LPPiece::Dilated(t) => (0.5 * self.lp.outer * t, self.lp.outer * t),
            LPPiece::Psi(j) => {
                let s = 2f64.powi(j);
                (0.25 * self.lp.outer * s, self.lp.outer * s)
            }
        };
        (lo / a, hi * a)
    }
}

/// Log-spaced composite Simpson over a radial range, exposed for callers
/// that tabulate profiles.
pub fn radial_nodes(lo: f64, hi: f64, per_octave: usize) -> (Vec<f64>, Vec<f64>) {
    log_simpson(lo, hi, per_octave)
}
