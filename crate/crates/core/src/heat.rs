//! Sub-Laplacian on a grid, explicit heat flow, heat kernels, Riesz potentials
//! by subordination and fractional powers by the Balakrishnan formula.

use rayon::prelude::*;
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::{GroupSpec, Side};
use crate::numerics::{gauss_legendre, log_simpson, ols, pairwise_sum};
use crate::poly::Polynomial;

/// Which left-invariant fields enter `Δ_H = Σ X_j²`.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldSubset {
    /// Every coordinate field.
    All,
    /// Fields of the smallest dilation exponent.
    FirstStratum,
    Indices(Vec<usize>),
}

impl FieldSubset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "first-stratum" => Ok(Self::FirstStratum),
            _ => Err(Error::Config(format!("unknown field subset {s}"))),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::All => "all".into(),
            Self::FirstStratum => "first-stratum".into(),
            Self::Indices(v) => format!("{v:?}"),
        }
    }

    fn resolve(&self, g: &GroupSpec) -> Result<Vec<usize>> {
        let n = g.dim();
        let v: Vec<usize> = match self {
            Self::All => (0..n).collect(),
            Self::FirstStratum => {
                let a = g.exponents().iter().cloned().fold(f64::INFINITY, f64::min);
                (0..n).filter(|&j| g.exponents()[j] == a).collect()
            }
            Self::Indices(v) => v.clone(),
        };
        if v.is_empty() || v.iter().any(|&j| j >= n) {
            return Err(Error::InvalidParameter(format!("bad field subset {v:?}")));
        }
        Ok(v)
    }
}

/// Finite-difference accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilOrder {
    Second,
    Fourth,
}

impl StencilOrder {
    fn width(self) -> usize {
        match self {
            Self::Second => 1,
            Self::Fourth => 2,
        }
    }

    /// First-derivative weights at offsets `−w..=w`, unit spacing.
    fn d1(self) -> &'static [f64] {
        match self {
            Self::Second => &[-0.5, 0.0, 0.5],
            Self::Fourth => &[1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0],
        }
    }

    fn d2(self) -> &'static [f64] {
        match self {
            Self::Second => &[1.0, -2.0, 1.0],
            Self::Fourth => &[-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0],
        }
    }
}

#[derive(Clone, Debug)]
enum Coef {
    Const(f64),
    Field(Vec<f64>),
}

#[derive(Clone, Debug)]
struct Term {
    coef: Coef,
    /// (offset in the padded layout, weight)
    stencil: Vec<(isize, f64)>,
}

/// `Δ_H = Σ_{j∈S} X_j² = Σ A_{ik} ∂_i∂_k + Σ b_k ∂_k` discretized with centred
/// differences and zero Dirichlet data outside the grid.
#[derive(Clone, Debug)]
pub struct SubLaplacianOp {
    grid: GridSpec,
    q_hom: f64,
    fields: Vec<usize>,
    homogeneous: bool,
    order: StencilOrder,
    pad: usize,
    pcounts: Vec<usize>,
    pstrides: Vec<usize>,
    terms: Vec<Term>,
    gershgorin: f64,
}

impl SubLaplacianOp {
    pub fn new(g: &GroupSpec, grid: &GridSpec, subset: &FieldSubset, order: StencilOrder) -> Result<Self> {
        let n = g.dim();
        if grid.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: grid.dim() });
        }
        let fields = subset.resolve(g)?;
        let vf = g.vector_field_coeffs(Side::Left);
        let mut a = vec![vec![Polynomial::zero(n); n]; n];
        let mut b = vec![Polynomial::zero(n); n];
        for &j in &fields {
            let c = vf.field(j);
            for i in 0..n {
                for k in 0..n {
                    a[i][k] = a[i][k].add(&c[i].mul(&c[k]));
                }
                b[i] = b[i].add(&vf.apply(j, &c[i]));
            }
        }
        let pad = order.width();
        let pcounts: Vec<usize> = grid.counts().iter().map(|c| c + 2 * pad).collect();
        let mut pstrides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            pstrides[i] = pstrides[i + 1] * pcounts[i + 1];
        }
        let h = grid.spacing();
        let w = pad as isize;
        let coef_of = |p: &Polynomial, scale: f64| -> Option<Coef> {
            if p.is_zero() {
                return None;
            }
            if p.terms().all(|(e, _)| e.iter().all(|&x| x == 0)) {
                let c: f64 = p.terms().map(|(_, c)| c).sum();
                return Some(Coef::Const(c * scale));
            }
            Some(Coef::Field(
                (0..grid.len()).map(|i| scale * p.eval(&grid.point(i))).collect(),
            ))
        };
        let mut terms = Vec::new();
        let mut constant: Vec<(isize, f64)> = Vec::new();
        let mut push = |coef: Coef, stencil: Vec<(isize, f64)>, terms: &mut Vec<Term>| match coef {
            Coef::Const(c) => {
                for (o, wt) in stencil {
                    match constant.iter_mut().find(|(oo, _)| *oo == o) {
                        Some(e) => e.1 += c * wt,
                        None => constant.push((o, c * wt)),
                    }
                }
            }
            f => terms.push(Term { coef: f, stencil }),
        };
        for i in 0..n {
            if let Some(c) = coef_of(&a[i][i], 1.0) {
                let st = (-w..=w)
                    .zip(order.d2())
                    .filter(|(_, wt)| **wt != 0.0)
                    .map(|(o, wt)| (o * pstrides[i] as isize, wt / (h[i] * h[i])))
                    .collect();
                push(c, st, &mut terms);
            }
            for k in i + 1..n {
                if let Some(c) = coef_of(&a[i][k], 2.0) {
                    let mut st = Vec::new();
                    for (oi, wi) in (-w..=w).zip(order.d1()) {
                        for (ok, wk) in (-w..=w).zip(order.d1()) {
                            if *wi != 0.0 && *wk != 0.0 {
                                st.push((
                                    oi * pstrides[i] as isize + ok * pstrides[k] as isize,
                                    wi * wk / (h[i] * h[k]),
                                ));
                            }
                        }
                    }
                    push(c, st, &mut terms);
                }
            }
            if let Some(c) = coef_of(&b[i], 1.0) {
                let st = (-w..=w)
                    .zip(order.d1())
                    .filter(|(_, wt)| **wt != 0.0)
                    .map(|(o, wt)| (o * pstrides[i] as isize, wt / h[i]))
                    .collect();
                push(c, st, &mut terms);
            }
        }
        constant.retain(|(_, wt)| *wt != 0.0);
        constant.sort_by_key(|(o, _)| *o);
        if !constant.is_empty() {
            terms.insert(0, Term { coef: Coef::Const(1.0), stencil: constant });
        }
        let gershgorin = terms
            .iter()
            .map(|t| {
                let m = match &t.coef {
                    Coef::Const(c) => c.abs(),
                    Coef::Field(v) => v.iter().fold(0.0f64, |m, x| m.max(x.abs())),
                };
                m * t.stencil.iter().map(|(_, wt)| wt.abs()).sum::<f64>()
            })
            .sum();
        let degrees: Vec<f64> = fields.iter().map(|&j| g.exponents()[j]).collect();
        let homogeneous = degrees.iter().all(|d| *d == degrees[0]);
        Ok(Self {
            grid: grid.clone(),
            q_hom: g.q_hom(),
            fields,
            homogeneous,
            order,
            pad,
            pcounts,
            pstrides,
            terms,
            gershgorin,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn fields(&self) -> &[usize] {
        &self.fields
    }

    pub fn order(&self) -> StencilOrder {
        self.order
    }

    pub fn q_hom(&self) -> f64 {
        self.q_hom
    }

    /// All selected fields have the same degree, so the flow commutes with dilations.
    pub fn is_homogeneous(&self) -> bool {
        self.homogeneous
    }

    /// Largest stable explicit step `2 / max Σ|stencil|`.
    pub fn cfl_bound(&self) -> f64 {
        2.0 / self.gershgorin
    }

    /// Quasi-norm resolution `max_a h_a^{1/a_a}`.
    pub fn rho_spacing(&self, g: &GroupSpec) -> f64 {
        self.grid
            .spacing()
            .iter()
            .zip(g.exponents())
            .map(|(h, a)| h.powf(1.0 / a))
            .fold(0.0, f64::max)
    }

    fn to_padded(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.pcounts.iter().product()];
        self.for_lines(|line, pbase| {
            let n_last = self.grid.counts()[self.grid.dim() - 1];
            out[pbase..pbase + n_last].copy_from_slice(&v[line * n_last..(line + 1) * n_last]);
        });
        out
    }

    fn from_padded(&self, p: &[f64]) -> Vec<f64> {
        let n_last = self.grid.counts()[self.grid.dim() - 1];
        let mut out = vec![0.0; self.grid.len()];
        self.for_lines(|line, pbase| {
            out[line * n_last..(line + 1) * n_last].copy_from_slice(&p[pbase..pbase + n_last]);
        });
        out
    }

    fn lines(&self) -> usize {
        self.grid.len() / self.grid.counts()[self.grid.dim() - 1]
    }

    /// Padded index of the first interior node of unpadded line `line`.
    fn padded_base(&self, line: usize) -> usize {
        let n = self.grid.dim();
        let mut rem = line * self.grid.counts()[n - 1];
        let mut base = self.pad * self.pstrides[n - 1];
        for a in 0..n - 1 {
            let s = self.grid.strides()[a];
            base += (rem / s + self.pad) * self.pstrides[a];
            rem %= s;
        }
        base
    }

    fn for_lines(&self, mut f: impl FnMut(usize, usize)) {
        for line in 0..self.lines() {
            f(line, self.padded_base(line));
        }
    }

    /// `out = Δ_H u` in the padded layout (ghost entries of `out` untouched).
    fn apply_padded(&self, u: &[f64], out: &mut [f64]) {
        let n_last = self.grid.counts()[self.grid.dim() - 1];
        let chunks: Vec<(usize, Vec<f64>)> = (0..self.lines())
            .into_par_iter()
            .map(|line| {
                let pbase = self.padded_base(line);
                let mut acc = vec![0.0; n_last];
                for t in &self.terms {
                    for (i, a) in acc.iter_mut().enumerate() {
                        let p = (pbase + i) as isize;
                        let mut s = 0.0;
                        for (o, wt) in &t.stencil {
                            s += wt * u[(p + o) as usize];
                        }
                        *a += match &t.coef {
                            Coef::Const(c) => c * s,
                            Coef::Field(v) => v[line * n_last + i] * s,
                        };
                    }
                }
                (pbase, acc)
            })
            .collect();
        for (pbase, acc) in chunks {
            out[pbase..pbase + n_last].copy_from_slice(&acc);
        }
    }

    /// `Δ_H f` on the grid.
    pub fn apply(&self, f: &ScalarField) -> Result<ScalarField> {
        if f.grid() != &self.grid {
            return Err(Error::InvalidParameter("field grid differs from operator grid".into()));
        }
        let u = self.to_padded(f.values());
        let mut out = vec![0.0; u.len()];
        self.apply_padded(&u, &mut out);
        ScalarField::from_values(&self.grid, self.from_padded(&out))
    }

    /// `max |Δ_H 1|` over nodes at least one stencil width from the boundary.
    pub fn constant_residual(&self) -> f64 {
        let n = self.grid.dim();
        let one = ScalarField::from_fn(&self.grid, |_| 1.0);
        let r = self.apply(&one).expect("own grid");
        let mut idx = vec![0usize; n];
        let mut m: f64 = 0.0;
        for (flat, v) in r.values().iter().enumerate() {
            self.grid.multi_index(flat, &mut idx);
            if idx.iter().zip(self.grid.counts()).all(|(i, c)| *i >= self.pad && *i + self.pad < *c) {
                m = m.max(v.abs());
            }
        }
        m
    }
}

/// A heat-flow snapshot with conservation diagnostics.
#[derive(Clone, Debug)]
pub struct HeatState {
    pub t: f64,
    pub u: ScalarField,
    pub steps: usize,
    pub dt: f64,
    pub initial_mass: f64,
    pub mass: f64,
    /// `initial_mass − mass`: what left through the absorbing boundary.
    pub boundary_flux: f64,
    pub min_value: f64,
}

/// Explicit Euler stepper for `∂_t u = Δ_H u`.
pub struct HeatEvolver<'a> {
    op: &'a SubLaplacianOp,
    u: Vec<f64>,
    tmp: Vec<f64>,
    t: f64,
    dt: f64,
    steps: usize,
    initial_mass: f64,
}

impl<'a> HeatEvolver<'a> {
    /// `dt = None` picks 90% of the stability bound.
    pub fn new(op: &'a SubLaplacianOp, u0: &ScalarField, dt: Option<f64>) -> Result<Self> {
        if u0.grid() != &op.grid {
            return Err(Error::InvalidParameter("initial data grid differs from operator grid".into()));
        }
        let bound = op.cfl_bound();
        let dt = dt.unwrap_or(0.9 * bound);
        if !(dt > 0.0) || dt > bound {
            return Err(Error::Cfl { dt, bound });
        }
        let u = op.to_padded(u0.values());
        Ok(Self {
            tmp: vec![0.0; u.len()],
            u,
            op,
            t: 0.0,
            dt,
            steps: 0,
            initial_mass: u0.integral(),
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Treat the current state as time `t` (used after pre-smoothing).
    pub fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    fn step(&mut self, dt: f64) {
        self.op.apply_padded(&self.u, &mut self.tmp);
        let n_last = self.op.grid.counts()[self.op.grid.dim() - 1];
        for line in 0..self.op.lines() {
            let b = self.op.padded_base(line);
            for p in b..b + n_last {
                self.u[p] += dt * self.tmp[p];
            }
        }
        self.t += dt;
        self.steps += 1;
    }

    /// Step until `t_target`, shortening the final step to land on it.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        while self.t < t_target * (1.0 - 1e-13) {
            let dt = self.dt.min(t_target - self.t);
            self.step(dt);
        }
        if self.u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("heat flow blew up at t = {}", self.t)));
        }
        Ok(())
    }

    pub fn advance_steps(&mut self, k: usize) {
        for _ in 0..k {
            self.step(self.dt);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.op.from_padded(&self.u)
    }

    pub fn state(&self) -> Result<HeatState> {
        let u = ScalarField::from_values(&self.op.grid, self.values())?;
        let mass = u.integral();
        let min_value = u.values().iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(HeatState {
            t: self.t,
            steps: self.steps,
            dt: self.dt,
            initial_mass: self.initial_mass,
            mass,
            boundary_flux: self.initial_mass - mass,
            min_value,
            u,
        })
    }
}

/// Evolve `u0` to `t_final`.
pub fn heat_evolve(op: &SubLaplacianOp, u0: &ScalarField, t_final: f64, dt: Option<f64>) -> Result<HeatState> {
    if !(t_final >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_final = {t_final} must be ≥ 0")));
    }
    let mut ev = HeatEvolver::new(op, u0, dt)?;
    ev.advance_to(t_final)?;
    ev.state()
}

/// Number of explicit steps applied to the grid delta before time accounting
/// starts; their duration counts as elapsed heat time.
pub const DELTA_PRESMOOTH_STEPS: usize = 4;

/// Grid delta at the origin after pre-smoothing, with its elapsed time.
fn smoothed_delta(op: &SubLaplacianOp) -> Result<HeatEvolver<'_>> {
    let grid = &op.grid;
    let origin = vec![0.0; grid.dim()];
    let i = grid
        .nearest(&origin)
        .ok_or_else(|| Error::InvalidParameter("grid does not contain the identity".into()))?;
    let mut v = vec![0.0; grid.len()];
    v[i] = 1.0 / grid.cell_volume();
    let u0 = ScalarField::from_values(grid, v)?;
    let mut ev = HeatEvolver::new(op, &u0, None)?;
    ev.advance_steps(DELTA_PRESMOOTH_STEPS);
    Ok(ev)
}

/// Fitted Gaussian envelope `p(t, x) ≤ C t^{−Q/2} exp(−c ρ(x)²/t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianFit {
    pub big_c: f64,
    pub small_c: f64,
    pub r2: f64,
}

/// `p(t, ·)` by evolving a grid delta.
pub fn heat_kernel(g: &GroupSpec, op: &SubLaplacianOp, t: f64) -> Result<(HeatState, GaussianFit)> {
    let hr = op.rho_spacing(g);
    if t < 4.0 * hr * hr {
        return Err(Error::Resolution(format!("t = {t} below 4h² = {}", 4.0 * hr * hr)));
    }
    let mut ev = smoothed_delta(op)?;
    ev.advance_to(t)?;
    let st = ev.state()?;
    let fit = gaussian_fit(g, &st.u, t);
    Ok((st, fit))
}

fn gaussian_fit(g: &GroupSpec, p: &ScalarField, t: f64) -> GaussianFit {
    let q = g.q_hom();
    let max = p.max_abs();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..p.grid().len() {
        let v = p.values()[i];
        if v > 1e-6 * max {
            let x = p.grid().point(i);
            let r = g.quasi_norm(&x);
            xs.push(r * r / t);
            ys.push((v * t.powf(q / 2.0)).ln());
        }
    }
    let fit = ols(&xs, &ys);
    let (c, r2) = fit.map(|f| (-f.slope, f.r2)).unwrap_or((f64::NAN, 0.0));
    let big_c = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y + c * x).exp())
        .fold(0.0, f64::max);
    GaussianFit { big_c, small_c: c, r2 }
}

/// Subordination quadrature settings.
#[derive(Clone, Debug, PartialEq)]
pub struct Subordination {
    pub per_decade: usize,
    /// Defaults to `h_ρ²/4` (or the pre-smoothing time for kernels).
    pub t_min: Option<f64>,
    /// Defaults to `inradius²/32` where `inradius` is the largest ρ-ball in the box.
    pub t_max: Option<f64>,
}

impl Default for Subordination {
    fn default() -> Self {
        Self {
            per_decade: 32,
            t_min: None,
            t_max: None,
        }
    }
}

impl Subordination {
    fn range(&self, g: &GroupSpec, op: &SubLaplacianOp, t_floor: f64) -> Result<(f64, f64)> {
        let hr = op.rho_spacing(g);
        let t_min = self.t_min.unwrap_or(0.25 * hr * hr).max(t_floor);
        let inr = box_inradius(g, &op.grid);
        let t_max = self.t_max.unwrap_or(inr * inr / 32.0);
        if !(t_max > t_min) {
            return Err(Error::Resolution(format!("subordination range [{t_min}, {t_max}] is empty")));
        }
        Ok((t_min, t_max))
    }

    fn nodes(&self, t_min: f64, t_max: f64) -> (Vec<f64>, Vec<f64>) {
        // per_decade → per_octave
        let per_octave = ((self.per_decade as f64) * 2f64.log10()).ceil().max(2.0) as usize;
        log_simpson(t_min, t_max, per_octave)
    }
}

/// Radius of the largest ρ-ball centred at the identity inside the grid box.
pub fn box_inradius(g: &GroupSpec, grid: &GridSpec) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let half = grid.lower()[a].abs().min(grid.upper()[a].abs());
            half.powf(1.0 / g.exponents()[a])
        })
        .fold(f64::INFINITY, f64::min)
}

/// Riesz kernel with its decay diagnostic.
#[derive(Clone, Debug)]
pub struct RieszKernel {
    pub alpha: f64,
    pub field: ScalarField,
    /// `sup |R^α(x)| ρ(x)^{Q−α}` over nodes with `ρ ≥ 4h_ρ`.
    pub decay_sup: f64,
    /// Share of the value at `ρ = inradius/2` contributed by the large-`t` tail.
    pub tail_share: f64,
    pub t_range: (f64, f64),
}

/// `R^α = Γ(α/2)^{-1} ∫ t^{α/2−1} p(t, ·) dt`.
///
/// Times above `t_max` use the dilation structure `p(t, x) = s^Q p(t_max, s∘x)`
/// with `s = (t_max/t)^{1/2}` when the operator is homogeneous, and a
/// `t^{−Q/2}` power tail otherwise.
pub fn riesz_kernel(g: &GroupSpec, op: &SubLaplacianOp, alpha: f64, sub: &Subordination) -> Result<RieszKernel> {
    let q = g.q_hom();
    if !(alpha > 0.0 && alpha < q) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, Q)")));
    }
    let mut ev = smoothed_delta(op)?;
    let t0 = ev.dt() * DELTA_PRESMOOTH_STEPS as f64;
    ev.set_time(t0);
    let (t_min, t_max) = sub.range(g, op, t0)?;
    let (ts, ws) = sub.nodes(t_min, t_max);
    let n = op.grid.len();
    let mut acc = vec![0.0; n];
    // [0, t_min]: the smoothed delta stands in for p on that interval
    let head = 2.0 / alpha * t_min.powf(alpha / 2.0);
    ev.advance_to(t_min)?;
    let v = ev.values();
    for i in 0..n {
        acc[i] += head * v[i];
    }
    let mut last = v;
    for (k, (t, w)) in ts.iter().zip(&ws).enumerate() {
        if k > 0 {
            ev.advance_to(*t)?;
            last = ev.values();
        }
        let c = w * t.powf(alpha / 2.0 - 1.0);
        for i in 0..n {
            acc[i] += c * last[i];
        }
    }
    let p_max = ScalarField::from_values(&op.grid, last)?;
    let tail = if op.is_homogeneous() {
        // 2 t_max^{α/2} ∫_0^1 s^{Q−α−1} p(t_max, s∘x) ds
        let (sx, sw) = gauss_legendre(48, 0.0, 1.0);
        let dil = g.dilations().clone();
        let c = 2.0 * t_max.powf(alpha / 2.0);
        ScalarField::from_fn(&op.grid, |x| {
            let mut y = [0.0; 8];
            let y = &mut y[..x.len()];
            let mut s_acc = 0.0;
            for (s, w) in sx.iter().zip(&sw) {
                dil.dilate_into(*s, x, y);
                s_acc += w * s.powf(q - alpha - 1.0) * p_max.interpolate(y);
            }
            c * s_acc
        })
    } else {
        let c = t_max.powf(alpha / 2.0) / (q / 2.0 - alpha / 2.0);
        p_max.scale(c)
    };
    let norm = 1.0 / gamma(alpha / 2.0);
    let vals: Vec<f64> = (0..n).map(|i| norm * (acc[i] + tail.values()[i])).collect();
    let field = ScalarField::from_values(&op.grid, vals)?;
    let hr = op.rho_spacing(g);
    let mut decay_sup: f64 = 0.0;
    for i in 0..n {
        let x = op.grid.point(i);
        let r = g.quasi_norm(&x);
        if r >= 4.0 * hr {
            decay_sup = decay_sup.max(field.values()[i].abs() * r.powf(q - alpha));
        }
    }
    let probe: Vec<f64> = {
        let r = 0.5 * box_inradius(g, &op.grid);
        let mut x = vec![0.0; g.dim()];
        x[0] = r.powf(g.exponents()[0]);
        x
    };
    let total = field.interpolate(&probe);
    let tail_share = if total != 0.0 { norm * tail.interpolate(&probe) / total } else { 0.0 };
    Ok(RieszKernel {
        alpha,
        field,
        decay_sup,
        tail_share,
        t_range: (t_min, t_max),
    })
}

/// Output of a subordinated operator applied to a field.
#[derive(Clone, Debug)]
pub struct Subordinated {
    pub field: ScalarField,
    /// `‖tail‖₂ / ‖result‖₂` for the extrapolated large-`t` part.
    pub truncation: f64,
}

/// `(−Δ_H)^{−α/2} f = f ∗ R^α` by subordinated heat flow started from `f`.
pub fn riesz_apply(g: &GroupSpec, op: &SubLaplacianOp, f: &ScalarField, alpha: f64, sub: &Subordination) -> Result<Subordinated> {
    let q = g.q_hom();
    if !(alpha > 0.0 && alpha < q) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, Q)")));
    }
    let (t_min, t_max) = sub.range(g, op, 0.0)?;
    let (ts, ws) = sub.nodes(t_min, t_max);
    let n = op.grid.len();
    let mut ev = HeatEvolver::new(op, f, None)?;
    let mut acc: Vec<f64> = f.values().iter().map(|v| 2.0 / alpha * t_min.powf(alpha / 2.0) * v).collect();
    let mut last = Vec::new();
    for (t, w) in ts.iter().zip(&ws) {
        ev.advance_to(*t)?;
        last = ev.values();
        let c = w * t.powf(alpha / 2.0 - 1.0);
        for i in 0..n {
            acc[i] += c * last[i];
        }
    }
    // e^{tΔ}f ~ t^{−Q/2} beyond t_max; a fixed exponent keeps the map linear
    let c = t_max.powf(alpha / 2.0) / (q / 2.0 - alpha / 2.0);
    let norm = 1.0 / gamma(alpha / 2.0);
    let tail: Vec<f64> = last.iter().map(|v| c * v).collect();
    let vals: Vec<f64> = (0..n).map(|i| norm * (acc[i] + tail[i])).collect();
    let tail_l2 = pairwise_sum(&tail.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt() * norm;
    let res_l2 = pairwise_sum(&vals.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    Ok(Subordinated {
        field: ScalarField::from_values(&op.grid, vals)?,
        truncation: if res_l2 > 0.0 { tail_l2 / res_l2 } else { 0.0 },
    })
}

/// `(−Δ_H)^{α/2} f` for `α ∈ (0, Q)`: integer powers by the stencil, the
/// fractional remainder `s ∈ (0, 1)` by
/// `s/Γ(1−s) ∫ t^{−1−s}(f − e^{tΔ}f) dt`.
pub fn fractional_laplacian(
    g: &GroupSpec,
    op: &SubLaplacianOp,
    alpha: f64,
    f: &ScalarField,
    sub: &Subordination,
) -> Result<Subordinated> {
    if !(alpha > 0.0 && alpha < g.q_hom()) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside (0, Q)")));
    }
    let half = alpha / 2.0;
    let whole = half.floor() as usize;
    let s = half - whole as f64;
    let mut cur = f.clone();
    for _ in 0..whole {
        cur = op.apply(&cur)?.scale(-1.0);
    }
    if s < 1e-12 {
        return Ok(Subordinated { field: cur, truncation: 0.0 });
    }
    let res = balakrishnan(g, op, s, &cur, sub)?;
    if res.truncation > 0.1 {
        return Err(Error::Unresolved(format!(
            "fractional Laplacian tail estimate {:.1}% exceeds 10%",
            100.0 * res.truncation
        )));
    }
    Ok(res)
}

fn balakrishnan(g: &GroupSpec, op: &SubLaplacianOp, s: f64, f: &ScalarField, sub: &Subordination) -> Result<Subordinated> {
    let (t_min, t_max) = sub.range(g, op, 0.0)?;
    let (ts, ws) = sub.nodes(t_min, t_max);
    let n = op.grid.len();
    let lap = op.apply(f)?;
    // [0, t_min]: f − e^{tΔ}f ≈ −tΔf
    let mut acc: Vec<f64> = lap.values().iter().map(|v| -t_min.powf(1.0 - s) / (1.0 - s) * v).collect();
    let mut ev = HeatEvolver::new(op, f, None)?;
    let mut last = Vec::new();
    for (t, w) in ts.iter().zip(&ws) {
        ev.advance_to(*t)?;
        last = ev.values();
        let c = w * t.powf(-1.0 - s);
        for i in 0..n {
            acc[i] += c * (f.values()[i] - last[i]);
        }
    }
    // [t_max, ∞): ∫ t^{−1−s} f − ∫ t^{−1−s} e^{tΔ}f with a power-law tail
    let gam = g.q_hom() / 2.0;
    let cf = t_max.powf(-s) / s;
    let cu = t_max.powf(-s) / (s + gam);
    let c_s = s / gamma(1.0 - s);
    let tail: Vec<f64> = (0..n).map(|i| cf * f.values()[i] - cu * last[i]).collect();
    let vals: Vec<f64> = (0..n).map(|i| c_s * (acc[i] + tail[i])).collect();
    let soft_tail: Vec<f64> = last.iter().map(|v| c_s * cu * v).collect();
    let t_l2 = pairwise_sum(&soft_tail.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    let r_l2 = pairwise_sum(&vals.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt();
    Ok(Subordinated {
        field: ScalarField::from_values(&op.grid, vals)?,
        truncation: if r_l2 > 0.0 { t_l2 / r_l2 } else { 0.0 },
    })
}

/// `‖f‖_{L^p_α} = ‖(−Δ_H)^{α/2} f‖_p`.
pub fn sobolev_norm(
    g: &GroupSpec,
    op: &SubLaplacianOp,
    f: &ScalarField,
    alpha: f64,
    p: f64,
    sub: &Subordination,
) -> Result<f64> {
    fractional_laplacian(g, op, alpha, f, sub)?.field.lp_norm(p, None)
}

/// Euclidean Riesz constant `Γ((n−α)/2) / (2^α π^{n/2} Γ(α/2))`.
pub fn euclidean_riesz_constant(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    gamma((nf - alpha) / 2.0) / (2f64.powf(alpha) * std::f64::consts::PI.powf(nf / 2.0) * gamma(alpha / 2.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_bump(x: &[f64], s: f64) -> f64 {
        (-x.iter().map(|v| v * v).sum::<f64>() / (s * s)).exp()
    }

    #[test]
    fn heisenberg_stencil_kills_constants() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 1.0, 15).unwrap();
        for subset in [FieldSubset::All, FieldSubset::FirstStratum] {
            for order in [StencilOrder::Second, StencilOrder::Fourth] {
                let op = SubLaplacianOp::new(&g, &grid, &subset, order).unwrap();
                assert!(op.constant_residual() < 1e-10);
            }
        }
    }

    #[test]
    fn stencil_matches_symbolic_sublaplacian() {
        // Δ_H x1² x3 for the first stratum: X1 = ∂1 − x2/2 ∂3, X2 = ∂2 + x1/2 ∂3
        // X1²(x1² x3) = 2x3 − 2 x1 x2 + x2² x1²/4 · 0 ... computed symbolically below
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 1.0, 21).unwrap();
        let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::FirstStratum, StencilOrder::Fourth).unwrap();
        let vf = g.vector_field_coeffs(Side::Left);
        let p = Polynomial::monomial(vec![2, 1, 1], 1.0);
        let lap = vf.apply(0, &vf.apply(0, &p)).add(&vf.apply(1, &vf.apply(1, &p)));
        let f = ScalarField::from_fn(&grid, |x| p.eval(x));
        let num = op.apply(&f).unwrap();
        let mut idx = vec![0; 3];
        for i in 0..grid.len() {
            grid.multi_index(i, &mut idx);
            if idx.iter().all(|&k| (2..19).contains(&k)) {
                let x = grid.point(i);
                assert!((num.values()[i] - lap.eval(&x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn cfl_violation_rejected() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 21).unwrap();
        let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::All, StencilOrder::Second).unwrap();
        let u0 = ScalarField::from_fn(&grid, |x| gauss_bump(x, 0.2));
        let bound = op.cfl_bound();
        assert!((bound - 0.01 / 4.0).abs() < 1e-12);
        assert!(matches!(heat_evolve(&op, &u0, 0.01, Some(1.5 * bound)), Err(Error::Cfl { .. })));
    }

    #[test]
    fn euclidean_heat_kernel_is_gaussian() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::periodic_like(1.0 / 64.0, 128, 2).unwrap();
        let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::All, StencilOrder::Second).unwrap();
        let t = 0.05;
        let (st, fit) = heat_kernel(&g, &op, t).unwrap();
        let exact = ScalarField::from_fn(&grid, |x| {
            (-(x[0] * x[0] + x[1] * x[1]) / (4.0 * t)).exp() / (4.0 * std::f64::consts::PI * t)
        });
        let err = st.u.sub(&exact).unwrap().lp_norm(1.0, None).unwrap();
        assert!(err < 0.03, "L1 error {err}");
        assert!((st.mass - 1.0).abs() < 1e-3);
        assert!(st.min_value >= -1e-12);
        assert!(fit.small_c > 0.0);
    }

    #[test]
    fn semigroup_property() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 2.0, 25).unwrap();
        let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::FirstStratum, StencilOrder::Second).unwrap();
        let u0 = ScalarField::from_fn(&grid, |x| gauss_bump(&[x[0], x[1], x[2] / 2.0], 0.5));
        let dt = 0.9 * op.cfl_bound();
        let (t1, t2) = (30.0 * dt, 20.0 * dt);
        let a = heat_evolve(&op, &heat_evolve(&op, &u0, t1, Some(dt)).unwrap().u, t2, Some(dt)).unwrap();
        let b = heat_evolve(&op, &u0, t1 + t2, Some(dt)).unwrap();
        let d = a.u.sub(&b.u).unwrap().lp_norm(2.0, None).unwrap() / b.u.lp_norm(2.0, None).unwrap();
        assert!(d < 1e-3);
    }

    #[test]
    fn riesz_constant_values() {
        // n = 3, α = 2: Γ(1/2)/(4 π^{3/2} Γ(1)) = 1/(4π)
        assert!((euclidean_riesz_constant(3, 2.0) - 1.0 / (4.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn fractional_laplacian_is_linear_and_alpha_two_is_stencil() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[2.0, 2.0], 41).unwrap();
        let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::All, StencilOrder::Second).unwrap();
        let sub = Subordination::default();
        let f1 = ScalarField::from_fn(&grid, |x| gauss_bump(x, 0.3));
        let f2 = ScalarField::from_fn(&grid, |x| gauss_bump(&[x[0] - 0.2, x[1]], 0.25));
        let comb = f1.scale(2.0).axpy(-3.0, &f2).unwrap();
        let l = |f: &ScalarField| fractional_laplacian(&g, &op, 1.0, f, &sub).unwrap().field;
        let lhs = l(&comb);
        let rhs = l(&f1).scale(2.0).axpy(-3.0, &l(&f2)).unwrap();
        assert!(lhs.sub(&rhs).unwrap().max_abs() < 1e-10 * lhs.max_abs());
        let h = GroupSpec::heisenberg();
        let hgrid = GridSpec::for_group(&h, 1.5, 17).unwrap();
        let hop = SubLaplacianOp::new(&h, &hgrid, &FieldSubset::FirstStratum, StencilOrder::Second).unwrap();
        let hf = ScalarField::from_fn(&hgrid, |x| gauss_bump(&[x[0], x[1], x[2] / 1.5], 0.4));
        let two = fractional_laplacian(&h, &hop, 2.0, &hf, &sub).unwrap().field;
        assert_eq!(two, hop.apply(&hf).unwrap().scale(-1.0));
    }
}
