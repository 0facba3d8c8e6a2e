//! Singular and maximal operators on grid fields.
//!
//! Truncated operators share one binned convolution: the kernel
//! `K_α χ_{ρ > ε_min}` is split into annuli between consecutive points of the
//! ε-grid, so every `T_ε f` is a suffix sum of the annulus pieces. `T^#`, the
//! short-range maximal function and the dyadic tails then come out of the same
//! numbers, and the maximal-control inequality holds up to rounding.

use std::sync::Arc;

use rayon::prelude::*;

use crate::conv::{convolve_binned, convolve_binned_reduce, convolve_with_report, ConvReport};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::GroupSpec;
use crate::heat::{riesz_apply, FieldSubset, StencilOrder, SubLaplacianOp, Subordination};
use crate::kernels::{AnnulusKernel, Kernel, DEFAULT_SHELL_WIDTH, KernelKind, LPCutoff, RadialKernel, SphereFunction, TimeCutoff};

/// Default ε-grid refinement.
pub const DEFAULT_EPS_PER_OCTAVE: usize = 8;

/// `max_j h_j^{1/a_j}`: the coarsest grid step measured in ρ.
pub fn rho_spacing(g: &GroupSpec, grid: &GridSpec) -> f64 {
    grid.spacing()
        .iter()
        .zip(g.exponents())
        .map(|(h, a)| h.powf(1.0 / a))
        .fold(0.0, f64::max)
}

/// `ρ` of the box corner farthest from the identity.
pub fn corner_rho(g: &GroupSpec, grid: &GridSpec) -> f64 {
    let corner: Vec<f64> = (0..grid.dim())
        .map(|a| grid.lower()[a].abs().max(grid.upper()[a].abs()))
        .collect();
    g.quasi_norm(&corner)
}

/// `2A₀ρ(corner)`: no pair of grid nodes is farther apart.
pub fn grid_diameter(g: &GroupSpec, grid: &GridSpec) -> f64 {
    2.0 * g.a0() * corner_rho(g, grid)
}

/// `(−Δ_H)^{−α/2}` on one grid, by subordinated heat flow.
#[derive(Clone, Debug)]
pub struct RieszHandle {
    pub op: SubLaplacianOp,
    pub sub: Subordination,
}

impl RieszHandle {
    pub fn new(g: &GroupSpec, grid: &GridSpec, subset: &FieldSubset, order: StencilOrder) -> Result<Self> {
        Ok(Self {
            op: SubLaplacianOp::new(g, grid, subset, order)?,
            sub: Subordination::default(),
        })
    }

    /// `f ∗ R^α`; the identity at `α = 0`.
    pub fn apply(&self, g: &GroupSpec, f: &ScalarField, alpha: f64) -> Result<ScalarField> {
        if alpha == 0.0 {
            return Ok(f.clone());
        }
        if f.grid() != self.op.grid() {
            return Err(Error::InvalidParameter("field grid differs from the Riesz grid".into()));
        }
        Ok(riesz_apply(g, &self.op, f, alpha, &self.sub)?.field)
    }
}

/// Everything an operator needs besides the input field.
#[derive(Clone, Debug)]
pub struct OperatorConfig {
    pub group: GroupSpec,
    pub omega: Arc<SphereFunction>,
    pub alpha: f64,
    pub eps_per_octave: usize,
    pub lp: LPCutoff,
    pub cutoff: Arc<TimeCutoff>,
    /// Outer kernel cutoff; defaults to the grid diameter.
    pub outer: Option<f64>,
}

impl OperatorConfig {
    pub fn new(g: &GroupSpec, omega: Arc<SphereFunction>, alpha: f64, lp: LPCutoff) -> Result<Self> {
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
        Ok(Self {
            group: g.clone(),
            omega,
            alpha,
            eps_per_octave: DEFAULT_EPS_PER_OCTAVE,
            lp,
            cutoff: Arc::new(TimeCutoff::new()),
            outer: None,
        })
    }

    pub fn with_eps_per_octave(mut self, p: usize) -> Self {
        self.eps_per_octave = p.max(1);
        self
    }

    pub fn with_omega(&self, omega: Arc<SphereFunction>) -> Result<Self> {
        let mut c = Self::new(&self.group, omega, self.alpha, self.lp.clone())?;
        c.eps_per_octave = self.eps_per_octave;
        c.cutoff = self.cutoff.clone();
        c.outer = self.outer;
        Ok(c)
    }

    pub fn outer_for(&self, grid: &GridSpec) -> f64 {
        self.outer.unwrap_or_else(|| grid_diameter(&self.group, grid))
    }

    /// Shells are widened to two ρ-spacings so the lattice sees them.
    fn annulus(&self, j: i32, kind: KernelKind, grid: &GridSpec) -> Result<AnnulusKernel> {
        let width = (2.0 * rho_spacing(&self.group, grid) / 2f64.powi(j)).clamp(DEFAULT_SHELL_WIDTH, 1.0);
        AnnulusKernel::with_shell_width(&self.group, self.omega.clone(), self.alpha, j, kind, Some(self.cutoff.clone()), width)
    }
}

/// Diagnostics of one truncated operator application.
#[derive(Clone, Debug, Default)]
pub struct TruncationReport {
    pub eps: f64,
    pub outer: f64,
    /// `∫_{ρ > outer} |K_α| = ‖Ω‖₁ outer^{−α}/α`; infinite at `α = 0`.
    pub tail_mass: f64,
    pub conv: ConvReport,
}

fn tail_mass(cfg: &OperatorConfig, outer: f64) -> f64 {
    if cfg.omega.is_zero() {
        0.0
    } else if cfg.alpha > 0.0 {
        cfg.omega.l1_norm() * outer.powf(-cfg.alpha) / cfg.alpha
    } else {
        f64::INFINITY
    }
}

fn check_eps(cfg: &OperatorConfig, grid: &GridSpec, eps: f64) -> Result<()> {
    let h = rho_spacing(&cfg.group, grid);
    if !(eps > h) {
        return Err(Error::Resolution(format!("truncation radius {eps} not above the grid step {h}")));
    }
    Ok(())
}

/// `T_{Ω,α,ε} f(x) = ∫_{ρ(y^{-1}x) > ε} K_α(y^{-1}x) f(y) dy`.
pub fn truncated_sio(cfg: &OperatorConfig, f: &ScalarField, eps: f64) -> Result<(ScalarField, TruncationReport)> {
    check_eps(cfg, f.grid(), eps)?;
    let outer = cfg.outer_for(f.grid());
    let mut report = TruncationReport {
        eps,
        outer,
        tail_mass: tail_mass(cfg, outer),
        conv: ConvReport::default(),
    };
    if cfg.omega.is_zero() || eps >= outer {
        return Ok((ScalarField::zeros(f.grid()), report));
    }
    let k = RadialKernel::truncated(&cfg.group, cfg.omega.clone(), cfg.alpha, eps, outer);
    let (out, conv) = convolve_with_report(&cfg.group, f, &k, f.grid())?;
    report.conv = conv;
    Ok((out, report))
}

/// `T^k f = T_{2^{k+1}} f`, by the same code path.
pub fn tail_operator(cfg: &OperatorConfig, f: &ScalarField, k: i32) -> Result<(ScalarField, TruncationReport)> {
    truncated_sio(cfg, f, 2f64.powi(k + 1))
}

/// `T_ε f` for several radii from one binned pass. Radii at or beyond the
/// outer cutoff give zero fields.
pub fn truncation_family(cfg: &OperatorConfig, f: &ScalarField, eps: &[f64]) -> Result<Vec<ScalarField>> {
    if eps.is_empty() {
        return Err(Error::InvalidParameter("empty ε list".into()));
    }
    if eps.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("ε list must be increasing".into()));
    }
    check_eps(cfg, f.grid(), eps[0])?;
    let outer = cfg.outer_for(f.grid());
    let live: Vec<f64> = eps.iter().copied().filter(|e| *e < outer).collect();
    let mut out = vec![ScalarField::zeros(f.grid()); eps.len()];
    if live.is_empty() || cfg.omega.is_zero() {
        return Ok(out);
    }
    let mut edges = live.clone();
    edges.push(outer);
    let k = RadialKernel::truncated(&cfg.group, cfg.omega.clone(), cfg.alpha, live[0], outer);
    let (pieces, _) = convolve_binned(&cfg.group, f, &k, &edges, f.grid())?;
    let mut acc = ScalarField::zeros(f.grid());
    for m in (0..live.len()).rev() {
        acc.add_assign_scaled(1.0, &pieces[m])?;
        out[m] = acc.clone();
    }
    Ok(out)
}

/// The dyadic ε-grid `2^{k_min + m/P}` up to `2^{k_max+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsGrid {
    pub k_min: i32,
    pub k_max: i32,
    pub per_octave: usize,
    pub outer: f64,
    pub edges: Vec<f64>,
}

impl EpsGrid {
    /// Octaves `[2^k, 2^{k+1})` from the first power of two above the grid
    /// step to the one containing the outer cutoff.
    pub fn for_grid(cfg: &OperatorConfig, grid: &GridSpec) -> Result<Self> {
        let h = rho_spacing(&cfg.group, grid);
        let outer = cfg.outer_for(grid);
        let k_min = h.log2().floor() as i32 + 1;
        let k_max = (outer.log2().ceil() as i32 - 1).max(k_min);
        let p = cfg.eps_per_octave.max(1);
        let n = (k_max - k_min + 1) as usize * p;
        let edges = (0..=n)
            .map(|m| 2f64.powf(k_min as f64 + m as f64 / p as f64))
            .collect();
        Ok(Self {
            k_min,
            k_max,
            per_octave: p,
            outer,
            edges,
        })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

/// `T^#f`, `M_{Ω,α}f` and `sup_k |T^k f|` on a shared ε-grid.
#[derive(Clone, Debug)]
pub struct MaximalParts {
    pub sharp: ScalarField,
    pub fractional: ScalarField,
    pub tails: ScalarField,
    /// `min_x (M f + sup_k|T^k f| − T^# f)`.
    pub control_slack: f64,
}

/// Maximal operators for a batch of inputs from one binned convolution.
pub fn maximal_parts(cfg: &OperatorConfig, fs: &[&ScalarField]) -> Result<(Vec<MaximalParts>, EpsGrid)> {
    let Some(first) = fs.first() else {
        return Err(Error::InvalidParameter("empty batch".into()));
    };
    let grid = first.grid();
    let eg = EpsGrid::for_grid(cfg, grid)?;
    if cfg.omega.is_zero() {
        let z = ScalarField::zeros(grid);
        let parts = fs
            .iter()
            .map(|_| MaximalParts {
                sharp: z.clone(),
                fractional: z.clone(),
                tails: z.clone(),
                control_slack: 0.0,
            })
            .collect();
        return Ok((parts, eg));
    }
    let nb = eg.edges.len() - 1;
    let p = eg.per_octave;
    let nf = fs.len();
    let reduce = move |blocks: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let n = blocks.first().map_or(0, |b| b.len());
        let mut out = Vec::with_capacity(3 * nf);
        for fi in 0..nf {
            let bins = &blocks[fi * nb..(fi + 1) * nb];
            let mut sharp = vec![0.0; n];
            let mut frac = vec![0.0; n];
            let mut tails = vec![0.0; n];
            let mut suffix = vec![0.0; nb + 1];
            for i in 0..n {
                // suffix[m] = T_{ε_m} f(x_i); suffix[nb] = 0 at the top edge
                suffix[nb] = 0.0;
                for m in (0..nb).rev() {
                    suffix[m] = suffix[m + 1] + bins[m][i];
                }
                let (mut s, mut fm, mut tl) = (0.0f64, 0.0f64, 0.0f64);
                for m in 0..nb {
                    let top = suffix[(m / p + 1) * p];
                    s = s.max(suffix[m].abs());
                    fm = fm.max((suffix[m] - top).abs());
                    tl = tl.max(top.abs());
                }
                sharp[i] = s;
                frac[i] = fm;
                tails[i] = tl;
            }
            out.push(sharp);
            out.push(frac);
            out.push(tails);
        }
        out
    };
    let k = RadialKernel::truncated(&cfg.group, cfg.omega.clone(), cfg.alpha, eg.edges[0], eg.outer);
    let (fields, _) = convolve_binned_reduce(&cfg.group, fs, &k, &eg.edges, grid, &reduce)?;
    let mut it = fields.into_iter();
    let mut parts = Vec::with_capacity(nf);
    for _ in 0..nf {
        let sharp = it.next().expect("three outputs per field");
        let fractional = it.next().expect("three outputs per field");
        let tails = it.next().expect("three outputs per field");
        let control_slack = (0..grid.len())
            .map(|i| fractional.values()[i] + tails.values()[i] - sharp.values()[i])
            .fold(f64::INFINITY, f64::min);
        parts.push(MaximalParts {
            sharp,
            fractional,
            tails,
            control_slack,
        });
    }
    Ok((parts, eg))
}

/// `T^#_{Ω,α} f = sup_ε |T_ε f|` over the ε-grid.
pub fn maximal_sio(cfg: &OperatorConfig, f: &ScalarField) -> Result<ScalarField> {
    Ok(maximal_parts(cfg, &[f])?.0.remove(0).sharp)
}

/// `M_{Ω,α} f = sup_k sup_{ε ∈ [2^k, 2^{k+1})} |∫_{ε < ρ ≤ 2^{k+1}} …|`.
pub fn fractional_max(cfg: &OperatorConfig, f: &ScalarField) -> Result<ScalarField> {
    Ok(maximal_parts(cfg, &[f])?.0.remove(0).fractional)
}

/// `T̃^k f = f ∗ K_{α,k}` together with `c = ∫ tφ(t) dt`.
pub fn smooth_tail_operator(cfg: &OperatorConfig, f: &ScalarField, k: i32) -> Result<(ScalarField, f64)> {
    let c = cfg.cutoff.tail_constant();
    check_eps(cfg, f.grid(), 2f64.powi(k))?;
    let outer = cfg.outer_for(f.grid());
    if cfg.omega.is_zero() || 2f64.powi(k) >= outer {
        return Ok((ScalarField::zeros(f.grid()), c));
    }
    let kern = RadialKernel::smooth_tail(&cfg.group, cfg.omega.clone(), cfg.alpha, k, outer, cfg.cutoff.clone());
    Ok((crate::conv::convolve(&cfg.group, f, &kern, f.grid())?, c))
}

/// Zero (the centre alone) and geometric radii `h_ρ·2^{m/4}` up to the grid
/// diameter.
pub fn default_radii(g: &GroupSpec, grid: &GridSpec) -> Vec<f64> {
    let h = rho_spacing(g, grid);
    let top = grid_diameter(g, grid);
    let mut r = vec![0.0];
    let mut m = 0;
    loop {
        let v = h * 2f64.powf(m as f64 / 4.0);
        r.push(v);
        if v >= top {
            break;
        }
        m += 1;
    }
    r
}

struct Indicator(f64);

impl Kernel for Indicator {
    fn eval(&self, _z: &[f64]) -> f64 {
        1.0
    }
    fn support(&self) -> (f64, f64) {
        (0.0, self.0)
    }
}

/// Hardy–Littlewood maximal function: the largest average of `|f|` over the
/// grid nodes of a ball `{y : ρ(y^{-1}x) ≤ r}`, `r` in `radii`. Balls always
/// contain their centre, so `Mf ≥ |f|` on the grid.
pub fn hl_maximal(g: &GroupSpec, f: &ScalarField, radii: &[f64]) -> Result<ScalarField> {
    if radii.is_empty() || radii.iter().any(|r| !(*r >= 0.0)) {
        return Err(Error::InvalidParameter("radii must be nonempty and nonnegative".into()));
    }
    let mut radii = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    let abs = f.map(f64::abs);
    if g.is_abelian() {
        return Ok(hl_boxes(g, &abs, &radii));
    }
    let ones = ScalarField::from_fn(f.grid(), |_| 1.0);
    // group-law rounding puts the centre at ρ ~ 1e-8 rather than 0
    let floor = 1e-6 * rho_spacing(g, f.grid());
    let mut edges = vec![-1.0];
    for r in &radii {
        let r = r.max(floor);
        if r > edges[edges.len() - 1] {
            edges.push(r);
        }
    }
    if edges.len() == 1 {
        return Ok(abs);
    }
    let nb = edges.len() - 1;
    // sums carry the cell volume
    let half_cell = 0.5 * f.grid().cell_volume();
    let reduce = move |blocks: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let n = blocks[0].len();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let (mut sf, mut sc, mut best) = (0.0, 0.0, 0.0f64);
            for b in 0..nb {
                sf += blocks[b][i];
                sc += blocks[nb + b][i];
                if sc > half_cell {
                    best = best.max(sf / sc);
                }
            }
            *o = best;
        }
        vec![out]
    };
    let k = Indicator(edges[edges.len() - 1]);
    let (mut out, _) = convolve_binned_reduce(g, &[&abs, &ones], &k, &edges, f.grid(), &reduce)?;
    Ok(out.remove(0))
}

/// Abelian case: balls are boxes, averaged through summed-area tables.
fn hl_boxes(g: &GroupSpec, abs: &ScalarField, radii: &[f64]) -> ScalarField {
    let grid = abs.grid();
    let n = grid.dim();
    let counts = grid.counts().to_vec();
    let strides = grid.strides().to_vec();
    // table with one leading zero slab per axis
    let tc: Vec<usize> = counts.iter().map(|c| c + 1).collect();
    let mut ts = vec![1usize; n];
    for a in (0..n.saturating_sub(1)).rev() {
        ts[a] = ts[a + 1] * tc[a + 1];
    }
    let mut table = vec![0.0; tc.iter().product()];
    let mut idx = vec![0usize; n];
    for (flat, v) in abs.values().iter().enumerate() {
        grid.multi_index(flat, &mut idx);
        let t: usize = idx.iter().zip(&ts).map(|(i, s)| (i + 1) * s).sum();
        table[t] = *v;
    }
    for a in 0..n {
        for t in 0..table.len() {
            let i = (t / ts[a]) % tc[a];
            if i > 0 {
                table[t] += table[t - ts[a]];
            }
        }
    }
    let halves: Vec<Vec<usize>> = radii
        .iter()
        .map(|r| {
            (0..n)
                .map(|a| (r.powf(g.exponents()[a]) / grid.spacing()[a] + 1e-9).floor() as usize)
                .collect()
        })
        .collect();
    let vals: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|flat| {
            let mut idx = vec![0usize; n];
            let mut rem = flat;
            for a in 0..n {
                idx[a] = rem / strides[a];
                rem %= strides[a];
            }
            let mut best = 0.0f64;
            let mut lo = vec![0usize; n];
            let mut hi = vec![0usize; n];
            for half in &halves {
                let mut count = 1.0;
                for a in 0..n {
                    lo[a] = idx[a].saturating_sub(half[a]);
                    hi[a] = (idx[a] + half[a]).min(counts[a] - 1) + 1;
                    count *= (hi[a] - lo[a]) as f64;
                }
                let mut s = 0.0;
                for corner in 0..(1usize << n) {
                    let mut t = 0;
                    let mut sign = 1.0;
                    for a in 0..n {
                        if corner >> a & 1 == 1 {
                            t += hi[a] * ts[a];
                        } else {
                            t += lo[a] * ts[a];
                            sign = -sign;
                        }
                    }
                    s += sign * table[t];
                }
                best = best.max(s / count);
            }
            best
        })
        .collect();
    ScalarField::from_values(grid, vals).expect("finite averages")
}

/// `T_j^α f = f ∗ A_j^α K_α^0` (smooth) or `f ∗ B_j^α Ω` (sharp).
pub fn dyadic_piece(cfg: &OperatorConfig, f: &ScalarField, j: i32, smooth: bool) -> Result<ScalarField> {
    let kind = if smooth { KernelKind::SmoothAj } else { KernelKind::SharpBj };
    dyadic_piece_kind(cfg, f, j, kind)
}

/// `f ∗ μ_j` for any dyadic kernel kind.
pub fn dyadic_piece_kind(cfg: &OperatorConfig, f: &ScalarField, j: i32, kind: KernelKind) -> Result<ScalarField> {
    if cfg.omega.is_zero() {
        return Ok(ScalarField::zeros(f.grid()));
    }
    let k = cfg.annulus(j, kind, f.grid())?;
    crate::conv::convolve(&cfg.group, f, &k, f.grid())
}

/// Discrete mass of `Δ[t]φ` over lattice offsets.
fn lattice_mass(lp: &LPCutoff, grid: &GridSpec, g: &GroupSpec, t: f64) -> f64 {
    let kern = lp.dilated(t);
    let r = kern.support().1;
    let n = grid.dim();
    let reach: Vec<i64> = (0..n)
        .map(|a| (r.powf(g.exponents()[a]) / grid.spacing()[a]).floor() as i64)
        .collect();
    let mut idx: Vec<i64> = reach.iter().map(|r| -r).collect();
    let mut z = vec![0.0; n];
    let mut sum = 0.0;
    'outer: loop {
        for a in 0..n {
            z[a] = idx[a] as f64 * grid.spacing()[a];
        }
        sum += kern.eval(&z);
        for a in (0..n).rev() {
            idx[a] += 1;
            if idx[a] <= reach[a] {
                continue 'outer;
            }
            idx[a] = -reach[a];
        }
        break;
    }
    sum * grid.cell_volume()
}

/// `f ∗ Δ[t]φ` with the kernel renormalised to unit lattice mass; when the
/// dilated bump is too small to carry half its mass on the lattice it acts as
/// the identity.
pub fn lp_smooth(cfg: &OperatorConfig, f: &ScalarField, t: f64) -> Result<ScalarField> {
    let m = lattice_mass(&cfg.lp, f.grid(), &cfg.group, t);
    if m < 0.5 {
        return Ok(f.clone());
    }
    Ok(crate::conv::convolve(&cfg.group, f, &cfg.lp.dilated(t), f.grid())?.scale(1.0 / m))
}

/// `f ∗ S_k = f ∗ Δ[2^{k−1}]φ`.
pub fn apply_s(cfg: &OperatorConfig, f: &ScalarField, k: i32) -> Result<ScalarField> {
    lp_smooth(cfg, f, 2f64.powi(k - 1))
}

/// `f ∗ Ψ_k = f ∗ S_k − f ∗ S_{k+1}`; constants are annihilated exactly on
/// abelian lattices.
pub fn apply_psi(cfg: &OperatorConfig, f: &ScalarField, k: i32) -> Result<ScalarField> {
    apply_s(cfg, f, k)?.sub(&apply_s(cfg, f, k + 1)?)
}

/// `Δ[t]φ` sampled on the grid with unit lattice mass, or a lattice delta at
/// the origin when under-resolved.
pub fn lp_field(cfg: &OperatorConfig, grid: &GridSpec, t: f64) -> Result<ScalarField> {
    let m = lattice_mass(&cfg.lp, grid, &cfg.group, t);
    if m >= 0.5 {
        let k = cfg.lp.dilated(t);
        return Ok(ScalarField::from_fn(grid, |x| k.eval(x) / m));
    }
    let zero = vec![0.0; grid.dim()];
    let i = grid
        .nearest(&zero)
        .ok_or_else(|| Error::Resolution("identity outside the grid".into()))?;
    let mut v = vec![0.0; grid.len()];
    v[i] = 1.0 / grid.cell_volume();
    ScalarField::from_values(grid, v)
}

/// Order of the factors in a composed dyadic piece.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComposeOrder {
    /// `f ∗ Ψ_k ∗ R^α ∗ μ_j`.
    PsiFirst,
    /// `f ∗ R^α ∗ μ_j ∗ Ψ_k`.
    PsiLast,
}

impl ComposeOrder {
    pub fn label(&self) -> &'static str {
        match self {
            Self::PsiFirst => "psi_first",
            Self::PsiLast => "psi_last",
        }
    }
}

/// One composed piece `f ∗ Ψ_k ∗ R^α ∗ μ_j` in either order.
pub fn composed_piece(
    cfg: &OperatorConfig,
    riesz: &RieszHandle,
    f: &ScalarField,
    k: i32,
    j: i32,
    kind: KernelKind,
    order: ComposeOrder,
) -> Result<ScalarField> {
    let g = &cfg.group;
    match order {
        ComposeOrder::PsiFirst => {
            let a = apply_psi(cfg, f, k)?;
            let b = riesz.apply(g, &a, cfg.alpha)?;
            dyadic_piece_kind(cfg, &b, j, kind)
        }
        ComposeOrder::PsiLast => {
            let a = riesz.apply(g, f, cfg.alpha)?;
            let b = dyadic_piece_kind(cfg, &a, j, kind)?;
            apply_psi(cfg, &b, k)
        }
    }
}

/// Regrouping schedule for the pieces `T̃_j^α`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regrouping {
    Plain,
    /// `T̃_j^{α,N} = Σ_{i=N(j−1)+1}^{N(j)} T̃_i^α`.
    NSchedule,
}

/// `N(0) = 0`, `N(j) = 2^j` for `j ≥ 1`.
pub fn n_schedule(j: i32) -> i64 {
    if j <= 0 {
        0
    } else {
        1i64 << j
    }
}

/// Scales `k` whose pieces reach the resolvable range of the grid.
pub fn k_window(cfg: &OperatorConfig, grid: &GridSpec) -> (i32, i32) {
    let h = rho_spacing(&cfg.group, grid);
    let inr = crate::heat::box_inradius(&cfg.group, grid);
    // A_k lives on (2^{k−1}, 2^{k+2})
    let lo = (h.log2().floor() as i32) - 2;
    let hi = (inr.log2().ceil() as i32).max(lo);
    (lo, hi)
}

/// Pieces produced with the k window actually used.
#[derive(Clone, Debug)]
pub struct WindowedField {
    pub field: ScalarField,
    pub k_range: (i32, i32),
}

/// `T̃_j^α f = Σ_k f ∗ Ψ_{k−j} ∗ R^α ∗ A_k` (`S_k` in place of `Ψ_{k−j}` at
/// `j = 0`), or its `N(j)` regrouping.
pub fn regrouped_piece(
    cfg: &OperatorConfig,
    riesz: &RieszHandle,
    f: &ScalarField,
    j: i32,
    variant: Regrouping,
    ks: Option<(i32, i32)>,
) -> Result<WindowedField> {
    if j < 0 {
        return Err(Error::InvalidParameter(format!("regrouped piece index {j} is negative")));
    }
    let k_range = ks.unwrap_or_else(|| k_window(cfg, f.grid()));
    match variant {
        Regrouping::Plain => {
            let mut acc = ScalarField::zeros(f.grid());
            for k in k_range.0..=k_range.1 {
                let a = if j == 0 { apply_s(cfg, f, k)? } else { apply_psi(cfg, f, k - j)? };
                let b = riesz.apply(&cfg.group, &a, cfg.alpha)?;
                acc.add_assign_scaled(1.0, &dyadic_piece(cfg, &b, k, true)?)?;
            }
            Ok(WindowedField { field: acc, k_range })
        }
        Regrouping::NSchedule => {
            if j == 0 {
                return regrouped_piece(cfg, riesz, f, 0, Regrouping::Plain, Some(k_range));
            }
            let mut acc = ScalarField::zeros(f.grid());
            for i in (n_schedule(j - 1) + 1)..=n_schedule(j) {
                let p = regrouped_piece(cfg, riesz, f, i as i32, Regrouping::Plain, Some(k_range))?;
                acc.add_assign_scaled(1.0, &p.field)?;
            }
            Ok(WindowedField { field: acc, k_range })
        }
    }
}

/// `G_j^α(t) f = Σ_k r_k f ∗ Ψ_{k−j} ∗ R^α ∗ μ_k` over `k ∈ [k0, k0 + signs.len())`.
pub fn randomized_sum(
    cfg: &OperatorConfig,
    riesz: &RieszHandle,
    f: &ScalarField,
    j: i32,
    k0: i32,
    signs: &[f64],
    kind: KernelKind,
) -> Result<ScalarField> {
    let mut acc = ScalarField::zeros(f.grid());
    for (i, s) in signs.iter().enumerate() {
        if *s == 0.0 {
            continue;
        }
        let k = k0 + i as i32;
        let piece = composed_piece(cfg, riesz, f, k - j, k, kind, ComposeOrder::PsiFirst)?;
        acc.add_assign_scaled(*s, &piece)?;
    }
    Ok(acc)
}

/// Kernel family for the Hörmander integral.
#[derive(Clone, Debug, PartialEq)]
pub enum HormanderVariant {
    /// `K_j = Σ_k Δ[2^{k−j}]φ ∗ R^α ∗ A_k`.
    Summed,
    /// `sup_{k,t} |K_{k,j,t}(y^{-1}x) − K_{k,j,t}(x)|` with
    /// `K_{k,j,t} = Δ[2^{k−j}]φ ∗ R^α ∗ B_{k,t}`.
    UniformSup { ts: Vec<f64> },
}

/// Hörmander integrals of one kernel family.
#[derive(Clone, Debug)]
pub struct HormanderResult {
    pub j: i32,
    pub k_range: (i32, i32),
    /// `(ρ(y), ∫_{ρ(x) ≥ 2A₀ρ(y)} |K(y^{-1}x) − K(x)| dx)`.
    pub integrals: Vec<(f64, f64)>,
    /// Largest share of a kernel's `L¹` mass on the grid boundary layer.
    pub boundary_fraction: f64,
}

/// Grid quadrature of the Hörmander integral for each `y`.
pub fn hormander_integral(
    cfg: &OperatorConfig,
    riesz: &RieszHandle,
    grid: &GridSpec,
    j: i32,
    ks: Option<(i32, i32)>,
    ys: &[Vec<f64>],
    variant: &HormanderVariant,
) -> Result<HormanderResult> {
    let g = &cfg.group;
    let k_range = ks.unwrap_or_else(|| k_window(cfg, grid));
    let mut kernels = Vec::new();
    for k in k_range.0..=k_range.1 {
        let phi = lp_field(cfg, grid, 2f64.powi(k - j))?;
        let r = riesz.apply(g, &phi, cfg.alpha)?;
        match variant {
            HormanderVariant::Summed => {
                let piece = dyadic_piece(cfg, &r, k, true)?;
                if kernels.is_empty() {
                    kernels.push(piece);
                } else {
                    kernels[0].add_assign_scaled(1.0, &piece)?;
                }
            }
            HormanderVariant::UniformSup { ts } => {
                for t in ts {
                    kernels.push(dyadic_piece_kind(cfg, &r, k, KernelKind::ParametrizedBjt(*t))?);
                }
            }
        }
    }
    let boundary_fraction = kernels.iter().map(|k| k.boundary_fraction()).fold(0.0, f64::max);
    let n = grid.dim();
    let cell = grid.cell_volume();
    let mut integrals = Vec::with_capacity(ys.len());
    for y in ys {
        if y.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.len() });
        }
        let ry = g.quasi_norm(y);
        let cut = 2.0 * g.a0() * ry;
        let mut yinv = vec![0.0; n];
        g.inv_into(y, &mut yinv);
        let terms: Vec<f64> = (0..grid.len())
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n]),
                |(x, z), i| {
                    grid.point_into(i, x);
                    if g.quasi_norm(x) < cut {
                        return 0.0;
                    }
                    g.mul_into(&yinv, x, z);
                    kernels
                        .iter()
                        .map(|k| (k.interpolate(z) - k.values()[i]).abs())
                        .fold(0.0, f64::max)
                },
            )
            .collect();
        integrals.push((ry, crate::numerics::pairwise_sum(&terms) * cell));
    }
    Ok(HormanderResult {
        j,
        k_range,
        integrals,
        boundary_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::OmegaPreset;
    use crate::polar::{SphereQuadrature, DEFAULT_SHELL};

    fn setup(alpha: f64, preset: OmegaPreset) -> (OperatorConfig, GridSpec) {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 128, DEFAULT_SHELL).unwrap();
        let om = SphereFunction::build(&g, &quad, preset, alpha.floor() as i32, true).unwrap();
        let lp = LPCutoff::with_outer(&g, &quad, 0, 1.0).unwrap();
        let cfg = OperatorConfig::new(&g, Arc::new(om), alpha, lp).unwrap();
        let grid = GridSpec::symmetric(&[2.0, 2.0], 41).unwrap();
        (cfg, grid)
    }

    fn blob(grid: &GridSpec, c: [f64; 2], s: f64) -> ScalarField {
        ScalarField::from_fn(grid, |x| {
            let r2 = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (s * s);
            if r2 < 1.0 {
                (1.0 - r2).powi(3)
            } else {
                0.0
            }
        })
    }

    #[test]
    fn under_resolved_eps_rejected() {
        let (cfg, grid) = setup(0.5, OmegaPreset::FirstCoordinate);
        let f = blob(&grid, [0.0, 0.0], 0.5);
        assert!(matches!(truncated_sio(&cfg, &f, 0.05), Err(Error::Resolution(_))));
    }

    #[test]
    fn odd_kernel_gives_odd_output() {
        let (cfg, grid) = setup(0.0, OmegaPreset::FirstCoordinate);
        let f = blob(&grid, [0.0, 0.0], 0.8);
        let (t, _) = truncated_sio(&cfg, &f, 0.3).unwrap();
        let flipped = ScalarField::from_fn(&grid, |x| t.interpolate(&[-x[0], -x[1]]));
        let asym = t.add(&flipped).unwrap().lp_norm(2.0, None).unwrap();
        let nrm = t.lp_norm(2.0, None).unwrap();
        assert!(asym < 1e-6 * nrm, "asymmetry {asym} vs {nrm}");
        assert!(t.max_abs() > 0.0);
    }

    #[test]
    fn family_matches_direct_truncation() {
        let (cfg, grid) = setup(0.5, OmegaPreset::ZonalHarmonic(2));
        let f = blob(&grid, [0.3, -0.2], 0.7);
        let eps = [0.2, 0.45, 1.1];
        let fam = truncation_family(&cfg, &f, &eps).unwrap();
        for (e, t) in eps.iter().zip(&fam) {
            let (d, _) = truncated_sio(&cfg, &f, *e).unwrap();
            assert!(d.sub(t).unwrap().max_abs() <= 1e-10 * d.max_abs().max(1e-300));
        }
        // a single-ε grid is |T_ε f|
        let (d, _) = truncated_sio(&cfg, &f, 0.45).unwrap();
        let one = truncation_family(&cfg, &f, &[0.45]).unwrap();
        assert!(one[0].map(f64::abs).sub(&d.map(f64::abs)).unwrap().max_abs() < 1e-10 * d.max_abs());
    }

    #[test]
    fn maximal_control_and_refinement() {
        let (cfg, grid) = setup(0.5, OmegaPreset::RoughRandom { seed: 3, q: 4.0 });
        let f = blob(&grid, [0.2, 0.1], 0.9).axpy(-0.5, &blob(&grid, [-0.4, 0.3], 0.4)).unwrap();
        let coarse = cfg.clone().with_eps_per_octave(2);
        let fine = cfg.clone().with_eps_per_octave(4);
        let (pc, _) = maximal_parts(&coarse, &[&f]).unwrap();
        let (pf, _) = maximal_parts(&fine, &[&f]).unwrap();
        for p in pc.iter().chain(&pf) {
            assert!(p.control_slack >= -1e-10);
            assert!(p.fractional.values().iter().all(|v| *v >= 0.0));
        }
        let tol = 1e-12 * pf[0].sharp.max_abs();
        assert!(pf[0].sharp.values().iter().zip(pc[0].sharp.values()).all(|(a, b)| *a >= b - tol));
        let neg = maximal_sio(&fine, &f.scale(-1.0)).unwrap();
        assert!(neg.sub(&pf[0].sharp).unwrap().max_abs() <= tol);
    }

    #[test]
    fn tail_is_truncation_at_next_octave() {
        let (cfg, grid) = setup(0.5, OmegaPreset::FirstCoordinate);
        let f = blob(&grid, [0.0, 0.0], 0.6);
        let (a, _) = tail_operator(&cfg, &f, -1).unwrap();
        let (b, _) = truncated_sio(&cfg, &f, 1.0).unwrap();
        assert_eq!(a.values(), b.values());
        let (far, _) = tail_operator(&cfg, &f, 6).unwrap();
        assert_eq!(far.max_abs(), 0.0);
    }

    #[test]
    fn zero_omega_gives_zero() {
        let (cfg, grid) = setup(0.5, OmegaPreset::Zero);
        let f = blob(&grid, [0.0, 0.0], 0.6);
        assert_eq!(truncated_sio(&cfg, &f, 0.3).unwrap().0.max_abs(), 0.0);
        assert_eq!(maximal_sio(&cfg, &f).unwrap().max_abs(), 0.0);
        assert_eq!(smooth_tail_operator(&cfg, &f, -1).unwrap().0.max_abs(), 0.0);
    }

    #[test]
    fn hl_maximal_of_ball_indicator() {
        for g in [GroupSpec::euclidean(2), GroupSpec::heisenberg()] {
            let grid = GridSpec::for_group(&g, 2.0, if g.dim() == 2 { 41 } else { 13 }).unwrap();
            let f = ScalarField::from_fn(&grid, |x| if g.quasi_norm(x) <= 1.0 { 1.0 } else { 0.0 });
            let radii = default_radii(&g, &grid);
            let m = hl_maximal(&g, &f, &radii).unwrap();
            for i in 0..grid.len() {
                assert!(m.values()[i] >= f.values()[i].abs() - 1e-12, "{} at {:?}: {}", g.name(), grid.point(i), m.values()[i]);
                if f.values()[i] == 1.0 {
                    assert!((m.values()[i] - 1.0).abs() < 1e-12);
                }
            }
            let m3 = hl_maximal(&g, &f.scale(-3.0), &radii).unwrap();
            assert!(m3.sub(&m.scale(3.0)).unwrap().max_abs() < 1e-12);
        }
    }

    #[test]
    fn box_and_binned_maximal_agree_on_euclidean() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 21).unwrap();
        let f = blob(&grid, [0.2, -0.3], 0.5);
        let radii = [0.05, 0.2, 0.35, 0.7];
        let boxes = hl_boxes(&g, &f.map(f64::abs), &radii);
        // reference by direct node counting
        let direct = ScalarField::from_fn(&grid, |x| {
            let mut best = 0.0f64;
            for r in radii {
                let (mut s, mut c) = (0.0, 0.0);
                for j in 0..grid.len() {
                    let y = grid.point(j);
                    if (x[0] - y[0]).abs().max((x[1] - y[1]).abs()) <= r + 1e-12 {
                        s += f.values()[j].abs();
                        c += 1.0;
                    }
                }
                best = best.max(s / c);
            }
            best
        });
        assert!(boxes.sub(&direct).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn sharp_pieces_reconstruct_truncation() {
        let (cfg, grid) = setup(0.5, OmegaPreset::FirstCoordinate);
        let f = blob(&grid, [0.1, 0.0], 0.7);
        let mut acc = ScalarField::zeros(&grid);
        for j in -2..=0 {
            acc.add_assign_scaled(1.0, &dyadic_piece(&cfg, &f, j, false).unwrap()).unwrap();
        }
        let direct = crate::conv::convolve(
            &cfg.group,
            &f,
            &RadialKernel::truncated(&cfg.group, cfg.omega.clone(), 0.5, 0.25, 2.0),
            &grid,
        )
        .unwrap();
        assert!(acc.sub(&direct).unwrap().max_abs() < 1e-10 * direct.max_abs());
    }

    #[test]
    fn psi_kills_constants_and_schedule_sums() {
        let (cfg, grid) = setup(0.5, OmegaPreset::FirstCoordinate);
        let one = ScalarField::from_fn(&grid, |_| 1.0);
        let p = apply_psi(&cfg, &one, -1).unwrap();
        // interior nodes away from the box edge see the full kernel
        let c = grid.nearest(&[0.0, 0.0]).unwrap();
        assert!(p.values()[c].abs() < 1e-12);
        assert_eq!(n_schedule(0), 0);
        assert_eq!(n_schedule(1), 2);
        assert_eq!(n_schedule(3), 8);
    }

    #[test]
    fn randomized_sum_sign_flip_and_n_schedule() {
        let g = GroupSpec::euclidean(2);
        let quad = SphereQuadrature::build(&g, 128, DEFAULT_SHELL).unwrap();
        let om = SphereFunction::build(&g, &quad, OmegaPreset::FirstCoordinate, 0, true).unwrap();
        let lp = LPCutoff::with_outer(&g, &quad, 0, 1.0).unwrap();
        let cfg = OperatorConfig::new(&g, Arc::new(om), 0.5, lp).unwrap();
        let grid = GridSpec::periodic_like(1.0 / 8.0, 16, 2).unwrap();
        let riesz = RieszHandle::new(&g, &grid, &FieldSubset::All, StencilOrder::Second).unwrap();
        let f = blob(&grid, [0.1, 0.2], 0.6);
        let signs = [1.0, -1.0];
        let a = randomized_sum(&cfg, &riesz, &f, 1, -1, &signs, KernelKind::SharpBj).unwrap();
        let b = randomized_sum(&cfg, &riesz, &f, 1, -1, &[-1.0, 1.0], KernelKind::SharpBj).unwrap();
        assert!(a.add(&b).unwrap().max_abs() == 0.0);
        assert!(a.max_abs() > 0.0);
        let ks = Some((-1, 0));
        let n1 = regrouped_piece(&cfg, &riesz, &f, 1, Regrouping::NSchedule, ks).unwrap();
        let p1 = regrouped_piece(&cfg, &riesz, &f, 1, Regrouping::Plain, ks).unwrap();
        let p2 = regrouped_piece(&cfg, &riesz, &f, 2, Regrouping::Plain, ks).unwrap();
        let sum = p1.field.add(&p2.field).unwrap();
        assert!(n1.field.sub(&sum).unwrap().max_abs() <= 1e-14 * sum.max_abs());
    }
}
