//! Group axioms, polar measure, truncation norms and the Riesz kernel oracle.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Check, Experiment, ExperimentConfig, ExperimentOutput, ResultRow, Status};
use crate::error::Result;
use crate::field::GridSpec;
use crate::group::GroupSpec;
use crate::heat::{euclidean_riesz_constant, riesz_kernel, FieldSubset, StencilOrder, SubLaplacianOp, Subordination};
use crate::kernels::{AnnulusKernel, Kernel, KernelKind, OmegaPreset, SphereFunction};
use crate::params;
use crate::polar::{ball_volume, integrate_polar, unit_ball_volume, SphereQuadrature, DEFAULT_SHELL};

const E: Experiment = Experiment::GroupCheck;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs()).max(b.abs())
}

fn vmax(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| rel(*x, *y)).fold(0.0, f64::max)
}

/// Largest violations of the group axioms and of dilation homogeneity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AxiomViolations {
    pub associativity: f64,
    pub inverse: f64,
    pub identity: f64,
    /// `δ_λ(xy) = δ_λx δ_λy`.
    pub automorphism: f64,
    /// `Q_j(δx, δy) = λ^{a_j} Q_j(x, y)`.
    pub law_homogeneity: f64,
    /// `ρ(δ_λx) = λρ(x)`.
    pub norm_homogeneity: f64,
}

impl AxiomViolations {
    pub fn max(&self) -> f64 {
        [
            self.associativity,
            self.inverse,
            self.identity,
            self.automorphism,
            self.law_homogeneity,
            self.norm_homogeneity,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Sample `samples` triples in the box `|x_j| ≤ 2^{a_j}` and dilations in `[1/4, 4]`.
pub fn axiom_violations(g: &GroupSpec, samples: usize, seed: u64) -> AxiomViolations {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.dim();
    let mut v = AxiomViolations::default();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        g.exponents()
            .iter()
            .map(|a| {
                let r = 2f64.powf(*a);
                rng.gen_range(-r..r)
            })
            .collect()
    };
    let zero = vec![0.0; n];
    for _ in 0..samples {
        let (x, y, z) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
        let lam = 2f64.powf(rng.gen_range(-2.0..2.0));
        let m = |a: &[f64], b: &[f64]| g.multiply(a, b).expect("dimensions match");
        v.associativity = v.associativity.max(vmax(&m(&m(&x, &y), &z), &m(&x, &m(&y, &z))));
        let xi = g.inverse(&x).expect("dimensions match");
        v.inverse = v.inverse.max(vmax(&m(&x, &xi), &zero)).max(vmax(&m(&xi, &x), &zero));
        v.identity = v.identity.max(vmax(&m(&x, &zero), &x)).max(vmax(&m(&zero, &x), &x));
        let d = |a: &[f64]| g.dilate(lam, a).expect("dimensions match");
        v.automorphism = v.automorphism.max(vmax(&d(&m(&x, &y)), &m(&d(&x), &d(&y))));
        let (dx, dy) = (d(&x), d(&y));
        for (j, a) in g.exponents().iter().enumerate() {
            let lhs = g.q_term(j, &dx, &dy);
            let rhs = lam.powf(*a) * g.q_term(j, &x, &y);
            v.law_homogeneity = v.law_homogeneity.max(rel(lhs, rhs));
        }
        v.norm_homogeneity = v.norm_homogeneity.max(rel(g.quasi_norm(&dx), lam * g.quasi_norm(&x)));
    }
    v
}

/// Axioms and homogeneity on every configured group.
pub fn group_check(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    for id in &cfg.groups {
        let g = GroupSpec::builtin(id)?;
        let t0 = Instant::now();
        let v = axiom_violations(&g, cfg.samples, cfg.seed);
        let secs = t0.elapsed().as_secs_f64();
        let p = params!("samples" => cfg.samples, "seed" => cfg.seed);
        for (name, val) in [
            ("associativity", v.associativity),
            ("inverse", v.inverse),
            ("identity", v.identity),
            ("automorphism", v.automorphism),
            ("law_homogeneity", v.law_homogeneity),
            ("norm_homogeneity", v.norm_homogeneity),
        ] {
            out.rows.push(ResultRow::new(E, id, 0, p.clone(), name, val));
        }
        out.rows.push(ResultRow::new(E, id, 0, p, "a0", g.a0()));
        out.checks.push(Check::new(
            format!("group axioms {id}"),
            Status::from_bool(v.max() < 1e-10 && secs < 5.0),
            format!("max violation {:.2e} over {} samples in {secs:.2}s", v.max(), cfg.samples),
        ));
    }
    Ok(out)
}

/// Polar-measure volumes, dyadic truncation norms and the Euclidean Riesz kernel.
pub fn sphere_checks(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let e = Experiment::Sphere;
    let mut vol_secs = 0.0;
    let mut vol_ok = true;
    let mut detail = Vec::new();
    for id in &cfg.groups {
        let t0 = Instant::now();
        let g = GroupSpec::builtin(id)?;
        let res = if g.dim() >= 3 { cfg.sphere_resolution.min(64) } else { cfg.sphere_resolution };
        let quad = SphereQuadrature::build(&g, res, DEFAULT_SHELL)?;
        let exact = unit_ball_volume(&g);
        let unit = ball_volume(&g, &quad, 1.0)?;
        let err = (unit / exact - 1.0).abs();
        vol_ok &= err < 0.01;
        detail.push(format!("{id} |B(0,1)| {unit:.5} (exact {exact})"));
        out.rows.push(ResultRow::new(e, id, res, params!("r" => 1), "ball_volume", unit).with_quad_error(err));
        if !g.is_abelian() {
            let mut worst: f64 = 0.0;
            for r in [0.25, 0.5, 1.5, 2.0, 3.0] {
                let v = ball_volume(&g, &quad, r)?;
                let scaling = (v / (r.powf(g.q_hom()) * unit) - 1.0).abs();
                worst = worst.max(scaling);
                out.rows.push(ResultRow::new(e, id, res, params!("r" => r), "ball_volume", v).with_quad_error(scaling));
            }
            vol_ok &= worst < 0.01;
            detail.push(format!("{id} scaling error {worst:.2e}"));
        }
        vol_secs += t0.elapsed().as_secs_f64();
        truncation_norms(&g, &quad, id, res, &mut out)?;
    }
    out.checks.push(Check::new(
        "polar measure",
        Status::from_bool(vol_ok && vol_secs < 30.0),
        format!("{} in {vol_secs:.1}s", detail.join("; ")),
    ));
    out.extend(riesz_oracle(cfg)?);
    Ok(out)
}

fn truncation_norms(g: &GroupSpec, quad: &SphereQuadrature, id: &str, res: usize, out: &mut ExperimentOutput) -> Result<()> {
    let e = Experiment::Sphere;
    let t0 = Instant::now();
    let mut sharp_err: f64 = 0.0;
    let mut smooth_spread: f64 = 1.0;
    for alpha in [0.3f64, 0.5, 1.2] {
        let om = Arc::new(SphereFunction::build(g, quad, OmegaPreset::FirstCoordinate, alpha.floor() as i32, true)?);
        let mut smooth = Vec::new();
        for j in -3..=3 {
            let s = 2f64.powi(j);
            let sharp = AnnulusKernel::new(g, om.clone(), alpha, j, KernelKind::SharpBj, None)?;
            let num = integrate_polar(g, quad, |x| sharp.eval(x).abs(), s * (1.0 + 1e-8), 2.0 * s, 64)?;
            let closed = AnnulusKernel::sharp_norm_closed_form(om.l1_norm(), alpha, j);
            let err = (num / closed - 1.0).abs();
            sharp_err = sharp_err.max(err);
            let p = params!("alpha" => alpha, "j" => j);
            out.rows.push(ResultRow::new(e, id, res, p.clone(), "sharp_norm_scaled", num * 2f64.powf(alpha * j as f64)).with_quad_error(err));
            let a = AnnulusKernel::new(g, om.clone(), alpha, j, KernelKind::SmoothAj, None)?;
            let sm = integrate_polar(g, quad, |x| a.eval(x).abs(), 0.5 * s, 4.0 * s, 64)? * 2f64.powf(alpha * j as f64);
            smooth.push(sm);
            out.rows.push(ResultRow::new(e, id, res, p, "smooth_norm_scaled", sm));
        }
        let (lo, hi) = smooth.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        smooth_spread = smooth_spread.max(hi / lo);
    }
    out.checks.push(Check::new(
        format!("truncation norms {id}"),
        Status::from_bool(sharp_err < 0.01 && smooth_spread < 1.2 && t0.elapsed().as_secs_f64() < 60.0),
        format!("sharp max rel err {sharp_err:.2e}, smooth j-spread {:.3}", smooth_spread - 1.0),
    ));
    Ok(())
}

/// `R^α` on ℝ³ (64³ nodes, spacing 5/64, fourth-order stencil) against
/// `c_{3,α}|x|^{α−3}` on `ρ ∈ [0.5, 2]`.
fn riesz_oracle(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let e = Experiment::Sphere;
    let m = cfg.grid_for("euclidean3").m.first().copied().unwrap_or(64);
    let g = GroupSpec::euclidean(3);
    let h = 5.0 / m as f64;
    let grid = GridSpec::periodic_like(h, m / 2, 3)?;
    let op = SubLaplacianOp::new(&g, &grid, &FieldSubset::All, StencilOrder::Fourth)?;
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for alpha in [0.5, 1.0] {
        let rk = riesz_kernel(&g, &op, alpha, &Subordination::default())?;
        let c = euclidean_riesz_constant(3, alpha);
        let mut err: f64 = 0.0;
        for i in 0..grid.len() {
            let x = grid.point(i);
            let r = g.quasi_norm(&x);
            if (0.5..=2.0).contains(&r) {
                let e2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                let exact = c * e2.powf(alpha - 3.0);
                err = err.max((rk.field.values()[i] / exact - 1.0).abs());
            }
        }
        worst = worst.max(err);
        out.rows.push(
            ResultRow::new(e, "euclidean3", m, params!("alpha" => alpha), "riesz_max_rel_error", err)
                .with_quad_error(rk.tail_share),
        );
    }
    let secs = t0.elapsed().as_secs_f64();
    out.checks.push(Check::new(
        "riesz subordination",
        Status::from_bool(worst < 0.02 && secs < 120.0),
        format!("max rel err {worst:.2e} on rho in [0.5, 2] at {m}^3 in {secs:.1}s"),
    ));
    Ok(out)
}
