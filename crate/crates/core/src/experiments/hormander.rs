//! Hörmander integrals of the regrouped kernels `K_j` against `1 + j`.

use std::collections::BTreeMap;

use super::{Check, Experiment, ExperimentConfig, ExperimentOutput, ResultRow, Setup, Status};
use crate::error::{Error, Result};
use crate::group::GroupSpec;
use crate::heat::box_inradius;
use crate::numerics::{median, ols};
use crate::field::GridSpec;
use crate::operators::{hormander_integral, rho_spacing, HormanderVariant, OperatorConfig};
use crate::params;

const E: Experiment = Experiment::Hormander;

/// Points `y = δ_r θ` for each radius and a fixed set of unit directions
/// (coordinate axes, the diagonal and the alternating diagonal).
pub fn y_samples(g: &GroupSpec, radii: &[f64]) -> Vec<Vec<f64>> {
    let n = g.dim();
    let dil = g.dilations();
    let mut dirs: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            let mut v = vec![0.0; n];
            v[a] = 1.0;
            v
        })
        .collect();
    dirs.push(vec![1.0; n]);
    dirs.push((0..n).map(|a| if a % 2 == 0 { 1.0 } else { -1.0 }).collect());
    let mut out = Vec::new();
    for r in radii {
        for d in &dirs {
            let mut th = vec![0.0; n];
            dil.project_into(d, dil.rho(d), &mut th);
            out.push(dil.dilate(*r, &th));
        }
    }
    out
}

/// Scales `k` whose pieces the grid resolves for every `j ≤ j_max`: `A_k`
/// lives on `(2^{k−1}, 2^{k+2})` inside half the box with `2^{k−1} ≥ 2h_ρ`,
/// and `Δ[2^{k−j}]φ` has radius `outer·2^{k−j} ≥ 4h_ρ`. Empty if `lo > hi`.
pub fn hormander_k_window(op: &OperatorConfig, grid: &GridSpec, j_max: i32) -> (i32, i32) {
    let h = rho_spacing(&op.group, grid);
    let inr = box_inradius(&op.group, grid);
    let hi = (inr.log2().floor() as i32) - 2;
    let annulus = (2.0 * h).log2().ceil() as i32 + 1;
    let smoothing = j_max + (4.0 * h / op.lp.outer()).log2().ceil() as i32;
    (annulus.max(smoothing), hi)
}

pub fn run_hormander(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    for id in &cfg.groups {
        for &m in &cfg.grid_for(id).m {
            match hormander_group(cfg, id, m) {
                Ok(o) => out.extend(o),
                Err(e) => out.checks.push(Check::fail(format!("hormander {id} {m}"), &e)),
            }
        }
    }
    Ok(out)
}

fn hormander_group(cfg: &ExperimentConfig, id: &str, m: usize) -> Result<ExperimentOutput> {
    let omega = cfg.omega.first().map(String::as_str).unwrap_or("first-coordinate");
    let s = Setup::new(cfg, id, m, omega, cfg.alpha)?;
    let riesz = s.riesz()?;
    let h = rho_spacing(&s.g, &s.grid);
    let inr = box_inradius(&s.g, &s.grid);
    let [j0, j1] = cfg.window.j.unwrap_or([0, 3]);
    let ks = cfg.window.k.map(|k| (k[0], k[1])).unwrap_or_else(|| hormander_k_window(&s.op, &s.grid, j1));
    if ks.1 < ks.0 {
        return Err(Error::Resolution(format!(
            "no k resolves every piece for j up to {j1} (h_rho {h:.4}, inradius {inr:.3}): window {ks:?}"
        )));
    }
    let radii: Vec<f64> = [2.0, 4.0, 8.0]
        .iter()
        .map(|c| c * h)
        .filter(|r| 2.0 * s.g.a0() * r <= 0.5 * inr)
        .collect();
    if radii.len() < 2 {
        return Err(Error::Resolution(format!("no room for y samples: h_rho {h:.3}, inradius {inr:.3}")));
    }
    let ys = y_samples(&s.g, &radii);
    let base = params!("alpha" => cfg.alpha, "omega" => omega, "k_lo" => ks.0, "k_hi" => ks.1);
    let mut out = ExperimentOutput::default();
    let (mut xs, mut sups) = (Vec::new(), Vec::new());
    let mut all_finite = true;
    let mut trend_ok = 0usize;
    for j in j0..=j1 {
        let res = hormander_integral(&s.op, &riesz, &s.grid, j, Some(ks), &ys, &HormanderVariant::Summed)?;
        let mut by_r: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for (ry, v) in &res.integrals {
            all_finite &= v.is_finite();
            by_r.entry(ry.to_bits()).or_default().push(*v);
        }
        let meds: Vec<(f64, f64)> = by_r
            .iter()
            .map(|(r, v)| (f64::from_bits(*r), median(v).unwrap_or(0.0)))
            .collect();
        for (r, med) in &meds {
            out.rows.push(
                ResultRow::new(E, id, m, format!("{base};j={j};rho_y={r:.5}"), "integral_median", *med)
                    .with_clipping(res.boundary_fraction),
            );
        }
        if meds.windows(2).all(|w| w[1].1 >= w[0].1) {
            trend_ok += 1;
        }
        let sup = res.integrals.iter().map(|(_, v)| *v).fold(0.0, f64::max);
        out.rows.push(ResultRow::new(E, id, m, format!("{base};j={j}"), "integral_sup", sup).with_clipping(res.boundary_fraction));
        xs.push(1.0 + j as f64);
        sups.push(sup);
    }
    let fit = ols(&xs, &sups);
    let slope = fit.map(|f| f.slope).unwrap_or(f64::NAN);
    let r2 = fit.map(|f| f.r2).unwrap_or(f64::NAN);
    out.rows.push(ResultRow::new(E, id, m, base.clone(), "sup_vs_1_plus_j", slope).with_fit(fit));
    out.checks.push(Check::new(
        format!("hormander growth {id} {m}"),
        Status::from_bool(all_finite && slope >= 0.0 && fit.is_some_and(|f| f.intercept.is_finite())),
        format!("slope {slope:.4}, R2 {r2:.3}, j in [{j0}, {j1}], all finite {all_finite}"),
    ));
    let windows = (j1 - j0 + 1) as usize;
    out.checks.push(Check::new(
        format!("hormander y trend {id} {m}"),
        if trend_ok == windows { Status::Pass } else { Status::Flag },
        format!("median integral increasing in rho(y) for {trend_ok} of {windows} j"),
    ));
    // uniform variant on a (k, t) subsample
    if cfg.kinds.iter().any(|k| k == "parametrized_Bjt") {
        let sub_ks = ((ks.1 - 1).max(ks.0), ks.1);
        let ts = vec![1.0, cfg.t];
        let mut finite = true;
        for j in (j0..=j1).step_by(2) {
            let res = hormander_integral(
                &s.op,
                &riesz,
                &s.grid,
                j,
                Some(sub_ks),
                &ys,
                &HormanderVariant::UniformSup { ts: ts.clone() },
            )?;
            let sup = res.integrals.iter().map(|(_, v)| *v).fold(0.0, f64::max);
            finite &= sup.is_finite();
            out.rows.push(
                ResultRow::new(E, id, m, format!("{base};j={j};variant=uniform_sup;ts={ts:?}"), "integral_sup", sup)
                    .with_clipping(res.boundary_fraction),
            );
        }
        out.checks.push(Check::new(
            format!("hormander uniform {id} {m}"),
            Status::from_bool(finite),
            format!("sup over (k, t) finite on k {sub_ks:?}"),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn y_samples_have_requested_norms() {
        let g = GroupSpec::heisenberg();
        let ys = y_samples(&g, &[0.5, 1.0]);
        assert_eq!(ys.len(), 2 * 5);
        for (i, y) in ys.iter().enumerate() {
            let want = if i < 5 { 0.5 } else { 1.0 };
            assert!((g.quasi_norm(y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn k_window_tracks_resolution() {
        let c = ExperimentConfig::defaults(Experiment::Hormander);
        let fine = Setup::new(&c, "euclidean2", 257, "first-coordinate", 0.5).unwrap();
        assert_eq!(hormander_k_window(&fine.op, &fine.grid, 3), (-1, -1));
        let (lo, hi) = hormander_k_window(&fine.op, &fine.grid, 5);
        assert!(lo > hi);
        let coarse = Setup::new(&c, "euclidean2", 65, "first-coordinate", 0.5).unwrap();
        let (lo, hi) = hormander_k_window(&coarse.op, &coarse.grid, 3);
        assert!(lo > hi);
    }

    #[test]
    fn zero_omega_integrals_vanish() {
        let mut c = ExperimentConfig::defaults(Experiment::Hormander);
        c.omega = vec!["zero".into()];
        c.grids.get_mut("euclidean2").unwrap().m = vec![65];
        c.window.j = Some([0, 1]);
        c.kinds.clear();
        let out = run_hormander(&c).unwrap();
        let sups: Vec<f64> = out.rows.iter().filter(|r| r.quantity == "integral_sup").map(|r| r.value).collect();
        assert_eq!(sups.len(), 2);
        assert!(sups.iter().all(|v| *v == 0.0));
    }
}
