//! Band-limited `L²` decay of `Ψ_k ∗ R^α ∗ μ_j` in `|j − k|`.
//!
//! Each random field is first projected to the band of `Ψ_k` (`f_k = f ∗ Ψ_k`),
//! so the ratio `‖f_k ∗ Ψ_k ∗ R^α ∗ μ_j‖₂ / ‖f_k‖₂` probes the operator on
//! that band rather than the spectrum of `f`.

use std::collections::BTreeMap;

use super::{random_bumps, sample_seed, Check, Experiment, ExperimentConfig, ExperimentOutput, ResultRow, Setup, Status};
use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::heat::box_inradius;
use crate::kernels::KernelKind;
use crate::numerics::{median, ols};
use crate::operators::{apply_psi, dyadic_piece_kind, rho_spacing, ComposeOrder, OperatorConfig};
use crate::params;

const E: Experiment = Experiment::Decay;

/// Kernel kinds that must show clean decay for each composition order.
pub const MIN_KINDS: usize = 2;

/// `(j, k)` pairs with `|j − k| ≤ max_gap` whose pieces the grid resolves:
/// `2h_ρ ≤ 2^j`, `2^{j+1} ≤ inradius/2`, and the support of `Ψ_k`
/// (`outer·2^k/4 ≤ ρ ≤ outer·2^k`) between `h_ρ` and `inradius/2`.
pub fn decay_window(
    cfg: &OperatorConfig,
    grid: &GridSpec,
    max_gap: i32,
    j_fixed: Option<[i32; 2]>,
    k_fixed: Option<[i32; 2]>,
) -> Result<Vec<(i32, i32)>> {
    let h = rho_spacing(&cfg.group, grid);
    let half = 0.5 * box_inradius(&cfg.group, grid);
    let outer = cfg.lp.outer();
    let js = j_fixed.unwrap_or([(2.0 * h).log2().ceil() as i32, (half.log2() - 1.0).floor() as i32]);
    let ks = k_fixed.unwrap_or([(4.0 * h / outer).log2().ceil() as i32, (half / outer).log2().floor() as i32]);
    let mut pairs = Vec::new();
    for j in js[0]..=js[1] {
        for k in ks[0]..=ks[1] {
            if (j - k).abs() <= max_gap {
                pairs.push((j, k));
            }
        }
    }
    let mut gaps: Vec<i32> = pairs.iter().map(|(j, k)| (j - k).abs()).collect();
    gaps.sort_unstable();
    gaps.dedup();
    if gaps.len() < 3 {
        return Err(Error::Resolution(format!(
            "decay window j {js:?}, k {ks:?} gives {} distinct gaps (h_rho {h:.3}, inradius/2 {half:.3}); at least 3 needed",
            gaps.len()
        )));
    }
    Ok(pairs)
}

fn parse_order(s: &str) -> Result<ComposeOrder> {
    match s {
        "psi_first" => Ok(ComposeOrder::PsiFirst),
        "psi_last" => Ok(ComposeOrder::PsiLast),
        _ => Err(Error::Config(format!("unknown composition order {s}"))),
    }
}

/// Ratios per `(kind, order, j, k)`, one entry per random field.
type Ratios = BTreeMap<(String, &'static str, i32, i32), Vec<f64>>;

pub fn run_decay(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let mut out = ExperimentOutput::default();
    let kinds: Vec<KernelKind> = cfg.kinds.iter().map(|k| KernelKind::parse(k, cfg.t)).collect::<Result<_>>()?;
    let orders: Vec<ComposeOrder> = cfg.orders.iter().map(|o| parse_order(o)).collect::<Result<_>>()?;
    if orders.is_empty() {
        return Err(Error::Config("both composition orders must be listed explicitly".into()));
    }
    for id in &cfg.groups {
        for &m in &cfg.grid_for(id).m {
            match decay_group(cfg, id, m, &kinds, &orders) {
                Ok(o) => out.extend(o),
                Err(e) => out.checks.push(Check::fail(format!("decay {id} {m}"), &e)),
            }
        }
    }
    Ok(out)
}

fn decay_group(cfg: &ExperimentConfig, id: &str, m: usize, kinds: &[KernelKind], orders: &[ComposeOrder]) -> Result<ExperimentOutput> {
    let omega = cfg.omega.first().map(String::as_str).unwrap_or("first-coordinate");
    let s = Setup::new(cfg, id, m, omega, cfg.alpha)?;
    let pairs = decay_window(&s.op, &s.grid, cfg.window.max_gap, cfg.window.j, cfg.window.k)?;
    let riesz = s.riesz()?;
    let g = &s.g;
    let mut ks: Vec<i32> = pairs.iter().map(|p| p.1).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut ratios: Ratios = BTreeMap::new();
    let mut clip: f64 = 0.0;
    for i in 0..cfg.samples {
        let f = random_bumps(g, &s.grid, sample_seed(cfg, 1, i));
        for &k in &ks {
            let fk = apply_psi(&s.op, &f, k)?;
            let n0 = fk.lp_norm(2.0, None)?;
            if n0 == 0.0 {
                continue;
            }
            for &order in orders {
                let base = match order {
                    ComposeOrder::PsiFirst => riesz.apply(g, &apply_psi(&s.op, &fk, k)?, s.op.alpha)?,
                    ComposeOrder::PsiLast => riesz.apply(g, &fk, s.op.alpha)?,
                };
                for kind in kinds {
                    for &(j, _) in pairs.iter().filter(|p| p.1 == k) {
                        let piece = dyadic_piece_kind(&s.op, &base, j, *kind)?;
                        let piece = match order {
                            ComposeOrder::PsiFirst => piece,
                            ComposeOrder::PsiLast => apply_psi(&s.op, &piece, k)?,
                        };
                        clip = clip.max(piece.boundary_fraction());
                        ratios
                            .entry((kind.label().to_string(), order.label(), j, k))
                            .or_default()
                            .push(piece.lp_norm(2.0, None)? / n0);
                    }
                }
            }
        }
    }
    let mut out = ExperimentOutput::default();
    let base_params = params!("alpha" => cfg.alpha, "omega" => omega, "lp_outer" => cfg.lp.outer, "samples" => cfg.samples);
    // group rows by (kind, order) for the fits
    let mut fits: BTreeMap<(String, &'static str), (Vec<f64>, Vec<f64>, Vec<(i32, f64)>)> = BTreeMap::new();
    for ((kind, order, j, k), vals) in &ratios {
        let max = vals.iter().copied().fold(0.0, f64::max);
        let med = median(vals).unwrap_or(0.0);
        let p = format!("{base_params};kind={kind};order={order};j={j};k={k}");
        out.rows.push(ResultRow::new(E, id, m, p.clone(), "ratio_max", max).with_clipping(clip));
        out.rows.push(ResultRow::new(E, id, m, p, "ratio_median", med).with_clipping(clip));
        let e = fits.entry((kind.clone(), order)).or_default();
        if max > 0.0 {
            e.0.push((j - k).abs() as f64);
            e.1.push(max.log2());
        }
        e.2.push(((j - k).abs(), med));
    }
    let mut passing: BTreeMap<&'static str, usize> = BTreeMap::new();
    for ((kind, order), (x, y, meds)) in &fits {
        let fit = ols(x, y);
        let tau = fit.map(|f| -f.slope).unwrap_or(f64::NAN);
        let r2 = fit.map(|f| f.r2).unwrap_or(0.0);
        let p = format!("{base_params};kind={kind};order={order}");
        out.rows.push(ResultRow::new(E, id, m, p.clone(), "tau_hat", tau).with_fit(fit).with_clipping(clip));
        let mean_at = |gap: i32| {
            let v: Vec<f64> = meds.iter().filter(|(d, _)| *d == gap).map(|(_, v)| *v).collect();
            if v.is_empty() {
                f64::NAN
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        let (m0, m3) = (mean_at(0), mean_at(3));
        if m0.is_finite() && m3.is_finite() {
            out.rows.push(ResultRow::new(E, id, m, p, "median_gap0_over_gap3", m0 / m3));
        }
        let ok = tau > 0.0 && r2 > 0.9;
        *passing.entry(*order).or_default() += usize::from(ok);
        out.checks.push(Check::new(
            format!("decay {id} {m} {kind} {order}"),
            Status::from_bool(ok),
            format!("tau_hat {tau:.3}, R2 {r2:.3}, {} pairs", x.len()),
        ));
    }
    for order in orders {
        let n = passing.get(order.label()).copied().unwrap_or(0);
        out.checks.push(Check::new(
            format!("decay kinds {id} {m} {}", order.label()),
            Status::from_bool(n >= MIN_KINDS),
            format!("{n} of {} kinds decay with R2 > 0.9", kinds.len()),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: &str, m: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::defaults(Experiment::Decay);
        c.groups = vec![id.into()];
        c.grids.get_mut(id).unwrap().m = vec![m];
        c.samples = 1;
        c
    }

    #[test]
    fn window_respects_resolution() {
        let c = small("euclidean2", 256);
        let s = Setup::new(&c, "euclidean2", 256, "first-coordinate", 0.5).unwrap();
        let pairs = decay_window(&s.op, &s.grid, 4, None, None).unwrap();
        assert!(pairs.iter().all(|(j, k)| (j - k).abs() <= 4));
        assert!(pairs.contains(&(-1, -3)));
        let coarse = small("heisenberg", 24);
        let s = Setup::new(&coarse, "heisenberg", 24, "first-coordinate", 0.5).unwrap();
        assert!(matches!(decay_window(&s.op, &s.grid, 4, None, None), Err(Error::Resolution(_))));
    }

    #[test]
    fn zero_omega_gives_zero_norms() {
        let mut c = small("euclidean2", 64);
        c.omega = vec!["zero".into()];
        c.window.j = Some([-2, -1]);
        c.window.k = Some([-4, -2]);
        let out = run_decay(&c).unwrap();
        let ratios: Vec<f64> = out.rows.iter().filter(|r| r.quantity == "ratio_max").map(|r| r.value).collect();
        assert!(!ratios.is_empty());
        assert!(ratios.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn missing_orders_rejected() {
        let mut c = small("euclidean2", 64);
        c.orders.clear();
        assert!(run_decay(&c).is_err());
    }
}
