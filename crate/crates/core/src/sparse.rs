//! Dyadic cubes, Calderón–Zygmund decomposition, sparse families and
//! pointwise sparse bounds.
//!
//! Cubes are index boxes of the grid. A child splits axis `j` into `2^{a_j}`
//! nearly equal parts, so side lengths shrink like `2^{−a_j}` per level and
//! every cube stays comparable to a quasi-ball.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField};
use crate::group::GroupSpec;
use crate::numerics::percentile;
use crate::weights::ball_nodes;

/// Half-open index box `[lo, hi)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cube {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub level: u32,
}

impl Cube {
    pub fn root(grid: &GridSpec) -> Self {
        Self {
            lo: vec![0; grid.dim()],
            hi: grid.counts().to_vec(),
            level: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_leaf(&self) -> bool {
        self.len() == 1
    }

    pub fn contains_cube(&self, other: &Cube) -> bool {
        (0..self.lo.len()).all(|a| self.lo[a] <= other.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn contains_index(&self, idx: &[usize]) -> bool {
        (0..self.lo.len()).all(|a| self.lo[a] <= idx[a] && idx[a] < self.hi[a])
    }

    /// `2^{a_j}` pieces per axis (fewer when the axis is short).
    pub fn children(&self, g: &GroupSpec) -> Vec<Cube> {
        let n = self.lo.len();
        let cuts: Vec<Vec<usize>> = (0..n)
            .map(|a| {
                let len = self.hi[a] - self.lo[a];
                let parts = (2f64.powf(g.exponents()[a].round().max(1.0)) as usize).min(len).max(1);
                (0..=parts).map(|i| self.lo[a] + i * len / parts).collect()
            })
            .collect();
        let total: usize = cuts.iter().map(|c| c.len() - 1).product();
        let mut out = Vec::with_capacity(total);
        for mut t in 0..total {
            let mut lo = vec![0; n];
            let mut hi = vec![0; n];
            for a in (0..n).rev() {
                let k = cuts[a].len() - 1;
                let i = t % k;
                t /= k;
                lo[a] = cuts[a][i];
                hi[a] = cuts[a][i + 1];
            }
            out.push(Cube { lo, hi, level: self.level + 1 });
        }
        out
    }

    pub fn for_each(&self, grid: &GridSpec, mut f: impl FnMut(usize)) {
        let n = self.lo.len();
        if self.is_empty() {
            return;
        }
        let mut idx = self.lo.clone();
        'outer: loop {
            f(grid.flat_index(&idx));
            for a in (0..n).rev() {
                idx[a] += 1;
                if idx[a] < self.hi[a] {
                    continue 'outer;
                }
                idx[a] = self.lo[a];
            }
            break;
        }
    }

    pub fn sum(&self, grid: &GridSpec, v: &[f64]) -> f64 {
        let mut s = 0.0;
        self.for_each(grid, |i| s += v[i]);
        s
    }

    pub fn center(&self, grid: &GridSpec) -> Vec<f64> {
        (0..self.lo.len())
            .map(|a| 0.5 * (grid.coord(a, self.lo[a]) + grid.coord(a, self.hi[a] - 1)))
            .collect()
    }

    /// Smallest `r` with every node of the cube in `B(center, r)`.
    pub fn ball_radius(&self, g: &GroupSpec, grid: &GridSpec) -> f64 {
        let c = self.center(grid);
        let mut cinv = vec![0.0; c.len()];
        g.inv_into(&c, &mut cinv);
        let mut z = vec![0.0; c.len()];
        let mut r = 0.0f64;
        self.for_each(grid, |i| {
            g.mul_into(&cinv, &grid.point(i), &mut z);
            r = r.max(g.quasi_norm(&z));
        });
        r
    }
}

/// Ball `B(center, radius)` attached to a cube.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Calderón–Zygmund decomposition at height `β` over the dyadic cubes.
#[derive(Clone, Debug)]
pub struct CZDecomposition {
    pub beta: f64,
    pub good: ScalarField,
    pub cubes: Vec<Cube>,
    pub balls: Vec<Ball>,
    /// `b_i = (f − ⟨f⟩_{Q_i}) χ_{Q_i}`, stored on the cube nodes.
    pub bad: Vec<Vec<f64>>,
    /// `β` not above the global average: the root cube itself was selected.
    pub whole_domain: bool,
}

/// Measured constants of properties (i)–(v).
#[derive(Clone, Debug, PartialEq)]
pub struct CZCheck {
    /// `max |f − g − Σ b_i|`.
    pub reconstruction: f64,
    /// `‖g‖_∞ / β`.
    pub good_sup: f64,
    /// `‖g‖₁ / ‖f‖₁`.
    pub good_l1: f64,
    /// Largest number of doubled balls `2B_i` through one node.
    pub overlap: usize,
    /// Every `b_i` vanishes off its cube.
    pub support_ok: bool,
    /// `max_i ∫|b_i| / (β|Q_i|)`.
    pub bad_l1: f64,
    /// `β Σ|Q_i| / ‖f‖₁`.
    pub total_measure: f64,
    /// `max_i |∫ b_i| / (β|Q_i|)`.
    pub mean_zero: f64,
}

impl CZCheck {
    /// Largest of the size constants.
    pub fn constant(&self) -> f64 {
        self.good_sup.max(self.good_l1).max(self.bad_l1).max(self.total_measure)
    }
}

/// Stopping-time selection of the maximal cubes with `⟨|f|⟩_Q > β`.
pub fn cz_decompose(g: &GroupSpec, f: &ScalarField, beta: f64) -> Result<CZDecomposition> {
    if !(beta > 0.0) {
        return Err(Error::InvalidParameter(format!("height {beta} must be positive")));
    }
    let grid = f.grid();
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut cubes = Vec::new();
    let mut stack = vec![Cube::root(grid)];
    let mut whole_domain = false;
    while let Some(q) = stack.pop() {
        let avg = q.sum(grid, &abs) / q.len() as f64;
        if avg > beta {
            if q.level == 0 {
                whole_domain = true;
                log::warn!("height {beta} below the global average {avg}: the whole domain is selected");
            }
            cubes.push(q);
        } else if !q.is_leaf() {
            stack.extend(q.children(g));
        }
    }
    cubes.sort_by(|a, b| (a.level, &a.lo).cmp(&(b.level, &b.lo)));
    let mut good = f.values().to_vec();
    let mut bad = Vec::with_capacity(cubes.len());
    for q in &cubes {
        let avg = q.sum(grid, f.values()) / q.len() as f64;
        let mut b = Vec::with_capacity(q.len());
        q.for_each(grid, |i| {
            b.push(f.values()[i] - avg);
            good[i] = avg;
        });
        bad.push(b);
    }
    let balls = cubes
        .iter()
        .map(|q| Ball {
            center: q.center(grid),
            radius: q.ball_radius(g, grid),
        })
        .collect();
    Ok(CZDecomposition {
        beta,
        good: ScalarField::from_values(grid, good)?,
        cubes,
        balls,
        bad,
        whole_domain,
    })
}

impl CZDecomposition {
    /// Measure properties (i)–(v) against `f`.
    pub fn check(&self, g: &GroupSpec, f: &ScalarField) -> CZCheck {
        let grid = f.grid();
        let cell = grid.cell_volume();
        let mut recon = self.good.values().to_vec();
        let mut support_ok = true;
        let mut bad_l1: f64 = 0.0;
        let mut mean_zero: f64 = 0.0;
        let mut measure = 0.0;
        for (q, b) in self.cubes.iter().zip(&self.bad) {
            let mut k = 0;
            q.for_each(grid, |i| {
                recon[i] += b[k];
                k += 1;
            });
            support_ok &= k == b.len();
            let vol = q.len() as f64 * cell;
            let l1: f64 = b.iter().map(|v| v.abs()).sum::<f64>() * cell;
            let int: f64 = b.iter().sum::<f64>() * cell;
            bad_l1 = bad_l1.max(l1 / (self.beta * vol));
            mean_zero = mean_zero.max(int.abs() / (self.beta * vol));
            measure += vol;
        }
        let reconstruction = recon
            .iter()
            .zip(f.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let f1 = f.lp_norm(1.0, None).unwrap_or(0.0);
        let g1 = self.good.lp_norm(1.0, None).unwrap_or(0.0);
        let mut cover = vec![0usize; grid.len()];
        for b in &self.balls {
            for i in ball_nodes(g, grid, &b.center, 2.0 * b.radius) {
                cover[i] += 1;
            }
        }
        CZCheck {
            reconstruction,
            good_sup: self.good.max_abs() / self.beta,
            good_l1: if f1 > 0.0 { g1 / f1 } else { 0.0 },
            overlap: cover.into_iter().max().unwrap_or(0),
            support_ok,
            bad_l1,
            total_measure: if f1 > 0.0 { self.beta * measure / f1 } else { 0.0 },
            mean_zero,
        }
    }
}

/// A sparse family of cubes with their balls and major subsets.
#[derive(Clone, Debug)]
pub struct SparseFamily {
    pub cubes: Vec<Cube>,
    pub balls: Vec<Ball>,
    /// Parent index in `cubes` (`None` for the root).
    pub parents: Vec<Option<usize>>,
    /// `|E_Q| / |Q|` for each cube, with `E_Q = Q ∖ ⋃ children`.
    pub major_share: Vec<f64>,
    pub eta: f64,
    pub lambda: f64,
}

/// Iterated stopping time: the children of `P` are the maximal dyadic
/// subcubes with `⟨|f|⟩_Q > Λ ⟨|f|⟩_P`.
pub fn build_sparse_family(g: &GroupSpec, f: &ScalarField, lambda: f64) -> Result<SparseFamily> {
    if !(lambda > 1.0) {
        return Err(Error::InvalidParameter(format!("stopping ratio {lambda} must exceed 1")));
    }
    let grid = f.grid();
    let abs: Vec<f64> = f.values().iter().map(|v| v.abs()).collect();
    let mut cubes = vec![Cube::root(grid)];
    let mut parents = vec![None];
    let mut covered = vec![0usize];
    let mut next = 0;
    while next < cubes.len() {
        let p = cubes[next].clone();
        let avg_p = p.sum(grid, &abs) / p.len() as f64;
        if avg_p > 0.0 {
            let mut stack = if p.is_leaf() { Vec::new() } else { p.children(g) };
            while let Some(q) = stack.pop() {
                let avg = q.sum(grid, &abs) / q.len() as f64;
                if avg > lambda * avg_p {
                    covered[next] += q.len();
                    cubes.push(q);
                    parents.push(Some(next));
                    covered.push(0);
                } else if !q.is_leaf() {
                    stack.extend(q.children(g));
                }
            }
        }
        next += 1;
    }
    let major_share: Vec<f64> = cubes
        .iter()
        .zip(&covered)
        .map(|(q, c)| 1.0 - *c as f64 / q.len() as f64)
        .collect();
    let eta = major_share.iter().copied().fold(1.0, f64::min);
    let balls = cubes
        .iter()
        .map(|q| Ball {
            center: q.center(grid),
            radius: q.ball_radius(g, grid),
        })
        .collect();
    Ok(SparseFamily {
        cubes,
        balls,
        parents,
        major_share,
        eta,
        lambda,
    })
}

impl SparseFamily {
    /// Text table: `radius center… share`, one ball per line.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# sparse family eta={} lambda={}", self.eta, self.lambda)?;
        for (b, s) in self.balls.iter().zip(&self.major_share) {
            write!(out, "{:e}", b.radius)?;
            for c in &b.center {
                write!(out, " {c:e}")?;
            }
            writeln!(out, " {s:e}")?;
        }
        Ok(())
    }

    /// Major subsets are disjoint by construction; this recomputes them on
    /// the grid and checks disjointness and the `η` floor.
    pub fn verify(&self, grid: &GridSpec) -> bool {
        let mut owner: Vec<Option<usize>> = vec![None; grid.len()];
        // deepest cube containing each node
        for (k, q) in self.cubes.iter().enumerate() {
            q.for_each(grid, |i| match owner[i] {
                Some(o) if self.cubes[o].level >= q.level => {}
                _ => owner[i] = Some(k),
            });
        }
        let mut counts = vec![0usize; self.cubes.len()];
        for o in owner.into_iter().flatten() {
            counts[o] += 1;
        }
        let nested = self
            .parents
            .iter()
            .enumerate()
            .all(|(k, p)| p.is_none_or(|p| self.cubes[p].contains_cube(&self.cubes[k])));
        nested
            && self
                .cubes
                .iter()
                .zip(&counts)
                .zip(&self.major_share)
                .all(|((q, c), s)| (*c as f64 / q.len() as f64 - s).abs() < 1e-12 && *s >= self.eta - 1e-12)
    }
}

/// `A_S f = Σ_{B∈S} ⟨|f|⟩_B χ_B` with grid-node averages over the balls.
pub fn sparse_operator(g: &GroupSpec, s: &SparseFamily, f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let parts: Vec<(Vec<usize>, f64)> = s
        .balls
        .par_iter()
        .map(|b| {
            let nodes = ball_nodes(g, grid, &b.center, b.radius);
            let avg = if nodes.is_empty() {
                0.0
            } else {
                nodes.iter().map(|i| f.values()[*i].abs()).sum::<f64>() / nodes.len() as f64
            };
            (nodes, avg)
        })
        .collect();
    let mut out = vec![0.0; grid.len()];
    for (nodes, avg) in parts {
        for i in nodes {
            out[i] += avg;
        }
    }
    ScalarField::from_values(grid, out).expect("finite averages")
}

/// Sampling of balls and points for the grand maximal operator.
#[derive(Clone, Debug, PartialEq)]
pub struct GrandMaximalSampling {
    /// Every `stride`-th node per axis is a ball centre.
    pub stride: usize,
    /// Ball radii.
    pub radii: Vec<f64>,
    /// Points `ξ` per ball.
    pub xi_per_ball: usize,
    pub seed: u64,
}

/// `C_{A₀} = 4A₀²`.
pub fn default_c_a0(g: &GroupSpec) -> f64 {
    4.0 * g.a0() * g.a0()
}

/// `M_T f(x) = sup_{B ∋ x} max_{ξ ∈ B} |T(f χ_{H ∖ C_{A₀}B})(ξ)|` over sampled
/// balls and points.
pub fn grand_maximal(
    g: &GroupSpec,
    t: &(dyn Fn(&ScalarField) -> Result<ScalarField> + Sync),
    f: &ScalarField,
    c_a0: f64,
    sampling: &GrandMaximalSampling,
) -> Result<ScalarField> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let grid = f.grid();
    let sampler = crate::weights::BallSampler {
        stride: sampling.stride,
        radii_per_octave: 1,
        min_radius_steps: 1.0,
    };
    let centers = sampler.centers(grid);
    let balls: Vec<(usize, f64)> = centers
        .iter()
        .flat_map(|c| sampling.radii.iter().map(move |r| (*c, *r)))
        .collect();
    let results: Vec<(Vec<usize>, f64)> = balls
        .par_iter()
        .enumerate()
        .map(|(bi, (c, r))| -> Result<(Vec<usize>, f64)> {
            let x = grid.point(*c);
            let nodes = ball_nodes(g, grid, &x, *r);
            let mut mask = vec![1.0; grid.len()];
            for i in ball_nodes(g, grid, &x, c_a0 * r) {
                mask[i] = 0.0;
            }
            let masked = ScalarField::from_values(
                grid,
                f.values().iter().zip(&mask).map(|(a, m)| a * m).collect(),
            )?;
            let tf = t(&masked)?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(sampling.seed ^ (bi as u64).wrapping_mul(0x9e37));
            let xi: Vec<usize> = nodes
                .choose_multiple(&mut rng, sampling.xi_per_ball.max(1))
                .copied()
                .collect();
            let v = xi.iter().map(|i| tf.values()[*i].abs()).fold(0.0, f64::max);
            Ok((nodes, v))
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0f64; grid.len()];
    for (nodes, v) in results {
        for i in nodes {
            out[i] = out[i].max(v);
        }
    }
    ScalarField::from_values(grid, out)
}

/// Pointwise ratios `|T f| / A_S(|f|)` where `A_S > 0`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DominationReport {
    pub points: usize,
    pub p99: f64,
    pub p100: f64,
    pub median: f64,
    pub eta: f64,
}

/// Compare `|T f|` with the sparse bound from `S`.
pub fn verify_sparse_domination(
    g: &GroupSpec,
    t: &(dyn Fn(&ScalarField) -> Result<ScalarField> + Sync),
    f: &ScalarField,
    s: &SparseFamily,
) -> Result<DominationReport> {
    if s.cubes.is_empty() {
        return Err(Error::InvalidParameter("empty sparse family".into()));
    }
    if f.max_abs() == 0.0 {
        return Ok(DominationReport {
            eta: s.eta,
            ..DominationReport::default()
        });
    }
    let tf = t(f)?;
    let a = sparse_operator(g, s, f);
    let ratios: Vec<f64> = tf
        .values()
        .iter()
        .zip(a.values())
        .filter(|(_, a)| **a > 0.0)
        .map(|(t, a)| t.abs() / a)
        .collect();
    Ok(DominationReport {
        points: ratios.len(),
        p99: percentile(&ratios, 99.0).unwrap_or(0.0),
        p100: ratios.iter().copied().fold(0.0, f64::max),
        median: percentile(&ratios, 50.0).unwrap_or(0.0),
        eta: s.eta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_field(grid: &GridSpec, seed: u64) -> ScalarField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(-0.6..0.6),
                    rng.gen_range(0.1..0.4),
                    rng.gen_range(-2.0..2.0),
                )
            })
            .collect();
        ScalarField::from_fn(grid, |x| {
            bumps
                .iter()
                .map(|(a, b, s, c)| {
                    let r2 = ((x[0] - a).powi(2) + (x[1] - b).powi(2)) / (s * s);
                    if r2 < 1.0 {
                        c * (1.0 - r2).powi(2)
                    } else {
                        0.0
                    }
                })
                .sum()
        })
    }

    #[test]
    fn children_tile_the_parent() {
        let g = GroupSpec::heisenberg();
        let grid = GridSpec::for_group(&g, 1.0, 13).unwrap();
        let root = Cube::root(&grid);
        let kids = root.children(&g);
        assert_eq!(kids.len(), 2 * 2 * 4);
        assert_eq!(kids.iter().map(|k| k.len()).sum::<usize>(), root.len());
        assert!(kids.iter().all(|k| root.contains_cube(k)));
    }

    #[test]
    fn cz_properties_hold() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 64).unwrap();
        let f = random_field(&grid, 5);
        let avg = f.lp_norm(1.0, None).unwrap() / 4.0;
        for mult in [2.0, 5.0, 20.0] {
            let beta = mult * avg;
            let cz = cz_decompose(&g, &f, beta).unwrap();
            let c = cz.check(&g, &f);
            assert!(c.reconstruction < 1e-12);
            assert!(c.support_ok);
            assert!(c.mean_zero < 1e-8);
            assert!(c.constant() <= 8.0, "{c:?}");
        }
        let big = cz_decompose(&g, &f, 2.0 * f.max_abs()).unwrap();
        assert!(big.cubes.is_empty());
        assert_eq!(big.good.values(), f.values());
        let tiny = cz_decompose(&g, &f, 1e-3 * avg).unwrap();
        assert!(tiny.whole_domain);
    }

    #[test]
    fn sparse_family_of_constant_is_root() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 16).unwrap();
        let one = ScalarField::from_fn(&grid, |_| 1.0);
        let s = build_sparse_family(&g, &one, 4.0).unwrap();
        assert_eq!(s.cubes.len(), 1);
        assert_eq!(s.eta, 1.0);
        assert!(s.verify(&grid));
    }

    #[test]
    fn sparse_family_eta_floor() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 64).unwrap();
        for seed in 0..5 {
            let f = random_field(&grid, seed);
            let s = build_sparse_family(&g, &f, 4.0).unwrap();
            assert!(s.eta >= 1.0 - 1.0 / 4.0 - 0.05, "eta {}", s.eta);
            assert!(s.verify(&grid));
        }
    }

    #[test]
    fn sparse_operator_basics() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 33).unwrap();
        let ball = Ball {
            center: vec![0.0, 0.0],
            radius: 0.5,
        };
        let fam = SparseFamily {
            cubes: vec![Cube::root(&grid)],
            balls: vec![ball.clone()],
            parents: vec![None],
            major_share: vec![1.0],
            eta: 1.0,
            lambda: 2.0,
        };
        let chi = ScalarField::from_fn(&grid, |x| if x[0].abs().max(x[1].abs()) <= 0.5 + 1e-12 { 1.0 } else { 0.0 });
        let a = sparse_operator(&g, &fam, &chi);
        assert!(a.sub(&chi).unwrap().max_abs() < 1e-12);
        let f = random_field(&grid, 2);
        let a1 = sparse_operator(&g, &fam, &f);
        let a2 = sparse_operator(&g, &fam, &f.scale(2.0));
        assert!(a2.sub(&a1.scale(2.0)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn grand_maximal_of_zero_operator_and_monotone_mask() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 17).unwrap();
        let f = random_field(&grid, 9);
        let sampling = GrandMaximalSampling {
            stride: 4,
            radii: vec![0.125, 0.25],
            xi_per_ball: 8,
            seed: 1,
        };
        let zero = |h: &ScalarField| Ok(ScalarField::zeros(h.grid()));
        assert_eq!(grand_maximal(&g, &zero, &f, 4.0, &sampling).unwrap().max_abs(), 0.0);
        // T = identity restricted to a smoothing average
        let avg = |h: &ScalarField| {
            let s = h.integral();
            Ok(ScalarField::from_fn(h.grid(), |_| s))
        };
        let small = grand_maximal(&g, &avg, &f.map(f64::abs), 2.0, &sampling).unwrap();
        let large = grand_maximal(&g, &avg, &f.map(f64::abs), 6.0, &sampling).unwrap();
        assert!(large.values().iter().zip(small.values()).all(|(l, s)| *l <= s + 1e-12));
    }

    #[test]
    fn domination_report_scaling() {
        let g = GroupSpec::euclidean(2);
        let grid = GridSpec::symmetric(&[1.0, 1.0], 32).unwrap();
        let f = random_field(&grid, 4);
        let s = build_sparse_family(&g, &f, 4.0).unwrap();
        let t = |h: &ScalarField| Ok(h.clone());
        let r1 = verify_sparse_domination(&g, &t, &f, &s).unwrap();
        let r2 = verify_sparse_domination(&g, &t, &f.scale(2.0), &s).unwrap();
        assert!((r1.p99 - r2.p99).abs() < 1e-12 * r1.p99);
        assert!(r1.p100.is_finite() && r1.points > 0);
        let zero = ScalarField::zeros(&grid);
        assert_eq!(verify_sparse_domination(&g, &t, &zero, &s).unwrap().points, 0);
    }
}
