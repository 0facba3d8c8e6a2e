//! Homogeneous groups: polynomial multiplication laws on `R^n` that are
//! compatible with the anisotropic dilations `λ∘x = (λ^{a_1} x_1, …, λ^{a_n} x_n)`.
//!
//! The law is stored as a table of monomials: coordinate `j` of `x·y` equals
//! `x_j + y_j + Q_j(x, y)`, where `Q_j` only involves coordinates `< j`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::Polynomial;

/// Relative inflation applied to the sampled quasi-triangle constant.
pub const A0_MARGIN: f64 = 1.01;

/// One monomial `coeff · x^x_pow · y^y_pow` in some `Q_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawTerm {
    pub x_pow: Vec<u32>,
    pub y_pow: Vec<u32>,
    pub coeff: f64,
}

#[derive(Clone, Debug)]
struct CompiledTerm {
    coeff: f64,
    // (variable, power); variables `< n` read x, the rest read y.
    factors: Vec<(usize, i32)>,
}

/// Dilation structure: the exponents and the quasi-norm they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct Dilations {
    exponents: Vec<f64>,
    inv_exponents: Vec<f64>,
    q_hom: f64,
}

impl Dilations {
    pub fn new(exponents: Vec<f64>) -> Self {
        let inv_exponents = exponents.iter().map(|a| 1.0 / a).collect();
        let q_hom = exponents.iter().sum();
        Self {
            exponents,
            inv_exponents,
            q_hom,
        }
    }

    pub fn exponents(&self) -> &[f64] {
        &self.exponents
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn q_hom(&self) -> f64 {
        self.q_hom
    }

    /// `ρ(x) = max_j |x_j|^{1/a_j}`.
    #[inline]
    pub fn rho(&self, x: &[f64]) -> f64 {
        let mut r: f64 = 0.0;
        for (xi, inv) in x.iter().zip(&self.inv_exponents) {
            let a = xi.abs();
            let v = if *inv == 1.0 {
                a
            } else if *inv == 0.5 {
                a.sqrt()
            } else {
                a.powf(*inv)
            };
            if v > r {
                r = v;
            }
        }
        r
    }

    #[inline]
    pub fn dilate_into(&self, lambda: f64, x: &[f64], out: &mut [f64]) {
        for ((o, xi), a) in out.iter_mut().zip(x).zip(&self.exponents) {
            *o = xi * pow_exp(lambda, *a);
        }
    }

    pub fn dilate(&self, lambda: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.dilate_into(lambda, x, &mut out);
        out
    }

    /// Radial projection `ρ(x)^{-1}∘x` onto the unit quasi-sphere.
    #[inline]
    pub fn project_into(&self, x: &[f64], r: f64, out: &mut [f64]) {
        self.dilate_into(1.0 / r, x, out);
    }
}

#[inline]
fn pow_exp(lambda: f64, a: f64) -> f64 {
    if a == 1.0 {
        lambda
    } else if a == 2.0 {
        lambda * lambda
    } else if a == 3.0 {
        lambda * lambda * lambda
    } else {
        lambda.powf(a)
    }
}

/// Which side the vector fields are invariant under.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// `X_j f(x) = d/dt f(x · t e_j)` at `t = 0`.
    Left,
    /// `Y_j f(x) = d/dt f(t e_j · x)` at `t = 0`.
    Right,
}

/// First-order differential operators `Σ_i c_{j,i}(x) ∂_i`, one per field.
#[derive(Clone, Debug)]
pub struct VectorFields {
    pub side: Side,
    /// `coeffs[j][i]` is the coefficient of `∂_i` in field `j`.
    pub coeffs: Vec<Vec<Polynomial>>,
}

impl VectorFields {
    pub fn field(&self, j: usize) -> &[Polynomial] {
        &self.coeffs[j]
    }

    /// Apply field `j` to a polynomial.
    pub fn apply(&self, j: usize, p: &Polynomial) -> Polynomial {
        self.coeffs[j]
            .iter()
            .enumerate()
            .fold(Polynomial::zero(p.nvars()), |acc, (i, c)| {
                acc.add(&c.mul(&p.derivative(i)))
            })
    }

    /// Coefficients of the commutator `[X_a, X_b]`.
    pub fn bracket(&self, a: usize, b: usize) -> Vec<Polynomial> {
        let n = self.coeffs.len();
        (0..n)
            .map(|i| {
                self.apply(a, &self.coeffs[b][i])
                    .sub(&self.apply(b, &self.coeffs[a][i]))
            })
            .collect()
    }
}

/// Pullback modes for polynomial evaluation.
#[derive(Clone, Debug)]
pub enum Pullback {
    Inverse,
    LeftTranslate(Vec<f64>),
    RightTranslate(Vec<f64>),
}

/// A homogeneous group with a polynomial law.
#[derive(Clone, Debug)]
pub struct GroupSpec {
    name: String,
    dil: Dilations,
    law: Vec<Vec<LawTerm>>,
    compiled: Vec<Vec<CompiledTerm>>,
    a0: f64,
}

#[derive(Deserialize)]
struct GroupFile {
    name: Option<String>,
    exponents: Vec<f64>,
    #[serde(default)]
    term: Vec<TermRecord>,
    a0: Option<f64>,
}

#[derive(Deserialize)]
struct TermRecord {
    /// 1-based coordinate index.
    coord: usize,
    x: Vec<u32>,
    y: Vec<u32>,
    coeff: f64,
}

impl GroupSpec {
    /// Build and validate a group; the quasi-triangle constant is sampled.
    pub fn new(name: &str, exponents: Vec<f64>, law: Vec<Vec<LawTerm>>) -> Result<Self> {
        let n = exponents.len();
        if n == 0 {
            return Err(Error::InvalidGroup("dimension must be positive".into()));
        }
        if (exponents[0] - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidGroup("first exponent must equal 1".into()));
        }
        if exponents.windows(2).any(|w| w[1] < w[0]) || exponents.iter().any(|a| *a <= 0.0) {
            return Err(Error::InvalidGroup(
                "exponents must be positive and nondecreasing".into(),
            ));
        }
        if law.len() != n {
            return Err(Error::InvalidGroup(format!(
                "law has {} coordinate entries, expected {n}",
                law.len()
            )));
        }
        for (j, terms) in law.iter().enumerate() {
            for t in terms {
                if t.x_pow.len() != n || t.y_pow.len() != n {
                    return Err(Error::InvalidGroup(format!(
                        "term of Q_{} has wrong arity",
                        j + 1
                    )));
                }
                if t.x_pow[j..].iter().chain(&t.y_pow[j..]).any(|&e| e != 0) {
                    return Err(Error::InvalidGroup(format!(
                        "Q_{} depends on coordinates ≥ {}",
                        j + 1,
                        j + 1
                    )));
                }
                let deg: f64 = t
                    .x_pow
                    .iter()
                    .zip(&t.y_pow)
                    .zip(&exponents)
                    .map(|((a, b), w)| (a + b) as f64 * w)
                    .sum();
                if (deg - exponents[j]).abs() > 1e-9 {
                    return Err(Error::InvalidGroup(format!(
                        "term of Q_{} has weighted degree {deg}, expected {}",
                        j + 1,
                        exponents[j]
                    )));
                }
            }
        }
        let compiled = law
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .map(|t| CompiledTerm {
                        coeff: t.coeff,
                        factors: t
                            .x_pow
                            .iter()
                            .enumerate()
                            .filter(|(_, &e)| e > 0)
                            .map(|(i, &e)| (i, e as i32))
                            .chain(
                                t.y_pow
                                    .iter()
                                    .enumerate()
                                    .filter(|(_, &e)| e > 0)
                                    .map(|(i, &e)| (i + n, e as i32)),
                            )
                            .collect(),
                    })
                    .collect()
            })
            .collect();
        let mut g = Self {
            name: name.to_string(),
            dil: Dilations::new(exponents),
            law,
            compiled,
            a0: 1.0,
        };
        g.a0 = g.estimate_a0(20_000, 1.0, 0x5eed) * A0_MARGIN;
        Ok(g)
    }

    /// Euclidean `R^n` with the max norm.
    pub fn euclidean(n: usize) -> Self {
        Self::new(&format!("euclidean{n}"), vec![1.0; n], vec![Vec::new(); n])
            .expect("euclidean law is valid")
    }

    /// First Heisenberg group, exponents (1, 1, 2), law
    /// `(xy)_3 = x_3 + y_3 + (x_1 y_2 − x_2 y_1)/2`.
    pub fn heisenberg() -> Self {
        let law = vec![
            Vec::new(),
            Vec::new(),
            vec![
                LawTerm {
                    x_pow: vec![1, 0, 0],
                    y_pow: vec![0, 1, 0],
                    coeff: 0.5,
                },
                LawTerm {
                    x_pow: vec![0, 1, 0],
                    y_pow: vec![1, 0, 0],
                    coeff: -0.5,
                },
            ],
        ];
        Self::new("heisenberg", vec![1.0, 1.0, 2.0], law).expect("heisenberg law is valid")
    }

    /// Look up a built-in group by id (`euclidean2`, `euclidean3`, `heisenberg`, ...).
    pub fn builtin(id: &str) -> Result<Self> {
        match id {
            "heisenberg" | "h1" => Ok(Self::heisenberg()),
            s if s.starts_with("euclidean") => {
                let n: usize = s["euclidean".len()..]
                    .parse()
                    .map_err(|_| Error::Config(format!("unknown group id {id}")))?;
                if n == 0 {
                    return Err(Error::Config("euclidean0 is not a group".into()));
                }
                Ok(Self::euclidean(n))
            }
            _ => Err(Error::Config(format!("unknown group id {id}"))),
        }
    }

    /// Parse a group from TOML text. Terms use 1-based `coord`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: GroupFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let n = file.exponents.len();
        let mut law = vec![Vec::new(); n];
        for t in file.term {
            if t.coord == 0 || t.coord > n {
                return Err(Error::Config(format!("term coordinate {} out of range", t.coord)));
            }
            law[t.coord - 1].push(LawTerm {
                x_pow: t.x,
                y_pow: t.y,
                coeff: t.coeff,
            });
        }
        let mut g = Self::new(file.name.as_deref().unwrap_or("custom"), file.exponents, law)?;
        if let Some(a0) = file.a0 {
            g.a0 = a0.max(1.0);
        }
        Ok(g)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dil.dim()
    }

    pub fn exponents(&self) -> &[f64] {
        self.dil.exponents()
    }

    pub fn dilations(&self) -> &Dilations {
        &self.dil
    }

    /// Homogeneous dimension `Q = Σ a_j`.
    pub fn q_hom(&self) -> f64 {
        self.dil.q_hom()
    }

    /// Stored quasi-triangle constant (sampled, inflated by 1%).
    pub fn a0(&self) -> f64 {
        self.a0
    }

    pub fn law(&self) -> &[Vec<LawTerm>] {
        &self.law
    }

    pub fn is_abelian(&self) -> bool {
        self.law.iter().all(|t| t.is_empty())
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `Q_j(x, y)` using only coordinates `< j`.
    #[inline]
    pub fn q_term(&self, j: usize, x: &[f64], y: &[f64]) -> f64 {
        let n = self.dim();
        let mut s = 0.0;
        for t in &self.compiled[j] {
            let mut v = t.coeff;
            for &(var, e) in &t.factors {
                let base = if var < n { x[var] } else { y[var - n] };
                v *= if e == 1 { base } else { base.powi(e) };
            }
            s += v;
        }
        s
    }

    #[inline]
    pub fn mul_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = x[j] + y[j] + self.q_term(j, x, y);
        }
    }

    pub fn multiply(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(y)?;
        let mut out = vec![0.0; self.dim()];
        self.mul_into(x, y, &mut out);
        Ok(out)
    }

    /// Forward substitution: `z_j = −x_j − Q_j(x, z)`.
    #[inline]
    pub fn inv_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            out[j] = 0.0;
        }
        for j in 0..self.dim() {
            let q = self.q_term(j, x, out);
            out[j] = -x[j] - q;
        }
    }

    pub fn inverse(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut out = vec![0.0; self.dim()];
        self.inv_into(x, &mut out);
        Ok(out)
    }

    pub fn dilate(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "dilation factor must be positive, got {lambda}"
            )));
        }
        Ok(self.dil.dilate(lambda, x))
    }

    pub fn quasi_norm(&self, x: &[f64]) -> f64 {
        self.dil.rho(x)
    }

    /// Sampled sup of `ρ(xy) / (ρ(x) + ρ(y))` over the unit-scale box,
    /// floored at 1. Dilation invariance makes the unit box sufficient.
    pub fn estimate_a0(&self, samples: usize, box_radius: f64, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let half: Vec<f64> = self
            .exponents()
            .iter()
            .map(|a| box_radius.powf(*a))
            .collect();
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut xy = vec![0.0; n];
        let mut best: f64 = 0.0;
        for _ in 0..samples.max(1) {
            for i in 0..n {
                x[i] = rng.gen_range(-half[i]..=half[i]);
                y[i] = rng.gen_range(-half[i]..=half[i]);
            }
            let denom = self.dil.rho(&x) + self.dil.rho(&y);
            if denom <= 0.0 {
                continue;
            }
            self.mul_into(&x, &y, &mut xy);
            best = best.max(self.dil.rho(&xy) / denom);
        }
        best.max(1.0)
    }

    /// Re-estimate and store `A0` (inflated by 1%).
    pub fn with_estimated_a0(mut self, samples: usize, seed: u64) -> Self {
        self.a0 = self.estimate_a0(samples, 1.0, seed) * A0_MARGIN;
        self
    }

    /// Whether `ρ(x^{-1}) = ρ(x)` on random samples.
    pub fn quasi_norm_is_symmetric(&self, samples: usize, seed: u64) -> bool {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim();
        let mut x = vec![0.0; n];
        let mut inv = vec![0.0; n];
        for _ in 0..samples {
            for v in x.iter_mut() {
                *v = rng.gen_range(-1.0..=1.0);
            }
            self.inv_into(&x, &mut inv);
            let (a, b) = (self.dil.rho(&x), self.dil.rho(&inv));
            if (a - b).abs() > 1e-12 * a.max(1.0) {
                return false;
            }
        }
        true
    }

    /// Symbolic coordinates of `x·y` as polynomials in `(x_1..x_n, y_1..y_n)`.
    pub fn symbolic_product(&self) -> Vec<Polynomial> {
        let n = self.dim();
        (0..n)
            .map(|j| {
                let mut p = Polynomial::var(2 * n, j).add(&Polynomial::var(2 * n, n + j));
                for t in &self.law[j] {
                    let mut powers = t.x_pow.clone();
                    powers.extend_from_slice(&t.y_pow);
                    p = p.add(&Polynomial::monomial(powers, t.coeff));
                }
                p
            })
            .collect()
    }

    /// Coefficient tables of the left- or right-invariant fields obtained by
    /// differentiating the law at the identity.
    pub fn vector_field_coeffs(&self, side: Side) -> VectorFields {
        let n = self.dim();
        let prod = self.symbolic_product();
        // Restrict a 2n-variable polynomial to n variables by zeroing one block.
        let restrict = |p: &Polynomial, keep_x: bool| -> Polynomial {
            let mut out = Polynomial::zero(n);
            for (k, c) in p.terms() {
                let (keep, drop) = if keep_x {
                    (&k[..n], &k[n..])
                } else {
                    (&k[n..], &k[..n])
                };
                if drop.iter().all(|&e| e == 0) {
                    out.add_term(keep.to_vec(), c);
                }
            }
            out
        };
        let coeffs = (0..n)
            .map(|j| {
                (0..n)
                    .map(|i| match side {
                        // ∂/∂y_j (x·y)_i at y = 0
                        Side::Left => restrict(&prod[i].derivative(n + j), true),
                        // ∂/∂x_j (x·y)_i at x = 0, renamed y → x
                        Side::Right => restrict(&prod[i].derivative(j), false),
                    })
                    .collect()
            })
            .collect();
        VectorFields { side, coeffs }
    }

    /// Evaluate `P(x^{-1})`, `P(xy)` or `P(yx)`.
    pub fn eval_pullback(&self, p: &Polynomial, mode: &Pullback, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let z = match mode {
            Pullback::Inverse => self.inverse(x)?,
            Pullback::LeftTranslate(y) => self.multiply(x, y)?,
            Pullback::RightTranslate(y) => self.multiply(y, x)?,
        };
        Ok(p.eval(&z))
    }

    /// Symbolic expansion of `P(x·y)` in the `2n` variables `(x, y)`.
    pub fn symbolic_left_translate(&self, p: &Polynomial) -> Polynomial {
        p.compose(&self.symbolic_product())
    }

    /// Multi-indices `β` with `Σ a_i β_i ≤ max_degree`.
    pub fn monomials_up_to(&self, max_degree: f64) -> Vec<Vec<u32>> {
        let n = self.dim();
        let mut out = Vec::new();
        let mut cur = vec![0u32; n];
        fn rec(
            i: usize,
            budget: f64,
            exps: &[f64],
            cur: &mut Vec<u32>,
            out: &mut Vec<Vec<u32>>,
        ) {
            if i == exps.len() {
                out.push(cur.clone());
                return;
            }
            let mut e = 0u32;
            while e as f64 * exps[i] <= budget + 1e-9 {
                cur[i] = e;
                rec(i + 1, budget - e as f64 * exps[i], exps, cur, out);
                e += 1;
            }
            cur[i] = 0;
        }
        if max_degree >= 0.0 {
            rec(0, max_degree, self.exponents(), &mut cur, &mut out);
        }
        out.sort_by(|a, b| {
            let da: f64 = a.iter().zip(self.exponents()).map(|(e, w)| *e as f64 * w).sum();
            let db: f64 = b.iter().zip(self.exponents()).map(|(e, w)| *e as f64 * w).sum();
            da.partial_cmp(&db).unwrap().then_with(|| b.cmp(a))
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn heisenberg_product() {
        let g = GroupSpec::heisenberg();
        let p = g.multiply(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap();
        assert!(close(&p, &[1.0, 1.0, 0.5], 1e-15));
    }

    #[test]
    fn euclidean_product_and_inverse() {
        let g = GroupSpec::euclidean(2);
        assert_eq!(g.multiply(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(g.inverse(&[1.0, -2.0]).unwrap(), vec![-1.0, 2.0]);
        assert!(g.is_abelian());
    }

    #[test]
    fn heisenberg_inverse_is_negation() {
        let g = GroupSpec::heisenberg();
        assert!(close(&g.inverse(&[1.0, 2.0, 3.0]).unwrap(), &[-1.0, -2.0, -3.0], 1e-15));
        assert_eq!(g.inverse(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn dilation_and_norm() {
        let g = GroupSpec::heisenberg();
        assert_eq!(g.dilate(2.0, &[1.0, 1.0, 1.0]).unwrap(), vec![2.0, 2.0, 4.0]);
        assert_eq!(g.dilate(1.0, &[0.3, -0.2, 0.7]).unwrap(), vec![0.3, -0.2, 0.7]);
        assert!(g.dilate(0.0, &[1.0, 1.0, 1.0]).is_err());
        assert!((g.quasi_norm(&[0.0, 0.0, 4.0]) - 2.0).abs() < 1e-15);
        let e = GroupSpec::euclidean(2);
        assert!((e.quasi_norm(&[0.5, -0.25]) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let g = GroupSpec::heisenberg();
        assert!(matches!(
            g.multiply(&[1.0, 2.0], &[0.0; 3]),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn invalid_laws_are_rejected() {
        // depends on its own coordinate
        let bad = vec![
            Vec::new(),
            vec![LawTerm {
                x_pow: vec![0, 1],
                y_pow: vec![0, 0],
                coeff: 1.0,
            }],
        ];
        assert!(GroupSpec::new("bad", vec![1.0, 1.0], bad).is_err());
        // wrong weighted degree
        let bad = vec![
            Vec::new(),
            Vec::new(),
            vec![LawTerm {
                x_pow: vec![1, 0, 0],
                y_pow: vec![0, 0, 0],
                coeff: 1.0,
            }],
        ];
        assert!(GroupSpec::new("bad", vec![1.0, 1.0, 2.0], bad).is_err());
        assert!(GroupSpec::new("bad", vec![2.0], vec![Vec::new()]).is_err());
    }

    #[test]
    fn homogeneous_dimension() {
        assert_eq!(GroupSpec::heisenberg().q_hom(), 4.0);
        assert_eq!(GroupSpec::euclidean(3).q_hom(), 3.0);
    }

    #[test]
    fn a0_estimates() {
        let e = GroupSpec::euclidean(2);
        assert!((e.estimate_a0(10_000, 1.0, 1) - 1.0).abs() < 1e-9);
        // a single sample never exceeds a larger sample's estimate
        let h = GroupSpec::heisenberg();
        let one = h.estimate_a0(1, 1.0, 3);
        let many = h.estimate_a0(100_000, 1.0, 3);
        assert!(one <= many);
        assert!(h.a0() > 1.0 && h.a0() <= 2.0);
    }

    #[test]
    fn heisenberg_left_fields() {
        let g = GroupSpec::heisenberg();
        let vf = g.vector_field_coeffs(Side::Left);
        let x = [0.7, -1.3, 0.4];
        // X_1 = ∂_1 − (x_2/2)∂_3
        let c: Vec<f64> = vf.field(0).iter().map(|p| p.eval(&x)).collect();
        assert!(close(&c, &[1.0, 0.0, 0.65], 1e-14));
        // X_2 = ∂_2 + (x_1/2)∂_3
        let c: Vec<f64> = vf.field(1).iter().map(|p| p.eval(&x)).collect();
        assert!(close(&c, &[0.0, 1.0, 0.35], 1e-14));
        let c: Vec<f64> = vf.field(2).iter().map(|p| p.eval(&x)).collect();
        assert!(close(&c, &[0.0, 0.0, 1.0], 1e-14));
        // [X_1, X_2] x_3 = 1
        let br = vf.bracket(0, 1);
        let x3 = Polynomial::var(3, 2);
        let applied = br
            .iter()
            .enumerate()
            .fold(Polynomial::zero(3), |acc, (i, c)| acc.add(&c.mul(&x3.derivative(i))));
        assert!((applied.eval(&x) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn right_fields_differ_in_sign() {
        let g = GroupSpec::heisenberg();
        let vf = g.vector_field_coeffs(Side::Right);
        let x = [0.7, -1.3, 0.4];
        let c: Vec<f64> = vf.field(0).iter().map(|p| p.eval(&x)).collect();
        assert!(close(&c, &[1.0, 0.0, -0.65], 1e-14));
    }

    #[test]
    fn euclidean_fields_are_partials() {
        let g = GroupSpec::euclidean(3);
        let vf = g.vector_field_coeffs(Side::Left);
        for j in 0..3 {
            for i in 0..3 {
                let v = vf.field(j)[i].eval(&[0.1, 0.2, 0.3]);
                assert_eq!(v, if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn pullbacks() {
        let e = GroupSpec::euclidean(2);
        let p = Polynomial::var(2, 0);
        let v = e
            .eval_pullback(&p, &Pullback::LeftTranslate(vec![0.25, 0.0]), &[1.0, 3.0])
            .unwrap();
        assert!((v - 1.25).abs() < 1e-15);

        let h = GroupSpec::heisenberg();
        let x3 = Polynomial::var(3, 2);
        let x = [0.3, -0.8, 0.5];
        let lam = 1.7;
        let a = h
            .eval_pullback(&x3, &Pullback::Inverse, &h.dilate(lam, &x).unwrap())
            .unwrap();
        let b = h.eval_pullback(&x3, &Pullback::Inverse, &x).unwrap();
        assert!((a / b - lam * lam).abs() < 1e-12);

        // P(x·y) for P = x_3 has x-degree at most 2
        let expanded = h.symbolic_left_translate(&x3);
        let w = [1.0, 1.0, 2.0, 1.0, 1.0, 2.0];
        assert!(expanded.max_partial_degree(&w, 0..3) <= 2.0 + 1e-12);
        assert!(expanded.weighted_degrees(&w).iter().all(|d| (d - 2.0).abs() < 1e-12));
    }

    #[test]
    fn config_roundtrip() {
        let text = r#"
            name = "h1-config"
            exponents = [1, 1, 2]
            [[term]]
            coord = 3
            x = [1, 0, 0]
            y = [0, 1, 0]
            coeff = 0.5
            [[term]]
            coord = 3
            x = [0, 1, 0]
            y = [1, 0, 0]
            coeff = -0.5
        "#;
        let g = GroupSpec::from_toml_str(text).unwrap();
        let h = GroupSpec::heisenberg();
        let (x, y) = ([0.2, -0.4, 1.0], [1.5, 0.3, -0.2]);
        assert!(close(&g.multiply(&x, &y).unwrap(), &h.multiply(&x, &y).unwrap(), 1e-15));
        assert!(GroupSpec::from_toml_str("exponents = [1, 2]\n[[term]]\ncoord = 2\nx = [1, 0]\ny = [0, 0]\ncoeff = 1.0").is_err());
    }

    #[test]
    fn monomial_enumeration() {
        let h = GroupSpec::heisenberg();
        assert_eq!(h.monomials_up_to(0.0).len(), 1);
        assert_eq!(h.monomials_up_to(1.0).len(), 3);
        // 1, x1, x2, x1^2, x1x2, x2^2, x3
        assert_eq!(h.monomials_up_to(2.0).len(), 7);
        assert!(h.monomials_up_to(-1.0).is_empty());
    }
}
