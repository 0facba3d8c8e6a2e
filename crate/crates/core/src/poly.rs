//! Sparse real polynomials in a fixed number of variables.
//!
//! Used for the group law, vector-field coefficient tables and the symbolic
//! pullback checks. Coefficients below `1e-14` are dropped after every
//! arithmetic operation.

use std::collections::BTreeMap;
use std::fmt;

const DROP_TOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut powers = vec![0; nvars];
        powers[i] = 1;
        Self::monomial(powers, 1.0)
    }

    pub fn monomial(powers: Vec<u32>, coeff: f64) -> Self {
        let nvars = powers.len();
        let mut p = Self::zero(nvars);
        p.add_term(powers, coeff);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(k, v)| (k.as_slice(), *v))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, powers: Vec<u32>, coeff: f64) {
        assert_eq!(powers.len(), self.nvars, "monomial arity");
        let entry = self.terms.entry(powers).or_insert(0.0);
        *entry += coeff;
        self.prune();
    }

    fn prune(&mut self) {
        self.terms.retain(|_, c| c.abs() > DROP_TOL);
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (k, v) in &other.terms {
            *out.terms.entry(k.clone()).or_insert(0.0) += v;
        }
        out.prune();
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for v in out.terms.values_mut() {
            *v *= s;
        }
        out.prune();
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (ka, va) in &self.terms {
            for (kb, vb) in &other.terms {
                let k: Vec<u32> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                *out.terms.entry(k).or_insert(0.0) += va * vb;
            }
        }
        out.prune();
        out
    }

    pub fn pow(&self, e: u32) -> Self {
        let mut out = Self::constant(self.nvars, 1.0);
        for _ in 0..e {
            out = out.mul(self);
        }
        out
    }

    /// Partial derivative with respect to variable `i`.
    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (k, v) in &self.terms {
            if k[i] == 0 {
                continue;
            }
            let mut kk = k.clone();
            kk[i] -= 1;
            *out.terms.entry(kk).or_insert(0.0) += v * k[i] as f64;
        }
        out.prune();
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|(k, v)| {
                k.iter()
                    .zip(x)
                    .fold(*v, |acc, (&e, &xi)| if e == 0 { acc } else { acc * xi.powi(e as i32) })
            })
            .sum()
    }

    /// Substitute polynomial `subs[i]` for variable `i`. All substitutes must
    /// share one arity, which becomes the arity of the result.
    pub fn compose(&self, subs: &[Polynomial]) -> Self {
        assert_eq!(subs.len(), self.nvars);
        let m = subs.first().map(|p| p.nvars).unwrap_or(0);
        let mut out = Self::zero(m);
        for (k, v) in &self.terms {
            let mut term = Self::constant(m, *v);
            for (i, &e) in k.iter().enumerate() {
                if e > 0 {
                    term = term.mul(&subs[i].pow(e));
                }
            }
            out = out.add(&term);
        }
        out
    }

    /// Weighted degree `sum_i w_i * beta_i` of each term.
    pub fn weighted_degrees(&self, weights: &[f64]) -> Vec<f64> {
        self.terms
            .keys()
            .map(|k| k.iter().zip(weights).map(|(&e, w)| e as f64 * w).sum())
            .collect()
    }

    /// Largest weighted degree restricted to the variables in `vars`.
    pub fn max_partial_degree(&self, weights: &[f64], vars: std::ops::Range<usize>) -> f64 {
        self.terms
            .keys()
            .map(|k| vars.clone().map(|i| k[i] as f64 * weights[i]).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (k, v) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{v}")?;
            for (i, &e) in k.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(f, "*x{}", i + 1)?,
                    _ => write!(f, "*x{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}
