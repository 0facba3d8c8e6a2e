//! Small numerical utilities shared across modules: deterministic sums,
//! quadrature rules, smooth bumps and least-squares fits.

/// Pairwise (cascade) summation; the reduction tree depends only on the length.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Composite Simpson weights for `n` equally spaced nodes (n odd, ≥ 3) with spacing `h`.
/// Falls back to the trapezoid rule for even `n`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 2);
    if n % 2 == 0 || n < 3 {
        let mut w = vec![h; n];
        w[0] = h / 2.0;
        w[n - 1] = h / 2.0;
        return w;
    }
    (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

/// Nodes and weights for `∫_a^b g(r) dr` using composite Simpson in `log r`
/// with `per_octave` intervals per factor of two. Requires `0 < a < b`.
pub fn log_simpson(a: f64, b: f64, per_octave: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(a > 0.0 && b > a);
    let octaves = (b / a).log2();
    let mut m = ((octaves * per_octave as f64).ceil() as usize).max(2);
    if m % 2 == 1 {
        m += 1;
    }
    let (la, lb) = (a.ln(), b.ln());
    let du = (lb - la) / m as f64;
    let w = simpson_weights(m + 1, du);
    let nodes: Vec<f64> = (0..=m).map(|i| (la + i as f64 * du).exp()).collect();
    let weights = nodes.iter().zip(&w).map(|(r, wi)| r * wi).collect();
    (nodes, weights)
}

/// Gauss–Legendre nodes and weights on `[a, b]`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = 0.5 * (a + b) - 0.5 * (b - a) * z;
        w[i] = (b - a) / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

/// Shape of a compactly supported 1-d profile on `(lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BumpShape {
    /// `exp(1 − 1/(1 − s²))`, infinitely smooth.
    Smooth,
    /// `(1 − s²)^k`, of class `C^{k−1}`.
    Poly(u32),
}

impl BumpShape {
    /// `0` selects the infinitely smooth bump, `k ≥ 1` the polynomial one.
    pub fn from_smoothness(k: u32) -> Self {
        if k == 0 {
            Self::Smooth
        } else {
            Self::Poly(k)
        }
    }
}

/// A bump supported on `(lo, hi)` with peak 1 at the midpoint.
#[derive(Clone, Copy, Debug)]
pub struct Bump {
    pub lo: f64,
    pub hi: f64,
    pub shape: BumpShape,
}

impl Bump {
    pub fn new(lo: f64, hi: f64, shape: BumpShape) -> Self {
        assert!(hi > lo);
        Self { lo, hi, shape }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        if u <= self.lo || u >= self.hi {
            return 0.0;
        }
        let s = (2.0 * u - self.lo - self.hi) / (self.hi - self.lo);
        let q = 1.0 - s * s;
        match self.shape {
            BumpShape::Smooth => (1.0 - 1.0 / q).exp(),
            BumpShape::Poly(k) => q.powi(k as i32),
        }
    }
}

/// Result of an ordinary least-squares line fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

impl LineFit {
    /// Fits with `R²` below this are reported as inconclusive.
    pub const CONCLUSIVE_R2: f64 = 0.7;

    pub fn conclusive(&self) -> bool {
        self.r2 >= Self::CONCLUSIVE_R2
    }
}

/// OLS fit `y ≈ slope·x + intercept`. Returns `None` for fewer than two
/// points or constant `x`. A perfect fit of constant `y` has `R² = 1`.
pub fn ols(x: &[f64], y: &[f64]) -> Option<LineFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = (0..n)
        .map(|i| (y[i] - slope * x[i] - intercept).powi(2))
        .sum();
    let r2 = if syy <= 0.0 { 1.0 } else { 1.0 - sse / syy };
    Some(LineFit {
        slope,
        intercept,
        r2,
        n,
    })
}

/// Percentile by linear interpolation between order statistics, `q ∈ [0, 100]`.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_cubics() {
        let w = simpson_weights(9, 0.25);
        let s: f64 = (0..9).map(|i| (i as f64 * 0.25).powi(3) * w[i]).sum();
        assert!((s - 4.0).abs() < 1e-12);
    }

    #[test]
    fn log_simpson_power_law() {
        let (r, w) = log_simpson(1.0, 8.0, 64);
        let s: f64 = r.iter().zip(&w).map(|(r, w)| r.powf(-1.5) * w).sum();
        let exact = (1.0 - 8f64.powf(-0.5)) / 0.5;
        assert!((s - exact).abs() < 1e-10);
    }

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        let (x, w) = gauss_legendre(5, -1.0, 2.0);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| x.powi(8) * w).sum();
        let exact = (2f64.powi(9) + 1.0) / 9.0;
        assert!((s - exact).abs() < 1e-10);
    }

    #[test]
    fn bump_support_and_peak() {
        let b = Bump::new(0.5, 2.0, BumpShape::Smooth);
        assert_eq!(b.eval(0.5), 0.0);
        assert_eq!(b.eval(2.0), 0.0);
        assert!((b.eval(1.25) - 1.0).abs() < 1e-15);
        assert!(Bump::new(0.0, 1.0, BumpShape::Poly(3)).eval(0.25) > 0.0);
    }

    #[test]
    fn ols_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -0.5 * v + 2.0).collect();
        let f = ols(&x, &y).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-12 && (f.intercept - 2.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!(ols(&[1.0], &[2.0]).is_none());
    }

    #[test]
    fn percentiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(percentile(&v, 0.0), Some(1.0));
        assert_eq!(percentile(&v, 100.0), Some(4.0));
        assert_eq!(median(&v), Some(2.5));
    }

    #[test]
    fn pairwise_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        assert!((pairwise_sum(&v) - v.iter().sum::<f64>()).abs() < 1e-10);
    }
}
