//! Scalar numerics shared across the estimators: normal and logistic
//! distribution functions, sample quantiles and a small dense solver.

use libm::erfc;
use statrs::function::erf::erfc_inv;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile function. Returns ±∞ at the endpoints.
#[inline]
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        f64::NEG_INFINITY
    } else if p >= 1.0 {
        f64::INFINITY
    } else {
        let x = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
        // one Halley step against the accurate distribution function
        let pdf = normal_pdf(x);
        if pdf > 0.0 {
            let e = (normal_cdf(x) - p) / pdf;
            x - e / (1.0 + 0.5 * x * e)
        } else {
            x
        }
    }
}

/// Logistic distribution function Λ(u) = 1 / (1 + e^{-u}).
#[inline]
pub fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^u) without overflow.
#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > 0.0 {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sample quantile by linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Outcome of an attempted Cholesky factorization.
pub enum Factor {
    Ok(Cholesky),
    /// Indices of columns whose residual variance vanished after projecting
    /// out the preceding columns.
    Deficient(Vec<usize>),
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix
/// stored row-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    d: usize,
    l: Vec<f64>,
}

impl Cholesky {
    /// Factorizes `a` (d×d, row-major). A pivot is declared deficient when it
    /// falls below `rel_tol` times the original diagonal entry.
    pub fn factor(a: &[f64], d: usize, rel_tol: f64) -> Factor {
        let mut l = vec![0.0; d * d];
        let mut deficient = Vec::new();
        for j in 0..d {
            let mut s = a[j * d + j];
            for k in 0..j {
                s -= l[j * d + k] * l[j * d + k];
            }
            let scale = a[j * d + j].abs();
            if !(s > rel_tol * scale) || scale == 0.0 {
                deficient.push(j);
                // keep going so that every offending column is reported
                l[j * d + j] = 1.0;
                continue;
            }
            let ljj = s.sqrt();
            l[j * d + j] = ljj;
            for i in (j + 1)..d {
                let mut s = a[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                l[i * d + j] = s / ljj;
            }
        }
        if deficient.is_empty() {
            Factor::Ok(Cholesky { d, l })
        } else {
            Factor::Deficient(deficient)
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.d;
        let mut y = b.to_vec();
        for i in 0..d {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * d + k] * y[k];
            }
            y[i] = s / self.l[i * d + i];
        }
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in (i + 1)..d {
                s -= self.l[k * d + i] * y[k];
            }
            y[i] = s / self.l[i * d + i];
        }
        y
    }
}

/// Multiplies a row-major d×d matrix by a vector.
pub fn mat_vec(a: &[f64], d: usize, x: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&a[i * d..(i + 1) * d], x)).collect()
}
