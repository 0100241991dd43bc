//! Weighted binary logit by damped Newton iterations.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Design;
use crate::math::{dot, logistic, softplus, Cholesky, Factor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogitOptions {
    /// Convergence threshold on the max-abs score.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal jitter tried when the information matrix is singular.
    pub ridge: f64,
    /// Fitted probabilities this close to 0 or 1 for every observation,
    /// with a growing coefficient norm, signal separation.
    pub separation_eps: f64,
}

impl Default for LogitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            ridge: 1e-10,
            separation_eps: 1e-6,
        }
    }
}

/// Result of a converged logit fit.
///
/// The score is the gradient of the log-likelihood divided by the total
/// weight, so `score_norm` is comparable across sample sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitFit {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub score_norm: f64,
    pub iterations: usize,
    /// Normalized log-likelihood after every line-search-verified step,
    /// starting with the initial point.
    pub loglik_path: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LogitError {
    #[error("perfect separation (coefficient norm diverging along {direction:?})")]
    Separation {
        direction: Vec<f64>,
        coefficients: Vec<f64>,
    },
    #[error("singular information matrix; collinear columns: {}", .columns.join(", "))]
    Singular { columns: Vec<String> },
    #[error("no convergence after {iterations} iterations (score {score_norm:e})")]
    NonConvergence {
        iterations: usize,
        score_norm: f64,
        best: Vec<f64>,
    },
    #[error("invalid input: {0}")]
    Input(String),
}

struct Eval {
    loglik: f64,
    score: Vec<f64>,
    info: Vec<f64>,
    saturated: bool,
}

fn evaluate(
    y: &[bool],
    x: &Design,
    w: &[f64],
    total: f64,
    beta: &[f64],
    eps: f64,
    want_info: bool,
) -> Eval {
    let d = x.ncols();
    let mut loglik = 0.0;
    let mut score = vec![0.0; d];
    let mut info = vec![0.0; if want_info { d * d } else { 0 }];
    let mut saturated = true;
    for (i, row) in x.rows().enumerate() {
        let wi = w[i];
        if wi == 0.0 {
            continue;
        }
        let eta = dot(row, beta);
        let p = logistic(eta);
        let yi = if y[i] { 1.0 } else { 0.0 };
        loglik += wi * (yi * eta - softplus(eta));
        if p > eps && p < 1.0 - eps {
            saturated = false;
        }
        let r = wi * (yi - p);
        for (s, xj) in score.iter_mut().zip(row) {
            *s += r * xj;
        }
        if want_info {
            let v = wi * p * (1.0 - p);
            for a in 0..d {
                let va = v * row[a];
                if va == 0.0 {
                    continue;
                }
                let line = &mut info[a * d..a * d + a + 1];
                for (h, xb) in line.iter_mut().zip(&row[..=a]) {
                    *h += va * xb;
                }
            }
        }
    }
    for s in &mut score {
        *s /= total;
    }
    if want_info {
        for a in 0..d {
            for b in 0..=a {
                let v = info[a * d + b] / total;
                info[a * d + b] = v;
                info[b * d + a] = v;
            }
        }
    }
    Eval {
        loglik: loglik / total,
        score,
        info,
        saturated,
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn separates(y: &[bool], x: &Design, weights: &[f64], beta: &[f64]) -> bool {
    x.rows()
        .zip(y)
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .all(|((row, &yi), _)| {
            let eta = dot(row, beta);
            if yi {
                eta > 0.0
            } else {
                eta < 0.0
            }
        })
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Maximizes the weighted Bernoulli log-likelihood with logistic link.
pub fn fit_logit(
    y: &[bool],
    x: &Design,
    weights: &[f64],
    opts: &LogitOptions,
) -> Result<LogitFit, LogitError> {
    let n = x.nrows();
    let d = x.ncols();
    if y.len() != n || weights.len() != n {
        return Err(LogitError::Input(format!(
            "lengths differ: {} outcomes, {} weights, {} rows",
            y.len(),
            weights.len(),
            n
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(LogitError::Input("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || d == 0 {
        return Err(LogitError::Input("no weight or no columns".into()));
    }
    let ones: f64 = y.iter().zip(weights).filter(|(yi, _)| **yi).map(|(_, w)| w).sum();
    let share = ones / total;

    let mut beta = vec![0.0; d];
    if let Some(j) = (0..d).find(|&j| x.rows().all(|r| r[j] == 1.0)) {
        if share > 0.0 && share < 1.0 {
            beta[j] = (share / (1.0 - share)).ln();
        }
    }
    if share == 0.0 || share == 1.0 {
        // one outcome class: the likelihood sup is approached as the
        // intercept diverges
        let mut direction = vec![0.0; d];
        direction[0] = if share == 1.0 { 1.0 } else { -1.0 };
        return Err(LogitError::Separation {
            direction,
            coefficients: beta,
        });
    }

    let mut cur = evaluate(y, x, weights, total, &beta, opts.separation_eps, true);
    if let Factor::Deficient(cols) = Cholesky::factor(&cur.info, d, 1e-10) {
        return Err(LogitError::Singular {
            columns: cols.iter().map(|&j| x.names()[j].clone()).collect(),
        });
    }
    let mut path = vec![cur.loglik];
    let mut iterations = 0;

    loop {
        let score_norm = max_abs(&cur.score);
        if score_norm <= opts.tol {
            // a finite maximizer cannot classify every observation: a
            // strictly separating fit means the score vanished on the way
            // to infinity
            if separates(y, x, weights, &beta) {
                let nb = norm(&beta);
                return Err(LogitError::Separation {
                    direction: beta.iter().map(|b| b / nb).collect(),
                    coefficients: beta,
                });
            }
            return Ok(LogitFit {
                coefficients: beta,
                converged: true,
                score_norm,
                iterations,
                loglik_path: path,
            });
        }
        if iterations >= opts.max_iter {
            return Err(LogitError::NonConvergence {
                iterations,
                score_norm,
                best: beta,
            });
        }
        iterations += 1;

        let (step, newton) = newton_direction(&cur, d, opts.ridge);
        // expected gain g'H^{-1}g / 2 below rounding: the likelihood cannot
        // discriminate, so take the step without a line search
        let polishing = newton && dot(&cur.score, &step) < 1e-14;

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let eval = evaluate(y, x, weights, total, &cand, opts.separation_eps, true);
            if polishing || eval.loglik >= cur.loglik {
                accepted = Some((cand, eval));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, eval)) = accepted else {
            // no ascent available at working precision
            return Err(LogitError::NonConvergence {
                iterations,
                score_norm,
                best: beta,
            });
        };
        let grew = norm(&cand) > norm(&beta);
        beta = cand;
        cur = eval;
        if !polishing {
            path.push(cur.loglik);
        }
        if cur.saturated && grew {
            let nb = norm(&beta);
            return Err(LogitError::Separation {
                direction: beta.iter().map(|b| b / nb).collect(),
                coefficients: beta,
            });
        }
    }
}

/// Newton step, jittered Newton step, or gradient direction as a fallback.
/// The flag reports whether a Newton system was solved.
fn newton_direction(cur: &Eval, d: usize, ridge: f64) -> (Vec<f64>, bool) {
    if let Factor::Ok(c) = Cholesky::factor(&cur.info, d, 1e-14) {
        return (c.solve(&cur.score), true);
    }
    let mut jittered = cur.info.clone();
    for j in 0..d {
        jittered[j * d + j] += ridge;
    }
    if let Factor::Ok(c) = Cholesky::factor(&jittered, d, 1e-14) {
        return (c.solve(&cur.score), true);
    }
    let trace: f64 = (0..d).map(|j| cur.info[j * d + j]).sum::<f64>() / d as f64;
    let scale = if trace > 0.0 { 1.0 / trace } else { 1.0 };
    (cur.score.iter().map(|g| g * scale).collect(), false)
}

/// Observed information at `beta`, normalized by total weight. Used for
/// standard errors in tests and diagnostics.
pub fn information(y: &[bool], x: &Design, weights: &[f64], beta: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    evaluate(y, x, weights, total, beta, 0.0, true).info
}

/// Score at `beta`, normalized by total weight.
pub fn score(y: &[bool], x: &Design, weights: &[f64], beta: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    evaluate(y, x, weights, total, beta, 0.0, false).score
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
pub fn invert_spd(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let Factor::Ok(c) = Cholesky::factor(a, d, 1e-14) else {
        return None;
    };
    let mut inv = vec![0.0; d * d];
    for j in 0..d {
        let mut e = vec![0.0; d];
        e[j] = 1.0;
        let col = c.solve(&e);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    Some(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(rows: Vec<Vec<f64>>) -> Design {
        Design::from_rows(&rows).unwrap()
    }

    #[test]
    fn intercept_only_recovers_log_odds() {
        let n = 40;
        let y: Vec<bool> = (0..n).map(|i| i < 10).collect();
        let x = design(vec![vec![1.0]; n]);
        let fit = fit_logit(&y, &x, &vec![1.0; n], &LogitOptions::default()).unwrap();
        assert!((fit.coefficients[0] - (0.25f64 / 0.75).ln()).abs() < 1e-12);
        assert!(fit.converged);

        let y: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let fit = fit_logit(&y, &x, &vec![1.0; n], &LogitOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn separated_data_is_rejected() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0 - 2.5).collect();
        let y: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        let x = design(xs.iter().map(|&v| vec![1.0, v]).collect());
        let err = fit_logit(&y, &x, &vec![1.0; 50], &LogitOptions::default()).unwrap_err();
        let LogitError::Separation { direction, .. } = err else {
            panic!("expected separation, got {err:?}");
        };
        assert!(direction[1] > 0.9);
    }

    #[test]
    fn collinear_columns_are_named() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..100)
            .map(|_| {
                let a: f64 = rng.random();
                vec![1.0, a, 2.0 * a]
            })
            .collect();
        let y: Vec<bool> = (0..100).map(|i| i % 3 == 0).collect();
        let err = fit_logit(&y, &design(rows), &vec![1.0; 100], &LogitOptions::default()).unwrap_err();
        assert_eq!(err, LogitError::Singular { columns: vec!["x2".into()] });
    }

    #[test]
    fn likelihood_path_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rows: Vec<Vec<f64>> = (0..2000)
            .map(|_| vec![1.0, rng.random::<f64>() * 4.0 - 2.0, rng.random::<f64>()])
            .collect();
        let y: Vec<bool> = rows
            .iter()
            .map(|r| rng.random::<f64>() < logistic(0.5 + 1.5 * r[1] - r[2]))
            .collect();
        let fit = fit_logit(&y, &design(rows), &vec![1.0; 2000], &LogitOptions::default()).unwrap();
        assert!(fit.converged && fit.score_norm <= 1e-8);
        assert!(fit.loglik_path.windows(2).all(|w| w[1] >= w[0]));
    }
}
