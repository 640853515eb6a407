//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub history: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_evals_per_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            max_iters: 500,
            history: 50,
            grad_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_evals_per_search: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIters,
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub entry_f: f64,
    pub iters: usize,
    pub evals: usize,
    pub status: LbfgsStatus,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + a * di).collect()
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    d: f64,
}

/// Minimiser of the cubic through two points, safeguarded to the interior of
/// the bracket; falls back to bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() {
        return mid;
    }
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.d * hi.d;
    if !(disc >= 0.0) {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    let (min, max) = (a.min(b), a.max(b));
    let w = max - min;
    if t.is_finite() && t > min + 0.1 * w && t < max - 0.1 * w {
        t
    } else {
        mid
    }
}

/// Minimise `f` from `x0`. `f` returns the value and gradient. The returned
/// iterate never has a larger value than the entry point.
pub fn lbfgs_minimize<F>(x0: &[f64], mut f: F, cfg: &LbfgsConfig) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let (mut fx, mut gx) = f(&x)?;
    let entry_f = fx;
    let mut evals = 1;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.history);
    let outcome = |x: Vec<f64>, fx, iters, evals, status| LbfgsOutcome {
        x,
        f: fx,
        entry_f,
        iters,
        evals,
        status,
    };

    if !fx.is_finite() {
        return Ok(outcome(x, fx, 0, evals, LbfgsStatus::LineSearchFailed));
    }
    for iter in 0..cfg.max_iters {
        let gnorm = dot(&gx, &gx).sqrt();
        if gnorm < cfg.grad_tol {
            return Ok(outcome(x, fx, iter, evals, LbfgsStatus::Converged));
        }
        // two-loop recursion
        let mut q = gx.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = pairs.back().map_or(1.0, |(s, y, _)| dot(s, y) / dot(y, y));
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut d0 = dot(&gx, &dir);
        if !(d0 < 0.0) {
            pairs.clear();
            dir = gx.iter().map(|v| -v).collect();
            d0 = -gnorm * gnorm;
        }
        let alpha0 = if pairs.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let mut eval = |alpha: f64| -> Result<Point> {
            let (fv, g) = f(&axpy(&x, alpha, &dir))?;
            evals += 1;
            let d = dot(&g, &dir);
            Ok(Point { alpha, f: fv, g, d })
        };
        let found = strong_wolfe(&mut eval, fx, d0, alpha0, cfg)?;
        let Some(p) = found else {
            return Ok(outcome(x, fx, iter, evals, LbfgsStatus::LineSearchFailed));
        };
        let s: Vec<f64> = dir.iter().map(|v| p.alpha * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&gx).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        x = axpy(&x, p.alpha, &dir);
        fx = p.f;
        gx = p.g;
        if sy > 1e-16 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if pairs.len() == cfg.history {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
    }
    let iters = cfg.max_iters;
    Ok(outcome(x, fx, iters, evals, LbfgsStatus::MaxIters))
}

fn strong_wolfe(
    eval: &mut impl FnMut(f64) -> Result<Point>,
    f0: f64,
    d0: f64,
    alpha0: f64,
    cfg: &LbfgsConfig,
) -> Result<Option<Point>> {
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + cfg.c1 * p.alpha * d0;
    let curvature = |p: &Point| p.d.abs() <= -cfg.c2 * d0;
    let mut prev = Point {
        alpha: 0.0,
        f: f0,
        g: Vec::new(),
        d: d0,
    };
    let mut alpha = alpha0;
    let mut budget = cfg.max_evals_per_search;
    let (mut lo, mut hi);
    loop {
        if budget == 0 {
            return Ok(None);
        }
        budget -= 1;
        let p = eval(alpha)?;
        if !armijo(&p) || (prev.alpha > 0.0 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Ok(Some(p));
        }
        if p.d >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        alpha = 2.0 * p.alpha;
        prev = p;
    }
    // zoom
    while budget > 0 {
        budget -= 1;
        let a = interpolate(&lo, &hi);
        if (hi.alpha - lo.alpha).abs() <= 1e-16 * lo.alpha.abs().max(1.0) {
            break;
        }
        let p = eval(a)?;
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(Some(p));
            }
            if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn convex_quadratic_converges() {
        // f = 0.5 xᵀAx − bᵀx with A = MᵀM + I
        let n = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>()
                            + if i == j { 1.0 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = |x: &[f64]| {
            let ax: Vec<f64> = a.iter().map(|row| dot(row, x)).collect();
            Ok((
                0.5 * dot(x, &ax) - dot(&b, x),
                ax.iter().zip(&b).map(|(p, q)| p - q).collect(),
            ))
        };
        let cfg = LbfgsConfig {
            max_iters: 25,
            ..Default::default()
        };
        let out = lbfgs_minimize(&vec![0.0; n], f, &cfg).unwrap();
        assert_eq!(out.status, LbfgsStatus::Converged, "{out:?}");
        let (_, g) = f(&out.x).unwrap();
        assert!(dot(&g, &g).sqrt() < 1e-9);
    }

    #[test]
    fn rosenbrock_descends() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            Ok((
                v,
                vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ],
            ))
        };
        let out = lbfgs_minimize(
            &[-1.2, 1.0],
            f,
            &LbfgsConfig {
                max_iters: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(
            (out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6,
            "{out:?}"
        );
    }

    #[test]
    fn stationary_entry_exits_immediately() {
        let f = |x: &[f64]| Ok((x[0] * x[0], vec![2.0 * x[0]]));
        let out = lbfgs_minimize(&[0.0], f, &LbfgsConfig::default()).unwrap();
        assert_eq!((out.iters, out.evals, out.x), (0, 1, vec![0.0]));
    }

    #[test]
    fn never_worse_than_entry() {
        // non-smooth objective that defeats the curvature condition
        let f = |x: &[f64]| Ok((x[0].abs(), vec![x[0].signum()]));
        let out = lbfgs_minimize(&[0.3], f, &LbfgsConfig::default()).unwrap();
        assert!(out.f <= 0.3);
    }
}
