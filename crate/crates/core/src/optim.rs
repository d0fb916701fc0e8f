//! BFGS with a strong-Wolfe line search.
//!
//! The objective returns its value and writes the gradient in place. Values
//! at or above [`PENALTY`](crate::discrepancy::PENALTY) mark inadmissible
//! points; the line search backs away from them without reading their
//! gradient.

use nalgebra::{DMatrix, DVector};

use crate::discrepancy::PENALTY;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Converged when `|f_k - f_{k+1}| / max(|f_{k+1}|, 1)` falls below this ...
    pub rel_tol: f64,
    /// ... and the largest gradient component is below this.
    pub grad_tol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iter: 5000,
            rel_tol: 1e-8,
            grad_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_max: f64,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;

fn admissible(f: f64) -> bool {
    f.is_finite() && f < PENALTY
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Probe<'a, F> {
    fg: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    buf: Vec<f64>,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> Probe<'_, F> {
    /// Value, gradient and directional derivative at `x + a * dir`.
    fn at(&mut self, a: f64) -> (f64, Vec<f64>, f64) {
        for (b, (x, d)) in self.buf.iter_mut().zip(self.x.iter().zip(self.dir)) {
            *b = x + a * d;
        }
        let mut g = vec![0.0; self.x.len()];
        let f = (self.fg)(&self.buf, &mut g);
        let dg = g.iter().zip(self.dir).map(|(a, b)| a * b).sum();
        (f, g, dg)
    }
}

/// Cubic interpolation minimiser on `[a, b]`, safeguarded into the interior.
fn interpolate(a: f64, fa: f64, da: f64, b: f64, fb: f64, db: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let width = hi - lo;
    let d1 = da + db - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - da * db;
    let mut t = f64::NAN;
    if disc >= 0.0 && da.is_finite() && db.is_finite() {
        let d2 = (b - a).signum() * disc.sqrt();
        t = b - (b - a) * (db + d2 - d1) / (db - da + 2.0 * d2);
    }
    if !t.is_finite() || t < lo + 0.1 * width || t > hi - 0.1 * width {
        t = 0.5 * (lo + hi);
    }
    t
}

fn line_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    probe: &mut Probe<'_, F>,
    f0: f64,
    d0: f64,
    alpha0: f64,
) -> Option<(f64, f64, Vec<f64>)> {
    let (mut a_prev, mut f_prev, mut d_prev) = (0.0, f0, d0);
    let mut a = alpha0;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for i in 0..60 {
        let (fa, ga, da) = probe.at(a);
        if !admissible(fa) || !da.is_finite() {
            a = a_prev + 0.5 * (a - a_prev);
            if a - a_prev < 1e-16 {
                break;
            }
            continue;
        }
        if fa > f0 + C1 * a * d0 || (i > 0 && fa >= f_prev) {
            return zoom(probe, f0, d0, (a_prev, f_prev, d_prev), (a, fa, da), best);
        }
        if da.abs() <= -C2 * d0 {
            return Some((a, fa, ga));
        }
        best = Some((a, fa, ga));
        if da >= 0.0 {
            return zoom(probe, f0, d0, (a, fa, da), (a_prev, f_prev, d_prev), best);
        }
        a_prev = a;
        f_prev = fa;
        d_prev = da;
        a *= 2.0;
    }
    best
}

fn zoom<F: FnMut(&[f64], &mut [f64]) -> f64>(
    probe: &mut Probe<'_, F>,
    f0: f64,
    d0: f64,
    mut lo: (f64, f64, f64),
    mut hi: (f64, f64, f64),
    mut best: Option<(f64, f64, Vec<f64>)>,
) -> Option<(f64, f64, Vec<f64>)> {
    for _ in 0..60 {
        if (hi.0 - lo.0).abs() <= 1e-14 * lo.0.abs().max(1e-10) {
            break;
        }
        let a = if admissible(hi.1) {
            interpolate(lo.0, lo.1, lo.2, hi.0, hi.1, hi.2)
        } else {
            0.5 * (lo.0 + hi.0)
        };
        let (fa, ga, da) = probe.at(a);
        if !admissible(fa) || !da.is_finite() {
            hi = (a, f64::INFINITY, f64::NAN);
            continue;
        }
        if fa > f0 + C1 * a * d0 || fa >= lo.1 {
            hi = (a, fa, da);
        } else {
            if da.abs() <= -C2 * d0 {
                return Some((a, fa, ga));
            }
            if da * (hi.0 - lo.0) >= 0.0 {
                hi = lo;
            }
            lo = (a, fa, da);
            best = Some((a, fa, ga));
        }
    }
    // Settle for sufficient decrease when curvature cannot be met.
    best.filter(|(a, f, _)| *a > 0.0 && *f <= f0 + C1 * a * d0)
}

/// Minimise `fg` from `x0`.
pub fn minimize<F>(mut fg: F, x0: Vec<f64>, opts: &BfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = fg(&x, &mut g);
    let done = |x: Vec<f64>, f: f64, g: Vec<f64>, iterations: usize, converged: bool| Minimum {
        grad_max: max_abs(&g),
        x,
        f,
        grad: g,
        iterations,
        converged,
    };
    if n == 0 {
        return done(x, f, g, 0, true);
    }
    if !admissible(f) {
        return done(x, f, g, 0, false);
    }

    let mut h = DMatrix::<f64>::identity(n, n);
    let mut scaled = false;
    let mut failures = 0;
    for iter in 1..=opts.max_iter {
        let gv = DVector::from_column_slice(&g);
        let mut dir: Vec<f64> = (-(&h * &gv)).iter().copied().collect();
        let mut d0: f64 = dir.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(d0 < 0.0) {
            h.fill_with_identity();
            scaled = false;
            dir = g.iter().map(|v| -v).collect();
            d0 = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let alpha0 = if scaled { 1.0 } else { (1.0 / max_abs(&dir)).min(1.0) };
        let step = {
            let mut probe = Probe {
                fg: &mut fg,
                x: &x,
                dir: &dir,
                buf: vec![0.0; n],
            };
            line_search(&mut probe, f, d0, alpha0)
        };
        let Some((alpha, f_new, g_new)) = step else {
            failures += 1;
            if failures >= 2 || !scaled {
                let small = max_abs(&g) < opts.grad_tol;
                return done(x, f, g, iter, small);
            }
            h.fill_with_identity();
            scaled = false;
            continue;
        };
        failures = 0;

        let s: Vec<f64> = dir.iter().map(|d| alpha * d).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let rel = (f - f_new).abs() / f_new.abs().max(1.0);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        f = f_new;
        g = g_new;
        if rel < opts.rel_tol && max_abs(&g) < opts.grad_tol {
            return done(x, f, g, iter, true);
        }

        let sv = DVector::from_vec(s);
        let yv = DVector::from_vec(y);
        let sy = sv.dot(&yv);
        if sy > 1e-12 * sv.norm() * yv.norm() {
            if !scaled {
                h.fill_with_identity();
                h *= sy / yv.dot(&yv);
                scaled = true;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            h -= rho * (&sv * hy.transpose() + &hy * sv.transpose());
            h += (rho * rho * yhy + rho) * (&sv * sv.transpose());
        }
    }
    done(x, f, g, opts.max_iter, false)
}
