//! Natural cubic smoothing splines (Reinsch form) with optional GCV selection
//! of the smoothing parameter.
//!
//! The fit minimizes `Σ w_i (y_i − f(x_i))² + λ ∫ f''(x)² dx`. With knots at
//! the distinct abscissae, the minimizer is a natural cubic spline; writing
//! `g` for its knot values and `γ` for the interior second derivatives,
//! `(R + λ Qᵀ W⁻¹ Q) γ = Qᵀ y` and `g = y − λ W⁻¹ Q γ`.
//!
//! Abscissae that agree to within a small tolerance are merged first, which
//! keeps the banded system well conditioned on densely sampled curves.

use crate::error::{Error, Result};
use crate::gmrf::{Factorization, Ordering};
use crate::sparse::CscMatrix;

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Lambda {
    /// Generalized cross-validation.
    Gcv,
    Fixed(f64),
}

/// Piecewise cubic `S_j(x) = a_j + b_j (x − x_j) + c_j (x − x_j)² + d_j (x − x_j)³`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingSpline {
    pub knots: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
    pub lambda: f64,
    /// Trace of the smoother matrix (effective degrees of freedom).
    pub edf: f64,
}

/// Abscissae closer than this multiple of their interquartile range to the
/// first member of a group are merged into that group.
pub const MERGE_RTOL: f64 = 1e-6;

fn interquartile_range(sorted_idx: &[usize], x: &[f64]) -> f64 {
    let n = sorted_idx.len();
    if n < 2 {
        return 0.0;
    }
    let q = |f: f64| {
        let pos = f * (n - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let w = pos - lo as f64;
        x[sorted_idx[lo]] * (1.0 - w) + x[sorted_idx[hi]] * w
    };
    q(0.75) - q(0.25)
}

/// Sorted group abscissae (the smallest member of each group) with averaged
/// responses.
#[derive(Debug, Clone)]
struct Prepared {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

fn prepare(x: &[f64], y: &[f64]) -> Result<Prepared> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spline data"));
    }
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]).then(i.cmp(&j)));
    let tol = MERGE_RTOL * interquartile_range(&idx, x);
    let mut p = Prepared {
        x: Vec::new(),
        y: Vec::new(),
        w: Vec::new(),
    };
    let mut count: Vec<f64> = Vec::new();
    for i in idx {
        match p.x.last() {
            Some(&first) if x[i] - first <= tol => {
                *p.y.last_mut().unwrap() += y[i];
                *count.last_mut().unwrap() += 1.0;
            }
            _ => {
                p.x.push(x[i]);
                p.y.push(y[i]);
                count.push(1.0);
            }
        }
    }
    for (yy, c) in p.y.iter_mut().zip(&count) {
        *yy /= c;
    }
    // Averaged duplicates enter the fit with unit weight.
    p.w = vec![1.0; p.x.len()];
    if p.x.len() < 4 {
        return Err(Error::InsufficientData {
            needed: 4,
            got: p.x.len(),
        });
    }
    Ok(p)
}

/// The banded operators of the Reinsch algorithm for fixed knots.
struct Operators {
    h: Vec<f64>,
    /// Q as n × (n−2).
    q: CscMatrix,
    /// R as (n−2) × (n−2).
    r: CscMatrix,
}

impl Operators {
    fn new(x: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let m = n - 2;
        let mut qt = Vec::with_capacity(3 * m);
        let mut rt = Vec::with_capacity(3 * m);
        for j in 0..m {
            qt.push((j, j, 1.0 / h[j]));
            qt.push((j + 1, j, -1.0 / h[j] - 1.0 / h[j + 1]));
            qt.push((j + 2, j, 1.0 / h[j + 1]));
            rt.push((j, j, (h[j] + h[j + 1]) / 3.0));
            if j + 1 < m {
                rt.push((j, j + 1, h[j + 1] / 6.0));
                rt.push((j + 1, j, h[j + 1] / 6.0));
            }
        }
        Operators {
            h,
            q: CscMatrix::from_triplets(n, m, &qt),
            r: CscMatrix::from_triplets(m, m, &rt),
        }
    }
}

struct Solution {
    g: Vec<f64>,
    gamma: Vec<f64>,
    trace: f64,
}

fn solve_for(ops: &Operators, p: &Prepared, lambda: f64, want_trace: bool) -> Result<Solution> {
    let n = p.x.len();
    let winv: Vec<f64> = p.w.iter().map(|w| 1.0 / w).collect();
    let qtwq = ops.q.transpose().mul(&ops.q.scale_columns_rows(&winv));
    let b = ops.r.add_scaled(1.0, &qtwq, lambda);
    let f = Factorization::new(&b, Ordering::Natural)?;
    let rhs = ops.q.mul_vec_transpose(&p.y);
    let gamma = f.solve(&rhs)?;
    let qg = ops.q.mul_vec(&gamma);
    let g: Vec<f64> = (0..n).map(|i| p.y[i] - lambda * winv[i] * qg[i]).collect();
    let trace = if want_trace {
        let binv = f.selected_inverse();
        // tr(A) = n − λ Σ_i w_i⁻¹ (Q B⁻¹ Qᵀ)_ii.
        let qt = ops.q.transpose();
        let mut s = 0.0;
        for i in 0..n {
            let (cols, vals) = qt.col(i);
            let mut qbq = 0.0;
            for (&k, &qk) in cols.iter().zip(vals) {
                for (&l, &ql) in cols.iter().zip(vals) {
                    qbq += qk * ql * binv.get(k, l);
                }
            }
            s += winv[i] * qbq;
        }
        n as f64 - lambda * s
    } else {
        f64::NAN
    };
    Ok(Solution { g, gamma, trace })
}

impl CscMatrix {
    /// `diag(d) · self`.
    fn scale_columns_rows(&self, d: &[f64]) -> CscMatrix {
        let mut out = self.clone();
        let rows = self.row_idx().to_vec();
        for (v, &i) in out.values_mut().iter_mut().zip(&rows) {
            *v *= d[i];
        }
        out
    }
}

fn gcv_score(ops: &Operators, p: &Prepared, lambda: f64) -> Result<f64> {
    let sol = solve_for(ops, p, lambda, true)?;
    let n = p.x.len() as f64;
    let wmean = p.w.iter().sum::<f64>() / n;
    let rss: f64 = (0..p.x.len())
        .map(|i| p.w[i] / wmean * (p.y[i] - sol.g[i]).powi(2))
        .sum();
    let denom = 1.0 - sol.trace / n;
    Ok((rss / n) / (denom * denom))
}

/// Natural λ scale: ratio of the traces of R and QᵀW⁻¹Q.
fn lambda_scale(ops: &Operators, p: &Prepared) -> f64 {
    let winv: Vec<f64> = p.w.iter().map(|w| 1.0 / w).collect();
    let qtwq = ops.q.transpose().mul(&ops.q.scale_columns_rows(&winv));
    let tr_r: f64 = ops.r.diagonal().iter().sum();
    let tr_q: f64 = qtwq.diagonal().iter().sum();
    tr_r / tr_q
}

fn select_lambda_gcv(ops: &Operators, p: &Prepared) -> Result<f64> {
    let scale = lambda_scale(ops, p);
    let score = |u: f64| gcv_score(ops, p, scale * 10f64.powf(u));
    // Coarse grid in log10(λ / scale), then golden-section refinement.
    let grid: Vec<f64> = (0..=48).map(|i| -12.0 + 0.5 * i as f64).collect();
    let mut best = (f64::INFINITY, 0usize);
    for (i, &u) in grid.iter().enumerate() {
        let s = score(u)?;
        if s < best.0 {
            best = (s, i);
        }
    }
    let lo_i = best.1.saturating_sub(1);
    let hi_i = (best.1 + 1).min(grid.len() - 1);
    let (mut a, mut b) = (grid[lo_i], grid[hi_i]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = score(c)?;
    let mut fd = score(d)?;
    while b - a > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = score(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = score(d)?;
        }
    }
    let u = if fc < fd { c } else { d };
    let u = if best.0 < fc.min(fd) { grid[best.1] } else { u };
    Ok(scale * 10f64.powf(u))
}

/// Fits the smoothing spline of `y` on `x`. Duplicate abscissae are merged
/// by averaging their responses.
pub fn fit_smoothing_spline(x: &[f64], y: &[f64], lambda: Lambda) -> Result<SmoothingSpline> {
    let p = prepare(x, y)?;
    let ops = Operators::new(&p.x);
    let lambda = match lambda {
        Lambda::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Lambda::Fixed(l) => return Err(Error::HyperParams(format!("smoothing parameter must be >= 0, got {l}"))),
        Lambda::Gcv => select_lambda_gcv(&ops, &p)?,
    };
    let sol = solve_for(&ops, &p, lambda, true)?;
    Ok(SmoothingSpline::from_solution(p.x, &ops.h, sol, lambda))
}

impl SmoothingSpline {
    fn from_solution(knots: Vec<f64>, h: &[f64], sol: Solution, lambda: f64) -> Self {
        let n = knots.len();
        let mut gamma = vec![0.0; n];
        gamma[1..n - 1].copy_from_slice(&sol.gamma);
        let g = sol.g;
        let mut a = Vec::with_capacity(n - 1);
        let mut b = Vec::with_capacity(n - 1);
        let mut c = Vec::with_capacity(n - 1);
        let mut d = Vec::with_capacity(n - 1);
        for j in 0..n - 1 {
            a.push(g[j]);
            b.push((g[j + 1] - g[j]) / h[j] - h[j] * (2.0 * gamma[j] + gamma[j + 1]) / 6.0);
            c.push(gamma[j] / 2.0);
            d.push((gamma[j + 1] - gamma[j]) / (6.0 * h[j]));
        }
        SmoothingSpline {
            knots,
            a,
            b,
            c,
            d,
            lambda,
            edf: sol.trace,
        }
    }

    /// Natural interpolating spline through `(x, g)` (λ = 0).
    pub fn interpolating(x: &[f64], g: &[f64]) -> Result<Self> {
        fit_smoothing_spline(x, g, Lambda::Fixed(0.0))
    }

    pub fn range(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    fn segment(&self, x0: f64) -> Result<usize> {
        let (lo, hi) = self.range();
        if !(x0 >= lo && x0 <= hi) {
            return Err(Error::OutOfRange { x: x0, lo, hi });
        }
        let j = self.knots.partition_point(|&k| k <= x0);
        Ok(j.saturating_sub(1).min(self.a.len() - 1))
    }

    pub fn eval(&self, x0: f64) -> Result<f64> {
        let j = self.segment(x0)?;
        let t = x0 - self.knots[j];
        Ok(self.a[j] + t * (self.b[j] + t * (self.c[j] + t * self.d[j])))
    }

    pub fn derivative(&self, x0: f64) -> Result<f64> {
        let j = self.segment(x0)?;
        let t = x0 - self.knots[j];
        Ok(self.b[j] + t * (2.0 * self.c[j] + 3.0 * t * self.d[j]))
    }

    pub fn second_derivative(&self, x0: f64) -> Result<f64> {
        let j = self.segment(x0)?;
        let t = x0 - self.knots[j];
        Ok(2.0 * self.c[j] + 6.0 * self.d[j] * t)
    }

    /// The spline `x ↦ self(s·x)` on knots divided by `s`. This is what a refit
    /// on `(x/s, y)` with smoothing parameter `λ/s³` produces.
    pub fn rescaled_abscissa(&self, s: f64) -> Self {
        SmoothingSpline {
            knots: self.knots.iter().map(|k| k / s).collect(),
            a: self.a.clone(),
            b: self.b.iter().map(|v| v * s).collect(),
            c: self.c.iter().map(|v| v * s * s).collect(),
            d: self.d.iter().map(|v| v * s * s * s).collect(),
            lambda: self.lambda / (s * s * s),
            edf: self.edf,
        }
    }

    /// Value at every knot.
    pub fn knot_values(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        let j = self.a.len() - 1;
        let h = self.knots[j + 1] - self.knots[j];
        v.push(self.a[j] + h * (self.b[j] + h * (self.c[j] + h * self.d[j])));
        v
    }

    /// `∫ f''(x)² dx` over the knot range.
    pub fn roughness(&self) -> f64 {
        (0..self.a.len())
            .map(|j| {
                let h = self.knots[j + 1] - self.knots[j];
                let (p, q) = (2.0 * self.c[j], 6.0 * self.d[j]);
                p * p * h + p * q * h * h + q * q * h * h * h / 3.0
            })
            .sum()
    }
}

pub fn eval_spline(spline: &SmoothingSpline, x0: f64) -> Result<f64> {
    spline.eval(x0)
}

/// Penalized criterion `Σ (y_i − f(x_i))² + λ ∫ f''²` of a spline on raw data.
pub fn penalized_criterion(spline: &SmoothingSpline, x: &[f64], y: &[f64], lambda: f64) -> Result<f64> {
    let mut rss = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        rss += (yi - spline.eval(xi)?).powi(2);
    }
    Ok(rss + lambda * spline.roughness())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::RandomSource;

    fn noisy(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = RandomSource::new(seed);
        let x: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 4.0).collect();
        let y = x.iter().map(|&v| (2.0 * v).sin() + 0.3 * rng.normal()).collect();
        (x, y)
    }

    #[test]
    fn lines_are_reproduced() {
        let x = [0.0, 0.3, 1.0, 1.7, 2.0, 3.5];
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        for lambda in [Lambda::Fixed(0.0), Lambda::Fixed(10.0), Lambda::Gcv] {
            let s = fit_smoothing_spline(&x, &y, lambda).unwrap();
            for t in [0.0, 0.15, 1.35, 2.9, 3.5] {
                assert!((s.eval(t).unwrap() - (2.0 - 0.5 * t)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_lambda_interpolates() {
        let (x, y) = noisy(20, 1);
        let s = fit_smoothing_spline(&x, &y, Lambda::Fixed(0.0)).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert!((s.eval(*xi).unwrap() - yi).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_lambda_gives_least_squares_line() {
        let (x, y) = noisy(30, 2);
        let s = fit_smoothing_spline(&x, &y, Lambda::Fixed(1e12)).unwrap();
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let slope = sxy / sxx;
        let icept = my - slope * mx;
        assert!((s.derivative(1.0).unwrap() - slope).abs() < 1e-3);
        assert!((s.eval(0.0).unwrap() - icept).abs() < 1e-3);
    }

    #[test]
    fn continuity_and_natural_ends() {
        let (x, y) = noisy(25, 3);
        let s = fit_smoothing_spline(&x, &y, Lambda::Gcv).unwrap();
        for j in 1..s.a.len() {
            let h = s.knots[j] - s.knots[j - 1];
            let v = s.a[j - 1] + h * (s.b[j - 1] + h * (s.c[j - 1] + h * s.d[j - 1]));
            let d1 = s.b[j - 1] + 2.0 * s.c[j - 1] * h + 3.0 * s.d[j - 1] * h * h;
            let d2 = 2.0 * s.c[j - 1] + 6.0 * s.d[j - 1] * h;
            assert!((v - s.a[j]).abs() < 1e-8);
            assert!((d1 - s.b[j]).abs() < 1e-8);
            assert!((d2 - 2.0 * s.c[j]).abs() < 1e-8);
        }
        let (lo, hi) = s.range();
        assert!(s.second_derivative(lo).unwrap().abs() < 1e-8);
        assert!(s.second_derivative(hi).unwrap().abs() < 1e-8);
        assert!(s.edf > 2.0 && s.edf < 25.0);
    }

    #[test]
    fn duplicates_are_averaged() {
        let x = [0.0, 1.0, 1.0, 2.0, 3.0];
        let y = [0.0, 1.0, 3.0, 4.0, 9.0];
        let s = fit_smoothing_spline(&x, &y, Lambda::Fixed(0.0)).unwrap();
        assert_eq!(s.knots, vec![0.0, 1.0, 2.0, 3.0]);
        assert!((s.eval(1.0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn near_duplicates_are_merged() {
        let x = [0.0, 1.0, 1.0 + 1e-9, 2.0, 3.0];
        let y = [0.0, 1.0, 3.0, 4.0, 9.0];
        let s = fit_smoothing_spline(&x, &y, Lambda::Fixed(0.0)).unwrap();
        assert_eq!(s.knots, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            fit_smoothing_spline(&[0.0, 1.0, 1.0, 2.0], &[0.0; 4], Lambda::Gcv),
            Err(Error::InsufficientData { needed: 4, got: 3 })
        ));
        assert!(matches!(
            fit_smoothing_spline(&[0.0, 1.0, 2.0, f64::NAN], &[0.0; 4], Lambda::Gcv),
            Err(Error::NonFinite(_))
        ));
        let s = fit_smoothing_spline(&[0.0, 1.0, 2.0, 3.0], &[0.0, 1.0, 0.0, 1.0], Lambda::Fixed(0.1)).unwrap();
        assert!(matches!(s.eval(3.5), Err(Error::OutOfRange { .. })));
        assert!(matches!(s.eval(-0.1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn refit_on_scaled_abscissa_matches_rescaling() {
        let (x, y) = noisy(40, 5);
        let s = 1.7;
        let f = fit_smoothing_spline(&x, &y, Lambda::Gcv).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v / s).collect();
        let refit = fit_smoothing_spline(&xs, &y, Lambda::Gcv).unwrap();
        let fixed = fit_smoothing_spline(&xs, &y, Lambda::Fixed(f.lambda / s.powi(3))).unwrap();
        let r = f.rescaled_abscissa(s);
        for t in [0.0, 0.3, 1.1, 2.0, 2.35] {
            assert!((fixed.eval(t).unwrap() - r.eval(t).unwrap()).abs() < 1e-8);
            assert!((refit.eval(t).unwrap() - r.eval(t).unwrap()).abs() < 1e-4);
        }
    }

    #[test]
    fn perturbing_fitted_values_does_not_lower_criterion() {
        let (x, y) = noisy(30, 6);
        let lambda = 0.05;
        let f = fit_smoothing_spline(&x, &y, Lambda::Fixed(lambda)).unwrap();
        let j0 = penalized_criterion(&f, &x, &y, lambda).unwrap();
        let g = f.knot_values();
        for i in 0..g.len() {
            for eps in [1e-4, -1e-4] {
                let mut gp = g.clone();
                gp[i] += eps;
                let alt = SmoothingSpline::interpolating(&f.knots, &gp).unwrap();
                assert!(penalized_criterion(&alt, &x, &y, lambda).unwrap() >= j0 - 1e-12);
            }
        }
    }

    #[test]
    fn matches_piecewise_oracle() {
        let (x, y) = noisy(15, 7);
        let f = fit_smoothing_spline(&x, &y, Lambda::Fixed(0.01)).unwrap();
        let mut rng = RandomSource::new(8);
        for _ in 0..50 {
            let t = rng.uniform() * 4.0;
            let j = f.knots.iter().rposition(|&k| k <= t).unwrap().min(f.a.len() - 1);
            let u = t - f.knots[j];
            let want = f.a[j] + f.b[j] * u + f.c[j] * u * u + f.d[j] * u * u * u;
            assert!((f.eval(t).unwrap() - want).abs() <= 1e-10);
        }
    }

    #[test]
    fn gcv_prefers_moderate_smoothing() {
        let (x, y) = noisy(80, 4);
        let s = fit_smoothing_spline(&x, &y, Lambda::Gcv).unwrap();
        // Neither interpolation nor a straight line.
        assert!(s.edf > 4.0 && s.edf < 30.0, "edf {}", s.edf);
        let truth: f64 = x
            .iter()
            .map(|&v| (s.eval(v).unwrap() - (2.0 * v).sin()).powi(2))
            .sum::<f64>()
            / 80.0;
        assert!(truth < 0.03, "mse {truth}");
    }
}
