//! Weighted nonlinear least squares for small models, and the exponential
//! storage-time fit `y = H · exp(−x / tau)`.
//!
//! The decay is parametrized with `tau` as a 1/e time. A fit function written
//! as `H e^{−x tau}` would make `tau` a rate; only the 1/e-time reading matches
//! a lifetime quoted in microseconds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::FitError;

/// A model `y = f(x; p)` with an analytic Jacobian.
pub trait Model {
    fn n_params(&self) -> usize;
    fn eval(&self, x: f64, p: &[f64]) -> f64;
    /// Writes `∂f/∂p_k` at `x` into `out`.
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]);
    /// Whether `p` is inside the model's domain. Steps leaving it are rejected.
    fn admissible(&self, _p: &[f64]) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once an accepted step lowers the objective by less than this fraction.
    pub rel_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iterations: 100, rel_tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// `(Jᵀ W J)⁻¹` at the optimum.
    pub normal_inverse: DMatrix<f64>,
    /// `Σ w_i r_i²`.
    pub chi2: f64,
    pub iterations: usize,
}

fn chi2<M: Model>(m: &M, xs: &[f64], ys: &[f64], w: &[f64], p: &[f64]) -> f64 {
    xs.iter().zip(ys).zip(w).map(|((&x, &y), &wi)| wi * (y - m.eval(x, p)).powi(2)).sum()
}

fn normal_equations<M: Model>(
    m: &M,
    xs: &[f64],
    ys: &[f64],
    w: &[f64],
    p: &[f64],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = m.n_params();
    let mut jtj = DMatrix::zeros(k, k);
    let mut jtr = DVector::zeros(k);
    let mut g = vec![0.0; k];
    for ((&x, &y), &wi) in xs.iter().zip(ys).zip(w) {
        m.gradient(x, p, &mut g);
        let r = y - m.eval(x, p);
        for a in 0..k {
            jtr[a] += wi * g[a] * r;
            for b in 0..k {
                jtj[(a, b)] += wi * g[a] * g[b];
            }
        }
    }
    (jtj, jtr)
}

/// Minimizes `Σ w_i (y_i − f(x_i; p))²` from `p0`.
///
/// Plain Gauss–Newton steps are tried first; Levenberg damping is switched on
/// (and grown tenfold) only when a step fails to lower the objective, and is
/// relaxed again after successful steps.
pub fn least_squares<M: Model>(
    m: &M,
    xs: &[f64],
    ys: &[f64],
    weights: &[f64],
    p0: &[f64],
    opts: &SolverOptions,
) -> Result<LsqSolution, FitError> {
    let k = m.n_params();
    let mut p = p0.to_vec();
    let mut cost = chi2(m, xs, ys, weights, &p);
    let scale: f64 = ys.iter().zip(weights).map(|(y, w)| w * y * y).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut lambda = 0.0f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        if cost <= 1e-28 * scale {
            converged = true;
            break;
        }
        let (jtj, jtr) = normal_equations(m, xs, ys, weights, &p);
        let mut a = jtj.clone();
        for d in 0..k {
            a[(d, d)] += lambda * jtj[(d, d)];
        }
        let step = a.lu().solve(&jtr).ok_or(FitError::Singular)?;
        let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(pi, s)| pi + s).collect();
        let trial_cost = if m.admissible(&trial) { chi2(m, xs, ys, weights, &trial) } else { f64::INFINITY };
        if trial_cost.is_finite() && trial_cost <= cost {
            let decrease = (cost - trial_cost) / cost;
            let step_small = step.iter().zip(&p).all(|(s, pi)| s.abs() <= 1e-15 * pi.abs().max(1e-300));
            p = trial;
            cost = trial_cost;
            lambda = if lambda > 1e-10 { lambda / 10.0 } else { 0.0 };
            if decrease < opts.rel_tolerance || step_small {
                converged = true;
                break;
            }
        } else {
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
            if lambda > 1e16 {
                // No descent direction left at machine precision.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(FitError::NoConvergence { iterations, residual_norm: cost.sqrt() });
    }
    let (jtj, _) = normal_equations(m, xs, ys, weights, &p);
    let normal_inverse = jtj.try_inverse().ok_or(FitError::Singular)?;
    Ok(LsqSolution { params: p, normal_inverse, chi2: cost, iterations })
}

/// `H · exp(−x / tau)` with parameters `[H, tau]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpDecay;

impl Model for ExpDecay {
    fn n_params(&self) -> usize {
        2
    }

    fn eval(&self, x: f64, p: &[f64]) -> f64 {
        p[0] * (-x / p[1]).exp()
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let e = (-x / p[1]).exp();
        out[0] = e;
        out[1] = p[0] * x * e / (p[1] * p[1]);
    }

    fn admissible(&self, p: &[f64]) -> bool {
        p[1] > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// Storage time.
    pub x: f64,
    /// Measured efficiency.
    pub y: f64,
    #[serde(default)]
    pub sigma_y: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `1/sigma_y²` when every point has a sigma, unit weights otherwise.
    #[default]
    Sigma,
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub h: f64,
    pub tau: f64,
    pub h_sd: f64,
    pub tau_sd: f64,
    /// Covariance of `(H, tau)`.
    pub covariance: [[f64; 2]; 2],
    /// `sqrt(Σ w r²)`.
    pub residual_norm: f64,
    pub iterations: usize,
    /// Whether the covariance uses the supplied sigmas as absolute errors
    /// (`true`) or is rescaled by the residual variance (`false`).
    pub absolute_sigma: bool,
}

fn weights_for(points: &[ScanPoint], weighting: Weighting) -> (Vec<f64>, bool) {
    let all_sigma = points.iter().all(|p| p.sigma_y.is_some());
    if weighting == Weighting::Sigma && all_sigma {
        (points.iter().map(|p| 1.0 / p.sigma_y.unwrap().powi(2)).collect(), true)
    } else {
        (vec![1.0; points.len()], false)
    }
}

fn check_points(points: &[ScanPoint]) -> Result<(), FitError> {
    if points.len() < 3 {
        return Err(FitError::TooFewPoints { needed: 3, got: points.len() });
    }
    for (index, p) in points.iter().enumerate() {
        if !(p.x >= 0.0 && p.x.is_finite()) {
            return Err(FitError::InvalidPoint { index, reason: format!("x must be finite and >= 0, got {}", p.x) });
        }
        if !(p.y > 0.0 && p.y.is_finite()) {
            return Err(FitError::InvalidPoint { index, reason: format!("y must be > 0 for the log-linear start, got {}", p.y) });
        }
        if let Some(s) = p.sigma_y {
            if !(s > 0.0 && s.is_finite()) {
                return Err(FitError::InvalidPoint { index, reason: format!("sigma_y must be > 0, got {s}") });
            }
        }
    }
    if points.iter().all(|p| p.x == points[0].x) {
        return Err(FitError::DegenerateX);
    }
    Ok(())
}

/// Weighted straight-line fit of `ln y` against `x`; returns `(H, tau)`.
fn log_linear_start(points: &[ScanPoint], w: &[f64]) -> Result<(f64, f64), FitError> {
    // var(ln y) ≈ sigma² / y², so the weight of ln y is w · y².
    let lw: Vec<f64> = points.iter().zip(w).map(|(p, wi)| wi * p.y * p.y).collect();
    let sw: f64 = lw.iter().sum();
    let mx = points.iter().zip(&lw).map(|(p, wi)| wi * p.x).sum::<f64>() / sw;
    let my = points.iter().zip(&lw).map(|(p, wi)| wi * p.y.ln()).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(&lw).map(|(p, wi)| wi * (p.x - mx).powi(2)).sum();
    let sxy: f64 = points.iter().zip(&lw).map(|(p, wi)| wi * (p.x - mx) * (p.y.ln() - my)).sum();
    let slope = sxy / sxx;
    if slope.is_nan() || slope >= 0.0 {
        return Err(FitError::NonDecaying { tau: -1.0 / slope });
    }
    Ok(((my - slope * mx).exp(), -1.0 / slope))
}

/// Fits `y = H · exp(−x / tau)`; `tau` comes out in the units of `x`.
pub fn fit_exponential(points: &[ScanPoint], weighting: Weighting) -> Result<ExpFit, FitError> {
    check_points(points)?;
    let (w, absolute_sigma) = weights_for(points, weighting);
    let (h0, tau0) = log_linear_start(points, &w)?;
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let sol = least_squares(&ExpDecay, &xs, &ys, &w, &[h0, tau0], &SolverOptions::default())?;
    let (h, tau) = (sol.params[0], sol.params[1]);
    if tau.is_nan() || tau <= 0.0 {
        return Err(FitError::NonDecaying { tau });
    }
    let dof = points.len().saturating_sub(2).max(1) as f64;
    let scale = if absolute_sigma { 1.0 } else { sol.chi2 / dof };
    let c = &sol.normal_inverse * scale;
    Ok(ExpFit {
        h,
        tau,
        h_sd: c[(0, 0)].sqrt(),
        tau_sd: c[(1, 1)].sqrt(),
        covariance: [[c[(0, 0)], c[(0, 1)]], [c[(1, 0)], c[(1, 1)]]],
        residual_norm: sol.chi2.sqrt(),
        iterations: sol.iterations,
        absolute_sigma,
    })
}

/// `Σ w_i (y_i − H e^{−x_i/tau})²` for the given weighting.
pub fn exp_objective(points: &[ScanPoint], weighting: Weighting, h: f64, tau: f64) -> f64 {
    let (w, _) = weights_for(points, weighting);
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    chi2(&ExpDecay, &xs, &ys, &w, &[h, tau])
}

/// Analytic gradient `(∂/∂H, ∂/∂tau)` of [`exp_objective`].
pub fn exp_objective_gradient(points: &[ScanPoint], weighting: Weighting, h: f64, tau: f64) -> [f64; 2] {
    let (w, _) = weights_for(points, weighting);
    let mut g = [0.0; 2];
    let mut d = [0.0; 2];
    for (p, wi) in points.iter().zip(&w) {
        ExpDecay.gradient(p.x, &[h, tau], &mut d);
        let r = p.y - ExpDecay.eval(p.x, &[h, tau]);
        g[0] -= 2.0 * wi * r * d[0];
        g[1] -= 2.0 * wi * r * d[1];
    }
    g
}
