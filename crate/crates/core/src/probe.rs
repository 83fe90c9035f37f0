//! Divergence rates of `∫_{x_N>ε} |u|^p x_N^{γ-p}` for plateau functions
//! sitting on the boundary, and the analytic regime of `(γ, p)`.

use crate::geometry::{AaBox, GraphDomain};
use crate::quad::{integrate_region_vec, integrate_truncated_with, QuadError, QuadSettings, Region, SingularHint};
use crate::testfn::{TestFnFamily, TestFunction};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest RMS residual of the log-log increment fit.
pub const FIT_RESIDUAL_MAX: f64 = 0.05;
/// Slopes within this of 0 are logarithmic.
pub const LOG_SLOPE_BAND: f64 = 0.1;
/// Convergence needs successive differences below this.
pub const CAUCHY_TOL: f64 = 1e-6;
/// Smallest `ε = 2^{-k}` tried while waiting for the Cauchy criterion.
pub const MAX_EXTENSION_K: i32 = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("invalid probe input: {0}")]
    BadInput(String),
    #[error("fit ambiguous: slope {slope}, residual {residual}")]
    FitAmbiguous { slope: f64, residual: f64 },
    #[error(transparent)]
    Quad(#[from] QuadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Classification {
    ConvergesTo { limit: f64 },
    PowerDivergence { exponent: f64 },
    LogDivergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularRegime {
    InequalityHolds,
    FailsByDivergence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub gamma: f64,
    pub p: f64,
    /// Requested sequence, then any extension used for the Cauchy check.
    pub eps_values: Vec<f64>,
    pub integrals: Vec<f64>,
    pub classification: Classification,
    /// Slope of `ln ΔI` against `ln(1/ε)` over the requested sequence.
    pub fitted_slope: f64,
    pub fit_residual: f64,
    /// `∫ x_N^γ |∇u|^p` for the same `u`.
    pub rhs_integral: f64,
}

/// `ε_k = 2^{-k}`, `k = 4..=14`.
pub fn default_eps() -> Vec<f64> {
    (4..=14).map(|k| 2f64.powi(-k)).collect()
}

/// `γ > p - 1`.
pub fn classify_singular(gamma: f64, p: f64) -> SingularRegime {
    debug_assert!(p > 1.0);
    if gamma > p - 1.0 {
        SingularRegime::InequalityHolds
    } else {
        SingularRegime::FailsByDivergence
    }
}

/// Exponent of `ε^{-k}` growth predicted for a boundary plateau.
pub fn predicted_exponent(gamma: f64, p: f64) -> f64 {
    p - gamma - 1.0
}

fn check_plateau(u: &TestFunction) -> Result<(), ProbeError> {
    match &u.family {
        TestFnFamily::Plateau { r_inner, center, .. } if center[center.len() - 1].abs() < *r_inner => Ok(()),
        _ => Err(ProbeError::BadInput("u must be a plateau whose inner ball meets x_N = 0".into())),
    }
}

/// Least squares `y = a + b·x`; returns `(b, rms residual)`.
fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    (b, (rss / n).sqrt())
}

pub fn divergence_scan(gamma: f64, p: f64, u: &TestFunction, eps_seq: &[f64]) -> Result<DivergenceReport, ProbeError> {
    if !(p > 1.0 && gamma.is_finite()) {
        return Err(ProbeError::BadInput(format!("need p > 1 and finite gamma (p={p}, gamma={gamma})")));
    }
    check_plateau(u)?;
    if eps_seq.len() < 5 || eps_seq.windows(2).any(|w| !(w[1] < w[0])) || eps_seq.iter().any(|e| !(*e > 0.0)) {
        return Err(ProbeError::BadInput("eps sequence must be positive, strictly decreasing, with >= 5 values".into()));
    }
    let n = u.dim();
    let domain = GraphDomain::flat(n);
    let bx = positive_part(&u.support_box);
    let f = |x: &[f64]| {
        let v = u.value(x).abs();
        if v == 0.0 {
            0.0
        } else {
            v.powf(p) * x[n - 1].powf(gamma - p)
        }
    };
    let truncated = |eps: f64| integrate_truncated_with(&f, &domain, &bx, eps, SingularHint::None, QuadSettings::default().max_cells);
    let mut integrals = eps_seq.par_iter().map(|&e| truncated(e)).collect::<Result<Vec<f64>, QuadError>>()?;
    let mut eps_values = eps_seq.to_vec();

    let (xs, ys): (Vec<f64>, Vec<f64>) = eps_values
        .windows(2)
        .zip(integrals.windows(2))
        .map(|(e, i)| ((1.0 / e[1]).ln(), (i[1] - i[0]).abs().max(f64::MIN_POSITIVE).ln()))
        .unzip();
    let (slope, residual) = fit_line(&xs, &ys);

    let classification = if slope > LOG_SLOPE_BAND && residual < FIT_RESIDUAL_MAX {
        Classification::PowerDivergence { exponent: slope }
    } else if slope.abs() <= LOG_SLOPE_BAND && residual < FIT_RESIDUAL_MAX {
        Classification::LogDivergence
    } else if slope < -LOG_SLOPE_BAND {
        // Halve ε until successive differences shrink below the Cauchy tolerance.
        let mut k = -eps_values[eps_values.len() - 1].log2().floor() as i32;
        let mut last_diff = (integrals[integrals.len() - 1] - integrals[integrals.len() - 2]).abs();
        while last_diff >= CAUCHY_TOL && k < MAX_EXTENSION_K {
            k += 1;
            let e = 2f64.powi(-k);
            let v = truncated(e)?;
            let diff = (v - integrals[integrals.len() - 1]).abs();
            if diff > last_diff {
                return Err(ProbeError::FitAmbiguous { slope, residual });
            }
            eps_values.push(e);
            integrals.push(v);
            last_diff = diff;
        }
        if last_diff >= CAUCHY_TOL {
            return Err(ProbeError::FitAmbiguous { slope, residual });
        }
        Classification::ConvergesTo { limit: integrals[integrals.len() - 1] }
    } else {
        return Err(ProbeError::FitAmbiguous { slope, residual });
    };

    let g = |x: &[f64], out: &mut [f64]| {
        let (_, grad) = u.eval(x);
        let gn = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        out[0] = if gn == 0.0 { 0.0 } else { gn.powf(p) * x[n - 1].powf(gamma) };
    };
    let rhs = integrate_region_vec(&g, 1, Region::Above(&domain), &bx, &QuadSettings::default(), SingularHint::GradedTowardBoundary)?;

    Ok(DivergenceReport {
        gamma,
        p,
        eps_values,
        integrals,
        classification,
        fitted_slope: slope,
        fit_residual: residual,
        rhs_integral: rhs[0].value,
    })
}

fn positive_part(b: &AaBox) -> AaBox {
    let n = b.dim();
    let mut out = b.clone();
    out.lo[n - 1] = out.lo[n - 1].max(0.0);
    out
}
