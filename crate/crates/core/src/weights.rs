//! Weight families W(x', x_N) with exact x_N-derivatives and Hardy ratios.
//!
//! Every family is evaluated from closed forms. The Hardy ratio
//! `W^p / |W_{x_N}|^{p-1}` is also computed in closed form so that it stays
//! finite where `W` and `W_{x_N}` individually under- or overflow.

use serde::{Deserialize, Serialize};
use std::f64::consts::E;
use thiserror::Error;

/// Points with `|x'|` below this radius are rejected for families with a
/// `|x'|^{-β}` factor, β > 0.
pub const PRIME_SINGULAR_RADIUS: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("parameter out of range: {0}")]
    ParameterOutOfRange(String),
    #[error("unsupported dimension N={0} (need N >= 2)")]
    UnsupportedDimension(usize),
    #[error("singular point: {0}")]
    SingularPoint(String),
    #[error("point outside the weight's domain of definition: {0}")]
    OutsideDomain(String),
    #[error("point has {got} coordinates, weight expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("grid is empty")]
    EmptyGrid,
}

/// The weight families, parameterized exactly as they are written down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightFamily {
    /// `x_N^γ / |x'|^β`
    PowerXn { gamma: f64, beta: f64 },
    /// `(ε₀ + x_N)^γ`
    ShiftedPower { gamma: f64, eps0: f64 },
    /// `(1 + x_N)^γ / |x'|^β`
    ShiftedPowerOverPrime { gamma: f64, beta: f64 },
    /// `log(e + x_N)`
    LogShift,
    /// `e^{γ x_N}`
    Exp { gamma: f64 },
    /// `e^{-γ x_N}`
    ExpNeg { gamma: f64 },
    /// `arctan(x_N)`
    Arctan,
    /// `(1 + x_N)^{γ - p + 1}` with γ < p - 1
    DecreasingShiftedPower { gamma: f64, p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub family: WeightFamily,
    pub dim: usize,
    pub monotonicity: Monotonicity,
}

/// Value, x_N-derivative and Hardy ratio at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightEval {
    pub w: f64,
    pub w_xn: f64,
    pub hardy_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignClass {
    Positive,
    Negative,
    Mixed,
}

/// Grid-level witnesses for the structural conditions on a weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub w0_ok: bool,
    pub w1_sign: SignClass,
    /// Grid infimum of the Hardy ratio, present when strictly positive.
    pub w2_constant: Option<f64>,
    /// Grid supremum of `|∇W| / |W_{x_N}|`, present when finite.
    pub chuva_constant: Option<f64>,
    pub grid_descriptor: String,
}

pub fn make_weight(family: WeightFamily, dim: usize) -> Result<WeightSpec, WeightError> {
    use WeightFamily::*;
    if dim < 2 {
        return Err(WeightError::UnsupportedDimension(dim));
    }
    let out_of_range = |msg: String| Err(WeightError::ParameterOutOfRange(msg));
    let finite = |v: f64, name: &str| -> Result<(), WeightError> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(WeightError::ParameterOutOfRange(format!("{name} must be finite")))
        }
    };
    let max_beta = (dim - 1) as f64;
    let monotonicity = match family {
        PowerXn { gamma, beta } | ShiftedPowerOverPrime { gamma, beta } => {
            finite(gamma, "gamma")?;
            finite(beta, "beta")?;
            if gamma <= 0.0 {
                return out_of_range(format!("gamma > 0 required, got {gamma}"));
            }
            if beta >= max_beta {
                return out_of_range(format!("beta < N-1 = {max_beta} required, got beta = {beta}"));
            }
            Monotonicity::Increasing
        }
        ShiftedPower { gamma, eps0 } => {
            finite(gamma, "gamma")?;
            finite(eps0, "eps0")?;
            if gamma <= 0.0 {
                return out_of_range(format!("gamma > 0 required, got {gamma}"));
            }
            if eps0 <= 0.0 {
                return out_of_range(format!("eps0 > 0 required, got {eps0}"));
            }
            Monotonicity::Increasing
        }
        LogShift | Arctan => Monotonicity::Increasing,
        Exp { gamma } => {
            finite(gamma, "gamma")?;
            if gamma <= 0.0 {
                return out_of_range(format!("gamma > 0 required, got {gamma}"));
            }
            Monotonicity::Increasing
        }
        ExpNeg { gamma } => {
            finite(gamma, "gamma")?;
            if gamma <= 0.0 {
                return out_of_range(format!("gamma > 0 required, got {gamma}"));
            }
            Monotonicity::Decreasing
        }
        DecreasingShiftedPower { gamma, p } => {
            finite(gamma, "gamma")?;
            finite(p, "p")?;
            if p <= 1.0 {
                return out_of_range(format!("p > 1 required, got {p}"));
            }
            if gamma >= p - 1.0 {
                return out_of_range(format!("gamma < p-1 = {} required, got gamma = {gamma}", p - 1.0));
            }
            Monotonicity::Decreasing
        }
    };
    Ok(WeightSpec { family, dim, monotonicity })
}

fn prime_norm(x: &[f64]) -> f64 {
    x[..x.len() - 1].iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl WeightSpec {
    /// Short identifier used in reports and config files.
    pub fn name(&self) -> &'static str {
        use WeightFamily::*;
        match self.family {
            PowerXn { .. } => "power",
            ShiftedPower { .. } => "shifted_power",
            ShiftedPowerOverPrime { .. } => "shifted_power_over_prime",
            LogShift => "log",
            Exp { .. } => "exp",
            ExpNeg { .. } => "exp_neg",
            Arctan => "arctan",
            DecreasingShiftedPower { .. } => "decreasing_shifted_power",
        }
    }

    /// β of the `|x'|^{-β}` factor, zero for families without one.
    pub fn prime_exponent(&self) -> f64 {
        match self.family {
            WeightFamily::PowerXn { beta, .. } | WeightFamily::ShiftedPowerOverPrime { beta, .. } => beta,
            _ => 0.0,
        }
    }

    /// True when W depends on x_N only.
    pub fn depends_on_xn_only(&self) -> bool {
        self.prime_exponent() == 0.0
    }

    /// True when `W_{x_N}` blows up as `x_N → 0⁺` (integrably).
    pub fn singular_at_zero(&self) -> bool {
        matches!(self.family, WeightFamily::PowerXn { gamma, .. } if gamma < 1.0)
    }

    fn check_point(&self, x: &[f64]) -> Result<(), WeightError> {
        if x.len() != self.dim {
            return Err(WeightError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let beta = self.prime_exponent();
        if beta > 0.0 && prime_norm(x) < PRIME_SINGULAR_RADIUS {
            return Err(WeightError::SingularPoint(format!(
                "|x'| < {PRIME_SINGULAR_RADIUS:e} with beta = {beta} > 0"
            )));
        }
        let xn = x[self.dim - 1];
        let lower = match self.family {
            WeightFamily::PowerXn { .. } | WeightFamily::Arctan => Some(0.0),
            WeightFamily::ShiftedPower { eps0, .. } => Some(-eps0),
            WeightFamily::ShiftedPowerOverPrime { .. } | WeightFamily::DecreasingShiftedPower { .. } => Some(-1.0),
            WeightFamily::LogShift => Some(1.0 - E),
            WeightFamily::Exp { .. } | WeightFamily::ExpNeg { .. } => None,
        };
        match lower {
            Some(lo) if xn < lo || !xn.is_finite() => Err(WeightError::OutsideDomain(format!(
                "{} weight needs x_N >= {lo}, got {xn}",
                self.name()
            ))),
            _ => Ok(()),
        }
    }

    /// `W(x)`, admissible on the closure of the weight's domain (used for
    /// boundary traces).
    pub fn value(&self, x: &[f64]) -> Result<f64, WeightError> {
        use WeightFamily::*;
        self.check_point(x)?;
        let xn = x[self.dim - 1];
        let pr = |beta: f64| if beta == 0.0 { 1.0 } else { prime_norm(x).powf(-beta) };
        Ok(match self.family {
            PowerXn { gamma, beta } => xn.powf(gamma) * pr(beta),
            ShiftedPower { gamma, eps0 } => (eps0 + xn).powf(gamma),
            ShiftedPowerOverPrime { gamma, beta } => (1.0 + xn).powf(gamma) * pr(beta),
            LogShift => (E + xn).ln(),
            Exp { gamma } => (gamma * xn).exp(),
            ExpNeg { gamma } => (-gamma * xn).exp(),
            Arctan => xn.atan(),
            DecreasingShiftedPower { gamma, p } => (1.0 + xn).powf(gamma - p + 1.0),
        })
    }

    /// `(W, W_{x_N}, W^p/|W_{x_N}|^{p-1})` at an interior point.
    pub fn eval(&self, x: &[f64], p: f64) -> Result<WeightEval, WeightError> {
        use WeightFamily::*;
        self.check_point(x)?;
        let xn = x[self.dim - 1];
        let pr = |beta: f64| if beta == 0.0 { 1.0 } else { prime_norm(x).powf(-beta) };
        let q = p - 1.0;
        let out = match self.family {
            PowerXn { gamma, beta } => {
                if xn == 0.0 && gamma < 1.0 {
                    return Err(WeightError::SingularPoint(format!(
                        "x_N = 0 with gamma = {gamma} < 1"
                    )));
                }
                let f = pr(beta);
                WeightEval {
                    w: xn.powf(gamma) * f,
                    w_xn: gamma * xn.powf(gamma - 1.0) * f,
                    hardy_ratio: xn.powf(gamma + q) * f / gamma.powf(q),
                }
            }
            ShiftedPower { gamma, eps0 } => {
                let y = eps0 + xn;
                if y == 0.0 && gamma < 1.0 {
                    return Err(WeightError::SingularPoint(format!(
                        "x_N = -eps0 with gamma = {gamma} < 1"
                    )));
                }
                WeightEval {
                    w: y.powf(gamma),
                    w_xn: gamma * y.powf(gamma - 1.0),
                    hardy_ratio: y.powf(gamma + q) / gamma.powf(q),
                }
            }
            ShiftedPowerOverPrime { gamma, beta } => {
                let y = 1.0 + xn;
                let f = pr(beta);
                WeightEval {
                    w: y.powf(gamma) * f,
                    w_xn: gamma * y.powf(gamma - 1.0) * f,
                    hardy_ratio: y.powf(gamma + q) * f / gamma.powf(q),
                }
            }
            LogShift => {
                let y = E + xn;
                let l = y.ln();
                WeightEval { w: l, w_xn: 1.0 / y, hardy_ratio: y.powf(q) * l.powf(p) }
            }
            Exp { gamma } => {
                let e = (gamma * xn).exp();
                WeightEval { w: e, w_xn: gamma * e, hardy_ratio: e / gamma.powf(q) }
            }
            ExpNeg { gamma } => {
                let e = (-gamma * xn).exp();
                WeightEval { w: e, w_xn: -gamma * e, hardy_ratio: e / gamma.powf(q) }
            }
            Arctan => {
                let s = 1.0 + xn * xn;
                let a = xn.atan();
                WeightEval { w: a, w_xn: 1.0 / s, hardy_ratio: a.powf(p) * s.powf(q) }
            }
            DecreasingShiftedPower { gamma, p: pf } => {
                let a = gamma - pf + 1.0;
                let y = 1.0 + xn;
                WeightEval {
                    w: y.powf(a),
                    w_xn: a * y.powf(a - 1.0),
                    hardy_ratio: y.powf(a + q) / (-a).powf(q),
                }
            }
        };
        Ok(out)
    }

    /// Full gradient of W; the last entry equals `W_{x_N}`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>, WeightError> {
        let ev = self.eval(x, 2.0)?;
        let n = self.dim;
        let mut g = vec![0.0; n];
        g[n - 1] = ev.w_xn;
        let beta = self.prime_exponent();
        if beta != 0.0 {
            let r2: f64 = x[..n - 1].iter().map(|v| v * v).sum();
            for i in 0..n - 1 {
                g[i] = -beta * ev.w * x[i] / r2;
            }
        }
        Ok(g)
    }
}

/// Grid check of (W₀), (W₁±), (W₂±) and the full-gradient bound
/// `|∇W| ≤ c₄ |W_{x_N}|`.
pub fn check_conditions(
    spec: &WeightSpec,
    p: f64,
    grid: &[Vec<f64>],
) -> Result<ConditionReport, WeightError> {
    if grid.is_empty() {
        return Err(WeightError::EmptyGrid);
    }
    if p <= 1.0 {
        return Err(WeightError::ParameterOutOfRange(format!("p > 1 required, got {p}")));
    }
    let mut finite = true;
    let (mut pos, mut neg) = (false, false);
    let mut ratio_inf = f64::INFINITY;
    let mut chuva_sup: f64 = 0.0;
    for x in grid {
        let ev = spec.eval(x, p)?;
        let g = spec.gradient(x)?;
        finite &= ev.w.is_finite() && ev.w_xn.is_finite() && ev.hardy_ratio.is_finite() && ev.w >= 0.0;
        if ev.w_xn > 0.0 {
            pos = true;
        } else if ev.w_xn < 0.0 {
            neg = true;
        } else {
            pos = true;
            neg = true;
        }
        ratio_inf = ratio_inf.min(ev.hardy_ratio);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        chuva_sup = chuva_sup.max(gnorm / ev.w_xn.abs());
    }
    let w1_sign = match (pos, neg) {
        (true, false) => SignClass::Positive,
        (false, true) => SignClass::Negative,
        _ => SignClass::Mixed,
    };
    let lo: Vec<f64> = (0..spec.dim)
        .map(|i| grid.iter().map(|x| x[i]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..spec.dim)
        .map(|i| grid.iter().map(|x| x[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(ConditionReport {
        w0_ok: finite && locally_integrable(spec),
        w1_sign,
        w2_constant: (ratio_inf > 0.0 && ratio_inf.is_finite()).then_some(ratio_inf),
        chuva_constant: chuva_sup.is_finite().then_some(chuva_sup),
        grid_descriptor: format!("{} points, bounding box lo={lo:?} hi={hi:?}", grid.len()),
    })
}

/// Exponent-level integrability of W and W_{x_N} near their singular sets.
fn locally_integrable(spec: &WeightSpec) -> bool {
    let beta_ok = spec.prime_exponent() < (spec.dim - 1) as f64;
    match spec.family {
        // x_N^{γ-1} is integrable at 0 iff γ > 0.
        WeightFamily::PowerXn { gamma, .. } => gamma > 0.0 && beta_ok,
        _ => beta_ok,
    }
}

/// Points `(x', x_N)` on a tensor grid: `x'` fixed at `prime`, x_N uniform on
/// `[lo, hi]` with `count` points.
pub fn xn_grid(dim: usize, prime: &[f64], lo: f64, hi: f64, count: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|i| {
            let t = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            let mut x = prime.to_vec();
            x.resize(dim - 1, 0.0);
            x.push(lo + (hi - lo) * t);
            x
        })
        .collect()
}
