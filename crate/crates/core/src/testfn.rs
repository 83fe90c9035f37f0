//! Compactly supported test functions with exact gradients.

use crate::geometry::AaBox;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TestFnError {
    #[error("bad test-function parameters: {0}")]
    BadParameters(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFnFamily {
    /// `exp(1 - 1/(1 - |x-c|²/R²))` inside the ball of radius R.
    RadialBump { center: Vec<f64>, radius: f64 },
    /// Product of one-dimensional bump profiles with per-axis radii.
    ProductBump { center: Vec<f64>, radii: Vec<f64> },
    /// 1 on `B(c, r_inner)`, 0 outside `B(c, r_outer)`, septic smoothstep
    /// in between (C³).
    Plateau { r_inner: f64, r_outer: f64, center: Vec<f64> },
    /// `g(x_N)·χ(|x'|/R)` with `g` a cubic B-spline on `knots` and `χ` the
    /// bump profile.
    SeparableTrial { coeffs: Vec<f64>, knots: Vec<f64>, cutoff_radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub family: TestFnFamily,
    /// Multiplies value and gradient.
    pub scale: f64,
    pub support_box: AaBox,
}

/// `exp(1 - 1/(1 - q))` for `q = t²` and its derivative with respect to q.
#[inline]
fn bump_profile(q: f64) -> (f64, f64) {
    if q >= 1.0 {
        return (0.0, 0.0);
    }
    let d = 1.0 - q;
    let v = (1.0 - 1.0 / d).exp();
    (v, -v / (d * d))
}

/// Septic smoothstep `S(τ) = 35τ⁴ - 84τ⁵ + 70τ⁶ - 20τ⁷` and `S'(τ)`.
#[inline]
fn smoothstep7(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0);
    }
    let t2 = t * t;
    let t3 = t2 * t;
    let v = t3 * t * (35.0 + t * (-84.0 + t * (70.0 - 20.0 * t)));
    let d = t3 * (140.0 + t * (-420.0 + t * (420.0 - 140.0 * t)));
    (v, d)
}

/// Value and derivative of the cubic B-spline basis function supported on
/// the five knots `t`.
#[inline]
pub(crate) fn cubic_basis(t: &[f64], x: f64) -> (f64, f64) {
    if x < t[0] || x >= t[4] {
        return (0.0, 0.0);
    }
    let mut n0 = [0.0; 4];
    for i in 0..4 {
        if t[i] <= x && x < t[i + 1] {
            n0[i] = 1.0;
        }
    }
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
    let mut n1 = [0.0; 3];
    for i in 0..3 {
        n1[i] = ratio(x - t[i], t[i + 1] - t[i]) * n0[i] + ratio(t[i + 2] - x, t[i + 2] - t[i + 1]) * n0[i + 1];
    }
    let mut n2 = [0.0; 2];
    for i in 0..2 {
        n2[i] = ratio(x - t[i], t[i + 2] - t[i]) * n1[i] + ratio(t[i + 3] - x, t[i + 3] - t[i + 1]) * n1[i + 1];
    }
    let v = ratio(x - t[0], t[3] - t[0]) * n2[0] + ratio(t[4] - x, t[4] - t[1]) * n2[1];
    let d = 3.0 * (ratio(n2[0], t[3] - t[0]) - ratio(n2[1], t[4] - t[1]));
    (v, d)
}

/// `Σ c_k B_k(x)` and its derivative for cubic B-splines on `knots`
/// (`knots.len() == coeffs.len() + 4`).
pub(crate) fn spline_eval(coeffs: &[f64], knots: &[f64], x: f64) -> (f64, f64) {
    if x < knots[0] || x >= knots[knots.len() - 1] {
        return (0.0, 0.0);
    }
    // Index of the knot span containing x.
    let j = knots.partition_point(|k| *k <= x).saturating_sub(1);
    let first = j.saturating_sub(3);
    let last = j.min(coeffs.len() - 1);
    let (mut v, mut d) = (0.0, 0.0);
    for k in first..=last {
        let (b, db) = cubic_basis(&knots[k..k + 5], x);
        v += coeffs[k] * b;
        d += coeffs[k] * db;
    }
    (v, d)
}

pub fn make_testfn(family: TestFnFamily) -> Result<TestFunction, TestFnError> {
    let bad = |m: String| Err(TestFnError::BadParameters(m));
    let all_finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    let support_box = match &family {
        TestFnFamily::RadialBump { center, radius } => {
            if !(*radius > 0.0) || !radius.is_finite() || !all_finite(center) || center.len() < 2 {
                return bad(format!("radial bump needs R > 0 and a finite centre of dim >= 2 (R={radius})"));
            }
            AaBox::new(center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())
        }
        TestFnFamily::ProductBump { center, radii } => {
            if radii.len() != center.len() || center.len() < 2 {
                return bad("product bump: centre and radii lengths differ".into());
            }
            if radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) || !all_finite(center) {
                return bad("product bump: radii must be positive and finite".into());
            }
            AaBox::new(
                center.iter().zip(radii).map(|(c, r)| c - r).collect(),
                center.iter().zip(radii).map(|(c, r)| c + r).collect(),
            )
        }
        TestFnFamily::Plateau { r_inner, r_outer, center } => {
            if !(*r_inner > 0.0) || !(r_inner < r_outer) || !r_outer.is_finite() || center.len() < 2 {
                return bad(format!("plateau needs 0 < r_inner < r_outer (got {r_inner}, {r_outer})"));
            }
            if !all_finite(center) {
                return bad("plateau centre must be finite".into());
            }
            AaBox::new(center.iter().map(|c| c - r_outer).collect(), center.iter().map(|c| c + r_outer).collect())
        }
        TestFnFamily::SeparableTrial { coeffs, knots, cutoff_radius } => {
            if knots.len() != coeffs.len() + 4 || coeffs.is_empty() {
                return bad(format!("trial needs knots.len() == coeffs.len() + 4 (got {} and {})", knots.len(), coeffs.len()));
            }
            if knots.windows(2).any(|w| !(w[0] < w[1])) || !all_finite(knots) || !all_finite(coeffs) {
                return bad("trial knots must be finite and strictly increasing".into());
            }
            if !(*cutoff_radius > 0.0) || !cutoff_radius.is_finite() {
                return bad(format!("trial cutoff radius must be positive (got {cutoff_radius})"));
            }
            // Dimension is carried by the box; SeparableTrial defaults to N=2
            // and is rebuilt with `with_dim` for N=3.
            AaBox::new(vec![-cutoff_radius, knots[0]], vec![*cutoff_radius, knots[knots.len() - 1]])
        }
    };
    Ok(TestFunction { family, scale: 1.0, support_box })
}

/// Builds a separable trial for dimension `dim`.
pub fn make_trial(coeffs: Vec<f64>, knots: Vec<f64>, cutoff_radius: f64, dim: usize) -> Result<TestFunction, TestFnError> {
    if !(2..=3).contains(&dim) {
        return Err(TestFnError::BadParameters(format!("trial dimension {dim} unsupported")));
    }
    let mut u = make_testfn(TestFnFamily::SeparableTrial { coeffs, knots, cutoff_radius })?;
    let (klo, khi) = (u.support_box.lo[1], u.support_box.hi[1]);
    let mut lo = vec![-cutoff_radius; dim - 1];
    let mut hi = vec![cutoff_radius; dim - 1];
    lo.push(klo);
    hi.push(khi);
    u.support_box = AaBox::new(lo, hi);
    Ok(u)
}

impl TestFunction {
    pub fn dim(&self) -> usize {
        self.support_box.dim()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { scale: self.scale * factor, ..self.clone() }
    }

    /// Same profile with the argument dilated: `x ↦ u(x / r)` for functions
    /// centred at the origin.
    pub fn dilated(&self, r: f64) -> Result<Self, TestFnError> {
        let fam = match &self.family {
            TestFnFamily::RadialBump { center, radius } => TestFnFamily::RadialBump {
                center: center.iter().map(|c| c * r).collect(),
                radius: radius * r,
            },
            TestFnFamily::ProductBump { center, radii } => TestFnFamily::ProductBump {
                center: center.iter().map(|c| c * r).collect(),
                radii: radii.iter().map(|c| c * r).collect(),
            },
            TestFnFamily::Plateau { r_inner, r_outer, center } => TestFnFamily::Plateau {
                r_inner: r_inner * r,
                r_outer: r_outer * r,
                center: center.iter().map(|c| c * r).collect(),
            },
            TestFnFamily::SeparableTrial { .. } => {
                return Err(TestFnError::BadParameters("dilation of trial functions is not supported".into()))
            }
        };
        Ok(make_testfn(fam)?.scaled(self.scale))
    }

    /// Exact value; writes the exact gradient into `grad` (length N).
    pub fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = x.len();
        let v = match &self.family {
            TestFnFamily::RadialBump { center, radius } => {
                let r2 = radius * radius;
                let q: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>() / r2;
                let (v, dv) = bump_profile(q);
                if v == 0.0 {
                    return 0.0;
                }
                for i in 0..n {
                    grad[i] = dv * 2.0 * (x[i] - center[i]) / r2;
                }
                v
            }
            TestFnFamily::ProductBump { center, radii } => {
                let mut vals = [0.0; 3];
                let mut ders = [0.0; 3];
                for i in 0..n {
                    let t = (x[i] - center[i]) / radii[i];
                    let (v, dq) = bump_profile(t * t);
                    if v == 0.0 {
                        return 0.0;
                    }
                    vals[i] = v;
                    ders[i] = dq * 2.0 * t / radii[i];
                }
                let total: f64 = vals[..n].iter().product();
                for i in 0..n {
                    grad[i] = total / vals[i] * ders[i];
                }
                total
            }
            TestFnFamily::Plateau { r_inner, r_outer, center } => {
                let r = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                if r >= *r_outer {
                    return 0.0;
                }
                if r <= *r_inner {
                    return self.scale;
                }
                let w = r_outer - r_inner;
                let (v, dv) = smoothstep7((r_outer - r) / w);
                for i in 0..n {
                    grad[i] = -dv / w * (x[i] - center[i]) / r;
                }
                v
            }
            TestFnFamily::SeparableTrial { coeffs, knots, cutoff_radius } => {
                let xn = x[n - 1];
                let (g, dg) = spline_eval(coeffs, knots, xn);
                if g == 0.0 && dg == 0.0 {
                    return 0.0;
                }
                let r2c = cutoff_radius * cutoff_radius;
                let q = x[..n - 1].iter().map(|v| v * v).sum::<f64>() / r2c;
                let (chi, dchi) = bump_profile(q);
                if chi == 0.0 {
                    return 0.0;
                }
                for i in 0..n - 1 {
                    grad[i] = g * dchi * 2.0 * x[i] / r2c;
                }
                grad[n - 1] = dg * chi;
                g * chi
            }
        };
        grad.iter_mut().for_each(|g| *g *= self.scale);
        v * self.scale
    }

    pub fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; x.len()];
        let v = self.eval_into(x, &mut g);
        (v, g)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut g = [0.0; 3];
        self.eval_into(x, &mut g[..x.len()])
    }
}

/// Uniform knot vector with `count` basis functions on `[a, b]`.
pub fn uniform_knots(a: f64, b: f64, count: usize) -> Vec<f64> {
    let m = count + 4;
    (0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64).collect()
}
