//! Empirical best constants: simplex search over trial coefficients, a
//! finite-element eigen solver for 1D quotients, and the `(A, B)` frontier.

use crate::inequalities::{evaluate_case, CaseDomain, IneqError, InequalityCase, InequalityReport, DEGENERATE_THRESHOLD};
use crate::quad::{integrate_1d, QuadSettings};
use crate::testfn::{cubic_basis, make_trial, TestFnError, TestFunction};
use crate::weights::WeightSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const RESTARTS: usize = 8;
const RESAMPLE_ATTEMPTS: usize = 50;
/// Running sup above this marks the frontier point unbounded.
pub const UNBOUNDED_THRESHOLD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("all trials degenerate after {0} re-samples")]
    AllTrialsDegenerate(usize),
    #[error("evaluated ratio below the proven constant (ratio {ratio}, threshold {threshold})")]
    BoundViolation { ratio: f64, threshold: f64, report: Option<Box<InequalityReport>> },
    #[error("eigen solver failed: {0}")]
    SolverFailure(String),
    #[error("empty trial suite")]
    EmptySuite,
    #[error(transparent)]
    Ineq(#[from] IneqError),
    #[error(transparent)]
    TestFn(#[from] TestFnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrialConstraint {
    #[default]
    None,
    /// Profile support strictly above `x_N = 0`.
    VanishAtBoundary,
}

/// Where the quotient is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Full `N`-dimensional instance with `g(x_N)·χ(|x'|/R)` trials.
    #[default]
    Full,
    /// Singular Hardy on `(0,∞)`: `u(t) = t^α·Σ c_k B_k(ln t)`, knots in
    /// `ln t`, optimisation vector `(α, c_1, …)`.
    HalfLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTemplate {
    pub knots: Vec<f64>,
    #[serde(default = "default_cutoff")]
    pub cutoff_radius: f64,
    /// Initial optimisation vector; length `knots.len() - 4`, plus one
    /// leading exponent for [`Reduction::HalfLine`].
    pub initial: Vec<f64>,
}

fn default_cutoff() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayleighProblem {
    pub case: InequalityCase,
    #[serde(default)]
    pub weight: Option<WeightSpec>,
    pub domain: CaseDomain,
    pub p: f64,
    pub trial: TrialTemplate,
    #[serde(default)]
    pub constraint: TrialConstraint,
    #[serde(default)]
    pub reduction: Reduction,
    #[serde(default)]
    pub settings: QuadSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub best_ratio: f64,
    pub best_coeffs: Vec<f64>,
    pub evaluations: usize,
    /// Incumbent after every evaluation.
    pub history: Vec<f64>,
}

enum Eval {
    Ratio(f64),
    Degenerate,
    Failed,
}

impl RayleighProblem {
    fn coeff_count(&self) -> usize {
        self.trial.knots.len().saturating_sub(4)
    }

    fn dim(&self) -> usize {
        self.coeff_count() + usize::from(self.reduction == Reduction::HalfLine)
    }

    fn validate(&self) -> Result<(), OptError> {
        let bad = |m: String| Err(OptError::InvalidProblem(m));
        let k = &self.trial.knots;
        if self.coeff_count() < 2 {
            return bad(format!("need at least 6 knots, got {}", k.len()));
        }
        if k.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("knots must be strictly increasing".into());
        }
        if self.trial.initial.len() != self.dim() {
            return bad(format!("initial vector has length {}, expected {}", self.trial.initial.len(), self.dim()));
        }
        match self.reduction {
            Reduction::HalfLine => {
                if !matches!(self.case, InequalityCase::SingularHardy { .. }) {
                    return bad("the half-line reduction is defined for singular_hardy only".into());
                }
                if self.constraint != TrialConstraint::VanishAtBoundary {
                    return bad("half-line trials vanish at 0; set constraint = vanish_at_boundary".into());
                }
            }
            Reduction::Full => {
                if self.constraint == TrialConstraint::VanishAtBoundary && k[0] < 0.0 {
                    return bad(format!("vanish_at_boundary needs the first knot >= 0, got {}", k[0]));
                }
            }
        }
        Ok(())
    }

    fn trial(&self, c: &[f64]) -> Result<TestFunction, OptError> {
        Ok(make_trial(c.to_vec(), self.trial.knots.clone(), self.trial.cutoff_radius, self.domain.dim())?)
    }

    /// Report of the full instance at coefficient vector `c`.
    pub fn evaluate(&self, c: &[f64]) -> Result<InequalityReport, OptError> {
        let u = self.trial(c)?;
        Ok(evaluate_case(&self.case, self.weight.as_ref(), &self.domain, &u, self.p, &self.settings)?)
    }

    /// `(∫ t^γ|u'|^p, ∫ t^{γ-p}|u|^p)` for the half-line trial.
    pub fn half_line_terms(&self, v: &[f64]) -> Result<(f64, f64), OptError> {
        let gamma = match self.case {
            InequalityCase::SingularHardy { gamma } => gamma,
            _ => return Err(OptError::InvalidProblem("half-line terms need singular_hardy".into())),
        };
        let (alpha, c) = (v[0], &v[1..]);
        let p = self.p;
        let kappa = gamma + p * alpha - p + 1.0;
        let knots = &self.trial.knots;
        let tol = 1e-11;
        let (mut num, mut den) = (0.0, 0.0);
        for w in knots.windows(2) {
            let profile = |s: f64| -> (f64, f64) {
                let j = knots.partition_point(|k| *k <= s).saturating_sub(1).min(knots.len() - 2);
                let (mut val, mut der) = (0.0, 0.0);
                for k in j.saturating_sub(3)..=j.min(c.len() - 1) {
                    let (b, db) = cubic_basis(&knots[k..k + 5], s);
                    val += c[k] * b;
                    der += c[k] * db;
                }
                (val, der)
            };
            let fnum = |s: f64| {
                let (val, der) = profile(s);
                (kappa * s).exp() * (alpha * val + der).abs().powf(p)
            };
            let fden = |s: f64| {
                let (val, _) = profile(s);
                (kappa * s).exp() * val.abs().powf(p)
            };
            num += integrate_1d(&fnum, w[0], w[1], tol).map_err(|e| IneqError::from_quad("half_line", e))?.value;
            den += integrate_1d(&fden, w[0], w[1], tol).map_err(|e| IneqError::from_quad("half_line", e))?.value;
        }
        Ok((num, den))
    }

    fn ratio_threshold(&self) -> Option<f64> {
        match (self.reduction, &self.case) {
            (Reduction::HalfLine, InequalityCase::SingularHardy { gamma }) => {
                Some(((gamma - self.p + 1.0) / self.p).abs().powf(self.p))
            }
            _ => None,
        }
    }

    fn eval(&self, c: &[f64]) -> Result<Eval, OptError> {
        match self.reduction {
            Reduction::HalfLine => {
                let (num, den) = match self.half_line_terms(c) {
                    Ok(t) => t,
                    Err(_) => return Ok(Eval::Failed),
                };
                if !(den.is_finite() && num.is_finite()) {
                    return Ok(Eval::Failed);
                }
                if den < DEGENERATE_THRESHOLD {
                    return Ok(Eval::Degenerate);
                }
                let ratio = num / den;
                if let Some(th) = self.ratio_threshold() {
                    if ratio < th * (1.0 - 1e-6) {
                        return Err(OptError::BoundViolation { ratio, threshold: th, report: None });
                    }
                }
                Ok(Eval::Ratio(ratio))
            }
            Reduction::Full => {
                let r = match self.evaluate(c) {
                    Ok(r) => r,
                    Err(OptError::Ineq(IneqError::IncompatibleCase(m))) => return Err(OptError::InvalidProblem(m)),
                    Err(OptError::Ineq(IneqError::IncompatibleMonotonicity(m))) => return Err(OptError::InvalidProblem(m)),
                    Err(_) => return Ok(Eval::Failed),
                };
                if r.degenerate || r.lhs_total.value.abs() < DEGENERATE_THRESHOLD {
                    return Ok(Eval::Degenerate);
                }
                if !r.verified() {
                    let (ratio, threshold) = (r.ratio.unwrap_or(f64::NAN), r.ratio_threshold.unwrap_or(f64::NAN));
                    return Err(OptError::BoundViolation { ratio, threshold, report: Some(Box::new(r)) });
                }
                Ok(r.ratio.map_or(Eval::Failed, Eval::Ratio))
            }
        }
    }
}

/// Budget-limited objective with an evaluation log.
struct Objective<'a> {
    problem: &'a RayleighProblem,
    left: usize,
    values: Vec<f64>,
    best: (f64, Vec<f64>),
}

impl Objective<'_> {
    fn call(&mut self, c: &[f64]) -> Result<Option<f64>, OptError> {
        if self.left == 0 {
            return Ok(None);
        }
        self.left -= 1;
        let v = match self.problem.eval(c)? {
            Eval::Ratio(r) => r,
            _ => f64::INFINITY,
        };
        self.values.push(v);
        if v < self.best.0 {
            self.best = (v, c.to_vec());
        }
        Ok(Some(v))
    }
}

/// Nelder–Mead until the budget runs out or the simplex collapses.
fn nelder_mead(obj: &mut Objective, x0: &[f64], steps: &[f64]) -> Result<(), OptError> {
    let n = x0.len();
    let mut simplex = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += steps[i];
        simplex.push(x);
    }
    let mut f = Vec::with_capacity(n + 1);
    for x in &simplex {
        match obj.call(x)? {
            Some(v) => f.push(v),
            None => return Ok(()),
        }
    }
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    loop {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| f[a].total_cmp(&f[b]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        f = idx.iter().map(|&i| f[i]).collect();
        let spread = (f[n] - f[0]).abs();
        if f[0].is_finite() && spread <= 1e-13 * f[0].abs().max(1e-300) {
            return Ok(());
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst, -1.0);
        let Some(fr) = obj.call(&xr)? else { return Ok(()) };
        if fr < f[0] {
            let xe = lerp(&centroid, &worst, -2.0);
            let Some(fe) = obj.call(&xe)? else { return Ok(()) };
            (simplex[n], f[n]) = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < f[n - 1] {
            (simplex[n], f[n]) = (xr, fr);
            continue;
        }
        let (xc, fc_target) = if fr < f[n] { (lerp(&centroid, &xr, 0.5), fr) } else { (lerp(&centroid, &worst, 0.5), f[n]) };
        let Some(fc) = obj.call(&xc)? else { return Ok(()) };
        if fc < fc_target {
            (simplex[n], f[n]) = (xc, fc);
            continue;
        }
        for i in 1..=n {
            simplex[i] = lerp(&simplex[0], &simplex[i], 0.5);
            let Some(v) = obj.call(&simplex[i].clone())? else { return Ok(()) };
            f[i] = v;
        }
    }
}

fn restart_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Simplex search with [`RESTARTS`] seeded restarts over the trial
/// coefficients; `budget` evaluations beyond the initial one.
pub fn minimize_ratio(problem: &RayleighProblem, budget: usize, seed: u64) -> Result<OptResult, OptError> {
    problem.validate()?;
    let x0 = problem.trial.initial.clone();
    let r0 = match problem.eval(&x0)? {
        Eval::Ratio(r) => r,
        Eval::Degenerate => f64::INFINITY,
        Eval::Failed => return Err(OptError::InvalidProblem("initial trial could not be evaluated".into())),
    };
    let half_line = problem.reduction == Reduction::HalfLine;
    let scale = x0.iter().skip(usize::from(half_line)).fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    let steps: Vec<f64> = (0..x0.len()).map(|i| if half_line && i == 0 { 0.1 } else { 0.25 * scale }).collect();
    let shares: Vec<usize> = (0..RESTARTS).map(|k| budget / RESTARTS + usize::from(k < budget % RESTARTS)).collect();

    let runs: Vec<Result<(Vec<f64>, (f64, Vec<f64>)), OptError>> = shares
        .par_iter()
        .enumerate()
        .map(|(k, &share)| {
            let mut obj = Objective { problem, left: share, values: vec![], best: (f64::INFINITY, vec![]) };
            if share == 0 {
                return Ok((obj.values, obj.best));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(seed, k));
            let mut start = x0.clone();
            if k > 0 || !r0.is_finite() {
                let mut found = false;
                for _ in 0..RESAMPLE_ATTEMPTS {
                    for (i, s) in start.iter_mut().enumerate() {
                        *s = x0[i] + steps[i] * 2.0 * rng.gen_range(-1.0..1.0);
                    }
                    if matches!(problem.eval(&start)?, Eval::Ratio(_)) {
                        found = true;
                        break;
                    }
                }
                if !found {
                    return Err(OptError::AllTrialsDegenerate(RESAMPLE_ATTEMPTS));
                }
            }
            nelder_mead(&mut obj, &start, &steps)?;
            Ok((obj.values, obj.best))
        })
        .collect();

    let mut history = vec![r0];
    let mut best = (r0, x0.clone());
    let mut degenerate_runs = 0;
    for run in runs {
        let (values, run_best) = match run {
            Ok(v) => v,
            Err(OptError::AllTrialsDegenerate(_)) => {
                degenerate_runs += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for v in values {
            let inc = history[history.len() - 1].min(v);
            history.push(inc);
        }
        if run_best.0 < best.0 {
            best = run_best;
        }
    }
    if !best.0.is_finite() {
        return Err(OptError::AllTrialsDegenerate(RESAMPLE_ATTEMPTS * degenerate_runs.max(1)));
    }
    Ok(OptResult { best_ratio: best.0, best_coeffs: best.1, evaluations: history.len(), history })
}

/// `scale·(shift + t)^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile1d {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub exponent: f64,
}

fn one() -> f64 {
    1.0
}

impl Profile1d {
    pub fn constant(c: f64) -> Self {
        Self { scale: c, shift: 0.0, exponent: 0.0 }
    }

    pub fn power(exponent: f64) -> Self {
        Self { scale: 1.0, shift: 0.0, exponent }
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.exponent == 0.0 {
            self.scale
        } else {
            self.scale * (self.shift + t).powf(self.exponent)
        }
    }
}

/// `(V_left, V_right)` of `∫ V_right|u'|² / ∫ V_left|u|²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weight1d {
    pub left: Profile1d,
    pub right: Profile1d,
}

impl Weight1d {
    /// `V_left = t^{-2}`, `V_right = 1`.
    pub fn hardy() -> Self {
        Self { left: Profile1d::power(-2.0), right: Profile1d::constant(1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    DirichletAtZero,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Grid {
    Uniform,
    /// Node 0 at `t = 0`, then geometric from `t_min` to `L`.
    Geometric { t_min: f64 },
}

impl Grid {
    pub fn default_for(bc: BoundaryCondition) -> Self {
        match bc {
            BoundaryCondition::DirichletAtZero => Grid::Geometric { t_min: 1e-12 },
            BoundaryCondition::Free => Grid::Uniform,
        }
    }

    fn nodes(&self, l: f64, m: usize) -> Vec<f64> {
        match *self {
            Grid::Uniform => (0..=m).map(|i| l * i as f64 / m as f64).collect(),
            Grid::Geometric { t_min } => {
                let ratio = (l / t_min).ln() / (m - 1) as f64;
                let mut t: Vec<f64> = vec![0.0];
                t.extend((0..m).map(|i| t_min * (ratio * i as f64).exp()));
                t[m] = l;
                t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Eig1dResult {
    pub lambda_min: f64,
    pub nodes: Vec<f64>,
    /// Nodal values, max-norm 1, nonnegative sum.
    pub eigvector: Vec<f64>,
}

/// Smallest eigenvalue of the P1 discretisation (lumped mass) on `(0, L)`
/// with `M` elements, Dirichlet at `L`.
pub fn eig_best_constant_1d(weight: &Weight1d, bc: BoundaryCondition, l: f64, m: usize, grid: Grid) -> Result<Eig1dResult, OptError> {
    let fail = |s: String| Err(OptError::SolverFailure(s));
    if !(l > 0.0 && l.is_finite()) {
        return fail(format!("L must be positive, got {l}"));
    }
    if m < 16 {
        return fail(format!("M must be at least 16, got {m}"));
    }
    if let Grid::Geometric { t_min } = grid {
        if !(t_min > 0.0 && t_min < l) {
            return fail(format!("geometric grid needs 0 < t_min < L, got {t_min}"));
        }
    }
    let t = grid.nodes(l, m);
    // Unknowns: nodes 0..m-1 (Free) or 1..m-1 (Dirichlet at 0).
    let first = usize::from(bc == BoundaryCondition::DirichletAtZero);
    let k = m - first;
    let mut kd = vec![0.0; m + 1];
    let mut ko = vec![0.0; m];
    let mut mass = vec![0.0; m + 1];
    for e in 0..m {
        let (a, b) = (t[e], t[e + 1]);
        let h = b - a;
        let vr = weight.right.eval(0.5 * (a + b));
        let (vl_a, vl_b) = (weight.left.eval(a + 0.25 * h), weight.left.eval(b - 0.25 * h));
        if !(vr > 0.0 && vl_a > 0.0 && vl_b > 0.0 && vr.is_finite() && vl_a.is_finite() && vl_b.is_finite()) {
            return fail(format!("weights must be positive and finite on (0, L); element [{a}, {b}]"));
        }
        kd[e] += vr / h;
        kd[e + 1] += vr / h;
        ko[e] = -vr / h;
        mass[e] += 0.5 * h * vl_a;
        mass[e + 1] += 0.5 * h * vl_b;
    }
    // Symmetric tridiagonal M^{-1/2} K M^{-1/2} on the unknowns.
    let diag: Vec<f64> = (first..m).map(|i| kd[i] / mass[i]).collect();
    let off: Vec<f64> = (first..m - 1).map(|i| ko[i] / (mass[i] * mass[i + 1]).sqrt()).collect();
    let count_below = |x: f64| -> usize {
        let mut q = 1.0;
        let mut c = 0;
        for i in 0..k {
            let b2 = if i == 0 { 0.0 } else { off[i - 1] * off[i - 1] };
            q = diag[i] - x - if i == 0 { 0.0 } else { b2 / q };
            if q == 0.0 {
                q = f64::EPSILON * (diag[i].abs() + x.abs());
            }
            if q < 0.0 {
                c += 1;
            }
        }
        c
    };
    let upper = (0..k)
        .map(|i| diag[i] + if i > 0 { off[i - 1].abs() } else { 0.0 } + if i + 1 < k { off[i].abs() } else { 0.0 })
        .fold(0.0f64, f64::max);
    let (mut lo, mut hi) = (0.0, upper);
    if count_below(lo) != 0 {
        return fail("matrix is not positive semidefinite".into());
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if count_below(mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);
    let y = inverse_iteration(&diag, &off, lambda)?;
    let mut v = vec![0.0; m + 1];
    for i in 0..k {
        v[first + i] = y[i] / mass[first + i].sqrt();
    }
    let norm = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    v.iter_mut().for_each(|x| *x *= sign / norm);
    Ok(Eig1dResult { lambda_min: lambda, nodes: t, eigvector: v })
}

/// Eigenvector of a symmetric tridiagonal matrix for an eigenvalue
/// estimate, by inverse iteration.
fn inverse_iteration(diag: &[f64], off: &[f64], lambda: f64) -> Result<Vec<f64>, OptError> {
    let k = diag.len();
    let shift = lambda * (1.0 - 1e-10) - 1e-14;
    let mut y = vec![1.0; k];
    for _ in 0..4 {
        // Thomas algorithm on (A - shift I) x = y.
        let mut c = vec![0.0; k];
        let mut d = vec![0.0; k];
        let mut denom = diag[0] - shift;
        c[0] = if k > 1 { off[0] / denom } else { 0.0 };
        d[0] = y[0] / denom;
        for i in 1..k {
            denom = diag[i] - shift - off[i - 1] * c[i - 1];
            if i + 1 < k {
                c[i] = off[i] / denom;
            }
            d[i] = (y[i] - off[i - 1] * d[i - 1]) / denom;
        }
        let mut x = vec![0.0; k];
        x[k - 1] = d[k - 1];
        for i in (0..k - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(OptError::SolverFailure("inverse iteration broke down".into()));
        }
        y = x.into_iter().map(|v| v / n).collect();
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParetoFlag {
    Bounded,
    /// Heuristic: running sup above the threshold, an unbounded quotient,
    /// or growth through the whole tail of the suite.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub a: f64,
    /// `None` when flagged unbounded.
    pub b_min: Option<f64>,
    pub flag: ParetoFlag,
}

/// Per-trial `(LHS, gradient term, boundary term)` of a two-term
/// right-hand-side instance.
pub fn pareto_terms(
    case: &InequalityCase,
    weight: Option<&WeightSpec>,
    domain: &CaseDomain,
    suite: &[TestFunction],
    p: f64,
    settings: &QuadSettings,
) -> Result<Vec<(f64, f64, f64)>, OptError> {
    if !matches!(case, InequalityCase::HardyII) {
        return Err(OptError::InvalidProblem(format!("{} has no gradient + boundary right-hand side", case.name())));
    }
    if suite.is_empty() {
        return Err(OptError::EmptySuite);
    }
    suite
        .par_iter()
        .map(|u| {
            let r = evaluate_case(case, weight, domain, u, p, settings)?;
            Ok((r.terms["interior_lhs"].value, r.terms["gradient_rhs"].value, r.terms["boundary_rhs"].value))
        })
        .collect()
}

/// `B_min(A) = sup_u (LHS - A·G)/B` over the suite, clamped at 0.
pub fn ab_pareto(
    case: &InequalityCase,
    weight: Option<&WeightSpec>,
    domain: &CaseDomain,
    p: f64,
    a_grid: &[f64],
    suite: &[TestFunction],
    settings: &QuadSettings,
) -> Result<Vec<ParetoPoint>, OptError> {
    if a_grid.windows(2).any(|w| !(w[1] > w[0])) || a_grid.iter().any(|a| !(*a >= 0.0)) {
        return Err(OptError::InvalidProblem("A grid must be increasing and nonnegative".into()));
    }
    let terms = pareto_terms(case, weight, domain, suite, p, settings)?;
    Ok(a_grid.iter().map(|&a| frontier_point(a, &terms)).collect())
}

fn frontier_point(a: f64, terms: &[(f64, f64, f64)]) -> ParetoPoint {
    let mut sup = 0.0f64;
    let mut rises = vec![];
    for &(lhs, g, b) in terms {
        let excess = lhs - a * g;
        let q = if excess <= DEGENERATE_THRESHOLD {
            0.0
        } else if b < DEGENERATE_THRESHOLD {
            f64::INFINITY
        } else {
            excess / b
        };
        rises.push(q > 1.1 * sup && q > 0.0);
        sup = sup.max(q);
    }
    let tail = rises.len() / 2;
    let growing = rises.len() >= 4 && rises[rises.len() - tail..].iter().all(|r| *r);
    if sup > UNBOUNDED_THRESHOLD || growing {
        ParetoPoint { a, b_min: None, flag: ParetoFlag::Unbounded }
    } else {
        ParetoPoint { a, b_min: Some(sup), flag: ParetoFlag::Bounded }
    }
}
