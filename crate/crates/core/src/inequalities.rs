//! Every inequality instance assembled from quadrature terms: both sides,
//! the stated constants, margin and constant-free ratio.

use crate::geometry::{AaBox, GraphDomain, TwoGraphDomain};
use crate::quad::{
    integrate_boundary_vec, integrate_region_vec, mc_boundary_vec, mc_oracle_vec, McEstimate, McSampling,
    QuadError, QuadSettings, Region, SingularHint,
};
use crate::testfn::TestFunction;
use crate::weights::{make_weight, Monotonicity, WeightError, WeightEval, WeightFamily, WeightSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// All terms below this are treated as zero.
pub const DEGENERATE_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IneqError {
    #[error("incompatible case: {0}")]
    IncompatibleCase(String),
    #[error("incompatible monotonicity: {0}")]
    IncompatibleMonotonicity(String),
    #[error("non-integrable singularity in {term}: {detail}")]
    NonIntegrableSingularity { term: String, detail: String },
    #[error("tolerance not reached in {term}: {detail}")]
    TolNotReached { term: String, detail: String },
    #[error("quadrature failed in {term}: {source}")]
    Quad { term: String, source: QuadError },
    #[error(transparent)]
    Weight(#[from] WeightError),
}

impl IneqError {
    pub fn from_quad(term: &str, e: QuadError) -> Self {
        let term = term.to_string();
        match e {
            QuadError::NonIntegrableSingularity { .. } => Self::NonIntegrableSingularity { term, detail: e.to_string() },
            QuadError::TolNotReached { .. } => Self::TolNotReached { term, detail: e.to_string() },
            source => Self::Quad { term, source },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceDirection {
    Plus,
    Minus,
}

/// Side assignment of the two boundary terms in the two-graph inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// ψ₁-term on the left, ψ₂-term on the right.
    #[default]
    AsStated,
    /// ψ₂-term on the left, ψ₁-term on the right (what integrating
    /// `(W|u|^p)_{x_N}` over each component gives).
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InequalityCase {
    HardyI,
    #[serde(rename = "hardy_ii")]
    HardyII,
    HalfSpaceHardyI,
    SingularHardy { gamma: f64 },
    Kato { gamma: f64, beta: f64 },
    SobolevEmbedding { s: f64 },
    BorderlineSobolev { q: f64 },
    TraceEmbedding { q: f64, direction: TraceDirection },
    TwoGraph {
        #[serde(default)]
        placement: Placement,
    },
    HsmConjecture {
        gamma: f64,
        /// Coefficient of the subtracted singular term; defaults to
        /// `((γ-p+1)/p)^p`.
        #[serde(default)]
        coefficient: Option<f64>,
    },
    W1pComparison { c1: f64, big_c1: f64 },
}

impl InequalityCase {
    pub fn name(&self) -> &'static str {
        match self {
            Self::HardyI => "hardy_i",
            Self::HardyII => "hardy_ii",
            Self::HalfSpaceHardyI => "half_space_hardy_i",
            Self::SingularHardy { .. } => "singular_hardy",
            Self::Kato { .. } => "kato",
            Self::SobolevEmbedding { .. } => "sobolev_embedding",
            Self::BorderlineSobolev { .. } => "borderline_sobolev",
            Self::TraceEmbedding { .. } => "trace_embedding",
            Self::TwoGraph { .. } => "two_graph",
            Self::HsmConjecture { .. } => "hsm_conjecture",
            Self::W1pComparison { .. } => "w1p_comparison",
        }
    }

    /// Kinds that hard-code their own weight.
    pub fn needs_weight(&self) -> bool {
        !matches!(self, Self::SingularHardy { .. } | Self::HsmConjecture { .. } | Self::Kato { .. })
    }
}

/// `q(s) = (N-s)p/(N-p)`.
pub fn q_of_s(n: usize, p: f64, s: f64) -> f64 {
    (n as f64 - s) * p / (n as f64 - p)
}

/// `p* = Np/(N-p)`.
pub fn sobolev_exponent(n: usize, p: f64) -> f64 {
    q_of_s(n, p, 0.0)
}

/// `p_* = p(N-1)/(N-p)`.
pub fn trace_exponent(n: usize, p: f64) -> f64 {
    p * (n as f64 - 1.0) / (n as f64 - p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CaseDomain {
    Graph(GraphDomain),
    TwoGraph(TwoGraphDomain),
}

impl CaseDomain {
    pub fn dim(&self) -> usize {
        match self {
            Self::Graph(g) => g.dim,
            Self::TwoGraph(t) => t.dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub value: f64,
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constant {
    /// Coefficients keyed by the term they multiply.
    Explicit(BTreeMap<String, f64>),
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub kind: String,
    pub params: serde_json::Value,
    pub terms: BTreeMap<String, Term>,
    pub constant: Constant,
    pub lhs_total: Term,
    pub rhs_total: Term,
    /// `rhs_total - lhs_total`; absent for empirical kinds.
    pub margin: Option<f64>,
    pub margin_err: f64,
    /// Constant-free `RHS_raw / LHS_raw`; absent when degenerate.
    pub ratio: Option<f64>,
    /// `margin ≥ 0 ⇔ ratio ≥ ratio_threshold`.
    pub ratio_threshold: Option<f64>,
    pub degenerate: bool,
    pub settings: QuadSettings,
    pub seed: Option<u64>,
}

impl InequalityReport {
    /// Allowed negative margin: `max(1e-6·RHS, error bars)`.
    pub fn margin_tolerance(&self) -> f64 {
        (1e-6 * self.rhs_total.value.abs()).max(self.margin_err)
    }

    /// True unless an explicit-constant margin is below its tolerance.
    pub fn verified(&self) -> bool {
        match self.margin {
            Some(m) => self.degenerate || m >= -self.margin_tolerance(),
            None => true,
        }
    }

    pub fn term(&self, name: &str) -> Option<Term> {
        self.terms.get(name).copied()
    }
}

/// Smooth function with exact gradient and a compact support box.
pub trait Field: Sync {
    fn dim(&self) -> usize;
    fn support_box(&self) -> AaBox;
    /// Value; writes the gradient into `grad`.
    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

impl Field for TestFunction {
    fn dim(&self) -> usize {
        TestFunction::dim(self)
    }
    fn support_box(&self) -> AaBox {
        self.support_box.clone()
    }
    fn eval_into(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        TestFunction::eval_into(self, x, grad)
    }
}

/// Weight with exact `W`, `W_{x_N}` and Hardy ratio.
pub trait WeightField: Sync {
    fn monotonicity(&self) -> Monotonicity;
    fn has_prime_singularity(&self) -> bool;
    fn depends_on_xn_only(&self) -> bool;
    fn value(&self, x: &[f64]) -> Result<f64, WeightError>;
    fn eval(&self, x: &[f64], p: f64) -> Result<WeightEval, WeightError>;
}

impl WeightField for WeightSpec {
    fn monotonicity(&self) -> Monotonicity {
        self.monotonicity
    }
    fn has_prime_singularity(&self) -> bool {
        self.prime_exponent() != 0.0
    }
    fn depends_on_xn_only(&self) -> bool {
        WeightSpec::depends_on_xn_only(self)
    }
    fn value(&self, x: &[f64]) -> Result<f64, WeightError> {
        WeightSpec::value(self, x)
    }
    fn eval(&self, x: &[f64], p: f64) -> Result<WeightEval, WeightError> {
        WeightSpec::eval(self, x, p)
    }
}

/// `u ∘ Φ⁻¹` on the half-space with the gradient field `(∇u) ∘ Φ⁻¹`.
pub struct PulledBack<'a> {
    pub u: &'a TestFunction,
    pub domain: GraphDomain,
}

impl Field for PulledBack<'_> {
    fn dim(&self) -> usize {
        self.u.dim()
    }
    fn support_box(&self) -> AaBox {
        let b = &self.u.support_box;
        let (lo, hi) = psi_range(&self.domain, &b.prime());
        let n = b.dim();
        let mut out = b.clone();
        out.lo[n - 1] = b.lo[n - 1] - hi;
        out.hi[n - 1] = b.hi[n - 1] - lo;
        out
    }
    fn eval_into(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.domain.transform(y, crate::geometry::Direction::Unflatten);
        self.u.eval_into(&x, grad)
    }
}

/// `W ∘ Φ⁻¹`; its `x_N`-derivative is `W_{x_N} ∘ Φ⁻¹`.
pub struct TransportedWeight<'a> {
    pub spec: &'a WeightSpec,
    pub domain: GraphDomain,
}

impl WeightField for TransportedWeight<'_> {
    fn monotonicity(&self) -> Monotonicity {
        self.spec.monotonicity
    }
    fn has_prime_singularity(&self) -> bool {
        self.spec.prime_exponent() != 0.0
    }
    fn depends_on_xn_only(&self) -> bool {
        self.domain.is_flat() && self.spec.depends_on_xn_only()
    }
    fn value(&self, y: &[f64]) -> Result<f64, WeightError> {
        self.spec.value(&self.domain.transform(y, crate::geometry::Direction::Unflatten))
    }
    fn eval(&self, y: &[f64], p: f64) -> Result<WeightEval, WeightError> {
        self.spec.eval(&self.domain.transform(y, crate::geometry::Direction::Unflatten), p)
    }
}

/// Bounds of ψ over an `x'` box from a grid plus a Lipschitz margin.
fn psi_range(g: &GraphDomain, bp: &AaBox) -> (f64, f64) {
    let k = bp.dim();
    let m = 64usize;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut xp = vec![0.0; k];
    let mut lip: f64 = 0.0;
    let count = if k == 1 { m + 1 } else { (m + 1) * (m + 1) };
    for idx in 0..count {
        let (i, j) = (idx % (m + 1), idx / (m + 1));
        xp[0] = bp.lo[0] + (bp.hi[0] - bp.lo[0]) * i as f64 / m as f64;
        if k == 2 {
            xp[1] = bp.lo[1] + (bp.hi[1] - bp.lo[1]) * j as f64 / m as f64;
        }
        let v = g.psi(&xp);
        lo = lo.min(v);
        hi = hi.max(v);
        if let Ok(gr) = g.grad_psi(&xp) {
            lip = lip.max(gr.iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    let lip = g.lipschitz_bound().unwrap_or(2.0 * lip);
    let h: f64 = (0..k).map(|i| ((bp.hi[i] - bp.lo[i]) / m as f64).powi(2)).sum::<f64>().sqrt();
    (lo - lip * h, hi + lip * h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Density {
    /// `|W_{x_N}|^e |u|^q`
    Wxn { e: f64, q: f64 },
    /// `W^p/|W_{x_N}|^{p-1} |∇u|^p`
    Grad,
    /// `x_N^a |u|^q`
    XnU { a: f64, q: f64 },
    /// `x_N^a |∇u|^p`
    XnGrad { a: f64 },
    /// `|u|^q`
    U { q: f64 },
    /// `|∇u|^p`
    GradU,
}

impl Density {
    fn needs_weight(&self) -> bool {
        matches!(self, Density::Wxn { .. } | Density::Grad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Single,
    Lower,
    Upper,
}

/// `∫ W(x',ψ)|u(x',ψ)|^q dx'`, optionally with the surface factor.
#[derive(Debug, Clone, Copy, PartialEq)]
struct BoundaryDef {
    name: &'static str,
    side: Side,
    q: f64,
    surface: bool,
}

#[derive(Debug, Default)]
struct TermSet {
    interior: Vec<(&'static str, Density)>,
    boundary: Vec<BoundaryDef>,
}

#[inline]
fn pw(v: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if v == 0.0 {
        0.0
    } else if e == 1.0 {
        v
    } else if e == 2.0 {
        v * v
    } else {
        v.powf(e)
    }
}

/// Validated inputs of one evaluation.
struct Setup<'a> {
    case: InequalityCase,
    weight: Option<&'a dyn WeightField>,
    own_weight: Option<WeightSpec>,
    domain: CaseDomain,
    u: &'a dyn Field,
    p: f64,
    n: usize,
}

impl<'a> Setup<'a> {
    fn weight(&self) -> Option<&dyn WeightField> {
        match &self.own_weight {
            Some(w) => Some(w as &dyn WeightField),
            None => self.weight,
        }
    }

    fn hint(&self) -> SingularHint {
        match self.weight() {
            Some(w) if w.has_prime_singularity() => SingularHint::PolarInXPrime,
            _ => SingularHint::GradedTowardBoundary,
        }
    }

    fn direction(&self) -> TraceDirection {
        match self.weight().map(|w| w.monotonicity()) {
            Some(Monotonicity::Decreasing) => TraceDirection::Minus,
            _ => TraceDirection::Plus,
        }
    }

    fn terms(&self) -> TermSet {
        use Density::*;
        let p = self.p;
        let b = |name, q, surface| BoundaryDef { name, side: Side::Single, q, surface };
        let mut t = TermSet::default();
        match &self.case {
            InequalityCase::HardyI | InequalityCase::HalfSpaceHardyI => {
                t.interior = vec![("interior_lhs", Wxn { e: 1.0, q: p }), ("gradient_rhs", Grad)];
                t.boundary = vec![b("boundary_lhs", p, false)];
            }
            InequalityCase::HardyII => {
                t.interior = vec![("interior_lhs", Wxn { e: 1.0, q: p }), ("gradient_rhs", Grad)];
                t.boundary = vec![b("boundary_rhs", p, false)];
            }
            InequalityCase::SingularHardy { gamma } => {
                t.interior = vec![("interior_lhs", XnU { a: gamma - p, q: p }), ("gradient_rhs", XnGrad { a: *gamma })];
            }
            InequalityCase::Kato { .. } => {
                t.interior = vec![("gradient_rhs", Grad)];
                t.boundary = vec![b("boundary_lhs", p, false)];
            }
            InequalityCase::SobolevEmbedding { s } => {
                t.interior = vec![("embedding_integral", Wxn { e: s / p, q: q_of_s(self.n, p, *s) }), ("gradient_rhs", Grad)];
                if self.direction() == TraceDirection::Minus {
                    t.boundary = vec![b("boundary_rhs", p, false)];
                }
            }
            InequalityCase::BorderlineSobolev { q } => {
                t.interior = vec![("embedding_integral", Wxn { e: 1.0, q: *q }), ("gradient_rhs", Grad)];
                if self.direction() == TraceDirection::Minus {
                    t.boundary = vec![b("boundary_rhs", p, false)];
                }
            }
            InequalityCase::TraceEmbedding { q, direction } => {
                t.interior = vec![("gradient_rhs", Grad)];
                t.boundary = vec![b("trace_integral", *q, true)];
                if *direction == TraceDirection::Minus {
                    t.boundary.push(b("boundary_rhs", p, false));
                }
            }
            InequalityCase::TwoGraph { .. } => {
                t.interior = vec![("interior_lhs", Wxn { e: 1.0, q: p }), ("gradient_rhs", Grad)];
                t.boundary = vec![
                    BoundaryDef { name: "boundary_lower", side: Side::Lower, q: p, surface: false },
                    BoundaryDef { name: "boundary_upper", side: Side::Upper, q: p, surface: false },
                ];
            }
            InequalityCase::HsmConjecture { gamma, .. } => {
                let ps = sobolev_exponent(self.n, p);
                let a = self.n as f64 * gamma / (self.n as f64 - p);
                t.interior = vec![
                    ("embedding_integral", XnU { a, q: ps }),
                    ("gradient_rhs", XnGrad { a: *gamma }),
                    ("singular_rhs", XnU { a: gamma - p, q: p }),
                ];
            }
            InequalityCase::W1pComparison { .. } => {
                t.interior = vec![("interior_lhs", U { q: p }), ("gradient_lhs", GradU), ("gradient_rhs", Grad)];
            }
        }
        t
    }

    fn regions(&self) -> Vec<Region<'_>> {
        match &self.domain {
            CaseDomain::Graph(g) => vec![Region::Above(g)],
            CaseDomain::TwoGraph(t) => vec![Region::Below(&t.lower), Region::Above(&t.upper)],
        }
    }

    fn boundary_graph(&self, side: Side) -> &GraphDomain {
        match (&self.domain, side) {
            (CaseDomain::Graph(g), _) => g,
            (CaseDomain::TwoGraph(t), Side::Lower) => &t.lower,
            (CaseDomain::TwoGraph(t), _) => &t.upper,
        }
    }

    /// Vector integrand over the interior for `dens`.
    fn interior_integrand<'s>(&'s self, dens: &'s [Density]) -> impl Fn(&[f64], &mut [f64]) + 's {
        let n = self.n;
        let p = self.p;
        let need_w = dens.iter().any(Density::needs_weight);
        let weight = self.weight();
        move |x: &[f64], out: &mut [f64]| {
            let mut g = [0.0; 3];
            let uval = self.u.eval_into(x, &mut g[..n]);
            let gnorm = g[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
            if uval == 0.0 && gnorm == 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
            let ev = if need_w {
                match weight.expect("weight checked").eval(x, p) {
                    Ok(ev) => Some(ev),
                    Err(_) => {
                        out.iter_mut().for_each(|o| *o = f64::NAN);
                        return;
                    }
                }
            } else {
                None
            };
            let ua = uval.abs();
            let xn = x[n - 1];
            for (o, d) in out.iter_mut().zip(dens) {
                *o = match *d {
                    Density::Wxn { e, q } => pw(ev.as_ref().unwrap().w_xn.abs(), e) * pw(ua, q),
                    Density::Grad => ev.as_ref().unwrap().hardy_ratio * pw(gnorm, p),
                    Density::XnU { a, q } => pw(xn, a) * pw(ua, q),
                    Density::XnGrad { a } => pw(xn, a) * pw(gnorm, p),
                    Density::U { q } => pw(ua, q),
                    Density::GradU => pw(gnorm, p),
                };
            }
        }
    }

    fn boundary_integrand<'s>(&'s self, graph: &'s GraphDomain, qs: &'s [f64]) -> impl Fn(&[f64], &mut [f64]) + 's {
        let n = self.n;
        let weight = self.weight();
        move |xp: &[f64], out: &mut [f64]| {
            let mut x = [0.0; 3];
            x[..n - 1].copy_from_slice(xp);
            x[n - 1] = graph.psi(xp);
            let mut g = [0.0; 3];
            let ua = self.u.eval_into(&x[..n], &mut g[..n]).abs();
            if ua == 0.0 {
                out.iter_mut().for_each(|o| *o = 0.0);
                return;
            }
            let w = match weight.map(|w| w.value(&x[..n])) {
                Some(Ok(w)) => w,
                Some(Err(_)) => f64::NAN,
                None => 1.0,
            };
            for (o, q) in out.iter_mut().zip(qs) {
                *o = w * pw(ua, *q);
            }
        }
    }

    fn quadrature(&self, settings: &QuadSettings) -> Result<BTreeMap<String, Term>, IneqError> {
        let set = self.terms();
        let bx = self.u.support_box();
        let hint = self.hint();
        let mut out = BTreeMap::new();
        if !set.interior.is_empty() {
            let dens: Vec<Density> = set.interior.iter().map(|(_, d)| *d).collect();
            let f = self.interior_integrand(&dens);
            let mut acc = vec![Term { value: 0.0, err: 0.0 }; dens.len()];
            for region in self.regions() {
                let r = integrate_region_vec(&f, dens.len(), region, &bx, settings, hint)
                    .map_err(|e| IneqError::from_quad(set.interior[0].0, e))?;
                for (a, r) in acc.iter_mut().zip(r) {
                    a.value += r.value;
                    a.err += r.error_estimate;
                }
            }
            for ((name, _), t) in set.interior.iter().zip(acc) {
                out.insert(name.to_string(), t);
            }
        }
        for group in boundary_groups(&set.boundary) {
            let graph = self.boundary_graph(group[0].side);
            let qs: Vec<f64> = group.iter().map(|d| d.q).collect();
            let f = self.boundary_integrand(graph, &qs);
            let r = integrate_boundary_vec(&f, qs.len(), graph, &bx, settings, group[0].surface, hint)
                .map_err(|e| IneqError::from_quad(group[0].name, e))?;
            for (d, r) in group.iter().zip(r) {
                out.insert(d.name.to_string(), Term { value: r.value, err: r.error_estimate });
            }
        }
        Ok(out)
    }

    fn monte_carlo(&self, n: usize, seed: u64) -> Result<BTreeMap<String, McEstimate>, IneqError> {
        let set = self.terms();
        let bx = self.u.support_box();
        let prime = self.hint() == SingularHint::PolarInXPrime;
        let mut out = BTreeMap::new();
        if !set.interior.is_empty() {
            let dens: Vec<Density> = set.interior.iter().map(|(_, d)| *d).collect();
            let f = self.interior_integrand(&dens);
            let mut acc = vec![(0.0, 0.0); dens.len()];
            for (k, region) in self.regions().into_iter().enumerate() {
                let r = mc_oracle_vec(&f, dens.len(), region, &bx, n, seed.wrapping_add(k as u64), McSampling::Graded { prime }, prime)
                    .map_err(|e| IneqError::from_quad("monte_carlo", e))?;
                for (a, r) in acc.iter_mut().zip(r) {
                    a.0 += r.value;
                    a.1 += r.std_error * r.std_error;
                }
            }
            for ((name, _), (v, var)) in set.interior.iter().zip(acc) {
                out.insert(name.to_string(), McEstimate { value: v, std_error: var.sqrt() });
            }
        }
        for (k, group) in boundary_groups(&set.boundary).into_iter().enumerate() {
            let graph = self.boundary_graph(group[0].side);
            let qs: Vec<f64> = group.iter().map(|d| d.q).collect();
            let f = self.boundary_integrand(graph, &qs);
            let s = seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(k as u64 + 1));
            let r = mc_boundary_vec(&f, qs.len(), graph, &bx, n, s, group[0].surface, prime)
                .map_err(|e| IneqError::from_quad("monte_carlo", e))?;
            for (d, r) in group.iter().zip(r) {
                out.insert(d.name.to_string(), r);
            }
        }
        Ok(out)
    }
}

/// Boundary terms sharing a graph and a measure are integrated together.
fn boundary_groups(defs: &[BoundaryDef]) -> Vec<Vec<BoundaryDef>> {
    let mut groups: Vec<Vec<BoundaryDef>> = vec![];
    for d in defs {
        match groups.iter_mut().find(|g| g[0].side == d.side && g[0].surface == d.surface) {
            Some(g) => g.push(*d),
            None => groups.push(vec![*d]),
        }
    }
    groups
}

fn validate<'a>(
    case: &InequalityCase,
    weight: Option<&'a dyn WeightField>,
    domain: &CaseDomain,
    u: &'a dyn Field,
    p: f64,
) -> Result<Setup<'a>, IneqError> {
    let bad = |m: String| Err(IneqError::IncompatibleCase(m));
    let n = domain.dim();
    if !(p > 1.0 && p.is_finite()) {
        return bad(format!("p > 1 required, got {p}"));
    }
    if u.dim() != n {
        return bad(format!("test function has dimension {} but the domain has N={n}", u.dim()));
    }
    let flat = matches!(domain, CaseDomain::Graph(g) if g.is_flat());
    let two_graph = matches!(domain, CaseDomain::TwoGraph(_));
    if two_graph != matches!(case, InequalityCase::TwoGraph { .. }) {
        return bad(format!("{} needs a {} domain", case.name(), if two_graph { "single-graph" } else { "two-graph" }));
    }
    let mut own_weight = None;
    let needs = |m: Monotonicity| -> Result<(), IneqError> {
        match weight {
            None => Err(IneqError::IncompatibleCase(format!("{} needs a weight", case.name()))),
            Some(w) if w.monotonicity() != m => Err(IneqError::IncompatibleMonotonicity(format!(
                "{} needs an {:?} weight",
                case.name(),
                m
            ))),
            _ => Ok(()),
        }
    };
    let any_weight = || -> Result<(), IneqError> {
        weight.map(|_| ()).ok_or_else(|| IneqError::IncompatibleCase(format!("{} needs a weight", case.name())))
    };
    match case {
        InequalityCase::HardyI | InequalityCase::TwoGraph { .. } => needs(Monotonicity::Increasing)?,
        InequalityCase::HalfSpaceHardyI => {
            needs(Monotonicity::Increasing)?;
            if !flat {
                return bad("half_space_hardy_i needs the flat graph psi = 0".into());
            }
        }
        InequalityCase::HardyII => needs(Monotonicity::Decreasing)?,
        InequalityCase::SingularHardy { gamma } | InequalityCase::HsmConjecture { gamma, .. } => {
            if !flat {
                return bad(format!("{} is stated on the half-space", case.name()));
            }
            if !gamma.is_finite() {
                return bad("gamma must be finite".into());
            }
            if matches!(case, InequalityCase::HsmConjecture { .. }) && !(p < n as f64) {
                return bad(format!("hsm_conjecture needs p < N (p={p}, N={n})"));
            }
        }
        InequalityCase::Kato { gamma, beta } => {
            if !flat {
                return bad("kato is stated on the half-space".into());
            }
            own_weight = Some(make_weight(WeightFamily::ShiftedPowerOverPrime { gamma: *gamma, beta: *beta }, n)?);
        }
        InequalityCase::SobolevEmbedding { s } => {
            any_weight()?;
            if !(p < n as f64) {
                return bad(format!("sobolev_embedding needs 1 < p < N (p={p}, N={n})"));
            }
            if !(0.0..=p).contains(s) {
                return bad(format!("s must lie in [0, p], got {s}"));
            }
        }
        InequalityCase::BorderlineSobolev { q } => {
            any_weight()?;
            if (p - n as f64).abs() > 1e-12 {
                return bad(format!("borderline_sobolev needs p = N (p={p}, N={n})"));
            }
            if !(*q >= n as f64 && q.is_finite()) {
                return bad(format!("borderline_sobolev needs q >= N, got {q}"));
            }
            if !weight.unwrap().depends_on_xn_only() {
                return bad("borderline_sobolev needs W = W(x_N)".into());
            }
        }
        InequalityCase::TraceEmbedding { q, direction } => {
            needs(match direction {
                TraceDirection::Plus => Monotonicity::Increasing,
                TraceDirection::Minus => Monotonicity::Decreasing,
            })?;
            let nn = n as f64;
            let ok = if p < nn {
                *q >= p && *q <= trace_exponent(n, p) + 1e-12
            } else if (p - nn).abs() <= 1e-12 {
                *q >= nn && q.is_finite()
            } else {
                false
            };
            if !ok {
                return bad(format!("trace_embedding exponent q={q} outside the admissible range for p={p}, N={n}"));
            }
        }
        InequalityCase::W1pComparison { c1, big_c1 } => {
            needs(Monotonicity::Increasing)?;
            if !(*c1 > 0.0 && *big_c1 > 0.0) {
                return bad(format!("w1p_comparison needs c1 > 0 and C1 > 0 (got {c1}, {big_c1})"));
            }
        }
    }
    Ok(Setup { case: case.clone(), weight, own_weight, domain: *domain, u, p, n })
}

fn t(terms: &BTreeMap<String, Term>, name: &str) -> Term {
    terms[name]
}

fn lin(parts: &[(f64, Term)]) -> Term {
    parts.iter().fold(Term { value: 0.0, err: 0.0 }, |acc, (c, t)| Term {
        value: acc.value + c * t.value,
        err: acc.err + c.abs() * t.err,
    })
}

/// `I^{1/q}` with first-order error.
fn root(t: Term, q: f64) -> Term {
    let v = t.value.max(0.0).powf(1.0 / q);
    let err = if t.value > 0.0 { v / (q * t.value) * t.err } else { t.err.powf(1.0 / q) };
    Term { value: v, err }
}

struct Assembled {
    constant: Constant,
    lhs: Term,
    rhs: Term,
    /// Normalisers: `ratio = (rhs/c_r)/(lhs/c_l)`, threshold `c_l/c_r`.
    c_l: f64,
    c_r: f64,
    explicit: bool,
}

fn explicit(pairs: &[(&str, f64)]) -> Constant {
    Constant::Explicit(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

impl Setup<'_> {
    fn dw_plus_minus(&self, terms: &BTreeMap<String, Term>) -> Term {
        match self.direction() {
            TraceDirection::Plus => root(t(terms, "gradient_rhs"), self.p),
            TraceDirection::Minus => root(lin(&[(1.0, t(terms, "gradient_rhs")), (1.0, t(terms, "boundary_rhs"))]), self.p),
        }
    }

    fn assemble(&self, terms: &mut BTreeMap<String, Term>) -> Assembled {
        let p = self.p;
        let pp = p.powf(p);
        let two_sided = |constant, lhs, rhs, c_l, c_r| Assembled { constant, lhs, rhs, c_l, c_r, explicit: true };
        let empirical = |lhs: Term, rhs: Term| Assembled {
            constant: Constant::Empirical,
            lhs,
            rhs,
            c_l: 1.0,
            c_r: 1.0,
            explicit: false,
        };
        match &self.case {
            InequalityCase::HardyI | InequalityCase::HalfSpaceHardyI => two_sided(
                explicit(&[("boundary_lhs", p), ("gradient_rhs", pp)]),
                lin(&[(1.0, t(terms, "interior_lhs")), (p, t(terms, "boundary_lhs"))]),
                lin(&[(pp, t(terms, "gradient_rhs"))]),
                1.0,
                pp,
            ),
            InequalityCase::HardyII => two_sided(
                explicit(&[("gradient_rhs", pp), ("boundary_rhs", p)]),
                t(terms, "interior_lhs"),
                lin(&[(pp, t(terms, "gradient_rhs")), (p, t(terms, "boundary_rhs"))]),
                1.0,
                pp,
            ),
            InequalityCase::SingularHardy { gamma } => {
                let c = ((gamma - p + 1.0) / p).abs().powf(p);
                two_sided(explicit(&[("interior_lhs", c)]), lin(&[(c, t(terms, "interior_lhs"))]), t(terms, "gradient_rhs"), c, 1.0)
            }
            InequalityCase::Kato { gamma, .. } => {
                // ∫(1+x_N)^{γ+p-1}|x'|^{-β}|∇u|^p = γ^{p-1}·(weighted gradient term).
                let g = terms.get_mut("gradient_rhs").unwrap();
                let s = gamma.powf(p - 1.0);
                g.value *= s;
                g.err *= s;
                let c = (p / gamma).powf(p - 1.0);
                two_sided(explicit(&[("gradient_rhs", c)]), t(terms, "boundary_lhs"), lin(&[(c, t(terms, "gradient_rhs"))]), 1.0, c)
            }
            InequalityCase::SobolevEmbedding { s } => {
                let q = q_of_s(self.n, p, *s);
                let emb = root(t(terms, "embedding_integral"), q);
                let dw = self.dw_plus_minus(terms);
                terms.insert("embedding_lhs_norm".into(), emb);
                terms.insert("dw_norm".into(), dw);
                empirical(emb, dw)
            }
            InequalityCase::BorderlineSobolev { q } => {
                let emb = root(t(terms, "embedding_integral"), *q);
                let dw = self.dw_plus_minus(terms);
                terms.insert("embedding_lhs_norm".into(), emb);
                terms.insert("dw_norm".into(), dw);
                empirical(emb, dw)
            }
            InequalityCase::TraceEmbedding { q, direction } => {
                let tr = root(t(terms, "trace_integral"), *q);
                let dw = self.dw_plus_minus(terms);
                terms.insert("embedding_lhs_norm".into(), tr);
                terms.insert("dw_norm".into(), dw);
                let lip = match &self.domain {
                    CaseDomain::Graph(g) => g.lipschitz_bound(),
                    CaseDomain::TwoGraph(_) => None,
                };
                match lip {
                    // trace^p ≤ √(1+L²)·p^{p-1}·‖u‖_{D+}^p, and ≤ √(1+L²)·‖u‖_{D-}^p.
                    Some(l) if (*q - p).abs() < 1e-12 => {
                        let c = (1.0 + l * l).sqrt() * if *direction == TraceDirection::Plus { p.powf(p - 1.0) } else { 1.0 };
                        let lhs = t(terms, "trace_integral");
                        let rhs = match direction {
                            TraceDirection::Plus => lin(&[(c, t(terms, "gradient_rhs"))]),
                            TraceDirection::Minus => lin(&[(c, t(terms, "gradient_rhs")), (c, t(terms, "boundary_rhs"))]),
                        };
                        two_sided(explicit(&[("dw_norm_pow_p", c)]), lhs, rhs, 1.0, c)
                    }
                    _ => empirical(tr, dw),
                }
            }
            InequalityCase::TwoGraph { placement } => {
                let (left, right) = match placement {
                    Placement::AsStated => ("boundary_lower", "boundary_upper"),
                    Placement::Derived => ("boundary_upper", "boundary_lower"),
                };
                let c = explicit(&[(left, p), (right, p), ("gradient_rhs", pp)]);
                two_sided(
                    c,
                    lin(&[(1.0, t(terms, "interior_lhs")), (p, t(terms, left))]),
                    lin(&[(p, t(terms, right)), (pp, t(terms, "gradient_rhs"))]),
                    1.0,
                    pp,
                )
            }
            InequalityCase::HsmConjecture { gamma, coefficient } => {
                let ps = sobolev_exponent(self.n, p);
                let coef = coefficient.unwrap_or(((gamma - p + 1.0) / p).powf(p));
                let emb = root(t(terms, "embedding_integral"), ps / p);
                terms.insert("embedding_lhs_norm".into(), emb);
                let rhs = lin(&[(1.0, t(terms, "gradient_rhs")), (-coef, t(terms, "singular_rhs"))]);
                let mut a = empirical(emb, rhs);
                a.constant = Constant::Explicit([("singular_rhs".to_string(), coef)].into_iter().collect());
                a.explicit = false;
                a
            }
            InequalityCase::W1pComparison { c1, big_c1 } => {
                let k = pp / big_c1 + 1.0 / c1;
                two_sided(
                    explicit(&[("gradient_rhs", k)]),
                    lin(&[(1.0, t(terms, "interior_lhs")), (1.0, t(terms, "gradient_lhs"))]),
                    lin(&[(k, t(terms, "gradient_rhs"))]),
                    1.0,
                    k,
                )
            }
        }
    }

    fn report(&self, weight_desc: Option<&WeightSpec>, settings: &QuadSettings, mut terms: BTreeMap<String, Term>) -> InequalityReport {
        let degenerate = terms.values().all(|t| t.value.abs() < DEGENERATE_THRESHOLD);
        let a = self.assemble(&mut terms);
        let params = serde_json::json!({
            "case": self.case,
            "p": self.p,
            "dim": self.n,
            "weight": weight_desc.or(self.own_weight.as_ref()).map(|w| &w.family),
            "domain": self.domain,
        });
        let raw_ratio = (a.rhs.value / a.c_r) / (a.lhs.value / a.c_l);
        let (margin, ratio) = if degenerate {
            (a.explicit.then_some(0.0), None)
        } else {
            (a.explicit.then_some(a.rhs.value - a.lhs.value), raw_ratio.is_finite().then_some(raw_ratio))
        };
        InequalityReport {
            kind: self.case.name().to_string(),
            params,
            terms,
            constant: a.constant,
            lhs_total: a.lhs,
            rhs_total: a.rhs,
            margin,
            margin_err: if a.explicit { a.lhs.err + a.rhs.err } else { 0.0 },
            ratio,
            ratio_threshold: a.explicit.then_some(a.c_l / a.c_r),
            degenerate,
            settings: *settings,
            seed: None,
        }
    }
}

struct Placeholder(usize);

impl Field for Placeholder {
    fn dim(&self) -> usize {
        self.0
    }
    fn support_box(&self) -> AaBox {
        AaBox::cube(self.0, -1.0, 1.0)
    }
    fn eval_into(&self, _: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        0.0
    }
}

/// Case/weight/domain/p compatibility without evaluating anything.
pub fn check_compatible(case: &InequalityCase, weight: Option<&WeightSpec>, domain: &CaseDomain, p: f64) -> Result<(), IneqError> {
    let weight = if case.needs_weight() { weight.map(|w| w as &dyn WeightField) } else { None };
    validate(case, weight, domain, &Placeholder(domain.dim()), p).map(|_| ())
}

/// Evaluates one inequality instance by quadrature.
pub fn evaluate_case(
    case: &InequalityCase,
    weight: Option<&WeightSpec>,
    domain: &CaseDomain,
    u: &TestFunction,
    p: f64,
    settings: &QuadSettings,
) -> Result<InequalityReport, IneqError> {
    evaluate_fields(case, weight.map(|w| w as &dyn WeightField), weight, domain, u, p, settings)
}

/// As [`evaluate_case`] for arbitrary fields; `weight_desc` is only used
/// for the report parameters.
pub fn evaluate_fields(
    case: &InequalityCase,
    weight: Option<&dyn WeightField>,
    weight_desc: Option<&WeightSpec>,
    domain: &CaseDomain,
    u: &dyn Field,
    p: f64,
    settings: &QuadSettings,
) -> Result<InequalityReport, IneqError> {
    let weight = if case.needs_weight() { weight } else { None };
    let setup = validate(case, weight, domain, u, p)?;
    let terms = setup.quadrature(settings)?;
    Ok(setup.report(weight_desc, settings, terms))
}

/// The same instance on the half-space for `u ∘ Φ⁻¹` and `W ∘ Φ⁻¹`, with
/// the gradient field transported pointwise.
pub fn evaluate_flattened(
    case: &InequalityCase,
    weight: &WeightSpec,
    domain: &GraphDomain,
    u: &TestFunction,
    p: f64,
    settings: &QuadSettings,
) -> Result<InequalityReport, IneqError> {
    let w = TransportedWeight { spec: weight, domain: *domain };
    let v = PulledBack { u, domain: *domain };
    let flat = CaseDomain::Graph(GraphDomain::flat(domain.dim));
    evaluate_fields(case, Some(&w), Some(weight), &flat, &v, p, settings)
}

/// Monte-Carlo estimates of the raw integral terms of an instance.
pub fn oracle_terms(
    case: &InequalityCase,
    weight: Option<&WeightSpec>,
    domain: &CaseDomain,
    u: &TestFunction,
    p: f64,
    n: usize,
    seed: u64,
) -> Result<BTreeMap<String, McEstimate>, IneqError> {
    let weight = if case.needs_weight() { weight.map(|w| w as &dyn WeightField) } else { None };
    validate(case, weight, domain, u, p)?.monte_carlo(n, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DwNorms {
    pub plus: Option<f64>,
    pub minus: Option<f64>,
}

/// `‖u‖_{D_W^+}` for increasing W, `‖u‖_{D_W^-}` (with boundary term) for
/// decreasing W; the mismatched norm is absent.
pub fn dw_norms(
    weight: &WeightSpec,
    domain: &GraphDomain,
    u: &TestFunction,
    p: f64,
    settings: &QuadSettings,
) -> Result<DwNorms, IneqError> {
    let direction = match weight.monotonicity {
        Monotonicity::Increasing => TraceDirection::Plus,
        Monotonicity::Decreasing => TraceDirection::Minus,
    };
    let case = InequalityCase::TraceEmbedding { q: p, direction };
    let dom = CaseDomain::Graph(*domain);
    let setup = Setup { case, weight: Some(weight), own_weight: None, domain: dom, u, p, n: domain.dim };
    if u.dim() != domain.dim {
        return Err(IneqError::IncompatibleCase(format!("test function dimension {} != N={}", u.dim(), domain.dim)));
    }
    let terms = setup.quadrature(settings)?;
    let norm = setup.dw_plus_minus(&terms).value;
    Ok(match direction {
        TraceDirection::Plus => DwNorms { plus: Some(norm), minus: None },
        TraceDirection::Minus => DwNorms { plus: None, minus: Some(norm) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_two_graph, GraphShape};
    use crate::quad::McEstimate;
    use crate::testfn::{make_testfn, TestFnFamily};
    use approx::assert_relative_eq;

    fn bump(center: Vec<f64>, radius: f64) -> TestFunction {
        make_testfn(TestFnFamily::RadialBump { center, radius }).unwrap()
    }

    fn flat(n: usize) -> CaseDomain {
        CaseDomain::Graph(GraphDomain::flat(n))
    }

    fn settings() -> QuadSettings {
        QuadSettings::with_tol(1e-8)
    }

    fn agrees(q: Term, mc: McEstimate) -> bool {
        (q.value - mc.value).abs() <= 3.0 * (mc.std_error.powi(2) + q.err.powi(2)).sqrt()
    }

    #[test]
    fn hardy_i_exp_weight() {
        let w = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        let u = bump(vec![0.0, 1.0], 0.9);
        let r = evaluate_case(&InequalityCase::HardyI, Some(&w), &flat(2), &u, 2.0, &settings()).unwrap();
        assert!(r.margin.unwrap() >= 0.0);
        assert_eq!(r.constant, explicit(&[("boundary_lhs", 2.0), ("gradient_rhs", 4.0)]));
        // Support stays above the boundary.
        assert_eq!(r.term("boundary_lhs").unwrap().value, 0.0);
        let mc = oracle_terms(&InequalityCase::HardyI, Some(&w), &flat(2), &u, 2.0, 400_000, 11).unwrap();
        for name in ["interior_lhs", "gradient_rhs"] {
            assert!(agrees(r.term(name).unwrap(), mc[name]), "{name}: {:?} {:?}", r.term(name), mc[name]);
        }
    }

    #[test]
    fn hardy_ii_decreasing_example() {
        let w = make_weight(WeightFamily::DecreasingShiftedPower { gamma: 0.0, p: 2.0 }, 2).unwrap();
        let u = bump(vec![0.2, 0.3], 1.0);
        let r = evaluate_case(&InequalityCase::HardyII, Some(&w), &flat(2), &u, 2.0, &settings()).unwrap();
        assert_eq!(r.constant, explicit(&[("gradient_rhs", 4.0), ("boundary_rhs", 2.0)]));
        assert!(r.margin.unwrap() >= 0.0);
        // 0.25·∫u²/(1+x_N)² ≤ ∫|∇u|² + 0.5·∫u² on the boundary.
        let i = r.term("interior_lhs").unwrap().value;
        let g = r.term("gradient_rhs").unwrap().value;
        let b = r.term("boundary_rhs").unwrap().value;
        assert!(0.25 * i <= g + 0.5 * b);
        assert!(b > 0.0);
        let mc = oracle_terms(&InequalityCase::HardyII, Some(&w), &flat(2), &u, 2.0, 400_000, 5).unwrap();
        for name in ["interior_lhs", "gradient_rhs", "boundary_rhs"] {
            assert!(agrees(r.term(name).unwrap(), mc[name]), "{name}");
        }
    }

    #[test]
    fn margin_and_ratio_are_consistent() {
        let u = bump(vec![0.1, 0.2], 1.0);
        let cases: Vec<(InequalityCase, Option<WeightSpec>)> = vec![
            (InequalityCase::HardyI, Some(make_weight(WeightFamily::Arctan, 2).unwrap())),
            (InequalityCase::HardyII, Some(make_weight(WeightFamily::ExpNeg { gamma: 0.5 }, 2).unwrap())),
            (InequalityCase::SingularHardy { gamma: 3.0 }, None),
            (InequalityCase::Kato { gamma: 1.0, beta: 0.5 }, None),
            (InequalityCase::W1pComparison { c1: 1.0, big_c1: 1.0 }, Some(make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap())),
        ];
        for (case, w) in cases {
            let r = evaluate_case(&case, w.as_ref(), &flat(2), &u, 2.0, &settings()).unwrap();
            let m = r.margin.unwrap();
            let ratio = r.ratio.unwrap();
            let th = r.ratio_threshold.unwrap();
            assert_eq!(m >= 0.0, ratio >= th, "{case:?}");
            assert!(r.verified(), "{case:?}: {r:?}");
            assert_relative_eq!(r.margin_err, r.lhs_total.err + r.rhs_total.err);
        }
    }

    #[test]
    fn singular_hardy_boundary_bump() {
        let u = bump(vec![0.0, 0.0], 1.0);
        let r = evaluate_case(&InequalityCase::SingularHardy { gamma: 3.0 }, None, &flat(2), &u, 2.0, &settings()).unwrap();
        assert_eq!(r.constant, explicit(&[("interior_lhs", 1.0)]));
        assert!(r.margin.unwrap() >= 0.0);
    }

    #[test]
    fn singular_hardy_below_threshold_is_non_integrable() {
        let u = make_testfn(TestFnFamily::Plateau { r_inner: 1.0, r_outer: 2.0, center: vec![0.0, 0.0] }).unwrap();
        let s = QuadSettings { tol: 1e-6, max_cells: 100_000 };
        let r = evaluate_case(&InequalityCase::SingularHardy { gamma: 0.0 }, None, &flat(2), &u, 2.0, &s);
        assert!(matches!(r, Err(IneqError::NonIntegrableSingularity { .. })), "{r:?}");
    }

    #[test]
    fn homogeneity() {
        let u = bump(vec![0.3, -0.2, 0.4], 1.1);
        let lam: f64 = -2.5;
        let v = u.scaled(lam);
        let w = make_weight(WeightFamily::PowerXn { gamma: 0.5, beta: 0.5 }, 3).unwrap();
        let a = evaluate_case(&InequalityCase::HardyI, Some(&w), &flat(3), &u, 1.5, &settings()).unwrap();
        let b = evaluate_case(&InequalityCase::HardyI, Some(&w), &flat(3), &v, 1.5, &settings()).unwrap();
        for (name, ta) in &a.terms {
            assert_relative_eq!(b.terms[name].value, lam.abs().powf(1.5) * ta.value, max_relative = 1e-6);
        }
        assert_relative_eq!(a.ratio.unwrap(), b.ratio.unwrap(), max_relative = 1e-6);
        let s = InequalityCase::SobolevEmbedding { s: 1.0 };
        let wexp = make_weight(WeightFamily::Exp { gamma: 1.0 }, 3).unwrap();
        let a = evaluate_case(&s, Some(&wexp), &flat(3), &u, 2.0, &settings()).unwrap();
        let b = evaluate_case(&s, Some(&wexp), &flat(3), &v, 2.0, &settings()).unwrap();
        let q = q_of_s(3, 2.0, 1.0);
        assert_relative_eq!(b.terms["embedding_integral"].value, lam.abs().powf(q) * a.terms["embedding_integral"].value, max_relative = 1e-6);
        assert_relative_eq!(a.ratio.unwrap(), b.ratio.unwrap(), max_relative = 1e-6);
        assert!(a.margin.is_none());
    }

    #[test]
    fn singular_dilation_law() {
        let (gamma, p) = (2.0, 2.0);
        let u = bump(vec![0.2, 0.1], 1.0);
        let case = InequalityCase::SingularHardy { gamma };
        let a = evaluate_case(&case, None, &flat(2), &u, p, &settings()).unwrap();
        for r in [0.5, 3.0] {
            let b = evaluate_case(&case, None, &flat(2), &u.dilated(r).unwrap(), p, &settings()).unwrap();
            let s = r.powf(2.0 - p + gamma);
            assert_relative_eq!(b.lhs_total.value, s * a.lhs_total.value, max_relative = 1e-6);
            assert_relative_eq!(b.rhs_total.value, s * a.rhs_total.value, max_relative = 1e-6);
            assert_relative_eq!(b.ratio.unwrap(), a.ratio.unwrap(), max_relative = 1e-4);
        }
    }

    #[test]
    fn exponent_bookkeeping() {
        for (n, p) in [(3usize, 2.0), (3, 1.5), (4, 3.0)] {
            assert_relative_eq!(q_of_s(n, p, 0.0), n as f64 * p / (n as f64 - p));
            assert_relative_eq!(q_of_s(n, p, p), p);
            assert_relative_eq!(sobolev_exponent(n, p), q_of_s(n, p, 0.0));
        }
        assert_relative_eq!(trace_exponent(3, 2.0), 4.0);
    }

    #[test]
    fn dw_norms_examples() {
        let w = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        let g = GraphDomain::flat(2);
        let u = bump(vec![0.1, 0.6], 0.8);
        let zero = u.scaled(0.0);
        let z = dw_norms(&w, &g, &zero, 2.0, &settings()).unwrap();
        assert_eq!(z, DwNorms { plus: Some(0.0), minus: None });
        let a = dw_norms(&w, &g, &u, 2.0, &settings()).unwrap().plus.unwrap();
        let b = dw_norms(&w, &g, &u.scaled(2.0), 2.0, &settings()).unwrap().plus.unwrap();
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-9);
        let mc = oracle_terms(&InequalityCase::HardyI, Some(&w), &flat(2), &u, 2.0, 400_000, 3).unwrap();
        let norm_mc = mc["gradient_rhs"].value.sqrt();
        let se = mc["gradient_rhs"].std_error / (2.0 * norm_mc);
        assert!((a - norm_mc).abs() <= 3.0 * se, "{a} {norm_mc} {se}");
        let wd = make_weight(WeightFamily::ExpNeg { gamma: 1.0 }, 2).unwrap();
        let d = dw_norms(&wd, &g, &u, 2.0, &settings()).unwrap();
        assert!(d.plus.is_none() && d.minus.unwrap() > 0.0);
    }

    #[test]
    fn incompatible_cases() {
        let u = bump(vec![0.0, 0.5], 1.0);
        let inc = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        let dec = make_weight(WeightFamily::ExpNeg { gamma: 1.0 }, 2).unwrap();
        let s = settings();
        assert!(matches!(
            evaluate_case(&InequalityCase::HardyI, Some(&dec), &flat(2), &u, 2.0, &s),
            Err(IneqError::IncompatibleMonotonicity(_))
        ));
        assert!(matches!(evaluate_case(&InequalityCase::HardyII, Some(&inc), &flat(2), &u, 2.0, &s), Err(IneqError::IncompatibleMonotonicity(_))));
        assert!(evaluate_case(&InequalityCase::HardyI, None, &flat(2), &u, 2.0, &s).is_err());
        assert!(evaluate_case(&InequalityCase::SobolevEmbedding { s: 0.0 }, Some(&inc), &flat(2), &u, 2.0, &s).is_err());
        assert!(evaluate_case(&InequalityCase::BorderlineSobolev { q: 1.5 }, Some(&inc), &flat(2), &u, 2.0, &s).is_err());
        let sine = CaseDomain::Graph(GraphDomain::new(GraphShape::ScaledSine { a: 0.5, k: 1.0 }, 2).unwrap());
        assert!(evaluate_case(&InequalityCase::HalfSpaceHardyI, Some(&inc), &sine, &u, 2.0, &s).is_err());
        assert!(evaluate_case(&InequalityCase::TwoGraph { placement: Placement::AsStated }, Some(&inc), &flat(2), &u, 2.0, &s).is_err());
        assert!(evaluate_case(&InequalityCase::HardyI, Some(&inc), &flat(3), &u, 2.0, &s).is_err());
        assert!(evaluate_case(&InequalityCase::TraceEmbedding { q: 5.0, direction: TraceDirection::Plus }, Some(&inc), &flat(2), &u, 1.5, &s).is_err());
    }

    fn two_graph() -> CaseDomain {
        let lower = GraphDomain::shifted(GraphShape::Zero, -0.5, 2).unwrap();
        let upper = GraphDomain::shifted(GraphShape::ScaledSine { a: 0.1, k: 1.0 }, 0.5, 2).unwrap();
        CaseDomain::TwoGraph(make_two_graph(lower, upper, 2).unwrap())
    }

    #[test]
    fn two_graph_gap_support_is_degenerate() {
        let w = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        let u = bump(vec![0.0, 0.0], 0.3);
        let r = evaluate_case(&InequalityCase::TwoGraph { placement: Placement::AsStated }, Some(&w), &two_graph(), &u, 2.0, &settings()).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.margin, Some(0.0));
        assert!(r.ratio.is_none());
        assert!(r.terms.values().all(|t| t.value == 0.0));
    }

    #[test]
    fn two_graph_placement_counterexample() {
        // A bump crossing ψ₁ only: the stated form needs
        // I + p·B₁ ≤ p^p·G, the derived one I ≤ p·B₁ + p^p·G.
        let w = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        // u ≡ 1 across the top of Ω₁, vanishing inside the gap.
        let knots = crate::testfn::uniform_knots(-8.0, 0.3, 40);
        let u = crate::testfn::make_trial(vec![1.0; knots.len() - 4], knots, 5.0, 2).unwrap();
        let dom = two_graph();
        let stated = evaluate_case(&InequalityCase::TwoGraph { placement: Placement::AsStated }, Some(&w), &dom, &u, 2.0, &settings()).unwrap();
        let derived = evaluate_case(&InequalityCase::TwoGraph { placement: Placement::Derived }, Some(&w), &dom, &u, 2.0, &settings()).unwrap();
        assert!(derived.margin.unwrap() >= 0.0, "{derived:?}");
        assert!(stated.margin.unwrap() < -stated.margin_tolerance(), "{stated:?}");
        assert!(stated.ratio.unwrap() < 0.5 * stated.ratio_threshold.unwrap());
    }

    #[test]
    fn flattening_preserves_terms() {
        let g = GraphDomain::new(GraphShape::ScaledSine { a: 0.5, k: 1.0 }, 2).unwrap();
        let w = make_weight(WeightFamily::Exp { gamma: 1.0 }, 2).unwrap();
        let u = bump(vec![0.4, 0.3], 1.0);
        let s = settings();
        let a = evaluate_case(&InequalityCase::HardyI, Some(&w), &CaseDomain::Graph(g), &u, 2.0, &s).unwrap();
        let b = evaluate_flattened(&InequalityCase::HardyI, &w, &g, &u, 2.0, &s).unwrap();
        for (name, ta) in &a.terms {
            assert_relative_eq!(b.terms[name].value, ta.value, max_relative = 1e-6);
        }
        assert_relative_eq!(a.margin.unwrap(), b.margin.unwrap(), max_relative = 1e-6);
    }

    #[test]
    fn trace_constant_on_sine_domain() {
        let g = GraphDomain::new(GraphShape::ScaledSine { a: 0.5, k: 1.0 }, 3).unwrap();
        let w = make_weight(WeightFamily::LogShift, 3).unwrap();
        let u = bump(vec![0.2, -0.3, 0.3], 1.0);
        let case = InequalityCase::TraceEmbedding { q: 2.0, direction: TraceDirection::Plus };
        let r = evaluate_case(&case, Some(&w), &CaseDomain::Graph(g), &u, 2.0, &settings()).unwrap();
        assert_eq!(r.constant, explicit(&[("dw_norm_pow_p", 1.25f64.sqrt() * 2.0)]));
        assert!(r.margin.unwrap() >= 0.0);
        let tr = r.terms["embedding_lhs_norm"].value;
        let dw = r.terms["dw_norm"].value;
        assert!(tr * tr <= 1.25f64.sqrt() * 2.0 * dw * dw);
    }

    #[test]
    fn hsm_defaults_and_serialization() {
        let u = bump(vec![0.1, 0.2, 0.3], 1.0);
        let r = evaluate_case(&InequalityCase::HsmConjecture { gamma: 2.0, coefficient: None }, None, &flat(3), &u, 2.0, &settings()).unwrap();
        assert_eq!(r.constant, explicit(&[("singular_rhs", 0.25)]));
        assert!(r.margin.is_none());
        assert!(r.ratio.unwrap() > 0.0);
        let json = serde_json::to_value(&r).unwrap();
        for key in ["kind", "params", "terms", "constant", "margin", "ratio", "degenerate", "settings", "seed"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["terms"]["gradient_rhs"].as_object().unwrap().len(), 2);
        let back: InequalityReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, r);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]
        #[test]
        fn hardy_i_margin_nonnegative(cx in -1.0f64..1.0, cn in -0.5f64..1.5, r in 0.4f64..1.5, p in 1.2f64..3.5, g in 0.3f64..2.0) {
            let w = make_weight(WeightFamily::Exp { gamma: g }, 2).unwrap();
            let u = bump(vec![cx, cn], r);
            let rep = evaluate_case(&InequalityCase::HardyI, Some(&w), &flat(2), &u, p, &QuadSettings::with_tol(1e-7)).unwrap();
            proptest::prop_assert!(rep.verified());
            proptest::prop_assert!(rep.ratio.unwrap() >= rep.ratio_threshold.unwrap() - 1e-9);
        }
    }
}
