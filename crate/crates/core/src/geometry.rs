//! Epigraph domains `Ω = {x_N > ψ(x')}`, the flattening map
//! `Φ(x', x_N) = (x', x_N - ψ(x'))`, and two-graph unions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("graph is not differentiable at x' = {0:?}")]
    NotDifferentiable(Vec<f64>),
    #[error("graphs cross: psi1 >= psi2 at x' = {at:?} (gap {gap})")]
    GraphsCross { at: Vec<f64>, gap: f64 },
    #[error("unsupported dimension N={0} (need 2 <= N <= 3)")]
    UnsupportedDimension(usize),
    #[error("invalid graph parameter: {0}")]
    BadParameter(String),
}

/// Shape of the boundary graph; `shift` is added on top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "psi", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphShape {
    Zero,
    /// `a·sin(k·x'₁)`
    ScaledSine { a: f64, k: f64 },
    /// `a·|x'|²`
    Paraboloid { a: f64 },
    /// `a·|x'₁|`, Lipschitz but not C¹ on `x'₁ = 0`.
    Cone { a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphDomain {
    pub shape: GraphShape,
    pub shift: f64,
    pub dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Flatten,
    Unflatten,
}

impl GraphDomain {
    pub fn new(shape: GraphShape, dim: usize) -> Result<Self, GeometryError> {
        Self::shifted(shape, 0.0, dim)
    }

    pub fn shifted(shape: GraphShape, shift: f64, dim: usize) -> Result<Self, GeometryError> {
        if !(2..=3).contains(&dim) {
            return Err(GeometryError::UnsupportedDimension(dim));
        }
        let params: &[f64] = match &shape {
            GraphShape::Zero => &[],
            GraphShape::ScaledSine { a, k } => &[*a, *k],
            GraphShape::Paraboloid { a } | GraphShape::Cone { a } => std::slice::from_ref(a),
        };
        if params.iter().chain(std::iter::once(&shift)).any(|v| !v.is_finite()) {
            return Err(GeometryError::BadParameter(format!("{shape:?} shift={shift}")));
        }
        Ok(Self { shape, shift, dim })
    }

    pub fn flat(dim: usize) -> Self {
        Self { shape: GraphShape::Zero, shift: 0.0, dim }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.shape, GraphShape::Zero) && self.shift == 0.0
    }

    /// Global bound on `|∇ψ|` when one exists.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match self.shape {
            GraphShape::Zero => Some(0.0),
            GraphShape::ScaledSine { a, k } => Some((a * k).abs()),
            GraphShape::Paraboloid { a } => (a == 0.0).then_some(0.0),
            GraphShape::Cone { a } => Some(a.abs()),
        }
    }

    pub fn psi(&self, xp: &[f64]) -> f64 {
        let base = match self.shape {
            GraphShape::Zero => 0.0,
            GraphShape::ScaledSine { a, k } => a * (k * xp[0]).sin(),
            GraphShape::Paraboloid { a } => a * xp.iter().map(|v| v * v).sum::<f64>(),
            GraphShape::Cone { a } => a * xp[0].abs(),
        };
        base + self.shift
    }

    /// Writes `∇ψ(x')` into `out` (length N-1).
    pub fn grad_psi_into(&self, xp: &[f64], out: &mut [f64]) -> Result<(), GeometryError> {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self.shape {
            GraphShape::Zero => {}
            GraphShape::ScaledSine { a, k } => out[0] = a * k * (k * xp[0]).cos(),
            GraphShape::Paraboloid { a } => {
                for (o, v) in out.iter_mut().zip(xp) {
                    *o = 2.0 * a * v;
                }
            }
            GraphShape::Cone { a } => {
                if xp[0] == 0.0 && a != 0.0 {
                    return Err(GeometryError::NotDifferentiable(xp.to_vec()));
                }
                out[0] = a * xp[0].signum();
            }
        }
        Ok(())
    }

    pub fn grad_psi(&self, xp: &[f64]) -> Result<Vec<f64>, GeometryError> {
        let mut g = vec![0.0; self.dim - 1];
        self.grad_psi_into(xp, &mut g)?;
        Ok(g)
    }

    /// `√(1 + |∇ψ(x')|²)`.
    pub fn surface_factor(&self, xp: &[f64]) -> Result<f64, GeometryError> {
        let mut g = [0.0; 2];
        let g = &mut g[..self.dim - 1];
        self.grad_psi_into(xp, g)?;
        Ok((1.0 + g.iter().map(|v| v * v).sum::<f64>()).sqrt())
    }

    /// Coordinate values of `x'_1` where ψ has a kink; quadrature splits
    /// panels there.
    pub fn kinks(&self) -> Vec<f64> {
        match self.shape {
            GraphShape::Cone { a } if a != 0.0 => vec![0.0],
            _ => vec![],
        }
    }

    pub fn transform(&self, x: &[f64], direction: Direction) -> Vec<f64> {
        let n = self.dim;
        let mut y = x.to_vec();
        let psi = self.psi(&x[..n - 1]);
        match direction {
            Direction::Flatten => y[n - 1] -= psi,
            Direction::Unflatten => y[n - 1] += psi,
        }
        y
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x[self.dim - 1] > self.psi(&x[..self.dim - 1])
    }
}

/// Axis-aligned box `[lo, hi]` in ℝ^N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        Self { lo, hi }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a).max(0.0)).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn translated(&self, by: &[f64]) -> Self {
        Self {
            lo: self.lo.iter().zip(by).map(|(a, c)| a + c).collect(),
            hi: self.hi.iter().zip(by).map(|(a, c)| a + c).collect(),
        }
    }

    /// The `x'` part (first N-1 axes).
    pub fn prime(&self) -> AaBox {
        let n = self.dim() - 1;
        Self { lo: self.lo[..n].to_vec(), hi: self.hi[..n].to_vec() }
    }
}

/// `Ω₁ ∪ Ω₂` with `Ω₁ = {x_N < ψ₁(x')}` and `Ω₂ = {x_N > ψ₂(x')}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoGraphDomain {
    pub lower: GraphDomain,
    pub upper: GraphDomain,
    pub dim: usize,
}

/// Default validation box for the gap check: `[-10, 10]^{N-1}`.
pub const TWO_GRAPH_VALIDATION_HALF_WIDTH: f64 = 10.0;
pub const TWO_GRAPH_VALIDATION_POINTS: usize = 10_000;

pub fn make_two_graph(
    lower: GraphDomain,
    upper: GraphDomain,
    dim: usize,
) -> Result<TwoGraphDomain, GeometryError> {
    let h = TWO_GRAPH_VALIDATION_HALF_WIDTH;
    let lo = vec![-h; dim - 1];
    let hi = vec![h; dim - 1];
    make_two_graph_in(lower, upper, dim, &lo, &hi)
}

/// Validates the strict gap `ψ₁ < ψ₂` on 10⁴ Halton points in the box
/// `[lo, hi] ⊂ ℝ^{N-1}`.
pub fn make_two_graph_in(
    lower: GraphDomain,
    upper: GraphDomain,
    dim: usize,
    lo: &[f64],
    hi: &[f64],
) -> Result<TwoGraphDomain, GeometryError> {
    if !(2..=3).contains(&dim) {
        return Err(GeometryError::UnsupportedDimension(dim));
    }
    if lower.dim != dim || upper.dim != dim {
        return Err(GeometryError::BadParameter(format!(
            "graph dimensions {} and {} differ from N={dim}",
            lower.dim, upper.dim
        )));
    }
    let mut xp = vec![0.0; dim - 1];
    // Include the box corners and centre, then quasi-random fill.
    for i in 0..TWO_GRAPH_VALIDATION_POINTS {
        for (d, v) in xp.iter_mut().enumerate() {
            let u = if i == 0 { 0.5 } else { halton(i as u64, HALTON_BASES[d]) };
            *v = lo[d] + (hi[d] - lo[d]) * u;
        }
        let gap = upper.psi(&xp) - lower.psi(&xp);
        if gap <= 0.0 || !gap.is_finite() {
            return Err(GeometryError::GraphsCross { at: xp.clone(), gap });
        }
    }
    Ok(TwoGraphDomain { lower, upper, dim })
}

const HALTON_BASES: [u64; 2] = [2, 3];

/// Radical inverse of `i` in `base`.
pub(crate) fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    let b = base as f64;
    while i > 0 {
        f /= b;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::{FRAC_PI_2, SQRT_2};

    fn sine() -> GraphDomain {
        GraphDomain::new(GraphShape::ScaledSine { a: 1.0, k: 1.0 }, 2).unwrap()
    }

    #[test]
    fn transform_examples() {
        let z = GraphDomain::flat(3);
        assert_eq!(z.transform(&[0.3, -1.0, 2.0], Direction::Flatten), vec![0.3, -1.0, 2.0]);
        let y = sine().transform(&[FRAC_PI_2, 3.0], Direction::Flatten);
        assert_relative_eq!(y[0], FRAC_PI_2);
        assert_relative_eq!(y[1], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let domains = [
            sine(),
            GraphDomain::new(GraphShape::Paraboloid { a: 0.7 }, 3).unwrap(),
            GraphDomain::shifted(GraphShape::Cone { a: 2.0 }, -0.5, 3).unwrap(),
        ];
        let mut worst: f64 = 0.0;
        for d in &domains {
            for _ in 0..1000 {
                let x: Vec<f64> = (0..d.dim).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let y = d.transform(&d.transform(&x, Direction::Flatten), Direction::Unflatten);
                worst = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn flatten_maps_into_half_space() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let d = GraphDomain::new(GraphShape::ScaledSine { a: 0.5, k: 1.0 }, 3).unwrap();
        for _ in 0..500 {
            let xp = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            let h: f64 = rng.gen_range(1e-6..3.0);
            let x = [xp[0], xp[1], d.psi(&xp) + h];
            assert!(d.transform(&x, Direction::Flatten)[2] > 0.0);
            let b = [xp[0], xp[1], d.psi(&xp)];
            assert!(d.transform(&b, Direction::Flatten)[2].abs() < 1e-12);
        }
    }

    #[test]
    fn surface_factor_examples() {
        assert_eq!(GraphDomain::flat(3).surface_factor(&[1.0, 2.0]).unwrap(), 1.0);
        assert_relative_eq!(sine().surface_factor(&[FRAC_PI_2]).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(sine().surface_factor(&[0.0]).unwrap(), SQRT_2);
        let cone = GraphDomain::new(GraphShape::Cone { a: 1.0 }, 2).unwrap();
        assert!(matches!(cone.surface_factor(&[0.0]), Err(GeometryError::NotDifferentiable(_))));
        assert_relative_eq!(cone.surface_factor(&[0.5]).unwrap(), SQRT_2);
    }

    #[test]
    fn lipschitz_bounds_hold_on_samples() {
        assert_eq!(GraphDomain::flat(2).lipschitz_bound(), Some(0.0));
        let d = GraphDomain::new(GraphShape::ScaledSine { a: -0.5, k: 3.0 }, 2).unwrap();
        assert_eq!(d.lipschitz_bound(), Some(1.5));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let (a, b): (f64, f64) = (rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            assert!((d.psi(&[a]) - d.psi(&[b])).abs() <= 1.5 * (a - b).abs() + 1e-15);
        }
        assert_eq!(GraphDomain::new(GraphShape::Paraboloid { a: 1.0 }, 2).unwrap().lipschitz_bound(), None);
    }

    #[test]
    fn two_graph_examples() {
        let zero = GraphDomain::flat(2);
        let one = GraphDomain::shifted(GraphShape::Zero, 1.0, 2).unwrap();
        let minus_one = GraphDomain::shifted(GraphShape::Zero, -1.0, 2).unwrap();
        assert!(make_two_graph(zero, one, 2).is_ok());
        assert!(matches!(make_two_graph(zero, minus_one, 2), Err(GeometryError::GraphsCross { .. })));
        let two = GraphDomain::shifted(GraphShape::Zero, 2.0, 2).unwrap();
        assert!(make_two_graph(sine(), two, 2).is_ok());
        // sin reaches 1 inside the box, so a constant 0.99 ceiling crosses.
        let low = GraphDomain::shifted(GraphShape::Zero, 0.99, 2).unwrap();
        assert!(make_two_graph(sine(), low, 2).is_err());
    }

    #[test]
    fn halton_is_low_discrepancy() {
        assert_eq!(halton(1, 2), 0.5);
        assert_eq!(halton(2, 2), 0.25);
        assert_relative_eq!(halton(1, 3), 1.0 / 3.0);
    }
}
