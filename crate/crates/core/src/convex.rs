//! Separable, proper, lower semicontinuous convex functions `phi` with
//! `phi >= phi(0) = 0`, their proximal maps `(I + h dphi)^{-1}` and a sampled
//! certificate for subgradient membership.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Tolerance band used for effective-domain membership on box boundaries.
pub const DOMAIN_TOL: f64 = 1e-12;

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A 1-d convex function given by its value and one-sided derivatives,
/// applied to every coordinate.
#[derive(Clone)]
pub struct ScalarConvex {
    value: ScalarFn,
    left_derivative: ScalarFn,
    right_derivative: ScalarFn,
    /// Closed effective domain `[lower, upper]`; infinities allowed.
    lower: f64,
    upper: f64,
}

impl ScalarConvex {
    /// `value` must be convex on `[lower, upper]` (and `+inf` outside), with
    /// `value(0) = 0` and `left(0) <= 0 <= right(0)`.
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        left_derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        right_derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        if !(lower <= 0.0 && 0.0 <= upper) {
            return Err(Error::Config(format!(
                "custom convex domain [{lower}, {upper}] must contain 0"
            )));
        }
        let f = Self {
            value: Arc::new(value),
            left_derivative: Arc::new(left_derivative),
            right_derivative: Arc::new(right_derivative),
            lower,
            upper,
        };
        if f.value(0.0) != 0.0 {
            return Err(Error::Config("custom convex function must vanish at 0".into()));
        }
        if !(f.left(0.0) <= 0.0 && 0.0 <= f.right(0.0)) {
            return Err(Error::Config(
                "custom convex function must attain its minimum at 0".into(),
            ));
        }
        Ok(f)
    }

    fn value(&self, u: f64) -> f64 {
        if u < self.lower || u > self.upper {
            f64::INFINITY
        } else {
            (self.value)(u)
        }
    }

    fn left(&self, u: f64) -> f64 {
        if u <= self.lower {
            f64::NEG_INFINITY
        } else {
            (self.left_derivative)(u.min(self.upper))
        }
    }

    fn right(&self, u: f64) -> f64 {
        if u >= self.upper {
            f64::INFINITY
        } else {
            (self.right_derivative)(u.max(self.lower))
        }
    }

    /// Solves `0 in p - y + h dphi(p)` by monotone bisection.
    fn prox(&self, h: f64, y: f64) -> Result<f64> {
        let below = |p: f64| p - y + h * self.right(p) < 0.0;
        let above = |p: f64| p - y + h * self.left(p) > 0.0;
        let mut iterations = 0usize;
        let mut step = 1.0f64.max(y.abs());
        let mut lo = (y - step).max(self.lower);
        while !(lo == self.lower || below(lo)) {
            iterations += 1;
            if iterations > BISECTION_MAX_ITER {
                return Err(Error::Numeric(format!("prox bracket not found for y = {y}")));
            }
            step *= 2.0;
            lo = (y - step).max(self.lower);
        }
        step = 1.0f64.max(y.abs());
        let mut hi = (y + step).min(self.upper);
        while !(hi == self.upper || above(hi)) {
            iterations += 1;
            if iterations > BISECTION_MAX_ITER {
                return Err(Error::Numeric(format!("prox bracket not found for y = {y}")));
            }
            step *= 2.0;
            hi = (y + step).min(self.upper);
        }
        let tol = BISECTION_TOL * 1.0f64.max(y.abs());
        while hi - lo > tol {
            iterations += 1;
            if iterations > BISECTION_MAX_ITER {
                return Err(Error::Numeric(format!(
                    "prox bisection did not converge for y = {y}"
                )));
            }
            let mid = 0.5 * (lo + hi);
            if below(mid) {
                lo = mid;
            } else if above(mid) {
                hi = mid;
            } else {
                return Ok(mid);
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

impl fmt::Debug for ScalarConvex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarConvex")
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone)]
pub enum ConvexKind {
    Zero,
    /// Indicator of `prod_i [lower_i, upper_i]`.
    IndicatorBox { lower: Vec<f64>, upper: Vec<f64> },
    /// `sum_i w_i |y_i|`.
    ScaledAbs { weights: Vec<f64> },
    CustomScalarConvex(ScalarConvex),
}

/// A convex function on `R^d`.
#[derive(Debug, Clone)]
pub struct ConvexFunction {
    kind: ConvexKind,
    dim: usize,
}

/// Proximal point `p` and implied subgradient `(y - p)/h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxResult {
    pub point: Vec<f64>,
    pub subgrad: Vec<f64>,
}

impl ConvexFunction {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: ConvexKind::Zero,
            dim,
        }
    }

    pub fn indicator_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("box bounds must have equal, positive length".into()));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if lo.is_nan() || hi.is_nan() || !(*lo <= 0.0 && 0.0 <= *hi) {
                return Err(Error::Config(format!(
                    "box coordinate {i}: [{lo}, {hi}] must contain 0"
                )));
            }
        }
        let dim = lower.len();
        Ok(Self {
            kind: ConvexKind::IndicatorBox { lower, upper },
            dim,
        })
    }

    pub fn scaled_abs(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Config("scaled_abs needs at least one weight".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Config(format!("scaled_abs weight {w} must be finite and >= 0")));
        }
        let dim = weights.len();
        Ok(Self {
            kind: ConvexKind::ScaledAbs { weights },
            dim,
        })
    }

    pub fn custom(f: ScalarConvex, dim: usize) -> Self {
        Self {
            kind: ConvexKind::CustomScalarConvex(f),
            dim,
        }
    }

    pub fn kind(&self) -> &ConvexKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ConvexKind::Zero)
    }

    /// True for kinds whose proximal map is exact (not bisection).
    pub fn has_closed_form_prox(&self) -> bool {
        !matches!(self.kind, ConvexKind::CustomScalarConvex(_))
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ConvexKind::Zero => "zero",
            ConvexKind::IndicatorBox { .. } => "indicator_box",
            ConvexKind::ScaledAbs { .. } => "scaled_abs",
            ConvexKind::CustomScalarConvex(_) => "custom",
        }
    }

    /// Closed effective domain per coordinate.
    pub fn domain_bounds(&self, i: usize) -> (f64, f64) {
        match &self.kind {
            ConvexKind::IndicatorBox { lower, upper } => (lower[i], upper[i]),
            ConvexKind::CustomScalarConvex(f) => (f.lower, f.upper),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Distance by which `y` leaves the closed domain, coordinate-wise max.
    pub fn domain_violation(&self, y: &[f64]) -> f64 {
        y.iter()
            .enumerate()
            .map(|(i, v)| {
                let (lo, hi) = self.domain_bounds(i);
                (lo - v).max(v - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }

    pub fn in_domain_closure(&self, y: &[f64], tol: f64) -> bool {
        self.domain_violation(y) <= tol
    }

    fn check_dim(&self, y: &[f64]) {
        assert_eq!(y.len(), self.dim, "convex function has dimension {}", self.dim);
    }

    /// `phi(y)`, `+inf` outside the effective domain.
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.check_dim(y);
        match &self.kind {
            ConvexKind::Zero => 0.0,
            ConvexKind::IndicatorBox { lower, upper } => {
                let inside = y
                    .iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi);
                if inside {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            ConvexKind::ScaledAbs { weights } => {
                y.iter().zip(weights).map(|(v, w)| w * v.abs()).sum()
            }
            ConvexKind::CustomScalarConvex(f) => y.iter().map(|v| f.value(*v)).sum(),
        }
    }

    /// Writes `argmin_u phi(u) + |u - y|^2 / (2h)` into `out`.
    pub fn prox_into(&self, h: f64, y: &[f64], out: &mut [f64]) -> Result<()> {
        if !(h > 0.0) {
            return Err(Error::Config(format!("prox step h = {h} must be positive")));
        }
        self.check_dim(y);
        match &self.kind {
            ConvexKind::Zero => out.copy_from_slice(y),
            ConvexKind::IndicatorBox { lower, upper } => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = y[i].max(lower[i]).min(upper[i]);
                }
            }
            ConvexKind::ScaledAbs { weights } => {
                for (i, o) in out.iter_mut().enumerate() {
                    let t = h * weights[i];
                    *o = y[i].signum() * (y[i].abs() - t).max(0.0);
                }
            }
            ConvexKind::CustomScalarConvex(f) => {
                for (o, v) in out.iter_mut().zip(y) {
                    *o = f.prox(h, *v)?;
                }
            }
        }
        Ok(())
    }

    pub fn prox(&self, h: f64, y: &[f64]) -> Result<ProxResult> {
        let mut point = vec![0.0; y.len()];
        self.prox_into(h, y, &mut point)?;
        let subgrad = y.iter().zip(&point).map(|(a, p)| (a - p) / h).collect();
        Ok(ProxResult { point, subgrad })
    }

    /// `max_z <v, z - p> + phi(p) - phi(z)` over the samples; `<= tol`
    /// certifies `v in dphi(p)` on the sample. Samples with `phi(z) = +inf`
    /// impose no constraint.
    pub fn subgradient_gap(&self, p: &[f64], v: &[f64], z_samples: &[Vec<f64>]) -> f64 {
        let phi_p = self.eval(p);
        let mut worst = f64::NEG_INFINITY;
        for z in z_samples {
            let phi_z = self.eval(z);
            if phi_z.is_infinite() {
                continue;
            }
            let lin: f64 = v.iter().zip(z.iter().zip(p)).map(|(a, (b, c))| a * (b - c)).sum();
            worst = worst.max(lin + phi_p - phi_z);
        }
        worst
    }

    /// Deterministic probe set around `p` for [`Self::subgradient_gap`]:
    /// coordinate moves at several scales, the domain endpoints, the origin
    /// and `n_random` Gaussian perturbations.
    pub fn probe_samples(&self, p: &[f64], n_random: usize, seed: u64) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut out = vec![vec![0.0; d], p.to_vec()];
        for i in 0..d {
            for scale in [1e-6, 1e-3, 0.1, 1.0, 10.0] {
                for sign in [-1.0, 1.0] {
                    let mut z = p.to_vec();
                    z[i] += sign * scale;
                    out.push(z);
                }
            }
            let (lo, hi) = self.domain_bounds(i);
            for b in [lo, hi] {
                if b.is_finite() {
                    let mut z = p.to_vec();
                    z[i] = b;
                    out.push(z);
                }
            }
        }
        let mut rng = rng::stream(seed, 0, 0, tag::SUBGRADIENT_SAMPLES);
        for _ in 0..n_random {
            out.push(p.iter().map(|v| v + 2.0 * rng::standard_normal(&mut rng)).collect());
        }
        out
    }

    /// Graph points `(x, y)` with `y in dphi(x)`, built as
    /// `x = prox(u)`, `y = u - x` for Gaussian `u` of the given scale.
    pub fn sample_graph_pairs(
        &self,
        n: usize,
        scale: f64,
        seed: u64,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let mut rng = rng::stream(seed, 0, 0, tag::TEST_PAIRS);
        (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..self.dim)
                    .map(|_| scale * rng::standard_normal(&mut rng))
                    .collect();
                let r = self.prox(1.0, &u)?;
                Ok((r.point, r.subgrad))
            })
            .collect()
    }
}
