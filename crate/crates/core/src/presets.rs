//! Analytic fields used by the shipped experiments and the tests.

use alloc::vec;
use alloc::vec::Vec;

use crate::domain::Domain;
use crate::field::{fill_scaled_identity, CoefficientField, ScalarField};

/// `V(x) = x^4/4 - x^2/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoubleWellPotential;

impl DoubleWellPotential {
    pub fn eval(x: f64) -> f64 {
        let x2 = x * x;
        0.25 * x2 * x2 - 0.5 * x2
    }
}

impl ScalarField for DoubleWellPotential {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> f64 {
        Self::eval(x[0])
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] * x[0] * x[0] - x[0];
    }
}

/// `b(x) = x - x^3 = -V'(x)` with constant noise `σ`.
#[derive(Debug, Clone, Copy)]
pub struct DoubleWell {
    pub sigma: f64,
}

impl DoubleWell {
    pub fn standard() -> Self {
        Self { sigma: 1.0 }
    }

    #[inline]
    pub fn drift_scalar(x: f64) -> f64 {
        x - x * x * x
    }

    pub fn attractor() -> Vec<f64> {
        vec![-1.0]
    }

    /// `(-2, -0.1)` around `a = -1`.
    pub fn domain() -> Domain {
        Domain::interval(-2.0, -0.1, -1.0).expect("static preset domain")
    }

    /// `V(-0.1) - V(-1)`.
    pub fn barrier_height() -> f64 {
        DoubleWellPotential::eval(-0.1) - DoubleWellPotential::eval(-1.0)
    }
}

impl CoefficientField for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    #[inline]
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        out[0] = Self::drift_scalar(x[0]);
    }
    #[inline]
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma;
    }
    fn lipschitz_estimate(&self) -> Option<f64> {
        // sup |1 - 3x^2| on the enlarged working box [-2.5, 0.5]
        Some(17.75)
    }
}

/// `b(x) = -rate * x` in `dim` dimensions with diffusion `sigma * Id`.
#[derive(Debug, Clone, Copy)]
pub struct LinearDrift {
    pub dim: usize,
    pub rate: f64,
    pub sigma: f64,
}

impl CoefficientField for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -self.rate * xi;
        }
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        fill_scaled_identity(out, self.dim, self.sigma);
    }
    fn lipschitz_estimate(&self) -> Option<f64> {
        Some(libm::fabs(self.rate))
    }
}

/// Constant drift `v` with diffusion `sigma * Id`.
#[derive(Debug, Clone)]
pub struct ConstantDrift {
    pub velocity: Vec<f64>,
    pub sigma: f64,
}

impl CoefficientField for ConstantDrift {
    fn dim(&self) -> usize {
        self.velocity.len()
    }
    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.velocity);
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        fill_scaled_identity(out, self.velocity.len(), self.sigma);
    }
    fn lipschitz_estimate(&self) -> Option<f64> {
        Some(0.0)
    }
}

/// Maier–Stein field `b = (x - x^3 - βxy^2, -(1 + x^2) y)` with `σ = Id`.
///
/// For `β = 1` this is `-∇V` with `V = x^4/4 - x^2/2 + (1 + x^2) y^2 / 2`;
/// any other `β` is non-gradient.
#[derive(Debug, Clone, Copy)]
pub struct MaierStein {
    pub beta: f64,
}

impl MaierStein {
    pub fn attractor() -> Vec<f64> {
        vec![-1.0, 0.0]
    }

    pub fn saddle() -> Vec<f64> {
        vec![0.0, 0.0]
    }

    /// Ball of radius 0.9 around `(-1, 0)`; the field points inward on it for `β = 1`.
    pub fn domain() -> Domain {
        Domain::ball(vec![-1.0, 0.0], 0.9, vec![-1.0, 0.0]).expect("static preset domain")
    }

    /// `V` for the gradient case `β = 1`.
    pub fn potential(x: &[f64]) -> f64 {
        let (p, q) = (x[0], x[1]);
        0.25 * p * p * p * p - 0.5 * p * p + 0.5 * (1.0 + p * p) * q * q
    }
}

impl CoefficientField for MaierStein {
    fn dim(&self) -> usize {
        2
    }
    #[inline]
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (p, q) = (x[0], x[1]);
        out[0] = p - p * p * p - self.beta * p * q * q;
        out[1] = -(1.0 + p * p) * q;
    }
    fn diffusion(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        fill_scaled_identity(out, 2, 1.0);
    }
}
