//! Drift/diffusion coefficient fields and scalar potentials.

use alloc::boxed::Box;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numeric;

/// Coefficients `(t, x) -> (b(t, x), σ(t, x))` of `dX = b dt + √ε σ dW`.
///
/// Diffusion matrices are written row-major into a `d * d` buffer.
pub trait CoefficientField: Send + Sync {
    fn dim(&self) -> usize;

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// `true` when neither coefficient depends on `t`.
    fn is_autonomous(&self) -> bool {
        true
    }

    /// A supplied Lipschitz constant, if the field knows one.
    fn lipschitz_estimate(&self) -> Option<f64> {
        None
    }
}

macro_rules! forward_field {
    ($($ty:ty),*) => {$(
        impl<T: CoefficientField + ?Sized> CoefficientField for $ty {
            fn dim(&self) -> usize { (**self).dim() }
            fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) { (**self).drift(t, x, out) }
            fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) { (**self).diffusion(t, x, out) }
            fn is_autonomous(&self) -> bool { (**self).is_autonomous() }
            fn lipschitz_estimate(&self) -> Option<f64> { (**self).lipschitz_estimate() }
        }
    )*};
}
forward_field!(&T, Box<T>, Arc<T>);

pub type VectorFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Field assembled from closures.
pub struct FnField {
    dim: usize,
    drift: Box<VectorFn>,
    diffusion: Box<VectorFn>,
    autonomous: bool,
    lipschitz: Option<f64>,
}

impl FnField {
    pub fn new(
        dim: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        autonomous: bool,
    ) -> Self {
        Self {
            dim,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
            autonomous,
            lipschitz: None,
        }
    }

    /// Autonomous field with constant diffusion `scale * Id`.
    pub fn autonomous_additive(
        dim: usize,
        scale: f64,
        drift: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            dim,
            move |_, x, out| drift(x, out),
            move |_, _, out| fill_scaled_identity(out, dim, scale),
            true,
        )
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lipschitz = Some(l);
        self
    }
}

impl CoefficientField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }
    fn is_autonomous(&self) -> bool {
        self.autonomous
    }
    fn lipschitz_estimate(&self) -> Option<f64> {
        self.lipschitz
    }
}

pub fn fill_scaled_identity(out: &mut [f64], d: usize, scale: f64) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        out[i * d + i] = scale;
    }
}

pub fn drift_at<F: CoefficientField + ?Sized>(field: &F, t: f64, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; field.dim()];
    field.drift(t, x, &mut out);
    out
}

pub fn diffusion_at<F: CoefficientField + ?Sized>(field: &F, t: f64, x: &[f64]) -> Vec<f64> {
    let d = field.dim();
    let mut out = vec![0.0; d * d];
    field.diffusion(t, x, &mut out);
    out
}

/// Evaluates both coefficients at each probe and fails on the first non-finite value.
pub fn check_finite<F: CoefficientField + ?Sized>(field: &F, probes: &[(f64, Vec<f64>)]) -> Result<()> {
    for (t, x) in probes {
        let b = drift_at(field, *t, x);
        let s = diffusion_at(field, *t, x);
        if b.iter().chain(&s).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time: *t,
                point: x.clone(),
            });
        }
    }
    Ok(())
}

/// Spot check that an allegedly autonomous field ignores time at the probe points.
pub fn spot_check_autonomy<F: CoefficientField + ?Sized>(field: &F, probes: &[(f64, Vec<f64>)]) -> bool {
    probes.iter().all(|(t, x)| {
        drift_at(field, *t, x) == drift_at(field, 0.0, x) && diffusion_at(field, *t, x) == diffusion_at(field, 0.0, x)
    })
}

/// Largest observed `|b(x) - b(y)| / |x - y|` over all probe pairs at time 0.
pub fn probe_lipschitz<F: CoefficientField + ?Sized>(field: &F, points: &[Vec<f64>]) -> f64 {
    let drifts: Vec<Vec<f64>> = points.iter().map(|p| drift_at(field, 0.0, p)).collect();
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let dx = numeric::dist(&points[i], &points[j]);
            if dx > 0.0 {
                best = best.max(numeric::dist(&drifts[i], &drifts[j]) / dx);
            }
        }
    }
    best
}

/// Scalar function on `R^d`, used for potentials and sublevel-set domains.
pub trait ScalarField: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Gradient; the default is a central difference with step `1e-6`.
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let mut xp = x.to_vec();
        for j in 0..x.len() {
            let h = 1e-6 * f64::max(1.0, libm::fabs(x[j]));
            xp[j] = x[j] + h;
            let fp = self.value(&xp);
            xp[j] = x[j] - h;
            let fm = self.value(&xp);
            xp[j] = x[j];
            out[j] = (fp - fm) / (2.0 * h);
        }
    }
}

/// Scalar field from a plain function, with the default finite-difference gradient.
pub struct FnScalar {
    dim: usize,
    f: Box<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl FnScalar {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { dim, f: Box::new(f) }
    }
}

impl ScalarField for FnScalar {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

impl<T: ScalarField + ?Sized> ScalarField for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        (**self).gradient(x, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::DoubleWell;

    #[test]
    fn autonomy_spot_check_detects_time_dependence() {
        let f = FnField::new(1, |t, x, o| o[0] = -x[0] + libm::sin(t), |_, _, o| o[0] = 1.0, false);
        let probes = vec![(1.0, vec![0.3]), (2.0, vec![-0.2])];
        assert!(!spot_check_autonomy(&f, &probes));
        assert!(spot_check_autonomy(&DoubleWell::standard(), &probes));
    }

    #[test]
    fn finite_check_reports_bad_point() {
        let f = FnField::autonomous_additive(1, 1.0, |x, o| o[0] = 1.0 / x[0]);
        let err = check_finite(&f, &[(0.0, vec![1.0]), (0.0, vec![0.0])]).unwrap_err();
        assert_eq!(err, Error::NonFinite { time: 0.0, point: vec![0.0] });
    }

    #[test]
    fn lipschitz_probe_of_linear_field() {
        let f = FnField::autonomous_additive(1, 1.0, |x, o| o[0] = -3.0 * x[0]);
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.3]).collect();
        assert!((probe_lipschitz(&f, &pts) - 3.0).abs() < 1e-12);
    }
}
