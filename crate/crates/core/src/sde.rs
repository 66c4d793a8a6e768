//! Deterministic flows and Euler–Maruyama integration.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::domain::Domain;
use crate::error::{precondition, Error, Result};
use crate::field::CoefficientField;
use crate::numeric;
use crate::rng::{RngStream, SeedTag};
use crate::stats::{ExitRecord, ExitStatus};

/// Any coordinate beyond this magnitude aborts the path.
pub const DIVERGENCE_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub store_every: usize,
}

impl IntegratorConfig {
    pub fn new(dt: f64, horizon: f64, store_every: usize) -> Result<Self> {
        let cfg = Self { dt, horizon, store_every };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return precondition("dt must be positive and finite");
        }
        if !(self.horizon >= self.dt && self.horizon.is_finite()) {
            return precondition(format!("horizon {} must be finite and >= dt {}", self.horizon, self.dt));
        }
        if self.store_every == 0 {
            return precondition("store_every must be >= 1");
        }
        Ok(())
    }

    /// Number of steps needed to reach the horizon; the last one may be shorter than `dt`.
    pub fn n_steps(&self) -> usize {
        libm::ceil(self.horizon / self.dt - 1e-9) as usize
    }

    /// Grid time of step `k`.
    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        f64::min(k as f64 * self.dt, self.horizon)
    }
}

/// A time-gridded trajectory, states stored flat (`dim` values per time).
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub seed: Option<SeedTag>,
}

impl PathSample {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            times: Vec::new(),
            states: Vec::new(),
            seed: None,
        }
    }

    /// Builds a path from explicit times and per-time states.
    pub fn from_points(times: Vec<f64>, states: &[Vec<f64>]) -> Result<Self> {
        if times.len() != states.len() || times.is_empty() {
            return precondition("times and states must be nonempty and of equal length");
        }
        if times[0] != 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
            return precondition("times must start at 0 and increase strictly");
        }
        let dim = states[0].len();
        if states.iter().any(|s| s.len() != dim) {
            return precondition("all states must share one dimension");
        }
        Ok(Self {
            dim,
            times,
            states: states.iter().flatten().copied().collect(),
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    fn push(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(x);
    }
}

#[inline]
pub(crate) fn guard(t: f64, x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && libm::fabs(*v) <= DIVERGENCE_BOUND) {
        Ok(())
    } else {
        Err(Error::Divergence { time: t })
    }
}

/// Reusable scratch for Euler–Maruyama steps.
pub(crate) struct EmStepper {
    d: usize,
    sqrt_eps: f64,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    pub(crate) dw: Vec<f64>,
    kick: Vec<f64>,
}

impl EmStepper {
    pub(crate) fn new(d: usize, eps: f64) -> Self {
        Self {
            d,
            sqrt_eps: libm::sqrt(eps),
            drift: vec![0.0; d],
            sigma: vec![0.0; d * d],
            dw: vec![0.0; d],
            kick: vec![0.0; d],
        }
    }

    pub(crate) fn noisy(&self) -> bool {
        self.sqrt_eps > 0.0
    }

    /// Draws `ΔW` for a step of length `h` into the internal buffer.
    #[inline]
    pub(crate) fn draw(&mut self, h: f64, stream: &mut RngStream) {
        if self.noisy() {
            stream.fill_increments(libm::sqrt(h), &mut self.dw);
        }
    }

    /// `x <- x + b(t, x) h + √ε σ(t, x) ΔW` using the buffered increment.
    #[inline]
    pub(crate) fn apply<F: CoefficientField + ?Sized>(&mut self, field: &F, t: f64, h: f64, x: &mut [f64]) {
        field.drift(t, x, &mut self.drift);
        if self.noisy() {
            field.diffusion(t, x, &mut self.sigma);
            numeric::mat_vec(&self.sigma, &self.dw, &mut self.kick);
            for i in 0..self.d {
                x[i] += self.drift[i] * h + self.sqrt_eps * self.kick[i];
            }
        } else {
            for i in 0..self.d {
                x[i] += self.drift[i] * h;
            }
        }
    }
}

fn check_start<F: CoefficientField + ?Sized>(field: &F, x0: &[f64]) -> Result<()> {
    if x0.len() != field.dim() {
        return precondition(format!("x0 has dimension {}, field has {}", x0.len(), field.dim()));
    }
    guard(0.0, x0)
}

/// Fourth-order Runge–Kutta solution of `φ' = b(t, φ)`, `φ(0) = x0`.
pub fn integrate_flow<F: CoefficientField + ?Sized>(field: &F, x0: &[f64], cfg: &IntegratorConfig) -> Result<PathSample> {
    cfg.validate()?;
    check_start(field, x0)?;
    let d = field.dim();
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut path = PathSample::new(d);
    path.push(0.0, &x);
    let n = cfg.n_steps();
    for k in 0..n {
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        field.drift(t, &x, &mut k1);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        field.drift(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        field.drift(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..d {
            tmp[i] = x[i] + h * k3[i];
        }
        field.drift(t + h, &tmp, &mut k4);
        for i in 0..d {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t_next = cfg.time(k + 1);
        guard(t_next, &x)?;
        if (k + 1) % cfg.store_every == 0 || k + 1 == n {
            path.push(t_next, &x);
        }
    }
    Ok(path)
}

/// Euler–Maruyama path of `dX = b(t, X) dt + √ε σ(t, X) dW`.
pub fn simulate_path<F: CoefficientField + ?Sized>(
    field: &F,
    x0: &[f64],
    eps: f64,
    cfg: &IntegratorConfig,
    stream: &mut RngStream,
) -> Result<PathSample> {
    cfg.validate()?;
    check_start(field, x0)?;
    if !(eps >= 0.0) {
        return precondition("eps must be nonnegative");
    }
    let d = field.dim();
    let mut x = x0.to_vec();
    let mut em = EmStepper::new(d, eps);
    let mut path = PathSample::new(d);
    path.seed = Some(stream.tag());
    path.push(0.0, &x);
    let n = cfg.n_steps();
    for k in 0..n {
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        em.draw(h, stream);
        em.apply(field, t, h, &mut x);
        let t_next = cfg.time(k + 1);
        guard(t_next, &x)?;
        if (k + 1) % cfg.store_every == 0 || k + 1 == n {
            path.push(t_next, &x);
        }
    }
    Ok(path)
}

/// Simulates until the first grid step that leaves `domain`, or the horizon.
///
/// The exit time and point are refined by linear interpolation between the
/// last inside state and the first outside state.
pub fn simulate_until_exit<F: CoefficientField + ?Sized>(
    field: &F,
    x0: &[f64],
    eps: f64,
    domain: &Domain,
    cfg: &IntegratorConfig,
    stream: &mut RngStream,
) -> Result<ExitRecord> {
    cfg.validate()?;
    check_start(field, x0)?;
    if !(eps >= 0.0) {
        return precondition("eps must be nonnegative");
    }
    if !domain.contains(x0) {
        return precondition("x0 must lie inside the domain");
    }
    let d = field.dim();
    let seed = stream.tag();
    let mut x = x0.to_vec();
    let mut prev = x.clone();
    let mut em = EmStepper::new(d, eps);
    let n = cfg.n_steps();
    for k in 0..n {
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        prev.copy_from_slice(&x);
        em.draw(h, stream);
        em.apply(field, t, h, &mut x);
        guard(t + h, &x)?;
        if !domain.contains(&x) {
            let s = domain.exit_fraction(&prev, &x);
            let point: Vec<f64> = prev.iter().zip(&x).map(|(a, b)| a + s * (b - a)).collect();
            return Ok(ExitRecord {
                replicate_id: 0,
                seed,
                tau: t + s * h,
                exit_point: Some(point),
                status: ExitStatus::Exited,
            });
        }
    }
    Ok(ExitRecord::censored(0, seed, cfg.horizon))
}
