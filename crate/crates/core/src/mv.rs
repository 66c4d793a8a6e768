//! McKean–Vlasov dynamics approximated by an interacting particle system.
//!
//! The law `μ_t` is replaced by the empirical measure of `N` particles. Each
//! step freezes the empirical summary at the step start, then moves every
//! particle with its own noise stream. Particle `i` draws from
//! `master.child(i)`, so the result does not depend on the storage order of
//! the particles or on the worker count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{precondition, Error, Result};
use crate::exec::Executor;
use crate::field::CoefficientField;
use crate::numeric;
use crate::rng::RngStream;
use crate::sde::{IntegratorConfig, DIVERGENCE_BOUND};
use crate::stats::ExitRecord;

/// Empirical statistics a kernel reads from the measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    Mean,
    SecondMoment,
    FullSample,
}

/// Statistics of a (possibly empirical) probability measure.
///
/// `second_moment` is the raw `E[x x^T]`, row-major, and is empty for
/// [`SummaryKind::Mean`]. `samples` is present only for
/// [`SummaryKind::FullSample`] and is ordered by particle id.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    pub n: usize,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub samples: Option<Vec<Vec<f64>>>,
}

impl MeasureSummary {
    /// Summary of `δ_a`, complete for every kind.
    pub fn dirac(a: &[f64]) -> Self {
        let d = a.len();
        let mut second_moment = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                second_moment[i * d + j] = a[i] * a[j];
            }
        }
        Self {
            n: 1,
            dim: d,
            mean: a.to_vec(),
            second_moment,
            samples: Some(vec![a.to_vec()]),
        }
    }

    /// Summary of the uniform measure on `states`. Sums are order independent.
    pub fn empirical(states: &[&[f64]], kind: SummaryKind) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return precondition("empirical summary needs at least one state");
        }
        let d = states[0].len();
        if states.iter().any(|s| s.len() != d) {
            return precondition("all states must share one dimension");
        }
        let nf = n as f64;
        let mean = (0..d)
            .map(|i| numeric::exact_sum(states.iter().map(|s| s[i])) / nf)
            .collect();
        let second_moment = if kind >= SummaryKind::SecondMoment {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    let v = numeric::exact_sum(states.iter().map(|s| s[i] * s[j])) / nf;
                    m[i * d + j] = v;
                    m[j * d + i] = v;
                }
            }
            m
        } else {
            Vec::new()
        };
        let samples = (kind == SummaryKind::FullSample).then(|| states.iter().map(|s| s.to_vec()).collect());
        Ok(Self {
            n,
            dim: d,
            mean,
            second_moment,
            samples,
        })
    }
}

/// Measure-dependent coefficients `b^MV(x, μ)` and `σ^MV(x, μ)`.
pub trait MeasureKernel: Send + Sync {
    fn dim(&self) -> usize;

    fn summary_kind(&self) -> SummaryKind;

    fn drift_mv(&self, x: &[f64], mu: &MeasureSummary, out: &mut [f64]);

    /// Row-major `d * d` matrix.
    fn diffusion_mv(&self, x: &[f64], mu: &MeasureSummary, out: &mut [f64]);
}

impl<K: MeasureKernel + ?Sized> MeasureKernel for &K {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn summary_kind(&self) -> SummaryKind {
        (**self).summary_kind()
    }
    fn drift_mv(&self, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        (**self).drift_mv(x, mu, out)
    }
    fn diffusion_mv(&self, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        (**self).diffusion_mv(x, mu, out)
    }
}

/// `b^MV(x, μ) = x - x^3 - θ (x - mean(μ))`, `σ^MV = σ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanFieldDoubleWell {
    pub theta: f64,
    pub sigma: f64,
}

impl MeanFieldDoubleWell {
    pub fn new(theta: f64) -> Self {
        Self { theta, sigma: 1.0 }
    }

    pub fn attractor() -> Vec<f64> {
        vec![-1.0]
    }

    /// Analytic constants: `K̃ = V''(a) + θ`, `K̃₁ = θ`, `C̃₁ = θ`.
    ///
    /// `M` and `p` are carried as metadata (`p = 2`, `M = 2`).
    pub fn analytic_constants(&self, kappa: f64, r: f64) -> Result<MVConstants> {
        derive_constants(2.0 + self.theta, self.theta, self.theta, kappa, r, 2.0, 2.0)
    }
}

impl MeasureKernel for MeanFieldDoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Mean
    }
    #[inline]
    fn drift_mv(&self, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        let y = x[0];
        out[0] = y - y * y * y - self.theta * (y - mu.mean[0]);
    }
    #[inline]
    fn diffusion_mv(&self, _x: &[f64], _mu: &MeasureSummary, out: &mut [f64]) {
        out[0] = self.sigma;
    }
}

/// A kernel with its measure argument frozen, e.g. at `δ_a`.
///
/// As a [`CoefficientField`] this is the autonomous field `b(·) = b^MV(·, μ)`;
/// as a [`MeasureKernel`] it ignores the live ensemble.
#[derive(Debug, Clone)]
pub struct Pinned<K> {
    pub inner: K,
    pub summary: MeasureSummary,
}

impl<K: MeasureKernel> Pinned<K> {
    pub fn at(inner: K, a: &[f64]) -> Self {
        Self {
            inner,
            summary: MeasureSummary::dirac(a),
        }
    }
}

impl<K: MeasureKernel> MeasureKernel for Pinned<K> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn summary_kind(&self) -> SummaryKind {
        SummaryKind::Mean
    }
    fn drift_mv(&self, x: &[f64], _mu: &MeasureSummary, out: &mut [f64]) {
        self.inner.drift_mv(x, &self.summary, out)
    }
    fn diffusion_mv(&self, x: &[f64], _mu: &MeasureSummary, out: &mut [f64]) {
        self.inner.diffusion_mv(x, &self.summary, out)
    }
}

impl<K: MeasureKernel> CoefficientField for Pinned<K> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.drift_mv(x, &self.summary, out)
    }
    fn diffusion(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        self.inner.diffusion_mv(x, &self.summary, out)
    }
}

/// One particle with a private noise stream.
#[derive(Debug, Clone)]
pub struct Particle {
    pub id: u64,
    pub state: Vec<f64>,
    stream: RngStream,
    prev: Vec<f64>,
    // drift | sigma | dw | kick
    scratch: Vec<f64>,
    diverged: bool,
}

impl Particle {
    fn new(id: u64, state: Vec<f64>, stream: RngStream) -> Self {
        let d = state.len();
        Self {
            id,
            prev: state.clone(),
            state,
            stream,
            scratch: vec![0.0; 3 * d + d * d],
            diverged: false,
        }
    }

    pub fn stream(&self) -> &RngStream {
        &self.stream
    }

    /// State before the most recent step.
    pub fn previous(&self) -> &[f64] {
        &self.prev
    }

    fn step<K: MeasureKernel + ?Sized>(&mut self, kernel: &K, mu: &MeasureSummary, h: f64, sqrt_eps: f64) {
        let d = self.state.len();
        self.prev.copy_from_slice(&self.state);
        let (drift, rest) = self.scratch.split_at_mut(d);
        let (sigma, rest) = rest.split_at_mut(d * d);
        let (dw, kick) = rest.split_at_mut(d);
        kernel.drift_mv(&self.state, mu, drift);
        if sqrt_eps > 0.0 {
            self.stream.fill_increments(libm::sqrt(h), dw);
            kernel.diffusion_mv(&self.state, mu, sigma);
            numeric::mat_vec(sigma, dw, kick);
            for i in 0..d {
                self.state[i] += drift[i] * h + sqrt_eps * kick[i];
            }
        } else {
            for i in 0..d {
                self.state[i] += drift[i] * h;
            }
        }
        self.diverged = !self.state.iter().all(|v| v.is_finite() && libm::fabs(*v) <= DIVERGENCE_BOUND);
    }
}

/// Interacting particle approximation of `μ_t`.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub dim: usize,
    pub time: f64,
    pub particles: Vec<Particle>,
}

impl ParticleEnsemble {
    /// `n` particles at `x`; particle `i` draws from `stream.child(i)`.
    pub fn at_point(x: &[f64], n: usize, stream: &RngStream) -> Result<Self> {
        Self::from_states((0..n).map(|_| x.to_vec()).collect(), stream)
    }

    pub fn from_states(states: Vec<Vec<f64>>, stream: &RngStream) -> Result<Self> {
        if states.is_empty() {
            return precondition("ensemble needs at least one particle");
        }
        let dim = states[0].len();
        if dim == 0 || states.iter().any(|s| s.len() != dim) {
            return precondition("all particle states must share one positive dimension");
        }
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return precondition("particle states must be finite");
        }
        let particles = states
            .into_iter()
            .enumerate()
            .map(|(i, s)| Particle::new(i as u64, s, stream.child(i as u64)))
            .collect();
        Ok(Self {
            dim,
            time: 0.0,
            particles,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// States in storage order.
    pub fn states(&self) -> Vec<&[f64]> {
        self.particles.iter().map(|p| p.state.as_slice()).collect()
    }

    /// States ordered by particle id.
    pub fn states_by_id(&self) -> Vec<&[f64]> {
        let mut ps: Vec<&Particle> = self.particles.iter().collect();
        ps.sort_by_key(|p| p.id);
        ps.into_iter().map(|p| p.state.as_slice()).collect()
    }

    pub fn summary(&self, kind: SummaryKind) -> Result<MeasureSummary> {
        let states = if kind == SummaryKind::FullSample { self.states_by_id() } else { self.states() };
        MeasureSummary::empirical(&states, kind)
    }

    /// Fisher–Yates shuffle of the storage order. Ids and streams move with their particles.
    pub fn shuffle(&mut self, stream: &mut RngStream) {
        for i in (1..self.particles.len()).rev() {
            let j = stream.index(i + 1);
            self.particles.swap(i, j);
        }
    }
}

/// `W₂(μ̂, δ_a) = √((1/N) Σ |x_i - a|²)`.
pub fn w2_to_dirac(ensemble: &ParticleEnsemble, a: &[f64]) -> f64 {
    libm::sqrt(xi_with_se(ensemble, a).0)
}

/// `(ξ, se)` with `ξ = (1/N) Σ |x_i - a|²` and `se` the Monte Carlo standard error of `ξ`.
fn xi_with_se(ensemble: &ParticleEnsemble, a: &[f64]) -> (f64, f64) {
    let sq: Vec<f64> = ensemble
        .particles
        .iter()
        .map(|p| p.state.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .collect();
    let n = sq.len() as f64;
    let xi = numeric::exact_sum(sq.iter().copied()) / n;
    let se = if sq.len() > 1 {
        let var = numeric::exact_sum(sq.iter().map(|q| (q - xi) * (q - xi))) / (n - 1.0);
        libm::sqrt(var / n)
    } else {
        0.0
    };
    (xi, se)
}

/// One Euler–Maruyama step of length `h` for every particle, the summary frozen at step start.
pub fn propagate_particles<K, E>(kernel: &K, ensemble: &mut ParticleEnsemble, eps: f64, h: f64, exec: &E) -> Result<()>
where
    K: MeasureKernel + ?Sized,
    E: Executor + ?Sized,
{
    if ensemble.dim != kernel.dim() {
        return precondition(format!("ensemble dimension {} does not match kernel dimension {}", ensemble.dim, kernel.dim()));
    }
    if !(eps >= 0.0) || !(h > 0.0) {
        return precondition("propagate_particles requires eps >= 0 and h > 0");
    }
    let mu = ensemble.summary(kernel.summary_kind())?;
    let sqrt_eps = libm::sqrt(eps);
    exec.for_each_mut(&mut ensemble.particles, |_, p| p.step(kernel, &mu, h, sqrt_eps));
    ensemble.time += h;
    if ensemble.particles.iter().any(|p| p.diverged) {
        return Err(Error::Divergence { time: ensemble.time });
    }
    Ok(())
}

/// Constants of the law-control argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MVConstants {
    pub c_tilde1: f64,
    pub k_tilde: f64,
    pub k_tilde1: f64,
    /// `(K̃₁ + K̃) / 2`
    pub k_tilde2: f64,
    /// `(K̃₁/K̃₂ + 1) / 2`
    pub m: f64,
    /// `2 C̃₁² / ((K̃₂ - K̃₁) κ)`
    pub t1: f64,
    pub r: f64,
    pub m_bound: f64,
    pub p: f64,
    pub kappa: f64,
    /// `κ / C̃₁`
    pub threshold: f64,
}

pub fn derive_constants(
    k_tilde: f64,
    k_tilde1: f64,
    c_tilde1: f64,
    kappa: f64,
    r: f64,
    m_bound: f64,
    p: f64,
) -> Result<MVConstants> {
    let all = [k_tilde, k_tilde1, c_tilde1, kappa, r, m_bound, p];
    if all.iter().any(|v| !v.is_finite()) {
        return precondition("constants must be finite");
    }
    if !(0.0 < k_tilde1 && k_tilde1 < k_tilde) {
        return precondition(format!("need 0 < K_tilde1 < K_tilde, got K_tilde1 = {k_tilde1}, K_tilde = {k_tilde}"));
    }
    if !(c_tilde1 > 0.0 && kappa > 0.0 && r > 0.0 && m_bound > 0.0) {
        return precondition("C_tilde1, kappa, R and M must be positive");
    }
    if !(p >= 2.0) {
        return precondition("moment order p must be >= 2");
    }
    let k_tilde2 = 0.5 * (k_tilde1 + k_tilde);
    Ok(MVConstants {
        c_tilde1,
        k_tilde,
        k_tilde1,
        k_tilde2,
        m: 0.5 * (k_tilde1 / k_tilde2 + 1.0),
        t1: 2.0 * c_tilde1 * c_tilde1 / ((k_tilde2 - k_tilde1) * kappa),
        r,
        m_bound,
        p,
        kappa,
        threshold: kappa / c_tilde1,
    })
}

/// `W₂(μ̂_t, δ_a)` on a time grid and the first grid time it reaches the threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawMonitor {
    pub times: Vec<f64>,
    pub w2_values: Vec<f64>,
    /// Standard error of `ξ = W₂²` at each grid time.
    pub xi_se: Vec<f64>,
    pub threshold: f64,
    /// `None` when the threshold is never reached on the grid (censored).
    pub s_kappa: Option<f64>,
    pub horizon: f64,
    pub n_particles: usize,
    pub dt: f64,
}

impl LawMonitor {
    pub fn sup_w2(&self) -> f64 {
        self.w2_values.iter().copied().fold(0.0, f64::max)
    }
}

/// Starts `n` particles at `a` and monitors the law up to `cfg.horizon`.
#[allow(clippy::too_many_arguments)]
pub fn monitor_law<K, E>(
    kernel: &K,
    a: &[f64],
    n: usize,
    eps: f64,
    constants: &MVConstants,
    cfg: &IntegratorConfig,
    stream: &RngStream,
    exec: &E,
) -> Result<LawMonitor>
where
    K: MeasureKernel + ?Sized,
    E: Executor + ?Sized,
{
    let mut ensemble = ParticleEnsemble::at_point(a, n, stream)?;
    monitor_ensemble(kernel, &mut ensemble, a, eps, constants.threshold, cfg, exec)
}

/// Monitors an existing ensemble; grid times are `cfg.time(k)` for every `store_every`-th step.
pub fn monitor_ensemble<K, E>(
    kernel: &K,
    ensemble: &mut ParticleEnsemble,
    a: &[f64],
    eps: f64,
    threshold: f64,
    cfg: &IntegratorConfig,
    exec: &E,
) -> Result<LawMonitor>
where
    K: MeasureKernel + ?Sized,
    E: Executor + ?Sized,
{
    cfg.validate()?;
    if a.len() != kernel.dim() {
        return precondition("attractor dimension does not match kernel");
    }
    if !(threshold > 0.0) {
        return precondition("threshold must be positive");
    }
    let mut mon = LawMonitor {
        times: Vec::new(),
        w2_values: Vec::new(),
        xi_se: Vec::new(),
        threshold,
        s_kappa: None,
        horizon: cfg.horizon,
        n_particles: ensemble.len(),
        dt: cfg.dt,
    };
    let record = |t: f64, ens: &ParticleEnsemble, mon: &mut LawMonitor| {
        let (xi, se) = xi_with_se(ens, a);
        let w2 = libm::sqrt(xi);
        if mon.s_kappa.is_none() && w2 >= threshold {
            mon.s_kappa = Some(t);
        }
        mon.times.push(t);
        mon.w2_values.push(w2);
        mon.xi_se.push(se);
    };
    ensemble.time = 0.0;
    record(0.0, ensemble, &mut mon);
    let n_steps = cfg.n_steps();
    for k in 0..n_steps {
        let h = cfg.time(k + 1) - cfg.time(k);
        propagate_particles(kernel, ensemble, eps, h, exec)?;
        ensemble.time = cfg.time(k + 1);
        if (k + 1) % cfg.store_every == 0 || k + 1 == n_steps {
            record(cfg.time(k + 1), ensemble, &mut mon);
        }
    }
    Ok(mon)
}

/// Solution of `ψ' = -2K̃₂ψ + 2K̃₁(κ/C̃₁)√ψ + α` on a monitor grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub alpha: f64,
    /// Positive root of the right-hand side, found numerically.
    pub psi_star: f64,
    /// `((K̃₁c + √((K̃₁c)² + 2K̃₂α)) / (2K̃₂))²` with `c = κ/C̃₁`.
    pub psi_star_closed: f64,
}

fn psi_rhs(c: &MVConstants, alpha: f64, psi: f64) -> f64 {
    -2.0 * c.k_tilde2 * psi + 2.0 * c.k_tilde1 * c.threshold * libm::sqrt(f64::max(psi, 0.0)) + alpha
}

/// RK4 solution recorded on the same grid as [`monitor_law`] with the same `cfg`.
pub fn solve_psi(constants: &MVConstants, alpha: f64, psi0: f64, cfg: &IntegratorConfig) -> Result<PsiPath> {
    cfg.validate()?;
    if !(psi0 >= 0.0 && psi0.is_finite()) {
        return precondition("psi0 must be finite and >= 0");
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return precondition("alpha must be finite and >= 0");
    }
    let c = constants;
    let b = c.k_tilde1 * c.threshold;
    let s_closed = (b + libm::sqrt(b * b + 2.0 * c.k_tilde2 * alpha)) / (2.0 * c.k_tilde2);
    // g(s) = rhs(s^2) is positive on (0, s*) and negative beyond
    let g = |s: f64| psi_rhs(c, alpha, s * s);
    let hi = 2.0 * s_closed + 1.0;
    let s_num = numeric::bisect(g, 1e-100, hi, 1e-15, 400);

    let f = |psi: f64| psi_rhs(c, alpha, psi);
    let mut psi = psi0;
    let mut times = vec![0.0];
    let mut values = vec![psi0];
    let n = cfg.n_steps();
    for k in 0..n {
        let h = cfg.time(k + 1) - cfg.time(k);
        let k1 = f(psi);
        let k2 = f(psi + 0.5 * h * k1);
        let k3 = f(psi + 0.5 * h * k2);
        let k4 = f(psi + h * k3);
        psi = f64::max(psi + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0);
        if (k + 1) % cfg.store_every == 0 || k + 1 == n {
            times.push(cfg.time(k + 1));
            values.push(psi);
        }
    }
    Ok(PsiPath {
        times,
        values,
        alpha,
        psi_star: s_num * s_num,
        psi_star_closed: s_closed * s_closed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct XiPsiReport {
    pub n_times: usize,
    pub n_pass: usize,
    pub pass_fraction: f64,
    /// Grid times where `ξ > ψ + 2 se`.
    pub violations: Vec<f64>,
    /// `max(ξ - ψ)` over the grid.
    pub max_excess: f64,
}

/// Compares `ξ(t) = W₂(μ̂_t, δ_a)²` with `ψ(t)` allowing two standard errors.
pub fn xi_vs_psi_check(monitor: &LawMonitor, psi: &PsiPath) -> Result<XiPsiReport> {
    let n = monitor.times.len();
    if n == 0 || psi.times.len() != n {
        return Err(Error::GridMismatch(format!("monitor has {} grid times, psi path has {}", n, psi.times.len())));
    }
    if let Some(k) = (0..n).find(|&k| libm::fabs(monitor.times[k] - psi.times[k]) > 1e-9 * f64::max(1.0, monitor.times[k])) {
        return Err(Error::GridMismatch(format!(
            "grid time {k} differs: monitor {} vs psi {}",
            monitor.times[k], psi.times[k]
        )));
    }
    let xi0 = monitor.w2_values[0] * monitor.w2_values[0];
    if psi.values[0] < xi0 {
        return precondition(format!("psi0 = {} must be >= xi(0) = {}", psi.values[0], xi0));
    }
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..n {
        let xi = monitor.w2_values[k] * monitor.w2_values[k];
        max_excess = f64::max(max_excess, xi - psi.values[k]);
        if xi > psi.values[k] + 2.0 * monitor.xi_se[k] {
            violations.push(monitor.times[k]);
        }
    }
    let n_pass = n - violations.len();
    Ok(XiPsiReport {
        n_times: n,
        n_pass,
        pass_fraction: n_pass as f64 / n as f64,
        violations,
        max_excess,
    })
}

/// First exit time of every particle started at the domain attractor.
///
/// Particles are not absorbed: after its crossing a particle keeps moving and
/// interacting. The run stops once every particle has exited or at the horizon;
/// record `i` belongs to particle `i`.
pub fn mv_exit_experiment<K, E>(
    kernel: &K,
    domain: &Domain,
    n: usize,
    eps: f64,
    cfg: &IntegratorConfig,
    stream: &RngStream,
    exec: &E,
) -> Result<Vec<ExitRecord>>
where
    K: MeasureKernel + ?Sized,
    E: Executor + ?Sized,
{
    cfg.validate()?;
    if domain.dim() != kernel.dim() {
        return precondition("domain dimension does not match kernel");
    }
    let a = domain.attractor().to_vec();
    let mut ensemble = ParticleEnsemble::at_point(&a, n, stream)?;
    let mut exits: Vec<Option<(f64, Vec<f64>)>> = vec![None; n];
    let mut remaining = n;
    let n_steps = cfg.n_steps();
    for k in 0..n_steps {
        if remaining == 0 {
            break;
        }
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        propagate_particles(kernel, &mut ensemble, eps, h, exec)?;
        let particles = &ensemble.particles;
        exec.for_each_mut(&mut exits, |i, slot| {
            if slot.is_none() && !domain.contains(&particles[i].state) {
                let (x0, x1) = (particles[i].previous(), particles[i].state.as_slice());
                let s = domain.exit_fraction(x0, x1);
                let point = x0.iter().zip(x1).map(|(p, q)| p + s * (q - p)).collect();
                *slot = Some((t + s * h, point));
            }
        });
        remaining = exits.iter().filter(|e| e.is_none()).count();
    }
    Ok(exits
        .into_iter()
        .zip(&ensemble.particles)
        .map(|(e, p)| match e {
            Some((tau, point)) => ExitRecord {
                replicate_id: p.id,
                seed: p.stream.tag(),
                tau,
                exit_point: Some(point),
                status: crate::stats::ExitStatus::Exited,
            },
            None => ExitRecord::censored(p.id, p.stream.tag(), cfg.horizon),
        })
        .collect())
}

/// Largest observed ratios `|Δ| / W₂(μ, δ_a)` over probe measures and points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelProbe {
    /// Lower bound for `C̃₁` from the drift.
    pub drift_ratio: f64,
    /// Lower bound for `C̃₁` from the diffusion (operator norm).
    pub diffusion_ratio: f64,
    /// Jacobian closeness inside the probe points (operator norm of the difference).
    pub jacobian_ratio: f64,
    /// `|b^MV(a, μ)| / W₂(μ, δ_a)`, to be compared with `K̃₁`.
    pub drift_at_a_ratio: f64,
    pub n_measures: usize,
    pub n_points: usize,
}

/// Probes the measure-Lipschitz constants of `kernel` against `δ_a`.
///
/// `measures` are particle clouds; `points` are the spatial probes (typically
/// inside `B_R(a)`). Measures at zero distance from `δ_a` are skipped.
pub fn probe_kernel<K: MeasureKernel + ?Sized>(
    kernel: &K,
    a: &[f64],
    measures: &[Vec<Vec<f64>>],
    points: &[Vec<f64>],
    fd_step: f64,
) -> Result<KernelProbe> {
    let d = kernel.dim();
    if a.len() != d || points.iter().any(|p| p.len() != d) {
        return precondition("probe dimensions do not match kernel");
    }
    let dirac = MeasureSummary::dirac(a);
    let kind = kernel.summary_kind();
    let mut out = KernelProbe {
        drift_ratio: 0.0,
        diffusion_ratio: 0.0,
        jacobian_ratio: 0.0,
        drift_at_a_ratio: 0.0,
        n_measures: 0,
        n_points: points.len(),
    };
    let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s1, mut s2) = (vec![0.0; d * d], vec![0.0; d * d]);
    for cloud in measures {
        let refs: Vec<&[f64]> = cloud.iter().map(|v| v.as_slice()).collect();
        let mu = MeasureSummary::empirical(&refs, kind)?;
        let w2 = libm::sqrt(numeric::exact_sum(cloud.iter().map(|x| {
            let r = numeric::dist(x, a);
            r * r
        })) / cloud.len() as f64);
        if !(w2 > 0.0) {
            continue;
        }
        out.n_measures += 1;
        kernel.drift_mv(a, &mu, &mut b1);
        out.drift_at_a_ratio = f64::max(out.drift_at_a_ratio, numeric::norm(&b1) / w2);
        for x in points {
            kernel.drift_mv(x, &mu, &mut b1);
            kernel.drift_mv(x, &dirac, &mut b2);
            let db: Vec<f64> = b1.iter().zip(&b2).map(|(p, q)| p - q).collect();
            out.drift_ratio = f64::max(out.drift_ratio, numeric::norm(&db) / w2);
            kernel.diffusion_mv(x, &mu, &mut s1);
            kernel.diffusion_mv(x, &dirac, &mut s2);
            let ds: Vec<f64> = s1.iter().zip(&s2).map(|(p, q)| p - q).collect();
            out.diffusion_ratio = f64::max(out.diffusion_ratio, numeric::operator_norm(&ds, d) / w2);
            let j1 = numeric::fd_jacobian(|y, o| kernel.drift_mv(y, &mu, o), x, fd_step);
            let j2 = numeric::fd_jacobian(|y, o| kernel.drift_mv(y, &dirac, o), x, fd_step);
            let dj: Vec<f64> = j1.iter().zip(&j2).map(|(p, q)| p - q).collect();
            out.jacobian_ratio = f64::max(out.jacobian_ratio, numeric::operator_norm(&dj, d) / w2);
        }
    }
    Ok(out)
}
