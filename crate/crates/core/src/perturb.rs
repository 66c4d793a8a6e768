//! Time-inhomogeneous members of the perturbation class around an autonomous
//! base field, κ certificates, and the synchronous coupling of `X` with `Z`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{precondition, Error, Result};
use crate::exec::Executor;
use crate::field::{diffusion_at, drift_at, CoefficientField};
use crate::numeric;
use crate::rng::{RngStream, SeedTag};
use crate::sde::{guard, EmStepper, IntegratorConfig};
use crate::stats::{wilson_ci, Interval};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AppliesTo {
    Drift,
    Diffusion,
    Both,
}

pub type PerturbationFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

#[derive(Clone)]
pub enum PerturbationKind {
    /// `A sin(ω t) u`.
    Oscillatory { amplitude: f64, frequency: f64, direction: Vec<f64> },
    /// `A e^{-r t} u`.
    Decaying { amplitude: f64, rate: f64, direction: Vec<f64> },
    /// Constant `A u`.
    BoundaryPush { amplitude: f64, direction: Vec<f64> },
    /// Arbitrary drift perturbation `p(t, x)`.
    Custom(Arc<PerturbationFn>),
}

impl core::fmt::Debug for PerturbationKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Oscillatory { amplitude, frequency, direction } => write!(f, "Oscillatory({amplitude}, {frequency}, {direction:?})"),
            Self::Decaying { amplitude, rate, direction } => write!(f, "Decaying({amplitude}, {rate}, {direction:?})"),
            Self::BoundaryPush { amplitude, direction } => write!(f, "BoundaryPush({amplitude}, {direction:?})"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub applies_to: AppliesTo,
    pub kappa_certificate: f64,
}

fn unit(direction: Vec<f64>) -> Result<Vec<f64>> {
    let n = numeric::norm(&direction);
    if !(n > 0.0) || !n.is_finite() {
        return precondition("perturbation direction must be a nonzero finite vector");
    }
    Ok(direction.into_iter().map(|v| v / n).collect())
}

impl PerturbationSpec {
    pub fn oscillatory(amplitude: f64, frequency: f64, direction: Vec<f64>, applies_to: AppliesTo) -> Result<Self> {
        let cert = if frequency != 0.0 { libm::fabs(amplitude) } else { 0.0 };
        Ok(Self {
            kind: PerturbationKind::Oscillatory {
                amplitude,
                frequency,
                direction: unit(direction)?,
            },
            applies_to,
            kappa_certificate: cert,
        })
    }

    pub fn decaying(amplitude: f64, rate: f64, direction: Vec<f64>, applies_to: AppliesTo) -> Result<Self> {
        if !(rate >= 0.0) {
            return precondition("decay rate must be nonnegative");
        }
        Ok(Self {
            kind: PerturbationKind::Decaying {
                amplitude,
                rate,
                direction: unit(direction)?,
            },
            applies_to,
            kappa_certificate: libm::fabs(amplitude),
        })
    }

    pub fn boundary_push(amplitude: f64, direction: Vec<f64>, applies_to: AppliesTo) -> Result<Self> {
        Ok(Self {
            kind: PerturbationKind::BoundaryPush {
                amplitude,
                direction: unit(direction)?,
            },
            applies_to,
            kappa_certificate: libm::fabs(amplitude),
        })
    }

    /// Constant push along the unit vector from `a` toward `target` (typically the argmin of `Q` on `∂𝒟`).
    pub fn boundary_push_toward(amplitude: f64, a: &[f64], target: &[f64], applies_to: AppliesTo) -> Result<Self> {
        Self::boundary_push(amplitude, target.iter().zip(a).map(|(t, s)| t - s).collect(), applies_to)
    }

    /// Drift perturbation from a closure, certified on `grid`.
    pub fn custom<F: CoefficientField + ?Sized>(
        base: &F,
        p: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        grid: &ProbeGrid,
    ) -> Result<Self> {
        let mut spec = Self {
            kind: PerturbationKind::Custom(Arc::new(p)),
            applies_to: AppliesTo::Drift,
            kappa_certificate: f64::INFINITY,
        };
        let probe = Member {
            base,
            spec: spec.clone(),
        };
        spec.kappa_certificate = certify_kappa(base, &probe, grid)?.kappa;
        Ok(spec)
    }

    /// Drift perturbation interpolated linearly in time from `(times[k], values[k])`, constant outside.
    pub fn tabulated_in_time<F: CoefficientField + ?Sized>(base: &F, times: Vec<f64>, values: Vec<Vec<f64>>, grid: &ProbeGrid) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() || times.windows(2).any(|w| !(w[0] < w[1])) {
            return precondition("tabulated perturbation needs matching, strictly increasing times");
        }
        let d = base.dim();
        if values.iter().any(|v| v.len() != d) {
            return precondition("tabulated perturbation values must match the field dimension");
        }
        Self::custom(
            base,
            move |t, _x, out| {
                let k = times.partition_point(|s| *s <= t);
                if k == 0 {
                    out.copy_from_slice(&values[0]);
                } else if k == times.len() {
                    out.copy_from_slice(&values[k - 1]);
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    for i in 0..out.len() {
                        out[i] = (1.0 - w) * values[k - 1][i] + w * values[k][i];
                    }
                }
            },
            grid,
        )
    }

    /// Scalar time profile of the built-in kinds.
    fn profile(&self, t: f64) -> Option<(f64, &[f64])> {
        match &self.kind {
            PerturbationKind::Oscillatory { amplitude, frequency, direction } => Some((amplitude * libm::sin(frequency * t), direction)),
            PerturbationKind::Decaying { amplitude, rate, direction } => Some((amplitude * libm::exp(-rate * t), direction)),
            PerturbationKind::BoundaryPush { amplitude, direction } => Some((*amplitude, direction)),
            PerturbationKind::Custom(_) => None,
        }
    }

    /// A member certified at `κ₁` is accepted at every `κ₂ ≥ κ₁`.
    pub fn admissible(&self, kappa: f64) -> bool {
        self.kappa_certificate <= kappa
    }
}

/// `B = b + p`, `Σ = σ + q` with `q = s(t) Id` for diffusion perturbations.
pub struct Member<F> {
    base: F,
    spec: PerturbationSpec,
}

impl<F> Member<F> {
    pub fn spec(&self) -> &PerturbationSpec {
        &self.spec
    }

    pub fn base(&self) -> &F {
        &self.base
    }
}

pub fn make_member<F: CoefficientField>(base: F, spec: PerturbationSpec) -> Result<Member<F>> {
    if !spec.kappa_certificate.is_finite() {
        return precondition("perturbation certificate must be finite");
    }
    if let Some(dir) = spec.profile(0.0).map(|(_, u)| u) {
        if dir.len() != base.dim() {
            return precondition("perturbation direction does not match the field dimension");
        }
    }
    Ok(Member { base, spec })
}

impl<F: CoefficientField> CoefficientField for Member<F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.drift(t, x, out);
        if self.spec.applies_to == AppliesTo::Diffusion {
            return;
        }
        match &self.spec.kind {
            PerturbationKind::Custom(p) => {
                let mut extra = vec![0.0; out.len()];
                p(t, x, &mut extra);
                for (o, e) in out.iter_mut().zip(extra) {
                    *o += e;
                }
            }
            _ => {
                let (s, u) = self.spec.profile(t).expect("built-in kind");
                if s != 0.0 {
                    for (o, ui) in out.iter_mut().zip(u) {
                        *o += s * ui;
                    }
                }
            }
        }
    }

    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.base.diffusion(t, x, out);
        if self.spec.applies_to == AppliesTo::Drift {
            return;
        }
        if let Some((s, _)) = self.spec.profile(t) {
            let d = self.base.dim();
            if s != 0.0 {
                for i in 0..d {
                    out[i * d + i] += s;
                }
            }
        }
    }

    fn is_autonomous(&self) -> bool {
        false
    }

    fn lipschitz_estimate(&self) -> Option<f64> {
        match self.spec.kind {
            PerturbationKind::Custom(_) => None,
            _ => self.base.lipschitz_estimate(),
        }
    }
}

/// Time grid × spatial grid on which κ is probed.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeGrid {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
}

impl ProbeGrid {
    /// `n_t` uniform times on `[0, t_max]` and a tensor grid with `n_x` points per axis over
    /// the bounding box of `domain` widened by `margin`.
    pub fn covering(domain: &Domain, margin: f64, t_max: f64, n_t: usize, n_x: usize) -> Result<Self> {
        if n_t < 2 || n_x < 2 || !(t_max > 0.0) {
            return precondition("probe grid needs n_t, n_x >= 2 and t_max > 0");
        }
        let (lo, hi) = domain.bounding_box()?;
        let d = lo.len();
        let times = (0..n_t).map(|k| t_max * k as f64 / (n_t - 1) as f64).collect();
        let total = n_x.pow(d as u32);
        let points = (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let k = idx % n_x;
                        idx /= n_x;
                        let (l, h) = (lo[i] - margin, hi[i] + margin);
                        l + (h - l) * k as f64 / (n_x - 1) as f64
                    })
                    .collect()
            })
            .collect();
        Ok(Self { times, points })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaCertificate {
    pub kappa: f64,
    pub drift_sup: f64,
    pub diffusion_sup: f64,
    pub n_times: usize,
    pub n_points: usize,
    /// Grid maxima never exceed the true supremum.
    pub lower_bound: bool,
}

/// Grid maximum of `|B - b|` and `‖Σ - σ‖` (largest singular value).
pub fn certify_kappa<B, C>(base: &B, candidate: &C, grid: &ProbeGrid) -> Result<KappaCertificate>
where
    B: CoefficientField + ?Sized,
    C: CoefficientField + ?Sized,
{
    let d = base.dim();
    if candidate.dim() != d {
        return precondition("base and candidate dimensions differ");
    }
    let (mut drift_sup, mut diff_sup) = (0.0f64, 0.0f64);
    for &t in &grid.times {
        for x in &grid.points {
            let (b0, b1) = (drift_at(base, t, x), drift_at(candidate, t, x));
            let (s0, s1) = (diffusion_at(base, t, x), diffusion_at(candidate, t, x));
            if b0.iter().chain(&b1).chain(&s0).chain(&s1).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { time: t, point: x.clone() });
            }
            drift_sup = drift_sup.max(numeric::dist(&b0, &b1));
            let diff: Vec<f64> = s1.iter().zip(&s0).map(|(p, q)| p - q).collect();
            if diff.iter().any(|v| *v != 0.0) {
                diff_sup = diff_sup.max(numeric::operator_norm(&diff, d));
            }
        }
    }
    Ok(KappaCertificate {
        kappa: drift_sup.max(diff_sup),
        drift_sup,
        diffusion_sup: diff_sup,
        n_times: grid.times.len(),
        n_points: grid.points.len(),
        lower_bound: true,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingResult {
    pub sup_deviation: f64,
    pub exceeded: bool,
    pub delta: f64,
    pub horizon: f64,
    pub seed: SeedTag,
}

/// Runs `X` (member) and `Z` (base) from `x0` on the same Brownian increments up to `t_end`.
#[allow(clippy::too_many_arguments)]
pub fn couple_simulate<B, M>(
    base: &B,
    member: &M,
    x0: &[f64],
    eps: f64,
    t_end: f64,
    delta: f64,
    cfg: &IntegratorConfig,
    stream: &mut RngStream,
) -> Result<CouplingResult>
where
    B: CoefficientField + ?Sized,
    M: CoefficientField + ?Sized,
{
    let cfg = IntegratorConfig::new(cfg.dt, t_end, cfg.store_every)?;
    let d = base.dim();
    if member.dim() != d || x0.len() != d {
        return precondition("dimension mismatch between base, member and x0");
    }
    if !(eps >= 0.0) || !(delta >= 0.0) {
        return precondition("eps and delta must be nonnegative");
    }
    let seed = stream.tag();
    let (mut ex, mut ez) = (EmStepper::new(d, eps), EmStepper::new(d, eps));
    let (mut x, mut z) = (x0.to_vec(), x0.to_vec());
    let mut sup = 0.0f64;
    for k in 0..cfg.n_steps() {
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        ex.draw(h, stream);
        ez.dw.copy_from_slice(&ex.dw);
        ex.apply(member, t, h, &mut x);
        ez.apply(base, t, h, &mut z);
        guard(t + h, &x)?;
        guard(t + h, &z)?;
        sup = sup.max(numeric::dist(&x, &z));
    }
    Ok(CouplingResult {
        sup_deviation: sup,
        exceeded: sup > delta,
        delta,
        horizon: t_end,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEstimate {
    pub prob: f64,
    pub exceeded: usize,
    pub n: usize,
    pub std_error: f64,
    pub ci: Interval,
    pub mean_sup: f64,
}

/// Monte Carlo estimate of `P(sup |X - Z| > δ)` over `n` coupled replicates.
#[allow(clippy::too_many_arguments)]
pub fn coupling_probability<B, M, E>(
    base: &B,
    member: &M,
    x0: &[f64],
    eps: f64,
    t_end: f64,
    delta: f64,
    cfg: &IntegratorConfig,
    n: usize,
    master_seed: u64,
    label: &str,
    exec: &E,
) -> Result<(CouplingEstimate, Vec<CouplingResult>)>
where
    B: CoefficientField + ?Sized,
    M: CoefficientField + ?Sized,
    E: Executor,
{
    if n == 0 {
        return precondition("need at least one replicate");
    }
    let runs: Vec<CouplingResult> = exec
        .map_indexed(n, |k| {
            let mut s = RngStream::for_replicate(master_seed, label, k as u64);
            couple_simulate(base, member, x0, eps, t_end, delta, cfg, &mut s)
        })
        .into_iter()
        .collect::<Result<_>>()?;
    let exceeded = runs.iter().filter(|r| r.exceeded).count();
    let p = exceeded as f64 / n as f64;
    let est = CouplingEstimate {
        prob: p,
        exceeded,
        n,
        std_error: libm::sqrt(p * (1.0 - p) / n as f64),
        ci: wilson_ci(exceeded, n, 0.95),
        mean_sup: numeric::exact_sum(runs.iter().map(|r| r.sup_deviation)) / n as f64,
    };
    Ok((est, runs))
}

/// `ς(κ, T, δ) = -(C + ln(κ² / (κ² + C² δ²)))`.
///
/// `T` enters only through the user's choice of `C`.
pub fn sigma_bound(kappa: f64, _t: f64, delta: f64, c: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(c > 0.0) || !(delta >= 0.0) {
        return precondition("sigma_bound needs kappa > 0, C > 0 and delta >= 0");
    }
    let k2 = kappa * kappa;
    Ok(-(c + libm::log(k2 / (k2 + c * c * delta * delta))))
}
