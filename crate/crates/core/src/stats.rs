//! Monte Carlo exit-time harness: replicate runs, bracket probabilities,
//! Kramers regression, exit-location histograms and θ-cycle bookkeeping.

use alloc::format;
use alloc::vec::Vec;

use serde::Serialize;

use crate::domain::{segment_fraction, Domain};
use crate::error::{precondition, Error, Result};
use crate::exec::Executor;
use crate::field::CoefficientField;
use crate::numeric::{self, exact_sum};
use crate::rng::{RngStream, SeedTag};
use crate::sde::{guard, simulate_until_exit, EmStepper, IntegratorConfig, PathSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Exited,
    /// Horizon reached inside the domain.
    Censored,
    /// Aborted by the divergence guard.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitRecord {
    pub replicate_id: u64,
    pub seed: SeedTag,
    /// Exit time, or the time at which the run stopped when not exited.
    pub tau: f64,
    pub exit_point: Option<Vec<f64>>,
    pub status: ExitStatus,
}

impl ExitRecord {
    pub fn censored(replicate_id: u64, seed: SeedTag, horizon: f64) -> Self {
        Self {
            replicate_id,
            seed,
            tau: horizon,
            exit_point: None,
            status: ExitStatus::Censored,
        }
    }

    pub fn exited(&self) -> bool {
        self.status == ExitStatus::Exited
    }
}

/// `n_replicates` independent exits from `x0`; replicate `k` uses the stream `(master_seed, label, k)`.
#[allow(clippy::too_many_arguments)]
pub fn run_exit_mc<F, E>(
    field: &F,
    domain: &Domain,
    eps: f64,
    x0: &[f64],
    n_replicates: usize,
    cfg: &IntegratorConfig,
    master_seed: u64,
    label: &str,
    exec: &E,
) -> Result<Vec<ExitRecord>>
where
    F: CoefficientField + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    if !domain.contains(x0) {
        return precondition("x0 must lie inside the domain");
    }
    exec.map_indexed(n_replicates, |k| {
        let id = k as u64;
        let mut stream = RngStream::for_replicate(master_seed, label, id);
        match simulate_until_exit(field, x0, eps, domain, cfg, &mut stream) {
            Ok(mut rec) => {
                rec.replicate_id = id;
                Ok(rec)
            }
            Err(Error::Divergence { time }) => Ok(ExitRecord {
                replicate_id: id,
                seed: stream.tag(),
                tau: time,
                exit_point: None,
                status: ExitStatus::Diverged,
            }),
            Err(e) => Err(e),
        }
    })
    .into_iter()
    .collect()
}

/// Default horizon `e^{2(H + η + 0.3)/ε}`.
pub fn default_horizon(h: f64, eta: f64, eps: f64) -> f64 {
    libm::exp(2.0 * (h + eta + 0.3) / eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Two-sided standard normal quantile for a central `level` interval.
pub fn normal_quantile(p: f64) -> f64 {
    // rational approximation with one Halley refinement against erfc
    const A: [f64; 6] = [-3.969683028665376e1, 2.209460984245205e2, -2.759285104469687e2, 1.383577518672690e2, -3.066479806614716e1, 2.506628277459239];
    const B: [f64; 5] = [-5.447609879822406e1, 1.615858368580409e2, -1.556989798598866e2, 6.680131188771972e1, -1.328068155288572e1];
    const C: [f64; 6] = [-7.784894002430293e-3, -3.223964580411365e-1, -2.400758277161838, -2.549732539343734, 4.374664141464968, 2.938163982698783];
    const D: [f64; 4] = [7.784695709041462e-3, 3.224671290700398e-1, 2.445134137142996, 3.754408661907416];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5]) / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(0.5 * x * x);
    x - u / (1.0 + 0.5 * x * u)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: usize, n: usize, level: f64) -> Interval {
    if n == 0 {
        return Interval { lo: 0.0, hi: 1.0 };
    }
    let z = normal_quantile(0.5 + 0.5 * level);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * libm::sqrt(p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)) / denom;
    Interval {
        lo: if successes == 0 { 0.0 } else { (centre - half).max(0.0) },
        hi: if successes == n { 1.0 } else { (centre + half).min(1.0) },
    }
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_mean_ci(values: &[f64], n_boot: usize, level: f64, stream: &mut RngStream) -> Result<Interval> {
    if values.is_empty() || n_boot == 0 {
        return precondition("bootstrap needs at least one value and one resample");
    }
    let n = values.len();
    let mut means: Vec<f64> = (0..n_boot)
        .map(|_| exact_sum((0..n).map(|_| values[stream.index(n)])) / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    let lo_idx = libm::floor(alpha * (n_boot - 1) as f64) as usize;
    let hi_idx = libm::ceil((1.0 - alpha) * (n_boot - 1) as f64) as usize;
    Ok(Interval {
        lo: means[lo_idx],
        hi: means[hi_idx.min(n_boot - 1)],
    })
}

/// Normal-approximation two-sample test on means; returns `(z, two-sided p)`.
pub fn two_sample_z(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return precondition("two_sample_z needs at least two values per sample");
    }
    let mv = |v: &[f64]| {
        let m = exact_sum(v.iter().copied()) / v.len() as f64;
        let s2 = exact_sum(v.iter().map(|x| (x - m) * (x - m))) / (v.len() - 1) as f64;
        (m, s2 / v.len() as f64)
    };
    let (ma, va) = mv(a);
    let (mb, vb) = mv(b);
    let se = libm::sqrt(va + vb);
    let z = if se > 0.0 { (ma - mb) / se } else { 0.0 };
    Ok((z, libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BracketEstimate {
    pub prob: f64,
    pub inside: usize,
    pub n: usize,
    pub ci: Interval,
    /// `2(H - η)/ε` and `2(H + η)/ε`, the window edges on the log scale.
    pub log_lo: f64,
    pub log_hi: f64,
}

/// Fraction of exits with `e^{2(H-η)/ε} ≤ τ ≤ e^{2(H+η)/ε}`; non-exits count as outside.
///
/// The comparison is done on `ln τ`, so tiny `ε` never overflows.
pub fn bracket_probability(records: &[ExitRecord], h: f64, eta: f64, eps: f64) -> Result<BracketEstimate> {
    if records.is_empty() {
        return precondition("bracket_probability needs at least one record");
    }
    if !(eps > 0.0) {
        return precondition("eps must be positive");
    }
    let log_lo = 2.0 * (h - eta) / eps;
    let log_hi = 2.0 * (h + eta) / eps;
    let inside = records
        .iter()
        .filter(|r| r.exited() && r.tau > 0.0 && (log_lo..=log_hi).contains(&libm::log(r.tau)))
        .count();
    Ok(BracketEstimate {
        prob: inside as f64 / records.len() as f64,
        inside,
        n: records.len(),
        ci: wilson_ci(inside, records.len(), 0.95),
        log_lo,
        log_hi,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub param_lo: f64,
    pub param_hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationHistogram {
    pub bins: Vec<HistogramBin>,
    pub total: usize,
}

impl LocationHistogram {
    /// Fraction of exits falling in the listed bins.
    pub fn mass(&self, bins: &[usize]) -> f64 {
        let hits: usize = bins.iter().filter_map(|&i| self.bins.get(i)).map(|b| b.count).sum();
        hits as f64 / self.total.max(1) as f64
    }
}

/// Exit points binned by boundary parameter: one bin per endpoint in d = 1,
/// `n_bins` equal-parameter bins in d = 2.
pub fn exit_location_histogram(records: &[ExitRecord], domain: &Domain, n_bins: usize) -> Result<LocationHistogram> {
    let points: Vec<&Vec<f64>> = records.iter().filter(|r| r.exited()).filter_map(|r| r.exit_point.as_ref()).collect();
    if points.is_empty() {
        return precondition("histogram needs at least one exit");
    }
    let mut bins = if domain.dim() == 1 {
        domain
            .boundary_sample(2)?
            .into_iter()
            .map(|b| HistogramBin {
                lo: b.point.clone(),
                hi: b.point,
                param_lo: b.param,
                param_hi: b.param,
                count: 0,
            })
            .collect::<Vec<_>>()
    } else {
        if n_bins == 0 {
            return precondition("n_bins must be positive");
        }
        (0..n_bins)
            .map(|k| {
                let (s0, s1) = (k as f64 / n_bins as f64, (k + 1) as f64 / n_bins as f64);
                Ok(HistogramBin {
                    lo: domain.boundary_point_at(s0)?.point,
                    hi: domain.boundary_point_at(s1)?.point,
                    param_lo: s0,
                    param_hi: s1,
                    count: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?
    };
    let n = bins.len();
    for p in &points {
        let s = domain.boundary_param(p)?;
        let k = if domain.dim() == 1 { s as usize } else { ((s * n as f64) as usize).min(n - 1) };
        bins[k].count += 1;
    }
    Ok(LocationHistogram {
        bins,
        total: points.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitSummary {
    pub n: usize,
    pub n_censored: usize,
    pub n_diverged: usize,
    pub eps: f64,
    pub kappa: f64,
    /// Mean of `tau` over all records; only a mean exit time when `mean_censored` is false.
    pub mean_tau: f64,
    pub mean_censored: bool,
    pub mean_ci: Interval,
    pub bracket: Option<BracketEstimate>,
    pub histogram: Option<LocationHistogram>,
}

#[derive(Debug, Clone)]
pub struct SummarySpec<'a> {
    pub eps: f64,
    pub kappa: f64,
    /// `(H, η)` for the bracket probability.
    pub window: Option<(f64, f64)>,
    pub domain: Option<&'a Domain>,
    pub n_bins: usize,
    pub n_boot: usize,
    pub boot_seed: u64,
}

impl<'a> SummarySpec<'a> {
    pub fn new(eps: f64) -> Self {
        Self {
            eps,
            kappa: 0.0,
            window: None,
            domain: None,
            n_bins: 16,
            n_boot: 1000,
            boot_seed: 0,
        }
    }
}

pub fn summarize(records: &[ExitRecord], spec: &SummarySpec<'_>) -> Result<ExitSummary> {
    if records.is_empty() {
        return precondition("summary needs at least one record");
    }
    let n_censored = records.iter().filter(|r| r.status == ExitStatus::Censored).count();
    let n_diverged = records.iter().filter(|r| r.status == ExitStatus::Diverged).count();
    let taus: Vec<f64> = records.iter().map(|r| r.tau).collect();
    let mean_tau = exact_sum(taus.iter().copied()) / taus.len() as f64;
    let mut boot = RngStream::for_replicate(spec.boot_seed, "bootstrap", 0);
    let mean_ci = bootstrap_mean_ci(&taus, spec.n_boot, 0.95, &mut boot)?;
    let bracket = match spec.window {
        Some((h, eta)) => Some(bracket_probability(records, h, eta, spec.eps)?),
        None => None,
    };
    let histogram = match spec.domain {
        Some(d) if records.iter().any(|r| r.exited()) => Some(exit_location_histogram(records, d, spec.n_bins)?),
        _ => None,
    };
    Ok(ExitSummary {
        n: records.len(),
        n_censored,
        n_diverged,
        eps: spec.eps,
        kappa: spec.kappa,
        mean_tau,
        mean_censored: n_censored + n_diverged > 0,
        mean_ci,
        bracket,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KramersPoint {
    pub eps: f64,
    pub mean_tau: f64,
    pub ci: Interval,
    pub censored: bool,
}

impl From<&ExitSummary> for KramersPoint {
    fn from(s: &ExitSummary) -> Self {
        Self {
            eps: s.eps,
            mean_tau: s.mean_tau,
            ci: s.mean_ci,
            censored: s.mean_censored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KramersFit {
    pub eps: Vec<f64>,
    /// `(ε/2) ln E[τ]`.
    pub y: Vec<f64>,
    pub h_hat: f64,
    pub slope: f64,
    pub residuals: Vec<f64>,
}

/// Least-squares fit `y(ε) = Ĥ + c ε`.
pub fn kramers_fit(points: &[KramersPoint]) -> Result<KramersFit> {
    if points.len() < 3 {
        return precondition("kramers_fit needs at least three eps values");
    }
    let bad: Vec<f64> = points.iter().filter(|p| p.censored || !(p.mean_tau > 0.0)).map(|p| p.eps).collect();
    if !bad.is_empty() {
        return Err(Error::CensoredMeans(bad));
    }
    let eps: Vec<f64> = points.iter().map(|p| p.eps).collect();
    let y: Vec<f64> = points.iter().map(|p| 0.5 * p.eps * libm::log(p.mean_tau)).collect();
    let n = eps.len() as f64;
    let ex = eps.iter().sum::<f64>() / n;
    let ey = y.iter().sum::<f64>() / n;
    let sxx: f64 = eps.iter().map(|e| (e - ex) * (e - ex)).sum();
    if !(sxx > 0.0) {
        return precondition("kramers_fit needs distinct eps values");
    }
    let sxy: f64 = eps.iter().zip(&y).map(|(e, v)| (e - ex) * (v - ey)).sum();
    let slope = sxy / sxx;
    let h_hat = ey - slope * ex;
    let residuals = eps.iter().zip(&y).map(|(e, v)| v - (h_hat + slope * e)).collect();
    Ok(KramersFit {
        eps,
        y,
        h_hat,
        slope,
        residuals,
    })
}

/// The alternating stopping times of one trajectory.
///
/// `theta[i - 1]` holds `θ_i`. Odd indices are hits of `B_ρ(a) ∪ ∂𝒟`, even
/// indices hits of the sphere `S_{2ρ}(a)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CycleRecord {
    pub theta: Vec<f64>,
    /// 1-based index `i` with `θ_i = τ`.
    pub exit_index: Option<usize>,
    pub exit_point: Option<Vec<f64>>,
    /// Number of sphere hits `θ_{2i}` recorded.
    pub cycles_completed: usize,
    /// Excursions started on `S_{2ρ}(a)` that ended in `B_ρ(a)` or on `∂𝒟`.
    pub sphere_trials: usize,
    /// Those of `sphere_trials` that ended on `∂𝒟`.
    pub sphere_exits: usize,
    pub seed: Option<SeedTag>,
}

impl CycleRecord {
    pub fn tau(&self) -> Option<f64> {
        self.exit_index.map(|i| self.theta[i - 1])
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    SeekInner,
    SeekSphere,
}

struct CycleTracker<'a> {
    domain: &'a Domain,
    rho: f64,
    phase: Phase,
    rec: CycleRecord,
}

impl<'a> CycleTracker<'a> {
    fn new(domain: &'a Domain, rho: f64, x0: &[f64]) -> Result<Self> {
        if !(rho > 0.0) || !(domain.distance_to_boundary(domain.attractor()) > 2.0 * rho) {
            return precondition(format!("rho = {rho} infeasible: B_2rho(a) must lie inside the domain"));
        }
        if !domain.contains(x0) {
            return precondition("x0 must lie inside the domain");
        }
        let mut t = Self {
            domain,
            rho,
            phase: Phase::SeekInner,
            rec: CycleRecord {
                theta: Vec::new(),
                exit_index: None,
                exit_point: None,
                cycles_completed: 0,
                sphere_trials: 0,
                sphere_exits: 0,
                seed: None,
            },
        };
        if numeric::dist(x0, domain.attractor()) <= rho {
            t.rec.theta.push(0.0);
            t.phase = Phase::SeekSphere;
        }
        Ok(t)
    }

    /// Processes the grid segment `(t0, x0) -> (t1, x1)`; returns `true` once the path has exited.
    fn segment(&mut self, t0: f64, x0: &[f64], t1: f64, x1: &[f64]) -> bool {
        let a = self.domain.attractor();
        let rho = self.rho;
        let mut start = x0.to_vec();
        let mut s_base = 0.0;
        loop {
            let at = |s: f64| -> Vec<f64> { start.iter().zip(x1).map(|(p, q)| p + s * (q - p)).collect() };
            match self.phase {
                Phase::SeekInner => {
                    let outside = !self.domain.contains(x1);
                    let in_ball = numeric::dist(x1, a) <= rho;
                    if !outside && !in_ball {
                        return false;
                    }
                    let s_out = if outside { self.domain.exit_fraction(&start, x1) } else { f64::INFINITY };
                    let s_ball = if in_ball { segment_fraction(&start, x1, |y| numeric::dist(y, a) <= rho) } else { f64::INFINITY };
                    let s = s_out.min(s_ball);
                    let point = at(s);
                    let s_global = s_base + s * (1.0 - s_base);
                    self.rec.theta.push(t0 + s_global * (t1 - t0));
                    let from_sphere = self.rec.theta.len() >= 3;
                    if from_sphere {
                        self.rec.sphere_trials += 1;
                    }
                    if s_out < s_ball {
                        if from_sphere {
                            self.rec.sphere_exits += 1;
                        }
                        self.rec.exit_index = Some(self.rec.theta.len());
                        self.rec.exit_point = Some(point);
                        return true;
                    }
                    self.phase = Phase::SeekSphere;
                    start = point;
                    s_base = s_global;
                }
                Phase::SeekSphere => {
                    if numeric::dist(x1, a) < 2.0 * rho {
                        return false;
                    }
                    let s = segment_fraction(&start, x1, |y| numeric::dist(y, a) >= 2.0 * rho);
                    let point = at(s);
                    let s_global = s_base + s * (1.0 - s_base);
                    self.rec.theta.push(t0 + s_global * (t1 - t0));
                    self.rec.cycles_completed += 1;
                    self.phase = Phase::SeekInner;
                    start = point;
                    s_base = s_global;
                }
            }
        }
    }
}

/// Default cycle radius: `B_{2ρ}(a)` keeps a margin of `0.1 · dist(a, ∂𝒟)` to the boundary.
pub fn default_cycle_rho(domain: &Domain) -> f64 {
    0.45 * domain.distance_to_boundary(domain.attractor())
}

/// θ-cycle decomposition of a stored path.
pub fn theta_cycles_on_path(path: &PathSample, domain: &Domain, rho: f64) -> Result<CycleRecord> {
    if path.is_empty() {
        return precondition("empty path");
    }
    let mut tr = CycleTracker::new(domain, rho, path.state(0))?;
    tr.rec.seed = path.seed;
    for i in 1..path.len() {
        if tr.segment(path.times[i - 1], path.state(i - 1), path.times[i], path.state(i)) {
            break;
        }
    }
    Ok(tr.rec)
}

/// Simulates one trajectory and records its θ-cycles until exit or the horizon.
pub fn theta_cycles<F: CoefficientField + ?Sized>(
    field: &F,
    domain: &Domain,
    rho: f64,
    eps: f64,
    x0: &[f64],
    cfg: &IntegratorConfig,
    stream: &mut RngStream,
) -> Result<CycleRecord> {
    cfg.validate()?;
    if x0.len() != field.dim() || !(eps >= 0.0) {
        return precondition("x0 dimension or eps invalid");
    }
    let mut tr = CycleTracker::new(domain, rho, x0)?;
    tr.rec.seed = Some(stream.tag());
    let mut em = EmStepper::new(field.dim(), eps);
    let mut x = x0.to_vec();
    let mut prev = x.clone();
    for k in 0..cfg.n_steps() {
        let t = cfg.time(k);
        let h = cfg.time(k + 1) - t;
        prev.copy_from_slice(&x);
        em.draw(h, stream);
        em.apply(field, t, h, &mut x);
        guard(t + h, &x)?;
        if tr.segment(t, &prev, t + h, &x) {
            break;
        }
    }
    Ok(tr.rec)
}

/// Pooled per-excursion exit probability over cycle records, with its Wilson interval.
pub fn per_cycle_exit_probability(records: &[CycleRecord]) -> (f64, usize, usize, Interval) {
    let trials: usize = records.iter().map(|r| r.sphere_trials).sum();
    let exits: usize = records.iter().map(|r| r.sphere_exits).sum();
    let p = if trials > 0 { exits as f64 / trials as f64 } else { 0.0 };
    (p, exits, trials, wilson_ci(exits, trials, 0.95))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::exec::Sequential;
    use crate::presets::{ConstantDrift, DoubleWell};

    fn rec(tau: f64, status: ExitStatus) -> ExitRecord {
        ExitRecord {
            replicate_id: 0,
            seed: SeedTag { master_seed: 0, stream_id: 0 },
            tau,
            exit_point: if status == ExitStatus::Exited { Some(vec![-0.1]) } else { None },
            status,
        }
    }

    #[test]
    fn wilson_edges() {
        assert_eq!(wilson_ci(0, 50, 0.95).lo, 0.0);
        assert_eq!(wilson_ci(50, 50, 0.95).hi, 1.0);
        // oracle: z = 1.959964, p = 0.5, n = 100 -> (0.40383, 0.59617)
        let ci = wilson_ci(50, 100, 0.95);
        assert!((ci.lo - 0.403831).abs() < 1e-5 && (ci.hi - 0.596169).abs() < 1e-5);
    }

    #[test]
    fn normal_quantile_values() {
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
        assert!(normal_quantile(0.5).abs() < 1e-15);
        assert!((normal_quantile(0.001) + 3.090232306167813).abs() < 1e-10);
    }

    #[test]
    fn bootstrap_of_constant_is_point() {
        let mut s = RngStream::new(3, 4);
        let ci = bootstrap_mean_ci(&[2.5; 40], 200, 0.95, &mut s).unwrap();
        assert_eq!((ci.lo, ci.hi), (2.5, 2.5));
    }

    #[test]
    fn bracket_extremes() {
        let inside: Vec<ExitRecord> = (0..10).map(|_| rec(libm::exp(4.9), ExitStatus::Exited)).collect();
        assert_eq!(bracket_probability(&inside, 0.245025, 0.15, 0.1).unwrap().prob, 1.0);
        let cens: Vec<ExitRecord> = (0..10).map(|_| rec(libm::exp(4.9), ExitStatus::Censored)).collect();
        assert_eq!(bracket_probability(&cens, 0.245025, 0.15, 0.1).unwrap().prob, 0.0);
        assert!(bracket_probability(&[], 0.2, 0.1, 0.1).is_err());
    }

    #[test]
    fn bracket_in_log_space_for_tiny_eps() {
        // e^{2(0.25 ± 0.05)/0.01} overflows no f64 comparison because only ln tau is used
        let r = [rec(libm::exp(45.0), ExitStatus::Exited), rec(libm::exp(70.0), ExitStatus::Exited)];
        let b = bracket_probability(&r, 0.25, 0.05, 0.01).unwrap();
        assert_eq!((b.log_lo, b.log_hi), (40.0, 60.0));
        assert_eq!(b.inside, 1);
    }

    fn points(eps: &[f64], tau: impl Fn(f64) -> f64) -> Vec<KramersPoint> {
        eps.iter()
            .map(|&e| KramersPoint {
                eps: e,
                mean_tau: tau(e),
                ci: Interval { lo: 0.0, hi: 0.0 },
                censored: false,
            })
            .collect()
    }

    #[test]
    fn kramers_exact_inputs() {
        let grid = [0.25, 0.2, 0.15, 0.125, 0.1];
        let f = kramers_fit(&points(&grid, |e| libm::exp(0.5 / e))).unwrap();
        assert!((f.h_hat - 0.25).abs() < 1e-12 && f.slope.abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        let g = kramers_fit(&points(&grid, |e| 7.0 * libm::exp(0.5 / e))).unwrap();
        assert!((g.h_hat - 0.25).abs() < 1e-12);
        assert!((g.slope - libm::log(7.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn kramers_rejects_censored() {
        let mut p = points(&[0.3, 0.2, 0.1], |e| libm::exp(0.5 / e));
        p[2].censored = true;
        assert_eq!(kramers_fit(&p).unwrap_err(), Error::CensoredMeans(vec![0.1]));
        assert!(kramers_fit(&p[..2]).is_err());
    }

    #[test]
    fn histogram_right_endpoint() {
        let r: Vec<ExitRecord> = (0..5).map(|_| rec(1.0, ExitStatus::Exited)).collect();
        let h = exit_location_histogram(&r, &DoubleWell::domain(), 8).unwrap();
        assert_eq!(h.bins.len(), 2);
        assert_eq!((h.bins[0].count, h.bins[1].count), (0, 5));
        assert_eq!(h.mass(&[1]), 1.0);
    }

    #[test]
    fn unit_speed_replicates_identical() {
        let f = ConstantDrift { velocity: vec![1.0], sigma: 0.0 };
        let dom = Domain::interval(-2.0, 1.0, 0.0).unwrap();
        let cfg = IntegratorConfig::new(1e-3, 5.0, 1).unwrap();
        let r = run_exit_mc(&f, &dom, 0.0, &[0.0], 10, &cfg, 9, "unit", &Sequential).unwrap();
        assert!(r.iter().all(|x| (x.tau - 1.0).abs() <= 1e-3 && x.tau == r[0].tau));
        assert_eq!(r[7].replicate_id, 7);
    }

    #[test]
    fn invariant_preset_all_censored() {
        let f = DoubleWell { sigma: 0.0 };
        let cfg = IntegratorConfig::new(1e-2, 10.0, 1).unwrap();
        let r = run_exit_mc(&f, &DoubleWell::domain(), 0.1, &[-1.0], 5, &cfg, 1, "c", &Sequential).unwrap();
        assert!(r.iter().all(|x| x.status == ExitStatus::Censored && x.exit_point.is_none()));
    }

    fn path1(times: &[f64], xs: &[f64]) -> PathSample {
        PathSample::from_points(times.to_vec(), &xs.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn synthetic_cycle_path() {
        // rho = 0.2 around a = -1: ball [-1.2, -0.8], sphere at -0.6 / -1.4, exit at -0.1
        let p = path1(&[0.0, 1.0, 2.0, 3.0], &[-0.7, -0.8, -0.6, -0.1]);
        let c = theta_cycles_on_path(&p, &DoubleWell::domain(), 0.2).unwrap();
        assert_eq!(c.exit_index, Some(3));
        assert_eq!(c.cycles_completed, 1);
        for (got, want) in c.theta.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{:?}", c.theta);
        }
        assert_eq!((c.sphere_trials, c.sphere_exits), (1, 1));
    }

    #[test]
    fn deterministic_flow_cycles_censored() {
        let cfg = IntegratorConfig::new(1e-2, 20.0, 1).unwrap();
        let mut s = RngStream::new(0, 0);
        let c = theta_cycles(&DoubleWell::standard(), &DoubleWell::domain(), 0.1, 0.0, &[-0.5], &cfg, &mut s).unwrap();
        assert_eq!(c.theta.len(), 1);
        assert_eq!(c.exit_index, None);
        assert!(theta_cycles(&DoubleWell::standard(), &DoubleWell::domain(), 0.5, 0.0, &[-0.5], &cfg, &mut s).is_err());
    }

    #[test]
    fn noisy_cycles_exit_at_odd_index_and_match_tau() {
        let dom = DoubleWell::domain();
        let cfg = IntegratorConfig::new(1e-3, 1e4, 1).unwrap();
        for k in 0..20 {
            let mut s = RngStream::for_replicate(5, "cyc", k);
            let c = theta_cycles(&DoubleWell::standard(), &dom, 0.3, 0.2, &[-1.0], &cfg, &mut s).unwrap();
            let i = c.exit_index.expect("exit within horizon");
            assert_eq!(i % 2, 1);
            assert!(c.theta.windows(2).all(|w| w[0] < w[1]));
            let mut s2 = RngStream::for_replicate(5, "cyc", k);
            let e = simulate_until_exit(&DoubleWell::standard(), &[-1.0], 0.2, &dom, &cfg, &mut s2).unwrap();
            assert!((c.tau().unwrap() - e.tau).abs() <= cfg.dt);
        }
    }

    #[test]
    fn summary_counts_and_histogram_total() {
        let mut r: Vec<ExitRecord> = (0..8).map(|i| rec(1.0 + i as f64, ExitStatus::Exited)).collect();
        r.push(rec(50.0, ExitStatus::Censored));
        let dom = DoubleWell::domain();
        let mut spec = SummarySpec::new(0.1);
        spec.domain = Some(&dom);
        spec.window = Some((0.245025, 0.15));
        let s = summarize(&r, &spec).unwrap();
        assert_eq!((s.n, s.n_censored), (9, 1));
        assert!(s.mean_censored);
        assert_eq!(s.histogram.unwrap().bins.iter().map(|b| b.count).sum::<usize>(), s.n - s.n_censored);
    }

    #[test]
    fn two_sample_identical_distributions() {
        let a: Vec<f64> = (0..100).map(|i| (i % 10) as f64).collect();
        let (z, p) = two_sample_z(&a, &a).unwrap();
        assert_eq!(z, 0.0);
        assert!((p - 1.0).abs() < 1e-15);
    }
}
