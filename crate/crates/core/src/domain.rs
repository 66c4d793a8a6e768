//! Bounded open domains around a stable attractor, their boundaries, and
//! numerical probes of the structural assumptions on `(b, σ, 𝒟)`.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;

use serde::Serialize;

use crate::error::{precondition, Error, Result};
use crate::field::{diffusion_at, drift_at, CoefficientField, ScalarField};
use crate::numeric;
use crate::sde::{integrate_flow, IntegratorConfig, PathSample};
use crate::stats::{ExitRecord, ExitStatus};

#[derive(Clone)]
pub enum DomainKind {
    Interval { lo: f64, hi: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// Star-shaped (about the attractor) component of `{x : V(x) < level}`.
    Sublevel { potential: Arc<dyn ScalarField>, level: f64 },
}

impl fmt::Debug for DomainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainKind::Interval { lo, hi } => write!(f, "Interval({lo}, {hi})"),
            DomainKind::Box { lo, hi } => write!(f, "Box({lo:?}, {hi:?})"),
            DomainKind::Ball { center, radius } => write!(f, "Ball({center:?}, {radius})"),
            DomainKind::Sublevel { level, .. } => write!(f, "Sublevel(V < {level})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Domain {
    kind: DomainKind,
    attractor: Vec<f64>,
}

/// A boundary point with its unit outward normal and its coordinate on the
/// boundary parametrisation (`[0, 1)` in d = 2; 0 / 1 for the two ends in d = 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub point: Vec<f64>,
    pub normal: Vec<f64>,
    pub param: f64,
}

/// Radial root search limit for sublevel boundaries.
const MAX_RADIUS: f64 = 1e3;
/// Segment points checked for star-shapedness in sublevel membership.
const RAY_CHECKS: usize = 64;

impl Domain {
    pub fn interval(lo: f64, hi: f64, attractor: f64) -> Result<Self> {
        if !(lo < hi) {
            return precondition("interval requires lo < hi");
        }
        Self::validated(DomainKind::Interval { lo, hi }, vec![attractor])
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>, attractor: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return precondition("box requires matching bounds with lo < hi");
        }
        Self::validated(DomainKind::Box { lo, hi }, attractor)
    }

    pub fn ball(center: Vec<f64>, radius: f64, attractor: Vec<f64>) -> Result<Self> {
        if !(radius > 0.0) {
            return precondition("ball radius must be positive");
        }
        Self::validated(DomainKind::Ball { center, radius }, attractor)
    }

    pub fn sublevel(potential: Arc<dyn ScalarField>, level: f64, attractor: Vec<f64>) -> Result<Self> {
        Self::validated(DomainKind::Sublevel { potential, level }, attractor)
    }

    fn validated(kind: DomainKind, attractor: Vec<f64>) -> Result<Self> {
        let dom = Self { kind, attractor };
        let d = dom.dim();
        if dom.attractor.len() != d {
            return precondition(format!("attractor has dimension {}, domain has {d}", dom.attractor.len()));
        }
        if !dom.contains(&dom.attractor) {
            return precondition("attractor must lie in the interior of the domain");
        }
        Ok(dom)
    }

    pub fn kind(&self) -> &DomainKind {
        &self.kind
    }

    pub fn attractor(&self) -> &[f64] {
        &self.attractor
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DomainKind::Interval { .. } => 1,
            DomainKind::Box { lo, .. } => lo.len(),
            DomainKind::Ball { center, .. } => center.len(),
            DomainKind::Sublevel { potential, .. } => potential.dim(),
        }
    }

    /// Membership in the open set.
    pub fn contains(&self, x: &[f64]) -> bool {
        match &self.kind {
            DomainKind::Interval { lo, hi } => *lo < x[0] && x[0] < *hi,
            DomainKind::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| l < v && v < h),
            DomainKind::Ball { center, radius } => numeric::dist(x, center) < *radius,
            DomainKind::Sublevel { potential, level } => {
                if !(potential.value(x) < *level) {
                    return false;
                }
                let dir: Vec<f64> = x.iter().zip(&self.attractor).map(|(xi, ai)| xi - ai).collect();
                ray_scan(&**potential, *level, &self.attractor, &dir, 1.0, |_| 1.0 / RAY_CHECKS as f64).is_none()
            }
        }
    }

    /// Signed distance to the boundary, positive outside. First-order for sublevel sets.
    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Interval { lo, hi } => f64::max(lo - x[0], x[0] - hi),
            DomainKind::Box { lo, hi } => {
                let q: Vec<f64> = x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| f64::max(l - v, v - h)).collect();
                let inside = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if inside <= 0.0 {
                    inside
                } else {
                    libm::sqrt(q.iter().map(|v| v.max(0.0) * v.max(0.0)).sum())
                }
            }
            DomainKind::Ball { center, radius } => numeric::dist(x, center) - radius,
            DomainKind::Sublevel { potential, level } => {
                let mut g = vec![0.0; x.len()];
                potential.gradient(x, &mut g);
                let gn = numeric::norm(&g);
                let dv = potential.value(x) - level;
                if gn > 0.0 {
                    dv / gn
                } else {
                    dv
                }
            }
        }
    }

    /// Axis-aligned bounding box `(lo, hi)` of the closure.
    pub fn bounding_box(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match &self.kind {
            DomainKind::Interval { lo, hi } => Ok((vec![*lo], vec![*hi])),
            DomainKind::Box { lo, hi } => Ok((lo.clone(), hi.clone())),
            DomainKind::Ball { center, radius } => Ok((center.iter().map(|c| c - radius).collect(), center.iter().map(|c| c + radius).collect())),
            DomainKind::Sublevel { .. } => {
                let d = self.dim();
                let (mut lo, mut hi) = (vec![f64::INFINITY; d], vec![f64::NEG_INFINITY; d]);
                for bp in self.boundary_sample(default_boundary_count(d))? {
                    for i in 0..d {
                        lo[i] = lo[i].min(bp.point[i]);
                        hi[i] = hi[i].max(bp.point[i]);
                    }
                }
                Ok((lo, hi))
            }
        }
    }

    /// Distance from an interior point to the boundary.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        match &self.kind {
            DomainKind::Sublevel { .. } => {
                let samples = self.boundary_sample(default_boundary_count(self.dim())).unwrap_or_default();
                samples.iter().map(|b| numeric::dist(&b.point, x)).fold(f64::INFINITY, f64::min)
            }
            _ => -self.signed_distance(x),
        }
    }

    /// Fraction `s ∈ (0, 1]` at which the segment `inside -> outside` first leaves the domain.
    pub fn exit_fraction(&self, inside: &[f64], outside: &[f64]) -> f64 {
        segment_fraction(inside, outside, |y| !self.contains(y))
    }

    /// `n` boundary points with unit outward normals. Intervals always return both endpoints.
    pub fn boundary_sample(&self, n: usize) -> Result<Vec<BoundaryPoint>> {
        if n == 0 {
            return precondition("boundary_sample requires n >= 1");
        }
        let d = self.dim();
        if d == 1 {
            return self.endpoints();
        }
        match (&self.kind, d) {
            (DomainKind::Ball { .. } | DomainKind::Box { .. } | DomainKind::Sublevel { .. }, 2) => {
                (0..n).map(|k| self.boundary_point_at(k as f64 / n as f64)).collect()
            }
            (DomainKind::Ball { center, radius }, 3) => Ok(fibonacci_sphere(n)
                .into_iter()
                .enumerate()
                .map(|(k, u)| BoundaryPoint {
                    point: center.iter().zip(&u).map(|(c, ui)| c + radius * ui).collect(),
                    normal: u,
                    param: k as f64 / n as f64,
                })
                .collect()),
            (kind, d) => Err(Error::Unsupported(format!("boundary sampling of {kind:?} in dimension {d}"))),
        }
    }

    fn endpoints(&self) -> Result<Vec<BoundaryPoint>> {
        let (lo, hi) = match &self.kind {
            DomainKind::Interval { lo, hi } => (*lo, *hi),
            DomainKind::Box { lo, hi } => (lo[0], hi[0]),
            DomainKind::Ball { center, radius } => (center[0] - radius, center[0] + radius),
            DomainKind::Sublevel { .. } => (self.radial_root(&[-1.0])?[0], self.radial_root(&[1.0])?[0]),
        };
        Ok(vec![
            BoundaryPoint {
                point: vec![lo],
                normal: vec![-1.0],
                param: 0.0,
            },
            BoundaryPoint {
                point: vec![hi],
                normal: vec![1.0],
                param: 1.0,
            },
        ])
    }

    /// Boundary point at parameter `s ∈ [0, 1)` of a two-dimensional domain.
    ///
    /// Balls and sublevel sets use the polar angle `2πs` about the centre
    /// (attractor for sublevel sets); boxes use normalised perimeter arclength
    /// counter-clockwise from the lower-left corner.
    pub fn boundary_point_at(&self, s: f64) -> Result<BoundaryPoint> {
        if self.dim() != 2 {
            return Err(Error::Unsupported(String::from("boundary parametrisation needs d = 2")));
        }
        let s = s - libm::floor(s);
        match &self.kind {
            DomainKind::Ball { center, radius } => {
                let u = [libm::cos(2.0 * PI * s), libm::sin(2.0 * PI * s)];
                Ok(BoundaryPoint {
                    point: vec![center[0] + radius * u[0], center[1] + radius * u[1]],
                    normal: u.to_vec(),
                    param: s,
                })
            }
            DomainKind::Box { lo, hi } => {
                let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
                let mut l = s * 2.0 * (w + h);
                let (point, normal) = if l < w {
                    (vec![lo[0] + l, lo[1]], vec![0.0, -1.0])
                } else if {
                    l -= w;
                    l < h
                } {
                    (vec![hi[0], lo[1] + l], vec![1.0, 0.0])
                } else if {
                    l -= h;
                    l < w
                } {
                    (vec![hi[0] - l, hi[1]], vec![0.0, 1.0])
                } else {
                    l -= w;
                    (vec![lo[0], hi[1] - l], vec![-1.0, 0.0])
                };
                Ok(BoundaryPoint { point, normal, param: s })
            }
            DomainKind::Sublevel { potential, .. } => {
                let u = [libm::cos(2.0 * PI * s), libm::sin(2.0 * PI * s)];
                let point = self.radial_root(&u)?;
                let mut g = vec![0.0; 2];
                potential.gradient(&point, &mut g);
                let gn = numeric::norm(&g);
                let normal = if gn > 1e-12 { g.iter().map(|v| v / gn).collect() } else { u.to_vec() };
                Ok(BoundaryPoint { point, normal, param: s })
            }
            DomainKind::Interval { .. } => unreachable!("interval is one-dimensional"),
        }
    }

    /// Inverse of [`Domain::boundary_point_at`] for points on or near the boundary.
    ///
    /// In d = 1 returns 0 for the lower end and 1 for the upper end, by proximity.
    pub fn boundary_param(&self, x: &[f64]) -> Result<f64> {
        match (self.dim(), &self.kind) {
            (1, _) => {
                let ends = self.endpoints()?;
                Ok(if libm::fabs(x[0] - ends[0].point[0]) <= libm::fabs(x[0] - ends[1].point[0]) { 0.0 } else { 1.0 })
            }
            (2, DomainKind::Ball { center, .. }) => Ok(polar_param(x[0] - center[0], x[1] - center[1])),
            (2, DomainKind::Sublevel { .. }) => Ok(polar_param(x[0] - self.attractor[0], x[1] - self.attractor[1])),
            (2, DomainKind::Box { lo, hi }) => {
                let (w, h) = (hi[0] - lo[0], hi[1] - lo[1]);
                let p = [x[0].clamp(lo[0], hi[0]), x[1].clamp(lo[1], hi[1])];
                let dists = [p[1] - lo[1], hi[0] - p[0], hi[1] - p[1], p[0] - lo[0]];
                let side = (0..4).min_by(|&i, &j| dists[i].total_cmp(&dists[j])).unwrap();
                let l = match side {
                    0 => p[0] - lo[0],
                    1 => w + (p[1] - lo[1]),
                    2 => w + h + (hi[0] - p[0]),
                    _ => 2.0 * w + h + (hi[1] - p[1]),
                };
                let s = l / (2.0 * (w + h));
                Ok(s - libm::floor(s))
            }
            (d, kind) => Err(Error::Unsupported(format!("boundary parametrisation of {kind:?} in dimension {d}"))),
        }
    }

    /// First point along the ray `a + r u` where the sublevel set ends.
    fn radial_root(&self, u: &[f64]) -> Result<Vec<f64>> {
        let DomainKind::Sublevel { potential, level } = &self.kind else {
            return Err(Error::Unsupported(String::from("radial root of a non-sublevel domain")));
        };
        let a = &self.attractor;
        match ray_scan(&**potential, *level, a, u, MAX_RADIUS, |r| 1e-2 * f64::max(1.0, r)) {
            Some(r) => Ok(a.iter().zip(u).map(|(ai, ui)| ai + r * ui).collect()),
            None => precondition("sublevel set is unbounded along a probe ray"),
        }
    }

    /// Minkowski inflation (interval/box/ball) or level raise (sublevel), checked against A1, A2, A4.
    pub fn enlarge<F: CoefficientField + ?Sized>(&self, rho: f64, base_field: &F) -> Result<Domain> {
        if !(rho > 0.0) {
            return precondition("enlargement radius must be positive");
        }
        let kind = match &self.kind {
            DomainKind::Interval { lo, hi } => DomainKind::Interval { lo: lo - rho, hi: hi + rho },
            DomainKind::Box { lo, hi } => DomainKind::Box {
                lo: lo.iter().map(|v| v - rho).collect(),
                hi: hi.iter().map(|v| v + rho).collect(),
            },
            DomainKind::Ball { center, radius } => DomainKind::Ball {
                center: center.clone(),
                radius: radius + rho,
            },
            DomainKind::Sublevel { potential, level } => {
                let old = self.boundary_sample(default_boundary_count(self.dim()))?;
                let gap = |c: f64| -> Result<f64> {
                    let trial = Domain {
                        kind: DomainKind::Sublevel {
                            potential: potential.clone(),
                            level: c,
                        },
                        attractor: self.attractor.clone(),
                    };
                    let new = trial.boundary_sample(default_boundary_count(self.dim()))?;
                    Ok(old
                        .iter()
                        .flat_map(|p| new.iter().map(move |q| numeric::dist(&p.point, &q.point)))
                        .fold(f64::INFINITY, f64::min))
                };
                let mut lo = *level;
                let mut inc = 1e-3 * f64::max(1.0, libm::fabs(*level));
                let mut hi = level + inc;
                let mut tries = 0;
                while gap(hi)? < rho {
                    lo = hi;
                    inc *= 2.0;
                    hi += inc;
                    tries += 1;
                    if tries > 60 {
                        return precondition("could not raise the level far enough for the requested rho");
                    }
                }
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if gap(mid)? >= rho {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                DomainKind::Sublevel {
                    potential: potential.clone(),
                    level: hi,
                }
            }
        };
        let enlarged = Domain {
            kind,
            attractor: self.attractor.clone(),
        };
        let report = check_assumptions(&enlarged, base_field, &ProbeConfig::for_dim(self.dim()))?;
        if !(report.a2_min_inward_margin > 0.0) {
            return Err(Error::EnlargementInfeasible {
                assumption: 2,
                witness: report.a2_witness.clone(),
                detail: format!("<b, n> = {} >= 0 on the boundary", -report.a2_min_inward_margin),
            });
        }
        if !report.a1_flow_converges {
            return Err(Error::EnlargementInfeasible {
                assumption: 1,
                witness: report.a1_witness.clone(),
                detail: format!("flow ends {} away from the attractor", report.a1_worst_distance),
            });
        }
        if !(report.a4_sigma_min > 0.0) {
            return Err(Error::EnlargementInfeasible {
                assumption: 4,
                witness: report.a4_witness.clone(),
                detail: String::from("degenerate diffusion"),
            });
        }
        Ok(enlarged)
    }
}

pub fn default_boundary_count(dim: usize) -> usize {
    if dim == 1 {
        2
    } else {
        256
    }
}

/// First `r ∈ (0, r_end]` where `V(a + r dir)` reaches `level`, including tangential touches.
fn ray_scan<S, H>(potential: &S, level: f64, a: &[f64], dir: &[f64], r_end: f64, step: H) -> Option<f64>
where
    S: ScalarField + ?Sized,
    H: Fn(f64) -> f64,
{
    let at = |r: f64| -> Vec<f64> { a.iter().zip(dir).map(|(ai, di)| ai + r * di).collect() };
    let g = |r: f64| potential.value(&at(r)) - level;
    let dg = |r: f64| {
        let mut grad = vec![0.0; a.len()];
        potential.gradient(&at(r), &mut grad);
        numeric::dot(&grad, dir)
    };
    let touch = 1e-12 * f64::max(1.0, libm::fabs(level));
    let (mut r2, mut g2) = (0.0, g(0.0));
    let (mut r1, mut g1) = (r2, g2);
    let mut r = 0.0;
    while r < r_end {
        r = f64::min(r + step(r), r_end);
        let gr = g(r);
        if gr >= 0.0 {
            return Some(numeric::bisect(g, r1, r, 1e-15, 200));
        }
        if g1 > g2 && g1 > gr {
            // sampled local maximum: locate the critical point on the derivative
            let (mut lo, mut hi) = (r2, r);
            if dg(lo) > 0.0 && dg(hi) < 0.0 {
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if dg(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-16 * f64::max(1.0, mid) {
                        break;
                    }
                }
            }
            let r_star = 0.5 * (lo + hi);
            let g_star = g(r_star);
            if g_star >= 0.0 {
                return Some(numeric::bisect(g, r2, r_star, 1e-15, 200));
            }
            if g_star >= -touch {
                return Some(r_star);
            }
        }
        (r2, g2, r1, g1) = (r1, g1, r, gr);
    }
    None
}

fn polar_param(dx: f64, dy: f64) -> f64 {
    let s = libm::atan2(dy, dx) / (2.0 * PI);
    let s = if s < 0.0 { s + 1.0 } else { s };
    if s >= 1.0 {
        0.0
    } else {
        s
    }
}

fn fibonacci_sphere(n: usize) -> Vec<Vec<f64>> {
    let golden = PI * (3.0 - libm::sqrt(5.0));
    (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = libm::sqrt(f64::max(0.0, 1.0 - z * z));
            let phi = golden * k as f64;
            vec![r * libm::cos(phi), r * libm::sin(phi), z]
        })
        .collect()
}

/// Bisection for the first parameter in `(0, 1]` where `pred` holds along `x0 -> x1`.
///
/// Assumes `pred(x0)` is false and `pred(x1)` is true.
pub fn segment_fraction<P: Fn(&[f64]) -> bool>(x0: &[f64], x1: &[f64], pred: P) -> f64 {
    let mut y = x0.to_vec();
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        for i in 0..y.len() {
            y[i] = x0[i] + mid * (x1[i] - x0[i]);
        }
        if pred(&y) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-16 {
            break;
        }
    }
    hi
}

/// Tunables for [`check_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub n_boundary: usize,
    pub a1_probes: usize,
    pub a1_horizon: f64,
    pub a1_dt: f64,
    pub a1_tolerance: f64,
    pub fd_step: f64,
}

impl ProbeConfig {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            n_boundary: default_boundary_count(dim),
            a1_probes: 32,
            a1_horizon: 50.0,
            a1_dt: 1e-2,
            a1_tolerance: 1e-3,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub a1_flow_converges: bool,
    pub a1_worst_distance: f64,
    pub a1_witness: Vec<f64>,
    pub a2_min_inward_margin: f64,
    pub a2_witness: Vec<f64>,
    pub drift_at_attractor: f64,
    pub a3_jacobian_eigen_max: f64,
    pub a3_attraction_l: f64,
    pub a4_sigma_min: f64,
    pub a4_sigma_max: f64,
    pub a4_witness: Vec<f64>,
    pub pass: bool,
}

/// Numerical probe of the four structural assumptions for an autonomous field.
pub fn check_assumptions<F: CoefficientField + ?Sized>(domain: &Domain, field: &F, probe: &ProbeConfig) -> Result<AssumptionReport> {
    if !field.is_autonomous() {
        return precondition("check_assumptions requires an autonomous field");
    }
    let d = domain.dim();
    if field.dim() != d {
        return precondition("field and domain dimensions differ");
    }
    let a = domain.attractor().to_vec();
    let boundary = domain.boundary_sample(probe.n_boundary)?;

    // A1: flows from boundary and interior probes stay inside and converge to a.
    let stride = (boundary.len() / probe.a1_probes.max(1)).max(1);
    let mut starts: Vec<(Vec<f64>, bool)> = Vec::new();
    for bp in boundary.iter().step_by(stride) {
        starts.push((bp.point.clone(), true));
        starts.push((a.iter().zip(&bp.point).map(|(ai, pi)| ai + 0.5 * (pi - ai)).collect(), false));
    }
    let flow_cfg = IntegratorConfig::new(probe.a1_dt, probe.a1_horizon, 1)?;
    let mut a1_ok = true;
    let mut worst = 0.0f64;
    let mut a1_witness = a.clone();
    for (x0, on_boundary) in &starts {
        let (ok, dist) = match integrate_flow(field, x0, &flow_cfg) {
            Ok(path) => {
                let first = if *on_boundary { 1 } else { 0 };
                let stays = (first..path.len()).all(|i| domain.contains(path.state(i)));
                let dist = numeric::dist(path.last_state(), &a);
                (stays && dist <= probe.a1_tolerance, dist)
            }
            Err(_) => (false, f64::INFINITY),
        };
        if !ok && a1_ok {
            a1_witness = x0.clone();
        }
        a1_ok &= ok;
        if dist > worst {
            worst = dist;
            if a1_ok {
                a1_witness = x0.clone();
            }
        }
    }

    // A2: the field points strictly inward.
    let mut a2 = f64::INFINITY;
    let mut a2_witness = a.clone();
    for bp in &boundary {
        let b = drift_at(field, 0.0, &bp.point);
        let margin = -numeric::dot(&b, &bp.normal);
        if margin < a2 {
            a2 = margin;
            a2_witness = bp.point.clone();
        }
    }

    // A3: Jacobian spectrum at a and the attraction constant on a shell.
    let jac = numeric::fd_jacobian(|x, out| field.drift(0.0, x, out), &a, probe.fd_step);
    let eig_max = numeric::eigen_real_parts(&jac, d).into_iter().fold(f64::NEG_INFINITY, f64::max);
    let r_max = domain.distance_to_boundary(&a);
    let mut l_est = f64::INFINITY;
    for frac in [0.25, 0.5, 0.75] {
        for bp in &boundary {
            let dir: Vec<f64> = bp.point.iter().zip(&a).map(|(p, ai)| p - ai).collect();
            let dn = numeric::norm(&dir);
            if dn == 0.0 {
                continue;
            }
            let x: Vec<f64> = a.iter().zip(&dir).map(|(ai, u)| ai + frac * r_max * u / dn).collect();
            let diff: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| xi - ai).collect();
            let b = drift_at(field, 0.0, &x);
            l_est = l_est.min(-numeric::dot(&b, &diff) / numeric::dot(&diff, &diff));
        }
    }

    // A4: singular values of σ on boundary, interior probes and a.
    let mut s_min = f64::INFINITY;
    let mut s_max = 0.0f64;
    let mut a4_witness = a.clone();
    let points = boundary.iter().map(|b| b.point.clone()).chain(starts.iter().map(|(x, _)| x.clone())).chain(Some(a.clone()));
    for p in points {
        let sv = numeric::singular_values(&diffusion_at(field, 0.0, &p), d);
        let lo = sv.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = sv.iter().copied().fold(0.0, f64::max);
        if lo < s_min {
            s_min = lo;
            a4_witness = p.clone();
        }
        s_max = s_max.max(hi);
    }

    let b_at_a = numeric::norm(&drift_at(field, 0.0, &a));
    let pass = a1_ok && a2 > 0.0 && eig_max < 0.0 && s_min > 0.0;
    Ok(AssumptionReport {
        a1_flow_converges: a1_ok,
        a1_worst_distance: worst,
        a1_witness,
        a2_min_inward_margin: a2,
        a2_witness,
        drift_at_attractor: b_at_a,
        a3_jacobian_eigen_max: eig_max,
        a3_attraction_l: l_est,
        a4_sigma_min: s_min,
        a4_sigma_max: s_max,
        a4_witness,
        pass,
    })
}

/// Post-hoc first exit of a stored path, with the same interpolation as the simulator.
pub fn first_exit_scan(path: &PathSample, domain: &Domain) -> Result<ExitRecord> {
    if path.is_empty() || !domain.contains(path.state(0)) {
        return precondition("path must start inside the domain");
    }
    let seed = path.seed.unwrap_or(crate::rng::SeedTag {
        master_seed: 0,
        stream_id: 0,
    });
    for i in 1..path.len() {
        let x = path.state(i);
        if !domain.contains(x) {
            let prev = path.state(i - 1);
            let s = domain.exit_fraction(prev, x);
            let (t0, t1) = (path.times[i - 1], path.times[i]);
            return Ok(ExitRecord {
                replicate_id: 0,
                seed,
                tau: t0 + s * (t1 - t0),
                exit_point: Some(prev.iter().zip(x).map(|(a, b)| a + s * (b - a)).collect()),
                status: ExitStatus::Exited,
            });
        }
    }
    Ok(ExitRecord::censored(0, seed, *path.times.last().unwrap()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HitTag {
    Ball,
    Boundary,
    Censored,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRecord {
    pub time: f64,
    pub tag: HitTag,
    pub point: Option<Vec<f64>>,
}

/// First time the path enters the closed ball `B_ρ(a)` or leaves the domain.
pub fn hitting_time_tau_prime(path: &PathSample, domain: &Domain, rho: f64) -> Result<HitRecord> {
    if !(rho > 0.0) {
        return precondition("rho must be positive");
    }
    let a = domain.attractor();
    if !(domain.distance_to_boundary(a) > rho) {
        return precondition(format!("ball of radius {rho} around the attractor is not inside the domain"));
    }
    if path.is_empty() || !domain.contains(path.state(0)) {
        return precondition("path must start inside the domain");
    }
    let in_ball = |y: &[f64]| numeric::dist(y, a) <= rho;
    if in_ball(path.state(0)) {
        return Ok(HitRecord {
            time: 0.0,
            tag: HitTag::Ball,
            point: Some(path.state(0).to_vec()),
        });
    }
    for i in 1..path.len() {
        let (prev, x) = (path.state(i - 1), path.state(i));
        let outside = !domain.contains(x);
        let ball = in_ball(x);
        if outside || ball {
            let s_out = if outside { domain.exit_fraction(prev, x) } else { f64::INFINITY };
            let s_ball = if ball { segment_fraction(prev, x, in_ball) } else { f64::INFINITY };
            let (s, tag) = if s_ball <= s_out { (s_ball, HitTag::Ball) } else { (s_out, HitTag::Boundary) };
            let (t0, t1) = (path.times[i - 1], path.times[i]);
            return Ok(HitRecord {
                time: t0 + s * (t1 - t0),
                tag,
                point: Some(prev.iter().zip(x).map(|(p, q)| p + s * (q - p)).collect()),
            });
        }
    }
    Ok(HitRecord {
        time: *path.times.last().unwrap(),
        tag: HitTag::Censored,
        point: None,
    })
}
