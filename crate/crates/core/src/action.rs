//! The rate functional `S_T(f) = ¼ ∫ ⟨ḟ - b, A⁻¹ (ḟ - b)⟩ dt` with `A = σσ*`,
//! its time-free geometric form, and minimum-action computations of the
//! quasipotential `Q` and the barrier height `H`.
//!
//! The ¼ normalisation makes `Q = V - V(a)` for `b = -∇V`, `σ = Id` and
//! puts the mean exit time on the scale `e^{2H/ε}`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::Serialize;

use crate::domain::Domain;
use crate::error::{precondition, Error, Result};
use crate::exec::Executor;
use crate::field::{diffusion_at, CoefficientField};
use crate::numeric;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    /// Node `k` sits at `times[k]`, with `times[0] = 0` and `times[N] = T`.
    FiniteTime { times: Vec<f64> },
    /// Time-free curve; nodes are kept at equal arclength by the optimizer.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretePath {
    pub nodes: Vec<Vec<f64>>,
    pub parametrization: Parametrization,
}

impl DiscretePath {
    pub fn geometric(nodes: Vec<Vec<f64>>) -> Result<Self> {
        Self::check_nodes(&nodes)?;
        Ok(Self {
            nodes,
            parametrization: Parametrization::Geometric,
        })
    }

    pub fn finite_time(nodes: Vec<Vec<f64>>, times: Vec<f64>) -> Result<Self> {
        Self::check_nodes(&nodes)?;
        if times.len() != nodes.len() || times[0] != 0.0 || times.windows(2).any(|w| !(w[0] < w[1])) {
            return precondition("finite-time path needs strictly increasing times from 0, one per node");
        }
        Ok(Self {
            nodes,
            parametrization: Parametrization::FiniteTime { times },
        })
    }

    /// Nodes on the uniform grid `k T / N`.
    pub fn finite_time_uniform(nodes: Vec<Vec<f64>>, total: f64) -> Result<Self> {
        if !(total > 0.0) {
            return precondition("total time must be positive");
        }
        let n = nodes.len().saturating_sub(1).max(1);
        let times = (0..nodes.len()).map(|k| total * k as f64 / n as f64).collect();
        Self::finite_time(nodes, times)
    }

    /// `N + 1` equally spaced nodes on the segment `start -> end`.
    pub fn straight(start: &[f64], end: &[f64], n: usize) -> Result<Self> {
        if n == 0 {
            return precondition("a path needs N >= 1 segments");
        }
        Self::geometric(
            (0..=n)
                .map(|k| {
                    let s = k as f64 / n as f64;
                    start.iter().zip(end).map(|(a, b)| a + s * (b - a)).collect()
                })
                .collect(),
        )
    }

    fn check_nodes(nodes: &[Vec<f64>]) -> Result<()> {
        if nodes.len() < 2 {
            return precondition("a path needs N >= 1 segments");
        }
        let d = nodes[0].len();
        if d == 0 || nodes.iter().any(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
            return precondition("path nodes must be finite vectors of one dimension");
        }
        Ok(())
    }

    pub fn n_segments(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].len()
    }

    pub fn start(&self) -> &[f64] {
        &self.nodes[0]
    }

    pub fn end(&self) -> &[f64] {
        self.nodes.last().unwrap()
    }

    pub fn chord_lengths(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| numeric::dist(&w[0], &w[1])).collect()
    }

    pub fn length(&self) -> f64 {
        self.chord_lengths().iter().sum()
    }

    /// Relative spread `(max - min) / mean` of the chord lengths.
    pub fn chord_spread(&self) -> f64 {
        let c = self.chord_lengths();
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        if mean == 0.0 {
            return 0.0;
        }
        let (lo, hi) = c.iter().fold((f64::INFINITY, 0.0f64), |(l, h), v| (l.min(*v), h.max(*v)));
        (hi - lo) / mean
    }

    /// Redistributes the nodes to equal arclength along the current polyline, repeated
    /// until the chord spread is below `1e-6` (at most 50 passes). Endpoints are kept.
    pub fn reparametrize(&mut self) {
        for _ in 0..50 {
            if self.chord_spread() < 1e-6 {
                break;
            }
            self.reparametrize_once();
        }
    }

    /// Equal-arclength geometric path with `n` segments through the current polyline.
    pub fn resampled(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return precondition("a path needs at least one segment");
        }
        let chords = self.chord_lengths();
        let total: f64 = chords.iter().sum();
        let mut cum = Vec::with_capacity(chords.len() + 1);
        cum.push(0.0);
        for c in &chords {
            cum.push(cum.last().unwrap() + c);
        }
        let mut nodes = Vec::with_capacity(n + 1);
        nodes.push(self.start().to_vec());
        let mut seg = 0;
        for k in 1..n {
            let target = total * k as f64 / n as f64;
            while seg + 1 < chords.len() && cum[seg + 1] < target {
                seg += 1;
            }
            let w = if chords[seg] > 0.0 { (target - cum[seg]) / chords[seg] } else { 0.0 };
            let (a, b) = (&self.nodes[seg], &self.nodes[seg + 1]);
            nodes.push(a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect());
        }
        nodes.push(self.end().to_vec());
        Self::geometric(nodes)
    }

    fn reparametrize_once(&mut self) {
        let n = self.n_segments();
        let chords = self.chord_lengths();
        let total: f64 = chords.iter().sum();
        if total == 0.0 {
            return;
        }
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for c in &chords {
            cum.push(cum.last().unwrap() + c);
        }
        let old = self.nodes.clone();
        let mut seg = 0;
        for k in 1..n {
            let target = total * k as f64 / n as f64;
            while seg + 1 < n && cum[seg + 1] < target {
                seg += 1;
            }
            let w = if chords[seg] > 0.0 { (target - cum[seg]) / chords[seg] } else { 0.0 };
            for i in 0..self.dim() {
                self.nodes[k][i] = old[seg][i] + w * (old[seg + 1][i] - old[seg][i]);
            }
        }
    }
}

/// `A(x) = σ(x)σ(x)*` of an autonomous field, with inner products `⟨u, A⁻¹ v⟩`.
pub struct MetricField<'a, F: ?Sized> {
    field: &'a F,
}

impl<'a, F: CoefficientField + ?Sized> MetricField<'a, F> {
    pub fn new(field: &'a F) -> Self {
        Self { field }
    }

    pub fn field(&self) -> &F {
        self.field
    }

    pub fn matrix(&self, x: &[f64]) -> Vec<f64> {
        let d = self.field.dim();
        let s = diffusion_at(self.field, 0.0, x);
        let mut a = vec![0.0; d * d];
        numeric::outer_self(&s, d, &mut a);
        a
    }

    /// Cholesky factor of `A(x)`.
    pub fn factor(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut l = self.matrix(x);
        if numeric::cholesky_in_place(&mut l, self.field.dim()) {
            Ok(l)
        } else {
            Err(Error::SingularMetric { point: x.to_vec() })
        }
    }

    /// `⟨u, A⁻¹(x) v⟩`.
    pub fn inner(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<f64> {
        let d = self.field.dim();
        let l = self.factor(x)?;
        let (mut yu, mut yv) = (vec![0.0; d], vec![0.0; d]);
        numeric::forward_solve(&l, d, u, &mut yu);
        numeric::forward_solve(&l, d, v, &mut yv);
        Ok(numeric::dot(&yu, &yv))
    }

    /// Smallest eigenvalue of `A` over the probes, and whether `A` is symmetric within `1e-10` there.
    pub fn probe(&self, points: &[Vec<f64>]) -> (f64, bool) {
        let d = self.field.dim();
        let mut lo = f64::INFINITY;
        let mut symmetric = true;
        for p in points {
            let a = self.matrix(p);
            for i in 0..d {
                for j in 0..i {
                    symmetric &= libm::fabs(a[i * d + j] - a[j * d + i]) <= 1e-10;
                }
            }
            let s = numeric::singular_values(&diffusion_at(self.field, 0.0, p), d);
            let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
            lo = lo.min(smin * smin);
        }
        (lo, symmetric)
    }

    /// `(‖u‖_A, ‖w‖_A, ⟨u, w⟩_A)` at `x`.
    fn triple(&self, x: &[f64], u: &[f64], w: &[f64], scratch: &mut Scratch) -> Result<(f64, f64, f64)> {
        let d = self.field.dim();
        self.field.diffusion(0.0, x, &mut scratch.sigma);
        numeric::outer_self(&scratch.sigma, d, &mut scratch.l);
        if !numeric::cholesky_in_place(&mut scratch.l, d) {
            return Err(Error::SingularMetric { point: x.to_vec() });
        }
        numeric::forward_solve(&scratch.l, d, u, &mut scratch.yu);
        numeric::forward_solve(&scratch.l, d, w, &mut scratch.yw);
        Ok((numeric::norm(&scratch.yu), numeric::norm(&scratch.yw), numeric::dot(&scratch.yu, &scratch.yw)))
    }
}

struct Scratch {
    sigma: Vec<f64>,
    l: Vec<f64>,
    yu: Vec<f64>,
    yw: Vec<f64>,
    mid: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
}

impl Scratch {
    fn new(d: usize) -> Self {
        Self {
            sigma: vec![0.0; d * d],
            l: vec![0.0; d * d],
            yu: vec![0.0; d],
            yw: vec![0.0; d],
            mid: vec![0.0; d],
            delta: vec![0.0; d],
            b: vec![0.0; d],
        }
    }
}

fn check_dims<F: CoefficientField + ?Sized>(path: &DiscretePath, field: &F) -> Result<()> {
    if path.dim() != field.dim() {
        return precondition(format!("path dimension {} differs from field dimension {}", path.dim(), field.dim()));
    }
    Ok(())
}

/// Midpoint quadrature of the finite-time action, chord slopes for `ḟ`.
pub fn finite_time_action<F: CoefficientField + ?Sized>(path: &DiscretePath, metric: &MetricField<'_, F>) -> Result<f64> {
    let Parametrization::FiniteTime { times } = &path.parametrization else {
        return precondition("finite_time_action needs a finite-time parametrisation");
    };
    let field = metric.field;
    check_dims(path, field)?;
    let d = path.dim();
    let mut sc = Scratch::new(d);
    let (mut mid, mut b, mut rate) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut total = 0.0;
    for k in 0..path.n_segments() {
        let (x0, x1) = (&path.nodes[k], &path.nodes[k + 1]);
        let dt = times[k + 1] - times[k];
        for i in 0..d {
            mid[i] = 0.5 * (x0[i] + x1[i]);
        }
        field.drift(0.5 * (times[k] + times[k + 1]), &mid, &mut b);
        for i in 0..d {
            rate[i] = (x1[i] - x0[i]) / dt - b[i];
        }
        let (r, _, _) = metric.triple(&mid, &rate, &rate, &mut sc)?;
        total += 0.25 * r * r * dt;
    }
    Ok(total)
}

/// `½ (‖Δ‖_A ‖b(m)‖_A - ⟨Δ, b(m)⟩_A)` for the segment `x0 -> x1`; zero for a degenerate chord.
fn segment_action<F: CoefficientField + ?Sized>(metric: &MetricField<'_, F>, x0: &[f64], x1: &[f64], sc: &mut Scratch) -> Result<f64> {
    let d = x0.len();
    let mut degenerate = true;
    for i in 0..d {
        sc.mid[i] = 0.5 * (x0[i] + x1[i]);
        sc.delta[i] = x1[i] - x0[i];
        degenerate &= sc.delta[i] == 0.0;
    }
    if degenerate {
        return Ok(0.0);
    }
    metric.field.drift(0.0, &sc.mid, &mut sc.b);
    let mid = core::mem::take(&mut sc.mid);
    let delta = core::mem::take(&mut sc.delta);
    let b = core::mem::take(&mut sc.b);
    let res = metric.triple(&mid, &delta, &b, sc);
    sc.mid = mid;
    sc.delta = delta;
    sc.b = b;
    let (nd, nb, ip) = res?;
    Ok(f64::max(0.0, 0.5 * (nd * nb - ip)))
}

/// Geometric action `Σ_k ½ (‖Δγ_k‖_A ‖b(m_k)‖_A - ⟨Δγ_k, b(m_k)⟩_A)` at segment midpoints.
pub fn geometric_action<F: CoefficientField + ?Sized>(path: &DiscretePath, metric: &MetricField<'_, F>) -> Result<f64> {
    check_dims(path, metric.field)?;
    let mut sc = Scratch::new(path.dim());
    let mut total = 0.0;
    for w in path.nodes.windows(2) {
        total += segment_action(metric, &w[0], &w[1], &mut sc)?;
    }
    Ok(total)
}

/// Central-difference gradient of the geometric action with respect to the interior nodes.
///
/// Only the two segments adjacent to a node are re-evaluated; entry `k` is the gradient at node `k` (endpoints zero).
pub fn geometric_gradient<F: CoefficientField + ?Sized>(path: &DiscretePath, metric: &MetricField<'_, F>, h: f64) -> Result<Vec<Vec<f64>>> {
    Ok(gradient_and_curvature(path, metric, h)?.0)
}

/// Central differences for the gradient and the diagonal of the Hessian from the same evaluations.
fn gradient_and_curvature<F: CoefficientField + ?Sized>(path: &DiscretePath, metric: &MetricField<'_, F>, h: f64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    check_dims(path, metric.field)?;
    let d = path.dim();
    let n = path.n_segments();
    let mut sc = Scratch::new(d);
    let mut grad = vec![vec![0.0; d]; n + 1];
    let mut curv = vec![vec![0.0; d]; n + 1];
    let mut node = vec![0.0; d];
    for k in 1..n {
        node.copy_from_slice(&path.nodes[k]);
        let (prev, next) = (&path.nodes[k - 1], &path.nodes[k + 1]);
        let f0 = segment_action(metric, prev, &node, &mut sc)? + segment_action(metric, &node, next, &mut sc)?;
        for i in 0..d {
            let step = h * f64::max(1.0, libm::fabs(node[i]));
            let orig = node[i];
            node[i] = orig + step;
            let fp = segment_action(metric, prev, &node, &mut sc)? + segment_action(metric, &node, next, &mut sc)?;
            node[i] = orig - step;
            let fm = segment_action(metric, prev, &node, &mut sc)? + segment_action(metric, &node, next, &mut sc)?;
            node[i] = orig;
            grad[k][i] = (fp - fm) / (2.0 * step);
            curv[k][i] = (fp - 2.0 * f0 + fm) / (step * step);
        }
    }
    Ok((grad, curv))
}

/// Time parametrisation of a geometric path with total time `total` that minimises the finite-time action
/// for the given curve: `dt_k = ‖Δγ_k‖_A / √(‖b(m_k)‖²_A + λ)` with `λ` chosen so that `Σ dt_k = total`.
pub fn time_parametrize<F: CoefficientField + ?Sized>(path: &DiscretePath, metric: &MetricField<'_, F>, total: f64) -> Result<DiscretePath> {
    check_dims(path, metric.field)?;
    if !(total > 0.0) {
        return precondition("total time must be positive");
    }
    let d = path.dim();
    let mut sc = Scratch::new(d);
    let mut seg = Vec::with_capacity(path.n_segments());
    for w in path.nodes.windows(2) {
        for i in 0..d {
            sc.mid[i] = 0.5 * (w[0][i] + w[1][i]);
            sc.delta[i] = w[1][i] - w[0][i];
        }
        metric.field.drift(0.0, &sc.mid, &mut sc.b);
        let (mid, delta, b) = (sc.mid.clone(), sc.delta.clone(), sc.b.clone());
        let (nd, nb, _) = metric.triple(&mid, &delta, &b, &mut sc)?;
        seg.push((nd, nb * nb));
    }
    let lam_min = -seg.iter().filter(|s| s.0 > 0.0).map(|s| s.1).fold(f64::INFINITY, f64::min);
    let duration = |lam: f64| -> f64 { seg.iter().map(|(nd, b2)| if *nd > 0.0 { nd / libm::sqrt(b2 + lam) } else { 0.0 }).sum() };
    let mut lo = if lam_min.is_finite() { lam_min } else { 0.0 };
    let mut hi = f64::max(1.0, 2.0 * libm::fabs(lo));
    while duration(hi) > total {
        hi *= 4.0;
        if hi > 1e300 {
            return precondition("time parametrisation failed to bracket the requested total");
        }
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if duration(mid) > total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lam = hi;
    // degenerate segments get a tiny positive duration so times stay strictly increasing
    let tiny = total * 1e-14;
    let mut times = Vec::with_capacity(path.nodes.len());
    times.push(0.0);
    for (nd, b2) in &seg {
        let dt = if *nd > 0.0 { nd / libm::sqrt(b2 + lam) } else { tiny };
        times.push(times.last().unwrap() + dt);
    }
    let scale = total / times.last().unwrap();
    for t in times.iter_mut() {
        *t *= scale;
    }
    DiscretePath::finite_time(path.nodes.clone(), times)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stop when the relative change of the action between iterations falls below this.
    pub rel_tol: f64,
    /// Stop when the perpendicular gradient norm falls below this.
    pub grad_tol: f64,
    /// A stalled run counts as converged when the predicted Newton decrease is below
    /// `accept_decrement · max(1, |S|)`.
    pub accept_decrement: f64,
    pub fd_step: f64,
    pub initial_step: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            rel_tol: 1e-10,
            grad_tol: 1e-8,
            accept_decrement: 1e-7,
            fd_step: 1e-6,
            initial_step: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuasipotentialResult {
    pub value: f64,
    pub path: DiscretePath,
    pub iterations: usize,
    /// Sup over interior nodes of the gradient component normal to the path, per unit chord length.
    pub grad_norm: f64,
    /// `⟨g, D⁻¹ g⟩` for the perpendicular gradient `g` and the Jacobi curvature `D`: the decrease a Newton step would still buy.
    pub decrement: f64,
    pub converged: bool,
}

/// Removes the tangential component of `v` at every interior node.
fn project_perpendicular(path: &DiscretePath, v: &mut [Vec<f64>]) {
    let d = path.dim();
    for k in 1..path.n_segments() {
        let tangent: Vec<f64> = (0..d).map(|i| path.nodes[k + 1][i] - path.nodes[k - 1][i]).collect();
        let tn = numeric::norm(&tangent);
        if tn > 0.0 {
            let proj = numeric::dot(&v[k], &tangent) / (tn * tn);
            for i in 0..d {
                v[k][i] -= proj * tangent[i];
            }
        }
    }
}

/// Jacobi-preconditioned descent direction; curvatures below `1e-3` of the largest are floored.
fn preconditioned_direction(path: &DiscretePath, grad: &[Vec<f64>], curv: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cmax = curv.iter().flatten().fold(0.0f64, |m, c| m.max(*c));
    let floor = if cmax > 0.0 { 1e-3 * cmax } else { 1.0 };
    let mut dir: Vec<Vec<f64>> = grad
        .iter()
        .zip(curv)
        .map(|(g, c)| g.iter().zip(c).map(|(g, c)| g / c.max(floor)).collect())
        .collect();
    project_perpendicular(path, &mut dir);
    dir
}

fn perpendicular_gradient(path: &DiscretePath, grad: &mut [Vec<f64>]) -> f64 {
    let n = path.n_segments();
    let d = path.dim();
    let h = path.length() / n as f64;
    let mut sup = 0.0f64;
    for k in 1..n {
        let tangent: Vec<f64> = (0..d).map(|i| path.nodes[k + 1][i] - path.nodes[k - 1][i]).collect();
        let tn = numeric::norm(&tangent);
        if tn > 0.0 {
            let proj = numeric::dot(&grad[k], &tangent) / (tn * tn);
            for i in 0..d {
                grad[k][i] -= proj * tangent[i];
            }
        }
        if h > 0.0 {
            sup = sup.max(numeric::norm(&grad[k]) / h);
        }
    }
    sup
}

/// Consecutive sub-`rel_tol` iterations tolerated while the decrement is still above its acceptance level.
const MAX_STALLS: usize = 20;

/// Jacobi-preconditioned descent on the interior nodes with backtracking and equal-arclength reparametrisation.
pub fn minimize_from<F: CoefficientField + ?Sized>(initial: DiscretePath, metric: &MetricField<'_, F>, cfg: &OptimizerConfig) -> Result<QuasipotentialResult> {
    check_dims(&initial, metric.field)?;
    let mut path = initial;
    path.parametrization = Parametrization::Geometric;
    path.reparametrize();
    let mut value = geometric_action(&path, metric)?;
    let mut step = cfg.initial_step;
    let mut grad_norm = f64::INFINITY;
    let mut decrement = f64::INFINITY;
    let mut stalls = 0;
    let mut iterations = 0;
    let mut converged = false;
    let n = path.n_segments();
    while iterations < cfg.max_iters {
        let (mut grad, curv) = gradient_and_curvature(&path, metric, cfg.fd_step)?;
        grad_norm = perpendicular_gradient(&path, &mut grad);
        let dir = preconditioned_direction(&path, &grad, &curv);
        let slope: f64 = grad.iter().zip(&dir).map(|(g, p)| numeric::dot(g, p)).sum();
        decrement = slope;
        if grad_norm < cfg.grad_tol {
            converged = true;
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial = path.clone();
            for k in 1..n {
                for (x, p) in trial.nodes[k].iter_mut().zip(&dir[k]) {
                    *x -= step * p;
                }
            }
            let v = geometric_action(&trial, metric)?;
            if v <= value - 1e-4 * step * slope {
                accepted = Some(trial);
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        let Some(mut next) = accepted else {
            converged = decrement <= cfg.accept_decrement * f64::max(1.0, libm::fabs(value));
            break;
        };
        next.reparametrize();
        let v = geometric_action(&next, metric)?;
        let rel = libm::fabs(v - value) / f64::max(libm::fabs(value), 1e-300);
        path = next;
        value = v;
        step = f64::min(1.5 * step, 1.0);
        if rel >= cfg.rel_tol {
            stalls = 0;
            continue;
        }
        let (mut g, c) = gradient_and_curvature(&path, metric, cfg.fd_step)?;
        grad_norm = perpendicular_gradient(&path, &mut g);
        let dir = preconditioned_direction(&path, &g, &c);
        decrement = g.iter().zip(&dir).map(|(g, p)| numeric::dot(g, p)).sum();
        converged = grad_norm < cfg.grad_tol || decrement <= cfg.accept_decrement * f64::max(1.0, libm::fabs(value));
        stalls += 1;
        if converged || stalls >= MAX_STALLS {
            break;
        }
    }
    Ok(QuasipotentialResult {
        value,
        path,
        iterations,
        grad_norm,
        decrement,
        converged,
    })
}

/// Minimum geometric action from `start` to `end`, starting from the straight segment.
pub fn minimize_geometric_action<F: CoefficientField + ?Sized>(
    metric: &MetricField<'_, F>,
    start: &[f64],
    end: &[f64],
    n: usize,
    cfg: &OptimizerConfig,
) -> Result<QuasipotentialResult> {
    if start == end {
        return precondition("end point must differ from start point");
    }
    minimize_from(DiscretePath::straight(start, end, n)?, metric, cfg)
}

/// Unit vector perpendicular to `v` (Gram–Schmidt on the least aligned axis).
fn perpendicular(v: &[f64]) -> Vec<f64> {
    let d = v.len();
    let axis = (0..d).min_by(|&i, &j| libm::fabs(v[i]).total_cmp(&libm::fabs(v[j]))).unwrap();
    let vn = numeric::norm(v);
    let mut e = vec![0.0; d];
    e[axis] = 1.0;
    let proj = numeric::dot(&e, v) / (vn * vn);
    for i in 0..d {
        e[i] -= proj * v[i];
    }
    let en = numeric::norm(&e);
    e.iter().map(|x| x / en).collect()
}

/// Initial paths: the straight segment and, for d ≥ 2, two bows `± 0.5 |y - a| sin(πs)` perpendicular to it.
pub fn initial_paths(start: &[f64], end: &[f64], n: usize) -> Result<Vec<DiscretePath>> {
    let straight = DiscretePath::straight(start, end, n)?;
    if start.len() == 1 {
        return Ok(vec![straight]);
    }
    let chord: Vec<f64> = end.iter().zip(start).map(|(e, s)| e - s).collect();
    let amp = 0.5 * numeric::norm(&chord);
    let perp = perpendicular(&chord);
    let mut out = vec![straight.clone()];
    for sign in [1.0, -1.0] {
        let mut p = straight.clone();
        for (k, node) in p.nodes.iter_mut().enumerate() {
            let bump = sign * amp * libm::sin(core::f64::consts::PI * k as f64 / n as f64);
            for (x, u) in node.iter_mut().zip(&perp) {
                *x += bump * u;
            }
        }
        out.push(p);
    }
    Ok(out)
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

const TIE: f64 = 1e-9;

fn better(a: &QuasipotentialResult, b: &QuasipotentialResult) -> bool {
    if a.value < b.value - TIE {
        return true;
    }
    if a.value > b.value + TIE {
        return false;
    }
    let fa: Vec<f64> = a.path.nodes.iter().flatten().copied().collect();
    let fb: Vec<f64> = b.path.nodes.iter().flatten().copied().collect();
    lexicographic(&fa, &fb) == Ordering::Less
}

const COARSEST: usize = 12;

/// Segment counts `⌈n / 2^j⌉` from the coarsest level `≥ COARSEST` up to `n`.
fn coarse_levels(n: usize) -> Vec<usize> {
    let mut levels = vec![n];
    while levels[0] / 2 >= COARSEST {
        levels.insert(0, levels[0].div_ceil(2));
    }
    levels
}

/// Descent on each level in turn, each warm-started from the resampled previous optimum.
///
/// Plain descent on `n` nodes needs `O(n²)` iterations for the smooth modes; the coarse levels remove them cheaply.
fn minimize_multilevel<F: CoefficientField + ?Sized>(
    initial: DiscretePath,
    levels: &[usize],
    metric: &MetricField<'_, F>,
    cfg: &OptimizerConfig,
) -> Result<QuasipotentialResult> {
    let mut r = minimize_from(initial, metric, cfg)?;
    let mut iterations = r.iterations;
    for &m in &levels[1..] {
        let path = r.path.resampled(m)?;
        r = minimize_from(path, metric, cfg)?;
        iterations += r.iterations;
    }
    r.iterations = iterations;
    Ok(r)
}

/// `Q(y)`: multi-start minimum of the geometric action from the attractor to `y`.
pub fn quasipotential<F: CoefficientField + ?Sized>(
    metric: &MetricField<'_, F>,
    domain: &Domain,
    y: &[f64],
    n: usize,
    cfg: &OptimizerConfig,
) -> Result<QuasipotentialResult> {
    if y.len() != domain.dim() || !(domain.contains(y) || domain.signed_distance(y) <= 1e-8) {
        return precondition("y must lie in the closure of the domain");
    }
    let a = domain.attractor();
    if y == a {
        return Ok(QuasipotentialResult {
            value: 0.0,
            path: DiscretePath::geometric(vec![a.to_vec(); n.max(1) + 1])?,
            iterations: 0,
            grad_norm: 0.0,
            decrement: 0.0,
            converged: true,
        });
    }
    let mut best: Option<QuasipotentialResult> = None;
    let levels = coarse_levels(n);
    for init in initial_paths(a, y, levels[0])? {
        let r = minimize_multilevel(init, &levels, metric, cfg)?;
        if best.as_ref().map_or(true, |b| better(&r, b)) {
            best = Some(r);
        }
    }
    Ok(best.unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanSample {
    pub point: Vec<f64>,
    pub param: f64,
    pub q: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryScan {
    pub samples: Vec<ScanSample>,
    /// Minimum of `Q` over the converged samples and the refined argmin.
    pub h: f64,
    pub argmin: Vec<f64>,
    /// Some boundary point failed to converge and was left out of `h`.
    pub any_failed: bool,
}

fn sample_order(a: &ScanSample, b: &ScanSample) -> Ordering {
    if a.q < b.q - TIE {
        Ordering::Less
    } else if a.q > b.q + TIE {
        Ordering::Greater
    } else {
        lexicographic(&a.point, &b.point)
    }
}

/// `H = min_{∂𝒟} Q`, from `n_boundary` samples refined by golden section on the boundary parameter (d = 2).
pub fn height<F, E>(metric: &MetricField<'_, F>, domain: &Domain, n_boundary: usize, n: usize, cfg: &OptimizerConfig, exec: &E) -> Result<BoundaryScan>
where
    F: CoefficientField + ?Sized,
    E: Executor,
{
    if n_boundary == 0 {
        return precondition("n_boundary must be positive");
    }
    let boundary = domain.boundary_sample(n_boundary)?;
    let eval = |point: &[f64], param: f64| -> Result<ScanSample> {
        let r = quasipotential(metric, domain, point, n, cfg)?;
        Ok(ScanSample {
            point: point.to_vec(),
            param,
            q: r.value,
            converged: r.converged,
            iterations: r.iterations,
        })
    };
    let mut samples: Vec<ScanSample> = exec
        .map_indexed(boundary.len(), |k| eval(&boundary[k].point, boundary[k].param))
        .into_iter()
        .collect::<Result<_>>()?;
    let any_failed = samples.iter().any(|s| !s.converged);
    let pool: Vec<&ScanSample> = samples.iter().filter(|s| s.converged).collect();
    if pool.is_empty() {
        return Err(Error::Precondition(String::from("no boundary point converged")));
    }
    let mut best = (*pool.iter().min_by(|a, b| sample_order(a, b)).unwrap()).clone();
    if domain.dim() == 2 && boundary.len() >= 3 {
        let w = 1.0 / boundary.len() as f64;
        let (mut lo, mut hi) = (best.param - w, best.param + w);
        let gr = 0.5 * (libm::sqrt(5.0) - 1.0);
        let at = |s: f64| -> Result<ScanSample> { eval(&domain.boundary_point_at(s)?.point, s - libm::floor(s)) };
        let mut c = at(hi - gr * (hi - lo))?;
        let mut d = at(lo + gr * (hi - lo))?;
        for _ in 0..20 {
            if c.q < d.q {
                hi = lo + gr * (hi - lo);
                d = c;
                c = at(hi - gr * (hi - lo))?;
            } else {
                lo = hi - gr * (hi - lo);
                c = d;
                d = at(lo + gr * (hi - lo))?;
            }
        }
        for cand in [c, d] {
            if cand.converged && sample_order(&cand, &best) == Ordering::Less {
                best = cand;
            }
        }
    }
    samples.sort_by(|a, b| a.param.total_cmp(&b.param));
    Ok(BoundaryScan {
        h: best.q,
        argmin: best.point,
        samples,
        any_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::field::FnField;
    use crate::presets::{ConstantDrift, DoubleWell, DoubleWellPotential, LinearDrift, MaierStein};
    use crate::sde::{integrate_flow, IntegratorConfig};

    const H: f64 = 0.245025;

    #[test]
    fn constant_path_at_attractor_is_free() {
        let f = DoubleWell::standard();
        let p = DiscretePath::finite_time_uniform(vec![vec![-1.0]; 11], 3.0).unwrap();
        assert_eq!(finite_time_action(&p, &MetricField::new(&f)).unwrap(), 0.0);
    }

    #[test]
    fn linear_path_in_zero_field() {
        let f = ConstantDrift { velocity: vec![0.0], sigma: 1.0 };
        let nodes = (0..=100).map(|k| vec![k as f64 / 100.0]).collect();
        let p = DiscretePath::finite_time_uniform(nodes, 1.0).unwrap();
        assert!((finite_time_action(&p, &MetricField::new(&f)).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn reversed_flow_path_costs_potential_difference() {
        // path solving f' = +V'(f) from just right of a; its action is V(-0.1) - V(-1)
        let rev = FnField::autonomous_additive(1, 1.0, |x, o| o[0] = x[0] * x[0] * x[0] - x[0]);
        let flow = integrate_flow(&rev, &[-1.0 + 1e-6], &IntegratorConfig::new(1e-3, 20.0, 1).unwrap()).unwrap();
        let mut nodes = Vec::new();
        let mut times = Vec::new();
        for i in 0..flow.len() {
            if flow.state(i)[0] > -0.1 {
                break;
            }
            nodes.push(flow.state(i).to_vec());
            times.push(flow.times[i]);
        }
        let p = DiscretePath::finite_time(nodes, times).unwrap();
        let s = finite_time_action(&p, &MetricField::new(&DoubleWell::standard())).unwrap();
        let end = p.end()[0];
        assert!((s - (DoubleWellPotential::eval(end) + 0.25)).abs() < 1e-4);
        assert!((s - H).abs() < 1e-2);
    }

    #[test]
    fn geometric_action_examples() {
        let zero = ConstantDrift { velocity: vec![0.0, 0.0], sigma: 1.0 };
        let p = DiscretePath::straight(&[0.0, 0.0], &[1.0, 2.0], 10).unwrap();
        assert_eq!(geometric_action(&p, &MetricField::new(&zero)).unwrap(), 0.0);
        let push = ConstantDrift { velocity: vec![1.0, 2.0], sigma: 1.0 };
        assert!(geometric_action(&p, &MetricField::new(&push)).unwrap().abs() < 1e-12);
        let dw = DiscretePath::straight(&[-1.0], &[-0.1], 200).unwrap();
        assert!((geometric_action(&dw, &MetricField::new(&DoubleWell::standard())).unwrap() - H).abs() < 5e-3);
    }

    #[test]
    fn singular_metric_is_reported() {
        let f = DoubleWell { sigma: 0.0 };
        let p = DiscretePath::straight(&[-1.0], &[-0.5], 4).unwrap();
        assert!(matches!(geometric_action(&p, &MetricField::new(&f)), Err(Error::SingularMetric { .. })));
    }

    #[test]
    fn reparametrize_equalises_chords() {
        let nodes = (0..=50).map(|k| {
            let s = (k as f64 / 50.0).powi(3);
            vec![libm::cos(2.0 * s), libm::sin(2.0 * s)]
        });
        let mut p = DiscretePath::geometric(nodes.collect()).unwrap();
        let (a, b) = (p.start().to_vec(), p.end().to_vec());
        p.reparametrize();
        assert!(p.chord_spread() < 1e-6);
        assert_eq!((p.start(), p.end()), (&a[..], &b[..]));
    }

    #[test]
    fn tiny_offset_has_tiny_quasipotential() {
        let f = DoubleWell::standard();
        let m = MetricField::new(&f);
        let r = minimize_geometric_action(&m, &[-1.0], &[-1.0 + 1e-6], 50, &OptimizerConfig::default()).unwrap();
        assert!(r.value <= 1e-4);
        assert!(minimize_geometric_action(&m, &[-1.0], &[-1.0], 50, &OptimizerConfig::default()).is_err());
    }

    #[test]
    fn double_well_quasipotential_values() {
        let f = DoubleWell::standard();
        let m = MetricField::new(&f);
        let dom = DoubleWell::domain();
        let cfg = OptimizerConfig::default();
        assert_eq!(quasipotential(&m, &dom, &[-1.0], 200, &cfg).unwrap().value, 0.0);
        let q1 = quasipotential(&m, &dom, &[-0.1], 200, &cfg).unwrap();
        assert!((q1.value - H).abs() < 1e-2 && q1.converged);
        let q2 = quasipotential(&m, &dom, &[-2.0], 200, &cfg).unwrap();
        assert!((q2.value - 2.25).abs() < 2e-2);
        assert!(quasipotential(&m, &dom, &[0.5], 200, &cfg).is_err());
    }

    #[test]
    fn height_of_double_well() {
        let f = DoubleWell::standard();
        let scan = height(&MetricField::new(&f), &DoubleWell::domain(), 2, 200, &OptimizerConfig::default(), &Sequential).unwrap();
        assert!((scan.h - H).abs() < 1e-2);
        assert_eq!(scan.argmin, vec![-0.1]);
        assert!(scan.samples.iter().all(|s| scan.h <= s.q));
    }

    #[test]
    fn symmetric_height_breaks_tie_to_smaller_point() {
        let f = LinearDrift { dim: 1, rate: 1.0, sigma: 1.0 };
        let dom = Domain::interval(-1.0, 1.0, 0.0).unwrap();
        let scan = height(&MetricField::new(&f), &dom, 2, 100, &OptimizerConfig::default(), &Sequential).unwrap();
        assert!((scan.h - 0.5).abs() < 1e-3);
        assert_eq!(scan.argmin, vec![-1.0]);
    }

    #[test]
    fn resampling_keeps_endpoints_and_equalizes_chords() {
        let p = DiscretePath::geometric(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let q = p.resampled(8).unwrap();
        assert_eq!(q.n_segments(), 8);
        assert_eq!(q.start(), p.start());
        assert_eq!(q.end(), p.end());
        assert!(q.chord_spread() < 0.3);
        assert_eq!(q.nodes[2], vec![1.0, 0.0]);
        assert_eq!(coarse_levels(200), vec![13, 25, 50, 100, 200]);
        assert_eq!(coarse_levels(10), vec![10]);
    }

    #[test]
    fn maier_stein_off_axis_point_converges() {
        let f = MaierStein { beta: 1.0 };
        let y = [-1.0 + 0.9 * libm::cos(2.9), 0.9 * libm::sin(2.9)];
        let r = quasipotential(&MetricField::new(&f), &MaierStein::domain(), &y, 100, &OptimizerConfig::default()).unwrap();
        let exact = MaierStein::potential(&y) + 0.25;
        assert!(r.converged, "grad {} after {}", r.grad_norm, r.iterations);
        assert!((r.value - exact).abs() < 1e-3, "{} vs {exact}", r.value);
    }

    #[test]
    fn maier_stein_gradient_case_to_saddle() {
        let f = MaierStein { beta: 1.0 };
        let r = quasipotential(&MetricField::new(&f), &MaierStein::domain(), &[-0.1, 0.0], 100, &OptimizerConfig::default()).unwrap();
        let exact = MaierStein::potential(&[-0.1, 0.0]) + 0.25;
        assert!((r.value - exact).abs() < 1e-2, "{} vs {exact}", r.value);
    }

    #[test]
    fn bowed_start_relaxes_toward_minimum() {
        let f = LinearDrift { dim: 2, rate: 1.0, sigma: 1.0 };
        let m = MetricField::new(&f);
        let inits = initial_paths(&[0.0, 0.0], &[0.5, 0.0], 40).unwrap();
        assert_eq!(inits.len(), 3);
        let cfg = OptimizerConfig { max_iters: 3000, ..OptimizerConfig::default() };
        let bow = minimize_from(inits[1].clone(), &m, &cfg).unwrap();
        let start = geometric_action(&inits[1], &m).unwrap();
        // V = |x|^2 / 2 gives Q(0.5, 0) = 0.125
        assert!(bow.value < start);
        assert!((bow.value - 0.125).abs() < 5e-3, "{}", bow.value);
    }

    #[test]
    fn time_parametrization_hits_total_time() {
        let f = DoubleWell::standard();
        let m = MetricField::new(&f);
        let p = DiscretePath::straight(&[-1.0], &[-0.1], 200).unwrap();
        for total in [2.0, 8.0, 32.0] {
            let tp = time_parametrize(&p, &m, total).unwrap();
            let Parametrization::FiniteTime { times } = &tp.parametrization else { unreachable!() };
            assert!((times.last().unwrap() - total).abs() < 1e-9);
            assert!(finite_time_action(&tp, &m).unwrap() >= geometric_action(&p, &m).unwrap() - 1e-9);
        }
    }
}
