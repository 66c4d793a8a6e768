//! Subcommand bodies. Each writes its CSV rows, a `summary.json` and `config.json` into the output directory.

use std::path::Path;

use serde::Serialize;

use quasiexit_core::action::{self, BoundaryScan, MetricField};
use quasiexit_core::mv::{self, LawMonitor, MVConstants, PsiPath, XiPsiReport};
use quasiexit_core::perturb::{self, make_member, AppliesTo, CouplingEstimate, PerturbationSpec};
use quasiexit_core::stats::{self, CycleRecord, ExitSummary, Interval, KramersFit, KramersPoint, LocationHistogram, SummarySpec};
use quasiexit_core::{check_assumptions, AssumptionReport, ExitRecord, Executor, IntegratorConfig, ProbeConfig, RngStream};

use crate::artifacts::{coord_columns, fmt_f64, ArtifactWriter};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::preset::Resolved;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    CheckAssumptions,
    Quasipotential,
    ExitStats,
    Couple,
    Cycles,
    Mv,
    Kramers,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::CheckAssumptions => "check-assumptions",
            Self::Quasipotential => "quasipotential",
            Self::ExitStats => "exit-stats",
            Self::Couple => "couple",
            Self::Cycles => "cycles",
            Self::Mv => "mv",
            Self::Kramers => "kramers",
        }
    }
}

/// Result of a subcommand: `passed = false` maps to the validation exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    fn ok(lines: Vec<String>) -> Self {
        Self { passed: true, lines }
    }
}

pub fn run<E: Executor>(cmd: Command, cfg: &ExperimentConfig, out: &Path, exec: &E) -> Result<Outcome, CliError> {
    let resolved = Resolved::from_config(cfg)?;
    let mut w = ArtifactWriter::new(out, cfg)?;
    w.write_config(cfg)?;
    match cmd {
        Command::CheckAssumptions => cmd_check(cfg, &resolved, &mut w),
        Command::Quasipotential => cmd_quasipotential(cfg, &resolved, &mut w, exec),
        Command::ExitStats => cmd_exit_stats(cfg, &resolved, &mut w, exec, false),
        Command::Kramers => cmd_exit_stats(cfg, &resolved, &mut w, exec, true),
        Command::Couple => cmd_couple(cfg, &resolved, &mut w, exec),
        Command::Cycles => cmd_cycles(cfg, &resolved, &mut w, exec),
        Command::Mv => cmd_mv(cfg, &resolved, &mut w, exec),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightSource {
    Config,
    Analytic,
    Numeric,
}

/// `H` from the config, the analytic gradient identity, or a numeric boundary scan, in that order.
pub fn resolve_height<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, exec: &E) -> Result<(f64, HeightSource), CliError> {
    if let Some(h) = cfg.h {
        return Ok((h, HeightSource::Config));
    }
    if let Some(h) = r.analytic_height() {
        return Ok((h, HeightSource::Analytic));
    }
    let scan = numeric_scan(cfg, r, exec)?;
    Ok((scan.h, HeightSource::Numeric))
}

fn numeric_scan<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, exec: &E) -> Result<BoundaryScan, CliError> {
    let metric = MetricField::new(&r.field);
    let nb = cfg.action.n_boundary.unwrap_or(quasiexit_core::domain::default_boundary_count(r.domain.dim()));
    Ok(action::height(&metric, &r.domain, nb, cfg.action.nodes, &cfg.action.optimizer(), exec)?)
}

fn x0_of(cfg: &ExperimentConfig) -> Vec<f64> {
    cfg.x0.clone().unwrap_or_else(|| cfg.attractor())
}

fn horizon_for(cfg: &ExperimentConfig, h: f64, eps: f64) -> f64 {
    cfg.horizon.unwrap_or_else(|| stats::default_horizon(h, cfg.eta, eps))
}

// ---------------------------------------------------------------- check-assumptions

#[derive(Serialize)]
struct CheckResult<'a> {
    report: &'a AssumptionReport,
    constants: Option<MVConstants>,
}

fn cmd_check(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter) -> Result<Outcome, CliError> {
    let report = check_assumptions(&r.domain, &r.field, &ProbeConfig::for_dim(r.domain.dim()))?;
    let constants = match r.kernel {
        Some(_) => Some(mv_constants(cfg)?),
        None => None,
    };
    let rows = [
        ("flow_converges", "worst_distance", report.a1_worst_distance, report.a1_flow_converges),
        ("inward_drift", "min_inward_margin", report.a2_min_inward_margin, report.a2_min_inward_margin > 0.0),
        ("stable_attractor", "jacobian_eigen_max", report.a3_jacobian_eigen_max, report.a3_jacobian_eigen_max < 0.0),
        ("nondegenerate_noise", "sigma_min", report.a4_sigma_min, report.a4_sigma_min > 0.0),
    ]
    .map(|(check, quantity, v, ok)| vec![check.to_string(), quantity.to_string(), fmt_f64(v), ok.to_string()]);
    let header = ["check", "quantity", "value", "pass"].map(String::from);
    w.write_csv("assumptions.csv", &header, rows)?;
    w.write_json("summary.json", &CheckResult { report: &report, constants })?;
    Ok(Outcome {
        passed: report.pass,
        lines: vec![format!(
            "assumptions {}: inward margin {:.4e}, flow distance {:.3e}, sigma in [{:.3}, {:.3}]",
            if report.pass { "pass" } else { "FAIL" },
            report.a2_min_inward_margin,
            report.a1_worst_distance,
            report.a4_sigma_min,
            report.a4_sigma_max
        )],
    })
}

// ---------------------------------------------------------------- quasipotential

#[derive(Serialize)]
struct TargetValue {
    y: Vec<f64>,
    q: f64,
    converged: bool,
    iterations: usize,
    analytic: Option<f64>,
}

#[derive(Serialize)]
struct QuasipotentialSummary {
    h: f64,
    argmin: Vec<f64>,
    any_failed: bool,
    analytic_h: Option<f64>,
    nodes: usize,
    n_boundary: usize,
    targets: Vec<TargetValue>,
}

fn cmd_quasipotential<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter, exec: &E) -> Result<Outcome, CliError> {
    let metric = MetricField::new(&r.field);
    let opt = cfg.action.optimizer();
    let scan = numeric_scan(cfg, r, exec)?;
    let targets: Vec<TargetValue> = exec
        .map_indexed(cfg.action.targets.len(), |k| {
            let y = &cfg.action.targets[k];
            action::quasipotential(&metric, &r.domain, y, cfg.action.nodes, &opt).map(|q| TargetValue {
                y: y.clone(),
                q: q.value,
                converged: q.converged,
                iterations: q.iterations,
                analytic: r.analytic_quasipotential(y),
            })
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let d = r.domain.dim();
    let mut header = coord_columns("y", d);
    header.extend(["Q", "converged", "iterations"].map(String::from));
    let rows = scan
        .samples
        .iter()
        .map(|s| (&s.point, s.q, s.converged, s.iterations))
        .chain(targets.iter().map(|t| (&t.y, t.q, t.converged, t.iterations)))
        .map(|(y, q, c, it)| {
            let mut row: Vec<String> = y.iter().map(|v| fmt_f64(*v)).collect();
            row.extend([fmt_f64(q), c.to_string(), it.to_string()]);
            row
        })
        .collect::<Vec<_>>();
    w.write_csv("quasipotential.csv", &header, rows)?;
    let summary = QuasipotentialSummary {
        h: scan.h,
        argmin: scan.argmin.clone(),
        any_failed: scan.any_failed,
        analytic_h: r.analytic_height(),
        nodes: cfg.action.nodes,
        n_boundary: scan.samples.len(),
        targets,
    };
    w.write_json("summary.json", &summary)?;
    let mut line = format!("H = {:.6} at {:?}", scan.h, scan.argmin);
    if let Some(a) = summary.analytic_h {
        line.push_str(&format!(" (analytic {a:.6})"));
    }
    Ok(Outcome {
        passed: !scan.any_failed,
        lines: vec![line],
    })
}

// ---------------------------------------------------------------- exit-stats / kramers

#[derive(Serialize)]
struct EpsRun {
    eps: f64,
    horizon: f64,
    label: String,
    summary: ExitSummary,
}

#[derive(Serialize)]
struct ExitStatsSummary {
    h: f64,
    h_source: HeightSource,
    eta: f64,
    kappa: f64,
    perturbed: bool,
    runs: Vec<EpsRun>,
    fit: Option<KramersFit>,
}

/// Exit records and their summary for one ε, using the perturbation member when configured.
pub fn exit_run<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, h: f64, exec: &E) -> Result<(Vec<ExitRecord>, ExitSummary, f64), CliError> {
    let eps = cfg.single_eps();
    let horizon = horizon_for(cfg, h, eps);
    let ic = IntegratorConfig::new(cfg.dt, horizon, cfg.store_every)?;
    let x0 = x0_of(cfg);
    let label = cfg.stream_label(eps);
    let records = match r.member(cfg)? {
        Some(m) => stats::run_exit_mc(&m, &r.domain, eps, &x0, cfg.n_replicates, &ic, cfg.master_seed, &label, exec)?,
        None => stats::run_exit_mc(&r.field, &r.domain, eps, &x0, cfg.n_replicates, &ic, cfg.master_seed, &label, exec)?,
    };
    let summary = summarize_records(cfg, r, h, &records)?;
    Ok((records, summary, horizon))
}

fn summarize_records(cfg: &ExperimentConfig, r: &Resolved, h: f64, records: &[ExitRecord]) -> Result<ExitSummary, CliError> {
    let mut spec = SummarySpec::new(cfg.single_eps());
    spec.kappa = cfg.kappa;
    spec.window = Some((h, cfg.eta));
    spec.domain = Some(&r.domain);
    spec.n_bins = cfg.histogram_bins;
    spec.n_boot = cfg.bootstrap_resamples;
    spec.boot_seed = cfg.master_seed;
    Ok(stats::summarize(records, &spec)?)
}

fn write_exits(w: &mut ArtifactWriter, name: &str, d: usize, records: &[ExitRecord]) -> Result<(), CliError> {
    let mut header: Vec<String> = ["replicate_id", "tau", "censored"].map(String::from).to_vec();
    header.extend(coord_columns("exit_x", d));
    let rows = records.iter().map(|rec| {
        let mut row = vec![rec.replicate_id.to_string(), fmt_f64(rec.tau), (!rec.exited()).to_string()];
        match &rec.exit_point {
            Some(p) => row.extend(p.iter().map(|v| fmt_f64(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), d)),
        }
        row
    });
    w.write_csv(name, &header, rows)?;
    Ok(())
}

fn write_histogram(w: &mut ArtifactWriter, name: &str, d: usize, hist: &LocationHistogram) -> Result<(), CliError> {
    let mut header = coord_columns("bin_lo", d);
    header.extend(coord_columns("bin_hi", d));
    header.push("count".into());
    let rows = hist.bins.iter().map(|b| {
        let mut row: Vec<String> = b.lo.iter().chain(&b.hi).map(|v| fmt_f64(*v)).collect();
        row.push(b.count.to_string());
        row
    });
    w.write_csv(name, &header, rows)?;
    Ok(())
}

fn cmd_exit_stats<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter, exec: &E, fit: bool) -> Result<Outcome, CliError> {
    let (h, h_source) = resolve_height(cfg, r, exec)?;
    let d = r.domain.dim();
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for sub in cfg.fan_out() {
        let eps = sub.single_eps();
        let (records, summary, horizon) = exit_run(&sub, r, h, exec)?;
        let tag = fmt_f64(eps);
        write_exits(w, &format!("exits_eps{tag}.csv"), d, &records)?;
        if let Some(hist) = &summary.histogram {
            write_histogram(w, &format!("histogram_eps{tag}.csv"), d, hist)?;
        }
        let b = summary.bracket.as_ref().expect("window set");
        lines.push(format!(
            "eps {tag}: mean tau {:.4} [{:.4}, {:.4}], censored {}, bracket {:.3} [{:.3}, {:.3}]",
            summary.mean_tau, summary.mean_ci.lo, summary.mean_ci.hi, summary.n_censored, b.prob, b.ci.lo, b.ci.hi
        ));
        runs.push(EpsRun {
            eps,
            horizon,
            label: sub.stream_label(eps),
            summary,
        });
    }
    let fit = if fit {
        let points: Vec<KramersPoint> = runs.iter().map(|r| KramersPoint::from(&r.summary)).collect();
        let f = stats::kramers_fit(&points)?;
        let header = ["eps", "mean_tau", "y", "ci_lo", "ci_hi"].map(String::from);
        let rows = points.iter().zip(&f.y).map(|(p, y)| {
            vec![fmt_f64(p.eps), fmt_f64(p.mean_tau), fmt_f64(*y), fmt_f64(p.ci.lo), fmt_f64(p.ci.hi)]
        });
        w.write_csv("kramers.csv", &header, rows)?;
        lines.push(format!("H_hat = {:.5} (H = {:.5}), slope {:.4}", f.h_hat, h, f.slope));
        Some(f)
    } else {
        None
    };
    let summary = ExitStatsSummary {
        h,
        h_source,
        eta: cfg.eta,
        kappa: cfg.kappa,
        perturbed: cfg.perturbation.is_some(),
        runs,
        fit,
    };
    w.write_json("summary.json", &summary)?;
    Ok(Outcome::ok(lines))
}

// ---------------------------------------------------------------- couple

#[derive(Serialize)]
struct CoupleRun {
    eps: f64,
    estimate: CouplingEstimate,
}

#[derive(Serialize)]
struct CoupleSummary {
    kappa: f64,
    delta: f64,
    t_end: f64,
    x0: Vec<f64>,
    runs: Vec<CoupleRun>,
}

/// Coupling estimate at one ε; without a perturbation block the member is the zero perturbation.
pub fn couple_run<E: Executor>(
    cfg: &ExperimentConfig,
    r: &Resolved,
    exec: &E,
) -> Result<(CouplingEstimate, Vec<perturb::CouplingResult>), CliError> {
    let eps = cfg.single_eps();
    let member = match r.member(cfg)? {
        Some(m) => m,
        None => {
            let mut e1 = vec![0.0; r.domain.dim()];
            e1[0] = 1.0;
            make_member(r.field.clone(), PerturbationSpec::boundary_push(0.0, e1, AppliesTo::Both)?)?
        }
    };
    let x0 = cfg.coupling.x0.clone().unwrap_or_else(|| x0_of(cfg));
    let ic = IntegratorConfig::new(cfg.dt, cfg.coupling.t_end, 1)?;
    Ok(perturb::coupling_probability(
        &r.field,
        &member,
        &x0,
        eps,
        cfg.coupling.t_end,
        cfg.coupling.delta,
        &ic,
        cfg.n_replicates,
        cfg.master_seed,
        &format!("{}:couple", cfg.stream_label(eps)),
        exec,
    )?)
}

fn cmd_couple<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter, exec: &E) -> Result<Outcome, CliError> {
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for sub in cfg.fan_out() {
        let eps = sub.single_eps();
        let (est, results) = couple_run(&sub, r, exec)?;
        let header = ["replicate_id", "sup_deviation", "exceeded"].map(String::from);
        let rows = results
            .iter()
            .enumerate()
            .map(|(i, c)| vec![i.to_string(), fmt_f64(c.sup_deviation), c.exceeded.to_string()]);
        w.write_csv(&format!("coupling_eps{}.csv", fmt_f64(eps)), &header, rows)?;
        lines.push(format!(
            "eps {}: P(sup|X-Z| > {}) = {:.4} +- {:.4}",
            fmt_f64(eps),
            cfg.coupling.delta,
            est.prob,
            est.std_error
        ));
        runs.push(CoupleRun { eps, estimate: est });
    }
    w.write_json(
        "summary.json",
        &CoupleSummary {
            kappa: cfg.kappa,
            delta: cfg.coupling.delta,
            t_end: cfg.coupling.t_end,
            x0: cfg.coupling.x0.clone().unwrap_or_else(|| x0_of(cfg)),
            runs,
        },
    )?;
    Ok(Outcome::ok(lines))
}

// ---------------------------------------------------------------- cycles

#[derive(Debug, Clone, Serialize)]
pub struct CyclesRun {
    pub eps: f64,
    pub rho: f64,
    pub horizon: f64,
    pub per_cycle_exit_probability: f64,
    pub sphere_exits: usize,
    pub sphere_trials: usize,
    pub std_error: f64,
    pub ci: Interval,
    pub n_exited: usize,
    pub all_exits_odd: bool,
}

#[derive(Serialize)]
struct CyclesSummary {
    h: f64,
    runs: Vec<CyclesRun>,
}

/// θ-cycle records of `n_replicates` trajectories at one ε.
pub fn cycles_run<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, h: f64, exec: &E) -> Result<(Vec<CycleRecord>, CyclesRun), CliError> {
    let eps = cfg.single_eps();
    let rho = cfg.cycles.rho.unwrap_or_else(|| stats::default_cycle_rho(&r.domain));
    let horizon = horizon_for(cfg, h, eps);
    let ic = IntegratorConfig::new(cfg.dt, horizon, 1)?;
    let x0 = x0_of(cfg);
    let label = format!("{}:cycles", cfg.stream_label(eps));
    let member = r.member(cfg)?;
    let records: Vec<CycleRecord> = exec
        .map_indexed(cfg.n_replicates, |k| {
            let mut s = RngStream::for_replicate(cfg.master_seed, &label, k as u64);
            match &member {
                Some(m) => stats::theta_cycles(m, &r.domain, rho, eps, &x0, &ic, &mut s),
                None => stats::theta_cycles(&r.field, &r.domain, rho, eps, &x0, &ic, &mut s),
            }
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
    let (p, exits, trials, ci) = stats::per_cycle_exit_probability(&records);
    let run = CyclesRun {
        eps,
        rho,
        horizon,
        per_cycle_exit_probability: p,
        sphere_exits: exits,
        sphere_trials: trials,
        std_error: if trials > 0 { (p * (1.0 - p) / trials as f64).sqrt() } else { 0.0 },
        ci,
        n_exited: records.iter().filter(|c| c.exit_index.is_some()).count(),
        all_exits_odd: records.iter().all(|c| c.exit_index.is_none_or(|i| i % 2 == 1)),
    };
    Ok((records, run))
}

fn cmd_cycles<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter, exec: &E) -> Result<Outcome, CliError> {
    let (h, _) = resolve_height(cfg, r, exec)?;
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for sub in cfg.fan_out() {
        let (records, run) = cycles_run(&sub, r, h, exec)?;
        let header = ["replicate_id", "exit_index", "tau", "cycles_completed", "sphere_trials", "sphere_exits"].map(String::from);
        let rows = records.iter().enumerate().map(|(i, c)| {
            vec![
                i.to_string(),
                c.exit_index.map(|v| v.to_string()).unwrap_or_default(),
                c.tau().map(fmt_f64).unwrap_or_default(),
                c.cycles_completed.to_string(),
                c.sphere_trials.to_string(),
                c.sphere_exits.to_string(),
            ]
        });
        w.write_csv(&format!("cycles_eps{}.csv", fmt_f64(run.eps)), &header, rows)?;
        lines.push(format!(
            "eps {}: per-cycle exit probability {:.4} ({} / {}), exits at odd index: {}",
            fmt_f64(run.eps),
            run.per_cycle_exit_probability,
            run.sphere_exits,
            run.sphere_trials,
            run.all_exits_odd
        ));
        runs.push(run);
    }
    w.write_json("summary.json", &CyclesSummary { h, runs })?;
    Ok(Outcome::ok(lines))
}

// ---------------------------------------------------------------- mv

/// Constants of the law-control argument from the `mv` block.
pub fn mv_constants(cfg: &ExperimentConfig) -> Result<MVConstants, CliError> {
    let m = &cfg.mv;
    let need = |v: Option<f64>, key: &str| {
        v.ok_or_else(|| CliError::Config {
            pointer: format!("/mv/{key}"),
            message: "required for this preset".into(),
        })
    };
    Ok(mv::derive_constants(
        need(m.k_tilde, "k_tilde")?,
        need(m.k_tilde1, "k_tilde1")?,
        need(m.c_tilde1, "c_tilde1")?,
        m.kappa,
        m.r,
        m.m_bound,
        m.p,
    )?)
}

#[derive(Debug, Clone, Serialize)]
pub struct MvRun {
    pub eps: f64,
    pub n_particles: usize,
    pub dt: f64,
    pub constants: MVConstants,
    pub sup_w2: f64,
    pub s_kappa: Option<f64>,
    pub alpha: f64,
    pub psi_star: f64,
    pub psi_star_closed: f64,
    pub xi_psi: XiPsiReport,
    /// `e^{2(H + δ′)/ε}` with `H` of the frozen field.
    pub survival_window: f64,
    pub monitor_covers_window: bool,
    pub exit_summary: Option<ExitSummary>,
}

#[derive(Serialize)]
struct MvSummary {
    h: f64,
    h_source: HeightSource,
    runs: Vec<MvRun>,
}

/// Law monitor, ψ comparison and (optionally) the particle exit run at one ε.
pub fn mv_run<E: Executor>(
    cfg: &ExperimentConfig,
    r: &Resolved,
    h: f64,
    exec: &E,
) -> Result<(LawMonitor, PsiPath, Option<Vec<ExitRecord>>, MvRun), CliError> {
    let Some(kernel) = r.kernel else {
        return Err(CliError::Validation("the mv subcommand needs the mv_mean_field_1d preset".into()));
    };
    let eps = cfg.single_eps();
    let m = &cfg.mv;
    let constants = mv_constants(cfg)?;
    let a = r.domain.attractor().to_vec();
    let stream = RngStream::for_replicate(cfg.master_seed, &format!("{}:mv", cfg.stream_label(eps)), 0);
    let mcfg = IntegratorConfig::new(m.dt, m.horizon, m.monitor_every)?;
    let monitor = mv::monitor_law(&kernel, &a, m.n_particles, eps, &constants, &mcfg, &stream, exec)?;
    let alpha = m.alpha.unwrap_or(eps);
    let psi = mv::solve_psi(&constants, alpha, m.psi0.unwrap_or(0.0), &mcfg)?;
    let report = mv::xi_vs_psi_check(&monitor, &psi)?;
    let exits = if m.run_exit {
        let horizon = m.exit_horizon.unwrap_or_else(|| stats::default_horizon(h, cfg.eta, eps));
        let ecfg = IntegratorConfig::new(m.dt, horizon, 1)?;
        let estream = RngStream::for_replicate(cfg.master_seed, &format!("{}:mv-exit", cfg.stream_label(eps)), 0);
        Some(mv::mv_exit_experiment(&kernel, &r.domain, m.exit_particles, eps, &ecfg, &estream, exec)?)
    } else {
        None
    };
    let exit_summary = match &exits {
        Some(rec) => Some(summarize_records(cfg, r, h, rec)?),
        None => None,
    };
    let window = (2.0 * (h + m.delta_prime) / eps).exp();
    let run = MvRun {
        eps,
        n_particles: m.n_particles,
        dt: m.dt,
        constants,
        sup_w2: monitor.sup_w2(),
        s_kappa: monitor.s_kappa,
        alpha,
        psi_star: psi.psi_star,
        psi_star_closed: psi.psi_star_closed,
        xi_psi: report,
        survival_window: window,
        monitor_covers_window: monitor.s_kappa.is_none() && m.horizon >= window,
        exit_summary,
    };
    Ok((monitor, psi, exits, run))
}

fn cmd_mv<E: Executor>(cfg: &ExperimentConfig, r: &Resolved, w: &mut ArtifactWriter, exec: &E) -> Result<Outcome, CliError> {
    let (h, h_source) = resolve_height(cfg, r, exec)?;
    let mut runs = Vec::new();
    let mut lines = Vec::new();
    for sub in cfg.fan_out() {
        let (monitor, _psi, exits, run) = mv_run(&sub, r, h, exec)?;
        let tag = fmt_f64(run.eps);
        let header = ["t", "w2", "threshold", "crossed"].map(String::from);
        let rows = monitor.times.iter().zip(&monitor.w2_values).map(|(t, v)| {
            vec![fmt_f64(*t), fmt_f64(*v), fmt_f64(monitor.threshold), (*v >= monitor.threshold).to_string()]
        });
        w.write_csv(&format!("monitor_eps{tag}.csv"), &header, rows)?;
        if let Some(rec) = &exits {
            write_exits(w, &format!("mv_exits_eps{tag}.csv"), r.domain.dim(), rec)?;
        }
        lines.push(format!(
            "eps {tag}: sup W2 = {:.4} (threshold {:.4}), S_kappa {}, xi <= psi on {:.1}% of the grid",
            run.sup_w2,
            monitor.threshold,
            run.s_kappa.map(fmt_f64).unwrap_or_else(|| "censored".into()),
            100.0 * run.xi_psi.pass_fraction
        ));
        runs.push(run);
    }
    w.write_json("summary.json", &MvSummary { h, h_source, runs })?;
    Ok(Outcome::ok(lines))
}

