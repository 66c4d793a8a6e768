//! Named presets resolved into fields, domains and (for the mean-field preset) kernels.

use quasiexit_core::mv::{MeanFieldDoubleWell, Pinned};
use quasiexit_core::perturb::{make_member, AppliesTo, Member, PerturbationSpec};
use quasiexit_core::presets::{DoubleWell, DoubleWellPotential, MaierStein};
use quasiexit_core::{CoefficientField, Domain};

use crate::config::{AppliesToName, DomainSpec, ExperimentConfig, PerturbationKindName, PresetName};
use crate::error::CliError;

/// The autonomous base field of a preset. For the mean-field preset this is `b^MV(·, δ_a)`.
#[derive(Debug, Clone)]
pub enum PresetField {
    DoubleWell(DoubleWell),
    MaierStein(MaierStein),
    MeanField(Pinned<MeanFieldDoubleWell>),
}

impl CoefficientField for PresetField {
    fn dim(&self) -> usize {
        match self {
            Self::DoubleWell(f) => f.dim(),
            Self::MaierStein(f) => f.dim(),
            Self::MeanField(f) => CoefficientField::dim(f),
        }
    }

    #[inline]
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Self::DoubleWell(f) => f.drift(t, x, out),
            Self::MaierStein(f) => f.drift(t, x, out),
            Self::MeanField(f) => f.drift(t, x, out),
        }
    }

    #[inline]
    fn diffusion(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Self::DoubleWell(f) => f.diffusion(t, x, out),
            Self::MaierStein(f) => f.diffusion(t, x, out),
            Self::MeanField(f) => f.diffusion(t, x, out),
        }
    }

    fn lipschitz_estimate(&self) -> Option<f64> {
        match self {
            Self::DoubleWell(f) => f.lipschitz_estimate(),
            _ => None,
        }
    }
}

pub struct Resolved {
    pub name: PresetName,
    pub field: PresetField,
    pub kernel: Option<MeanFieldDoubleWell>,
    pub domain: Domain,
    theta: f64,
    sigma: f64,
    gradient: bool,
}

fn bad(pointer: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

impl Resolved {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        let p = &cfg.preset_params;
        if !(p.sigma > 0.0 && p.sigma.is_finite()) {
            return Err(bad("/preset_params/sigma", "sigma must be positive"));
        }
        let a = cfg.attractor();
        let (field, kernel, default_domain, gradient) = match cfg.preset {
            PresetName::DoubleWell1d => (PresetField::DoubleWell(DoubleWell { sigma: p.sigma }), None, DoubleWell::domain(), true),
            PresetName::MaierStein2d => {
                if p.sigma != 1.0 {
                    return Err(bad("/preset_params/sigma", "maier_stein_2d uses sigma = Id"));
                }
                (PresetField::MaierStein(MaierStein { beta: p.beta }), None, MaierStein::domain(), p.beta == 1.0)
            }
            PresetName::MvMeanField1d => {
                let k = MeanFieldDoubleWell { theta: p.theta, sigma: p.sigma };
                (PresetField::MeanField(Pinned::at(k, &a)), Some(k), DoubleWell::domain(), true)
            }
        };
        let domain = match &cfg.domain {
            None => default_domain,
            Some(spec) => build_domain(spec, &a)?,
        };
        if domain.dim() != a.len() {
            return Err(bad("/domain", format!("domain dimension must be {}", a.len())));
        }
        Ok(Self {
            name: cfg.preset,
            field,
            kernel,
            domain,
            theta: p.theta,
            sigma: p.sigma,
            gradient,
        })
    }

    /// Potential `V` with `b = -∇V`, when the preset is of gradient type.
    pub fn potential(&self, x: &[f64]) -> Option<f64> {
        if !self.gradient {
            return None;
        }
        Some(match self.name {
            PresetName::DoubleWell1d => DoubleWellPotential::eval(x[0]),
            PresetName::MaierStein2d => MaierStein::potential(x),
            PresetName::MvMeanField1d => DoubleWellPotential::eval(x[0]) + 0.5 * self.theta * (x[0] + 1.0) * (x[0] + 1.0),
        })
    }

    /// `Q(y) = (V(y) - V(a)) / σ²` in the gradient case.
    pub fn analytic_quasipotential(&self, y: &[f64]) -> Option<f64> {
        let a = self.domain.attractor();
        Some((self.potential(y)? - self.potential(a)?) / (self.sigma * self.sigma))
    }

    /// `min` of the analytic quasipotential over a dense boundary sample.
    pub fn analytic_height(&self) -> Option<f64> {
        if !self.gradient {
            return None;
        }
        let n = if self.domain.dim() == 1 { 2 } else { 4096 };
        let pts = self.domain.boundary_sample(n).ok()?;
        pts.iter().filter_map(|b| self.analytic_quasipotential(&b.point)).reduce(f64::min)
    }

    /// Member of the perturbation class built from the config, or `None` without a perturbation block.
    pub fn member(&self, cfg: &ExperimentConfig) -> Result<Option<Member<PresetField>>, CliError> {
        let Some(p) = &cfg.perturbation else {
            return Ok(None);
        };
        let amplitude = p.amplitude.unwrap_or(cfg.kappa);
        let mut direction = p.direction.clone().unwrap_or_else(|| {
            let mut e = vec![0.0; self.field.dim()];
            e[0] = 1.0;
            e
        });
        if direction.len() != self.field.dim() {
            return Err(bad("/perturbation/direction", "direction dimension mismatch"));
        }
        if direction.iter().all(|v| *v == 0.0) {
            direction[0] = 1.0;
        }
        let applies = match p.applies_to {
            AppliesToName::Drift => AppliesTo::Drift,
            AppliesToName::Diffusion => AppliesTo::Diffusion,
            AppliesToName::Both => AppliesTo::Both,
        };
        let spec = match p.kind {
            PerturbationKindName::Oscillatory => PerturbationSpec::oscillatory(amplitude, p.frequency, direction, applies),
            PerturbationKindName::Decaying => PerturbationSpec::decaying(amplitude, p.rate, direction, applies),
            PerturbationKindName::BoundaryPush => PerturbationSpec::boundary_push(amplitude, direction, applies),
        }?;
        if !spec.admissible(cfg.kappa) {
            return Err(bad(
                "/perturbation/amplitude",
                format!("certificate {} exceeds kappa {}", spec.kappa_certificate, cfg.kappa),
            ));
        }
        Ok(Some(make_member(self.field.clone(), spec)?))
    }
}

fn build_domain(spec: &DomainSpec, a: &[f64]) -> Result<Domain, CliError> {
    let d = match spec {
        DomainSpec::Interval { lo, hi } => Domain::interval(*lo, *hi, a[0]),
        DomainSpec::Box { lo, hi } => Domain::boxed(lo.clone(), hi.clone(), a.to_vec()),
        DomainSpec::Ball { center, radius } => Domain::ball(center.clone(), *radius, a.to_vec()),
    };
    d.map_err(|e| bad("/domain", e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use quasiexit_core::{check_assumptions, ProbeConfig};

    #[test]
    fn every_preset_passes_assumptions() {
        for name in [PresetName::DoubleWell1d, PresetName::MaierStein2d, PresetName::MvMeanField1d] {
            let cfg = ExperimentConfig::new(name, 0.1);
            let r = Resolved::from_config(&cfg).unwrap();
            let rep = check_assumptions(&r.domain, &r.field, &ProbeConfig::for_dim(r.domain.dim())).unwrap();
            assert!(rep.pass, "{name:?}: {rep:?}");
        }
    }

    #[test]
    fn analytic_heights() {
        let dw = Resolved::from_config(&ExperimentConfig::new(PresetName::DoubleWell1d, 0.1)).unwrap();
        assert!((dw.analytic_height().unwrap() - 0.245025).abs() < 1e-12);
        let ms = Resolved::from_config(&ExperimentConfig::new(PresetName::MaierStein2d, 0.1)).unwrap();
        assert!((ms.analytic_height().unwrap() - 0.245025).abs() < 1e-6);
        // frozen mean-field well: V(-0.1) - V(-1) + θ/2 · 0.81
        let mv = Resolved::from_config(&ExperimentConfig::new(PresetName::MvMeanField1d, 0.1)).unwrap();
        assert!((mv.analytic_height().unwrap() - (0.245025 + 0.2025)).abs() < 1e-12);
    }
}
