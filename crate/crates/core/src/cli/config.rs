//! The JSON run configuration.
//!
//! Every struct rejects unknown keys, and [`RunConfig::validate`] range-checks
//! all numbers before anything runs.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expmap::ExpMethod;
use crate::homogeneous::{QuotientKind, QuotientSpec};
use crate::integrators::{IntegratorScheme, SchemeKind, OMELYAN_LAMBDA};
use crate::lie::{build_group, Algebra, GroupFamily, MetricData};
use crate::potentials::{
    vmf_sphere_lift, ConstantPotential, FrobeniusLogDetPotential, GaugePotential, Potential,
    QuadraticTracePotential, VmfLift,
};

/// Version of the config and output formats.
pub const SCHEMA_VERSION: u32 = 1;

pub const MAX_MATRIX_SIZE: usize = 16;
pub const MAX_CHAINS: usize = 256;
pub const MAX_STEPS: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub space: SpaceConfig,
    #[serde(default)]
    pub metric: MetricChoice,
    pub potential: PotentialConfig,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub exp_method: ExpMethod,
    #[serde(default = "one")]
    pub chains: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub thinning: usize,
    pub seed: u64,
    #[serde(default)]
    pub retraction_cadence: usize,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SpaceConfig {
    Group { family: GroupFamily, n: usize },
    Sphere { n: usize },
    Stiefel { n: usize, k: usize },
}

impl SpaceConfig {
    pub fn n(&self) -> usize {
        match *self {
            SpaceConfig::Group { n, .. } | SpaceConfig::Sphere { n } | SpaceConfig::Stiefel { n, .. } => n,
        }
    }

    pub fn quotient_kind(&self) -> Option<QuotientKind> {
        match *self {
            SpaceConfig::Group { .. } => None,
            SpaceConfig::Sphere { .. } => Some(QuotientKind::Sphere),
            SpaceConfig::Stiefel { k, .. } => Some(QuotientKind::Stiefel { k }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MetricChoice {
    #[default]
    TraceForm,
    NegKilling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialConfig {
    /// `V ≡ 0`: Haar measure.
    Haar,
    Gauge { u: Vec<Vec<f64>>, beta: f64 },
    QuadraticTrace { u: Vec<Vec<f64>>, beta: f64 },
    FrobeniusLogDet {
        #[serde(default)]
        center: Option<Vec<Vec<f64>>>,
        beta: f64,
        alpha: f64,
    },
    /// von Mises–Fisher on the sphere, lifted to `SO(n)`.
    Vmf { mu: Vec<f64>, kappa: f64 },
    /// Matrix von Mises–Fisher on a Stiefel manifold; `f` is `n × k` by rows.
    VmfStiefel { f: Vec<Vec<f64>> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Leapfrog,
    Omelyan,
    ForceGradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub scheme: SchemeName,
    pub step_size: f64,
    pub n_steps: usize,
    /// Omelyan parameter; defaults to the minimum-norm value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl IntegratorConfig {
    pub fn kind(&self) -> SchemeKind {
        match self.scheme {
            SchemeName::Leapfrog => SchemeKind::Leapfrog,
            SchemeName::Omelyan => SchemeKind::Omelyan {
                lambda: self.lambda.unwrap_or(OMELYAN_LAMBDA),
            },
            SchemeName::ForceGradient => SchemeKind::ForceGradient,
        }
    }

    pub fn scheme(&self) -> Result<IntegratorScheme> {
        IntegratorScheme::new(self.kind(), self.step_size, self.n_steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    #[default]
    Jsonl,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub format: SampleFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    /// A run whose rejection rate exceeds this in any chain exits with a
    /// dedicated status.
    #[serde(default = "default_ceiling")]
    pub max_rejection_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_scan: Option<EnergyScanConfig>,
}

fn default_ceiling() -> f64 {
    1.0
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            max_rejection_rate: default_ceiling(),
            energy_scan: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyScanConfig {
    pub step_sizes: Vec<f64>,
    #[serde(default = "default_scan_trajectories")]
    pub trajectories: usize,
    #[serde(default = "default_scan_time")]
    pub trajectory_time: f64,
}

fn default_scan_trajectories() -> usize {
    100
}

fn default_scan_time() -> f64 {
    1.0
}

/// What a run writes alongside the samples: the tool version and the fully
/// resolved config. A manifest is itself accepted as `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub schema_version: u32,
    pub config: RunConfig,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn check_finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(config_error(format!("{name} must be finite")))
    }
}

fn matrix(name: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(config_error(format!("{name} must be {nrows} × {ncols}")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(config_error(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| config_error(e.to_string()))?;
        let is_manifest = value.get("config").is_some() && value.get("version").is_some();
        let config = if is_manifest {
            serde_json::from_value::<Manifest>(value).map_err(|e| config_error(e.to_string()))?.config
        } else {
            serde_json::from_value::<RunConfig>(value).map_err(|e| config_error(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let n = self.space.n();
        if !(2..=MAX_MATRIX_SIZE).contains(&n) {
            return Err(config_error(format!("n must lie in [2, {MAX_MATRIX_SIZE}]")));
        }
        if let SpaceConfig::Stiefel { k, .. } = self.space {
            if k == 0 || k >= n {
                return Err(config_error("stiefel needs 1 ≤ k < n"));
            }
        }
        if self.space.quotient_kind().is_some() && self.metric != MetricChoice::TraceForm {
            return Err(config_error("quotients use the trace-form metric"));
        }
        if self.exp_method != ExpMethod::ScalingSquaring {
            let is_so = matches!(
                self.space,
                SpaceConfig::Group {
                    family: GroupFamily::SpecialOrthogonal,
                    ..
                } | SpaceConfig::Sphere { .. }
                    | SpaceConfig::Stiefel { .. }
            );
            if !is_so {
                return Err(config_error("Padé exponentials are only exact on SO(n)"));
            }
            if let ExpMethod::PadeDiagonal(m) = self.exp_method {
                if !(1..=13).contains(&m) {
                    return Err(config_error("Padé degree must lie in [1, 13]"));
                }
            }
        }
        if self.chains == 0 || self.chains > MAX_CHAINS {
            return Err(config_error(format!("chains must lie in [1, {MAX_CHAINS}]")));
        }
        if self.n_samples == 0 {
            return Err(config_error("n_samples must be positive"));
        }
        if self.thinning == 0 {
            return Err(config_error("thinning must be at least 1"));
        }
        let it = &self.integrator;
        if it.n_steps == 0 || it.n_steps > MAX_STEPS {
            return Err(config_error(format!("n_steps must lie in [1, {MAX_STEPS}]")));
        }
        if it.lambda.is_some() && it.scheme != SchemeName::Omelyan {
            return Err(config_error("lambda applies to the omelyan scheme only"));
        }
        it.scheme()?;
        let d = &self.diagnostics;
        if !(0.0..=1.0).contains(&d.max_rejection_rate) {
            return Err(config_error("max_rejection_rate must lie in [0, 1]"));
        }
        if let Some(scan) = &d.energy_scan {
            if scan.step_sizes.len() < 3 {
                return Err(config_error("energy_scan needs at least 3 step sizes"));
            }
            if scan.step_sizes.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
                return Err(config_error("energy_scan step sizes must be positive"));
            }
            let hmax = scan.step_sizes.iter().cloned().fold(f64::MIN, f64::max);
            let hmin = scan.step_sizes.iter().cloned().fold(f64::MAX, f64::min);
            if hmax / hmin < 4.0 {
                return Err(config_error("energy_scan step sizes must span a factor of 4"));
            }
            if scan.trajectories == 0 {
                return Err(config_error("energy_scan needs at least one trajectory"));
            }
            if !(scan.trajectory_time > 0.0) || !scan.trajectory_time.is_finite() {
                return Err(config_error("energy_scan trajectory_time must be positive"));
            }
        }
        self.build_potential()?;
        Ok(())
    }

    /// Matrix size of the group.
    pub fn n(&self) -> usize {
        self.space.n()
    }

    pub fn build_algebra(&self) -> Result<Algebra> {
        let (family, n) = match self.space {
            SpaceConfig::Group { family, n } => (family, n),
            SpaceConfig::Sphere { n } | SpaceConfig::Stiefel { n, .. } => (GroupFamily::SpecialOrthogonal, n),
        };
        let group = build_group(family, n)?;
        let metric = match self.metric {
            MetricChoice::TraceForm => MetricData::trace_form(&group)?,
            MetricChoice::NegKilling => MetricData::neg_killing(&group)
                .map_err(|e| config_error(format!("negative Killing form unavailable: {e}")))?,
        };
        Algebra::new(group, metric)
    }

    pub fn build_quotient(&self) -> Result<Option<QuotientSpec>> {
        self.space
            .quotient_kind()
            .map(|kind| QuotientSpec::new(kind, self.n()))
            .transpose()
    }

    pub fn build_potential(&self) -> Result<Box<dyn Potential>> {
        let n = self.n();
        let wrap = |e: Error| config_error(format!("potential: {e}"));
        Ok(match &self.potential {
            PotentialConfig::Haar => Box::new(ConstantPotential::default()),
            PotentialConfig::Gauge { u, beta } => {
                check_finite("beta", *beta)?;
                Box::new(GaugePotential::new(matrix("u", u, n, n)?, *beta).map_err(wrap)?)
            }
            PotentialConfig::QuadraticTrace { u, beta } => {
                check_finite("beta", *beta)?;
                Box::new(QuadraticTracePotential::new(matrix("u", u, n, n)?, *beta).map_err(wrap)?)
            }
            PotentialConfig::FrobeniusLogDet { center, beta, alpha } => {
                check_finite("beta", *beta)?;
                check_finite("alpha", *alpha)?;
                let c = match center {
                    Some(rows) => matrix("center", rows, n, n)?,
                    None => DMatrix::identity(n, n),
                };
                Box::new(FrobeniusLogDetPotential::new(c, *beta, *alpha).map_err(wrap)?)
            }
            PotentialConfig::Vmf { mu, kappa } => {
                if !self.is_orthogonal() {
                    return Err(config_error("vmf requires SO(n) or a quotient of it"));
                }
                let mu = DVector::from_column_slice(mu);
                Box::new(vmf_sphere_lift(n, &mu, *kappa).map_err(wrap)?)
            }
            PotentialConfig::VmfStiefel { f } => {
                if !self.is_orthogonal() {
                    return Err(config_error("vmf_stiefel requires SO(n) or a quotient of it"));
                }
                let k = f.first().map(|r| r.len()).unwrap_or(0);
                Box::new(VmfLift::stiefel(n, matrix("f", f, n, k)?).map_err(wrap)?)
            }
        })
    }

    fn is_orthogonal(&self) -> bool {
        !matches!(
            self.space,
            SpaceConfig::Group {
                family: GroupFamily::SpecialLinear | GroupFamily::GeneralLinearPlus,
                ..
            }
        )
    }

    /// Output directory: the flag wins over the config, then a default.
    pub fn resolve_output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .unwrap_or_else(|| PathBuf::from("lie-hmc-out"))
    }
}
