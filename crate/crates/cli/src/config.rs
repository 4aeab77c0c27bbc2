//! Experiment configuration: a TOML file with unit-suffixed keys.

use std::path::{Path, PathBuf};

use layertomo::geometry::{ring_directions, GeometrySpec, ARCSEC};
use layertomo::operator::{NoiseModel, TomoOperator};
use layertomo::reconstruct::{SolveConfig, StepSchedule};
use layertomo::turbulence::TurbulenceSpec;
use layertomo::Vec2;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// The configuration shipped with the crate.
pub const MORFEO_LIKE: &str = include_str!("../morfeo_like.cfg");

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub geometry: GeometryConfig,
    pub grid: GridConfig,
    pub turbulence: TurbulenceConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub nullspace: NullspaceConfig,
    #[serde(default)]
    pub projection: ProjectionConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub aperture_diameter_m: f64,
    /// Ring asterism; mutually exclusive with `direction_arcsec`.
    #[serde(default)]
    pub guide_star_count: Option<usize>,
    #[serde(default)]
    pub asterism_radius_arcsec: Option<f64>,
    #[serde(default)]
    pub asterism_phase_deg: f64,
    /// Explicit directions, ordered by polar angle.
    #[serde(default)]
    pub direction_arcsec: Option<Vec<Vec2>>,
    pub layer_height_m: Vec<f64>,
    pub layer_weight: Vec<f64>,
    /// Snap directions and heights so every shift is a whole number of
    /// pupil cells.
    #[serde(default = "yes")]
    pub align_shifts: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub pupil_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurbulenceConfig {
    pub fried_parameter_m: f64,
    pub outer_scale_m: f64,
    pub layer_strength: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_photons")]
    pub photons: f64,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { enabled: false, photons: default_photons(), wavelength_m: default_wavelength() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodName {
    Landweber,
    Kaczmarz,
    TikhonovCg,
}

impl std::str::FromStr for MethodName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "landweber" => Ok(Self::Landweber),
            "kaczmarz" => Ok(Self::Kaczmarz),
            "tikhonov-cg" => Ok(Self::TikhonovCg),
            other => Err(format!("unknown method `{other}` (expected landweber, kaczmarz or tikhonov-cg)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Constant,
    Harmonic,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: MethodName,
    /// Landweber: absolute step (default `1/λ_max`). Kaczmarz: base step of
    /// the schedule (default 1).
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleName,
    /// Tikhonov parameter, absolute.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Tikhonov parameter as a fraction of `‖A‖²`.
    #[serde(default)]
    pub alpha_relative: Option<f64>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_power_iterations")]
    pub power_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_rings")]
    pub rings: usize,
    #[serde(default = "default_rings")]
    pub per_ring: usize,
    /// Outer ring radius. Defaults to the angle at which the top-layer
    /// footprints end: asterism radius plus `T / h_top`.
    #[serde(default)]
    pub radius_arcsec: Option<f64>,
    #[serde(default = "default_wavelength")]
    pub wavelength_m: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { rings: 6, per_ring: 6, radius_arcsec: None, wavelength_m: default_wavelength() }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NullspaceConfig {
    /// Perturbation height in units of the perturbed layer's RMS.
    #[serde(default = "default_amplitude")]
    pub amplitude_rms: f64,
    #[serde(default)]
    pub smooth_margin: f64,
    #[serde(default = "default_min_distance")]
    pub min_relative_distance: f64,
    #[serde(default = "default_max_discrepancy")]
    pub max_relative_discrepancy: f64,
}

impl Default for NullspaceConfig {
    fn default() -> Self {
        Self {
            amplitude_rms: default_amplitude(),
            smooth_margin: 0.0,
            min_relative_distance: default_min_distance(),
            max_relative_discrepancy: default_max_discrepancy(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    #[serde(default = "default_realizations")]
    pub realizations: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { realizations: default_realizations() }
    }
}

fn yes() -> bool {
    true
}
fn default_photons() -> f64 {
    10_000.0
}
fn default_wavelength() -> f64 {
    589e-9
}
fn default_schedule() -> ScheduleName {
    ScheduleName::Harmonic
}
fn default_max_iterations() -> usize {
    100
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_power_iterations() -> usize {
    30
}
fn default_rings() -> usize {
    6
}
fn default_amplitude() -> f64 {
    5.0
}
fn default_min_distance() -> f64 {
    0.05
}
fn default_max_discrepancy() -> f64 {
    1e-8
}
fn default_realizations() -> usize {
    10
}

/// A parsed and validated configuration together with its source text.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub source: String,
    pub path: PathBuf,
    /// SHA-256 of the source text, lowercase hex.
    pub hash: String,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_source(&source, path)
    }

    /// `path` is only used in messages and manifests.
    pub fn from_source(source: &str, path: &Path) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(source).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            line: e.span().map(|s| line_of_offset(source, s.start)),
            message: e.message().trim().to_string(),
        })?;
        if let Err((key, message)) = config.validate() {
            return Err(CliError::Config { path: path.to_path_buf(), line: locate_key(source, &key), message });
        }
        let hash = Sha256::digest(source.as_bytes()).iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self { config, source: source.to_string(), path: path.to_path_buf(), hash })
    }
}

fn line_of_offset(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

/// Line of `section.key` (or a top-level `key`) in a flat TOML document.
/// Falls back to the section header, then to `None`.
pub fn locate_key(source: &str, dotted: &str) -> Option<usize> {
    let (section, key) = match dotted.rsplit_once('.') {
        Some((s, k)) => (s, k),
        None => ("", dotted),
    };
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                header = Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

type Invalid = std::result::Result<(), (String, String)>;

fn check(ok: bool, key: &str, message: impl FnOnce() -> String) -> Invalid {
    if ok {
        Ok(())
    } else {
        Err((key.to_string(), message()))
    }
}

fn positive(v: f64, key: &str) -> Invalid {
    check(v.is_finite() && v > 0.0, key, || format!("`{key}` must be positive, got {v}"))
}

impl ExperimentConfig {
    /// Validate every section. On failure returns the dotted key at fault and
    /// a message.
    pub fn validate(&self) -> Invalid {
        let g = &self.geometry;
        positive(g.aperture_diameter_m, "geometry.aperture_diameter_m")?;
        match (&g.direction_arcsec, g.guide_star_count, g.asterism_radius_arcsec) {
            (Some(d), None, None) => {
                check(!d.is_empty(), "geometry.direction_arcsec", || "at least one direction is required".into())?
            }
            (None, Some(n), Some(r)) => {
                check(n >= 1, "geometry.guide_star_count", || "at least one guide star is required".into())?;
                check(r.is_finite() && r >= 0.0, "geometry.asterism_radius_arcsec", || {
                    format!("asterism radius must be non-negative, got {r}")
                })?;
                check(n == 1 || r > 0.0, "geometry.asterism_radius_arcsec", || {
                    "several guide stars need a positive asterism radius".into()
                })?;
            }
            (Some(_), _, _) => {
                return Err((
                    "geometry.direction_arcsec".into(),
                    "give either `direction_arcsec` or `guide_star_count` with `asterism_radius_arcsec`, not both"
                        .into(),
                ))
            }
            _ => {
                return Err((
                    "geometry".into(),
                    "`guide_star_count` and `asterism_radius_arcsec` are both required for a ring asterism".into(),
                ))
            }
        }
        check(
            g.layer_weight.len() == g.layer_height_m.len(),
            "geometry.layer_weight",
            || format!("{} layer weights for {} layer heights", g.layer_weight.len(), g.layer_height_m.len()),
        )?;
        check(
            self.turbulence.layer_strength.len() == g.layer_height_m.len(),
            "turbulence.layer_strength",
            || {
                format!(
                    "{} layer strengths for {} layer heights",
                    self.turbulence.layer_strength.len(),
                    g.layer_height_m.len()
                )
            },
        )?;
        let n = self.grid.pupil_nodes;
        check(n >= 2, "grid.pupil_nodes", || format!("need at least 2 pupil nodes, got {n}"))?;
        self.geometry_spec().map_err(|e| ("geometry".to_string(), e.to_string()))?;

        let t = &self.turbulence;
        positive(t.fried_parameter_m, "turbulence.fried_parameter_m")?;
        positive(t.outer_scale_m, "turbulence.outer_scale_m")?;
        TurbulenceSpec::new(t.fried_parameter_m, t.outer_scale_m, t.layer_strength.clone(), self.seed)
            .map_err(|e| ("turbulence.layer_strength".to_string(), e.to_string()))?;

        positive(self.noise.photons, "noise.photons")?;
        positive(self.noise.wavelength_m, "noise.wavelength_m")?;

        let s = &self.solver;
        if let Some(step) = s.step {
            positive(step, "solver.step")?;
        }
        check(s.max_iterations >= 1, "solver.max_iterations", || "`max_iterations` must be at least 1".into())?;
        check(s.tolerance.is_finite() && s.tolerance >= 0.0, "solver.tolerance", || {
            format!("`tolerance` must be non-negative, got {}", s.tolerance)
        })?;
        check(s.power_iterations >= 1, "solver.power_iterations", || "`power_iterations` must be at least 1".into())?;
        match (s.method, s.alpha, s.alpha_relative) {
            (MethodName::TikhonovCg, Some(_), Some(_)) => {
                return Err(("solver.alpha".into(), "give either `alpha` or `alpha_relative`, not both".into()))
            }
            (MethodName::TikhonovCg, None, None) => {
                return Err(("solver.method".into(), "tikhonov-cg needs `alpha` or `alpha_relative`".into()))
            }
            (MethodName::TikhonovCg, Some(a), None) => positive(a, "solver.alpha")?,
            (MethodName::TikhonovCg, None, Some(a)) => positive(a, "solver.alpha_relative")?,
            (_, Some(_), _) | (_, _, Some(_)) => {
                return Err(("solver.alpha".into(), "`alpha` only applies to tikhonov-cg".into()))
            }
            _ => {}
        }

        let e = &self.evaluation;
        check(e.rings == 0 || e.per_ring >= 1, "evaluation.per_ring", || "`per_ring` must be at least 1".into())?;
        if let Some(r) = e.radius_arcsec {
            check(r.is_finite() && r >= 0.0, "evaluation.radius_arcsec", || {
                format!("`radius_arcsec` must be non-negative, got {r}")
            })?;
        }
        positive(e.wavelength_m, "evaluation.wavelength_m")?;

        let w = &self.nullspace;
        check(w.amplitude_rms.is_finite(), "nullspace.amplitude_rms", || "`amplitude_rms` must be finite".into())?;
        check((0.0..1.0).contains(&w.smooth_margin), "nullspace.smooth_margin", || {
            format!("`smooth_margin` must be in [0, 1), got {}", w.smooth_margin)
        })?;
        check(w.min_relative_distance >= 0.0, "nullspace.min_relative_distance", || {
            "`min_relative_distance` must be non-negative".into()
        })?;
        positive(w.max_relative_discrepancy, "nullspace.max_relative_discrepancy")?;
        check(self.projection.realizations >= 1, "projection.realizations", || {
            "`realizations` must be at least 1".into()
        })?;
        Ok(())
    }

    /// Pupil node spacing in meters.
    pub fn spacing(&self) -> f64 {
        self.geometry.aperture_diameter_m / (self.grid.pupil_nodes as f64 - 1.0)
    }

    /// The geometry, snapped to the pupil lattice when `align_shifts` is set.
    pub fn geometry_spec(&self) -> layertomo::Result<GeometrySpec> {
        let g = &self.geometry;
        let directions: Vec<Vec2> = match &g.direction_arcsec {
            Some(d) => d.iter().map(|a| [a[0] * ARCSEC, a[1] * ARCSEC]).collect(),
            None => ring_directions(
                g.guide_star_count.unwrap_or(1),
                g.asterism_radius_arcsec.unwrap_or(0.0) * ARCSEC,
                g.asterism_phase_deg.to_radians(),
            ),
        };
        let spec = GeometrySpec::new(
            g.aperture_diameter_m / 2.0,
            directions,
            g.layer_height_m.clone(),
            g.layer_weight.clone(),
        )?;
        if g.align_shifts {
            spec.aligned_to_lattice(self.spacing())
        } else {
            Ok(spec)
        }
    }

    pub fn operator(&self) -> layertomo::Result<TomoOperator> {
        TomoOperator::new(&self.geometry_spec()?, self.grid.pupil_nodes)
    }

    pub fn turbulence_spec(&self, seed: u64) -> layertomo::Result<TurbulenceSpec> {
        let t = &self.turbulence;
        TurbulenceSpec::new(t.fried_parameter_m, t.outer_scale_m, t.layer_strength.clone(), seed)
    }

    /// Noise for realization `seed`, or `None` when disabled.
    pub fn noise_model(&self, seed: u64) -> layertomo::Result<Option<NoiseModel>> {
        if !self.noise.enabled {
            return Ok(None);
        }
        NoiseModel::from_photons(self.noise.photons, self.noise.wavelength_m, noise_seed(seed)).map(Some)
    }

    /// Solver settings for `op`; relative Tikhonov parameters are scaled by
    /// a power-iteration estimate of `‖A‖²`.
    pub fn solve_config(&self, op: &TomoOperator, method: Option<MethodName>) -> layertomo::Result<SolveConfig> {
        let s = &self.solver;
        let method = method.unwrap_or(s.method);
        let mut cfg = match method {
            MethodName::Landweber => {
                let c = SolveConfig::landweber();
                match s.step {
                    Some(b) => c.with_step(b),
                    None => c,
                }
            }
            MethodName::Kaczmarz => {
                let b = s.step.unwrap_or(1.0);
                SolveConfig::kaczmarz(match s.schedule {
                    ScheduleName::Constant => StepSchedule::Constant(b),
                    ScheduleName::Harmonic => StepSchedule::Harmonic(b),
                })
            }
            MethodName::TikhonovCg => {
                let alpha = match (s.alpha, s.alpha_relative) {
                    (Some(a), _) => a,
                    (None, Some(r)) => r * op.estimate_normal_norm(s.power_iterations, self.seed)?,
                    (None, None) => {
                        return Err(layertomo::Error::InvalidSolver("tikhonov-cg needs a regularization parameter".into()))
                    }
                };
                SolveConfig::tikhonov_cg(alpha)
            }
        };
        cfg.power_iterations = s.power_iterations;
        cfg.power_seed = self.seed;
        Ok(cfg.with_max_iterations(s.max_iterations).with_tolerance(s.tolerance))
    }

    /// Outer evaluation radius in radians.
    pub fn evaluation_radius(&self, spec: &GeometrySpec) -> f64 {
        if let Some(r) = self.evaluation.radius_arcsec {
            return r * ARCSEC;
        }
        let reach = spec.directions().iter().map(|a| a[0].hypot(a[1])).fold(0.0, f64::max);
        let h_top = spec.layer_heights().last().copied().unwrap_or(0.0);
        if h_top > 0.0 {
            reach + spec.aperture_radius() / h_top
        } else {
            reach
        }
    }
}

/// Seed of the measurement noise for an atmosphere drawn with `seed`.
pub fn noise_seed(seed: u64) -> u64 {
    seed ^ 0x6e6f_6973_6500_0000
}
