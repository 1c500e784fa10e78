//! Scenario configuration: TOML schema, defaults and semantic validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::wavelength;
use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::occlusion::OcclusionParams;
use crate::scene::{PriorParams, ScattererSpec, VoxelGrid};
use crate::solvers::{Mode, SolverOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub scene: SceneConfig,
    pub layout: LayoutConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default)]
    pub origin: [f64; 3],
    pub extents: [f64; 3],
    pub voxel_size: [f64; 3],
    pub scatterers: Scatterers,
    #[serde(default)]
    pub prior: PriorConfig,
    /// Blocking distance `l`; the voxel half-diagonal when absent.
    #[serde(default)]
    pub blocking_distance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Scatterers {
    Count(usize),
    Rate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    #[serde(default = "d_sparsity")]
    pub sparsity: f64,
    #[serde(default = "d_slab_mean")]
    pub slab_mean: f64,
    #[serde(default = "d_slab_var")]
    pub slab_var: f64,
    /// Occluder threshold `η`; `slab_mean / 4` when absent.
    #[serde(default)]
    pub occlusion_threshold: Option<f64>,
}

fn d_sparsity() -> f64 {
    0.05
}
fn d_slab_mean() -> f64 {
    0.5
}
fn d_slab_var() -> f64 {
    0.04
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { sparsity: d_sparsity(), slab_mean: d_slab_mean(), slab_var: d_slab_var(), occlusion_threshold: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    /// Uniform in the horizontal shell around the region.
    Shell,
    /// Explicit coordinates, used in order.
    Points(Vec<[f64; 3]>),
}

impl Default for Placement {
    fn default() -> Self {
        Placement::Shell
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    pub users: usize,
    #[serde(default)]
    pub user_placement: Placement,
    pub base_stations: Vec<BaseStationConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStationConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in meters; half a wavelength when absent.
    #[serde(default)]
    pub spacing: Option<f64>,
    /// Array center; sampled from the shell when absent.
    #[serde(default)]
    pub position: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Observation {
    /// Additive white Gaussian noise on the multipath channel.
    #[default]
    Direct,
    /// Least-squares estimate from orthogonal pilots.
    Pilot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    #[serde(default = "d_fc")]
    pub fc: f64,
    #[serde(default = "d_snr")]
    pub snr_db: f64,
    #[serde(default)]
    pub observation: Observation,
    #[serde(default)]
    pub pilot_length: Option<usize>,
}

fn d_fc() -> f64 {
    30e9
}
fn d_snr() -> f64 {
    20.0
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { fc: d_fc(), snr_db: d_snr(), observation: Observation::Direct, pilot_length: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Gamp,
    Bilinear,
    Mvsvr,
}

impl SolverKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverKind::Gamp => "gamp",
            SolverKind::Bilinear => "bilinear",
            SolverKind::Mvsvr => "mvsvr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gamp" => Some(SolverKind::Gamp),
            "bilinear" => Some(SolverKind::Bilinear),
            "mvsvr" => Some(SolverKind::Mvsvr),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "d_solvers")]
    pub solvers: Vec<SolverKind>,
    #[serde(default = "d_max_iter")]
    pub max_iter: usize,
    #[serde(default = "d_tol")]
    pub eps_t: f64,
    #[serde(default = "d_tol")]
    pub x_tol: f64,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub sigma_h_floor: f64,
    #[serde(default = "d_interval")]
    pub detect_interval: usize,
    /// Blockage probability of the bilinear baseline; estimated by Monte
    /// Carlo on the configured geometry when absent.
    #[serde(default)]
    pub blockage_prob: Option<f64>,
}

fn d_solvers() -> Vec<SolverKind> {
    vec![SolverKind::Gamp, SolverKind::Bilinear, SolverKind::Mvsvr]
}
fn d_max_iter() -> usize {
    100
}
fn d_tol() -> f64 {
    1e-6
}
fn d_interval() -> usize {
    1
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            solvers: d_solvers(),
            max_iter: d_max_iter(),
            eps_t: d_tol(),
            x_tol: d_tol(),
            damping: 0.0,
            sigma_h_floor: 0.0,
            detect_interval: d_interval(),
            blockage_prob: None,
        }
    }
}

impl SolverConfig {
    pub fn options(&self) -> Result<SolverOptions<f64>> {
        SolverOptions {
            max_iter: self.max_iter,
            eps_t: self.eps_t,
            x_tol: self.x_tol,
            damping: self.damping,
            sigma_h_floor: self.sigma_h_floor,
            detect_interval: self.detect_interval,
            mode: Mode::HardOcclusion,
        }
        .validated()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SweepVariable {
    #[default]
    None,
    Users,
    Snr,
    BsCount,
}

impl SweepVariable {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepVariable::None => "none",
            SweepVariable::Users => "users",
            SweepVariable::Snr => "snr",
            SweepVariable::BsCount => "bs-count",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub variable: SweepVariable,
    #[serde(default)]
    pub values: Vec<f64>,
    #[serde(default = "d_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
}

fn d_trials() -> usize {
    1
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { variable: SweepVariable::None, values: Vec::new(), trials: d_trials(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Normalization constant of the error bound.
    #[serde(default = "d_m")]
    pub m: f64,
    /// Position draws for the closed-form blockage integrals.
    #[serde(default = "d_draws")]
    pub draws: usize,
    /// Scenes for the empirical per-hop blockage estimate.
    #[serde(default = "d_draws")]
    pub hop_trials: usize,
    /// Scenes for the empirical unsensable-voxel counts.
    #[serde(default = "d_count_trials")]
    pub count_trials: usize,
    /// Base stations of the multi-BS scheme compared against a single station.
    #[serde(default = "d_multi_bs")]
    pub multi_bs: usize,
}

fn d_m() -> f64 {
    1.0
}
fn d_draws() -> usize {
    10_000
}
fn d_count_trials() -> usize {
    400
}
fn d_multi_bs() -> usize {
    5
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { m: d_m(), draws: d_draws(), hop_trials: d_draws(), count_trials: d_count_trials(), multi_bs: d_multi_bs() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_dir")]
    pub dir: PathBuf,
    #[serde(default = "d_true")]
    pub voxels: bool,
    #[serde(default = "d_true")]
    pub traces: bool,
    #[serde(default = "d_true")]
    pub plots: bool,
}

fn d_dir() -> PathBuf {
    PathBuf::from("out")
}
fn d_true() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: d_dir(), voxels: true, traces: true, plots: true }
    }
}

impl ScenarioConfig {
    /// Parses and validates a TOML document; errors name the offending key path.
    pub fn from_toml_str(src: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(src).map_err(|e| Error::config("<document>", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<VoxelGrid<f64>> {
        let s = &self.scene;
        VoxelGrid::new(Vec3::from_array(s.origin), s.extents, s.voxel_size)
            .map_err(|e| Error::config("scene.extents", e.to_string()))
    }

    pub fn prior(&self) -> Result<PriorParams<f64>> {
        let p = &self.scene.prior;
        let mut prior = PriorParams::new(p.sparsity, p.slab_mean, p.slab_var)
            .map_err(|e| Error::config("scene.prior", e.to_string()))?;
        if let Some(eta) = p.occlusion_threshold {
            prior = prior.with_threshold(eta).map_err(|e| Error::config("scene.prior.occlusion_threshold", e.to_string()))?;
        }
        Ok(prior)
    }

    pub fn occlusion_params(&self) -> Result<OcclusionParams<f64>> {
        let grid = self.grid()?;
        let eta = self.prior()?.occlusion_threshold;
        match self.scene.blocking_distance {
            Some(l) => OcclusionParams::for_grid_with(&grid, l, eta),
            None => OcclusionParams::for_grid(&grid, eta),
        }
        .map_err(|e| Error::config("scene.blocking_distance", e.to_string()))
    }

    pub fn scatterer_spec(&self) -> ScattererSpec<f64> {
        match self.scene.scatterers {
            Scatterers::Count(n) => ScattererSpec::Count(n),
            Scatterers::Rate(r) => ScattererSpec::Rate(r),
        }
    }

    /// Expected fraction of occupied voxels.
    pub fn scatterer_density(&self) -> Result<f64> {
        Ok(match self.scene.scatterers {
            Scatterers::Count(n) => n as f64 / self.grid()?.len() as f64,
            Scatterers::Rate(r) => r,
        })
    }

    pub fn antenna_spacing(&self, bs: &BaseStationConfig) -> f64 {
        bs.spacing.unwrap_or_else(|| wavelength(self.channel.fc) / 2.0)
    }

    /// Sweep points; a single point carrying the base value when not sweeping.
    pub fn sweep_points(&self) -> Vec<f64> {
        match self.sweep.variable {
            SweepVariable::None => vec![self.base_value()],
            _ => self.sweep.values.clone(),
        }
    }

    fn base_value(&self) -> f64 {
        match self.sweep.variable {
            SweepVariable::None | SweepVariable::Users => self.layout.users as f64,
            SweepVariable::Snr => self.channel.snr_db,
            SweepVariable::BsCount => self.layout.base_stations.len() as f64,
        }
    }

    /// Copy of the configuration with the sweep variable set to `value`.
    pub fn at_point(&self, value: f64) -> Self {
        let mut cfg = self.clone();
        match self.sweep.variable {
            SweepVariable::None => {}
            SweepVariable::Users => cfg.layout.users = value as usize,
            SweepVariable::Snr => cfg.channel.snr_db = value,
            SweepVariable::BsCount => {
                let template = cfg.layout.base_stations[0];
                cfg.layout.base_stations = vec![BaseStationConfig { position: None, ..template }; value as usize];
            }
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        let n_s = grid.len();
        self.prior()?;
        self.occlusion_params()?;
        match self.scene.scatterers {
            Scatterers::Count(n) if n > n_s => {
                return Err(Error::config("scene.scatterers.count", format!("{n} exceeds the {n_s} voxels")));
            }
            Scatterers::Rate(r) if !(0.0..=1.0).contains(&r) => {
                return Err(Error::config("scene.scatterers.rate", format!("{r} outside [0, 1]")));
            }
            _ => {}
        }

        let l = &self.layout;
        if l.users == 0 {
            return Err(Error::config("layout.users", "need at least one user"));
        }
        if let Placement::Points(p) = &l.user_placement {
            let needed = self.max_users();
            if p.len() < needed {
                return Err(Error::config(
                    "layout.user_placement.points",
                    format!("{} positions for {needed} users", p.len()),
                ));
            }
        }
        if l.base_stations.is_empty() {
            return Err(Error::config("layout.base_stations", "need at least one base station"));
        }
        for (i, bs) in l.base_stations.iter().enumerate() {
            if bs.rows == 0 || bs.cols == 0 {
                return Err(Error::config(format!("layout.base_stations[{i}]"), "array needs rows and cols ≥ 1"));
            }
            if let Some(s) = bs.spacing {
                if !(s > 0.0) || !s.is_finite() {
                    return Err(Error::config(format!("layout.base_stations[{i}].spacing"), "must be positive"));
                }
            }
        }

        let c = &self.channel;
        if !(c.fc > 0.0) || !c.fc.is_finite() {
            return Err(Error::config("channel.fc", "carrier frequency must be positive"));
        }
        if c.snr_db.is_nan() {
            return Err(Error::config("channel.snr_db", "must be a number"));
        }
        if c.observation == Observation::Pilot {
            let Some(len) = c.pilot_length else {
                return Err(Error::config("channel.pilot_length", "required for pilot observation"));
            };
            if len <= self.max_users() {
                return Err(Error::config(
                    "channel.pilot_length",
                    format!("{len} must exceed the number of users {}", self.max_users()),
                ));
            }
        }

        let s = &self.solver;
        if s.solvers.is_empty() {
            return Err(Error::config("solver.solvers", "list at least one solver"));
        }
        s.options().map_err(|e| Error::config("solver", e.to_string()))?;
        if let Some(rho) = s.blockage_prob {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::config("solver.blockage_prob", format!("{rho} outside [0, 1]")));
            }
        }

        let w = &self.sweep;
        if w.trials == 0 {
            return Err(Error::config("sweep.trials", "need at least one trial"));
        }
        if w.variable != SweepVariable::None {
            if w.values.is_empty() {
                return Err(Error::config("sweep.values", "sweep needs at least one value"));
            }
            for (i, v) in w.values.iter().enumerate() {
                let integral = matches!(w.variable, SweepVariable::Users | SweepVariable::BsCount);
                if v.is_nan() || (integral && (*v < 1.0 || v.fract() != 0.0)) {
                    return Err(Error::config(format!("sweep.values[{i}]"), format!("invalid value {v}")));
                }
            }
        }

        let a = &self.analysis;
        if !(a.m > 0.0) {
            return Err(Error::config("analysis.m", "must be positive"));
        }
        if a.draws == 0 {
            return Err(Error::config("analysis.draws", "need at least one draw"));
        }
        if a.hop_trials < crate::analysis::MIN_TRIALS {
            return Err(Error::config("analysis.hop_trials", format!("need at least {}", crate::analysis::MIN_TRIALS)));
        }
        if a.count_trials == 0 || a.multi_bs == 0 {
            return Err(Error::config("analysis", "count_trials and multi_bs must be positive"));
        }
        Ok(())
    }

    fn max_users(&self) -> usize {
        if self.sweep.variable == SweepVariable::Users {
            self.sweep.values.iter().fold(self.layout.users, |m, v| m.max(*v as usize))
        } else {
            self.layout.users
        }
    }
}
