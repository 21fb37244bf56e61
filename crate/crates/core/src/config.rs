//! Run configuration: one TOML file with nested sections, overridable from
//! the command line.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{
    assemble_cone_laplacian, weight_window, ConeError, ConeGrid, ConeOperator, CrossSection, Extension,
};
use crate::fpme::FpmeConfig;
use crate::funcalc::PowerMethod;

#[derive(Debug, Error)]
pub enum ConfigError {
    /// Bad input: exit code 2.
    #[error("{0}")]
    Invalid(String),
    /// Numerical failure while setting up: exit code 3.
    #[error("{0}")]
    Numerical(String),
}

impl ConfigError {
    pub fn exit_code(&self) -> i32 {
        match self {
            ConfigError::Invalid(_) => 2,
            ConfigError::Numerical(_) => 3,
        }
    }
}

impl From<ConeError> for ConfigError {
    fn from(e: ConeError) -> Self {
        match e {
            ConeError::GammaOutsideWindow { gamma, lo, hi } => ConfigError::Invalid(format!(
                "gamma = {gamma} lies outside the weight window ({lo}, {hi}); \
                 admissible weights satisfy (n-3)/2 < gamma < min(-1 + mu_1, (n+1)/2)"
            )),
            ConeError::InvalidCrossSection(_) | ConeError::Io(_) | ConeError::InvalidGrid(_) => {
                ConfigError::Invalid(e.to_string())
            }
            other => ConfigError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSectionSpec {
    /// `circle` or `sphere`; ignored when `file` is set.
    #[serde(default = "default_builtin")]
    pub builtin: String,
    #[serde(default)]
    pub file: Option<PathBuf>,
    #[serde(default)]
    pub max_mode: Option<usize>,
}

fn default_builtin() -> String {
    "circle".into()
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        Self {
            builtin: default_builtin(),
            file: None,
            max_mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_x_min")]
    pub x_min: f64,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub extension: Extension,
}

fn default_x_min() -> f64 {
    1e-4
}
fn default_count() -> usize {
    128
}
fn default_gamma() -> f64 {
    -0.5
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            x_min: default_x_min(),
            count: default_count(),
            gamma: default_gamma(),
            extension: Extension::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSection {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub shift_c: f64,
    #[serde(default)]
    pub method: PowerMethod,
    /// Operator CSV; defaults to the mode-0 block of `-Δ`.
    #[serde(default)]
    pub matrix: Option<PathBuf>,
    /// Spectral parameter `[re, im]` for `resolvent`.
    #[serde(default = "default_lambda")]
    pub lambda: [f64; 2],
}

fn default_sigma() -> f64 {
    0.5
}
fn default_lambda() -> [f64; 2] {
    [1.0, 0.5]
}

impl Default for PowerSection {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            shift_c: 0.0,
            method: PowerMethod::default(),
            matrix: None,
            lambda: default_lambda(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialData {
    /// `u0 = amplitude`.
    Constant,
    /// `u0 = 1 + amplitude·x(1-x)`.
    #[default]
    Bump,
    /// `u0 = 1 + amplitude·ψ/‖ψ‖_∞`, ψ the lowest radial eigenvector.
    Eigenmode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FpmeSection {
    #[serde(default = "default_fpme_sigma")]
    pub sigma: f64,
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_floor")]
    pub positivity_floor: f64,
    #[serde(default)]
    pub max_mode: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub method: PowerMethod,
}

fn default_fpme_sigma() -> f64 {
    0.75
}
fn default_m() -> f64 {
    2.0
}
fn default_dt() -> f64 {
    1e-3
}
fn default_t_end() -> f64 {
    0.2
}
fn default_floor() -> f64 {
    1e-10
}
fn default_record_every() -> usize {
    10
}
fn default_amplitude() -> f64 {
    1.0
}

impl Default for FpmeSection {
    fn default() -> Self {
        Self {
            sigma: default_fpme_sigma(),
            m: default_m(),
            dt: default_dt(),
            t_end: default_t_end(),
            positivity_floor: default_floor(),
            max_mode: 0,
            record_every: default_record_every(),
            initial: InitialData::default(),
            amplitude: default_amplitude(),
            method: PowerMethod::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_radial_samples")]
    pub radial_samples: usize,
    #[serde(default = "default_modulus_range")]
    pub modulus_range: [f64; 2],
    #[serde(default = "default_family_size")]
    pub family_size: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_vectors")]
    pub vectors_per_trial: usize,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_shift")]
    pub shift_c: f64,
    #[serde(default = "default_samples")]
    pub samples: Vec<f64>,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_laurent_kmax")]
    pub laurent_k_max: i32,
}

fn default_theta() -> f64 {
    0.75 * PI
}
fn default_radial_samples() -> usize {
    crate::sectorial::DEFAULT_RADIAL_SAMPLES
}
fn default_modulus_range() -> [f64; 2] {
    [1e-3, 1e3]
}
fn default_family_size() -> usize {
    8
}
fn default_trials() -> usize {
    16
}
fn default_vectors() -> usize {
    4
}
fn default_nu() -> f64 {
    0.6
}
fn default_rho() -> f64 {
    0.05
}
fn default_shift() -> f64 {
    1.0
}
fn default_samples() -> Vec<f64> {
    vec![1.0, 10.0, 100.0, 1e3, 1e4]
}
fn default_c_grid() -> Vec<f64> {
    crate::fpme::DEFAULT_C_GRID.to_vec()
}
fn default_laurent_kmax() -> i32 {
    2
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            theta: default_theta(),
            radial_samples: default_radial_samples(),
            modulus_range: default_modulus_range(),
            family_size: default_family_size(),
            trials: default_trials(),
            vectors_per_trial: default_vectors(),
            nu: default_nu(),
            rho: default_rho(),
            shift_c: default_shift(),
            samples: default_samples(),
            c_grid: default_c_grid(),
            laurent_k_max: default_laurent_kmax(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub cross_section: CrossSectionSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub power: PowerSection,
    #[serde(default)]
    pub fpme: FpmeSection,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Fixed quadrature node count (adaptive when absent).
    #[serde(default)]
    pub nodes: Option<usize>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_seed() -> u64 {
    42
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            cross_section: CrossSectionSpec::default(),
            grid: GridSpec::default(),
            power: PowerSection::default(),
            fpme: FpmeSection::default(),
            probe: ProbeSection::default(),
            output_dir: default_out(),
            seed: default_seed(),
            nodes: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Invalid(format!("config: {e}")))
    }

    /// Reads the file; relative cross-section and matrix paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.cross_section.file, &mut cfg.power.matrix].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Range checks that need no numerics.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.power.sigma) {
            return bad(format!("power.sigma = {} must lie in (0,1)", self.power.sigma));
        }
        if !(self.power.shift_c >= 0.0 && self.power.shift_c.is_finite()) {
            return bad(format!("power.shift_c = {} must be >= 0", self.power.shift_c));
        }
        if !open_unit(self.fpme.sigma) {
            return bad(format!("fpme.sigma = {} must lie in (0,1)", self.fpme.sigma));
        }
        if !open_unit(self.grid.x_min) {
            return bad(format!("grid.x_min = {} must lie in (0,1)", self.grid.x_min));
        }
        if !self.grid.gamma.is_finite() {
            return bad("grid.gamma must be finite".into());
        }
        if !(0.0..PI).contains(&self.probe.theta) {
            return bad(format!("probe.theta = {} must lie in [0, pi)", self.probe.theta));
        }
        let [r0, r1] = self.probe.modulus_range;
        if !(r0 > 0.0 && r1 > r0 && r1.is_finite()) {
            return bad(format!("probe.modulus_range = [{r0}, {r1}] must satisfy 0 < r0 < r1"));
        }
        if self.probe.samples.len() < 2 || self.probe.samples.iter().any(|s| !(*s > 0.0)) {
            return bad("probe.samples needs at least two positive values".into());
        }
        if self.probe.c_grid.iter().any(|c| !(*c >= 0.0)) {
            return bad("probe.c_grid values must be >= 0".into());
        }
        if self.probe.family_size == 0 || self.probe.trials == 0 || self.probe.vectors_per_trial == 0 {
            return bad("probe.family_size, trials and vectors_per_trial must be >= 1".into());
        }
        if let Some(n) = self.nodes {
            if n < 3 {
                return bad(format!("nodes = {n} must be >= 3"));
            }
        }
        if let Some(p) = &self.cross_section.file {
            if !p.exists() {
                return bad(format!("cross-section file {} not found", p.display()));
            }
        } else if !matches!(self.cross_section.builtin.as_str(), "circle" | "sphere") {
            return bad(format!("unknown builtin cross-section '{}'", self.cross_section.builtin));
        }
        if let Some(p) = &self.power.matrix {
            if !p.exists() {
                return bad(format!("matrix file {} not found", p.display()));
            }
        }
        self.fpme_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn cross_section(&self) -> Result<CrossSection, ConfigError> {
        let cs = match &self.cross_section.file {
            Some(p) => {
                let cs = CrossSection::from_file(p)?;
                match self.cross_section.max_mode {
                    Some(j) => cs.truncated(j),
                    None => cs,
                }
            }
            None => CrossSection::builtin(&self.cross_section.builtin, self.cross_section.max_mode).ok_or_else(
                || ConfigError::Invalid(format!("unknown builtin cross-section '{}'", self.cross_section.builtin)),
            )?,
        };
        let window = weight_window(&cs)?;
        if !window.contains(self.grid.gamma) {
            return Err(ConeError::GammaOutsideWindow {
                gamma: self.grid.gamma,
                lo: window.gamma_lo,
                hi: window.gamma_hi,
            }
            .into());
        }
        Ok(cs)
    }

    pub fn grid(&self) -> Result<ConeGrid, ConfigError> {
        Ok(ConeGrid::new(self.grid.x_min, self.grid.count, self.grid.gamma)?)
    }

    pub fn operator(&self) -> Result<ConeOperator, ConfigError> {
        let cs = self.cross_section()?;
        let grid = self.grid()?;
        Ok(assemble_cone_laplacian(&cs, &grid, self.grid.extension)?)
    }

    pub fn fpme_config(&self) -> FpmeConfig {
        let f = &self.fpme;
        FpmeConfig {
            positivity_floor: f.positivity_floor,
            max_mode: f.max_mode,
            record_every: f.record_every,
            method: f.method,
            ..FpmeConfig::new(f.sigma, f.m, f.dt, f.t_end, self.grid.gamma)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let op = RunConfig {
            grid: GridSpec {
                count: 40,
                ..GridSpec::default()
            },
            ..cfg
        }
        .operator()
        .unwrap();
        assert_eq!(op.grid.count, 40);
    }

    #[test]
    fn toml_sections_parse() {
        let cfg = RunConfig::from_toml_str(
            "seed = 7\n[grid]\ncount = 64\ngamma = -0.25\n[power]\nsigma = 0.25\nmethod = \"eigen_oracle\"\n\
             [fpme]\ninitial = \"constant\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.count, 64);
        assert_eq!(cfg.power.method, PowerMethod::EigenOracle);
        assert_eq!(cfg.fpme.initial, InitialData::Constant);
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn range_errors() {
        let mut cfg = RunConfig::default();
        cfg.power.sigma = 1.5;
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.grid.gamma = 5.0;
        assert_eq!(cfg.operator().unwrap_err().exit_code(), 2);
        let mut cfg = RunConfig::default();
        cfg.grid.count = 8;
        assert_eq!(cfg.operator().unwrap_err().exit_code(), 3);
        let mut cfg = RunConfig::default();
        cfg.cross_section.file = Some("/nonexistent/section.toml".into());
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
    }
}
