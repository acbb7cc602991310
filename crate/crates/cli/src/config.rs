//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use dcaccel_core::{GridSpec, Plane, SbmConfig};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub populations: usize,
    pub population_size: usize,
    pub theta_diag: f64,
    pub theta_off: f64,
    /// Full block matrix; overrides `theta_diag` and `theta_off` when present.
    pub theta: Option<Vec<Vec<f64>>>,
    pub alpha: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { populations: 6, population_size: 100, theta_diag: 0.05, theta_off: 0.01, theta: None, alpha: 1.0 }
    }
}

/// Plane of the iteration-matrix spectrum plus integration settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub n_s: usize,
    pub beta: f64,
    pub u_max: f64,
    pub n_u: usize,
    /// Relative residual at which the canonical-equation iteration stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            t_min: -0.6,
            t_max: 1.2,
            n_t: 101,
            s_min: -0.6,
            s_max: 0.6,
            n_s: 101,
            beta: GridSpec::DEFAULT_BETA,
            u_max: GridSpec::DEFAULT_U_MAX,
            n_u: GridSpec::DEFAULT_N_U,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionSection {
    pub kappa: f64,
    pub tau: f64,
}

impl Default for RegionSection {
    fn default() -> Self {
        Self { kappa: 1e-2, tau: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignSection {
    pub degrees: Vec<usize>,
    pub max_points: usize,
    pub tol: f64,
}

impl Default for DesignSection {
    fn default() -> Self {
        Self { degrees: (1..=6).collect(), max_points: 1000, tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub trials: usize,
    pub n_iters: usize,
    pub base_seed: u64,
    pub exclude_disconnected: bool,
    pub max_sample_attempts: usize,
}

impl Default for SimSection {
    fn default() -> Self {
        Self { trials: 1000, n_iters: 60, base_seed: 1, exclude_disconnected: false, max_sample_attempts: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub region: RegionSection,
    pub design: DesignSection,
    pub sim: SimSection,
    pub output: OutputSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.sbm()?;
        self.grid_spec()?;
        let r = &self.region;
        if !(r.kappa >= 0.0 && r.tau.is_finite()) {
            return Err(CliError::Config(format!("bad region section: kappa={} tau={}", r.kappa, r.tau)));
        }
        if self.design.degrees.is_empty() || self.design.degrees.contains(&0) {
            return Err(CliError::Config("design.degrees must be nonempty and positive".into()));
        }
        if self.design.max_points == 0 || !(self.design.tol > 0.0) {
            return Err(CliError::Config("design.max_points and design.tol must be positive".into()));
        }
        if !(self.grid.tol > 0.0) || self.grid.max_iter == 0 {
            return Err(CliError::Config("grid.tol and grid.max_iter must be positive".into()));
        }
        if self.sim.max_sample_attempts == 0 {
            return Err(CliError::Config("sim.max_sample_attempts must be positive".into()));
        }
        Ok(())
    }

    pub fn sbm(&self) -> Result<SbmConfig, CliError> {
        let m = &self.model;
        let result = match &m.theta {
            Some(rows) => {
                if rows.len() != m.populations || rows.iter().any(|r| r.len() != m.populations) {
                    return Err(CliError::Config(format!("model.theta must be {0}x{0}", m.populations)));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                SbmConfig::new(m.populations, m.population_size, DMatrix::from_row_slice(m.populations, m.populations, &flat), m.alpha)
            }
            None => SbmConfig::two_level(m.populations, m.population_size, m.theta_diag, m.theta_off, m.alpha),
        };
        if !(m.alpha > 0.0) {
            return Err(CliError::Config(format!("model.alpha must be positive, got {}", m.alpha)));
        }
        result.map_err(|e| CliError::Config(e.to_string()))
    }

    /// The plane on which `W` densities are reported.
    pub fn plane(&self) -> Result<Plane, CliError> {
        let g = &self.grid;
        Plane::new(g.t_min, g.t_max, g.n_t, g.s_min, g.s_max, g.n_s).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        let g = &self.grid;
        let spec = GridSpec { beta: g.beta, u_max: g.u_max, n_u: g.n_u, ..GridSpec::from_plane(self.plane()?) };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf).or_else(|| self.output.dir.clone()).unwrap_or_else(|| PathBuf::from("output"))
    }
}
