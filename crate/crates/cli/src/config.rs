//! Per-subcommand configuration files. Every struct rejects unknown fields;
//! the resolved value (defaults filled in, `--seed` applied) is what gets
//! embedded in the artifacts.

use std::fs;
use std::path::Path;

use gwtk::grid::ConvolveCheckConfig;
use gwtk::kernel::ClusterBoundOptions;
use gwtk::oracle::DEFAULT_CAP;
use gwtk::{GrowthCertificate, HawkesParams, KernelSpec, NonNegMatrix, SolverConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub trait Seeded {
    fn seed_mut(&mut self) -> &mut u64;

    /// Applies the `--seed` override and returns the seed in force.
    fn resolve_seed(&mut self, flag: Option<u64>) -> u64 {
        if let Some(s) = flag {
            *self.seed_mut() = s;
        }
        *self.seed_mut()
    }
}

macro_rules! seeded {
    ($($t:ty),*) => {
        $(impl Seeded for $t {
            fn seed_mut(&mut self) -> &mut u64 {
                &mut self.seed
            }
        })*
    };
}

seeded!(
    SolveConfig,
    ClassifyConfig,
    RayConfig,
    BoundaryConfig,
    ReduceConfig,
    TailsConfig,
    ClusterBoundConfig,
    HawkesBoundConfig,
    VerifyLaplaceConfig,
    VerifyTailsConfig,
    VerifyClusterConfig,
    VerifyHawkesConfig,
    ConvolveCheckConfig
);

fn config_err(msg: String) -> CliError {
    CliError::Config(msg)
}

pub fn check_vector(name: &str, v: &[f64], dim: usize) -> Result<(), CliError> {
    if v.len() != dim {
        return Err(config_err(format!("{name} has {} entries, the matrix has dimension {dim}", v.len())));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(config_err(format!("{name} entries must be finite and >= 0, got {x}")));
    }
    Ok(())
}

fn check_distances(d: &[f64]) -> Result<(), CliError> {
    if d.is_empty() {
        return Err(config_err("d_grid is empty".into()));
    }
    if let Some(x) = d.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(config_err(format!("d_grid entries must be finite and >= 0, got {x}")));
    }
    Ok(())
}

fn check_root(root: usize, dim: usize) -> Result<(), CliError> {
    if root >= dim {
        return Err(config_err(format!("root {root} out of range for dimension {dim}")));
    }
    Ok(())
}

fn check_mc(replicates: usize, cap: usize) -> Result<(), CliError> {
    if replicates == 0 || cap == 0 {
        return Err(config_err("replicates and cap must be positive".into()));
    }
    Ok(())
}

fn check_solver(s: &SolverConfig) -> Result<(), CliError> {
    if !(s.tol > 0.0) || s.max_iter == 0 || !(s.exp_cap > 0.0) || s.window == 0 {
        return Err(config_err("solver needs tol > 0, max_iter > 0, exp_cap > 0 and window > 0".into()));
    }
    Ok(())
}

fn default_replicates() -> usize {
    100_000
}

fn default_cap() -> usize {
    DEFAULT_CAP
}

fn default_tol() -> f64 {
    1e-10
}

fn default_boundary_tol() -> f64 {
    gwtk::DomainConfig::default().boundary_tol
}

fn default_generations() -> usize {
    gwtk::tails::DEFAULT_GENERATIONS
}

/// `solve`. `tol` and `max_iter` are shorthands for the same fields of
/// `solver` and take precedence over them.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub u: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Growth certificate of `H` for the closed-form bounds; the best one on
    /// a grid of rates is used when absent.
    #[serde(default)]
    pub certificate: Option<GrowthCertificate>,
    #[serde(default)]
    pub seed: u64,
}

impl SolveConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        if let Some(t) = self.tol.take() {
            self.solver.tol = t;
        }
        if let Some(m) = self.max_iter.take() {
            self.solver.max_iter = m;
        }
        check_solver(&self.solver)?;
        check_vector("u", &self.u, self.h.dim())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub u: Vec<f64>,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ClassifyConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        check_solver(&self.solver)?;
        check_vector("u", &self.u, self.h.dim())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RayConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    /// Direction of the ray `{t d : t ≥ 0}`.
    pub d: Vec<f64>,
    /// Bisection tolerance on `t`.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_boundary_tol")]
    pub boundary_tol: f64,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RayConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        check_solver(&self.solver)?;
        check_vector("d", &self.d, self.h.dim())?;
        if self.d.iter().all(|x| *x == 0.0) {
            return Err(config_err("direction d is zero".into()));
        }
        if !(self.tol > 0.0) {
            return Err(config_err(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub y: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

impl BoundaryConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        check_vector("y", &self.y, self.h.dim())?;
        if !(self.tol > 0.0) {
            return Err(config_err(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReduceConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub u: Vec<f64>,
    #[serde(default = "default_generations")]
    pub generations: usize,
    #[serde(default)]
    pub certificate: Option<GrowthCertificate>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl TailsConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        check_solver(&self.solver)?;
        check_vector("u", &self.u, self.h.dim())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterBoundConfig {
    pub kernel: KernelSpec,
    pub u: Vec<f64>,
    pub d_grid: Vec<f64>,
    #[serde(default)]
    pub options: ClusterBoundOptions,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl ClusterBoundConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.kernel.validate()?;
        check_solver(&self.solver)?;
        check_vector("u", &self.u, self.kernel.h().dim())?;
        check_distances(&self.d_grid)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HawkesBoundConfig {
    pub mu: Vec<f64>,
    pub kernel: KernelSpec,
    /// Length of the counting window `[0, window)`.
    pub window: f64,
    pub u: Vec<f64>,
    #[serde(default)]
    pub certificate: Option<GrowthCertificate>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl HawkesBoundConfig {
    pub fn params(&self) -> HawkesParams {
        HawkesParams { mu: self.mu.clone(), kernel: self.kernel.clone(), window: self.window }
    }

    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.params().validate()?;
        check_solver(&self.solver)?;
        check_vector("u", &self.u, self.mu.len())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyLaplaceConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub u: Vec<f64>,
    /// Root types to simulate; all types when absent.
    #[serde(default)]
    pub roots: Option<Vec<usize>>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl VerifyLaplaceConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let dim = self.h.dim();
        check_vector("u", &self.u, dim)?;
        self.roots = Some(resolve_roots(self.roots.take(), dim)?);
        check_mc(self.replicates, self.cap)?;
        check_solver(&self.solver)
    }
}

fn resolve_roots(roots: Option<Vec<usize>>, dim: usize) -> Result<Vec<usize>, CliError> {
    let roots = roots.unwrap_or_else(|| (0..dim).collect());
    for &r in &roots {
        check_root(r, dim)?;
    }
    Ok(roots)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTailsConfig {
    #[serde(rename = "H")]
    pub h: NonNegMatrix,
    pub u: Vec<f64>,
    #[serde(default)]
    pub roots: Option<Vec<usize>>,
    /// Generations `0..=generations` are compared.
    #[serde(default = "default_verify_generations")]
    pub generations: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_verify_generations() -> usize {
    8
}

impl VerifyTailsConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        let dim = self.h.dim();
        check_vector("u", &self.u, dim)?;
        self.roots = Some(resolve_roots(self.roots.take(), dim)?);
        check_mc(self.replicates, self.cap)?;
        check_solver(&self.solver)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyClusterConfig {
    pub kernel: KernelSpec,
    pub u: Vec<f64>,
    pub d_grid: Vec<f64>,
    #[serde(default)]
    pub roots: Option<Vec<usize>>,
    #[serde(default)]
    pub options: ClusterBoundOptions,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl VerifyClusterConfig {
    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.kernel.validate()?;
        let dim = self.kernel.h().dim();
        check_vector("u", &self.u, dim)?;
        check_distances(&self.d_grid)?;
        self.roots = Some(resolve_roots(self.roots.take(), dim)?);
        check_mc(self.replicates, self.cap)?;
        check_solver(&self.solver)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyHawkesConfig {
    pub mu: Vec<f64>,
    pub kernel: KernelSpec,
    pub window: f64,
    /// One row per vector.
    pub u_points: Vec<Vec<f64>>,
    /// Ancestor burn-in; derived from the kernel when absent.
    #[serde(default)]
    pub t_burn: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_cap")]
    pub cap: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
}

impl VerifyHawkesConfig {
    pub fn params(&self) -> HawkesParams {
        HawkesParams { mu: self.mu.clone(), kernel: self.kernel.clone(), window: self.window }
    }

    pub fn resolve(&mut self) -> Result<(), CliError> {
        self.params().validate()?;
        if self.u_points.is_empty() {
            return Err(config_err("u_points is empty".into()));
        }
        for u in &self.u_points {
            check_vector("u", u, self.mu.len())?;
        }
        if let Some(t) = self.t_burn {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(config_err(format!("t_burn must be finite and >= 0, got {t}")));
            }
        }
        check_mc(self.replicates, self.cap)?;
        check_solver(&self.solver)
    }
}

pub fn check_convolve(cfg: &ConvolveCheckConfig) -> Result<(), CliError> {
    if cfg.kernels == 0 || cfg.max_dim == 0 || cfg.cells == 0 || cfg.exp_cells == 0 {
        return Err(config_err("kernels, max_dim, cells and exp_cells must be positive".into()));
    }
    if !(cfg.step > 0.0 && cfg.step.is_finite()) {
        return Err(config_err(format!("step must be finite and positive, got {}", cfg.step)));
    }
    Ok(())
}
