//! TOML run configurations. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shearmod::inverse::{DataOptions, LandweberOptions};
use shearmod::norms::NormSpec;
use shearmod::phantoms::{ExcitationSpec, PhantomSpec};
use shearmod::{Error, Grid, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cells: Vec<usize>,
    #[serde(default)]
    pub extents: Option<Vec<f64>>,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid> {
        let ext = self.extents.clone().unwrap_or_else(|| vec![1.0; self.cells.len()]);
        Grid::new(&self.cells, &ext)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForwardConfig {
    pub grid: GridConfig,
    pub phantom: PhantomSpec,
    pub omega: f64,
    pub excitations: Vec<ExcitationSpec>,
    /// Constant first Lamé parameter; solves the elasticity system instead of Stokes.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub phantom: PhantomSpec,
    /// Generate data on a 2× refined grid and inject back.
    #[serde(default = "yes")]
    pub finer_grid: bool,
    /// Relative noise level (std / rms of the clean field).
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

fn yes() -> bool {
    true
}

impl SyntheticData {
    pub fn options(&self) -> DataOptions {
        DataOptions { finer_grid: self.finer_grid, noise: self.noise, noise_seed: self.noise_seed }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasuredData {
    /// One displacement file (VTK or CSV) per excitation.
    pub files: Vec<PathBuf>,
    /// Known boundary value of μ.
    pub trace: f64,
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_k() -> usize {
    4
}

fn default_threshold() -> f64 {
    shearmod::residual::KERNEL_THRESHOLD
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { k: default_k(), threshold: default_threshold() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub grid: GridConfig,
    pub omega: f64,
    pub mu_min: f64,
    pub mu_max: f64,
    /// Constant starting modulus.
    pub start: f64,
    pub landweber: LandweberOptions,
    #[serde(default)]
    pub excitations: Vec<ExcitationSpec>,
    #[serde(default)]
    pub synthetic: Option<SyntheticData>,
    #[serde(default)]
    pub measured: Option<MeasuredData>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FieldSource {
    /// `u = M (x − c)` with `c` the domain center.
    Affine { matrix: Vec<Vec<f64>> },
    File { path: PathBuf },
    /// Stokes solution for the configured phantom and ω.
    Solve { excitation: ExcitationSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub grid: GridConfig,
    pub fields: Vec<FieldSource>,
    #[serde(default)]
    pub phantom: Option<PhantomSpec>,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default = "default_cert_threshold")]
    pub threshold: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_cert_threshold() -> f64 {
    shearmod::certificates::DEFAULT_THRESHOLD
}

fn default_samples() -> usize {
    shearmod::certificates::DEFAULT_SAMPLES
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsConfig {
    pub count: usize,
    pub amplitudes: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StokesLimitConfig {
    pub lambdas: Vec<f64>,
    /// Excitation index used as boundary data.
    #[serde(default)]
    pub excitation: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GBoundConfig {
    pub orders: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub grid: GridConfig,
    pub background: PhantomSpec,
    pub omega: f64,
    pub excitations: Vec<ExcitationSpec>,
    pub norm: NormSpec,
    pub pairs: PairsConfig,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub stokes_limit: Option<StokesLimitConfig>,
    #[serde(default)]
    pub g_bound: Option<GBoundConfig>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::MissingData(format!("config {}: {e}", path.display())))?;
    let cfg = toml::from_str(&text).map_err(|e| Error::Parse(format!("{}: {}", path.display(), e.message())))?;
    Ok((cfg, text))
}

/// Relative paths inside a config resolve against the config's directory.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}
