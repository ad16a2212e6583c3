//! Synthetic shear-modulus phantoms, boundary excitations and measurement noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `exp(−|x − c|² / r²)`
    #[default]
    Gaussian,
    /// Smooth plateau: 1 inside `r − w/2`, 0 outside `r + w/2`, C^∞ in between.
    Plateau,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub center: Vec<f64>,
    pub radius: f64,
    /// Relative contrast: the inclusion multiplies the background by `1 + contrast` at its peak.
    pub contrast: f64,
    #[serde(default)]
    pub width: f64,
    #[serde(default)]
    pub profile: Profile,
}

impl Inclusion {
    pub fn gaussian(center: &[f64], radius: f64, contrast: f64) -> Self {
        Self { center: center.to_vec(), radius, contrast, width: 0.0, profile: Profile::Gaussian }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.center.len() != dim {
            return Err(Error::InvalidInput(format!("inclusion center has {} coordinates, grid is {dim}D", self.center.len())));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) || !self.contrast.is_finite() {
            return Err(Error::InvalidInput("inclusion radius must be positive and contrast finite".into()));
        }
        if self.profile == Profile::Plateau && !(self.width > 0.0) {
            return Err(Error::InvalidInput("plateau inclusions need a positive width".into()));
        }
        Ok(())
    }

    /// Shape function in [0, 1], equal to 1 at the center.
    pub fn shape(&self, x: [f64; 3]) -> f64 {
        let r2: f64 = self.center.iter().enumerate().map(|(a, c)| (x[a] - c).powi(2)).sum();
        match self.profile {
            Profile::Gaussian => (-r2 / (self.radius * self.radius)).exp(),
            Profile::Plateau => smooth_step((self.radius + 0.5 * self.width - r2.sqrt()) / self.width),
        }
    }
}

/// C^∞ transition from 0 (t ≤ 0) to 1 (t ≥ 1).
pub fn smooth_step(t: f64) -> f64 {
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = psi(t);
    let b = psi(1.0 - t);
    if a + b == 0.0 {
        0.0
    } else {
        a / (a + b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub background: f64,
    #[serde(default)]
    pub inclusions: Vec<Inclusion>,
    #[serde(default = "default_mu_min")]
    pub mu_min: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_mu_min() -> f64 {
    1e-3
}

impl PhantomSpec {
    pub fn homogeneous(background: f64) -> Self {
        Self { background, inclusions: vec![], mu_min: default_mu_min(), seed: 0 }
    }

    pub fn with_inclusion(mut self, inc: Inclusion) -> Self {
        self.inclusions.push(inc);
        self
    }

    /// `count` Gaussian bumps with centers drawn uniformly from the middle half
    /// of the domain, radii in [0.1, 0.2]·min extent and contrasts of random
    /// sign with magnitude `amplitude`.
    pub fn random_bumps(background: f64, grid: &Grid, count: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid.dim();
        let lmin = (0..d).map(|a| grid.extent(a)).fold(f64::INFINITY, f64::min);
        let inclusions = (0..count)
            .map(|_| {
                let center: Vec<f64> = (0..d).map(|a| grid.extent(a) * rng.random_range(0.25..0.75)).collect();
                let radius = lmin * rng.random_range(0.1..0.2);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                Inclusion::gaussian(&center, radius, sign * amplitude)
            })
            .collect();
        Self { background, inclusions, mu_min: default_mu_min(), seed }
    }
}

pub fn make_phantom(spec: &PhantomSpec, grid: &Grid) -> Result<ScalarField> {
    if !(spec.background > 0.0 && spec.background.is_finite()) {
        return Err(Error::InvalidInput(format!("background must be positive, got {}", spec.background)));
    }
    if !(spec.mu_min > 0.0) {
        return Err(Error::InvalidInput(format!("μ_min must be positive, got {}", spec.mu_min)));
    }
    for inc in &spec.inclusions {
        inc.validate(grid.dim())?;
    }
    let mu = ScalarField::from_fn(*grid, |x| {
        spec.background * (1.0 + spec.inclusions.iter().map(|inc| inc.contrast * inc.shape(x)).sum::<f64>())
    });
    let m = mu.min();
    if m < spec.mu_min {
        return Err(Error::ContrastViolation(format!("phantom minimum {m:.6e} is below μ_min = {:.6e}", spec.mu_min)));
    }
    Ok(mu)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExcitationKind {
    /// `u_a = x_b − c_b`
    Shear,
    /// `u_a = x_a − c_a`, `u_b = −(x_b − c_b)`
    PureShear,
    /// `u_a = −(x_b − c_b)`, `u_b = x_a − c_a`
    Rotation,
    RandomSolenoidal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    pub kind: ExcitationKind,
    #[serde(default = "one")]
    pub amplitude: f64,
    /// Highest trigonometric mode per axis for the random kind.
    #[serde(default = "two")]
    pub modes: usize,
    #[serde(default)]
    pub seed: u64,
    /// Axis pair `(a, b)` for the affine kinds.
    #[serde(default = "default_axes")]
    pub axes: [usize; 2],
}

fn one() -> f64 {
    1.0
}

fn two() -> usize {
    2
}

fn default_axes() -> [usize; 2] {
    [0, 1]
}

impl ExcitationSpec {
    pub fn new(kind: ExcitationKind) -> Self {
        Self { kind, amplitude: 1.0, modes: 2, seed: 0, axes: default_axes() }
    }

    pub fn with_axes(mut self, a: usize, b: usize) -> Self {
        self.axes = [a, b];
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }
}

/// Divergence-free field whose boundary trace is the excitation. Interior
/// values are the generating field itself; solvers only read the trace.
pub fn excitation(spec: &ExcitationSpec, grid: &Grid) -> Result<VectorField> {
    let [a, b] = spec.axes;
    if a == b || a >= grid.dim() || b >= grid.dim() {
        return Err(Error::InvalidInput(format!("invalid axis pair {:?} for a {}D grid", spec.axes, grid.dim())));
    }
    let c = grid.center();
    let amp = spec.amplitude;
    let f = match spec.kind {
        ExcitationKind::Shear => VectorField::from_fn(*grid, |x| {
            let mut v = [0.0; 3];
            v[a] = amp * (x[b] - c[b]);
            v
        }),
        ExcitationKind::PureShear => VectorField::from_fn(*grid, |x| {
            let mut v = [0.0; 3];
            v[a] = amp * (x[a] - c[a]);
            v[b] = -amp * (x[b] - c[b]);
            v
        }),
        ExcitationKind::Rotation => VectorField::from_fn(*grid, |x| {
            let mut v = [0.0; 3];
            v[a] = -amp * (x[b] - c[b]);
            v[b] = amp * (x[a] - c[a]);
            v
        }),
        ExcitationKind::RandomSolenoidal => return random_solenoidal_excitation(spec, grid),
    };
    Ok(make_compatible(f))
}

/// One random trigonometric term of a potential, `k = (k_0, k_1, k_2)`.
#[derive(Clone, Copy, Debug)]
struct Mode {
    k: [f64; 3],
    cos: f64,
    sin: f64,
}

impl Mode {
    // value and gradient of cos·cos(k·x) + sin·sin(k·x)
    fn eval(&self, x: [f64; 3]) -> (f64, [f64; 3]) {
        let arg: f64 = (0..3).map(|a| self.k[a] * x[a]).sum();
        let (s, co) = arg.sin_cos();
        let v = self.cos * co + self.sin * s;
        let dv = -self.cos * s + self.sin * co;
        (v, [self.k[0] * dv, self.k[1] * dv, self.k[2] * dv])
    }
}

fn draw_modes(rng: &mut ChaCha8Rng, grid: &Grid, modes: usize) -> Vec<Mode> {
    let d = grid.dim();
    let m = modes as i64;
    let mut out = vec![];
    let range: Vec<i64> = (-m..=m).collect();
    let third: Vec<i64> = if d == 3 { range.clone() } else { vec![0] };
    for &k0 in &range {
        for &k1 in &range {
            for &k2 in &third {
                // one representative of each ±k pair
                if (k0, k1, k2) <= (0, 0, 0) {
                    continue;
                }
                let k = [
                    PI * k0 as f64 / grid.extent(0),
                    PI * k1 as f64 / grid.extent(1),
                    if d == 3 { PI * k2 as f64 / grid.extent(2) } else { 0.0 },
                ];
                let scale = 1.0 / (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]);
                let cos: f64 = StandardNormal.sample(rng);
                let sin: f64 = StandardNormal.sample(rng);
                out.push(Mode { k, cos: cos * scale, sin: sin * scale });
            }
        }
    }
    out
}

/// Boundary data drawn from a random stream function (2D) or vector
/// potential (3D): Gaussian coefficients on the trigonometric modes up to
/// `modes` per axis, damped by `1/|k|²`. The generating field is exactly
/// divergence-free, its strain is traceless and Gaussian at every point, and
/// the discrete boundary flux is removed afterwards.
pub fn random_solenoidal_excitation(spec: &ExcitationSpec, grid: &Grid) -> Result<VectorField> {
    if spec.modes == 0 {
        return Err(Error::InvalidInput("mode count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = grid.dim();
    let potentials: Vec<Vec<Mode>> = if d == 2 {
        vec![draw_modes(&mut rng, grid, spec.modes)]
    } else {
        (0..3).map(|_| draw_modes(&mut rng, grid, spec.modes)).collect()
    };
    let grad = |modes: &[Mode], x: [f64; 3]| {
        modes.iter().fold([0.0; 3], |mut acc, m| {
            let (_, g) = m.eval(x);
            for a in 0..3 {
                acc[a] += g[a];
            }
            acc
        })
    };
    let f = VectorField::from_fn(*grid, |x| {
        if d == 2 {
            let g = grad(&potentials[0], x);
            [g[1], -g[0], 0.0]
        } else {
            let g: Vec<[f64; 3]> = potentials.iter().map(|p| grad(p, x)).collect();
            // curl A with g[i][j] = ∂_j A_i
            [g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]]
        }
    });
    let rms = f.rms();
    let f = if rms > 0.0 { f.scale(spec.amplitude / rms) } else { f };
    Ok(make_compatible(f))
}

/// Trapezoid net outflow `∮ F·n` over the box faces.
pub fn boundary_flux(f: &VectorField) -> f64 {
    let g = f.grid();
    let d = g.dim();
    let mut total = 0.0;
    for i in g.boundary_indices() {
        let ijk = g.ijk(i);
        let v = f.at(i);
        for a in 0..d {
            let sign = if ijk[a] == 0 {
                -1.0
            } else if ijk[a] == g.cells(a) {
                1.0
            } else {
                continue;
            };
            let w: f64 = (0..d)
                .filter(|&b| b != a)
                .map(|b| if ijk[b] == 0 || ijk[b] == g.cells(b) { 0.5 * g.spacing(b) } else { g.spacing(b) })
                .product();
            total += sign * v[a] * w;
        }
    }
    total
}

/// Removes the discrete net flux by a uniform shift along the outward face
/// normals (summed at edges and corners).
pub fn make_compatible(f: VectorField) -> VectorField {
    let g = *f.grid();
    let normal = VectorField::from_fn(g, |_| [0.0; 3]);
    let mut nv = normal.into_values();
    let n = g.node_count();
    for i in g.boundary_indices() {
        let ijk = g.ijk(i);
        for a in 0..g.dim() {
            if ijk[a] == 0 {
                nv[a * n + i] = -1.0;
            } else if ijk[a] == g.cells(a) {
                nv[a * n + i] = 1.0;
            }
        }
    }
    let normal = VectorField::new(g, nv).expect("finite normals");
    let phi = boundary_flux(&f);
    let phi_n = boundary_flux(&normal);
    if phi == 0.0 || phi_n == 0.0 {
        return f;
    }
    let delta = phi / phi_n;
    f.zip_map(&normal, |u, nn| u - delta * nn).expect("same grid")
}

/// Adds i.i.d. Gaussian noise with standard deviation `level · RMS(u)`.
pub fn add_noise(u: &VectorField, level: f64, seed: u64) -> Result<VectorField> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidInput(format!("noise level must be non-negative, got {level}")));
    }
    if level == 0.0 {
        return Ok(u.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = level * u.rms();
    let vals: Vec<f64> = u
        .values()
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect();
    VectorField::new(*u.grid(), vals)
}

/// Seed and generator record written next to every randomized output.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SeedRecord {
    pub generator: String,
    pub seed: u64,
    pub rng: String,
}

impl SeedRecord {
    pub fn new(generator: &str, seed: u64) -> Self {
        Self { generator: generator.into(), seed, rng: "ChaCha8".into() }
    }
}
