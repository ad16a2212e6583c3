//! Spectral Sobolev norms, boundary-weighted norms and the empirical
//! stability-ratio experiment.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

use crate::certificates;
use crate::diff;
use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::par;
use crate::stokes::{Discretization, SolverOptions, StokesOperator};

/// Relative size of boundary values tolerated by fractional positive orders.
pub const TRACE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub s: f64,
    /// Power of the boundary weight: 0 or −2.
    #[serde(default)]
    pub weight_power: i32,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_eps() -> f64 {
    0.01
}

impl NormSpec {
    pub fn new(s: f64) -> Result<Self> {
        let spec = Self { s, weight_power: 0, epsilon: default_eps() };
        spec.validate()?;
        Ok(spec)
    }

    /// Order `1/2 + ε`.
    pub fn half_plus(epsilon: f64) -> Result<Self> {
        let spec = Self { s: 0.5 + epsilon, weight_power: 0, epsilon };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s.abs() <= 4.0) {
            return Err(Error::InvalidInput(format!("norm order {} outside [-4, 4]", self.s)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("ε = {} outside (0, 1)", self.epsilon)));
        }
        if self.weight_power != 0 && self.weight_power != -2 {
            return Err(Error::InvalidInput(format!("weight power {} is not 0 or -2", self.weight_power)));
        }
        Ok(())
    }
}

/// In-place DST-I along one axis of a row-major box of interior samples
/// (`shape[0]` fastest). Uses the odd extension of length `2(m + 1)`.
fn dst1_axis(data: &mut [f64], shape: [usize; 3], axis: usize, planner: &mut FftPlanner<f64>) {
    let m = shape[axis];
    if m == 0 {
        return;
    }
    let len = 2 * (m + 1);
    let fft = planner.plan_fft_forward(len);
    let stride = match axis {
        0 => 1,
        1 => shape[0],
        _ => shape[0] * shape[1],
    };
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let lines: Vec<usize> = (0..data.len()).filter(|&i| (i / stride) % m == 0).collect();
    for start in lines {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for j in 0..m {
            let v = data[start + j * stride];
            buf[j + 1] = Complex::new(v, 0.0);
            buf[len - 1 - j] = Complex::new(-v, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..m {
            // X_k = -2i Σ_j f_j sin(π j k / (m+1))
            data[start + k * stride] = -0.5 * buf[k + 1].im;
        }
    }
}

/// Sine coefficients `c_k` of the interior samples, so that
/// `f(x) = Σ_k c_k Π_a sin(k_a π x_a / L_a)` interpolates the nodes.
pub fn sine_coefficients(grid: &Grid, values: &[f64]) -> (Vec<f64>, [usize; 3]) {
    let d = grid.dim();
    let mut shape = [1usize; 3];
    for a in 0..d {
        shape[a] = grid.cells(a) - 1;
    }
    let mut data = Vec::with_capacity(shape.iter().product());
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                let ijk = [i + 1, j + 1, if d == 3 { k + 1 } else { 0 }];
                data.push(values[grid.index(ijk)]);
            }
        }
    }
    let mut planner = FftPlanner::new();
    for a in 0..d {
        dst1_axis(&mut data, shape, a, &mut planner);
    }
    let scale: f64 = (0..d).map(|a| 2.0 / grid.cells(a) as f64).product();
    data.iter_mut().for_each(|v| *v *= scale);
    (data, shape)
}

/// Continuous Dirichlet eigenvalue `Σ_a (k_a π / L_a)²` of each coefficient slot.
fn eigenvalues(grid: &Grid, shape: [usize; 3]) -> Vec<f64> {
    let d = grid.dim();
    let mut out = Vec::with_capacity(shape.iter().product());
    for k in 0..shape[2] {
        for j in 0..shape[1] {
            for i in 0..shape[0] {
                let idx = [i + 1, j + 1, k + 1];
                out.push((0..d).map(|a| (idx[a] as f64 * PI / grid.extent(a)).powi(2)).sum());
            }
        }
    }
    out
}

fn scalar_hs_squared(grid: &Grid, values: &[f64], s: f64) -> Result<f64> {
    let is_fractional = s.fract() != 0.0;
    if is_fractional && s > 0.0 {
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let trace = (0..values.len()).filter(|&i| grid.is_boundary_index(i)).fold(0.0f64, |m, i| m.max(values[i].abs()));
        if scale > 0.0 && trace > TRACE_TOL * scale {
            return Err(Error::NonzeroTrace { max_trace: trace, scale });
        }
    }
    let (c, shape) = sine_coefficients(grid, values);
    let lam = eigenvalues(grid, shape);
    let vol: f64 = (0..grid.dim()).map(|a| 0.5 * grid.extent(a)).product();
    Ok(vol * c.iter().zip(&lam).map(|(ck, l)| (1.0 + l).powf(s) * ck * ck).sum::<f64>())
}

/// `‖f‖ₛ² = Σ_k (1 + Λ_k)^s |f̂_k|²` over the Dirichlet sine basis of the
/// box, after zero extension. Boundary node values are dropped; for
/// fractional `s > 0` they must vanish.
pub fn h_s_norm(f: &ScalarField, s: f64) -> Result<f64> {
    if !s.is_finite() {
        return Err(Error::InvalidInput(format!("norm order {s} is not finite")));
    }
    Ok(scalar_hs_squared(f.grid(), f.values(), s)?.sqrt())
}

/// Componentwise `h_s_norm`.
pub fn h_s_norm_vector(u: &VectorField, s: f64) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..u.dim() {
        total += scalar_hs_squared(u.grid(), u.component(c), s)?;
    }
    Ok(total.sqrt())
}

/// Boundary defining function `ρ = (Σ_a d_a⁻⁴)^{−1/4}` with the smooth
/// per-axis distances `d_a = x_a (L_a − x_a) / L_a`.
#[derive(Clone, Debug)]
pub struct BoundaryWeight {
    rho: ScalarField,
}

impl BoundaryWeight {
    pub fn new(grid: &Grid) -> Self {
        let g = *grid;
        let rho = ScalarField::from_fn(g, |x| {
            let mut acc = 0.0;
            for a in 0..g.dim() {
                let l = g.extent(a);
                let d = x[a] * (l - x[a]) / l;
                if d <= 0.0 {
                    return 0.0;
                }
                acc += d.powi(-4);
            }
            acc.powf(-0.25)
        });
        let mut v = rho.into_values();
        for i in g.boundary_indices() {
            v[i] = 0.0;
        }
        Self { rho: ScalarField::new(g, v).expect("finite weight") }
    }

    pub fn field(&self) -> &ScalarField {
        &self.rho
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseNorm {
    L2,
    H1,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedOptions {
    /// Node layers (counted from the boundary, inclusive) left out of the quadrature.
    pub exclude: usize,
    /// Bound on `max |ρ^p f| / max |f|` over the quadrature nodes.
    pub cap: f64,
}

impl Default for WeightedOptions {
    fn default() -> Self {
        Self { exclude: 1, cap: 1e6 }
    }
}

/// Quadrature of `ρ^power · f` in L² or H¹ over nodes deeper than the excluded layer.
pub fn weighted_norm(f: &VectorField, power: i32, rho: &BoundaryWeight, base: BaseNorm, opts: WeightedOptions) -> Result<f64> {
    let g = *f.grid();
    g.ensure_same(rho.field().grid())?;
    let keep: Vec<bool> = (0..g.node_count()).map(|i| g.boundary_depth(g.ijk(i)) > opts.exclude).collect();
    if !keep.iter().any(|&k| k) {
        return Err(Error::InsufficientResolution(format!("no nodes deeper than {} layers", opts.exclude)));
    }
    let r = rho.field().values();
    let n = g.node_count();
    let mut weighted = vec![0.0; f.values().len()];
    for c in 0..f.dim() {
        for i in 0..n {
            if g.boundary_depth(g.ijk(i)) > 0 {
                weighted[c * n + i] = r[i].powi(power) * f.values()[c * n + i];
            }
        }
    }
    let fmax = f.max_abs();
    if fmax > 0.0 {
        let wmax = (0..n).filter(|&i| keep[i]).flat_map(|i| (0..f.dim()).map(move |c| c * n + i)).fold(0.0f64, |m, k| m.max(weighted[k].abs()));
        let ratio = wmax / fmax;
        if !(ratio <= opts.cap) {
            return Err(Error::UnboundedWeightedField { ratio, cap: opts.cap });
        }
    }
    let w = g.weights();
    let mut total = 0.0;
    for c in 0..f.dim() {
        let comp = &weighted[c * n..(c + 1) * n];
        total += (0..n).filter(|&i| keep[i]).map(|i| w[i] * comp[i] * comp[i]).sum::<f64>();
        if base == BaseNorm::H1 {
            for a in 0..g.dim() {
                let d = diff::partial(&g, comp, a);
                total += (0..n).filter(|&i| keep[i] && g.boundary_depth(g.ijk(i)) > opts.exclude + 1).map(|i| w[i] * d[i] * d[i]).sum::<f64>();
            }
        }
    }
    Ok(total.sqrt())
}

/// A modulus pair sharing its boundary trace.
#[derive(Clone, Debug)]
pub struct StabilityPair {
    pub id: usize,
    pub amplitude: f64,
    pub mu1: ScalarField,
    pub mu2: ScalarField,
}

/// `Π_a 16 (x_a (L_a − x_a) / L_a²)²`: one at the center, vanishing to second order on ∂Ω.
pub fn box_window(grid: &Grid, x: [f64; 3]) -> f64 {
    (0..grid.dim())
        .map(|a| {
            let l = grid.extent(a);
            let t = x[a] * (l - x[a]) / (l * l);
            16.0 * t * t
        })
        .product()
}

/// `count` windowed Gaussian bumps, each applied at every amplitude:
/// `μ₁ = μ₂ (1 + a · bump · window)`.
pub fn bump_pairs(mu2: &ScalarField, count: usize, amplitudes: &[f64], seed: u64) -> Vec<StabilityPair> {
    let g = *mu2.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lmin = (0..g.dim()).map(|a| g.extent(a)).fold(f64::INFINITY, f64::min);
    let mut out = vec![];
    for id in 0..count {
        let center: Vec<f64> = (0..g.dim()).map(|a| g.extent(a) * rng.random_range(0.3..0.7)).collect();
        let radius = lmin * rng.random_range(0.1..0.2);
        let shape = ScalarField::from_fn(g, |x| {
            let r2: f64 = center.iter().enumerate().map(|(a, c)| (x[a] - c).powi(2)).sum();
            (-r2 / (radius * radius)).exp() * box_window(&g, x)
        });
        for &amp in amplitudes {
            let mu1 = mu2.zip_map(&shape, |m, b| m * (1.0 + amp * b)).expect("same grid");
            out.push(StabilityPair { id, amplitude: amp, mu1, mu2: mu2.clone() });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub pair: usize,
    pub amplitude: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` for degenerate pairs.
    pub ratio: Option<f64>,
    pub degenerate: bool,
    pub certified: bool,
    pub certificate_inf: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeMax {
    pub amplitude: f64,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilitySummary {
    pub max_ratio: f64,
    pub min_ratio: f64,
    /// `max_ratio / min_ratio` over non-degenerate pairs.
    pub spread: f64,
    pub per_amplitude: Vec<AmplitudeMax>,
    /// Largest over smallest per-amplitude maximum.
    pub amplitude_spread: f64,
    pub degenerate: usize,
    pub uncertified: usize,
    pub channels: usize,
    pub lhs_order: f64,
    pub rhs_order: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    pub summary: StabilitySummary,
}

impl StabilityTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pair,amplitude,lhs,rhs,ratio,degenerate,certified\n");
        for r in &self.rows {
            let ratio = r.ratio.map(|v| format!("{v:.12e}")).unwrap_or_default();
            s += &format!("{},{},{:.12e},{:.12e},{},{},{}\n", r.pair, r.amplitude, r.lhs, r.rhs, ratio, r.degenerate, r.certified);
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

fn pair_row(pair: &StabilityPair, excitations: &[VectorField], omega: f64, spec: &NormSpec, disc: &Arc<Discretization>) -> Result<StabilityRow> {
    let g = *disc.grid();
    let dim = g.dim();
    let rhs_order = if dim == 3 { spec.s + 1.0 } else { spec.s };
    let dmu = pair.mu1.sub(&pair.mu2)?;
    if dmu.max_abs_on_boundary() > 0.0 {
        return Err(Error::InvalidInput(format!("pair {} does not share the boundary trace", pair.id)));
    }
    let lhs = h_s_norm(&dmu, spec.s)?;
    let opts = SolverOptions::default();
    let op1 = StokesOperator::new(disc.clone(), &pair.mu1, omega, opts, None)?;
    let op2 = StokesOperator::new(disc.clone(), &pair.mu2, omega, opts, None)?;
    let rho = (spec.weight_power != 0).then(|| BoundaryWeight::new(&g));
    let mut rhs = 0.0;
    let mut backgrounds = vec![];
    for f in excitations {
        let u1 = op1.solve(f, None)?.u;
        let u2 = op2.solve(f, None)?.u;
        let w = u1.sub(&u2)?;
        let scale = u2.l2_norm();
        if scale == 0.0 {
            return Err(Error::DegenerateInput("excitation produces a zero background field".into()));
        }
        rhs += match &rho {
            None => h_s_norm_vector(&w, rhs_order)?,
            Some(rho) => weighted_norm(&w, spec.weight_power, rho, if dim == 3 { BaseNorm::H1 } else { BaseNorm::L2 }, WeightedOptions::default())?,
        } / scale;
        backgrounds.push(u2);
    }
    let cert = match (dim, backgrounds.as_slice()) {
        (2, [u, ..]) => Some(certificates::cert_2d(u, certificates::DEFAULT_THRESHOLD)?),
        (3, [u, v, ..]) => Some(certificates::cert_3d(u, v, certificates::DEFAULT_THRESHOLD, certificates::DEFAULT_SAMPLES)?),
        _ => None,
    };
    let degenerate = lhs == 0.0 || rhs == 0.0;
    Ok(StabilityRow {
        pair: pair.id,
        amplitude: pair.amplitude,
        lhs,
        rhs,
        ratio: (!degenerate).then(|| lhs / rhs),
        degenerate,
        certified: cert.as_ref().is_some_and(|c| c.pass),
        certificate_inf: cert.map(|c| c.inf),
    })
}

/// Ratios `‖μ₁ − μ₂‖_s / Σ_F (‖u₁ − u₂‖_{s'} / ‖u₂‖_{L²})` with `s' = s` in 2D and
/// `s + 1` in 3D (or the ρ⁻²-weighted L²/H¹ norm when `spec.weight_power = −2`).
pub fn stability_experiment(pairs: &[StabilityPair], excitations: &[VectorField], omega: f64, spec: &NormSpec) -> Result<StabilityTable> {
    spec.validate()?;
    let (Some(first), false) = (pairs.first(), excitations.is_empty()) else {
        return Err(Error::MissingData("stability experiment needs pairs and excitations".into()));
    };
    let g = *first.mu2.grid();
    for p in pairs {
        g.ensure_same(p.mu1.grid())?;
        g.ensure_same(p.mu2.grid())?;
    }
    for f in excitations {
        g.ensure_same(f.grid())?;
    }
    let disc = Arc::new(Discretization::new(&g)?);
    let rows = par::map_slice(pairs, |p| pair_row(p, excitations, omega, spec, &disc)).into_iter().collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mut per_amplitude: Vec<AmplitudeMax> = vec![];
    for r in &rows {
        let Some(ratio) = r.ratio else { continue };
        match per_amplitude.iter_mut().find(|m| m.amplitude == r.amplitude) {
            Some(m) => m.max_ratio = m.max_ratio.max(ratio),
            None => per_amplitude.push(AmplitudeMax { amplitude: r.amplitude, max_ratio: ratio }),
        }
    }
    let hi = per_amplitude.iter().map(|m| m.max_ratio).fold(0.0, f64::max);
    let lo = per_amplitude.iter().map(|m| m.max_ratio).fold(f64::INFINITY, f64::min);
    let summary = StabilitySummary {
        max_ratio,
        min_ratio: if ratios.is_empty() { 0.0 } else { min_ratio },
        spread: if ratios.is_empty() { f64::NAN } else { max_ratio / min_ratio },
        amplitude_spread: if per_amplitude.is_empty() { f64::NAN } else { hi / lo },
        per_amplitude,
        degenerate: rows.iter().filter(|r| r.degenerate).count(),
        uncertified: rows.iter().filter(|r| !r.certified).count(),
        channels: excitations.len(),
        lhs_order: spec.s,
        rhs_order: if g.dim() == 3 { spec.s + 1.0 } else { spec.s },
    };
    Ok(StabilityTable { rows, summary })
}


#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mode(n: usize) -> ScalarField {
        let g = Grid::unit_square(n).unwrap();
        ScalarField::from_fn(g, |x| (PI * x[0]).sin() * (PI * x[1]).sin())
    }

    // direct O(N²) sine sum, independent of the FFT path
    fn slow_coefficients(g: &Grid, f: &ScalarField) -> Vec<(usize, usize, f64)> {
        let (n0, n1) = (g.cells(0), g.cells(1));
        let mut out = vec![];
        for k in 1..n0 {
            for l in 1..n1 {
                let mut acc = 0.0;
                for i in 1..n0 {
                    for j in 1..n1 {
                        acc += f.get([i, j, 0]) * (PI * (i * k) as f64 / n0 as f64).sin() * (PI * (j * l) as f64 / n1 as f64).sin();
                    }
                }
                out.push((k, l, acc * 4.0 / (n0 * n1) as f64));
            }
        }
        out
    }

    #[test]
    fn single_mode_matches_closed_form() {
        let f = mode(32);
        for s in [-2.0, -0.5, 0.0, 0.51, 1.0, 2.5] {
            let expect = ((1.0 + 2.0 * PI * PI).powf(s) * 0.25).sqrt();
            let got = h_s_norm(&f, s).unwrap();
            assert!((got - expect).abs() <= 1e-10 * expect, "s={s}: {got} vs {expect}");
        }
    }

    #[test]
    fn fft_coefficients_match_direct_sum() {
        let g = Grid::new(&[7, 10], &[1.3, 0.8]).unwrap();
        let f = ScalarField::from_fn(g, |x| (x[0] * x[1] * 3.0).sin() * x[0] * (1.3 - x[0]) * x[1] * (0.8 - x[1]));
        let (c, shape) = sine_coefficients(&g, f.values());
        for (k, l, v) in slow_coefficients(&g, &f) {
            let got = c[(k - 1) + shape[0] * (l - 1)];
            assert!((got - v).abs() < 1e-13, "{k},{l}");
        }
    }

    #[test]
    fn zero_field_has_zero_norm() {
        let g = Grid::unit_cube(6).unwrap();
        let z = ScalarField::zeros(g);
        for s in [-1.0, 0.0, 0.7, 2.0] {
            assert_eq!(h_s_norm(&z, s).unwrap(), 0.0);
        }
    }

    #[test]
    fn fractional_order_rejects_nonzero_trace() {
        let g = Grid::unit_square(8).unwrap();
        let f = ScalarField::constant(g, 1.0);
        assert_eq!(h_s_norm(&f, 0.51).unwrap_err().kind(), "NonzeroTrace");
        assert!(h_s_norm(&f, 1.0).is_ok());
    }

    #[test]
    fn order_zero_is_trapezoid_l2() {
        let g = Grid::new(&[12, 9, 10], &[1.0, 0.7, 1.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for i in g.boundary_indices() {
            v[i] = 0.0;
        }
        let f = ScalarField::new(g, v).unwrap();
        let direct: f64 = f.values().iter().zip(g.weights()).map(|(a, w)| w * a * a).sum::<f64>().sqrt();
        let spectral = h_s_norm(&f, 0.0).unwrap();
        assert!((direct - spectral).abs() < 1e-12 * direct);
    }

    #[test]
    fn order_one_matches_dirichlet_energy_quadrature() {
        let g = Grid::unit_square(128).unwrap();
        let f = ScalarField::from_fn(g, |x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]) * (1.0 + x[0] * x[1]));
        // edge-based Dirichlet energy plus trapezoid mass; (Δf/h)²·h² per edge
        let mut e = 0.0;
        for j in 0..=128 {
            for i in 0..128 {
                let wt = if j == 0 || j == 128 { 0.5 } else { 1.0 };
                e += wt * (f.get([i + 1, j, 0]) - f.get([i, j, 0])).powi(2);
                e += wt * (f.get([j, i + 1, 0]) - f.get([j, i, 0])).powi(2);
            }
        }
        let l2: f64 = f.values().iter().zip(g.weights()).map(|(a, w)| w * a * a).sum();
        let quad = (l2 + e).sqrt();
        let spectral = h_s_norm(&f, 1.0).unwrap();
        assert!((quad - spectral).abs() < 1e-4 * spectral, "{quad} {spectral}");
    }

    #[test]
    fn rho_vanishes_on_boundary_and_is_positive_inside() {
        let g = Grid::unit_cube(8).unwrap();
        let rho = BoundaryWeight::new(&g);
        for i in 0..g.node_count() {
            let v = rho.field().values()[i];
            if g.is_boundary_index(i) {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn rho_squared_weight_cancels() {
        let g = Grid::unit_square(32).unwrap();
        let rho = BoundaryWeight::new(&g);
        let gfun = |x: [f64; 3]| [(x[0] + 2.0 * x[1]).cos(), x[0] * x[1], 0.0];
        let r = rho.field().values().to_vec();
        let f = VectorField::from_fn(g, |x| {
            let i = g.index([(x[0] / g.spacing(0)).round() as usize, (x[1] / g.spacing(1)).round() as usize, 0]);
            let v = gfun(x);
            [r[i] * r[i] * v[0], r[i] * r[i] * v[1], 0.0]
        });
        let gv = VectorField::from_fn(g, gfun);
        let opts = WeightedOptions::default();
        let w = weighted_norm(&f, -2, &rho, BaseNorm::L2, opts).unwrap();
        let keep = |i: usize| g.boundary_depth(g.ijk(i)) > opts.exclude;
        let n = g.node_count();
        let direct: f64 = (0..n).filter(|&i| keep(i)).map(|i| g.weight(g.ijk(i)) * (gv.values()[i].powi(2) + gv.values()[n + i].powi(2))).sum::<f64>().sqrt();
        assert!((w - direct).abs() < 1e-8 * direct);
        assert_eq!(weighted_norm(&VectorField::zeros(g), -2, &rho, BaseNorm::H1, opts).unwrap(), 0.0);
    }

    #[test]
    fn nonvanishing_field_trips_the_cap() {
        let g = Grid::unit_square(64).unwrap();
        let rho = BoundaryWeight::new(&g);
        let f = VectorField::from_fn(g, |_| [1.0, 0.0, 0.0]);
        let err = weighted_norm(&f, -2, &rho, BaseNorm::L2, WeightedOptions { exclude: 1, cap: 100.0 }).unwrap_err();
        assert_eq!(err.kind(), "UnboundedWeightedField");
    }

    fn stability_setup(n: usize) -> (Grid, ScalarField, Vec<VectorField>) {
        use crate::phantoms::{excitation, ExcitationKind, ExcitationSpec};
        let g = Grid::unit_square(n).unwrap();
        let fs = [ExcitationKind::Shear, ExcitationKind::PureShear].map(|k| excitation(&ExcitationSpec::new(k), &g).unwrap()).to_vec();
        (g, ScalarField::constant(g, 1.0), fs)
    }

    #[test]
    fn bump_pairs_share_the_trace() {
        let (g, mu, _) = stability_setup(16);
        let pairs = bump_pairs(&mu, 3, &[0.2, 0.1], 4);
        assert_eq!(pairs.len(), 6);
        for p in &pairs {
            assert_eq!(p.mu1.sub(&p.mu2).unwrap().max_abs_on_boundary(), 0.0);
        }
        assert!((box_window(&g, [0.5, 0.5, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn equal_pair_is_degenerate_and_excluded() {
        let (_, mu, fs) = stability_setup(12);
        let mut pairs = bump_pairs(&mu, 1, &[0.1], 1);
        pairs.push(StabilityPair { id: 9, amplitude: 0.0, mu1: mu.clone(), mu2: mu });
        let tab = stability_experiment(&pairs, &fs, 2.0, &NormSpec::half_plus(0.01).unwrap()).unwrap();
        assert!(tab.rows[1].degenerate && tab.rows[1].ratio.is_none());
        assert_eq!(tab.summary.degenerate, 1);
        assert_eq!(tab.summary.max_ratio, tab.rows[0].ratio.unwrap());
        assert!(tab.to_csv().lines().nth(2).unwrap().starts_with("9,0,0.0"));
    }

    #[test]
    fn ratios_are_stable_across_amplitudes() {
        let (_, mu, fs) = stability_setup(24);
        let tab = stability_experiment(&bump_pairs(&mu, 4, &[0.2, 0.1, 0.05], 3), &fs, 4.0, &NormSpec::half_plus(0.01).unwrap()).unwrap();
        assert!(tab.summary.amplitude_spread < 2.0, "{}", tab.summary_json());
        assert_eq!(tab.summary.uncertified, 0);
    }

    #[test]
    fn ratios_invariant_under_excitation_scaling() {
        let (_, mu, fs) = stability_setup(16);
        let pairs = bump_pairs(&mu, 2, &[0.1], 5);
        let spec = NormSpec::half_plus(0.01).unwrap();
        let base = stability_experiment(&pairs, &fs, 2.0, &spec).unwrap();
        let scaled: Vec<VectorField> = fs.iter().map(|f| f.scale(3.0)).collect();
        let tab = stability_experiment(&pairs, &scaled, 2.0, &spec).unwrap();
        for (a, b) in base.rows.iter().zip(&tab.rows) {
            let (a, b) = (a.ratio.unwrap(), b.ratio.unwrap());
            assert!((a / b - 1.0).abs() < 0.1, "{a} {b}");
        }
    }

    #[test]
    fn weighted_difference_is_locally_linear() {
        use crate::stokes::{solve_stokes, StokesProblem};
        let (g, mu, fs) = stability_setup(24);
        let rho = BoundaryWeight::new(&g);
        let norm_at = |amp: f64| {
            let p = &bump_pairs(&mu, 1, &[amp], 8)[0];
            let u1 = solve_stokes(&StokesProblem::new(p.mu1.clone(), 2.0, fs[0].clone()).unwrap()).unwrap().u;
            let u2 = solve_stokes(&StokesProblem::new(p.mu2.clone(), 2.0, fs[0].clone()).unwrap()).unwrap().u;
            weighted_norm(&u1.sub(&u2).unwrap(), -2, &rho, BaseNorm::L2, WeightedOptions::default()).unwrap()
        };
        let (a, b) = (norm_at(0.1), norm_at(0.05));
        assert!(a.is_finite() && (a / b / 2.0 - 1.0).abs() < 0.1, "{a} {b}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn half_norm_interpolates(seed in 0u64..1_000_000) {
            let g = Grid::unit_square(16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in g.boundary_indices() {
                v[i] = 0.0;
            }
            let f = ScalarField::new(g, v).unwrap();
            let h0 = h_s_norm(&f, 0.0).unwrap();
            let h1 = h_s_norm(&f, 1.0).unwrap();
            let hh = h_s_norm(&f, 0.5).unwrap();
            prop_assert!(hh <= (h0 * h1).sqrt() * (1.0 + 1e-12));
        }

        #[test]
        fn monotone_in_order(seed in 0u64..1_000_000, s in -3.0f64..3.0, ds in 0.01f64..1.0) {
            let g = Grid::unit_square(12).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v: Vec<f64> = (0..g.node_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
            for i in g.boundary_indices() {
                v[i] = 0.0;
            }
            let f = ScalarField::new(g, v).unwrap();
            prop_assert!(h_s_norm(&f, s).unwrap() <= h_s_norm(&f, s + ds).unwrap());
        }
    }
}
