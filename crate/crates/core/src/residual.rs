//! Pressure-eliminated linearized operators `μ ↦ curl 2∇·(μ∇ˢu₁)` and the
//! numerical kernel probe.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::diff::{self, Rotation};
use crate::error::{Error, Result};
use crate::fields::{ScalarField, SymTensorField, VectorField};
use crate::grid::Grid;
use crate::linsolve::{Factorization, SparseMatrix};
use crate::norms;
use crate::stokes::StokesSolution;

/// Colour stride for probing: the composite reaches two nodes per derivative.
const PROBE_STRIDE: usize = 9;
const PROBE_REACH: usize = 4;
/// Largest column count handled by a dense SVD.
pub const DENSE_LIMIT: usize = 3000;

#[derive(Clone, Debug)]
pub struct LinearizedMap {
    grid: Grid,
    omega: f64,
    strains: Vec<SymTensorField>,
}

fn curl_two_div(t: &SymTensorField) -> Result<Rotation> {
    let v = diff::tensor_divergence(t)?.scale(2.0);
    diff::curl(&v)
}

impl LinearizedMap {
    /// One background field per channel; 3D accepts one or two channels.
    pub fn new(backgrounds: &[VectorField], omega: f64) -> Result<Self> {
        let Some(first) = backgrounds.first() else {
            return Err(Error::MissingData("at least one background field".into()));
        };
        let grid = *first.grid();
        if backgrounds.len() > 2 || (grid.dim() == 2 && backgrounds.len() != 1) {
            return Err(Error::InvalidInput(format!("{} background fields for a {}D map", backgrounds.len(), grid.dim())));
        }
        let strains = backgrounds
            .iter()
            .map(|u| {
                grid.ensure_same(u.grid())?;
                diff::sym_grad(u)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, omega, strains })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn channel_count(&self) -> usize {
        self.strains.len()
    }

    /// Map restricted to the given channels.
    pub fn select(&self, channels: &[usize]) -> Result<Self> {
        let strains = channels
            .iter()
            .map(|&c| self.strains.get(c).cloned().ok_or_else(|| Error::InvalidInput(format!("no channel {c}"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid: self.grid, omega: self.omega, strains })
    }

    fn rows_per_channel(&self) -> usize {
        self.grid.node_count() * if self.grid.dim() == 2 { 1 } else { 3 }
    }

    fn apply_values(&self, mu: &[f64]) -> Result<Vec<f64>> {
        let mu = ScalarField::new(self.grid, mu.to_vec())?;
        let mut out = Vec::with_capacity(self.rows_per_channel() * self.strains.len());
        for s in &self.strains {
            out.extend_from_slice(curl_two_div(&s.scaled_by(&mu)?)?.values());
        }
        Ok(out)
    }

    /// Sparse matrix of the interior composite stacked over channels, with
    /// Dirichlet rows `scale · μ|_∂Ω` appended. Assembled by colour probing.
    pub fn assemble(&self) -> Result<(SparseMatrix, usize)> {
        let g = self.grid;
        let d = g.dim();
        let n = g.node_count();
        let per = self.rows_per_channel();
        let mut colours = vec![[0usize; 3]];
        for a in 0..d {
            colours = colours.into_iter().flat_map(|c| (0..PROBE_STRIDE).map(move |k| { let mut c = c; c[a] = k; c })).collect();
        }
        let mut t: Vec<(usize, usize, f64)> = vec![];
        for colour in colours {
            let probe: Vec<f64> = (0..n).map(|i| { let ijk = g.ijk(i); f64::from((0..d).all(|a| ijk[a] % PROBE_STRIDE == colour[a]) as u8) }).collect();
            if probe.iter().all(|&v| v == 0.0) {
                continue;
            }
            let out = self.apply_values(&probe)?;
            for (row, &v) in out.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let node = g.ijk(row % per % n);
                let mut col = [0usize; 3];
                let mut ok = true;
                for a in 0..d {
                    let r = node[a];
                    let dd = (colour[a] + PROBE_STRIDE - r % PROBE_STRIDE) % PROBE_STRIDE;
                    let x = if dd <= PROBE_REACH { r + dd } else if r + dd >= PROBE_STRIDE { r + dd - PROBE_STRIDE } else { usize::MAX };
                    if x > g.cells(a) {
                        ok = false;
                    }
                    col[a] = x;
                }
                if !ok {
                    return Err(Error::Discretization("probe entry without a colour match".into()));
                }
                t.push((row, g.index(col), v));
            }
        }
        let rows = per * self.strains.len();
        let mut colnorm = vec![0.0f64; n];
        for &(_, c, v) in &t {
            colnorm[c] += v * v;
        }
        let scale = colnorm.iter().fold(0.0f64, |m, v| m.max(v.sqrt())).max(1.0);
        let bidx = g.boundary_indices();
        for (k, &i) in bidx.iter().enumerate() {
            t.push((rows + k, i, scale));
        }
        let total = rows + bidx.len();
        // square storage: pad with empty rows or columns as needed
        let dim = total.max(n);
        Ok((SparseMatrix::from_triplets(dim, t), total))
    }
}

/// `curl 2∇·(μ ∇ˢu₁)` for every channel.
pub fn apply_a(map: &LinearizedMap, mu: &ScalarField) -> Result<Vec<Rotation>> {
    map.grid.ensure_same(mu.grid())?;
    map.strains.iter().map(|s| curl_two_div(&s.scaled_by(mu)?)).collect()
}

/// Right-hand side `g = −curl 2∇·(μ₂∇ˢw) − ω² curl w`.
pub fn identity_rhs(w: &VectorField, mu2: &ScalarField, omega: f64) -> Result<Rotation> {
    let a = curl_two_div(&diff::sym_grad(w)?.scaled_by(mu2)?)?;
    let b = diff::curl(w)?;
    a.zip_map(&b, |x, y| -x - omega * omega * y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    pub cells: Vec<usize>,
    /// Trapezoid L² norm of `A(μ₁ − μ₂) − g` over nodes at least `layer + 1` deep.
    pub residual: f64,
    /// Same norm of `g`.
    pub rhs_norm: f64,
    pub layer: usize,
}

fn interior_norm(r: &Rotation, layer: usize) -> f64 {
    let g = r.grid();
    let w = g.weights();
    let n = g.node_count();
    let mut total = 0.0;
    for comp in r.components() {
        for i in 0..n {
            if g.boundary_depth(g.ijk(i)) > layer {
                total += w[i] * comp[i] * comp[i];
            }
        }
    }
    total.sqrt()
}

/// Residual of the pressure-free identity for two solutions sharing boundary data and ω.
pub fn verify_identity(mu1: &ScalarField, mu2: &ScalarField, sol1: &StokesSolution, sol2: &StokesSolution) -> Result<IdentityResidual> {
    let g = *mu1.grid();
    for f in [mu2.grid(), sol1.u.grid(), sol2.u.grid()] {
        g.ensure_same(f)?;
    }
    if sol1.problem.omega != sol2.problem.omega {
        return Err(Error::InvalidInput("solutions use different ω".into()));
    }
    if sol1.problem.boundary.sub(&sol2.problem.boundary)?.max_abs_on_boundary() > 0.0 {
        return Err(Error::InvalidInput("solutions use different boundary data".into()));
    }
    let omega = sol1.problem.omega;
    let map = LinearizedMap::new(std::slice::from_ref(&sol1.u), omega)?;
    let w = sol1.u.sub(&sol2.u)?;
    let lhs = apply_a(&map, &mu1.sub(mu2)?)?.remove(0);
    let rhs = identity_rhs(&w, mu2, omega)?;
    let r = lhs.zip_map(&rhs, |a, b| a - b)?;
    let layer = 2;
    Ok(IdentityResidual { cells: (0..g.dim()).map(|a| g.cells(a)).collect(), residual: interior_norm(&r, layer), rhs_norm: interior_norm(&rhs, layer), layer })
}

/// Observed order between a coarse and a 2× refined residual.
pub fn identity_order(coarse: &IdentityResidual, fine: &IdentityResidual) -> f64 {
    (coarse.residual / fine.residual).log2()
}

/// `‖g‖_l / ‖w‖_{l+3}` in 3D, `‖g‖_l / ‖w‖_{l+2}` in 2D.
pub fn g_bound_probe(w: &VectorField, mu2: &ScalarField, omega: f64, l: f64) -> Result<f64> {
    if l > 0.0 {
        return Err(Error::InvalidInput(format!("norm order l = {l} must be ≤ 0")));
    }
    let shift = if w.grid().dim() == 3 { 3.0 } else { 2.0 };
    let den = norms::h_s_norm_vector(w, l + shift)?;
    if den == 0.0 {
        return Err(Error::DegenerateInput("w has zero norm".into()));
    }
    let g = identity_rhs(w, mu2, omega)?;
    let num = match &g {
        Rotation::Planar(s) => norms::h_s_norm(s, l)?,
        Rotation::Spatial(v) => norms::h_s_norm_vector(v, l)?,
    };
    Ok(num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeMethod {
    DenseSvd,
    InverseSubspace,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelReport {
    /// Smallest singular values, ascending.
    pub singular_values: Vec<f64>,
    pub threshold: f64,
    /// `σ₁ > threshold · σ_k`.
    pub trivial: bool,
    pub method: ProbeMethod,
    pub cells: Vec<usize>,
    pub channels: usize,
    #[serde(skip)]
    pub vectors: Vec<ScalarField>,
}

impl KernelReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub const KERNEL_THRESHOLD: f64 = 1e-6;

/// Smallest `k` singular values (and right singular vectors) of the map with
/// its boundary rows.
pub fn kernel_probe(map: &LinearizedMap, k: usize, threshold: f64) -> Result<KernelReport> {
    let g = map.grid;
    let n = g.node_count();
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..={n}")));
    }
    let (a, rows) = map.assemble()?;
    let (values, vectors, method) = if n <= DENSE_LIMIT { dense_smallest(&a, rows, n, k) } else { subspace_smallest(&a, rows, n, k)? };
    let sk = values[k - 1];
    Ok(KernelReport {
        trivial: values[0] > threshold * sk,
        singular_values: values,
        threshold,
        method,
        cells: (0..g.dim()).map(|ax| g.cells(ax)).collect(),
        channels: map.channel_count(),
        vectors: vectors.into_iter().map(|v| ScalarField::new(g, v).expect("finite vector")).collect(),
    })
}

fn dense_of(a: &SparseMatrix, rows: usize, cols: usize) -> Mat<f64> {
    let mut m = Mat::<f64>::zeros(rows, cols);
    for r in 0..rows {
        for (c, v) in a.row(r) {
            m[(r, c)] += v;
        }
    }
    m
}

fn dense_smallest(a: &SparseMatrix, rows: usize, cols: usize, k: usize) -> (Vec<f64>, Vec<Vec<f64>>, ProbeMethod) {
    let m = dense_of(a, rows, cols);
    // thin SVD needs rows ≥ cols; pad with zero rows otherwise
    let m = if rows < cols { Mat::<f64>::from_fn(cols, cols, |r, c| if r < rows { m[(r, c)] } else { 0.0 }) } else { m };
    let svd = m.thin_svd().expect("dense SVD converges");
    let s = svd.S().column_vector();
    let v = svd.V();
    let count = s.nrows();
    let idx: Vec<usize> = (0..k).map(|j| count - 1 - j).collect();
    let values = idx.iter().map(|&j| s[j]).collect();
    let vectors = idx.iter().map(|&j| (0..cols).map(|r| v[(r, j)]).collect()).collect();
    (values, vectors, ProbeMethod::DenseSvd)
}

fn subspace_smallest(a: &SparseMatrix, rows: usize, cols: usize, k: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>, ProbeMethod)> {
    // normal matrix AᵀA
    let mut by_col: Vec<Vec<(usize, f64)>> = vec![vec![]; rows];
    for r in 0..rows {
        by_col[r] = a.row(r).collect();
    }
    let mut t = vec![];
    for row in &by_col {
        for &(i, vi) in row {
            for &(j, vj) in row {
                t.push((i, j, vi * vj));
            }
        }
    }
    let ata = SparseMatrix::from_triplets(cols, t);
    let shift = 1e-13 * ata.norm1();
    let shifted = {
        let mut t = vec![];
        for r in 0..cols {
            t.extend(ata.row(r).map(|(c, v)| (r, c, v)));
            t.push((r, r, shift));
        }
        SparseMatrix::from_triplets(cols, t)
    };
    let fact = Factorization::new(shifted, None)?;
    let block = (k + 4).min(cols);
    let mut q = Mat::<f64>::from_fn(cols, block, |r, c| (((r * 7919 + c * 104_729) % 1000) as f64 / 1000.0) - 0.5);
    let mut prev = vec![f64::INFINITY; k];
    for _ in 0..300 {
        let mut z = Mat::<f64>::zeros(cols, block);
        for c in 0..block {
            let b: Vec<f64> = (0..cols).map(|r| q[(r, c)]).collect();
            let (x, _) = fact.solve(&b)?;
            for r in 0..cols {
                z[(r, c)] = x[r];
            }
        }
        q = z.qr().compute_thin_Q();
        // Rayleigh–Ritz on AᵀA
        let mut aq = Mat::<f64>::zeros(cols, block);
        for c in 0..block {
            let col: Vec<f64> = (0..cols).map(|r| q[(r, c)]).collect();
            let y = ata.matvec(&col);
            for r in 0..cols {
                aq[(r, c)] = y[r];
            }
        }
        let h = q.transpose() * &aq;
        let h = Mat::<f64>::from_fn(block, block, |r, c| 0.5 * (h[(r, c)] + h[(c, r)]));
        let evd = h.self_adjoint_eigen(faer::Side::Lower).map_err(|e| Error::ConvergenceFailure(format!("{e:?}")))?;
        let theta: Vec<f64> = (0..block).map(|j| evd.S().column_vector()[j]).collect();
        q = &q * evd.U();
        let cur: Vec<f64> = theta[..k].iter().map(|&t| t.max(0.0).sqrt()).collect();
        let done = cur.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-10 * cur[k - 1].max(f64::MIN_POSITIVE));
        prev = cur;
        if done {
            let vectors = (0..k).map(|j| (0..cols).map(|r| q[(r, j)]).collect()).collect();
            return Ok((prev, vectors, ProbeMethod::InverseSubspace));
        }
    }
    Err(Error::ConvergenceFailure("inverse subspace iteration did not settle in 300 sweeps".into()))
}
