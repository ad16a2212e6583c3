//! Time-harmonic variable-μ Stokes and elasticity forward solvers.
//!
//! Velocities live on grid nodes, pressure on cell centers. The viscous term
//! comes from the discrete energy
//!
//! ```text
//! a(u, v) = Σ_r q_r · 2μ_r · E_r(u) E_r(v)
//! ```
//!
//! where each row `r` is one strain component at one quadrature point:
//! normal strains at edge midpoints (compact difference, μ averaged over the
//! two end nodes) and shear strains at the centers of the coordinate
//! plaquettes (μ averaged over the four corners). The momentum operator is
//! `A = EᵀWE / V`, symmetric and positive semidefinite. The cell divergence
//! `D` averages compact differences over the cell's faces; its transpose is
//! the (negative) nodal pressure gradient. A small graph Laplacian on cell
//! pressures damps the checkerboard mode and a Lagrange multiplier fixes the
//! pressure mean:
//!
//! ```text
//! [ A − ω²I   Dᵀ   0 ] [u]   [ −s − boundary coupling ]
//! [ D        −C    1 ] [p] = [ −D_∂ F                 ]
//! [ 0         1ᵀ   0 ] [λ]   [ 0                      ]
//! ```
//!
//! The border vector is the null vector of the unbordered block, so the
//! bordered system is solved exactly by taking `λ` from the summed continuity
//! rows, factoring the block with one pressure pivot grounded (which keeps it
//! quasi-definite for a sign-guided LDLᵀ), and projecting out the pressure
//! mean.

use std::sync::Arc;

use serde::Serialize;

use crate::diff;
use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::linsolve::{Factorization, SparseMatrix, SymbolicCache};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    /// Dimensionless pressure-stabilization weight β.
    pub stabilization: f64,
    /// NearResonance is raised above this condition estimate.
    pub condition_cap: f64,
    pub check_condition: bool,
    /// Returned solutions must meet this relative residual.
    pub residual_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { stabilization: 1e-2, condition_cap: 1e12, check_condition: true, residual_tol: 1e-10 }
    }
}

/// Grid-dependent stencils shared by every solve on that grid.
#[derive(Debug)]
pub struct Discretization {
    grid: Grid,
    interior: Vec<usize>,
    dof_of_node: Vec<usize>,
    // strain rows, flattened
    row_weight: Vec<f64>,
    row_mu: Vec<[usize; 4]>,
    row_mu_count: Vec<u8>,
    row_ptr: Vec<usize>,
    row_terms: Vec<(usize, f64)>,
    // cell divergence rows, flattened; term dof = c * N + node
    div_ptr: Vec<usize>,
    div_terms: Vec<(usize, f64)>,
}

const NONE: usize = usize::MAX;

impl Discretization {
    pub fn new(grid: &Grid) -> Result<Self> {
        grid.ensure_differentiable()?;
        let g = *grid;
        let d = g.dim();
        let n = g.node_count();
        let interior = g.interior_indices();
        let mut dof_of_node = vec![NONE; n];
        for (k, &i) in interior.iter().enumerate() {
            dof_of_node[i] = k;
        }
        let mut disc = Self {
            grid: g,
            interior,
            dof_of_node,
            row_weight: vec![],
            row_mu: vec![],
            row_mu_count: vec![],
            row_ptr: vec![0],
            row_terms: vec![],
            div_ptr: vec![0],
            div_terms: vec![],
        };
        let trap = |ijk: [usize; 3], axes: &[usize]| -> f64 {
            axes.iter().map(|&b| if ijk[b] == 0 || ijk[b] == g.cells(b) { 0.5 * g.spacing(b) } else { g.spacing(b) }).product()
        };
        for node in 0..n {
            let ijk = g.ijk(node);
            // normal strains on the edge from `node` along axis a
            for a in 0..d {
                if ijk[a] == g.cells(a) {
                    continue;
                }
                let h = g.spacing(a);
                let next = node + g.step(a);
                let others: Vec<usize> = (0..d).filter(|&b| b != a).collect();
                let w = h * trap(ijk, &others);
                disc.push_row(w, &[node, next], &[(a * n + next, 1.0 / h), (a * n + node, -1.0 / h)]);
            }
            // shear strains on the plaquette spanned by axes a < b
            for a in 0..d {
                for b in (a + 1)..d {
                    if ijk[a] == g.cells(a) || ijk[b] == g.cells(b) {
                        continue;
                    }
                    let (ha, hb) = (g.spacing(a), g.spacing(b));
                    let (sa, sb) = (g.step(a), g.step(b));
                    let corners = [node, node + sa, node + sb, node + sa + sb];
                    let others: Vec<usize> = (0..d).filter(|&c| c != a && c != b).collect();
                    // off-diagonal entries appear twice in E:E
                    let w = 2.0 * ha * hb * trap(ijk, &others);
                    // E_ab = (∂_b u_a + ∂_a u_b) / 2, each derivative averaged across the plaquette
                    let cb = 0.25 / hb;
                    let ca = 0.25 / ha;
                    let terms = [
                        (a * n + node + sb, cb),
                        (a * n + node + sa + sb, cb),
                        (a * n + node, -cb),
                        (a * n + node + sa, -cb),
                        (b * n + node + sa, ca),
                        (b * n + node + sa + sb, ca),
                        (b * n + node, -ca),
                        (b * n + node + sb, -ca),
                    ];
                    disc.push_row(w, &corners, &terms);
                }
            }
        }
        let faces = (1usize << (d - 1)) as f64;
        for c in 0..g.cell_count() {
            let corners = g.cell_corners(c);
            for a in 0..d {
                let h = g.spacing(a);
                for (m, &node) in corners.iter().enumerate() {
                    let sign = if (m >> a) & 1 == 1 { 1.0 } else { -1.0 };
                    disc.div_terms.push((a * n + node, sign / (faces * h)));
                }
            }
            disc.div_ptr.push(disc.div_terms.len());
        }
        Ok(disc)
    }

    fn push_row(&mut self, weight: f64, mu_nodes: &[usize], terms: &[(usize, f64)]) {
        let mut m = [0usize; 4];
        m[..mu_nodes.len()].copy_from_slice(mu_nodes);
        self.row_weight.push(weight);
        self.row_mu.push(m);
        self.row_mu_count.push(mu_nodes.len() as u8);
        self.row_terms.extend_from_slice(terms);
        self.row_ptr.push(self.row_terms.len());
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub(crate) fn rows(&self) -> usize {
        self.row_weight.len()
    }

    fn row_terms(&self, r: usize) -> &[(usize, f64)] {
        &self.row_terms[self.row_ptr[r]..self.row_ptr[r + 1]]
    }

    fn div_row(&self, c: usize) -> &[(usize, f64)] {
        &self.div_terms[self.div_ptr[c]..self.div_ptr[c + 1]]
    }

    fn row_mu(&self, r: usize, mu: &[f64]) -> f64 {
        let k = self.row_mu_count[r] as usize;
        self.row_mu[r][..k].iter().map(|&i| mu[i]).sum::<f64>() / k as f64
    }

    fn velocity_unknowns(&self) -> usize {
        self.grid.dim() * self.interior.len()
    }

    /// Interior unknown index of a full-node dof, if any.
    #[inline]
    fn unknown(&self, dof: usize) -> Option<usize> {
        let n = self.grid.node_count();
        let (c, node) = (dof / n, dof % n);
        let k = self.dof_of_node[node];
        (k != NONE).then(|| c * self.interior.len() + k)
    }

    /// Strain value of every row for a full nodal field (component-major).
    pub(crate) fn strains(&self, u: &[f64]) -> Vec<f64> {
        (0..self.rows()).map(|r| self.row_terms(r).iter().map(|&(i, c)| c * u[i]).sum()).collect()
    }

    /// Nodal density `g` with `Σ_k w_k g_k δμ_k = Σ_r q_r 2 δμ_r E_r(u) E_r(v)`,
    /// the exact μ-derivative of the viscous energy `a(u, v)`.
    pub(crate) fn energy_density(&self, eu: &[f64], ev: &[f64]) -> Vec<f64> {
        let n = self.grid.node_count();
        let mut g = vec![0.0; n];
        for r in 0..self.rows() {
            let k = self.row_mu_count[r] as usize;
            let share = 2.0 * self.row_weight[r] * eu[r] * ev[r] / k as f64;
            for &i in &self.row_mu[r][..k] {
                g[i] += share;
            }
        }
        for (i, gi) in g.iter_mut().enumerate() {
            *gi /= self.grid.weight(self.grid.ijk(i));
        }
        g
    }

    /// Discrete net outflow `V Σ_c (D F)_c` of boundary values; interior values are ignored.
    pub fn boundary_flux(&self, f: &VectorField) -> f64 {
        let n = self.grid.node_count();
        let v = self.grid.cell_volume();
        let vals = f.values();
        let mut total = 0.0;
        for c in 0..self.grid.cell_count() {
            for &(dof, coef) in self.div_row(c) {
                if self.dof_of_node[dof % n] == NONE {
                    total += coef * vals[dof];
                }
            }
        }
        total * v
    }

    /// Cell divergence of a full nodal field.
    pub fn cell_divergence(&self, u: &VectorField) -> Vec<f64> {
        let vals = u.values();
        (0..self.grid.cell_count()).map(|c| self.div_row(c).iter().map(|&(i, k)| k * vals[i]).sum()).collect()
    }

    /// Viscous operator applied to a full nodal field, `(A u)` at every node,
    /// normalized per unit volume (boundary rows included for diagnostics).
    pub fn viscous_apply(&self, mu: &ScalarField, u: &VectorField) -> VectorField {
        let vals = u.values();
        let mut out = vec![0.0; vals.len()];
        let e = self.strains(vals);
        let vcell = self.grid.cell_volume();
        for r in 0..self.rows() {
            let s = 2.0 * self.row_weight[r] * self.row_mu(r, mu.values()) * e[r] / vcell;
            for &(i, c) in self.row_terms(r) {
                out[i] += s * c;
            }
        }
        VectorField::from_vec_unchecked(self.grid, out)
    }

    fn assemble(&self, mu: &[f64], omega: f64, beta: f64, lambda: Option<&[f64]>) -> SparseMatrix {
        let g = &self.grid;
        let nu = self.velocity_unknowns();
        let nc = g.cell_count();
        let size = nu + nc;
        let vcell = g.cell_volume();
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(self.row_terms.len() * 8 + self.div_terms.len() * 2);
        for r in 0..self.rows() {
            let s = 2.0 * self.row_weight[r] * self.row_mu(r, mu) / vcell;
            let terms = self.row_terms(r);
            for &(i, ci) in terms {
                let Some(ui) = self.unknown(i) else { continue };
                for &(j, cj) in terms {
                    if let Some(uj) = self.unknown(j) {
                        t.push((ui, uj, s * ci * cj));
                    }
                }
            }
        }
        for k in 0..nu {
            t.push((k, k, -omega * omega));
        }
        for c in 0..nc {
            for &(j, cj) in self.div_row(c) {
                if let Some(uj) = self.unknown(j) {
                    t.push((nu + c, uj, cj));
                    t.push((uj, nu + c, cj));
                }
            }
        }
        let hmax = g.max_spacing();
        for c in 0..nc {
            let ijk = g.cell_ijk(c);
            let mut diag = 0.0;
            for a in 0..g.dim() {
                let wgt = beta * hmax * hmax / (g.spacing(a) * g.spacing(a));
                for up in [false, true] {
                    let ok = if up { ijk[a] + 1 < g.cells(a) } else { ijk[a] > 0 };
                    if !ok {
                        continue;
                    }
                    let mut nb = ijk;
                    if up {
                        nb[a] += 1;
                    } else {
                        nb[a] -= 1;
                    }
                    t.push((nu + c, nu + g.cell_index(nb), wgt));
                    diag -= wgt;
                }
            }
            let compress = match lambda {
                Some(l) => 1.0 / l[c],
                // grounds the constant pressure mode; see `StokesOperator::solve`
                None if c == 0 => ground(mu, nc),
                None => 0.0,
            };
            t.push((nu + c, nu + c, diag - compress));
        }
        SparseMatrix::from_triplets(size, t)
    }

    fn rhs(&self, mu: &[f64], size: usize, boundary: &VectorField, source: Option<&VectorField>) -> Vec<f64> {
        let n = self.grid.node_count();
        let nu = self.velocity_unknowns();
        let ni = self.interior.len();
        let vcell = self.grid.cell_volume();
        let fb = boundary.values();
        let mut b = vec![0.0; size];
        if let Some(s) = source {
            let sv = s.values();
            for c in 0..self.grid.dim() {
                for (k, &node) in self.interior.iter().enumerate() {
                    b[c * ni + k] = -sv[c * n + node];
                }
            }
        }
        for r in 0..self.rows() {
            let terms = self.row_terms(r);
            let eb: f64 = terms.iter().filter(|(i, _)| self.unknown(*i).is_none()).map(|&(i, c)| c * fb[i]).sum();
            if eb == 0.0 {
                continue;
            }
            let s = 2.0 * self.row_weight[r] * self.row_mu(r, mu) / vcell * eb;
            for &(i, ci) in terms {
                if let Some(ui) = self.unknown(i) {
                    b[ui] -= s * ci;
                }
            }
        }
        for c in 0..self.grid.cell_count() {
            let db: f64 = self.div_row(c).iter().filter(|(i, _)| self.unknown(*i).is_none()).map(|&(i, k)| k * fb[i]).sum();
            b[nu + c] = -db;
        }
        b
    }

    fn unpack_velocity(&self, x: &[f64], boundary: &VectorField) -> VectorField {
        let n = self.grid.node_count();
        let ni = self.interior.len();
        let mut vals = boundary.values().to_vec();
        for c in 0..self.grid.dim() {
            for (k, &node) in self.interior.iter().enumerate() {
                vals[c * n + node] = x[c * ni + k];
            }
        }
        VectorField::from_vec_unchecked(self.grid, vals)
    }

    /// Nodal pressure from cell values: neighbour averages inside, linear
    /// extrapolation to the boundary, then the trapezoid mean is removed.
    pub(crate) fn nodal_pressure(&self, cells: &[f64]) -> ScalarField {
        let g = &self.grid;
        let d = g.dim();
        let n = g.node_count();
        let mut p = vec![0.0; n];
        let interior_along = |ijk: [usize; 3], a: usize| ijk[a] > 0 && ijk[a] < g.cells(a);
        for node in 0..n {
            let ijk = g.ijk(node);
            if !(0..d).all(|a| interior_along(ijk, a)) {
                continue;
            }
            let k = 1usize << d;
            let mut s = 0.0;
            for m in 0..k {
                let mut c = ijk;
                for a in 0..d {
                    c[a] -= (m >> a) & 1;
                }
                s += cells[g.cell_index(c)];
            }
            p[node] = s / k as f64;
        }
        for a in 0..d {
            for node in 0..n {
                let ijk = g.ijk(node);
                if interior_along(ijk, a) || !((a + 1)..d).all(|b| interior_along(ijk, b)) {
                    continue;
                }
                let (s1, s2) = if ijk[a] == 0 { (1isize, 2isize) } else { (-1, -2) };
                let at = |s: isize| {
                    let mut q = ijk;
                    q[a] = (q[a] as isize + s) as usize;
                    p[g.index(q)]
                };
                p[node] = if g.cells(a) >= 3 { 2.0 * at(s1) - at(s2) } else { at(s1) };
            }
        }
        let w = g.weights();
        let vol: f64 = w.iter().sum();
        let mean = p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / vol;
        for v in &mut p {
            *v -= mean;
        }
        ScalarField::from_vec_unchecked(*g, p)
    }
}

/// Symmetric LDLᵀ with velocity pivots expected positive and pressure pivots
/// negative; falls back to pivoted LU when that sign pattern does not hold
/// (ω² above the lowest viscous eigenvalue).
fn factor_saddle(k: SparseMatrix, velocity_unknowns: usize, cache: Option<&SymbolicCache>) -> Result<Factorization> {
    let signs: Vec<i8> = (0..k.dim()).map(|i| if i < velocity_unknowns { 1 } else { -1 }).collect();
    if let Ok(f) = Factorization::symmetric(k.clone(), &signs, cache) {
        let probe: Vec<f64> = (0..k.dim()).map(|i| 1.0 + (i % 7) as f64).collect();
        let b = k.matvec(&probe);
        if let Ok((x, stats)) = f.solve(&b) {
            let err = x.iter().zip(&probe).map(|(a, p)| (a - p).abs()).fold(0.0, f64::max);
            if stats.relative_residual < 1e-12 && err < 1e-6 * 7.0 {
                return Ok(f);
            }
        }
    }
    Factorization::new(k, cache)
}

// Scaled so the grounded constant mode has an eigenvalue of order 1/μ, like
// the rest of the pressure Schur complement.
fn ground(mu: &[f64], cells: usize) -> f64 {
    cells as f64 * mu.len() as f64 / mu.iter().sum::<f64>()
}

fn check_mu(mu: &ScalarField, mu_min: f64) -> Result<()> {
    let m = mu.min();
    if !(m >= mu_min && m > 0.0) {
        return Err(Error::ContrastViolation(format!("min μ = {m:.6e} < μ_min = {mu_min:.6e}")));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct StokesProblem {
    pub mu: ScalarField,
    pub omega: f64,
    pub boundary: VectorField,
    pub source: Option<VectorField>,
    pub mu_min: f64,
    pub options: SolverOptions,
}

/// Relative tolerance on the discrete boundary flux.
pub const FLUX_TOL: f64 = 1e-12;

impl StokesProblem {
    pub fn new(mu: ScalarField, omega: f64, boundary: VectorField) -> Result<Self> {
        mu.grid().ensure_same(boundary.grid())?;
        mu.grid().ensure_differentiable()?;
        if !omega.is_finite() {
            return Err(Error::InvalidInput("ω must be finite".into()));
        }
        let mu_min = f64::MIN_POSITIVE;
        check_mu(&mu, mu_min)?;
        Ok(Self { mu, omega, boundary, source: None, mu_min, options: SolverOptions::default() })
    }

    pub fn with_source(mut self, source: VectorField) -> Result<Self> {
        self.mu.grid().ensure_same(source.grid())?;
        self.source = Some(source);
        Ok(self)
    }

    pub fn with_mu_min(mut self, mu_min: f64) -> Result<Self> {
        if !(mu_min > 0.0) {
            return Err(Error::InvalidInput(format!("μ_min must be positive, got {mu_min}")));
        }
        check_mu(&self.mu, mu_min)?;
        self.mu_min = mu_min;
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    pub fn grid(&self) -> &Grid {
        self.mu.grid()
    }
}

/// Net boundary flux and the tolerance it is held to.
pub fn check_compatibility(disc: &Discretization, f: &VectorField) -> Result<f64> {
    let flux = disc.boundary_flux(f);
    let g = disc.grid();
    let area: f64 = (0..g.dim())
        .map(|a| 2.0 * (0..g.dim()).filter(|&b| b != a).map(|b| g.extent(b)).product::<f64>())
        .sum();
    let scale = f.max_abs_on_boundary() * area;
    let tol = FLUX_TOL * scale.max(1.0);
    if flux.abs() > tol {
        return Err(Error::IncompatibleData { flux, tol });
    }
    Ok(flux)
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: VectorField,
    /// Nodal pressure with zero trapezoid mean.
    pub p: ScalarField,
    pub p_cells: Vec<f64>,
    pub problem: StokesProblem,
    pub residual: f64,
    pub condition: Option<f64>,
    pub near_resonance: bool,
    /// Largest cell divergence of `u`.
    pub max_divergence: f64,
}

/// A factored Stokes operator for fixed μ and ω; any number of boundary
/// data and sources can be solved against it.
pub struct StokesOperator {
    disc: Arc<Discretization>,
    mu: ScalarField,
    omega: f64,
    mu_min: f64,
    options: SolverOptions,
    fact: Factorization,
    condition: Option<f64>,
}

impl StokesOperator {
    pub fn new(
        disc: Arc<Discretization>,
        mu: &ScalarField,
        omega: f64,
        options: SolverOptions,
        cache: Option<&SymbolicCache>,
    ) -> Result<Self> {
        disc.grid().ensure_same(mu.grid())?;
        let mu_min = f64::MIN_POSITIVE;
        check_mu(mu, mu_min)?;
        let k = disc.assemble(mu.values(), omega, options.stabilization, None);
        let fact = factor_saddle(k, disc.velocity_unknowns(), cache)?;
        let condition = if options.check_condition {
            let c = fact.condition_estimate();
            if !(c <= options.condition_cap) {
                return Err(Error::NearResonance { cond: c, cap: options.condition_cap });
            }
            Some(c)
        } else {
            None
        };
        Ok(Self { disc, mu: mu.clone(), omega, mu_min, options, fact, condition })
    }

    pub fn discretization(&self) -> &Arc<Discretization> {
        &self.disc
    }

    pub fn mu(&self) -> &ScalarField {
        &self.mu
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn solve(&self, boundary: &VectorField, source: Option<&VectorField>) -> Result<StokesSolution> {
        let g = self.disc.grid();
        g.ensure_same(boundary.grid())?;
        if let Some(s) = source {
            g.ensure_same(s.grid())?;
        }
        check_compatibility(&self.disc, boundary)?;
        let size = self.fact.matrix().dim();
        let nu = self.disc.velocity_unknowns();
        let nc = g.cell_count();
        let mut b = self.disc.rhs(self.mu.values(), size, boundary, source);
        // multiplier from the summed continuity rows; the remaining system is
        // consistent and its grounded pivot sees a zero pressure there
        let multiplier = b[nu..].iter().sum::<f64>() / nc as f64;
        for v in &mut b[nu..] {
            *v -= multiplier;
        }
        let (mut x, stats) = self.fact.solve(&b)?;
        let mean = x[nu..].iter().sum::<f64>() / nc as f64;
        for v in &mut x[nu..] {
            *v -= mean;
        }
        if stats.relative_residual > self.options.residual_tol {
            return Err(Error::SingularSystem(format!(
                "relative residual {:.3e} above {:.1e} after refinement",
                stats.relative_residual, self.options.residual_tol
            )));
        }
        let u = self.disc.unpack_velocity(&x, boundary);
        let p_cells = x[nu..nu + nc].to_vec();
        let p = self.disc.nodal_pressure(&p_cells);
        let max_divergence = self.disc.cell_divergence(&u).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let problem = StokesProblem {
            mu: self.mu.clone(),
            omega: self.omega,
            boundary: boundary.clone(),
            source: source.cloned(),
            mu_min: self.mu_min,
            options: self.options,
        };
        Ok(StokesSolution {
            u,
            p,
            p_cells,
            problem,
            residual: stats.relative_residual,
            condition: self.condition,
            near_resonance: self.condition.is_some_and(|c| c > 1e-2 * self.options.condition_cap),
            max_divergence,
        })
    }
}

pub fn solve_stokes(prob: &StokesProblem) -> Result<StokesSolution> {
    let disc = Arc::new(Discretization::new(prob.grid())?);
    check_mu(&prob.mu, prob.mu_min)?;
    let op = StokesOperator::new(disc, &prob.mu, prob.omega, prob.options, None)?;
    let mut sol = op.solve(&prob.boundary, prob.source.as_ref())?;
    sol.problem.mu_min = prob.mu_min;
    Ok(sol)
}

#[derive(Clone, Debug)]
pub struct ElasticityProblem {
    pub lambda: ScalarField,
    pub mu: ScalarField,
    pub omega: f64,
    pub boundary: VectorField,
    pub source: Option<VectorField>,
    pub options: SolverOptions,
}

impl ElasticityProblem {
    pub fn new(lambda: ScalarField, mu: ScalarField, omega: f64, boundary: VectorField) -> Result<Self> {
        mu.grid().ensure_same(lambda.grid())?;
        mu.grid().ensure_same(boundary.grid())?;
        mu.grid().ensure_differentiable()?;
        check_mu(&mu, f64::MIN_POSITIVE)?;
        let lmin = lambda.min();
        if !(lmin > 0.0) {
            return Err(Error::InvalidInput(format!("λ must be positive, min is {lmin:.6e}")));
        }
        if !omega.is_finite() {
            return Err(Error::InvalidInput("ω must be finite".into()));
        }
        Ok(Self { lambda, mu, omega, boundary, source: None, options: SolverOptions::default() })
    }

    pub fn with_source(mut self, source: VectorField) -> Result<Self> {
        self.mu.grid().ensure_same(source.grid())?;
        self.source = Some(source);
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Whether 2·max μ < 3·min λ.
    pub fn is_nearly_incompressible(&self) -> bool {
        2.0 * self.mu.max() < 3.0 * self.lambda.min()
    }
}

/// Solves the elasticity system in mixed form with `p = λ div u`, so that
/// the continuity row reads `D u − C p − p/λ = 0` and tends to the Stokes
/// discretization as λ grows.
pub fn solve_elasticity(prob: &ElasticityProblem) -> Result<VectorField> {
    let disc = Discretization::new(prob.mu.grid())?;
    let g = disc.grid();
    let lam_cells: Vec<f64> = (0..g.cell_count())
        .map(|c| {
            let corners = g.cell_corners(c);
            corners.iter().map(|&i| prob.lambda.values()[i]).sum::<f64>() / corners.len() as f64
        })
        .collect();
    let k = disc.assemble(prob.mu.values(), prob.omega, prob.options.stabilization, Some(&lam_cells));
    let size = k.dim();
    let fact = factor_saddle(k, disc.velocity_unknowns(), None)?;
    if prob.options.check_condition {
        let c = fact.condition_estimate();
        if !(c <= prob.options.condition_cap) {
            return Err(Error::NearResonance { cond: c, cap: prob.options.condition_cap });
        }
    }
    let b = disc.rhs(prob.mu.values(), size, &prob.boundary, prob.source.as_ref());
    let (x, stats) = fact.solve(&b)?;
    if stats.relative_residual > prob.options.residual_tol {
        return Err(Error::SingularSystem(format!("relative residual {:.3e}", stats.relative_residual)));
    }
    Ok(disc.unpack_velocity(&x, &prob.boundary))
}

/// Trapezoid H¹ norm: `(Σ w (|u|² + |∇u|²))^½`.
pub fn h1_norm(u: &VectorField) -> f64 {
    let g = u.grid();
    let n = g.node_count();
    let w = g.weights();
    let mut total = 0.0;
    for c in 0..u.dim() {
        let comp = u.component(c);
        total += comp.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>();
        for a in 0..g.dim() {
            let d = diff::partial(g, comp, a);
            total += d.iter().zip(&w).map(|(v, wi)| wi * v * v).sum::<f64>();
        }
    }
    debug_assert_eq!(w.len(), n);
    total.sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct StokesLimitReport {
    pub lambdas: Vec<f64>,
    pub gaps: Vec<f64>,
    pub slope: f64,
    /// Estimated discretization error of the smallest gap.
    pub discretization_error: f64,
    pub low_confidence: bool,
}

fn inject(f: &[f64], fine: &Grid, coarse: &Grid, comps: usize) -> Vec<f64> {
    let nf = fine.node_count();
    let nc = coarse.node_count();
    let mut out = vec![0.0; comps * nc];
    for i in 0..nc {
        let ijk = coarse.ijk(i);
        let mut fi = ijk;
        for a in 0..coarse.dim() {
            fi[a] *= 2;
        }
        let j = fine.index(fi);
        for c in 0..comps {
            out[c * nc + i] = f[c * nf + j];
        }
    }
    out
}

/// Restriction of a fine-grid field to a grid with half the cells per axis.
pub fn restrict_vector(u: &VectorField, coarse: &Grid) -> Result<VectorField> {
    if !u.grid().coarsened()?.same_shape(coarse) {
        return Err(Error::GridMismatch("coarse grid is not the 2:1 coarsening".into()));
    }
    VectorField::new(*coarse, inject(u.values(), u.grid(), coarse, u.dim()))
}

pub fn restrict_scalar(f: &ScalarField, coarse: &Grid) -> Result<ScalarField> {
    if !f.grid().coarsened()?.same_shape(coarse) {
        return Err(Error::GridMismatch("coarse grid is not the 2:1 coarsening".into()));
    }
    ScalarField::new(*coarse, inject(f.values(), f.grid(), coarse, 1))
}

fn stokes_elasticity_gaps(lambdas: &[f64], mu: &ScalarField, omega: f64, f: &VectorField) -> Result<Vec<f64>> {
    let stokes = solve_stokes(&StokesProblem::new(mu.clone(), omega, f.clone())?)?;
    lambdas
        .iter()
        .map(|&l| {
            let lam = ScalarField::constant(*mu.grid(), l);
            let ul = solve_elasticity(&ElasticityProblem::new(lam, mu.clone(), omega, f.clone())?)?;
            Ok(h1_norm(&ul.sub(&stokes.u)?))
        })
        .collect()
}

/// Least-squares slope of `log ‖u_λ − u‖_{H¹}` against `log λ`.
pub fn verify_stokes_limit(lambdas: &[f64], mu: &ScalarField, omega: f64, f: &VectorField) -> Result<StokesLimitReport> {
    if lambdas.len() < 2 {
        return Err(Error::DegenerateInput("at least two λ values are needed".into()));
    }
    for (i, a) in lambdas.iter().enumerate() {
        if !(*a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidInput(format!("λ must be positive, got {a}")));
        }
        for b in &lambdas[i + 1..] {
            if (a - b).abs() <= 1e-12 * a.abs() {
                return Err(Error::DegenerateInput(format!("λ = {a} is repeated; slope undefined")));
            }
        }
    }
    let lmin = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(2.0 * mu.max() < 3.0 * lmin) {
        return Err(Error::InvalidInput(format!("2·max μ = {} is not below 3·min λ = {}", 2.0 * mu.max(), 3.0 * lmin)));
    }
    let gaps = stokes_elasticity_gaps(lambdas, mu, omega, f)?;
    // same experiment on the 2:1 coarsened grid estimates the discretization error
    let coarse = mu.grid().coarsened()?;
    let imax = (0..lambdas.len()).max_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b])).unwrap_or(0);
    let coarse_gap = stokes_elasticity_gaps(
        &[lambdas[imax]],
        &restrict_scalar(mu, &coarse)?,
        omega,
        &restrict_vector(f, &coarse)?,
    )?[0];
    let discretization_error = (gaps[imax] - coarse_gap).abs();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    if min_gap < 10.0 * discretization_error {
        return Err(Error::InsufficientResolution(format!(
            "smallest gap {min_gap:.3e} is below 10× the discretization error estimate {discretization_error:.3e}"
        )));
    }
    let xs: Vec<f64> = lambdas.iter().map(|l| l.ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    Ok(StokesLimitReport {
        lambdas: lambdas.to_vec(),
        slope: ls_slope(&xs, &ys),
        gaps,
        discretization_error,
        low_confidence: lambdas.len() == 2,
    })
}

pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}
