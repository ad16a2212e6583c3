//! Nodal field containers.
//!
//! Values are stored per node in grid order. Vector and tensor fields are
//! component-major: component `c` occupies `values[c * N..(c + 1) * N]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{what} has a non-finite value at entry {i}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidInput(format!(
                "scalar field has {} values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        check_finite(&values, "scalar field")?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.node_count());
        Self { grid, values }
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self { grid, values: vec![value; grid.node_count()] }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> f64) -> Self {
        let values = (0..grid.node_count()).map(|i| f(grid.position_of(i))).collect();
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, ijk: [usize; 3]) -> f64 {
        self.values[self.grid.index(ijk)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal integral over the domain.
    pub fn integral(&self) -> f64 {
        (0..self.values.len()).map(|i| self.grid.weight(self.grid.ijk(i)) * self.values[i]).sum()
    }

    /// Trapezoidal L2 inner product.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        (0..self.values.len())
            .map(|i| self.grid.weight(self.grid.ijk(i)) * self.values[i] * other.values[i])
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_on_boundary(&self) -> f64 {
        (0..self.values.len())
            .filter(|&i| self.grid.is_boundary_index(i))
            .fold(0.0, |m, i| m.max(self.values[i].abs()))
    }
}

/// `dim` components per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    grid: Grid,
    values: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let expected = grid.dim() * grid.node_count();
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "vector field has {} values, expected {expected}",
                values.len()
            )));
        }
        check_finite(&values, "vector field")?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.dim() * grid.node_count());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.dim() * grid.node_count()] }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let n = grid.node_count();
        let d = grid.dim();
        let mut values = vec![0.0; d * n];
        for i in 0..n {
            let v = f(grid.position_of(i));
            for c in 0..d {
                values[c * n + i] = v[c];
            }
        }
        Self { grid, values }
    }

    pub fn from_components(grid: Grid, comps: &[Vec<f64>]) -> Result<Self> {
        if comps.len() != grid.dim() {
            return Err(Error::InvalidInput(format!(
                "{} components given for a {}-dimensional grid",
                comps.len(),
                grid.dim()
            )));
        }
        Self::new(grid, comps.concat())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn at(&self, idx: usize) -> [f64; 3] {
        let n = self.grid.node_count();
        let mut v = [0.0; 3];
        for c in 0..self.dim() {
            v[c] = self.values[c * n + idx];
        }
        v
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &VectorField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn sub(&self, other: &VectorField) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &VectorField) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Trapezoidal L2 inner product summed over components.
    pub fn dot(&self, other: &VectorField) -> f64 {
        let n = self.grid.node_count();
        let w = self.grid.weights();
        (0..self.values.len()).map(|k| w[k % n] * self.values[k] * other.values[k]).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Root mean square over all nodes and components.
    pub fn rms(&self) -> f64 {
        (self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64).sqrt()
    }

    /// Copy with boundary values taken from `boundary` and interior values kept.
    pub fn with_boundary_of(&self, boundary: &VectorField) -> Result<Self> {
        self.grid.ensure_same(&boundary.grid)?;
        let n = self.grid.node_count();
        let mut values = self.values.clone();
        for i in self.grid.boundary_indices() {
            for c in 0..self.dim() {
                values[c * n + i] = boundary.values[c * n + i];
            }
        }
        Ok(Self { grid: self.grid, values })
    }

    pub fn max_abs_on_boundary(&self) -> f64 {
        let n = self.grid.node_count();
        self.grid
            .boundary_indices()
            .into_iter()
            .flat_map(|i| (0..self.dim()).map(move |c| c * n + i))
            .fold(0.0, |m, k| m.max(self.values[k].abs()))
    }
}

/// Symmetric tensor per node, stored as its independent entries.
///
/// Component order: 2D `xx, yy, xy`; 3D `xx, yy, zz, xy, xz, yz`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymTensorField {
    grid: Grid,
    values: Vec<f64>,
}

/// (row, column) pair of each stored component.
pub const SYM_PAIRS_2D: [(usize, usize); 3] = [(0, 0), (1, 1), (0, 1)];
pub const SYM_PAIRS_3D: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

pub fn sym_pairs(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &SYM_PAIRS_2D
    } else {
        &SYM_PAIRS_3D
    }
}

impl SymTensorField {
    pub fn component_count(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let expected = Self::component_count(grid.dim()) * grid.node_count();
        if values.len() != expected {
            return Err(Error::InvalidInput(format!(
                "tensor field has {} values, expected {expected}",
                values.len()
            )));
        }
        check_finite(&values, "tensor field")?;
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        Self { grid, values }
    }

    /// The same matrix at every node.
    pub fn constant(grid: Grid, m: [[f64; 3]; 3]) -> Self {
        let n = grid.node_count();
        let pairs = sym_pairs(grid.dim());
        let mut values = vec![0.0; pairs.len() * n];
        for (c, &(r, s)) in pairs.iter().enumerate() {
            values[c * n..(c + 1) * n].fill(0.5 * (m[r][s] + m[s][r]));
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn component(&self, c: usize) -> &[f64] {
        let n = self.grid.node_count();
        &self.values[c * n..(c + 1) * n]
    }

    /// Full matrix at a node (unused rows and columns are zero in 2D).
    pub fn matrix_at(&self, idx: usize) -> [[f64; 3]; 3] {
        let n = self.grid.node_count();
        let mut m = [[0.0; 3]; 3];
        for (c, &(r, s)) in sym_pairs(self.grid.dim()).iter().enumerate() {
            let v = self.values[c * n + idx];
            m[r][s] = v;
            m[s][r] = v;
        }
        m
    }

    pub fn trace(&self) -> ScalarField {
        let n = self.grid.node_count();
        let d = self.grid.dim();
        let values = (0..n).map(|i| (0..d).map(|c| self.values[c * n + i]).sum()).collect();
        ScalarField::from_vec_unchecked(self.grid, values)
    }

    /// Pointwise `S : T`, off-diagonal entries counted twice.
    pub fn contract(&self, other: &SymTensorField) -> Result<ScalarField> {
        self.grid.ensure_same(&other.grid)?;
        let n = self.grid.node_count();
        let d = self.grid.dim();
        let comps = Self::component_count(d);
        let values = (0..n)
            .map(|i| {
                (0..comps)
                    .map(|c| {
                        let m = if c < d { 1.0 } else { 2.0 };
                        m * self.values[c * n + i] * other.values[c * n + i]
                    })
                    .sum()
            })
            .collect();
        Ok(ScalarField::from_vec_unchecked(self.grid, values))
    }

    /// Pointwise Frobenius norm.
    pub fn frobenius(&self) -> ScalarField {
        let sq = self.contract(self).expect("same grid");
        sq.map(|v| v.max(0.0).sqrt())
    }

    /// Pointwise product with a scalar field.
    pub fn scaled_by(&self, s: &ScalarField) -> Result<Self> {
        self.grid.ensure_same(s.grid())?;
        let n = self.grid.node_count();
        let values = self.values.iter().enumerate().map(|(k, &v)| v * s.values()[k % n]).collect();
        Ok(Self { grid: self.grid, values })
    }
}
