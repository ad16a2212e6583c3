//! Uniform Cartesian grids on rectangles and boxes.
//!
//! The domain is `[0, L_0] x [0, L_1] (x [0, L_2])`. Nodes sit on cell corners,
//! including the boundary, and are numbered with the first axis fastest.
//! In 2D the third axis is degenerate: one node layer, zero cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    cells: [usize; 3],
    extents: [f64; 3],
}

impl Grid {
    pub fn new(cells: &[usize], extents: &[f64]) -> Result<Self> {
        let dim = cells.len();
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidInput(format!("grid dimension must be 2 or 3, got {dim}")));
        }
        if extents.len() != dim {
            return Err(Error::InvalidInput(format!(
                "{} extents given for a {dim}-dimensional grid",
                extents.len()
            )));
        }
        let mut c = [0usize; 3];
        let mut e = [1.0f64; 3];
        for a in 0..dim {
            if cells[a] == 0 {
                return Err(Error::InvalidInput(format!("axis {a} has zero cells")));
            }
            if !(extents[a].is_finite() && extents[a] > 0.0) {
                return Err(Error::InvalidInput(format!("axis {a} extent must be positive, got {}", extents[a])));
            }
            c[a] = cells[a];
            e[a] = extents[a];
        }
        let nodes: usize = (0..dim).map(|a| c[a] + 1).try_fold(1usize, |acc, n| acc.checked_mul(n)).ok_or_else(|| {
            Error::InvalidInput("node count overflows addressable memory".into())
        })?;
        nodes
            .checked_mul(std::mem::size_of::<f64>() * dim)
            .filter(|&b| b < isize::MAX as usize)
            .ok_or_else(|| Error::InvalidInput("grid too large".into()))?;
        Ok(Self { dim, cells: c, extents: e })
    }

    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(&[n, n], &[1.0, 1.0])
    }

    pub fn unit_cube(n: usize) -> Result<Self> {
        Self::new(&[n, n, n], &[1.0, 1.0, 1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extents[axis]
    }

    /// Node count along an axis; 1 for the unused third axis of a 2D grid.
    pub fn nodes_along(&self, axis: usize) -> usize {
        self.cells[axis] + 1
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        if axis < self.dim {
            self.extents[axis] / self.cells[axis] as f64
        } else {
            1.0
        }
    }

    pub fn max_spacing(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).fold(0.0, f64::max)
    }

    pub fn node_count(&self) -> usize {
        self.nodes_along(0) * self.nodes_along(1) * self.nodes_along(2)
    }

    pub fn cell_count(&self) -> usize {
        (0..self.dim).map(|a| self.cells[a]).product()
    }

    /// Volume of one cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.nodes_along(0) * (ijk[1] + self.nodes_along(1) * ijk[2])
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let n0 = self.nodes_along(0);
        let n1 = self.nodes_along(1);
        [idx % n0, (idx / n0) % n1, idx / (n0 * n1)]
    }

    #[inline]
    pub fn position(&self, ijk: [usize; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = ijk[a] as f64 * self.spacing(a);
        }
        x
    }

    pub fn position_of(&self, idx: usize) -> [f64; 3] {
        self.position(self.ijk(idx))
    }

    /// Geometric center of the domain.
    pub fn center(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for a in 0..self.dim {
            c[a] = 0.5 * self.extents[a];
        }
        c
    }

    #[inline]
    pub fn is_boundary(&self, ijk: [usize; 3]) -> bool {
        (0..self.dim).any(|a| ijk[a] == 0 || ijk[a] == self.cells[a])
    }

    pub fn is_boundary_index(&self, idx: usize) -> bool {
        self.is_boundary(self.ijk(idx))
    }

    /// Distance in node layers from the nearest boundary face.
    pub fn boundary_depth(&self, ijk: [usize; 3]) -> usize {
        (0..self.dim).map(|a| ijk[a].min(self.cells[a] - ijk[a])).min().unwrap_or(0)
    }

    /// Trapezoidal quadrature weight of a node.
    pub fn weight(&self, ijk: [usize; 3]) -> f64 {
        let mut w = 1.0;
        for a in 0..self.dim {
            let h = self.spacing(a);
            w *= if ijk[a] == 0 || ijk[a] == self.cells[a] { 0.5 * h } else { h };
        }
        w
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.weight(self.ijk(i))).collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| !self.is_boundary_index(i)).collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&i| self.is_boundary_index(i)).collect()
    }

    /// Outward unit normal at a boundary node lying on exactly one face;
    /// `None` for interior, edge and corner nodes.
    pub fn face_normal(&self, ijk: [usize; 3]) -> Option<[f64; 3]> {
        let mut normal = [0.0; 3];
        let mut faces = 0;
        for a in 0..self.dim {
            if ijk[a] == 0 {
                normal[a] = -1.0;
                faces += 1;
            } else if ijk[a] == self.cells[a] {
                normal[a] = 1.0;
                faces += 1;
            }
        }
        (faces == 1).then_some(normal)
    }

    /// Same domain with every axis subdivided `factor` times.
    pub fn refined(&self, factor: usize) -> Self {
        let mut g = *self;
        for a in 0..self.dim {
            g.cells[a] *= factor;
        }
        g
    }

    /// Same domain with half the cells per axis; every axis must have an even cell count.
    pub fn coarsened(&self) -> Result<Self> {
        let mut g = *self;
        for a in 0..self.dim {
            if self.cells[a] % 2 != 0 || self.cells[a] < 4 {
                return Err(Error::Discretization(format!(
                    "axis {a} has {} cells; coarsening needs an even count >= 4",
                    self.cells[a]
                )));
            }
            g.cells[a] /= 2;
        }
        Ok(g)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dim == other.dim
            && self.cells == other.cells
            && (0..3).all(|a| (self.extents[a] - other.extents[a]).abs() <= 1e-12 * self.extents[a])
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{:?} vs {:?}", self.cells, other.cells)))
        }
    }

    /// Every axis must carry at least three nodes for second-order one-sided stencils.
    pub fn ensure_differentiable(&self) -> Result<()> {
        for a in 0..self.dim {
            if self.cells[a] < 2 {
                return Err(Error::Discretization(format!(
                    "axis {a} has {} nodes; at least 3 are required",
                    self.cells[a] + 1
                )));
            }
        }
        Ok(())
    }

    /// Unit offset along an axis.
    #[inline]
    pub fn step(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.nodes_along(0),
            _ => self.nodes_along(0) * self.nodes_along(1),
        }
    }

    // Cells are indexed by their lower corner node.
    #[inline]
    pub fn cell_index(&self, ijk: [usize; 3]) -> usize {
        let c2 = if self.dim == 3 { ijk[2] } else { 0 };
        ijk[0] + self.cells[0] * (ijk[1] + self.cells[1] * c2)
    }

    pub fn cell_ijk(&self, c: usize) -> [usize; 3] {
        let n0 = self.cells[0];
        let n1 = self.cells[1];
        [c % n0, (c / n0) % n1, c / (n0 * n1)]
    }

    pub fn cell_center(&self, c: usize) -> [f64; 3] {
        let ijk = self.cell_ijk(c);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = (ijk[a] as f64 + 0.5) * self.spacing(a);
        }
        x
    }

    /// Node indices at the 2^d corners of a cell.
    pub fn cell_corners(&self, c: usize) -> Vec<usize> {
        let base = self.cell_ijk(c);
        let n = 1usize << self.dim;
        (0..n)
            .map(|m| {
                let mut ijk = base;
                for a in 0..self.dim {
                    ijk[a] += (m >> a) & 1;
                }
                self.index(ijk)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = Grid::new(&[4, 3, 5], &[1.0, 2.0, 0.5]).unwrap();
        for idx in 0..g.node_count() {
            assert_eq!(g.index(g.ijk(idx)), idx);
        }
        assert_eq!(g.node_count(), 5 * 4 * 6);
        assert_eq!(g.cell_count(), 60);
    }

    #[test]
    fn trapezoid_weights_sum_to_volume() {
        let g = Grid::new(&[7, 3], &[2.0, 0.5]).unwrap();
        let total: f64 = g.weights().iter().sum();
        assert!((total - 1.0).abs() < 1e-14);
        let g3 = Grid::new(&[3, 4, 5], &[1.0, 2.0, 3.0]).unwrap();
        assert!((g3.weights().iter().sum::<f64>() - 6.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Grid::new(&[4], &[1.0]).is_err());
        assert!(Grid::new(&[4, 0], &[1.0, 1.0]).is_err());
        assert!(Grid::new(&[4, 4], &[1.0, -1.0]).is_err());
        assert!(Grid::unit_square(1).unwrap().ensure_differentiable().is_err());
        assert!(Grid::unit_square(3).unwrap().coarsened().is_err());
    }

    #[test]
    fn cell_corners_cover_cell() {
        let g = Grid::unit_cube(3).unwrap();
        let corners = g.cell_corners(g.cell_index([1, 2, 0]));
        assert_eq!(corners.len(), 8);
        assert_eq!(corners[0], g.index([1, 2, 0]));
        assert_eq!(corners[7], g.index([2, 3, 1]));
    }
}
