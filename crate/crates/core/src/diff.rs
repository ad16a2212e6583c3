//! Second-order finite-difference operators on nodal fields.
//!
//! Interior nodes use centered differences; boundary nodes use the one-sided
//! three-point formula. Both are exact on quadratics along the axis.

use crate::error::Result;
use crate::fields::{sym_pairs, ScalarField, SymTensorField, VectorField};
use crate::grid::Grid;

/// Derivative of nodal values along one axis.
pub fn partial(grid: &Grid, values: &[f64], axis: usize) -> Vec<f64> {
    let n = grid.cells(axis);
    let h = grid.spacing(axis);
    let s = grid.step(axis);
    let inv2h = 0.5 / h;
    (0..values.len())
        .map(|idx| {
            let i = grid.ijk(idx)[axis];
            if i == 0 {
                (-3.0 * values[idx] + 4.0 * values[idx + s] - values[idx + 2 * s]) * inv2h
            } else if i == n {
                (3.0 * values[idx] - 4.0 * values[idx - s] + values[idx - 2 * s]) * inv2h
            } else {
                (values[idx + s] - values[idx - s]) * inv2h
            }
        })
        .collect()
}

pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    let g = *f.grid();
    g.ensure_differentiable()?;
    let comps: Vec<Vec<f64>> = (0..g.dim()).map(|a| partial(&g, f.values(), a)).collect();
    Ok(VectorField::from_vec_unchecked(g, comps.concat()))
}

/// `(grad u + grad u^T) / 2`.
pub fn sym_grad(u: &VectorField) -> Result<SymTensorField> {
    let g = *u.grid();
    g.ensure_differentiable()?;
    let d = g.dim();
    // du[c][a] = d u_c / d x_a
    let du: Vec<Vec<Vec<f64>>> =
        (0..d).map(|c| (0..d).map(|a| partial(&g, u.component(c), a)).collect()).collect();
    let n = g.node_count();
    let pairs = sym_pairs(d);
    let mut values = vec![0.0; pairs.len() * n];
    for (k, &(r, s)) in pairs.iter().enumerate() {
        let out = &mut values[k * n..(k + 1) * n];
        for i in 0..n {
            out[i] = 0.5 * (du[r][s][i] + du[s][r][i]);
        }
    }
    Ok(SymTensorField::from_vec_unchecked(g, values))
}

pub fn divergence(u: &VectorField) -> Result<ScalarField> {
    let g = *u.grid();
    g.ensure_differentiable()?;
    let mut div = vec![0.0; g.node_count()];
    for a in 0..g.dim() {
        for (o, v) in div.iter_mut().zip(partial(&g, u.component(a), a)) {
            *o += v;
        }
    }
    Ok(ScalarField::from_vec_unchecked(g, div))
}

/// Row-wise divergence of a symmetric tensor field, `(div T)_i = sum_j d_j T_ij`.
pub fn tensor_divergence(t: &SymTensorField) -> Result<VectorField> {
    let g = *t.grid();
    g.ensure_differentiable()?;
    let d = g.dim();
    let n = g.node_count();
    let pairs = sym_pairs(d);
    let mut out = vec![0.0; d * n];
    for (k, &(r, s)) in pairs.iter().enumerate() {
        let comp = t.component(k);
        let ds = partial(&g, comp, s);
        for i in 0..n {
            out[r * n + i] += ds[i];
        }
        if r != s {
            let dr = partial(&g, comp, r);
            for i in 0..n {
                out[s * n + i] += dr[i];
            }
        }
    }
    Ok(VectorField::from_vec_unchecked(g, out))
}

/// Curl of a vector field: a scalar rotation in 2D, a vector in 3D.
#[derive(Clone, Debug, PartialEq)]
pub enum Rotation {
    Planar(ScalarField),
    Spatial(VectorField),
}

impl Rotation {
    /// Flat value list (components concatenated in 3D).
    pub fn values(&self) -> &[f64] {
        match self {
            Rotation::Planar(s) => s.values(),
            Rotation::Spatial(v) => v.values(),
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            Rotation::Planar(s) => s.grid(),
            Rotation::Spatial(v) => v.grid(),
        }
    }

    pub fn component_count(&self) -> usize {
        match self {
            Rotation::Planar(_) => 1,
            Rotation::Spatial(_) => 3,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Combines two rotations of the same shape value by value.
    pub fn zip_map(&self, other: &Rotation, f: impl Fn(f64, f64) -> f64) -> Result<Rotation> {
        match (self, other) {
            (Rotation::Planar(a), Rotation::Planar(b)) => Ok(Rotation::Planar(a.zip_map(b, f)?)),
            (Rotation::Spatial(a), Rotation::Spatial(b)) => Ok(Rotation::Spatial(a.zip_map(b, f)?)),
            _ => Err(crate::error::Error::GridMismatch("planar vs spatial rotation".into())),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Rotation {
        match self {
            Rotation::Planar(a) => Rotation::Planar(a.map(f)),
            Rotation::Spatial(a) => Rotation::Spatial(a.map(f)),
        }
    }

    /// Split into per-component nodal value slices.
    pub fn components(&self) -> Vec<&[f64]> {
        match self {
            Rotation::Planar(s) => vec![s.values()],
            Rotation::Spatial(v) => (0..3).map(|c| v.component(c)).collect(),
        }
    }
}

pub fn curl(u: &VectorField) -> Result<Rotation> {
    let g = *u.grid();
    g.ensure_differentiable()?;
    let d = |c: usize, a: usize| partial(&g, u.component(c), a);
    if g.dim() == 2 {
        let v: Vec<f64> = d(1, 0).iter().zip(d(0, 1)).map(|(a, b)| a - b).collect();
        Ok(Rotation::Planar(ScalarField::from_vec_unchecked(g, v)))
    } else {
        let sub = |x: Vec<f64>, y: Vec<f64>| x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>();
        let c0 = sub(d(2, 1), d(1, 2));
        let c1 = sub(d(0, 2), d(2, 0));
        let c2 = sub(d(1, 0), d(0, 1));
        Ok(Rotation::Spatial(VectorField::from_vec_unchecked(g, [c0, c1, c2].concat())))
    }
}
