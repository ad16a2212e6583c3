//! Field files: legacy-VTK structured points and flat CSV.
//!
//! Both writers print shortest round-trip decimal representations, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{ScalarField, SymTensorField, VectorField};
use crate::grid::Grid;

/// Any field that can be written to or read from disk.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldData {
    Scalar(ScalarField),
    Vector(VectorField),
    Tensor(SymTensorField),
}

impl FieldData {
    pub fn grid(&self) -> &Grid {
        match self {
            FieldData::Scalar(f) => f.grid(),
            FieldData::Vector(f) => f.grid(),
            FieldData::Tensor(f) => f.grid(),
        }
    }

    fn components(&self) -> usize {
        let d = self.grid().dim();
        match self {
            FieldData::Scalar(_) => 1,
            FieldData::Vector(_) => d,
            FieldData::Tensor(_) => SymTensorField::component_count(d),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            FieldData::Scalar(f) => f.values(),
            FieldData::Vector(f) => f.values(),
            FieldData::Tensor(f) => f.values(),
        }
    }

    pub fn into_scalar(self) -> Result<ScalarField> {
        match self {
            FieldData::Scalar(f) => Ok(f),
            _ => Err(Error::Parse("expected a scalar field".into())),
        }
    }

    pub fn into_vector(self) -> Result<VectorField> {
        match self {
            FieldData::Vector(f) => Ok(f),
            _ => Err(Error::Parse("expected a vector field".into())),
        }
    }
}

impl From<ScalarField> for FieldData {
    fn from(f: ScalarField) -> Self {
        FieldData::Scalar(f)
    }
}

impl From<VectorField> for FieldData {
    fn from(f: VectorField) -> Self {
        FieldData::Vector(f)
    }
}

impl From<SymTensorField> for FieldData {
    fn from(f: SymTensorField) -> Self {
        FieldData::Tensor(f)
    }
}

pub fn vtk_string(field: &FieldData, name: &str) -> String {
    let g = field.grid();
    let n = g.node_count();
    let mut s = String::with_capacity(n * 24);
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{name}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", g.nodes_along(0), g.nodes_along(1), g.nodes_along(2));
    let _ = writeln!(s, "ORIGIN 0 0 0");
    let _ = writeln!(s, "SPACING {:e} {:e} {:e}", g.spacing(0), g.spacing(1), g.spacing(2));
    let _ = writeln!(s, "POINT_DATA {n}");
    let values = field.values();
    match field {
        FieldData::Scalar(_) => {
            let _ = writeln!(s, "SCALARS {name} double 1");
            let _ = writeln!(s, "LOOKUP_TABLE default");
            for v in values {
                let _ = writeln!(s, "{v:e}");
            }
        }
        FieldData::Vector(_) => {
            let _ = writeln!(s, "VECTORS {name} double");
            let d = g.dim();
            for i in 0..n {
                let c = |k: usize| if k < d { values[k * n + i] } else { 0.0 };
                let _ = writeln!(s, "{:e} {:e} {:e}", c(0), c(1), c(2));
            }
        }
        FieldData::Tensor(_) => {
            let m = field.components();
            let _ = writeln!(s, "FIELD FieldData 1");
            let _ = writeln!(s, "{name} {m} {n} double");
            for i in 0..n {
                let row: Vec<String> = (0..m).map(|k| format!("{:e}", values[k * n + i])).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
    }
    s
}

pub fn write_vtk(path: impl AsRef<Path>, field: &FieldData, name: &str) -> Result<()> {
    fs::write(path, vtk_string(field, name))?;
    Ok(())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn parse_f64(tok: &str) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(format!("bad number '{tok}'")))
}

pub fn parse_vtk(text: &str) -> Result<FieldData> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty VTK file"))?;
    if !header.starts_with("# vtk") {
        return Err(parse_err("missing VTK header"));
    }
    let _title = lines.next();
    if lines.next().map(str::trim) != Some("ASCII") {
        return Err(parse_err("only ASCII VTK is supported"));
    }
    let mut dims = None;
    let mut spacing = None;
    let mut kind = None;
    for line in lines.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("DIMENSIONS") if toks.len() == 4 => {
                let d: Result<Vec<usize>> = toks[1..]
                    .iter()
                    .map(|t| t.parse::<usize>().map_err(|_| parse_err("bad DIMENSIONS")))
                    .collect();
                dims = Some(d?);
            }
            Some("SPACING") if toks.len() == 4 => {
                let s: Result<Vec<f64>> = toks[1..].iter().map(|t| parse_f64(t)).collect();
                spacing = Some(s?);
            }
            Some("SCALARS") => {
                kind = Some(("scalar", 1usize));
            }
            Some("LOOKUP_TABLE") => break,
            Some("VECTORS") => {
                kind = Some(("vector", 3));
                break;
            }
            Some("FIELD") => {
                let spec = lines.next().ok_or_else(|| parse_err("truncated FIELD block"))?;
                let st: Vec<&str> = spec.split_whitespace().collect();
                let m = st.get(1).and_then(|t| t.parse::<usize>().ok()).ok_or_else(|| parse_err("bad FIELD"))?;
                kind = Some(("tensor", m));
                break;
            }
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| parse_err("missing DIMENSIONS"))?;
    let spacing = spacing.ok_or_else(|| parse_err("missing SPACING"))?;
    let (kind, width) = kind.ok_or_else(|| parse_err("missing data section"))?;
    let dim = if dims[2] <= 1 { 2 } else { 3 };
    let cells: Vec<usize> = dims[..dim].iter().map(|&n| n.saturating_sub(1)).collect();
    let extents: Vec<f64> = (0..dim).map(|a| cells[a] as f64 * spacing[a]).collect();
    let grid = Grid::new(&cells, &extents)?;
    let n = grid.node_count();
    let numbers: Result<Vec<f64>> = lines.flat_map(|l| l.split_whitespace()).map(parse_f64).collect();
    let numbers = numbers?;
    if numbers.len() != n * width {
        return Err(parse_err(format!("expected {} values, found {}", n * width, numbers.len())));
    }
    match kind {
        "scalar" => Ok(FieldData::Scalar(ScalarField::new(grid, numbers)?)),
        "vector" => {
            let mut values = vec![0.0; dim * n];
            for i in 0..n {
                for c in 0..dim {
                    values[c * n + i] = numbers[3 * i + c];
                }
            }
            Ok(FieldData::Vector(VectorField::new(grid, values)?))
        }
        _ => {
            let mut values = vec![0.0; width * n];
            for i in 0..n {
                for c in 0..width {
                    values[c * n + i] = numbers[width * i + c];
                }
            }
            Ok(FieldData::Tensor(SymTensorField::new(grid, values)?))
        }
    }
}

pub fn read_vtk(path: impl AsRef<Path>) -> Result<FieldData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    parse_vtk(&text)
}

/// CSV with columns `node, x, y[, z], <name>_0, ...`.
pub fn csv_string(field: &FieldData, name: &str) -> String {
    let g = field.grid();
    let d = g.dim();
    let n = g.node_count();
    let m = field.components();
    let values = field.values();
    let mut s = String::with_capacity(n * 48);
    let axes = ["x", "y", "z"];
    let mut header = vec!["node".to_string()];
    header.extend(axes[..d].iter().map(|a| a.to_string()));
    if m == 1 {
        header.push(name.to_string());
    } else {
        header.extend((0..m).map(|c| format!("{name}_{c}")));
    }
    let _ = writeln!(s, "{}", header.join(","));
    for i in 0..n {
        let x = g.position_of(i);
        let _ = write!(s, "{i}");
        for xa in &x[..d] {
            let _ = write!(s, ",{xa:e}");
        }
        for c in 0..m {
            let _ = write!(s, ",{:e}", values[c * n + i]);
        }
        s.push('\n');
    }
    s
}

pub fn write_csv(path: impl AsRef<Path>, field: &FieldData, name: &str) -> Result<()> {
    fs::write(path, csv_string(field, name))?;
    Ok(())
}

/// Reads a CSV written by [`csv_string`]; the grid is inferred from the coordinates.
pub fn parse_csv(text: &str) -> Result<FieldData> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| parse_err("empty CSV"))?.split(',').collect();
    let dim = header.iter().filter(|h| matches!(**h, "x" | "y" | "z")).count();
    if !(dim == 2 || dim == 3) || header.first() != Some(&"node") {
        return Err(parse_err("CSV header must be node,x,y[,z],values..."));
    }
    let m = header.len() - 1 - dim;
    let rows: Result<Vec<Vec<f64>>> = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|t| parse_f64(t.trim())).collect())
        .collect();
    let rows = rows?;
    let mut cells = vec![0usize; dim];
    let mut extents = vec![0.0; dim];
    for a in 0..dim {
        let mut coords: Vec<f64> = rows.iter().map(|r| r[1 + a]).collect();
        coords.sort_by(f64::total_cmp);
        coords.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * (1.0 + y.abs()));
        cells[a] = coords.len().saturating_sub(1);
        extents[a] = *coords.last().unwrap_or(&0.0);
    }
    let grid = Grid::new(&cells, &extents)?;
    let n = grid.node_count();
    if rows.len() != n {
        return Err(parse_err(format!("expected {n} rows, found {}", rows.len())));
    }
    let mut values = vec![0.0; m * n];
    for r in &rows {
        if r.len() != 1 + dim + m {
            return Err(parse_err("ragged CSV row"));
        }
        let i = r[0] as usize;
        if i >= n {
            return Err(parse_err(format!("node index {i} out of range")));
        }
        for c in 0..m {
            values[c * n + i] = r[1 + dim + c];
        }
    }
    if m == 1 {
        Ok(FieldData::Scalar(ScalarField::new(grid, values)?))
    } else if m == dim {
        Ok(FieldData::Vector(VectorField::new(grid, values)?))
    } else if m == SymTensorField::component_count(dim) {
        Ok(FieldData::Tensor(SymTensorField::new(grid, values)?))
    } else {
        Err(parse_err(format!("{m} value columns do not match any field type")))
    }
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<FieldData> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::MissingData(format!("{}: {e}", path.display())))?;
    parse_csv(&text)
}

/// Reads a field by extension (`.vtk` or `.csv`).
pub fn read_field(path: impl AsRef<Path>) -> Result<FieldData> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("vtk") => read_vtk(path),
        Some("csv") => read_csv(path),
        _ => Err(Error::InvalidInput(format!("unknown field file type: {}", path.display()))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vector_field(seed: u64, cells: &[usize]) -> VectorField {
        let ext: Vec<f64> = cells.iter().map(|&c| 0.1 * c as f64).collect();
        let g = Grid::new(cells, &ext).unwrap();
        let s = (seed % 17) as f64 * 0.1;
        VectorField::from_fn(g, |x| [(x[0] * 7.1 + s).sin() * 1e-7, (x[1] + s).exp(), 1.0 / (1.0 + x[2] + s)])
    }

    #[test]
    fn tensor_field_round_trips_through_both_formats() {
        let g = Grid::new(&[3, 2, 2], &[1.0, 0.5, 0.25]).unwrap();
        let t = SymTensorField::constant(g, [[1.0, 0.1, 0.2], [0.1, -3.5, 1e-9], [0.2, 1e-9, 2.5]]);
        let f = FieldData::Tensor(t);
        assert_eq!(parse_vtk(&vtk_string(&f, "strain")).unwrap(), f);
        assert_eq!(parse_csv(&csv_string(&f, "strain")).unwrap(), f);
    }

    #[test]
    fn rejects_truncated_files() {
        let g = Grid::unit_square(3).unwrap();
        let f = FieldData::Scalar(ScalarField::constant(g, 1.0));
        let s = vtk_string(&f, "mu");
        let cut: String = s.lines().take(s.lines().count() - 2).collect::<Vec<_>>().join("\n");
        assert!(parse_vtk(&cut).is_err());
        assert!(matches!(read_vtk("/nonexistent/file.vtk"), Err(Error::MissingData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn vtk_and_csv_round_trip_is_exact(seed in 0u64..1000, nx in 2usize..6, ny in 2usize..5, three in any::<bool>()) {
            let cells: Vec<usize> = if three { vec![nx, ny, 2] } else { vec![nx, ny] };
            let f = FieldData::Vector(vector_field(seed, &cells));
            prop_assert_eq!(&parse_vtk(&vtk_string(&f, "u")).unwrap(), &f);
            prop_assert_eq!(&parse_csv(&csv_string(&f, "u")).unwrap(), &f);
            let s = FieldData::Scalar(ScalarField::from_fn(*f.grid(), |x| (x[0] - x[1]).tan() + seed as f64));
            prop_assert_eq!(&parse_vtk(&vtk_string(&s, "p")).unwrap(), &s);
            prop_assert_eq!(&parse_csv(&csv_string(&s, "p")).unwrap(), &s);
        }
    }
}
