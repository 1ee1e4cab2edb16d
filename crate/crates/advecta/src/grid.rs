//! Regular periodic grids and the scalar fields sampled on them.

use ndarray::Array2;

use crate::{AdvectaError, Result};

/// An `n1 × n2` regular mesh on the periodic unit square.
///
/// Grid point `(i1, i2)` sits at `s = (i1/n1, i2/n2)`. Both dimensions must
/// be even — the symmetric coefficient packing depends on it. `spacing` is
/// physical metadata only; every operator in this crate works in
/// unit-domain coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    n1: usize,
    n2: usize,
    spacing: (f64, f64),
}

impl GridSpec {
    /// Unit-domain grid with `spacing = (1/n1, 1/n2)`.
    pub fn new(n1: usize, n2: usize) -> Result<Self> {
        if n1 < 2 || n2 < 2 || n1 % 2 != 0 || n2 % 2 != 0 {
            return Err(AdvectaError::Config(format!(
                "grid dimensions must be even and at least 2, got {n1}x{n2}"
            )));
        }
        Ok(GridSpec {
            n1,
            n2,
            spacing: (1.0 / n1 as f64, 1.0 / n2 as f64),
        })
    }

    /// Same mesh with explicit physical spacing recorded as metadata.
    pub fn with_spacing(n1: usize, n2: usize, spacing: (f64, f64)) -> Result<Self> {
        let mut g = Self::new(n1, n2)?;
        g.spacing = spacing;
        Ok(g)
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    /// Number of mesh points `n1 * n2`.
    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> (f64, f64) {
        self.spacing
    }

    /// Unit-domain coordinates of mesh point `(i1, i2)`.
    pub fn point(&self, i1: usize, i2: usize) -> (f64, f64) {
        (i1 as f64 / self.n1 as f64, i2 as f64 / self.n2 as f64)
    }
}

/// A real scalar field on one [`GridSpec`] frame, stored row-major
/// (`values[[i1, i2]]` at `s = (i1/n1, i2/n2)`).
#[derive(Clone, Debug, PartialEq)]
pub struct RealGridField {
    grid: GridSpec,
    values: Array2<f64>,
}

impl RealGridField {
    pub fn new(grid: GridSpec, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.n1(), grid.n2()) {
            return Err(AdvectaError::Data(format!(
                "field shape {:?} does not match grid {}x{}",
                values.dim(),
                grid.n1(),
                grid.n2()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AdvectaError::Data("field contains non-finite values".into()));
        }
        Ok(RealGridField { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        RealGridField {
            grid,
            values: Array2::zeros((grid.n1(), grid.n2())),
        }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        RealGridField {
            grid,
            values: Array2::from_elem((grid.n1(), grid.n2()), c),
        }
    }

    /// Evaluate `f(s1, s2)` at every mesh point.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = Array2::from_shape_fn((grid.n1(), grid.n2()), |(i1, i2)| {
            let (s1, s2) = grid.point(i1, i2);
            f(s1, s2)
        });
        RealGridField { grid, values }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Spatial mean over the mesh.
    pub fn mean(&self) -> f64 {
        self.values.sum() / self.grid.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest absolute pointwise difference; grids must match.
    pub fn max_abs_diff(&self, other: &RealGridField) -> f64 {
        assert_eq!(self.grid, other.grid, "grid mismatch");
        self.values
            .iter()
            .zip(other.values.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_odd_dimensions() {
        assert!(GridSpec::new(3, 4).is_err());
        assert!(GridSpec::new(4, 7).is_err());
        assert!(GridSpec::new(0, 4).is_err());
        assert!(GridSpec::new(4, 4).is_ok());
    }

    #[test]
    fn rejects_non_finite_values() {
        let g = GridSpec::new(4, 4).unwrap();
        let mut v = Array2::zeros((4, 4));
        v[[1, 2]] = f64::NAN;
        assert!(RealGridField::new(g, v).is_err());
    }

    #[test]
    fn point_coordinates_are_unit_domain() {
        let g = GridSpec::new(4, 8).unwrap();
        assert_eq!(g.point(0, 0), (0.0, 0.0));
        assert_eq!(g.point(2, 4), (0.5, 0.5));
        assert_eq!(g.spacing(), (0.25, 0.125));
    }
}
