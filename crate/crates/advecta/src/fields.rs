//! Spatially-varying velocity, diffusivity and decay fields.
//!
//! The velocity field is either given directly on the mesh or through a
//! locally weighted mixture of linear regressions squashed through `tanh`
//! so that both components stay within `[-v_max, v_max]`. Decay supports a
//! constant mode and the same mixture without the bound. Diffusivity is a
//! per-point symmetric PSD 2x2 matrix together with its divergence.

use ndarray::Array2;

use crate::grid::GridSpec;
use crate::{AdvectaError, Result};

/// Per-kernel regression basis entries evaluated at a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisFn {
    /// Constant 1.
    One,
    /// First coordinate `s1`.
    S1,
    /// Second coordinate `s2`.
    S2,
}

impl BasisFn {
    fn eval(self, s: (f64, f64)) -> f64 {
        match self {
            BasisFn::One => 1.0,
            BasisFn::S1 => s.0,
            BasisFn::S2 => s.1,
        }
    }
}

/// Default per-kernel basis: affine in the coordinates.
pub fn default_basis() -> Vec<BasisFn> {
    vec![BasisFn::One, BasisFn::S1, BasisFn::S2]
}

/// `tanh`-bounded locally weighted mixture velocity model.
///
/// Component `x` evaluates to
/// `v_max * tanh( sum_j pi_j(s) * b_j(s)' gamma_j )` with isotropic
/// Gaussian kernel weights `pi_j(s) = exp(-|s - c_j|^2 / (2 w^2))`.
/// The weights are not normalized to sum to one, so the coefficients are
/// identified only jointly with the kernel layout.
#[derive(Clone, Debug)]
pub struct VelocityFieldModel {
    pub kernel_centers: Vec<(f64, f64)>,
    pub kernel_bandwidth: f64,
    pub basis: Vec<BasisFn>,
    /// Concatenated per-kernel coefficients, length `J * basis.len()`.
    pub gamma_x: Vec<f64>,
    pub gamma_y: Vec<f64>,
    pub v_max: f64,
}

impl VelocityFieldModel {
    /// Model with the given kernel layout and all-zero coefficients.
    /// Bandwidth defaults to half the minimum inter-center distance.
    pub fn with_kernels(centers: Vec<(f64, f64)>, v_max: f64) -> Self {
        let bw = default_bandwidth(&centers);
        let basis = default_basis();
        let len = centers.len() * basis.len();
        VelocityFieldModel {
            kernel_centers: centers,
            kernel_bandwidth: bw,
            basis,
            gamma_x: vec![0.0; len],
            gamma_y: vec![0.0; len],
            v_max,
        }
    }

    pub fn n_kernels(&self) -> usize {
        self.kernel_centers.len()
    }

    pub fn n_params_per_component(&self) -> usize {
        self.kernel_centers.len() * self.basis.len()
    }

    fn validate(&self) -> Result<()> {
        let expect = self.n_params_per_component();
        if self.gamma_x.len() != expect || self.gamma_y.len() != expect {
            return Err(AdvectaError::Config(format!(
                "velocity coefficient lengths ({}, {}) do not match J*B = {}",
                self.gamma_x.len(),
                self.gamma_y.len(),
                expect
            )));
        }
        if self.v_max <= 0.0 || self.kernel_bandwidth <= 0.0 {
            return Err(AdvectaError::Config(
                "velocity model needs positive v_max and bandwidth".into(),
            ));
        }
        Ok(())
    }

    fn mixture_at(&self, s: (f64, f64), gamma: &[f64]) -> f64 {
        let b = self.basis.len();
        let mut acc = 0.0;
        for (j, &c) in self.kernel_centers.iter().enumerate() {
            let w = gaussian_kernel(s, c, self.kernel_bandwidth);
            let mut reg = 0.0;
            for (i, &bf) in self.basis.iter().enumerate() {
                reg += bf.eval(s) * gamma[j * b + i];
            }
            acc += w * reg;
        }
        acc
    }

    /// Velocity components at one point.
    pub fn eval_at(&self, s: (f64, f64)) -> (f64, f64) {
        (
            self.v_max * self.mixture_at(s, &self.gamma_x).tanh(),
            self.v_max * self.mixture_at(s, &self.gamma_y).tanh(),
        )
    }
}

fn gaussian_kernel(s: (f64, f64), c: (f64, f64), w: f64) -> f64 {
    let d2 = (s.0 - c.0).powi(2) + (s.1 - c.1).powi(2);
    (-d2 / (2.0 * w * w)).exp()
}

/// Half the minimum inter-center distance, or 0.25 for a single kernel.
pub fn default_bandwidth(centers: &[(f64, f64)]) -> f64 {
    let mut min_d = f64::INFINITY;
    for (i, a) in centers.iter().enumerate() {
        for b in centers.iter().skip(i + 1) {
            let d = ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
            min_d = min_d.min(d);
        }
    }
    if min_d.is_finite() {
        0.5 * min_d
    } else {
        0.25
    }
}

/// Evaluate the mixture velocity model on every mesh point.
pub fn eval_velocity(
    model: &VelocityFieldModel,
    grid: GridSpec,
) -> Result<(Array2<f64>, Array2<f64>)> {
    model.validate()?;
    let mut vx = Array2::zeros((grid.n1(), grid.n2()));
    let mut vy = Array2::zeros((grid.n1(), grid.n2()));
    for i1 in 0..grid.n1() {
        for i2 in 0..grid.n2() {
            let (x, y) = model.eval_at(grid.point(i1, i2));
            vx[[i1, i2]] = x;
            vy[[i1, i2]] = y;
        }
    }
    Ok((vx, vy))
}

/// Decay field specification.
#[derive(Clone, Debug)]
pub enum DecayModel {
    Constant(f64),
    /// Mixture of the velocity-model form without the `tanh` bound.
    Mixture {
        kernel_centers: Vec<(f64, f64)>,
        kernel_bandwidth: f64,
        basis: Vec<BasisFn>,
        gamma: Vec<f64>,
    },
}

/// Evaluate the decay model on every mesh point.
pub fn eval_decay(model: &DecayModel, grid: GridSpec) -> Result<Array2<f64>> {
    match model {
        DecayModel::Constant(z) => Ok(Array2::from_elem((grid.n1(), grid.n2()), *z)),
        DecayModel::Mixture {
            kernel_centers,
            kernel_bandwidth,
            basis,
            gamma,
        } => {
            if gamma.len() != kernel_centers.len() * basis.len() {
                return Err(AdvectaError::Config(
                    "decay coefficient length does not match J*B".into(),
                ));
            }
            let b = basis.len();
            let mut out = Array2::zeros((grid.n1(), grid.n2()));
            for i1 in 0..grid.n1() {
                for i2 in 0..grid.n2() {
                    let s = grid.point(i1, i2);
                    let mut acc = 0.0;
                    for (j, &c) in kernel_centers.iter().enumerate() {
                        let w = gaussian_kernel(s, c, *kernel_bandwidth);
                        let mut reg = 0.0;
                        for (i, &bf) in basis.iter().enumerate() {
                            reg += bf.eval(s) * gamma[j * b + i];
                        }
                        acc += w * reg;
                    }
                    out[[i1, i2]] = acc;
                }
            }
            Ok(out)
        }
    }
}

/// Gridded velocity, diffusivity (with divergence) and decay: everything the
/// Galerkin assembly needs, sampled on one mesh.
#[derive(Clone, Debug)]
pub struct PhysicalFieldSet {
    grid: GridSpec,
    pub vx: Array2<f64>,
    pub vy: Array2<f64>,
    pub d11: Array2<f64>,
    pub d12: Array2<f64>,
    pub d22: Array2<f64>,
    /// Divergence of the diffusivity matrix, column-wise: `g_j = sum_i d_i D_ij`.
    pub div_d1: Array2<f64>,
    pub div_d2: Array2<f64>,
    pub zeta: Array2<f64>,
}

impl PhysicalFieldSet {
    /// Assemble from gridded parts; the diffusivity divergence is computed
    /// by periodic central differences.
    pub fn new(
        grid: GridSpec,
        vx: Array2<f64>,
        vy: Array2<f64>,
        d11: Array2<f64>,
        d12: Array2<f64>,
        d22: Array2<f64>,
        zeta: Array2<f64>,
    ) -> Result<Self> {
        let shape = (grid.n1(), grid.n2());
        for (name, arr) in [
            ("vx", &vx),
            ("vy", &vy),
            ("d11", &d11),
            ("d12", &d12),
            ("d22", &d22),
            ("zeta", &zeta),
        ] {
            if arr.dim() != shape {
                return Err(AdvectaError::Config(format!("{name} shape does not match grid")));
            }
            if arr.iter().any(|v| !v.is_finite()) {
                return Err(AdvectaError::Config(format!("{name} contains non-finite values")));
            }
        }
        const PSD_TOL: f64 = 1e-12;
        for i1 in 0..grid.n1() {
            for i2 in 0..grid.n2() {
                let (a, b, c) = (d11[[i1, i2]], d12[[i1, i2]], d22[[i1, i2]]);
                if a < -PSD_TOL || c < -PSD_TOL || a * c - b * b < -PSD_TOL * (1.0 + a * c).abs() {
                    return Err(AdvectaError::Config(format!(
                        "diffusivity not PSD at mesh point ({i1}, {i2})"
                    )));
                }
            }
        }
        let (div_d1, div_d2) = numeric_divergence(&d11, &d12, &d22, grid);
        Ok(PhysicalFieldSet {
            grid,
            vx,
            vy,
            d11,
            d12,
            d22,
            div_d1,
            div_d2,
            zeta,
        })
    }

    /// Constant diffusivity and decay, zero velocity, zero divergence.
    pub fn constant(grid: GridSpec, d: [[f64; 2]; 2], zeta: f64) -> Result<Self> {
        if (d[0][1] - d[1][0]).abs() > 1e-12 {
            return Err(AdvectaError::Config("diffusivity matrix must be symmetric".into()));
        }
        let shape = (grid.n1(), grid.n2());
        let mut set = Self::new(
            grid,
            Array2::zeros(shape),
            Array2::zeros(shape),
            Array2::from_elem(shape, d[0][0]),
            Array2::from_elem(shape, d[0][1]),
            Array2::from_elem(shape, d[1][1]),
            Array2::from_elem(shape, zeta),
        )?;
        set.div_d1.fill(0.0);
        set.div_d2.fill(0.0);
        Ok(set)
    }

    /// Replace the velocity by constant components.
    pub fn with_constant_velocity(mut self, v: (f64, f64)) -> Self {
        self.vx.fill(v.0);
        self.vy.fill(v.1);
        self
    }

    /// Replace the velocity by gridded components.
    pub fn with_velocity(mut self, vx: Array2<f64>, vy: Array2<f64>) -> Result<Self> {
        if vx.dim() != (self.grid.n1(), self.grid.n2()) || vx.dim() != vy.dim() {
            return Err(AdvectaError::Config("velocity shape does not match grid".into()));
        }
        self.vx = vx;
        self.vy = vy;
        Ok(self)
    }

    /// Replace the decay field.
    pub fn with_zeta(mut self, zeta: Array2<f64>) -> Result<Self> {
        if zeta.dim() != (self.grid.n1(), self.grid.n2()) {
            return Err(AdvectaError::Config("decay shape does not match grid".into()));
        }
        self.zeta = zeta;
        Ok(self)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn max_speed(&self) -> f64 {
        self.vx
            .iter()
            .zip(self.vy.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x * x + y * y).sqrt()))
    }

    /// FNV-1a fingerprint over the raw field bytes, used to tie an
    /// assembled generator back to its inputs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |arr: &Array2<f64>| {
            for v in arr.iter() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        };
        eat(&self.vx);
        eat(&self.vy);
        eat(&self.d11);
        eat(&self.d12);
        eat(&self.d22);
        eat(&self.zeta);
        h
    }
}

/// Column-wise divergence of a symmetric matrix field by periodic central
/// differences on the unit-domain mesh: `g_j = d1 D_1j + d2 D_2j`.
pub fn numeric_divergence(
    d11: &Array2<f64>,
    d12: &Array2<f64>,
    d22: &Array2<f64>,
    grid: GridSpec,
) -> (Array2<f64>, Array2<f64>) {
    let g1 = periodic_central_diff(d11, grid, 0) + periodic_central_diff(d12, grid, 1);
    let g2 = periodic_central_diff(d12, grid, 0) + periodic_central_diff(d22, grid, 1);
    (g1, g2)
}

/// Periodic central difference along `axis` (0 = s1, 1 = s2) with the
/// unit-domain step `1/n`.
pub fn periodic_central_diff(f: &Array2<f64>, grid: GridSpec, axis: usize) -> Array2<f64> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let h = if axis == 0 { 1.0 / n1 as f64 } else { 1.0 / n2 as f64 };
    let mut out = Array2::zeros((n1, n2));
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            let (up, dn) = if axis == 0 {
                (f[[(i1 + 1) % n1, i2]], f[[(i1 + n1 - 1) % n1, i2]])
            } else {
                (f[[i1, (i2 + 1) % n2]], f[[i1, (i2 + n2 - 1) % n2]])
            };
            out[[i1, i2]] = (up - dn) / (2.0 * h);
        }
    }
    out
}
