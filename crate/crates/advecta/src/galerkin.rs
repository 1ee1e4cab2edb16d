//! Galerkin assembly of the coupled spectral transition generator and the
//! operations built on it: matrix exponential, process-noise covariances,
//! coefficient cross-covariances, redistribution-kernel steps and per-mode
//! energies.
//!
//! Each generator entry is a mesh-sum quadrature of a weighted product of
//! basis functions. The quadrature path computes those sums literally and is
//! kept as the oracle; the fast path reduces every product-of-basis integral
//! via product-to-sum identities to DFT coefficients of the eight weighted
//! fields (two velocity components, three diffusivity entries, the two
//! divergence components and the decay), evaluated at `k ± k'`, so assembly
//! costs one FFT per weighted field plus O(1) work per matrix entry.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::fields::PhysicalFieldSet;
use crate::grid::{GridSpec, RealGridField};
use crate::linalg;
use crate::spectral::{
    dft2, evaluate_basis, BasisKind, SpectralCoeffVector, SpectrumTable, Wavenumber,
    WavenumberSets,
};
use crate::{AdvectaError, Result};

/// Dense real transition generator acting on packed coefficient vectors.
#[derive(Clone, Debug)]
pub struct TransitionGenerator {
    sets: Arc<WavenumberSets>,
    g: Array2<f64>,
    assembled_from: u64,
}

impl TransitionGenerator {
    /// Wrap an explicit matrix; mostly for tests and file ingestion.
    pub fn from_matrix(sets: Arc<WavenumberSets>, g: Array2<f64>) -> Result<Self> {
        if g.dim() != (sets.dim(), sets.dim()) {
            return Err(AdvectaError::Data(format!(
                "generator shape {:?} does not match packing dimension {}",
                g.dim(),
                sets.dim()
            )));
        }
        Ok(TransitionGenerator {
            sets,
            g,
            assembled_from: 0,
        })
    }

    pub fn sets(&self) -> &Arc<WavenumberSets> {
        &self.sets
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    /// Fingerprint of the physical fields this generator was assembled from.
    pub fn assembled_from(&self) -> u64 {
        self.assembled_from
    }

    /// `exp(G * dt)`.
    pub fn exponential(&self, dt: f64) -> Result<Array2<f64>> {
        if dt < 0.0 {
            return Err(AdvectaError::Numeric("time step must be nonnegative".into()));
        }
        linalg::expm(&(&self.g * dt))
    }
}

/// Per-coefficient spectral densities of the driving noise (`h`) and of the
/// initial coefficients (`h0`).
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    pub h: Array1<f64>,
    pub h0: Array1<f64>,
}

impl NoiseSpec {
    pub fn new(h: Array1<f64>, h0: Array1<f64>) -> Result<Self> {
        if h.iter().chain(h0.iter()).any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(AdvectaError::Config("noise densities must be nonnegative".into()));
        }
        Ok(NoiseSpec { h, h0 })
    }

    /// Equal density on every packed coefficient.
    pub fn flat(sets: &WavenumberSets, h: f64, h0: f64) -> Result<Self> {
        Self::new(
            Array1::from_elem(sets.dim(), h),
            Array1::from_elem(sets.dim(), h0),
        )
    }

    /// Isotropic power law `h(k) = a (1 + |2πk|^2)^(-b)`, the same value on
    /// the cos and sin parts of a mode; `h0` uses `(a0, b0)`.
    pub fn power_law(sets: &WavenumberSets, a: f64, b: f64, a0: f64, b0: f64) -> Result<Self> {
        let law = |k: Wavenumber, a: f64, b: f64| -> f64 {
            let (t1, t2) = WavenumberSets::angular(k);
            a * (1.0 + t1 * t1 + t2 * t2).powf(-b)
        };
        let mut h = Array1::zeros(sets.dim());
        let mut h0 = Array1::zeros(sets.dim());
        for &k in sets.singles().iter().chain(sets.pairs()) {
            let ci = sets.cos_index(k).unwrap();
            h[ci] = law(k, a, b);
            h0[ci] = law(k, a0, b0);
            if let Some(si) = sets.sin_index(k) {
                h[si] = law(k, a, b);
                h0[si] = law(k, a0, b0);
            }
        }
        Self::new(h, h0)
    }
}

/// The twelve mesh-sum quadratures coupling state mode `k` to test mode
/// `k'`: indices 0..3 carry the convection terms, 4..7 diffusion (including
/// the divergence of the diffusivity), 8..11 decay.
pub fn psi_integrals(k: Wavenumber, kprime: Wavenumber, fields: &PhysicalFieldSet) -> [f64; 12] {
    let grid = fields.grid();
    let (kt1, kt2) = WavenumberSets::angular(k);
    let mut psi = [0.0f64; 12];
    for i1 in 0..grid.n1() {
        for i2 in 0..grid.n2() {
            let s = grid.point(i1, i2);
            let ck = evaluate_basis(k, s, BasisKind::Cos);
            let sk = evaluate_basis(k, s, BasisKind::Sin);
            let ckp = evaluate_basis(kprime, s, BasisKind::Cos);
            let skp = evaluate_basis(kprime, s, BasisKind::Sin);

            let wv = fields.vx[[i1, i2]] * kt1 + fields.vy[[i1, i2]] * kt2;
            let wd = fields.d11[[i1, i2]] * kt1 * kt1
                + 2.0 * fields.d12[[i1, i2]] * kt1 * kt2
                + fields.d22[[i1, i2]] * kt2 * kt2;
            let wg = fields.div_d1[[i1, i2]] * kt1 + fields.div_d2[[i1, i2]] * kt2;
            let wz = fields.zeta[[i1, i2]];

            psi[0] += wv * sk * ckp;
            psi[1] -= wv * ck * ckp;
            psi[2] += wv * sk * skp;
            psi[3] -= wv * ck * skp;
            psi[4] += (-wd * ck - wg * sk) * ckp;
            psi[5] += (-wd * sk + wg * ck) * ckp;
            psi[6] += (-wd * ck - wg * sk) * skp;
            psi[7] += (-wd * sk + wg * ck) * skp;
            psi[8] -= wz * ck * ckp;
            psi[9] -= wz * sk * ckp;
            psi[10] -= wz * ck * skp;
            psi[11] -= wz * sk * skp;
        }
    }
    let scale = 1.0 / grid.len() as f64;
    for p in psi.iter_mut() {
        *p *= scale;
    }
    psi
}

/// Mesh-sum normalization `C_k = ∫ cos(2πk·s)^2 ds` (1 for self-conjugate
/// modes, 1/2 otherwise).
pub fn mode_normalization(k: Wavenumber, grid: GridSpec) -> f64 {
    let mut acc = 0.0;
    for i1 in 0..grid.n1() {
        for i2 in 0..grid.n2() {
            let c = evaluate_basis(k, grid.point(i1, i2), BasisKind::Cos);
            acc += c * c;
        }
    }
    acc / grid.len() as f64
}

// Row/column layout shared by both assembly paths: one row per packed
// coefficient; rows of singles are cos-equations, pair rows split into a
// cos and a sin equation with identical coupling structure.
struct Layout<'a> {
    sets: &'a WavenumberSets,
}

impl<'a> Layout<'a> {
    fn columns(&self) -> impl Iterator<Item = (usize, Wavenumber, bool, f64)> + 'a {
        // (packed index, mode, is_sin_part, column weight)
        let sets = self.sets;
        let singles = sets.singles().iter().enumerate().map(move |(_, &k)| {
            (sets.cos_index(k).unwrap(), k, false, 1.0)
        });
        let pair_cos = sets.pairs().iter().map(move |&k| {
            (sets.cos_index(k).unwrap(), k, false, 2.0)
        });
        let pair_sin = sets.pairs().iter().map(move |&k| {
            (sets.sin_index(k).unwrap(), k, true, 2.0)
        });
        singles.chain(pair_cos).chain(pair_sin)
    }
}

/// Assemble the generator by direct quadrature of every coupling integral.
/// O(K^2 N) — the oracle the fast path is tested against.
pub fn assemble_g_quadrature(
    fields: &PhysicalFieldSet,
    sets: &Arc<WavenumberSets>,
) -> Result<TransitionGenerator> {
    check_same_grid(fields, sets)?;
    let dim = sets.dim();
    let mut g = Array2::zeros((dim, dim));
    let layout = Layout { sets };
    let grid = fields.grid();

    let mut row_modes: Vec<(usize, Wavenumber, bool, f64)> = Vec::new();
    for &k in sets.singles() {
        let c = mode_normalization(k, grid);
        row_modes.push((sets.cos_index(k).unwrap(), k, false, 1.0 / c));
    }
    for &k in sets.pairs() {
        let c = mode_normalization(k, grid);
        row_modes.push((sets.cos_index(k).unwrap(), k, false, 1.0 / (2.0 * c)));
        row_modes.push((sets.sin_index(k).unwrap(), k, true, 1.0 / (2.0 * c)));
    }

    for (col, k, col_sin, col_w) in layout.columns() {
        for &(row, kp, row_sin, row_w) in &row_modes {
            let psi = psi_integrals(k, kp, fields);
            let combo = match (row_sin, col_sin) {
                (false, false) => psi[0] + psi[4] + psi[8],
                (false, true) => psi[1] + psi[5] + psi[9],
                (true, false) => psi[2] + psi[6] + psi[10],
                (true, true) => psi[3] + psi[7] + psi[11],
            };
            g[[row, col]] = row_w * col_w * combo;
        }
    }
    Ok(TransitionGenerator {
        sets: sets.clone(),
        g,
        assembled_from: fields.fingerprint(),
    })
}

/// Cos/sin mesh coefficients of one weighted field, read out of its DFT
/// table with periodic folding.
struct WeightTable {
    table: SpectrumTable,
}

impl WeightTable {
    fn new(grid: GridSpec, values: &Array2<f64>) -> Self {
        let field = RealGridField::new(grid, values.clone()).expect("weighted field is finite");
        WeightTable { table: dft2(&field) }
    }

    /// `(1/N) Σ w(s) cos(2πκ·s)`
    fn cosine(&self, kappa: Wavenumber) -> f64 {
        self.table.get(kappa).re
    }

    /// `(1/N) Σ w(s) sin(2πκ·s)`
    fn sine(&self, kappa: Wavenumber) -> f64 {
        -self.table.get(kappa).im
    }
}

/// Assemble the generator from one DFT per weighted field.
///
/// Equal to [`assemble_g_quadrature`] up to rounding: the FFT evaluates the
/// identical mesh sums after product-to-sum expansion of the basis products.
pub fn assemble_g(
    fields: &PhysicalFieldSet,
    sets: &Arc<WavenumberSets>,
) -> Result<TransitionGenerator> {
    check_same_grid(fields, sets)?;
    let grid = fields.grid();
    let tv1 = WeightTable::new(grid, &fields.vx);
    let tv2 = WeightTable::new(grid, &fields.vy);
    let td11 = WeightTable::new(grid, &fields.d11);
    let td12 = WeightTable::new(grid, &fields.d12);
    let td22 = WeightTable::new(grid, &fields.d22);
    let tg1 = WeightTable::new(grid, &fields.div_d1);
    let tg2 = WeightTable::new(grid, &fields.div_d2);
    let tz = WeightTable::new(grid, &fields.zeta);

    let dim = sets.dim();
    let mut g = Array2::zeros((dim, dim));
    let layout = Layout { sets };

    // Rows: one cos equation per single, a (cos, sin) pair per pair mode.
    // The normalization 1/C_k' cancels the packing factors so that every
    // row reduces to weight 1 on singles columns and 2 on pair columns.
    let mut rows: Vec<(usize, Wavenumber, bool)> = Vec::new();
    for &k in sets.singles() {
        rows.push((sets.cos_index(k).unwrap(), k, false));
    }
    for &k in sets.pairs() {
        rows.push((sets.cos_index(k).unwrap(), k, false));
        rows.push((sets.sin_index(k).unwrap(), k, true));
    }

    for (col, k, col_sin, col_w) in layout.columns() {
        let (kt1, kt2) = WavenumberSets::angular(k);
        for &(row, kp, row_sin) in &rows {
            let sum = (k.0 + kp.0, k.1 + kp.1);
            let dif = (k.0 - kp.0, k.1 - kp.1);

            let wv_c = |kk: Wavenumber| kt1 * tv1.cosine(kk) + kt2 * tv2.cosine(kk);
            let wv_s = |kk: Wavenumber| kt1 * tv1.sine(kk) + kt2 * tv2.sine(kk);
            let wd_c = |kk: Wavenumber| {
                kt1 * kt1 * td11.cosine(kk)
                    + 2.0 * kt1 * kt2 * td12.cosine(kk)
                    + kt2 * kt2 * td22.cosine(kk)
            };
            let wd_s = |kk: Wavenumber| {
                kt1 * kt1 * td11.sine(kk)
                    + 2.0 * kt1 * kt2 * td12.sine(kk)
                    + kt2 * kt2 * td22.sine(kk)
            };
            let wg_c = |kk: Wavenumber| kt1 * tg1.cosine(kk) + kt2 * tg2.cosine(kk);
            let wg_s = |kk: Wavenumber| kt1 * tg1.sine(kk) + kt2 * tg2.sine(kk);

            let combo = match (row_sin, col_sin) {
                // Ψ1 + Ψ5 + Ψ9
                (false, false) => {
                    0.5 * (wv_s(sum) + wv_s(dif))
                        - 0.5 * (wd_c(sum) + wd_c(dif))
                        - 0.5 * (wg_s(sum) + wg_s(dif))
                        - 0.5 * (tz.cosine(sum) + tz.cosine(dif))
                }
                // Ψ2 + Ψ6 + Ψ10
                (false, true) => {
                    -0.5 * (wv_c(sum) + wv_c(dif))
                        - 0.5 * (wd_s(sum) + wd_s(dif))
                        + 0.5 * (wg_c(sum) + wg_c(dif))
                        - 0.5 * (tz.sine(sum) + tz.sine(dif))
                }
                // Ψ3 + Ψ7 + Ψ11
                (true, false) => {
                    0.5 * (wv_c(dif) - wv_c(sum))
                        - 0.5 * (wd_s(sum) - wd_s(dif))
                        - 0.5 * (wg_c(dif) - wg_c(sum))
                        - 0.5 * (tz.sine(sum) - tz.sine(dif))
                }
                // Ψ4 + Ψ8 + Ψ12
                (true, true) => {
                    -0.5 * (wv_s(sum) - wv_s(dif))
                        - 0.5 * (wd_c(dif) - wd_c(sum))
                        + 0.5 * (wg_s(sum) - wg_s(dif))
                        - 0.5 * (tz.cosine(dif) - tz.cosine(sum))
                }
            };
            g[[row, col]] = col_w * combo;
        }
    }
    Ok(TransitionGenerator {
        sets: sets.clone(),
        g,
        assembled_from: fields.fingerprint(),
    })
}

fn check_same_grid(fields: &PhysicalFieldSet, sets: &WavenumberSets) -> Result<()> {
    if fields.grid() != sets.grid() {
        return Err(AdvectaError::Config(
            "field set and wavenumber sets live on different grids".into(),
        ));
    }
    Ok(())
}

/// `exp(G dt)` of a transition generator.
pub fn matrix_exponential(gen: &TransitionGenerator, dt: f64) -> Result<Array2<f64>> {
    gen.exponential(dt)
}

/// Process-noise covariance of one exact discrete step,
/// `∫_0^dt exp(G(dt-τ)) H exp(G'(dt-τ)) dτ`.
pub fn process_noise_cov(
    gen: &TransitionGenerator,
    noise: &NoiseSpec,
    dt: f64,
) -> Result<Array2<f64>> {
    if dt < 0.0 {
        return Err(AdvectaError::Numeric("time step must be nonnegative".into()));
    }
    linalg::noise_integral(gen.matrix(), &noise.h, dt)
}

/// Cross-covariance `cov(α(t+Δ), α(t))` of the coefficient process started
/// from `N(0, H0)`:
/// `exp(GΔ) [ exp(Gt) H0 exp(G't) + ∫_0^t exp(G(t-τ)) H exp(G'(t-τ)) dτ ]`.
pub fn alpha_cov(
    gen: &TransitionGenerator,
    noise: &NoiseSpec,
    t: f64,
    delta: f64,
) -> Result<Array2<f64>> {
    if t < 0.0 || delta < 0.0 {
        return Err(AdvectaError::Numeric("times must be nonnegative".into()));
    }
    let k = gen.dim();
    let e_t = gen.exponential(t)?;
    let h0 = Array2::from_diag(&noise.h0);
    let mut var = e_t.dot(&h0).dot(&e_t.t());
    if t > 0.0 {
        var += &linalg::noise_integral(gen.matrix(), &noise.h, t)?;
    }
    let e_d = gen.exponential(delta)?;
    let out = e_d.dot(&var);
    debug_assert_eq!(out.dim(), (k, k));
    Ok(out)
}

/// Spatial redistribution kernel equivalent to one spectral transition step:
/// `ξ(t+Δ, s_p) = (1/N) Σ_q ω_p(x_q) ξ(t, x_q)`.
#[derive(Clone, Debug)]
pub struct IdeKernel {
    grid: GridSpec,
    delta_t: f64,
    /// `weights[[p, q]] = ω_{s_p}(x_q)`, mesh points in row-major order.
    weights: Array2<f64>,
}

impl IdeKernel {
    /// Build the kernel from a generator: `N · R · exp(GΔ) · P` with `R` the
    /// reconstruction and `P` the packing matrix.
    pub fn build(gen: &TransitionGenerator, delta_t: f64) -> Result<Self> {
        let sets = gen.sets();
        let e = gen.exponential(delta_t)?;
        let r = sets.reconstruction_matrix();
        let p = sets.packing_matrix();
        let n = sets.grid().len() as f64;
        let weights = r.dot(&e).dot(&p) * n;
        Ok(IdeKernel {
            grid: sets.grid(),
            delta_t,
            weights,
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Apply `(1/N) Σ_q ω_p(x_q) ξ(x_q)`.
    pub fn apply(&self, field: &RealGridField) -> Result<RealGridField> {
        if field.grid() != self.grid {
            return Err(AdvectaError::Data("field grid does not match kernel".into()));
        }
        let n = self.grid.len();
        let flat = Array1::from_iter(field.values().iter().cloned());
        let out = self.weights.dot(&flat) / n as f64;
        let values = Array2::from_shape_vec((self.grid.n1(), self.grid.n2()), out.to_vec())
            .expect("kernel output has mesh length");
        RealGridField::new(self.grid, values)
    }
}

/// One transition step applied in physical space through the
/// redistribution kernel. The field must be band-limited to the
/// representation; energy outside it is discarded by the packing.
pub fn ide_step(
    field: &RealGridField,
    gen: &TransitionGenerator,
    delta_t: f64,
) -> Result<RealGridField> {
    IdeKernel::build(gen, delta_t)?.apply(field)
}

/// Per-mode energies: `(cos part)^2` for singles, `(cos)^2 + (sin)^2` for
/// conjugate pairs, ordered singles-then-pairs.
pub fn mode_energy(vec: &SpectralCoeffVector) -> Array1<f64> {
    let sets = vec.sets();
    let c = vec.coeffs();
    let mut out = Array1::zeros(sets.singles().len() + sets.pairs().len());
    for (i, &k) in sets.singles().iter().enumerate() {
        out[i] = c[sets.cos_index(k).unwrap()].powi(2);
    }
    let ns = sets.singles().len();
    for (i, &k) in sets.pairs().iter().enumerate() {
        out[ns + i] = c[sets.cos_index(k).unwrap()].powi(2) + c[sets.sin_index(k).unwrap()].powi(2);
    }
    out
}
