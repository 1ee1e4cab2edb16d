//! Real-valued 2D discrete Fourier analysis, wavenumber-set bookkeeping and
//! symmetric coefficient packing.
//!
//! The forward transform carries the `1/(n1*n2)` normalization; the inverse
//! carries none. A real field's spectrum satisfies the rotational symmetry
//! `X(k) = conj(X(-k))`, which lets the `n1*n2` complex coefficients be
//! packed into an equally long real vector. Two packings are supported:
//! [`PackingForm::Full`] keeps all modes (dimension `n1*n2`), while
//! [`PackingForm::Reduced`] drops the `n/2` frequencies on each axis so that
//! every retained mode has a distinct conjugate partner (dimension
//! `n1*n2 - n1 - n2 + 1`).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::grid::{GridSpec, RealGridField};
use crate::{AdvectaError, Result};

/// Integer wavenumber pair `(k1, k2)` in the principal range
/// `ki in (-ni/2, ni/2]`.
pub type Wavenumber = (i64, i64);

/// Relative tolerance for accepting an externally supplied complex spectrum
/// as rotationally symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

fn fold(k: i64, n: usize) -> usize {
    let n = n as i64;
    (((k % n) + n) % n) as usize
}

/// Map an array index `0..n` back to the principal wavenumber range.
fn principal(m: usize, n: usize) -> i64 {
    if m <= n / 2 {
        m as i64
    } else {
        m as i64 - n as i64
    }
}

/// Complex DFT coefficient table of one real field.
///
/// Stored in FFT layout; [`SpectrumTable::get`] accepts any integer
/// wavenumber and folds it modulo the grid.
#[derive(Clone, Debug)]
pub struct SpectrumTable {
    grid: GridSpec,
    data: Array2<Complex64>,
}

impl SpectrumTable {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectrumTable {
            grid,
            data: Array2::zeros((grid.n1(), grid.n2())),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn get(&self, k: Wavenumber) -> Complex64 {
        self.data[[fold(k.0, self.grid.n1()), fold(k.1, self.grid.n2())]]
    }

    pub fn set(&mut self, k: Wavenumber, value: Complex64) {
        self.data[[fold(k.0, self.grid.n1()), fold(k.1, self.grid.n2())]] = value;
    }

    /// Iterate over `(k, X(k))` with `k` in the principal range.
    pub fn iter(&self) -> impl Iterator<Item = (Wavenumber, Complex64)> + '_ {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        self.data.indexed_iter().map(move |((m1, m2), &v)| {
            ((principal(m1, n1), principal(m2, n2)), v)
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.norm()))
    }

    /// Largest deviation from rotational symmetry, `max |X(k) - conj(X(-k))|`.
    pub fn symmetry_residual(&self) -> f64 {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        let mut worst = 0.0f64;
        for m1 in 0..n1 {
            for m2 in 0..n2 {
                let a = self.data[[m1, m2]];
                let b = self.data[[fold(-(m1 as i64), n1), fold(-(m2 as i64), n2)]];
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }

    fn check_symmetry(&self) -> Result<()> {
        let resid = self.symmetry_residual();
        let scale = self.max_abs().max(1.0);
        if resid > SYMMETRY_TOL * scale {
            return Err(AdvectaError::InvalidSpectrum(format!(
                "rotational symmetry violated: residual {resid:.3e} exceeds {:.3e}",
                SYMMETRY_TOL * scale
            )));
        }
        Ok(())
    }
}

fn fft_2d(data: &mut Array2<Complex64>, forward: bool) {
    let (n1, n2) = data.dim();
    let mut planner = FftPlanner::<f64>::new();
    let fft_rows = if forward {
        planner.plan_fft_forward(n2)
    } else {
        planner.plan_fft_inverse(n2)
    };
    let fft_cols = if forward {
        planner.plan_fft_forward(n1)
    } else {
        planner.plan_fft_inverse(n1)
    };
    let mut row = vec![Complex64::default(); n2];
    for i in 0..n1 {
        for j in 0..n2 {
            row[j] = data[[i, j]];
        }
        fft_rows.process(&mut row);
        for j in 0..n2 {
            data[[i, j]] = row[j];
        }
    }
    let mut col = vec![Complex64::default(); n1];
    for j in 0..n2 {
        for i in 0..n1 {
            col[i] = data[[i, j]];
        }
        fft_cols.process(&mut col);
        for i in 0..n1 {
            data[[i, j]] = col[i];
        }
    }
}

/// Forward 2D DFT, `X(k) = (1/(n1*n2)) * sum_x x(n) exp(-i 2π k·n/N)`.
pub fn dft2(field: &RealGridField) -> SpectrumTable {
    let grid = field.grid();
    let scale = 1.0 / grid.len() as f64;
    let mut data = field.values().mapv(|v| Complex64::new(v * scale, 0.0));
    fft_2d(&mut data, true);
    SpectrumTable { grid, data }
}

/// Inverse 2D DFT, `x(n) = sum_k X(k) exp(+i 2π k·n/N)` (no normalization).
///
/// The table must satisfy rotational symmetry within [`SYMMETRY_TOL`]
/// (relative); otherwise an invalid-spectrum error is returned.
pub fn idft2(table: &SpectrumTable) -> Result<RealGridField> {
    table.check_symmetry()?;
    let mut data = table.data.clone();
    fft_2d(&mut data, false);
    RealGridField::new(table.grid, data.mapv(|v| v.re))
}

/// Which of the two packings a [`WavenumberSets`] instance serves.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackingForm {
    /// All `n1*n2` modes retained; the four self-conjugate modes carry a
    /// real coefficient each, every other mode is one of a conjugate pair.
    Full,
    /// The `n/2` frequencies on each axis are dropped, so every non-DC mode
    /// has a distinct conjugate partner. Default for operator assembly.
    Reduced,
}

/// The wavenumber index sets resolving conjugate symmetry of a real 2D DFT.
///
/// `omega1` holds the four self-conjugate modes, `omega2` one representative
/// of each remaining conjugate pair, `omega3` the same with the highest
/// frequencies excluded. All lists are sorted lexicographically by
/// `(k1, k2)`; the packed layout is `[singles | pair cos parts | pair sin
/// parts]`.
#[derive(Debug)]
pub struct WavenumberSets {
    grid: GridSpec,
    form: PackingForm,
    omega1: Vec<Wavenumber>,
    omega2: Vec<Wavenumber>,
    omega3: Vec<Wavenumber>,
    /// Per-axis |k| cap for reduced estimation sets; `None` = no cap.
    cap: Option<i64>,
    slots: HashMap<Wavenumber, Slot>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    Single(usize),
    Pair(usize),
}

impl WavenumberSets {
    /// Enumerate the sets for `grid` in the requested form.
    pub fn build(grid: GridSpec, form: PackingForm) -> Arc<Self> {
        Self::build_inner(grid, form, None)
    }

    /// Reduced-form sets restricted to `|k1| <= cap` and `|k2| <= cap`.
    /// Used for low-frequency estimation stages.
    pub fn build_capped(grid: GridSpec, cap: usize) -> Arc<Self> {
        Self::build_inner(grid, PackingForm::Reduced, Some(cap as i64))
    }

    fn build_inner(grid: GridSpec, form: PackingForm, cap: Option<i64>) -> Arc<Self> {
        let (h1, h2) = (grid.n1() as i64 / 2, grid.n2() as i64 / 2);
        let omega1 = vec![(0, 0), (0, h2), (h1, 0), (h1, h2)];

        let within = |k: Wavenumber| cap.map_or(true, |c| k.0.abs() <= c && k.1.abs() <= c);
        let mut omega2 = Vec::new();
        let mut omega3 = Vec::new();
        for k1 in (-h1 + 1)..=h1 {
            for k2 in (-h2 + 1)..=h2 {
                let k = (k1, k2);
                if !within(k) {
                    continue;
                }
                let self1 = k1 == 0 || k1 == h1;
                let self2 = k2 == 0 || k2 == h2;
                if self1 && self2 {
                    continue; // omega1
                }
                // One representative per conjugate pair: positive k1, or
                // positive k2 when the k1 coordinate is self-negating.
                let rep = if self1 { k2 > 0 } else { k1 > 0 };
                if !rep {
                    continue;
                }
                omega2.push(k);
                if k1 < h1 && k2 < h2 {
                    omega3.push(k);
                }
            }
        }
        omega2.sort_unstable();
        omega3.sort_unstable();

        let mut sets = WavenumberSets {
            grid,
            form,
            omega1,
            omega2,
            omega3,
            cap,
            slots: HashMap::new(),
        };
        let mut slots = HashMap::new();
        for (i, &k) in sets.singles().iter().enumerate() {
            slots.insert(k, Slot::Single(i));
        }
        for (i, &k) in sets.pairs().iter().enumerate() {
            slots.insert(k, Slot::Pair(i));
        }
        sets.slots = slots;
        Arc::new(sets)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn form(&self) -> PackingForm {
        self.form
    }

    pub fn omega1(&self) -> &[Wavenumber] {
        &self.omega1
    }

    pub fn omega2(&self) -> &[Wavenumber] {
        &self.omega2
    }

    pub fn omega3(&self) -> &[Wavenumber] {
        &self.omega3
    }

    pub fn cap(&self) -> Option<i64> {
        self.cap
    }

    /// Modes carrying a single real coefficient: omega1 in the full form,
    /// just the DC mode in the reduced form.
    pub fn singles(&self) -> &[Wavenumber] {
        match self.form {
            PackingForm::Full => &self.omega1,
            PackingForm::Reduced => &self.omega1[..1],
        }
    }

    /// Conjugate-pair representatives carrying (cos, sin) coefficients.
    pub fn pairs(&self) -> &[Wavenumber] {
        match self.form {
            PackingForm::Full => &self.omega2,
            PackingForm::Reduced => &self.omega3,
        }
    }

    /// Packed vector dimension `|singles| + 2 |pairs|`.
    pub fn dim(&self) -> usize {
        self.singles().len() + 2 * self.pairs().len()
    }

    /// Packed index of the cos coefficient of mode `k`, if represented.
    pub fn cos_index(&self, k: Wavenumber) -> Option<usize> {
        match self.slots.get(&k)? {
            Slot::Single(i) => Some(*i),
            Slot::Pair(i) => Some(self.singles().len() + i),
        }
    }

    /// Packed index of the sin coefficient of mode `k` (pairs only).
    pub fn sin_index(&self, k: Wavenumber) -> Option<usize> {
        match self.slots.get(&k)? {
            Slot::Single(_) => None,
            Slot::Pair(i) => Some(self.singles().len() + self.pairs().len() + i),
        }
    }

    /// Angular wavenumber `2π k` of a mode.
    pub fn angular(k: Wavenumber) -> (f64, f64) {
        (2.0 * PI * k.0 as f64, 2.0 * PI * k.1 as f64)
    }

    /// Reconstruction matrix `R` (`n1*n2 × dim`): field values from packed
    /// coefficients, rows indexed by row-major mesh point.
    pub fn reconstruction_matrix(&self) -> Array2<f64> {
        let n = self.grid.len();
        let mut r = Array2::zeros((n, self.dim()));
        for (p, (i1, i2)) in mesh_points(self.grid).enumerate() {
            let s = self.grid.point(i1, i2);
            for (j, &k) in self.singles().iter().enumerate() {
                r[[p, j]] = evaluate_basis(k, s, BasisKind::Cos);
            }
            let ns = self.singles().len();
            let np = self.pairs().len();
            for (j, &k) in self.pairs().iter().enumerate() {
                r[[p, ns + j]] = 2.0 * evaluate_basis(k, s, BasisKind::Cos);
                r[[p, ns + np + j]] = 2.0 * evaluate_basis(k, s, BasisKind::Sin);
            }
        }
        r
    }

    /// Packing matrix `P` (`dim × n1*n2`): packed coefficients from field
    /// values; the linear form of `pack ∘ dft2`. Satisfies `P R = I`.
    pub fn packing_matrix(&self) -> Array2<f64> {
        let n = self.grid.len();
        let scale = 1.0 / n as f64;
        let mut pm = Array2::zeros((self.dim(), n));
        for (p, (i1, i2)) in mesh_points(self.grid).enumerate() {
            let s = self.grid.point(i1, i2);
            for (j, &k) in self.singles().iter().enumerate() {
                pm[[j, p]] = scale * evaluate_basis(k, s, BasisKind::Cos);
            }
            let ns = self.singles().len();
            let np = self.pairs().len();
            for (j, &k) in self.pairs().iter().enumerate() {
                pm[[ns + j, p]] = scale * evaluate_basis(k, s, BasisKind::Cos);
                pm[[ns + np + j, p]] = scale * evaluate_basis(k, s, BasisKind::Sin);
            }
        }
        pm
    }
}

fn mesh_points(grid: GridSpec) -> impl Iterator<Item = (usize, usize)> {
    let n2 = grid.n2();
    (0..grid.len()).map(move |p| (p / n2, p % n2))
}

/// Real coefficient vector packed as `[cos over singles | cos over pairs |
/// sin over pairs]` against a shared [`WavenumberSets`].
#[derive(Clone, Debug)]
pub struct SpectralCoeffVector {
    sets: Arc<WavenumberSets>,
    coeffs: Array1<f64>,
}

impl SpectralCoeffVector {
    pub fn new(sets: Arc<WavenumberSets>, coeffs: Array1<f64>) -> Result<Self> {
        if coeffs.len() != sets.dim() {
            return Err(AdvectaError::Data(format!(
                "coefficient vector length {} does not match packing dimension {}",
                coeffs.len(),
                sets.dim()
            )));
        }
        Ok(SpectralCoeffVector { sets, coeffs })
    }

    pub fn zeros(sets: Arc<WavenumberSets>) -> Self {
        let coeffs = Array1::zeros(sets.dim());
        SpectralCoeffVector { sets, coeffs }
    }

    pub fn sets(&self) -> &Arc<WavenumberSets> {
        &self.sets
    }

    pub fn coeffs(&self) -> &Array1<f64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array1<f64> {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Array1<f64> {
        self.coeffs
    }
}

/// Pack a symmetric complex table into the real coefficient vector:
/// cos part `Re X(k)`, sin part `-Im X(k)`.
pub fn pack(table: &SpectrumTable, sets: &Arc<WavenumberSets>) -> Result<SpectralCoeffVector> {
    if table.grid() != sets.grid() {
        return Err(AdvectaError::Data("table grid does not match wavenumber sets".into()));
    }
    table.check_symmetry()?;
    let mut v = SpectralCoeffVector::zeros(sets.clone());
    for &k in sets.singles() {
        v.coeffs[sets.cos_index(k).unwrap()] = table.get(k).re;
    }
    for &k in sets.pairs() {
        let x = table.get(k);
        v.coeffs[sets.cos_index(k).unwrap()] = x.re;
        v.coeffs[sets.sin_index(k).unwrap()] = -x.im;
    }
    Ok(v)
}

/// Expand a packed vector back into a full symmetric complex table.
///
/// Modes outside the representation (dropped frequencies, capped modes)
/// come back as zero; the self-conjugate modes come back purely real.
pub fn unpack(vec: &SpectralCoeffVector) -> SpectrumTable {
    let sets = vec.sets();
    let mut table = SpectrumTable::zeros(sets.grid());
    for &k in sets.singles() {
        let re = vec.coeffs[sets.cos_index(k).unwrap()];
        table.set(k, Complex64::new(re, 0.0));
    }
    for &k in sets.pairs() {
        let re = vec.coeffs[sets.cos_index(k).unwrap()];
        let im = -vec.coeffs[sets.sin_index(k).unwrap()];
        table.set(k, Complex64::new(re, im));
        table.set((-k.0, -k.1), Complex64::new(re, -im));
    }
    table
}

/// `unpack` followed by the inverse DFT. Cannot fail: the synthesized table
/// is symmetric by construction.
pub fn reconstruct(vec: &SpectralCoeffVector) -> RealGridField {
    idft2(&unpack(vec)).expect("unpacked table is symmetric by construction")
}

/// Pack the DFT of a field directly against `sets`.
pub fn analyze(field: &RealGridField, sets: &Arc<WavenumberSets>) -> Result<SpectralCoeffVector> {
    pack(&dft2(field), sets)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BasisKind {
    /// `cos(2π (s1 k1 + s2 k2))`
    Cos,
    /// `sin(2π (s1 k1 + s2 k2))`
    Sin,
}

/// Evaluate one Fourier basis function at a point of the unit square.
pub fn evaluate_basis(k: Wavenumber, s: (f64, f64), kind: BasisKind) -> f64 {
    let arg = 2.0 * PI * (s.0 * k.0 as f64 + s.1 * k.1 as f64);
    match kind {
        BasisKind::Cos => arg.cos(),
        BasisKind::Sin => arg.sin(),
    }
}

fn mode_passes(k: Wavenumber, cutoff: f64) -> bool {
    let (a1, a2) = WavenumberSets::angular(k);
    a1.abs() <= cutoff && a2.abs() <= cutoff
}

/// Zero every coefficient whose angular wavenumber `|2π ki|` exceeds
/// `cutoff` (radians per unit distance) on either axis. Idempotent.
pub fn lowpass_field(field: &RealGridField, cutoff: f64) -> Result<RealGridField> {
    if cutoff < 0.0 {
        return Err(AdvectaError::Config("low-pass cutoff must be nonnegative".into()));
    }
    let mut table = dft2(field);
    let (n1, n2) = (table.grid().n1(), table.grid().n2());
    for m1 in 0..n1 {
        for m2 in 0..n2 {
            let k = (principal(m1, n1), principal(m2, n2));
            if !mode_passes(k, cutoff) {
                table.data[[m1, m2]] = Complex64::new(0.0, 0.0);
            }
        }
    }
    idft2(&table)
}

/// Packed-vector counterpart of [`lowpass_field`].
pub fn lowpass_vector(vec: &SpectralCoeffVector, cutoff: f64) -> Result<SpectralCoeffVector> {
    if cutoff < 0.0 {
        return Err(AdvectaError::Config("low-pass cutoff must be nonnegative".into()));
    }
    let sets = vec.sets().clone();
    let mut out = vec.clone();
    for &k in sets.singles().iter().chain(sets.pairs()) {
        if !mode_passes(k, cutoff) {
            out.coeffs[sets.cos_index(k).unwrap()] = 0.0;
            if let Some(i) = sets.sin_index(k) {
                out.coeffs[i] = 0.0;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_field(grid: GridSpec, seed: u64) -> RealGridField {
        let mut rng = StdRng::seed_from_u64(seed);
        RealGridField::from_fn(grid, |_, _| rng.random_range(-1.0..1.0))
    }

    /// Direct O(N^2) DFT sum, the independent oracle for `dft2`.
    fn dft2_direct(field: &RealGridField) -> SpectrumTable {
        let grid = field.grid();
        let (n1, n2) = (grid.n1() as i64, grid.n2() as i64);
        let mut table = SpectrumTable::zeros(grid);
        for k1 in (-n1 / 2 + 1)..=(n1 / 2) {
            for k2 in (-n2 / 2 + 1)..=(n2 / 2) {
                let mut acc = Complex64::new(0.0, 0.0);
                for i1 in 0..grid.n1() {
                    for i2 in 0..grid.n2() {
                        let arg = -2.0 * PI
                            * (i1 as f64 * k1 as f64 / n1 as f64
                                + i2 as f64 * k2 as f64 / n2 as f64);
                        acc += field.values()[[i1, i2]] * Complex64::new(arg.cos(), arg.sin());
                    }
                }
                table.set((k1, k2), acc / grid.len() as f64);
            }
        }
        table
    }

    #[test]
    fn dft_of_constant_is_dc_only() {
        let grid = GridSpec::new(6, 4).unwrap();
        let table = dft2(&RealGridField::constant(grid, 3.25));
        assert_abs_diff_eq!(table.get((0, 0)).re, 3.25, epsilon = 1e-12);
        for (k, x) in table.iter() {
            if k != (0, 0) {
                assert!(x.norm() < 1e-12, "leak at {k:?}: {x}");
            }
        }
    }

    #[test]
    fn dft_of_single_cosine_mode() {
        let grid = GridSpec::new(8, 8).unwrap();
        let field = RealGridField::from_fn(grid, |s1, _| (2.0 * PI * s1).cos());
        let table = dft2(&field);
        assert_abs_diff_eq!(table.get((1, 0)).re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(table.get((-1, 0)).re, 0.5, epsilon = 1e-12);
        assert!(table.get((1, 0)).im.abs() < 1e-12);
        for (k, x) in table.iter() {
            if k != (1, 0) && k != (-1, 0) {
                assert!(x.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dft_matches_direct_sum_oracle_20x20() {
        let grid = GridSpec::new(20, 20).unwrap();
        let field = random_field(grid, 7);
        let fast = dft2(&field);
        let slow = dft2_direct(&field);
        let mut worst = 0.0f64;
        for (k, x) in fast.iter() {
            worst = worst.max((x - slow.get(k)).norm());
        }
        assert!(worst < 1e-12, "fast vs direct DFT deviation {worst}");
        assert!(fast.symmetry_residual() < 1e-12);
    }

    #[test]
    fn round_trip_and_parseval() {
        let grid = GridSpec::new(20, 14).unwrap();
        let field = random_field(grid, 3);
        let table = dft2(&field);
        let back = idft2(&table).unwrap();
        assert!(field.max_abs_diff(&back) < 1e-10);

        let spatial: f64 = field.values().iter().map(|v| v * v).sum::<f64>() / grid.len() as f64;
        let spectral: f64 = table.iter().map(|(_, x)| x.norm_sqr()).sum();
        assert_abs_diff_eq!(spatial, spectral, epsilon = 1e-9 * spatial.abs().max(1.0));
    }

    #[test]
    fn idft_rejects_asymmetric_table() {
        let grid = GridSpec::new(4, 4).unwrap();
        let mut table = SpectrumTable::zeros(grid);
        table.set((1, 0), Complex64::new(1.0, 0.5));
        // conjugate partner left at zero -> asymmetric
        assert!(matches!(idft2(&table), Err(AdvectaError::InvalidSpectrum(_))));
    }

    #[test]
    fn idft_of_dc_only_is_constant() {
        let grid = GridSpec::new(6, 6).unwrap();
        let mut table = SpectrumTable::zeros(grid);
        table.set((0, 0), Complex64::new(2.5, 0.0));
        let field = idft2(&table).unwrap();
        assert!(field.max_abs_diff(&RealGridField::constant(grid, 2.5)) < 1e-12);
    }

    #[test]
    fn wavenumber_set_dimensions_80x80() {
        let grid = GridSpec::new(80, 80).unwrap();
        let full = WavenumberSets::build(grid, PackingForm::Full);
        let reduced = WavenumberSets::build(grid, PackingForm::Reduced);
        assert_eq!(full.dim(), 6400);
        assert_eq!(reduced.dim(), 6241);
    }

    #[test]
    fn wavenumber_sets_4x4_by_exhaustive_enumeration() {
        let grid = GridSpec::new(4, 4).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        assert_eq!(sets.omega1(), &[(0, 0), (0, 2), (2, 0), (2, 2)]);
        assert_eq!(sets.omega2().len(), 6);
        assert_eq!(4 + 2 * sets.omega2().len(), 16);
        // Exactly one representative of each conjugate pair on the 4x4 lattice.
        let mut covered = std::collections::HashSet::new();
        for &(k1, k2) in sets.omega2() {
            let conj = (fold(-k1, 4), fold(-k2, 4));
            let this = (fold(k1, 4), fold(k2, 4));
            assert!(covered.insert(this), "duplicate {:?}", (k1, k2));
            assert!(covered.insert(conj), "conjugate of {:?} already present", (k1, k2));
        }
        assert_eq!(covered.len(), 12);
    }

    #[test]
    fn dimension_identities_all_even_grids_up_to_64() {
        for n1 in (2..=64).step_by(2) {
            for n2 in [2usize, 6, 16, 64] {
                let grid = GridSpec::new(n1, n2).unwrap();
                let full = WavenumberSets::build(grid, PackingForm::Full);
                let reduced = WavenumberSets::build(grid, PackingForm::Reduced);
                assert_eq!(full.dim(), n1 * n2, "full dim at {n1}x{n2}");
                assert_eq!(reduced.dim(), n1 * n2 - n1 - n2 + 1, "reduced dim at {n1}x{n2}");
            }
        }
    }

    #[test]
    fn no_conjugate_duplicates_within_pairs() {
        for (n1, n2) in [(4, 4), (8, 6), (12, 20)] {
            let grid = GridSpec::new(n1, n2).unwrap();
            for form in [PackingForm::Full, PackingForm::Reduced] {
                let sets = WavenumberSets::build(grid, form);
                for &(k1, k2) in sets.pairs() {
                    let conj = (
                        principal(fold(-k1, n1), n1),
                        principal(fold(-k2, n2), n2),
                    );
                    assert!(
                        sets.cos_index(conj).is_none(),
                        "{:?} and its conjugate {:?} both packed",
                        (k1, k2),
                        conj
                    );
                }
            }
        }
    }

    #[test]
    fn pack_dc_only() {
        let grid = GridSpec::new(4, 4).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        let mut table = SpectrumTable::zeros(grid);
        table.set((0, 0), Complex64::new(3.0, 0.0));
        let v = pack(&table, &sets).unwrap();
        assert_eq!(v.coeffs()[0], 3.0);
        assert!(v.coeffs().iter().skip(1).all(|&c| c == 0.0));
    }

    #[test]
    fn pack_single_mode_reconstructs_cosine() {
        let grid = GridSpec::new(8, 8).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let mut table = SpectrumTable::zeros(grid);
        table.set((1, 0), Complex64::new(0.5, 0.0));
        table.set((-1, 0), Complex64::new(0.5, 0.0));
        let v = pack(&table, &sets).unwrap();
        assert_abs_diff_eq!(v.coeffs()[sets.cos_index((1, 0)).unwrap()], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v.coeffs()[sets.sin_index((1, 0)).unwrap()], 0.0, epsilon = 1e-15);
        let field = reconstruct(&v);
        let expect = RealGridField::from_fn(grid, |s1, _| (2.0 * PI * s1).cos());
        assert!(field.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn sign_convention_sin_coefficient() {
        // x = sin(2π s1) has X(1,0) = -i/2, so the packed sin part is +1/2.
        let grid = GridSpec::new(8, 8).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let field = RealGridField::from_fn(grid, |s1, _| (2.0 * PI * s1).sin());
        let v = analyze(&field, &sets).unwrap();
        assert_abs_diff_eq!(v.coeffs()[sets.sin_index((1, 0)).unwrap()], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn evaluate_basis_reference_points() {
        assert_eq!(evaluate_basis((0, 0), (0.37, 0.91), BasisKind::Cos), 1.0);
        assert_eq!(evaluate_basis((0, 0), (0.37, 0.91), BasisKind::Sin), 0.0);
        assert_abs_diff_eq!(
            evaluate_basis((1, 0), (0.25, 0.0), BasisKind::Cos),
            0.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            evaluate_basis((1, 0), (0.25, 0.0), BasisKind::Sin),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn packing_matrix_is_left_inverse_of_reconstruction() {
        let grid = GridSpec::new(6, 4).unwrap();
        for form in [PackingForm::Full, PackingForm::Reduced] {
            let sets = WavenumberSets::build(grid, form);
            let r = sets.reconstruction_matrix();
            let p = sets.packing_matrix();
            let prod = p.dot(&r);
            for i in 0..sets.dim() {
                for j in 0..sets.dim() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(prod[[i, j]], expect, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn lowpass_cutoff_examples() {
        let grid = GridSpec::new(80, 80).unwrap();
        // 2π·4 ≈ 25.1 ≤ 30 < 2π·5 ≈ 31.4, so |k| ≤ 4 survives a 30 rad/unit cutoff.
        assert!(mode_passes((4, 4), 30.0));
        assert!(!mode_passes((5, 0), 30.0));
        assert!(!mode_passes((0, 5), 30.0));

        let field = random_field(grid, 11);
        let identity = lowpass_field(&field, PI * 80.0).unwrap();
        assert!(field.max_abs_diff(&identity) < 1e-10);

        let dc = lowpass_field(&field, 0.0).unwrap();
        assert!(dc.max_abs_diff(&RealGridField::constant(grid, field.mean())) < 1e-10);
    }

    #[test]
    fn lowpass_idempotent_and_commutes_with_packing() {
        let grid = GridSpec::new(12, 12).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let field = random_field(grid, 5);
        let cutoff = 20.0;
        let once = lowpass_field(&field, cutoff).unwrap();
        let twice = lowpass_field(&once, cutoff).unwrap();
        assert!(once.max_abs_diff(&twice) < 1e-11);

        let via_field = analyze(&once, &sets).unwrap();
        let via_vec = lowpass_vector(&analyze(&field, &sets).unwrap(), cutoff).unwrap();
        let diff = (via_field.coeffs() - via_vec.coeffs())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn prop_round_trip(seed in 0u64..1000) {
            let grid = GridSpec::new(12, 10).unwrap();
            let field = random_field(grid, seed);
            let back = idft2(&dft2(&field)).unwrap();
            prop_assert!(field.max_abs_diff(&back) < 1e-10);
        }

        #[test]
        fn prop_pack_unpack_identity(seed in 0u64..1000, reduced in proptest::bool::ANY) {
            let grid = GridSpec::new(10, 8).unwrap();
            let form = if reduced { PackingForm::Reduced } else { PackingForm::Full };
            let sets = WavenumberSets::build(grid, form);
            let field = random_field(grid, seed);
            let v = analyze(&field, &sets).unwrap();
            let again = pack(&unpack(&v), &sets).unwrap();
            let diff = (v.coeffs() - again.coeffs()).iter().fold(0.0f64, |m, x| m.max(x.abs()));
            prop_assert!(diff < 1e-12);
        }
    }
}
