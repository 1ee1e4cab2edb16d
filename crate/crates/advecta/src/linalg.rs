//! Dense linear-algebra helpers shared across the crate: scaling-and-squaring
//! matrix exponential, the block-matrix construction for the process-noise
//! integral, and covariance hygiene (symmetrization, PSD square roots).

use ndarray::{s, Array1, Array2};
use ndarray_linalg::{Eigh, Solve, UPLO};

use crate::{AdvectaError, Result};

/// Degree-13 Padé coefficients for the matrix exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// 1-norm threshold below which the degree-13 approximant is accurate
/// without scaling.
const THETA13: f64 = 5.371920351148152;

fn one_norm(a: &Array2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for col in a.columns() {
        worst = worst.max(col.iter().map(|v| v.abs()).sum());
    }
    worst
}

/// Matrix exponential `exp(A)` by scaling and squaring with the degree-13
/// Padé approximant.
pub fn expm(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(AdvectaError::Numeric("expm needs a square matrix".into()));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(AdvectaError::Numeric("expm input has non-finite entries".into()));
    }
    let norm = one_norm(a);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as u32
    } else {
        0
    };
    let a1 = a / 2.0f64.powi(squarings as i32);

    let a2 = a1.dot(&a1);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);
    let eye = Array2::<f64>::eye(n);

    // u = A (a6 (b13 a6 + b11 a4 + b9 a2) + b7 a6 + b5 a4 + b3 a2 + b1 I)
    let w1 = &a6 * PADE13[13] + &a4 * PADE13[11] + &a2 * PADE13[9];
    let w2 = &a6 * PADE13[7] + &a4 * PADE13[5] + &a2 * PADE13[3] + &eye * PADE13[1];
    let u = a1.dot(&(a6.dot(&w1) + w2));
    // v = a6 (b12 a6 + b10 a4 + b8 a2) + b6 a6 + b4 a4 + b2 a2 + b0 I
    let z1 = &a6 * PADE13[12] + &a4 * PADE13[10] + &a2 * PADE13[8];
    let v = a6.dot(&z1) + &a6 * PADE13[6] + &a4 * PADE13[4] + &a2 * PADE13[2] + &eye * PADE13[0];

    let lhs = &v - &u;
    let rhs = &v + &u;
    let mut x = solve_matrix(&lhs, &rhs)?;
    for _ in 0..squarings {
        x = x.dot(&x);
    }
    Ok(x)
}

/// Solve `A X = B` column-by-column via LU.
pub fn solve_matrix(a: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    use ndarray_linalg::Factorize;
    let f = a
        .factorize()
        .map_err(|e| AdvectaError::Numeric(format!("LU factorization failed: {e}")))?;
    let mut x = Array2::zeros(b.dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        let sol = f
            .solve(&col.to_owned())
            .map_err(|e| AdvectaError::Numeric(format!("linear solve failed: {e}")))?;
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

/// `∫_0^dt exp(G u) diag(h) exp(G' u) du` by exponentiating the block matrix
/// `[[-G, H], [0, G']] dt` and forming `F3' F2`.
///
/// The `-G` block makes the plain construction overflow once `|G| dt` is
/// large, so the interval is split into `2^j` pieces with `|G| dt / 2^j`
/// moderate and the exact composition `Q(2δ) = Φ Q(δ) Φ' + Q(δ)`,
/// `Φ = exp(G δ)`, doubles it back up.
pub fn noise_integral(g: &Array2<f64>, h: &Array1<f64>, dt: f64) -> Result<Array2<f64>> {
    let k = g.nrows();
    if h.len() != k {
        return Err(AdvectaError::Numeric("noise density length does not match G".into()));
    }
    if dt == 0.0 {
        return Ok(Array2::zeros((k, k)));
    }
    const MAX_BLOCK_NORM: f64 = 4.0;
    let norm = one_norm(g) * dt;
    let splits = if norm > MAX_BLOCK_NORM {
        (norm / MAX_BLOCK_NORM).log2().ceil() as u32
    } else {
        0
    };
    let delta = dt / 2.0f64.powi(splits as i32);

    let mut block = Array2::zeros((2 * k, 2 * k));
    block.slice_mut(s![..k, ..k]).assign(&(g * (-delta)));
    for i in 0..k {
        block[[i, k + i]] = h[i] * delta;
    }
    block.slice_mut(s![k.., k..]).assign(&(g.t().to_owned() * delta));
    let e = expm(&block)?;
    let f2 = e.slice(s![..k, k..]);
    let f3 = e.slice(s![k.., k..]);
    let mut q = f3.t().dot(&f2);

    if splits > 0 {
        let mut phi = expm(&(g * delta))?;
        for _ in 0..splits {
            q = phi.dot(&q).dot(&phi.t()) + &q;
            phi = phi.dot(&phi);
        }
    }
    Ok(symmetrize(&q))
}

/// `(Q + Q') / 2`.
pub fn symmetrize(q: &Array2<f64>) -> Array2<f64> {
    (q + &q.t()) * 0.5
}

/// Symmetric-eigendecomposition square root with small negative eigenvalues
/// clipped at `-1e-10 * trace`; returns `L` with `L L' ≈ Q`.
pub fn psd_sqrt(q: &Array2<f64>) -> Result<Array2<f64>> {
    let qs = symmetrize(q);
    let (vals, vecs) = qs
        .eigh(UPLO::Lower)
        .map_err(|e| AdvectaError::Numeric(format!("eigendecomposition failed: {e}")))?;
    let trace: f64 = vals.iter().sum::<f64>().abs().max(f64::MIN_POSITIVE);
    let floor = -1e-10 * trace;
    let mut l = vecs;
    for (j, &lambda) in vals.iter().enumerate() {
        if lambda < floor {
            return Err(AdvectaError::Numeric(format!(
                "matrix is not PSD: eigenvalue {lambda:.3e} below {floor:.3e}"
            )));
        }
        let scale = lambda.max(0.0).sqrt();
        l.column_mut(j).mapv_inplace(|v| v * scale);
    }
    Ok(l)
}

/// Smallest eigenvalue of the symmetrized matrix.
pub fn min_eigenvalue(q: &Array2<f64>) -> Result<f64> {
    let qs = symmetrize(q);
    let (vals, _) = qs
        .eigh(UPLO::Lower)
        .map_err(|e| AdvectaError::Numeric(format!("eigendecomposition failed: {e}")))?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}
