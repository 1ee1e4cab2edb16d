//! Augmented dynamical state-space model and the spectral-domain Kalman
//! filter.
//!
//! The state is `θ = (α, β)`: packed field coefficients plus the source–sink
//! coefficients, evolving as
//!
//! ```text
//! θ(t) = G̃ θ(t-Δ) + W(t),   G̃ = [[exp(GΔ), Δ I], [0, ρ I]]
//! Ỹ(t) = [I 0] θ(t) + Ṽ(t)
//! ```
//!
//! with `W ~ N(0, blockdiag(∫ exp(Gu) H exp(G'u) du, τ_β² I))` and
//! `Ṽ ~ N(0, τ_Ṽ² I)`. Observations enter as packed DFT coefficients of the
//! gridded frames, so the observation map is a coordinate projection and
//! the filter runs entirely in the spectral space.

use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use ndarray_linalg::cholesky::{CholeskyFactorized, FactorizeC, UPLO};
use ndarray_linalg::{DeterminantC, SolveC};

use crate::galerkin::{process_noise_cov, NoiseSpec, TransitionGenerator};
use crate::grid::{GridSpec, RealGridField};
use crate::linalg::symmetrize;
use crate::spectral::{analyze, reconstruct, SpectralCoeffVector, WavenumberSets};
use crate::{AdvectaError, Result};

const LOG_2PI: f64 = 1.8378770664093453;

/// Gaussian filtering belief `N(mean, cov)` over the augmented state.
#[derive(Clone, Debug)]
pub struct KalmanBelief {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

impl KalmanBelief {
    pub fn new(mean: Array1<f64>, cov: Array2<f64>) -> Result<Self> {
        if cov.dim() != (mean.len(), mean.len()) {
            return Err(AdvectaError::Data("belief covariance shape mismatch".into()));
        }
        Ok(KalmanBelief { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Scalar parameters of the augmented model.
#[derive(Clone, Copy, Debug)]
pub struct DstmParams {
    pub delta_t: f64,
    /// AR(1) coefficient of the source–sink block, `|rho| <= 1`.
    pub rho: f64,
    /// Source–sink innovation standard deviation.
    pub tau_beta: f64,
    /// Spectral observation noise standard deviation.
    pub tau_obs: f64,
}

/// The augmented model with its cached transition and noise matrices.
#[derive(Clone, Debug)]
pub struct DstmModel {
    generator: Arc<TransitionGenerator>,
    noise: NoiseSpec,
    params: DstmParams,
    exp_g: Array2<f64>,
    q_int: Array2<f64>,
    g_tilde: Array2<f64>,
    sigma_w: Array2<f64>,
}

impl DstmModel {
    pub fn new(
        generator: Arc<TransitionGenerator>,
        noise: NoiseSpec,
        params: DstmParams,
    ) -> Result<Self> {
        let k = generator.dim();
        if noise.h.len() != k || noise.h0.len() != k {
            return Err(AdvectaError::Config(
                "noise density length does not match generator dimension".into(),
            ));
        }
        if params.delta_t <= 0.0 {
            return Err(AdvectaError::Config("time step must be positive".into()));
        }
        if params.rho.abs() > 1.0 {
            return Err(AdvectaError::Config("source-sink AR coefficient must satisfy |rho| <= 1".into()));
        }
        if params.tau_beta < 0.0 || params.tau_obs < 0.0 {
            return Err(AdvectaError::Config("noise standard deviations must be nonnegative".into()));
        }

        let exp_g = generator.exponential(params.delta_t)?;
        let q_int = process_noise_cov(&generator, &noise, params.delta_t)?;

        let mut g_tilde = Array2::zeros((2 * k, 2 * k));
        g_tilde.slice_mut(s![..k, ..k]).assign(&exp_g);
        for i in 0..k {
            g_tilde[[i, k + i]] = params.delta_t;
            g_tilde[[k + i, k + i]] = params.rho;
        }
        let mut sigma_w = Array2::zeros((2 * k, 2 * k));
        sigma_w.slice_mut(s![..k, ..k]).assign(&q_int);
        for i in 0..k {
            sigma_w[[k + i, k + i]] = params.tau_beta * params.tau_beta;
        }

        Ok(DstmModel {
            generator,
            noise,
            params,
            exp_g,
            q_int,
            g_tilde,
            sigma_w,
        })
    }

    /// Rebuild with new noise and scalar parameters, reusing the cached
    /// matrix exponential (the generator and time step must be unchanged).
    pub fn with_scalars(&self, noise: NoiseSpec, params: DstmParams) -> Result<Self> {
        if params.delta_t != self.params.delta_t {
            return DstmModel::new(self.generator.clone(), noise, params);
        }
        let k = self.generator.dim();
        if noise.h.len() != k || noise.h0.len() != k {
            return Err(AdvectaError::Config(
                "noise density length does not match generator dimension".into(),
            ));
        }
        if params.rho.abs() > 1.0 || params.tau_beta < 0.0 || params.tau_obs < 0.0 {
            return Err(AdvectaError::Config("scalar parameters out of range".into()));
        }
        let q_int = crate::linalg::noise_integral(self.generator.matrix(), &noise.h, params.delta_t)?;
        let mut g_tilde = self.g_tilde.clone();
        for i in 0..k {
            g_tilde[[k + i, k + i]] = params.rho;
        }
        let mut sigma_w = Array2::zeros((2 * k, 2 * k));
        sigma_w.slice_mut(s![..k, ..k]).assign(&q_int);
        for i in 0..k {
            sigma_w[[k + i, k + i]] = params.tau_beta * params.tau_beta;
        }
        Ok(DstmModel {
            generator: self.generator.clone(),
            noise,
            params,
            exp_g: self.exp_g.clone(),
            q_int,
            g_tilde,
            sigma_w,
        })
    }

    pub fn generator(&self) -> &Arc<TransitionGenerator> {
        &self.generator
    }

    pub fn sets(&self) -> &Arc<WavenumberSets> {
        self.generator.sets()
    }

    pub fn params(&self) -> DstmParams {
        self.params
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Coefficient dimension K (the observation dimension).
    pub fn state_dim(&self) -> usize {
        self.generator.dim()
    }

    /// Augmented dimension 2K.
    pub fn aug_dim(&self) -> usize {
        2 * self.generator.dim()
    }

    pub fn exp_g(&self) -> &Array2<f64> {
        &self.exp_g
    }

    /// Per-step process noise of the coefficient block.
    pub fn process_noise(&self) -> &Array2<f64> {
        &self.q_int
    }

    pub fn g_tilde(&self) -> &Array2<f64> {
        &self.g_tilde
    }

    pub fn sigma_w(&self) -> &Array2<f64> {
        &self.sigma_w
    }

    /// Default initial belief: coefficient mean from the first observed
    /// frame, zero source–sink mean, covariance `blockdiag(H0, τ_β² I)`.
    pub fn default_init(&self, first_frame: &RealGridField) -> Result<KalmanBelief> {
        let k = self.state_dim();
        let packed = analyze(first_frame, self.sets())?;
        let mut mean = Array1::zeros(2 * k);
        mean.slice_mut(s![..k]).assign(packed.coeffs());
        let mut cov = Array2::zeros((2 * k, 2 * k));
        for i in 0..k {
            cov[[i, i]] = self.noise.h0[i];
            cov[[k + i, k + i]] = self.params.tau_beta * self.params.tau_beta;
        }
        KalmanBelief::new(mean, cov)
    }

    /// One-step-ahead prediction: `m ← G̃ m`, `Q ← G̃ Q G̃' + Σ_W`, exploiting
    /// the block structure of `G̃`.
    pub fn predict(&self, belief: &KalmanBelief) -> Result<KalmanBelief> {
        let k = self.state_dim();
        if belief.dim() != 2 * k {
            return Err(AdvectaError::Data("belief dimension does not match model".into()));
        }
        let dt = self.params.delta_t;
        let rho = self.params.rho;
        let e = &self.exp_g;

        let m1 = belief.mean.slice(s![..k]);
        let m2 = belief.mean.slice(s![k..]);
        let mut mean = Array1::zeros(2 * k);
        {
            let next1 = e.dot(&m1) + &(m2.to_owned() * dt);
            mean.slice_mut(s![..k]).assign(&next1);
            mean.slice_mut(s![k..]).assign(&(m2.to_owned() * rho));
        }

        let q11 = belief.cov.slice(s![..k, ..k]);
        let q12 = belief.cov.slice(s![..k, k..]);
        let q21 = belief.cov.slice(s![k.., ..k]);
        let q22 = belief.cov.slice(s![k.., k..]);

        // A = G̃ Q
        let a11 = e.dot(&q11) + &(q21.to_owned() * dt);
        let a12 = e.dot(&q12) + &(q22.to_owned() * dt);
        let a21 = q21.to_owned() * rho;
        let a22 = q22.to_owned() * rho;

        // Q' = A G̃' + Σ_W
        let mut cov = Array2::zeros((2 * k, 2 * k));
        cov.slice_mut(s![..k, ..k])
            .assign(&(a11.dot(&e.t()) + &(a12.clone() * dt)));
        cov.slice_mut(s![..k, k..]).assign(&(a12 * rho));
        cov.slice_mut(s![k.., ..k])
            .assign(&(a21.dot(&e.t()) + &(a22.clone() * dt)));
        cov.slice_mut(s![k.., k..]).assign(&(a22 * rho));
        cov += &self.sigma_w;
        let cov = symmetrize(&cov);

        if mean.iter().any(|v| !v.is_finite()) || cov.iter().any(|v| !v.is_finite()) {
            return Err(AdvectaError::Numeric("prediction produced non-finite values".into()));
        }
        KalmanBelief::new(mean, cov)
    }

    /// Measurement update with the packed spectral observation; Joseph-form
    /// covariance update keeps the result PSD.
    pub fn update(&self, belief: &KalmanBelief, obs: &Array1<f64>) -> Result<UpdateOutcome> {
        let k = self.state_dim();
        if obs.len() != k {
            return Err(AdvectaError::Data(format!(
                "observation length {} does not match K = {k}",
                obs.len()
            )));
        }
        let tau2 = self.params.tau_obs * self.params.tau_obs;

        let mut innov_cov = belief.cov.slice(s![..k, ..k]).to_owned();
        for i in 0..k {
            innov_cov[[i, i]] += tau2;
        }
        let factor: CholeskyFactorized<_> =
            innov_cov.factorizec(UPLO::Lower).map_err(|e| {
                AdvectaError::Numeric(format!(
                    "singular innovation covariance (tau_obs = {}, K = {k}): {e}",
                    self.params.tau_obs
                ))
            })?;

        let innovation = obs - &belief.mean.slice(s![..k]);

        // gain W = Q[:, :K] S^{-1}; computed as (S^{-1} Q[: K, :])'
        let cross = belief.cov.slice(s![.., ..k]).to_owned();
        let mut sinv_qt = Array2::zeros((k, 2 * k));
        for (j, row) in cross.rows().into_iter().enumerate() {
            let sol = factor
                .solvec(&row.to_owned())
                .map_err(|e| AdvectaError::Numeric(format!("innovation solve failed: {e}")))?;
            sinv_qt.column_mut(j).assign(&sol);
        }
        let gain = sinv_qt.t().to_owned(); // 2K x K

        let mean = &belief.mean + &gain.dot(&innovation);

        // Joseph form: (I - W F) Q (I - W F)' + τ² W W'
        let a = &belief.cov - &gain.dot(&belief.cov.slice(s![..k, ..]));
        let mut cov = &a - &a.slice(s![.., ..k]).dot(&gain.t());
        if tau2 > 0.0 {
            cov = cov + gain.dot(&gain.t()) * tau2;
        }
        let cov = symmetrize(&cov);

        let sinv_innov = factor
            .solvec(&innovation)
            .map_err(|e| AdvectaError::Numeric(format!("innovation solve failed: {e}")))?;
        let maha = innovation.dot(&sinv_innov);
        let ln_det = factor.ln_detc();
        let loglik_term = -0.5 * (k as f64 * LOG_2PI + ln_det + maha);

        // standardized innovation z = L^{-1} ν from S = L L'
        let l = factor.factor.clone();
        let standardized = solve_lower_triangular(&l, &innovation)?;

        if mean.iter().any(|v| !v.is_finite()) || !loglik_term.is_finite() {
            return Err(AdvectaError::Numeric("update produced non-finite values".into()));
        }
        Ok(UpdateOutcome {
            belief: KalmanBelief::new(mean, cov)?,
            innovation,
            standardized,
            loglik_term,
        })
    }

    /// Filter a uniformly spaced frame sequence: alternate predict/update,
    /// collecting beliefs, innovations and the accumulated log-likelihood.
    pub fn filter_sequence(
        &self,
        obs: &ObservationSequence,
        init: &KalmanBelief,
    ) -> Result<FilterRun> {
        if (obs.delta_t() - self.params.delta_t).abs() > 1e-9 * self.params.delta_t.abs() {
            return Err(AdvectaError::Data(format!(
                "observation spacing {} does not match model step {}",
                obs.delta_t(),
                self.params.delta_t
            )));
        }
        if obs.grid() != self.sets().grid() {
            return Err(AdvectaError::Data("observation grid does not match model".into()));
        }
        let packed = obs.spectral_for(self.sets())?;
        let mut run = FilterRun {
            predicted: Vec::with_capacity(packed.len()),
            filtered: Vec::with_capacity(packed.len()),
            innovations: Vec::with_capacity(packed.len()),
            standardized: Vec::with_capacity(packed.len()),
            log_likelihood: 0.0,
        };
        let mut belief = init.clone();
        for y in &packed {
            let pred = self.predict(&belief)?;
            let out = self.update(&pred, y)?;
            run.log_likelihood += out.loglik_term;
            run.predicted.push(pred);
            run.innovations.push(out.innovation);
            run.standardized.push(out.standardized);
            belief = out.belief.clone();
            run.filtered.push(out.belief);
        }
        Ok(run)
    }

    /// Sum of one-step-ahead Gaussian innovation log-densities, including
    /// the `-(K/2) log 2π` constants.
    pub fn log_likelihood(&self, obs: &ObservationSequence, init: &KalmanBelief) -> Result<f64> {
        Ok(self.filter_sequence(obs, init)?.log_likelihood)
    }

    /// Iterate the predictive recursion `horizon` steps without data; each
    /// step yields the reconstructed mean field and the per-pixel variance
    /// of the coefficient block mapped through the basis.
    pub fn nowcast(
        &self,
        belief: &KalmanBelief,
        horizon: usize,
    ) -> Result<Vec<(RealGridField, RealGridField)>> {
        if horizon == 0 {
            return Err(AdvectaError::Data("nowcast horizon must be at least 1".into()));
        }
        let k = self.state_dim();
        let sets = self.sets();
        let r = sets.reconstruction_matrix();
        let grid = sets.grid();
        let mut out = Vec::with_capacity(horizon);
        let mut current = belief.clone();
        for _ in 0..horizon {
            current = self.predict(&current)?;
            let alpha = current.mean.slice(s![..k]).to_owned();
            let mean_field = reconstruct(&SpectralCoeffVector::new(sets.clone(), alpha)?);
            let q_aa = current.cov.slice(s![..k, ..k]);
            let rq = r.dot(&q_aa);
            let mut var = Array1::zeros(grid.len());
            for (p, (row_rq, row_r)) in rq.rows().into_iter().zip(r.rows()).enumerate() {
                var[p] = row_rq.dot(&row_r);
            }
            let var_field = RealGridField::new(
                grid,
                Array2::from_shape_vec((grid.n1(), grid.n2()), var.to_vec())
                    .expect("variance vector has mesh length"),
            )?;
            out.push((mean_field, var_field));
        }
        Ok(out)
    }

    /// Reconstruct the source–sink field from the β block of a belief.
    pub fn source_sink_map(&self, belief: &KalmanBelief) -> Result<RealGridField> {
        let k = self.state_dim();
        if belief.dim() != 2 * k {
            return Err(AdvectaError::Data("belief dimension does not match model".into()));
        }
        let beta = belief.mean.slice(s![k..]).to_owned();
        Ok(reconstruct(&SpectralCoeffVector::new(self.sets().clone(), beta)?))
    }
}

fn solve_lower_triangular(l: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let n = b.len();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[[i, j]] * x[j];
        }
        let d = l[[i, i]];
        if d == 0.0 {
            return Err(AdvectaError::Numeric("triangular solve hit zero pivot".into()));
        }
        x[i] = acc / d;
    }
    Ok(x)
}

/// Result of one measurement update.
#[derive(Clone, Debug)]
pub struct UpdateOutcome {
    pub belief: KalmanBelief,
    pub innovation: Array1<f64>,
    /// Innovation whitened by the Cholesky factor of its covariance.
    pub standardized: Array1<f64>,
    pub loglik_term: f64,
}

/// Full filtering pass output.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub predicted: Vec<KalmanBelief>,
    pub filtered: Vec<KalmanBelief>,
    pub innovations: Vec<Array1<f64>>,
    pub standardized: Vec<Array1<f64>>,
    pub log_likelihood: f64,
}

impl FilterRun {
    /// Pooled sample variance of all standardized innovation components;
    /// near 1 when the model is calibrated.
    pub fn standardized_innovation_variance(&self) -> f64 {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for z in &self.standardized {
            for &v in z.iter() {
                n += 1;
                sum += v;
                sumsq += v * v;
            }
        }
        if n < 2 {
            return f64::NAN;
        }
        let mean = sum / n as f64;
        (sumsq - n as f64 * mean * mean) / (n as f64 - 1.0)
    }
}

/// Uniformly spaced frame sequence with an optional packed-coefficient cache.
#[derive(Clone, Debug)]
pub struct ObservationSequence {
    grid: GridSpec,
    t0: f64,
    delta_t: f64,
    frames: Vec<RealGridField>,
    cached: Option<(Arc<WavenumberSets>, Vec<Array1<f64>>)>,
}

impl ObservationSequence {
    pub fn new(frames: Vec<RealGridField>, t0: f64, delta_t: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(AdvectaError::Data("observation sequence has no frames".into()));
        }
        if delta_t <= 0.0 {
            return Err(AdvectaError::Data("frame spacing must be positive".into()));
        }
        let grid = frames[0].grid();
        if frames.iter().any(|f| f.grid() != grid) {
            return Err(AdvectaError::Data("frames live on different grids".into()));
        }
        Ok(ObservationSequence {
            grid,
            t0,
            delta_t,
            frames,
            cached: None,
        })
    }

    /// Build from `(time, frame)` pairs, validating uniform spacing.
    pub fn from_timed_frames(frames: Vec<(f64, RealGridField)>) -> Result<Self> {
        if frames.len() < 2 {
            let t0 = frames.first().map(|(t, _)| *t).unwrap_or(0.0);
            return Self::new(frames.into_iter().map(|(_, f)| f).collect(), t0, 1.0);
        }
        let t0 = frames[0].0;
        let dt = frames[1].0 - frames[0].0;
        for w in frames.windows(2) {
            let step = w[1].0 - w[0].0;
            if (step - dt).abs() > 1e-9 * dt.abs().max(1.0) {
                return Err(AdvectaError::Data(format!(
                    "non-uniform time spacing: {step} vs {dt}"
                )));
            }
        }
        Self::new(frames.into_iter().map(|(_, f)| f).collect(), t0, dt)
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn delta_t(&self) -> f64 {
        self.delta_t
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[RealGridField] {
        &self.frames
    }

    pub fn time_at(&self, idx: usize) -> f64 {
        self.t0 + idx as f64 * self.delta_t
    }

    /// Drop the leading frame (commonly consumed by filter initialization).
    pub fn split_first(&self) -> Result<(RealGridField, ObservationSequence)> {
        if self.frames.len() < 2 {
            return Err(AdvectaError::Data(
                "need at least two frames to split off an initial frame".into(),
            ));
        }
        let first = self.frames[0].clone();
        let rest = ObservationSequence::new(
            self.frames[1..].to_vec(),
            self.t0 + self.delta_t,
            self.delta_t,
        )?;
        Ok((first, rest))
    }

    /// Precompute and cache the packed coefficients against `sets`.
    pub fn with_spectral_cache(mut self, sets: &Arc<WavenumberSets>) -> Result<Self> {
        let packed = self.compute_spectral(sets)?;
        self.cached = Some((sets.clone(), packed));
        Ok(self)
    }

    fn compute_spectral(&self, sets: &Arc<WavenumberSets>) -> Result<Vec<Array1<f64>>> {
        self.frames
            .iter()
            .map(|f| Ok(analyze(f, sets)?.into_coeffs()))
            .collect()
    }

    /// Packed coefficients for `sets`, from the cache when it matches.
    pub fn spectral_for(&self, sets: &Arc<WavenumberSets>) -> Result<Vec<Array1<f64>>> {
        if let Some((cached_sets, packed)) = &self.cached {
            if Arc::ptr_eq(cached_sets, sets) {
                return Ok(packed.clone());
            }
        }
        self.compute_spectral(sets)
    }

    /// Apply a low-pass filter to every frame.
    pub fn lowpass(&self, cutoff: f64) -> Result<ObservationSequence> {
        let frames = self
            .frames
            .iter()
            .map(|f| crate::spectral::lowpass_field(f, cutoff))
            .collect::<Result<Vec<_>>>()?;
        ObservationSequence::new(frames, self.t0, self.delta_t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PhysicalFieldSet;
    use crate::galerkin::assemble_g;
    use crate::spectral::PackingForm;
    use approx::assert_abs_diff_eq;
    use ndarray_linalg::Inverse;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Textbook Kalman predict/update with observation map F = [I 0], the
    /// oracle for the structured implementation.
    fn oracle_step(
        g_tilde: &Array2<f64>,
        sigma_w: &Array2<f64>,
        tau_obs: f64,
        belief: &KalmanBelief,
        obs: &Array1<f64>,
    ) -> (KalmanBelief, KalmanBelief) {
        let k = obs.len();
        let m_pred = g_tilde.dot(&belief.mean);
        let q_pred = g_tilde.dot(&belief.cov).dot(&g_tilde.t()) + sigma_w;

        let mut f = Array2::zeros((k, 2 * k));
        for i in 0..k {
            f[[i, i]] = 1.0;
        }
        let s = f.dot(&q_pred).dot(&f.t()) + Array2::<f64>::eye(k) * (tau_obs * tau_obs);
        let s_inv = s.inv().unwrap();
        let gain = q_pred.dot(&f.t()).dot(&s_inv);
        let innov = obs - &f.dot(&m_pred);
        let m_filt = &m_pred + &gain.dot(&innov);
        let q_filt = &q_pred - &gain.dot(&f.dot(&q_pred));
        (
            KalmanBelief::new(m_pred, q_pred).unwrap(),
            KalmanBelief::new(m_filt, q_filt).unwrap(),
        )
    }

    fn tiny_model(seed: u64, rho: f64, tau_beta: f64, tau_obs: f64) -> DstmModel {
        // K = 4 from a 2x2 grid in the full form
        let grid = GridSpec::new(2, 2).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        let mut rng = StdRng::seed_from_u64(seed);
        let g = Array2::from_shape_fn((4, 4), |_| rng.random_range(-0.6..0.2));
        let gen = Arc::new(TransitionGenerator::from_matrix(sets.clone(), g).unwrap());
        let noise = NoiseSpec::new(
            Array1::from_shape_fn(4, |_| rng.random_range(0.05..0.4)),
            Array1::from_elem(4, 1.0),
        )
        .unwrap();
        DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 0.7,
                rho,
                tau_beta,
                tau_obs,
            },
        )
        .unwrap()
    }

    fn random_belief(dim: usize, seed: u64) -> KalmanBelief {
        let mut rng = StdRng::seed_from_u64(seed);
        let mean = Array1::from_shape_fn(dim, |_| rng.random_range(-1.0..1.0));
        let a = Array2::from_shape_fn((dim, dim), |_| rng.random_range(-1.0..1.0));
        let cov = a.dot(&a.t()) + Array2::<f64>::eye(dim) * 0.1;
        KalmanBelief::new(mean, cov).unwrap()
    }

    #[test]
    fn predict_identity_transition_keeps_belief() {
        let grid = GridSpec::new(2, 2).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        let gen = Arc::new(
            TransitionGenerator::from_matrix(sets.clone(), Array2::zeros((4, 4))).unwrap(),
        );
        let noise = NoiseSpec::new(Array1::zeros(4), Array1::from_elem(4, 1.0)).unwrap();
        // rho = 1, delta encoded in G̃'s coupling: with Δ > 0 the source-sink
        // still shifts the mean, so use a zero-mean β block.
        let model = DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 1.0,
                rho: 1.0,
                tau_beta: 0.0,
                tau_obs: 0.1,
            },
        )
        .unwrap();
        let mut belief = random_belief(8, 2);
        for i in 4..8 {
            belief.mean[i] = 0.0;
            for j in 0..8 {
                belief.cov[[i, j]] = 0.0;
                belief.cov[[j, i]] = 0.0;
            }
        }
        let pred = model.predict(&belief).unwrap();
        assert_abs_diff_eq!(pred.mean, belief.mean, epsilon = 1e-12);
        let dcov = (&pred.cov - &belief.cov)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dcov < 1e-12);
    }

    #[test]
    fn predict_zero_belief_yields_process_noise() {
        let model = tiny_model(3, 0.5, 0.3, 0.1);
        let belief = KalmanBelief::new(Array1::zeros(8), Array2::zeros((8, 8))).unwrap();
        let pred = model.predict(&belief).unwrap();
        assert!(pred.mean.iter().all(|&v| v == 0.0));
        let d = (&pred.cov - model.sigma_w())
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(d < 1e-13);
    }

    #[test]
    fn predict_matches_direct_arithmetic_oracle() {
        for seed in 0..5 {
            let model = tiny_model(seed, 0.4, 0.2, 0.15);
            let belief = random_belief(8, seed + 100);
            let pred = model.predict(&belief).unwrap();
            let m_expect = model.g_tilde().dot(&belief.mean);
            let q_expect =
                model.g_tilde().dot(&belief.cov).dot(&model.g_tilde().t()) + model.sigma_w();
            let dm = (&pred.mean - &m_expect)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let dq = (&pred.cov - &symmetrize(&q_expect))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dm < 1e-12 && dq < 1e-12, "seed {seed}: dm={dm} dq={dq}");
        }
    }

    #[test]
    fn update_matches_generic_kalman_oracle() {
        for seed in 0..5 {
            let model = tiny_model(seed, 0.3, 0.25, 0.2);
            let belief = random_belief(8, seed + 7);
            let mut rng = StdRng::seed_from_u64(seed + 1000);
            let obs = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));

            let pred = model.predict(&belief).unwrap();
            let ours = model.update(&pred, &obs).unwrap();
            let (_, oracle_filt) = oracle_step(
                model.g_tilde(),
                model.sigma_w(),
                model.params().tau_obs,
                &belief,
                &obs,
            );
            let dm = (&ours.belief.mean - &oracle_filt.mean)
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let dq = (&ours.belief.cov - &symmetrize(&oracle_filt.cov))
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(dm < 1e-12, "seed {seed}: mean deviation {dm}");
            assert!(dq < 1e-11, "seed {seed}: cov deviation {dq}");
        }
    }

    #[test]
    fn zero_observation_noise_returns_observation() {
        let model = tiny_model(11, 0.5, 0.2, 0.0);
        let belief = random_belief(8, 5);
        let pred = model.predict(&belief).unwrap();
        let obs = Array1::from(vec![0.3, -0.8, 0.1, 0.9]);
        let out = model.update(&pred, &obs).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(out.belief.mean[i], obs[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_innovation_keeps_mean_and_shrinks_covariance() {
        let model = tiny_model(13, 0.6, 0.2, 0.3);
        let belief = random_belief(8, 9);
        let pred = model.predict(&belief).unwrap();
        let obs = pred.mean.slice(s![..4]).to_owned();
        let out = model.update(&pred, &obs).unwrap();
        let dm = (&out.belief.mean - &pred.mean)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dm < 1e-12);
        let tr_before: f64 = (0..4).map(|i| pred.cov[[i, i]]).sum();
        let tr_after: f64 = (0..4).map(|i| out.belief.cov[[i, i]]).sum();
        assert!(tr_after < tr_before);
    }

    #[test]
    fn covariances_stay_psd_through_200_cycles() {
        let model = tiny_model(17, 0.7, 0.3, 0.05);
        let mut belief = random_belief(8, 21);
        let mut rng = StdRng::seed_from_u64(99);
        for _ in 0..200 {
            let pred = model.predict(&belief).unwrap();
            let obs = Array1::from_shape_fn(4, |_| rng.random_range(-1.0..1.0));
            belief = model.update(&pred, &obs).unwrap().belief;
            let min = crate::linalg::min_eigenvalue(&belief.cov).unwrap();
            let tr: f64 = (0..8).map(|i| belief.cov[[i, i]]).sum();
            assert!(min >= -1e-8 * tr.abs(), "lost PSD: min eig {min}, trace {tr}");
        }
    }

    #[test]
    fn filter_tracks_noise_free_self_generated_data() {
        let grid = GridSpec::new(4, 4).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let fields = PhysicalFieldSet::constant(grid, [[0.002, 0.0], [0.0, 0.002]], 0.3)
            .unwrap()
            .with_constant_velocity((0.1, -0.07));
        let gen = Arc::new(assemble_g(&fields, &sets).unwrap());
        let k = gen.dim();
        let noise = NoiseSpec::new(Array1::zeros(k), Array1::from_elem(k, 1.0)).unwrap();
        // tiny observation noise keeps the innovation covariance invertible
        // while the data itself is exactly noise-free
        let model = DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 1.0,
                rho: 0.0,
                tau_beta: 0.0,
                tau_obs: 1e-9,
            },
        )
        .unwrap();

        // deterministic trajectory from the model's own recursion
        let mut rng = StdRng::seed_from_u64(33);
        let alpha0 = Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0));
        let mut truth = vec![alpha0.clone()];
        for _ in 0..6 {
            truth.push(model.exp_g().dot(truth.last().unwrap()));
        }
        let frames: Vec<RealGridField> = truth
            .iter()
            .map(|a| reconstruct(&SpectralCoeffVector::new(sets.clone(), a.clone()).unwrap()))
            .collect();
        let obs = ObservationSequence::new(frames[1..].to_vec(), 1.0, 1.0).unwrap();

        let mut init_mean = Array1::zeros(2 * k);
        init_mean.slice_mut(s![..k]).assign(&alpha0);
        let init = KalmanBelief::new(init_mean, Array2::zeros((2 * k, 2 * k))).unwrap();

        let run = model.filter_sequence(&obs, &init).unwrap();
        for (i, belief) in run.filtered.iter().enumerate() {
            let err = (&belief.mean.slice(s![..k]) - &truth[i + 1])
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(err < 1e-8, "step {i}: tracking error {err}");
        }
        assert_eq!(run.filtered.len(), 6);
    }

    #[test]
    fn single_frame_runs_one_predict_update() {
        let model = tiny_model(19, 0.2, 0.1, 0.1);
        let grid = GridSpec::new(2, 2).unwrap();
        let frame = RealGridField::constant(grid, 0.5);
        let obs = ObservationSequence::new(vec![frame.clone()], 0.0, 0.7).unwrap();
        let init = model.default_init(&frame).unwrap();
        let run = model.filter_sequence(&obs, &init).unwrap();
        assert_eq!(run.filtered.len(), 1);
        assert_eq!(run.predicted.len(), 1);
    }

    #[test]
    fn likelihood_reference_value_single_step() {
        // With predictive mean equal to the observation and unit innovation
        // covariance the log-density is -(K/2) log 2π.
        let grid = GridSpec::new(2, 2).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        let gen = Arc::new(
            TransitionGenerator::from_matrix(sets.clone(), Array2::zeros((4, 4))).unwrap(),
        );
        let noise = NoiseSpec::new(Array1::zeros(4), Array1::zeros(4)).unwrap();
        let model = DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 1.0,
                rho: 0.0,
                tau_beta: 0.0,
                tau_obs: 1.0,
            },
        )
        .unwrap();
        let belief = KalmanBelief::new(Array1::zeros(8), Array2::zeros((8, 8))).unwrap();
        let pred = model.predict(&belief).unwrap();
        let out = model.update(&pred, &Array1::zeros(4)).unwrap();
        assert_abs_diff_eq!(out.loglik_term, -2.0 * LOG_2PI, epsilon = 1e-12);
    }

    #[test]
    fn increasing_obs_noise_decreases_likelihood_at_zero_innovation() {
        let grid = GridSpec::new(2, 2).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);
        let mk = |tau: f64| {
            let gen = Arc::new(
                TransitionGenerator::from_matrix(sets.clone(), Array2::zeros((4, 4))).unwrap(),
            );
            let noise = NoiseSpec::new(Array1::zeros(4), Array1::zeros(4)).unwrap();
            DstmModel::new(
                gen,
                noise,
                DstmParams {
                    delta_t: 1.0,
                    rho: 0.0,
                    tau_beta: 0.0,
                    tau_obs: tau,
                },
            )
            .unwrap()
        };
        let belief = KalmanBelief::new(Array1::zeros(8), Array2::zeros((8, 8))).unwrap();
        let mut last = f64::INFINITY;
        for tau in [1.0, 1.5, 2.5, 4.0] {
            let model = mk(tau);
            let pred = model.predict(&belief).unwrap();
            let out = model.update(&pred, &Array1::zeros(4)).unwrap();
            assert!(out.loglik_term < last);
            last = out.loglik_term;
        }
    }

    #[test]
    fn likelihood_invariant_under_packing_permutation() {
        let model = tiny_model(29, 0.4, 0.2, 0.12);
        let k = 4usize;
        let grid = GridSpec::new(2, 2).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Full);

        // permutation of the K coefficients, applied consistently
        let perm = [2usize, 0, 3, 1];
        let mut p = Array2::zeros((k, k));
        for (i, &j) in perm.iter().enumerate() {
            p[[i, j]] = 1.0;
        }
        let mut p_aug = Array2::zeros((2 * k, 2 * k));
        p_aug.slice_mut(s![..k, ..k]).assign(&p);
        p_aug.slice_mut(s![k.., k..]).assign(&p);

        let g_perm = p.dot(model.generator().matrix()).dot(&p.t());
        let gen_perm =
            Arc::new(TransitionGenerator::from_matrix(sets.clone(), g_perm).unwrap());
        let h_perm = Array1::from_shape_fn(k, |i| model.noise().h[perm[i]]);
        let h0_perm = Array1::from_shape_fn(k, |i| model.noise().h0[perm[i]]);
        let model_perm = DstmModel::new(
            gen_perm,
            NoiseSpec::new(h_perm, h0_perm).unwrap(),
            model.params(),
        )
        .unwrap();

        let mut rng = StdRng::seed_from_u64(500);
        let ys: Vec<Array1<f64>> =
            (0..5).map(|_| Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0))).collect();

        let init = KalmanBelief::new(Array1::zeros(8), Array2::eye(8) * 0.5).unwrap();
        let mut loglik = 0.0;
        let mut belief = init.clone();
        for y in &ys {
            let pred = model.predict(&belief).unwrap();
            let out = model.update(&pred, y).unwrap();
            loglik += out.loglik_term;
            belief = out.belief;
        }

        let mut loglik_perm = 0.0;
        let mut belief_p = KalmanBelief::new(
            p_aug.dot(&init.mean),
            p_aug.dot(&init.cov).dot(&p_aug.t()),
        )
        .unwrap();
        for y in &ys {
            let pred = model_perm.predict(&belief_p).unwrap();
            let out = model_perm.update(&pred, &p.dot(y)).unwrap();
            loglik_perm += out.loglik_term;
            belief_p = out.belief;
        }
        assert_abs_diff_eq!(loglik, loglik_perm, epsilon = 1e-9 * loglik.abs());
    }

    #[test]
    fn augmented_model_with_inert_beta_matches_plain_recursion() {
        let model = tiny_model(31, 0.0, 0.0, 0.2);
        let k = 4usize;
        let mut rng = StdRng::seed_from_u64(77);
        let y = Array1::from_shape_fn(k, |_| rng.random_range(-1.0..1.0));

        let mut belief = random_belief(8, 3);
        // zero out the beta block
        for i in k..2 * k {
            belief.mean[i] = 0.0;
            for j in 0..2 * k {
                belief.cov[[i, j]] = 0.0;
                belief.cov[[j, i]] = 0.0;
            }
        }
        let pred = model.predict(&belief).unwrap();
        let out = model.update(&pred, &y).unwrap();

        // plain K-dimensional filter on (exp(GΔ), Q_int, τ)
        let e = model.exp_g();
        let q = model.process_noise();
        let m_pred = e.dot(&belief.mean.slice(s![..k]));
        let q_pred = e.dot(&belief.cov.slice(s![..k, ..k])).dot(&e.t()) + q;
        let s = &q_pred + &(Array2::<f64>::eye(k) * model.params().tau_obs.powi(2));
        let s_inv = s.inv().unwrap();
        let gain = q_pred.dot(&s_inv);
        let m_filt = &m_pred + &gain.dot(&(&y - &m_pred));

        for i in 0..k {
            assert_abs_diff_eq!(out.belief.mean[i], m_filt[i], epsilon = 1e-10);
        }
        // beta block stays inert
        for i in k..2 * k {
            assert_abs_diff_eq!(out.belief.mean[i], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn update_trace_strictly_decreases_with_pd_block() {
        let model = tiny_model(37, 0.5, 0.4, 0.25);
        let belief = random_belief(8, 41);
        let pred = model.predict(&belief).unwrap();
        let obs = Array1::from(vec![0.1, 0.2, -0.3, 0.05]);
        let out = model.update(&pred, &obs).unwrap();
        let tr_before: f64 = (0..4).map(|i| pred.cov[[i, i]]).sum();
        let tr_after: f64 = (0..4).map(|i| out.belief.cov[[i, i]]).sum();
        assert!(tr_after < tr_before - 1e-12);
    }

    #[test]
    fn nowcast_static_model_keeps_reconstruction() {
        // G̃ = I and Σ_W = 0: every horizon equals the current reconstruction.
        let grid = GridSpec::new(4, 4).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let k = sets.dim();
        let gen = Arc::new(
            TransitionGenerator::from_matrix(sets.clone(), Array2::zeros((k, k))).unwrap(),
        );
        let noise = NoiseSpec::new(Array1::zeros(k), Array1::zeros(k)).unwrap();
        let model = DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 1.0,
                rho: 1.0,
                tau_beta: 0.0,
                tau_obs: 0.1,
            },
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(4);
        let mut mean = Array1::zeros(2 * k);
        for i in 0..k {
            mean[i] = rng.random_range(-1.0..1.0);
        }
        let belief = KalmanBelief::new(mean.clone(), Array2::zeros((2 * k, 2 * k))).unwrap();
        let casts = model.nowcast(&belief, 3).unwrap();
        let current = reconstruct(
            &SpectralCoeffVector::new(sets.clone(), mean.slice(s![..k]).to_owned()).unwrap(),
        );
        for (mean_field, var_field) in &casts {
            assert!(mean_field.max_abs_diff(&current) < 1e-10);
            assert!(var_field.max_abs() < 1e-12);
        }
        assert!(model.nowcast(&belief, 0).is_err());
    }

    #[test]
    fn nowcast_horizon_one_equals_predict_reconstruct() {
        let model = tiny_model(43, 0.3, 0.2, 0.1);
        let k = model.state_dim();
        let belief = random_belief(8, 91);
        let pred = model.predict(&belief).unwrap();
        let direct = reconstruct(
            &SpectralCoeffVector::new(model.sets().clone(), pred.mean.slice(s![..k]).to_owned())
                .unwrap(),
        );
        let cast = model.nowcast(&belief, 1).unwrap();
        assert!(cast[0].0.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn source_sink_map_round_trip() {
        let grid = GridSpec::new(4, 4).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let k = sets.dim();
        let gen = Arc::new(
            TransitionGenerator::from_matrix(sets.clone(), Array2::zeros((k, k))).unwrap(),
        );
        let noise = NoiseSpec::new(Array1::zeros(k), Array1::zeros(k)).unwrap();
        let model = DstmModel::new(
            gen,
            noise,
            DstmParams {
                delta_t: 1.0,
                rho: 0.5,
                tau_beta: 0.1,
                tau_obs: 0.1,
            },
        )
        .unwrap();

        // beta = packed bump field: reconstruction must give that field back
        let bump = RealGridField::from_fn(grid, |s1, s2| {
            (-(s1 - 0.5).powi(2) / 0.05 - (s2 - 0.5).powi(2) / 0.05).exp()
        });
        let bump_bl = reconstruct(&analyze(&bump, &sets).unwrap());
        let beta = analyze(&bump_bl, &sets).unwrap().into_coeffs();
        let mut mean = Array1::zeros(2 * k);
        mean.slice_mut(s![k..]).assign(&beta);
        let belief = KalmanBelief::new(mean, Array2::zeros((2 * k, 2 * k))).unwrap();

        let zero_belief = KalmanBelief::new(Array1::zeros(2 * k), Array2::zeros((2 * k, 2 * k))).unwrap();
        assert!(model.source_sink_map(&zero_belief).unwrap().max_abs() < 1e-14);

        let map = model.source_sink_map(&belief).unwrap();
        assert!(map.max_abs_diff(&bump_bl) < 1e-10);
    }

    #[test]
    fn sequence_validation() {
        let grid = GridSpec::new(4, 4).unwrap();
        let f = RealGridField::zeros(grid);
        assert!(ObservationSequence::new(vec![], 0.0, 1.0).is_err());
        assert!(ObservationSequence::new(vec![f.clone()], 0.0, 0.0).is_err());
        let bad = ObservationSequence::from_timed_frames(vec![
            (0.0, f.clone()),
            (1.0, f.clone()),
            (2.5, f.clone()),
        ]);
        assert!(bad.is_err());
        let good = ObservationSequence::from_timed_frames(vec![
            (0.0, f.clone()),
            (0.5, f.clone()),
            (1.0, f),
        ])
        .unwrap();
        assert_eq!(good.len(), 3);
        assert_abs_diff_eq!(good.delta_t(), 0.5, epsilon = 1e-12);
    }
}
