//! Maximum-likelihood estimation of the model parameters by a two-step
//! procedure: the velocity (and decay) parameters are fitted first on a
//! low-frequency restriction of the data, where the transition generator is
//! small and cheap to rebuild, then the temporal-noise parameters are fitted
//! on the full representation with the physical fields held fixed.
//!
//! All bounded parameters are optimized through smooth bijections so the
//! search space is unconstrained; the objective is a pure function of the
//! data and parameters (no randomness), so repeated evaluation is
//! bit-identical.

use std::sync::Arc;

use crate::dstm::{DstmModel, DstmParams, FilterRun, ObservationSequence};
use crate::fields::{eval_decay, eval_velocity, DecayModel, PhysicalFieldSet, VelocityFieldModel};
use crate::galerkin::{assemble_g, NoiseSpec};
use crate::grid::{GridSpec, RealGridField};
use crate::spectral::{PackingForm, WavenumberSets};
use crate::{AdvectaError, Result};

/// Smooth bijection between a natural parameter and the unconstrained
/// search coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// Positive parameters: `v = exp(u)`.
    Log,
    /// Parameters in `(-1, 1)`: `v = tanh(u)`.
    Tanh,
}

impl Transform {
    pub fn to_unconstrained(self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.max(1e-300).ln(),
            Transform::Tanh => v.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(),
        }
    }

    pub fn from_unconstrained(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Tanh => u.tanh(),
        }
    }
}

/// Nelder–Mead stopping and restart policy.
#[derive(Clone, Copy, Debug)]
pub struct OptimOptions {
    /// Iterations per restart.
    pub max_iters: usize,
    /// Relative objective-change tolerance.
    pub tol: f64,
    pub restarts: usize,
    /// Initial simplex step per coordinate.
    pub init_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            max_iters: 500,
            tol: 1e-6,
            restarts: 3,
            init_step: 0.35,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    /// Best objective value after each completed iteration.
    pub trace: Vec<f64>,
}

/// Derivative-free simplex minimizer with adaptive coefficients and
/// restarts around the incumbent.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &OptimOptions,
) -> OptimResult {
    let n = x0.len();
    assert!(n >= 1, "no parameters to optimize");
    // adaptive coefficients help in higher dimensions
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = (0.75 - 1.0 / (2.0 * nf)).max(0.1);
    let delta = (1.0 - 1.0 / nf).max(0.5);

    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut best = x0.to_vec();
    let mut best_val = eval(&best, &mut evals);
    let mut trace = vec![best_val];
    let mut converged = false;
    let mut step = opts.init_step;

    for _restart in 0..opts.restarts.max(1) {
        // simplex around the incumbent
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((best.clone(), best_val));
        for i in 0..n {
            let mut p = best.clone();
            p[i] += step;
            let v = eval(&p, &mut evals);
            simplex.push((p, v));
        }

        for _iter in 0..opts.max_iters {
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            let f_best = simplex[0].1;
            let f_worst = simplex[n].1;
            let spread = (f_worst - f_best).abs();
            if spread <= opts.tol * (f_best.abs().max(1.0)) {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..n)
                .map(|j| simplex[..n].iter().map(|(p, _)| p[j]).sum::<f64>() / nf)
                .collect();
            let mirror = |coef: f64| -> Vec<f64> {
                (0..n)
                    .map(|j| centroid[j] + coef * (centroid[j] - simplex[n].0[j]))
                    .collect()
            };

            let xr = mirror(alpha);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = mirror(alpha * beta);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < simplex[n].1 {
                    let xc = mirror(alpha * gamma);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc: Vec<f64> = (0..n)
                        .map(|j| centroid[j] - gamma * (centroid[j] - simplex[n].0[j]))
                        .collect();
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < simplex[n].1.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    // shrink toward the best point
                    let anchor = simplex[0].0.clone();
                    for (p, v) in simplex.iter_mut().skip(1) {
                        for j in 0..n {
                            p[j] = anchor[j] + delta * (p[j] - anchor[j]);
                        }
                        *v = eval(p, &mut evals);
                    }
                }
            }
            simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
            trace.push(simplex[0].1);
        }

        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        if simplex[0].1 < best_val {
            best = simplex[0].0.clone();
            best_val = simplex[0].1;
        }
        step *= 0.35;
    }

    OptimResult {
        x: best,
        value: best_val,
        evals,
        converged,
        trace,
    }
}

/// Which parameter groups the fit treats as free.
#[derive(Clone, Copy, Debug)]
pub struct FreeParams {
    pub velocity: bool,
    pub decay: bool,
    pub rho: bool,
    pub tau_beta: bool,
    pub noise: bool,
    pub tau_obs: bool,
}

impl Default for FreeParams {
    fn default() -> Self {
        FreeParams {
            velocity: true,
            decay: false,
            rho: true,
            tau_beta: true,
            noise: true,
            tau_obs: true,
        }
    }
}

/// Starting values for the scalar parameters.
#[derive(Clone, Copy, Debug)]
pub struct InitParams {
    pub rho: f64,
    pub tau_beta: f64,
    /// Noise power-law amplitude and exponent `h(k) = a (1 + |2πk|²)^(-b)`.
    pub noise_a: f64,
    pub noise_b: f64,
    pub tau_obs: f64,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            rho: 0.5,
            tau_beta: 0.05,
            noise_a: 0.05,
            noise_b: 0.0,
            tau_obs: 0.05,
        }
    }
}

/// A maximum-likelihood estimation task.
#[derive(Clone, Debug)]
pub struct EstimationProblem {
    pub data: ObservationSequence,
    /// Velocity model template; its coefficients serve as starting values.
    pub velocity: VelocityFieldModel,
    pub decay: DecayModel,
    pub diffusivity: [[f64; 2]; 2],
    pub free: FreeParams,
    pub init: InitParams,
    /// Per-axis lattice-wavenumber cap of the step-1 representation.
    pub step1_mode_cap: usize,
    /// Optional cap for the step-2 representation; `None` keeps the full
    /// reduced-form packing.
    pub full_mode_cap: Option<usize>,
    pub optimizer: OptimOptions,
    /// Seed the velocity search with a coarse scan over uniform drifts when
    /// the starting coefficients are all zero.
    pub drift_scan: bool,
}

impl EstimationProblem {
    pub fn new(data: ObservationSequence, velocity: VelocityFieldModel) -> Self {
        EstimationProblem {
            data,
            velocity,
            decay: DecayModel::Constant(0.9),
            diffusivity: [[0.0025, 0.0], [0.0, 0.0025]],
            free: FreeParams::default(),
            init: InitParams::default(),
            step1_mode_cap: 4,
            full_mode_cap: None,
            optimizer: OptimOptions::default(),
            drift_scan: true,
        }
    }

    fn grid(&self) -> GridSpec {
        self.data.grid()
    }
}

/// Scalar parameters reported by the fit.
#[derive(Clone, Copy, Debug)]
pub struct FittedScalars {
    pub rho: f64,
    pub tau_beta: f64,
    pub noise_a: f64,
    pub noise_b: f64,
    pub tau_obs: f64,
    pub decay_constant: Option<f64>,
}

/// Everything a completed fit reports.
#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub velocity: VelocityFieldModel,
    pub decay: DecayModel,
    pub scalars: FittedScalars,
    pub model: DstmModel,
    pub step1_loglik: f64,
    pub step2_loglik: f64,
    pub initial_loglik: f64,
    /// Objective traces (negative log-likelihood) of the two stages.
    pub step1_trace: Vec<f64>,
    pub step2_trace: Vec<f64>,
    pub evals: (usize, usize),
    pub converged: bool,
    pub filter: FilterRun,
}

struct Step1Space {
    gamma_len: usize,
    decay_free: bool,
}

impl Step1Space {
    fn pack(&self, v: &VelocityFieldModel, decay: &DecayModel) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.gamma_len + 1);
        x.extend_from_slice(&v.gamma_x);
        x.extend_from_slice(&v.gamma_y);
        if self.decay_free {
            if let DecayModel::Constant(z) = decay {
                x.push(*z);
            }
        }
        x
    }

    fn unpack(
        &self,
        x: &[f64],
        template: &VelocityFieldModel,
        decay: &DecayModel,
    ) -> (VelocityFieldModel, DecayModel) {
        let mut v = template.clone();
        v.gamma_x = x[..self.gamma_len].to_vec();
        v.gamma_y = x[self.gamma_len..2 * self.gamma_len].to_vec();
        let d = if self.decay_free {
            DecayModel::Constant(x[2 * self.gamma_len])
        } else {
            decay.clone()
        };
        (v, d)
    }
}

fn build_fields(
    grid: GridSpec,
    velocity: &VelocityFieldModel,
    decay: &DecayModel,
    diffusivity: [[f64; 2]; 2],
) -> Result<PhysicalFieldSet> {
    let (vx, vy) = eval_velocity(velocity, grid)?;
    let zeta = eval_decay(decay, grid)?;
    PhysicalFieldSet::constant(grid, diffusivity, 0.0)?
        .with_velocity(vx, vy)?
        .with_zeta(zeta)
}

/// Negative log-likelihood of the data under the given physical fields and
/// scalar parameters, on the representation `sets`. When a cached model is
/// supplied its matrix exponential is reused.
fn objective(
    sets: &Arc<WavenumberSets>,
    data_first: &RealGridField,
    data_rest: &ObservationSequence,
    fields: &PhysicalFieldSet,
    scalars: &FittedScalars,
    delta_t: f64,
    cached_exp: Option<&DstmModel>,
) -> Result<f64> {
    let noise = NoiseSpec::power_law(
        sets,
        scalars.noise_a,
        scalars.noise_b,
        scalars.noise_a,
        scalars.noise_b,
    )?;
    let params = DstmParams {
        delta_t,
        rho: scalars.rho,
        tau_beta: scalars.tau_beta,
        tau_obs: scalars.tau_obs,
    };
    let model = match cached_exp {
        Some(m) => m.with_scalars(noise, params)?,
        None => {
            let gen = Arc::new(assemble_g(fields, sets)?);
            DstmModel::new(gen, noise, params)?
        }
    };
    let init = model.default_init(data_first)?;
    Ok(-model.log_likelihood(data_rest, &init)?)
}

/// Two-step maximum-likelihood fit.
pub fn fit(problem: &EstimationProblem) -> Result<FitOutcome> {
    if problem.data.len() < 3 {
        return Err(AdvectaError::Data("estimation needs at least 3 frames".into()));
    }
    let grid = problem.grid();
    let delta_t = problem.data.delta_t();

    // ---- step 1: physical fields on the low-frequency representation ----
    let sets1 = WavenumberSets::build_capped(grid, problem.step1_mode_cap);
    let (first1, rest1) = problem.data.split_first()?;
    let rest1 = rest1.with_spectral_cache(&sets1)?;

    let space = Step1Space {
        gamma_len: problem.velocity.n_params_per_component(),
        decay_free: problem.free.decay && matches!(problem.decay, DecayModel::Constant(_)),
    };
    let base_scalars = FittedScalars {
        rho: problem.init.rho,
        tau_beta: problem.init.tau_beta,
        noise_a: problem.init.noise_a,
        noise_b: problem.init.noise_b,
        tau_obs: problem.init.tau_obs,
        decay_constant: None,
    };

    let step1_obj = |x: &[f64]| -> f64 {
        let (v, d) = space.unpack(x, &problem.velocity, &problem.decay);
        let fields = match build_fields(grid, &v, &d, problem.diffusivity) {
            Ok(f) => f,
            Err(_) => return f64::INFINITY,
        };
        objective(&sets1, &first1, &rest1, &fields, &base_scalars, delta_t, None)
            .unwrap_or(f64::INFINITY)
    };

    let mut x0 = space.pack(&problem.velocity, &problem.decay);
    let initial_neg_ll = step1_obj(&x0);
    if !initial_neg_ll.is_finite() {
        return Err(AdvectaError::Numeric(format!(
            "likelihood not finite at the starting parameters {x0:?}"
        )));
    }

    // coarse drift scan: constant-term coefficients shared by all kernels
    if problem.drift_scan
        && problem.free.velocity
        && x0[..2 * space.gamma_len].iter().all(|&g| g == 0.0)
    {
        let b = problem.velocity.basis.len();
        let mut best = (initial_neg_ll, x0.clone());
        for ux in [-1.5f64, -0.75, -0.3, 0.3, 0.75, 1.5] {
            for uy in [-1.5f64, -0.75, -0.3, 0.3, 0.75, 1.5] {
                let mut x = x0.clone();
                for j in 0..problem.velocity.n_kernels() {
                    x[j * b] = ux;
                    x[space.gamma_len + j * b] = uy;
                }
                let v = step1_obj(&x);
                if v < best.0 {
                    best = (v, x);
                }
            }
        }
        x0 = best.1;
    }

    let (step1_res, velocity, decay) = if problem.free.velocity || space.decay_free {
        let mut obj = |x: &[f64]| step1_obj(x);
        let res = nelder_mead(&mut obj, &x0, &problem.optimizer);
        if !res.value.is_finite() {
            return Err(AdvectaError::Numeric(
                "step-1 optimum has non-finite likelihood".into(),
            ));
        }
        let (v, d) = space.unpack(&res.x, &problem.velocity, &problem.decay);
        (res, v, d)
    } else {
        let res = OptimResult {
            x: x0.clone(),
            value: initial_neg_ll,
            evals: 1,
            converged: true,
            trace: vec![initial_neg_ll],
        };
        (res, problem.velocity.clone(), problem.decay.clone())
    };

    // ---- step 2: temporal parameters on the full representation ----
    let sets2 = match problem.full_mode_cap {
        Some(cap) => WavenumberSets::build_capped(grid, cap),
        None => WavenumberSets::build(grid, PackingForm::Reduced),
    };
    let (first2, rest2) = problem.data.split_first()?;
    let rest2 = rest2.with_spectral_cache(&sets2)?;
    let fields = build_fields(grid, &velocity, &decay, problem.diffusivity)?;
    let gen2 = Arc::new(assemble_g(&fields, &sets2)?);
    // one model up front so the matrix exponential is shared by every
    // step-2 objective evaluation
    let base_model = DstmModel::new(
        gen2,
        NoiseSpec::power_law(
            &sets2,
            base_scalars.noise_a,
            base_scalars.noise_b,
            base_scalars.noise_a,
            base_scalars.noise_b,
        )?,
        DstmParams {
            delta_t,
            rho: base_scalars.rho,
            tau_beta: base_scalars.tau_beta,
            tau_obs: base_scalars.tau_obs,
        },
    )?;

    type Apply = fn(&mut FittedScalars, f64);
    let mut step2_params: Vec<(Transform, f64, Apply)> = Vec::new();
    if problem.free.rho {
        step2_params.push((Transform::Tanh, problem.init.rho, |s, v| s.rho = v));
    }
    if problem.free.tau_beta {
        step2_params.push((Transform::Log, problem.init.tau_beta, |s, v| s.tau_beta = v));
    }
    if problem.free.noise {
        step2_params.push((Transform::Log, problem.init.noise_a, |s, v| s.noise_a = v));
        step2_params.push((Transform::Identity, problem.init.noise_b, |s, v| {
            s.noise_b = v
        }));
    }
    if problem.free.tau_obs {
        step2_params.push((Transform::Log, problem.init.tau_obs, |s, v| s.tau_obs = v));
    }

    let unpack_scalars = |u: &[f64]| -> FittedScalars {
        let mut s = base_scalars;
        for (i, (tr, _, apply)) in step2_params.iter().enumerate() {
            apply(&mut s, tr.from_unconstrained(u[i]));
        }
        s
    };

    let (step2_res, scalars) = if step2_params.is_empty() {
        let value = objective(
            &sets2,
            &first2,
            &rest2,
            &fields,
            &base_scalars,
            delta_t,
            Some(&base_model),
        )?;
        (
            OptimResult {
                x: vec![],
                value,
                evals: 1,
                converged: true,
                trace: vec![value],
            },
            base_scalars,
        )
    } else {
        let u0: Vec<f64> = step2_params
            .iter()
            .map(|(tr, init, _)| tr.to_unconstrained(*init))
            .collect();
        let mut obj = |u: &[f64]| -> f64 {
            let s = unpack_scalars(u);
            objective(&sets2, &first2, &rest2, &fields, &s, delta_t, Some(&base_model))
                .unwrap_or(f64::INFINITY)
        };
        let res = nelder_mead(&mut obj, &u0, &problem.optimizer);
        if !res.value.is_finite() {
            return Err(AdvectaError::Numeric(
                "step-2 optimum has non-finite likelihood".into(),
            ));
        }
        let s = unpack_scalars(&res.x);
        (res, s)
    };

    // ---- final model and filter pass ----
    let mut scalars = scalars;
    scalars.decay_constant = match &decay {
        DecayModel::Constant(z) => Some(*z),
        DecayModel::Mixture { .. } => None,
    };
    let noise = NoiseSpec::power_law(
        &sets2,
        scalars.noise_a,
        scalars.noise_b,
        scalars.noise_a,
        scalars.noise_b,
    )?;
    let params = DstmParams {
        delta_t,
        rho: scalars.rho,
        tau_beta: scalars.tau_beta,
        tau_obs: scalars.tau_obs,
    };
    let model = base_model.with_scalars(noise, params)?;
    let init = model.default_init(&first2)?;
    let filter = model.filter_sequence(&rest2, &init)?;

    Ok(FitOutcome {
        velocity,
        decay,
        scalars,
        model,
        step1_loglik: -step1_res.value,
        step2_loglik: -step2_res.value,
        initial_loglik: -initial_neg_ll,
        step1_trace: step1_res.trace,
        step2_trace: step2_res.trace,
        evals: (step1_res.evals, step2_res.evals),
        converged: step1_res.converged && step2_res.converged,
        filter,
    })
}

/// Parameter group selector for likelihood profiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Rho,
    TauBeta,
    TauObs,
    NoiseAmplitude,
    NoiseExponent,
    DecayConstant,
}

/// Log-likelihood along a grid of values of one parameter group, everything
/// else held at the problem's starting values.
pub fn profile_likelihood(
    problem: &EstimationProblem,
    group: ParamGroup,
    values: &[f64],
) -> Result<Vec<f64>> {
    let grid = problem.grid();
    let delta_t = problem.data.delta_t();
    let sets = match problem.full_mode_cap {
        Some(cap) => WavenumberSets::build_capped(grid, cap),
        None => WavenumberSets::build(grid, PackingForm::Reduced),
    };
    let (first, rest) = problem.data.split_first()?;
    let rest = rest.with_spectral_cache(&sets)?;

    let base_scalars = FittedScalars {
        rho: problem.init.rho,
        tau_beta: problem.init.tau_beta,
        noise_a: problem.init.noise_a,
        noise_b: problem.init.noise_b,
        tau_obs: problem.init.tau_obs,
        decay_constant: None,
    };

    let mut out = Vec::with_capacity(values.len());
    let mut cached: Option<DstmModel> = None;
    for &v in values {
        let mut scalars = base_scalars;
        let mut decay = problem.decay.clone();
        match group {
            ParamGroup::Rho => scalars.rho = v,
            ParamGroup::TauBeta => scalars.tau_beta = v,
            ParamGroup::TauObs => scalars.tau_obs = v,
            ParamGroup::NoiseAmplitude => scalars.noise_a = v,
            ParamGroup::NoiseExponent => scalars.noise_b = v,
            ParamGroup::DecayConstant => decay = DecayModel::Constant(v),
        }
        let fields = build_fields(grid, &problem.velocity, &decay, problem.diffusivity)?;
        // decay changes the generator; everything else reuses the cached
        // matrix exponential
        if group == ParamGroup::DecayConstant {
            cached = None;
        } else if cached.is_none() {
            let gen = Arc::new(assemble_g(&fields, &sets)?);
            cached = Some(DstmModel::new(
                gen,
                NoiseSpec::power_law(
                    &sets,
                    scalars.noise_a,
                    scalars.noise_b,
                    scalars.noise_a,
                    scalars.noise_b,
                )?,
                DstmParams {
                    delta_t,
                    rho: scalars.rho,
                    tau_beta: scalars.tau_beta,
                    tau_obs: scalars.tau_obs,
                },
            )?);
        }
        let neg = objective(&sets, &first, &rest, &fields, &scalars, delta_t, cached.as_ref())?;
        out.push(-neg);
    }
    Ok(out)
}
