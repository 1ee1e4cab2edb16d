// scratch probe: zero-advection fit with constant-basis kernels
use advecta::estimate::*;
use advecta::fields::*;
use advecta::galerkin::NoiseSpec;
use advecta::sim::*;
use advecta::spectral::{PackingForm, WavenumberSets};
use advecta::GridSpec;

fn main() {
    for seed in [11u64, 12, 14] {
        let zeta = 0.02;
        let t_steps = 120;
        let grid = GridSpec::new(10, 10).unwrap();
        let sets = WavenumberSets::build(grid, PackingForm::Reduced);
        let fields = PhysicalFieldSet::constant(grid, [[0.0025, 0.0], [0.0, 0.0025]], zeta).unwrap();
        let config = SimConfig {
            sets: sets.clone(),
            fields,
            noise: NoiseSpec::flat(&sets, 0.05, 0.5).unwrap(),
            t_steps,
            delta_t: 1.0,
            source_sink: SourceSink::None,
            init: InitState::DrawFromPrior,
            tau_obs: 0.002,
            seed,
        };
        let data = simulate(&config).unwrap().obs;
        let mut velocity = VelocityFieldModel::with_kernels(
            vec![(0.225, 0.225), (0.725, 0.725), (0.225, 0.725), (0.725, 0.225)],
            0.19,
        );
        velocity.basis = vec![BasisFn::One];
        velocity.gamma_x = vec![0.0; 4];
        velocity.gamma_y = vec![0.0; 4];
        let mut problem = EstimationProblem::new(data, velocity);
        problem.decay = DecayModel::Constant(zeta);
        problem.free = FreeParams { velocity: true, decay: false, rho: false, tau_beta: false, noise: false, tau_obs: false };
        problem.init = InitParams { rho: 0.0, tau_beta: 0.0, noise_a: 0.05, noise_b: 0.0, tau_obs: 0.002 };
        problem.step1_mode_cap = 3;
        problem.full_mode_cap = Some(4);
        problem.optimizer = OptimOptions { max_iters: 500, tol: 1e-7, restarts: 3, init_step: 0.15 };
        let t0 = std::time::Instant::now();
        let outcome = fit(&problem).unwrap();
        let (vx, vy) = eval_velocity(&outcome.velocity, grid).unwrap();
        let quiet = vx.iter().zip(vy.iter()).filter(|(x, y)| (*x * *x + *y * *y).sqrt() < 0.05 * 0.19).count();
        let vmaxf = vx.iter().zip(vy.iter()).fold(0.0f64, |m, (x, y)| m.max((x * x + y * y).sqrt()));
        println!(
            "seed={seed}: quiet {quiet}/100, max {vmaxf:.4}, evals {:?}, {:.1}s",
            outcome.evals, t0.elapsed().as_secs_f64()
        );
    }
}
