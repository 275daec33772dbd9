//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Always exits 0; a FAIL line is a finding, not a build break.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use legged_inekf::inekf::update::{camera_jacobian, camera_prediction};
use legged_inekf::inekf::{build_a, propagate_mean, transition, NoiseTuner};
use legged_inekf::lie::{exp_so3, hat9, log_so3, Rotation, Se23, Vector9};
use legged_inekf::linalg::expm;
use legged_inekf::sim::rng::{self, SimRng};
use legged_inekf::sim::{run_experiment, ExperimentConfig, FilterVariant, SlipWindow};
use legged_inekf::state::{error_between, idx, retract, CovarianceMatrix, ErrorState, NoiseConfig};
use legged_inekf::{FilterConfig, FilterInstance, ImuSample, KinematicObservation, RobotState};
use legged_inekf_cli::commands::{cmd_observability, CaseArg};
use nalgebra::{DMatrix, Matrix3, Matrix5, Matrix6, SMatrix, Vector3, Vector6};

const G: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: String) -> Line {
    Line { pass, detail }
}

fn random_pose(r: &mut SimRng) -> Se23 {
    Se23::new(Rotation::exp(&rng::normal3(r)), rng::normal3(r), rng::normal3(r))
}

fn random_state(r: &mut SimRng) -> RobotState {
    RobotState {
        pose: random_pose(r),
        gyro_bias: rng::normal3(r) * 0.5,
        accel_bias: rng::normal3(r) * 0.5,
        cam_rotation: Rotation::exp(&rng::normal3(r)),
        cam_position: rng::normal3(r) * 0.3,
    }
}

fn random_xi(r: &mut SimRng, scale: f64) -> Vector9 {
    Vector9::from_fn(|_, _| rng::normal(r)) * scale
}

fn lie_suite() -> Line {
    let mut r = rng::substream(1, 0);
    let (mut rt_so3, mut rt_se23, mut adj, mut oracle) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..2000 {
        let phi = rng::unit_vector(&mut r) * (std::f64::consts::PI - 0.1) * rng::uniform(&mut r);
        rt_so3 = rt_so3.max((log_so3(&exp_so3(&phi)).unwrap() - phi).norm());

        let mut xi = random_xi(&mut r, 1.0);
        let rot = xi.fixed_rows::<3>(0).into_owned();
        if rot.norm() > std::f64::consts::PI - 0.1 {
            xi.fixed_rows_mut::<3>(0).copy_from(&(rot.normalize() * (std::f64::consts::PI - 0.1)));
        }
        rt_se23 = rt_se23.max((Se23::exp(&xi).log() - xi).norm());

        let x = random_pose(&mut r);
        let conj = x.to_matrix() * hat9(&xi) * x.inverse().to_matrix();
        adj = adj.max((hat9(&(x.adjoint() * xi)) - conj).amax());

        let m = DMatrix::from_column_slice(5, 5, hat9(&xi).as_slice());
        let e = expm(&m);
        let ours = Se23::exp(&xi).to_matrix();
        oracle = oracle.max((DMatrix::from_column_slice(5, 5, ours.as_slice()) - e).amax());
    }
    let pass = rt_so3.max(rt_se23) < 1e-9 && adj < 1e-10 && oracle < 1e-10;
    line(
        pass,
        format!("roundtrip so3 {rt_so3:.1e} se23 {rt_se23:.1e} (<1e-9), adjoint {adj:.1e} (<1e-10), expm {oracle:.1e} (<1e-10)"),
    )
}

/// Vector field of the bias-free IMU dynamics at `x`, read off the filter's
/// own mean propagation by Richardson-extrapolated central differences.
fn imu_field(x: &Matrix5<f64>, imu: &ImuSample) -> Matrix5<f64> {
    let state = RobotState {
        pose: Se23::from_matrix(x).unwrap(),
        ..RobotState::default()
    };
    let d = |h: f64| {
        let p = propagate_mean(&state, imu, h, &G).pose.to_matrix();
        let m = propagate_mean(&state, imu, -h, &G).pose.to_matrix();
        (p - m) / (2.0 * h)
    };
    let h = 1e-3;
    (d(h / 2.0) * 4.0 - d(h)) / 3.0
}

fn group_affine() -> Line {
    let mut r = rng::substream(2, 0);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let imu = ImuSample {
            t: 0.0,
            omega: rng::normal3(&mut r),
            accel: rng::normal3(&mut r) * 3.0,
        };
        let a = random_pose(&mut r).to_matrix();
        let b = random_pose(&mut r).to_matrix();
        let lhs = imu_field(&(a * b), &imu);
        let rhs = imu_field(&a, &imu) * b + a * imu_field(&b, &imu) - a * imu_field(&Matrix5::identity(), &imu) * b;
        worst = worst.max((lhs - rhs).amax() / (1.0 + lhs.amax()));
    }
    line(worst < 1e-10, format!("max residual {worst:.1e} over 100 pairs (<1e-10)"))
}

fn log_linear() -> Line {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let mut r = rng::substream(seed, 3);
        let dt = 1e-3;
        let truth0 = RobotState {
            pose: random_pose(&mut r),
            ..RobotState::default()
        };
        let xi0 = random_xi(&mut r, 1.0).normalize() * 0.5;
        let (mut truth, mut est) = (truth0, truth0);
        est.pose = Se23::exp(&xi0) * truth0.pose;
        let phi: SMatrix<f64, 9, 9> = transition(&truth0, &G, dt).fixed_view::<9, 9>(0, 0).into_owned();
        let mut xi = xi0;
        for k in 0..1000 {
            let t = k as f64 * dt;
            let imu = ImuSample {
                t,
                omega: Vector3::new((2.0 * t).sin(), 0.5, (3.0 * t).cos()),
                accel: Vector3::new(1.0 + t, -(t * 5.0).sin(), 9.81),
            };
            truth = propagate_mean(&truth, &imu, dt, &G);
            est = propagate_mean(&est, &imu, dt, &G);
            xi = phi * xi;
            worst = worst.max(((est.pose * truth.pose.inverse()).log() - xi).norm());
        }
    }
    line(worst < 1e-6, format!("max |log(η) − Φξ₀| {worst:.1e} over 5 seeds, 1 s, |ξ₀| 0.5 (<1e-6)"))
}

/// `|ξ̇ − Aξ|` at an error of size `eps` along `dir`, with `ξ̇` from central
/// differences of the two propagated trajectories.
fn linearization_residual(truth: &RobotState, imu: &ImuSample, dir: &ErrorState, eps: f64) -> f64 {
    let est = retract(truth, &(dir * eps));
    let xi0 = error_between(&est, truth);
    let h = 1e-5;
    let at = |dt: f64| error_between(&propagate_mean(&est, imu, dt, &G), &propagate_mean(truth, imu, dt, &G));
    let xidot = (at(h) - at(-h)) / (2.0 * h);
    (xidot - build_a(&est, &G) * xi0).norm()
}

fn jacobians() -> Line {
    let mut r = rng::substream(4, 0);
    let mut worst_ratio = 0.0f64;
    let mut c_range = (f64::INFINITY, 0.0f64);
    for _ in 0..20 {
        let truth = random_state(&mut r);
        let imu = ImuSample {
            t: 0.0,
            omega: rng::normal3(&mut r),
            accel: rng::normal3(&mut r) * 3.0,
        };
        let mut dir = ErrorState::from_fn(|_, _| rng::normal(&mut r));
        dir.fixed_rows_mut::<6>(idx::CAM_ROT).fill(0.0);
        let dir = dir.normalize();
        let r3 = linearization_residual(&truth, &imu, &dir, 1e-3);
        let r4 = linearization_residual(&truth, &imu, &dir, 1e-4);
        worst_ratio = worst_ratio.max(r4 / r3);
        for c in [r3 / 1e-6, r4 / 1e-8] {
            c_range = (c_range.0.min(c), c_range.1.max(c));
        }
    }

    let mut hc = 0.0f64;
    for _ in 0..50 {
        let s = random_state(&mut r);
        let w = rng::normal3(&mut r);
        let h = camera_jacobian(&s, &w).dense();
        let d = 1e-6;
        for j in 0..idx::DIM {
            let mut e = ErrorState::zeros();
            e[j] = d;
            let fd = (camera_prediction(&retract(&s, &e), &w) - camera_prediction(&retract(&s, &(-e)), &w)) / (2.0 * d);
            hc = hc.max((fd - h.column(j)).amax());
        }
    }
    // quadratic residual: r(1e-4)/r(1e-3) near 1e-2; linear would give 1e-1
    let pass = worst_ratio < 0.02 && hc < 1e-5;
    line(
        pass,
        format!(
            "A: max r(1e-4)/r(1e-3) {worst_ratio:.4} (<0.02), r/ε² in [{:.2}, {:.2}]; H_c vs finite differences {hc:.1e} (<1e-5)",
            c_range.0, c_range.1
        ),
    )
}

fn noiseless() -> Line {
    let mut cfg = ExperimentConfig::default();
    cfg.filter_noise = Some(NoiseConfig::default());
    cfg.scenario.noise = NoiseConfig::zero([0.0, 0.0, -9.81]);
    cfg.cam_rotation_offset = [0.0; 3];
    cfg.cam_position_offset = [0.0; 3];
    let (mut innov, mut rmse, mut ok) = (0.0f64, 0.0f64, true);
    for v in [FilterVariant::CameraOn, FilterVariant::CameraOff] {
        let m = run_experiment(&cfg, v).unwrap();
        ok &= m.diverged.is_none() && m.kinematic_updates > 0;
        innov = innov.max(m.max_kinematic_innovation).max(m.max_camera_innovation);
        rmse = rmse.max(m.max_velocity_rmse());
    }
    line(
        ok && innov < 1e-8 && rmse < 1e-6,
        format!("35 s, both variants: max innovation {innov:.1e} (<1e-8), velocity RMSE {rmse:.1e} m/s (<1e-6)"),
    )
}

fn slip() -> Line {
    let mut wins = 0;
    let (mut on_worst, mut drift_worst) = (0.0f64, 0.0f64);
    let mut off_best = f64::INFINITY;
    for seed in 0..20 {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.seed = seed;
        cfg.scenario.slip_windows = vec![SlipWindow {
            start: 15.0,
            end: 17.0,
            velocity: [0.3, 0.0, 0.0],
        }];
        let on = run_experiment(&cfg, FilterVariant::CameraOn).unwrap();
        let off = run_experiment(&cfg, FilterVariant::CameraOff).unwrap();
        if on.max_velocity_rmse() < off.max_velocity_rmse() {
            wins += 1;
        }
        on_worst = on_worst.max(on.max_velocity_rmse());
        off_best = off_best.min(off.max_velocity_rmse());
        drift_worst = drift_worst.max(on.horizontal_drift_fraction);
    }
    line(
        on_worst < 0.08 && wins == 20 && drift_worst < 0.05,
        format!(
            "camera_on worst per-axis RMSE {on_worst:.4} m/s (<0.08), lower than camera_off on {wins}/20 (best camera_off {off_best:.4}), drift {:.2}% (<5%)",
            100.0 * drift_worst
        ),
    )
}

fn extrinsic_runs(window: usize) -> (f64, f64, f64) {
    let (mut rot, mut pos, mut env) = (0.0f64, 0.0f64, 1.0f64);
    for seed in 0..3 {
        let mut cfg = ExperimentConfig::default();
        cfg.scenario.seed = seed;
        cfg.scenario.duration = 60.0;
        cfg.filter.tuner_window = window;
        let m = run_experiment(&cfg, FilterVariant::CameraOn).unwrap();
        rot = rot.max(m.final_extrinsic_rotation_deg.unwrap_or(f64::INFINITY));
        pos = pos.max(m.final_extrinsic_position_m.unwrap_or(f64::INFINITY));
        env = env.min(m.extrinsic_envelope_fraction.unwrap_or(0.0));
    }
    (rot, pos, env)
}

fn extrinsic() -> Line {
    let (rot, pos, env) = extrinsic_runs(FilterConfig::default().tuner_window);
    let (rot50, pos50, env50) = extrinsic_runs(50);
    line(
        rot < 1.0 && pos < 0.01 && env >= 0.95,
        format!(
            "60 s, seeds 0-2, window 5: {rot:.3}° (<1), {:.2} cm (<1), envelope {:.1}% (≥95%); window 50: {rot50:.3}°, {:.2} cm, {:.1}%",
            100.0 * pos,
            100.0 * env,
            100.0 * pos50,
            100.0 * env50
        ),
    )
}

fn observability() -> Line {
    let cfg = ExperimentConfig::default();
    let mut dyn_null = Vec::new();
    let mut disc = (0.0f64, 0.0f64, usize::MAX);
    for t in [5.0, 10.0, 15.0, 20.0] {
        let o = cmd_observability(&cfg, CaseArg::Dynamic, t, 100).unwrap();
        dyn_null.push(o.continuous.nullity);
        let d = o.discrete.unwrap();
        disc = (disc.0.max(d.yaw_residual), disc.1.max(d.position_residual), disc.2.min(d.cam_position_rank));
    }
    let st = cmd_observability(&cfg, CaseArg::Static, 10.0, 100).unwrap().continuous.nullity;
    let mv = cmd_observability(&cfg, CaseArg::ZeroOmegaMoving, 10.0, 100).unwrap().continuous.nullity;
    let pass = dyn_null.iter().all(|&n| n == 5) && st == 10 && mv == 8 && disc.0 < 1e-8 && disc.1 < 1e-8 && disc.2 == 3;
    line(
        pass,
        format!(
            "nullity dynamic {dyn_null:?} (5), static {st} (10), ω=0 moving {mv} (8); discrete yaw {:.1e} position {:.1e} (<1e-8), p_c rank {} (3)",
            disc.0, disc.1, disc.2
        ),
    )
}

fn outlier_gate() -> Line {
    let mut r = rng::substream(5, 0);
    let cfg = FilterConfig::default();
    let noise = NoiseConfig::default();
    let rho = cfg.gate_threshold;
    let mut filter = FilterInstance::new(cfg, noise.clone()).unwrap();
    let (mut mismatch, mut rejected, mut untouched, mut chi2_err) = (0, 0, 0, 0.0f64);
    let cases = 10_000;
    for _ in 0..cases {
        let state = random_state(&mut r);
        let l = SMatrix::<f64, 21, 21>::from_fn(|_, _| rng::normal(&mut r) * 0.1);
        let p: CovarianceMatrix = l * l.transpose() + CovarianceMatrix::identity() * 1e-3;
        filter.reset(state, p);
        let scale = 10f64.powf(-2.0 + 3.0 * rng::uniform(&mut r));
        let y = state.body_velocity() + rng::normal3(&mut r) * scale;
        let out = filter.kinematic_update(&KinematicObservation { y_vel: y }).unwrap();

        // dense oracle: z = R̂y − v̂, H = [0, −I, 0, …], S = HPHᵀ + R̂ C R̂ᵀ
        let rot = state.rotation();
        let z = rot * y - state.velocity();
        let mut h = SMatrix::<f64, 3, 21>::zeros();
        h.fixed_view_mut::<3, 3>(0, idx::VEL).copy_from(&(-Matrix3::identity()));
        let s = h * p * h.transpose() + rot * noise.contact * rot.transpose();
        let chi2 = (z.transpose() * s.try_inverse().unwrap() * z)[0];
        chi2_err = chi2_err.max((out.chi2 - chi2).abs() / chi2.max(1.0));
        if out.accepted != (chi2 <= rho) {
            mismatch += 1;
        }
        if chi2 > rho {
            rejected += 1;
            if *filter.state() == state && *filter.covariance() == p {
                untouched += 1;
            }
        }
    }
    line(
        mismatch == 0 && untouched == rejected && rejected > 0 && chi2_err < 1e-9,
        format!(
            "{cases} cases: {mismatch} decision mismatches, {rejected} outliers (chi2 > {rho}) all rejected with state untouched: {}, chi2 rel. error {chi2_err:.1e}",
            untouched == rejected
        ),
    )
}

fn population_cov(samples: &[Vector6<f64>], floor: f64) -> Matrix6<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Vector6<f64>>() / n;
    let mut c = Matrix6::identity() * floor;
    for s in samples {
        c += (s - mean) * (s - mean).transpose() / n;
    }
    c
}

fn tuner() -> Line {
    let mut r = rng::substream(6, 0);
    let l = Matrix6::from_fn(|i, j| if i >= j { 0.02 * (1.0 + rng::uniform(&mut r)) } else { 0.0 });
    let sigma = l * l.transpose();
    let mean = Vector6::from_fn(|_, _| rng::normal(&mut r));
    let draw = |r: &mut SimRng, f: f64| mean + l * Vector6::from_fn(|_, _| rng::normal(r)) * f;

    let trials = 100;
    let mut errs = Vec::new();
    for _ in 0..trials {
        let mut t = NoiseTuner::new(200, 0.0);
        for _ in 0..400 {
            t.push(draw(&mut r, 1.0));
        }
        errs.push((t.covariance() - sigma).norm() / sigma.norm());
    }
    errs.sort_by(f64::total_cmp);
    let within = errs.iter().filter(|&&e| e < 0.2).count();

    // step change: Σ → 100 Σ; after 5 samples the window holds only new ones
    let mut memory = 0.0f64;
    let mut ratio = 0.0;
    let steps = 200;
    for _ in 0..steps {
        let mut t = NoiseTuner::new(5, 1e-8);
        for _ in 0..50 {
            t.push(draw(&mut r, 1.0));
        }
        let fresh: Vec<_> = (0..5).map(|_| draw(&mut r, 10.0)).collect();
        for s in &fresh {
            t.push(*s);
        }
        let c = t.covariance();
        memory = memory.max((c - population_cov(&fresh, 1e-8)).norm() / c.norm());
        ratio += c.trace() / (100.0 * sigma.trace()) / steps as f64;
    }
    line(
        within * 100 >= 95 * trials && memory < 1e-12 && (0.6..1.0).contains(&ratio),
        format!(
            "window 200: {within}/{trials} trials within 20% Frobenius (median {:.1}%, worst {:.1}%); window 5 after a 100× step: old samples gone after 5 pushes (rel. {memory:.0e}), mean trace ratio {ratio:.2} (≈0.8 for n=5)",
            100.0 * errs[trials / 2],
            100.0 * errs[trials - 1]
        ),
    )
}

fn estimator(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_estimator"))
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> (usize, bool) {
    let mut names: Vec<_> = fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let same = names
        .iter()
        .all(|n| fs::read(a.join(n)).ok() == fs::read(b.join(n)).ok());
    (names.len(), same)
}

fn determinism() -> Line {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, rep) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("replay"));
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let ran = estimator(&["sim", "--seed", "7", "--out", &s(&a)])
        && estimator(&["sim", "--seed", "7", "--out", &s(&b)])
        && estimator(&["replay", "--seed", "7", "--logs", &s(&a), "--out", &s(&rep)]);
    if !ran {
        return line(false, "estimator exited with an error".into());
    }
    let (files, same) = same_files(&a, &b);
    let replay_same = fs::read(a.join("estimates.csv")).unwrap() == fs::read(rep.join("estimates.csv")).unwrap();
    line(
        same && replay_same && files > 0,
        format!("sim twice: {files} files byte-identical: {same}; replay estimates.csv bit-identical: {replay_same}"),
    )
}

fn main() {
    let checks: [(&str, f64, fn() -> Line); 11] = [
        ("lie_group_suite", 5.0, lie_suite),
        ("group_affine_dynamics", f64::INFINITY, group_affine),
        ("log_linear_error", 10.0, log_linear),
        ("jacobian_oracles", f64::INFINITY, jacobians),
        ("noiseless_closed_loop", f64::INFINITY, noiseless),
        ("slip_robustness", 60.0, slip),
        ("extrinsic_calibration", f64::INFINITY, extrinsic),
        ("observability_ranks", 10.0, observability),
        ("outlier_gate", f64::INFINITY, outlier_gate),
        ("noise_tuner", f64::INFINITY, tuner),
        ("determinism", f64::INFINITY, determinism),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let start = Instant::now();
        let l = check();
        let secs = start.elapsed().as_secs_f64();
        let pass = l.pass && secs < budget;
        if !pass {
            failed += 1;
        }
        let limit = if budget.is_finite() { format!(", limit {budget} s") } else { String::new() };
        println!("{} {name}: {} [{secs:.2} s{limit}]", if pass { "PASS" } else { "FAIL" }, l.detail);
    }
    println!("acceptance: {} of {} criteria pass", checks.len() - failed, checks.len());
}
