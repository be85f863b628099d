//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line (run with `cargo test --test acceptance --
//! --nocapture` to see them all). The criteria pin physics invariants,
//! reservoir properties, end-to-end tracking quality at the 2e5-step
//! training scale, robustness trends, and byte-level determinism.
//!
//! Criteria 3 and 4 state the tracking quality the approach is meant to
//! reach. The current trainer does not reach it at this scale (the README
//! documents the measured gap and what was tried); those tests report the
//! true numbers and fail rather than moving the thresholds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use rctrack_core::dynamics::{PlantState, TorqueCommand};
use rctrack_core::esn::{
    init_reservoir, spectral_radius, train_readout, update_state, EsnState,
};
use rctrack_core::tracking::{prepare_series, run_tracking, SweepResult};
use rctrack_core::trajectories::{
    circle, figure_eight, limit_speed, lorenz, mackey_glass, rescale_to_workspace,
    LorenzConfig, MackeyGlassConfig,
};
use rctrack_core::training::fit_controller;
use rctrack_core::{
    ArmParams64, EsnController64, EsnParams64, ReferencePath64, TrackConfig64, TrainConfig64,
};

const BIN: &str = env!("CARGO_BIN_EXE_rctrack");

/// Scratch root shared by the whole suite; named by pid so parallel
/// invocations cannot collide.
static WORK: LazyLock<PathBuf> = LazyLock::new(|| {
    let dir = std::env::temp_dir().join(format!("rctrack-acceptance-{}", std::process::id()));
    fs::create_dir_all(&dir).expect("create scratch dir");
    dir
});

/// Controller trained with every parameter at its default (master seed 0).
/// Criteria 3 and 4 evaluate exactly this artifact.
static DEFAULT_CTRL: LazyLock<PathBuf> = LazyLock::new(|| {
    let path = WORK.join("default_seed0.esn");
    let ctrl = fit_controller(
        &ArmParams64::default(),
        &EsnParams64::default(),
        &TrainConfig64::default(),
    )
    .expect("default training");
    ctrl.save(&path).expect("save controller");
    path
});

/// Controller from the short-episode training variant
/// (configs/train_tuned.toml): the best tracking configuration found so
/// far, used by the robustness-trend criteria which need a controller with
/// usable feedback gain.
static TUNED_CTRL: LazyLock<PathBuf> = LazyLock::new(|| {
    let path = WORK.join("tuned_seed0.esn");
    let cfg = TrainConfig64 {
        episode_len: 50,
        washout: 6,
        tau_max: 4.0,
        smooth_sigma: 5.0,
        ..TrainConfig64::default()
    };
    let ctrl = fit_controller(&ArmParams64::default(), &EsnParams64::default(), &cfg)
        .expect("tuned training");
    ctrl.save(&path).expect("save controller");
    path
});

fn verdict(criterion: &str, pass: bool, detail: &str) -> bool {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    pass
}

#[test]
fn c1_dynamics_suite() {
    let t0 = Instant::now();
    let p = ArmParams64::default();
    let mut rng = ChaCha12Rng::seed_from_u64(11);

    // Positive definiteness across the full elbow range.
    let mut pd_ok = true;
    for k in 0..10_000 {
        let q2 = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * k as f64 / 9_999.0;
        let m = p.mass_matrix(q2);
        if !(m[(0, 0)] > 0.0 && m.determinant() > 0.0) {
            pd_ok = false;
            break;
        }
    }

    // The inertial and Coriolis terms must cancel in the power balance:
    // dM/dt - 2C is skew-symmetric at every state.
    let mut skew_max: f64 = 0.0;
    for _ in 0..200 {
        let q2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let qd1 = rng.random_range(-3.0..3.0);
        let qd2 = rng.random_range(-3.0..3.0);
        let h = 1e-6;
        let m_dot = (p.mass_matrix(q2 + h * qd2) - p.mass_matrix(q2 - h * qd2)) / (2.0 * h);
        let s = m_dot - 2.0 * p.coriolis_matrix(q2, qd1, qd2);
        let sym = s + s.transpose();
        skew_max = skew_max.max(sym.amax());
    }

    // Without torque or friction the kinetic energy is conserved; the
    // integrator may drift only in its truncation order.
    let mut state = PlantState::new(&p, 0.4, 1.2, 1.5, -2.0);
    let e0 = p.kinetic_energy(&state);
    for _ in 0..10_000 {
        state = p.step(&state, TorqueCommand::zero(), 1e-4).unwrap();
    }
    let drift = ((p.kinetic_energy(&state) - e0) / e0).abs();

    // Forward/inverse kinematics round-trip through Cartesian space.
    let mut kin_max: f64 = 0.0;
    for _ in 0..1_000 {
        let q1 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let q2 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let (x, y) = p.forward_kinematics(q1, q2);
        let (r1, r2) = p.inverse_kinematics(x, y, None).unwrap();
        let (x2, y2) = p.forward_kinematics(r1, r2);
        kin_max = kin_max.max(((x - x2).powi(2) + (y - y2).powi(2)).sqrt());
    }

    let dt = t0.elapsed().as_secs_f64();
    let pass =
        pd_ok && skew_max < 1e-6 && drift < 1e-4 && kin_max < 1e-9 && dt < 10.0;
    let detail = format!(
        "mass matrix PD on 1e4 grid: {pd_ok}; |Mdot-2C skew residual| {skew_max:.2e}; \
         energy drift {drift:.2e}; kinematics round-trip {kin_max:.2e}; {dt:.1} s of 10 s"
    );
    assert!(verdict("c1 dynamics suite", pass, &detail), "{detail}");
}

#[test]
fn c2_reservoir_suite() {
    let t0 = Instant::now();
    let params = EsnParams64::default();
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let weights = init_reservoir(&params, &mut rng).unwrap();

    let rho = spectral_radius(&weights.w_r);
    let rho_err = (rho - 0.76).abs();

    // Echo-state property: two different initial states driven by one
    // input sequence converge.
    let n = params.n_r;
    let mut a = EsnState {
        r: nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
    };
    let mut b = EsnState {
        r: nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0)),
    };
    for _ in 0..500 {
        let u: [f64; 8] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        a = update_state(&weights, &a, &u, params.alpha);
        b = update_state(&weights, &b, &u, params.alpha);
    }
    let contraction = (&a.r - &b.r).amax();

    // The streaming ridge solver against the dense normal equations.
    let mut ridge_err: f64 = 0.0;
    for seed in 0..3 {
        let mut r2 = ChaCha12Rng::seed_from_u64(100 + seed);
        let x = nalgebra::DMatrix::from_fn(50, 500, |_, _| r2.random_range(-1.0..1.0));
        let y = nalgebra::DMatrix::from_fn(2, 500, |_, _| r2.random_range(-1.0..1.0));
        let beta = 7.5e-4;
        let w = train_readout(&x, &y, beta).unwrap();
        let gram = &x * x.transpose() + nalgebra::DMatrix::identity(50, 50) * beta;
        let oracle = &y * x.transpose() * gram.try_inverse().unwrap();
        ridge_err = ridge_err.max((w - oracle).amax());
    }

    let dt = t0.elapsed().as_secs_f64();
    let pass = rho_err < 1e-6 && contraction < 1e-6 && ridge_err < 1e-10 && dt < 30.0;
    let detail = format!(
        "spectral radius error {rho_err:.2e}; state contraction after 500 steps \
         {contraction:.2e}; ridge vs dense oracle {ridge_err:.2e}; {dt:.1} s of 30 s"
    );
    assert!(verdict("c2 reservoir suite", pass, &detail), "{detail}");
}

/// References exactly as the command line builds them: generated at the
/// control step, shrunk into the workspace with the default margin, capped
/// at the default end-effector speed.
fn reference(kind: &str, n: usize, dt: f64, arm: &ArmParams64) -> ReferencePath64 {
    let raw = match kind {
        "circle" => circle(n, dt, 0.8, 12.0).unwrap(),
        "figure-eight" => figure_eight(n, dt, 0.7, 0.35, 12.0).unwrap(),
        "lorenz" => lorenz(n, dt, &LorenzConfig::default()).unwrap(),
        "mackey-glass" => mackey_glass(n, dt, &MackeyGlassConfig::default()).unwrap(),
        other => panic!("unknown kind {other}"),
    };
    let fitted = rescale_to_workspace(&raw, arm, 0.1).unwrap();
    limit_speed(&fitted, 0.5).unwrap()
}

fn track_rmse(ctrl: &EsnController64, kind: &str) -> f64 {
    let cfg = TrackConfig64::default();
    let path = reference(kind, cfg.test_len, ctrl.dt, &ctrl.arm);
    let start = cfg
        .plant
        .forward_kinematics(cfg.initial_q.0, cfg.initial_q.1);
    let series = prepare_series(&path, &ctrl.arm, start, cfg.bridge_len).unwrap();
    run_tracking(ctrl, &cfg, &series).unwrap().rmse_position
}

#[test]
fn c3_periodic_tracking() {
    let t0 = Instant::now();
    let mut seed0 = (f64::NAN, f64::NAN);
    let mut successes = 0;
    for seed in 0..10u64 {
        let ctrl = if seed == 0 {
            EsnController64::load(&DEFAULT_CTRL).unwrap()
        } else {
            fit_controller(
                &ArmParams64::default(),
                &EsnParams64 {
                    seed,
                    ..EsnParams64::default()
                },
                &TrainConfig64 {
                    seed,
                    ..TrainConfig64::default()
                },
            )
            .unwrap()
        };
        let rc = track_rmse(&ctrl, "circle");
        let rf = track_rmse(&ctrl, "figure-eight");
        if seed == 0 {
            seed0 = (rc, rf);
        }
        if rc < 0.05 && rf < 0.05 {
            successes += 1;
        }
    }
    let dt = t0.elapsed().as_secs_f64();
    let pass = seed0.0 < 0.05 && seed0.1 < 0.05 && successes >= 8 && dt < 600.0;
    let detail = format!(
        "seed 0 rmse: circle {:.3} m, figure-eight {:.3} m (need < 0.05); \
         successes {successes}/10 (need >= 8); {dt:.0} s of 600 s",
        seed0.0, seed0.1
    );
    assert!(verdict("c3 periodic tracking", pass, &detail), "{detail}");
}

/// Runs the real binary so the artifacts (run log, overlay plot) are the
/// ones a user gets. Exit 3 just means the run missed the success
/// threshold, which c4 scores itself.
fn track_via_cli(ctrl: &Path, kind: &str, out: &Path) -> f64 {
    let status = Command::new(BIN)
        .args([
            "track",
            "--controller",
            ctrl.to_str().unwrap(),
            "--trajectory",
            kind,
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .expect("spawn rctrack");
    let code = status.status.code().unwrap_or(-1);
    assert!(
        code == 0 || code == 3,
        "track {kind} exited {code}: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_log.json")).unwrap()).unwrap();
    sidecar["extra"]["rmse_position"]
        .as_str()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn c4_chaotic_tracking() {
    let t0 = Instant::now();
    let ctrl = &*DEFAULT_CTRL;
    let lorenz_dir = WORK.join("c4_lorenz");
    let mg_dir = WORK.join("c4_mackey_glass");
    let rl = track_via_cli(ctrl, "lorenz", &lorenz_dir);
    let rm = track_via_cli(ctrl, "mackey-glass", &mg_dir);
    let plots_emitted = [&lorenz_dir, &mg_dir].iter().all(|d| {
        fs::metadata(d.join("track_plot.svg")).map_or(false, |m| m.len() > 10_000)
    });
    let dt = t0.elapsed().as_secs_f64();
    let pass = rl < 0.08 && rm < 0.08 && plots_emitted && dt < 600.0;
    let detail = format!(
        "rmse: lorenz {rl:.3} m, mackey-glass {rm:.3} m (need < 0.08); \
         overlay plots emitted: {plots_emitted}; {dt:.0} s of 600 s"
    );
    assert!(verdict("c4 chaotic tracking", pass, &detail), "{detail}");
}

const NOISE_GRID_X: [f64; 5] = [0.0, 0.1, 1.0, 3.1622776601683795, 10.0];
const NOISE_GRID_Y: [f64; 5] = [
    0.0,
    0.01,
    0.03162277660168379,
    0.1,
    0.31622776601683794,
];

fn run_sweep_cli(kind: &str, config_body: &str, ctrl: &Path, out: &Path) {
    let cfg_path = WORK.join(format!("sweep_{kind}_{}.toml", out.file_name().unwrap().to_str().unwrap()));
    fs::write(&cfg_path, config_body).unwrap();
    let status = Command::new(BIN)
        .args([
            "sweep",
            "--config",
            cfg_path.to_str().unwrap(),
            "--controller",
            ctrl.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ])
        .output()
        .expect("spawn rctrack");
    assert_eq!(
        status.status.code(),
        Some(0),
        "sweep failed: {}",
        String::from_utf8_lossy(&status.stderr)
    );
}

fn noise_sweep_config() -> String {
    format!(
        "seed = 0\n\n[trajectory]\nkind = \"lorenz\"\nspeed = 0.5\n\n\
         [sweep]\nkind = \"noise\"\nx = {:?}\ny = {:?}\nrealizations = 10\n",
        NOISE_GRID_X, NOISE_GRID_Y
    )
}

fn lengths_sweep_config() -> String {
    "seed = 0\n\n[trajectory]\nkind = \"lorenz\"\nspeed = 0.5\n\n\
     [sweep]\nkind = \"lengths\"\nx = [0.3, 0.4, 0.5, 0.6, 0.7]\n\
     y = [0.3, 0.4, 0.5, 0.6, 0.7]\nrealizations = 5\n"
        .into()
}

static NOISE_SWEEP: LazyLock<PathBuf> = LazyLock::new(|| {
    let dir = WORK.join("c5_noise");
    run_sweep_cli("noise", &noise_sweep_config(), &TUNED_CTRL, &dir);
    dir
});

static LENGTH_SWEEP: LazyLock<PathBuf> = LazyLock::new(|| {
    let dir = WORK.join("c6_lengths");
    run_sweep_cli("lengths", &lengths_sweep_config(), &TUNED_CTRL, &dir);
    dir
});

fn load_sweep(dir: &Path, kind: &str) -> SweepResult {
    let text = fs::read_to_string(dir.join(format!("sweep_{kind}.csv"))).unwrap();
    SweepResult::from_csv(&text).unwrap()
}

fn cell_mean(sweep: &SweepResult, x: f64, y: f64) -> f64 {
    sweep
        .cells
        .iter()
        .find(|c| (c.x - x).abs() < 1e-12 && (c.y - y).abs() < 1e-12)
        .unwrap_or_else(|| panic!("no cell ({x}, {y})"))
        .mean_rmse
}

#[test]
fn c5_noise_trends() {
    let t0 = Instant::now();
    let sweep = load_sweep(&NOISE_SWEEP, "noise");
    let base = cell_mean(&sweep, 0.0, 0.0);

    // Disturbance tolerance: mean RMSE stays within 3x of noise-free up to
    // sigma_d = 10^0.5.
    let d_means: Vec<f64> = NOISE_GRID_X[..4]
        .iter()
        .map(|&x| cell_mean(&sweep, x, 0.0))
        .collect();
    let d_ok = d_means.iter().all(|&m| m.is_finite() && m <= 3.0 * base);

    // Noise knee: past sigma_m = 10^-1 the error has grown at least 3x
    // (divergence counts as degradation).
    let knee = cell_mean(&sweep, 0.0, NOISE_GRID_Y[4]);
    let knee_ok = !knee.is_finite() || knee >= 3.0 * base;

    let dt = t0.elapsed().as_secs_f64();
    let pass = d_ok && knee_ok && dt < 1800.0;
    let detail = format!(
        "noise-free mean rmse {base:.3} m; rmse over sigma_d<=10^0.5: {:?} (cap {:.3}); \
         rmse at sigma_m=10^-0.5: {knee:.3} (knee needs >= {:.3}); {dt:.0} s of 1800 s",
        d_means
            .iter()
            .map(|m| (m * 1e3).round() / 1e3)
            .collect::<Vec<_>>(),
        3.0 * base,
        3.0 * base
    );
    assert!(verdict("c5 noise trends", pass, &detail), "{detail}");
}

#[test]
fn c6_length_mismatch_trend() {
    let t0 = Instant::now();
    let sweep = load_sweep(&LENGTH_SWEEP, "lengths");
    let grid = [0.3, 0.4, 0.5, 0.6, 0.7];
    let spread = |means: Vec<f64>| -> f64 {
        let lo = means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    };
    let along_l1 = spread(grid.iter().map(|&x| cell_mean(&sweep, x, 0.5)).collect());
    let along_l2 = spread(grid.iter().map(|&y| cell_mean(&sweep, 0.5, y)).collect());
    let dt = t0.elapsed().as_secs_f64();
    let pass = along_l1.is_finite() && along_l2.is_finite() && along_l1 < along_l2 && dt < 1800.0;
    let detail = format!(
        "mean-rmse spread along l1 (l2=0.5): {along_l1:.3} m; along l2 (l1=0.5): \
         {along_l2:.3} m (need l1 < l2); {dt:.0} s of 1800 s"
    );
    assert!(verdict("c6 length mismatch trend", pass, &detail), "{detail}");
}

#[test]
fn c7_determinism() {
    let t0 = Instant::now();

    // Rerun both sweeps under the same master seed; the CSVs must match to
    // the byte.
    let noise_again = WORK.join("c7_noise");
    run_sweep_cli("noise", &noise_sweep_config(), &TUNED_CTRL, &noise_again);
    let noise_same = fs::read(NOISE_SWEEP.join("sweep_noise.csv")).unwrap()
        == fs::read(noise_again.join("sweep_noise.csv")).unwrap();

    let lengths_again = WORK.join("c7_lengths");
    run_sweep_cli("lengths", &lengths_sweep_config(), &TUNED_CTRL, &lengths_again);
    let lengths_same = fs::read(LENGTH_SWEEP.join("sweep_lengths.csv")).unwrap()
        == fs::read(lengths_again.join("sweep_lengths.csv")).unwrap();

    // And the training artifact itself.
    let retrained = fit_controller(
        &ArmParams64::default(),
        &EsnParams64::default(),
        &TrainConfig64::default(),
    )
    .unwrap();
    let retrain_path = WORK.join("c7_default.esn");
    retrained.save(&retrain_path).unwrap();
    let ctrl_same = fs::read(&*DEFAULT_CTRL).unwrap() == fs::read(&retrain_path).unwrap();

    let dt = t0.elapsed().as_secs_f64();
    let pass = noise_same && lengths_same && ctrl_same;
    let detail = format!(
        "noise sweep CSV byte-identical: {noise_same}; lengths sweep CSV byte-identical: \
         {lengths_same}; retrained controller byte-identical: {ctrl_same}; {dt:.0} s"
    );
    assert!(verdict("c7 determinism", pass, &detail), "{detail}");
}
