//! The four commands: train, track, sweep, demo. Each validates its full
//! configuration before touching the output directory, writes a resolved
//! config copy next to its outputs, and renders plots from the emitted
//! files rather than from in-memory state.

use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rctrack_core::error::Error as CoreError;
use rctrack_core::logio::{Channel, RunLog};
use rctrack_core::tracking::{
    lengths_cell, noise_cell, prepare_series, run_tracking, SweepCell, SweepResult,
};
use rctrack_core::trajectories::{
    circle, figure_eight, limit_speed, lorenz, mackey_glass, read_path, rescale_to_workspace,
    LorenzConfig, MackeyGlassConfig,
};
use rctrack_core::training::fit_controller;
use rctrack_core::{ArmParams64, EsnController64, ReferencePath64, RunResult64, TrackConfig64};

use crate::config::{ArmSection, ExperimentConfig, SweepSection};
use crate::plots;
use crate::CliError;

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub controller: Option<PathBuf>,
    pub trajectory: Option<String>,
    pub speed: Option<f64>,
    pub sigma_d: Option<f64>,
    pub sigma_m: Option<f64>,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Circle,
    FigureEight,
    Lorenz,
    MackeyGlass,
    File,
}

fn parse_kind(s: &str) -> Option<Kind> {
    match s {
        "circle" => Some(Kind::Circle),
        "figure-eight" | "figure8" | "fig8" => Some(Kind::FigureEight),
        "lorenz" => Some(Kind::Lorenz),
        "mackey-glass" | "mackeyglass" | "mg" => Some(Kind::MackeyGlass),
        "file" => Some(Kind::File),
        _ => None,
    }
}

impl Overrides {
    /// Everything except the arm geometry, which needs the per-command base
    /// (config section for train, controller file for track).
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(c) = &self.controller {
            cfg.controller = Some(c.clone());
        }
        if let Some(t) = &self.trajectory {
            if parse_kind(t).is_some() {
                cfg.trajectory.kind = t.clone();
            } else if Path::new(t).exists() {
                cfg.trajectory.kind = "file".into();
                cfg.trajectory.path = Some(PathBuf::from(t));
            } else {
                return Err(CliError::Config(format!(
                    "--trajectory {t:?} is neither a known kind (circle, figure-eight, \
                     lorenz, mackey-glass) nor an existing file"
                )));
            }
        }
        if let Some(v) = self.speed {
            cfg.trajectory.speed = v;
        }
        if let Some(v) = self.sigma_d {
            cfg.tracking.sigma_d = v;
        }
        if let Some(v) = self.sigma_m {
            cfg.tracking.sigma_m = v;
        }
        Ok(())
    }

    /// Flag lengths replace the links and put the mass centers at midlink,
    /// like the mismatch sweep does.
    fn apply_arm(&self, arm: &mut ArmSection) {
        if let Some(l1) = self.l1 {
            arm.l1 = l1;
            arm.lc1 = l1 / 2.0;
        }
        if let Some(l2) = self.l2 {
            arm.l2 = l2;
            arm.lc2 = l2 / 2.0;
        }
    }
}

fn load_or_default(config: &Option<PathBuf>) -> Result<ExperimentConfig, CliError> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn require_out(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.out.clone().ok_or_else(|| {
        CliError::Config("no output directory: pass --out or set `out`".into())
    })
}

fn config_err(e: CoreError) -> CliError {
    CliError::Config(e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text)
        .map_err(|e| CliError::Runtime(format!("write {}: {e}", path.display())))
}

fn create_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::Runtime(format!("create {}: {e}", out.display())))
}

/// Builds the reference path: generate or load, shrink into the plant
/// workspace, cap the speed. Returns at least `n` samples.
fn build_reference(
    cfg: &ExperimentConfig,
    n: usize,
    dt: f64,
    plant: &ArmParams64,
) -> Result<ReferencePath64, CliError> {
    let tr = &cfg.trajectory;
    let kind = parse_kind(&tr.kind).ok_or_else(|| {
        CliError::Config(format!(
            "`trajectory.kind` {:?} is not one of circle, figure-eight, lorenz, \
             mackey-glass, file",
            tr.kind
        ))
    })?;
    let raw = match kind {
        Kind::Circle => circle(n, dt, tr.radius, tr.period).map_err(config_err)?,
        Kind::FigureEight => figure_eight(n, dt, tr.a, tr.b, tr.period).map_err(config_err)?,
        Kind::Lorenz => lorenz(n, dt, &LorenzConfig::default()).map_err(config_err)?,
        Kind::MackeyGlass => {
            mackey_glass(n, dt, &MackeyGlassConfig::default()).map_err(config_err)?
        }
        Kind::File => {
            let file = tr.path.as_ref().ok_or_else(|| {
                CliError::Config("`trajectory.path` is required for kind = \"file\"".into())
            })?;
            load_trajectory_file(file, dt)?
        }
    };
    let fitted = rescale_to_workspace(&raw, plant, tr.margin).map_err(config_err)?;
    if tr.speed > 0.0 {
        limit_speed(&fitted, tr.speed).map_err(config_err)
    } else {
        Ok(fitted)
    }
}

/// Accepts the library's headered path format or a bare two-column text
/// file (whitespace or comma separated), which gets the run's `dt`.
fn load_trajectory_file(file: &Path, dt: f64) -> Result<ReferencePath64, CliError> {
    let runtime = |msg: String| CliError::Runtime(format!("{}: {msg}", file.display()));
    let text = fs::read_to_string(file).map_err(|e| runtime(e.to_string()))?;
    if text.starts_with("# rctrack-path") {
        let path: ReferencePath64 =
            read_path(BufReader::new(text.as_bytes())).map_err(|e| runtime(e.to_string()))?;
        if (path.dt - dt).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "trajectory file {} has dt={}, the run uses dt={dt}",
                file.display(),
                path.dt
            )));
        }
        return Ok(path);
    }
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty());
        let parse = |tok: Option<&str>| -> Result<f64, CliError> {
            tok.and_then(|t| t.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| runtime(format!("line {}: expected two numbers", ln + 1)))
        };
        let x = parse(it.next())?;
        let y = parse(it.next())?;
        if it.next().is_some() {
            return Err(runtime(format!("line {}: expected exactly two columns", ln + 1)));
        }
        points.push([x, y]);
    }
    if points.len() < 2 {
        return Err(runtime("fewer than two trajectory points".into()));
    }
    let name = file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "file".into());
    Ok(ReferencePath64 { points, dt, name })
}

fn load_controller(cfg: &ExperimentConfig) -> Result<EsnController64, CliError> {
    let path = cfg.controller.as_ref().ok_or_else(|| {
        CliError::Config("no controller file: pass --controller or set `controller`".into())
    })?;
    if let Some(dt) = cfg.dt {
        // The loop steps at the controller's training dt; a conflicting
        // config is a mistake, not an override.
        let c = EsnController64::load(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        if (c.dt - dt).abs() > 1e-12 {
            return Err(CliError::Config(format!(
                "config dt={dt} but {} was trained at dt={}",
                path.display(),
                c.dt
            )));
        }
        return Ok(c);
    }
    EsnController64::load(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_train(config: Option<PathBuf>, ov: Overrides) -> Result<(), CliError> {
    let config = config.ok_or_else(|| {
        CliError::Config("train needs --config with a `[training]` section".into())
    })?;
    let mut cfg = ExperimentConfig::load(&config)?;
    ov.apply(&mut cfg)?;
    let mut arm_section = cfg.arm.unwrap_or_default();
    ov.apply_arm(&mut arm_section);
    cfg.arm = Some(arm_section);

    let dt = cfg.require_dt()?;
    let section = cfg.training.ok_or_else(|| {
        CliError::Config("`[training]` section is required for train".into())
    })?;
    let tc = section.to_config(dt, cfg.seed)?;
    tc.validate().map_err(config_err)?;
    let arm = arm_section.to_params();
    arm.validate().map_err(config_err)?;
    let esn = cfg.esn.to_params(cfg.seed);
    esn.validate().map_err(config_err)?;
    let out = require_out(&cfg)?;

    // Everything is validated; only now touch the disk.
    create_out_dir(&out)?;
    let mut resolved = cfg.clone();
    resolved.training = Some(section);
    resolved.out = Some(out.clone());
    write_file(&out.join("resolved_config.toml"), &resolved.resolved_toml()?)?;

    let controller = fit_controller(&arm, &esn, &tc)
        .map_err(|e| CliError::Runtime(format!("training failed: {e}")))?;
    let ctrl_path = out.join("controller.esn");
    controller
        .save(&ctrl_path)
        .map_err(|e| CliError::Runtime(format!("save {}: {e}", ctrl_path.display())))?;

    let m = &controller.meta;
    let report = format!(
        "controller: {}\nepisodes: {} fitted, {} held out, {} redrawn\n\
         heldout torque rmse: {:.6} N m\nworkspace coverage: {:.4}\nwall time: {:.2} s\n",
        ctrl_path.display(),
        m.episodes - m.heldout_episodes,
        m.heldout_episodes,
        m.redraws,
        m.heldout_rmse,
        m.coverage,
        m.train_seconds
    );
    write_file(&out.join("train_report.txt"), &report)?;
    print!("{report}");
    Ok(())
}

/// Shared by track and demo: closes the loop and writes the run artifacts.
/// Returns the result and the log stem.
fn track_into(
    cfg: &ExperimentConfig,
    controller: &EsnController64,
    plant: ArmParams64,
    out: &Path,
) -> Result<(RunResult64, PathBuf), CliError> {
    plant.validate().map_err(config_err)?;
    let mut track_cfg: TrackConfig64 = cfg.tracking.to_config(plant, cfg.seed);
    track_cfg.validate().map_err(config_err)?;
    let path = build_reference(cfg, track_cfg.test_len, controller.dt, &plant)?;
    // Generated references always cover the full window; a trajectory file
    // sets its own length, so the scored window shrinks to what it offers.
    if path.len() < track_cfg.test_len {
        println!(
            "reference holds {} samples; scoring {} steps instead of {}",
            path.len(),
            path.len(),
            track_cfg.test_len
        );
        track_cfg.test_len = path.len();
    }
    let start = plant.forward_kinematics(track_cfg.initial_q.0, track_cfg.initial_q.1);
    let series = prepare_series(&path, &controller.arm, start, track_cfg.bridge_len)
        .map_err(|e| CliError::Runtime(format!("reference derivation: {e}")))?;
    let run = run_tracking(controller, &track_cfg, &series)
        .map_err(|e| CliError::Runtime(format!("tracking run: {e}")))?;

    let labels_y = ["cx", "cy", "qd1", "qd2"];
    let mut log = RunLog {
        dt: controller.dt,
        seed: cfg.seed,
        channels: vec![
            Channel::with_labels("desired", &labels_y, run.desired.clone()),
            Channel::with_labels("actual", &labels_y, run.actual.clone()),
            Channel::with_labels(
                "states",
                &["cx", "cy", "q1", "q2", "qd1", "qd2", "qdd1", "qdd2"],
                run.states.clone(),
            ),
            Channel::with_labels("torques", &["tau1", "tau2"], run.torques.clone()),
        ],
        extra: Default::default(),
    };
    let x = &mut log.extra;
    x.insert("trajectory".into(), path.name.clone());
    x.insert("bridge_len".into(), run.bridge_len.to_string());
    x.insert("test_len".into(), track_cfg.test_len.to_string());
    x.insert("rmse_position".into(), format!("{:.6}", run.rmse_position));
    x.insert("rmse_full".into(), format!("{:.6}", run.rmse_full));
    x.insert("success".into(), run.success.to_string());
    x.insert(
        "diverged".into(),
        run.diverged.map_or("none".into(), |s| s.to_string()),
    );
    x.insert("sigma_d".into(), format!("{}", track_cfg.noise.sigma_d));
    x.insert("sigma_m".into(), format!("{}", track_cfg.noise.sigma_m));
    x.insert("noise_seed".into(), track_cfg.noise.seed.to_string());
    x.insert("plant_l1".into(), format!("{}", plant.l1));
    x.insert("plant_l2".into(), format!("{}", plant.l2));

    let stem = out.join("run_log");
    log.save(&stem)
        .map_err(|e| CliError::Runtime(format!("write run log: {e}")))?;

    // The plot comes from the files just written, not from memory.
    let reread = RunLog::load(&stem)
        .map_err(|e| CliError::Runtime(format!("reread run log: {e}")))?;
    write_file(&out.join("track_plot.svg"), &plots::track_plot(&reread)?)?;

    let threshold = track_cfg.success_rmse_factor * (plant.l1 + plant.l2);
    let summary = format!(
        "trajectory: {}\nsteps: {} bridge + {} scored\nrmse_position: {:.6} m\n\
         rmse_full: {:.6}\nsuccess: {} (threshold {:.4} m)\ndiverged: {}\n",
        path.name,
        run.bridge_len,
        track_cfg.test_len,
        run.rmse_position,
        run.rmse_full,
        run.success,
        threshold,
        run.diverged.map_or("no".into(), |s| format!("at step {s}")),
    );
    write_file(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok((run, stem))
}

pub fn cmd_track(config: Option<PathBuf>, ov: Overrides) -> Result<(), CliError> {
    let mut cfg = load_or_default(&config)?;
    ov.apply(&mut cfg)?;
    let controller = load_controller(&cfg)?;
    // The plant defaults to the geometry the controller was trained on;
    // an explicit [arm] section or length flags create a mismatch.
    let mut arm_section = cfg
        .arm
        .unwrap_or_else(|| arm_section_of(&controller.arm));
    ov.apply_arm(&mut arm_section);
    cfg.arm = Some(arm_section);
    cfg.dt = Some(controller.dt);
    let out = require_out(&cfg)?;
    create_out_dir(&out)?;
    let resolved = {
        let mut r = cfg.clone();
        r.out = Some(out.clone());
        r.resolved_toml()?
    };
    write_file(&out.join("resolved_config.toml"), &resolved)?;

    let (run, _) = track_into(&cfg, &controller, arm_section.to_params(), &out)?;
    if let Some(step) = run.diverged {
        return Err(CliError::Tracking(format!("run diverged at step {step}")));
    }
    if !run.success {
        return Err(CliError::Tracking(format!(
            "rmse_position {:.6} m is above the success threshold",
            run.rmse_position
        )));
    }
    Ok(())
}

fn arm_section_of(a: &ArmParams64) -> ArmSection {
    ArmSection {
        m1: a.m1,
        m2: a.m2,
        l1: a.l1,
        l2: a.l2,
        lc1: a.lc1,
        lc2: a.lc2,
        i1: a.i1,
        i2: a.i2,
    }
}

/// One finished sweep cell in the progress manifest.
#[derive(Serialize, Deserialize)]
struct CellRecord {
    i: usize,
    j: usize,
    x: f64,
    y: f64,
    /// None encodes an all-diverged (NaN) cell; JSON has no NaN.
    mean_rmse: Option<f64>,
    std_rmse: Option<f64>,
    n_ok: usize,
    n_failed: usize,
    infeasible: bool,
}

impl CellRecord {
    fn from_cell(i: usize, j: usize, c: &SweepCell) -> Self {
        let opt = |v: f64| if v.is_nan() { None } else { Some(v) };
        Self {
            i,
            j,
            x: c.x,
            y: c.y,
            mean_rmse: opt(c.mean_rmse),
            std_rmse: opt(c.std_rmse),
            n_ok: c.n_ok,
            n_failed: c.n_failed,
            infeasible: c.infeasible,
        }
    }

    fn into_cell(self) -> SweepCell {
        SweepCell {
            x: self.x,
            y: self.y,
            mean_rmse: self.mean_rmse.unwrap_or(f64::NAN),
            std_rmse: self.std_rmse.unwrap_or(f64::NAN),
            n_ok: self.n_ok,
            n_failed: self.n_failed,
            infeasible: self.infeasible,
        }
    }
}

#[derive(Serialize, Deserialize, PartialEq)]
struct ManifestHeader {
    kind: String,
    x: Vec<f64>,
    y: Vec<f64>,
    realizations: usize,
    seed: u64,
    test_len: usize,
    trajectory: String,
}

fn default_grids(kind: &str) -> (Vec<f64>, Vec<f64>) {
    match kind {
        "noise" => (
            // Disturbance levels 0 and 10^{-1..1}; observation noise 0 and
            // 10^{-2..-0.5}.
            vec![0.0, 0.1, 1.0, 10f64.sqrt(), 10.0],
            vec![0.0, 0.01, 10f64.powf(-1.5), 0.1, 10f64.powf(-0.5)],
        ),
        _ => (
            vec![0.3, 0.4, 0.5, 0.6, 0.7],
            vec![0.3, 0.4, 0.5, 0.6, 0.7],
        ),
    }
}

pub fn cmd_sweep(
    config: Option<PathBuf>,
    kind_flag: Option<String>,
    ov: Overrides,
) -> Result<(), CliError> {
    let mut cfg = load_or_default(&config)?;
    ov.apply(&mut cfg)?;
    let mut section: SweepSection = cfg.sweep.clone().unwrap_or_default();
    if let Some(k) = kind_flag {
        section.kind = k;
    }
    if section.kind != "noise" && section.kind != "lengths" {
        return Err(CliError::Config(format!(
            "`sweep.kind` must be noise or lengths, got {:?}",
            section.kind
        )));
    }
    if section.realizations == 0 {
        return Err(CliError::Config("`sweep.realizations` must be at least 1".into()));
    }
    let (dx, dy) = default_grids(&section.kind);
    let xs = section.x.clone().unwrap_or(dx);
    let ys = section.y.clone().unwrap_or(dy);
    if xs.is_empty() || ys.is_empty() {
        return Err(CliError::Config("sweep grids must be non-empty".into()));
    }

    let controller = load_controller(&cfg)?;
    cfg.dt = Some(controller.dt);
    // Like track: the controller's own geometry unless overridden. Length
    // flags matter for the noise sweep; the lengths sweep replaces the
    // plant per cell anyway.
    let mut arm_section = cfg
        .arm
        .unwrap_or_else(|| arm_section_of(&controller.arm));
    ov.apply_arm(&mut arm_section);
    let plant = arm_section.to_params();
    plant.validate().map_err(config_err)?;
    cfg.arm = Some(arm_section);
    let mut track_cfg = cfg.tracking.to_config(plant, cfg.seed);
    track_cfg.validate().map_err(config_err)?;
    let out = require_out(&cfg)?;
    create_out_dir(&out)?;

    section.x = Some(xs.clone());
    section.y = Some(ys.clone());
    cfg.sweep = Some(section.clone());
    let resolved = {
        let mut r = cfg.clone();
        r.out = Some(out.clone());
        r.resolved_toml()?
    };
    write_file(&out.join("resolved_config.toml"), &resolved)?;

    // The reference is built once, in the nominal workspace; the lengths
    // sweep refits it per cell.
    let path = build_reference(&cfg, track_cfg.test_len, controller.dt, &controller.arm)?;
    if path.len() < track_cfg.test_len {
        println!(
            "reference holds {} samples; scoring {} steps instead of {}",
            path.len(),
            path.len(),
            track_cfg.test_len
        );
        track_cfg.test_len = path.len();
    }
    let start = plant.forward_kinematics(track_cfg.initial_q.0, track_cfg.initial_q.1);

    let header = ManifestHeader {
        kind: section.kind.clone(),
        x: xs.clone(),
        y: ys.clone(),
        realizations: section.realizations,
        seed: cfg.seed,
        test_len: track_cfg.test_len,
        trajectory: path.name.clone(),
    };
    let header_line = serde_json::to_string(&header)
        .map_err(|e| CliError::Runtime(format!("manifest encode: {e}")))?;
    let manifest_path = out.join("sweep_manifest.jsonl");
    let mut done: Vec<Option<SweepCell>> = vec![None; xs.len() * ys.len()];
    if manifest_path.exists() {
        let file = fs::File::open(&manifest_path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .transpose()
            .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?
            .unwrap_or_default();
        if first != header_line {
            return Err(CliError::Config(format!(
                "{} belongs to a different sweep; delete it or use another --out",
                manifest_path.display()
            )));
        }
        for (ln, line) in lines.enumerate() {
            let line =
                line.map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CellRecord = serde_json::from_str(&line).map_err(|e| {
                CliError::Runtime(format!("{} line {}: {e}", manifest_path.display(), ln + 2))
            })?;
            let slot = done
                .get_mut(rec.i * ys.len() + rec.j)
                .ok_or_else(|| {
                    CliError::Runtime(format!(
                        "{} line {}: cell ({}, {}) is outside the grid",
                        manifest_path.display(),
                        ln + 2,
                        rec.i,
                        rec.j
                    ))
                })?;
            *slot = Some(rec.into_cell());
        }
        println!(
            "resuming: {} of {} cells already done",
            done.iter().filter(|c| c.is_some()).count(),
            done.len()
        );
    } else {
        let mut f = fs::File::create(&manifest_path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
        writeln!(f, "{header_line}")
            .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
    }

    let series = if section.kind == "noise" {
        Some(
            prepare_series(&path, &controller.arm, start, track_cfg.bridge_len)
                .map_err(|e| CliError::Runtime(format!("reference derivation: {e}")))?,
        )
    } else {
        None
    };

    let mut manifest = fs::OpenOptions::new()
        .append(true)
        .open(&manifest_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
    for (i, &x) in xs.iter().enumerate() {
        for (j, &y) in ys.iter().enumerate() {
            let slot = i * ys.len() + j;
            if done[slot].is_some() {
                continue;
            }
            let cell = match &series {
                Some(series) => noise_cell(
                    &controller,
                    &track_cfg,
                    series,
                    x,
                    y,
                    (i, j),
                    section.realizations,
                ),
                None => lengths_cell(
                    &controller,
                    &track_cfg,
                    &path,
                    x,
                    y,
                    (i, j),
                    section.realizations,
                ),
            }
            .map_err(|e| CliError::Runtime(format!("cell ({x}, {y}): {e}")))?;
            let line = serde_json::to_string(&CellRecord::from_cell(i, j, &cell))
                .map_err(|e| CliError::Runtime(format!("manifest encode: {e}")))?;
            writeln!(manifest, "{line}")
                .and_then(|_| manifest.flush())
                .map_err(|e| CliError::Runtime(format!("{}: {e}", manifest_path.display())))?;
            println!(
                "cell {}={x} {}={y}: mean rmse {:.6} ({} ok, {} diverged){}",
                header.kind_x_name(),
                header.kind_y_name(),
                cell.mean_rmse,
                cell.n_ok,
                cell.n_failed,
                if cell.infeasible { " [infeasible]" } else { "" }
            );
            done[slot] = Some(cell);
        }
    }

    let sweep = SweepResult {
        x_name: header.kind_x_name().into(),
        y_name: header.kind_y_name().into(),
        cells: done.into_iter().map(|c| c.unwrap()).collect(),
        realizations: section.realizations,
    };
    let csv_path = out.join(format!("sweep_{}.csv", section.kind));
    write_file(&csv_path, &sweep.to_csv())?;

    // Heatmap from the CSV just written.
    let text = fs::read_to_string(&csv_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", csv_path.display())))?;
    let reread = SweepResult::from_csv(&text)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", csv_path.display())))?;
    write_file(
        &out.join(format!("sweep_{}.svg", section.kind)),
        &plots::heatmap_plot(&reread)?,
    )?;
    println!("wrote {}", csv_path.display());
    Ok(())
}

impl ManifestHeader {
    fn kind_x_name(&self) -> &'static str {
        if self.kind == "noise" {
            "sigma_d"
        } else {
            "l1"
        }
    }

    fn kind_y_name(&self) -> &'static str {
        if self.kind == "noise" {
            "sigma_m"
        } else {
            "l2"
        }
    }
}

/// Tiny end-to-end pipeline: trains a small controller, tracks a circle,
/// and leaves every artifact kind in one directory. Completion is the
/// point; the tracking quality of a controller this small is reported, not
/// judged.
pub fn cmd_demo(out: Option<PathBuf>, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed.unwrap_or(0);
    cfg.dt = Some(0.01);
    cfg.out = Some(out.unwrap_or_else(|| PathBuf::from("rctrack-demo")));
    cfg.esn.n_r = 50;
    cfg.training = Some(crate::config::TrainingSection {
        total_len: 6_000,
        episode_len: 200,
        washout: 20,
        tau_max: Some(1.0),
        smooth_sigma: 10.0,
        heldout_every: 10,
        seed: None,
    });
    cfg.tracking.test_len = 2_000;
    cfg.tracking.bridge_len = 200;

    let out = require_out(&cfg)?;
    create_out_dir(&out)?;
    write_file(&out.join("resolved_config.toml"), &cfg.resolved_toml()?)?;

    let dt = cfg.require_dt()?;
    let tc = cfg.training.clone().unwrap().to_config(dt, cfg.seed)?;
    let arm = ArmParams64::default();
    let esn = cfg.esn.to_params(cfg.seed);
    println!("training a small controller ({} steps)...", tc.total_len);
    let controller = fit_controller(&arm, &esn, &tc)
        .map_err(|e| CliError::Runtime(format!("training failed: {e}")))?;
    let ctrl_path = out.join("controller.esn");
    controller
        .save(&ctrl_path)
        .map_err(|e| CliError::Runtime(format!("save {}: {e}", ctrl_path.display())))?;
    println!(
        "heldout torque rmse {:.4} N m, coverage {:.3}",
        controller.meta.heldout_rmse, controller.meta.coverage
    );

    println!("tracking a circle for {} steps...", cfg.tracking.test_len);
    let (run, _) = track_into(&cfg, &controller, arm, &out)?;
    let _ = run;
    println!("demo artifacts in {}", out.display());
    Ok(())
}
