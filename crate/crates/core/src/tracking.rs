//! Closed-loop deployment: bridging onto the reference, running the trained
//! controller against the plant, scoring the result, and the robustness
//! sweeps over noise levels and arm-length mismatch.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::dynamics::{
    apply_disturbance, observe, ArmParams, NoiseConfig, PlantState,
};
use crate::error::{Error, Result};
use crate::esn::{control_input, EsnController};
use crate::float::Float;
use crate::seeds::{derive_u64, rng_for};
use crate::trajectories::{
    derive_reference_series, rescale_to_workspace, ReferencePath, ReferenceSeries,
};

/// Margin kept between a rescaled reference and the workspace boundary.
const WORKSPACE_MARGIN: f64 = 0.1;

/// How a tracking run is conducted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackConfig<T> {
    /// Scored steps after the bridge.
    pub test_len: usize,
    /// Steps used to carry the end effector from its start onto the
    /// reference (see [`build_bridge`]).
    pub bridge_len: usize,
    pub noise: NoiseConfig<T>,
    /// The arm actually simulated. Differs from the controller's own
    /// geometry in the mismatch sweeps.
    pub plant: ArmParams<T>,
    /// Joint angles the plant starts from, at rest.
    pub initial_q: (T, T),
    /// A run is cut off once `|qd|` exceeds this bound.
    pub divergence_limit: T,
    /// Success means `rmse_position < factor * (l1 + l2)` of the plant.
    pub success_rmse_factor: f64,
    /// Master seed of the run; the noise stream is derived from it together
    /// with `noise.seed`.
    pub seed: u64,
}

impl<T: Float> Default for TrackConfig<T> {
    fn default() -> Self {
        Self {
            test_len: 25_000,
            bridge_len: 500,
            noise: NoiseConfig::default(),
            plant: ArmParams::default(),
            initial_q: (T::zero(), T::frac_pi_2()),
            divergence_limit: T::of(1e3),
            success_rmse_factor: 0.05,
            seed: 0,
        }
    }
}

impl<T: Float> TrackConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.test_len == 0 {
            return Err(Error::InvalidParam("test_len must be positive".into()));
        }
        if !self.divergence_limit.finite() || self.divergence_limit <= T::zero() {
            return Err(Error::InvalidParam(
                "divergence_limit must be positive".into(),
            ));
        }
        if !(self.success_rmse_factor > 0.0) {
            return Err(Error::InvalidParam(
                "success_rmse_factor must be positive".into(),
            ));
        }
        if !self.initial_q.0.finite() || !self.initial_q.1.finite() {
            return Err(Error::NonFinite {
                context: "initial joint angles",
            });
        }
        self.noise.validate()?;
        self.plant.validate()
    }
}

/// Everything a tracking run produces. All matrices have one column per
/// step; a diverged run is truncated at its last finite state.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult<T> {
    /// Full plant states, 8 rows (reporting order).
    pub states: DMatrix<T>,
    /// Noise-free observations of the plant, 4 rows. The controller itself
    /// saw the noisy versions; logs keep what the plant really did.
    pub actual: DMatrix<T>,
    /// Reference observations the controller was asked to reach, 4 rows.
    pub desired: DMatrix<T>,
    /// Commanded torques (before the disturbance), 2 rows. The final column
    /// is zero: the last state has no successor to steer to.
    pub torques: DMatrix<T>,
    /// Leading columns that belong to the bridge, excluded from the scores.
    pub bridge_len: usize,
    /// Root-mean-square end-effector position error over the post-bridge
    /// window, in meters. NaN when the run diverged.
    pub rmse_position: f64,
    /// Same window, all four observation components pooled.
    pub rmse_full: f64,
    /// Step index at which the state went non-finite or passed the velocity
    /// bound, if any.
    pub diverged: Option<usize>,
    pub success: bool,
}

/// Position RMSE between two 4-row observation logs, scored from column
/// `from` on: `sqrt(mean((cx - cx_d)^2 + (cy - cy_d)^2))`.
pub fn rmse_position<T: Float>(actual: &DMatrix<T>, desired: &DMatrix<T>, from: usize) -> f64 {
    let n = actual.ncols().min(desired.ncols());
    if from >= n {
        return f64::NAN;
    }
    let mut sum = 0.0;
    for t in from..n {
        let dx = (actual[(0, t)] - desired[(0, t)]).as_f64();
        let dy = (actual[(1, t)] - desired[(1, t)]).as_f64();
        sum += dx * dx + dy * dy;
    }
    (sum / (n - from) as f64).sqrt()
}

/// RMSE over all four observation components (position and joint velocity
/// pooled), scored from column `from` on. Reported alongside the position
/// figure, never mixed into it.
pub fn rmse_full<T: Float>(actual: &DMatrix<T>, desired: &DMatrix<T>, from: usize) -> f64 {
    let n = actual.ncols().min(desired.ncols());
    if from >= n {
        return f64::NAN;
    }
    let mut sum = 0.0;
    for t in from..n {
        for k in 0..4 {
            let d = (actual[(k, t)] - desired[(k, t)]).as_f64();
            sum += d * d;
        }
    }
    (sum / (n - from) as f64).sqrt()
}

/// Prepends a run-in bridge to a reference series: a straight Cartesian
/// segment from `start` to the first reference point, traversed with the
/// cosine ease profile `s(u) = (1 - cos(pi u)) / 2`, whose endpoint velocity
/// is zero. The combined path is re-derived as one piece with `params` (the
/// controller's own geometry), so joint velocities stay continuous across
/// the seam; the reference proper begins at column `bridge_len`.
///
/// A start already on the first reference point (within 1e-9) produces no
/// bridge columns.
pub fn build_bridge<T: Float>(
    start: (T, T),
    series: &ReferenceSeries<T>,
    bridge_len: usize,
    params: &ArmParams<T>,
) -> Result<ReferenceSeries<T>> {
    if series.bridge_len != 0 {
        return Err(Error::InvalidParam(
            "series already carries a bridge".into(),
        ));
    }
    if series.source.is_empty() {
        return Err(Error::SeriesTooShort { have: 0, need: 1 });
    }
    let first = series.source.points[0];
    let dist = ((start.0 - first[0]).powi(2) + (start.1 - first[1]).powi(2)).sqrt();
    if bridge_len == 0 || dist <= T::of(1e-9) {
        return Ok(series.clone());
    }
    let mut points = Vec::with_capacity(bridge_len + series.source.points.len());
    let len = T::of(bridge_len as f64);
    for k in 0..bridge_len {
        let u = T::of(k as f64) / len;
        let s = (T::one() - (T::pi() * u).cos()) / T::of(2.0);
        points.push([
            start.0 + (first[0] - start.0) * s,
            start.1 + (first[1] - start.1) * s,
        ]);
    }
    points.extend_from_slice(&series.source.points);
    let path = ReferencePath {
        points,
        dt: series.source.dt,
        name: series.source.name.clone(),
    };
    let mut bridged = derive_reference_series(&path, params).map_err(|e| match e {
        Error::UnreachablePoint { index, .. } if index < bridge_len => {
            Error::BridgeUnreachable { index }
        }
        other => other,
    })?;
    bridged.bridge_len = bridge_len;
    Ok(bridged)
}

/// Builds the reference series a tracking run consumes: derive the path with
/// the controller's geometry, then bridge it from the plant's actual start
/// position.
pub fn prepare_series<T: Float>(
    path: &ReferencePath<T>,
    controller_arm: &ArmParams<T>,
    start: (T, T),
    bridge_len: usize,
) -> Result<ReferenceSeries<T>> {
    let series = derive_reference_series(path, controller_arm)?;
    build_bridge(start, &series, bridge_len, controller_arm)
}

/// Runs the closed loop for `bridge + test_len` steps.
///
/// Per step `t`: the plant is observed (multiplicative noise), the input
/// `[y(t); y_d(t+dt)]` drives the reservoir, the readout torque (logged as
/// commanded) gains the additive disturbance and is applied over one step.
/// The reservoir state persists for the whole run and is reset only here at
/// the start. Scores compare the clean observation log against the
/// reference, both at the same column, from the first post-bridge column on.
pub fn run_tracking<T: Float>(
    controller: &EsnController<T>,
    cfg: &TrackConfig<T>,
    series: &ReferenceSeries<T>,
) -> Result<RunResult<T>> {
    cfg.validate()?;
    let total = cfg.test_len + series.bridge_len;
    if series.y_d.ncols() < total {
        return Err(Error::SeriesTooShort {
            have: series.y_d.ncols(),
            need: total,
        });
    }
    let desired = series.y_d.columns(0, total).into_owned();
    let mut states = DMatrix::zeros(8, total);
    let mut actual = DMatrix::zeros(4, total);
    let mut torques = DMatrix::zeros(2, total);
    let mut rng = rng_for(cfg.seed, "track/noise", &[cfg.noise.seed]);

    let mut plant = PlantState::at_rest(&cfg.plant, cfg.initial_q.0, cfg.initial_q.1);
    let mut reservoir = controller.initial_state();
    let mut diverged = None;

    let log_state = |states: &mut DMatrix<T>, actual: &mut DMatrix<T>, t: usize, s: &PlantState<T>| {
        for (row, v) in s.to_array().into_iter().enumerate() {
            states[(row, t)] = v;
        }
        for (row, v) in [s.cx, s.cy, s.qd1, s.qd2].into_iter().enumerate() {
            actual[(row, t)] = v;
        }
    };
    log_state(&mut states, &mut actual, 0, &plant);

    for t in 0..total - 1 {
        let y_noisy = observe(&plant, &cfg.noise, &mut rng).to_array();
        let target = [
            desired[(0, t + 1)],
            desired[(1, t + 1)],
            desired[(2, t + 1)],
            desired[(3, t + 1)],
        ];
        let input = control_input(y_noisy, target);
        let command = controller.control(&mut reservoir, &input)?;
        torques[(0, t)] = command.tau1;
        torques[(1, t)] = command.tau2;
        let applied = apply_disturbance(command, &cfg.noise, &mut rng);
        let stepped = cfg.plant.step(&plant, applied, controller.dt);
        let next = match stepped {
            Ok(s) if s.is_finite() => s,
            _ => {
                diverged = Some(t + 1);
                break;
            }
        };
        if (next.qd1 * next.qd1 + next.qd2 * next.qd2).sqrt() > cfg.divergence_limit {
            diverged = Some(t + 1);
            break;
        }
        plant = next;
        log_state(&mut states, &mut actual, t + 1, &plant);
    }

    let (states, actual, desired, torques, rmse_pos, rmse_all) = match diverged {
        Some(step) => (
            states.columns(0, step).into_owned(),
            actual.columns(0, step).into_owned(),
            desired.columns(0, step).into_owned(),
            torques.columns(0, step).into_owned(),
            f64::NAN,
            f64::NAN,
        ),
        None => {
            let pos = rmse_position(&actual, &desired, series.bridge_len);
            let all = rmse_full(&actual, &desired, series.bridge_len);
            (states, actual, desired, torques, pos, all)
        }
    };
    let threshold = cfg.success_rmse_factor * (cfg.plant.l1 + cfg.plant.l2).as_f64();
    let success = diverged.is_none() && rmse_pos < threshold;
    Ok(RunResult {
        states,
        actual,
        desired,
        torques,
        bridge_len: series.bridge_len,
        rmse_position: rmse_pos,
        rmse_full: rmse_all,
        diverged,
        success,
    })
}

/// One cell of a robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    /// First axis value (`sigma_d` or `l1`).
    pub x: f64,
    /// Second axis value (`sigma_m` or `l2`).
    pub y: f64,
    /// Mean position RMSE over the realizations that finished; NaN if none
    /// did.
    pub mean_rmse: f64,
    /// Population standard deviation over the same runs.
    pub std_rmse: f64,
    pub n_ok: usize,
    /// Diverged realizations; kept out of the mean.
    pub n_failed: usize,
    /// The reference is partly outside what this cell's plant can reach.
    /// The cell still runs; expect degraded scores.
    pub infeasible: bool,
}

/// A full sweep: cells in row-major order, `x` outer, `y` inner.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub x_name: String,
    pub y_name: String,
    pub cells: Vec<SweepCell>,
    pub realizations: usize,
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

impl SweepResult {
    /// One row per cell: axes, scores, counts, feasibility.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},{},mean_rmse,std_rmse,n_ok,n_failed,infeasible\n",
            self.x_name, self.y_name
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                csv_float(c.x),
                csv_float(c.y),
                csv_float(c.mean_rmse),
                csv_float(c.std_rmse),
                c.n_ok,
                c.n_failed,
                c.infeasible
            ));
        }
        out
    }

    /// Parses what [`SweepResult::to_csv`] wrote. `realizations` is restored
    /// as the per-cell maximum of `n_ok + n_failed`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty sweep CSV".into()))?;
        let head: Vec<&str> = header.split(',').collect();
        if head.len() != 7 {
            return Err(Error::Format(format!(
                "sweep CSV header needs 7 columns, got {}",
                head.len()
            )));
        }
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 7 {
                return Err(Error::Format(format!(
                    "sweep CSV line {}: expected 7 columns, got {}",
                    i + 2,
                    cols.len()
                )));
            }
            let f = |s: &str| -> Result<f64> {
                s.parse()
                    .map_err(|_| Error::Format(format!("sweep CSV line {}: bad number {s:?}", i + 2)))
            };
            let u = |s: &str| -> Result<usize> {
                s.parse()
                    .map_err(|_| Error::Format(format!("sweep CSV line {}: bad count {s:?}", i + 2)))
            };
            cells.push(SweepCell {
                x: f(cols[0])?,
                y: f(cols[1])?,
                mean_rmse: f(cols[2])?,
                std_rmse: f(cols[3])?,
                n_ok: u(cols[4])?,
                n_failed: u(cols[5])?,
                infeasible: match cols[6] {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Format(format!(
                            "sweep CSV line {}: bad flag {other:?}",
                            i + 2
                        )))
                    }
                },
            });
        }
        let realizations = cells.iter().map(|c| c.n_ok + c.n_failed).max().unwrap_or(0);
        Ok(Self {
            x_name: head[0].to_string(),
            y_name: head[1].to_string(),
            cells,
            realizations,
        })
    }
}

fn summarize(rmses: &[f64], n_failed: usize, x: f64, y: f64, infeasible: bool) -> SweepCell {
    let n = rmses.len();
    let (mean, std) = if n == 0 {
        (f64::NAN, f64::NAN)
    } else {
        let mean = rmses.iter().sum::<f64>() / n as f64;
        let var = rmses.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    SweepCell {
        x,
        y,
        mean_rmse: mean,
        std_rmse: std,
        n_ok: n,
        n_failed,
        infeasible,
    }
}

/// One noise-sweep cell: `n_real` runs at the given noise levels, each on
/// the noise stream `(cfg.seed, "sweep/noise", [i, j, realization])`. The
/// realizations run in parallel; the summary is reduced in realization
/// order.
pub fn noise_cell<T: Float>(
    controller: &EsnController<T>,
    cfg: &TrackConfig<T>,
    series: &ReferenceSeries<T>,
    sigma_d: T,
    sigma_m: T,
    cell: (usize, usize),
    n_real: usize,
) -> Result<SweepCell> {
    let runs: Vec<Result<RunResult<T>>> = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let mut run_cfg = *cfg;
            run_cfg.noise = NoiseConfig {
                sigma_d,
                sigma_m,
                seed: derive_u64(
                    cfg.seed,
                    "sweep/noise",
                    &[cell.0 as u64, cell.1 as u64, r as u64],
                ),
            };
            run_tracking(controller, &run_cfg, series)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for run in runs {
        let run = run?;
        match run.diverged {
            None => ok.push(run.rmse_position),
            Some(_) => failed += 1,
        }
    }
    Ok(summarize(&ok, failed, sigma_d.as_f64(), sigma_m.as_f64(), false))
}

/// Noise-robustness sweep over a `sigma_d x sigma_m` grid on a fixed,
/// already-bridged series.
pub fn sweep_noise<T: Float>(
    controller: &EsnController<T>,
    cfg: &TrackConfig<T>,
    series: &ReferenceSeries<T>,
    sigma_d_grid: &[T],
    sigma_m_grid: &[T],
    n_real: usize,
) -> Result<SweepResult> {
    if sigma_d_grid.is_empty() || sigma_m_grid.is_empty() || n_real == 0 {
        return Err(Error::InvalidParam(
            "sweep needs non-empty grids and at least one realization".into(),
        ));
    }
    let mut cells = Vec::with_capacity(sigma_d_grid.len() * sigma_m_grid.len());
    for (i, &sd) in sigma_d_grid.iter().enumerate() {
        for (j, &sm) in sigma_m_grid.iter().enumerate() {
            cells.push(noise_cell(controller, cfg, series, sd, sm, (i, j), n_real)?);
        }
    }
    Ok(SweepResult {
        x_name: "sigma_d".into(),
        y_name: "sigma_m".into(),
        cells,
        realizations: n_real,
    })
}

/// One arm-length cell: the plant gets the cell's link lengths (mass centers
/// at midlink), while the controller and the reference derivation keep the
/// nominal geometry it was trained on. The reference path is shrunk into the
/// cell plant's workspace when needed (never grown, so the nominal
/// derivation stays solvable), re-bridged from the cell plant's actual start
/// position, and checked against the cell plant's reachable annulus; points
/// inside an unreachable inner hole mark the cell infeasible but it still
/// runs. Noise streams derive from `(cfg.seed, "sweep/lengths", [i, j, r])`.
pub fn lengths_cell<T: Float>(
    controller: &EsnController<T>,
    cfg: &TrackConfig<T>,
    base_path: &ReferencePath<T>,
    l1: T,
    l2: T,
    cell: (usize, usize),
    n_real: usize,
) -> Result<SweepCell> {
    let plant = ArmParams::with_lengths(l1, l2)?;
    let fitted = rescale_to_workspace(base_path, &plant, T::of(WORKSPACE_MARGIN))?;
    let (inner, outer) = plant.reach();
    let tol = T::of(1e-9);
    let infeasible = fitted
        .points
        .iter()
        .any(|p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            r < inner - tol || r > outer + tol
        });
    let start = plant.forward_kinematics(cfg.initial_q.0, cfg.initial_q.1);
    let series = prepare_series(&fitted, &controller.arm, start, cfg.bridge_len)?;
    let runs: Vec<Result<RunResult<T>>> = (0..n_real)
        .into_par_iter()
        .map(|r| {
            let mut run_cfg = *cfg;
            run_cfg.plant = plant;
            run_cfg.noise.seed = derive_u64(
                cfg.seed,
                "sweep/lengths",
                &[cell.0 as u64, cell.1 as u64, r as u64],
            );
            run_tracking(controller, &run_cfg, &series)
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = 0;
    for run in runs {
        let run = run?;
        match run.diverged {
            None => ok.push(run.rmse_position),
            Some(_) => failed += 1,
        }
    }
    Ok(summarize(&ok, failed, l1.as_f64(), l2.as_f64(), infeasible))
}

/// Arm-length mismatch sweep. The series provides the reference path (any
/// bridge columns are stripped); each cell refits it to its own plant as
/// described on [`lengths_cell`].
pub fn sweep_arm_lengths<T: Float>(
    controller: &EsnController<T>,
    cfg: &TrackConfig<T>,
    series: &ReferenceSeries<T>,
    l1_grid: &[T],
    l2_grid: &[T],
    n_real: usize,
) -> Result<SweepResult> {
    if l1_grid.is_empty() || l2_grid.is_empty() || n_real == 0 {
        return Err(Error::InvalidParam(
            "sweep needs non-empty grids and at least one realization".into(),
        ));
    }
    let base = strip_bridge(series);
    let mut cells = Vec::with_capacity(l1_grid.len() * l2_grid.len());
    for (i, &l1) in l1_grid.iter().enumerate() {
        for (j, &l2) in l2_grid.iter().enumerate() {
            cells.push(lengths_cell(controller, cfg, &base, l1, l2, (i, j), n_real)?);
        }
    }
    Ok(SweepResult {
        x_name: "l1".into(),
        y_name: "l2".into(),
        cells,
        realizations: n_real,
    })
}

/// The reference proper, without any bridge columns.
pub fn strip_bridge<T: Float>(series: &ReferenceSeries<T>) -> ReferencePath<T> {
    ReferencePath {
        points: series.source.points[series.bridge_len..].to_vec(),
        dt: series.source.dt,
        name: series.source.name.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::TorqueCommand;
    use crate::esn::{init_reservoir, update_state, EsnParams, EsnState};
    use crate::trajectories::circle;

    fn quick_series(n: usize) -> ReferenceSeries<f64> {
        let path = circle(n, 0.01, 0.6, 12.0).unwrap();
        derive_reference_series(&path, &ArmParams::default()).unwrap()
    }

    /// Controller with deterministic weights and a fixed readout, enough to
    /// exercise the loop without a training run.
    fn stub_controller(scale: f64) -> EsnController<f64> {
        let params = EsnParams {
            n_r: 30,
            ..EsnParams::default()
        };
        let mut weights = init_reservoir(&params, &mut rng_for(1, "reservoir", &[])).unwrap();
        weights.w_out = Some(DMatrix::from_fn(2, params.n_r, |r, c| {
            scale * ((r + 2 * c) % 5) as f64 / 5.0
        }));
        EsnController {
            params,
            arm: ArmParams::default(),
            dt: 0.01,
            weights,
            meta: Default::default(),
        }
    }

    #[test]
    fn rmse_matches_hand_values() {
        let a = DMatrix::from_column_slice(4, 3, &[
            0.3, 0.4, 1.0, 2.0, //
            0.3, 0.4, 1.0, 2.0, //
            0.3, 0.4, 1.0, 2.0,
        ]);
        let zero = DMatrix::zeros(4, 3);
        // Constant offset (0.3, 0.4) is 0.5 away in position.
        assert!((rmse_position(&a, &zero, 0) - 0.5).abs() < 1e-15);
        // Pooling all four components: 0.09 + 0.16 + 1 + 4 per column.
        assert!((rmse_full(&a, &zero, 0) - 5.25f64.sqrt()).abs() < 1e-15);
        // Window start excludes columns before `from`.
        let mut b = a.clone();
        b[(0, 0)] = 99.0;
        assert!((rmse_position(&b, &zero, 1) - 0.5).abs() < 1e-15);
        assert!(rmse_position(&a, &zero, 3).is_nan());
    }

    #[test]
    fn bridge_connects_start_to_reference_smoothly() {
        let series = quick_series(600);
        let start = (0.5f64, 0.5f64);
        let bridged = build_bridge(start, &series, 200, &ArmParams::default()).unwrap();
        assert_eq!(bridged.bridge_len, 200);
        assert_eq!(bridged.source.len(), 800);
        assert_eq!(bridged.source.points[0], [0.5, 0.5]);
        // The reference proper is untouched and starts right after the
        // bridge.
        assert_eq!(bridged.source.points[200], series.source.points[0]);
        assert_eq!(&bridged.source.points[200..], &series.source.points[..]);
        // Per-step displacement stays within 1.5x the path's own cruise.
        let max_step = |pts: &[[f64; 2]]| {
            pts.windows(2)
                .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
                .fold(0.0f64, f64::max)
        };
        assert!(max_step(&bridged.source.points) <= 1.5 * max_step(&series.source.points));
        // Ease profile: first and last bridge steps are tiny compared to the
        // mean bridge step (zero endpoint velocity).
        let d = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);
        let mean_step = d(bridged.source.points[0], bridged.source.points[200]) / 200.0;
        assert!(d(bridged.source.points[0], bridged.source.points[1]) < mean_step / 10.0);
        assert!(d(bridged.source.points[199], bridged.source.points[200]) < mean_step / 10.0);
    }

    #[test]
    fn bridge_is_skipped_when_already_on_the_reference() {
        let series = quick_series(300);
        let start = (series.source.points[0][0], series.source.points[0][1]);
        let bridged = build_bridge(start, &series, 200, &ArmParams::default()).unwrap();
        assert_eq!(bridged.bridge_len, 0);
        assert_eq!(bridged.source.len(), 300);
    }

    #[test]
    fn cosine_ease_profile_has_zero_endpoint_slope() {
        let s = |u: f64| (1.0 - (std::f64::consts::PI * u).cos()) / 2.0;
        assert_eq!(s(0.0), 0.0);
        assert!((s(1.0) - 1.0).abs() < 1e-15);
        let eps = 1e-7;
        assert!(s(eps) / eps < 1e-6);
        assert!((1.0 - s(1.0 - eps)) / eps < 1e-6);
    }

    #[test]
    fn run_follows_the_documented_loop_exactly() {
        // Reimplements the closed loop step by step, noise on, and demands
        // bitwise agreement: pins the observe/disturb draw order and the
        // input alignment [y(t); y_d(t+1)] -> u(t) -> state(t+1).
        let controller = stub_controller(0.01);
        let series = quick_series(80);
        let cfg = TrackConfig {
            test_len: 80,
            bridge_len: 0,
            noise: NoiseConfig {
                sigma_d: 0.05,
                sigma_m: 0.02,
                seed: 9,
            },
            ..TrackConfig::default()
        };
        let run = run_tracking(&controller, &cfg, &series).unwrap();
        assert_eq!(run.diverged, None);

        let mut rng = rng_for(cfg.seed, "track/noise", &[9]);
        let mut plant = PlantState::at_rest(&cfg.plant, cfg.initial_q.0, cfg.initial_q.1);
        let mut r = EsnState::zeros(30);
        for t in 0..79 {
            assert_eq!(run.states[(0, t)], plant.cx, "state col {t}");
            assert_eq!(run.actual[(2, t)], plant.qd1);
            let y = observe(&plant, &cfg.noise, &mut rng).to_array();
            let yd = [
                series.y_d[(0, t + 1)],
                series.y_d[(1, t + 1)],
                series.y_d[(2, t + 1)],
                series.y_d[(3, t + 1)],
            ];
            r = update_state(
                &controller.weights,
                &r,
                &control_input(y, yd),
                controller.params.alpha,
            );
            let w = controller.weights.w_out.as_ref().unwrap();
            let u = w * &r.r;
            assert_eq!(run.torques[(0, t)], u[0], "torque col {t}");
            let applied = apply_disturbance(TorqueCommand::new(u[0], u[1]), &cfg.noise, &mut rng);
            plant = cfg.plant.step(&plant, applied, 0.01).unwrap();
        }
        assert_eq!(run.torques[(0, 79)], 0.0);
        assert_eq!(run.desired, series.y_d.columns(0, 80).into_owned());
    }

    #[test]
    fn noisy_runs_are_reproducible() {
        let controller = stub_controller(0.01);
        let series = quick_series(120);
        let cfg = TrackConfig {
            test_len: 120,
            bridge_len: 0,
            noise: NoiseConfig {
                sigma_d: 0.1,
                sigma_m: 0.05,
                seed: 4,
            },
            ..TrackConfig::default()
        };
        let a = run_tracking(&controller, &cfg, &series).unwrap();
        let b = run_tracking(&controller, &cfg, &series).unwrap();
        assert_eq!(a, b);
        let mut other = cfg;
        other.noise.seed = 5;
        let c = run_tracking(&controller, &other, &series).unwrap();
        assert_ne!(a.actual, c.actual);
    }

    #[test]
    fn zero_readout_fails_gracefully() {
        let mut controller = stub_controller(0.0);
        controller.weights.w_out = Some(DMatrix::zeros(2, 30));
        let series = quick_series(150);
        let cfg = TrackConfig {
            test_len: 150,
            bridge_len: 0,
            ..TrackConfig::default()
        };
        let run = run_tracking(&controller, &cfg, &series).unwrap();
        assert_eq!(run.diverged, None);
        assert!(!run.success);
        assert!(run.rmse_position > 0.1, "arm never moved toward the circle");
        // The arm coasts from rest under zero torque: it simply stays put.
        assert_eq!(run.states[(0, 149)], run.states[(0, 0)]);
    }

    #[test]
    fn runaway_torques_are_cut_off_with_partial_logs() {
        let controller = stub_controller(1e9);
        let series = quick_series(200);
        let cfg = TrackConfig {
            test_len: 200,
            bridge_len: 0,
            ..TrackConfig::default()
        };
        let run = run_tracking(&controller, &cfg, &series).unwrap();
        let step = run.diverged.expect("must diverge");
        assert!(step < 200);
        assert_eq!(run.states.ncols(), step);
        assert_eq!(run.actual.ncols(), step);
        assert_eq!(run.torques.ncols(), step);
        assert!(run.rmse_position.is_nan());
        assert!(!run.success);
        // Everything kept is finite.
        assert!(run.states.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_series_is_rejected() {
        let controller = stub_controller(0.01);
        let series = quick_series(100);
        let cfg = TrackConfig {
            test_len: 200,
            bridge_len: 0,
            ..TrackConfig::default()
        };
        match run_tracking(&controller, &cfg, &series) {
            Err(Error::SeriesTooShort { have, need }) => {
                assert_eq!((have, need), (100, 200));
            }
            other => panic!("expected SeriesTooShort, got {other:?}"),
        }
    }

    #[test]
    fn noise_sweep_layout_and_zero_cell() {
        let controller = stub_controller(0.01);
        let series = quick_series(60);
        let cfg = TrackConfig {
            test_len: 60,
            bridge_len: 0,
            ..TrackConfig::default()
        };
        let grid_d = [0.0, 0.1];
        let grid_m = [0.0, 0.01, 0.02];
        let sweep = sweep_noise(&controller, &cfg, &series, &grid_d, &grid_m, 3).unwrap();
        assert_eq!(sweep.cells.len(), 6);
        assert_eq!((sweep.cells[0].x, sweep.cells[0].y), (0.0, 0.0));
        assert_eq!((sweep.cells[1].x, sweep.cells[1].y), (0.0, 0.01));
        assert_eq!((sweep.cells[3].x, sweep.cells[3].y), (0.1, 0.0));
        // The noise-free cell is the deterministic run repeated: zero spread.
        let clean = run_tracking(&controller, &cfg, &series).unwrap();
        assert_eq!(sweep.cells[0].mean_rmse, clean.rmse_position);
        assert_eq!(sweep.cells[0].std_rmse, 0.0);
        assert_eq!(sweep.cells[0].n_ok, 3);
        // Noisy cells vary across realizations.
        assert!(sweep.cells[5].std_rmse > 0.0);
    }

    #[test]
    fn sweeps_are_deterministic() {
        let controller = stub_controller(0.01);
        let series = quick_series(60);
        let cfg = TrackConfig {
            test_len: 60,
            bridge_len: 0,
            ..TrackConfig::default()
        };
        let a = sweep_noise(&controller, &cfg, &series, &[0.0, 0.1], &[0.0, 0.1], 2).unwrap();
        let b = sweep_noise(&controller, &cfg, &series, &[0.0, 0.1], &[0.0, 0.1], 2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn lengths_sweep_flags_inner_hole_but_still_runs() {
        let controller = stub_controller(0.01);
        // A small circle around the base: an arm with very unequal links
        // cannot reach its center region.
        let path = circle(60, 0.01, 0.3, 12.0).unwrap();
        let series = derive_reference_series(&path, &ArmParams::default()).unwrap();
        let cfg = TrackConfig {
            test_len: 50,
            bridge_len: 10,
            ..TrackConfig::default()
        };
        let sweep =
            sweep_arm_lengths(&controller, &cfg, &series, &[0.5, 0.75], &[0.25, 0.5], 1).unwrap();
        assert_eq!(sweep.cells.len(), 4);
        let nominal = &sweep.cells[3];
        assert_eq!((nominal.x, nominal.y), (0.75, 0.5));
        // (0.75, 0.25): inner annulus radius 0.5 swallows the circle.
        let skewed = sweep
            .cells
            .iter()
            .find(|c| c.x == 0.75 && c.y == 0.25)
            .unwrap();
        assert!(skewed.infeasible);
        assert_eq!(skewed.n_ok + skewed.n_failed, 1);
        let balanced = sweep
            .cells
            .iter()
            .find(|c| c.x == 0.5 && c.y == 0.5)
            .unwrap();
        assert!(!balanced.infeasible);
    }

    #[test]
    fn csv_round_trip_preserves_cells_including_nan() {
        let sweep = SweepResult {
            x_name: "sigma_d".into(),
            y_name: "sigma_m".into(),
            cells: vec![
                SweepCell {
                    x: 0.0,
                    y: 0.1,
                    mean_rmse: 0.034517,
                    std_rmse: 0.001,
                    n_ok: 10,
                    n_failed: 0,
                    infeasible: false,
                },
                SweepCell {
                    x: 3.1622776601683795,
                    y: 0.0,
                    mean_rmse: f64::NAN,
                    std_rmse: f64::NAN,
                    n_ok: 0,
                    n_failed: 10,
                    infeasible: true,
                },
            ],
            realizations: 10,
        };
        let csv = sweep.to_csv();
        let back = SweepResult::from_csv(&csv).unwrap();
        assert_eq!(back.x_name, "sigma_d");
        assert_eq!(back.cells.len(), 2);
        assert_eq!(back.cells[0], sweep.cells[0]);
        assert!(back.cells[1].mean_rmse.is_nan());
        assert_eq!(back.cells[1].n_failed, 10);
        assert!(back.cells[1].infeasible);
        assert_eq!(back.realizations, 10);
        // Byte-stable through a second round trip.
        assert_eq!(back.to_csv(), csv);
    }

    #[test]
    fn malformed_sweep_csv_names_the_line() {
        let text = "sigma_d,sigma_m,mean_rmse,std_rmse,n_ok,n_failed,infeasible\n0,0,0.1,0.0,5,0,maybe\n";
        let err = SweepResult::from_csv(text).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
