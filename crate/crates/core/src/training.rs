//! Exploration episodes and readout fitting.
//!
//! The inverse model is trained open loop: the arm is driven from scattered
//! rest poses by smoothed random torques, and the reservoir learns to map
//! consecutive observation pairs back to the torque that produced the
//! transition. Episodes run independently, each on its own derived seed, and
//! are reduced into the readout accumulator in episode order, so the fitted
//! controller is a pure function of the configuration no matter how many
//! threads participated.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::dynamics::{ArmParams, PlantState, TorqueCommand};
use crate::error::{Error, Result};
use crate::esn::{
    control_input, init_reservoir, update_state, EsnController, EsnParams, EsnState, EsnWeights,
    ReadoutAccumulator, TrainingMeta,
};
use crate::float::Float;
use crate::seeds::rng_for;
use crate::signal::gaussian_smooth;

/// Seeds tried per episode before training gives up. Divergence under the
/// default torque budget is rare; hitting this limit means the
/// configuration, not bad luck, is at fault.
const MAX_EPISODE_ATTEMPTS: usize = 32;

/// Episodes simulated per parallel batch. Bounds peak memory: every episode
/// in flight holds its full state log.
const EPISODE_CHUNK: usize = 32;

/// Grid resolution used for the workspace coverage figure.
const COVERAGE_GRID: usize = 10;

/// How much exploration data to generate and how to slice it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig<T> {
    /// Total simulated steps; must be a whole number of episodes.
    pub total_len: usize,
    /// Steps per episode.
    pub episode_len: usize,
    /// Leading steps of each episode excluded from the fit, so the reservoir
    /// state has forgotten its zero initialization.
    pub washout: usize,
    /// Torque amplitude before smoothing, N m.
    pub tau_max: T,
    /// Gaussian smoothing width of the torque signal, in steps.
    pub smooth_sigma: f64,
    pub dt: T,
    /// Every k-th episode is held back from the fit and scored afterwards;
    /// 0 disables validation.
    pub heldout_every: usize,
    /// Master seed of the episode streams.
    pub seed: u64,
}

impl<T: Float> Default for TrainConfig<T> {
    fn default() -> Self {
        Self {
            total_len: 200_000,
            episode_len: 8_000,
            washout: 100,
            tau_max: T::one(),
            smooth_sigma: 20.0,
            dt: T::of(0.01),
            heldout_every: 10,
            seed: 0,
        }
    }
}

impl<T: Float> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.total_len == 0 {
            return Err(Error::InvalidParam("total_len must be positive".into()));
        }
        if self.episode_len == 0 || self.total_len % self.episode_len != 0 {
            return Err(Error::InvalidParam(format!(
                "total_len = {} is not a whole number of {}-step episodes",
                self.total_len, self.episode_len
            )));
        }
        if self.episode_len < self.washout + 2 {
            return Err(Error::InvalidParam(format!(
                "episode_len = {} leaves no training pairs after a washout of {}",
                self.episode_len, self.washout
            )));
        }
        if !self.tau_max.finite() || self.tau_max <= T::zero() {
            return Err(Error::InvalidParam(format!(
                "tau_max must be positive, got {}",
                self.tau_max.as_f64()
            )));
        }
        if !self.smooth_sigma.is_finite() || self.smooth_sigma < 0.0 {
            return Err(Error::InvalidParam(format!(
                "smooth_sigma must be nonnegative, got {}",
                self.smooth_sigma
            )));
        }
        if !self.dt.finite() || self.dt <= T::zero() {
            return Err(Error::InvalidParam(format!(
                "dt must be positive, got {}",
                self.dt.as_f64()
            )));
        }
        if self.heldout_every == 1 {
            return Err(Error::InvalidParam(
                "heldout_every = 1 would hold out every episode; use 0 to disable holdout".into(),
            ));
        }
        Ok(())
    }

    /// Number of episodes covering `total_len` steps.
    pub fn episodes(&self) -> usize {
        self.total_len / self.episode_len
    }
}

/// One simulated exploration episode: plant states (8 rows) and the torques
/// that drove them (2 rows), one column per step. Column `t` holds the pose
/// and velocity at step `t` together with the acceleration the torque in
/// column `t` produces there.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog<T> {
    pub states: DMatrix<T>,
    pub torques: DMatrix<T>,
}

/// Smoothed uniform torque signal, 2 rows by `len` columns, bounded by
/// `tau_max` in magnitude. Row 0 is drawn in full before row 1, which fixes
/// the stream layout. Draws happen in `f64` regardless of `T`.
pub fn random_torque_signal<T: Float, R: Rng + ?Sized>(
    len: usize,
    tau_max: T,
    smooth_sigma: f64,
    rng: &mut R,
) -> DMatrix<T> {
    let amp = tau_max.as_f64();
    let mut out = DMatrix::zeros(2, len);
    for row in 0..2 {
        let raw: Vec<f64> = (0..len)
            .map(|_| amp * rng.random_range(-1.0..1.0))
            .collect();
        for (t, v) in gaussian_smooth(&raw, smooth_sigma).into_iter().enumerate() {
            out[(row, t)] = T::of(v);
        }
    }
    out
}

/// Runs one episode from a random rest pose (`q1` uniform on `[0, 2pi)`,
/// `q2` uniform on `[-pi, pi)`, drawn in that order before the torques).
pub fn run_episode<T: Float, R: Rng + ?Sized>(
    params: &ArmParams<T>,
    cfg: &TrainConfig<T>,
    rng: &mut R,
) -> Result<EpisodeLog<T>> {
    let q1 = T::of(rng.random::<f64>() * std::f64::consts::TAU);
    let q2 = T::of((rng.random::<f64>() - 0.5) * std::f64::consts::TAU);
    let torques = random_torque_signal(cfg.episode_len, cfg.tau_max, cfg.smooth_sigma, rng);
    let mut states = DMatrix::zeros(8, cfg.episode_len);
    let mut s = PlantState::at_rest(params, q1, q2);
    for t in 0..cfg.episode_len {
        let u = TorqueCommand::new(torques[(0, t)], torques[(1, t)]);
        let next = params.step(&s, u, cfg.dt)?;
        if !next.is_finite() {
            return Err(Error::NonFiniteState { step: t });
        }
        states[(0, t)] = s.cx;
        states[(1, t)] = s.cy;
        states[(2, t)] = s.q1;
        states[(3, t)] = s.q2;
        states[(4, t)] = s.qd1;
        states[(5, t)] = s.qd2;
        // Acceleration produced at this state by this torque; step() already
        // solved the dynamics for it.
        states[(6, t)] = next.qdd1;
        states[(7, t)] = next.qdd2;
        s = next;
    }
    Ok(EpisodeLog { states, torques })
}

fn observation_at<T: Float>(states: &DMatrix<T>, t: usize) -> [T; 4] {
    [
        states[(0, t)],
        states[(1, t)],
        states[(4, t)],
        states[(5, t)],
    ]
}

/// Replays an episode through the reservoir and hands every post-washout
/// `(state, torque)` pair to `sink`. The reservoir state after consuming the
/// pair at step `t` is matched with the torque applied at `t`, which is the
/// alignment the deployed controller reproduces.
fn drive_episode<T: Float>(
    weights: &EsnWeights<T>,
    alpha: T,
    log: &EpisodeLog<T>,
    washout: usize,
    mut sink: impl FnMut(&EsnState<T>, [T; 2]),
) {
    let len = log.states.ncols();
    let mut state = EsnState::zeros(weights.w_r.nrows());
    for t in 0..len.saturating_sub(1) {
        let input = control_input(
            observation_at(&log.states, t),
            observation_at(&log.states, t + 1),
        );
        state = update_state(weights, &state, &input, alpha);
        if t >= washout {
            sink(&state, [log.torques[(0, t)], log.torques[(1, t)]]);
        }
    }
}

/// Cell of the `grid x grid` lattice over the square circumscribing the
/// workspace that contains `(x, y)`, if any.
fn cell_index<T: Float>(outer: T, grid: usize, x: T, y: T) -> Option<usize> {
    let g = T::of(grid as f64);
    let two = T::of(2.0);
    let fx = ((x + outer) / (two * outer) * g).floor().as_f64();
    let fy = ((y + outer) / (two * outer) * g).floor().as_f64();
    if fx < 0.0 || fy < 0.0 || fx >= grid as f64 || fy >= grid as f64 {
        return None;
    }
    Some(fy as usize * grid + fx as usize)
}

/// Which cells of that lattice intersect the reachable annulus: the nearest
/// point of the cell must be inside the outer circle and its farthest corner
/// outside the inner one.
pub fn reachable_cells<T: Float>(params: &ArmParams<T>, grid: usize) -> Vec<bool> {
    let (inner, outer) = params.reach();
    let step = T::of(2.0) * outer / T::of(grid as f64);
    let mut cells = vec![false; grid * grid];
    for j in 0..grid {
        for i in 0..grid {
            let x0 = -outer + step * T::of(i as f64);
            let y0 = -outer + step * T::of(j as f64);
            let (x1, y1) = (x0 + step, y0 + step);
            let nearest = |a: T, b: T| {
                if a > T::zero() {
                    a
                } else if b < T::zero() {
                    b
                } else {
                    T::zero()
                }
            };
            let d_min = (nearest(x0, x1).powi(2) + nearest(y0, y1).powi(2)).sqrt();
            let d_max = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)]
                .iter()
                .map(|&(x, y)| (x * x + y * y).sqrt())
                .fold(T::zero(), |a, b| a.max(b));
            cells[j * grid + i] = d_min <= outer && d_max >= inner;
        }
    }
    cells
}

/// Fraction of reachable workspace cells the given end-effector positions
/// visit, on a `grid x grid` lattice.
pub fn coverage<T: Float>(
    params: &ArmParams<T>,
    grid: usize,
    points: impl IntoIterator<Item = (T, T)>,
) -> f64 {
    let reachable = reachable_cells(params, grid);
    let (_, outer) = params.reach();
    let mut visited = vec![false; grid * grid];
    for (x, y) in points {
        if let Some(c) = cell_index(outer, grid, x, y) {
            visited[c] = true;
        }
    }
    let hit = visited
        .iter()
        .zip(&reachable)
        .filter(|&(v, r)| *v && *r)
        .count();
    let total = reachable.iter().filter(|&&r| r).count();
    hit as f64 / total.max(1) as f64
}

enum Contribution<T: Float> {
    Fitted(ReadoutAccumulator<T>),
    Heldout(EpisodeLog<T>),
}

struct EpisodeOutcome<T: Float> {
    contribution: Contribution<T>,
    visited: Vec<bool>,
    redraws: u64,
}

/// Generates the exploration data and fits the readout, producing a
/// deployable controller.
///
/// The reservoir is initialized from `esn.seed`, episode `i` runs on the
/// stream `(cfg.seed, "train/episode", [i, attempt])`, and episodes whose
/// plant state blows up are retried on the next attempt index. Held-out
/// episodes never enter the fit; after solving, they are replayed against
/// the trained readout for the validation RMSE in the returned metadata.
pub fn fit_controller<T: Float>(
    arm: &ArmParams<T>,
    esn: &EsnParams<T>,
    cfg: &TrainConfig<T>,
) -> Result<EsnController<T>> {
    let started = Instant::now();
    arm.validate()?;
    esn.validate()?;
    cfg.validate()?;
    if esn.dim_in != 8 || esn.dim_out != 2 {
        return Err(Error::InvalidParam(format!(
            "the inverse-model controller needs dim_in = 8 and dim_out = 2, got {} and {}",
            esn.dim_in, esn.dim_out
        )));
    }
    let weights = init_reservoir(esn, &mut rng_for(esn.seed, "reservoir", &[]))?;
    let (_, outer) = arm.reach();
    let n_episodes = cfg.episodes();
    let episode_indices: Vec<usize> = (0..n_episodes).collect();

    let mut acc = ReadoutAccumulator::new(esn.n_r, esn.dim_out);
    let mut heldout_logs: Vec<EpisodeLog<T>> = Vec::new();
    let mut visited = vec![false; COVERAGE_GRID * COVERAGE_GRID];
    let mut redraws = 0u64;

    for chunk in episode_indices.chunks(EPISODE_CHUNK) {
        let outcomes: Vec<Result<EpisodeOutcome<T>>> = chunk
            .par_iter()
            .map(|&idx| {
                let mut log = None;
                let mut attempts = 0u64;
                for attempt in 0..MAX_EPISODE_ATTEMPTS {
                    let mut rng =
                        rng_for(cfg.seed, "train/episode", &[idx as u64, attempt as u64]);
                    match run_episode(arm, cfg, &mut rng) {
                        Ok(l) => {
                            log = Some(l);
                            attempts = attempt as u64;
                            break;
                        }
                        Err(Error::NonFiniteState { .. } | Error::NonFinite { .. }) => continue,
                        Err(e) => return Err(e),
                    }
                }
                let Some(log) = log else {
                    return Err(Error::TrainingDiverged {
                        episode: idx,
                        attempts: MAX_EPISODE_ATTEMPTS,
                    });
                };
                let heldout =
                    cfg.heldout_every != 0 && idx % cfg.heldout_every == cfg.heldout_every - 1;
                let mut visited = vec![false; COVERAGE_GRID * COVERAGE_GRID];
                let contribution = if heldout {
                    Contribution::Heldout(log)
                } else {
                    for t in 0..log.states.ncols() {
                        if let Some(c) =
                            cell_index(outer, COVERAGE_GRID, log.states[(0, t)], log.states[(1, t)])
                        {
                            visited[c] = true;
                        }
                    }
                    let mut acc = ReadoutAccumulator::new(esn.n_r, esn.dim_out);
                    drive_episode(&weights, esn.alpha, &log, cfg.washout, |state, target| {
                        acc.push(state.r.as_slice(), &target);
                    });
                    Contribution::Fitted(acc)
                };
                Ok(EpisodeOutcome {
                    contribution,
                    visited,
                    redraws: attempts,
                })
            })
            .collect();
        // Sequential reduction in episode order keeps the sums (and thus the
        // solved readout) independent of scheduling.
        for outcome in outcomes {
            let outcome = outcome?;
            redraws += outcome.redraws;
            for (seen, cell) in visited.iter_mut().zip(&outcome.visited) {
                *seen |= *cell;
            }
            match outcome.contribution {
                Contribution::Fitted(a) => acc.merge(&a),
                Contribution::Heldout(log) => heldout_logs.push(log),
            }
        }
    }

    if acc.columns == 0 {
        return Err(Error::InvalidParam(
            "no training pairs survived washout and holdout".into(),
        ));
    }
    let mut weights = weights;
    weights.w_out = Some(acc.solve(esn.beta)?);
    let w_out = weights.w_out.as_ref().expect("just assigned");

    let mut sq_err = 0.0f64;
    let mut n_err = 0usize;
    for log in &heldout_logs {
        drive_episode(&weights, esn.alpha, log, cfg.washout, |state, target| {
            let predicted = w_out * &state.r;
            for k in 0..2 {
                let e = (predicted[k] - target[k]).as_f64();
                sq_err += e * e;
                n_err += 1;
            }
        });
    }
    let heldout_rmse = if n_err > 0 {
        (sq_err / n_err as f64).sqrt()
    } else {
        f64::NAN
    };

    let reachable = reachable_cells(arm, COVERAGE_GRID);
    let hit = visited
        .iter()
        .zip(&reachable)
        .filter(|&(v, r)| *v && *r)
        .count();
    let total = reachable.iter().filter(|&&r| r).count().max(1);

    let meta = TrainingMeta {
        episodes: n_episodes as u64,
        heldout_episodes: heldout_logs.len() as u64,
        redraws,
        heldout_rmse,
        coverage: hit as f64 / total as f64,
        train_seconds: started.elapsed().as_secs_f64(),
    };
    Ok(EsnController {
        params: *esn,
        arm: *arm,
        dt: cfg.dt,
        weights,
        meta,
    })
}
