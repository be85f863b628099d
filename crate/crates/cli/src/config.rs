//! Experiment configuration: one TOML file with sections mirroring the
//! library's parameter structs. Unknown keys are rejected, and the two
//! numbers the physics is most sensitive to (`dt`, `training.tau_max`) have
//! no silent defaults: they must be written out. Every command echoes the
//! configuration it actually ran with to `resolved_config.toml` in the
//! output directory.

use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rctrack_core::dynamics::NoiseConfig;
use rctrack_core::{ArmParams64, EsnParams64, TrackConfig64, TrainConfig64};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed. Section seeds left unset fall back to it.
    #[serde(default)]
    pub seed: u64,
    /// Integration step. Required in config files; `track` and `sweep` can
    /// instead inherit it from the controller artifact.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Output directory; `--out` overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Controller file consumed by `track` and `sweep`; `--controller`
    /// overrides.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controller: Option<PathBuf>,
    /// Plant geometry. When absent, `train` uses the nominal arm and
    /// `track`/`sweep` use the geometry stored in the controller file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arm: Option<ArmSection>,
    #[serde(default)]
    pub esn: EsnSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
    #[serde(default)]
    pub tracking: TrackingSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dt: None,
            out: None,
            controller: None,
            arm: None,
            esn: EsnSection::default(),
            training: None,
            tracking: TrackingSection::default(),
            trajectory: TrajectorySection::default(),
            sweep: None,
        }
    }
}

/// The simulated plant. For `train` this is also the geometry the inverse
/// model learns; for `track`/`sweep` the controller keeps the geometry
/// stored in its file, so changing `l1`/`l2` here (or via flags) creates a
/// model/plant mismatch on purpose.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmSection {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub lc1: f64,
    pub lc2: f64,
    pub i1: f64,
    pub i2: f64,
}

impl Default for ArmSection {
    fn default() -> Self {
        let a = ArmParams64::default();
        Self {
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
}

impl ArmSection {
    pub fn to_params(self) -> ArmParams64 {
        ArmParams64 {
            m1: self.m1,
            m2: self.m2,
            l1: self.l1,
            l2: self.l2,
            lc1: self.lc1,
            lc2: self.lc2,
            i1: self.i1,
            i2: self.i2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EsnSection {
    pub n_r: usize,
    pub rho: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub w_b: f64,
    /// Reservoir wiring seed; defaults to the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for EsnSection {
    fn default() -> Self {
        let e = EsnParams64::default();
        Self {
            n_r: e.n_r,
            rho: e.rho,
            gamma: e.gamma,
            alpha: e.alpha,
            beta: e.beta,
            p: e.p,
            w_b: e.w_b,
            seed: None,
        }
    }
}

impl EsnSection {
    pub fn to_params(self, master: u64) -> EsnParams64 {
        EsnParams64 {
            n_r: self.n_r,
            rho: self.rho,
            gamma: self.gamma,
            alpha: self.alpha,
            beta: self.beta,
            p: self.p,
            w_b: self.w_b,
            seed: self.seed.unwrap_or(master),
            ..EsnParams64::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub total_len: usize,
    pub episode_len: usize,
    pub washout: usize,
    /// Torque amplitude bound, N m. No default: write it out.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    pub smooth_sigma: f64,
    pub heldout_every: usize,
    /// Episode stream seed; defaults to the master seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig64::default();
        Self {
            total_len: t.total_len,
            episode_len: t.episode_len,
            washout: t.washout,
            tau_max: None,
            smooth_sigma: t.smooth_sigma,
            heldout_every: t.heldout_every,
            seed: None,
        }
    }
}

impl TrainingSection {
    pub fn to_config(self, dt: f64, master: u64) -> Result<TrainConfig64, CliError> {
        let tau_max = self.tau_max.ok_or_else(|| {
            CliError::Config("`training.tau_max` must be set explicitly".into())
        })?;
        Ok(TrainConfig64 {
            total_len: self.total_len,
            episode_len: self.episode_len,
            washout: self.washout,
            tau_max,
            smooth_sigma: self.smooth_sigma,
            dt,
            heldout_every: self.heldout_every,
            seed: self.seed.unwrap_or(master),
        })
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackingSection {
    pub test_len: usize,
    pub bridge_len: usize,
    pub divergence_limit: f64,
    pub success_rmse_factor: f64,
    /// Joint angles the plant starts from, radians.
    pub initial_q: [f64; 2],
    /// Additive torque disturbance level.
    pub sigma_d: f64,
    /// Multiplicative observation noise level.
    pub sigma_m: f64,
    /// Distinguishes noise realizations under one master seed.
    pub noise_seed: u64,
}

impl Default for TrackingSection {
    fn default() -> Self {
        let t = TrackConfig64::default();
        Self {
            test_len: t.test_len,
            bridge_len: t.bridge_len,
            divergence_limit: t.divergence_limit,
            success_rmse_factor: t.success_rmse_factor,
            initial_q: [0.0, FRAC_PI_2],
            sigma_d: 0.0,
            sigma_m: 0.0,
            noise_seed: 0,
        }
    }
}

impl TrackingSection {
    pub fn to_config(self, plant: ArmParams64, master: u64) -> TrackConfig64 {
        TrackConfig64 {
            test_len: self.test_len,
            bridge_len: self.bridge_len,
            noise: NoiseConfig {
                sigma_d: self.sigma_d,
                sigma_m: self.sigma_m,
                seed: self.noise_seed,
            },
            plant,
            initial_q: (self.initial_q[0], self.initial_q[1]),
            divergence_limit: self.divergence_limit,
            success_rmse_factor: self.success_rmse_factor,
            seed: master,
        }
    }
}

/// Reference selection. `kind` is one of `circle`, `figure-eight`,
/// `lorenz`, `mackey-glass`, `file`; the geometry fields apply to the kinds
/// that use them and are ignored by the rest. Every reference is shrunk
/// into the plant workspace (`margin`) and speed-capped (`speed`, 0
/// disables) before tracking.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectorySection {
    pub kind: String,
    /// Circle radius, m.
    pub radius: f64,
    /// Cycle time of the periodic kinds, s.
    pub period: f64,
    /// Figure-eight half-width.
    pub a: f64,
    /// Figure-eight half-height.
    pub b: f64,
    /// End-effector speed cap, m/s; 0 turns the cap off.
    pub speed: f64,
    /// Workspace fit margin in (0, 1): paths are shrunk to fit inside
    /// `(1 - margin) * (l1 + l2)`.
    pub margin: f64,
    /// Trajectory file for `kind = "file"`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            kind: "circle".into(),
            radius: 0.8,
            period: 12.0,
            a: 0.7,
            b: 0.35,
            speed: 0.5,
            margin: 0.1,
            path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `noise` or `lengths`.
    pub kind: String,
    /// First-axis grid (`sigma_d` or `l1`); per-kind default when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Second-axis grid (`sigma_m` or `l2`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    /// Runs per cell.
    pub realizations: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            kind: "noise".into(),
            x: None,
            y: None,
            realizations: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// The explicit step, or a named-field error.
    pub fn require_dt(&self) -> Result<f64, CliError> {
        match self.dt {
            Some(dt) if dt.is_finite() && dt > 0.0 => Ok(dt),
            Some(dt) => Err(CliError::Config(format!(
                "`dt` must be positive and finite, got {dt}"
            ))),
            None => Err(CliError::Config(
                "`dt` must be set explicitly in the config file".into(),
            )),
        }
    }

    /// Serializes the effective configuration, prefixed with tool and file
    /// format versions so output directories are self-describing.
    pub fn resolved_toml(&self) -> Result<String, CliError> {
        let body = toml::to_string_pretty(self)
            .map_err(|e| CliError::Runtime(format!("config encode: {e}")))?;
        Ok(format!(
            "# rctrack {}\n# formats: controller RCTRACK-ESN-v1, log rctrack-log-v1\n{}",
            env!("CARGO_PKG_VERSION"),
            body
        ))
    }
}
