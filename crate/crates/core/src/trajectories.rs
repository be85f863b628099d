//! Reference trajectories: generators, workspace fitting, speed limiting,
//! and the conversion from a planar path to the observation series the
//! controller is asked to track.
//!
//! Chaotic sources (Lorenz, Mackey-Glass) are integrated in `f64` regardless
//! of the scalar type in use; on chaotic systems the working precision is
//! part of the trajectory's identity, and the reference must not change when
//! the consumer switches scalars.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;

use crate::dynamics::ArmParams;
use crate::error::{Error, Result};
use crate::float::Float;
use crate::signal::gaussian_smooth;

/// A planar end-effector path sampled at a fixed control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath<T> {
    pub points: Vec<[T; 2]>,
    /// Control step the samples are consumed at, in seconds.
    pub dt: T,
    pub name: String,
}

impl<T: Float> ReferencePath<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Largest and smallest distance from the origin over all samples.
    pub fn radius_range(&self) -> (T, T) {
        let mut min = T::max_value().unwrap();
        let mut max = T::zero();
        for p in &self.points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            if r < min {
                min = r;
            }
            if r > max {
                max = r;
            }
        }
        (min, max)
    }

    fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::InvalidParam("reference path is empty".into()));
        }
        if !self.dt.finite() || self.dt <= T::zero() {
            return Err(Error::InvalidParam(format!(
                "path dt must be positive, got {}",
                self.dt.as_f64()
            )));
        }
        if self
            .points
            .iter()
            .any(|p| !p[0].finite() || !p[1].finite())
        {
            return Err(Error::NonFinite {
                context: "reference path",
            });
        }
        Ok(())
    }
}

/// Observation targets derived from a path: rows `cx, cy, qd1, qd2`, one
/// column per control step. `source` keeps the generating path and
/// `bridge_len` counts leading columns that belong to a run-in bridge
/// rather than the reference proper (zero for a plain derived series).
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSeries<T> {
    pub y_d: DMatrix<T>,
    pub source: ReferencePath<T>,
    pub bridge_len: usize,
}

fn check_positive<T: Float>(name: &str, v: T) -> Result<()> {
    if !v.finite() || v <= T::zero() {
        return Err(Error::InvalidParam(format!(
            "{name} must be positive, got {}",
            v.as_f64()
        )));
    }
    Ok(())
}

/// Circle of the given radius, one revolution per `period` seconds.
pub fn circle<T: Float>(n: usize, dt: T, radius: T, period: T) -> Result<ReferencePath<T>> {
    check_positive("radius", radius)?;
    check_positive("period", period)?;
    check_positive("dt", dt)?;
    let omega = T::two_pi() / period;
    let points = (0..n)
        .map(|i| {
            let t = T::of(i as f64) * dt;
            [radius * (omega * t).cos(), radius * (omega * t).sin()]
        })
        .collect();
    Ok(ReferencePath {
        points,
        dt,
        name: "circle".into(),
    })
}

/// Lissajous figure eight `(a sin wt, b sin 2wt)`. Passes through the origin
/// twice per period.
pub fn figure_eight<T: Float>(n: usize, dt: T, a: T, b: T, period: T) -> Result<ReferencePath<T>> {
    check_positive("a", a)?;
    check_positive("b", b)?;
    check_positive("period", period)?;
    check_positive("dt", dt)?;
    let omega = T::two_pi() / period;
    let points = (0..n)
        .map(|i| {
            let t = T::of(i as f64) * dt;
            [a * (omega * t).sin(), b * (T::of(2.0) * omega * t).sin()]
        })
        .collect();
    Ok(ReferencePath {
        points,
        dt,
        name: "figure-eight".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorenzConfig {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
    pub x0: [f64; 3],
    /// Integrator step, in Lorenz time units.
    pub dt_sim: f64,
    /// Time discarded before sampling starts.
    pub transient: f64,
    /// Which two state components form the planar projection.
    pub axes: (usize, usize),
}

impl Default for LorenzConfig {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
            x0: [1.0, 1.0, 1.05],
            dt_sim: 0.01,
            transient: 10.0,
            axes: (0, 2),
        }
    }
}

/// Projection of a Lorenz attractor orbit, integrated with classical RK4.
/// One output sample per integrator step; the result is raw attractor
/// coordinates, meant to go through [`rescale_to_workspace`].
pub fn lorenz<T: Float>(n: usize, dt: T, cfg: &LorenzConfig) -> Result<ReferencePath<T>> {
    check_positive("dt", dt)?;
    if cfg.dt_sim <= 0.0 || !cfg.dt_sim.is_finite() || cfg.transient < 0.0 {
        return Err(Error::InvalidParam(
            "lorenz dt_sim must be positive and transient nonnegative".into(),
        ));
    }
    if cfg.axes.0 > 2 || cfg.axes.1 > 2 || cfg.axes.0 == cfg.axes.1 {
        return Err(Error::InvalidParam(format!(
            "lorenz projection axes must be two distinct of 0..=2, got {:?}",
            cfg.axes
        )));
    }
    let deriv = |s: [f64; 3]| {
        [
            cfg.sigma * (s[1] - s[0]),
            s[0] * (cfg.rho - s[2]) - s[1],
            s[0] * s[1] - cfg.beta * s[2],
        ]
    };
    let rk4 = |s: [f64; 3]| {
        let h = cfg.dt_sim;
        let k1 = deriv(s);
        let k2 = deriv([s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1], s[2] + 0.5 * h * k1[2]]);
        let k3 = deriv([s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1], s[2] + 0.5 * h * k2[2]]);
        let k4 = deriv([s[0] + h * k3[0], s[1] + h * k3[1], s[2] + h * k3[2]]);
        [
            s[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            s[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
            s[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        ]
    };
    let mut s = cfg.x0;
    for _ in 0..(cfg.transient / cfg.dt_sim).round() as usize {
        s = rk4(s);
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        points.push([T::of(s[cfg.axes.0]), T::of(s[cfg.axes.1])]);
        s = rk4(s);
    }
    Ok(ReferencePath {
        points,
        dt,
        name: "lorenz".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MackeyGlassConfig {
    /// Delay, in Mackey-Glass time units. 17 is chaotic, 5 periodic.
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    pub exponent: f64,
    /// Integrator step; the delay line holds `round(tau / dt_sim)` samples.
    pub dt_sim: f64,
    pub x0: f64,
    pub transient: f64,
}

impl Default for MackeyGlassConfig {
    fn default() -> Self {
        Self {
            tau: 17.0,
            beta: 0.2,
            gamma: 0.1,
            exponent: 10.0,
            dt_sim: 0.1,
            x0: 1.2,
            transient: 200.0,
        }
    }
}

/// Delay embedding `(x(t), x(t - tau))` of a Mackey-Glass orbit, integrated
/// with explicit Euler over a ring-buffer delay line initialized to `x0`.
pub fn mackey_glass<T: Float>(n: usize, dt: T, cfg: &MackeyGlassConfig) -> Result<ReferencePath<T>> {
    check_positive("dt", dt)?;
    if !(cfg.dt_sim > 0.0) || !(cfg.tau > 0.0) || cfg.transient < 0.0 || !(cfg.x0 > 0.0) {
        return Err(Error::InvalidParam(
            "mackey-glass needs positive dt_sim, tau, x0 and nonnegative transient".into(),
        ));
    }
    let d = (cfg.tau / cfg.dt_sim).round() as usize;
    if d == 0 {
        return Err(Error::InvalidParam(format!(
            "mackey-glass delay shorter than one step (tau = {}, dt_sim = {})",
            cfg.tau, cfg.dt_sim
        )));
    }
    let mut ring = vec![cfg.x0; d];
    let mut x = cfg.x0;
    let mut k = 0usize;
    let mut advance = |x: &mut f64, k: &mut usize| -> f64 {
        let delayed = ring[*k % d];
        ring[*k % d] = *x;
        let fed = cfg.beta * delayed / (1.0 + delayed.powf(cfg.exponent));
        let x_now = *x;
        *x += cfg.dt_sim * (fed - cfg.gamma * x_now);
        *k += 1;
        delayed
    };
    for _ in 0..(cfg.transient / cfg.dt_sim).round() as usize {
        advance(&mut x, &mut k);
    }
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let now = x;
        let delayed = advance(&mut x, &mut k);
        points.push([T::of(now), T::of(delayed)]);
    }
    Ok(ReferencePath {
        points,
        dt,
        name: "mackey-glass".into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomWalkConfig {
    /// Standard deviation of each raw Gaussian increment, in meters.
    pub step_std: f64,
    /// Gaussian smoothing width, in samples.
    pub smooth_sigma: f64,
}

impl Default for RandomWalkConfig {
    fn default() -> Self {
        Self {
            step_std: 0.02,
            smooth_sigma: 100.0,
        }
    }
}

/// Smoothed Gaussian random walk; raw meandering suitable after
/// [`rescale_to_workspace`].
pub fn random_walk<T: Float, R: Rng + ?Sized>(
    n: usize,
    dt: T,
    cfg: &RandomWalkConfig,
    rng: &mut R,
) -> Result<ReferencePath<T>> {
    check_positive("dt", dt)?;
    if !(cfg.step_std > 0.0) || cfg.smooth_sigma < 0.0 {
        return Err(Error::InvalidParam(
            "random walk needs positive step_std and nonnegative smooth_sigma".into(),
        ));
    }
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, cfg.step_std).expect("validated above");
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    for _ in 0..n {
        x += normal.sample(rng);
        y += normal.sample(rng);
        xs.push(x);
        ys.push(y);
    }
    let xs = gaussian_smooth(&xs, cfg.smooth_sigma);
    let ys = gaussian_smooth(&ys, cfg.smooth_sigma);
    Ok(ReferencePath {
        points: xs
            .into_iter()
            .zip(ys)
            .map(|(a, b)| [T::of(a), T::of(b)])
            .collect(),
        dt,
        name: "random-walk".into(),
    })
}

/// Fits a path into the arm's workspace disk of radius
/// `(1 - margin) (l1 + l2)`.
///
/// Paths already inside pass through untouched (bit-identical). Larger paths
/// are centered on their bounding box and shrunk uniformly, preserving
/// shape. Points that end up inside an unreachable inner annulus
/// (`|l1 - l2| > 0`) only produce a warning here; reachability proper is
/// enforced when a series is derived.
pub fn rescale_to_workspace<T: Float>(
    path: &ReferencePath<T>,
    params: &ArmParams<T>,
    margin: T,
) -> Result<ReferencePath<T>> {
    path.validate()?;
    params.validate()?;
    if !margin.finite() || margin < T::zero() || margin >= T::one() {
        return Err(Error::InvalidParam(format!(
            "margin must lie in [0, 1), got {}",
            margin.as_f64()
        )));
    }
    let (inner, outer) = params.reach();
    let target = (T::one() - margin) * outer;
    let (_, max_r) = path.radius_range();
    if max_r <= target {
        return Ok(path.clone());
    }
    let (mut min_x, mut max_x) = (T::max_value().unwrap(), -T::max_value().unwrap());
    let (mut min_y, mut max_y) = (T::max_value().unwrap(), -T::max_value().unwrap());
    for p in &path.points {
        min_x = min_x.min(p[0]);
        max_x = max_x.max(p[0]);
        min_y = min_y.min(p[1]);
        max_y = max_y.max(p[1]);
    }
    let cx = (min_x + max_x) / T::of(2.0);
    let cy = (min_y + max_y) / T::of(2.0);
    let radius = path
        .points
        .iter()
        .map(|p| ((p[0] - cx) * (p[0] - cx) + (p[1] - cy) * (p[1] - cy)).sqrt())
        .fold(T::zero(), |a, b| a.max(b));
    let scale = if radius > T::zero() {
        target / radius
    } else {
        T::zero()
    };
    let points: Vec<[T; 2]> = path
        .points
        .iter()
        .map(|p| [(p[0] - cx) * scale, (p[1] - cy) * scale])
        .collect();
    if inner > T::zero() {
        let blocked = points
            .iter()
            .filter(|p| (p[0] * p[0] + p[1] * p[1]).sqrt() < inner)
            .count();
        if blocked > 0 {
            log::warn!(
                "{} of {} path points fall inside the unreachable inner annulus (radius {}); \
                 the arm cannot physically track them",
                blocked,
                points.len(),
                inner.as_f64()
            );
        }
    }
    Ok(ReferencePath {
        points,
        dt: path.dt,
        name: path.name.clone(),
    })
}

/// Caps the end-effector speed by uniformly stretching time.
///
/// If any step exceeds `max_speed`, the whole path is resampled by linear
/// interpolation at `1/f` of its original rate, `f` being the smallest
/// factor that brings the fastest step under the limit. The path gets
/// longer; its shape and sample 0 are unchanged.
pub fn limit_speed<T: Float>(path: &ReferencePath<T>, max_speed: T) -> Result<ReferencePath<T>> {
    path.validate()?;
    check_positive("max_speed", max_speed)?;
    if path.points.len() < 2 {
        return Ok(path.clone());
    }
    let mut vmax = T::zero();
    for w in path.points.windows(2) {
        let dx = w[1][0] - w[0][0];
        let dy = w[1][1] - w[0][1];
        vmax = vmax.max((dx * dx + dy * dy).sqrt() / path.dt);
    }
    if vmax <= max_speed {
        return Ok(path.clone());
    }
    let f = (vmax / max_speed).as_f64();
    let n = path.points.len();
    let m = ((n - 1) as f64 * f).floor() as usize + 1;
    let mut points = Vec::with_capacity(m);
    for j in 0..m {
        let u = (j as f64 / f).min((n - 1) as f64);
        let k = (u.floor() as usize).min(n - 2);
        let w = T::of(u - k as f64);
        let (a, b) = (path.points[k], path.points[k + 1]);
        points.push([
            a[0] + (b[0] - a[0]) * w,
            a[1] + (b[1] - a[1]) * w,
        ]);
    }
    Ok(ReferencePath {
        points,
        dt: path.dt,
        name: path.name.clone(),
    })
}

/// Converts a path into the 4-row observation series `[cx, cy, qd1, qd2]`.
///
/// Joint angles come from chained inverse kinematics (elbow-up start, then
/// continuity selection), kept unwrapped so that the velocities, taken as
/// central differences (one-sided at the ends), never see a wrap jump. The
/// first unreachable sample, if any, is reported by index.
pub fn derive_reference_series<T: Float>(
    path: &ReferencePath<T>,
    params: &ArmParams<T>,
) -> Result<ReferenceSeries<T>> {
    path.validate()?;
    params.validate()?;
    let n = path.points.len();
    if n < 2 {
        return Err(Error::InvalidParam(
            "deriving a series needs at least two path samples".into(),
        ));
    }
    let mut q = Vec::with_capacity(n);
    let mut prev: Option<(T, T)> = None;
    for (index, p) in path.points.iter().enumerate() {
        let angles = params.inverse_kinematics(p[0], p[1], prev).map_err(|e| match e {
            Error::Unreachable {
                x,
                y,
                inner,
                outer,
            } => Error::UnreachablePoint {
                index,
                x,
                y,
                inner,
                outer,
            },
            other => other,
        })?;
        q.push(angles);
        prev = Some(angles);
    }
    // A path that starts exactly at the fold point (both links folded onto
    // the base) leaves the shoulder angle free at sample 0; re-solving it
    // against sample 1 aligns the start with the direction of departure
    // instead of an arbitrary default. Away from the fold this reproduces
    // q[0] unchanged.
    q[0] = params
        .inverse_kinematics(path.points[0][0], path.points[0][1], Some(q[1]))
        .expect("sample 0 solved on the forward pass");
    let dt = path.dt;
    let two_dt = T::of(2.0) * dt;
    let qd_at = |i: usize| -> (T, T) {
        if i == 0 {
            ((q[1].0 - q[0].0) / dt, (q[1].1 - q[0].1) / dt)
        } else if i == n - 1 {
            ((q[n - 1].0 - q[n - 2].0) / dt, (q[n - 1].1 - q[n - 2].1) / dt)
        } else {
            ((q[i + 1].0 - q[i - 1].0) / two_dt, (q[i + 1].1 - q[i - 1].1) / two_dt)
        }
    };
    let mut y_d = DMatrix::zeros(4, n);
    for i in 0..n {
        let (qd1, qd2) = qd_at(i);
        y_d[(0, i)] = path.points[i][0];
        y_d[(1, i)] = path.points[i][1];
        y_d[(2, i)] = qd1;
        y_d[(3, i)] = qd2;
    }
    Ok(ReferenceSeries {
        y_d,
        source: path.clone(),
        bridge_len: 0,
    })
}

/// Writes the two-column text form: a header comment carrying `dt` and the
/// name, then one `x y` pair per line. Floats use the shortest
/// round-trippable decimal form.
pub fn write_path<T: Float, W: Write>(path: &ReferencePath<T>, w: &mut W) -> Result<()> {
    let name = path.name.replace(['\n', '\r'], " ");
    writeln!(w, "# rctrack-path dt={} name={}", path.dt.as_f64(), name)?;
    for p in &path.points {
        writeln!(w, "{} {}", p[0].as_f64(), p[1].as_f64())?;
    }
    Ok(())
}

/// Parses the format emitted by [`write_path`]. Errors carry 1-based line
/// numbers.
pub fn read_path<T: Float, R: BufRead>(r: R) -> Result<ReferencePath<T>> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("path file is empty".into()))??;
    if !header.starts_with('#') {
        return Err(Error::Format(
            "line 1: expected a '# rctrack-path dt=... name=...' header".into(),
        ));
    }
    let dt_str = header
        .split_whitespace()
        .find_map(|tok| tok.strip_prefix("dt="))
        .ok_or_else(|| Error::Format("line 1: header is missing dt=".into()))?;
    let dt: f64 = dt_str
        .parse()
        .map_err(|_| Error::Format(format!("line 1: cannot parse dt value {dt_str:?}")))?;
    let name = header
        .split_once("name=")
        .map(|(_, rest)| rest.trim().to_string())
        .ok_or_else(|| Error::Format("line 1: header is missing name=".into()))?;
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut cols = trimmed.split_whitespace();
        let parse = |tok: Option<&str>| -> Result<f64> {
            let tok = tok.ok_or_else(|| {
                Error::Format(format!("line {line_no}: expected two numeric columns"))
            })?;
            let v: f64 = tok.parse().map_err(|_| {
                Error::Format(format!("line {line_no}: cannot parse {tok:?} as a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "line {line_no}: non-finite coordinate {tok:?}"
                )));
            }
            Ok(v)
        };
        let x = parse(cols.next())?;
        let y = parse(cols.next())?;
        if cols.next().is_some() {
            return Err(Error::Format(format!(
                "line {line_no}: expected exactly two columns"
            )));
        }
        points.push([T::of(x), T::of(y)]);
    }
    let path = ReferencePath {
        points,
        dt: T::of(dt),
        name,
    };
    path.validate()?;
    Ok(path)
}

pub fn save_path<T: Float>(path: &ReferencePath<T>, file: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(file)?);
    write_path(path, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_path<T: Float>(file: &Path) -> Result<ReferencePath<T>> {
    read_path(std::io::BufReader::new(std::fs::File::open(file)?))
}
