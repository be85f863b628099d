//! Two-link planar arm: rigid-body dynamics, kinematics, noise channels.
//!
//! The arm moves in a horizontal plane, so gravity never enters and the only
//! forces are the joint torques and the velocity coupling between the links.
//! The equations of motion are `M(q) q'' + C(q, q') q' = tau` with the mass
//! matrix `M` and Coriolis matrix `C` of the standard two-link manipulator.
//! Integration is explicit Euler, which is what the downstream training and
//! tracking pipelines assume; keep `dt` small (the toolkit default is 0.01).

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::float::Float;

/// Physical parameters of the arm. Lengths in meters, masses in kilograms,
/// inertias in kg m^2 about each link's center of mass.
///
/// All fields must be strictly positive; entry points that consume the
/// parameters call [`ArmParams::validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmParams<T> {
    pub m1: T,
    pub m2: T,
    pub l1: T,
    pub l2: T,
    /// Distance from joint 1 to the center of mass of link 1.
    pub lc1: T,
    /// Distance from joint 2 to the center of mass of link 2.
    pub lc2: T,
    pub i1: T,
    pub i2: T,
}

impl<T: Float> Default for ArmParams<T> {
    fn default() -> Self {
        Self {
            m1: T::one(),
            m2: T::one(),
            l1: T::of(0.5),
            l2: T::of(0.5),
            lc1: T::of(0.25),
            lc2: T::of(0.25),
            i1: T::of(0.03),
            i2: T::of(0.03),
        }
    }
}

impl<T: Float> ArmParams<T> {
    /// Default arm with the link lengths replaced. Centers of mass stay at
    /// the link midpoints, which is the convention used everywhere here.
    pub fn with_lengths(l1: T, l2: T) -> Result<Self> {
        let p = Self {
            l1,
            l2,
            lc1: l1 / T::of(2.0),
            lc2: l2 / T::of(2.0),
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("m1", self.m1),
            ("m2", self.m2),
            ("l1", self.l1),
            ("l2", self.l2),
            ("lc1", self.lc1),
            ("lc2", self.lc2),
            ("i1", self.i1),
            ("i2", self.i2),
        ];
        for (name, v) in fields {
            if !v.finite() || v <= T::zero() {
                return Err(Error::InvalidParam(format!(
                    "arm parameter {name} must be strictly positive, got {}",
                    v.as_f64()
                )));
            }
        }
        Ok(())
    }

    /// Inner and outer radius of the reachable annulus.
    pub fn reach(&self) -> (T, T) {
        ((self.l1 - self.l2).abs(), self.l1 + self.l2)
    }

    /// Mass matrix `M(q2)`. Symmetric positive definite for valid parameters;
    /// it depends on the elbow angle only.
    pub fn mass_matrix(&self, q2: T) -> Matrix2<T> {
        let c2 = q2.cos();
        let two = T::of(2.0);
        let m12 = self.m2 * self.l1 * self.lc2 * c2 + self.m2 * self.lc2 * self.lc2 + self.i2;
        let m11 = self.m1 * self.lc1 * self.lc1
            + self.i1
            + self.m2
                * (self.l1 * self.l1 + self.lc2 * self.lc2 + two * self.l1 * self.lc2 * c2)
            + self.i2;
        let m22 = self.m2 * self.lc2 * self.lc2 + self.i2;
        Matrix2::new(m11, m12, m12, m22)
    }

    /// Coriolis/centrifugal matrix `C(q2, q')` such that the coupling torque
    /// is `C q'`.
    pub fn coriolis_matrix(&self, q2: T, qd1: T, qd2: T) -> Matrix2<T> {
        let h = self.m2 * self.l1 * self.lc2 * q2.sin();
        Matrix2::new(-h * qd2, -h * (qd1 + qd2), h * qd1, T::zero())
    }

    /// End-effector position for the given joint angles.
    pub fn forward_kinematics(&self, q1: T, q2: T) -> (T, T) {
        let cx = self.l1 * q1.cos() + self.l2 * (q1 + q2).cos();
        let cy = self.l1 * q1.sin() + self.l2 * (q1 + q2).sin();
        (cx, cy)
    }

    /// Joint angles reaching `(cx, cy)`.
    ///
    /// The elbow sign is ambiguous: without `prev` the elbow-up solution
    /// (`q2 >= 0`) is returned with `q1` wrapped to `[0, 2pi)`. With
    /// `prev = (q1, q2)` the branch and the 2pi offsets minimizing
    /// `|dq1| + |dq2|` against `prev` are selected and the result is left
    /// unwrapped, which is what consumers chaining along a path need.
    ///
    /// When the links have equal length the base point is reachable but the
    /// shoulder angle is free there; the previous shoulder angle is kept and
    /// the elbow folds to the odd multiple of pi nearest `prev`.
    pub fn inverse_kinematics(&self, cx: T, cy: T, prev: Option<(T, T)>) -> Result<(T, T)> {
        let (inner, outer) = self.reach();
        let tol = T::of(1e-9);
        let r2 = cx * cx + cy * cy;
        let r = r2.sqrt();
        if !r.finite() || r > outer + tol || r < inner - tol {
            return Err(Error::Unreachable {
                x: cx.as_f64(),
                y: cy.as_f64(),
                inner: inner.as_f64(),
                outer: outer.as_f64(),
            });
        }
        let two_pi = T::two_pi();
        if r <= tol && inner <= tol {
            // Fold singularity: any q1 works, so continuity decides.
            let (p1, p2) = prev.unwrap_or((T::zero(), T::pi()));
            let q2 = T::pi() + two_pi * ((p2 - T::pi()) / two_pi).round();
            return Ok((p1, q2));
        }
        let c2 = ((r2 - self.l1 * self.l1 - self.l2 * self.l2)
            / (T::of(2.0) * self.l1 * self.l2))
            .clamp(-T::one(), T::one());
        let elbow = c2.acos();
        let phi = cy.atan2(cx);
        let q1_of = |q2: T| phi - (self.l2 * q2.sin()).atan2(self.l1 + self.l2 * q2.cos());
        match prev {
            None => {
                let q1 = q1_of(elbow);
                Ok((q1 - two_pi * (q1 / two_pi).floor(), elbow))
            }
            Some((p1, p2)) => {
                let mut best = (T::max_value().unwrap(), T::zero(), T::zero());
                for q2c in [elbow, -elbow] {
                    let q1c = q1_of(q2c);
                    let q1u = q1c + two_pi * ((p1 - q1c) / two_pi).round();
                    let q2u = q2c + two_pi * ((p2 - q2c) / two_pi).round();
                    let cost = (q1u - p1).abs() + (q2u - p2).abs();
                    if cost < best.0 {
                        best = (cost, q1u, q2u);
                    }
                }
                Ok((best.1, best.2))
            }
        }
    }

    /// Joint accelerations under `torque` at the given state.
    pub fn forward_dynamics(&self, state: &PlantState<T>, torque: TorqueCommand<T>) -> Result<(T, T)> {
        for (context, v) in [
            ("plant state", state.q2),
            ("plant state", state.qd1),
            ("plant state", state.qd2),
            ("torque command", torque.tau1),
            ("torque command", torque.tau2),
        ] {
            if !v.finite() {
                return Err(Error::NonFinite { context });
            }
        }
        let m = self.mass_matrix(state.q2);
        let c = self.coriolis_matrix(state.q2, state.qd1, state.qd2);
        let qd = Vector2::new(state.qd1, state.qd2);
        let rhs = Vector2::new(torque.tau1, torque.tau2) - c * qd;
        let det = m.m11 * m.m22 - m.m12 * m.m21;
        if det <= T::zero() {
            return Err(Error::InvalidParam(format!(
                "mass matrix is not positive definite (det = {})",
                det.as_f64()
            )));
        }
        let qdd1 = (m.m22 * rhs.x - m.m12 * rhs.y) / det;
        let qdd2 = (m.m11 * rhs.y - m.m21 * rhs.x) / det;
        Ok((qdd1, qdd2))
    }

    /// One explicit Euler step of size `dt`.
    ///
    /// Positions advance with the old velocity and velocities with the
    /// acceleration evaluated at the old state. The returned state stores
    /// that acceleration, i.e. the one applied over the step just taken; a
    /// caller pairing accelerations with a new torque recomputes them via
    /// [`ArmParams::forward_dynamics`].
    pub fn step(&self, state: &PlantState<T>, torque: TorqueCommand<T>, dt: T) -> Result<PlantState<T>> {
        let (qdd1, qdd2) = self.forward_dynamics(state, torque)?;
        let q1 = state.q1 + state.qd1 * dt;
        let q2 = state.q2 + state.qd2 * dt;
        let (cx, cy) = self.forward_kinematics(q1, q2);
        let next = PlantState {
            q1,
            q2,
            qd1: state.qd1 + qdd1 * dt,
            qd2: state.qd2 + qdd2 * dt,
            qdd1,
            qdd2,
            cx,
            cy,
        };
        if !next.is_finite() {
            return Err(Error::NonFinite { context: "plant state" });
        }
        Ok(next)
    }

    /// Kinetic energy `q'^T M q' / 2`. There is no potential term in the
    /// horizontal plane, so this is the total energy and is conserved under
    /// torque-free motion.
    pub fn kinetic_energy(&self, state: &PlantState<T>) -> T {
        let qd = Vector2::new(state.qd1, state.qd2);
        (qd.transpose() * self.mass_matrix(state.q2) * qd).x / T::of(2.0)
    }

    /// Generalized momentum conjugate to the shoulder angle, `(M q')_1`.
    /// Conserved whenever `tau1 = 0` because `q1` is cyclic.
    pub fn shoulder_momentum(&self, state: &PlantState<T>) -> T {
        let m = self.mass_matrix(state.q2);
        m.m11 * state.qd1 + m.m12 * state.qd2
    }
}

/// Full plant state. `(cx, cy)` is the end-effector position and always
/// matches `forward_kinematics(q1, q2)` after any operation in this module;
/// `(qdd1, qdd2)` is the acceleration most recently computed for the state
/// (zero for freshly constructed states).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantState<T> {
    pub q1: T,
    pub q2: T,
    pub qd1: T,
    pub qd2: T,
    pub qdd1: T,
    pub qdd2: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Float> PlantState<T> {
    pub fn new(params: &ArmParams<T>, q1: T, q2: T, qd1: T, qd2: T) -> Self {
        let (cx, cy) = params.forward_kinematics(q1, q2);
        Self {
            q1,
            q2,
            qd1,
            qd2,
            qdd1: T::zero(),
            qdd2: T::zero(),
            cx,
            cy,
        }
    }

    pub fn at_rest(params: &ArmParams<T>, q1: T, q2: T) -> Self {
        Self::new(params, q1, q2, T::zero(), T::zero())
    }

    pub fn is_finite(&self) -> bool {
        [
            self.q1, self.q2, self.qd1, self.qd2, self.qdd1, self.qdd2, self.cx, self.cy,
        ]
        .into_iter()
        .all(Float::finite)
    }

    /// State vector in reporting order.
    pub fn to_array(&self) -> [T; 8] {
        [
            self.cx, self.cy, self.q1, self.q2, self.qd1, self.qd2, self.qdd1, self.qdd2,
        ]
    }
}

/// What the controller gets to see: end-effector position and joint
/// velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub cx: T,
    pub cy: T,
    pub qd1: T,
    pub qd2: T,
}

impl<T: Float> Observation<T> {
    pub fn to_array(&self) -> [T; 4] {
        [self.cx, self.cy, self.qd1, self.qd2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorqueCommand<T> {
    pub tau1: T,
    pub tau2: T,
}

impl<T: Float> TorqueCommand<T> {
    pub fn new(tau1: T, tau2: T) -> Self {
        Self { tau1, tau2 }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }
}

/// Noise levels for a run. `sigma_d` is the standard deviation of the
/// additive torque disturbance, `sigma_m` the relative standard deviation of
/// the multiplicative measurement noise. `seed` lets callers derive the
/// noise stream for the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T> {
    pub sigma_d: T,
    pub sigma_m: T,
    pub seed: u64,
}

impl<T: Float> Default for NoiseConfig<T> {
    fn default() -> Self {
        Self {
            sigma_d: T::zero(),
            sigma_m: T::zero(),
            seed: 0,
        }
    }
}

impl<T: Float> NoiseConfig<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("sigma_d", self.sigma_d), ("sigma_m", self.sigma_m)] {
            if !v.finite() || v < T::zero() {
                return Err(Error::InvalidParam(format!(
                    "{name} must be finite and nonnegative, got {}",
                    v.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Measurement: each observed component `v` becomes `v + v * xi` with
/// `xi ~ N(0, sigma_m^2)` drawn per component. A zero `sigma_m` consumes no
/// randomness. Draws are made in `f64` so the stream is identical across
/// scalar types.
pub fn observe<T: Float, R: Rng + ?Sized>(
    state: &PlantState<T>,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> Observation<T> {
    let mut y = [state.cx, state.cy, state.qd1, state.qd2];
    let sigma = noise.sigma_m.as_f64();
    if sigma > 0.0 {
        let dist = Normal::new(0.0, sigma).expect("sigma_m is validated nonnegative");
        for v in &mut y {
            *v += *v * T::of(dist.sample(rng));
        }
    }
    Observation {
        cx: y[0],
        cy: y[1],
        qd1: y[2],
        qd2: y[3],
    }
}

/// Actuation: each torque component gains an additive `N(0, sigma_d^2)`
/// disturbance. A zero `sigma_d` consumes no randomness.
pub fn apply_disturbance<T: Float, R: Rng + ?Sized>(
    torque: TorqueCommand<T>,
    noise: &NoiseConfig<T>,
    rng: &mut R,
) -> TorqueCommand<T> {
    let sigma = noise.sigma_d.as_f64();
    if sigma == 0.0 {
        return torque;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma_d is validated nonnegative");
    TorqueCommand::new(
        torque.tau1 + T::of(dist.sample(rng)),
        torque.tau2 + T::of(dist.sample(rng)),
    )
}

/// Wraps angles into the reporting ranges: `q1` to `[0, 2pi)`, `q2` to
/// `(-pi, pi]`. Internal computations keep angles unwrapped; call this only
/// at output boundaries.
pub fn normalize_angles<T: Float>(q1: T, q2: T) -> (T, T) {
    let two_pi = T::two_pi();
    let w1 = q1 - two_pi * (q1 / two_pi).floor();
    let mut w2 = q2 - two_pi * (q2 / two_pi).round();
    if w2 <= -T::pi() {
        w2 += two_pi;
    }
    (w1, w2)
}
