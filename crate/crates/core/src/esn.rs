//! Leaky-integrator echo state network and its ridge-regression readout.
//!
//! The reservoir update is
//!
//! ```text
//! r(t+1) = (1 - alpha) r(t) + alpha tanh(W_r r(t) + W_in u(t) + b)
//! ```
//!
//! with `W_r` sparse random, rescaled to a prescribed spectral radius, `W_in`
//! and `b` dense uniform. The readout `W_out` is linear and the only trained
//! part; everything else is fixed at initialization time.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dynamics::{ArmParams, TorqueCommand};
use crate::error::{Error, Result};
use crate::float::Float;

/// Magic prefix of the controller file format.
pub const CONTROLLER_MAGIC: &[u8] = b"RCTRACK-ESN-v1\n";

/// Reservoir hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsnParams<T> {
    /// Number of reservoir neurons.
    pub n_r: usize,
    /// Spectral radius of the recurrent matrix after rescaling.
    pub rho: T,
    /// Input weights are uniform on `[-gamma, gamma]`.
    pub gamma: T,
    /// Leak rate in `(0, 1]`.
    pub alpha: T,
    /// Ridge regularization strength.
    pub beta: T,
    /// Link probability of the recurrent matrix, in `(0, 1]`.
    pub p: T,
    /// Biases are uniform on `[-w_b, w_b]`.
    pub w_b: T,
    pub dim_in: usize,
    pub dim_out: usize,
    /// Seed of the reservoir initialization stream.
    pub seed: u64,
}

impl<T: Float> Default for EsnParams<T> {
    fn default() -> Self {
        Self {
            n_r: 200,
            rho: T::of(0.76),
            gamma: T::of(0.76),
            alpha: T::of(0.84),
            beta: T::of(7.5e-4),
            p: T::of(0.53),
            w_b: T::of(2.0),
            dim_in: 8,
            dim_out: 2,
            seed: 0,
        }
    }
}

impl<T: Float> EsnParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.n_r == 0 || self.dim_in == 0 || self.dim_out == 0 {
            return Err(Error::InvalidParam(
                "reservoir and port dimensions must be at least 1".into(),
            ));
        }
        let checks = [
            ("rho", self.rho, self.rho > T::zero()),
            ("gamma", self.gamma, self.gamma >= T::zero()),
            (
                "alpha",
                self.alpha,
                self.alpha > T::zero() && self.alpha <= T::one(),
            ),
            ("beta", self.beta, self.beta >= T::zero()),
            ("p", self.p, self.p > T::zero() && self.p <= T::one()),
            ("w_b", self.w_b, self.w_b >= T::zero()),
        ];
        for (name, v, ok) in checks {
            if !v.finite() || !ok {
                return Err(Error::InvalidParam(format!(
                    "esn parameter {name} out of range, got {}",
                    v.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Fixed and trained weights of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnWeights<T> {
    pub w_r: DMatrix<T>,
    pub w_in: DMatrix<T>,
    pub bias: DVector<T>,
    /// `dim_out x n_r`; `None` until a readout has been trained.
    pub w_out: Option<DMatrix<T>>,
}

/// Reservoir activation vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnState<T> {
    pub r: DVector<T>,
}

impl<T: Float> EsnState<T> {
    pub fn zeros(n_r: usize) -> Self {
        Self {
            r: DVector::zeros(n_r),
        }
    }
}

/// Largest eigenvalue magnitude, from the full (Schur-based) spectrum.
/// Power iteration is not an option here: sparse random matrices frequently
/// have a dominant complex pair, on which it fails to settle.
pub fn spectral_radius<T: Float>(m: &DMatrix<T>) -> T {
    m.complex_eigenvalues()
        .iter()
        .map(|c| (c.re * c.re + c.im * c.im).sqrt())
        .fold(T::zero(), |a, b| if b > a { b } else { a })
}

/// Draws the fixed weights for `params`.
///
/// Entries of `W_r` are nonzero with probability `p`, uniform on `[-1, 1]`,
/// and the whole matrix is rescaled so its spectral radius is exactly `rho`.
/// All draws happen in `f64`, column by column, so a given rng yields the
/// same network for every scalar type.
pub fn init_reservoir<T: Float, R: Rng + ?Sized>(
    params: &EsnParams<T>,
    rng: &mut R,
) -> Result<EsnWeights<T>> {
    params.validate()?;
    let n = params.n_r;
    let p = params.p.as_f64();
    let mut w_r = DMatrix::<T>::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            if rng.random::<f64>() < p {
                w_r[(i, j)] = T::of(rng.random_range(-1.0..1.0));
            }
        }
    }
    let radius = spectral_radius(&w_r);
    if radius <= T::of(1e-300) {
        return Err(Error::InvalidParam(format!(
            "drawn reservoir matrix has zero spectral radius (n_r = {n}, p = {p}); \
             cannot rescale to rho"
        )));
    }
    w_r *= params.rho / radius;

    let gamma = params.gamma.as_f64();
    let w_in = DMatrix::from_fn(n, params.dim_in, |_, _| {
        T::of(rng.random_range(-gamma..gamma))
    });
    let wb = params.w_b.as_f64();
    let bias = DVector::from_fn(n, |_, _| T::of(rng.random_range(-wb..wb)));
    Ok(EsnWeights {
        w_r,
        w_in,
        bias,
        w_out: None,
    })
}

/// One leaky-integrator update. `input` must have `dim_in` entries.
pub fn update_state<T: Float>(
    weights: &EsnWeights<T>,
    state: &EsnState<T>,
    input: &[T],
    alpha: T,
) -> EsnState<T> {
    assert_eq!(
        input.len(),
        weights.w_in.ncols(),
        "input length does not match dim_in"
    );
    let u = DVector::from_column_slice(input);
    let mut z = &weights.w_r * &state.r;
    z += &weights.w_in * u;
    z += &weights.bias;
    let r = &state.r * (T::one() - alpha) + z.map(|v| v.tanh()) * alpha;
    EsnState { r }
}

/// Linear readout of the current state.
pub fn readout<T: Float>(weights: &EsnWeights<T>, state: &EsnState<T>) -> Result<DVector<T>> {
    let w_out = weights.w_out.as_ref().ok_or(Error::NoReadout)?;
    Ok(w_out * &state.r)
}

/// Column pair `[y(t); y(t+dt)]` fed to the network. Training and deployment
/// both assemble their inputs here, which pins the ordering the inverse
/// model is trained on: present observation first, target observation
/// second.
pub fn control_input<T: Float>(now: [T; 4], next: [T; 4]) -> [T; 8] {
    [
        now[0], now[1], now[2], now[3], next[0], next[1], next[2], next[3],
    ]
}

/// Ridge regression `W_out = Y X^T (X X^T + beta I)^-1` for states `X`
/// (`n_r x N`) and targets `Y` (`dim_out x N`), solved through a Cholesky
/// factorization of the regularized Gram matrix.
pub fn train_readout<T: Float>(
    states: &DMatrix<T>,
    targets: &DMatrix<T>,
    beta: T,
) -> Result<DMatrix<T>> {
    assert_eq!(
        states.ncols(),
        targets.ncols(),
        "states and targets must have the same number of columns"
    );
    let mut acc = ReadoutAccumulator::new(states.nrows(), targets.nrows());
    for (x, y) in states.column_iter().zip(targets.column_iter()) {
        acc.push(x.as_slice(), y.as_slice());
    }
    acc.solve(beta)
}

/// Streaming accumulator for the two Gram products of the ridge problem.
///
/// Within a batch, columns are accumulated with plain rank-1 updates;
/// [`ReadoutAccumulator::merge`] adds whole batches with Kahan compensation
/// so that chunked (e.g. episode-parallel) accumulation stays accurate. The
/// final weights depend only on the merge order, which callers keep fixed.
#[derive(Debug, Clone)]
pub struct ReadoutAccumulator<T> {
    gram: DMatrix<T>,
    cross: DMatrix<T>,
    gram_comp: DMatrix<T>,
    cross_comp: DMatrix<T>,
    pub columns: usize,
}

impl<T: Float> ReadoutAccumulator<T> {
    pub fn new(n_r: usize, dim_out: usize) -> Self {
        Self {
            gram: DMatrix::zeros(n_r, n_r),
            cross: DMatrix::zeros(dim_out, n_r),
            gram_comp: DMatrix::zeros(n_r, n_r),
            cross_comp: DMatrix::zeros(dim_out, n_r),
            columns: 0,
        }
    }

    /// Adds one (state, target) column pair.
    pub fn push(&mut self, state: &[T], target: &[T]) {
        let x = DVector::from_column_slice(state);
        let y = DVector::from_column_slice(target);
        self.gram.ger(T::one(), &x, &x, T::one());
        self.cross.ger(T::one(), &y, &x, T::one());
        self.columns += 1;
    }

    /// Folds another accumulator into this one (compensated summation).
    pub fn merge(&mut self, other: &ReadoutAccumulator<T>) {
        kahan_add(&mut self.gram, &mut self.gram_comp, &other.gram);
        kahan_add(&mut self.cross, &mut self.cross_comp, &other.cross);
        self.columns += other.columns;
    }

    /// Solves the regularized normal equations for `W_out`.
    pub fn solve(&self, beta: T) -> Result<DMatrix<T>> {
        if !beta.finite() || beta < T::zero() {
            return Err(Error::InvalidParam(format!(
                "beta must be finite and nonnegative, got {}",
                beta.as_f64()
            )));
        }
        let n = self.gram.nrows();
        let mut g = self.gram.clone();
        for i in 0..n {
            g[(i, i)] += beta;
        }
        let chol = g.cholesky().ok_or(Error::SingularGram)?;
        // W_out^T = G^-1 X Y^T, one solve per output row.
        let mut rhs = self.cross.transpose();
        chol.solve_mut(&mut rhs);
        Ok(rhs.transpose())
    }
}

/// Elementwise `sum += add` with a running compensation term.
fn kahan_add<T: Float>(sum: &mut DMatrix<T>, comp: &mut DMatrix<T>, add: &DMatrix<T>) {
    let (s, c, a) = (sum.as_mut_slice(), comp.as_mut_slice(), add.as_slice());
    for i in 0..s.len() {
        let y = a[i] - c[i];
        let t = s[i] + y;
        c[i] = (t - s[i]) - y;
        s[i] = t;
    }
}

/// Training provenance carried by a controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub episodes: u64,
    pub heldout_episodes: u64,
    /// Episodes redrawn because the plant state went non-finite.
    pub redraws: u64,
    /// RMSE of the predicted torques on held-out episodes.
    pub heldout_rmse: f64,
    /// Fraction of reachable workspace cells visited during training.
    pub coverage: f64,
    pub train_seconds: f64,
}

/// A trained (or at least initialized) inverse-model controller, together
/// with the plant geometry and step size it was fit to.
#[derive(Debug, Clone, PartialEq)]
pub struct EsnController<T> {
    pub params: EsnParams<T>,
    pub arm: ArmParams<T>,
    pub dt: T,
    pub weights: EsnWeights<T>,
    pub meta: TrainingMeta,
}

impl<T: Float> EsnController<T> {
    pub fn initial_state(&self) -> EsnState<T> {
        EsnState::zeros(self.params.n_r)
    }

    /// Advances the reservoir with `input` and reads the torque command.
    pub fn control(&self, state: &mut EsnState<T>, input: &[T; 8]) -> Result<TorqueCommand<T>> {
        *state = update_state(&self.weights, state, input, self.params.alpha);
        let out = readout(&self.weights, state)?;
        Ok(TorqueCommand::new(out[0], out[1]))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }

    /// Serializes the controller. Scalars are stored as little-endian `f64`
    /// regardless of `T`; matrices in column-major order.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CONTROLLER_MAGIC)?;
        w.write_u32::<LittleEndian>(self.params.n_r as u32)?;
        w.write_u32::<LittleEndian>(self.params.dim_in as u32)?;
        w.write_u32::<LittleEndian>(self.params.dim_out as u32)?;
        for v in [
            self.params.rho,
            self.params.gamma,
            self.params.alpha,
            self.params.beta,
            self.params.p,
            self.params.w_b,
        ] {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
        w.write_u64::<LittleEndian>(self.params.seed)?;
        w.write_f64::<LittleEndian>(self.dt.as_f64())?;
        for v in [
            self.arm.m1, self.arm.m2, self.arm.l1, self.arm.l2, self.arm.lc1, self.arm.lc2,
            self.arm.i1, self.arm.i2,
        ] {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
        w.write_u64::<LittleEndian>(self.meta.episodes)?;
        w.write_u64::<LittleEndian>(self.meta.heldout_episodes)?;
        w.write_u64::<LittleEndian>(self.meta.redraws)?;
        w.write_f64::<LittleEndian>(self.meta.heldout_rmse)?;
        w.write_f64::<LittleEndian>(self.meta.coverage)?;
        // Wall time stays out of the file so identical seeds produce
        // identical bytes.
        w.write_u8(self.weights.w_out.is_some() as u8)?;
        for m in [&self.weights.w_r, &self.weights.w_in] {
            for v in m.as_slice() {
                w.write_f64::<LittleEndian>(v.as_f64())?;
            }
        }
        for v in self.weights.bias.as_slice() {
            w.write_f64::<LittleEndian>(v.as_f64())?;
        }
        if let Some(w_out) = &self.weights.w_out {
            for v in w_out.as_slice() {
                w.write_f64::<LittleEndian>(v.as_f64())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 15];
        r.read_exact(&mut magic).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                Error::ControllerVersion {
                    expected: String::from_utf8_lossy(CONTROLLER_MAGIC).into_owned(),
                    found: "(short file)".into(),
                }
            } else {
                Error::Io(e)
            }
        })?;
        if magic != CONTROLLER_MAGIC {
            return Err(Error::ControllerVersion {
                expected: String::from_utf8_lossy(CONTROLLER_MAGIC).into_owned(),
                found: String::from_utf8_lossy(&magic).into_owned(),
            });
        }
        let n_r = r.read_u32::<LittleEndian>()? as usize;
        let dim_in = r.read_u32::<LittleEndian>()? as usize;
        let dim_out = r.read_u32::<LittleEndian>()? as usize;
        const DIM_LIMIT: usize = 1 << 20;
        if n_r == 0 || n_r > DIM_LIMIT || dim_in == 0 || dim_in > DIM_LIMIT || dim_out == 0
            || dim_out > DIM_LIMIT
        {
            return Err(Error::Format(format!(
                "implausible controller dimensions n_r={n_r}, dim_in={dim_in}, dim_out={dim_out}"
            )));
        }
        let mut scalars = [0.0f64; 6];
        r.read_f64_into::<LittleEndian>(&mut scalars)?;
        let seed = r.read_u64::<LittleEndian>()?;
        let dt = r.read_f64::<LittleEndian>()?;
        let mut arm8 = [0.0f64; 8];
        r.read_f64_into::<LittleEndian>(&mut arm8)?;
        let meta = TrainingMeta {
            episodes: r.read_u64::<LittleEndian>()?,
            heldout_episodes: r.read_u64::<LittleEndian>()?,
            redraws: r.read_u64::<LittleEndian>()?,
            heldout_rmse: r.read_f64::<LittleEndian>()?,
            coverage: r.read_f64::<LittleEndian>()?,
            train_seconds: 0.0,
        };
        let has_w_out = r.read_u8()? != 0;
        let params = EsnParams {
            n_r,
            rho: T::of(scalars[0]),
            gamma: T::of(scalars[1]),
            alpha: T::of(scalars[2]),
            beta: T::of(scalars[3]),
            p: T::of(scalars[4]),
            w_b: T::of(scalars[5]),
            dim_in,
            dim_out,
            seed,
        };
        let arm = ArmParams {
            m1: T::of(arm8[0]),
            m2: T::of(arm8[1]),
            l1: T::of(arm8[2]),
            l2: T::of(arm8[3]),
            lc1: T::of(arm8[4]),
            lc2: T::of(arm8[5]),
            i1: T::of(arm8[6]),
            i2: T::of(arm8[7]),
        };
        let mut read_matrix = |rows: usize, cols: usize| -> Result<DMatrix<T>> {
            let mut buf = vec![0.0f64; rows * cols];
            r.read_f64_into::<LittleEndian>(&mut buf)?;
            Ok(DMatrix::from_iterator(rows, cols, buf.iter().map(|&v| T::of(v))))
        };
        let w_r = read_matrix(n_r, n_r)?;
        let w_in = read_matrix(n_r, dim_in)?;
        let bias = read_matrix(n_r, 1)?.column(0).into_owned();
        let w_out = if has_w_out {
            Some(read_matrix(dim_out, n_r)?)
        } else {
            None
        };
        Ok(Self {
            params,
            arm,
            dt: T::of(dt),
            weights: EsnWeights {
                w_r,
                w_in,
                bias,
                w_out,
            },
            meta,
        })
    }
}
