//! Trajectories, the variational equation and k-volume traces.
//!
//! The integrator is the Dormand–Prince 4(5) pair with local extrapolation,
//! the Hairer error norm and cubic Hermite dense output. There is no stiff
//! solver: step-size underflow is reported as an error.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compound::{mult_compound, CompoundError};
use crate::matrix::Matrix;
use crate::model::{BoxDomain, GlsModel, MetricSpec, ModelError};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step size underflow at t={t} (h={h:e}); the problem may be stiff")]
    StepUnderflow { t: f64, h: f64 },
    #[error("non-finite value in the vector field at t={t}")]
    NonFinite { t: f64 },
    #[error("step limit of {limit} reached at t={t}")]
    MaxSteps { t: f64, limit: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("initial variational matrix does not have full column rank")]
    RankDeficient,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Compound(#[from] CompoundError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Take steps of exactly this size with no error control.
    pub fixed_step: Option<f64>,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            rtol: 1e-8,
            atol: 1e-10,
            max_step: f64::INFINITY,
            fixed_step: None,
            max_steps: 10_000_000,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn new(t_end: f64) -> Self {
        Self {
            t_end,
            ..Self::default()
        }
    }

    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_fixed_step(mut self, h: f64) -> Self {
        self.fixed_step = Some(h);
        self
    }

    pub fn with_max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |s: &str| Err(SimError::Config(s.into()));
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return bad("t_end must be finite and non-negative");
        }
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0 && h.is_finite()) {
                return bad("fixed step must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Autonomous vector field with a Jacobian.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), SimError>;
    fn jacobian(&self, x: &[f64]) -> Result<Matrix, SimError>;
}

impl VectorField for GlsModel {
    fn dim(&self) -> usize {
        self.n()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        out.copy_from_slice(&self.closed_loop_field(x)?);
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix, SimError> {
        Ok(self.closed_loop_jacobian(x)?)
    }
}

/// `ẋ = Ax`.
#[derive(Clone, Debug)]
pub struct LinearField(pub Matrix);

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.0.rows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        out.copy_from_slice(&self.0.mul_vec(x));
        Ok(())
    }

    fn jacobian(&self, _x: &[f64]) -> Result<Matrix, SimError> {
        Ok(self.0.clone())
    }
}

/// Field given by closures.
pub struct FnField<F, J> {
    pub dim: usize,
    pub f: F,
    pub jac: J,
}

impl<F, J> VectorField for FnField<F, J>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
    J: Fn(&[f64]) -> Matrix + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), SimError> {
        (self.f)(x, out);
        Ok(())
    }

    fn jacobian(&self, x: &[f64]) -> Result<Matrix, SimError> {
        Ok((self.jac)(x))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Field values at the stored states, used for Hermite interpolation.
    pub derivatives: Vec<Vec<f64>>,
    pub stats: SolverStats,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states
            .last()
            .expect("trajectory has at least the initial point")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    /// Cubic Hermite interpolation between accepted steps; clamps outside
    /// the integration interval.
    pub fn interpolate(&self, t: f64) -> Vec<f64> {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.states[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1].clone();
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        (0..self.states[i].len())
            .map(|j| {
                h00 * self.states[i][j]
                    + h10 * h * self.derivatives[i][j]
                    + h01 * self.states[i + 1][j]
                    + h11 * h * self.derivatives[i + 1][j]
            })
            .collect()
    }
}

/// Log k-volumes recorded at accepted steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeTrace {
    pub k: usize,
    pub times: Vec<f64>,
    /// `ln |W^(k)(t)|_2`; `-inf` once W loses rank.
    pub logvol: Vec<f64>,
    /// `ln |Θ^(k)(x(t)) W^(k)(t)|_2`.
    pub weighted_logvol: Vec<f64>,
    /// Renormalized W at the final time; the k-volume of the true `W(t)` is
    /// `exp(log_offset)` times the k-volume of this matrix.
    pub w_final: Matrix,
    /// Accumulated `ln|det R|` of the re-orthonormalizations.
    pub log_offset: f64,
}

// Dormand–Prince tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn check_finite(v: &[f64], t: f64) -> Result<(), SimError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFinite { t })
    }
}

/// Per-component error scales. The first `n_plain` components use
/// `atol + rtol·|y|`; the remaining ones are measured relative to their own
/// largest magnitude, so linear variational blocks are controlled
/// independently of their overall scale.
fn error_scales(y: &[f64], y_new: &[f64], cfg: &SimConfig, n_plain: usize, out: &mut [f64]) {
    let wmax = y[n_plain..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let atol_w = if wmax > 0.0 {
        cfg.atol * wmax
    } else {
        cfg.atol
    };
    for i in 0..y.len() {
        let atol = if i < n_plain { cfg.atol } else { atol_w };
        out[i] = atol + cfg.rtol * y[i].abs().max(y_new[i].abs());
    }
}

/// Starting step from the Hairer–Nørsett–Wanner heuristic.
fn initial_step<F>(
    rhs: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    cfg: &SimConfig,
    n_plain: usize,
) -> Result<f64, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SimError>,
{
    let n = y0.len();
    let mut sc = vec![0.0; n];
    error_scales(y0, y0, cfg, n_plain, &mut sc);
    let rms = |v: &[f64], sc: &[f64]| {
        (v.iter().zip(sc).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / n as f64).sqrt()
    };
    let d0 = rms(y0, &sc);
    let d1 = rms(f0, &sc);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, f)| y + h0 * f).collect();
    let mut f1 = vec![0.0; n];
    rhs(t0 + h0, &y1, &mut f1)?;
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff, &sc) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1))
}

/// Integrate `y' = rhs(t, y)` from `t0` to `cfg.t_end`. `on_accept` sees
/// every accepted point (including the initial one) together with its
/// derivative and may rescale both in place.
fn dopri45<F, O>(
    mut rhs: F,
    t0: f64,
    y0: &[f64],
    cfg: &SimConfig,
    n_plain: usize,
    mut on_accept: O,
) -> Result<SolverStats, SimError>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> Result<(), SimError>,
    O: FnMut(f64, &mut [f64], &mut [f64]) -> Result<(), SimError>,
{
    cfg.validate()?;
    let n = y0.len();
    let t_end = cfg.t_end;
    let mut stats = SolverStats::default();
    let mut y = y0.to_vec();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    rhs(t0, &y, &mut k[0])?;
    stats.evaluations += 1;
    check_finite(&k[0], t0)?;
    on_accept(t0, &mut y, &mut k[0])?;

    let mut t = t0;
    let mut h = match cfg.fixed_step {
        Some(h) => h,
        None => {
            stats.evaluations += 1;
            initial_step(&mut rhs, t0, &y, &k[0], cfg, n_plain)?
        }
    };
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    let mut sc = vec![0.0; n];
    let mut last_rejected = false;

    while t < t_end {
        if stats.steps >= cfg.max_steps {
            return Err(SimError::MaxSteps {
                t,
                limit: cfg.max_steps,
            });
        }
        h = h.min(cfg.max_step);
        let last = t + h * (1.0 + 1e-12) >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
            return Err(SimError::StepUnderflow { t, h });
        }

        let stage_rows: [&[f64]; 5] = [&A2, &A3, &A4, &A5, &A6];
        for (s, row) in stage_rows.iter().enumerate() {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, a) in row.iter().enumerate() {
                    acc += a * k[j][i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            let (_, rest) = k.split_at_mut(s + 1);
            rhs(t + C[s + 1] * h, &y_stage, &mut rest[0])?;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (j, b) in B.iter().enumerate() {
                acc += b * k[j][i];
            }
            y_new[i] = y[i] + h * acc;
        }
        let (_, rest) = k.split_at_mut(6);
        rhs(t + h, &y_new, &mut rest[0])?;
        stats.evaluations += 6;

        let err = if cfg.fixed_step.is_some() {
            0.0
        } else {
            error_scales(&y, &y_new, cfg, n_plain, &mut sc);
            let sum: f64 = (0..n)
                .map(|i| {
                    let e: f64 = (0..7).map(|j| E[j] * k[j][i]).sum::<f64>() * h;
                    (e / sc[i]).powi(2)
                })
                .sum();
            (sum / n as f64).sqrt()
        };
        if !err.is_finite() || !y_new.iter().all(|v| v.is_finite()) {
            if cfg.fixed_step.is_some() {
                return Err(SimError::NonFinite { t: t + h });
            }
            h *= 0.2;
            stats.rejected += 1;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);
            check_finite(&k[0], t)?;
            stats.steps += 1;
            on_accept(t, &mut y, &mut k[0])?;
            if cfg.fixed_step.is_none() {
                let mut fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                if last_rejected {
                    fac = fac.min(1.0);
                }
                h *= fac;
            }
            last_rejected = false;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            stats.rejected += 1;
            last_rejected = true;
        }
    }
    Ok(stats)
}

fn check_x0(field: &dyn VectorField, x0: &[f64]) -> Result<(), SimError> {
    if x0.len() != field.dim() {
        return Err(SimError::Dimension(format!(
            "initial state has {} entries, field has dimension {}",
            x0.len(),
            field.dim()
        )));
    }
    Ok(())
}

/// Trajectory of `ẋ = F(x)` on `[0, t_end]`.
pub fn integrate(
    field: &dyn VectorField,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Trajectory, SimError> {
    check_x0(field, x0)?;
    let n = x0.len();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        derivatives: Vec::new(),
        stats: SolverStats::default(),
    };
    traj.stats = dopri45(
        |_, y, out| field.eval(y, out),
        0.0,
        x0,
        cfg,
        n,
        |t, y, dy| {
            traj.times.push(t);
            traj.states.push(y.to_vec());
            traj.derivatives.push(dy.to_vec());
            Ok(())
        },
    )?;
    Ok(traj)
}

/// `ln |M^(k)|_2` for an n×k matrix M (the compound is a column).
fn log_compound_norm(m: &Matrix, k: usize) -> Result<f64, SimError> {
    let norm = mult_compound(m, k)?.frobenius_norm();
    Ok(if norm > 0.0 {
        norm.ln()
    } else {
        f64::NEG_INFINITY
    })
}

const RENORM_LOW: f64 = 1e-280;
const RENORM_HIGH: f64 = 1e280;
/// `ln(vol / Π|w_j|)` below which the columns of W are re-orthonormalized.
const DEPENDENCE_LOG_RATIO: f64 = -6.907755278982137; // ln 1e-3

/// Co-integrate `ẋ = F(x)` and `Ẇ = J(x) W` with `W(0) = w0` (n×k) and
/// record `ln |W^(k)|_2` and `ln |Θ^(k)(x) W^(k)|_2` at accepted steps.
///
/// W is replaced by the Q factor of `W = QR` whenever `|W^(k)|` leaves
/// `[1e-280, 1e280]` or its columns become nearly dependent (volume below
/// 1e-3 of the product of column norms); `ln|det R|` is added to the log
/// offset. The flow is linear in W, so the recorded volumes are unchanged,
/// but the columns never collapse onto the dominant direction in floating
/// point.
pub fn integrate_with_variational(
    field: &dyn VectorField,
    x0: &[f64],
    w0: &Matrix,
    metric: Option<&MetricSpec>,
    cfg: &SimConfig,
) -> Result<(Trajectory, VolumeTrace), SimError> {
    check_x0(field, x0)?;
    let n = x0.len();
    let k = w0.cols();
    if w0.rows() != n || k == 0 || k > n {
        return Err(SimError::Dimension(format!(
            "W0 must be n x k with 1 <= k <= n={n}, got {:?}",
            w0.shape()
        )));
    }
    let col_norms: f64 = (0..k)
        .map(|j| w0.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    let vol0 = mult_compound(w0, k)?.frobenius_norm();
    if !(vol0 > 1e-12 * col_norms) {
        return Err(SimError::RankDeficient);
    }

    let mut y0 = x0.to_vec();
    y0.extend_from_slice(w0.as_slice());
    let unpack_w = |y: &[f64]| Matrix::new(n, k, y[n..].to_vec()).expect("n*k entries");

    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        derivatives: Vec::new(),
        stats: SolverStats::default(),
    };
    let mut trace = VolumeTrace {
        k,
        times: Vec::new(),
        logvol: Vec::new(),
        weighted_logvol: Vec::new(),
        w_final: w0.clone(),
        log_offset: 0.0,
    };
    let mut offset = 0.0;
    let mut dead = false;

    let stats = dopri45(
        |_, y, out| {
            let (x, w) = y.split_at(n);
            let (dx, dw) = out.split_at_mut(n);
            field.eval(x, dx)?;
            let jac = field.jacobian(x)?;
            let w = Matrix::new(n, k, w.to_vec()).expect("n*k entries");
            dw.copy_from_slice((&jac * &w).as_slice());
            Ok(())
        },
        0.0,
        &y0,
        cfg,
        n,
        |t, y, dy| {
            let w = unpack_w(y);
            let mut lv = log_compound_norm(&w, k)?;
            if lv.is_finite() {
                let log_cols: f64 = (0..k)
                    .map(|j| w.column(j).iter().map(|v| v * v).sum::<f64>().sqrt().ln())
                    .sum();
                let skewed = lv - log_cols < DEPENDENCE_LOG_RATIO;
                if skewed || lv < RENORM_LOW.ln() || lv > RENORM_HIGH.ln() {
                    let qr = w.to_nalgebra().qr();
                    let r = qr.r();
                    let log_det: f64 = (0..k).map(|i| r[(i, i)].abs().ln()).sum();
                    if log_det.is_finite() {
                        let r_inv = Matrix::from_nalgebra(&r)
                            .inverse()
                            .ok_or(SimError::RankDeficient)?;
                        let q = Matrix::from_nalgebra(&qr.q());
                        let dw =
                            &Matrix::new(n, k, dy[n..].to_vec()).expect("n*k entries") * &r_inv;
                        y[n..].copy_from_slice(q.as_slice());
                        dy[n..].copy_from_slice(dw.as_slice());
                        offset += log_det;
                        lv = log_compound_norm(&q, k)?;
                    }
                }
            }
            let w = unpack_w(y);
            let x = &y[..n];
            dead |= lv == f64::NEG_INFINITY;
            let weighted = match metric {
                Some(m) if !dead => {
                    let theta = m.theta(x)?;
                    log_compound_norm(&(&theta * &w), k)? + offset
                }
                _ => lv + offset,
            };
            trace.times.push(t);
            trace
                .logvol
                .push(if dead { f64::NEG_INFINITY } else { lv + offset });
            trace
                .weighted_logvol
                .push(if dead { f64::NEG_INFINITY } else { weighted });
            traj.times.push(t);
            traj.states.push(x.to_vec());
            traj.derivatives.push(dy[..n].to_vec());
            trace.w_final = w;
            Ok(())
        },
    )?;
    traj.stats = stats;
    trace.log_offset = offset;
    Ok((traj, trace))
}

/// Final state, if the field is small there and the trajectory moved less
/// than `tol` over the last 10% of the horizon.
pub fn detect_equilibrium(
    traj: &Trajectory,
    field: &dyn VectorField,
    tol: f64,
) -> Result<Option<Vec<f64>>, SimError> {
    let e = traj.final_state().to_vec();
    let mut fe = vec![0.0; e.len()];
    field.eval(&e, &mut fe)?;
    if norm2(&fe) >= tol {
        return Ok(None);
    }
    let t0 = traj.times[0];
    let t_cut = t0 + 0.9 * (traj.final_time() - t0);
    let moved = traj
        .times
        .iter()
        .zip(&traj.states)
        .filter(|(t, _)| **t >= t_cut)
        .map(|(_, x)| norm2(&x.iter().zip(&e).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    Ok((moved < tol).then_some(e))
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `count` seeded uniform points in the box.
pub fn sample_initials(
    domain: &BoxDomain,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, SimError> {
    if count == 0 {
        return Err(SimError::Config("sample count must be at least 1".into()));
    }
    let mut rng = Rng::new(seed);
    Ok((0..count)
        .map(|_| rng.point_in(domain.low(), domain.high()))
        .collect())
}

/// Initial conditions for the three-state feedback chain:
/// `i·(1, 1/3, 1/9) + 0.5·U[0,1)^3` for `i = 0..count`. With five points
/// every coordinate stays inside `[0,5]^3`.
pub fn chain_initials(count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = Rng::new(seed);
    (0..count)
        .map(|i| {
            let i = i as f64;
            [i, i / 3.0, i / 9.0]
                .iter()
                .map(|o| o + 0.5 * rng.uniform())
                .collect()
        })
        .collect()
}

/// Equilibria of the three-state example are `(9e3, 3e3, e3)` with `e3` a
/// root of `sin(9e3) + 1/2 - (1+e3)/(2+e3)`.
pub fn equilibrium_residual_1d(e3: f64) -> f64 {
    (9.0 * e3).sin() + 0.5 - (1.0 + e3) / (2.0 + e3)
}

/// Roots of `f` on `[a, b]`: sign changes on a uniform scan of `segments`
/// cells, refined by bisection to machine precision. Exact zeros on the
/// scan points are included.
pub fn bracket_roots(f: impl Fn(f64) -> f64, a: f64, b: f64, segments: usize) -> Vec<f64> {
    let mut roots = Vec::new();
    let xs: Vec<f64> = (0..=segments)
        .map(|i| a + (b - a) * i as f64 / segments as f64)
        .collect();
    let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    for i in 0..segments {
        if vs[i] == 0.0 {
            roots.push(xs[i]);
            continue;
        }
        if vs[i].signum() * vs[i + 1].signum() < 0.0 {
            let (mut lo, mut hi, mut flo) = (xs[i], xs[i + 1], vs[i]);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = f(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let r = if f(lo).abs() <= f(hi).abs() { lo } else { hi };
            roots.push(r);
        }
    }
    if vs[segments] == 0.0 {
        roots.push(xs[segments]);
    }
    roots
}

/// Least-squares slope of `v` against `t`, ignoring non-finite values.
pub fn fit_slope(t: &[f64], v: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(v)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    let m = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let vm = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let num: f64 = pts.iter().map(|(a, b)| (a - tm) * (b - vm)).sum();
    let den: f64 = pts.iter().map(|(a, _)| (a - tm) * (a - tm)).sum();
    num / den
}

/// Samples whose time lies in the second half of the horizon.
pub fn final_half(trace: &VolumeTrace, weighted: bool) -> (Vec<f64>, Vec<f64>) {
    let t_end = *trace.times.last().expect("non-empty");
    let t0 = trace.times[0];
    let mid = t0 + 0.5 * (t_end - t0);
    let values = if weighted {
        &trace.weighted_logvol
    } else {
        &trace.logvol
    };
    trace
        .times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= mid)
        .map(|(t, v)| (*t, *v))
        .unzip()
}

fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// CSV with header `t,x1,...,xn`, 17 significant digits.
pub fn write_trajectory_csv<W: Write>(mut out: W, traj: &Trajectory) -> io::Result<()> {
    let n = traj.states.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=n).map(|i| format!("x{i}")))
        .collect();
    writeln!(out, "{}", header.join(","))?;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        let row: Vec<String> = std::iter::once(*t)
            .chain(x.iter().copied())
            .map(fmt17)
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// CSV with header `t,logvol,weighted_logvol`.
pub fn write_volume_csv<W: Write>(mut out: W, trace: &VolumeTrace) -> io::Result<()> {
    writeln!(out, "t,logvol,weighted_logvol")?;
    for i in 0..trace.times.len() {
        writeln!(
            out,
            "{},{},{}",
            fmt17(trace.times[i]),
            fmt17(trace.logvol[i]),
            fmt17(trace.weighted_logvol[i])
        )?;
    }
    Ok(())
}
