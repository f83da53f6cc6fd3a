//! Sufficient conditions for k-contraction and the certificates recording
//! their outcome.
//!
//! Two families of checks live here:
//!
//! * sampled checks on a GLS (`certify_thm1`, `ari_constant_theta`,
//!   `certify_lti_lurie`), where "for all x, u" is replaced by a grid plus
//!   optional random refinement. These certificates are labelled `sampled`:
//!   they are evidence, not proofs.
//! * interval checks for networked systems (`certify_networked`,
//!   `certify_biochem`), driven by user-supplied derivative bounds. These
//!   involve no sampling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compound::{add_compound, mult_compound, CompoundError};
use crate::expr::{Block, Env, EvalError, VectorFunction};
use crate::matrix::Matrix;
use crate::model::{BoxDomain, GlsModel, Interval, Loop, MetricSpec, ModelError, NetworkedModel};
use crate::rng::Rng;
use crate::spectral::{
    is_psd, singular_values_desc, sym_eigs_desc, sym_sqrt, top_k_eig_sum, SpectralError,
};

/// Slack used for the strict inequalities of the networked conditions.
pub const EPS_STRICT: f64 = 1e-12;
/// Absolute tolerance of the conclusion cross-check.
pub const CONCLUSION_TOL: f64 = 1e-8;
pub const DEFAULT_SAMPLE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Compound(#[from] CompoundError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("order k={k} out of range for dimension {n}")]
    OrderOutOfRange { k: usize, n: usize },
    #[error("grid of {requested} samples exceeds the cap of {cap}")]
    GridCap { requested: u128, cap: usize },
    #[error("sampling grid is empty")]
    EmptyGrid,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "thm1-B")]
    Thm1B,
    #[serde(rename = "thm1-C")]
    Thm1C,
    #[serde(rename = "ari")]
    Ari,
    #[serde(rename = "lti")]
    Lti,
    #[serde(rename = "networked")]
    Networked,
    #[serde(rename = "biochem")]
    Biochem,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Certified,
    NotCertified,
}

/// Which feedback condition supplied η2: the input side (through ∂f/∂u) or
/// the output side (through ∂g/∂x).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    B,
    C,
}

/// How the u quantifier is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UScope {
    /// Grid over the model's input box (plus the closed-loop input).
    Box,
    /// Only `u = -Φ(g(x))`.
    ClosedLoop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub points_per_axis: usize,
    pub u_points_per_axis: usize,
    pub refine: usize,
    pub u_scope: UScope,
    pub x_samples: usize,
    pub u_samples: usize,
}

/// Result of the check `Σ_{i≤k} λ_i(J̃_cl + J̃_clᵀ) ≤ -(η1+η2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConclusionCheck {
    /// Largest eigen-sum seen.
    pub max_value: f64,
    pub bound: f64,
    pub holds: bool,
    pub worst_point: Vec<f64>,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub k: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub rate: f64,
    pub verdict: Verdict,
    pub mode: Mode,
    pub worst_margin: f64,
    pub argmin_point: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub samples: usize,
    pub seed: Option<u64>,
    pub sampled: bool,
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridMeta>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta1_eigen: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_gain_lhs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_gain_rhs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conclusion: Option<ConclusionCheck>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Certificate {
    fn base(k: usize, mode: Mode, eta1: f64, eta2: f64, verdict: Verdict) -> Self {
        Self {
            k,
            eta1,
            eta2,
            rate: (eta1 + eta2) / 2.0,
            verdict,
            mode,
            worst_margin: 0.0,
            argmin_point: Vec::new(),
            sigma1: 1.0,
            sigma2: 1.0,
            samples: 0,
            seed: None,
            sampled: false,
            metric: String::new(),
            grid: None,
            eta2_b: None,
            eta2_c: None,
            eta1_eigen: None,
            alpha_k: None,
            gamma: None,
            p: None,
            small_gain_lhs: None,
            small_gain_rhs: None,
            conclusion: None,
            notes: Vec::new(),
        }
    }

    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }
}

fn verdict_of(eta1: f64, eta2: f64) -> Verdict {
    if eta1 + eta2 > 0.0 {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    }
}

fn check_order(k: usize, n: usize) -> Result<(), CertifyError> {
    if k == 0 || k > n {
        return Err(CertifyError::OrderOutOfRange { k, n });
    }
    Ok(())
}

// Sampling -----------------------------------------------------------------

/// Sampling plan realizing the "for all x, u" quantifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainGrid {
    /// Tensor-grid points per state axis; 1 means the box center.
    pub points_per_axis: usize,
    pub u_points_per_axis: usize,
    /// Extra uniform random state samples.
    pub refine: usize,
    /// `None` picks `Box` when the model has an input domain.
    pub u_scope: Option<UScope>,
    pub seed: u64,
    pub cap: usize,
}

impl Default for DomainGrid {
    fn default() -> Self {
        Self {
            points_per_axis: 5,
            u_points_per_axis: 3,
            refine: 0,
            u_scope: None,
            seed: 0,
            cap: DEFAULT_SAMPLE_CAP,
        }
    }
}

impl DomainGrid {
    pub fn new(points_per_axis: usize) -> Self {
        Self {
            points_per_axis,
            ..Self::default()
        }
    }

    pub fn with_refine(mut self, refine: usize) -> Self {
        self.refine = refine;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.cap = cap;
        self
    }

    pub fn with_u_points(mut self, n: usize) -> Self {
        self.u_points_per_axis = n;
        self
    }

    pub fn with_u_scope(mut self, scope: UScope) -> Self {
        self.u_scope = Some(scope);
        self
    }

    fn axis(lo: f64, hi: f64, count: usize) -> Vec<f64> {
        if count == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect()
    }

    fn tensor_count(per_axis: usize, dim: usize) -> u128 {
        (per_axis as u128).saturating_pow(dim as u32)
    }

    /// Tensor grid over `domain` with `per_axis` points on each axis, first
    /// coordinate varying slowest.
    pub fn tensor(domain: &BoxDomain, per_axis: usize) -> Vec<Vec<f64>> {
        if per_axis == 0 {
            return Vec::new();
        }
        let axes: Vec<Vec<f64>> = domain
            .low()
            .iter()
            .zip(domain.high())
            .map(|(l, h)| Self::axis(*l, *h, per_axis))
            .collect();
        let mut out = vec![Vec::with_capacity(axes.len())];
        for axis in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// State samples: tensor grid followed by `refine` seeded uniform points.
    pub fn state_points(&self, domain: &BoxDomain) -> Result<Vec<Vec<f64>>, CertifyError> {
        let requested =
            Self::tensor_count(self.points_per_axis, domain.dim()) + self.refine as u128;
        if requested > self.cap as u128 {
            return Err(CertifyError::GridCap {
                requested,
                cap: self.cap,
            });
        }
        let mut pts = Self::tensor(domain, self.points_per_axis);
        let mut rng = Rng::new(self.seed);
        pts.extend((0..self.refine).map(|_| rng.point_in(domain.low(), domain.high())));
        if pts.is_empty() {
            return Err(CertifyError::EmptyGrid);
        }
        Ok(pts)
    }

    fn scope_for(&self, model: &GlsModel) -> Result<UScope, CertifyError> {
        match (self.u_scope, model.input_domain()) {
            (Some(UScope::Box), None) => Err(CertifyError::Dimension(
                "u-box sampling requested but the model has no input domain".into(),
            )),
            (Some(s), _) => Ok(s),
            (None, Some(_)) => Ok(UScope::Box),
            (None, None) => Ok(UScope::ClosedLoop),
        }
    }

    /// Input samples besides the closed-loop input.
    fn input_points(&self, model: &GlsModel, scope: UScope) -> Vec<Vec<f64>> {
        match (scope, model.input_domain()) {
            (UScope::Box, Some(d)) => Self::tensor(d, self.u_points_per_axis),
            _ => Vec::new(),
        }
    }
}

// GLS grid conditions --------------------------------------------------------

/// `Θ(x)`, `Θ^-1(x)` with the conditioning check.
fn theta_pair(metric: &MetricSpec, x: &[f64]) -> Result<(Matrix, Matrix), CertifyError> {
    let theta = metric.theta(x)?;
    let sv = singular_values_desc(&theta);
    let condition = sv.max() / sv.min();
    if !(condition.is_finite() && condition <= crate::model::METRIC_CONDITION_LIMIT) {
        return Err(ModelError::SingularMetric {
            point: x.to_vec(),
            condition,
        }
        .into());
    }
    let inv = theta.inverse().ok_or_else(|| ModelError::SingularMetric {
        point: x.to_vec(),
        condition,
    })?;
    Ok((theta, inv))
}

fn sym_sum(a: &Matrix) -> Matrix {
    a + &a.transpose()
}

/// `H = J̃_ol + J̃_olᵀ + Θ f_u f_uᵀ Θᵀ + Θ^-T g_xᵀ g_x Θ^-1`.
pub fn h_matrix(
    model: &GlsModel,
    metric: &MetricSpec,
    x: &[f64],
    u: &[f64],
) -> Result<Matrix, CertifyError> {
    let (theta, theta_inv) = theta_pair(metric, x)?;
    let p = model.partials(x, u)?;
    let dot = metric.theta_dot(x, &model.open_loop_field(x, u)?)?;
    Ok(assemble_h(&theta, &theta_inv, &p.fx, &p.fu, &p.gx, &dot))
}

fn assemble_h(
    theta: &Matrix,
    theta_inv: &Matrix,
    fx: &Matrix,
    fu: &Matrix,
    gx: &Matrix,
    dot_ol: &Matrix,
) -> Matrix {
    let jt = &(&(theta * fx) * theta_inv) + &(dot_ol * theta_inv);
    let bt = theta * fu;
    let ct = gx * theta_inv;
    let h = &(&sym_sum(&jt) + &(&bt * &bt.transpose())) + &(&ct.transpose() * &ct);
    h.symmetric_part()
}

/// `Θ f_u (J_Φ J_Φᵀ - I) f_uᵀ Θᵀ`.
fn b_side(theta: &Matrix, fu: &Matrix, jphi: &Matrix) -> Matrix {
    let m = jphi.rows();
    let inner = &(jphi * &jphi.transpose()) - &Matrix::identity(m);
    let bt = theta * fu;
    (&(&bt * &inner) * &bt.transpose()).symmetric_part()
}

/// `Θ^-T g_xᵀ (J_Φᵀ J_Φ - I) g_x Θ^-1`.
fn c_side(theta_inv: &Matrix, gx: &Matrix, jphi: &Matrix) -> Matrix {
    let p = jphi.cols();
    let inner = &(&jphi.transpose() * jphi) - &Matrix::identity(p);
    let ct = gx * theta_inv;
    (&(&ct.transpose() * &inner) * &ct).symmetric_part()
}

/// `Σ_{i≤k} λ_i(J̃_cl(x) + J̃_cl(x)ᵀ)`.
pub fn closed_loop_eigen_sum(
    model: &GlsModel,
    metric: &MetricSpec,
    x: &[f64],
    k: usize,
) -> Result<f64, CertifyError> {
    let jt = crate::model::riemannian_jacobian(model, metric, x, &[], Loop::Closed)?;
    Ok(top_k_eig_sum(&sym_sum(&jt).symmetric_part(), k)?)
}

/// Check the conclusion `Σλ_i(J̃_cl+J̃_clᵀ) ≤ bound + CONCLUSION_TOL` at the
/// given points.
pub fn conclusion_check(
    model: &GlsModel,
    metric: &MetricSpec,
    k: usize,
    points: &[Vec<f64>],
    bound: f64,
) -> Result<ConclusionCheck, CertifyError> {
    let values = points
        .par_iter()
        .map(|x| closed_loop_eigen_sum(model, metric, x, k))
        .collect::<Result<Vec<_>, _>>()?;
    let (idx, max_value) =
        values
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    Ok(ConclusionCheck {
        max_value,
        bound,
        holds: max_value <= bound + CONCLUSION_TOL,
        worst_point: points.get(idx).cloned().unwrap_or_default(),
        points: points.len(),
    })
}

struct SampleEval {
    h_top: f64,
    b_top: f64,
    c_top: f64,
    margin_b: f64,
    margin_c: f64,
    concl: f64,
    gram_min: f64,
    gram_max: f64,
    n_u: usize,
}

fn eval_sample(
    model: &GlsModel,
    metric: &MetricSpec,
    k: usize,
    x: &[f64],
    us: &[Vec<f64>],
) -> Result<SampleEval, CertifyError> {
    let (theta, theta_inv) = theta_pair(metric, x)?;
    let gram = sym_eigs_desc(&(&theta.transpose() * &theta))?;
    let u_cl = model.feedback_input(x)?;
    let y = model.output(x)?;
    let jphi = model.jacobians().dphi_dy.eval(&Env::y(&y))?;
    let gx = model.jacobians().dg_dx.eval(&Env::x(x))?;
    let c_top = top_k_eig_sum(&c_side(&theta_inv, &gx, &jphi), k)?;

    let mut out = SampleEval {
        h_top: f64::NEG_INFINITY,
        b_top: f64::NEG_INFINITY,
        c_top,
        margin_b: f64::INFINITY,
        margin_c: f64::INFINITY,
        concl: 0.0,
        gram_min: gram.min(),
        gram_max: gram.max(),
        n_u: us.len() + 1,
    };
    for u in std::iter::once(&u_cl).chain(us) {
        let env = Env::xu(x, u);
        let fx = model.jacobians().df_dx.eval(&env)?;
        let fu = model.jacobians().df_du.eval(&env)?;
        let dot = metric.theta_dot(x, &model.open_loop_field(x, u)?)?;
        let h_top = top_k_eig_sum(&assemble_h(&theta, &theta_inv, &fx, &fu, &gx, &dot), k)?;
        let b_top = top_k_eig_sum(&b_side(&theta, &fu, &jphi), k)?;
        out.h_top = out.h_top.max(h_top);
        out.b_top = out.b_top.max(b_top);
        out.margin_b = out.margin_b.min(-h_top - b_top);
        out.margin_c = out.margin_c.min(-h_top - c_top);
    }
    out.concl = closed_loop_eigen_sum(model, metric, x, k)?;
    Ok(out)
}

/// Sampled check of the η1 condition and both η2 conditions.
///
/// `η1 = -max top_k(H)`, `η2` is the larger of the input-side and
/// output-side values; the closed-loop input `u = -Φ(g(x))` is always among
/// the u samples so the conclusion check is meaningful.
pub fn certify_thm1(
    model: &GlsModel,
    metric: &MetricSpec,
    k: usize,
    grid: &DomainGrid,
) -> Result<Certificate, CertifyError> {
    check_order(k, model.n())?;
    let scope = grid.scope_for(model)?;
    let xs = grid.state_points(model.state_domain())?;
    let us = grid.input_points(model, scope);
    let requested = xs.len() as u128 * (us.len() as u128 + 1);
    if requested > grid.cap as u128 {
        return Err(CertifyError::GridCap {
            requested,
            cap: grid.cap,
        });
    }
    let evals = xs
        .par_iter()
        .map(|x| eval_sample(model, metric, k, x, &us))
        .collect::<Result<Vec<_>, _>>()?;

    let max_of = |f: fn(&SampleEval) -> f64| evals.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let eta1 = 0.0 - max_of(|e| e.h_top);
    let eta2_b = 0.0 - max_of(|e| e.b_top);
    let eta2_c = 0.0 - max_of(|e| e.c_top);
    let side = if eta2_b >= eta2_c { Side::B } else { Side::C };
    let eta2 = eta2_b.max(eta2_c);

    let (worst_idx, worst_margin) = evals
        .iter()
        .map(|e| match side {
            Side::B => e.margin_b,
            Side::C => e.margin_c,
        })
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, m)| if m < acc.1 { (i, m) } else { acc },
        );

    let (ci, concl_max) =
        evals
            .iter()
            .map(|e| e.concl)
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
    let bound = -(eta1 + eta2);
    let conclusion = ConclusionCheck {
        max_value: concl_max,
        bound,
        holds: concl_max <= bound + CONCLUSION_TOL,
        worst_point: xs[ci].clone(),
        points: xs.len(),
    };

    let mode = match side {
        Side::B => Mode::Thm1B,
        Side::C => Mode::Thm1C,
    };
    let mut cert = Certificate::base(k, mode, eta1, eta2, verdict_of(eta1, eta2));
    cert.worst_margin = worst_margin;
    cert.argmin_point = xs[worst_idx].clone();
    cert.sigma1 = evals
        .iter()
        .map(|e| e.gram_min)
        .fold(f64::INFINITY, f64::min);
    cert.sigma2 = evals
        .iter()
        .map(|e| e.gram_max)
        .fold(f64::NEG_INFINITY, f64::max);
    cert.samples = evals.iter().map(|e| e.n_u).sum();
    cert.seed = Some(grid.seed);
    cert.sampled = true;
    cert.metric = metric.describe();
    cert.grid = Some(GridMeta {
        points_per_axis: grid.points_per_axis,
        u_points_per_axis: grid.u_points_per_axis,
        refine: grid.refine,
        u_scope: scope,
        x_samples: xs.len(),
        u_samples: us.len() + 1,
    });
    cert.eta2_b = Some(eta2_b);
    cert.eta2_c = Some(eta2_c);
    if !conclusion.holds {
        cert.notes.push(format!(
            "conclusion check failed: eigen-sum {} exceeds -(eta1+eta2) = {}",
            conclusion.max_value, bound
        ));
    }
    cert.conclusion = Some(conclusion);
    Ok(cert)
}

// Constant metrics: Riccati form ------------------------------------------

/// Largest η with `M + η Q ⪯ 0` for every `M` (Q positive definite), by
/// bracketing and bisection on the PSD test.
fn max_eta_bisection(ms: &[Matrix], q: &Matrix) -> Result<f64, CertifyError> {
    let feasible = |eta: f64| -> Result<bool, CertifyError> {
        let results = ms
            .par_iter()
            .map(|m| is_psd(&(&m.scale(-1.0) - &q.scale(eta)), 0.0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(results.into_iter().all(|b| b))
    };
    let mut lo = -1.0;
    let mut guard = 0;
    while !feasible(lo)? {
        lo *= 2.0;
        guard += 1;
        if guard > 2000 || !lo.is_finite() {
            return Err(SpectralError::NonFinite.into());
        }
    }
    let mut hi = 1.0f64.max(lo + 1.0);
    while feasible(hi)? {
        hi *= 2.0;
        guard += 1;
        if guard > 4000 || !hi.is_finite() {
            return Err(SpectralError::NonFinite.into());
        }
    }
    for _ in 0..200 {
        if hi - lo <= 1e-13 * lo.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// The η1 condition in Riccati form at one sample:
/// `P^(k) F^[k] + (F^[k])ᵀ P^(k) + (Θᵀ)^(k) (Θ B Bᵀ Θᵀ + Θ^-T Cᵀ C Θ^-1)^[k] Θ^(k)`.
fn riccati_lhs(
    theta: &Matrix,
    theta_inv: &Matrix,
    pk: &Matrix,
    fx: &Matrix,
    fu: &Matrix,
    gx: &Matrix,
    k: usize,
) -> Result<Matrix, CertifyError> {
    let fk = add_compound(fx, k)?;
    let bt = theta * fu;
    let ct = gx * theta_inv;
    let inner = &(&bt * &bt.transpose()) + &(&ct.transpose() * &ct);
    let tk = mult_compound(theta, k)?;
    let quad = &(&tk.transpose() * &add_compound(&inner, k)?) * &tk;
    Ok((&(&(pk * &fk) + &(&fk.transpose() * pk)) + &quad).symmetric_part())
}

/// Riccati-form certificate for a constant metric `Θ = P^{1/2}`.
///
/// `eta1` is the maximal η1 from bisection on the Riccati inequality;
/// `eta1_eigen` is the eigenvalue-form value, which must agree.
pub fn ari_constant_theta(
    model: &GlsModel,
    p: &Matrix,
    k: usize,
    grid: &DomainGrid,
) -> Result<Certificate, CertifyError> {
    check_order(k, model.n())?;
    if p.shape() != (model.n(), model.n()) {
        return Err(CertifyError::Dimension("P must be n x n".into()));
    }
    let theta = sym_sqrt(p)?;
    let theta_inv = theta
        .inverse()
        .ok_or(SpectralError::NotPositiveDefinite { min: 0.0 })?;
    let metric = MetricSpec::Constant(theta.clone());
    let mut cert = certify_thm1(model, &metric, k, grid)?;

    let scope = grid.scope_for(model)?;
    let xs = grid.state_points(model.state_domain())?;
    let us = grid.input_points(model, scope);
    let pk = mult_compound(p, k)?;
    let ms = xs
        .par_iter()
        .map(|x| -> Result<Vec<Matrix>, CertifyError> {
            let gx = model.jacobians().dg_dx.eval(&Env::x(x))?;
            let u_cl = model.feedback_input(x)?;
            std::iter::once(&u_cl)
                .chain(&us)
                .map(|u| {
                    let env = Env::xu(x, u);
                    let fx = model.jacobians().df_dx.eval(&env)?;
                    let fu = model.jacobians().df_du.eval(&env)?;
                    riccati_lhs(&theta, &theta_inv, &pk, &fx, &fu, &gx, k)
                })
                .collect()
        })
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    let eta1 = max_eta_bisection(&ms, &pk)?;

    cert.eta1_eigen = Some(cert.eta1);
    if (eta1 - cert.eta1).abs() > 1e-6 * (1.0 + cert.eta1.abs()) {
        cert.notes.push(format!(
            "Riccati-form eta1 {eta1} differs from eigenvalue-form eta1 {}",
            cert.eta1
        ));
    }
    cert.eta1 = eta1;
    cert.rate = (cert.eta1 + cert.eta2) / 2.0;
    cert.verdict = verdict_of(cert.eta1, cert.eta2);
    cert.mode = Mode::Ari;
    Ok(cert)
}

/// LTI Lurie system `ẋ = Ax + Bu`, `y = Cx`, `u = -Φ(y)` with the symmetric
/// metric `Θ = P^{1/2}`. The η2 conditions and the conclusion check are
/// sampled over `y_samples`.
pub fn certify_lti_lurie(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    phi: &VectorFunction,
    p: &Matrix,
    k: usize,
    y_samples: &[Vec<f64>],
) -> Result<Certificate, CertifyError> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || c.cols() != n || p.shape() != (n, n) {
        return Err(CertifyError::Dimension(
            "A, B, C, P are inconsistent".into(),
        ));
    }
    if phi.output_dim() != b.cols() || phi.arity().y != c.rows() {
        return Err(CertifyError::Dimension("Φ must map R^p to R^m".into()));
    }
    check_order(k, n)?;
    if y_samples.is_empty() {
        return Err(CertifyError::EmptyGrid);
    }
    let theta = sym_sqrt(p)?;
    let theta_inv = theta
        .inverse()
        .ok_or(SpectralError::NotPositiveDefinite { min: 0.0 })?;
    let zero = Matrix::zeros(n, n);
    let h = assemble_h(&theta, &theta_inv, a, b, c, &zero);
    let eta1_eigen = -top_k_eig_sum(&h, k)?;
    let pk = mult_compound(p, k)?;
    let eta1 = max_eta_bisection(&[riccati_lhs(&theta, &theta_inv, &pk, a, b, c, k)?], &pk)?;

    struct YEval {
        b_top: f64,
        c_top: f64,
        concl: f64,
    }
    let jphi_sym = phi.jacobian(Block::Y);
    let evals = y_samples
        .par_iter()
        .map(|y| -> Result<YEval, CertifyError> {
            let jphi = jphi_sym.eval(&Env::y(y))?;
            let jcl = a - &(&(b * &jphi) * c);
            let jt = &(&theta * &jcl) * &theta_inv;
            Ok(YEval {
                b_top: top_k_eig_sum(&b_side(&theta, b, &jphi), k)?,
                c_top: top_k_eig_sum(&c_side(&theta_inv, c, &jphi), k)?,
                concl: top_k_eig_sum(&sym_sum(&jt).symmetric_part(), k)?,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let eta2_b = 0.0
        - evals
            .iter()
            .map(|e| e.b_top)
            .fold(f64::NEG_INFINITY, f64::max);
    let eta2_c = 0.0
        - evals
            .iter()
            .map(|e| e.c_top)
            .fold(f64::NEG_INFINITY, f64::max);
    let side = if eta2_b >= eta2_c { Side::B } else { Side::C };
    let eta2 = eta2_b.max(eta2_c);
    let h_top = -eta1_eigen;
    let (wi, worst) = evals
        .iter()
        .map(|e| {
            -h_top
                - match side {
                    Side::B => e.b_top,
                    Side::C => e.c_top,
                }
        })
        .enumerate()
        .fold(
            (0, f64::INFINITY),
            |acc, (i, m)| if m < acc.1 { (i, m) } else { acc },
        );
    let (ci, concl_max) =
        evals
            .iter()
            .map(|e| e.concl)
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );

    let gram = sym_eigs_desc(p)?;
    let mut cert = Certificate::base(k, Mode::Lti, eta1, eta2, verdict_of(eta1, eta2));
    cert.worst_margin = worst;
    cert.argmin_point = y_samples[wi].clone();
    cert.sigma1 = gram.min();
    cert.sigma2 = gram.max();
    cert.samples = y_samples.len();
    cert.sampled = true;
    cert.metric = "constant symmetric P^(1/2)".into();
    cert.eta2_b = Some(eta2_b);
    cert.eta2_c = Some(eta2_c);
    cert.eta1_eigen = Some(eta1_eigen);
    let bound = -(eta1 + eta2);
    cert.conclusion = Some(ConclusionCheck {
        max_value: concl_max,
        bound,
        holds: concl_max <= bound + CONCLUSION_TOL,
        worst_point: y_samples[ci].clone(),
        points: y_samples.len(),
    });
    Ok(cert)
}

// Networked systems ----------------------------------------------------------

/// `α_k = k^-1 · inf Σ_j d'_{i_j}` over k-subsets, using interval lower
/// bounds: the mean of the k smallest lower bounds.
pub fn alpha_k(bounds: &[Interval], k: usize) -> Result<f64, CertifyError> {
    check_order(k, bounds.len())?;
    let mut lows: Vec<f64> = bounds.iter().map(|b| b.lo).collect();
    lows.sort_by(f64::total_cmp);
    Ok(lows[..k].iter().sum::<f64>() / k as f64)
}

/// `‖J_f‖² Σ_{i≤k} σ_i²(W1) σ_i²(W2)`, singular values padded with zeros.
pub fn small_gain_lhs(jf_norm_bound: f64, w1: &Matrix, w2: &Matrix, k: usize) -> f64 {
    let s1 = singular_values_desc(w1).into_vec();
    let s2 = singular_values_desc(w2).into_vec();
    let sum: f64 = (0..k)
        .map(|i| {
            let a = s1.get(i).copied().unwrap_or(0.0);
            let b = s2.get(i).copied().unwrap_or(0.0);
            a * a * b * b
        })
        .sum();
    jf_norm_bound * jf_norm_bound * sum
}

/// Scalar-metric construction: γ between `sqrt(LHS/k)` and `α_k`,
/// `p = α_k/γ²`, `η1 = (α_k² - γ²)/α_k`, `η2 = (kγ² - LHS)/α_k`.
struct GainChoice {
    gamma: f64,
    p: f64,
    eta1: f64,
    eta2: f64,
}

fn choose_gain(alpha: f64, lhs: f64, k: usize, admissible: bool) -> Option<GainChoice> {
    if alpha <= 0.0 {
        return None;
    }
    let kf = k as f64;
    let gamma = if !admissible {
        alpha
    } else if lhs > 0.0 {
        ((lhs / kf).sqrt() * alpha).sqrt()
    } else {
        alpha / 2.0
    };
    let g2 = gamma * gamma;
    Some(GainChoice {
        gamma,
        p: alpha / g2,
        eta1: (alpha * alpha - g2) / alpha,
        eta2: (kf * g2 - lhs) / alpha,
    })
}

fn networked_certificate(
    bounds: &[Interval],
    jf_norm_bound: f64,
    w1: &Matrix,
    w2: &Matrix,
    k: usize,
    mode: Mode,
) -> Result<Certificate, CertifyError> {
    let alpha = alpha_k(bounds, k)?;
    let lhs = small_gain_lhs(jf_norm_bound, w1, w2, k);
    let rhs = alpha * alpha * k as f64;
    let admissible = alpha > EPS_STRICT && lhs < rhs - EPS_STRICT;
    let choice = choose_gain(alpha, lhs, k, admissible);
    let (eta1, eta2) = choice.as_ref().map_or((0.0, 0.0), |c| (c.eta1, c.eta2));
    let verdict = if admissible {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    };
    let mut cert = Certificate::base(k, mode, eta1, eta2, verdict);
    cert.worst_margin = alpha.min(rhs - lhs);
    cert.alpha_k = Some(alpha);
    cert.small_gain_lhs = Some(lhs);
    cert.small_gain_rhs = Some(rhs);
    if let Some(c) = &choice {
        cert.gamma = Some(c.gamma);
        cert.p = Some(c.p);
        cert.sigma1 = c.p;
        cert.sigma2 = c.p;
        cert.eta2_c = Some(c.eta2);
    }
    cert.metric = match &choice {
        Some(c) => format!("scalar q=sqrt(p)={}", c.p.sqrt()),
        None => "scalar q=1".into(),
    };
    if alpha <= EPS_STRICT {
        cert.notes
            .push(format!("alpha_k = {alpha} is not positive"));
    } else if !admissible {
        cert.notes.push(format!(
            "small-gain condition fails: {lhs} >= {rhs} (slack {})",
            rhs - lhs
        ));
    }
    Ok(cert)
}

/// Interval certificate for `ẋ = -d(x) + W1 f(W2 x) + v`.
pub fn certify_networked(net: &NetworkedModel, k: usize) -> Result<Certificate, CertifyError> {
    networked_certificate(
        net.derivative_bounds(),
        net.jf_norm_bound(),
        net.w1(),
        net.w2(),
        k,
        Mode::Networked,
    )
}

/// Certificate for the feedback chain: certified iff `α_k > 1` and
/// `r'² < α_k²` (both strict).
pub fn certify_biochem(
    r_prime_bound: f64,
    d_bounds: &[Interval],
    k: usize,
) -> Result<Certificate, CertifyError> {
    let n = d_bounds.len();
    let id = Matrix::identity(n);
    let jf = r_prime_bound.abs().max(1.0);
    let mut cert = networked_certificate(d_bounds, jf, &id, &id, k, Mode::Biochem)?;
    let alpha = cert.alpha_k.expect("set by networked_certificate");
    let r2 = r_prime_bound * r_prime_bound;
    let ok = alpha > 1.0 + EPS_STRICT && r2 < alpha * alpha - EPS_STRICT;
    cert.verdict = if ok {
        Verdict::Certified
    } else {
        Verdict::NotCertified
    };
    cert.worst_margin = (alpha - 1.0).min(alpha * alpha - r2);
    cert.notes.clear();
    if alpha <= 1.0 + EPS_STRICT {
        cert.notes
            .push(format!("alpha_{k} = {alpha} does not exceed 1"));
    }
    if r2 >= alpha * alpha - EPS_STRICT {
        cert.notes
            .push(format!("r' bound squared {r2} is not below alpha_k^2"));
    }
    Ok(cert)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    /// Smallest order at or above the start that certifies.
    pub k_star: Option<usize>,
    pub certificates: Vec<Certificate>,
    /// Every order above `k_star` certifies too.
    pub monotone: bool,
}

/// Scan `k, k+1, …, n` for the first order at which the networked
/// certificate passes.
pub fn monotone_escalate(net: &NetworkedModel, k: usize) -> Result<Escalation, CertifyError> {
    let n = net.n();
    check_order(k, n)?;
    let certificates = (k..=n)
        .map(|j| certify_networked(net, j))
        .collect::<Result<Vec<_>, _>>()?;
    let first = certificates.iter().position(Certificate::is_certified);
    let monotone = first.is_none_or(|i| certificates[i..].iter().all(Certificate::is_certified));
    Ok(Escalation {
        k_star: first.map(|i| k + i),
        certificates,
        monotone,
    })
}
