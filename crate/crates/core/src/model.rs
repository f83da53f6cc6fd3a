//! Generalized Lurie systems: the feedback interconnection of
//! `ẋ = f(x, u)`, `y = g(x)` with a static nonlinearity `u = -Φ(y)`.
//!
//! The module also houses the metrics Θ(x) used to measure contraction,
//! the Riemannian Jacobians built from them, networked systems of the form
//! `ẋ = -d(x) + W1 f(W2 x) + v`, and the built-in example families.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Arity, Block, Env, EvalError, Expr, ExprError, ExprMatrix, Var, VectorFunction};
use crate::matrix::Matrix;
use crate::spectral::singular_values_desc;

/// Largest accepted condition number of Θ(x).
pub const METRIC_CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid domain: {0}")]
    Domain(String),
    #[error("metric is singular or ill-conditioned (cond={condition:e}) at x={point:?}")]
    SingularMetric { point: Vec<f64>, condition: f64 },
    #[error("tridiagonal sign condition violated for pair ({i},{j}) at x={point:?}: -h_ij={upper}, h_ji={lower}", i = .index + 1, j = .index + 2)]
    SignCondition {
        index: usize,
        point: Vec<f64>,
        upper: f64,
        lower: f64,
    },
    #[error("vector field is not tridiagonal: {0}")]
    NotTridiagonal(String),
    #[error("unknown builtin model '{0}'")]
    UnknownBuiltin(String),
    #[error("invalid parameters: {0}")]
    Params(String),
}

/// Axis-aligned box `low <= x <= high`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxRepr", into = "BoxRepr")]
pub struct BoxDomain {
    low: Vec<f64>,
    high: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxRepr {
    low: Vec<f64>,
    high: Vec<f64>,
}

impl TryFrom<BoxRepr> for BoxDomain {
    type Error = ModelError;

    fn try_from(r: BoxRepr) -> Result<Self, ModelError> {
        BoxDomain::new(r.low, r.high)
    }
}

impl From<BoxDomain> for BoxRepr {
    fn from(b: BoxDomain) -> Self {
        BoxRepr {
            low: b.low,
            high: b.high,
        }
    }
}

impl BoxDomain {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self, ModelError> {
        if low.len() != high.len() {
            return Err(ModelError::Domain(format!(
                "low has {} entries, high has {}",
                low.len(),
                high.len()
            )));
        }
        if low.is_empty() {
            return Err(ModelError::Domain("box has no coordinates".into()));
        }
        for (i, (l, h)) in low.iter().zip(&high).enumerate() {
            if !l.is_finite() || !h.is_finite() || l > h {
                return Err(ModelError::Domain(format!(
                    "coordinate {}: low={l} high={h}",
                    i + 1
                )));
            }
        }
        Ok(Self { low, high })
    }

    pub fn cube(dim: usize, low: f64, high: f64) -> Result<Self, ModelError> {
        Self::new(vec![low; dim], vec![high; dim])
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn low(&self) -> &[f64] {
        &self.low
    }

    pub fn high(&self) -> &[f64] {
        &self.high
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.low.iter().zip(&self.high))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lerp(&vec![0.5; self.dim()])
    }

    /// Point at fractional coordinates `t ∈ [0,1]^n`.
    pub fn lerp(&self, t: &[f64]) -> Vec<f64> {
        self.low
            .iter()
            .zip(&self.high)
            .zip(t)
            .map(|((l, h), t)| l + (h - l) * t)
            .collect()
    }
}

/// Closed interval, serialized as `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(ModelError::Params(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = ModelError;

    fn try_from(v: [f64; 2]) -> Result<Self, ModelError> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Symbolic partial derivatives of a GLS.
#[derive(Clone, Debug, PartialEq)]
pub struct GlsJacobians {
    pub df_dx: ExprMatrix,
    pub df_du: ExprMatrix,
    pub dg_dx: ExprMatrix,
    pub dphi_dy: ExprMatrix,
}

/// Which symbolic Jacobian to replace with a user-supplied matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianBlock {
    DfDx,
    DfDu,
    DgDx,
    DphiDy,
}

/// Numerical partials at a point.
#[derive(Clone, Debug)]
pub struct Partials {
    pub fx: Matrix,
    pub fu: Matrix,
    pub gx: Matrix,
    /// `∂Φ/∂y` evaluated at `y = g(x)`.
    pub phi_y: Matrix,
}

#[derive(Clone, Debug)]
pub struct GlsModel {
    name: String,
    n: usize,
    m: usize,
    p: usize,
    f: VectorFunction,
    g: VectorFunction,
    phi: VectorFunction,
    jac: GlsJacobians,
    state_domain: BoxDomain,
    input_domain: Option<BoxDomain>,
}

impl GlsModel {
    pub fn new(
        name: impl Into<String>,
        f: VectorFunction,
        g: VectorFunction,
        phi: VectorFunction,
        state_domain: BoxDomain,
        input_domain: Option<BoxDomain>,
    ) -> Result<Self, ModelError> {
        let n = f.output_dim();
        let m = phi.output_dim();
        let p = g.output_dim();
        let dim_err = |what: String| Err(ModelError::Dimension(what));
        if f.arity() != Arity::xu(n, m) {
            return dim_err(format!(
                "f must map (R^{n}, R^{m}) to R^{n}, declared arity {:?}",
                f.arity()
            ));
        }
        if g.arity() != Arity::x(n) {
            return dim_err(format!("g must map R^{n} to R^{p}"));
        }
        if phi.arity() != Arity::y(p) {
            return dim_err(format!("phi must map R^{p} to R^{m}"));
        }
        if state_domain.dim() != n {
            return dim_err(format!(
                "state domain has dimension {}, n={n}",
                state_domain.dim()
            ));
        }
        if let Some(d) = &input_domain {
            if d.dim() != m {
                return dim_err(format!("input domain has dimension {}, m={m}", d.dim()));
            }
        }
        let jac = GlsJacobians {
            df_dx: f.jacobian(Block::X),
            df_du: f.jacobian(Block::U),
            dg_dx: g.jacobian(Block::X),
            dphi_dy: phi.jacobian(Block::Y),
        };
        Ok(Self {
            name: name.into(),
            n,
            m,
            p,
            f,
            g,
            phi,
            jac,
            state_domain,
            input_domain,
        })
    }

    /// Parse a model from expression strings. `f` may use `x1..xn, u1..um`,
    /// `g` uses `x1..xn` and `phi` uses `y1..yp`.
    pub fn from_strings<S: AsRef<str>>(
        name: impl Into<String>,
        f: &[S],
        g: &[S],
        phi: &[S],
        state_domain: BoxDomain,
        input_domain: Option<BoxDomain>,
    ) -> Result<Self, ModelError> {
        let n = f.len();
        let m = phi.len();
        let p = g.len();
        let f = VectorFunction::parse(f, Arity::xu(n, m))?;
        let g = VectorFunction::parse(g, Arity::x(n))?;
        let phi = VectorFunction::parse(phi, Arity::y(p))?;
        Self::new(name, f, g, phi, state_domain, input_domain)
    }

    /// Replace a symbolic Jacobian with an explicit expression matrix.
    pub fn with_jacobian_override(
        mut self,
        which: JacobianBlock,
        m: ExprMatrix,
    ) -> Result<Self, ModelError> {
        let (shape, slot) = match which {
            JacobianBlock::DfDx => ((self.n, self.n), &mut self.jac.df_dx),
            JacobianBlock::DfDu => ((self.n, self.m), &mut self.jac.df_du),
            JacobianBlock::DgDx => ((self.p, self.n), &mut self.jac.dg_dx),
            JacobianBlock::DphiDy => ((self.m, self.p), &mut self.jac.dphi_dy),
        };
        if (m.rows(), m.cols()) != shape {
            return Err(ModelError::Dimension(format!(
                "override for {which:?} must be {}x{}",
                shape.0, shape.1
            )));
        }
        *slot = m;
        Ok(self)
    }

    pub fn with_state_domain(mut self, d: BoxDomain) -> Result<Self, ModelError> {
        if d.dim() != self.n {
            return Err(ModelError::Dimension("state domain dimension".into()));
        }
        self.state_domain = d;
        Ok(self)
    }

    pub fn with_input_domain(mut self, d: Option<BoxDomain>) -> Result<Self, ModelError> {
        if d.as_ref().is_some_and(|d| d.dim() != self.m) {
            return Err(ModelError::Dimension("input domain dimension".into()));
        }
        self.input_domain = d;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f(&self) -> &VectorFunction {
        &self.f
    }

    pub fn g(&self) -> &VectorFunction {
        &self.g
    }

    pub fn phi(&self) -> &VectorFunction {
        &self.phi
    }

    pub fn jacobians(&self) -> &GlsJacobians {
        &self.jac
    }

    pub fn state_domain(&self) -> &BoxDomain {
        &self.state_domain
    }

    pub fn input_domain(&self) -> Option<&BoxDomain> {
        self.input_domain.as_ref()
    }

    fn check_x(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n {
            return Err(ModelError::Dimension(format!(
                "state has {} entries, n={}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_x(x)?;
        Ok(self.g.eval(&Env::x(x))?)
    }

    /// The input produced by the feedback loop, `u = -Φ(g(x))`.
    pub fn feedback_input(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let y = self.output(x)?;
        Ok(self
            .phi
            .eval(&Env::y(&y))?
            .into_iter()
            .map(|v| -v)
            .collect())
    }

    pub fn open_loop_field(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_x(x)?;
        Ok(self.f.eval(&Env::xu(x, u))?)
    }

    /// `f_cl(x) = f(x, -Φ(g(x)))`.
    pub fn closed_loop_field(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let u = self.feedback_input(x)?;
        self.open_loop_field(x, &u)
    }

    pub fn partials(&self, x: &[f64], u: &[f64]) -> Result<Partials, ModelError> {
        self.check_x(x)?;
        let env = Env::xu(x, u);
        let y = self.g.eval(&Env::x(x))?;
        Ok(Partials {
            fx: self.jac.df_dx.eval(&env)?,
            fu: self.jac.df_du.eval(&env)?,
            gx: self.jac.dg_dx.eval(&Env::x(x))?,
            phi_y: self.jac.dphi_dy.eval(&Env::y(&y))?,
        })
    }

    /// `J_cl = ∂f/∂x - ∂f/∂u ∂Φ/∂y ∂g/∂x`, evaluated at `u = -Φ(g(x))`.
    pub fn closed_loop_jacobian(&self, x: &[f64]) -> Result<Matrix, ModelError> {
        let u = self.feedback_input(x)?;
        let p = self.partials(x, &u)?;
        Ok(&p.fx - &(&(&p.fu * &p.phi_y) * &p.gx))
    }
}

// Metrics ------------------------------------------------------------------

/// Diagonal state-dependent metric `Θ(x) = diag(δ_1(x), …, δ_n(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalMetric {
    deltas: Vec<Expr>,
    gradients: ExprMatrix,
    tridiagonal: bool,
}

impl DiagonalMetric {
    pub fn deltas(&self) -> &[Expr] {
        &self.deltas
    }

    pub fn is_tridiagonal_construction(&self) -> bool {
        self.tridiagonal
    }
}

/// The metric Θ defining the scaled norm `z -> |Θ(x) z|_2`.
#[derive(Clone, Debug, PartialEq)]
pub enum MetricSpec {
    Constant(Matrix),
    /// `Θ = q I` with `q > 0`.
    Scalar(f64),
    Diagonal(DiagonalMetric),
}

impl MetricSpec {
    pub fn identity() -> Self {
        MetricSpec::Scalar(1.0)
    }

    pub fn constant(theta: Matrix) -> Result<Self, ModelError> {
        if !theta.is_square() {
            return Err(ModelError::Dimension(
                "constant metric must be square".into(),
            ));
        }
        check_conditioning(&theta, &[])?;
        Ok(MetricSpec::Constant(theta))
    }

    pub fn scalar(q: f64) -> Result<Self, ModelError> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(ModelError::Params(format!(
                "scalar metric needs q > 0, got {q}"
            )));
        }
        Ok(MetricSpec::Scalar(q))
    }

    /// Diagonal metric from expressions in `x1..xn`.
    pub fn diagonal(deltas: Vec<Expr>, n: usize) -> Result<Self, ModelError> {
        Self::diagonal_inner(deltas, n, false)
    }

    pub fn diagonal_from_strings<S: AsRef<str>>(deltas: &[S]) -> Result<Self, ModelError> {
        let n = deltas.len();
        let f = VectorFunction::parse(deltas, Arity::x(n))?;
        Self::diagonal(f.components().to_vec(), n)
    }

    fn diagonal_inner(deltas: Vec<Expr>, n: usize, tridiagonal: bool) -> Result<Self, ModelError> {
        if deltas.len() != n {
            return Err(ModelError::Dimension(format!(
                "diagonal metric has {} entries, n={n}",
                deltas.len()
            )));
        }
        let f = VectorFunction::new(deltas, Arity::x(n))?;
        let gradients = f.jacobian(Block::X);
        Ok(MetricSpec::Diagonal(DiagonalMetric {
            deltas: f.components().to_vec(),
            gradients,
            tridiagonal,
        }))
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, MetricSpec::Diagonal(_))
    }

    pub fn describe(&self) -> String {
        match self {
            MetricSpec::Constant(t) => format!("constant {}x{}", t.rows(), t.cols()),
            MetricSpec::Scalar(q) => format!("scalar q={q}"),
            MetricSpec::Diagonal(d) => {
                let entries: Vec<String> = d.deltas.iter().map(|e| e.to_string()).collect();
                let kind = if d.tridiagonal {
                    "tridiagonal-auto"
                } else {
                    "diagonal"
                };
                format!("{kind} diag({})", entries.join(", "))
            }
        }
    }

    /// Θ(x), without a conditioning check.
    pub fn theta(&self, x: &[f64]) -> Result<Matrix, ModelError> {
        Ok(match self {
            MetricSpec::Constant(t) => {
                if t.rows() != x.len() {
                    return Err(ModelError::Dimension(
                        "metric and state dimensions differ".into(),
                    ));
                }
                t.clone()
            }
            MetricSpec::Scalar(q) => Matrix::identity(x.len()).scale(*q),
            MetricSpec::Diagonal(d) => {
                if d.deltas.len() != x.len() {
                    return Err(ModelError::Dimension(
                        "metric and state dimensions differ".into(),
                    ));
                }
                let env = Env::x(x);
                let diag = d
                    .deltas
                    .iter()
                    .map(|e| e.eval(&env))
                    .collect::<Result<Vec<_>, _>>()?;
                Matrix::from_diag(&diag)
            }
        })
    }

    /// Derivative of Θ along the vector `field`: entry (i,j) is
    /// `∇θ_ij(x) · field`.
    pub fn theta_dot(&self, x: &[f64], field: &[f64]) -> Result<Matrix, ModelError> {
        let n = x.len();
        Ok(match self {
            MetricSpec::Constant(_) | MetricSpec::Scalar(_) => Matrix::zeros(n, n),
            MetricSpec::Diagonal(d) => {
                let grad = d.gradients.eval(&Env::x(x))?;
                Matrix::from_diag(&grad.mul_vec(field))
            }
        })
    }
}

fn check_conditioning(theta: &Matrix, x: &[f64]) -> Result<(), ModelError> {
    let sv = singular_values_desc(theta);
    let condition = sv.max() / sv.min();
    if !(condition.is_finite() && condition <= METRIC_CONDITION_LIMIT) {
        return Err(ModelError::SingularMetric {
            point: x.to_vec(),
            condition,
        });
    }
    Ok(())
}

/// Θ at a point together with its inverse and its derivatives along the
/// closed-loop and open-loop fields.
#[derive(Clone, Debug)]
pub struct ThetaEval {
    pub theta: Matrix,
    pub theta_inv: Matrix,
    pub dot_cl: Matrix,
    pub dot_ol: Matrix,
}

pub fn theta_eval(
    metric: &MetricSpec,
    model: &GlsModel,
    x: &[f64],
    u: &[f64],
) -> Result<ThetaEval, ModelError> {
    let theta = metric.theta(x)?;
    check_conditioning(&theta, x)?;
    let theta_inv = theta.inverse().ok_or_else(|| ModelError::SingularMetric {
        point: x.to_vec(),
        condition: f64::INFINITY,
    })?;
    let dot_cl = metric.theta_dot(x, &model.closed_loop_field(x)?)?;
    let dot_ol = metric.theta_dot(x, &model.open_loop_field(x, u)?)?;
    Ok(ThetaEval {
        theta,
        theta_inv,
        dot_cl,
        dot_ol,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loop {
    Open,
    Closed,
}

/// Riemannian Jacobian `Θ J Θ^-1 + Θ̇ Θ^-1`; for the open loop J is
/// `∂f/∂x(x,u)`, for the closed loop it is `J_cl(x)` and `u` is ignored.
pub fn riemannian_jacobian(
    model: &GlsModel,
    metric: &MetricSpec,
    x: &[f64],
    u: &[f64],
    which: Loop,
) -> Result<Matrix, ModelError> {
    let theta = metric.theta(x)?;
    check_conditioning(&theta, x)?;
    let theta_inv = theta.inverse().ok_or_else(|| ModelError::SingularMetric {
        point: x.to_vec(),
        condition: f64::INFINITY,
    })?;
    let (jac, field) = match which {
        Loop::Open => {
            let env = Env::xu(x, u);
            (model.jac.df_dx.eval(&env)?, model.open_loop_field(x, u)?)
        }
        Loop::Closed => (model.closed_loop_jacobian(x)?, model.closed_loop_field(x)?),
    };
    let dot = metric.theta_dot(x, &field)?;
    Ok(&(&(&theta * &jac) * &theta_inv) + &(&dot * &theta_inv))
}

// Tridiagonal metric construction ------------------------------------------

/// Range of the off-diagonal Jacobian entries seen while building a
/// tridiagonal metric: every `-h_{i,i+1}` and `h_{i+1,i}` lies in `[s1, s2]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TridiagonalBounds {
    pub s1: f64,
    pub s2: f64,
}

/// Build `Θ(x) = diag(δ_1, …, δ_n)` with `δ_1 = 1` and
/// `δ_{i+1} = δ_i sqrt(-h_{i,i+1} / h_{i+1,i})`, where `h_{ij} = ∂f_i/∂x_j`.
///
/// The field must be tridiagonal with `∂f/∂x` independent of u, and the sign
/// condition `-h_{i,i+1} > 0`, `h_{i+1,i} > 0` is checked at every sample.
pub fn tridiagonal_theta(
    model: &GlsModel,
    samples: &[Vec<f64>],
) -> Result<(MetricSpec, TridiagonalBounds), ModelError> {
    let n = model.n();
    let h = &model.jac.df_dx;
    for i in 0..n {
        for j in 0..n {
            let e = h.get(i, j);
            if e.depends_on_block(Block::U) {
                return Err(ModelError::NotTridiagonal(format!(
                    "∂f{}/∂x{} depends on the input",
                    i + 1,
                    j + 1
                )));
            }
            if i.abs_diff(j) > 1 && *e != Expr::Const(0.0) {
                for x in samples {
                    let v = e.eval(&Env::x(x))?;
                    if v != 0.0 {
                        return Err(ModelError::NotTridiagonal(format!(
                            "∂f{}/∂x{} = {v} at x={x:?}",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
        }
    }
    let mut bounds = TridiagonalBounds {
        s1: f64::INFINITY,
        s2: f64::NEG_INFINITY,
    };
    for x in samples {
        let env = Env::x(x);
        for i in 0..n.saturating_sub(1) {
            let upper = -h.get(i, i + 1).eval(&env)?;
            let lower = h.get(i + 1, i).eval(&env)?;
            if !(upper > 0.0 && lower > 0.0) {
                return Err(ModelError::SignCondition {
                    index: i,
                    point: x.clone(),
                    upper,
                    lower,
                });
            }
            bounds.s1 = bounds.s1.min(upper.min(lower));
            bounds.s2 = bounds.s2.max(upper.max(lower));
        }
    }
    let mut deltas = vec![Expr::Const(1.0)];
    for i in 0..n.saturating_sub(1) {
        let ratio = Expr::div(Expr::neg(h.get(i, i + 1).clone()), h.get(i + 1, i).clone());
        let next = Expr::mul(
            deltas[i].clone(),
            Expr::call(crate::expr::Func::Sqrt, ratio),
        );
        deltas.push(next);
    }
    let metric = MetricSpec::diagonal_inner(deltas, n, true)?;
    Ok((metric, bounds))
}

// Networked systems ---------------------------------------------------------

/// `ẋ = -d(x) + W1 f(W2 x) + v` with coordinate-wise dissipation `d_i(x_i)`.
#[derive(Clone, Debug)]
pub struct NetworkedModel {
    name: String,
    w1: Matrix,
    w2: Matrix,
    d: Vec<Expr>,
    activation: VectorFunction,
    v: Vec<f64>,
    derivative_bounds: Vec<Interval>,
    jf_norm_bound: f64,
    state_domain: BoxDomain,
}

impl NetworkedModel {
    /// `d` entries are expressions in `x_i` only; `activation` maps
    /// `y1..yq` to R^m.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        w1: Matrix,
        w2: Matrix,
        d: Vec<Expr>,
        activation: VectorFunction,
        v: Vec<f64>,
        derivative_bounds: Vec<Interval>,
        jf_norm_bound: f64,
        state_domain: BoxDomain,
    ) -> Result<Self, ModelError> {
        let n = w1.rows();
        let m = w1.cols();
        let q = w2.rows();
        let dim = |s: String| Err(ModelError::Dimension(s));
        if w2.cols() != n {
            return dim(format!("W2 must have n={n} columns, has {}", w2.cols()));
        }
        if activation.output_dim() != m || activation.arity() != Arity::y(q) {
            return dim(format!("activation must map R^{q} to R^{m}"));
        }
        if d.len() != n || v.len() != n || derivative_bounds.len() != n {
            return dim(format!(
                "d, v and derivative bounds need n={n} entries (got {}, {}, {})",
                d.len(),
                v.len(),
                derivative_bounds.len()
            ));
        }
        if state_domain.dim() != n {
            return dim("state domain dimension".into());
        }
        for (i, di) in d.iter().enumerate() {
            let vars = di.variables();
            if vars.iter().any(|v| *v != Var::x(i)) {
                return Err(ModelError::Params(format!(
                    "d{} may depend only on x{}",
                    i + 1,
                    i + 1
                )));
            }
        }
        if !(jf_norm_bound >= 0.0 && jf_norm_bound.is_finite()) {
            return Err(ModelError::Params(format!(
                "invalid ‖J_f‖ bound {jf_norm_bound}"
            )));
        }
        Ok(Self {
            name: name.into(),
            w1,
            w2,
            d,
            activation,
            v,
            derivative_bounds,
            jf_norm_bound,
            state_domain,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.w1.rows()
    }

    pub fn w1(&self) -> &Matrix {
        &self.w1
    }

    pub fn w2(&self) -> &Matrix {
        &self.w2
    }

    pub fn dissipation(&self) -> &[Expr] {
        &self.d
    }

    pub fn activation(&self) -> &VectorFunction {
        &self.activation
    }

    pub fn offset(&self) -> &[f64] {
        &self.v
    }

    pub fn derivative_bounds(&self) -> &[Interval] {
        &self.derivative_bounds
    }

    pub fn jf_norm_bound(&self) -> f64 {
        self.jf_norm_bound
    }

    pub fn state_domain(&self) -> &BoxDomain {
        &self.state_domain
    }

    pub fn with_derivative_bounds(mut self, bounds: Vec<Interval>) -> Result<Self, ModelError> {
        if bounds.len() != self.n() {
            return Err(ModelError::Dimension("derivative bounds".into()));
        }
        self.derivative_bounds = bounds;
        Ok(self)
    }

    pub fn with_jf_norm_bound(mut self, bound: f64) -> Self {
        self.jf_norm_bound = bound;
        self
    }

    pub fn with_w1(mut self, w1: Matrix) -> Result<Self, ModelError> {
        if w1.shape() != self.w1.shape() {
            return Err(ModelError::Dimension("W1 shape".into()));
        }
        self.w1 = w1;
        Ok(self)
    }

    /// GLS representation `ẋ = -d(x) + v + γu`, `y = x`,
    /// `Φ(y) = -γ^-1 W1 f(W2 y)`. The closed loop is the networked field
    /// for every `γ > 0`.
    pub fn to_gls(&self, gamma: f64) -> Result<GlsModel, ModelError> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(ModelError::Params(format!(
                "γ must be positive, got {gamma}"
            )));
        }
        let n = self.n();
        let f: Vec<Expr> = (0..n)
            .map(|i| {
                let drift = Expr::add(Expr::neg(self.d[i].clone()), Expr::Const(self.v[i]));
                Expr::add(drift, Expr::mul(Expr::Const(gamma), Expr::var(Var::u(i))))
            })
            .collect();
        let g: Vec<Expr> = (0..n).map(|i| Expr::var(Var::x(i))).collect();
        let z = linear_combination(&self.w2, Var::y);
        let phi: Vec<Expr> = self
            .w1_times_activation(&z)
            .into_iter()
            .map(|e| Expr::mul(Expr::Const(-1.0 / gamma), e))
            .collect();
        GlsModel::new(
            self.name.clone(),
            VectorFunction::new(f, Arity::xu(n, n))?,
            VectorFunction::new(g, Arity::x(n))?,
            VectorFunction::new(phi, Arity::y(n))?,
            self.state_domain.clone(),
            None,
        )
    }

    /// Entries of `W1 f(z)` with `y_j` in f replaced by `z_j`.
    fn w1_times_activation(&self, z: &[Expr]) -> Vec<Expr> {
        let fz: Vec<Expr> = self
            .activation
            .components()
            .iter()
            .map(|c| {
                c.map_vars(&mut |v| match v.block {
                    Block::Y => z[v.index].clone(),
                    _ => Expr::var(v),
                })
            })
            .collect();
        (0..self.w1.rows())
            .map(|i| {
                fz.iter().enumerate().fold(Expr::Const(0.0), |acc, (j, e)| {
                    Expr::add(acc, Expr::mul(Expr::Const(self.w1[(i, j)]), e.clone()))
                })
            })
            .collect()
    }

    /// The networked field `-d(x) + W1 f(W2 x) + v`.
    pub fn field(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        let n = self.n();
        if x.len() != n {
            return Err(ModelError::Dimension("state length".into()));
        }
        let z = self.w2.mul_vec(x);
        let fz = self.activation.eval(&Env::y(&z))?;
        let coupling = self.w1.mul_vec(&fz);
        let env = Env::x(x);
        (0..n)
            .map(|i| Ok(-self.d[i].eval(&env)? + coupling[i] + self.v[i]))
            .collect()
    }
}

fn linear_combination(w: &Matrix, var: impl Fn(usize) -> Var) -> Vec<Expr> {
    (0..w.rows())
        .map(|i| {
            (0..w.cols()).fold(Expr::Const(0.0), |acc, j| {
                Expr::add(acc, Expr::mul(Expr::Const(w[(i, j)]), Expr::var(var(j))))
            })
        })
        .collect()
}

// Builtins -----------------------------------------------------------------

/// Model produced by a builtin family.
#[derive(Clone, Debug)]
pub enum BuiltinModel {
    Gls(GlsModel),
    Networked(NetworkedModel),
}

impl BuiltinModel {
    /// GLS form; networked models use the representation with `γ = 1`.
    pub fn to_gls(&self) -> Result<GlsModel, ModelError> {
        match self {
            BuiltinModel::Gls(m) => Ok(m.clone()),
            BuiltinModel::Networked(net) => net.to_gls(1.0),
        }
    }
}

/// `ẋ = Ax + Bu`, `y = Cx`, `u = -Φ(y)`.
pub fn lti_lurie<S: AsRef<str>>(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    phi: &[S],
    state_domain: BoxDomain,
) -> Result<GlsModel, ModelError> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || c.cols() != n {
        return Err(ModelError::Dimension(format!(
            "A {:?}, B {:?}, C {:?} are inconsistent",
            a.shape(),
            b.shape(),
            c.shape()
        )));
    }
    let m = b.cols();
    let p = c.rows();
    let ax = linear_combination(a, Var::x);
    let bu = linear_combination(b, Var::u);
    let f: Vec<Expr> = ax
        .into_iter()
        .zip(bu)
        .map(|(l, r)| Expr::add(l, r))
        .collect();
    let g = linear_combination(c, Var::x);
    let phi = VectorFunction::parse(phi, Arity::y(p))?;
    if phi.output_dim() != m {
        return Err(ModelError::Dimension(format!(
            "Φ must have m={m} components"
        )));
    }
    GlsModel::new(
        "lti_lurie",
        VectorFunction::new(f, Arity::xu(n, m))?,
        VectorFunction::new(g, Arity::x(n))?,
        phi,
        state_domain,
        None,
    )
}

/// Hopfield-type network `ẋ = -Dx + W1 h(W2 x)` written as the Lurie system
/// `ẋ = -Dx + u`, `y = x`, `Φ(y) = -W1 h(W2 y)`.
pub fn hopfield<S: AsRef<str>>(
    d: &Matrix,
    w1: &Matrix,
    w2: &Matrix,
    h: &[S],
    state_domain: BoxDomain,
) -> Result<GlsModel, ModelError> {
    let n = d.rows();
    if !d.is_square() || w1.rows() != n || w2.cols() != n || h.len() != w1.cols() {
        return Err(ModelError::Dimension(
            "hopfield D, W1, W2, h are inconsistent".into(),
        ));
    }
    let h = VectorFunction::parse(h, Arity::y(w2.rows()))?;
    let dx = linear_combination(d, Var::x);
    let f: Vec<Expr> = dx
        .into_iter()
        .enumerate()
        .map(|(i, e)| Expr::add(Expr::neg(e), Expr::var(Var::u(i))))
        .collect();
    let g: Vec<Expr> = (0..n).map(|i| Expr::var(Var::x(i))).collect();
    let z = linear_combination(w2, Var::y);
    let hz: Vec<Expr> = h
        .components()
        .iter()
        .map(|c| c.map_vars(&mut |v| z[v.index].clone()))
        .collect();
    let phi: Vec<Expr> = (0..n)
        .map(|i| {
            let s = hz.iter().enumerate().fold(Expr::Const(0.0), |acc, (j, e)| {
                Expr::add(acc, Expr::mul(Expr::Const(w1[(i, j)]), e.clone()))
            });
            Expr::neg(s)
        })
        .collect();
    GlsModel::new(
        "hopfield",
        VectorFunction::new(f, Arity::xu(n, n))?,
        VectorFunction::new(g, Arity::x(n))?,
        VectorFunction::new(phi, Arity::y(n))?,
        state_domain,
        None,
    )
}

/// Networked system from expression strings: `d[i]` in `x_{i+1}`,
/// `f` in `y1..yq`.
#[allow(clippy::too_many_arguments)]
pub fn networked<S: AsRef<str>>(
    w1: Matrix,
    w2: Matrix,
    d: &[S],
    f: &[S],
    v: Vec<f64>,
    derivative_bounds: Vec<Interval>,
    jf_norm_bound: f64,
    state_domain: BoxDomain,
) -> Result<NetworkedModel, ModelError> {
    let n = w1.rows();
    let d = VectorFunction::parse(d, Arity::x(n))?;
    let f = VectorFunction::parse(f, Arity::y(w2.rows()))?;
    NetworkedModel::new(
        "networked",
        w1,
        w2,
        d.components().to_vec(),
        f,
        v,
        derivative_bounds,
        jf_norm_bound,
        state_domain,
    )
}

/// Feedback chain `ẋ_1 = -d_1(x_1) + r(x_n)`, `ẋ_i = -d_i(x_i) + x_{i-1}`
/// as a networked system with `W1 = W2 = I`, `v = 0` and
/// `f(y) = (r(y_n), y_1, …, y_{n-1})`. The activation Jacobian norm bound
/// is `max(|r'|, 1)`.
pub fn biochem<S: AsRef<str>>(
    d: &[S],
    r: &str,
    d_bounds: Vec<Interval>,
    r_prime_bound: f64,
    state_domain: BoxDomain,
) -> Result<NetworkedModel, ModelError> {
    let n = d.len();
    if n < 2 {
        return Err(ModelError::Params("the feedback chain needs n >= 2".into()));
    }
    let r = crate::expr::parse_with(r, Arity::x(1))
        .map_err(|source| ModelError::Expr(ExprError::Parse { index: 0, source }))?
        .rename(Var::x(0), Var::y(n - 1));
    let mut f = vec![r];
    f.extend((0..n - 1).map(|i| Expr::var(Var::y(i))));
    let dv = VectorFunction::parse(d, Arity::x(n))?;
    NetworkedModel::new(
        "biochem",
        Matrix::identity(n),
        Matrix::identity(n),
        dv.components().to_vec(),
        VectorFunction::new(f, Arity::y(n))?,
        vec![0.0; n],
        d_bounds,
        r_prime_bound.abs().max(1.0),
        state_domain,
    )
}

/// Dissipation-derivative bounds for the three-state example that give
/// `α_2 = 3/2`: `d_1' ∈ [0,1]`, `d_2' = d_3' = 3`.
pub fn example31_paper_bounds() -> Vec<Interval> {
    vec![
        Interval { lo: 0.0, hi: 1.0 },
        Interval::point(3.0),
        Interval::point(3.0),
    ]
}

/// The literal bounds `d_1' = cos(x_1) ∈ [-1,1]`, `d_2' = d_3' = 3`.
pub fn example31_literal_bounds() -> Vec<Interval> {
    vec![
        Interval { lo: -1.0, hi: 1.0 },
        Interval::point(3.0),
        Interval::point(3.0),
    ]
}

/// Bound on `r'(s) = (2+s)^-2` over `s >= 0`.
pub const EXAMPLE31_R_PRIME_BOUND: f64 = 0.25;

/// Three-state biochemical circuit with `d_1 = sin(x_1) + 1/2`,
/// `d_2 = 3x_2`, `d_3 = 3x_3`, `r(s) = (1+s)/(2+s)` on `[0,5]^3`.
pub fn example31() -> NetworkedModel {
    example31_with_bounds(example31_paper_bounds())
}

pub fn example31_with_bounds(d_bounds: Vec<Interval>) -> NetworkedModel {
    biochem(
        &["sin(x1) + 0.5", "3*x2", "3*x3"],
        "(1+s)/(2+s)",
        d_bounds,
        EXAMPLE31_R_PRIME_BOUND,
        BoxDomain::cube(3, 0.0, 5.0).expect("valid box"),
    )
    .expect("example model is well formed")
}
