//! JSON model documents.
//!
//! A document either spells out a GLS directly:
//!
//! ```json
//! {
//!   "name": "toy", "n": 1, "m": 1, "p": 1,
//!   "f": ["-x1 + u1"], "g": ["x1"], "phi": ["0"],
//!   "metric": {"kind": "scalar", "q": 1.0},
//!   "state_domain": {"low": [-1], "high": [1]}
//! }
//! ```
//!
//! or names a builtin family with `"builtin"` and `"params"`. Metric kinds
//! are `identity`, `scalar` (`q`), `constant` (`theta` rows), `riccati`
//! (`p` rows, Θ = P^{1/2}), `diagonal` (`deltas` expressions) and
//! `tridiagonal` (constructed from the Jacobian).

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::certify::{
    ari_constant_theta, certify_biochem, certify_lti_lurie, certify_networked, certify_thm1,
    Certificate, CertifyError, DomainGrid,
};
use crate::expr::{Arity, ExprMatrix, VectorFunction};
use crate::matrix::Matrix;
use crate::model::{
    biochem, example31_literal_bounds, example31_paper_bounds, hopfield, lti_lurie, networked,
    tridiagonal_theta, BoxDomain, GlsModel, Interval, JacobianBlock, MetricSpec, ModelError,
    NetworkedModel, EXAMPLE31_R_PRIME_BOUND,
};
use crate::spectral::sym_sqrt;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid model document: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: Option<String>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub p: Option<usize>,
    pub f: Option<Vec<String>>,
    pub g: Option<Vec<String>>,
    pub phi: Option<Vec<String>>,
    pub jacobians: Option<JacobianOverrides>,
    pub metric: Option<MetricConfig>,
    pub state_domain: Option<BoxDomain>,
    pub input_domain: Option<BoxDomain>,
    pub builtin: Option<String>,
    pub params: Option<serde_json::Value>,
}

/// Explicit Jacobian expression matrices replacing symbolic derivatives.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JacobianOverrides {
    pub df_dx: Option<Vec<Vec<String>>>,
    pub df_du: Option<Vec<Vec<String>>>,
    pub dg_dx: Option<Vec<Vec<String>>>,
    pub dphi_dy: Option<Vec<Vec<String>>>,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
#[derive(Default)]
pub enum MetricConfig {
    #[default]
    Identity,
    Scalar {
        q: f64,
    },
    Constant {
        theta: Vec<Vec<f64>>,
    },
    Riccati {
        p: Vec<Vec<f64>>,
    },
    Diagonal {
        deltas: Vec<String>,
    },
    Tridiagonal,
}

/// A model ready for certification or simulation.
#[derive(Clone, Debug)]
pub enum LoadedModel {
    Gls {
        model: GlsModel,
        metric: MetricConfig,
    },
    Lti {
        model: GlsModel,
        a: Matrix,
        b: Matrix,
        c: Matrix,
        p: Matrix,
    },
    Networked(NetworkedModel),
    Biochem {
        net: NetworkedModel,
        r_prime_bound: f64,
    },
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, ConfigError> {
    Matrix::from_rows(rows).map_err(|e| ConfigError::Invalid(format!("{what}: {e}")))
}

fn params<T: DeserializeOwned>(v: &Option<serde_json::Value>) -> Result<T, ConfigError> {
    let v = v
        .clone()
        .unwrap_or(serde_json::Value::Object(Default::default()));
    Ok(serde_json::from_value(v)?)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LtiParams {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    phi: Vec<String>,
    p: Option<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HopfieldParams {
    d: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    h: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkedParams {
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    d: Vec<String>,
    f: Vec<String>,
    v: Option<Vec<f64>>,
    derivative_bounds: Vec<Interval>,
    jf_norm_bound: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BiochemParams {
    d: Vec<String>,
    r: String,
    d_bounds: Vec<Interval>,
    r_prime_bound: f64,
}

#[derive(Deserialize, Default)]
#[serde(rename_all = "lowercase")]
enum Example31Bounds {
    #[default]
    Paper,
    Literal,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Example31Params {
    #[serde(default)]
    bounds: Example31Bounds,
    d_bounds: Option<Vec<Interval>>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(&self) -> Result<LoadedModel, ConfigError> {
        match &self.builtin {
            Some(name) => self.load_builtin(name),
            None => self.load_gls(),
        }
    }

    fn load_gls(&self) -> Result<LoadedModel, ConfigError> {
        let (Some(f), Some(g), Some(phi)) = (&self.f, &self.g, &self.phi) else {
            return invalid("a model needs `f`, `g` and `phi` (or a `builtin`)");
        };
        let n = self.n.unwrap_or(f.len());
        let m = self.m.unwrap_or(phi.len());
        let p = self.p.unwrap_or(g.len());
        if f.len() != n || phi.len() != m || g.len() != p {
            return invalid(format!(
                "declared n={n}, m={m}, p={p} but f, phi, g have {}, {}, {} components",
                f.len(),
                phi.len(),
                g.len()
            ));
        }
        let Some(domain) = self.state_domain.clone() else {
            return invalid("`state_domain` is required");
        };
        let mut model = GlsModel::new(
            self.name.clone().unwrap_or_else(|| "model".into()),
            VectorFunction::parse(f, Arity::xu(n, m)).map_err(ModelError::from)?,
            VectorFunction::parse(g, Arity::x(n)).map_err(ModelError::from)?,
            VectorFunction::parse(phi, Arity::y(p)).map_err(ModelError::from)?,
            domain,
            self.input_domain.clone(),
        )?;
        if let Some(j) = &self.jacobians {
            let blocks = [
                (JacobianBlock::DfDx, &j.df_dx, Arity::xu(n, m)),
                (JacobianBlock::DfDu, &j.df_du, Arity::xu(n, m)),
                (JacobianBlock::DgDx, &j.dg_dx, Arity::x(n)),
                (JacobianBlock::DphiDy, &j.dphi_dy, Arity::y(p)),
            ];
            for (which, rows, arity) in blocks {
                if let Some(rows) = rows {
                    let em = ExprMatrix::parse(rows, arity).map_err(ModelError::from)?;
                    model = model.with_jacobian_override(which, em)?;
                }
            }
        }
        Ok(LoadedModel::Gls {
            model,
            metric: self.metric.clone().unwrap_or_default(),
        })
    }

    fn domain_or(&self, n: usize, default: (f64, f64)) -> Result<BoxDomain, ConfigError> {
        match &self.state_domain {
            Some(d) => Ok(d.clone()),
            None => Ok(BoxDomain::cube(n, default.0, default.1)?),
        }
    }

    fn load_builtin(&self, name: &str) -> Result<LoadedModel, ConfigError> {
        let loaded = match name {
            "example31" => {
                let prm: Example31Params = params(&self.params)?;
                let bounds = prm.d_bounds.unwrap_or_else(|| match prm.bounds {
                    Example31Bounds::Paper => example31_paper_bounds(),
                    Example31Bounds::Literal => example31_literal_bounds(),
                });
                let net = biochem(
                    &["sin(x1) + 0.5", "3*x2", "3*x3"],
                    "(1+s)/(2+s)",
                    bounds,
                    EXAMPLE31_R_PRIME_BOUND,
                    self.domain_or(3, (0.0, 5.0))?,
                )?;
                LoadedModel::Biochem {
                    net,
                    r_prime_bound: EXAMPLE31_R_PRIME_BOUND,
                }
            }
            "biochem" => {
                let prm: BiochemParams = params(&self.params)?;
                let domain = self.domain_or(prm.d.len(), (0.0, 5.0))?;
                let net = biochem(&prm.d, &prm.r, prm.d_bounds, prm.r_prime_bound, domain)?;
                LoadedModel::Biochem {
                    net,
                    r_prime_bound: prm.r_prime_bound,
                }
            }
            "networked" => {
                let prm: NetworkedParams = params(&self.params)?;
                let w1 = matrix(&prm.w1, "w1")?;
                let n = w1.rows();
                let net = networked(
                    w1,
                    matrix(&prm.w2, "w2")?,
                    &prm.d,
                    &prm.f,
                    prm.v.unwrap_or_else(|| vec![0.0; n]),
                    prm.derivative_bounds,
                    prm.jf_norm_bound,
                    self.domain_or(n, (-1.0, 1.0))?,
                )?;
                LoadedModel::Networked(net)
            }
            "lti_lurie" => {
                let prm: LtiParams = params(&self.params)?;
                let a = matrix(&prm.a, "a")?;
                let b = matrix(&prm.b, "b")?;
                let c = matrix(&prm.c, "c")?;
                let n = a.rows();
                let p = match &prm.p {
                    Some(rows) => matrix(rows, "p")?,
                    None => Matrix::identity(n),
                };
                let model = lti_lurie(&a, &b, &c, &prm.phi, self.domain_or(n, (-1.0, 1.0))?)?;
                LoadedModel::Lti { model, a, b, c, p }
            }
            "hopfield" => {
                let prm: HopfieldParams = params(&self.params)?;
                let d = matrix(&prm.d, "d")?;
                let n = d.rows();
                let model = hopfield(
                    &d,
                    &matrix(&prm.w1, "w1")?,
                    &matrix(&prm.w2, "w2")?,
                    &prm.h,
                    self.domain_or(n, (-1.0, 1.0))?,
                )?;
                LoadedModel::Gls {
                    model,
                    metric: self.metric.clone().unwrap_or_default(),
                }
            }
            other => return Err(ModelError::UnknownBuiltin(other.into()).into()),
        };
        Ok(loaded)
    }
}

/// Parse and assemble a model document.
pub fn load_model(text: &str) -> Result<LoadedModel, ConfigError> {
    ModelConfig::from_json(text)?.load()
}

impl LoadedModel {
    pub fn name(&self) -> &str {
        match self {
            LoadedModel::Gls { model, .. } | LoadedModel::Lti { model, .. } => model.name(),
            LoadedModel::Networked(net) | LoadedModel::Biochem { net, .. } => net.name(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            LoadedModel::Gls { model, .. } | LoadedModel::Lti { model, .. } => model.n(),
            LoadedModel::Networked(net) | LoadedModel::Biochem { net, .. } => net.n(),
        }
    }

    pub fn state_domain(&self) -> &BoxDomain {
        match self {
            LoadedModel::Gls { model, .. } | LoadedModel::Lti { model, .. } => model.state_domain(),
            LoadedModel::Networked(net) | LoadedModel::Biochem { net, .. } => net.state_domain(),
        }
    }

    /// GLS used for simulation. Networked models use `γ = 1`; the state
    /// field does not depend on γ.
    pub fn gls(&self) -> Result<GlsModel, ConfigError> {
        match self {
            LoadedModel::Gls { model, .. } | LoadedModel::Lti { model, .. } => Ok(model.clone()),
            LoadedModel::Networked(net) | LoadedModel::Biochem { net, .. } => Ok(net.to_gls(1.0)?),
        }
    }

    /// Metric for weighted volumes and sampled certification.
    pub fn metric(&self, grid: &DomainGrid) -> Result<MetricSpec, ConfigError> {
        match self {
            LoadedModel::Gls { model, metric } => resolve_metric(metric, model, grid),
            LoadedModel::Lti { p, .. } => Ok(MetricSpec::constant(
                sym_sqrt(p).map_err(CertifyError::from)?,
            )?),
            _ => Ok(MetricSpec::identity()),
        }
    }

    /// Certificate along the path appropriate to the model kind: sampled
    /// grid conditions for GLS documents, the Riccati form for `riccati`
    /// metrics, the LTI form for `lti_lurie`, and interval bounds for
    /// networked and feedback-chain models.
    pub fn certify(&self, k: usize, grid: &DomainGrid) -> Result<Certificate, ConfigError> {
        let cert = match self {
            LoadedModel::Gls { model, metric } => match metric {
                MetricConfig::Riccati { p } => {
                    ari_constant_theta(model, &matrix(p, "metric p")?, k, grid)?
                }
                _ => {
                    let spec = resolve_metric(metric, model, grid)?;
                    certify_thm1(model, &spec, k, grid)?
                }
            },
            LoadedModel::Lti { model, a, b, c, p } => {
                let xs = grid.state_points(model.state_domain())?;
                let ys: Vec<Vec<f64>> = xs.iter().map(|x| c.mul_vec(x)).collect();
                let mut cert = certify_lti_lurie(a, b, c, model.phi(), p, k, &ys)?;
                cert.seed = Some(grid.seed);
                cert
            }
            LoadedModel::Networked(net) => certify_networked(net, k)?,
            LoadedModel::Biochem { net, r_prime_bound } => {
                certify_biochem(*r_prime_bound, net.derivative_bounds(), k)?
            }
        };
        Ok(cert)
    }
}

fn resolve_metric(
    metric: &MetricConfig,
    model: &GlsModel,
    grid: &DomainGrid,
) -> Result<MetricSpec, ConfigError> {
    let n = model.n();
    let spec = match metric {
        MetricConfig::Identity => MetricSpec::identity(),
        MetricConfig::Scalar { q } => MetricSpec::scalar(*q)?,
        MetricConfig::Constant { theta } => {
            let t = matrix(theta, "metric theta")?;
            if t.shape() != (n, n) {
                return invalid(format!("metric theta must be {n}x{n}"));
            }
            MetricSpec::constant(t)?
        }
        MetricConfig::Riccati { p } => {
            let p = matrix(p, "metric p")?;
            if p.shape() != (n, n) {
                return invalid(format!("metric p must be {n}x{n}"));
            }
            MetricSpec::constant(sym_sqrt(&p).map_err(CertifyError::from)?)?
        }
        MetricConfig::Diagonal { deltas } => {
            if deltas.len() != n {
                return invalid(format!("diagonal metric needs {n} deltas"));
            }
            MetricSpec::diagonal_from_strings(deltas)?
        }
        MetricConfig::Tridiagonal => {
            let xs = grid.state_points(model.state_domain())?;
            tridiagonal_theta(model, &xs)?.0
        }
    };
    Ok(spec)
}
