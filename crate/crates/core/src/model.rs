//! Problem description: plant, weights, horizon and constraint polytopes, plus
//! the JSON configuration format they are loaded from.

use std::fmt;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::polytope::{HPolytope, LpOutcome};

/// Eigenvalue-wise rank tests and definiteness checks use this tolerance.
pub const ASSUMPTION_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("assumption violated: {}", join(.0))]
    Assumption(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// `x(k+1) = A x(k) + B u(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl LtiSystem {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub sys: LtiSystem,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub horizon: usize,
    pub x_set: HPolytope,
    pub u_set: HPolytope,
    pub t_set: Option<HPolytope>,
    pub p: Option<DMatrix<f64>>,
}

/// A failed well-posedness assumption. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Dimension(String),
    QNotSymmetricPsd { min_eig: f64 },
    RNotPositiveDefinite { min_eig: f64 },
    PNotPositiveDefinite { min_eig: f64 },
    OriginNotInterior(&'static str),
    NotStabilizable,
    NotDetectable,
    TerminalNotInStateSet,
    ZeroHorizon,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Dimension(s) => write!(f, "dimension mismatch: {s}"),
            Violation::QNotSymmetricPsd { min_eig } => {
                write!(f, "Q not symmetric PSD (min eigenvalue {min_eig:e})")
            }
            Violation::RNotPositiveDefinite { min_eig } => {
                write!(f, "R not positive definite (min eigenvalue {min_eig:e})")
            }
            Violation::PNotPositiveDefinite { min_eig } => {
                write!(f, "P not positive definite (min eigenvalue {min_eig:e})")
            }
            Violation::OriginNotInterior(set) => write!(f, "origin not interior of {set}"),
            Violation::NotStabilizable => f.write_str("not stabilizable"),
            Violation::NotDetectable => f.write_str("not detectable"),
            Violation::TerminalNotInStateSet => f.write_str("terminal set not contained in X"),
            Violation::ZeroHorizon => f.write_str("horizon must be positive"),
        }
    }
}

/// Matrix as written in the config: a scalar or row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixRepr {
    fn into_matrix(self, name: &str) -> Result<DMatrix<f64>, ConfigError> {
        match self {
            MatrixRepr::Scalar(v) => Ok(DMatrix::from_element(1, 1, v)),
            MatrixRepr::Rows(rows) => {
                let ncols = rows.first().map_or(0, |r| r.len());
                if rows.is_empty() || ncols == 0 {
                    return Err(ConfigError::Dimension(format!("`{name}` is empty")));
                }
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(ConfigError::Dimension(format!("`{name}` has ragged rows")));
                }
                Ok(linalg::mat_from_rows(&rows, ncols))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRepr::Rows(linalg::rows_of(m))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(rename = "A")]
    a: MatrixRepr,
    #[serde(rename = "B")]
    b: MatrixRepr,
    #[serde(rename = "Q")]
    q: MatrixRepr,
    #[serde(rename = "R")]
    r: MatrixRepr,
    #[serde(rename = "N")]
    horizon: usize,
    #[serde(rename = "X")]
    x: HPolytope,
    #[serde(rename = "U")]
    u: HPolytope,
    #[serde(rename = "T", default, skip_serializing_if = "Option::is_none")]
    t: Option<HPolytope>,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    p: Option<MatrixRepr>,
}

pub fn load_config(path: impl AsRef<Path>) -> Result<OcpSpec, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

/// Parses and validates. Dimension problems are reported before assumption violations.
pub fn parse_config(text: &str) -> Result<OcpSpec, ConfigError> {
    let file: ConfigFile =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let spec = OcpSpec {
        sys: LtiSystem {
            a: file.a.into_matrix("A")?,
            b: file.b.into_matrix("B")?,
        },
        q: file.q.into_matrix("Q")?,
        r: file.r.into_matrix("R")?,
        horizon: file.horizon,
        x_set: file.x,
        u_set: file.u,
        t_set: file.t,
        p: file.p.map(|p| p.into_matrix("P")).transpose()?,
    };
    let dims = dimension_violations(&spec);
    if !dims.is_empty() {
        return Err(ConfigError::Dimension(join(&dims)));
    }
    let violations = validate_ocp(&spec);
    if !violations.is_empty() {
        return Err(ConfigError::Assumption(violations));
    }
    Ok(spec)
}

/// Serializes to the config JSON format; matrices are written verbatim.
pub fn to_config_json(spec: &OcpSpec) -> String {
    let file = ConfigFile {
        a: MatrixRepr::from_matrix(&spec.sys.a),
        b: MatrixRepr::from_matrix(&spec.sys.b),
        q: MatrixRepr::from_matrix(&spec.q),
        r: MatrixRepr::from_matrix(&spec.r),
        horizon: spec.horizon,
        x: spec.x_set.clone(),
        u: spec.u_set.clone(),
        t: spec.t_set.clone(),
        p: spec.p.as_ref().map(MatrixRepr::from_matrix),
    };
    serde_json::to_string_pretty(&file).expect("config serialization cannot fail")
}

fn dimension_violations(spec: &OcpSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = spec.sys.a.nrows();
    let m = spec.sys.b.ncols();
    let mut check = |ok: bool, msg: String| {
        if !ok {
            out.push(Violation::Dimension(msg));
        }
    };
    check(spec.sys.a.is_square(), "A must be square".into());
    check(spec.sys.b.nrows() == n, format!("B must have {n} rows"));
    check(m > 0, "B must have at least one column".into());
    check(spec.q.shape() == (n, n), format!("Q must be {n}x{n}"));
    check(spec.r.shape() == (m, m), format!("R must be {m}x{m}"));
    check(spec.x_set.dim() == n, format!("X must have dimension {n}"));
    check(spec.u_set.dim() == m, format!("U must have dimension {m}"));
    if let Some(t) = &spec.t_set {
        check(t.dim() == n, format!("T must have dimension {n}"));
    }
    if let Some(p) = &spec.p {
        check(p.shape() == (n, n), format!("P must be {n}x{n}"));
    }
    out
}

/// Checks every standing assumption; an empty list means the problem is well-posed.
pub fn validate_ocp(spec: &OcpSpec) -> Vec<Violation> {
    let mut out = dimension_violations(spec);
    if !out.is_empty() {
        return out;
    }
    if spec.horizon == 0 {
        out.push(Violation::ZeroHorizon);
    }
    let q_asym = (&spec.q - spec.q.transpose()).amax();
    let q_min = linalg::min_sym_eigenvalue(&spec.q);
    if q_asym > ASSUMPTION_TOL || q_min < -ASSUMPTION_TOL {
        out.push(Violation::QNotSymmetricPsd { min_eig: q_min });
    }
    let r_min = linalg::min_sym_eigenvalue(&spec.r);
    if (&spec.r - spec.r.transpose()).amax() > ASSUMPTION_TOL || r_min <= 1e-12 {
        out.push(Violation::RNotPositiveDefinite { min_eig: r_min });
    }
    if let Some(p) = &spec.p {
        let p_min = linalg::min_sym_eigenvalue(p);
        if p_min <= 1e-12 {
            out.push(Violation::PNotPositiveDefinite { min_eig: p_min });
        }
    }
    let origin_n = DVector::zeros(spec.sys.n());
    let origin_m = DVector::zeros(spec.sys.m());
    if spec.x_set.rhs().iter().any(|&c| c <= 0.0) || !spec.x_set.contains_tol(&origin_n, 0.0) {
        out.push(Violation::OriginNotInterior("X"));
    }
    if spec.u_set.rhs().iter().any(|&c| c <= 0.0) || !spec.u_set.contains_tol(&origin_m, 0.0) {
        out.push(Violation::OriginNotInterior("U"));
    }
    if let Some(t) = &spec.t_set {
        if t.rhs().iter().any(|&c| c <= 0.0) {
            out.push(Violation::OriginNotInterior("T"));
        }
        if !set_contained_in(t, &spec.x_set) {
            out.push(Violation::TerminalNotInStateSet);
        }
    }
    if !is_stabilizable(&spec.sys.a, &spec.sys.b) {
        out.push(Violation::NotStabilizable);
    }
    if q_min >= -ASSUMPTION_TOL && !is_detectable(&spec.sys.a, &linalg::psd_sqrt(&spec.q)) {
        out.push(Violation::NotDetectable);
    }
    out
}

/// `inner ⊆ outer`, checked by maximizing every row of `outer` over `inner`.
pub fn set_contained_in(inner: &HPolytope, outer: &HPolytope) -> bool {
    (0..outer.n_rows()).all(|i| {
        let row = outer.lhs().row(i).transpose();
        match inner.maximize(&row) {
            LpOutcome::Optimal { value, .. } => value <= outer.rhs()[i] + ASSUMPTION_TOL,
            LpOutcome::Infeasible => true,
            LpOutcome::Unbounded => false,
        }
    })
}

fn complex_rank(m: &DMatrix<Complex<f64>>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    sv.iter()
        .filter(|&&s| s > ASSUMPTION_TOL * smax.max(1.0))
        .count()
}

fn unstable_eigenvalues(a: &DMatrix<f64>) -> Vec<Complex<f64>> {
    a.complex_eigenvalues()
        .iter()
        .cloned()
        .filter(|z| z.norm() >= 1.0 - ASSUMPTION_TOL)
        .collect()
}

/// PBH test: `rank [A - λI, B] = n` for every eigenvalue with `|λ| >= 1`.
pub fn is_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    unstable_eigenvalues(a).into_iter().all(|lambda| {
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                pbh[(i, j)] = Complex::new(a[(i, j)], 0.0);
            }
            pbh[(i, i)] -= lambda;
            for j in 0..b.ncols() {
                pbh[(i, n + j)] = Complex::new(b[(i, j)], 0.0);
            }
        }
        complex_rank(&pbh) == n
    })
}

/// Dual PBH test: `rank [A - λI; C] = n` for every eigenvalue with `|λ| >= 1`.
pub fn is_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    is_stabilizable(&a.transpose(), &c.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;

    const EX1: &str = include_str!("../../../configs/example1.json");
    const PENDULUM: &str = include_str!("../../../configs/pendulum.json");

    #[test]
    fn example1_loads() {
        let spec = parse_config(EX1).unwrap();
        assert_eq!((spec.sys.n(), spec.sys.m()), (2, 1));
        assert_eq!(spec.u_set.n_rows(), 2);
        assert_eq!(spec.x_set.n_rows(), 4);
        assert_eq!(spec.horizon, 4);
        assert!(validate_ocp(&spec).is_empty());
        // row 1 is the upper input bound
        assert_eq!(spec.u_set.lhs()[(0, 0)], 1.0);
        assert_eq!(spec.u_set.rhs()[0], 2.0);
    }

    #[test]
    fn pendulum_loads() {
        let spec = parse_config(PENDULUM).unwrap();
        assert_eq!((spec.sys.n(), spec.sys.m(), spec.horizon), (4, 1, 10));
        assert_eq!(spec.u_set.n_rows(), 2);
        assert_eq!(spec.x_set.n_rows(), 8);
    }

    #[test]
    fn zero_r_rejected() {
        let text = EX1.replace("\"R\": [[0.01]]", "\"R\": [[0.0]]");
        match parse_config(&text) {
            Err(ConfigError::Assumption(v)) => {
                assert!(matches!(v[0], Violation::RNotPositiveDefinite { .. }))
            }
            other => panic!("expected assumption error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_and_ragged() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Parse(_))));
        let text = EX1.replace("\"B\": [[0.0948], [0.0048]]", "\"B\": [[0.0948], [0.0048], [1.0]]");
        assert!(matches!(parse_config(&text), Err(ConfigError::Dimension(_))));
    }

    #[test]
    fn shifted_state_box_loses_origin() {
        let mut spec = parse_config(EX1).unwrap();
        // 1 <= x1 <= 3
        let mut rhs = spec.x_set.rhs().clone();
        rhs[1] = -1.0;
        spec.x_set = HPolytope::new(spec.x_set.lhs().clone(), rhs);
        assert_eq!(validate_ocp(&spec), vec![Violation::OriginNotInterior("X")]);
    }

    #[test]
    fn unstable_uncontrollable_scalar() {
        let spec = OcpSpec {
            sys: LtiSystem {
                a: DMatrix::from_element(1, 1, 2.0),
                b: DMatrix::from_element(1, 1, 0.0),
            },
            q: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
            horizon: 1,
            x_set: HPolytope::from_box(&[-1.0], &[1.0]),
            u_set: HPolytope::from_box(&[-1.0], &[1.0]),
            t_set: None,
            p: None,
        };
        assert_eq!(validate_ocp(&spec), vec![Violation::NotStabilizable]);
    }

    #[test]
    fn undetectable_mode_flagged() {
        let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, 0.0, 0.5]);
        let q = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(!is_detectable(&a, &linalg::psd_sqrt(&q)));
        assert!(is_detectable(&a, &DMatrix::identity(2, 2)));
    }

    #[test]
    fn serialization_round_trip_is_exact() {
        for text in [EX1, PENDULUM] {
            let spec = parse_config(text).unwrap();
            let again = parse_config(&to_config_json(&spec)).unwrap();
            assert_eq!(spec, again);
        }
    }
}
