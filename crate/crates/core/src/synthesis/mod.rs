//! Robust state-feedback synthesis over a matrix-ellipsoid uncertainty set:
//! unstructured designs, the iterative structured designs and the
//! diagonal-X baseline.

mod linearize;
mod robust;
mod structured;
mod unstructured;

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::lti::{write_block, CsvDoc, LtiSystem};
use crate::uncertainty::MatrixEllipsoid;

pub use linearize::linearize_bilinear;
pub use robust::{certify_gain, robust_lmi, robust_margin, Certificate};
pub use structured::{h2_structured, hinf_structured, relaxed_lmi, stabilize_structured};
pub use unstructured::{baseline_xdiag, h2_unstructured, hinf_unstructured, stabilize_unstructured};

/// Parameters of the iterative structured algorithms.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    /// Initial weight of the structural penalty.
    pub beta0: f64,
    /// Growth factor applied to the weight after every iteration.
    pub mu: f64,
    pub beta_cap: f64,
    /// Convergence threshold on the residual or the iterate change.
    pub eps_t: f64,
    /// Relative strictness margin for `≺ 0` constraints.
    pub eta: f64,
    pub max_iter: usize,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig { beta0: 1.0, mu: 2.0, beta_cap: 1e6, eps_t: 0.01, eta: 1e-6, max_iter: 100 }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Input(m.to_string()));
        if !(self.mu > 1.0) {
            return bad("mu must exceed 1");
        }
        if !(self.eps_t > 0.0) {
            return bad("eps_T must be positive");
        }
        if !(self.beta0 > 0.0) || !(self.beta_cap >= self.beta0) {
            return bad("need beta_cap >= beta0 > 0");
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return bad("eta must be positive");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Objective {
    Stabilize,
    H2,
    Hinf,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Stabilize => "stabilize",
            Objective::H2 => "h2",
            Objective::Hinf => "hinf",
        })
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stabilize" | "stab" => Ok(Objective::Stabilize),
            "h2" => Ok(Objective::H2),
            "hinf" | "h-inf" => Ok(Objective::Hinf),
            other => Err(Error::Input(format!("unknown objective `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStatus {
    Ok,
    Infeasible,
    NoConvergence,
}

impl fmt::Display for SynthesisStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthesisStatus::Ok => "ok",
            SynthesisStatus::Infeasible => "infeasible",
            SynthesisStatus::NoConvergence => "no-convergence",
        })
    }
}

impl FromStr for SynthesisStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ok" => Ok(SynthesisStatus::Ok),
            "infeasible" => Ok(SynthesisStatus::Infeasible),
            "no-convergence" => Ok(SynthesisStatus::NoConvergence),
            other => Err(Error::Input(format!("unknown status `{other}`"))),
        }
    }
}

/// Performance channels `C, D, G, H` of the plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Channels {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl Channels {
    pub fn new(c: DMatrix<f64>, d: DMatrix<f64>, g: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let (ny, nx) = c.shape();
        if d.nrows() != ny || h.nrows() != ny || g.nrows() != nx || h.ncols() != g.ncols() {
            return Err(dim_err(format!(
                "channels C {:?}, D {:?}, G {:?}, H {:?} are inconsistent",
                c.shape(),
                d.shape(),
                g.shape(),
                h.shape()
            )));
        }
        Ok(Channels { c, d, g, h })
    }

    pub fn from_system(sys: &LtiSystem) -> Self {
        Channels { c: sys.c.clone(), d: sys.d.clone(), g: sys.g.clone(), h: sys.h.clone() }
    }

    pub(crate) fn check(&self, ell: &MatrixEllipsoid) -> Result<()> {
        if self.c.ncols() != ell.nx() || self.d.ncols() != ell.nu() {
            return Err(dim_err(format!(
                "channels are sized for nx={}, nu={} but the ellipsoid has nx={}, nu={}",
                self.c.ncols(),
                self.d.ncols(),
                ell.nx(),
                ell.nu()
            )));
        }
        Ok(())
    }

    /// `C + D K`.
    pub fn ck(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.c + &self.d * k
    }
}

/// One outer iteration of a structured algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    /// Objective value of the relaxed problem (the squared residual for stabilization).
    pub objective: f64,
    /// `|K o I_Sc|_F`.
    pub residual: f64,
    pub gamma: Option<f64>,
    /// Negated largest eigenvalue of the robust inequality at the iterate.
    pub margin: f64,
    pub beta: f64,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub objective: Objective,
    pub status: SynthesisStatus,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    /// Bound carried by the last iterate before the pattern projection.
    pub gamma_iterate: Option<f64>,
    pub trace: Vec<IterRecord>,
}

impl SynthesisOutcome {
    pub(crate) fn failed(objective: Objective, status: SynthesisStatus, nx: usize, nu: usize) -> Self {
        SynthesisOutcome {
            objective,
            status,
            k: DMatrix::zeros(nu, nx),
            p: DMatrix::zeros(nx, nx),
            lambda: None,
            gamma: None,
            gamma_iterate: None,
            trace: Vec::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == SynthesisStatus::Ok
    }

    pub fn iterations(&self) -> usize {
        self.trace.iter().map(|r| r.iter).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "none".to_string(), |x| format!("{x:.16e}"));
        let _ = writeln!(out, "# objective={}", self.objective);
        let _ = writeln!(out, "# status={}", self.status);
        let _ = writeln!(out, "# gamma={}", opt(self.gamma));
        let _ = writeln!(out, "# gamma_iterate={}", opt(self.gamma_iterate));
        let _ = writeln!(out, "# lambda={}", opt(self.lambda));
        let _ = writeln!(out, "# iterations={}", self.iterations());
        write_block(&mut out, "K", &self.k);
        write_block(&mut out, "P", &self.p);
        out
    }

    /// Reads the gain, certificate and scalars back; the trace is not stored.
    pub fn from_csv(text: &str) -> Result<Self> {
        let doc = CsvDoc::parse(text)?;
        let opt = |key: &str| -> Result<Option<f64>> {
            let (line, v) = doc.header(key)?;
            if v == "none" {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| Error::Parse { line, msg: format!("bad number for `{key}`") })
        };
        let parse_with = |key: &str| -> Result<(usize, String)> {
            let (line, v) = doc.header(key)?;
            Ok((line, v.to_string()))
        };
        let (line, obj) = parse_with("objective")?;
        let objective = obj.parse().map_err(|_| Error::Parse { line, msg: format!("bad objective `{obj}`") })?;
        let (line, st) = parse_with("status")?;
        let status = st.parse().map_err(|_| Error::Parse { line, msg: format!("bad status `{st}`") })?;
        Ok(SynthesisOutcome {
            objective,
            status,
            k: doc.block("K")?,
            p: doc.block("P")?,
            lambda: opt("lambda")?,
            gamma: opt("gamma")?,
            gamma_iterate: opt("gamma_iterate")?,
            trace: Vec::new(),
        })
    }

    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,objective,residual,gamma,margin,beta\n");
        for r in &self.trace {
            let gamma = r.gamma.map_or_else(String::new, |g| format!("{g:.16e}"));
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{},{:.16e},{:.16e}",
                r.iter, r.objective, r.residual, gamma, r.margin, r.beta
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(AlgoConfig::default().validate().is_ok());
        assert!(AlgoConfig { mu: 1.0, ..Default::default() }.validate().is_err());
        assert!(AlgoConfig { eps_t: 0.0, ..Default::default() }.validate().is_err());
        assert!(AlgoConfig { beta_cap: 0.5, ..Default::default() }.validate().is_err());
        assert!(AlgoConfig { max_iter: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn objective_names_roundtrip() {
        for o in [Objective::Stabilize, Objective::H2, Objective::Hinf] {
            assert_eq!(o.to_string().parse::<Objective>().unwrap(), o);
        }
        assert!("h3".parse::<Objective>().is_err());
    }

    #[test]
    fn channel_shapes_checked() {
        let c = DMatrix::identity(2, 2);
        assert!(Channels::new(c.clone(), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).is_ok());
        assert!(Channels::new(c, DMatrix::zeros(3, 1), DMatrix::zeros(2, 1), DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn outcome_csv_roundtrip() {
        let out = SynthesisOutcome {
            objective: Objective::H2,
            status: SynthesisStatus::Ok,
            k: DMatrix::from_row_slice(1, 2, &[0.1, -2.0 / 3.0]),
            p: DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            lambda: Some(0.25),
            gamma: Some(1.0 / 3.0),
            gamma_iterate: None,
            trace: vec![IterRecord { iter: 1, objective: 1.0, residual: 0.5, gamma: None, margin: 1e-3, beta: 2.0 }],
        };
        let back = SynthesisOutcome::from_csv(&out.to_csv()).unwrap();
        assert_eq!(back.k, out.k);
        assert_eq!(back.p, out.p);
        assert_eq!(back.gamma, out.gamma);
        assert_eq!(back.lambda, out.lambda);
        assert_eq!(back.gamma_iterate, None);
        assert_eq!(back.status, SynthesisStatus::Ok);
        assert_eq!(out.trace_csv().lines().count(), 2);
    }
}
