//! JSON problem and certificate files.

use std::collections::BTreeMap;
use std::path::Path;

use cbc_core::{
    CbcError, Certificate, Degrees, Epsilons, Mode, Polynomial, PolynomialMatrix, PolynomialVector, SynthesisProblem,
};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub state_dim: usize,
    pub input_dim: usize,
    pub f: Vec<String>,
    pub g: Vec<Vec<String>>,
    pub safe_set: String,
    pub initial_set: String,
    #[serde(rename = "input_A")]
    pub input_a: Vec<Vec<f64>>,
    pub input_b: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub degrees: BTreeMap<String, u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<EpsilonOverrides>,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsilonOverrides {
    pub e1: Option<f64>,
    pub e2: Option<f64>,
    pub e3: Option<f64>,
}

fn parse_poly(key: &str, s: &str, n: usize) -> Result<Polynomial, CliError> {
    Polynomial::parse(s, n).map_err(|e| CliError::Parse(format!("{key}: {e}")))
}

fn parse_all(key: &str, items: &[String], n: usize) -> Result<Vec<Polynomial>, CliError> {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| parse_poly(&format!("{key}[{i}]"), s, n))
        .collect()
}

fn check_len(key: &str, got: usize, expected: usize) -> Result<(), CliError> {
    if got != expected {
        return Err(CliError::Parse(format!(
            "{key}: expected {expected} entries, got {got}"
        )));
    }
    Ok(())
}

impl ProblemFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        load_json(path)
    }

    /// Degrees with the file overrides applied on top of the defaults.
    pub fn degrees(&self) -> Result<Degrees, CliError> {
        let mut d = Degrees::default();
        for (k, v) in &self.degrees {
            d.set(k, *v).map_err(|e| CliError::Parse(format!("degrees.{k}: {e}")))?;
        }
        Ok(d)
    }

    pub fn epsilons(&self) -> Epsilons {
        let mut e = Epsilons::default();
        if let Some(o) = self.epsilons {
            e.e1 = o.e1.unwrap_or(e.e1);
            e.e2 = o.e2.unwrap_or(e.e2);
            e.e3 = o.e3.unwrap_or(e.e3);
        }
        e
    }

    pub fn to_problem(&self, degrees: Degrees) -> Result<SynthesisProblem, CliError> {
        let n = self.state_dim;
        let m = self.input_dim;
        if n == 0 {
            return Err(CliError::Parse("state_dim: must be positive".into()));
        }
        check_len("f", self.f.len(), n)?;
        check_len("g", self.g.len(), n)?;
        let f = parse_all("f", &self.f, n)?;
        let mut rows = Vec::with_capacity(n);
        for (i, row) in self.g.iter().enumerate() {
            let key = format!("g[{i}]");
            check_len(&key, row.len(), m)?;
            rows.push(parse_all(&key, row, n)?);
        }
        let s = parse_poly("safe_set", &self.safe_set, n)?;
        let w = parse_poly("initial_set", &self.initial_set, n)?;
        check_len("input_b", self.input_b.len(), self.input_a.len())?;
        for (i, row) in self.input_a.iter().enumerate() {
            check_len(&format!("input_A[{i}]"), row.len(), m)?;
        }
        let a = DMatrix::from_fn(self.input_a.len(), m, |i, j| self.input_a[i][j]);
        let b = DVector::from_vec(self.input_b.clone());
        let g = if m == 0 {
            PolynomialMatrix::zeros(n, n, 0)
        } else {
            PolynomialMatrix::from_rows(n, rows).map_err(|e| CliError::Parse(format!("g: {e}")))?
        };
        let f = PolynomialVector::new(f).map_err(|e| CliError::Parse(format!("f: {e}")))?;
        SynthesisProblem::new(f, g, s, w, a, b, degrees, self.epsilons()).map_err(|e| match e {
            CbcError::UnboundedInputSet(j) => {
                CliError::Parse(format!("input_A: input set is unbounded along u{}", j + 1))
            }
            e => CliError::Parse(e.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Multipliers {
    pub sigma_safe: String,
    pub sigma_init: String,
    pub lambda1: String,
    pub lambda2: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_enl: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_cbf: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateFile {
    pub state_dim: usize,
    pub input_dim: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(rename = "B")]
    pub b: String,
    pub u: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multipliers: Option<Multipliers>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl CertificateFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        load_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        write_json(path, self)
    }

    pub fn from_certificate(cert: &Certificate, metadata: Metadata) -> Self {
        let str_all = |v: &PolynomialVector| v.iter().map(|p| p.to_string()).collect::<Vec<_>>();
        CertificateFile {
            state_dim: cert.b.n_vars(),
            input_dim: cert.u.len(),
            mode: cert.mode,
            b: cert.b.to_string(),
            u: str_all(&cert.u),
            multipliers: Some(Multipliers {
                sigma_safe: cert.sigma_safe.to_string(),
                sigma_init: cert.sigma_init.to_string(),
                lambda1: cert.lambda1.to_string(),
                lambda2: str_all(&cert.lambda2),
                sigma_enl: cert.sigma_enl.as_ref().map(|p| p.to_string()),
                sigma_cbf: cert.sigma_cbf.as_ref().map(|p| p.to_string()),
            }),
            alpha: cert.alpha,
            metadata,
        }
    }

    /// Checks the dimensions against the problem file.
    pub fn check_dims(&self, problem: &ProblemFile) -> Result<(), CliError> {
        if self.state_dim != problem.state_dim {
            return Err(CliError::Parse(format!(
                "state_dim: certificate has {}, problem has {}",
                self.state_dim, problem.state_dim
            )));
        }
        if self.input_dim != problem.input_dim {
            return Err(CliError::Parse(format!(
                "input_dim: certificate has {}, problem has {}",
                self.input_dim, problem.input_dim
            )));
        }
        check_len("u", self.u.len(), self.input_dim)
    }

    /// The certificate and whether it carried multipliers. Missing
    /// multipliers are left as zero polynomials.
    pub fn to_certificate(&self, n_constraints: usize) -> Result<(Certificate, bool), CliError> {
        let n = self.state_dim;
        check_len("u", self.u.len(), self.input_dim)?;
        let b = parse_poly("B", &self.b, n)?;
        let u = PolynomialVector::new(parse_all("u", &self.u, n)?).map_err(|e| CliError::Parse(format!("u: {e}")))?;
        let zero = Polynomial::zero(n);
        let mut cert = Certificate {
            b,
            u,
            sigma_safe: zero.clone(),
            sigma_init: zero.clone(),
            lambda1: zero.clone(),
            lambda2: PolynomialVector::zeros(n, n_constraints),
            sigma_enl: None,
            sigma_cbf: None,
            mode: self.mode,
            alpha: self.alpha,
            witnesses: Vec::new(),
        };
        let Some(mult) = &self.multipliers else {
            return Ok((cert, false));
        };
        check_len("multipliers.lambda2", mult.lambda2.len(), n_constraints)?;
        cert.sigma_safe = parse_poly("multipliers.sigma_safe", &mult.sigma_safe, n)?;
        cert.sigma_init = parse_poly("multipliers.sigma_init", &mult.sigma_init, n)?;
        cert.lambda1 = parse_poly("multipliers.lambda1", &mult.lambda1, n)?;
        cert.lambda2 = PolynomialVector::new(parse_all("multipliers.lambda2", &mult.lambda2, n)?)
            .map_err(|e| CliError::Parse(format!("multipliers.lambda2: {e}")))?;
        cert.sigma_enl = mult
            .sigma_enl
            .as_ref()
            .map(|s| parse_poly("multipliers.sigma_enl", s, n))
            .transpose()?;
        cert.sigma_cbf = mult
            .sigma_cbf
            .as_ref()
            .map(|s| parse_poly("multipliers.sigma_cbf", s, n))
            .transpose()?;
        Ok((cert, true))
    }
}

/// Reads JSON, reporting the key path and line of the first error.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::Parse(format!("{}: {key}: {}", path.display(), e.into_inner()))
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
