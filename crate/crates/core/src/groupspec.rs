//! JSON group specifications:
//! `{ "n": 3, "generators": [[...n*n row-major...], ...], "tol": 1e-9, "dual": false }`.
//!
//! A generator may also be given as nested rows. With `"dual": true` the
//! matrices are the acting ones (spanning the transposed algebra).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{DilationAlgebra, LinalgError, RealMatrix, DEFAULT_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse { offset: usize, line: usize, column: usize, message: String },
    #[error("invalid group spec at byte {offset}: {message}")]
    Invalid { offset: usize, message: String },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl SpecError {
    /// Domain errors (a well-formed spec describing an unusable family)
    /// as opposed to malformed input.
    pub fn is_domain(&self) -> bool {
        matches!(self, SpecError::Linalg(_))
    }
}

/// Byte offset of a 1-based line/column position.
pub fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Deserializes `text`, mapping failures to `SpecError::Parse` with a byte offset.
pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, SpecError> {
    serde_json::from_str(text).map_err(|e| SpecError::Parse {
        offset: byte_offset(text, e.line(), e.column()),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGroupSpec {
    n: usize,
    generators: Vec<RawMatrix>,
    tol: Option<f64>,
    dual: Option<bool>,
    name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    /// Row-major, as given.
    pub generators: Vec<Vec<f64>>,
    pub tol: f64,
    pub dual: bool,
}

fn key_offset(text: &str, key: &str) -> usize {
    text.find(&format!("\"{key}\"")).unwrap_or(0)
}

pub fn parse_group_spec(text: &str) -> Result<GroupSpec, SpecError> {
    let raw: RawGroupSpec = from_json(text)?;
    let at = key_offset(text, "generators");
    if raw.n == 0 {
        return Err(SpecError::Invalid { offset: key_offset(text, "n"), message: "n must be positive".into() });
    }
    if raw.generators.is_empty() {
        return Err(SpecError::Invalid { offset: at, message: "at least one generator is required".into() });
    }
    let mut generators = Vec::with_capacity(raw.generators.len());
    for (i, g) in raw.generators.into_iter().enumerate() {
        let flat = match g {
            RawMatrix::Flat(v) => v,
            RawMatrix::Nested(rows) => {
                if rows.len() != raw.n || rows.iter().any(|r| r.len() != raw.n) {
                    return Err(SpecError::Invalid {
                        offset: at,
                        message: format!("generator {i} is not {0}x{0}", raw.n),
                    });
                }
                rows.concat()
            }
        };
        if flat.len() != raw.n * raw.n {
            return Err(SpecError::Invalid {
                offset: at,
                message: format!("generator {i} has {} entries, expected {}", flat.len(), raw.n * raw.n),
            });
        }
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(SpecError::Invalid { offset: at, message: format!("generator {i} has non-finite entries") });
        }
        generators.push(flat);
    }
    let tol = raw.tol.unwrap_or(DEFAULT_TOL);
    if !(tol > 0.0 && tol < 1.0) {
        return Err(SpecError::Invalid { offset: key_offset(text, "tol"), message: format!("tol {tol} outside (0, 1)") });
    }
    Ok(GroupSpec { name: raw.name, n: raw.n, generators, tol, dual: raw.dual.unwrap_or(false) })
}

impl GroupSpec {
    pub fn matrices(&self) -> Vec<RealMatrix> {
        self.generators.iter().map(|g| RealMatrix::from_row_slice(self.n, self.n, g)).collect()
    }

    pub fn algebra(&self) -> Result<DilationAlgebra, LinalgError> {
        self.algebra_with_tol(self.tol)
    }

    pub fn algebra_with_tol(&self, tol: f64) -> Result<DilationAlgebra, LinalgError> {
        if self.dual {
            DilationAlgebra::from_dual_generators(self.matrices(), tol)
        } else {
            DilationAlgebra::new(self.matrices(), tol)
        }
    }

    /// Spec holding the acting matrices of `alg`.
    pub fn from_algebra(alg: &DilationAlgebra, name: Option<&str>) -> Self {
        GroupSpec {
            name: name.map(str::to_owned),
            n: alg.n(),
            generators: alg
                .dual_generators()
                .iter()
                .map(|m| (0..alg.n()).flat_map(|r| (0..alg.n()).map(move |c| m[(r, c)])).collect())
                .collect(),
            tol: alg.tol(),
            dual: true,
        }
    }
}
