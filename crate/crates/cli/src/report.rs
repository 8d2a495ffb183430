//! Report envelope, error mapping and output plumbing.

use std::fmt::Debug;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use orbitscope::groupspec::SpecError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or unwritable files.
    Io { path: String, message: String },
    /// Malformed input; `offset` is a byte offset into the named file.
    Parse { path: String, offset: Option<usize>, message: String },
    /// Bad flag values.
    Usage(String),
    /// A well-formed input the analysis rejects.
    Domain { kind: String, message: String },
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError::Usage(message.into())
    }

    pub fn io(path: &Path, e: impl ToString) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    pub fn domain<E: Debug + ToString>(e: E) -> Self {
        CliError::Domain { kind: innermost_variant(&format!("{e:?}")), message: e.to_string() }
    }

    pub fn spec(path: &Path, e: SpecError) -> Self {
        match e {
            SpecError::Linalg(inner) => CliError::domain(inner),
            SpecError::Parse { offset, message, .. } | SpecError::Invalid { offset, message } => {
                CliError::Parse { path: path.display().to_string(), offset: Some(offset), message }
            }
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        let error = match self {
            CliError::Io { path, message } => json!({"kind": "Io", "path": path, "message": message}),
            CliError::Parse { path, offset, message } => {
                json!({"kind": "Parse", "path": path, "offset": offset, "message": message})
            }
            CliError::Usage(message) => json!({"kind": "Usage", "message": message}),
            CliError::Domain { kind, message } => json!({"kind": kind, "message": message}),
        };
        json!({ "error": error }).to_string()
    }
}

/// Name of the innermost enum variant in a derived `Debug` rendering, e.g.
/// `Linalg(NonCommuting { worst: 1.0 })` gives `NonCommuting`.
pub fn innermost_variant(debug: &str) -> String {
    let mut s = debug;
    loop {
        let end = s.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(s.len());
        let (ident, rest) = s.split_at(end);
        match rest.strip_prefix('(') {
            Some(inner) if inner.starts_with(|c: char| c.is_ascii_uppercase()) => s = inner,
            _ => return ident.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Header {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub tolerances: Map<String, Value>,
    /// Every flag the user set explicitly.
    pub overrides: Map<String, Value>,
}

impl Header {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Header {
            schema_version: SCHEMA_VERSION,
            tool: "orbitscope",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            tolerances: Map::new(),
            overrides: Map::new(),
        }
    }

    pub fn tolerance(&mut self, key: &str, value: impl Serialize) {
        self.tolerances.insert(key.into(), json!(value));
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match out {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn out_name(out: Option<&Path>) -> &Path {
    out.unwrap_or(Path::new("<stdout>"))
}

/// Single JSON document `{"header": ..., "result": ...}`.
pub fn write_report(out: Option<&Path>, header: &Header, result: &impl Serialize) -> Result<(), CliError> {
    let doc = json!({ "header": header, "result": result });
    let mut text = serde_json::to_string_pretty(&doc).expect("report serializes");
    text.push('\n');
    let mut w = sink(out)?;
    w.write_all(text.as_bytes()).and_then(|()| w.flush()).map_err(|e| CliError::io(out_name(out), e))
}

/// JSON lines: the header object, then one record per line.
pub fn write_stream(out: Option<&Path>, header: &Value, records: &[Value]) -> Result<(), CliError> {
    let mut w = sink(out)?;
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{header}")?;
        for r in records {
            writeln!(w, "{r}")?;
        }
        w.flush()
    };
    write().map_err(|e| CliError::io(out_name(out), e))
}

pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn innermost_variant_names() {
        assert_eq!(innermost_variant("Linalg(NonCommuting { worst: 1.0 })"), "NonCommuting");
        assert_eq!(innermost_variant("QuasiSection(InfeasibleSystem)"), "InfeasibleSystem");
        assert_eq!(innermost_variant("UnclassifiedFamily(\"x\")"), "UnclassifiedFamily");
        assert_eq!(innermost_variant("GridNotPowerOfTwo(100)"), "GridNotPowerOfTwo");
        assert_eq!(innermost_variant("ZeroGenerator"), "ZeroGenerator");
    }
}
