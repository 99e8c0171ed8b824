//! Canonical project file format.
//!
//! A project is one pretty-printed JSON document, UTF-8, LF line endings,
//! terminated by a single newline. Keys appear in the declaration order of the
//! model structs with `schema_version` first; see `FORMAT.md` at the
//! repository root for the full layout.

use thiserror::Error;

use crate::error::Coded;
use crate::model::{StoryInstrument, SCHEMA_VERSION};
use crate::validate::{validate_instrument, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("schema version {found} is newer than supported version {supported}")]
    SchemaVersionTooNew { found: u64, supported: u32 },
    #[error("malformed document at {location}: {message}")]
    MalformedDocument { location: String, message: String },
    #[error("instrument violates invariants:\n{0}")]
    InvariantViolation(ValidationReport),
}

impl Coded for FormatError {
    fn code(&self) -> &'static str {
        match self {
            FormatError::SchemaVersionTooNew { .. } => "SCHEMA_VERSION_TOO_NEW",
            FormatError::MalformedDocument { .. } => "MALFORMED_DOCUMENT",
            FormatError::InvariantViolation(_) => "INVARIANT_VIOLATION",
        }
    }
}

fn malformed(e: &serde_json::Error) -> FormatError {
    FormatError::MalformedDocument {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}

pub fn serialize(instr: &StoryInstrument) -> Result<Vec<u8>, FormatError> {
    let report = validate_instrument(instr);
    if !report.is_empty() {
        return Err(FormatError::InvariantViolation(report));
    }
    let mut out = serde_json::to_vec_pretty(instr).expect("model types always serialize");
    out.push(b'\n');
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<StoryInstrument, FormatError> {
    let value: serde_json::Value = serde_json::from_slice(bytes).map_err(|e| malformed(&e))?;
    let version = value
        .get("schema_version")
        .ok_or_else(|| FormatError::MalformedDocument {
            location: "schema_version".into(),
            message: "missing schema_version".into(),
        })?
        .as_u64()
        .ok_or_else(|| FormatError::MalformedDocument {
            location: "schema_version".into(),
            message: "schema_version is not a non-negative integer".into(),
        })?;
    if version > u64::from(SCHEMA_VERSION) {
        return Err(FormatError::SchemaVersionTooNew {
            found: version,
            supported: SCHEMA_VERSION,
        });
    }
    if version < u64::from(SCHEMA_VERSION) {
        return Err(FormatError::MalformedDocument {
            location: "schema_version".into(),
            message: format!("no migration from schema version {version}"),
        });
    }
    let instr: StoryInstrument = serde_json::from_slice(bytes).map_err(|e| malformed(&e))?;
    let report = validate_instrument(&instr);
    if !report.is_empty() {
        return Err(FormatError::InvariantViolation(report));
    }
    Ok(instr)
}
