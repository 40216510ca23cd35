//! Provenance header embedded in every output.

use std::io::Write;

use massweight::synthetic::SyntheticConfig;
use massweight::zsolver::{InitialGuess, Method};
use serde::Serialize;
use serde_json::Value;

pub const TOOL_VERSION: &str = concat!("massweight ", env!("CARGO_PKG_VERSION"));

/// Everything needed to rerun a command and get the same bytes back. Thread count
/// is deliberately absent: it never changes the output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<SyntheticConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<InitialGuess>,
    /// Command-specific settings not covered above.
    #[serde(skip_serializing_if = "Value::is_null")]
    pub parameters: Value,
    pub outputs: Vec<String>,
    pub tool_version: &'static str,
}

impl RunManifest {
    pub fn new(command: &'static str) -> Self {
        Self {
            command,
            input: None,
            config: None,
            seed: None,
            method: None,
            init: None,
            parameters: Value::Null,
            outputs: Vec::new(),
            tool_version: TOOL_VERSION,
        }
    }

    /// Writes the manifest as a `#` comment line, which the sample reader skips.
    pub fn write_comment<W: Write + ?Sized>(&self, out: &mut W) -> std::io::Result<()> {
        let json = serde_json::to_string(self).expect("manifest serializes");
        writeln!(out, "# manifest: {json}")
    }
}
