use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug)]
pub struct CliError {
    pub reason: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(reason: &'static str, message: impl Into<String>) -> Self {
        Self {
            reason,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }
}

impl From<contdid::Error> for CliError {
    fn from(e: contdid::Error) -> Self {
        Self::new(e.reason(), e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.reason, self.message)
    }
}

/// Rendered command output, always newline terminated.
pub struct Output {
    body: String,
}

impl Output {
    pub fn text(mut body: String) -> Self {
        if !body.ends_with('\n') {
            body.push('\n');
        }
        Self { body }
    }
}

pub fn json<T: Serialize + ?Sized>(v: &T) -> Result<Output, CliError> {
    serde_json::to_string_pretty(v)
        .map(Output::text)
        .map_err(|e| CliError::new("io", e.to_string()))
}

/// Shortest round-trip form; missing values are empty cells.
pub fn csv_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:?}")
    }
}

pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    argv: &'a [String],
    output: Option<&'a Path>,
    config: &'a C,
}

/// Writes the output and its manifest. Without an output path the result goes
/// to stdout and the manifest to stderr.
pub fn emit<C: Serialize>(out: Option<&Path>, output: &Output, argv: &[String], config: &C) -> Result<(), CliError> {
    let manifest = Manifest {
        tool: "contdid",
        version: env!("CARGO_PKG_VERSION"),
        argv,
        output: out,
        config,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::new("io", e.to_string()))?;
    text.push('\n');
    let write = |path: &Path, body: &str| {
        std::fs::write(path, body).map_err(|e| CliError::new("io", format!("cannot write {}: {e}", path.display())))
    };
    match out {
        Some(path) => {
            write(path, &output.body)?;
            write(&manifest_path(path), &text)
        }
        None => {
            std::io::stdout()
                .write_all(output.body.as_bytes())
                .map_err(|e| CliError::new("io", e.to_string()))?;
            eprint!("{text}");
            Ok(())
        }
    }
}
