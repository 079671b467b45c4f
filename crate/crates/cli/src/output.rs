//! CSV and sidecar writers. Every file goes through an atomic rename.

use std::path::{Path, PathBuf};

use dpn::io::write_atomic;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    write_atomic(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// One curve: `(x, value)` rows tagged with the metric kind and seed.
pub fn curve_csv(x_name: &str, rows: impl IntoIterator<Item = (usize, f64)>, kind: &str, seed: u64) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record([x_name, "value", "kind", "seed"]).expect("in-memory write");
    for (x, v) in rows {
        w.write_record([x.to_string(), v.to_string(), kind.to_string(), seed.to_string()])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

#[derive(Serialize)]
struct Invocation<'a, A: Serialize> {
    command: &'a str,
    args: &'a A,
    config: &'a RunConfig,
}

/// Writes the resolved config, with the command and its flags, to `path`.
pub fn write_run_record<A: Serialize>(path: &Path, command: &str, args: &A, config: &RunConfig) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(&Invocation { command, args, config }).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// `model.dpnw` -> `model.dpnw.run.json`, next to the output file.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}
