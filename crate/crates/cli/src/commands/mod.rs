//! Subcommand implementations. Each writes a `*.resolved.json` snapshot next
//! to its outputs.

pub mod ambiguity;
pub mod evaluate;
pub mod reproduce;
pub mod sample;
pub mod train;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use vrfm_core::nn::Matrix;
use vrfm_core::training::{load_checkpoint, Checkpoint};

use crate::CliError;

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let f = File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

pub(crate) fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
) -> Result<(), CliError> {
    let mut out = create_file(path)?;
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_with(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        writeln!(out)?;
        Ok(())
    })
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_with(path, |out| Ok(out.write_all(text.as_bytes())?))
}

/// Rows of `m` under a `x0,x1,...` header.
pub(crate) fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<(), CliError> {
    write_with(path, |out| {
        let header: Vec<String> = (0..m.cols()).map(|j| format!("x{j}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for r in 0..m.rows() {
            let row: Vec<String> = m.row_slice(r).iter().map(f64::to_string).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    })
}

/// Loads a user-supplied checkpoint; unreadable input is a usage error.
pub(crate) fn load_input_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    load_checkpoint(path).map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", path.display())))
}
