use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use super::ExperimentError;
use crate::dynamics::{format_real, write_samples_csv, ForceSample};
use crate::networks::ParamVector;

pub(crate) fn create_dir(path: &Path) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(path).map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>, ExperimentError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ExperimentError::io(path, e))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<(), ExperimentError> {
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

/// Header row plus one line per row, every value with 17 significant digits.
pub(crate) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    let io = |e| ExperimentError::io(path, e);
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
        writeln!(w, "{}", line.join(",")).map_err(io)?;
    }
    finish(path, w)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(|e| ExperimentError::io(path, e))?;
    finish(path, w)
}

pub(crate) fn write_samples(path: &Path, samples: &[ForceSample]) -> Result<(), ExperimentError> {
    let mut w = create(path)?;
    write_samples_csv(&mut w, samples)?;
    finish(path, w)
}

pub(crate) fn write_params(path: &Path, p: &ParamVector) -> Result<(), ExperimentError> {
    Ok(p.save(path)?)
}

/// Streams through `f`, mapping io errors to `path`.
pub(crate) fn with_writer<F>(path: &Path, f: F) -> Result<(), ExperimentError>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).map_err(|e| ExperimentError::io(path, e))?;
    finish(path, w)
}
