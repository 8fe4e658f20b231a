//! Trace plots from chain files written by `bench run`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::OUTPUT_DIR_ENV;
use crate::error::{BenchError, Result};
use crate::svg::trace_plot;

/// Reads column `theta{coord}` (1-based) of a chain file.
pub fn read_coordinate(path: &Path, coord: usize) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => BenchError::Config(format!("cannot open chain file {}", path.display())),
        _ => BenchError::Csv(e),
    })?;
    let name = format!("theta{coord}");
    let headers = r.headers()?.clone();
    let dim = headers.iter().filter(|h| h.starts_with("theta")).count();
    let col = headers.iter().position(|h| h == name).ok_or_else(|| {
        BenchError::Config(format!("coordinate {coord} out of range: chain has {dim} coordinates (1-based)"))
    })?;
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec[col]
            .parse()
            .map_err(|_| BenchError::Runtime(format!("bad value {:?} in {}", &rec[col], path.display())))?;
        values.push(v);
    }
    Ok(values)
}

/// Number of sign changes along a series, ignoring exact zeros.
pub fn sign_changes(values: &[f64]) -> usize {
    let mut last = 0.0;
    let mut n = 0;
    for &v in values.iter().filter(|v| **v != 0.0) {
        if last != 0.0 && v.signum() != last {
            n += 1;
        }
        last = v.signum();
    }
    n
}

pub fn plot_trace(chain_file: &Path, coord: usize) -> Result<PathBuf> {
    let values = read_coordinate(chain_file, coord)?;
    if values.is_empty() {
        return Err(BenchError::Runtime(format!("chain file {} has no samples", chain_file.display())));
    }
    let stem = chain_file.file_stem().and_then(|s| s.to_str()).unwrap_or("chain");
    let dir = match std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
        Some(d) => PathBuf::from(d),
        None => chain_file.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&dir).map_err(BenchError::io(&dir))?;
    let out = dir.join(format!("{stem}_theta{coord}.svg"));
    let svg = trace_plot(&values, &format!("{stem}: theta{coord}"), &format!("theta{coord}"));
    fs::write(&out, svg).map_err(BenchError::io(&out))?;
    Ok(out)
}
