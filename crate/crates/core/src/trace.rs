//! Trace files: one CSV per run plus a TOML manifest of the resolved config.
//!
//! Floats use Rust's shortest round-trip formatting, so identical runs give
//! byte-identical files. Missing values (Byzantine columns, unclipped nodes)
//! are empty cells.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{render_config, DEFAULT_OUT_DIR, OUT_DIR_ENV};
use crate::engine::RunTrace;
use crate::error::{Error, Result};

/// Where traces go when neither the command line nor the config says.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(x) = v {
        write!(out, "{x}").unwrap();
    }
}

/// The CSV text of a run: a header and one row per epoch.
pub fn render_csv(run: &RunTrace) -> String {
    let mut out = String::from("epoch");
    for metric in ["c", "d", "acc", "tau"] {
        for l in &run.labels {
            write!(out, ",{metric}_{l}").unwrap();
        }
    }
    out.push_str(",mean_c,mean_d,mean_acc,mean_tau\n");
    for r in &run.records {
        write!(out, "{}", r.epoch).unwrap();
        for col in [&r.consensus, &r.distance, &r.accuracy, &r.tau] {
            for v in col {
                cell(&mut out, *v);
            }
        }
        cell(&mut out, Some(r.mean_consensus));
        cell(&mut out, Some(r.mean_distance));
        cell(&mut out, Some(r.mean_accuracy));
        cell(&mut out, r.mean_tau);
        out.push('\n');
    }
    out
}

/// File stem for a run name: `/` and other separators become `_`.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

/// Writes `<stem>.csv` and `<stem>.toml` into `dir`; returns both paths.
pub fn emit_traces(run: &RunTrace, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = file_stem(&run.config.name);
    let csv = dir.join(format!("{stem}.csv"));
    let manifest = dir.join(format!("{stem}.toml"));
    fs::write(&csv, render_csv(run)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&manifest, render_config(&run.config)).map_err(|e| Error::io(&manifest, e))?;
    Ok((csv, manifest))
}
