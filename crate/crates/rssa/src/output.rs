//! Artifact formats: trajectory CSV and versioned JSON tables.

use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rssa_core::experiments::TrajectoryLog;
use serde::Serialize;

/// Column names of the trajectory CSV for a state of size `n` and control of size `m`.
pub fn csv_header(n: usize, m: usize) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.extend((0..m).map(|i| format!("u_ref{i}")));
    cols.extend((0..m).map(|i| format!("u{i}")));
    for c in ["phi0", "phi", "worst_rate", "true_rate", "status", "fallback", "in_box"] {
        cols.push(c.to_string());
    }
    cols
}

/// One row per step; floats in shortest round-trip form, empty `status` without a filter.
pub fn write_trajectory_csv<W: Write>(log: &TrajectoryLog, mut w: W) -> io::Result<()> {
    let (n, m) = log
        .steps
        .first()
        .map(|s| (s.state.len(), s.u.len()))
        .unwrap_or((0, 0));
    writeln!(w, "{}", csv_header(n, m).join(","))?;
    for s in &log.steps {
        let mut row: Vec<String> = vec![s.t.to_string()];
        row.extend(s.state.iter().map(f64::to_string));
        row.extend(s.u_ref.iter().map(f64::to_string));
        row.extend(s.u.iter().map(f64::to_string));
        row.push(s.phi0.to_string());
        row.push(s.phi.to_string());
        row.push(s.worst_rate.to_string());
        row.push(s.true_rate.to_string());
        row.push(s.status.map(|st| st.as_str()).unwrap_or("").to_string());
        row.push(u8::from(s.fallback).to_string());
        row.push(u8::from(s.in_state_box).to_string());
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// Files staged next to their targets and renamed into place together, so a
/// failed command leaves no partial artifacts behind.
pub struct Staged {
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staged {
    pub fn new() -> Self {
        Self { files: Vec::new() }
    }

    pub fn add(&mut self, target: &Path, bytes: &[u8]) -> io::Result<()> {
        let name = target
            .file_name()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "artifact path has no file name"))?;
        let tmp = target.with_file_name(format!(".{}.partial", name.to_string_lossy()));
        if let Err(e) = std::fs::write(&tmp, bytes) {
            let _ = std::fs::remove_file(&tmp);
            self.discard();
            return Err(e);
        }
        self.files.push((tmp, target.to_path_buf()));
        Ok(())
    }

    pub fn commit(mut self) -> io::Result<Vec<PathBuf>> {
        let files = std::mem::take(&mut self.files);
        let mut done = Vec::with_capacity(files.len());
        for (tmp, target) in files {
            std::fs::rename(&tmp, &target)?;
            done.push(target);
        }
        Ok(done)
    }

    fn discard(&mut self) {
        for (tmp, _) in self.files.drain(..) {
            let _ = std::fs::remove_file(tmp);
        }
    }
}

impl Default for Staged {
    fn default() -> Self {
        Self::new()
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        self.discard();
    }
}
