//! Result files: CSV tables, JSON documents and the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use langevin_core::samplers::Trajectory;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::HarnessResult;

/// Every float is written with 17 significant digits so values round-trip.
pub fn fmt_float(out: &mut String, v: f64) {
    let _ = write!(out, "{v:.16e}");
}

fn header(out: &mut String, leading: &[&str], dim: usize) {
    out.push_str(&leading.join(","));
    for j in 0..dim {
        let _ = write!(out, ",x{j}");
    }
    out.push('\n');
}

fn row(out: &mut String, values: &[f64]) {
    for v in values {
        out.push(',');
        fmt_float(out, *v);
    }
    out.push('\n');
}

/// `chain,x0,…` with one row per chain.
pub fn final_csv(states: &[Vec<f64>], dim: usize) -> String {
    let mut out = String::new();
    header(&mut out, &["chain"], dim);
    for (chain, x) in states.iter().enumerate() {
        let _ = write!(out, "{chain}");
        row(&mut out, x);
    }
    out
}

/// `chain,step,sigma,x0,…` with one row per recorded state.
pub fn trace_csv(trajectories: &[Trajectory], dim: usize) -> String {
    let mut out = String::new();
    header(&mut out, &["chain", "step", "sigma"], dim);
    for (chain, t) in trajectories.iter().enumerate() {
        for ((step, sigma), x) in t.steps.iter().zip(&t.sigmas).zip(&t.states) {
            let _ = write!(out, "{chain},{step},");
            fmt_float(&mut out, *sigma);
            row(&mut out, x);
        }
    }
    out
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> HarnessResult<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> HarnessResult<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Collects result files for one output directory.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    files: Vec<FileEntry>,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> HarnessResult<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, contents: &str) -> HarnessResult<PathBuf> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(&path, contents.as_bytes())?;
        self.files.push(FileEntry {
            path: name.to_string(),
            sha256: sha256_hex(contents.as_bytes()),
            bytes: contents.len(),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> HarnessResult<PathBuf> {
        self.write(name, &to_json(value)?)
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `manifest.json` last, listing every file written so far.
    pub fn finish(self, command: &str, config: &ExperimentConfig, extra: serde_json::Value, elapsed: Duration) -> HarnessResult<PathBuf> {
        let manifest = RunManifest {
            manifest_version: 1,
            command: command.to_string(),
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            parameters: extra,
            duration_secs: elapsed.as_secs_f64(),
            files: self.files,
        };
        let path = self.root.join("manifest.json");
        write_atomic(&path, to_json(&manifest)?.as_bytes())?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub command: String,
    pub software_version: String,
    pub config: ExperimentConfig,
    /// Subcommand flags that are not part of the config.
    pub parameters: serde_json::Value,
    pub duration_secs: f64,
    pub files: Vec<FileEntry>,
}
