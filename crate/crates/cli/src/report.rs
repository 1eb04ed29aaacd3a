//! Report files, the output directory, and the exit-code contract.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use kconvex_core::io::{fmt_f64, to_json};
use kconvex_core::verify::{VerificationReport, W2_CONTRACTION};
use serde::Serialize;
use serde_json::json;

/// Process exit status: 0 when every requested check passes, 2 when some
/// check fails, 1 on errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    CheckFailure,
    Error,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Pass => 0,
            Status::CheckFailure => 2,
            Status::Error => 1,
        }
    }

    pub fn from_checks(passes: impl IntoIterator<Item = bool>) -> Self {
        if passes.into_iter().all(|p| p) {
            Status::Pass
        } else {
            Status::CheckFailure
        }
    }
}

pub fn status_of(reports: &[VerificationReport]) -> Status {
    Status::from_checks(reports.iter().map(|r| r.pass))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const REPORT_CSV_HEADER: [&str; 6] = ["check_id", "K", "tolerance", "margin", "pass", "error"];

/// Flat CSV with one row per check.
pub fn reports_csv(reports: &[VerificationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        w.write_record([
            r.check_id.clone(),
            fmt_f64(r.k),
            fmt_f64(r.tolerance),
            fmt_f64(r.margin),
            r.pass.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn render_reports(reports: &[VerificationReport], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(to_json(&reports)?),
        ReportFormat::Csv => reports_csv(reports),
    }
}

/// `K, t, ratio, bound` rows of the W₂ contraction checks: observed
/// `W₂(μ_t, ν_t)/W₂(μ₀, ν₀)` against `e^{−Kt}`.
pub fn contraction_plot_csv(reports: &[VerificationReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["K", "t", "ratio", "bound"])?;
    for r in reports.iter().filter(|r| r.check_id == W2_CONTRACTION) {
        let col = |k: &str| -> Vec<f64> {
            r.witnesses.get(k).and_then(|v| v.as_array()).map(|a| a.iter().filter_map(|x| x.as_f64()).collect()).unwrap_or_default()
        };
        let (ts, ratios, bounds) = (col("times"), col("ratios"), col("bounds"));
        for ((t, q), b) in ts.iter().zip(&ratios).zip(&bounds) {
            w.write_record([fmt_f64(r.k), fmt_f64(*t), fmt_f64(*q), fmt_f64(*b)])?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct Stage {
    pub name: String,
    pub seconds: f64,
}

/// Output directory. Every file is written from the calling thread, in
/// program order, and recorded for the manifest.
#[derive(Debug)]
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
    stages: Vec<Stage>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(Self { root: root.to_path_buf(), written: Vec::new(), stages: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn record(&mut self, name: &str) {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.path(name);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?;
        self.record(name);
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        self.write_text(name, &to_json(value)?)
    }

    /// Writes through a closure taking the target path (core CSV writers).
    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&Path) -> kconvex_core::Result<()>) -> Result<()> {
        let p = self.path(name);
        f(&p).with_context(|| format!("writing {}", p.display()))?;
        self.record(name);
        Ok(())
    }

    /// Runs `f` and records its wall-clock time under `name`.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.stages.push(Stage { name: name.into(), seconds: start.elapsed().as_secs_f64() });
        out
    }

    /// Writes `manifest.json`. Timings vary between runs; every other output
    /// is byte-stable.
    pub fn finish(mut self, command: &str, config_hash: Option<&str>, seed: u64, status: Status) -> Result<()> {
        let mut outputs = self.written.clone();
        outputs.sort();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config_hash": config_hash,
            "seed": seed,
            "stages": self.stages,
            "exit_code": status.code(),
            "outputs": outputs,
        });
        self.write_json("manifest.json", &manifest)
    }
}
