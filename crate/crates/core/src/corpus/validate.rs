//! Optional compile check of netlists with an external SPICE simulator.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::manifest::Manifest;

/// Environment variable naming the simulator executable.
pub const SIMULATOR_ENV: &str = "ANALOG_RETRIEVAL_SIMULATOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CompileStatus {
    Pass,
    Fail,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordStatus {
    pub id: String,
    pub status: CompileStatus,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub records: Vec<RecordStatus>,
    pub passed: usize,
    pub total: usize,
    pub compile_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ValidationOutcome {
    Skipped { reason: String },
    Completed(ValidationReport),
}

#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub simulator: Option<PathBuf>,
    pub timeout: Duration,
    pub parallelism: usize,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { simulator: None, timeout: Duration::from_secs(30), parallelism: 1 }
    }
}

/// Finds an executable by path or by searching `PATH`.
pub fn locate(program: &Path) -> Option<PathBuf> {
    if program.components().count() > 1 {
        return program.is_file().then(|| program.to_path_buf());
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join(program)).find(|p| p.is_file())
}

fn run_one(sim: &Path, netlist: &Path, timeout: Duration) -> (CompileStatus, String) {
    let child = Command::new(sim).arg("-b").arg(netlist).stdin(Stdio::null()).stdout(Stdio::null()).stderr(Stdio::piped()).spawn();
    let mut child = match child {
        Ok(c) => c,
        Err(e) => return (CompileStatus::Fail, e.to_string()),
    };
    let mut stderr = child.stderr.take();
    let reader = thread::spawn(move || {
        let mut s = String::new();
        if let Some(e) = stderr.as_mut() {
            let _ = e.read_to_string(&mut s);
        }
        s
    });
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(st)) => break Some(st),
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(Duration::from_millis(10)),
            Err(_) => break None,
        }
    };
    let err = reader.join().unwrap_or_default();
    match status {
        None => (CompileStatus::Timeout, err),
        Some(st) => {
            let lower = err.to_ascii_lowercase();
            let failed = !st.success() || lower.contains("error") || lower.contains("fatal");
            (if failed { CompileStatus::Fail } else { CompileStatus::Pass }, err)
        }
    }
}

/// Runs the simulator in batch mode on every netlist. A missing simulator
/// skips the whole check; per-record failures and timeouts are recorded
/// and the run continues.
pub fn validate_corpus(manifest: &Manifest, opts: &ValidateOptions) -> ValidationOutcome {
    let requested = opts.simulator.clone().or_else(|| std::env::var_os(SIMULATOR_ENV).map(PathBuf::from));
    let Some(requested) = requested else {
        return ValidationOutcome::Skipped { reason: "no simulator configured".into() };
    };
    let Some(sim) = locate(&requested) else {
        return ValidationOutcome::Skipped { reason: format!("simulator `{}` not found", requested.display()) };
    };

    let jobs: Vec<(String, PathBuf)> = manifest.records.iter().map(|r| (r.id.clone(), manifest.resolve(&r.netlist_path))).collect();
    let workers = opts.parallelism.max(1);
    let mut results: Vec<Option<RecordStatus>> = vec![None; jobs.len()];
    let chunk = jobs.len().div_ceil(workers).max(1);
    thread::scope(|s| {
        for (slot, work) in results.chunks_mut(chunk).zip(jobs.chunks(chunk)) {
            let sim = &sim;
            s.spawn(move || {
                for (out, (id, path)) in slot.iter_mut().zip(work) {
                    let (status, stderr) = run_one(sim, path, opts.timeout);
                    *out = Some(RecordStatus { id: id.clone(), status, stderr });
                }
            });
        }
    });
    let records: Vec<RecordStatus> = results.into_iter().map(|r| r.expect("every job ran")).collect();
    let passed = records.iter().filter(|r| r.status == CompileStatus::Pass).count();
    let total = records.len();
    let compile_rate_pct = if total == 0 { 100.0 } else { 100.0 * passed as f64 / total as f64 };
    ValidationOutcome::Completed(ValidationReport { records, passed, total, compile_rate_pct })
}
