//! Plain-text data files and their readers.
//!
//! All files are whitespace-delimited UTF-8. Numbers are written in the
//! shortest form that parses back to the same `f64`, so every writer here
//! round-trips exactly through the matching reader.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sim::{RunConfig, Snapshot, TrajectoryRecord, Verdict};

/// First 16 hex digits of the SHA-256 of the configuration's JSON form.
pub fn config_hash(config: &RunConfig) -> String {
    let json = serde_json::to_string(config).expect("run configurations serialise");
    Sha256::digest(json.as_bytes())
        .iter()
        .take(8)
        .fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Numeric rows of a data file; `#` lines are returned separately and one
/// non-numeric header line is allowed.
fn read_rows(path: &Path) -> Result<(Vec<String>, Option<String>, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut comments = Vec::new();
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim().to_string());
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => {
                if let Some(first) = rows.first().map(Vec::len) {
                    if first != row.len() {
                        return Err(format_err(path, format!("line {}: {} columns, expected {first}", i + 1, row.len())));
                    }
                }
                rows.push(row);
            }
            Err(_) if header.is_none() && rows.is_empty() => header = Some(line.to_string()),
            Err(e) => return Err(format_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok((comments, header, rows))
}

/// Value of `key=value` in a comment line such as `# config_hash=... seed=3`.
fn comment_value<'a>(comments: &'a [String], key: &str) -> Option<&'a str> {
    comments
        .iter()
        .flat_map(|c| c.split_whitespace())
        .find_map(|w| w.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
}

/// Column names of a trajectory with `m` actuators.
pub fn trajectory_columns(m: usize, with_estimator: bool) -> Vec<String> {
    let mut cols = vec!["t".to_string(), "norm".to_string(), "cost".to_string()];
    cols.extend((1..=m).map(|i| format!("eta{i}")));
    if with_estimator {
        cols.push("est_err".into());
    }
    cols
}

/// Time series of one run: `t ‖h−1‖ cost η₁ … η_M [est_err]`.
pub fn write_trajectory(path: impl AsRef<Path>, record: &TrajectoryRecord, config: &RunConfig) -> Result<()> {
    let m = record.amplitudes.first().map_or(config.n_actuators, Vec::len);
    let est = record.estimator_errors.as_ref();
    let strategy = config.strategy.map_or("none", |s| s.name());
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# config_hash={} strategy={strategy} reynolds={} seed={} verdict={}",
        config_hash(config),
        num(config.params.reynolds),
        config.seed,
        record.verdict
    );
    let _ = writeln!(out, "# {}", trajectory_columns(m, est.is_some()).join(" "));
    for (i, &t) in record.times.iter().enumerate() {
        let mut row = vec![num(t), num(record.norms[i]), num(record.costs[i])];
        row.extend(record.amplitudes[i].iter().map(|&v| num(v)));
        if let Some(e) = est {
            row.push(num(e[i]));
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// A trajectory file as read back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTable {
    pub config_hash: String,
    pub verdict: Option<Verdict>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrajectoryTable {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<TrajectoryTable> {
    let path = path.as_ref();
    let (comments, _, rows) = read_rows(path)?;
    let config_hash = comment_value(&comments, "config_hash")
        .ok_or_else(|| format_err(path, "no config_hash in header"))?
        .to_string();
    let verdict = comment_value(&comments, "verdict").and_then(|v| Verdict::from_name(v));
    let columns: Vec<String> = comments
        .iter()
        .find(|c| c.split_whitespace().next() == Some("t"))
        .ok_or_else(|| format_err(path, "no column header"))?
        .split_whitespace()
        .map(str::to_string)
        .collect();
    if let Some(r) = rows.first() {
        if r.len() != columns.len() {
            return Err(format_err(path, format!("{} columns named, {} present", columns.len(), r.len())));
        }
    }
    Ok(TrajectoryTable {
        config_hash,
        verdict,
        columns,
        rows,
    })
}

/// Profile at one time: `x h f [z]`, where `z` is the estimated height.
pub fn write_snapshot(path: impl AsRef<Path>, snapshot: &Snapshot) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# t={}", num(snapshot.t));
    let _ = writeln!(out, "# x h f{}", if snapshot.estimate.is_some() { " z" } else { "" });
    for j in 0..snapshot.x.len() {
        let mut row = vec![num(snapshot.x[j]), num(snapshot.h[j]), num(snapshot.f[j])];
        if let Some(e) = &snapshot.estimate {
            row.push(num(1.0 + e[j]));
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_snapshot(path: impl AsRef<Path>) -> Result<Snapshot> {
    let path = path.as_ref();
    let (comments, _, rows) = read_rows(path)?;
    let t = comment_value(&comments, "t")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, "no time in header"))?;
    let width = rows.first().map_or(3, Vec::len);
    if !(width == 3 || width == 4) {
        return Err(format_err(path, format!("expected 3 or 4 columns, got {width}")));
    }
    let col = |j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    Ok(Snapshot {
        t,
        x: col(0),
        h: col(1),
        f: col(2),
        estimate: (width == 4).then(|| col(3).into_iter().map(|z| z - 1.0).collect()),
    })
}

/// One `(R, M, P)` point of a sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmpRow {
    pub reynolds: f64,
    pub actuators: usize,
    pub observers: usize,
}

/// Table with the bare header line `R M P`, as read by plotting scripts.
pub fn write_rmp_table(path: impl AsRef<Path>, rows: &[RmpRow]) -> Result<()> {
    let mut out = String::from("R M P\n");
    for r in rows {
        let _ = writeln!(out, "{} {} {}", num(r.reynolds), r.actuators, r.observers);
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_rmp_table(path: impl AsRef<Path>) -> Result<Vec<RmpRow>> {
    let path = path.as_ref();
    let (_, header, rows) = read_rows(path)?;
    if header.as_deref().map(|h| h.split_whitespace().collect::<Vec<_>>()) != Some(vec!["R", "M", "P"]) {
        return Err(format_err(path, "missing `R M P` header"));
    }
    rows.iter()
        .map(|r| {
            if r.len() != 3 || r[1].fract() != 0.0 || r[2].fract() != 0.0 || r[1] < 0.0 || r[2] < 0.0 {
                return Err(format_err(path, format!("bad row {r:?}")));
            }
            Ok(RmpRow {
                reynolds: r[0],
                actuators: r[1] as usize,
                observers: r[2] as usize,
            })
        })
        .collect()
}

/// Eigenvalues `re im`, least stable first, with the unstable count.
pub fn write_spectrum(path: impl AsRef<Path>, label: &str, eigenvalues: &[num_complex::Complex64], unstable: usize) -> Result<()> {
    let mut sorted = eigenvalues.to_vec();
    sorted.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    let mut out = String::new();
    let _ = writeln!(out, "# spectrum={label} unstable={unstable} count={}", sorted.len());
    let _ = writeln!(out, "# re im");
    for l in &sorted {
        let _ = writeln!(out, "{} {}", num(l.re), num(l.im));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_spectrum(path: impl AsRef<Path>) -> Result<(Vec<num_complex::Complex64>, usize)> {
    let path = path.as_ref();
    let (comments, _, rows) = read_rows(path)?;
    let unstable = comment_value(&comments, "unstable")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| format_err(path, "no unstable count"))?;
    let eig = rows
        .iter()
        .map(|r| match r.as_slice() {
            [re, im] => Ok(num_complex::Complex64::new(*re, *im)),
            _ => Err(format_err(path, "expected two columns")),
        })
        .collect::<Result<_>>()?;
    Ok((eig, unstable))
}

/// Row-major dump under a `# rows cols` header.
pub fn write_matrix(path: impl AsRef<Path>, a: &Array2<f64>) -> Result<()> {
    let mut out = format!("# {} {}\n", a.nrows(), a.ncols());
    for row in a.rows() {
        out.push_str(&row.iter().map(|&v| num(v)).collect::<Vec<_>>().join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let (comments, _, rows) = read_rows(path)?;
    let dims: Vec<usize> = comments
        .first()
        .map(|c| c.split_whitespace().filter_map(|w| w.parse().ok()).collect())
        .unwrap_or_default();
    let [r, c] = dims[..] else {
        return Err(format_err(path, "missing `# rows cols` header"));
    };
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(format_err(path, format!("header says {r}×{c}")));
    }
    Array2::from_shape_vec((r, c), rows.concat()).map_err(|e| format_err(path, e.to_string()))
}

/// Machine-readable result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub verdict: Verdict,
    pub cost: f64,
    pub decay_rate: Option<f64>,
    pub decay_r_squared: Option<f64>,
    pub linear_rate: Option<f64>,
    pub final_norm: f64,
    pub estimator_decay_rate: Option<f64>,
    pub estimator_r_squared: Option<f64>,
    pub mass_defect: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub message: Option<String>,
    pub params: crate::film::PhysicalParams,
    pub config: RunConfig,
    pub seed: u64,
    pub config_hash: String,
    /// Seconds since the Unix epoch; the only non-deterministic field.
    pub timestamp: u64,
}

impl RunSummary {
    pub fn new(record: &TrajectoryRecord, config: &RunConfig) -> Self {
        let est = record.estimator_fit();
        Self {
            verdict: record.verdict,
            cost: record.final_cost,
            decay_rate: record.decay.map(|d| d.rate),
            decay_r_squared: record.decay.map(|d| d.r_squared),
            linear_rate: record.linear_rate,
            final_norm: record.final_norm,
            estimator_decay_rate: est.map(|f| f.rate),
            estimator_r_squared: est.map(|f| f.r_squared),
            mass_defect: record.mass_defect,
            accepted_steps: record.accepted_steps,
            rejected_steps: record.rejected_steps,
            message: record.message.clone(),
            params: config.params,
            config: config.clone(),
            seed: config.seed,
            config_hash: config_hash(config),
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
