//! Success/failure maps over `(Re, M, P)`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_rmp_table, RmpRow};
use crate::sim::{run, RunConfig, Verdict};
use crate::synth::Strategy;

/// `n` points from `lo` to `hi` evenly spaced in `ln Re`.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::invalid("reynolds range", format!("need 0 < min <= max, got [{lo}, {hi}]")));
    }
    Ok(match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|i| {
                    if i + 1 == n {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (n - 1) as f64).exp()
                    }
                })
                .collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub reynolds: Vec<f64>,
    pub actuators: Vec<usize>,
    pub observers: Vec<usize>,
    pub strategy: Strategy,
    /// Settings shared by every point; Reynolds number, bank sizes, strategy
    /// and seed are replaced per point.
    pub template: RunConfig,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub master_seed: u64,
}

/// One sweep point; `index` runs over Re, then M, then P.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub reynolds: f64,
    pub actuators: usize,
    pub observers: usize,
    pub seed: u64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, empty) in [
            ("reynolds", self.reynolds.is_empty()),
            ("actuators", self.actuators.is_empty()),
            ("observers", self.observers.is_empty()),
        ] {
            if empty {
                return Err(Error::invalid(name, "sweep list is empty"));
            }
        }
        if let Some(re) = self.reynolds.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::invalid("reynolds", format!("must be positive, got {re}")));
        }
        if self.actuators.contains(&0) || self.observers.contains(&0) {
            return Err(Error::invalid("actuators/observers", "counts must be positive"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &reynolds in &self.reynolds {
            for &actuators in &self.actuators {
                for &observers in &self.observers {
                    let index = out.len();
                    out.push(SweepPoint {
                        index,
                        reynolds,
                        actuators,
                        observers,
                        seed: self.master_seed ^ index as u64,
                    });
                }
            }
        }
        out
    }

    pub fn config_for(&self, point: &SweepPoint) -> RunConfig {
        let mut c = self.template.clone();
        c.params.reynolds = point.reynolds;
        c.n_actuators = point.actuators;
        c.n_observers = point.observers;
        c.strategy = Some(self.strategy);
        c.seed = point.seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub point: SweepPoint,
    pub verdict: Verdict,
    pub final_norm: f64,
    pub cost: f64,
    /// Largest mass-balance defect along the run.
    pub mass_defect: f64,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub strategy: Strategy,
    pub outcomes: Vec<PointOutcome>,
}

fn evaluate(spec: &SweepSpec, point: &SweepPoint) -> PointOutcome {
    let config = spec.config_for(point);
    match run(&config) {
        Ok(out) => PointOutcome {
            point: *point,
            verdict: out.record.verdict,
            final_norm: out.record.final_norm,
            cost: out.record.final_cost,
            mass_defect: out.record.mass_defect,
            message: out.record.message,
        },
        // an invalid point (say, more observers than nodes) counts as a gap
        Err(e) => PointOutcome {
            point: *point,
            verdict: Verdict::SynthesisFailed,
            final_norm: f64::NAN,
            cost: f64::NAN,
            mass_defect: f64::NAN,
            message: Some(e.to_string()),
        },
    }
}

/// Runs every point in parallel. Results come back in point order
/// regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let points = spec.points();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| Error::invalid("workers", e.to_string()))?;
    let outcomes = pool.install(|| points.par_iter().map(|p| evaluate(spec, p)).collect());
    Ok(SweepResult {
        strategy: spec.strategy,
        outcomes,
    })
}

/// Paths written by [`SweepResult::write`].
#[derive(Debug, Clone)]
pub struct SweepFiles {
    pub success: PathBuf,
    pub failure: PathBuf,
    pub gaps: PathBuf,
    pub summary: PathBuf,
}

impl SweepResult {
    fn rows(&self, keep: impl Fn(Verdict) -> bool) -> Vec<RmpRow> {
        self.outcomes
            .iter()
            .filter(|o| keep(o.verdict))
            .map(|o| RmpRow {
                reynolds: o.point.reynolds,
                actuators: o.point.actuators,
                observers: o.point.observers,
            })
            .collect()
    }

    pub fn successes(&self) -> Vec<RmpRow> {
        self.rows(|v| v == Verdict::Stabilised)
    }

    /// Runs that were attempted but did not stabilise the film.
    pub fn failures(&self) -> Vec<RmpRow> {
        self.rows(|v| matches!(v, Verdict::NotStabilised | Verdict::BlowUp))
    }

    /// Points where no controller could be synthesised.
    pub fn gaps(&self) -> Vec<RmpRow> {
        self.rows(|v| v == Verdict::SynthesisFailed)
    }

    /// Writes `data_<tag>-success.dat`, `-failure.dat`, `-gaps.dat` and a
    /// JSON list of every outcome into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SweepFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let tag = self.strategy.file_tag();
        let files = SweepFiles {
            success: dir.join(format!("data_{tag}-success.dat")),
            failure: dir.join(format!("data_{tag}-failure.dat")),
            gaps: dir.join(format!("data_{tag}-gaps.dat")),
            summary: dir.join(format!("data_{tag}-points.json")),
        };
        write_rmp_table(&files.success, &self.successes())?;
        write_rmp_table(&files.failure, &self.failures())?;
        write_rmp_table(&files.gaps, &self.gaps())?;
        std::fs::write(&files.summary, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(files)
    }
}
