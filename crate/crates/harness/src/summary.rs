//! Compare the last agent episode against the fixed-OAR baselines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::run::{RoarReport, SweepReport, ROAR_REPORT, SWEEP_REPORT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLine {
    pub final_wer: f64,
    pub total_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: Vec<EpisodeLine>,
    /// Keyed by `β` with one decimal, e.g. `"2.0"`.
    pub baselines: BTreeMap<String, f64>,
    pub relative_improvement_pct: f64,
}

/// `100 · (best_fixed − roar) / best_fixed`; positive when the agent wins.
pub fn relative_improvement(best_fixed: f64, roar: f64) -> f64 {
    100.0 * (best_fixed - roar) / best_fixed
}

impl Summary {
    pub fn from_reports(roar: &RoarReport, sweep: &SweepReport) -> Result<Self> {
        let last = roar
            .episodes
            .last()
            .ok_or_else(|| HarnessError::Report("agent report lists no episodes".into()))?;
        let best = sweep
            .baselines
            .iter()
            .map(|b| b.final_wer)
            .fold(f64::INFINITY, f64::min);
        if !best.is_finite() {
            return Err(HarnessError::Report("sweep report lists no baselines".into()));
        }
        Ok(Self {
            episodes: roar
                .episodes
                .iter()
                .map(|e| EpisodeLine {
                    final_wer: e.final_wer,
                    total_reward: e.total_reward,
                })
                .collect(),
            baselines: sweep
                .baselines
                .iter()
                .map(|b| (format!("{:.1}", b.beta), b.final_wer))
                .collect(),
            relative_improvement_pct: relative_improvement(best, last.final_wer),
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, e) in self.episodes.iter().enumerate() {
            writeln!(s, "episode {}: final_wer {:.4}  total_reward {:.4}", i + 1, e.final_wer, e.total_reward).unwrap();
        }
        for (beta, wer) in &self.baselines {
            writeln!(s, "fixed beta {beta}: final_wer {wer:.4}").unwrap();
        }
        writeln!(s, "relative improvement vs best fixed: {:.4}%", self.relative_improvement_pct).unwrap();
        s
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    serde_json::from_str(&text).map_err(|source| HarnessError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Load both reports from `dir`, checking that every file they reference exists.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let roar_path = dir.join(ROAR_REPORT);
    let sweep_path = dir.join(SWEEP_REPORT);
    let mut missing: Vec<String> = [ROAR_REPORT, SWEEP_REPORT]
        .into_iter()
        .filter(|f| !dir.join(f).is_file())
        .map(String::from)
        .collect();
    let roar: Option<RoarReport> = roar_path.is_file().then(|| read_json(&roar_path)).transpose()?;
    let sweep: Option<SweepReport> = sweep_path.is_file().then(|| read_json(&sweep_path)).transpose()?;

    let referenced = roar
        .iter()
        .flat_map(|r| r.episodes.iter().flat_map(|e| [e.schedule.clone(), e.checkpoint.clone()]))
        .chain(sweep.iter().flat_map(|s| s.baselines.iter().map(|b| b.schedule.clone())));
    missing.extend(referenced.filter(|f| !dir.join(f).is_file()));

    match (roar, sweep) {
        (Some(roar), Some(sweep)) if missing.is_empty() => Summary::from_reports(&roar, &sweep),
        _ => Err(HarnessError::IncompleteReport {
            dir: dir.to_path_buf(),
            missing,
        }),
    }
}
