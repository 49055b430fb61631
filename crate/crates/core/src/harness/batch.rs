use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::stats::{mean, median, quantile, sample_std};
use super::{run_trial_logged, EventLog, HarnessError, Mode, Scenario, TrialRecord};
use crate::perception::{evaluate_classifier, LabeledSample, MetricsTable};
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub mean: f64,
    pub median: f64,
    pub sample_std: f64,
}

impl TimingStats {
    pub fn of(v: &[f64]) -> Self {
        Self { mean: mean(v), median: median(v), sample_std: sample_std(v) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFlag {
    pub trial_id: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub trials: usize,
    pub navigation: TimingStats,
    pub puncture: TimingStats,
    pub success_rate: f64,
    pub metrics: MetricsTable,
    /// Trials above the upper Tukey fence. They stay in every statistic.
    pub outliers: Vec<OutlierFlag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub scenario: String,
    pub config_digest: String,
    pub master_seed: u64,
    pub n_trials: usize,
    pub modes: Vec<ModeSummary>,
    pub notes: Vec<String>,
    pub records: Vec<TrialRecord>,
}

const NOTES: [&str; 4] = [
    "puncture_s runs from the start of contact seeking to full retraction",
    "standard deviations use the n-1 (sample) estimator",
    "all trials are included in the statistics; outliers are flagged separately",
    "scripted-manual is a modeled keyboard operator, not a measurement of human performance",
];

/// Per-trial seed from the master seed; identical for every mode of a trial.
pub fn derive_trial_seed(master: u64, trial_id: u64) -> u64 {
    derive_seed(master, stream::TRIAL, trial_id)
}

/// Run `n_trials` trials in each mode on worker threads. Logs, when a
/// directory is given, are written as `trial<id>_<mode>.ndjson`.
pub fn run_batch(
    scenario: &Scenario,
    n_trials: usize,
    modes: &[Mode],
    master_seed: u64,
    log_dir: Option<&Path>,
) -> Result<BatchReport, HarnessError> {
    if n_trials == 0 {
        return Err(HarnessError::ScenarioInvalid("n_trials must be at least 1".into()));
    }
    scenario.validate()?;
    if let Some(d) = log_dir {
        std::fs::create_dir_all(d).map_err(|e| HarnessError::Io(e.to_string()))?;
    }
    let jobs: Vec<(u64, Mode)> = (0..n_trials as u64).flat_map(|i| modes.iter().map(move |&m| (i, m))).collect();
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len()).max(1);

    let mut results: Vec<(usize, Result<TrialRecord, HarnessError>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let jobs = &jobs;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for (k, &(id, mode)) in jobs.iter().enumerate().skip(w).step_by(workers) {
                        out.push((k, run_one(scenario, id, mode, master_seed, log_dir)));
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    results.sort_by_key(|(k, _)| *k);
    let mut records = Vec::with_capacity(results.len());
    for (k, r) in results {
        records.push(r.map_err(|e| HarnessError::Trial { trial_id: jobs[k].0, source: Box::new(e) })?);
    }
    Ok(BatchReport::from_records(&scenario.name, &scenario.digest(), master_seed, records))
}

fn run_one(
    scenario: &Scenario,
    id: u64,
    mode: Mode,
    master: u64,
    log_dir: Option<&Path>,
) -> Result<TrialRecord, HarnessError> {
    let seed = derive_trial_seed(master, id);
    match log_dir {
        None => run_trial_logged(scenario, mode, id, seed, None),
        Some(dir) => {
            let mut log = EventLog::default();
            let r = run_trial_logged(scenario, mode, id, seed, Some(&mut log))?;
            let path = dir.join(format!("trial{id:04}_{}.ndjson", mode.label()));
            std::fs::write(&path, log.to_ndjson()).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
            Ok(r)
        }
    }
}

impl BatchReport {
    /// Aggregate from records alone, so reports can be rebuilt from records.csv.
    pub fn from_records(scenario: &str, digest: &str, master_seed: u64, mut records: Vec<TrialRecord>) -> Self {
        records.sort_by_key(|r| (r.trial_id, r.mode));
        let mut modes: Vec<Mode> = records.iter().map(|r| r.mode).collect();
        modes.sort();
        modes.dedup();
        let summaries = modes.iter().map(|&m| summarize(m, &records)).collect();
        let n_trials = records.iter().map(|r| r.trial_id).collect::<std::collections::BTreeSet<_>>().len();
        BatchReport {
            scenario: scenario.to_string(),
            config_digest: digest.to_string(),
            master_seed,
            n_trials,
            modes: summaries,
            notes: NOTES.iter().map(|s| s.to_string()).collect(),
            records,
        }
    }

    pub fn mode(&self, mode: Mode) -> Option<&ModeSummary> {
        self.modes.iter().find(|s| s.mode == mode)
    }

    pub fn records_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r).map_err(|e| HarnessError::Records(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Records(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Records(e.to_string()))
    }

    /// Timing table: one block of Average / Median / Standard Deviation per mode.
    pub fn table_i_csv(&self) -> String {
        let mut s = String::from("Mode,Metric,Navigation Time (seconds),Puncture Time (seconds)\n");
        for m in &self.modes {
            let label = m.mode.label();
            let rows = [
                ("Average", m.navigation.mean, m.puncture.mean),
                ("Median", m.navigation.median, m.puncture.median),
                ("Standard Deviation", m.navigation.sample_std, m.puncture.sample_std),
            ];
            for (name, n, p) in rows {
                let _ = writeln!(s, "{label},{name},{n:.2},{p:.2}");
            }
        }
        s
    }

    /// Classification table for the autonomous mode, or the only mode present.
    pub fn table_ii_csv(&self) -> String {
        self.mode(Mode::Autonomous).or(self.modes.first()).map(|m| m.metrics.to_csv()).unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn summarize(mode: Mode, records: &[TrialRecord]) -> ModeSummary {
    let rs: Vec<&TrialRecord> = records.iter().filter(|r| r.mode == mode).collect();
    let nav: Vec<f64> = rs.iter().map(|r| r.navigation_s).collect();
    let pun: Vec<f64> = rs.iter().map(|r| r.puncture_s).collect();
    let samples: Vec<LabeledSample> = rs
        .iter()
        .map(|r| LabeledSample {
            frame_id: format!("trial{}", r.trial_id),
            true_label: r.ground_truth,
            predicted_label: r.verdict,
            confidence: 1.0,
        })
        .collect();
    let metrics = evaluate_classifier(&samples).unwrap_or_else(|_| MetricsTable::from_confusion(0, 0, 0, 0));
    let successes = rs.iter().filter(|r| r.ground_truth == 1).count();
    let mut outliers = Vec::new();
    for (name, v) in [("navigation_s", &nav), ("puncture_s", &pun)] {
        let fence = quantile(v, 0.75) + 1.5 * (quantile(v, 0.75) - quantile(v, 0.25));
        for (r, &x) in rs.iter().zip(v.iter()) {
            if x > fence {
                outliers.push(OutlierFlag { trial_id: r.trial_id, metric: name.to_string(), value: x });
            }
        }
    }
    ModeSummary {
        mode,
        trials: rs.len(),
        navigation: TimingStats::of(&nav),
        puncture: TimingStats::of(&pun),
        success_rate: if rs.is_empty() { 0.0 } else { successes as f64 / rs.len() as f64 },
        metrics,
        outliers,
    }
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Records(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: TrialRecord = row.map_err(|e| HarnessError::Records(e.to_string()))?;
        if !rec.is_consistent() {
            return Err(HarnessError::Records(format!("trial {}: outcome class disagrees with verdicts", rec.trial_id)));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Write records.csv, report.json, tableI.csv and tableII.csv into `dir`.
pub fn write_outputs(report: &BatchReport, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
    let files = [
        ("records.csv", report.records_csv()?),
        ("report.json", report.to_json()),
        ("tableI.csv", report.table_i_csv()),
        ("tableII.csv", report.table_ii_csv()),
    ];
    let mut paths = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
        paths.push(p);
    }
    Ok(paths)
}
