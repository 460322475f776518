//! Rescoring of session logs and analysis exports.
//!
//! Exports hold three tables: one row per scored trial, a per-group,
//! per-map-size summary (mean and standard error of every metric), and the
//! similarity-over-time series of every trial.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::map_model::MapConfiguration;
use crate::plan::AssessmentPlan;
use crate::scoring::{score_trial, ScoreError, ScoreReport, Timeline};
use crate::session::{apply_posthoc_corrections, AgeGroup, Correction};
use crate::storage::{write_bytes, SessionHistory, StorageError, TrialCorrection};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredTrial {
    pub index: usize,
    pub num_buildings: usize,
    pub report: ScoreReport,
    pub timeline: Timeline,
    pub final_board: MapConfiguration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSession {
    pub session_id: String,
    pub participant: String,
    pub group: AgeGroup,
    pub trials: Vec<ScoredTrial>,
}

#[derive(Debug, thiserror::Error)]
pub enum RescoreError {
    #[error("trial {0} is not in the plan or is not a recorded trial")]
    NotInPlan(usize),
    #[error("trial {trial}: log says {logged} buildings, plan says {planned}")]
    SizeMismatch { trial: usize, logged: usize, planned: usize },
    #[error("trial {0} was never closed")]
    NotClosed(usize),
    #[error("trial {trial}: {source}")]
    Score { trial: usize, source: ScoreError },
    #[error("trial {trial}: {source}")]
    Correction { trial: usize, source: crate::session::SessionError },
}

impl RescoreError {
    /// Unresolved event ids, when that is the cause.
    pub fn pending_events(&self) -> Option<Vec<String>> {
        match self {
            RescoreError::Score { source: ScoreError::Unresolved(ids), .. } => {
                Some(ids.iter().map(|i| i.to_string()).collect())
            }
            _ => None,
        }
    }
}

/// Scores every recorded trial of a session log against the plan, after
/// applying posthoc `corrections`.
pub fn rescore_session(
    history: &SessionHistory,
    plan: &AssessmentPlan,
    corrections: &[TrialCorrection],
) -> Result<ScoredSession, RescoreError> {
    let params = plan.metric_params().map_err(|source| RescoreError::Score { trial: 0, source })?;
    let mut trials = Vec::new();
    for t in history.trials.iter().filter(|t| t.kind.is_recorded()) {
        let def = plan.trial(t.index).filter(|d| d.kind.is_recorded()).ok_or(RescoreError::NotInPlan(t.index))?;
        if def.num_buildings() != t.num_buildings {
            return Err(RescoreError::SizeMismatch {
                trial: t.index,
                logged: t.num_buildings,
                planned: def.num_buildings(),
            });
        }
        if !t.is_closed() {
            return Err(RescoreError::NotClosed(t.index));
        }
        let mine: Vec<Correction> =
            corrections.iter().filter(|c| c.trial == t.index).map(|c| c.correction.clone()).collect();
        let log = apply_posthoc_corrections(&t.log, &mine, &def.initial, &plan.geometry)
            .map_err(|source| RescoreError::Correction { trial: t.index, source })?;
        let score = |source| RescoreError::Score { trial: t.index, source };
        let (report, timeline) =
            score_trial(t.index, &log, &def.target, &def.initial, &plan.geometry, &params).map_err(score)?;
        let final_board = log.replay(&def.initial, &plan.geometry).map_err(|e| score(e.into()))?;
        trials.push(ScoredTrial { index: t.index, num_buildings: t.num_buildings, report, timeline, final_board });
    }
    Ok(ScoredSession {
        session_id: history.meta.session_id.clone(),
        participant: history.meta.participant.id.clone(),
        group: history.meta.participant.group,
        trials,
    })
}

/// Sample mean and standard error (n − 1 denominator). A single value has
/// standard error 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> Option<MeanSe> {
    if values.is_empty() {
        return None;
    }
    // Welford's running mean and sum of squared deviations.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    let n = values.len();
    let se = if n < 2 { 0.0 } else { (m2 / (n - 1) as f64).sqrt() / (n as f64).sqrt() };
    Some(MeanSe { n, mean, se })
}

pub const METRICS: [&str; 8] =
    ["number", "difference", "distance", "orient", "interbuilding", "similarity", "totalTime_s", "dSim_per_s"];

fn metric_value(report: &ScoreReport, metric: &str) -> Option<f64> {
    match metric {
        "number" => report.number,
        "difference" => Some(report.difference),
        "distance" => Some(report.distance),
        "orient" => Some(report.orient),
        "interbuilding" => Some(report.interbuilding),
        "similarity" => Some(report.similarity),
        "totalTime_s" => Some(report.total_time_s),
        "dSim_per_s" => report.d_sim_per_s,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub session_id: String,
    pub participant: String,
    pub group: AgeGroup,
    pub num_buildings: usize,
    pub trial: usize,
    pub number: Option<f64>,
    pub difference: f64,
    pub distance: f64,
    pub orient: f64,
    pub interbuilding: f64,
    pub similarity: f64,
    #[serde(rename = "totalTime_s")]
    pub total_time_s: f64,
    #[serde(rename = "dSim_per_s")]
    pub d_sim_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub group: AgeGroup,
    pub num_buildings: usize,
    pub metric: String,
    pub n: usize,
    pub mean: Option<f64>,
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub session_id: String,
    pub participant: String,
    pub group: AgeGroup,
    pub trial: usize,
    pub t_s: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub trials: Vec<TrialRow>,
    pub summary: Vec<SummaryRow>,
    pub timelines: Vec<TimelineRow>,
}

impl AnalysisReport {
    pub fn build(sessions: &[ScoredSession]) -> Self {
        let mut report = AnalysisReport::default();
        let mut groups: BTreeMap<(AgeGroup, usize), Vec<&ScoreReport>> = BTreeMap::new();
        for s in sessions {
            for t in &s.trials {
                let r = &t.report;
                report.trials.push(TrialRow {
                    session_id: s.session_id.clone(),
                    participant: s.participant.clone(),
                    group: s.group,
                    num_buildings: t.num_buildings,
                    trial: r.trial,
                    number: r.number,
                    difference: r.difference,
                    distance: r.distance,
                    orient: r.orient,
                    interbuilding: r.interbuilding,
                    similarity: r.similarity,
                    total_time_s: r.total_time_s,
                    d_sim_per_s: r.d_sim_per_s,
                });
                groups.entry((s.group, t.num_buildings)).or_default().push(r);
                report.timelines.extend(t.timeline.samples.iter().map(|sample| TimelineRow {
                    session_id: s.session_id.clone(),
                    participant: s.participant.clone(),
                    group: s.group,
                    trial: r.trial,
                    t_s: sample.t_s,
                    similarity: sample.similarity,
                }));
            }
        }
        for ((group, num_buildings), reports) in groups {
            for metric in METRICS {
                let values: Vec<f64> = reports.iter().filter_map(|r| metric_value(r, metric)).collect();
                let stats = mean_se(&values);
                report.summary.push(SummaryRow {
                    group,
                    num_buildings,
                    metric: metric.to_string(),
                    n: values.len(),
                    mean: stats.map(|s| s.mean),
                    se: stats.map(|s| s.se),
                });
            }
        }
        report
    }

    pub fn summary_for(&self, group: AgeGroup, num_buildings: usize, metric: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.group == group && r.num_buildings == num_buildings && r.metric == metric)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Json,
    Csv,
}

/// Paths of the three CSV tables for a `*.report.csv` path.
pub fn csv_paths(path: &Path) -> [PathBuf; 3] {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let stem = name.strip_suffix(".report.csv").or_else(|| name.strip_suffix(".csv")).unwrap_or(name);
    let sibling = |suffix: &str| path.with_file_name(format!("{stem}{suffix}"));
    [path.to_path_buf(), sibling(".summary.csv"), sibling(".timelines.csv")]
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>, StorageError> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        writer.write_record(header)?;
    }
    for row in rows {
        writer.serialize(row)?;
    }
    writer.into_inner().map_err(|e| StorageError::Csv(e.into_error().into()))
}

const TRIAL_HEADER: [&str; 13] = [
    "session_id",
    "participant",
    "group",
    "num_buildings",
    "trial",
    "number",
    "difference",
    "distance",
    "orient",
    "interbuilding",
    "similarity",
    "totalTime_s",
    "dSim_per_s",
];
const SUMMARY_HEADER: [&str; 6] = ["group", "num_buildings", "metric", "n", "mean", "se"];
const TIMELINE_HEADER: [&str; 6] = ["session_id", "participant", "group", "trial", "t_s", "similarity"];

/// Writes the analysis of `sessions`. CSV output writes three files (see
/// [`csv_paths`]); returns the paths written.
pub fn export_report(
    sessions: &[ScoredSession],
    path: &Path,
    format: ExportFormat,
) -> Result<Vec<PathBuf>, StorageError> {
    let report = AnalysisReport::build(sessions);
    match format {
        ExportFormat::Json => {
            let mut text = serde_json::to_string_pretty(&report)
                .map_err(|source| StorageError::Parse { path: path.to_path_buf(), source })?;
            text.push('\n');
            write_bytes(path, text.as_bytes())?;
            Ok(vec![path.to_path_buf()])
        }
        ExportFormat::Csv => {
            let paths = csv_paths(path);
            write_bytes(&paths[0], &to_csv(&report.trials, &TRIAL_HEADER)?)?;
            write_bytes(&paths[1], &to_csv(&report.summary, &SUMMARY_HEADER)?)?;
            write_bytes(&paths[2], &to_csv(&report.timelines, &TIMELINE_HEADER)?)?;
            Ok(paths.to_vec())
        }
    }
}

/// Rescores every history, failing on the first session that cannot be
/// fully scored.
pub fn rescore_all(
    histories: &[(SessionHistory, Vec<TrialCorrection>)],
    plan: &AssessmentPlan,
) -> Result<Vec<ScoredSession>, StorageError> {
    histories
        .iter()
        .map(|(h, c)| {
            rescore_session(h, plan, c)
                .map_err(|e| StorageError::Pending { session: h.meta.session_id.clone(), detail: e.to_string() })
        })
        .collect()
}
