//! File formats: neighbourhood and plan definitions (JSON), session logs
//! (JSONL) and posthoc correction lists (JSON).

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{BoardGeometry, BuildingId, BuildingRef, MapConfiguration, Orientation, Placement, Violation};
use crate::plan::{AssessmentPlan, TrialDefinition, TrialKind, Waypoint, DEFAULT_PANORAMA_RATE_DEG_PER_S};
use crate::scoring::ScoreReport;
use crate::session::{
    BoardEvent, Correction, CorrectionSource, EventAction, EventId, EventLog, LoggedEvent, Participant, Phase,
};

pub const NEIGHBORHOOD_EXT: &str = ".neighborhood.json";
pub const SESSION_EXT: &str = ".session.jsonl";
pub const PLAN_FILE: &str = "plan.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionEndStatus {
    Complete,
    Aborted,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    SessionMeta {
        session_id: String,
        participant: Participant,
        plan: String,
        north_heading_deg: f64,
        m_max: usize,
        d_max: f64,
    },
    TrialStart {
        trial: usize,
        trial_kind: TrialKind,
        num_buildings: usize,
    },
    PhaseChange {
        trial: usize,
        phase: Phase,
        session_ms: u64,
    },
    BoardEvent {
        trial: usize,
        event_id: EventId,
        t_ms: u64,
        action: EventAction,
        building: BuildingRef,
        col: u32,
        row: u32,
        orientation: Option<Orientation>,
        rejected: bool,
    },
    Correction {
        trial: usize,
        event_id: EventId,
        building: BuildingId,
        source: CorrectionSource,
    },
    TrialScore(ScoreReport),
    SessionEnd {
        status: SessionEndStatus,
        session_ms: u64,
    },
}

impl LogRecord {
    pub fn board_event(trial: usize, logged: &LoggedEvent) -> Self {
        let e = &logged.event;
        LogRecord::BoardEvent {
            trial,
            event_id: e.event_id.clone(),
            t_ms: e.t_ms,
            action: e.action,
            building: e.building,
            col: e.col,
            row: e.row,
            orientation: e.orientation,
            rejected: logged.rejected,
        }
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: invalid neighbourhood: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation { path: PathBuf, violations: Vec<Violation> },
    #[error("{path}: invalid plan: {detail}")]
    Plan { path: PathBuf, detail: String },
    #[error("line {line}: unreadable record (last good line {last_good}): {detail}")]
    PartialRead { line: usize, last_good: usize, detail: String },
    #[error("line {line}: {detail}")]
    Record { line: usize, detail: String },
    #[error("session {session} is not fully scored: {detail}")]
    Pending { session: String, detail: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path) -> impl FnOnce(serde_json::Error) -> StorageError + '_ {
    move |source| StorageError::Parse { path: path.to_path_buf(), source }
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Neighbourhoods

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodFile {
    pub name: String,
    pub buildings: Vec<Placement>,
    pub tour: Vec<Waypoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<BoardGeometry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub name: String,
    pub target: MapConfiguration,
    pub tour: Vec<Waypoint>,
    pub geometry: BoardGeometry,
}

/// Loads and validates a neighbourhood. A geometry in the file overrides
/// `geometry`.
pub fn load_neighborhood(path: &Path, geometry: &BoardGeometry) -> Result<Neighborhood, StorageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: NeighborhoodFile = serde_json::from_str(&text).map_err(parse_err(path))?;
    let geometry = file.geometry.unwrap_or_else(|| geometry.clone());
    geometry.validate().map_err(|e| StorageError::Plan { path: path.to_path_buf(), detail: e.to_string() })?;
    let target = MapConfiguration::from_placements(file.buildings, &geometry)
        .map_err(|violations| StorageError::Validation { path: path.to_path_buf(), violations })?;
    Ok(Neighborhood { name: file.name, target, tour: file.tour, geometry })
}

pub fn write_neighborhood(
    path: &Path,
    name: &str,
    target: &MapConfiguration,
    tour: &[Waypoint],
) -> Result<(), StorageError> {
    let file = NeighborhoodFile {
        name: name.to_string(),
        buildings: target.placements().copied().collect(),
        tour: tour.to_vec(),
        geometry: None,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(parse_err(path))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

// ---------------------------------------------------------------------------
// Plans

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTrialEntry {
    pub index: usize,
    pub kind: TrialKind,
    pub neighborhood: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub name: String,
    #[serde(default)]
    pub geometry: BoardGeometry,
    #[serde(default)]
    pub north_heading_deg: f64,
    #[serde(default = "default_panorama_rate")]
    pub panorama_rate_deg_per_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    pub trials: Vec<PlanTrialEntry>,
}

fn default_panorama_rate() -> f64 {
    DEFAULT_PANORAMA_RATE_DEG_PER_S
}

/// Loads a plan from a `plan.json` file or a directory containing one.
/// Neighbourhood references are resolved relative to the plan file.
pub fn load_plan(path: &Path) -> Result<AssessmentPlan, StorageError> {
    let file_path = if path.is_dir() { path.join(PLAN_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file_path).map_err(io_err(&file_path))?;
    let file: PlanFile = serde_json::from_str(&text).map_err(parse_err(&file_path))?;
    let dir = file_path.parent().unwrap_or(Path::new("."));

    let mut trials = Vec::with_capacity(file.trials.len());
    for entry in &file.trials {
        let hood = load_neighborhood(&dir.join(&entry.neighborhood), &file.geometry)?;
        let initial = match &entry.initial {
            Some(rel) => load_neighborhood(&dir.join(rel), &file.geometry)?.target,
            None => MapConfiguration::new(),
        };
        trials.push(TrialDefinition {
            index: entry.index,
            kind: entry.kind,
            name: hood.name,
            target: hood.target,
            initial,
            tour: hood.tour,
        });
    }
    let plan = AssessmentPlan {
        name: file.name,
        geometry: file.geometry,
        north_heading_deg: file.north_heading_deg,
        panorama_rate_deg_per_s: file.panorama_rate_deg_per_s,
        trials,
    };
    plan.validate().map_err(|e| StorageError::Plan { path: file_path.clone(), detail: e.to_string() })?;
    if let Some(declared) = file.m_max {
        if declared != plan.m_max() {
            return Err(StorageError::Plan {
                path: file_path,
                detail: format!("declared m_max {declared} but largest recorded target has {}", plan.m_max()),
            });
        }
    }
    Ok(plan)
}

/// Writes `plan.json` and one neighbourhood file per trial into `dir`.
pub fn write_plan(plan: &AssessmentPlan, dir: &Path) -> Result<PathBuf, StorageError> {
    let file_name = |t: &TrialDefinition| format!("{}{NEIGHBORHOOD_EXT}", t.name);
    let mut entries = Vec::new();
    for t in &plan.trials {
        write_neighborhood(&dir.join(file_name(t)), &t.name, &t.target, &t.tour)?;
        let initial = if t.initial.is_empty() {
            None
        } else if let Some(same) = plan.trials.iter().find(|o| o.target == t.initial) {
            Some(file_name(same))
        } else {
            let name = format!("{}-initial", t.name);
            write_neighborhood(&dir.join(format!("{name}{NEIGHBORHOOD_EXT}")), &name, &t.initial, &t.tour)?;
            Some(format!("{name}{NEIGHBORHOOD_EXT}"))
        };
        entries.push(PlanTrialEntry { index: t.index, kind: t.kind, neighborhood: file_name(t), initial });
    }
    let file = PlanFile {
        name: plan.name.clone(),
        geometry: plan.geometry.clone(),
        north_heading_deg: plan.north_heading_deg,
        panorama_rate_deg_per_s: plan.panorama_rate_deg_per_s,
        m_max: Some(plan.m_max()),
        trials: entries,
    };
    let path = dir.join(PLAN_FILE);
    let mut text = serde_json::to_string_pretty(&file).map_err(parse_err(&path))?;
    text.push('\n');
    write_bytes(&path, text.as_bytes())?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Session logs

/// Serialises one record as a JSONL line, newline included.
pub fn encode_record(record: &LogRecord) -> String {
    let mut line = serde_json::to_string(record).expect("log records always serialise");
    line.push('\n');
    line
}

pub fn encode_records(records: &[LogRecord]) -> String {
    records.iter().map(encode_record).collect()
}

pub fn write_log(path: &Path, records: &[LogRecord]) -> Result<(), StorageError> {
    write_bytes(path, encode_records(records).as_bytes())
}

/// Appends records to a log as they are produced.
pub struct LogAppender {
    path: PathBuf,
    file: fs::File,
    written: usize,
}

impl LogAppender {
    pub fn create(path: &Path) -> Result<Self, StorageError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = fs::File::create(path).map_err(io_err(path))?;
        Ok(Self { path: path.to_path_buf(), file, written: 0 })
    }

    /// Writes the records of `journal` not yet written.
    pub fn sync(&mut self, journal: &[LogRecord]) -> Result<(), StorageError> {
        if journal.len() <= self.written {
            return Ok(());
        }
        let chunk = encode_records(&journal[self.written..]);
        self.file.write_all(chunk.as_bytes()).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.written = journal.len();
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parses JSONL text. Line numbers in errors are 1-based.
pub fn decode_records(reader: impl BufRead) -> Result<Vec<LogRecord>, StorageError> {
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line =
            line.map_err(|e| StorageError::PartialRead { line: line_no, last_good: i, detail: e.to_string() })?;
        let record = serde_json::from_str(&line).map_err(|e| StorageError::PartialRead {
            line: line_no,
            last_good: i,
            detail: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, StorageError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    decode_records(BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionMeta {
    pub session_id: String,
    pub participant: Participant,
    pub plan: String,
    pub north_heading_deg: f64,
    pub m_max: usize,
    pub d_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialHistory {
    pub index: usize,
    pub kind: TrialKind,
    pub num_buildings: usize,
    pub viewing_ms: Option<u64>,
    pub log: EventLog,
    pub report: Option<ScoreReport>,
}

impl TrialHistory {
    pub fn is_closed(&self) -> bool {
        self.log.done_ms.is_some()
    }
}

/// A session log folded back into per-trial event logs.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionHistory {
    pub meta: SessionMeta,
    pub trials: Vec<TrialHistory>,
    pub end: Option<(SessionEndStatus, u64)>,
}

impl SessionHistory {
    pub fn from_records(records: &[LogRecord]) -> Result<Self, StorageError> {
        let bad = |line: usize, detail: String| StorageError::Record { line, detail };
        let mut iter = records.iter().enumerate().map(|(i, r)| (i + 1, r));
        let meta = match iter.next() {
            Some((_, LogRecord::SessionMeta { session_id, participant, plan, north_heading_deg, m_max, d_max })) => {
                SessionMeta {
                    session_id: session_id.clone(),
                    participant: participant.clone(),
                    plan: plan.clone(),
                    north_heading_deg: *north_heading_deg,
                    m_max: *m_max,
                    d_max: *d_max,
                }
            }
            Some((line, _)) => return Err(bad(line, "first record must be session_meta".into())),
            None => return Err(bad(1, "empty log".into())),
        };

        let mut history = SessionHistory { meta, trials: Vec::new(), end: None };
        for (line, record) in iter {
            if history.end.is_some() {
                return Err(bad(line, "record after session_end".into()));
            }
            fn current(h: &mut SessionHistory, trial: usize, line: usize) -> Result<&mut TrialHistory, StorageError> {
                match h.trials.last_mut() {
                    Some(t) if t.index == trial => Ok(t),
                    _ => Err(StorageError::Record {
                        line,
                        detail: format!("record for trial {trial} outside that trial"),
                    }),
                }
            }
            match record {
                LogRecord::SessionMeta { .. } => return Err(bad(line, "duplicate session_meta".into())),
                LogRecord::TrialStart { trial, trial_kind, num_buildings } => history.trials.push(TrialHistory {
                    index: *trial,
                    kind: *trial_kind,
                    num_buildings: *num_buildings,
                    viewing_ms: None,
                    log: EventLog::new(*trial),
                    report: None,
                }),
                LogRecord::PhaseChange { trial, phase, session_ms } => {
                    let t = current(&mut history, *trial, line)?;
                    match phase {
                        Phase::Viewing => t.viewing_ms = Some(*session_ms),
                        Phase::Construction => t.log.construction_start_ms = Some(*session_ms),
                        Phase::Done => t.log.done_ms = Some(*session_ms),
                        other => return Err(bad(line, format!("phase {other} is not persisted"))),
                    }
                }
                LogRecord::BoardEvent { trial, event_id, t_ms, action, building, col, row, orientation, rejected } => {
                    let t = current(&mut history, *trial, line)?;
                    let event = BoardEvent {
                        event_id: event_id.clone(),
                        t_ms: *t_ms,
                        action: *action,
                        building: *building,
                        col: *col,
                        row: *row,
                        orientation: *orientation,
                    };
                    t.log.push(LoggedEvent { event, rejected: *rejected }).map_err(|e| bad(line, e.to_string()))?;
                }
                LogRecord::Correction { trial, event_id, building, source } => {
                    let t = current(&mut history, *trial, line)?;
                    t.log
                        .push_correction(Correction {
                            event_id: event_id.clone(),
                            building: *building,
                            source: *source,
                        })
                        .map_err(|e| bad(line, e.to_string()))?;
                }
                LogRecord::TrialScore(report) => {
                    current(&mut history, report.trial, line)?.report = Some(*report);
                }
                LogRecord::SessionEnd { status, session_ms } => history.end = Some((*status, *session_ms)),
            }
        }
        Ok(history)
    }

    pub fn trial(&self, index: usize) -> Option<&TrialHistory> {
        self.trials.iter().find(|t| t.index == index)
    }
}

// ---------------------------------------------------------------------------
// Posthoc corrections

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCorrection {
    pub trial: usize,
    #[serde(flatten)]
    pub correction: Correction,
}

pub fn read_corrections(path: &Path) -> Result<Vec<TrialCorrection>, StorageError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(parse_err(path))
}

pub fn write_corrections(path: &Path, corrections: &[TrialCorrection]) -> Result<(), StorageError> {
    let mut text = serde_json::to_string_pretty(corrections).map_err(parse_err(path))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}
