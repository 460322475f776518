//! Trial protocol state machine and board event logs.
//!
//! A [`Session`] walks the trials of an [`AssessmentPlan`] in order. Each
//! trial moves through viewing, construction and done; nothing moves
//! backwards. Board events are appended to the trial's [`EventLog`] and never
//! modified afterwards: assessor corrections are stored beside the events
//! and applied when the log is read.
//!
//! Every state change is also written to an append-only journal of
//! [`LogRecord`]s, which is what gets persisted.
//!
//! Times passed into session operations are milliseconds on the engine's
//! session clock. Event timestamps are relative to the start of the
//! trial's construction phase.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::map_model::{
    check_free, BoardAction, BoardGeometry, BuildingId, BuildingRef, MapConfiguration, MapError, OccupancyCause,
    Orientation, Placement, Slot,
};
use crate::plan::{AssessmentPlan, PlanError, TrialDefinition, Waypoint};
use crate::scoring::{score_trial, ScoreError, ScoreReport};
use crate::storage::{LogRecord, SessionEndStatus};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EventId(String);

impl EventId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    /// Engine-assigned id for the `seq`-th event (1-based) of a trial.
    pub fn for_trial(trial: usize, seq: usize) -> Self {
        Self(format!("T{trial:02}-E{seq:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EventId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventAction {
    Place,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardEvent {
    pub event_id: EventId,
    pub t_ms: u64,
    pub action: EventAction,
    pub building: BuildingRef,
    pub col: u32,
    pub row: u32,
    /// Present on place events only.
    pub orientation: Option<Orientation>,
}

impl BoardEvent {
    pub fn place(
        event_id: EventId,
        t_ms: u64,
        building: impl Into<BuildingRef>,
        slot: Slot,
        orientation: Orientation,
    ) -> Self {
        Self {
            event_id,
            t_ms,
            action: EventAction::Place,
            building: building.into(),
            col: slot.col,
            row: slot.row,
            orientation: Some(orientation),
        }
    }

    pub fn remove(event_id: EventId, t_ms: u64, building: impl Into<BuildingRef>, slot: Slot) -> Self {
        Self {
            event_id,
            t_ms,
            action: EventAction::Remove,
            building: building.into(),
            col: slot.col,
            row: slot.row,
            orientation: None,
        }
    }

    pub fn slot(&self) -> Slot {
        Slot::new(self.col, self.row)
    }

    fn check_shape(&self) -> Result<(), SessionError> {
        match (self.action, self.orientation) {
            (EventAction::Place, None) => Err(SessionError::MalformedEvent("place without orientation".into())),
            (EventAction::Remove, Some(_)) => {
                Err(SessionError::MalformedEvent("remove must not carry an orientation".into()))
            }
            _ => Ok(()),
        }
    }

    fn as_action(&self, building: BuildingId) -> BoardAction {
        match self.action {
            EventAction::Place => {
                BoardAction::Place(Placement::new(building, self.slot(), self.orientation.unwrap_or_default()))
            }
            EventAction::Remove => BoardAction::Remove { building, slot: self.slot() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedEvent {
    pub event: BoardEvent,
    /// Set when the action was invalid against the board at capture time.
    /// Rejected events are kept but skipped by replay.
    pub rejected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrectionSource {
    Interactive,
    Posthoc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub event_id: EventId,
    pub building: BuildingId,
    pub source: CorrectionSource,
}

/// The board record of one trial.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EventLog {
    pub trial: usize,
    /// Session-clock time at which construction began.
    pub construction_start_ms: Option<u64>,
    /// Session-clock time of the participant's done signal.
    pub done_ms: Option<u64>,
    events: Vec<LoggedEvent>,
    corrections: Vec<Correction>,
}

impl EventLog {
    pub fn new(trial: usize) -> Self {
        Self { trial, ..Self::default() }
    }

    pub fn events(&self) -> &[LoggedEvent] {
        &self.events
    }

    pub fn corrections(&self) -> &[Correction] {
        &self.corrections
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Overwrites the captured identity of event `i`.
    pub(crate) fn replace_building(&mut self, i: usize, building: BuildingRef) {
        self.events[i].event.building = building;
    }

    pub fn last_t_ms(&self) -> Option<u64> {
        self.events.last().map(|e| e.event.t_ms)
    }

    /// Appends an event. Timestamps must be nondecreasing and ids unique.
    pub fn push(&mut self, logged: LoggedEvent) -> Result<(), SessionError> {
        if let Some(last) = self.last_t_ms() {
            if logged.event.t_ms < last {
                return Err(SessionError::Clock { last_ms: last, now_ms: logged.event.t_ms });
            }
        }
        if self.position(&logged.event.event_id).is_some() {
            return Err(SessionError::DuplicateEventId(logged.event.event_id));
        }
        self.events.push(logged);
        Ok(())
    }

    /// Appends a correction annotation for an existing event.
    pub fn push_correction(&mut self, correction: Correction) -> Result<(), SessionError> {
        if self.position(&correction.event_id).is_none() {
            return Err(SessionError::UnknownEvent(correction.event_id));
        }
        self.corrections.push(correction);
        Ok(())
    }

    pub fn position(&self, id: &EventId) -> Option<usize> {
        self.events.iter().position(|e| &e.event.event_id == id)
    }

    /// Building identity of event `idx` after corrections (latest wins).
    pub fn effective_building(&self, idx: usize) -> BuildingRef {
        let event = &self.events[idx].event;
        self.corrections
            .iter()
            .rev()
            .find(|c| c.event_id == event.event_id)
            .map(|c| BuildingRef::Known(c.building))
            .unwrap_or(event.building)
    }

    /// Non-rejected events whose identity is still unknown.
    pub fn pending(&self) -> Vec<EventId> {
        (0..self.events.len())
            .filter(|&i| !self.events[i].rejected && self.effective_building(i).is_unknown())
            .map(|i| self.events[i].event.event_id.clone())
            .collect()
    }

    /// Replays the first `k` events from `initial`.
    pub fn replay_prefix(
        &self,
        initial: &MapConfiguration,
        geometry: &BoardGeometry,
        k: usize,
    ) -> Result<MapConfiguration, ReplayError> {
        let mut config = initial.clone();
        let k = k.min(self.events.len());
        let pending: Vec<EventId> = (0..k)
            .filter(|&i| !self.events[i].rejected && self.effective_building(i).is_unknown())
            .map(|i| self.events[i].event.event_id.clone())
            .collect();
        if !pending.is_empty() {
            return Err(ReplayError::Unresolved(pending));
        }
        for i in 0..k {
            self.apply_at(i, &mut config, geometry)?;
        }
        Ok(config)
    }

    pub fn replay(
        &self,
        initial: &MapConfiguration,
        geometry: &BoardGeometry,
    ) -> Result<MapConfiguration, ReplayError> {
        self.replay_prefix(initial, geometry, self.events.len())
    }

    /// Board state after every applied event, with the event time.
    pub fn replay_states(
        &self,
        initial: &MapConfiguration,
        geometry: &BoardGeometry,
    ) -> Result<Vec<(u64, MapConfiguration)>, ReplayError> {
        let pending = self.pending();
        if !pending.is_empty() {
            return Err(ReplayError::Unresolved(pending));
        }
        let mut config = initial.clone();
        let mut states = Vec::new();
        for i in 0..self.events.len() {
            if self.apply_at(i, &mut config, geometry)? {
                states.push((self.events[i].event.t_ms, config.clone()));
            }
        }
        Ok(states)
    }

    /// Applies event `i` if it is not rejected. Returns whether it applied.
    fn apply_at(&self, i: usize, config: &mut MapConfiguration, geometry: &BoardGeometry) -> Result<bool, ReplayError> {
        let logged = &self.events[i];
        if logged.rejected {
            return Ok(false);
        }
        let Some(building) = self.effective_building(i).known() else {
            return Err(ReplayError::Unresolved(vec![logged.event.event_id.clone()]));
        };
        config
            .apply(&logged.event.as_action(building), geometry)
            .map_err(|source| ReplayError::Invalid { event_id: logged.event.event_id.clone(), source })?;
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("unresolved events: {0:?}")]
    Unresolved(Vec<EventId>),
    #[error("event {event_id} cannot be applied: {source}")]
    Invalid { event_id: EventId, source: MapError },
}

/// Board state while some buildings may still be unidentified. An unknown
/// placement occupies its slot; removals may name the slot's unknown
/// occupant.
#[derive(Debug, Clone, Default)]
struct ProvisionalBoard {
    known: MapConfiguration,
    unknown: BTreeSet<Slot>,
}

impl ProvisionalBoard {
    fn new(initial: &MapConfiguration) -> Self {
        Self { known: initial.clone(), unknown: BTreeSet::new() }
    }

    fn rebuild(
        initial: &MapConfiguration,
        log: &EventLog,
        geometry: &BoardGeometry,
    ) -> Result<Self, (EventId, MapError)> {
        let mut board = Self::new(initial);
        for (i, logged) in log.events.iter().enumerate() {
            if logged.rejected {
                continue;
            }
            board
                .apply(&logged.event, log.effective_building(i), geometry)
                .map_err(|e| (logged.event.event_id.clone(), e))?;
        }
        Ok(board)
    }

    fn occupant_check(&self, geometry: &BoardGeometry, slot: Slot) -> Result<(), MapError> {
        if self.unknown.contains(&slot) {
            return Err(MapError::Occupancy { slot, cause: OccupancyCause::Unidentified });
        }
        check_free(geometry, slot, |s| self.known.occupant(s))
    }

    fn apply(&mut self, event: &BoardEvent, building: BuildingRef, geometry: &BoardGeometry) -> Result<(), MapError> {
        let slot = event.slot();
        match (event.action, building) {
            (EventAction::Place, BuildingRef::Known(id)) => {
                if self.known.contains(id) {
                    return Err(MapError::Duplicate(id));
                }
                self.occupant_check(geometry, slot)?;
                self.known.apply(&event.as_action(id), geometry)
            }
            (EventAction::Place, BuildingRef::Unknown) => {
                self.occupant_check(geometry, slot)?;
                self.unknown.insert(slot);
                Ok(())
            }
            (EventAction::Remove, BuildingRef::Known(id)) => {
                if self.known.contains(id) {
                    self.known.apply(&event.as_action(id), geometry)
                } else if self.unknown.remove(&slot) {
                    Ok(())
                } else {
                    Err(MapError::Absent(id))
                }
            }
            (EventAction::Remove, BuildingRef::Unknown) => {
                if let Some(id) = self.known.occupant(slot) {
                    self.known.apply(&BoardAction::Remove { building: id, slot }, geometry)
                } else if self.unknown.remove(&slot) {
                    Ok(())
                } else {
                    Err(MapError::EmptySlot(slot))
                }
            }
        }
    }
}

/// Physical board contents as mirrored by clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardSnapshot {
    pub placements: Vec<Placement>,
    pub unidentified: Vec<Slot>,
}

impl BoardSnapshot {
    /// One `B03@4,7:90` item per identified building in id order, then one
    /// `?@col,row` per unidentified slot in (col, row) order, joined by `;`.
    pub fn canonical(&self) -> String {
        let mut items: Vec<String> = self
            .placements
            .iter()
            .map(|p| format!("{}@{},{}:{}", p.building, p.col, p.row, p.orientation.degrees()))
            .collect();
        items.extend(self.unidentified.iter().map(|s| format!("?@{},{}", s.col, s.row)));
        items.join(";")
    }

    /// Lowercase hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

/// Returns a copy of `log` with the building ids of the referenced events
/// replaced.
///
/// A correction asserts what physically happened, so a corrected event that
/// would not apply is a replay error. Rejection flags of the other events
/// are re-derived against the corrected sequence.
pub fn apply_posthoc_corrections(
    log: &EventLog,
    corrections: &[Correction],
    initial: &MapConfiguration,
    geometry: &BoardGeometry,
) -> Result<EventLog, SessionError> {
    if corrections.is_empty() {
        return Ok(log.clone());
    }
    let mut corrected = log.clone();
    let mut touched = BTreeSet::new();
    for c in corrections {
        let idx = corrected.position(&c.event_id).ok_or_else(|| SessionError::UnknownEvent(c.event_id.clone()))?;
        corrected.events[idx].event.building = BuildingRef::Known(c.building);
        touched.insert(idx);
    }
    // Interactive annotations on a substituted event no longer apply.
    corrected.corrections.retain(|c| !corrections.iter().any(|p| p.event_id == c.event_id));

    let mut board = ProvisionalBoard::new(initial);
    for i in 0..corrected.events.len() {
        let building = corrected.effective_building(i);
        let event = corrected.events[i].event.clone();
        match board.apply(&event, building, geometry) {
            Ok(()) => corrected.events[i].rejected = false,
            Err(source) if touched.contains(&i) => {
                return Err(SessionError::Replay(ReplayError::Invalid { event_id: event.event_id, source }));
            }
            Err(_) => corrected.events[i].rejected = true,
        }
    }
    Ok(corrected)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgeGroup {
    Young,
    Elderly,
}

impl fmt::Display for AgeGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgeGroup::Young => "young",
            AgeGroup::Elderly => "elderly",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    /// Anonymised identifier.
    pub id: String,
    pub group: AgeGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ViewingPending,
    Viewing,
    ViewingComplete,
    Construction,
    Done,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::ViewingPending => "viewing_pending",
            Phase::Viewing => "viewing",
            Phase::ViewingComplete => "viewing_complete",
            Phase::Construction => "construction",
            Phase::Done => "done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Complete,
    Aborted,
}

/// What the display client needs to play a trial's viewing phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourStream {
    pub trial: usize,
    pub waypoints: Vec<Waypoint>,
    pub north_heading_deg: f64,
    pub panorama_rate_deg_per_s: f64,
}

/// A 360° rotation in place, after which the tour resumes at `waypoint`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Panorama {
    pub waypoint: usize,
    pub start_heading_deg: f64,
    pub sweep_deg: f64,
    pub rate_deg_per_s: f64,
}

impl Panorama {
    pub fn duration_s(&self) -> f64 {
        self.sweep_deg / self.rate_deg_per_s
    }
}

/// A board event as submitted by a client. Any client timestamp is
/// advisory; the engine clock stamps accepted events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSubmission {
    pub action: EventAction,
    pub building: BuildingRef,
    pub col: u32,
    pub row: u32,
    pub orientation: Option<Orientation>,
}

impl EventSubmission {
    pub fn place(building: impl Into<BuildingRef>, slot: Slot, orientation: Orientation) -> Self {
        Self {
            action: EventAction::Place,
            building: building.into(),
            col: slot.col,
            row: slot.row,
            orientation: Some(orientation),
        }
    }

    pub fn remove(building: impl Into<BuildingRef>, slot: Slot) -> Self {
        Self { action: EventAction::Remove, building: building.into(), col: slot.col, row: slot.row, orientation: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventStatus {
    Accepted,
    /// Logged with an unknown building; an assessor correction is required.
    FlaggedUnidentified,
    /// Logged with the rejected flag.
    Rejected(MapError),
}

impl EventStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventStatus::Accepted => "accepted",
            EventStatus::FlaggedUnidentified => "flagged",
            EventStatus::Rejected(_) => "rejected",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventAck {
    pub event_id: EventId,
    pub status: EventStatus,
}

#[derive(Debug, Clone)]
struct TrialState {
    phase: Phase,
    paused_at: Option<usize>,
    log: EventLog,
    board: ProvisionalBoard,
}

/// Per-trial results kept by the session.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedTrial {
    pub log: EventLog,
    pub report: Option<ScoreReport>,
}

#[derive(Debug, Clone)]
pub struct Session {
    id: String,
    participant: Participant,
    plan: AssessmentPlan,
    status: SessionStatus,
    cursor: usize,
    current: TrialState,
    closed: Vec<ClosedTrial>,
    journal: Vec<LogRecord>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn participant(&self) -> &Participant {
        &self.participant
    }

    pub fn plan(&self) -> &AssessmentPlan {
        &self.plan
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn phase(&self) -> Phase {
        self.current.phase
    }

    pub fn current_trial(&self) -> &TrialDefinition {
        &self.plan.trials[self.cursor]
    }

    pub fn trial_position(&self) -> usize {
        self.cursor
    }

    /// Log of the active (or last) trial.
    pub fn current_log(&self) -> &EventLog {
        &self.current.log
    }

    pub fn closed_trials(&self) -> &[ClosedTrial] {
        &self.closed
    }

    pub fn reports(&self) -> impl Iterator<Item = &ScoreReport> {
        self.closed.iter().filter_map(|t| t.report.as_ref())
    }

    /// Every record written so far, in order.
    pub fn journal(&self) -> &[LogRecord] {
        &self.journal
    }

    pub fn pending_corrections(&self) -> Vec<EventId> {
        self.current.log.pending()
    }

    /// Identified buildings currently on the board.
    pub fn board(&self) -> &MapConfiguration {
        &self.current.board.known
    }

    /// Everything physically on the board, including unidentified pieces.
    pub fn board_snapshot(&self) -> BoardSnapshot {
        BoardSnapshot {
            placements: self.current.board.known.placements().copied().collect(),
            unidentified: self.current.board.unknown.iter().copied().collect(),
        }
    }

    fn ensure_active(&self) -> Result<(), SessionError> {
        match self.status {
            SessionStatus::Active => Ok(()),
            status => Err(SessionError::Ended(status)),
        }
    }

    fn ensure_phase(&self, op: &'static str, expected: Phase) -> Result<(), SessionError> {
        self.ensure_active()?;
        if self.current.phase != expected {
            return Err(SessionError::Phase { op, phase: self.current.phase });
        }
        Ok(())
    }

    fn trial_index(&self) -> usize {
        self.current_trial().index
    }

    fn fresh_trial(trial: &TrialDefinition) -> TrialState {
        TrialState {
            phase: Phase::ViewingPending,
            paused_at: None,
            log: EventLog::new(trial.index),
            board: ProvisionalBoard::new(&trial.initial),
        }
    }

    fn trial_start_record(trial: &TrialDefinition) -> LogRecord {
        LogRecord::TrialStart { trial: trial.index, trial_kind: trial.kind, num_buildings: trial.num_buildings() }
    }

    fn phase_record(&self, phase: Phase, session_ms: u64) -> LogRecord {
        LogRecord::PhaseChange { trial: self.trial_index(), phase, session_ms }
    }

    pub fn begin_viewing(&mut self, now_ms: u64) -> Result<TourStream, SessionError> {
        self.ensure_phase("begin_viewing", Phase::ViewingPending)?;
        self.current.phase = Phase::Viewing;
        self.journal.push(self.phase_record(Phase::Viewing, now_ms));
        let trial = self.current_trial();
        Ok(TourStream {
            trial: trial.index,
            waypoints: trial.tour.clone(),
            north_heading_deg: self.plan.north_heading_deg,
            panorama_rate_deg_per_s: self.plan.panorama_rate_deg_per_s,
        })
    }

    /// Halts the tour at `waypoint` for a full rotation.
    pub fn pause_tour(&mut self, waypoint: usize) -> Result<Panorama, SessionError> {
        self.ensure_phase("pause_tour", Phase::Viewing)?;
        let tour = &self.current_trial().tour;
        let Some(wp) = tour.get(waypoint) else {
            return Err(SessionError::Tour(format!("waypoint {waypoint} outside a tour of {}", tour.len())));
        };
        if self.current.paused_at.is_some() {
            return Err(SessionError::Tour("tour is already paused".into()));
        }
        let panorama = Panorama {
            waypoint,
            start_heading_deg: wp.heading_deg,
            sweep_deg: 360.0,
            rate_deg_per_s: self.plan.panorama_rate_deg_per_s,
        };
        self.current.paused_at = Some(waypoint);
        Ok(panorama)
    }

    /// Ends a panorama; returns the waypoint the tour continues from.
    pub fn resume_tour(&mut self) -> Result<usize, SessionError> {
        self.ensure_phase("resume_tour", Phase::Viewing)?;
        self.current.paused_at.take().ok_or_else(|| SessionError::Tour("tour is not paused".into()))
    }

    pub fn complete_tour(&mut self) -> Result<(), SessionError> {
        self.ensure_phase("complete_tour", Phase::Viewing)?;
        if self.current.paused_at.is_some() {
            return Err(SessionError::Tour("tour is paused".into()));
        }
        self.current.phase = Phase::ViewingComplete;
        Ok(())
    }

    /// Display off; the construction clock starts now.
    pub fn begin_construction(&mut self, now_ms: u64) -> Result<(), SessionError> {
        self.ensure_phase("begin_construction", Phase::ViewingComplete)?;
        self.current.phase = Phase::Construction;
        self.current.log.construction_start_ms = Some(now_ms);
        self.journal.push(self.phase_record(Phase::Construction, now_ms));
        Ok(())
    }

    pub fn record_event(&mut self, submission: EventSubmission, now_ms: u64) -> Result<EventAck, SessionError> {
        self.ensure_phase("record_event", Phase::Construction)?;
        let start = self.current.log.construction_start_ms.unwrap_or(now_ms);
        let t_ms = now_ms.checked_sub(start).ok_or(SessionError::Clock { last_ms: start, now_ms })?;
        if let Some(last) = self.current.log.last_t_ms() {
            if t_ms < last {
                return Err(SessionError::Clock { last_ms: last, now_ms: t_ms });
            }
        }
        let event = BoardEvent {
            event_id: EventId::for_trial(self.trial_index(), self.current.log.len() + 1),
            t_ms,
            action: submission.action,
            building: submission.building,
            col: submission.col,
            row: submission.row,
            orientation: submission.orientation,
        };
        event.check_shape()?;

        let geometry = &self.plan.geometry;
        let status = match self.current.board.apply(&event, event.building, geometry) {
            Ok(()) if event.building.is_unknown() => EventStatus::FlaggedUnidentified,
            Ok(()) => EventStatus::Accepted,
            Err(e) => EventStatus::Rejected(e),
        };
        let logged = LoggedEvent { event: event.clone(), rejected: matches!(status, EventStatus::Rejected(_)) };
        self.journal.push(LogRecord::board_event(self.trial_index(), &logged));
        self.current.log.push(logged)?;
        Ok(EventAck { event_id: event.event_id, status })
    }

    pub fn resolve_unidentified(&mut self, correction: Correction) -> Result<(), SessionError> {
        self.ensure_phase("resolve_unidentified", Phase::Construction)?;
        let log = &self.current.log;
        let idx = log
            .position(&correction.event_id)
            .ok_or_else(|| SessionError::UnknownEvent(correction.event_id.clone()))?;
        if log.events[idx].rejected || !log.effective_building(idx).is_unknown() {
            return Err(SessionError::NotFlagged(correction.event_id));
        }
        let mut tentative = log.clone();
        tentative.push_correction(correction.clone())?;
        let board = ProvisionalBoard::rebuild(&self.current_trial().initial, &tentative, &self.plan.geometry)
            .map_err(|(event_id, source)| SessionError::Conflict { event_id, source })?;
        self.current.log = tentative;
        self.current.board = board;
        self.journal.push(LogRecord::Correction {
            trial: self.trial_index(),
            event_id: correction.event_id,
            building: correction.building,
            source: correction.source,
        });
        Ok(())
    }

    /// Closes the trial. Recorded trials are scored against their target;
    /// practice trials return `None`.
    pub fn participant_done(&mut self, now_ms: u64) -> Result<Option<ScoreReport>, SessionError> {
        self.ensure_phase("participant_done", Phase::Construction)?;
        let pending = self.current.log.pending();
        if !pending.is_empty() {
            return Err(SessionError::PendingCorrections(pending));
        }
        let mut log = self.current.log.clone();
        log.done_ms = Some(now_ms);
        let trial = self.current_trial();
        let report = if trial.kind.is_recorded() {
            let params = self.plan.metric_params()?;
            let (report, _) =
                score_trial(trial.index, &log, &trial.target, &trial.initial, &self.plan.geometry, &params)?;
            Some(report)
        } else {
            // Replay must still succeed for an unscored trial.
            log.replay(&trial.initial, &self.plan.geometry)?;
            None
        };

        self.current.log = log.clone();
        self.current.phase = Phase::Done;
        self.journal.push(self.phase_record(Phase::Done, now_ms));
        if let Some(r) = report {
            self.journal.push(LogRecord::TrialScore(r));
        }
        self.closed.push(ClosedTrial { log, report });
        if self.cursor + 1 == self.plan.trials.len() {
            self.status = SessionStatus::Complete;
            self.journal.push(LogRecord::SessionEnd { status: SessionEndStatus::Complete, session_ms: now_ms });
        }
        Ok(report)
    }

    /// Moves to the next trial after the current one is done.
    pub fn advance(&mut self) -> Result<&TrialDefinition, SessionError> {
        self.ensure_phase("advance", Phase::Done)?;
        self.cursor += 1;
        self.current = Self::fresh_trial(&self.plan.trials[self.cursor]);
        self.journal.push(Self::trial_start_record(&self.plan.trials[self.cursor]));
        Ok(self.current_trial())
    }

    pub fn abort(&mut self, now_ms: u64) -> Result<(), SessionError> {
        self.ensure_active()?;
        self.status = SessionStatus::Aborted;
        self.journal.push(LogRecord::SessionEnd { status: SessionEndStatus::Aborted, session_ms: now_ms });
        Ok(())
    }
}

/// Starts a session at the first trial with viewing pending.
pub fn create_session(
    session_id: impl Into<String>,
    participant: Participant,
    plan: AssessmentPlan,
) -> Result<Session, SessionError> {
    plan.validate()?;
    let id = session_id.into();
    let params = plan.metric_params()?;
    let first = &plan.trials[0];
    let journal = vec![
        LogRecord::SessionMeta {
            session_id: id.clone(),
            participant: participant.clone(),
            plan: plan.name.clone(),
            north_heading_deg: plan.north_heading_deg,
            m_max: params.m_max,
            d_max: params.d_max,
        },
        Session::trial_start_record(first),
    ];
    Ok(Session {
        current: Session::fresh_trial(first),
        id,
        participant,
        plan,
        status: SessionStatus::Active,
        cursor: 0,
        closed: Vec::new(),
        journal,
    })
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("invalid plan: {0}")]
    Plan(#[from] PlanError),
    #[error("{op} is not allowed in phase {phase}")]
    Phase { op: &'static str, phase: Phase },
    #[error("session has ended ({0:?})")]
    Ended(SessionStatus),
    #[error("clock went backwards: {now_ms} ms after {last_ms} ms")]
    Clock { last_ms: u64, now_ms: u64 },
    #[error("tour: {0}")]
    Tour(String),
    #[error("malformed event: {0}")]
    MalformedEvent(String),
    #[error("event id {0} already logged")]
    DuplicateEventId(EventId),
    #[error("no event {0} in this trial")]
    UnknownEvent(EventId),
    #[error("event {0} is not awaiting identification")]
    NotFlagged(EventId),
    #[error("resolution conflicts with the board at event {event_id}: {source}")]
    Conflict { event_id: EventId, source: MapError },
    #[error("unresolved events: {}", .0.iter().map(|e| e.as_str()).collect::<Vec<_>>().join(", "))]
    PendingCorrections(Vec<EventId>),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::Plan(_) => "plan",
            SessionError::Phase { .. } => "phase",
            SessionError::Ended(_) => "session_ended",
            SessionError::Clock { .. } => "clock",
            SessionError::Tour(_) => "tour",
            SessionError::MalformedEvent(_) => "malformed_event",
            SessionError::DuplicateEventId(_) => "duplicate_event",
            SessionError::UnknownEvent(_) | SessionError::NotFlagged(_) => "reference",
            SessionError::Conflict { .. } => "conflict",
            SessionError::PendingCorrections(_) => "pending_correction",
            SessionError::Replay(_) => "replay",
            SessionError::Score(_) => "score",
        }
    }
}
