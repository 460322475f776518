//! Session registry and per-connection message handling.
//!
//! Each session sits behind its own mutex, so all writes to one session are
//! serialised while different sessions run independently. A connection
//! joins one session in one role; the session keeps at most one live
//! connection per role and outlives disconnects.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use cogmap_core::plan::AssessmentPlan;
use cogmap_core::session::{
    create_session, Correction, CorrectionSource, EventStatus, EventSubmission, Phase, Session, SessionError,
};
use cogmap_core::storage::{LogAppender, LogRecord, StorageError, SESSION_EXT};
use tokio::sync::mpsc::{unbounded_channel, UnboundedReceiver, UnboundedSender};

use crate::protocol::{
    decode_client, peek_seq, ClientEnvelope, ClientMessage, ProtocolError, Role, ServerEnvelope, ServerMessage,
};
use crate::ServiceError;

/// Engine time source in milliseconds.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

/// Milliseconds since the clock was created.
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.0.elapsed().as_millis() as u64
    }
}

/// Test clock that only moves when told to.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
struct Peer {
    id: u64,
    tx: UnboundedSender<ServerEnvelope>,
    seq: Arc<AtomicU64>,
}

impl Peer {
    fn send(&self, session_id: &str, reply_to: Option<u64>, message: ServerMessage) {
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        // A closed receiver means the client is gone; the session carries on.
        let _ = self.tx.send(ServerEnvelope { session_id: session_id.to_string(), seq, reply_to, message });
    }
}

struct SessionSlot {
    session: Session,
    appender: LogAppender,
    participant: Option<Peer>,
    assessor: Option<Peer>,
}

impl SessionSlot {
    fn peer_mut(&mut self, role: Role) -> &mut Option<Peer> {
        match role {
            Role::Participant => &mut self.participant,
            Role::Assessor => &mut self.assessor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Audience {
    Everyone,
    Assessor,
}

pub struct Hub {
    plan: AssessmentPlan,
    log_dir: PathBuf,
    clock: Arc<dyn Clock>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionSlot>>>>,
    next_peer: AtomicU64,
}

impl Hub {
    pub fn new(plan: AssessmentPlan, log_dir: &Path, clock: Arc<dyn Clock>) -> Result<Arc<Self>, ServiceError> {
        plan.validate().map_err(SessionError::from)?;
        std::fs::create_dir_all(log_dir).map_err(|source| StorageError::Io { path: log_dir.to_path_buf(), source })?;
        Ok(Arc::new(Self {
            plan,
            log_dir: log_dir.to_path_buf(),
            clock,
            sessions: Mutex::new(HashMap::new()),
            next_peer: AtomicU64::new(0),
        }))
    }

    pub fn plan(&self) -> &AssessmentPlan {
        &self.plan
    }

    pub fn log_path(&self, session_id: &str) -> PathBuf {
        self.log_dir.join(format!("{session_id}{SESSION_EXT}"))
    }

    /// Opens a connection; server messages for it arrive on the receiver.
    pub fn connect(self: &Arc<Self>) -> (Connection, UnboundedReceiver<ServerEnvelope>) {
        let (tx, rx) = unbounded_channel();
        let peer = Peer { id: self.next_peer.fetch_add(1, Ordering::SeqCst), tx, seq: Arc::new(AtomicU64::new(0)) };
        (Connection { hub: Arc::clone(self), peer, joined: None, last_seq: None }, rx)
    }

    /// Consistent copy of a session's journal.
    pub fn journal(&self, session_id: &str) -> Option<Vec<LogRecord>> {
        let slot = self.sessions.lock().unwrap().get(session_id).cloned()?;
        let guard = slot.lock().unwrap();
        Some(guard.session.journal().to_vec())
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn slot(&self, session_id: &str) -> Option<Arc<Mutex<SessionSlot>>> {
        self.sessions.lock().unwrap().get(session_id).cloned()
    }
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub struct Connection {
    hub: Arc<Hub>,
    peer: Peer,
    joined: Option<(String, Role)>,
    last_seq: Option<u64>,
}

enum Failure {
    Protocol(ProtocolError),
    Session(SessionError),
    Storage(StorageError),
}

impl From<ProtocolError> for Failure {
    fn from(e: ProtocolError) -> Self {
        Failure::Protocol(e)
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        Failure::Session(e)
    }
}

impl From<StorageError> for Failure {
    fn from(e: StorageError) -> Self {
        Failure::Storage(e)
    }
}

impl Failure {
    fn to_message(&self) -> ServerMessage {
        match self {
            Failure::Protocol(e) => ServerMessage::error(e.code(), e.to_string()),
            Failure::Session(e) => ServerMessage::error(e.code(), e.to_string()),
            Failure::Storage(e) => ServerMessage::error("storage", e.to_string()),
        }
    }
}

impl Connection {
    pub fn role(&self) -> Option<Role> {
        self.joined.as_ref().map(|(_, r)| *r)
    }

    /// Processes one client frame. Every frame produces at least one
    /// message to this connection: a response or a coded error.
    pub fn handle_text(&mut self, text: &str) {
        let fallback_id = self.joined.as_ref().map(|(id, _)| id.clone()).unwrap_or_default();
        let envelope = match decode_client(text) {
            Ok(env) => env,
            Err(e) => {
                self.peer.send(&fallback_id, peek_seq(text), ServerMessage::error(e.code(), e.to_string()));
                return;
            }
        };
        let seq = envelope.seq;
        if let Some(last) = self.last_seq.filter(|&last| seq <= last) {
            let e = ProtocolError::Ordering { last, got: seq };
            self.peer.send(&fallback_id, Some(seq), ServerMessage::error(e.code(), e.to_string()));
            return;
        }
        self.last_seq = Some(seq);
        if let Err(f) = self.dispatch(envelope) {
            let id = self.joined.as_ref().map(|(id, _)| id.clone()).unwrap_or(fallback_id);
            self.peer.send(&id, Some(seq), f.to_message());
        }
    }

    fn dispatch(&mut self, env: ClientEnvelope) -> Result<(), Failure> {
        if let ClientMessage::Join { role, participant } = env.message {
            return self.join(&env.session_id, env.seq, role, participant);
        }
        let (session_id, role) = self.joined.clone().ok_or(ProtocolError::NotJoined)?;
        if env.session_id != session_id {
            return Err(ProtocolError::WrongSession { joined: session_id, got: env.session_id }.into());
        }
        if !env.message.allowed_for(role) {
            return Err(ProtocolError::Permission { kind: env.message.kind(), role }.into());
        }
        let slot = self.hub.slot(&session_id).ok_or_else(|| ProtocolError::UnknownSession(session_id.clone()))?;
        let mut guard = slot.lock().unwrap();
        let now = self.hub.clock.now_ms();
        let out = apply(&mut guard.session, env.message, now);
        // Persist whatever the engine journaled, also on partial failure.
        let journal = guard.session.journal().to_vec();
        guard.appender.sync(&journal)?;
        for (audience, message) in out? {
            self.deliver(&guard, &session_id, env.seq, audience, message);
        }
        Ok(())
    }

    fn deliver(&self, slot: &SessionSlot, session_id: &str, seq: u64, audience: Audience, message: ServerMessage) {
        let targets = match audience {
            Audience::Everyone => vec![&slot.participant, &slot.assessor],
            Audience::Assessor => vec![&slot.assessor],
        };
        for peer in targets.into_iter().flatten() {
            let reply_to = (peer.id == self.peer.id).then_some(seq);
            peer.send(session_id, reply_to, message.clone());
        }
    }

    fn join(
        &mut self,
        session_id: &str,
        seq: u64,
        role: Role,
        participant: Option<cogmap_core::session::Participant>,
    ) -> Result<(), Failure> {
        if let Some((id, _)) = &self.joined {
            return Err(ProtocolError::AlreadyJoined(id.clone()).into());
        }
        if !valid_session_id(session_id) {
            return Err(
                ProtocolError::Malformed(format!("session id {session_id:?} must be 1-64 of [A-Za-z0-9_-]")).into()
            );
        }
        let slot = {
            let mut sessions = self.hub.sessions.lock().unwrap();
            match sessions.get(session_id) {
                Some(slot) => Arc::clone(slot),
                None => {
                    let participant = participant.ok_or_else(|| ProtocolError::UnknownSession(session_id.into()))?;
                    let session = create_session(session_id, participant, self.hub.plan.clone())?;
                    let mut appender = LogAppender::create(&self.hub.log_path(session_id))?;
                    appender.sync(session.journal())?;
                    let slot =
                        Arc::new(Mutex::new(SessionSlot { session, appender, participant: None, assessor: None }));
                    sessions.insert(session_id.to_string(), Arc::clone(&slot));
                    slot
                }
            }
        };
        let mut guard = slot.lock().unwrap();
        if let Some(old) = guard.peer_mut(role).replace(self.peer.clone()) {
            old.send(session_id, None, ServerMessage::error("replaced", ProtocolError::Replaced(role).to_string()));
        }
        self.joined = Some((session_id.to_string(), role));

        let s = &guard.session;
        let trial = s.current_trial();
        let reply = |m| self.peer.send(session_id, Some(seq), m);
        reply(ServerMessage::Joined {
            role,
            trial: trial.index,
            phase: s.phase(),
            status: s.status(),
            events_logged: s.current_log().len(),
            pending: s.pending_corrections(),
        });
        reply(ServerMessage::TrialStart {
            index: trial.index,
            trial_kind: trial.kind,
            num_buildings: trial.num_buildings(),
        });
        if s.phase() == Phase::Viewing {
            reply(tour_data(s));
        }
        if role == Role::Assessor {
            for event_id in s.pending_corrections() {
                let logged = &s.current_log().events()[s.current_log().position(&event_id).expect("pending ids exist")];
                reply(ServerMessage::CorrectionNeeded { event_id, col: logged.event.col, row: logged.event.row });
            }
        }
        Ok(())
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        let Some((id, role)) = self.joined.take() else { return };
        if let Some(slot) = self.hub.slot(&id) {
            let mut guard = slot.lock().unwrap();
            let current = guard.peer_mut(role);
            if current.as_ref().is_some_and(|p| p.id == self.peer.id) {
                *current = None;
            }
        }
    }
}

fn tour_data(s: &Session) -> ServerMessage {
    let plan = s.plan();
    ServerMessage::TourData {
        waypoints: s.current_trial().tour.clone(),
        north_heading: plan.north_heading_deg,
        panorama_rate_deg_per_s: plan.panorama_rate_deg_per_s,
    }
}

/// Maps one client request onto session operations.
fn apply(s: &mut Session, message: ClientMessage, now: u64) -> Result<Vec<(Audience, ServerMessage)>, SessionError> {
    use Audience::{Assessor, Everyone};
    let phase = |p| (Everyone, ServerMessage::Phase { phase: p });
    Ok(match message {
        ClientMessage::Join { .. } => unreachable!("join is handled before dispatch"),
        ClientMessage::TourReady => {
            s.begin_viewing(now)?;
            vec![phase(Phase::Viewing), (Everyone, tour_data(s))]
        }
        ClientMessage::TourPause { waypoint } => {
            let p = s.pause_tour(waypoint)?;
            vec![(
                Everyone,
                ServerMessage::Panorama {
                    waypoint: p.waypoint,
                    start_heading_deg: p.start_heading_deg,
                    sweep_deg: p.sweep_deg,
                    rate_deg_per_s: p.rate_deg_per_s,
                },
            )]
        }
        ClientMessage::TourResume => vec![(Everyone, ServerMessage::Resumed { waypoint: s.resume_tour()? })],
        ClientMessage::TourComplete => {
            s.complete_tour()?;
            s.begin_construction(now)?;
            vec![phase(Phase::Construction)]
        }
        ClientMessage::BoardEvent { action, building, col, row, orientation, .. } => {
            let ack = s.record_event(EventSubmission { action, building, col, row, orientation }, now)?;
            let detail = match &ack.status {
                EventStatus::Rejected(e) => Some(e.to_string()),
                _ => None,
            };
            let mut out = vec![(
                Everyone,
                ServerMessage::EventAck {
                    event_id: ack.event_id.clone(),
                    status: ack.status.as_str().into(),
                    detail,
                    board_hash: s.board_snapshot().hash(),
                },
            )];
            if ack.status == EventStatus::FlaggedUnidentified {
                out.push((Assessor, ServerMessage::CorrectionNeeded { event_id: ack.event_id, col, row }));
            }
            out
        }
        ClientMessage::Done => {
            let report = s.participant_done(now)?;
            let mut out = vec![phase(Phase::Done)];
            if let Some(report) = report {
                out.push((Assessor, ServerMessage::TrialScore { report }));
            }
            if s.status() != cogmap_core::session::SessionStatus::Active {
                out.push((Everyone, ServerMessage::SessionComplete { status: s.status() }));
            }
            out
        }
        ClientMessage::Resolve { event_id, building } => {
            s.resolve_unidentified(Correction {
                event_id: event_id.clone(),
                building,
                source: CorrectionSource::Interactive,
            })?;
            vec![(
                Everyone,
                ServerMessage::EventAck {
                    event_id,
                    status: "resolved".into(),
                    detail: None,
                    board_hash: s.board_snapshot().hash(),
                },
            )]
        }
        ClientMessage::Advance => {
            let t = s.advance()?;
            vec![(
                Everyone,
                ServerMessage::TrialStart { index: t.index, trial_kind: t.kind, num_buildings: t.num_buildings() },
            )]
        }
        ClientMessage::Abort => {
            s.abort(now)?;
            vec![(Everyone, ServerMessage::SessionComplete { status: s.status() })]
        }
    })
}
