//! Wire format: JSON text frames, one envelope per frame.
//!
//! Every envelope carries `kind`, `session_id` and `seq`. Client `seq` must
//! strictly increase per connection. Server envelopes are numbered per
//! connection too and echo the request's `seq` in `reply_to` on the
//! requester's copy of a response.

use cogmap_core::map_model::{BuildingId, BuildingRef, Orientation};
use cogmap_core::plan::{TrialKind, Waypoint};
use cogmap_core::scoring::ScoreReport;
use cogmap_core::session::{EventAction, EventId, Participant, Phase, SessionStatus};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Participant,
    Assessor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    /// `participant` is required when the session does not exist yet.
    Join {
        role: Role,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        participant: Option<Participant>,
    },
    TourReady,
    TourPause {
        waypoint: usize,
    },
    TourResume,
    /// Ends viewing and starts construction.
    TourComplete,
    BoardEvent {
        action: EventAction,
        building: BuildingRef,
        col: u32,
        row: u32,
        #[serde(default)]
        orientation: Option<Orientation>,
        /// Client clock, ignored by the engine.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        t_ms: Option<u64>,
    },
    Done,
    Resolve {
        event_id: EventId,
        building: BuildingId,
    },
    Advance,
    Abort,
}

pub const CLIENT_KINDS: [&str; 10] = [
    "join",
    "tour_ready",
    "tour_pause",
    "tour_resume",
    "tour_complete",
    "board_event",
    "done",
    "resolve",
    "advance",
    "abort",
];

impl ClientMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            ClientMessage::Join { .. } => "join",
            ClientMessage::TourReady => "tour_ready",
            ClientMessage::TourPause { .. } => "tour_pause",
            ClientMessage::TourResume => "tour_resume",
            ClientMessage::TourComplete => "tour_complete",
            ClientMessage::BoardEvent { .. } => "board_event",
            ClientMessage::Done => "done",
            ClientMessage::Resolve { .. } => "resolve",
            ClientMessage::Advance => "advance",
            ClientMessage::Abort => "abort",
        }
    }

    pub fn allowed_for(&self, role: Role) -> bool {
        match self {
            ClientMessage::Resolve { .. } | ClientMessage::Advance | ClientMessage::Abort => role == Role::Assessor,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Joined {
        role: Role,
        trial: usize,
        phase: Phase,
        status: SessionStatus,
        events_logged: usize,
        pending: Vec<EventId>,
    },
    TrialStart {
        index: usize,
        trial_kind: TrialKind,
        num_buildings: usize,
    },
    TourData {
        waypoints: Vec<Waypoint>,
        north_heading: f64,
        panorama_rate_deg_per_s: f64,
    },
    Phase {
        phase: Phase,
    },
    EventAck {
        event_id: EventId,
        /// accepted, flagged, rejected or resolved.
        status: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
        /// Hash of the board after the event (see `BoardSnapshot::hash`).
        board_hash: String,
    },
    CorrectionNeeded {
        event_id: EventId,
        col: u32,
        row: u32,
    },
    TrialScore {
        report: ScoreReport,
    },
    SessionComplete {
        status: SessionStatus,
    },
    Error {
        code: String,
        detail: String,
    },
    Panorama {
        waypoint: usize,
        start_heading_deg: f64,
        sweep_deg: f64,
        rate_deg_per_s: f64,
    },
    Resumed {
        waypoint: usize,
    },
}

pub const SERVER_KINDS: [&str; 11] = [
    "joined",
    "trial_start",
    "tour_data",
    "phase",
    "event_ack",
    "correction_needed",
    "trial_score",
    "session_complete",
    "error",
    "panorama",
    "resumed",
];

impl ServerMessage {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMessage::Error { code: code.into(), detail: detail.into() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ServerMessage::Joined { .. } => "joined",
            ServerMessage::TrialStart { .. } => "trial_start",
            ServerMessage::TourData { .. } => "tour_data",
            ServerMessage::Phase { .. } => "phase",
            ServerMessage::EventAck { .. } => "event_ack",
            ServerMessage::CorrectionNeeded { .. } => "correction_needed",
            ServerMessage::TrialScore { .. } => "trial_score",
            ServerMessage::SessionComplete { .. } => "session_complete",
            ServerMessage::Error { .. } => "error",
            ServerMessage::Panorama { .. } => "panorama",
            ServerMessage::Resumed { .. } => "resumed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub session_id: String,
    pub seq: u64,
    #[serde(flatten)]
    pub message: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub session_id: String,
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<u64>,
    #[serde(flatten)]
    pub message: ServerMessage,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("seq {got} is not after {last}")]
    Ordering { last: u64, got: u64 },
    #[error("{kind} is not permitted for the {role:?} role")]
    Permission { kind: &'static str, role: Role },
    #[error("join a session first")]
    NotJoined,
    #[error("this connection already joined session {0}")]
    AlreadyJoined(String),
    #[error("connection is joined to {joined}, not {got}")]
    WrongSession { joined: String, got: String },
    #[error("no session {0}; join with participant details to create it")]
    UnknownSession(String),
    #[error("another connection took over the {0:?} role")]
    Replaced(Role),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::UnknownKind(_) => "protocol",
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::Ordering { .. } => "ordering",
            ProtocolError::Permission { .. } => "permission",
            ProtocolError::NotJoined => "not_joined",
            ProtocolError::AlreadyJoined(_) => "already_joined",
            ProtocolError::WrongSession { .. } => "session",
            ProtocolError::UnknownSession(_) => "unknown_session",
            ProtocolError::Replaced(_) => "replaced",
        }
    }
}

/// Parses a client frame. Unknown kinds are told apart from malformed
/// payloads of known kinds.
pub fn decode_client(text: &str) -> Result<ClientEnvelope, ProtocolError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let kind = value
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::Malformed("missing string field \"kind\"".into()))?;
    if !CLIENT_KINDS.contains(&kind) {
        return Err(ProtocolError::UnknownKind(kind.to_string()));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::Malformed(e.to_string()))
}

/// Best-effort `seq` of a frame that failed to decode, for `reply_to`.
pub fn peek_seq(text: &str) -> Option<u64> {
    serde_json::from_str::<Value>(text).ok()?.get("seq")?.as_u64()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindSchema {
    pub kind: String,
    pub fields: Vec<FieldSchema>,
    /// Roles allowed to send (client kinds) or receive (server kinds).
    pub roles: Vec<Role>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageSchema {
    pub version: u32,
    /// Fields present on every envelope.
    pub envelope: Vec<FieldSchema>,
    pub client: Vec<KindSchema>,
    pub server: Vec<KindSchema>,
}

fn kind(name: &str, roles: &[Role], fields: &[(&str, &str, bool)]) -> KindSchema {
    KindSchema {
        kind: name.into(),
        fields: fields.iter().map(|&(n, t, r)| FieldSchema { name: n.into(), ty: t.into(), required: r }).collect(),
        roles: roles.to_vec(),
    }
}

/// Descriptor of the full message set.
pub fn message_schema() -> MessageSchema {
    use Role::{Assessor as A, Participant as P};
    let both = &[P, A];
    MessageSchema {
        version: 1,
        envelope: vec![
            FieldSchema { name: "kind".into(), ty: "string".into(), required: true },
            FieldSchema { name: "session_id".into(), ty: "string".into(), required: true },
            FieldSchema { name: "seq".into(), ty: "uint".into(), required: true },
            FieldSchema { name: "reply_to".into(), ty: "uint".into(), required: false },
        ],
        client: vec![
            kind("join", both, &[("role", "participant|assessor", true), ("participant", "{id,group}", false)]),
            kind("tour_ready", both, &[]),
            kind("tour_pause", both, &[("waypoint", "uint", true)]),
            kind("tour_resume", both, &[]),
            kind("tour_complete", both, &[]),
            kind(
                "board_event",
                both,
                &[
                    ("action", "place|remove", true),
                    ("building", "B01..B10|unknown", true),
                    ("col", "uint", true),
                    ("row", "uint", true),
                    ("orientation", "0|90|180|270|null", false),
                    ("t_ms", "uint", false),
                ],
            ),
            kind("done", both, &[]),
            kind("resolve", &[A], &[("event_id", "string", true), ("building", "B01..B10", true)]),
            kind("advance", &[A], &[]),
            kind("abort", &[A], &[]),
        ],
        server: vec![
            kind(
                "joined",
                both,
                &[
                    ("role", "participant|assessor", true),
                    ("trial", "uint", true),
                    ("phase", "phase", true),
                    ("status", "active|complete|aborted", true),
                    ("events_logged", "uint", true),
                    ("pending", "[string]", true),
                ],
            ),
            kind(
                "trial_start",
                both,
                &[("index", "uint", true), ("trial_kind", "trial_kind", true), ("num_buildings", "uint", true)],
            ),
            kind(
                "tour_data",
                both,
                &[
                    ("waypoints", "[{x_cm,y_cm,heading_deg}]", true),
                    ("north_heading", "float", true),
                    ("panorama_rate_deg_per_s", "float", true),
                ],
            ),
            kind("phase", both, &[("phase", "phase", true)]),
            kind(
                "event_ack",
                both,
                &[
                    ("event_id", "string", true),
                    ("status", "accepted|flagged|rejected|resolved", true),
                    ("detail", "string", false),
                    ("board_hash", "hex", true),
                ],
            ),
            kind(
                "correction_needed",
                &[A],
                &[("event_id", "string", true), ("col", "uint", true), ("row", "uint", true)],
            ),
            kind("trial_score", &[A], &[("report", "score_report", true)]),
            kind("session_complete", both, &[("status", "active|complete|aborted", true)]),
            kind("error", both, &[("code", "string", true), ("detail", "string", true)]),
            kind(
                "panorama",
                both,
                &[
                    ("waypoint", "uint", true),
                    ("start_heading_deg", "float", true),
                    ("sweep_deg", "float", true),
                    ("rate_deg_per_s", "float", true),
                ],
            ),
            kind("resumed", both, &[("waypoint", "uint", true)]),
        ],
    }
}
