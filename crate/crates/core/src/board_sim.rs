//! Headless stand-in for the physical board.
//!
//! Three pieces: fault injection that corrupts building identities at
//! configurable rates, reconciliation that turns the ground truth back into
//! corrections, and synthetic participants that produce valid event logs.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! `seed_from_u64`; normal and exponential variates use `rand_distr`'s
//! `StandardNormal` and `Exp1`. Versions are pinned by the workspace lock
//! file, so a seed reproduces the same output bit for bit.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{slot_to_physical, BoardGeometry, BuildingId, BuildingRef, Orientation, Point, Slot};
use crate::plan::{AssessmentPlan, TrialDefinition};
use crate::session::{
    create_session, BoardEvent, Correction, CorrectionSource, EventId, EventLog, EventSubmission, LoggedEvent,
    Participant, Session, SessionError, SessionStatus,
};
use crate::storage::{LogRecord, SessionHistory, StorageError, TrialCorrection};

/// Mixes several values into one seed (SplitMix64 finaliser per part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = state ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub p_unidentified: f64,
    pub p_misidentified: f64,
    #[serde(rename = "seed")]
    pub rng_seed: u64,
}

impl Default for FaultProfile {
    fn default() -> Self {
        Self { p_unidentified: 0.18, p_misidentified: 0.02, rng_seed: 42 }
    }
}

impl FaultProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_unidentified) || !ok(self.p_misidentified) || self.p_unidentified + self.p_misidentified > 1.0 {
            return Err(SimError::Profile(format!(
                "fault probabilities must lie in [0,1] and sum to at most 1 (got {} + {})",
                self.p_unidentified, self.p_misidentified
            )));
        }
        Ok(())
    }
}

/// True identity of every corrupted event.
pub type TruthMap = BTreeMap<EventId, BuildingId>;

#[derive(Debug, Clone, PartialEq)]
pub struct FaultInjection {
    pub log: EventLog,
    pub truth: TruthMap,
    pub unidentified: usize,
    pub misidentified: usize,
}

/// Corrupts building identities independently per event: unknown with
/// probability `p_unidentified`, otherwise replaced by a uniformly chosen
/// different model with probability `p_misidentified`. Timestamps,
/// locations, orientations and order are untouched.
pub fn inject_faults(log: &EventLog, profile: &FaultProfile) -> Result<FaultInjection, SimError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.rng_seed);
    let mut noisy = log.clone();
    let mut truth = TruthMap::new();
    let (mut unidentified, mut misidentified) = (0, 0);
    for (i, logged) in log.events().iter().enumerate() {
        let Some(actual) = log.effective_building(i).known() else {
            continue;
        };
        let u: f64 = rng.random();
        let corrupted = if u < profile.p_unidentified {
            unidentified += 1;
            BuildingRef::Unknown
        } else if u < profile.p_unidentified + profile.p_misidentified {
            misidentified += 1;
            let others: Vec<BuildingId> = BuildingId::all().filter(|b| *b != actual).collect();
            BuildingRef::Known(others[rng.random_range(0..others.len())])
        } else {
            continue;
        };
        noisy.replace_building(i, corrupted);
        truth.insert(logged.event.event_id.clone(), actual);
    }
    Ok(FaultInjection { log: noisy, truth, unidentified, misidentified })
}

/// Corrections restoring every event covered by `truth`. Unknown events
/// become interactive corrections, misidentified ones posthoc corrections.
pub fn reconcile(noisy: &EventLog, truth: &TruthMap) -> Result<Vec<Correction>, SimError> {
    let mut corrections = Vec::new();
    for (i, logged) in noisy.events().iter().enumerate() {
        let id = &logged.event.event_id;
        let captured = noisy.effective_building(i);
        match (captured, truth.get(id)) {
            (BuildingRef::Unknown, None) => return Err(SimError::Coverage(id.clone())),
            (BuildingRef::Unknown, Some(&actual)) => corrections.push(Correction {
                event_id: id.clone(),
                building: actual,
                source: CorrectionSource::Interactive,
            }),
            (BuildingRef::Known(seen), Some(&actual)) if seen != actual => corrections.push(Correction {
                event_id: id.clone(),
                building: actual,
                source: CorrectionSource::Posthoc,
            }),
            _ => {}
        }
    }
    Ok(corrections)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub recall_capacity: usize,
    pub position_noise_sigma_cm: f64,
    pub orientation_error_rate: f64,
    pub mean_inter_action_s: f64,
    #[serde(rename = "seed")]
    pub rng_seed: u64,
}

impl AgentProfile {
    /// Places every building exactly, one per second.
    pub fn perfect(seed: u64) -> Self {
        Self {
            recall_capacity: usize::MAX,
            position_noise_sigma_cm: 0.0,
            orientation_error_rate: 0.0,
            mean_inter_action_s: 1.0,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.position_noise_sigma_cm)
            || !(0.0..=1.0).contains(&self.orientation_error_rate)
            || !finite_nonneg(self.mean_inter_action_s)
        {
            return Err(SimError::Profile("agent parameters must be nonnegative, rates within [0,1]".into()));
        }
        Ok(())
    }
}

fn nearest_free(geometry: &BoardGeometry, target: Point, taken: &BTreeSet<Slot>) -> Option<Slot> {
    let mut best: Option<(f64, Slot)> = None;
    // buildable_slots runs column-major, so the first minimum wins ties by
    // lowest column, then lowest row.
    for slot in geometry.buildable_slots().filter(|s| !taken.contains(s)) {
        let centre = slot_to_physical(geometry, slot).ok()?;
        let dx = centre.x - target.x;
        let dy = centre.y - target.y;
        let d2 = dx * dx + dy * dy;
        if best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, slot));
        }
    }
    best.map(|(_, s)| s)
}

fn gap_ms(rng: &mut ChaCha8Rng, mean_s: f64) -> u64 {
    let draw: f64 = rng.sample(Exp1);
    ((draw * mean_s * 1000.0).round() as u64).max(1)
}

/// Generates the construction-phase log of a synthetic participant.
///
/// The agent recalls `min(recall_capacity, |M|)` of the target buildings not
/// already on the initial board, in random order. Each goes to its true
/// position displaced by Gaussian noise and snapped to the nearest free
/// slot; with `orientation_error_rate` it gets a random wrong orientation.
/// Gaps between actions are exponential with mean `mean_inter_action_s`.
/// The random stream consumed per building does not depend on the noise
/// parameters, so agents differing only in noise stay paired.
pub fn synth_participant(
    agent: &AgentProfile,
    trial: &TrialDefinition,
    geometry: &BoardGeometry,
) -> Result<EventLog, SimError> {
    agent.validate()?;
    if trial.target.is_empty() {
        return Err(SimError::Generation(format!("trial {} has an empty target", trial.index)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[agent.rng_seed, trial.index as u64]));
    let mut candidates: Vec<BuildingId> = trial.target.ids().filter(|id| !trial.initial.contains(*id)).collect();
    candidates.shuffle(&mut rng);
    candidates.truncate(agent.recall_capacity.min(trial.target.len()));

    let mut taken: BTreeSet<Slot> = trial.initial.placements().map(|p| p.slot()).collect();
    let mut log = EventLog::new(trial.index);
    log.construction_start_ms = Some(0);
    let mut t_ms = 0u64;
    for (n, id) in candidates.into_iter().enumerate() {
        let truth = trial.target.get(id).expect("candidate comes from the target");
        let z_x: f64 = rng.sample(StandardNormal);
        let z_y: f64 = rng.sample(StandardNormal);
        let flip = rng.random::<f64>() < agent.orientation_error_rate;
        let wrong = rng.random_range(0..3usize);
        t_ms += gap_ms(&mut rng, agent.mean_inter_action_s);

        let centre = slot_to_physical(geometry, truth.slot())?;
        let aimed =
            Point::new(centre.x + agent.position_noise_sigma_cm * z_x, centre.y + agent.position_noise_sigma_cm * z_y);
        let slot = nearest_free(geometry, aimed, &taken)
            .ok_or_else(|| SimError::Generation(format!("no free slot left for {id}")))?;
        taken.insert(slot);
        let orientation = if flip {
            let others: Vec<Orientation> = Orientation::ALL.into_iter().filter(|o| *o != truth.orientation).collect();
            others[wrong]
        } else {
            truth.orientation
        };
        let event = BoardEvent::place(EventId::for_trial(trial.index, n + 1), t_ms, id, slot, orientation);
        log.push(LoggedEvent { event, rejected: false })?;
    }
    log.done_ms = Some(t_ms + gap_ms(&mut rng, agent.mean_inter_action_s));
    Ok(log)
}

/// Engine time spent per tour waypoint in simulated sessions.
const SIM_MS_PER_WAYPOINT: u64 = 1000;

/// Runs a whole session for a synthetic participant through the session
/// protocol. Practice trials that start from a pre-set board are adjusted
/// exactly; every other trial uses [`synth_participant`].
pub fn simulate_session(
    session_id: &str,
    participant: Participant,
    plan: &AssessmentPlan,
    agent: &AgentProfile,
) -> Result<Session, SimError> {
    let mut session = create_session(session_id, participant, plan.clone())?;
    let mut clock = 0u64;
    loop {
        let trial = session.current_trial().clone();
        session.begin_viewing(clock)?;
        clock += SIM_MS_PER_WAYPOINT * trial.tour.len() as u64;
        session.complete_tour()?;
        session.begin_construction(clock)?;
        let start = clock;

        let done_at = if !trial.kind.is_recorded() && !trial.initial.is_empty() {
            let mut t = start;
            for p in trial.initial.placements() {
                if trial.target.get(p.building) != Some(p) {
                    t += 1000;
                    session.record_event(EventSubmission::remove(p.building, p.slot()), t)?;
                }
            }
            for p in trial.target.placements() {
                if session.board().get(p.building) != Some(p) {
                    t += 1000;
                    session.record_event(EventSubmission::place(p.building, p.slot(), p.orientation), t)?;
                }
            }
            t + 1000
        } else {
            let log = synth_participant(agent, &trial, &plan.geometry)?;
            for logged in log.events() {
                let e = &logged.event;
                let submission = EventSubmission {
                    action: e.action,
                    building: e.building,
                    col: e.col,
                    row: e.row,
                    orientation: e.orientation,
                };
                session.record_event(submission, start + e.t_ms)?;
            }
            start + log.done_ms.unwrap_or_default()
        };
        session.participant_done(done_at)?;
        clock = done_at + 1000;
        if session.status() != SessionStatus::Active {
            break;
        }
        session.advance()?;
    }
    Ok(session)
}

/// Corrupts the board events of a session log. Returns the noisy records
/// (without the score records, which no longer describe them) and the
/// corrections that restore the clean log.
pub fn inject_session_faults(
    records: &[LogRecord],
    profile: &FaultProfile,
) -> Result<(Vec<LogRecord>, Vec<TrialCorrection>), SimError> {
    let history = SessionHistory::from_records(records)?;
    let mut replaced: BTreeMap<EventId, BuildingRef> = BTreeMap::new();
    let mut corrections = Vec::new();
    for t in &history.trials {
        let trial_profile = FaultProfile { rng_seed: derive_seed(&[profile.rng_seed, t.index as u64]), ..*profile };
        let injected = inject_faults(&t.log, &trial_profile)?;
        for (i, logged) in injected.log.events().iter().enumerate() {
            if injected.truth.contains_key(&logged.event.event_id) {
                replaced.insert(logged.event.event_id.clone(), injected.log.effective_building(i));
            }
        }
        corrections.extend(
            reconcile(&injected.log, &injected.truth)?
                .into_iter()
                .map(|correction| TrialCorrection { trial: t.index, correction }),
        );
    }
    let noisy = records
        .iter()
        .filter(|r| !matches!(r, LogRecord::TrialScore(_)))
        .cloned()
        .map(|mut r| {
            if let LogRecord::BoardEvent { event_id, building, .. } = &mut r {
                if let Some(b) = replaced.get(event_id) {
                    *building = *b;
                }
            }
            r
        })
        .collect();
    Ok((noisy, corrections))
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("event {0} is corrupted but missing from the truth map")]
    Coverage(EventId),
    #[error("cannot generate participant log: {0}")]
    Generation(String),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Map(#[from] crate::map_model::MapError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}
