//! Trial definitions and assessment plans.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{
    slot_to_physical, validate_configuration, BoardGeometry, BuildingId, MapConfiguration, Orientation, Placement,
    Slot, Violation,
};
use crate::scoring::{MetricParams, ScoreError};

/// Default panorama sweep rate.
pub const DEFAULT_PANORAMA_RATE_DEG_PER_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    /// Board pre-set to the viewed neighbourhood; shows the virtual/physical
    /// correspondence.
    PracticeIntro,
    /// The viewed neighbourhood differs slightly from the board; the
    /// participant adjusts the board.
    PracticeChange,
    /// A fresh neighbourhood rebuilt from an empty board.
    PracticeFull,
    Recorded,
}

impl TrialKind {
    pub fn is_recorded(self) -> bool {
        matches!(self, TrialKind::Recorded)
    }

    /// Scripted assessor prompts for the trial.
    pub fn assessor_steps(self) -> &'static [&'static str] {
        match self {
            TrialKind::PracticeIntro => &[
                "Introduce the board and the building models.",
                "Explain the bus-ride viewing and show that viewing can be paused for a panorama.",
                "Play the tour while pointing out that the board already matches it.",
            ],
            TrialKind::PracticeChange => &[
                "Ask the participant to watch for one change during the tour.",
                "Turn the display off.",
                "Ask the participant to adjust the board to match the changed neighbourhood.",
            ],
            TrialKind::PracticeFull => &[
                "Play a new tour.",
                "Turn the display off.",
                "Ask the participant to rebuild the neighbourhood on the empty board.",
            ],
            TrialKind::Recorded => &[
                "Play the tour without comment.",
                "Turn the display off.",
                "Wait for the participant to signal completion. Give no feedback.",
            ],
        }
    }
}

/// A point on the viewing path in board centimetres, heading clockwise from
/// north (the top edge of the board).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub x_cm: f64,
    pub y_cm: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialDefinition {
    pub index: usize,
    pub kind: TrialKind,
    pub name: String,
    pub target: MapConfiguration,
    /// Board contents when construction begins. Empty except for practice
    /// trials that start from a pre-set board.
    pub initial: MapConfiguration,
    pub tour: Vec<Waypoint>,
}

impl TrialDefinition {
    pub fn num_buildings(&self) -> usize {
        self.target.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentPlan {
    pub name: String,
    pub geometry: BoardGeometry,
    pub north_heading_deg: f64,
    pub panorama_rate_deg_per_s: f64,
    pub trials: Vec<TrialDefinition>,
}

impl AssessmentPlan {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.trials.is_empty() {
            return Err(PlanError::Empty);
        }
        self.geometry.validate().map_err(|e| PlanError::Geometry(e.to_string()))?;
        let mut indices = BTreeSet::new();
        for t in &self.trials {
            if !indices.insert(t.index) {
                return Err(PlanError::DuplicateIndex(t.index));
            }
            for config in [&t.target, &t.initial] {
                validate_configuration(config, &self.geometry)
                    .map_err(|violations| PlanError::Invalid { trial: t.index, violations })?;
            }
            if t.kind.is_recorded() && t.target.is_empty() {
                return Err(PlanError::EmptyTarget(t.index));
            }
            if t.tour.is_empty() {
                return Err(PlanError::EmptyTour(t.index));
            }
        }
        Ok(())
    }

    pub fn recorded(&self) -> impl Iterator<Item = &TrialDefinition> {
        self.trials.iter().filter(|t| t.kind.is_recorded())
    }

    /// Largest recorded target size, falling back to all trials when none
    /// are recorded.
    pub fn m_max(&self) -> usize {
        let recorded = self.recorded().map(|t| t.num_buildings()).max();
        recorded.or_else(|| self.trials.iter().map(|t| t.num_buildings()).max()).unwrap_or(0).max(1)
    }

    pub fn metric_params(&self) -> Result<MetricParams, ScoreError> {
        MetricParams::for_board(&self.geometry, self.m_max())
    }

    pub fn trial(&self, index: usize) -> Option<&TrialDefinition> {
        self.trials.iter().find(|t| t.index == index)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("plan has no trials")]
    Empty,
    #[error("trial index {0} appears more than once")]
    DuplicateIndex(usize),
    #[error("trial {0}: recorded trial has an empty target")]
    EmptyTarget(usize),
    #[error("trial {0}: tour has no waypoints")]
    EmptyTour(usize),
    #[error("trial {trial}: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { trial: usize, violations: Vec<Violation> },
    #[error("invalid geometry: {0}")]
    Geometry(String),
}

/// Buildable slots with a street neighbour, each paired with the
/// orientation facing that street.
fn street_frontage(geometry: &BoardGeometry) -> Vec<(Slot, Orientation)> {
    geometry
        .buildable_slots()
        .filter_map(|s| {
            let neighbours = [
                (s.row.checked_sub(1).map(|r| Slot::new(s.col, r)), Orientation::North),
                (Some(Slot::new(s.col + 1, s.row)), Orientation::East),
                (Some(Slot::new(s.col, s.row + 1)), Orientation::South),
                (s.col.checked_sub(1).map(|c| Slot::new(c, s.row)), Orientation::West),
            ];
            neighbours.into_iter().find(|(n, _)| n.is_some_and(|n| geometry.is_street(n))).map(|(_, o)| (s, o))
        })
        .collect()
}

fn generated_neighbourhood(geometry: &BoardGeometry, seed: u64, size: usize) -> MapConfiguration {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<BuildingId> = BuildingId::all().collect();
    ids.shuffle(&mut rng);
    let mut frontage = street_frontage(geometry);
    frontage.shuffle(&mut rng);
    let placements = ids.into_iter().zip(frontage).take(size).map(|(id, (slot, o))| Placement::new(id, slot, o));
    MapConfiguration::from_placements(placements, geometry).expect("frontage slots are distinct and buildable")
}

/// Eastbound ride along the main street, then north along the crossing
/// street.
fn default_tour(geometry: &BoardGeometry) -> Vec<Waypoint> {
    let centre = |col, row| slot_to_physical(geometry, Slot::new(col, row)).expect("tour stays on the grid");
    let mut tour: Vec<Waypoint> = (0..geometry.columns)
        .step_by(2)
        .map(|col| {
            let p = centre(col, 8);
            Waypoint { x_cm: p.x, y_cm: p.y, heading_deg: 90.0 }
        })
        .collect();
    tour.extend((0..8).rev().step_by(2).map(|row| {
        let p = centre(8, row);
        Waypoint { x_cm: p.x, y_cm: p.y, heading_deg: 0.0 }
    }));
    tour
}

/// The standard assessment: three two-building practice trials followed by
/// seven recorded trials of 2 to 8 buildings, in that order.
pub fn default_plan() -> AssessmentPlan {
    let geometry = BoardGeometry::default();
    let tour = default_tour(&geometry);
    let mut trials = Vec::new();

    let intro = generated_neighbourhood(&geometry, 101, 2);
    trials.push(TrialDefinition {
        index: 0,
        kind: TrialKind::PracticeIntro,
        name: "practice-intro".into(),
        target: intro.clone(),
        initial: intro.clone(),
        tour: tour.clone(),
    });

    // Same two buildings with the second one moved to another frontage slot.
    let mut placements: Vec<Placement> = intro.placements().copied().collect();
    let taken: BTreeSet<Slot> = placements.iter().map(|p| p.slot()).collect();
    let (slot, o) = street_frontage(&geometry)
        .into_iter()
        .rev()
        .find(|(s, _)| !taken.contains(s))
        .expect("default board has spare frontage");
    placements[1] = Placement::new(placements[1].building, slot, o);
    trials.push(TrialDefinition {
        index: 1,
        kind: TrialKind::PracticeChange,
        name: "practice-change".into(),
        target: MapConfiguration::from_placements(placements, &geometry).expect("moved to a free slot"),
        initial: intro,
        tour: tour.clone(),
    });

    trials.push(TrialDefinition {
        index: 2,
        kind: TrialKind::PracticeFull,
        name: "practice-full".into(),
        target: generated_neighbourhood(&geometry, 103, 2),
        initial: MapConfiguration::new(),
        tour: tour.clone(),
    });

    for size in 2..=8usize {
        trials.push(TrialDefinition {
            index: trials.len(),
            kind: TrialKind::Recorded,
            name: format!("recorded-{size}"),
            target: generated_neighbourhood(&geometry, 200 + size as u64, size),
            initial: MapConfiguration::new(),
            tour: tour.clone(),
        });
    }

    AssessmentPlan {
        name: "default".into(),
        geometry,
        north_heading_deg: 0.0,
        panorama_rate_deg_per_s: DEFAULT_PANORAMA_RATE_DEG_PER_S,
        trials,
    }
}
