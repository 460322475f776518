//! Map scoring.
//!
//! A target map `M` and a participant map `C` are compared as sets of
//! building ids (`number`, `difference`) and, over the buildings present in
//! both, by position and orientation (`distance`, `orient`,
//! `interbuilding`). `similarity` is the product of `difference`, `distance`
//! and `orient`.
//!
//! Positional metrics are normalised by the assessment-wide `m_max`, not by
//! the size of the intersection, and an empty intersection yields an empty
//! sum (score 1). Both follow the literal metric definitions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map_model::{slot_to_physical, BoardGeometry, BuildingId, MapConfiguration, MapError, Point};
use crate::session::{EventId, EventLog, ReplayError};

/// Normalisers shared by every trial of one assessment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    /// Board diagonal in cm.
    pub d_max: f64,
    /// Largest target map size in the assessment.
    pub m_max: usize,
}

impl MetricParams {
    pub fn new(d_max: f64, m_max: usize) -> Result<Self, ScoreError> {
        if !(d_max > 0.0 && d_max.is_finite()) {
            return Err(ScoreError::Params(format!("d_max must be positive, got {d_max}")));
        }
        if m_max == 0 {
            return Err(ScoreError::Params("m_max must be at least 1".into()));
        }
        Ok(Self { d_max, m_max })
    }

    pub fn for_board(geometry: &BoardGeometry, m_max: usize) -> Result<Self, ScoreError> {
        Self::new(geometry.diagonal(), m_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocatedBuilding {
    pub position: Point,
    pub orientation_deg: f64,
}

/// A map resolved to physical positions, the form all metrics work on.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocatedMap {
    buildings: BTreeMap<BuildingId, LocatedBuilding>,
}

impl LocatedMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_configuration(config: &MapConfiguration, geometry: &BoardGeometry) -> Result<Self, MapError> {
        let mut map = Self::new();
        for p in config.placements() {
            let position = slot_to_physical(geometry, p.slot())?;
            map.insert(p.building, position, f64::from(p.orientation.degrees()));
        }
        Ok(map)
    }

    pub fn insert(&mut self, id: BuildingId, position: Point, orientation_deg: f64) {
        self.buildings.insert(id, LocatedBuilding { position, orientation_deg });
    }

    pub fn len(&self) -> usize {
        self.buildings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buildings.is_empty()
    }

    pub fn get(&self, id: BuildingId) -> Option<&LocatedBuilding> {
        self.buildings.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (BuildingId, &LocatedBuilding)> {
        self.buildings.iter().map(|(id, b)| (*id, b))
    }

    /// Applies `f` to every position, keeping ids and orientations.
    pub fn map_positions(&self, f: impl Fn(Point) -> Point) -> Self {
        Self {
            buildings: self
                .buildings
                .iter()
                .map(|(id, b)| (*id, LocatedBuilding { position: f(b.position), orientation_deg: b.orientation_deg }))
                .collect(),
        }
    }
}

/// Pairs of (M_i, C_i) for every id in M ∩ C, in ascending id order.
fn matched<'a>(m: &'a LocatedMap, c: &'a LocatedMap) -> Vec<(&'a LocatedBuilding, &'a LocatedBuilding)> {
    m.buildings.iter().filter_map(|(id, mb)| c.buildings.get(id).map(|cb| (mb, cb))).collect()
}

/// Angular difference in degrees, in [0, 180].
pub fn odiff(a_deg: f64, b_deg: f64) -> f64 {
    let d = (a_deg - b_deg).abs().rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn number(m: &LocatedMap, c: &LocatedMap) -> Result<f64, ScoreError> {
    if m.is_empty() {
        return Err(ScoreError::EmptyTarget);
    }
    let (nm, nc) = (m.len() as f64, c.len() as f64);
    Ok(1.0 - (nm - nc).abs() / nm)
}

pub fn difference(m: &LocatedMap, c: &LocatedMap) -> Result<f64, ScoreError> {
    if m.is_empty() && c.is_empty() {
        return Err(ScoreError::EmptyMaps);
    }
    let m_only = m.buildings.keys().filter(|id| !c.buildings.contains_key(id)).count();
    let c_only = c.buildings.keys().filter(|id| !m.buildings.contains_key(id)).count();
    Ok(1.0 - (m_only + c_only) as f64 / (m.len() + c.len()) as f64)
}

pub fn distance(m: &LocatedMap, c: &LocatedMap, params: &MetricParams) -> f64 {
    let sum: f64 = matched(m, c).into_iter().map(|(mb, cb)| mb.position.dist(cb.position) / params.d_max).sum();
    1.0 - sum / params.m_max as f64
}

pub fn orient(m: &LocatedMap, c: &LocatedMap, params: &MetricParams) -> f64 {
    let sum: f64 =
        matched(m, c).into_iter().map(|(mb, cb)| odiff(mb.orientation_deg, cb.orientation_deg) / 180.0).sum();
    1.0 - sum / params.m_max as f64
}

/// Compares the inter-building distance matrices of M and C restricted to
/// M ∩ C. The double sum runs over all ordered pairs, diagonal included.
pub fn interbuilding(m: &LocatedMap, c: &LocatedMap, params: &MetricParams) -> f64 {
    let pairs = matched(m, c);
    let mut sum = 0.0;
    for (mi, ci) in &pairs {
        for (mj, cj) in &pairs {
            let dm = mi.position.dist(mj.position);
            let dc = ci.position.dist(cj.position);
            sum += (dm - dc).abs() / params.d_max;
        }
    }
    let m_max = params.m_max as f64;
    1.0 - sum / (m_max * m_max)
}

pub fn similarity(m: &LocatedMap, c: &LocatedMap, params: &MetricParams) -> Result<f64, ScoreError> {
    Ok(difference(m, c)? * distance(m, c, params) * orient(m, c, params))
}

/// All six map metrics for one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapScores {
    pub number: Option<f64>,
    pub difference: f64,
    pub distance: f64,
    pub orient: f64,
    pub interbuilding: f64,
    pub similarity: f64,
}

/// Evaluates every metric, checking that `m_max` covers the target.
///
/// `number` is `None` when the target is empty.
pub fn evaluate(m: &LocatedMap, c: &LocatedMap, params: &MetricParams) -> Result<MapScores, ScoreError> {
    if m.len() > params.m_max {
        return Err(ScoreError::MMaxTooSmall { m_max: params.m_max, target: m.len() });
    }
    let difference = difference(m, c)?;
    let distance = distance(m, c, params);
    let orient = orient(m, c, params);
    Ok(MapScores {
        number: number(m, c).ok(),
        difference,
        distance,
        orient,
        interbuilding: interbuilding(m, c, params),
        similarity: difference * distance * orient,
    })
}

/// Seconds from construction start to the participant's done signal.
pub fn total_time(log: &EventLog) -> Result<f64, ScoreError> {
    let start =
        log.construction_start_ms.ok_or_else(|| ScoreError::MalformedLog("no construction-start marker".into()))?;
    let done = log.done_ms.ok_or_else(|| ScoreError::MalformedLog("no done marker".into()))?;
    let elapsed = done
        .checked_sub(start)
        .ok_or_else(|| ScoreError::MalformedLog("done marker precedes construction start".into()))?;
    Ok(elapsed as f64 / 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub t_s: f64,
    pub similarity: f64,
}

/// Similarity after each applied board event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timeline {
    pub samples: Vec<TimelineSample>,
}

impl Timeline {
    /// Collapses runs of samples sharing a timestamp into their last sample.
    pub fn merged(&self) -> Timeline {
        let mut samples: Vec<TimelineSample> = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            match samples.last_mut() {
                Some(last) if last.t_s == s.t_s => *last = *s,
                _ => samples.push(*s),
            }
        }
        Timeline { samples }
    }
}

/// Replays `log` from `initial`, emitting the similarity to `target` after
/// every applied (non-rejected) event.
pub fn score_timeline(
    log: &EventLog,
    target: &MapConfiguration,
    initial: &MapConfiguration,
    geometry: &BoardGeometry,
    params: &MetricParams,
) -> Result<Timeline, ScoreError> {
    let located_target = LocatedMap::from_configuration(target, geometry)?;
    let mut samples = Vec::new();
    for (t_ms, config) in log.replay_states(initial, geometry)? {
        let c = LocatedMap::from_configuration(&config, geometry)?;
        samples
            .push(TimelineSample { t_s: t_ms as f64 / 1000.0, similarity: similarity(&located_target, &c, params)? });
    }
    Ok(Timeline { samples })
}

/// Mean local slope of similarity over time; `None` with fewer than two
/// samples. Coincident timestamps must be merged first (see
/// [`Timeline::merged`]).
pub fn d_sim(timeline: &Timeline) -> Result<Option<f64>, ScoreError> {
    let samples = &timeline.samples;
    if samples.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for pair in samples.windows(2) {
        let dt = pair[1].t_s - pair[0].t_s;
        if dt <= 0.0 {
            return Err(ScoreError::ZeroInterval { t_s: pair[1].t_s });
        }
        total += (pair[1].similarity - pair[0].similarity) / dt;
    }
    Ok(Some(total / (samples.len() - 1) as f64))
}

/// Per-trial result record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
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

impl ScoreReport {
    pub fn scores(&self) -> MapScores {
        MapScores {
            number: self.number,
            difference: self.difference,
            distance: self.distance,
            orient: self.orient,
            interbuilding: self.interbuilding,
            similarity: self.similarity,
        }
    }
}

/// Scores one closed trial from its log. The log must be fully resolved.
pub fn score_trial(
    trial: usize,
    log: &EventLog,
    target: &MapConfiguration,
    initial: &MapConfiguration,
    geometry: &BoardGeometry,
    params: &MetricParams,
) -> Result<(ScoreReport, Timeline), ScoreError> {
    let total_time_s = total_time(log)?;
    let timeline = score_timeline(log, target, initial, geometry, params)?;
    let final_config = log.replay(initial, geometry)?;
    let scores = evaluate(
        &LocatedMap::from_configuration(target, geometry)?,
        &LocatedMap::from_configuration(&final_config, geometry)?,
        params,
    )?;
    let report = ScoreReport {
        trial,
        number: scores.number,
        difference: scores.difference,
        distance: scores.distance,
        orient: scores.orient,
        interbuilding: scores.interbuilding,
        similarity: scores.similarity,
        total_time_s,
        d_sim_per_s: d_sim(&timeline.merged())?,
    };
    Ok((report, timeline))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("metric undefined for an empty target map")]
    EmptyTarget,
    #[error("metric undefined when both maps are empty")]
    EmptyMaps,
    #[error("m_max {m_max} is smaller than the target size {target}")]
    MMaxTooSmall { m_max: usize, target: usize },
    #[error("invalid metric parameters: {0}")]
    Params(String),
    #[error("malformed log: {0}")]
    MalformedLog(String),
    #[error("zero time interval between similarity samples at t={t_s}s")]
    ZeroInterval { t_s: f64 },
    #[error("log has unresolved events: {}", join_ids(.0))]
    Unresolved(Vec<EventId>),
    #[error("event {event_id} cannot be replayed: {source}")]
    Replay { event_id: EventId, source: MapError },
    #[error(transparent)]
    Map(#[from] MapError),
}

fn join_ids(ids: &[EventId]) -> String {
    ids.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(", ")
}

impl From<ReplayError> for ScoreError {
    fn from(e: ReplayError) -> Self {
        match e {
            ReplayError::Unresolved(ids) => ScoreError::Unresolved(ids),
            ReplayError::Invalid { event_id, source } => ScoreError::Replay { event_id, source },
        }
    }
}
