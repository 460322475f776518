//! Board geometry, building models and map configurations.
//!
//! Everything here is a plain value. A [`MapConfiguration`] only changes
//! through [`apply_event`] (or its in-place twin [`MapConfiguration::apply`]),
//! which enforces that a building appears at most once and that no two
//! buildings share a slot.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of building models in the default library.
pub const MODEL_COUNT: u8 = 10;

/// Identifier of one of the building models, rendered as `B01`..`B10`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BuildingId(u8);

impl BuildingId {
    pub fn new(n: u8) -> Result<Self, MapError> {
        if (1..=MODEL_COUNT).contains(&n) {
            Ok(Self(n))
        } else {
            Err(MapError::UnknownModel(format!("B{n:02}")))
        }
    }

    pub fn number(self) -> u8 {
        self.0
    }

    /// All ids of the default library in ascending order.
    pub fn all() -> impl Iterator<Item = BuildingId> {
        (1..=MODEL_COUNT).map(BuildingId)
    }
}

impl fmt::Display for BuildingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{:02}", self.0)
    }
}

impl FromStr for BuildingId {
    type Err = MapError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits =
            s.strip_prefix('B').filter(|d| d.len() == 2).ok_or_else(|| MapError::UnknownModel(s.to_string()))?;
        let n: u8 = digits.parse().map_err(|_| MapError::UnknownModel(s.to_string()))?;
        BuildingId::new(n).map_err(|_| MapError::UnknownModel(s.to_string()))
    }
}

impl TryFrom<String> for BuildingId {
    type Error = MapError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<BuildingId> for String {
    fn from(id: BuildingId) -> Self {
        id.to_string()
    }
}

/// A building identity as captured by the board: either a known model or a
/// read failure (`"unknown"` on the wire).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BuildingRef {
    Known(BuildingId),
    Unknown,
}

impl BuildingRef {
    pub fn known(self) -> Option<BuildingId> {
        match self {
            BuildingRef::Known(id) => Some(id),
            BuildingRef::Unknown => None,
        }
    }

    pub fn is_unknown(self) -> bool {
        matches!(self, BuildingRef::Unknown)
    }
}

impl From<BuildingId> for BuildingRef {
    fn from(id: BuildingId) -> Self {
        BuildingRef::Known(id)
    }
}

impl fmt::Display for BuildingRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BuildingRef::Known(id) => id.fmt(f),
            BuildingRef::Unknown => f.write_str("unknown"),
        }
    }
}

impl TryFrom<String> for BuildingRef {
    type Error = MapError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if value == "unknown" {
            Ok(BuildingRef::Unknown)
        } else {
            value.parse().map(BuildingRef::Known)
        }
    }
}

impl From<BuildingRef> for String {
    fn from(r: BuildingRef) -> Self {
        r.to_string()
    }
}

/// Axis-aligned building orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum Orientation {
    #[default]
    North,
    East,
    South,
    West,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::North, Orientation::East, Orientation::South, Orientation::West];

    pub fn degrees(self) -> u16 {
        match self {
            Orientation::North => 0,
            Orientation::East => 90,
            Orientation::South => 180,
            Orientation::West => 270,
        }
    }

    pub fn from_degrees(deg: u16) -> Result<Self, MapError> {
        match deg {
            0 => Ok(Orientation::North),
            90 => Ok(Orientation::East),
            180 => Ok(Orientation::South),
            270 => Ok(Orientation::West),
            other => Err(MapError::Orientation(other)),
        }
    }
}

impl TryFrom<u16> for Orientation {
    type Error = MapError;

    fn try_from(value: u16) -> Result<Self, Self::Error> {
        Orientation::from_degrees(value)
    }
}

impl From<Orientation> for u16 {
    fn from(o: Orientation) -> Self {
        o.degrees()
    }
}

/// A slot on the placement grid, columns left to right, rows top to bottom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Slot {
    pub col: u32,
    pub row: u32,
}

impl Slot {
    pub const fn new(col: u32, row: u32) -> Self {
        Self { col, row }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.col, self.row)
    }
}

/// A location on the board surface in centimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance.
    pub fn dist(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }
}

/// Physical layout of the placement board.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardGeometry {
    pub columns: u32,
    pub rows: u32,
    pub width_cm: f64,
    pub height_cm: f64,
    pub street_mask: BTreeSet<Slot>,
}

impl Default for BoardGeometry {
    /// 24×16 slots over a 102×71 cm surface with the fixed street pattern:
    /// a full-width street on row 8 crossed by a full-height street on
    /// column 8 (four-way), and a street on column 17 running down from
    /// row 8 (T intersection).
    fn default() -> Self {
        let mut street_mask = BTreeSet::new();
        for col in 0..24 {
            street_mask.insert(Slot::new(col, 8));
        }
        for row in 0..16 {
            street_mask.insert(Slot::new(8, row));
        }
        for row in 9..16 {
            street_mask.insert(Slot::new(17, row));
        }
        Self { columns: 24, rows: 16, width_cm: 102.0, height_cm: 71.0, street_mask }
    }
}

impl BoardGeometry {
    /// A board without streets.
    pub fn open(columns: u32, rows: u32, width_cm: f64, height_cm: f64) -> Self {
        Self { columns, rows, width_cm, height_cm, street_mask: BTreeSet::new() }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.columns == 0 || self.rows == 0 {
            return Err(MapError::Geometry("grid must have at least one slot".into()));
        }
        if !(self.width_cm > 0.0 && self.width_cm.is_finite()) || !(self.height_cm > 0.0 && self.height_cm.is_finite())
        {
            return Err(MapError::Geometry("board dimensions must be positive".into()));
        }
        if let Some(slot) = self.street_mask.iter().find(|s| !self.contains(**s)) {
            return Err(MapError::Geometry(format!("street slot {slot} outside the grid")));
        }
        Ok(())
    }

    pub fn contains(&self, slot: Slot) -> bool {
        slot.col < self.columns && slot.row < self.rows
    }

    pub fn is_street(&self, slot: Slot) -> bool {
        self.street_mask.contains(&slot)
    }

    /// Slots that are inside the grid and not covered by street.
    pub fn buildable_slots(&self) -> impl Iterator<Item = Slot> + '_ {
        (0..self.columns)
            .flat_map(move |col| (0..self.rows).map(move |row| Slot::new(col, row)))
            .filter(move |s| !self.is_street(*s))
    }

    pub fn diagonal(&self) -> f64 {
        diagonal(self.width_cm, self.height_cm)
    }
}

/// Length of the board diagonal.
pub fn diagonal(width_cm: f64, height_cm: f64) -> f64 {
    (width_cm * width_cm + height_cm * height_cm).sqrt()
}

/// Centre of a slot in physical board coordinates.
pub fn slot_to_physical(geometry: &BoardGeometry, slot: Slot) -> Result<Point, MapError> {
    if !geometry.contains(slot) {
        return Err(MapError::OutOfGrid(slot));
    }
    let x = (f64::from(slot.col) + 0.5) * geometry.width_cm / f64::from(geometry.columns);
    let y = (f64::from(slot.row) + 0.5) * geometry.height_cm / f64::from(geometry.rows);
    Ok(Point::new(x, y))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingModel {
    pub id: BuildingId,
    pub label: String,
    /// CSS-style hex colour used by display clients.
    pub color: String,
    /// Extent in slots (columns, rows). Collision uses a single slot.
    pub footprint: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLibrary {
    models: Vec<BuildingModel>,
}

impl ModelLibrary {
    pub fn new(models: Vec<BuildingModel>) -> Result<Self, MapError> {
        let mut seen = BTreeSet::new();
        for m in &models {
            if !seen.insert(m.id) {
                return Err(MapError::Duplicate(m.id));
            }
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[BuildingModel] {
        &self.models
    }

    pub fn get(&self, id: BuildingId) -> Option<&BuildingModel> {
        self.models.iter().find(|m| m.id == id)
    }

    pub fn ids(&self) -> impl Iterator<Item = BuildingId> + '_ {
        self.models.iter().map(|m| m.id)
    }
}

impl Default for ModelLibrary {
    fn default() -> Self {
        const MODELS: [(&str, &str); MODEL_COUNT as usize] = [
            ("Bakery", "#d62728"),
            ("Post Office", "#1f77b4"),
            ("School", "#ffdd00"),
            ("Church", "#f7f7f7"),
            ("Gas Station", "#2ca02c"),
            ("Library", "#ff7f0e"),
            ("Fire Hall", "#8c1c13"),
            ("Bank", "#17becf"),
            ("Grocery", "#9467bd"),
            ("Pharmacy", "#e377c2"),
        ];
        let models = MODELS
            .iter()
            .zip(BuildingId::all())
            .map(|((label, color), id)| BuildingModel {
                id,
                label: (*label).to_string(),
                color: (*color).to_string(),
                footprint: (1, 1),
            })
            .collect();
        Self { models }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Placement {
    #[serde(rename = "id")]
    pub building: BuildingId,
    pub col: u32,
    pub row: u32,
    pub orientation: Orientation,
}

impl Placement {
    pub fn new(building: BuildingId, slot: Slot, orientation: Orientation) -> Self {
        Self { building, col: slot.col, row: slot.row, orientation }
    }

    pub fn slot(&self) -> Slot {
        Slot::new(self.col, self.row)
    }
}

/// An identified board action, the only input that changes a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoardAction {
    Place(Placement),
    Remove { building: BuildingId, slot: Slot },
}

impl BoardAction {
    pub fn building(&self) -> BuildingId {
        match self {
            BoardAction::Place(p) => p.building,
            BoardAction::Remove { building, .. } => *building,
        }
    }
}

/// Buildings on the board, keyed by id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MapConfiguration {
    placements: BTreeMap<BuildingId, Placement>,
}

impl MapConfiguration {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a configuration from a raw placement list, reporting every
    /// violation at once.
    pub fn from_placements(
        placements: impl IntoIterator<Item = Placement>,
        geometry: &BoardGeometry,
    ) -> Result<Self, Vec<Violation>> {
        let placements: Vec<Placement> = placements.into_iter().collect();
        let violations = validate_placements(&placements, geometry);
        if !violations.is_empty() {
            return Err(violations);
        }
        Ok(Self { placements: placements.into_iter().map(|p| (p.building, p)).collect() })
    }

    pub fn len(&self) -> usize {
        self.placements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.placements.is_empty()
    }

    pub fn get(&self, id: BuildingId) -> Option<&Placement> {
        self.placements.get(&id)
    }

    pub fn contains(&self, id: BuildingId) -> bool {
        self.placements.contains_key(&id)
    }

    /// Placements in ascending building-id order.
    pub fn placements(&self) -> impl Iterator<Item = &Placement> {
        self.placements.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = BuildingId> + '_ {
        self.placements.keys().copied()
    }

    pub fn occupant(&self, slot: Slot) -> Option<BuildingId> {
        self.placements.values().find(|p| p.slot() == slot).map(|p| p.building)
    }

    /// Applies an action in place. On error the configuration is unchanged.
    pub fn apply(&mut self, action: &BoardAction, geometry: &BoardGeometry) -> Result<(), MapError> {
        match action {
            BoardAction::Place(p) => {
                if self.contains(p.building) {
                    return Err(MapError::Duplicate(p.building));
                }
                check_free(geometry, p.slot(), |s| self.occupant(s))?;
                self.placements.insert(p.building, *p);
                Ok(())
            }
            BoardAction::Remove { building, .. } => {
                self.placements.remove(building).map(|_| ()).ok_or(MapError::Absent(*building))
            }
        }
    }
}

/// Checks that `slot` can take a new building.
pub(crate) fn check_free(
    geometry: &BoardGeometry,
    slot: Slot,
    occupant: impl Fn(Slot) -> Option<BuildingId>,
) -> Result<(), MapError> {
    let cause = if !geometry.contains(slot) {
        OccupancyCause::OutOfGrid
    } else if geometry.is_street(slot) {
        OccupancyCause::Street
    } else if let Some(other) = occupant(slot) {
        OccupancyCause::Occupied(other)
    } else {
        return Ok(());
    };
    Err(MapError::Occupancy { slot, cause })
}

/// Returns the configuration after `action`.
pub fn apply_event(
    config: &MapConfiguration,
    action: &BoardAction,
    geometry: &BoardGeometry,
) -> Result<MapConfiguration, MapError> {
    let mut next = config.clone();
    next.apply(action, geometry)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateBuilding(BuildingId),
    SlotCollision { slot: Slot, first: BuildingId, second: BuildingId },
    StreetOverlap { building: BuildingId, slot: Slot },
    OutOfGrid { building: BuildingId, slot: Slot },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateBuilding(id) => write!(f, "building {id} placed more than once"),
            Violation::SlotCollision { slot, first, second } => {
                write!(f, "buildings {first} and {second} share slot {slot}")
            }
            Violation::StreetOverlap { building, slot } => {
                write!(f, "building {building} sits on street slot {slot}")
            }
            Violation::OutOfGrid { building, slot } => {
                write!(f, "building {building} at {slot} is outside the grid")
            }
        }
    }
}

/// Every invariant violation in a raw placement list.
pub fn validate_placements(placements: &[Placement], geometry: &BoardGeometry) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut ids = BTreeSet::new();
    let mut slots: BTreeMap<Slot, BuildingId> = BTreeMap::new();
    for p in placements {
        if !ids.insert(p.building) {
            violations.push(Violation::DuplicateBuilding(p.building));
        }
        let slot = p.slot();
        if !geometry.contains(slot) {
            violations.push(Violation::OutOfGrid { building: p.building, slot });
        } else if geometry.is_street(slot) {
            violations.push(Violation::StreetOverlap { building: p.building, slot });
        }
        if let Some(first) = slots.insert(slot, p.building) {
            violations.push(Violation::SlotCollision { slot, first, second: p.building });
        }
    }
    violations
}

pub fn validate_configuration(config: &MapConfiguration, geometry: &BoardGeometry) -> Result<(), Vec<Violation>> {
    let placements: Vec<Placement> = config.placements().copied().collect();
    let violations = validate_placements(&placements, geometry);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccupancyCause {
    Street,
    OutOfGrid,
    Occupied(BuildingId),
    /// Held by a building whose identity has not been resolved yet.
    Unidentified,
}

impl fmt::Display for OccupancyCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OccupancyCause::Street => f.write_str("street"),
            OccupancyCause::OutOfGrid => f.write_str("outside the grid"),
            OccupancyCause::Occupied(id) => write!(f, "occupied by {id}"),
            OccupancyCause::Unidentified => f.write_str("occupied by an unidentified building"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MapError {
    #[error("slot {0} is outside the grid")]
    OutOfGrid(Slot),
    #[error("building {0} is already on the board")]
    Duplicate(BuildingId),
    #[error("building {0} is not on the board")]
    Absent(BuildingId),
    #[error("no building at slot {0}")]
    EmptySlot(Slot),
    #[error("slot {slot} is not free: {cause}")]
    Occupancy { slot: Slot, cause: OccupancyCause },
    #[error("unknown building model {0:?}")]
    UnknownModel(String),
    #[error("orientation {0} is not a multiple of 90 in [0, 360)")]
    Orientation(u16),
    #[error("invalid board geometry: {0}")]
    Geometry(String),
}
