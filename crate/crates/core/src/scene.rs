//! Lane-change ego selection and scene-piece extraction.
//!
//! Selection runs in two steps. First, vehicles that change lane exactly once
//! under the [`SelectionCriteria`] become egos. Then each frame in a 260-frame
//! window around the change becomes a candidate piece. A candidate is kept
//! only when all eight neighbors exist and every history and the ego future
//! are complete.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{FrameEntry, Lane, TrackSet, VehicleId, VehicleTrack, Frame, FRAMES_PER_SECOND};

/// Points per history (3 s at 0.2 s, including the current frame).
pub const HISTORY_LEN: usize = 16;
/// Source frames between history samples.
pub const HISTORY_STRIDE: Frame = 2;
/// Points in the predicted future (5 s at 0.5 s).
pub const FUTURE_LEN: usize = 10;
/// Source frames between future samples.
pub const FUTURE_STRIDE: Frame = 5;
pub const GRID_SLOTS: usize = 9;
/// Grid slot (1-based) of the ego vehicle.
pub const EGO_SLOT: usize = 5;

pub const HISTORY_FRAMES: Frame = (HISTORY_LEN as Frame - 1) * HISTORY_STRIDE;
pub const FUTURE_FRAMES: Frame = FUTURE_LEN as Frame * FUTURE_STRIDE;

pub type Point = [f64; 2];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("vehicle {vehicle} not present at frame {frame}")]
    EgoAbsent { vehicle: VehicleId, frame: Frame },
    #[error("no such vehicle {0}")]
    UnknownVehicle(VehicleId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LaneChangeEvent {
    pub vehicle_id: VehicleId,
    /// First frame whose lane differs from the previous frame's.
    pub change_frame: Frame,
    pub from_lane: Lane,
    pub to_lane: Lane,
}

pub fn detect_lane_changes(track: &VehicleTrack) -> Vec<LaneChangeEvent> {
    track
        .points()
        .windows(2)
        .filter(|w| w[0].lane != w[1].lane)
        .map(|w| LaneChangeEvent {
            vehicle_id: track.vehicle_id,
            change_frame: w[1].frame,
            from_lane: w[0].lane,
            to_lane: w[1].lane,
        })
        .collect()
}

/// Thresholds of the ego selection step. Distances are in feet and compared
/// against the raw source values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionCriteria {
    pub allowed_lanes: Vec<Lane>,
    pub min_span_ft: f64,
    pub change_y_min_ft: f64,
    pub change_y_max_ft: f64,
    /// Half-width of the lateral-divergence window, in frames.
    pub lateral_window: Frame,
    pub min_lateral_range_ft: f64,
}

impl Default for SelectionCriteria {
    fn default() -> Self {
        Self {
            allowed_lanes: vec![1, 2, 3, 4],
            min_span_ft: 1000.0,
            change_y_min_ft: 300.0,
            change_y_max_ft: 1900.0,
            lateral_window: 6 * FRAMES_PER_SECOND,
            min_lateral_range_ft: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EgoSelection {
    pub event: LaneChangeEvent,
    /// The lateral-divergence window ran past the ends of the track.
    pub window_clipped: bool,
}

impl EgoSelection {
    pub fn vehicle_id(&self) -> VehicleId {
        self.event.vehicle_id
    }
}

/// Evaluates all five ego conditions on one track.
pub fn evaluate_ego(track: &VehicleTrack, criteria: &SelectionCriteria) -> Option<EgoSelection> {
    let pts = track.points();
    if !pts.iter().all(|p| criteria.allowed_lanes.contains(&p.lane)) {
        return None;
    }
    let events = detect_lane_changes(track);
    let [event] = events.as_slice() else { return None };
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.y_ft), hi.max(p.y_ft)));
    if hi - lo <= criteria.min_span_ft {
        return None;
    }
    let y_change = track.at(event.change_frame)?.y_ft;
    if !(criteria.change_y_min_ft..=criteria.change_y_max_ft).contains(&y_change) {
        return None;
    }
    let from = event.change_frame - criteria.lateral_window;
    let to = event.change_frame + criteria.lateral_window;
    let window = track.window(from, to);
    let (xl, xh) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x_ft), hi.max(p.x_ft)));
    if xh - xl <= criteria.min_lateral_range_ft {
        return None;
    }
    Some(EgoSelection { event: *event, window_clipped: !track.contains(from) || !track.contains(to) })
}

/// Egos in vehicle-id order.
pub fn select_ego_vehicles(set: &TrackSet, criteria: &SelectionCriteria) -> Vec<EgoSelection> {
    set.tracks().values().filter_map(|t| evaluate_ego(t, criteria)).collect()
}

/// Vehicle ids by grid slot; index 0 holds slot 1.
///
/// Slots 1–3 are the left lane (follower, nearest, preceder), 4–6 the ego
/// lane (follower, ego, preceder), 7–9 the right lane. Slot `k` sits at row
/// `(k - 1) / 3`, column `(k - 1) % 3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGrid {
    pub slots: [VehicleId; GRID_SLOTS],
}

impl NeighborGrid {
    /// 1-based slot lookup.
    pub fn slot(&self, k: usize) -> VehicleId {
        self.slots[k - 1]
    }

    pub fn position(k: usize) -> (usize, usize) {
        ((k - 1) / 3, (k - 1) % 3)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NeighborAssignment {
    Full(NeighborGrid),
    /// 1-based slots that could not be filled.
    Incomplete(Vec<usize>),
}

fn key(e: &FrameEntry) -> (f64, VehicleId) {
    (e.y_m, e.vehicle_id)
}

fn closer(a: (f64, VehicleId), b: (f64, VehicleId)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Nearest vehicle strictly ahead of `y` in `lane`, ties to the smaller id.
fn preceder<'a>(entries: &'a [FrameEntry], lane: Lane, y: f64) -> Option<&'a FrameEntry> {
    entries
        .iter()
        .filter(|e| e.lane == lane && e.y_m > y)
        .fold(None, |best: Option<&FrameEntry>, e| match best {
            Some(b) if !closer(key(e), key(b)) => Some(b),
            _ => Some(e),
        })
}

/// Nearest vehicle strictly behind `y` in `lane`, ties to the smaller id.
fn follower<'a>(entries: &'a [FrameEntry], lane: Lane, y: f64) -> Option<&'a FrameEntry> {
    entries
        .iter()
        .filter(|e| e.lane == lane && e.y_m < y)
        .fold(None, |best: Option<&FrameEntry>, e| match best {
            Some(b) if !closer((-e.y_m, e.vehicle_id), (-b.y_m, b.vehicle_id)) => Some(b),
            _ => Some(e),
        })
}

fn nearest<'a>(entries: &'a [FrameEntry], lane: Lane, y: f64, exclude: VehicleId) -> Option<&'a FrameEntry> {
    entries
        .iter()
        .filter(|e| e.lane == lane && e.vehicle_id != exclude)
        .fold(None, |best: Option<&FrameEntry>, e| match best {
            Some(b) if !closer(((e.y_m - y).abs(), e.vehicle_id), ((b.y_m - y).abs(), b.vehicle_id)) => Some(b),
            _ => Some(e),
        })
}

/// Fills the 3×3 directional grid around `ego` from the vehicles of one frame.
///
/// Left is the lane with the next-lower lane id.
pub fn assign_neighbors(entries: &[FrameEntry], ego: VehicleId, frame: Frame) -> Result<NeighborAssignment, SceneError> {
    let me = entries
        .iter()
        .find(|e| e.vehicle_id == ego)
        .ok_or(SceneError::EgoAbsent { vehicle: ego, frame })?;
    let mut slots: [Option<VehicleId>; GRID_SLOTS] = [None; GRID_SLOTS];
    slots[EGO_SLOT - 1] = Some(ego);
    slots[3] = follower(entries, me.lane, me.y_m).map(|e| e.vehicle_id);
    slots[5] = preceder(entries, me.lane, me.y_m).map(|e| e.vehicle_id);
    let side_lanes = [(me.lane.checked_sub(1).filter(|&l| l >= 1), 0usize), (me.lane.checked_add(1), 6usize)];
    for (lane, base) in side_lanes {
        let Some(lane) = lane else { continue };
        if let Some(n) = nearest(entries, lane, me.y_m, ego) {
            slots[base] = follower(entries, lane, n.y_m).map(|e| e.vehicle_id);
            slots[base + 1] = Some(n.vehicle_id);
            slots[base + 2] = preceder(entries, lane, n.y_m).map(|e| e.vehicle_id);
        }
    }
    let missing: Vec<usize> = slots.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i + 1).collect();
    if !missing.is_empty() {
        return Ok(NeighborAssignment::Incomplete(missing));
    }
    Ok(NeighborAssignment::Full(NeighborGrid { slots: slots.map(|s| s.expect("checked")) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PieceLabel {
    /// Current frame precedes the lane change.
    LaneChanging,
    /// Current frame is at or after the lane change.
    LaneKeeping,
}

impl PieceLabel {
    pub fn for_offset(t_frame: Frame, change_frame: Frame) -> Self {
        if t_frame < change_frame {
            Self::LaneChanging
        } else {
            Self::LaneKeeping
        }
    }
}

impl fmt::Display for PieceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LaneChanging => "lane-changing",
            Self::LaneKeeping => "lane-keeping",
        })
    }
}

/// One sample: nine ego-centered histories and the ego's future, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePiece {
    pub ego_id: VehicleId,
    pub t_frame: Frame,
    pub change_frame: Frame,
    pub label: PieceLabel,
    /// Ego's absolute position at `t_frame`; the origin of all coordinates.
    pub origin: Point,
    pub grid: NeighborGrid,
    /// Indexed by slot − 1; points ordered oldest to newest, `[lateral, longitudinal]`.
    pub histories: Vec<Vec<Point>>,
    pub future: Vec<Point>,
}

impl ScenePiece {
    pub fn ego_history(&self) -> &[Point] {
        &self.histories[EGO_SLOT - 1]
    }

    /// Frames relative to the lane change (negative before it).
    pub fn offset(&self) -> Frame {
        self.t_frame - self.change_frame
    }

    /// Applies `f` to every point of every trajectory.
    pub fn map_points(&self, mut f: impl FnMut(Point) -> Point) -> ScenePiece {
        let mut out = self.clone();
        out.histories.iter_mut().flatten().for_each(|p| *p = f(*p));
        out.future.iter_mut().for_each(|p| *p = f(*p));
        out
    }

    /// Checks the structural invariants of a piece.
    pub fn validate(&self) -> Result<(), String> {
        if self.histories.len() != GRID_SLOTS {
            return Err(format!("{} histories", self.histories.len()));
        }
        if let Some(h) = self.histories.iter().find(|h| h.len() != HISTORY_LEN) {
            return Err(format!("history of length {}", h.len()));
        }
        if self.future.len() != FUTURE_LEN {
            return Err(format!("future of length {}", self.future.len()));
        }
        Ok(())
    }
}

/// Why a candidate frame produced no piece.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateRejection {
    EgoAbsent,
    IncompleteFuture,
    IncompleteGrid,
    IncompleteHistory,
}

/// Candidate current frames: 130 before the change through 129 after.
pub fn candidate_frames(change_frame: Frame) -> std::ops::RangeInclusive<Frame> {
    (change_frame - 130)..=(change_frame + 129)
}

fn sample(track: &VehicleTrack, frames: impl Iterator<Item = Frame>, origin: Point) -> Option<Vec<Point>> {
    frames.map(|f| track.at(f).map(|p| [p.x_m - origin[0], p.y_m - origin[1]])).collect()
}

/// Builds the piece for `ego` at `t`, or says why none exists.
pub fn build_piece(set: &TrackSet, ego: &EgoSelection, t: Frame) -> Result<ScenePiece, CandidateRejection> {
    let track = set.track(ego.vehicle_id()).ok_or(CandidateRejection::EgoAbsent)?;
    let me = track.at(t).ok_or(CandidateRejection::EgoAbsent)?;
    if !track.contains(t + FUTURE_FRAMES) {
        return Err(CandidateRejection::IncompleteFuture);
    }
    let grid = match assign_neighbors(set.frame(t), ego.vehicle_id(), t) {
        Ok(NeighborAssignment::Full(g)) => g,
        Ok(NeighborAssignment::Incomplete(_)) => return Err(CandidateRejection::IncompleteGrid),
        Err(_) => return Err(CandidateRejection::EgoAbsent),
    };
    let origin = [me.x_m, me.y_m];
    let history_frames = || (0..HISTORY_LEN as Frame).map(|i| t - HISTORY_FRAMES + i * HISTORY_STRIDE);
    let mut histories = Vec::with_capacity(GRID_SLOTS);
    for id in grid.slots {
        let vt = set.track(id).ok_or(CandidateRejection::IncompleteHistory)?;
        histories.push(sample(vt, history_frames(), origin).ok_or(CandidateRejection::IncompleteHistory)?);
    }
    let future_frames = (1..=FUTURE_LEN as Frame).map(|i| t + i * FUTURE_STRIDE);
    let future = sample(track, future_frames, origin).ok_or(CandidateRejection::IncompleteFuture)?;
    Ok(ScenePiece {
        ego_id: ego.vehicle_id(),
        t_frame: t,
        change_frame: ego.event.change_frame,
        label: PieceLabel::for_offset(t, ego.event.change_frame),
        origin,
        grid,
        histories,
        future,
    })
}

/// Tally of what happened to every candidate frame.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionTally {
    pub candidates: usize,
    pub ego_absent: usize,
    pub incomplete_future: usize,
    pub incomplete_grid: usize,
    pub incomplete_history: usize,
}

/// All pieces of all egos, in ego order then frame order.
pub fn extract_pieces(set: &TrackSet, egos: &[EgoSelection]) -> (Vec<ScenePiece>, ExtractionTally) {
    let mut tally = ExtractionTally::default();
    let mut sorted: Vec<&EgoSelection> = egos.iter().collect();
    sorted.sort_by_key(|e| (e.vehicle_id(), e.event.change_frame));
    let mut pieces = Vec::new();
    for ego in sorted {
        for t in candidate_frames(ego.event.change_frame) {
            tally.candidates += 1;
            match build_piece(set, ego, t) {
                Ok(p) => pieces.push(p),
                Err(CandidateRejection::EgoAbsent) => tally.ego_absent += 1,
                Err(CandidateRejection::IncompleteFuture) => tally.incomplete_future += 1,
                Err(CandidateRejection::IncompleteGrid) => tally.incomplete_grid += 1,
                Err(CandidateRejection::IncompleteHistory) => tally.incomplete_history += 1,
            }
        }
    }
    (pieces, tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{TrackPoint, FEET_TO_METERS};

    fn track(id: u32, start: Frame, samples: &[(f64, f64, Lane)]) -> VehicleTrack {
        let pts = samples
            .iter()
            .enumerate()
            .map(|(i, &(x, y, lane))| TrackPoint {
                frame: start + i as Frame,
                x_ft: x,
                y_ft: y,
                x_m: x * FEET_TO_METERS,
                y_m: y * FEET_TO_METERS,
                lane,
            })
            .collect();
        VehicleTrack::new(VehicleId(id), pts).unwrap()
    }

    fn entry(id: u32, lane: Lane, y: f64) -> FrameEntry {
        FrameEntry { vehicle_id: VehicleId(id), lane, x_m: 0.0, y_m: y }
    }

    #[test]
    fn no_change_no_events() {
        let t = track(1, 0, &[(0.0, 0.0, 3); 5]);
        assert!(detect_lane_changes(&t).is_empty());
    }

    #[test]
    fn single_change_event() {
        let t = track(1, 0, &[(0.0, 0.0, 3), (0.0, 1.0, 3), (0.0, 2.0, 2), (0.0, 3.0, 2)]);
        assert_eq!(
            detect_lane_changes(&t),
            vec![LaneChangeEvent { vehicle_id: VehicleId(1), change_frame: 2, from_lane: 3, to_lane: 2 }]
        );
    }

    #[test]
    fn ego_entirely_in_lane_five_excluded() {
        let samples: Vec<_> = (0..200).map(|i| (0.0, i as f64 * 10.0, 5)).collect();
        assert!(evaluate_ego(&track(1, 0, &samples), &SelectionCriteria::default()).is_none());
    }

    #[test]
    fn span_threshold_is_strict() {
        // 1000 ft exactly fails, the rest of the conditions hold.
        let samples: Vec<_> = (0..=100)
            .map(|i| {
                let lane = if i < 50 { 2 } else { 3 };
                let x = if i < 50 { 18.0 } else { 30.0 };
                (x, 300.0 + i as f64 * 10.0, lane)
            })
            .collect();
        assert!(evaluate_ego(&track(1, 0, &samples), &SelectionCriteria::default()).is_none());
        let mut longer = samples.clone();
        longer.push((30.0, 1300.5, 3));
        assert!(evaluate_ego(&track(1, 0, &longer), &SelectionCriteria::default()).is_some());
    }

    #[test]
    fn ego_alone_is_rejected() {
        let out = assign_neighbors(&[entry(1, 2, 0.0)], VehicleId(1), 0).unwrap();
        assert_eq!(out, NeighborAssignment::Incomplete(vec![1, 2, 3, 4, 6, 7, 8, 9]));
    }

    #[test]
    fn ego_missing_is_error() {
        assert!(assign_neighbors(&[entry(1, 2, 0.0)], VehicleId(2), 7).is_err());
    }

    #[test]
    fn lane_one_has_no_left_neighbors() {
        let entries = [entry(1, 1, 0.0), entry(2, 1, 10.0), entry(3, 1, -10.0), entry(4, 2, 0.0)];
        let out = assign_neighbors(&entries, VehicleId(1), 0).unwrap();
        assert_eq!(out, NeighborAssignment::Incomplete(vec![1, 2, 3, 7, 9]));
    }

    #[test]
    fn equidistant_tie_picks_smaller_id() {
        let mut entries = vec![
            entry(50, 2, 0.0),
            entry(51, 2, 20.0),
            entry(52, 2, -20.0),
            entry(31, 1, 5.0),
            entry(30, 1, -5.0),
            entry(32, 1, 40.0),
            entry(33, 1, -40.0),
            entry(70, 3, 0.0),
            entry(71, 3, 30.0),
            entry(72, 3, -30.0),
        ];
        let NeighborAssignment::Full(g) = assign_neighbors(&entries, VehicleId(50), 0).unwrap() else { panic!() };
        assert_eq!(g.slot(2), VehicleId(30));
        // its neighbors are computed relative to vehicle 30 at y = -5
        assert_eq!(g.slot(3), VehicleId(31));
        assert_eq!(g.slot(1), VehicleId(33));
        entries.reverse();
        let NeighborAssignment::Full(g2) = assign_neighbors(&entries, VehicleId(50), 0).unwrap() else { panic!() };
        assert_eq!(g, g2);
    }

    #[test]
    fn slot_positions_follow_numbering() {
        assert_eq!(NeighborGrid::position(1), (0, 0));
        assert_eq!(NeighborGrid::position(5), (1, 1));
        assert_eq!(NeighborGrid::position(9), (2, 2));
        assert_eq!(NeighborGrid::position(6), (1, 2));
    }

    #[test]
    fn candidate_window_has_260_frames() {
        let w = candidate_frames(1000);
        assert_eq!(w.clone().count(), 260);
        assert_eq!((*w.start(), *w.end()), (870, 1129));
    }

    #[test]
    fn label_by_sign_of_offset() {
        assert_eq!(PieceLabel::for_offset(9, 10), PieceLabel::LaneChanging);
        assert_eq!(PieceLabel::for_offset(10, 10), PieceLabel::LaneKeeping);
    }
}
