//! NGSIM-style trajectory ingestion.
//!
//! Rows are grouped per vehicle, sorted by frame, and converted from feet to
//! meters exactly once here. Tracks with frame gaps or duplicated frames are
//! dropped and listed in the [`IngestReport`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FEET_TO_METERS: f64 = 0.3048;

/// Source sampling rate of NGSIM trajectories.
pub const FRAMES_PER_SECOND: i64 = 10;

pub const TRACKS_MAGIC: &[u8] = b"TPLAB-TRACKS-v1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u32);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub type Frame = i64;
pub type Lane = u8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("column configuration: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("no records in input")]
    Empty,
    #[error("snapshot: {0}")]
    Snapshot(String),
    #[error("vehicle {0} present in both track sets")]
    MergeConflict(VehicleId),
}

/// One row of the source file, still in feet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRecord {
    pub vehicle_id: VehicleId,
    pub frame: Frame,
    /// Lateral position, feet.
    pub local_x: f64,
    /// Longitudinal position, feet.
    pub local_y: f64,
    pub lane: Lane,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackPoint {
    pub frame: Frame,
    pub x_ft: f64,
    pub y_ft: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub lane: Lane,
}

impl TrackPoint {
    pub fn from_record(r: &RawRecord) -> Self {
        Self {
            frame: r.frame,
            x_ft: r.local_x,
            y_ft: r.local_y,
            x_m: r.local_x * FEET_TO_METERS,
            y_m: r.local_y * FEET_TO_METERS,
            lane: r.lane,
        }
    }
}

/// Gap-free, frame-ordered trajectory of one vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleTrack {
    pub vehicle_id: VehicleId,
    points: Vec<TrackPoint>,
}

impl VehicleTrack {
    /// Validates contiguity: consecutive frames must differ by exactly one.
    pub fn new(vehicle_id: VehicleId, points: Vec<TrackPoint>) -> Result<Self, TrackDefect> {
        if points.is_empty() {
            return Err(TrackDefect::Empty);
        }
        for w in points.windows(2) {
            if w[1].frame == w[0].frame {
                return Err(TrackDefect::Duplicate { frame: w[0].frame });
            }
            if w[1].frame != w[0].frame + 1 {
                return Err(TrackDefect::Gap { after: w[0].frame, before: w[1].frame });
            }
        }
        Ok(Self { vehicle_id, points })
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn first_frame(&self) -> Frame {
        self.points[0].frame
    }

    pub fn last_frame(&self) -> Frame {
        self.points[self.points.len() - 1].frame
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, frame: Frame) -> bool {
        frame >= self.first_frame() && frame <= self.last_frame()
    }

    pub fn at(&self, frame: Frame) -> Option<&TrackPoint> {
        if !self.contains(frame) {
            return None;
        }
        self.points.get((frame - self.first_frame()) as usize)
    }

    /// Points with frame in `[from, to]`, clipped to the track.
    pub fn window(&self, from: Frame, to: Frame) -> &[TrackPoint] {
        let lo = from.max(self.first_frame());
        let hi = to.min(self.last_frame());
        if lo > hi {
            return &[];
        }
        let base = self.first_frame();
        &self.points[(lo - base) as usize..=(hi - base) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackDefect {
    Empty,
    Gap { after: Frame, before: Frame },
    Duplicate { frame: Frame },
}

/// A vehicle present in some frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameEntry {
    pub vehicle_id: VehicleId,
    pub lane: Lane,
    pub x_m: f64,
    pub y_m: f64,
}

/// Frame number to the vehicles present in it, ordered by vehicle id.
pub type FrameIndex = BTreeMap<Frame, Vec<FrameEntry>>;

/// Immutable set of vehicle tracks plus the matching per-frame view.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackSet {
    tracks: BTreeMap<VehicleId, VehicleTrack>,
    frames: FrameIndex,
}

impl TrackSet {
    pub fn from_tracks(tracks: impl IntoIterator<Item = VehicleTrack>) -> Self {
        let tracks: BTreeMap<_, _> = tracks.into_iter().map(|t| (t.vehicle_id, t)).collect();
        let frames = build_frame_index(tracks.values());
        Self { tracks, frames }
    }

    pub fn tracks(&self) -> &BTreeMap<VehicleId, VehicleTrack> {
        &self.tracks
    }

    pub fn track(&self, id: VehicleId) -> Option<&VehicleTrack> {
        self.tracks.get(&id)
    }

    pub fn frames(&self) -> &FrameIndex {
        &self.frames
    }

    pub fn frame(&self, frame: Frame) -> &[FrameEntry] {
        self.frames.get(&frame).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    /// Union of two disjoint track sets (e.g. parsed from separate files).
    pub fn merge(self, other: TrackSet) -> Result<TrackSet, IngestError> {
        let mut tracks = self.tracks;
        for (id, t) in other.tracks {
            if tracks.contains_key(&id) {
                return Err(IngestError::MergeConflict(id));
            }
            tracks.insert(id, t);
        }
        Ok(Self::from_tracks(tracks.into_values()))
    }
}

/// For every frame, exactly the vehicles whose track contains it.
pub fn build_frame_index<'a>(tracks: impl IntoIterator<Item = &'a VehicleTrack>) -> FrameIndex {
    let mut index = FrameIndex::new();
    for t in tracks {
        for p in t.points() {
            index.entry(p.frame).or_default().push(FrameEntry {
                vehicle_id: t.vehicle_id,
                lane: p.lane,
                x_m: p.x_m,
                y_m: p.y_m,
            });
        }
    }
    for entries in index.values_mut() {
        entries.sort_by_key(|e| e.vehicle_id);
    }
    index
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedTrack {
    pub vehicle_id: VehicleId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows: usize,
    pub tracks: usize,
    pub rejected: Vec<RejectedTrack>,
}

impl IngestReport {
    pub fn gap_count(&self) -> usize {
        self.rejected.iter().filter(|r| r.reason.starts_with("gap")).count()
    }
}

impl fmt::Display for IngestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows:     {}", self.rows)?;
        writeln!(f, "tracks:   {}", self.tracks)?;
        writeln!(f, "rejected: {} ({} with gaps)", self.rejected.len(), self.gap_count())?;
        for r in &self.rejected {
            writeln!(f, "  vehicle {}: {}", r.vehicle_id, r.reason)?;
        }
        Ok(())
    }
}

/// Column positions of the five fields used from each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnMap {
    pub vehicle_id: usize,
    pub frame_id: usize,
    pub local_x: usize,
    pub local_y: usize,
    pub lane_id: usize,
}

impl ColumnMap {
    pub const FIELDS: [&'static str; 5] = ["Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "Lane_ID"];

    /// Positions in the headerless whitespace-delimited NGSIM distribution.
    pub const NGSIM_RAW: ColumnMap = ColumnMap { vehicle_id: 0, frame_id: 1, local_x: 4, local_y: 5, lane_id: 13 };

    fn max_index(&self) -> usize {
        *[self.vehicle_id, self.frame_id, self.local_x, self.local_y, self.lane_id].iter().max().unwrap()
    }

    /// Resolves each field from explicit overrides first, then the header
    /// (case-insensitive), then the raw NGSIM layout when there is no header.
    pub fn resolve(header: Option<&[String]>, overrides: &HashMap<String, usize>) -> Result<Self, IngestError> {
        let lookup = |field: &str, fallback: usize| -> Result<usize, IngestError> {
            if let Some((_, &i)) = overrides.iter().find(|(k, _)| k.eq_ignore_ascii_case(field)) {
                return Ok(i);
            }
            match header {
                Some(h) => h
                    .iter()
                    .position(|c| c.trim().eq_ignore_ascii_case(field))
                    .ok_or_else(|| IngestError::Config(format!("missing column `{field}`"))),
                None => Ok(fallback),
            }
        };
        for key in overrides.keys() {
            if !Self::FIELDS.iter().any(|f| f.eq_ignore_ascii_case(key)) {
                return Err(IngestError::Config(format!("unknown field `{key}` in column map")));
            }
        }
        let d = Self::NGSIM_RAW;
        Ok(Self {
            vehicle_id: lookup("Vehicle_ID", d.vehicle_id)?,
            frame_id: lookup("Frame_ID", d.frame_id)?,
            local_x: lookup("Local_X", d.local_x)?,
            local_y: lookup("Local_Y", d.local_y)?,
            lane_id: lookup("Lane_ID", d.lane_id)?,
        })
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn parse_int(cell: &str, what: &str, line: usize) -> Result<i64, IngestError> {
    if let Ok(v) = cell.parse::<i64>() {
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Ok(v as i64),
        _ => Err(IngestError::Row { line, msg: format!("{what}: cannot parse `{cell}` as integer") }),
    }
}

fn parse_float(cell: &str, what: &str, line: usize) -> Result<f64, IngestError> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(IngestError::Row { line, msg: format!("{what}: cannot parse `{cell}` as number") }),
    }
}

fn parse_row(fields: &[&str], cols: &ColumnMap, line: usize) -> Result<RawRecord, IngestError> {
    if fields.len() <= cols.max_index() {
        return Err(IngestError::Row {
            line,
            msg: format!("expected at least {} fields, found {}", cols.max_index() + 1, fields.len()),
        });
    }
    let vid = parse_int(fields[cols.vehicle_id], "Vehicle_ID", line)?;
    let frame = parse_int(fields[cols.frame_id], "Frame_ID", line)?;
    let lane = parse_int(fields[cols.lane_id], "Lane_ID", line)?;
    let vehicle_id = u32::try_from(vid)
        .map(VehicleId)
        .map_err(|_| IngestError::Row { line, msg: format!("Vehicle_ID {vid} out of range") })?;
    if frame < 0 {
        return Err(IngestError::Row { line, msg: format!("negative Frame_ID {frame}") });
    }
    let lane = Lane::try_from(lane)
        .ok()
        .filter(|&l| l >= 1)
        .ok_or_else(|| IngestError::Row { line, msg: format!("Lane_ID {lane} out of range") })?;
    Ok(RawRecord {
        vehicle_id,
        frame,
        local_x: parse_float(fields[cols.local_x], "Local_X", line)?,
        local_y: parse_float(fields[cols.local_y], "Local_Y", line)?,
        lane,
    })
}

/// Parses delimited text (comma or whitespace) with an optional header row.
pub fn parse_records(
    reader: impl BufRead,
    overrides: &HashMap<String, usize>,
) -> Result<Vec<RawRecord>, IngestError> {
    let mut records = Vec::new();
    let mut cols: Option<ColumnMap> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| IngestError::Io { path: format!("line {lineno}"), source: e })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields = split_fields(trimmed);
        let cmap = match cols {
            Some(c) => c,
            None => {
                let is_header = fields[0].parse::<f64>().is_err();
                let header: Option<Vec<String>> = is_header.then(|| fields.iter().map(|s| s.to_string()).collect());
                let c = ColumnMap::resolve(header.as_deref(), overrides)?;
                cols = Some(c);
                if is_header {
                    continue;
                }
                c
            }
        };
        records.push(parse_row(&fields, &cmap, lineno)?);
    }
    if records.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(records)
}

/// Groups records into tracks; defective tracks are reported and excluded.
pub fn assemble_tracks(records: &[RawRecord]) -> (TrackSet, IngestReport) {
    let mut grouped: BTreeMap<VehicleId, Vec<TrackPoint>> = BTreeMap::new();
    for r in records {
        grouped.entry(r.vehicle_id).or_default().push(TrackPoint::from_record(r));
    }
    let mut report = IngestReport { rows: records.len(), ..Default::default() };
    let mut tracks = Vec::with_capacity(grouped.len());
    for (id, mut points) in grouped {
        points.sort_by_key(|p| p.frame);
        match VehicleTrack::new(id, points) {
            Ok(t) => tracks.push(t),
            Err(defect) => report.rejected.push(RejectedTrack {
                vehicle_id: id,
                reason: match defect {
                    TrackDefect::Gap { after, before } if before == after + 2 => format!("gap at frame {}", after + 1),
                    TrackDefect::Gap { after, before } => format!("gap at frames {}..={}", after + 1, before - 1),
                    TrackDefect::Duplicate { frame } => format!("duplicate frame {frame}"),
                    TrackDefect::Empty => "no points".to_string(),
                },
            }),
        }
    }
    report.tracks = tracks.len();
    (TrackSet::from_tracks(tracks), report)
}

pub fn parse_trajectory_file(
    path: &Path,
    overrides: &HashMap<String, usize>,
) -> Result<(TrackSet, IngestReport), IngestError> {
    let file = File::open(path).map_err(|e| IngestError::Io { path: path.display().to_string(), source: e })?;
    let records = parse_records(BufReader::new(file), overrides)?;
    Ok(assemble_tracks(&records))
}

fn snap_err(e: std::io::Error) -> IngestError {
    IngestError::Snapshot(e.to_string())
}

/// Binary snapshot: magic line, a JSON provenance line, then per track its
/// id, point count and `(frame, x_ft, y_ft, x_m, y_m, lane)` records, all
/// little-endian.
pub fn write_snapshot(set: &TrackSet, provenance: &BTreeMap<String, String>, mut w: impl Write) -> Result<(), IngestError> {
    w.write_all(TRACKS_MAGIC).map_err(snap_err)?;
    let json = serde_json::to_string(provenance).map_err(|e| IngestError::Snapshot(e.to_string()))?;
    w.write_all(json.as_bytes()).map_err(snap_err)?;
    w.write_all(b"\n").map_err(snap_err)?;
    w.write_u64::<LittleEndian>(set.len() as u64).map_err(snap_err)?;
    for t in set.tracks().values() {
        w.write_u32::<LittleEndian>(t.vehicle_id.0).map_err(snap_err)?;
        w.write_u64::<LittleEndian>(t.len() as u64).map_err(snap_err)?;
        for p in t.points() {
            w.write_i64::<LittleEndian>(p.frame).map_err(snap_err)?;
            for v in [p.x_ft, p.y_ft, p.x_m, p.y_m] {
                w.write_f64::<LittleEndian>(v).map_err(snap_err)?;
            }
            w.write_u8(p.lane).map_err(snap_err)?;
        }
    }
    Ok(())
}

/// Reads a snapshot and the provenance it was written with.
pub fn read_snapshot(mut r: impl Read) -> Result<(TrackSet, BTreeMap<String, String>), IngestError> {
    let mut magic = vec![0u8; TRACKS_MAGIC.len()];
    r.read_exact(&mut magic).map_err(snap_err)?;
    if magic != TRACKS_MAGIC {
        return Err(IngestError::Snapshot("bad magic; not a TPLAB-TRACKS-v1 file".into()));
    }
    let line = crate::model::read_line(&mut r).map_err(|e| IngestError::Snapshot(e.to_string()))?;
    let provenance = serde_json::from_str(&line).map_err(|e| IngestError::Snapshot(e.to_string()))?;
    let n = r.read_u64::<LittleEndian>().map_err(snap_err)?;
    let mut tracks = Vec::new();
    for _ in 0..n {
        let id = VehicleId(r.read_u32::<LittleEndian>().map_err(snap_err)?);
        let np = r.read_u64::<LittleEndian>().map_err(snap_err)?;
        let mut points = Vec::new();
        for _ in 0..np {
            let frame = r.read_i64::<LittleEndian>().map_err(snap_err)?;
            let mut v = [0.0; 4];
            for x in &mut v {
                *x = r.read_f64::<LittleEndian>().map_err(snap_err)?;
            }
            let lane = r.read_u8().map_err(snap_err)?;
            points.push(TrackPoint { frame, x_ft: v[0], y_ft: v[1], x_m: v[2], y_m: v[3], lane });
        }
        let track = VehicleTrack::new(id, points)
            .map_err(|d| IngestError::Snapshot(format!("vehicle {id}: {d:?}")))?;
        tracks.push(track);
    }
    Ok((TrackSet::from_tracks(tracks), provenance))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<(TrackSet, IngestReport), IngestError> {
        let records = parse_records(text.as_bytes(), &HashMap::new())?;
        Ok(assemble_tracks(&records))
    }

    #[test]
    fn converts_feet_to_meters() {
        let (set, report) = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6.0,100,3\n1,11,6.0,105,3\n").unwrap();
        assert_eq!(report.tracks, 1);
        let t = set.track(VehicleId(1)).unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.points()[0].x_m - 1.8288).abs() < 1e-12);
        assert_eq!(t.points()[1].y_m, 105.0 * 0.3048);
    }

    #[test]
    fn gap_excludes_track() {
        let (set, report) = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6,100,3\n1,12,6,110,3\n").unwrap();
        assert!(set.is_empty());
        assert_eq!(report.rejected, vec![RejectedTrack { vehicle_id: VehicleId(1), reason: "gap at frame 11".into() }]);
    }

    #[test]
    fn duplicate_frame_excludes_track() {
        let (set, report) = parse("Vehicle_ID Frame_ID Local_X Local_Y Lane_ID\n1 10 6 100 3\n1 10 6 100 3\n").unwrap();
        assert!(set.is_empty());
        assert_eq!(report.rejected[0].reason, "duplicate frame 10");
    }

    #[test]
    fn missing_column_is_config_error() {
        let err = parse("Vehicle_ID,Frame_ID,Local_X,Lane_ID\n1,10,6,3\n").unwrap_err();
        assert!(matches!(err, IngestError::Config(m) if m.contains("Local_Y")));
    }

    #[test]
    fn bad_cell_reports_line() {
        let err = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6,100,3\n1,11,abc,100,3\n").unwrap_err();
        assert!(matches!(err, IngestError::Row { line: 3, .. }), "{err}");
    }

    #[test]
    fn empty_input() {
        assert!(matches!(parse("").unwrap_err(), IngestError::Empty));
        assert!(matches!(parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n").unwrap_err(), IngestError::Empty));
    }

    #[test]
    fn headerless_uses_raw_ngsim_layout() {
        let row = "7 100 1 1118846980200 16.467 35.381 6451203.126 1873252.043 14.5 4.9 2 40.00 0.00 2 0 0 0.00 0.00";
        let (set, _) = parse(row).unwrap();
        let p = set.track(VehicleId(7)).unwrap().points()[0];
        assert_eq!((p.frame, p.x_ft, p.y_ft, p.lane), (100, 16.467, 35.381, 2));
    }

    #[test]
    fn overrides_take_precedence() {
        let mut map = HashMap::new();
        for (i, f) in ["lane_id", "local_y", "local_x", "frame_id", "vehicle_id"].iter().enumerate() {
            map.insert(f.to_string(), i);
        }
        let records = parse_records("3,200.5,12,5,9\n".as_bytes(), &map).unwrap();
        assert_eq!(
            records[0],
            RawRecord { vehicle_id: VehicleId(9), frame: 5, local_x: 12.0, local_y: 200.5, lane: 3 }
        );
        map.insert("speed".into(), 7);
        assert!(matches!(parse_records("3,1,1,1,1\n".as_bytes(), &map), Err(IngestError::Config(_))));
    }

    #[test]
    fn rejects_invalid_lane_and_frame() {
        assert!(parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6,100,0\n").is_err());
        assert!(parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,-1,6,100,2\n").is_err());
    }

    #[test]
    fn frame_index_small_cases() {
        assert!(build_frame_index(std::iter::empty()).is_empty());
        let pts = (0..10)
            .map(|f| TrackPoint { frame: f, x_ft: 0.0, y_ft: f as f64, x_m: 0.0, y_m: f as f64 * FEET_TO_METERS, lane: 1 })
            .collect();
        let t = VehicleTrack::new(VehicleId(4), pts).unwrap();
        let idx = build_frame_index([&t]);
        assert_eq!(idx.len(), 10);
        assert!(idx.values().all(|v| v.len() == 1));
    }

    #[test]
    fn window_clips_to_track() {
        let pts = (5..15)
            .map(|f| TrackPoint { frame: f, x_ft: f as f64, y_ft: 0.0, x_m: 0.0, y_m: 0.0, lane: 1 })
            .collect();
        let t = VehicleTrack::new(VehicleId(1), pts).unwrap();
        assert_eq!(t.window(0, 7).len(), 3);
        assert_eq!(t.window(13, 40).len(), 2);
        assert!(t.window(20, 30).is_empty());
        assert_eq!(t.at(9).unwrap().x_ft, 9.0);
        assert!(t.at(15).is_none());
    }

    #[test]
    fn snapshot_round_trip() {
        let (set, _) = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6.1,100,3\n1,11,6.2,105,3\n2,10,18,90,2\n").unwrap();
        let mut buf = Vec::new();
        write_snapshot(&set, &BTreeMap::new(), &mut buf).unwrap();
        assert!(buf.starts_with(b"TPLAB-TRACKS-v1"));
        assert_eq!(read_snapshot(buf.as_slice()).unwrap().0, set);
        buf[0] = b'X';
        assert!(read_snapshot(buf.as_slice()).is_err());
    }

    #[test]
    fn merge_rejects_shared_ids() {
        let (a, _) = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n1,10,6,100,3\n").unwrap();
        let (b, _) = parse("Vehicle_ID,Frame_ID,Local_X,Local_Y,Lane_ID\n2,10,6,100,3\n").unwrap();
        let merged = a.clone().merge(b).unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.frame(10).len(), 2);
        assert!(merged.merge(a).is_err());
    }
}
