//! Train/test split and the line-delimited pieces file.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::VehicleId;
use crate::scene::{EgoSelection, ExtractionTally, PieceLabel, ScenePiece};

pub const PIECES_FORMAT: &str = "TPLAB-PIECES-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot split an empty dataset")]
    Empty,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<ScenePiece>,
    pub test: Vec<ScenePiece>,
    pub seed: u64,
}

/// Number of training pieces for `n` total: 70%, rounded toward train.
pub fn train_size(n: usize) -> usize {
    (7 * n).div_ceil(10)
}

/// Seeded shuffle, then the first 70% go to training.
pub fn split_dataset(pieces: Vec<ScenePiece>, seed: u64) -> Result<DatasetSplit, DatasetError> {
    if pieces.is_empty() {
        return Err(DatasetError::Empty);
    }
    let n_train = train_size(pieces.len());
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut slots: Vec<Option<ScenePiece>> = pieces.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("permutation");
    let train = order[..n_train].iter().map(&mut take).collect();
    let test = order[n_train..].iter().map(&mut take).collect();
    Ok(DatasetSplit { train, test, seed })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub egos: usize,
    /// Egos whose lateral-divergence window was clipped at a track end.
    pub clipped_egos: Vec<VehicleId>,
    pub tally: ExtractionTally,
    pub pieces: usize,
    pub lane_changing: usize,
    pub lane_keeping: usize,
    pub train: usize,
    pub test: usize,
}

impl ExtractionStats {
    pub fn new(egos: &[EgoSelection], tally: ExtractionTally, split: Option<&DatasetSplit>) -> Self {
        let all = split.map(|s| s.train.iter().chain(&s.test).map(|p| p.label).collect::<Vec<_>>()).unwrap_or_default();
        let changing = all.iter().filter(|&&l| l == PieceLabel::LaneChanging).count();
        Self {
            egos: egos.len(),
            clipped_egos: egos.iter().filter(|e| e.window_clipped).map(|e| e.vehicle_id()).collect(),
            tally,
            pieces: all.len(),
            lane_changing: changing,
            lane_keeping: all.len() - changing,
            train: split.map_or(0, |s| s.train.len()),
            test: split.map_or(0, |s| s.test.len()),
        }
    }
}

impl fmt::Display for ExtractionStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "egos found:          {}", self.egos)?;
        writeln!(f, "egos window-clipped: {}", self.clipped_egos.len())?;
        if !self.clipped_egos.is_empty() {
            let ids: Vec<String> = self.clipped_egos.iter().map(|v| v.to_string()).collect();
            writeln!(f, "  clipped: {}", ids.join(" "))?;
        }
        writeln!(f, "candidate frames:    {}", self.tally.candidates)?;
        writeln!(f, "  ego absent:        {}", self.tally.ego_absent)?;
        writeln!(f, "  future incomplete: {}", self.tally.incomplete_future)?;
        writeln!(f, "  grid incomplete:   {}", self.tally.incomplete_grid)?;
        writeln!(f, "  history incomplete:{}", self.tally.incomplete_history)?;
        writeln!(f, "pieces:              {}", self.pieces)?;
        writeln!(f, "  lane-changing:     {}", self.lane_changing)?;
        writeln!(f, "  lane-keeping:      {}", self.lane_keeping)?;
        writeln!(f, "split train/test:    {}/{}", self.train, self.test)
    }
}

/// First line of a pieces file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecesHeader {
    pub format: String,
    pub seed: u64,
    pub source_checksum: String,
    pub config_hash: String,
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Serialize, Deserialize)]
struct PieceRecord<P> {
    split: SplitTag,
    piece: P,
}

/// Writes the header line, then train records in split order, then test.
pub fn write_pieces(
    split: &DatasetSplit,
    source_checksum: &str,
    config_hash: &str,
    mut w: impl Write,
) -> Result<PiecesHeader, DatasetError> {
    let counts = BTreeMap::from([
        ("pieces".to_string(), split.train.len() + split.test.len()),
        ("train".to_string(), split.train.len()),
        ("test".to_string(), split.test.len()),
    ]);
    let header = PiecesHeader {
        format: PIECES_FORMAT.to_string(),
        seed: split.seed,
        source_checksum: source_checksum.to_string(),
        config_hash: config_hash.to_string(),
        counts,
    };
    serde_json::to_writer(&mut w, &header).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    for (tag, pieces) in [(SplitTag::Train, &split.train), (SplitTag::Test, &split.test)] {
        for piece in pieces {
            serde_json::to_writer(&mut w, &PieceRecord { split: tag, piece }).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(header)
}

pub fn read_pieces(r: impl BufRead) -> Result<(PiecesHeader, DatasetSplit), DatasetError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or(DatasetError::Format { line: 1, msg: "empty file".into() })??;
    let header: PiecesHeader =
        serde_json::from_str(&first).map_err(|e| DatasetError::Format { line: 1, msg: e.to_string() })?;
    if header.format != PIECES_FORMAT {
        return Err(DatasetError::Format { line: 1, msg: format!("unsupported format `{}`", header.format) });
    }
    let mut split = DatasetSplit { train: Vec::new(), test: Vec::new(), seed: header.seed };
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PieceRecord<ScenePiece> =
            serde_json::from_str(&line).map_err(|e| DatasetError::Format { line: i + 2, msg: e.to_string() })?;
        rec.piece.validate().map_err(|msg| DatasetError::Format { line: i + 2, msg })?;
        match rec.split {
            SplitTag::Train => split.train.push(rec.piece),
            SplitTag::Test => split.test.push(rec.piece),
        }
    }
    for (key, got) in [("train", split.train.len()), ("test", split.test.len())] {
        if header.counts.get(key).is_some_and(|&want| want != got) {
            return Err(DatasetError::Format { line: 0, msg: format!("header says {key} count differs from records ({got})") });
        }
    }
    Ok((header, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{NeighborGrid, FUTURE_LEN, HISTORY_LEN};

    fn piece(i: i64) -> ScenePiece {
        ScenePiece {
            ego_id: VehicleId(1),
            t_frame: i,
            change_frame: 5,
            label: PieceLabel::for_offset(i, 5),
            origin: [1.5, 100.25 + i as f64],
            grid: NeighborGrid { slots: [VehicleId(1); 9] },
            histories: vec![vec![[0.1 * i as f64, -0.3]; HISTORY_LEN]; 9],
            future: vec![[0.0, 1.0 / 3.0]; FUTURE_LEN],
        }
    }

    #[test]
    fn ten_pieces_split_seven_three() {
        let pieces: Vec<_> = (0..10).map(piece).collect();
        let s = split_dataset(pieces, 42).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (7, 3));
        let mut frames: Vec<_> = s.train.iter().chain(&s.test).map(|p| p.t_frame).collect();
        frames.sort();
        assert_eq!(frames, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn split_sizes() {
        assert_eq!(train_size(48_150), 33_705);
        assert_eq!(48_150 - train_size(48_150), 14_445);
        assert_eq!(train_size(1), 1);
        assert_eq!(train_size(11), 8);
    }

    #[test]
    fn split_is_deterministic() {
        let a = split_dataset((0..50).map(piece).collect(), 7).unwrap();
        let b = split_dataset((0..50).map(piece).collect(), 7).unwrap();
        let c = split_dataset((0..50).map(piece).collect(), 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn empty_split_is_error() {
        assert!(matches!(split_dataset(Vec::new(), 1), Err(DatasetError::Empty)));
    }

    #[test]
    fn pieces_file_round_trip() {
        let split = split_dataset((0..12).map(piece).collect(), 3).unwrap();
        let mut buf = Vec::new();
        let header = write_pieces(&split, "abc", "def", &mut buf).unwrap();
        assert!(buf.starts_with(b"{\"format\":\"TPLAB-PIECES-v1\""));
        let (h2, back) = read_pieces(buf.as_slice()).unwrap();
        assert_eq!(header, h2);
        assert_eq!(back, split);
    }

    #[test]
    fn truncated_pieces_file_is_rejected() {
        let split = split_dataset((0..4).map(piece).collect(), 3).unwrap();
        let mut buf = Vec::new();
        write_pieces(&split, "abc", "def", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let cut: Vec<&str> = text.lines().take(3).collect();
        assert!(read_pieces(cut.join("\n").as_bytes()).is_err());
    }
}
