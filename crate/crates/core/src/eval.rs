//! Per-horizon RMSE and result tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError};
use crate::scene::{Point, ScenePiece, FUTURE_LEN};

/// Seconds between predicted points.
pub const STEP_SECONDS: f64 = 0.5;
/// Zero-based prediction steps reported as the 1 s … 5 s horizons.
pub const HORIZON_STEPS: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("prediction {index} has {got} points, expected {FUTURE_LEN}")]
    PredictionLength { index: usize, got: usize },
    #[error("comparison needs at least two reports, got {0}")]
    TooFewReports(usize),
}

/// Anything that maps a piece to ten predicted points.
pub trait Predictor {
    fn name(&self) -> String;
    fn predict_piece(&self, piece: &ScenePiece) -> Result<Vec<Point>, ModelError>;
}

impl Predictor for Model<f64> {
    fn name(&self) -> String {
        self.variant().display_name().to_string()
    }

    fn predict_piece(&self, piece: &ScenePiece) -> Result<Vec<Point>, ModelError> {
        self.predict(piece)
    }
}

/// Returns the ground truth; a sanity baseline whose RMSE is zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruthOracle;

impl Predictor for TruthOracle {
    fn name(&self) -> String {
        "Oracle".to_string()
    }

    fn predict_piece(&self, piece: &ScenePiece) -> Result<Vec<Point>, ModelError> {
        Ok(piece.future.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub name: String,
    /// RMSE in meters at each of the ten 0.5 s steps.
    pub rmse_m: Vec<f64>,
    pub n: usize,
}

impl HorizonReport {
    /// RMSE at 1, 2, 3, 4 and 5 seconds.
    pub fn horizons(&self) -> [f64; 5] {
        HORIZON_STEPS.map(|s| self.rmse_m[s])
    }

    /// Ten-step CSV: `step,seconds,rmse_m`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,seconds,rmse_m\n");
        for (i, v) in self.rmse_m.iter().enumerate() {
            let _ = writeln!(out, "{},{:.1},{}", i + 1, (i + 1) as f64 * STEP_SECONDS, v);
        }
        out
    }
}

/// Square root of the mean squared Euclidean error at each step.
pub fn rmse_per_step(predictions: &[Vec<Point>], truths: &[Vec<Point>]) -> Result<Vec<f64>, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let mut sse = vec![0.0; FUTURE_LEN];
    for (index, (p, t)) in predictions.iter().zip(truths).enumerate() {
        if p.len() != FUTURE_LEN || t.len() != FUTURE_LEN {
            return Err(EvalError::PredictionLength { index, got: p.len().min(t.len()) });
        }
        for (acc, (a, b)) in sse.iter_mut().zip(p.iter().zip(t)) {
            let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
            *acc += dx * dx + dy * dy;
        }
    }
    let n = predictions.len() as f64;
    Ok(sse.into_iter().map(|s| (s / n).sqrt()).collect())
}

pub fn evaluate(predictor: &dyn Predictor, test: &[ScenePiece]) -> Result<HorizonReport, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let predictions = test.iter().map(|p| predictor.predict_piece(p)).collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<Vec<Point>> = test.iter().map(|p| p.future.clone()).collect();
    Ok(HorizonReport { name: predictor.name(), rmse_m: rmse_per_step(&predictions, &truths)?, n: test.len() })
}

/// Published results of earlier models, shown for reference only.
pub const CITED_BASELINES: [(&str, [Option<f64>; 5]); 3] = [
    ("CS-LSTM", [Some(0.61), Some(1.27), Some(2.09), Some(3.10), Some(4.37)]),
    ("SCALE-Net", [Some(0.459), Some(1.156), Some(1.973), Some(2.911), None]),
    ("MATF GAN", [Some(0.66), Some(1.34), Some(2.08), Some(2.97), Some(4.13)]),
];

/// Published RMSE of the four reproduced variants at 1–5 s, for side-by-side printing.
pub const REFERENCE_RESULTS: [(&str, [f64; 5]); 4] = [
    ("V-LSTM", [0.7393, 1.7887, 3.1321, 4.8683, 6.9017]),
    ("FC-LSTM", [0.657, 1.0567, 1.4399, 1.9374, 2.6296]),
    ("Interaction-only", [0.726, 1.0193, 1.3183, 1.7247, 2.4101]),
    ("CNN-LSTM", [0.6214, 0.976, 1.2751, 1.6237, 2.272]),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub values: [Option<f64>; 5],
    /// Quoted from the literature, not produced by this run.
    pub cited: bool,
    /// Per column: this row holds the minimum among reproduced rows.
    pub best: [bool; 5],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<TableRow>,
}

/// Builds the horizon table; cited baselines first, then `reports` in order.
pub fn compare(reports: &[HorizonReport], include_cited: bool) -> Result<ComparisonTable, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewReports(reports.len()));
    }
    let mut rows: Vec<TableRow> = Vec::new();
    if include_cited {
        rows.extend(CITED_BASELINES.iter().map(|(name, values)| TableRow {
            name: name.to_string(),
            values: *values,
            cited: true,
            best: [false; 5],
        }));
    }
    let mut own: Vec<TableRow> = reports
        .iter()
        .map(|r| TableRow { name: r.name.clone(), values: r.horizons().map(Some), cited: false, best: [false; 5] })
        .collect();
    for col in 0..5 {
        let min = own.iter().filter_map(|r| r.values[col]).fold(f64::INFINITY, f64::min);
        for r in &mut own {
            r.best[col] = r.values[col] == Some(min);
        }
    }
    rows.extend(own);
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Aligned text; `*` marks the per-column best reproduced value.
    pub fn to_text(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len() + if r.cited { 9 } else { 0 }).max().unwrap_or(6).max(6);
        let mut out = format!("{:<width$}", "Method");
        for s in 1..=5 {
            let _ = write!(out, " {:>9}", format!("{s} s"));
        }
        out.push('\n');
        for r in &self.rows {
            let name = if r.cited { format!("{} (cited)", r.name) } else { r.name.clone() };
            let _ = write!(out, "{name:<width$}");
            for (v, best) in r.values.iter().zip(r.best) {
                let cell = match v {
                    Some(v) => format!("{v:.4}{}", if best { "*" } else { " " }),
                    None => "- ".to_string(),
                };
                let _ = write!(out, " {cell:>9}");
            }
            out.push('\n');
        }
        out.push_str("RMSE in meters; * = best reproduced value; cited rows are quoted, not reproduced.\n");
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,cited,rmse_1s,rmse_2s,rmse_3s,rmse_4s,rmse_5s,best_1s,best_2s,best_3s,best_4s,best_5s\n");
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
            let best: Vec<String> = r.best.iter().map(|b| b.to_string()).collect();
            let _ = writeln!(out, "{},{},{},{}", r.name, r.cited, vals.join(","), best.join(","));
        }
        out
    }
}
