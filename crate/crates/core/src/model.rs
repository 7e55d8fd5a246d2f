//! CNN-LSTM trajectory predictor and its ablation variants.
//!
//! Every vehicle history goes through one shared embedding and LSTM encoder.
//! The nine final hidden states are implanted into a 3×3 grid by slot, two
//! 2×2 valid convolutions reduce the grid to a 128-channel cell, and a dense
//! layer summarizes it as the 64-wide interaction vector. The ego's own
//! encoding passes through a separate dense layer. An LSTM decoder receives
//! the concatenated context at every one of its ten steps and a linear head
//! turns each hidden state into one future point.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, ParamId, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;
use crate::scene::{Point, ScenePiece, EGO_SLOT, FUTURE_LEN, GRID_SLOTS, HISTORY_LEN};

pub const PARAMS_MAGIC: &[u8] = b"TPLAB-PARAMS-v1\n";

pub const EMBED_DIM: usize = 16;
pub const ENC_HIDDEN: usize = 32;
pub const EGO_FEATURE: usize = 32;
pub const CONV1_CHANNELS: usize = 64;
pub const CONV2_CHANNELS: usize = 128;
pub const INTERACTION_DIM: usize = 64;
pub const DEC_HIDDEN: usize = 64;
pub const KERNEL: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.1;
/// Lateral and longitudinal weights of the training loss.
pub const LOSS_WEIGHTS: (f64, f64) = (20.0, 0.5);

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("shape chain violated at {stage}: expected {expected:?}, got {got:?}")]
    ShapeChain { stage: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("params file: {0}")]
    Format(String),
    #[error("variant mismatch: expected {expected}, found {found}")]
    VariantMismatch { expected: Variant, found: Variant },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Variant {
    CnnLstm,
    VLstm,
    FcLstm,
    InteractionOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::CnnLstm, Variant::VLstm, Variant::FcLstm, Variant::InteractionOnly];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::CnnLstm => "CNN_LSTM",
            Variant::VLstm => "V_LSTM",
            Variant::FcLstm => "FC_LSTM",
            Variant::InteractionOnly => "INTERACTION_ONLY",
        }
    }

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::CnnLstm => "CNN-LSTM",
            Variant::VLstm => "V-LSTM",
            Variant::FcLstm => "FC-LSTM",
            Variant::InteractionOnly => "Interaction-only",
        }
    }

    pub fn uses_ego_tube(self) -> bool {
        self != Variant::InteractionOnly
    }

    pub fn uses_neighbors(self) -> bool {
        self != Variant::VLstm
    }

    pub fn decoder_input(self) -> usize {
        match self {
            Variant::CnnLstm | Variant::FcLstm => INTERACTION_DIM + EGO_FEATURE,
            Variant::VLstm => EGO_FEATURE,
            Variant::InteractionOnly => INTERACTION_DIM,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        match norm.as_str() {
            "CNN_LSTM" => Ok(Variant::CnnLstm),
            "V_LSTM" => Ok(Variant::VLstm),
            "FC_LSTM" => Ok(Variant::FcLstm),
            "INTERACTION_ONLY" => Ok(Variant::InteractionOnly),
            _ => Err(format!("unknown variant `{s}` (expected one of CNN_LSTM, V_LSTM, FC_LSTM, INTERACTION_ONLY)")),
        }
    }
}

/// Which ego representation fills the center cell of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridEgoSource {
    /// The shared encoder's final hidden state, like every other slot.
    #[default]
    EncoderState,
    /// The ego feature after the dedicated dense layer.
    EgoFeature,
}

/// Name and shape of every parameter tensor of a variant, in store order.
pub fn layout(variant: Variant) -> Vec<(&'static str, Vec<usize>)> {
    let g = 4 * ENC_HIDDEN;
    let mut out = vec![
        ("emb.w", vec![EMBED_DIM, 2]),
        ("emb.b", vec![EMBED_DIM]),
        ("enc.w_ih", vec![g, EMBED_DIM]),
        ("enc.w_hh", vec![g, ENC_HIDDEN]),
        ("enc.b", vec![g]),
    ];
    if variant.uses_ego_tube() {
        out.push(("fc_e.w", vec![EGO_FEATURE, ENC_HIDDEN]));
        out.push(("fc_e.b", vec![EGO_FEATURE]));
    }
    match variant {
        Variant::CnnLstm | Variant::InteractionOnly => {
            out.push(("conv1.k", vec![CONV1_CHANNELS, ENC_HIDDEN, KERNEL, KERNEL]));
            out.push(("conv1.b", vec![CONV1_CHANNELS]));
            out.push(("conv2.k", vec![CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL]));
            out.push(("conv2.b", vec![CONV2_CHANNELS]));
            out.push(("fc_n.w", vec![INTERACTION_DIM, CONV2_CHANNELS]));
            out.push(("fc_n.b", vec![INTERACTION_DIM]));
        }
        Variant::FcLstm => {
            out.push(("fc_inter.w", vec![INTERACTION_DIM, GRID_SLOTS * ENC_HIDDEN]));
            out.push(("fc_inter.b", vec![INTERACTION_DIM]));
        }
        Variant::VLstm => {}
    }
    let dg = 4 * DEC_HIDDEN;
    out.push(("dec.w_ih", vec![dg, variant.decoder_input()]));
    out.push(("dec.w_hh", vec![dg, DEC_HIDDEN]));
    out.push(("dec.b", vec![dg]));
    out.push(("head.w", vec![2, DEC_HIDDEN]));
    out.push(("head.b", vec![2]));
    out
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b")
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Recurrent {
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct Layers {
    emb: Dense,
    enc: Recurrent,
    fc_e: Option<Dense>,
    conv1: Option<Dense>,
    conv2: Option<Dense>,
    fc_n: Option<Dense>,
    fc_inter: Option<Dense>,
    dec: Recurrent,
    head: Dense,
}

impl Layers {
    fn resolve<S: Scalar>(store: &ParamStore<S>) -> Result<Self, AutodiffError> {
        let dense = |p: &str| -> Result<Dense, AutodiffError> {
            Ok(Dense { w: store.id(&format!("{p}.w")).or_else(|_| store.id(&format!("{p}.k")))?, b: store.id(&format!("{p}.b"))? })
        };
        let rec = |p: &str| -> Result<Recurrent, AutodiffError> {
            Ok(Recurrent {
                w_ih: store.id(&format!("{p}.w_ih"))?,
                w_hh: store.id(&format!("{p}.w_hh"))?,
                b: store.id(&format!("{p}.b"))?,
            })
        };
        Ok(Self {
            emb: dense("emb")?,
            enc: rec("enc")?,
            fc_e: dense("fc_e").ok(),
            conv1: dense("conv1").ok(),
            conv2: dense("conv2").ok(),
            fc_n: dense("fc_n").ok(),
            fc_inter: dense("fc_inter").ok(),
            dec: rec("dec")?,
            head: dense("head")?,
        })
    }
}

fn expect_shape<S: Scalar>(tape: &Tape<'_, S>, v: Var, stage: &'static str, expected: &[usize]) -> Result<(), ModelError> {
    let got = tape.shape(v);
    if got != expected {
        return Err(ModelError::ShapeChain { stage, expected: expected.to_vec(), got: got.to_vec() });
    }
    Ok(())
}

/// Model inputs converted to the model's scalar type.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTensors<S> {
    /// Nine `[16, 2]` histories, slot order.
    pub histories: Vec<Tensor<S>>,
    /// `[10, 2]` ego future.
    pub future: Tensor<S>,
}

impl<S: Scalar> SceneTensors<S> {
    pub fn from_piece(piece: &ScenePiece) -> Result<Self, ModelError> {
        piece.validate().map_err(ModelError::Input)?;
        let conv = |pts: &[Point], len: usize| {
            let data = pts.iter().flat_map(|p| [S::lit(p[0]), S::lit(p[1])]).collect();
            Tensor::new(vec![len, 2], data)
        };
        Ok(Self {
            histories: piece.histories.iter().map(|h| conv(h, HISTORY_LEN)).collect::<Result<_, _>>()?,
            future: conv(&piece.future, FUTURE_LEN)?,
        })
    }
}

/// One variant's parameters together with its forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<S> {
    variant: Variant,
    grid_ego: GridEgoSource,
    params: ParamStore<S>,
}

impl<S: Scalar> Model<S> {
    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero, drawn in layout order.
    pub fn init(variant: Variant, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in layout(variant) {
            let n: usize = shape.iter().product();
            let data = if is_bias(name) {
                vec![S::zero(); n]
            } else {
                let fan_in: usize = shape[1..].iter().product();
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| S::lit(rng.gen_range(-bound..bound))).collect()
            };
            params.insert(name, Tensor::new(shape, data).expect("layout shape")).expect("unique names");
        }
        Self { variant, grid_ego: GridEgoSource::default(), params }
    }

    pub fn zeros(variant: Variant) -> Self {
        let mut params = ParamStore::new();
        for (name, shape) in layout(variant) {
            params.insert(name, Tensor::zeros(shape)).expect("unique names");
        }
        Self { variant, grid_ego: GridEgoSource::default(), params }
    }

    /// Wraps an existing store after checking it against the variant layout.
    pub fn from_params(variant: Variant, grid_ego: GridEgoSource, params: ParamStore<S>) -> Result<Self, ModelError> {
        let want = layout(variant);
        if want.len() != params.len() {
            return Err(ModelError::Format(format!("{variant} needs {} tensors, found {}", want.len(), params.len())));
        }
        for ((name, shape), (got_name, t)) in want.iter().zip(params.iter()) {
            if *name != got_name || shape.as_slice() != t.shape() {
                return Err(ModelError::Format(format!(
                    "expected `{name}` {shape:?}, found `{got_name}` {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { variant, grid_ego, params })
    }

    pub fn with_grid_ego(mut self, source: GridEgoSource) -> Self {
        self.grid_ego = source;
        self
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn grid_ego(&self) -> GridEgoSource {
        self.grid_ego
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn layers(&self) -> Result<Layers, ModelError> {
        Ok(Layers::resolve(&self.params)?)
    }

    fn dense(&self, tape: &mut Tape<'_, S>, layer: Dense, x: Var, activate: bool) -> Result<Var, ModelError> {
        let (w, b) = (tape.param(layer.w), tape.param(layer.b));
        let y = tape.affine(x, w, b)?;
        Ok(if activate { tape.leaky_relu(y, S::lit(LEAKY_SLOPE)) } else { y })
    }

    /// Shared encoder: embeds each point, runs the LSTM oldest to newest and
    /// returns the final hidden state.
    pub fn encode_sequence(&self, tape: &mut Tape<'_, S>, history: &Tensor<S>) -> Result<Var, ModelError> {
        if history.shape() != [HISTORY_LEN, 2] {
            return Err(ModelError::Input(format!("history shape {:?}, expected [{HISTORY_LEN}, 2]", history.shape())));
        }
        let l = self.layers()?;
        let zero = Tensor::zeros(vec![ENC_HIDDEN]);
        let mut h = tape.input(zero.clone());
        let mut c = tape.input(zero);
        let (w_ih, w_hh, b) = (tape.param(l.enc.w_ih), tape.param(l.enc.w_hh), tape.param(l.enc.b));
        for p in history.data().chunks_exact(2) {
            let x = tape.input(Tensor::from_vec(p.to_vec()));
            let e = self.dense(tape, l.emb, x, true)?;
            (h, c) = tape.lstm_cell(e, h, c, w_ih, w_hh, b)?;
        }
        expect_shape(tape, h, "encoder state", &[ENC_HIDDEN])?;
        Ok(h)
    }

    /// Dedicated ego layer applied to an encoder state.
    pub fn ego_feature(&self, tape: &mut Tape<'_, S>, state: Var) -> Result<Var, ModelError> {
        let fc_e = self.layers()?.fc_e.ok_or_else(|| ModelError::Input(format!("{} has no ego layer", self.variant)))?;
        let e = self.dense(tape, fc_e, state, true)?;
        expect_shape(tape, e, "ego feature", &[EGO_FEATURE])?;
        Ok(e)
    }

    /// Implants nine slot-ordered encodings into a `[32, 3, 3]` grid.
    pub fn build_grid(&self, tape: &mut Tape<'_, S>, cells: &[Var]) -> Result<Var, ModelError> {
        if cells.len() != GRID_SLOTS {
            return Err(ModelError::Input(format!("{} encodings, expected {GRID_SLOTS}", cells.len())));
        }
        let grid = tape.implant(cells, 3, 3)?;
        expect_shape(tape, grid, "grid", &[ENC_HIDDEN, 3, 3])?;
        Ok(grid)
    }

    /// Interaction vector from the grid: two convolutions then a dense layer
    /// (or a single dense layer over the flattened grid for FC-LSTM).
    pub fn extract_interaction(&self, tape: &mut Tape<'_, S>, grid: Var) -> Result<Var, ModelError> {
        expect_shape(tape, grid, "grid", &[ENC_HIDDEN, 3, 3])?;
        let l = self.layers()?;
        let slope = S::lit(LEAKY_SLOPE);
        let out = if let (Some(c1), Some(c2), Some(fc_n)) = (l.conv1, l.conv2, l.fc_n) {
            let (k1, b1) = (tape.param(c1.w), tape.param(c1.b));
            let y1 = tape.conv2d_valid(grid, k1, b1)?;
            let y1 = tape.leaky_relu(y1, slope);
            expect_shape(tape, y1, "conv1", &[CONV1_CHANNELS, 2, 2])?;
            let (k2, b2) = (tape.param(c2.w), tape.param(c2.b));
            let y2 = tape.conv2d_valid(y1, k2, b2)?;
            let y2 = tape.leaky_relu(y2, slope);
            expect_shape(tape, y2, "conv2", &[CONV2_CHANNELS, 1, 1])?;
            let flat = tape.reshape(y2, vec![CONV2_CHANNELS])?;
            self.dense(tape, fc_n, flat, true)?
        } else if let Some(fc) = l.fc_inter {
            let flat = tape.reshape(grid, vec![GRID_SLOTS * ENC_HIDDEN])?;
            self.dense(tape, fc, flat, true)?
        } else {
            return Err(ModelError::Input(format!("{} has no interaction layers", self.variant)));
        };
        expect_shape(tape, out, "interaction", &[INTERACTION_DIM])?;
        Ok(out)
    }

    /// Ten decoder steps from zero state, feeding `context` at every step.
    pub fn decode_future(&self, tape: &mut Tape<'_, S>, context: Var) -> Result<Var, ModelError> {
        expect_shape(tape, context, "decoder context", &[self.variant.decoder_input()])?;
        let l = self.layers()?;
        let zero = Tensor::zeros(vec![DEC_HIDDEN]);
        let mut h = tape.input(zero.clone());
        let mut c = tape.input(zero);
        let (w_ih, w_hh, b) = (tape.param(l.dec.w_ih), tape.param(l.dec.w_hh), tape.param(l.dec.b));
        let mut points = Vec::with_capacity(FUTURE_LEN);
        for _ in 0..FUTURE_LEN {
            (h, c) = tape.lstm_cell(context, h, c, w_ih, w_hh, b)?;
            points.push(self.dense(tape, l.head, h, false)?);
        }
        let flat = tape.concat(&points)?;
        let out = tape.reshape(flat, vec![FUTURE_LEN, 2])?;
        Ok(out)
    }

    /// Full forward pass producing the `[10, 2]` predicted future.
    pub fn forward(&self, tape: &mut Tape<'_, S>, scene: &SceneTensors<S>) -> Result<Var, ModelError> {
        if scene.histories.len() != GRID_SLOTS {
            return Err(ModelError::Input(format!("{} histories, expected {GRID_SLOTS}", scene.histories.len())));
        }
        let ego_state = self.encode_sequence(tape, &scene.histories[EGO_SLOT - 1])?;
        let ego = if self.variant.uses_ego_tube() { Some(self.ego_feature(tape, ego_state)?) } else { None };
        let interaction = if self.variant.uses_neighbors() {
            let mut cells = Vec::with_capacity(GRID_SLOTS);
            for (i, h) in scene.histories.iter().enumerate() {
                let cell = if i == EGO_SLOT - 1 {
                    match (self.grid_ego, ego) {
                        (GridEgoSource::EgoFeature, Some(e)) => e,
                        _ => ego_state,
                    }
                } else {
                    self.encode_sequence(tape, h)?
                };
                cells.push(cell);
            }
            let grid = self.build_grid(tape, &cells)?;
            Some(self.extract_interaction(tape, grid)?)
        } else {
            None
        };
        let context = match (interaction, ego) {
            (Some(n), Some(e)) => tape.concat(&[n, e])?,
            (Some(n), None) => n,
            (None, Some(e)) => e,
            (None, None) => unreachable!("every variant has an ego tube or an interaction tube"),
        };
        let out = self.decode_future(tape, context)?;
        expect_shape(tape, out, "prediction", &[FUTURE_LEN, 2])?;
        Ok(out)
    }

    pub fn predict_scene(&self, scene: &SceneTensors<S>) -> Result<Vec<[S; 2]>, ModelError> {
        let mut tape = Tape::new(&self.params);
        let out = self.forward(&mut tape, scene)?;
        Ok(tape.value(out).data().chunks_exact(2).map(|p| [p[0], p[1]]).collect())
    }

    pub fn predict(&self, piece: &ScenePiece) -> Result<Vec<[S; 2]>, ModelError> {
        self.predict_scene(&SceneTensors::from_piece(piece)?)
    }

    /// Weighted loss of one scene and its parameter gradients.
    pub fn loss_and_grads(&self, scene: &SceneTensors<S>) -> Result<(S, Gradients<S>), ModelError> {
        let mut tape = Tape::new(&self.params);
        let pred = self.forward(&mut tape, scene)?;
        let truth = tape.input(scene.future.clone());
        let loss = tape.weighted_mse(pred, truth, S::lit(LOSS_WEIGHTS.0), S::lit(LOSS_WEIGHTS.1))?;
        tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], tape.param_grads()))
    }

    pub fn loss(&self, scene: &SceneTensors<S>) -> Result<S, ModelError> {
        let mut tape = Tape::new(&self.params);
        let pred = self.forward(&mut tape, scene)?;
        let truth = tape.input(scene.future.clone());
        let loss = tape.weighted_mse(pred, truth, S::lit(LOSS_WEIGHTS.0), S::lit(LOSS_WEIGHTS.1))?;
        Ok(tape.value(loss).data()[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
}

/// JSON header line of a params file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub variant: Variant,
    pub grid_ego: GridEgoSource,
    /// Seeds, config hash and data checksum that produced these parameters.
    pub provenance: BTreeMap<String, String>,
    tensors: Vec<TensorSpec>,
}

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Format(e.to_string())
}

/// Writes magic line, JSON header line, then every tensor as little-endian f64.
pub fn write_params<S: Scalar>(
    model: &Model<S>,
    provenance: &BTreeMap<String, String>,
    mut w: impl Write,
) -> Result<(), ModelError> {
    let header = ParamsHeader {
        variant: model.variant,
        grid_ego: model.grid_ego,
        provenance: provenance.clone(),
        tensors: model.params.iter().map(|(n, t)| TensorSpec { name: n.to_string(), shape: t.shape().to_vec() }).collect(),
    };
    w.write_all(PARAMS_MAGIC).map_err(io_err)?;
    let json = serde_json::to_string(&header).map_err(|e| ModelError::Format(e.to_string()))?;
    w.write_all(json.as_bytes()).map_err(io_err)?;
    w.write_all(b"\n").map_err(io_err)?;
    for (_, t) in model.params.iter() {
        for &v in t.data() {
            w.write_f64::<LittleEndian>(v.to_f64().expect("finite scalar")).map_err(io_err)?;
        }
    }
    Ok(())
}

pub(crate) fn read_line(r: &mut impl Read) -> Result<String, ModelError> {
    let mut bytes = Vec::new();
    loop {
        let b = r.read_u8().map_err(io_err)?;
        if b == b'\n' {
            break;
        }
        bytes.push(b);
    }
    String::from_utf8(bytes).map_err(|e| ModelError::Format(e.to_string()))
}

/// Reads a params file, reconstructing the variant from its header.
pub fn read_params<S: Scalar>(mut r: impl Read) -> Result<(Model<S>, ParamsHeader), ModelError> {
    let mut magic = vec![0u8; PARAMS_MAGIC.len()];
    r.read_exact(&mut magic).map_err(io_err)?;
    if magic != PARAMS_MAGIC {
        return Err(ModelError::Format("bad magic; not a TPLAB-PARAMS-v1 file".into()));
    }
    let header: ParamsHeader =
        serde_json::from_str(&read_line(&mut r)?).map_err(|e| ModelError::Format(e.to_string()))?;
    let mut store = ParamStore::new();
    for spec in &header.tensors {
        let n: usize = spec.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(S::lit(r.read_f64::<LittleEndian>().map_err(io_err)?));
        }
        store.insert(&spec.name, Tensor::new(spec.shape.clone(), data)?)?;
    }
    let model = Model::from_params(header.variant, header.grid_ego, store)?;
    Ok((model, header))
}
