#![allow(dead_code)]

pub mod naive;
pub mod oracles;

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tplab::autodiff::Var;
use tplab::ingest::{parse_trajectory_file, TrackSet, VehicleId};
use tplab::scene::{Point, ScenePiece, NeighborGrid, PieceLabel, FUTURE_LEN, GRID_SLOTS, HISTORY_LEN};
use tplab::{ParamStore, Tape, Tensor};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(rng, n, scale)).unwrap()
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load_fixture(name: &str) -> TrackSet {
    let (set, report) = parse_trajectory_file(&fixture(name), &HashMap::new()).unwrap();
    assert!(report.rejected.is_empty(), "{report}");
    set
}

/// (vehicle, frame, x_ft, y_ft, lane) read with nothing but `str::split`.
pub fn raw_rows(name: &str) -> Vec<(u32, i64, f64, f64, u8)> {
    let text = std::fs::read_to_string(fixture(name)).unwrap();
    text.lines()
        .filter(|l| l.chars().next().is_some_and(|c| c.is_ascii_digit()))
        .map(|l| {
            let f: Vec<&str> = if l.contains(',') { l.split(',').collect() } else { l.split_whitespace().collect() };
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[4].parse().unwrap(), f[5].parse().unwrap(), f[13].parse().unwrap())
        })
        .collect()
}

/// Relative error with a floor so that near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Compares tape gradients of every parameter against central differences.
///
/// `build` records a scalar loss on a fresh tape. With `per_tensor = Some(k)`
/// only `k` entries per tensor, picked by `seed`, are perturbed.
pub fn gradient_check<F>(store: &ParamStore, build: F, per_tensor: Option<usize>, seed: u64) -> GradCheck
where
    F: Fn(&mut Tape<'_>) -> Var,
{
    let analytic = {
        let mut tape = Tape::new(store);
        let loss = build(&mut tape);
        tape.backward(loss).unwrap();
        tape.param_grads()
    };
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let loss = build(&mut tape);
        tape.value(loss).data()[0]
    };
    let mut picker = rng(seed);
    let mut out = GradCheck { checked: 0, max_rel: 0.0, worst: String::new() };
    let mut work = store.clone();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).len();
        let entries: Vec<usize> = match per_tensor {
            Some(k) if k < n => (0..k).map(|_| picker.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let grad = analytic.get(id);
        for i in entries {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.map_or(0.0, |g| g[i]);
            let e = rel_err(a, numeric);
            out.checked += 1;
            if e > out.max_rel {
                out.max_rel = e;
                out.worst = format!("{}[{i}]: analytic {a:e}, numeric {numeric:e}", store.name(id));
            }
        }
    }
    out
}

pub fn store_of(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (name, t) in entries {
        s.insert(name, t.clone()).unwrap();
    }
    s
}

/// A piece whose nine vehicles stand still at fixed offsets from the ego.
pub fn stationary_piece() -> ScenePiece {
    let offsets: [Point; GRID_SLOTS] = [
        [-3.7, -12.0],
        [-3.7, 2.5],
        [-3.7, 15.0],
        [0.0, -9.0],
        [0.0, 0.0],
        [0.0, 11.0],
        [3.7, -14.0],
        [3.7, -1.5],
        [3.7, 13.0],
    ];
    ScenePiece {
        ego_id: VehicleId(5),
        t_frame: 100,
        change_frame: 120,
        label: PieceLabel::LaneChanging,
        origin: [0.0, 0.0],
        grid: NeighborGrid { slots: std::array::from_fn(|k| VehicleId(k as u32 + 1)) },
        histories: offsets.iter().map(|&p| vec![p; HISTORY_LEN]).collect(),
        future: vec![[0.0, 0.0]; FUTURE_LEN],
    }
}

/// A piece with random, smoothly moving vehicles.
pub fn random_piece(seed: u64) -> ScenePiece {
    let mut r = rng(seed);
    let mut piece = stationary_piece();
    for (k, h) in piece.histories.iter_mut().enumerate() {
        let v = r.gen_range(5.0..15.0);
        let drift = r.gen_range(-0.3..0.3);
        for (i, p) in h.iter_mut().enumerate() {
            let back = (HISTORY_LEN - 1 - i) as f64 * 0.2;
            p[0] += -drift * back + r.gen_range(-0.05..0.05);
            p[1] += -v * back;
            if k == 4 && i == HISTORY_LEN - 1 {
                *p = [0.0, 0.0];
            }
        }
    }
    let v = r.gen_range(0.5..2.0);
    let drift = r.gen_range(-0.1..0.1);
    for (i, p) in piece.future.iter_mut().enumerate() {
        let ahead = (i + 1) as f64 * 0.5;
        *p = [drift * ahead, v * ahead];
    }
    piece
}

/// Contracts `y` against the `readout` parameter so every output entry matters.
pub fn readout(tape: &mut Tape<'_>, y: Var) -> Var {
    let n = tape.value(y).len();
    let flat = tape.reshape(y, vec![n]).unwrap();
    let r = tape.param_by_name("readout").unwrap();
    let r = tape.reshape(r, vec![1, n]).unwrap();
    let zero = tape.input(Tensor::zeros(vec![1]));
    let out = tape.affine(flat, r, zero).unwrap();
    tape.sum(out)
}

pub fn with_readout(mut entries: Vec<(&'static str, Tensor)>, n_out: usize, seed: u64) -> ParamStore {
    let mut r = rng(seed ^ 0xfeed);
    entries.push(("readout", random_tensor(&mut r, &[n_out], 1.0)));
    let refs: Vec<(&str, Tensor)> = entries.into_iter().collect();
    store_of(&refs)
}
