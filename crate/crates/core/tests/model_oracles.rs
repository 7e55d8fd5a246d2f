mod common;

use common::naive::{naive_affine, naive_conv, naive_leaky, naive_lstm, naive_predict};
use common::{gradient_check, random_piece, random_tensor, random_vec, rng, stationary_piece, FD_TOL};
use tplab::model::{layout, read_params, write_params, GridEgoSource, ModelError, Variant};
use tplab::scene::{NeighborGrid, EGO_SLOT};
use tplab::{Model, SceneTensors, Tape, Tensor};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn flat(points: &[[f64; 2]]) -> Vec<f64> {
    points.iter().flatten().copied().collect()
}

#[test]
fn zero_model_zero_history_encodes_to_zero() {
    let model: Model = Model::zeros(Variant::CnnLstm);
    let mut tape = Tape::new(model.params());
    let h = model.encode_sequence(&mut tape, &Tensor::zeros(vec![16, 2])).unwrap();
    let e = model.ego_feature(&mut tape, h).unwrap();
    assert_eq!(tape.shape(e), &[32]);
    assert!(tape.value(e).data().iter().all(|&v| v == 0.0));
}

#[test]
fn encoder_equals_manual_unroll() {
    let model: Model = Model::init(Variant::CnnLstm, 7);
    let piece = random_piece(3);
    let hist = SceneTensors::from_piece(&piece).unwrap().histories[0].clone();
    let mut tape = Tape::new(model.params());
    let got = model.encode_sequence(&mut tape, &hist).unwrap();
    let got = tape.value(got).data().to_vec();

    let mut manual = Tape::new(model.params());
    let p = |t: &mut Tape<'_>, n: &str| t.param_by_name(n).unwrap();
    let (ew, eb) = (p(&mut manual, "emb.w"), p(&mut manual, "emb.b"));
    let (wi, wh, b) = (p(&mut manual, "enc.w_ih"), p(&mut manual, "enc.w_hh"), p(&mut manual, "enc.b"));
    let mut h = manual.input(Tensor::zeros(vec![32]));
    let mut c = manual.input(Tensor::zeros(vec![32]));
    for pt in &piece.histories[0] {
        let x = manual.input(Tensor::from_vec(pt.to_vec()));
        let e = manual.affine(x, ew, eb).unwrap();
        let e = manual.leaky_relu(e, 0.1);
        (h, c) = manual.lstm_cell(e, h, c, wi, wh, b).unwrap();
    }
    assert_eq!(manual.value(h).data(), &got[..]);
}

#[test]
fn grid_index_is_exhaustive_and_exact() {
    let mut r = rng(9);
    let model: Model = Model::zeros(Variant::CnnLstm);
    let mut tape = Tape::new(model.params());
    let cells: Vec<Tensor> = (0..9).map(|_| random_tensor(&mut r, &[32], 1.0)).collect();
    let vars: Vec<_> = cells.iter().map(|c| tape.input(c.clone())).collect();
    let grid = model.build_grid(&mut tape, &vars).unwrap();
    let g = tape.value(grid).data();
    for k in 1..=9 {
        let (row, col) = NeighborGrid::position(k);
        for c in 0..32 {
            assert_eq!(g[(c * 3 + row) * 3 + col], cells[k - 1].data()[c], "slot {k} channel {c}");
        }
    }
    assert_eq!(NeighborGrid::position(5), (1, 1));
    assert_eq!(NeighborGrid::position(1), (0, 0));
    assert_eq!(NeighborGrid::position(9), (2, 2));
}

#[test]
fn build_grid_needs_nine() {
    let model: Model = Model::zeros(Variant::CnnLstm);
    let mut tape = Tape::new(model.params());
    let v = tape.input(Tensor::zeros(vec![32]));
    assert!(model.build_grid(&mut tape, &[v; 8]).is_err());
}

#[test]
fn zero_grid_zero_params_gives_zero_interaction() {
    let model: Model = Model::zeros(Variant::CnnLstm);
    let mut tape = Tape::new(model.params());
    let g = tape.input(Tensor::zeros(vec![32, 3, 3]));
    let n = model.extract_interaction(&mut tape, g).unwrap();
    assert_eq!(tape.value(n).data(), &[0.0; 64]);
}

#[test]
fn interaction_equals_composed_references() {
    let mut r = rng(10);
    let model: Model = Model::init(Variant::CnnLstm, 11);
    let grid = random_tensor(&mut r, &[32, 3, 3], 1.0);
    let mut tape = Tape::new(model.params());
    let g = tape.input(grid.clone());
    let n = model.extract_interaction(&mut tape, g).unwrap();

    let w = |name: &str| model.params().by_name(name).unwrap().clone();
    let mut y1 = naive_conv(&grid, &w("conv1.k"), w("conv1.b").data());
    naive_leaky(&mut y1);
    let mut y2 = naive_conv(&Tensor::new(vec![64, 2, 2], y1).unwrap(), &w("conv2.k"), w("conv2.b").data());
    naive_leaky(&mut y2);
    let mut want = naive_affine(w("fc_n.w").data(), &y2, w("fc_n.b").data());
    naive_leaky(&mut want);
    assert!(max_abs_diff(tape.value(n).data(), &want) < 1e-12);
}

#[test]
fn zero_decoder_predicts_origin() {
    let model: Model = Model::zeros(Variant::CnnLstm);
    let mut tape = Tape::new(model.params());
    let ctx = tape.input(Tensor::zeros(vec![96]));
    let out = model.decode_future(&mut tape, ctx).unwrap();
    assert_eq!(tape.shape(out), &[10, 2]);
    assert_eq!(tape.value(out).data(), &[0.0; 20]);
}

#[test]
fn decoder_equals_manual_unroll() {
    let mut r = rng(12);
    let model: Model = Model::init(Variant::CnnLstm, 13);
    let ctx = random_tensor(&mut r, &[96], 1.0);
    let mut tape = Tape::new(model.params());
    let c = tape.input(ctx.clone());
    let out = model.decode_future(&mut tape, c).unwrap();

    let w = |name: &str| model.params().by_name(name).unwrap().data().to_vec();
    let (mut h, mut cell) = (vec![0.0; 64], vec![0.0; 64]);
    let mut want = Vec::new();
    for _ in 0..10 {
        (h, cell) = naive_lstm(ctx.data(), &h, &cell, &w("dec.w_ih"), &w("dec.w_hh"), &w("dec.b"));
        want.extend(naive_affine(&w("head.w"), &h, &w("head.b")));
    }
    assert!(max_abs_diff(tape.value(out).data(), &want) < 1e-12);
}

#[test]
fn decoder_rejects_wrong_context_width() {
    let model: Model = Model::zeros(Variant::VLstm);
    let mut tape = Tape::new(model.params());
    let ctx = tape.input(Tensor::zeros(vec![96]));
    assert!(matches!(model.decode_future(&mut tape, ctx), Err(ModelError::ShapeChain { .. })));
}

#[test]
fn every_variant_matches_straight_line_reference() {
    let piece = random_piece(21);
    for v in Variant::ALL {
        let model: Model = Model::init(v, 17);
        let got = model.predict(&piece).unwrap();
        let want = naive_predict(model.params(), &piece.histories);
        assert!(max_abs_diff(&flat(&got), &flat(&want)) < 1e-10, "{v}");
        assert_eq!(got.len(), 10);
    }
}

#[test]
fn parameter_counts_follow_layout() {
    let counts: Vec<usize> = Variant::ALL.iter().map(|&v| Model::init(v, 0).params().numel()).collect();
    let expect = |v| layout(v).iter().map(|(_, s)| s.iter().product::<usize>()).sum::<usize>();
    assert_eq!(counts, Variant::ALL.map(expect).to_vec());
    assert_eq!(counts[0], 98_130);
}

#[test]
fn shape_chain_is_checked_at_runtime() {
    // A 1x1 second convolution leaves a 2x2 map where 1x1 is required.
    let mut model: Model = Model::init(Variant::CnnLstm, 1);
    let id = model.params().id("conv2.k").unwrap();
    *model.params_mut().get_mut(id) = Tensor::zeros(vec![128, 64, 1, 1]);
    match model.predict(&random_piece(1)) {
        Err(ModelError::ShapeChain { stage, expected, got }) => {
            assert_eq!(stage, "conv2");
            assert_eq!(expected, vec![128, 1, 1]);
            assert_eq!(got, vec![128, 2, 2]);
        }
        other => panic!("expected a shape-chain error, got {other:?}"),
    }
}

#[test]
fn v_lstm_ignores_neighbors() {
    let model: Model = Model::init(Variant::VLstm, 3);
    let piece = random_piece(4);
    let base = model.predict(&piece).unwrap();
    for k in (1..=9).filter(|&k| k != EGO_SLOT) {
        let mut moved = piece.clone();
        moved.histories[k - 1].iter_mut().for_each(|p| p[1] += 7.5);
        assert_eq!(model.predict(&moved).unwrap(), base, "slot {k}");
    }
}

#[test]
fn cnn_lstm_reacts_to_preceder() {
    let model: Model = Model::init(Variant::CnnLstm, 3);
    let piece = random_piece(4);
    let base = model.predict(&piece).unwrap();
    let mut moved = piece.clone();
    moved.histories[5].iter_mut().for_each(|p| p[1] -= 5.0);
    let shifted = model.predict(&moved).unwrap();
    assert!(max_abs_diff(&flat(&base), &flat(&shifted)) > 1e-6);
}

#[test]
fn encoder_is_shared_across_slots() {
    // With identical (all-zero) histories every grid cell is the same vector,
    // before and after changing the shared encoder weights.
    let mut model: Model = Model::init(Variant::CnnLstm, 5);
    let scene = SceneTensors { histories: vec![Tensor::zeros(vec![16, 2]); 9], future: Tensor::zeros(vec![10, 2]) };
    let encodings = |m: &Model| -> Vec<Vec<f64>> {
        let mut tape = Tape::new(m.params());
        scene.histories.iter().map(|h| {
            let v = m.encode_sequence(&mut tape, h).unwrap();
            tape.value(v).data().to_vec()
        }).collect()
    };
    let before = encodings(&model);
    let id = model.params().id("enc.b").unwrap();
    model.params_mut().get_mut(id).data_mut().iter_mut().for_each(|b| *b += 0.25);
    let after = encodings(&model);
    assert!(before.iter().all(|e| e == &before[0]));
    assert!(after.iter().all(|e| e == &after[0]));
    assert_ne!(before[0], after[0]);
}

#[test]
fn grid_ego_source_flag_changes_cnn_lstm_output() {
    let piece = random_piece(6);
    let raw: Model = Model::init(Variant::CnnLstm, 2);
    let fed = raw.clone().with_grid_ego(GridEgoSource::EgoFeature);
    assert_ne!(raw.predict(&piece).unwrap(), fed.predict(&piece).unwrap());
}

#[test]
fn params_file_round_trip_is_bitwise() {
    for v in Variant::ALL {
        let model: Model = Model::init(v, 99);
        let mut buf = Vec::new();
        let mut prov = std::collections::BTreeMap::new();
        prov.insert("seed".to_string(), "99".to_string());
        write_params(&model, &prov, &mut buf).unwrap();
        let (back, header) = read_params::<f64>(&buf[..]).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.variant, v);
        assert_eq!(header.provenance, prov);
    }
}

#[test]
fn truncated_params_file_is_rejected() {
    let model: Model = Model::init(Variant::VLstm, 1);
    let mut buf = Vec::new();
    write_params(&model, &Default::default(), &mut buf).unwrap();
    buf.truncate(buf.len() - 8);
    assert!(read_params::<f64>(&buf[..]).is_err());
}

fn full_model_check(variant: Variant, per_tensor: Option<usize>) {
    // Zero biases put the embedding of the ego's (0, 0) point exactly on the
    // leaky-ReLU kink, where central differences are meaningless.
    let mut model: Model = Model::init(variant, 31);
    let mut r = rng(32);
    let ids: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).ends_with(".b")).collect();
    for id in ids {
        let n = model.params().get(id).len();
        model.params_mut().get_mut(id).data_mut().copy_from_slice(&random_vec(&mut r, n, 0.1));
    }
    let scene = SceneTensors::from_piece(&random_piece(8)).unwrap();
    let check = gradient_check(
        model.params(),
        |tape| {
            let m = Model::from_params(variant, GridEgoSource::default(), tape.params().clone()).unwrap();
            let pred = m.forward(tape, &scene).unwrap();
            let truth = tape.input(scene.future.clone());
            tape.weighted_mse(pred, truth, 20.0, 0.5).unwrap()
        },
        per_tensor,
        variant as u64,
    );
    assert!(check.max_rel < FD_TOL, "{variant}: {:e} at {}", check.max_rel, check.worst);
}

#[test]
fn full_model_gradients_match_finite_differences_sampled() {
    for v in Variant::ALL {
        full_model_check(v, Some(12));
    }
}

#[test]
#[ignore = "perturbs all 98k CNN-LSTM parameters; several minutes"]
fn full_model_gradients_match_finite_differences_exhaustive() {
    full_model_check(Variant::CnnLstm, None);
}

#[test]
fn loss_and_grads_agrees_with_tape_gradient() {
    let model: Model = Model::init(Variant::CnnLstm, 4);
    let scene = SceneTensors::from_piece(&stationary_piece()).unwrap();
    let (loss, grads) = model.loss_and_grads(&scene).unwrap();
    assert_eq!(loss, model.loss(&scene).unwrap());
    for id in model.params().ids() {
        assert_eq!(grads.get(id).map(|g| g.len()), Some(model.params().get(id).len()));
    }
}
