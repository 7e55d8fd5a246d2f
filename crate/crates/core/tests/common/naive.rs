//! Straight-loop reference implementations used as test oracles.

use tplab::Tensor;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

pub fn naive_affine(w: &[f64], x: &[f64], b: &[f64]) -> Vec<f64> {
    let d = x.len();
    let mut y = Vec::new();
    for o in 0..b.len() {
        let mut s = b[o];
        for j in 0..d {
            s += w[o * d + j] * x[j];
        }
        y.push(s);
    }
    y
}

/// Textbook cell, gate rows ordered input, forget, candidate, output.
pub fn naive_lstm(x: &[f64], h: &[f64], c: &[f64], wi: &[f64], wh: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let z = |r: usize| {
        let mut s = b[r];
        for (j, xj) in x.iter().enumerate() {
            s += wi[r * x.len() + j] * xj;
        }
        for (j, hj) in h.iter().enumerate() {
            s += wh[r * hd + j] * hj;
        }
        s
    };
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for j in 0..hd {
        let i = sigmoid(z(j));
        let f = sigmoid(z(hd + j));
        let g = z(2 * hd + j).tanh();
        let o = sigmoid(z(3 * hd + j));
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

pub fn naive_conv(x: &Tensor, k: &Tensor, b: &[f64]) -> Vec<f64> {
    let (ci, r, s) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, kr, kc) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let at = |c: usize, i: usize, j: usize| x.data()[(c * r + i) * s + j];
    let kat = |o: usize, c: usize, u: usize, v: usize| k.data()[((o * ci + c) * kr + u) * kc + v];
    let mut out = Vec::new();
    for o in 0..co {
        for i in 0..=(r - kr) {
            for j in 0..=(s - kc) {
                let mut acc = b[o];
                for c in 0..ci {
                    for u in 0..kr {
                        for v in 0..kc {
                            acc += kat(o, c, u, v) * at(c, i + u, j + v);
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn naive_weighted_mse(p: &[f64], t: &[f64]) -> f64 {
    let steps = p.len() / 2;
    let mut total = 0.0;
    for s in 0..steps {
        total += 20.0 * (p[2 * s] - t[2 * s]).powi(2) + 0.5 * (p[2 * s + 1] - t[2 * s + 1]).powi(2);
    }
    total / steps as f64
}

pub fn naive_leaky(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x *= 0.1;
        }
    }
}

/// Eq.-style RMSE in two passes: squared errors summed per step, then the root of the mean.
pub fn naive_rmse(pred: &[Vec<[f64; 2]>], truth: &[Vec<[f64; 2]>]) -> Vec<f64> {
    let steps = truth[0].len();
    let mut sums = vec![0.0; steps];
    for n in 0..pred.len() {
        for s in 0..steps {
            let dx = pred[n][s][0] - truth[n][s][0];
            let dy = pred[n][s][1] - truth[n][s][1];
            sums[s] += dx * dx + dy * dy;
        }
    }
    sums.iter().map(|s| (s / pred.len() as f64).sqrt()).collect()
}

/// Straight-line forward pass of any variant, reading weights by name.
pub fn naive_predict(params: &tplab::ParamStore, histories: &[Vec<[f64; 2]>]) -> Vec<[f64; 2]> {
    let p = |n: &str| params.by_name(n).ok().map(|t| t.data().to_vec());
    let must = |n: &str| p(n).unwrap();
    let encode = |h: &[[f64; 2]]| {
        let mut hs = vec![0.0; 32];
        let mut cs = vec![0.0; 32];
        for pt in h {
            let mut e = naive_affine(&must("emb.w"), pt, &must("emb.b"));
            naive_leaky(&mut e);
            (hs, cs) = naive_lstm(&e, &hs, &cs, &must("enc.w_ih"), &must("enc.w_hh"), &must("enc.b"));
        }
        hs
    };
    let ego_state = encode(&histories[4]);
    let ego = p("fc_e.w").map(|w| {
        let mut e = naive_affine(&w, &ego_state, &must("fc_e.b"));
        naive_leaky(&mut e);
        e
    });
    let interaction = if p("conv1.k").is_some() || p("fc_inter.w").is_some() {
        let cells: Vec<Vec<f64>> =
            histories.iter().enumerate().map(|(k, h)| if k == 4 { ego_state.clone() } else { encode(h) }).collect();
        // channel-major [32, 3, 3]
        let mut grid = vec![0.0; 32 * 9];
        for (k, cell) in cells.iter().enumerate() {
            for c in 0..32 {
                grid[c * 9 + (k / 3) * 3 + k % 3] = cell[c];
            }
        }
        let mut out = if let Some(k1) = p("conv1.k") {
            let x = Tensor::new(vec![32, 3, 3], grid).unwrap();
            let mut y1 = naive_conv(&x, &Tensor::new(vec![64, 32, 2, 2], k1).unwrap(), &must("conv1.b"));
            naive_leaky(&mut y1);
            let y1 = Tensor::new(vec![64, 2, 2], y1).unwrap();
            let mut y2 = naive_conv(&y1, &Tensor::new(vec![128, 64, 2, 2], must("conv2.k")).unwrap(), &must("conv2.b"));
            naive_leaky(&mut y2);
            naive_affine(&must("fc_n.w"), &y2, &must("fc_n.b"))
        } else {
            naive_affine(&must("fc_inter.w"), &grid, &must("fc_inter.b"))
        };
        naive_leaky(&mut out);
        Some(out)
    } else {
        None
    };
    let context: Vec<f64> = interaction.into_iter().chain(ego).flatten().collect();
    let mut h = vec![0.0; 64];
    let mut c = vec![0.0; 64];
    let mut out = Vec::new();
    for _ in 0..10 {
        (h, c) = naive_lstm(&context, &h, &c, &must("dec.w_ih"), &must("dec.w_hh"), &must("dec.b"));
        let y = naive_affine(&must("head.w"), &h, &must("head.b"));
        out.push([y[0], y[1]]);
    }
    out
}
