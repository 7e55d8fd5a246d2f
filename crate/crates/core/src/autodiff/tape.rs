use crate::scalar::Scalar;

use super::{shape_err, AutodiffError, Gradients, ParamId, ParamStore, Tensor};

/// Gate blocks of an LSTM cell, in parameter row order.
pub const LSTM_GATES: [&str; 4] = ["input", "forget", "cell", "output"];

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<S> {
    Input,
    Param,
    Affine { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, slope: S },
    /// Output is `[h'; c']`. `cache` holds `[i; f; g; o; tanh(c')]`.
    LstmCell { x: Var, h: Var, c: Var, w_ih: Var, w_hh: Var, b: Var, cache: Vec<S> },
    Slice { x: Var, start: usize },
    Reshape { x: Var },
    Concat(Vec<Var>),
    /// Places `k`-th input vector at spatial cell `k` of a `[C, rows, cols]` grid.
    Implant(Vec<Var>),
    Conv2dValid { x: Var, k: Var, b: Var },
    WeightedMse { pred: Var, truth: Var, w_lat: S, w_lon: S },
    Sum { x: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: S },
}

#[derive(Debug)]
enum Value<S> {
    Owned(Tensor<S>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node<S> {
    value: Value<S>,
    op: Op<S>,
}

/// Arena recording one forward pass for reverse-mode differentiation.
pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: Vec<Node<S>>,
    grads: Vec<Option<Vec<S>>>,
    param_nodes: Vec<Option<Var>>,
}

fn sigmoid<S: Scalar>(v: S) -> S {
    S::one() / (S::one() + (-v).exp())
}

fn add_into<S: Scalar>(dst: &mut [S], src: &[S]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self { params, nodes: Vec::new(), grads: Vec::new(), param_nodes: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.params.get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Gradient of the last `backward` loss with respect to `v`, if reached.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>) -> Var {
        self.nodes.push(Node { value: Value::Owned(value), op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant leaf (data, targets, initial states).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, Op::Input)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so every use of a parameter accumulates into one gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node { value: Value::Param(id), op: Op::Param });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    pub fn param_by_name(&mut self, name: &str) -> Result<Var, AutodiffError> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    /// `y = W x + b` with `W: [O, D]`, `x: [D]`, `b: [O]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if ws.len() != 2 || xs.len() != 1 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] {
            return Err(shape_err("affine", format!("W {ws:?}, x {xs:?}, b {bs:?}")));
        }
        let (o, d) = (ws[0], ws[1]);
        let (xv, wv, bv) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out: Vec<S> = (0..o)
            .map(|r| {
                let row = &wv[r * d..(r + 1) * d];
                row.iter().zip(xv).fold(bv[r], |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        Ok(self.push(Tensor::from_vec(out), Op::Affine { x, w, b }))
    }

    /// Element-wise `max(x, slope * x)`; the derivative at exactly 0 is 1.
    pub fn leaky_relu(&mut self, x: Var, slope: S) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| if v >= S::zero() { v } else { slope * v }).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::LeakyRelu { x, slope })
    }

    /// One LSTM step. Returns `(h', c')`.
    ///
    /// `w_ih: [4H, D]`, `w_hh: [4H, H]`, `b: [4H]`, gate blocks ordered as
    /// [`LSTM_GATES`].
    pub fn lstm_cell(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_ih: Var,
        w_hh: Var,
        b: Var,
    ) -> Result<(Var, Var), AutodiffError> {
        let (xs, hs, cs) = (self.shape(x), self.shape(h), self.shape(c));
        let (wis, whs, bs) = (self.shape(w_ih), self.shape(w_hh), self.shape(b));
        let ok = xs.len() == 1
            && hs.len() == 1
            && cs == hs
            && wis.len() == 2
            && whs.len() == 2
            && bs.len() == 1
            && wis[0] == 4 * hs[0]
            && wis[1] == xs[0]
            && whs[0] == 4 * hs[0]
            && whs[1] == hs[0]
            && bs[0] == 4 * hs[0];
        if !ok {
            return Err(shape_err(
                "lstm_cell",
                format!("x {xs:?}, h {hs:?}, c {cs:?}, W_ih {wis:?}, W_hh {whs:?}, b {bs:?}"),
            ));
        }
        let (d, hd) = (xs[0], hs[0]);
        let xv = self.value(x).data();
        let hv = self.value(h).data();
        let cv = self.value(c).data();
        let wi = self.value(w_ih).data();
        let wh = self.value(w_hh).data();
        let bv = self.value(b).data();

        let mut cache = vec![S::zero(); 5 * hd];
        for r in 0..4 * hd {
            let zi = wi[r * d..(r + 1) * d].iter().zip(xv).fold(bv[r], |a, (&w, &v)| a + w * v);
            let z = wh[r * hd..(r + 1) * hd].iter().zip(hv).fold(zi, |a, (&w, &v)| a + w * v);
            cache[r] = if r / hd == 2 { z.tanh() } else { sigmoid(z) };
        }
        let mut out = vec![S::zero(); 2 * hd];
        for j in 0..hd {
            let (i, f, g, o) = (cache[j], cache[hd + j], cache[2 * hd + j], cache[3 * hd + j]);
            let c_new = f * cv[j] + i * g;
            let tc = c_new.tanh();
            cache[4 * hd + j] = tc;
            out[j] = o * tc;
            out[hd + j] = c_new;
        }
        let joint = self.push(Tensor::from_vec(out), Op::LstmCell { x, h, c, w_ih, w_hh, b, cache });
        let h_new = self.slice(joint, 0, hd)?;
        let c_new = self.slice(joint, hd, hd)?;
        Ok((h_new, c_new))
    }

    /// Contiguous range `[start, start + len)` of a flat view of `x`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, AutodiffError> {
        let data = self.value(x).data();
        if start + len > data.len() {
            return Err(shape_err("slice", format!("[{start}, {}) of {}", start + len, data.len())));
        }
        let out = Tensor::from_vec(data[start..start + len].to_vec());
        Ok(self.push(out, Op::Slice { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, AutodiffError> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, Op::Reshape { x }))
    }

    /// Concatenates vectors along their only axis.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, AutodiffError> {
        if xs.is_empty() {
            return Err(shape_err("concat", "no inputs"));
        }
        let mut data = Vec::new();
        for &x in xs {
            let t = self.value(x);
            if t.shape().len() != 1 {
                return Err(shape_err("concat", format!("input of shape {:?} is not a vector", t.shape())));
            }
            data.extend_from_slice(t.data());
        }
        Ok(self.push(Tensor::from_vec(data), Op::Concat(xs.to_vec())))
    }

    /// Arranges `rows * cols` equal-length vectors into a `[C, rows, cols]`
    /// grid; input `k` lands at row `k / cols`, column `k % cols`.
    pub fn implant(&mut self, cells: &[Var], rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        if cells.len() != rows * cols {
            return Err(shape_err("implant", format!("{} cells for a {rows}x{cols} grid", cells.len())));
        }
        let ch = self.value(cells[0]).len();
        let n = cells.len();
        let mut data = vec![S::zero(); ch * n];
        for (k, &cell) in cells.iter().enumerate() {
            let t = self.value(cell);
            if t.shape() != [ch] {
                return Err(shape_err("implant", format!("cell {k} has shape {:?}, expected [{ch}]", t.shape())));
            }
            for (c, &v) in t.data().iter().enumerate() {
                data[c * n + k] = v;
            }
        }
        let out = Tensor::new(vec![ch, rows, cols], data)?;
        Ok(self.push(out, Op::Implant(cells.to_vec())))
    }

    /// Valid (unpadded, stride 1) cross-correlation.
    ///
    /// `x: [Ci, R, S]`, `k: [Co, Ci, KR, KS]`, `b: [Co]` gives
    /// `[Co, R - KR + 1, S - KS + 1]`.
    pub fn conv2d_valid(&mut self, x: Var, k: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ks, bs) = (self.shape(x), self.shape(k), self.shape(b));
        if xs.len() != 3 || ks.len() != 4 || bs.len() != 1 || ks[1] != xs[0] || bs[0] != ks[0] {
            return Err(shape_err("conv2d_valid", format!("x {xs:?}, k {ks:?}, b {bs:?}")));
        }
        if xs[1] < ks[2] || xs[2] < ks[3] || ks[2] == 0 || ks[3] == 0 {
            return Err(shape_err("conv2d_valid", format!("spatial {:?} smaller than kernel {:?}", &xs[1..], &ks[2..])));
        }
        let (ci, r, s) = (xs[0], xs[1], xs[2]);
        let (co, kr, kc) = (ks[0], ks[2], ks[3]);
        let (or, oc) = (r - kr + 1, s - kc + 1);
        let (xv, kv, bv) = (self.value(x).data(), self.value(k).data(), self.value(b).data());
        let mut out = vec![S::zero(); co * or * oc];
        for o in 0..co {
            for i in 0..or {
                for j in 0..oc {
                    let mut acc = bv[o];
                    for c in 0..ci {
                        for u in 0..kr {
                            let krow = ((o * ci + c) * kr + u) * kc;
                            let xrow = (c * r + i + u) * s + j;
                            for v in 0..kc {
                                acc += kv[krow + v] * xv[xrow + v];
                            }
                        }
                    }
                    out[(o * or + i) * oc + j] = acc;
                }
            }
        }
        let out = Tensor::new(vec![co, or, oc], out)?;
        Ok(self.push(out, Op::Conv2dValid { x, k, b }))
    }

    /// Mean over rows of `w_lat * (pred - truth)[.,0]^2 + w_lon * (pred - truth)[.,1]^2`
    /// for `[T, 2]` trajectories.
    pub fn weighted_mse(&mut self, pred: Var, truth: Var, w_lat: S, w_lon: S) -> Result<Var, AutodiffError> {
        let (ps, ts) = (self.shape(pred), self.shape(truth));
        if ps != ts || ps.len() != 2 || ps[1] != 2 || ps[0] == 0 {
            return Err(shape_err("weighted_mse", format!("pred {ps:?}, truth {ts:?}")));
        }
        let steps = ps[0];
        let (pv, tv) = (self.value(pred).data(), self.value(truth).data());
        let total = (0..steps).fold(S::zero(), |acc, t| {
            let dx = pv[2 * t] - tv[2 * t];
            let dy = pv[2 * t + 1] - tv[2 * t + 1];
            acc + w_lat * dx * dx + w_lon * dy * dy
        });
        let loss = total / S::from_usize(steps).expect("step count");
        Ok(self.push(Tensor::scalar(loss), Op::WeightedMse { pred, truth, w_lat, w_lon }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().fold(S::zero(), |a, &v| a + v);
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let t = self.value(x);
        let data = t.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Scale { x, factor })
    }

    /// Back-propagates from a scalar `loss`, overwriting any earlier gradients.
    ///
    /// Afterwards every node the loss depends on holds `d loss / d node`.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(AutodiffError::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![S::one()]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            let len = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![S::zero(); len]);
            f(slot);
        };
        match &self.nodes[idx].op {
            Op::Input | Op::Param => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let d = xv.len();
                acc(*b, &mut |gb| add_into(gb, g));
                acc(*w, &mut |gw| {
                    for (r, &gr) in g.iter().enumerate() {
                        gw[r * d..(r + 1) * d].iter_mut().zip(xv).for_each(|(a, &x)| *a += gr * x);
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, &gr) in g.iter().enumerate() {
                        gx.iter_mut().zip(&wv[r * d..(r + 1) * d]).for_each(|(a, &w)| *a += gr * w);
                    }
                });
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |gx| {
                    for ((a, &xi), &gi) in gx.iter_mut().zip(xv).zip(g) {
                        *a += if xi >= S::zero() { gi } else { *slope * gi };
                    }
                });
            }
            Op::LstmCell { x, h, c, w_ih, w_hh, b, cache } => {
                let hd = self.value(*h).len();
                let d = self.value(*x).len();
                let cv = self.value(*c).data();
                let (dh, dc) = g.split_at(hd);
                let one = S::one();
                let mut dz = vec![S::zero(); 4 * hd];
                let mut dc_prev = vec![S::zero(); hd];
                for j in 0..hd {
                    let (i, f, gg, o, tc) =
                        (cache[j], cache[hd + j], cache[2 * hd + j], cache[3 * hd + j], cache[4 * hd + j]);
                    let dct = dc[j] + dh[j] * o * (one - tc * tc);
                    dz[j] = dct * gg * i * (one - i);
                    dz[hd + j] = dct * cv[j] * f * (one - f);
                    dz[2 * hd + j] = dct * i * (one - gg * gg);
                    dz[3 * hd + j] = dh[j] * tc * o * (one - o);
                    dc_prev[j] = dct * f;
                }
                let (xv, hv) = (self.value(*x).data(), self.value(*h).data());
                let (wi, wh) = (self.value(*w_ih).data(), self.value(*w_hh).data());
                acc(*c, &mut |gc| add_into(gc, &dc_prev));
                acc(*b, &mut |gb| add_into(gb, &dz));
                acc(*w_ih, &mut |gw| {
                    for (r, &z) in dz.iter().enumerate() {
                        gw[r * d..(r + 1) * d].iter_mut().zip(xv).for_each(|(a, &v)| *a += z * v);
                    }
                });
                acc(*w_hh, &mut |gw| {
                    for (r, &z) in dz.iter().enumerate() {
                        gw[r * hd..(r + 1) * hd].iter_mut().zip(hv).for_each(|(a, &v)| *a += z * v);
                    }
                });
                acc(*x, &mut |gx| {
                    for (r, &z) in dz.iter().enumerate() {
                        gx.iter_mut().zip(&wi[r * d..(r + 1) * d]).for_each(|(a, &w)| *a += z * w);
                    }
                });
                acc(*h, &mut |gh| {
                    for (r, &z) in dz.iter().enumerate() {
                        gh.iter_mut().zip(&wh[r * hd..(r + 1) * hd]).for_each(|(a, &w)| *a += z * w);
                    }
                });
            }
            Op::Slice { x, start } => {
                acc(*x, &mut |gx| add_into(&mut gx[*start..*start + g.len()], g));
            }
            Op::Reshape { x } => acc(*x, &mut |gx| add_into(gx, g)),
            Op::Concat(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    acc(x, &mut |gx| add_into(gx, &g[off..off + n]));
                    off += n;
                }
            }
            Op::Implant(cells) => {
                let n = cells.len();
                for (k, &cell) in cells.iter().enumerate() {
                    acc(cell, &mut |gc| {
                        for (c, a) in gc.iter_mut().enumerate() {
                            *a += g[c * n + k];
                        }
                    });
                }
            }
            Op::Conv2dValid { x, k, b } => {
                let (xs, ks) = (self.shape(*x), self.shape(*k));
                let (ci, r, s) = (xs[0], xs[1], xs[2]);
                let (co, kr, kc) = (ks[0], ks[2], ks[3]);
                let (or, oc) = (r - kr + 1, s - kc + 1);
                let (xv, kv) = (self.value(*x).data(), self.value(*k).data());
                acc(*b, &mut |gb| {
                    for (o, a) in gb.iter_mut().enumerate() {
                        *a += g[o * or * oc..(o + 1) * or * oc].iter().fold(S::zero(), |s, &v| s + v);
                    }
                });
                acc(*k, &mut |gk| {
                    for o in 0..co {
                        for i in 0..or {
                            for j in 0..oc {
                                let go = g[(o * or + i) * oc + j];
                                for c in 0..ci {
                                    for u in 0..kr {
                                        let krow = ((o * ci + c) * kr + u) * kc;
                                        let xrow = (c * r + i + u) * s + j;
                                        for v in 0..kc {
                                            gk[krow + v] += go * xv[xrow + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*x, &mut |gx| {
                    for o in 0..co {
                        for i in 0..or {
                            for j in 0..oc {
                                let go = g[(o * or + i) * oc + j];
                                for c in 0..ci {
                                    for u in 0..kr {
                                        let krow = ((o * ci + c) * kr + u) * kc;
                                        let xrow = (c * r + i + u) * s + j;
                                        for v in 0..kc {
                                            gx[xrow + v] += go * kv[krow + v];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::WeightedMse { pred, truth, w_lat, w_lon } => {
                let (pv, tv) = (self.value(*pred).data(), self.value(*truth).data());
                let steps = S::from_usize(pv.len() / 2).expect("step count");
                let two = S::lit(2.0);
                let diff: Vec<S> = pv
                    .iter()
                    .zip(tv)
                    .enumerate()
                    .map(|(e, (&p, &t))| {
                        let w = if e % 2 == 0 { *w_lat } else { *w_lon };
                        g[0] * two * w * (p - t) / steps
                    })
                    .collect();
                acc(*pred, &mut |gp| add_into(gp, &diff));
                acc(*truth, &mut |gt| gt.iter_mut().zip(&diff).for_each(|(a, &d)| *a -= d));
            }
            Op::Sum { x } => acc(*x, &mut |gx| gx.iter_mut().for_each(|a| *a += g[0])),
            Op::Add { a, b } => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Scale { x, factor } => {
                acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(a, &v)| *a += *factor * v));
            }
        }
    }

    /// Gradients of the last `backward` call for every parameter that was
    /// bound on this tape (zeros when bound but not reached).
    pub fn param_grads(&self) -> Gradients<S> {
        let raw = self
            .param_nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                node.map(|v| {
                    self.grad(v)
                        .map(<[S]>::to_vec)
                        .unwrap_or_else(|| vec![S::zero(); self.params.get(ParamId(i)).len()])
                })
            })
            .collect();
        Gradients::from_raw(raw)
    }
}
