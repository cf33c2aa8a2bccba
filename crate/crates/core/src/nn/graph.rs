//! Dynamic computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every example: each operation appends a node
//! holding its forward value, and [`Graph::backward`] walks the nodes in
//! reverse to produce parameter gradients. Parameters are read in place from a
//! borrowed [`ParameterSet`], so several graphs may run inference over the same
//! frozen parameters concurrently.

use crate::error::{Error, Result};
use crate::nn::tensor::{Gradients, ParamId, ParameterSet};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    EmbedRow {
        table: ParamId,
        row: usize,
    },
    Linear {
        w: ParamId,
        b: Option<ParamId>,
        x: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat(Vec<Var>),
    Slice {
        x: Var,
        start: usize,
    },
    Sum(Var),
    Dot(Var, Var),
    Softmax(Var),
    WeightedSum {
        weights: Var,
        items: Vec<Var>,
    },
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<f64>,
    },
    LstmCell(Box<LstmCache>),
}

#[derive(Debug)]
struct LstmCache {
    x: Var,
    h: Var,
    c: Var,
    w_ih: ParamId,
    w_hh: ParamId,
    b: ParamId,
    // Activated gates laid out as [i | f | g | o].
    gates: Vec<f64>,
    tanh_cell: Vec<f64>,
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParameterSet,
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matvec_into(w: &[f64], cols: usize, x: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dw += g ⊗ x` and `dx += wᵀ g` for a row-major `w`.
fn matvec_backward(w: &[f64], cols: usize, x: &[f64], g: &[f64], dw: Option<&mut [f64]>, dx: &mut [f64]) {
    if let Some(dw) = dw {
        for (drow, &gr) in dw.chunks_exact_mut(cols).zip(g) {
            if gr != 0.0 {
                for (d, xv) in drow.iter_mut().zip(x) {
                    *d += gr * xv;
                }
            }
        }
    }
    for (row, &gr) in w.chunks_exact(cols).zip(g) {
        if gr != 0.0 {
            for (d, wv) in dx.iter_mut().zip(row) {
                *d += gr * wv;
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParameterSet) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        match self.value(v) {
            [x] => Ok(*x),
            other => Err(Error::Shape(format!("expected a scalar, got {} values", other.len()))),
        }
    }

    /// Constant leaf; gradients stop here.
    pub fn input(&mut self, values: Vec<f64>) -> Var {
        self.push(values, Op::Input)
    }

    /// Whole parameter as a flat vector.
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).values().to_vec();
        self.push(value, Op::Param(id))
    }

    /// Row `row` of a 2-d lookup table.
    pub fn embed(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.params.get(table);
        if t.shape().len() != 2 {
            return Err(Error::Shape(format!("lookup table must be 2-d, got {:?}", t.shape())));
        }
        let value = t.row(row)?.to_vec();
        Ok(self.push(value, Op::EmbedRow { table, row }))
    }

    /// `w·x + b` with `w` of shape `[out, in]`.
    pub fn linear(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Result<Var> {
        let wt = self.params.get(w);
        if wt.shape().len() != 2 || wt.cols() != self.value(x).len() {
            return Err(Error::Shape(format!(
                "linear weight {:?} applied to input of width {}",
                wt.shape(),
                self.value(x).len()
            )));
        }
        let mut out = match b {
            Some(b) => {
                let bt = self.params.get(b);
                if bt.len() != wt.rows() {
                    return Err(Error::Shape(format!(
                        "bias of width {} for {} outputs",
                        bt.len(),
                        wt.rows()
                    )));
                }
                bt.values().to_vec()
            }
            None => vec![0.0; wt.rows()],
        };
        matvec_into(wt.values(), wt.cols(), self.value(x), &mut out);
        Ok(self.push(out, Op::Linear { w, b, x }))
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Shape(format!("{what} of widths {la} and {lb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "add")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "mul")?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * k).collect();
        self.push(v, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().copied().map(sigmoid).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat of no parts".into()));
        }
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.value(*p).len()).sum());
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(x);
        if len == 0 || start + len > src.len() {
            return Err(Error::Shape(format!(
                "slice [{start}, {}) of width {}",
                start + len,
                src.len()
            )));
        }
        let v = src[start..start + len].to_vec();
        Ok(self.push(v, Op::Slice { x, start }))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len(a, b, "dot")?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        Ok(self.push(vec![s], Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let v = softmax(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    /// `Σ weights[t] · items[t]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if items.is_empty() {
            return Err(Error::Empty("weighted sum over no items".into()));
        }
        let w = self.value(weights);
        if w.len() != items.len() {
            return Err(Error::Shape(format!("{} weights for {} items", w.len(), items.len())));
        }
        let width = self.value(items[0]).len();
        let mut out = vec![0.0; width];
        for (&wt, item) in w.iter().zip(items) {
            let iv = self.value(*item);
            if iv.len() != width {
                return Err(Error::Shape(format!("items of widths {width} and {}", iv.len())));
            }
            for (o, x) in out.iter_mut().zip(iv) {
                *o += wt * x;
            }
        }
        Ok(self.push(
            out,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        ))
    }

    /// `-log softmax(logits)[target]`, computed with max subtraction.
    pub fn softmax_xent(&mut self, logits: Var, target: usize) -> Result<Var> {
        let l = self.value(logits);
        if target >= l.len() {
            return Err(Error::Range {
                what: "logits",
                index: target,
                size: l.len(),
            });
        }
        let lse = log_sum_exp(l);
        let loss = (lse - l[target]).max(0.0);
        let probs = l.iter().map(|x| (x - lse).exp()).collect();
        Ok(self.push(
            vec![loss],
            Op::SoftmaxXent {
                logits,
                target,
                probs,
            },
        ))
    }

    /// One fused LSTM step; returns the new `(hidden, cell)`.
    ///
    /// `w_ih` is `[4H, D]`, `w_hh` is `[4H, H]`, `b` is `[4H]`, with gate blocks
    /// ordered input, forget, candidate, output.
    #[allow(clippy::too_many_arguments)]
    pub fn lstm_cell(
        &mut self,
        w_ih: ParamId,
        w_hh: ParamId,
        b: ParamId,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let (wi, wh, bt) = (self.params.get(w_ih), self.params.get(w_hh), self.params.get(b));
        let hidden = self.value(h).len();
        let din = self.value(x).len();
        if self.value(c).len() != hidden
            || wi.shape() != [4 * hidden, din]
            || wh.shape() != [4 * hidden, hidden]
            || bt.len() != 4 * hidden
        {
            return Err(Error::Shape(format!(
                "lstm weights {:?}/{:?}/{:?} with input {din}, hidden {hidden}, cell {}",
                wi.shape(),
                wh.shape(),
                bt.shape(),
                self.value(c).len()
            )));
        }
        let mut z = bt.values().to_vec();
        matvec_into(wi.values(), din, self.value(x), &mut z);
        matvec_into(wh.values(), hidden, self.value(h), &mut z);
        let (zi, rest) = z.split_at_mut(hidden);
        let (zf, rest) = rest.split_at_mut(hidden);
        let (zg, zo) = rest.split_at_mut(hidden);
        zi.iter_mut().for_each(|v| *v = sigmoid(*v));
        zf.iter_mut().for_each(|v| *v = sigmoid(*v));
        zg.iter_mut().for_each(|v| *v = v.tanh());
        zo.iter_mut().for_each(|v| *v = sigmoid(*v));
        let c_prev = self.value(c);
        let mut out = vec![0.0; 2 * hidden];
        let mut tanh_cell = vec![0.0; hidden];
        for k in 0..hidden {
            let cell = zf[k] * c_prev[k] + zi[k] * zg[k];
            tanh_cell[k] = cell.tanh();
            out[k] = zo[k] * tanh_cell[k];
            out[hidden + k] = cell;
        }
        let node = self.push(
            out,
            Op::LstmCell(Box::new(LstmCache {
                x,
                h,
                c,
                w_ih,
                w_hh,
                b,
                gates: z,
                tanh_cell,
            })),
        );
        let h_new = self.slice(node, 0, hidden)?;
        let c_new = self.slice(node, hidden, hidden)?;
        Ok((h_new, c_new))
    }

    /// Reverse pass from a scalar node. Returns gradients for every parameter
    /// with `requires_grad` that the loss depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {} values",
                self.value(loss).len()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::default();
        let params = self.params;

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    if params.get(*id).requires_grad() {
                        add_into(&mut out.entry(*id, g.len()).values, &g);
                    }
                }
                Op::EmbedRow { table, row } => {
                    let t = params.get(*table);
                    if t.requires_grad() {
                        let w = t.cols();
                        let e = out.entry(*table, t.len());
                        add_into(&mut e.values[row * w..(row + 1) * w], &g);
                        e.rows.insert(*row);
                    }
                }
                Op::Linear { w, b, x } => {
                    let wt = params.get(*w);
                    let xv = self.value(*x);
                    let mut dx = vec![0.0; xv.len()];
                    let dw = if wt.requires_grad() {
                        Some(out.entry(*w, wt.len()).values.as_mut_slice())
                    } else {
                        None
                    };
                    matvec_backward(wt.values(), wt.cols(), xv, &g, dw, &mut dx);
                    if let Some(b) = b {
                        if params.get(*b).requires_grad() {
                            add_into(&mut out.entry(*b, g.len()).values, &g);
                        }
                    }
                    add_into(acc(&mut grads, *x, dx.len()), &dx);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = g.iter().zip(av).map(|(g, x)| g * x).collect();
                    add_into(acc(&mut grads, *a, g.len()), &da);
                    add_into(acc(&mut grads, *b, g.len()), &db);
                }
                Op::Scale(a, k) => {
                    let d: Vec<f64> = g.iter().map(|g| g * k).collect();
                    add_into(acc(&mut grads, *a, g.len()), &d);
                }
                Op::Tanh(a) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * (1.0 - y * y)).collect();
                    add_into(acc(&mut grads, *a, g.len()), &d);
                }
                Op::Sigmoid(a) => {
                    let d: Vec<f64> = g.iter().zip(&node.value).map(|(g, y)| g * y * (1.0 - y)).collect();
                    add_into(acc(&mut grads, *a, g.len()), &d);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        add_into(acc(&mut grads, *p, n), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.value(*x).len();
                    let dst = acc(&mut grads, *x, n);
                    add_into(&mut dst[*start..*start + g.len()], &g);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut grads, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = bv.iter().map(|y| g[0] * y).collect();
                    let db: Vec<f64> = av.iter().map(|x| g[0] * x).collect();
                    add_into(acc(&mut grads, *a, da.len()), &da);
                    add_into(acc(&mut grads, *b, db.len()), &db);
                }
                Op::Softmax(a) => {
                    let p = &node.value;
                    let gp: f64 = g.iter().zip(p).map(|(g, p)| g * p).sum();
                    let d: Vec<f64> = g.iter().zip(p).map(|(g, p)| p * (g - gp)).collect();
                    add_into(acc(&mut grads, *a, d.len()), &d);
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights).to_vec();
                    let mut dw = vec![0.0; items.len()];
                    for (t, item) in items.iter().enumerate() {
                        let iv = self.value(*item);
                        dw[t] = g.iter().zip(iv).map(|(g, x)| g * x).sum();
                        let di: Vec<f64> = g.iter().map(|g| g * w[t]).collect();
                        add_into(acc(&mut grads, *item, di.len()), &di);
                    }
                    add_into(acc(&mut grads, *weights, dw.len()), &dw);
                }
                Op::SoftmaxXent {
                    logits,
                    target,
                    probs,
                } => {
                    let mut d: Vec<f64> = probs.iter().map(|p| g[0] * p).collect();
                    d[*target] -= g[0];
                    add_into(acc(&mut grads, *logits, d.len()), &d);
                }
                Op::LstmCell(cache) => {
                    self.lstm_backward(cache, &g, &mut grads, &mut out);
                }
            }
        }
        Ok(out)
    }

    fn lstm_backward(
        &self,
        cache: &LstmCache,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) {
        let params = self.params;
        let hidden = cache.tanh_cell.len();
        let (dh, dc_out) = g.split_at(hidden);
        let gates = &cache.gates;
        let (gi, rest) = gates.split_at(hidden);
        let (gf, rest) = rest.split_at(hidden);
        let (gg, go) = rest.split_at(hidden);
        let c_prev = self.value(cache.c);

        let mut dz = vec![0.0; 4 * hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let tc = cache.tanh_cell[k];
            let dcell = dc_out[k] + dh[k] * go[k] * (1.0 - tc * tc);
            dz[k] = dcell * gg[k] * gi[k] * (1.0 - gi[k]);
            dz[hidden + k] = dcell * c_prev[k] * gf[k] * (1.0 - gf[k]);
            dz[2 * hidden + k] = dcell * gi[k] * (1.0 - gg[k] * gg[k]);
            dz[3 * hidden + k] = dh[k] * tc * go[k] * (1.0 - go[k]);
            dc_prev[k] = dcell * gf[k];
        }

        let (wi, wh, bt) = (
            params.get(cache.w_ih),
            params.get(cache.w_hh),
            params.get(cache.b),
        );
        let xv = self.value(cache.x);
        let hv = self.value(cache.h);
        let mut dx = vec![0.0; xv.len()];
        let mut dh_prev = vec![0.0; hidden];
        {
            let dw = if wi.requires_grad() {
                Some(out.entry(cache.w_ih, wi.len()).values.as_mut_slice())
            } else {
                None
            };
            matvec_backward(wi.values(), xv.len(), xv, &dz, dw, &mut dx);
        }
        {
            let dw = if wh.requires_grad() {
                Some(out.entry(cache.w_hh, wh.len()).values.as_mut_slice())
            } else {
                None
            };
            matvec_backward(wh.values(), hidden, hv, &dz, dw, &mut dh_prev);
        }
        if bt.requires_grad() {
            add_into(&mut out.entry(cache.b, bt.len()).values, &dz);
        }
        let mut put = |v: Var, d: &[f64]| {
            let dst = grads[v.0].get_or_insert_with(|| vec![0.0; d.len()]);
            add_into(dst, d);
        };
        put(cache.x, &dx);
        put(cache.h, &dh_prev);
        put(cache.c, &dc_prev);
    }
}

pub(crate) fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if *v > x[best] {
            best = i;
        }
    }
    best
}
