//! Reverse-mode differentiation over a tape of dense `f64` operations.
//!
//! Layers with awkward backward passes (GRU cell, interaction matrices,
//! convolution, pooling) are single fused nodes with hand-written
//! gradients; everything else is a handful of generic element-wise ops.

use std::borrow::Cow;

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Similarity used to build an interaction matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Interaction {
    #[default]
    Dot,
    Cosine,
    Bilinear,
}

impl Interaction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Interaction::Dot => "dot",
            Interaction::Cosine => "cosine",
            Interaction::Bilinear => "bilinear",
        }
    }
}

impl std::str::FromStr for Interaction {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "dot" => Ok(Interaction::Dot),
            "cosine" => Ok(Interaction::Cosine),
            "bilinear" => Ok(Interaction::Bilinear),
            other => Err(crate::Error::Config(format!(
                "interaction must be dot|cosine|bilinear, got `{other}`"
            ))),
        }
    }
}

/// Handling of pooling windows that run past the input edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolEdge {
    /// Keep partial windows: output extent is `ceil(n / p)`.
    #[default]
    Partial,
    /// Drop partial windows: output extent is `floor(n / p)`.
    Drop,
}

impl PoolEdge {
    pub fn out_len(&self, n: usize, p: usize) -> usize {
        match self {
            PoolEdge::Partial => n.div_ceil(p),
            PoolEdge::Drop => n / p,
        }
    }
}

/// GRU parameters bound into a graph, in the order
/// `w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h`.
#[derive(Debug, Clone, Copy)]
pub struct GruVars(pub [Var; 9]);

#[derive(Debug)]
enum Op {
    Leaf,
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    Concat(Vec<Var>),
    Slice {
        src: Var,
        offset: usize,
    },
    Affine {
        w: Var,
        x: Var,
        b: Option<Var>,
    },
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Scale {
        src: Var,
        factors: Vec<f64>,
    },
    WeightedSum {
        src: Var,
        weights: Vec<f64>,
    },
    Gru {
        x: Var,
        h: Var,
        p: GruVars,
        z: Vec<f64>,
        r: Vec<f64>,
        cand: Vec<f64>,
    },
    Interaction {
        a: Var,
        b: Var,
        mode: Interaction,
        bilinear: Option<Var>,
        a_norms: Vec<f64>,
        b_norms: Vec<f64>,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
        pool: (usize, usize),
    },
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// A computation tape. Leaves may borrow parameter storage for `'a`.
#[derive(Debug, Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matvec_into(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += W^T g` and `dW += g x^T` for `W` of shape `g.len() x x.len()`.
fn matvec_backward(g: &[f64], w: &[f64], x: &[f64], dw: Option<&mut [f64]>, dx: Option<&mut [f64]>) {
    let cols = x.len();
    if let Some(dw) = dw {
        for (gi, row) in g.iter().zip(dw.chunks_exact_mut(cols)) {
            if *gi != 0.0 {
                for (d, xv) in row.iter_mut().zip(x) {
                    *d += gi * xv;
                }
            }
        }
    }
    if let Some(dx) = dx {
        for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
            if *gi != 0.0 {
                for (d, wv) in dx.iter_mut().zip(row) {
                    *d += gi * wv;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn acc<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node<'_>], v: Var) -> Option<&'g mut Vec<f64>> {
    let pn = &nodes[v.0];
    if !pn.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; pn.value.len()]))
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'a, [f64]>, op: Op, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        let needs = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(shape, Cow::Owned(value), op, needs)
    }

    /// Trainable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, true)
    }

    pub fn param_owned(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Cow::Owned(t.into_data()), Op::Leaf, false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Var {
        self.push(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Leaf, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.constant(Tensor::zeros(shape))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        debug_assert_eq!(val.len(), 1);
        val[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Rows of `table` selected by `ids`; id 0 (padding) yields a zero row
    /// that receives no gradient.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let shape = self.shape(table);
        assert_eq!(shape.len(), 2, "embedding table must be 2-D");
        let (rows, d) = (shape[0], shape[1]);
        let t = self.value(table);
        let mut out = vec![0.0; ids.len() * d];
        for (k, &id) in ids.iter().enumerate() {
            assert!(id < rows, "token id {id} out of range for table with {rows} rows");
            if id != crate::text::PAD {
                out[k * d..(k + 1) * d].copy_from_slice(&t[id * d..(id + 1) * d]);
            }
        }
        self.derived(
            vec![ids.len(), d],
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Concatenates the flattened values of `parts` into a node of `shape`.
    pub fn concat(&mut self, parts: &[Var], shape: Vec<usize>) -> Var {
        let mut out = Vec::with_capacity(shape.iter().product());
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        assert_eq!(out.len(), shape.iter().product::<usize>(), "concat size mismatch");
        self.derived(shape, out, Op::Concat(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, v: Var, shape: Vec<usize>) -> Var {
        self.concat(&[v], shape)
    }

    pub fn slice(&mut self, src: Var, offset: usize, shape: Vec<usize>) -> Var {
        let n: usize = shape.iter().product();
        let out = self.value(src)[offset..offset + n].to_vec();
        self.derived(shape, out, Op::Slice { src, offset }, &[src])
    }

    /// Row `i` of a 2-D node, as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let cols = self.shape(m)[1];
        self.slice(m, i * cols, vec![cols])
    }

    /// `w x + b` for `w` of shape `out x in`.
    pub fn affine(&mut self, w: Var, x: Var, b: Option<Var>) -> Var {
        let ws = self.shape(w);
        let (rows, cols) = (ws[0], ws[1]);
        assert_eq!(self.value(x).len(), cols, "affine input size");
        let mut out = match b {
            Some(b) => self.value(b).to_vec(),
            None => vec![0.0; rows],
        };
        matvec_into(&mut out, self.value(w), self.value(x));
        let mut parents = vec![w, x];
        parents.extend(b);
        self.derived(vec![rows], out, Op::Affine { w, x, b }, &parents)
    }

    fn unary(&mut self, src: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.value(src).iter().map(|&x| f(x)).collect();
        let shape = self.shape(src).to_vec();
        self.derived(shape, out, op, &[src])
    }

    pub fn tanh(&mut self, v: Var) -> Var {
        self.unary(v, f64::tanh, Op::Tanh(v))
    }

    pub fn sigmoid(&mut self, v: Var) -> Var {
        self.unary(v, sigmoid, Op::Sigmoid(v))
    }

    pub fn relu(&mut self, v: Var) -> Var {
        self.unary(v, |x| x.max(0.0), Op::Relu(v))
    }

    pub fn softmax(&mut self, v: Var) -> Var {
        let x = self.value(v);
        let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = x.iter().map(|&a| (a - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let out = e.into_iter().map(|a| a / s).collect();
        let shape = self.shape(v).to_vec();
        self.derived(shape, out, Op::Softmax(v), &[v])
    }

    /// Element-wise product with constant factors (dropout masks).
    pub fn scale(&mut self, v: Var, factors: Vec<f64>) -> Var {
        assert_eq!(factors.len(), self.value(v).len());
        let out = self.value(v).iter().zip(&factors).map(|(a, b)| a * b).collect();
        let shape = self.shape(v).to_vec();
        self.derived(shape, out, Op::Scale { src: v, factors }, &[v])
    }

    /// Scalar `sum_k weights[k] * v[k]`.
    pub fn weighted_sum(&mut self, v: Var, weights: Vec<f64>) -> Var {
        assert_eq!(weights.len(), self.value(v).len());
        let s = self.value(v).iter().zip(&weights).map(|(a, b)| a * b).sum();
        self.derived(vec![1], vec![s], Op::WeightedSum { src: v, weights }, &[v])
    }

    /// Element `i` of `v` as a scalar node.
    pub fn pick(&mut self, v: Var, i: usize) -> Var {
        self.slice(v, i, vec![1])
    }

    /// One GRU cell step:
    /// `z = s(Wz x + Uz h + bz)`, `r = s(Wr x + Ur h + br)`,
    /// `c = tanh(Wh x + Uh (r*h) + bh)`, `h' = (1 - z)*h + z*c`.
    pub fn gru_step(&mut self, x: Var, h: Var, p: GruVars) -> Var {
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = p.0;
        let xv = self.value(x);
        let hv = self.value(h);
        let o = hv.len();
        assert_eq!(self.shape(w_z), &[o, xv.len()], "gru input weight shape");
        assert_eq!(self.shape(u_z), &[o, o], "gru recurrent weight shape");

        let gate = |w: Var, u: Var, b: Var, hin: &[f64]| -> Vec<f64> {
            let mut a = self.value(b).to_vec();
            matvec_into(&mut a, self.value(w), xv);
            matvec_into(&mut a, self.value(u), hin);
            a
        };
        let z: Vec<f64> = gate(w_z, u_z, b_z, hv).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(w_r, u_r, b_r, hv).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(a, b)| a * b).collect();
        let cand: Vec<f64> = gate(w_h, u_h, b_h, &rh).into_iter().map(f64::tanh).collect();
        let out: Vec<f64> = (0..o).map(|k| (1.0 - z[k]) * hv[k] + z[k] * cand[k]).collect();

        let mut parents = vec![x, h];
        parents.extend_from_slice(&p.0);
        self.derived(vec![o], out, Op::Gru { x, h, p, z, r, cand }, &parents)
    }

    /// Runs a GRU over `xs` from a zero state; hidden states are returned
    /// in input order even when `reverse` is set.
    pub fn gru_sequence(&mut self, xs: &[Var], p: GruVars, hidden: usize, reverse: bool) -> Vec<Var> {
        let mut h = self.zeros(&[hidden]);
        let mut out = vec![h; xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in order {
            h = self.gru_step(xs[t], h, p);
            out[t] = h;
        }
        out
    }

    /// Bidirectional GRU over the rows of `seq` (`len x d`), giving a
    /// `len x 2*hidden` node whose row `t` is `[fwd_t; bwd_t]`.
    pub fn bigru(&mut self, seq: Var, fwd: GruVars, bwd: GruVars, hidden: usize) -> Var {
        let len = self.shape(seq)[0];
        let rows: Vec<Var> = (0..len).map(|t| self.row(seq, t)).collect();
        self.bigru_rows(&rows, fwd, bwd, hidden)
    }

    pub fn bigru_rows(&mut self, rows: &[Var], fwd: GruVars, bwd: GruVars, hidden: usize) -> Var {
        let f = self.gru_sequence(rows, fwd, hidden, false);
        let b = self.gru_sequence(rows, bwd, hidden, true);
        let parts: Vec<Var> = f.into_iter().zip(b).flat_map(|(a, b)| [a, b]).collect();
        self.concat(&parts, vec![rows.len(), 2 * hidden])
    }

    /// `l_a x l_b` similarity matrix between the rows of `a` and `b`.
    /// Cosine entries involving a zero-norm row are 0.
    pub fn interaction(&mut self, a: Var, b: Var, mode: Interaction, bilinear: Option<Var>) -> Var {
        let (la, d) = (self.shape(a)[0], self.shape(a)[1]);
        let (lb, db) = (self.shape(b)[0], self.shape(b)[1]);
        assert_eq!(d, db, "interaction operands differ in width");
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; la * lb];
        let mut a_norms = Vec::new();
        let mut b_norms = Vec::new();
        match mode {
            Interaction::Dot => {
                for i in 0..la {
                    let ar = &av[i * d..(i + 1) * d];
                    for j in 0..lb {
                        out[i * lb + j] = ar.iter().zip(&bv[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
                    }
                }
            }
            Interaction::Cosine => {
                let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();
                a_norms = (0..la).map(|i| norm(&av[i * d..(i + 1) * d])).collect();
                b_norms = (0..lb).map(|j| norm(&bv[j * d..(j + 1) * d])).collect();
                for i in 0..la {
                    if a_norms[i] == 0.0 {
                        continue;
                    }
                    let ar = &av[i * d..(i + 1) * d];
                    for j in 0..lb {
                        if b_norms[j] == 0.0 {
                            continue;
                        }
                        let dot: f64 = ar.iter().zip(&bv[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
                        out[i * lb + j] = dot / (a_norms[i] * b_norms[j]);
                    }
                }
            }
            Interaction::Bilinear => {
                let w = bilinear.expect("bilinear interaction needs a matrix");
                assert_eq!(self.shape(w), &[d, d], "bilinear matrix shape");
                let wv = self.value(w);
                // wb[j] = W b_j
                let mut wb = vec![0.0; lb * d];
                for j in 0..lb {
                    matvec_into(&mut wb[j * d..(j + 1) * d], wv, &bv[j * d..(j + 1) * d]);
                }
                for i in 0..la {
                    let ar = &av[i * d..(i + 1) * d];
                    for j in 0..lb {
                        out[i * lb + j] = ar.iter().zip(&wb[j * d..(j + 1) * d]).map(|(x, y)| x * y).sum();
                    }
                }
            }
        }
        let mut parents = vec![a, b];
        if mode == Interaction::Bilinear {
            parents.extend(bilinear);
        }
        let bilinear = if mode == Interaction::Bilinear { bilinear } else { None };
        self.derived(
            vec![la, lb],
            out,
            Op::Interaction {
                a,
                b,
                mode,
                bilinear,
                a_norms,
                b_norms,
            },
            &parents,
        )
    }

    /// Valid cross-correlation of `input` (`C x H x W`) with `weight`
    /// (`K x C x kh x kw`) plus `bias` (`K`), without activation.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let is = self.shape(input);
        let (c, h, w) = (is[0], is[1], is[2]);
        let ws = self.shape(weight);
        let (k, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        assert_eq!(c, wc, "conv input channels");
        assert!(h >= kh && w >= kw, "conv kernel larger than input");
        let (oh, ow) = (h - kh + 1, w - kw + 1);
        let x = self.value(input);
        let wt = self.value(weight);
        let bs = self.value(bias);
        let mut out = vec![0.0; k * oh * ow];
        for kk in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut s = bs[kk];
                    for cc in 0..c {
                        for a in 0..kh {
                            let xrow = &x[(cc * h + i + a) * w + j..(cc * h + i + a) * w + j + kw];
                            let wrow = &wt[((kk * c + cc) * kh + a) * kw..((kk * c + cc) * kh + a + 1) * kw];
                            s += xrow.iter().zip(wrow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                    out[(kk * oh + i) * ow + j] = s;
                }
            }
        }
        self.derived(
            vec![k, oh, ow],
            out,
            Op::Conv2d { input, weight, bias },
            &[input, weight, bias],
        )
    }

    /// Non-overlapping max pooling with stride equal to the window.
    pub fn max_pool(&mut self, input: Var, pool: (usize, usize), edge: PoolEdge) -> Var {
        let is = self.shape(input);
        let (k, h, w) = (is[0], is[1], is[2]);
        let (ph, pw) = pool;
        let (oh, ow) = (edge.out_len(h, ph), edge.out_len(w, pw));
        let x = self.value(input);
        let mut out = vec![0.0; k * oh * ow];
        let mut argmax = vec![0; k * oh * ow];
        for kk in 0..k {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for a in i * ph..((i + 1) * ph).min(h) {
                        for b in j * pw..((j + 1) * pw).min(w) {
                            let idx = (kk * h + a) * w + b;
                            if x[idx] > best {
                                best = x[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (kk * oh + i) * ow + j;
                    out[o] = best;
                    argmax[o] = at;
                }
            }
        }
        self.derived(vec![k, oh, ow], out, Op::MaxPool { input, argmax, pool }, &[input])
    }

    /// Distance of the current point from the nearest non-differentiable
    /// configuration: the smallest `|x|` fed to a ReLU, and the smallest gap
    /// between the top two values of any pooling window (windows whose top
    /// two are both exact zeros are ignored; those come from dead ReLUs).
    pub fn kink_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for node in &self.nodes {
            match &node.op {
                Op::Relu(src) => {
                    for &x in self.value(*src) {
                        margin = margin.min(x.abs());
                    }
                }
                Op::MaxPool { input, argmax, pool } => {
                    let x = self.value(*input);
                    let is = self.shape(*input);
                    let (h, w) = (is[1], is[2]);
                    let (oh, ow) = (node.shape[1], node.shape[2]);
                    let (ph, pw) = *pool;
                    for (o, &best_idx) in argmax.iter().enumerate() {
                        let kk = o / (oh * ow);
                        let i = (o / ow) % oh;
                        let j = o % ow;
                        let best = x[best_idx];
                        let mut second = f64::NEG_INFINITY;
                        for a in i * ph..((i + 1) * ph).min(h) {
                            for b in j * pw..((j + 1) * pw).min(w) {
                                let idx = (kk * h + a) * w + b;
                                if idx != best_idx {
                                    second = second.max(x[idx]);
                                }
                            }
                        }
                        if second == f64::NEG_INFINITY || (best == 0.0 && second == 0.0) {
                            continue;
                        }
                        margin = margin.min(best - second);
                    }
                }
                _ => {}
            }
        }
        margin
    }

    /// Backpropagates `d root = 1` from a scalar node.
    pub fn backward(&mut self, root: Var) {
        self.backward_seeded(&[(root, 1.0)]);
    }

    /// Backpropagates from several scalar nodes with the given upstream
    /// gradients. Only leaf gradients are retained.
    pub fn backward_seeded(&mut self, seeds: &[(Var, f64)]) {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        for &(v, g) in seeds {
            assert_eq!(self.nodes[v.0].value.len(), 1, "seed nodes must be scalar");
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0]);
            slot[0] += g;
        }
        let nodes = &self.nodes;
        for i in (0..n).rev() {
            let node = &nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Embedding { table, ids } => {
                    let d = node.shape[1];
                    if let Some(dt) = acc(&mut grads, nodes, *table) {
                        for (k, &id) in ids.iter().enumerate() {
                            if id != crate::text::PAD {
                                add_into(&mut dt[id * d..(id + 1) * d], &g[k * d..(k + 1) * d]);
                            }
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(dp) = acc(&mut grads, nodes, *p) {
                            add_into(dp, &g[off..off + len]);
                        }
                        off += len;
                    }
                }
                Op::Slice { src, offset } => {
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        add_into(&mut ds[*offset..*offset + g.len()], &g);
                    }
                }
                Op::Affine { w, x, b } => {
                    let wv = &nodes[w.0].value;
                    let xv = &nodes[x.0].value;
                    if let Some(dw) = acc(&mut grads, nodes, *w) {
                        matvec_backward(&g, wv, xv, Some(dw), None);
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *x) {
                        matvec_backward(&g, wv, xv, None, Some(dx));
                    }
                    if let Some(b) = b {
                        if let Some(db) = acc(&mut grads, nodes, *b) {
                            add_into(db, &g);
                        }
                    }
                }
                Op::Tanh(src) => {
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for ((d, y), gi) in ds.iter_mut().zip(node.value.iter()).zip(&g) {
                            *d += gi * (1.0 - y * y);
                        }
                    }
                }
                Op::Sigmoid(src) => {
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for ((d, y), gi) in ds.iter_mut().zip(node.value.iter()).zip(&g) {
                            *d += gi * y * (1.0 - y);
                        }
                    }
                }
                Op::Relu(src) => {
                    let xv = &nodes[src.0].value;
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for ((d, x), gi) in ds.iter_mut().zip(xv.iter()).zip(&g) {
                            if *x > 0.0 {
                                *d += gi;
                            }
                        }
                    }
                }
                Op::Softmax(src) => {
                    let y = &node.value;
                    let gy: f64 = g.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for ((d, yi), gi) in ds.iter_mut().zip(y.iter()).zip(&g) {
                            *d += yi * (gi - gy);
                        }
                    }
                }
                Op::Scale { src, factors } => {
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for ((d, f), gi) in ds.iter_mut().zip(factors).zip(&g) {
                            *d += gi * f;
                        }
                    }
                }
                Op::WeightedSum { src, weights } => {
                    if let Some(ds) = acc(&mut grads, nodes, *src) {
                        for (d, w) in ds.iter_mut().zip(weights) {
                            *d += g[0] * w;
                        }
                    }
                }
                Op::Gru { x, h, p, z, r, cand } => {
                    let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = p.0;
                    let xv: &[f64] = &nodes[x.0].value;
                    let hv: &[f64] = &nodes[h.0].value;
                    let o = hv.len();
                    let rh: Vec<f64> = r.iter().zip(hv).map(|(a, b)| a * b).collect();

                    let mut dh = vec![0.0; o];
                    let mut dx = vec![0.0; xv.len()];
                    let mut da_z = vec![0.0; o];
                    let mut da_h = vec![0.0; o];
                    for k in 0..o {
                        dh[k] = g[k] * (1.0 - z[k]);
                        let dz = g[k] * (cand[k] - hv[k]);
                        da_z[k] = dz * z[k] * (1.0 - z[k]);
                        da_h[k] = g[k] * z[k] * (1.0 - cand[k] * cand[k]);
                    }
                    // candidate branch
                    let uh: &[f64] = &nodes[u_h.0].value;
                    let mut drh = vec![0.0; o];
                    matvec_backward(&da_h, uh, &rh, None, Some(&mut drh));
                    let mut da_r = vec![0.0; o];
                    for k in 0..o {
                        dh[k] += drh[k] * r[k];
                        let dr = drh[k] * hv[k];
                        da_r[k] = dr * r[k] * (1.0 - r[k]);
                    }
                    matvec_backward(&da_h, &nodes[w_h.0].value, xv, None, Some(&mut dx));
                    matvec_backward(&da_r, &nodes[w_r.0].value, xv, None, Some(&mut dx));
                    matvec_backward(&da_z, &nodes[w_z.0].value, xv, None, Some(&mut dx));
                    matvec_backward(&da_r, &nodes[u_r.0].value, hv, None, Some(&mut dh));
                    matvec_backward(&da_z, &nodes[u_z.0].value, hv, None, Some(&mut dh));

                    for (wv, uv, bv, da, hin) in [
                        (w_z, u_z, b_z, &da_z, hv),
                        (w_r, u_r, b_r, &da_r, hv),
                        (w_h, u_h, b_h, &da_h, &rh[..]),
                    ] {
                        if let Some(dw) = acc(&mut grads, nodes, wv) {
                            matvec_backward(da, &[], xv, Some(dw), None);
                        }
                        if let Some(du) = acc(&mut grads, nodes, uv) {
                            matvec_backward(da, &[], hin, Some(du), None);
                        }
                        if let Some(db) = acc(&mut grads, nodes, bv) {
                            add_into(db, da);
                        }
                    }
                    if let Some(d) = acc(&mut grads, nodes, *x) {
                        add_into(d, &dx);
                    }
                    if let Some(d) = acc(&mut grads, nodes, *h) {
                        add_into(d, &dh);
                    }
                }
                Op::Interaction {
                    a,
                    b,
                    mode,
                    bilinear,
                    a_norms,
                    b_norms,
                } => {
                    let av: &[f64] = &nodes[a.0].value;
                    let bv: &[f64] = &nodes[b.0].value;
                    let (la, lb) = (node.shape[0], node.shape[1]);
                    let d = nodes[a.0].shape[1];
                    let mut da = vec![0.0; la * d];
                    let mut db = vec![0.0; lb * d];
                    match mode {
                        Interaction::Dot => {
                            for i in 0..la {
                                for j in 0..lb {
                                    let gij = g[i * lb + j];
                                    if gij == 0.0 {
                                        continue;
                                    }
                                    for t in 0..d {
                                        da[i * d + t] += gij * bv[j * d + t];
                                        db[j * d + t] += gij * av[i * d + t];
                                    }
                                }
                            }
                        }
                        Interaction::Cosine => {
                            // gradients w.r.t. the normalized rows first
                            let unit = |v: &[f64], norms: &[f64], r: usize, t: usize| {
                                if norms[r] == 0.0 {
                                    0.0
                                } else {
                                    v[r * d + t] / norms[r]
                                }
                            };
                            let mut dah = vec![0.0; la * d];
                            let mut dbh = vec![0.0; lb * d];
                            for i in 0..la {
                                for j in 0..lb {
                                    let gij = g[i * lb + j];
                                    if gij == 0.0 || a_norms[i] == 0.0 || b_norms[j] == 0.0 {
                                        continue;
                                    }
                                    for t in 0..d {
                                        dah[i * d + t] += gij * unit(bv, b_norms, j, t);
                                        dbh[j * d + t] += gij * unit(av, a_norms, i, t);
                                    }
                                }
                            }
                            let project = |v: &[f64], norms: &[f64], dh: &[f64], out: &mut [f64], rows: usize| {
                                for r in 0..rows {
                                    if norms[r] == 0.0 {
                                        continue;
                                    }
                                    let u: Vec<f64> = (0..d).map(|t| v[r * d + t] / norms[r]).collect();
                                    let ud: f64 = (0..d).map(|t| u[t] * dh[r * d + t]).sum();
                                    for t in 0..d {
                                        out[r * d + t] = (dh[r * d + t] - u[t] * ud) / norms[r];
                                    }
                                }
                            };
                            project(av, a_norms, &dah, &mut da, la);
                            project(bv, b_norms, &dbh, &mut db, lb);
                        }
                        Interaction::Bilinear => {
                            let w = bilinear.expect("bilinear parent");
                            let wv: &[f64] = &nodes[w.0].value;
                            let mut wb = vec![0.0; lb * d];
                            let mut wta = vec![0.0; la * d];
                            for j in 0..lb {
                                matvec_into(&mut wb[j * d..(j + 1) * d], wv, &bv[j * d..(j + 1) * d]);
                            }
                            for i in 0..la {
                                // W^T a_i
                                for s in 0..d {
                                    let ai = av[i * d + s];
                                    for t in 0..d {
                                        wta[i * d + t] += wv[s * d + t] * ai;
                                    }
                                }
                            }
                            let mut dw = vec![0.0; d * d];
                            for i in 0..la {
                                for j in 0..lb {
                                    let gij = g[i * lb + j];
                                    if gij == 0.0 {
                                        continue;
                                    }
                                    for t in 0..d {
                                        da[i * d + t] += gij * wb[j * d + t];
                                        db[j * d + t] += gij * wta[i * d + t];
                                    }
                                    for s in 0..d {
                                        let ga = gij * av[i * d + s];
                                        for t in 0..d {
                                            dw[s * d + t] += ga * bv[j * d + t];
                                        }
                                    }
                                }
                            }
                            if let Some(dwv) = acc(&mut grads, nodes, w) {
                                add_into(dwv, &dw);
                            }
                        }
                    }
                    if let Some(d) = acc(&mut grads, nodes, *a) {
                        add_into(d, &da);
                    }
                    if let Some(d) = acc(&mut grads, nodes, *b) {
                        add_into(d, &db);
                    }
                }
                Op::Conv2d { input, weight, bias } => {
                    let is = &nodes[input.0].shape;
                    let (c, h, w) = (is[0], is[1], is[2]);
                    let ws = &nodes[weight.0].shape;
                    let (k, kh, kw) = (ws[0], ws[2], ws[3]);
                    let (oh, ow) = (node.shape[1], node.shape[2]);
                    let x: &[f64] = &nodes[input.0].value;
                    let wt: &[f64] = &nodes[weight.0].value;
                    if let Some(dbias) = acc(&mut grads, nodes, *bias) {
                        for kk in 0..k {
                            dbias[kk] += g[kk * oh * ow..(kk + 1) * oh * ow].iter().sum::<f64>();
                        }
                    }
                    if let Some(dw) = acc(&mut grads, nodes, *weight) {
                        for kk in 0..k {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let go = g[(kk * oh + i) * ow + j];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for cc in 0..c {
                                        for a in 0..kh {
                                            for b in 0..kw {
                                                dw[((kk * c + cc) * kh + a) * kw + b] +=
                                                    go * x[(cc * h + i + a) * w + j + b];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    if let Some(dx) = acc(&mut grads, nodes, *input) {
                        for kk in 0..k {
                            for i in 0..oh {
                                for j in 0..ow {
                                    let go = g[(kk * oh + i) * ow + j];
                                    if go == 0.0 {
                                        continue;
                                    }
                                    for cc in 0..c {
                                        for a in 0..kh {
                                            for b in 0..kw {
                                                dx[(cc * h + i + a) * w + j + b] +=
                                                    go * wt[((kk * c + cc) * kh + a) * kw + b];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Op::MaxPool { input, argmax, .. } => {
                    if let Some(dx) = acc(&mut grads, nodes, *input) {
                        for (o, &idx) in argmax.iter().enumerate() {
                            dx[idx] += g[o];
                        }
                    }
                }
            }
        }
        self.grads = grads;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_backward() {
        let w = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let x = Tensor::vector(vec![1., 0., -1.]);
        let mut g = Graph::new();
        let wv = g.param(&w);
        let xv = g.param(&x);
        let y = g.affine(wv, xv, None);
        assert_eq!(g.value(y), &[-2.0, -2.0]);
        let s = g.weighted_sum(y, vec![1.0, 2.0]);
        g.backward(s);
        assert_eq!(g.grad(xv).unwrap(), &[9.0, 12.0, 15.0]);
        assert_eq!(g.grad(wv).unwrap(), &[1., 0., -1., 2., 0., -2.]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let t = g.tanh(c);
        let s = g.weighted_sum(t, vec![1.0, 1.0]);
        g.backward(s);
        assert!(g.grad(c).is_none());
    }

    #[test]
    fn embedding_zeroes_padding() {
        let table = Tensor::matrix(3, 2, vec![9., 9., 1., 2., 3., 4.]).unwrap();
        let mut g = Graph::new();
        let t = g.param(&table);
        let e = g.embedding(t, &[2, 0, 2]);
        assert_eq!(g.value(e), &[3., 4., 0., 0., 3., 4.]);
        let s = g.weighted_sum(e, vec![1.0; 6]);
        g.backward(s);
        assert_eq!(g.grad(t).unwrap(), &[0., 0., 0., 0., 2., 2.]);
    }

    #[test]
    fn pool_edges() {
        assert_eq!(PoolEdge::Partial.out_len(5, 3), 2);
        assert_eq!(PoolEdge::Drop.out_len(5, 3), 1);
    }
}
