//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every operation appends a node holding its forward value. [`Tape::backward`]
//! walks the nodes from the loss back to the first node and accumulates
//! gradients; parameter leaves add their gradient into the owning
//! [`ParamStore`], so a parameter read through several leaves receives the sum.

use rand::Rng;

use super::tensor::{self, Tensor};
use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Target id that contributes nothing to [`Tape::cross_entropy`].
pub const IGNORE: usize = usize::MAX;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gelu(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    CausalMask(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
        count: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node on a tape.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    /// Gradient with respect to `v`, or `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf reading the current value of a parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::matmul_t(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("add", va.shape(), vb.shape()));
        }
        let mut out = va.clone();
        out.add_assign(vb);
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Adds a vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        let d = vx.cols();
        if vb.len() != d {
            return Err(Error::shape("add_bias", vx.shape(), vb.shape()));
        }
        let mut out = vx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += vb.data()[i % d];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = tensor::gelu(self.value(x));
        self.push(out, Op::Gelu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let out = tensor::softmax(self.value(x), axis)?;
        Ok(self.push(out, Op::Softmax(x, axis)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, xhat, inv_std) = tensor::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// Inverted dropout. Returns `x` unchanged in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R, train: bool) -> Result<Var> {
        check_rate(rate)?;
        if !train || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).len(), rate, rng);
        let v = self.value(x);
        let data = v.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::new(v.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout(x, mask)))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, d) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(Error::Index {
                    what: "embedding table",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(t.row(id));
        }
        let out = Tensor::new(vec![ids.len(), d], data)?;
        Ok(self.push(out, Op::Gather(table, ids.to_vec())))
    }

    /// Sets entries above the diagonal of a square matrix to −∞.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let n = v.rows();
        if v.shape() != [n, n] {
            return Err(Error::shape("causal_mask", v.shape(), &[n, n]));
        }
        let mut out = v.clone();
        for i in 0..n {
            for j in i + 1..n {
                out.data_mut()[i * n + j] = f64::NEG_INFINITY;
            }
        }
        Ok(self.push(out, Op::CausalMask(x)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        if start + len > cols || len == 0 {
            return Err(Error::shape("slice_cols", v.shape(), &[start, start + len]));
        }
        let data = (0..rows)
            .flat_map(|r| v.row(r)[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(vec![rows, len], data)?;
        Ok(self.push(out, Op::SliceCols(x, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows || v.shape().len() != 2 {
                return Err(Error::shape("concat_cols", self.value(parts[0]).shape(), v.shape()));
            }
            cols += v.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.value(x);
        let (rows, cols) = (v.rows(), v.cols());
        if start + len > rows || len == 0 {
            return Err(Error::shape("slice_rows", v.shape(), &[start, start + len]));
        }
        let data = v.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::new(vec![len, cols], data)?;
        Ok(self.push(out, Op::SliceRows(x, start)))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols || v.shape().len() != 2 {
                return Err(Error::shape("concat_rows", self.value(parts[0]).shape(), v.shape()));
            }
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols;
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    /// Mean of `−log softmax(logits)[target]` over rows whose target is not
    /// [`IGNORE`]. Zero when every target is ignored.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let v = self.value(logits);
        let (loss, probs, count) = cross_entropy_parts(v, targets)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn gradients(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::shape("backward", lv.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Grads { grads })
    }

    /// Accumulates `∂loss/∂p` into the gradient of every parameter that
    /// reaches `loss`. Repeated calls add up until [`ParamStore::zero_grads`].
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                store.get_mut(*id).grad.add_assign(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let da = tensor::matmul_t(g, val(*b))?;
                let db = tensor::t_matmul(val(*a), g)?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::MatMulT(a, b) => {
                let da = tensor::matmul(g, val(*b))?;
                let db = tensor::t_matmul(g, val(*a))?;
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                let d = g.cols();
                let mut db = vec![0.0; d];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % d] += v;
                }
                accumulate(grads, *x, g.clone());
                let shape = val(*bias).shape().to_vec();
                accumulate(grads, *bias, Tensor::new(shape, db)?);
            }
            Op::Mul(a, b) => {
                let da = zip_with(g, val(*b), |x, y| x * y);
                let db = zip_with(g, val(*a), |x, y| x * y);
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(x, c) => accumulate(grads, *x, g.map(|v| v * c)),
            Op::Sum(x) => {
                let s = g.item();
                accumulate(grads, *x, Tensor::full(val(*x).shape(), s));
            }
            Op::Gelu(x) => {
                let dx = zip_with(g, val(*x), |gv, xv| gv * tensor::gelu_grad_scalar(xv));
                accumulate(grads, *x, dx);
            }
            Op::Softmax(x, axis) => {
                let y = &node.value;
                let (outer, len, inner) = tensor::axis_split(y.shape(), *axis)?;
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| o * len * inner + j * inner + i;
                        let dot: f64 = (0..len).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *x, Tensor::new(y.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = val(*gain);
                let d = g.cols();
                let rows = g.len() / d;
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..rows {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let hr = &xhat.data()[r * d..(r + 1) * d];
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[j];
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                    let inv = inv_std[r];
                    for j in 0..d {
                        let dh = gr[j] * gv.data()[j];
                        dx[r * d + j] = inv * (dh - sum_dh / d as f64 - hr[j] * sum_dh_h / d as f64);
                    }
                }
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                accumulate(grads, *gain, Tensor::new(gv.shape().to_vec(), dgain)?);
                let bshape = val(*bias).shape().to_vec();
                accumulate(grads, *bias, Tensor::new(bshape, dbias)?);
            }
            Op::Dropout(x, mask) => {
                let data = g.data().iter().zip(mask).map(|(a, m)| a * m).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::Gather(table, ids) => {
                let t = val(*table);
                let d = t.cols();
                let mut dt = Tensor::zeros(t.shape());
                for (r, &id) in ids.iter().enumerate() {
                    let src = &g.data()[r * d..(r + 1) * d];
                    for (dst, s) in dt.data_mut()[id * d..(id + 1) * d].iter_mut().zip(src) {
                        *dst += s;
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::CausalMask(x) => {
                let n = g.rows();
                let mut dx = g.clone();
                for i in 0..n {
                    for j in i + 1..n {
                        dx.data_mut()[i * n + j] = 0.0;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceCols(x, start) => {
                let src = val(*x);
                let (rows, cols, len) = (src.rows(), src.cols(), g.cols());
                let mut dx = Tensor::zeros(src.shape());
                for r in 0..rows {
                    dx.data_mut()[r * cols + start..r * cols + start + len].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let width = val(p).cols();
                    let data = (0..g.rows())
                        .flat_map(|r| g.row(r)[offset..offset + width].iter().copied())
                        .collect();
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data)?);
                    offset += width;
                }
            }
            Op::SliceRows(x, start) => {
                let src = val(*x);
                let cols = src.cols();
                let mut dx = Tensor::zeros(src.shape());
                dx.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    let data = g.data()[offset..offset + n].to_vec();
                    accumulate(grads, p, Tensor::new(val(p).shape().to_vec(), data)?);
                    offset += n;
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                let mut dl = Tensor::zeros(probs.shape());
                if *count > 0 {
                    let scale = g.item() / *count as f64;
                    let v = probs.cols();
                    for (r, &t) in targets.iter().enumerate() {
                        if t == IGNORE {
                            continue;
                        }
                        let row = &mut dl.data_mut()[r * v..(r + 1) * v];
                        for (d, p) in row.iter_mut().zip(probs.row(r)) {
                            *d = p * scale;
                        }
                        row[t] -= scale;
                    }
                }
                accumulate(grads, *logits, dl);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked on the forward pass")
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn dropout_mask<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout on a plain tensor.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, rate: f64, rng: &mut R, train: bool) -> Result<Tensor> {
    check_rate(rate)?;
    if !train || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.len(), rate, rng);
    Ok(zip_with(x, &Tensor::new(x.shape().to_vec(), mask)?, |a, m| a * m))
}

fn cross_entropy_parts(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor, usize)> {
    if logits.shape().len() != 2 || logits.rows() != targets.len() {
        return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
    }
    let v = logits.cols();
    let probs = tensor::softmax(logits, 1)?;
    let mut total = 0.0;
    let mut count = 0;
    for (r, &t) in targets.iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        if t >= v {
            return Err(Error::Index {
                what: "cross-entropy target",
                index: t,
                bound: v,
            });
        }
        // log-sum-exp form keeps saturated rows exact instead of log(1 - tiny)
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[t];
        count += 1;
    }
    let loss = if count == 0 { 0.0 } else { total / count as f64 };
    Ok((loss, probs, count))
}

/// Cross-entropy on plain tensors; see [`Tape::cross_entropy`].
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    Ok(cross_entropy_parts(logits, targets)?.0)
}
