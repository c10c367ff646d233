//! Reverse-mode gradient tape over dense matrices.
//!
//! A tape is an ordered record of primitive operations with eagerly computed
//! values. Calling [`Tape::backward`] on a scalar node yields gradients for
//! every registered parameter. Replaying the tape re-executes the recorded
//! forward pass and reproduces values bit-for-bit: every primitive uses a
//! fixed summation order.

use crate::error::{Error, Result};
use crate::numkit::mat::Mat;
use crate::numkit::sparse::SparseStructure;
use std::rc::Rc;

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    Hadamard(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    /// Leaky rectifier; slope 0 gives plain ReLU.
    PRelu(NodeId, f64),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Powf(NodeId, f64),
    RowUnit(NodeId),
    RowSum(NodeId),
    SumAll(NodeId),
    GatherRows(NodeId, Rc<Vec<usize>>),
    HCat(NodeId, NodeId),
    /// Row-wise log-sum-exp over entries whose mask bit is set; rows with an
    /// empty mask evaluate to zero.
    MaskedRowLse(NodeId, Rc<Vec<bool>>),
    RowSoftmax(NodeId),
    /// rows x cols matrix plus a 1 x cols row, broadcast down the rows.
    AddRowBroadcast(NodeId, NodeId),
    /// Product with a constant symmetric sparse matrix.
    SpmmConst(Rc<SparseStructure>, NodeId),
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

/// Gradients produced by a backward pass, indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Mat> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a registered parameter; zero matrix if the loss does not
    /// depend on it.
    pub fn param_grad(&self, tape: &Tape, id: NodeId) -> Mat {
        match self.get(id) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(id).shape();
                Mat::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id].value
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a trainable parameter.
    pub fn param(&mut self, value: Mat) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push(id);
        id
    }

    /// Record a constant input.
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.add(&self.nodes[b].value);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.sub(&self.nodes[b].value);
        self.push(v, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.scale(c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| x + c);
        self.push(v, Op::AddScalar(a, c))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.hadamard(&self.nodes[b].value);
        self.push(v, Op::Hadamard(a, b))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.matmul(&self.nodes[b].value);
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn prelu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| if x > 0.0 { x } else { slope * x });
        self.push(v, Op::PRelu(a, slope))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.prelu(a, 0.0)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(stable_sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.map(stable_log_sigmoid);
        self.push(v, Op::LogSigmoid(a))
    }

    pub fn powf(&mut self, a: NodeId, exponent: f64) -> NodeId {
        let v = self.nodes[a].value.map(|x| x.powf(exponent));
        self.push(v, Op::Powf(a, exponent))
    }

    pub fn row_unit(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.row_unit();
        self.push(v, Op::RowUnit(a))
    }

    pub fn row_sum(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let mut v = Mat::zeros(src.rows(), 1);
        for i in 0..src.rows() {
            let mut acc = 0.0;
            for &x in src.row(i) {
                acc += x;
            }
            v[(i, 0)] = acc;
        }
        self.push(v, Op::RowSum(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Mat::from_vec(1, 1, vec![self.nodes[a].value.sum()]);
        self.push(v, Op::SumAll(a))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: Vec<usize>) -> NodeId {
        let v = self.nodes[a].value.gather_rows(&idx);
        self.push(v, Op::GatherRows(a, Rc::new(idx)))
    }

    pub fn hcat(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (ra, ca) = self.nodes[a].value.shape();
        let (rb, cb) = self.nodes[b].value.shape();
        assert_eq!(ra, rb, "hcat row mismatch");
        let mut v = Mat::zeros(ra, ca + cb);
        for i in 0..ra {
            v.row_mut(i)[..ca].copy_from_slice(self.nodes[a].value.row(i));
            v.row_mut(i)[ca..].copy_from_slice(self.nodes[b].value.row(i));
        }
        self.push(v, Op::HCat(a, b))
    }

    /// Stable per-row log-sum-exp restricted to masked-in entries.
    pub fn masked_row_lse(&mut self, a: NodeId, mask: Vec<bool>) -> NodeId {
        let src = &self.nodes[a].value;
        assert_eq!(mask.len(), src.rows() * src.cols(), "mask length mismatch");
        let v = masked_lse_forward(src, &mask);
        self.push(v, Op::MaskedRowLse(a, Rc::new(mask)))
    }

    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.row_softmax();
        self.push(v, Op::RowSoftmax(a))
    }

    pub fn add_row_broadcast(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let b = &self.nodes[row].value;
        assert_eq!(b.rows(), 1, "broadcast operand must be a single row");
        assert_eq!(b.cols(), src.cols(), "broadcast width mismatch");
        let mut v = src.clone();
        for i in 0..v.rows() {
            for (x, &y) in v.row_mut(i).iter_mut().zip(b.row(0)) {
                *x += y;
            }
        }
        self.push(v, Op::AddRowBroadcast(a, row))
    }

    pub fn spmm(&mut self, s: Rc<SparseStructure>, x: NodeId) -> NodeId {
        let v = s.spmm(&self.nodes[x].value);
        self.push(v, Op::SpmmConst(s, x))
    }

    /// Gradients of a scalar loss node with respect to every node that
    /// influences it.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = &self.nodes[loss].value;
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, id: NodeId, g: &Mat, grads: &mut [Option<Mat>]) {
        let add_to = |grads: &mut [Option<Mat>], target: NodeId, delta: Mat| {
            match &mut grads[target] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                add_to(grads, *a, g.clone());
                add_to(grads, *b, g.scale(-1.0));
            }
            Op::Scale(a, c) => add_to(grads, *a, g.scale(*c)),
            Op::AddScalar(a, _) => add_to(grads, *a, g.clone()),
            Op::Hadamard(a, b) => {
                add_to(grads, *a, g.hadamard(&self.nodes[*b].value));
                add_to(grads, *b, g.hadamard(&self.nodes[*a].value));
            }
            Op::MatMul(a, b) => {
                add_to(grads, *a, g.matmul_nt(&self.nodes[*b].value));
                add_to(grads, *b, self.nodes[*a].value.matmul_tn(g));
            }
            Op::Transpose(a) => add_to(grads, *a, g.transpose()),
            Op::PRelu(a, slope) => {
                let x = &self.nodes[*a].value;
                add_to(
                    grads,
                    *a,
                    g.zip_with(x, |gv, xv| if xv > 0.0 { gv } else { gv * slope }),
                );
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                add_to(grads, *a, g.zip_with(y, |gv, yv| gv * yv * (1.0 - yv)));
            }
            Op::LogSigmoid(a) => {
                let x = &self.nodes[*a].value;
                add_to(
                    grads,
                    *a,
                    g.zip_with(x, |gv, xv| gv * (1.0 - stable_sigmoid(xv))),
                );
            }
            Op::Powf(a, exponent) => {
                let x = &self.nodes[*a].value;
                let e = *exponent;
                add_to(
                    grads,
                    *a,
                    g.zip_with(x, |gv, xv| gv * e * xv.powf(e - 1.0)),
                );
            }
            Op::RowUnit(a) => {
                let x = &self.nodes[*a].value;
                let y = &self.nodes[id].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let norm = x.row_norm(i);
                    if norm == 0.0 {
                        continue;
                    }
                    let gi = g.row(i);
                    let yi = y.row(i);
                    let mut dot = 0.0;
                    for k in 0..x.cols() {
                        dot += gi[k] * yi[k];
                    }
                    let out = dx.row_mut(i);
                    for k in 0..x.cols() {
                        out[k] = (gi[k] - dot * yi[k]) / norm;
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::RowSum(a) => {
                let x = &self.nodes[*a].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let gv = g[(i, 0)];
                    for v in dx.row_mut(i) {
                        *v = gv;
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::SumAll(a) => {
                let x = &self.nodes[*a].value;
                let gv = g.scalar();
                add_to(grads, *a, Mat::from_fn(x.rows(), x.cols(), |_, _| gv));
            }
            Op::GatherRows(a, idx) => {
                let x = &self.nodes[*a].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for (k, &i) in idx.iter().enumerate() {
                    let gr = g.row(k);
                    let dr = dx.row_mut(i);
                    for (d, &gv) in dr.iter_mut().zip(gr) {
                        *d += gv;
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::HCat(a, b) => {
                let ca = self.nodes[*a].value.cols();
                let (r, c) = g.shape();
                let mut da = Mat::zeros(r, ca);
                let mut db = Mat::zeros(r, c - ca);
                for i in 0..r {
                    da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                    db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                }
                add_to(grads, *a, da);
                add_to(grads, *b, db);
            }
            Op::MaskedRowLse(a, mask) => {
                let x = &self.nodes[*a].value;
                let y = &self.nodes[id].value;
                let mut dx = Mat::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let gv = g[(i, 0)];
                    if gv == 0.0 {
                        continue;
                    }
                    let base = i * x.cols();
                    let row_has_entries = mask[base..base + x.cols()].iter().any(|&m| m);
                    if !row_has_entries {
                        continue;
                    }
                    let lse = y[(i, 0)];
                    let xr = x.row(i);
                    let dr = dx.row_mut(i);
                    for j in 0..xr.len() {
                        if mask[base + j] {
                            dr[j] = gv * (xr[j] - lse).exp();
                        }
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::RowSoftmax(a) => {
                let y = &self.nodes[id].value;
                let mut dx = Mat::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let yi = y.row(i);
                    let gi = g.row(i);
                    let mut dot = 0.0;
                    for k in 0..yi.len() {
                        dot += yi[k] * gi[k];
                    }
                    let dr = dx.row_mut(i);
                    for k in 0..yi.len() {
                        dr[k] = yi[k] * (gi[k] - dot);
                    }
                }
                add_to(grads, *a, dx);
            }
            Op::AddRowBroadcast(a, row) => {
                add_to(grads, *a, g.clone());
                let mut db = Mat::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (d, &gv) in db.row_mut(0).iter_mut().zip(g.row(i)) {
                        *d += gv;
                    }
                }
                add_to(grads, *row, db);
            }
            Op::SpmmConst(s, x) => {
                // S is symmetric, so d/dX (S X) pulled back is S * g.
                add_to(grads, *x, s.spmm(g));
            }
        }
    }

    /// Re-execute the recorded forward pass from the leaf values and return
    /// the recomputed value of `node`. Bit-identical to the recorded value.
    pub fn replay(&self, node: NodeId) -> Mat {
        let mut values: Vec<Mat> = Vec::with_capacity(self.nodes.len());
        for (id, n) in self.nodes.iter().enumerate() {
            let v = match &n.op {
                Op::Leaf => n.value.clone(),
                Op::Add(a, b) => values[*a].add(&values[*b]),
                Op::Sub(a, b) => values[*a].sub(&values[*b]),
                Op::Scale(a, c) => values[*a].scale(*c),
                Op::AddScalar(a, c) => values[*a].map(|x| x + c),
                Op::Hadamard(a, b) => values[*a].hadamard(&values[*b]),
                Op::MatMul(a, b) => values[*a].matmul(&values[*b]),
                Op::Transpose(a) => values[*a].transpose(),
                Op::PRelu(a, slope) => {
                    let s = *slope;
                    values[*a].map(|x| if x > 0.0 { x } else { s * x })
                }
                Op::Sigmoid(a) => values[*a].map(stable_sigmoid),
                Op::LogSigmoid(a) => values[*a].map(stable_log_sigmoid),
                Op::Powf(a, e) => {
                    let e = *e;
                    values[*a].map(|x| x.powf(e))
                }
                Op::RowUnit(a) => values[*a].row_unit(),
                Op::RowSum(a) => {
                    let src = &values[*a];
                    let mut v = Mat::zeros(src.rows(), 1);
                    for i in 0..src.rows() {
                        let mut acc = 0.0;
                        for &x in src.row(i) {
                            acc += x;
                        }
                        v[(i, 0)] = acc;
                    }
                    v
                }
                Op::SumAll(a) => Mat::from_vec(1, 1, vec![values[*a].sum()]),
                Op::GatherRows(a, idx) => values[*a].gather_rows(idx),
                Op::HCat(a, b) => {
                    let (va, vb) = (&values[*a], &values[*b]);
                    let mut v = Mat::zeros(va.rows(), va.cols() + vb.cols());
                    for i in 0..va.rows() {
                        v.row_mut(i)[..va.cols()].copy_from_slice(va.row(i));
                        v.row_mut(i)[va.cols()..].copy_from_slice(vb.row(i));
                    }
                    v
                }
                Op::MaskedRowLse(a, mask) => masked_lse_forward(&values[*a], mask),
                Op::RowSoftmax(a) => values[*a].row_softmax(),
                Op::AddRowBroadcast(a, row) => {
                    let mut v = values[*a].clone();
                    let b = &values[*row];
                    for i in 0..v.rows() {
                        for (x, &y) in v.row_mut(i).iter_mut().zip(b.row(0)) {
                            *x += y;
                        }
                    }
                    v
                }
                Op::SpmmConst(s, x) => s.spmm(&values[*x]),
            };
            debug_assert_eq!(v.shape(), self.nodes[id].value.shape());
            values.push(v);
        }
        values[node].clone()
    }
}

fn masked_lse_forward(src: &Mat, mask: &[bool]) -> Mat {
    let mut v = Mat::zeros(src.rows(), 1);
    for i in 0..src.rows() {
        let base = i * src.cols();
        let row = src.row(i);
        let mut m = f64::NEG_INFINITY;
        for j in 0..row.len() {
            if mask[base + j] && row[j] > m {
                m = row[j];
            }
        }
        if m == f64::NEG_INFINITY {
            v[(i, 0)] = 0.0;
            continue;
        }
        let mut acc = 0.0;
        for j in 0..row.len() {
            if mask[base + j] {
                acc += (row[j] - m).exp();
            }
        }
        v[(i, 0)] = m + acc.ln();
    }
    v
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn stable_log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::fdcheck;
    use crate::numkit::svd::gaussian_mat;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut t = Tape::new();
        let w = t.param(gaussian_mat(3, 4, 1));
        let loss = t.sum_all(w);
        let g = t.backward(loss).unwrap();
        let gw = g.get(w).unwrap();
        assert!(gw.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn squared_frobenius_gradient_is_two_w() {
        let mut t = Tape::new();
        let wv = gaussian_mat(3, 3, 2);
        let w = t.param(wv.clone());
        let sq = t.hadamard(w, w);
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        let gw = g.get(w).unwrap();
        assert!(gw.sub(&wv.scale(2.0)).max_abs() < 1e-14);
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut t = Tape::new();
        let w = t.param(gaussian_mat(2, 2, 3));
        assert!(matches!(
            t.backward(w),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let a = t.param(gaussian_mat(4, 5, 4));
        let b = t.constant(gaussian_mat(5, 3, 5));
        let c = t.matmul(a, b);
        let d = t.prelu(c, 0.25);
        let e = t.row_unit(d);
        let f = t.row_sum(e);
        let loss = t.sum_all(f);
        let recorded = t.value(loss).scalar();
        let replayed = t.replay(loss).scalar();
        assert_eq!(recorded.to_bits(), replayed.to_bits());
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        // One composite graph touching all differentiable primitives.
        let build = |inputs: &[Mat]| -> (Tape, NodeId) {
            let mut t = Tape::new();
            let a = t.param(inputs[0].clone());
            let b = t.param(inputs[1].clone());
            let row = t.param(inputs[2].clone());
            let at = t.transpose(a);
            let prod = t.matmul(b, at); // 4x4
            let shifted = t.add_row_broadcast(prod, row);
            let act = t.prelu(shifted, 0.25);
            let sig = t.sigmoid(act);
            let uni = t.row_unit(sig);
            let pair = t.matmul_pair_cos(uni);
            let cat = t.hcat(pair, sig);
            let n = t.value(cat).rows();
            let m = t.value(cat).cols();
            let mask: Vec<bool> = (0..n * m).map(|k| k % 3 != 0).collect();
            let lse = t.masked_row_lse(cat, mask);
            let gathered = t.gather_rows(lse, vec![0, 2, 2]);
            let sm = t.row_softmax(act);
            let smsum = t.row_sum(sm);
            let lg = t.log_sigmoid(gathered);
            let sq = t.hadamard(lg, lg);
            let p = t.add_scalar(sq, 1.3);
            let pw = t.powf(p, 1.7);
            let s1 = t.sum_all(pw);
            let s2 = t.sum_all(smsum);
            let s2s = t.scale(s2, 0.31);
            let tot = t.add(s1, s2s);
            (t, tot)
        };
        let inputs = vec![
            gaussian_mat(3, 4, 10).scale(0.7),
            gaussian_mat(4, 4, 11).scale(0.7),
            gaussian_mat(1, 3, 12).scale(0.5),
        ];
        let (t, loss) = build(&inputs);
        let grads = t.backward(loss).unwrap();
        let analytic: Vec<Mat> = t
            .params()
            .iter()
            .map(|&p| grads.param_grad(&t, p))
            .collect();
        let numeric = fdcheck::central_differences(
            |xs| {
                let (t, l) = build(xs);
                t.value(l).scalar()
            },
            &inputs,
            1e-5,
        );
        for (a, n) in analytic.iter().zip(numeric.iter()) {
            let denom = n.frobenius_norm().max(1e-8);
            let rel = a.sub(n).frobenius_norm() / denom;
            assert!(rel < 1e-4, "gradient mismatch: rel {rel}");
        }
    }

    impl Tape {
        /// Test helper: pairwise similarity of unit rows.
        fn matmul_pair_cos(&mut self, a: NodeId) -> NodeId {
            let at = self.transpose(a);
            self.matmul(a, at)
        }
    }
}
