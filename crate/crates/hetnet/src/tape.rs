//! Reverse-mode automatic differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of a forward pass eagerly; calling
//! [`Tape::backward`] walks the record in reverse and accumulates parameter
//! gradients into a [`ParamStore`]. One tape spans whatever the gradient has
//! to flow through — for recurrent policies that is an entire episode, so
//! backpropagation through time falls out of the recording order.

use std::rc::Rc;

use crate::mat::Mat;
use crate::nn::{ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(u32);

/// Boolean mask over a `rows x cols` matrix, row-major. Shared by value so
/// repeated layers over the same topology do not copy it.
pub type Mask = Rc<Vec<bool>>;

enum Op {
    /// Constant input; gradients stop here.
    Const,
    /// Leaf bound to a parameter; backward adds into the store's grad slot.
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// X (n x d) + broadcast row b (1 x d).
    AddRowBroadcast(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    /// Tile a (1 x d) row n times into (n x d).
    RepeatRows(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    LeakyRelu(Var, f64),
    Square(Var),
    Exp(Var),
    /// u (n x 1), v (m x 1) -> out[i][j] = u[i] + v[j].
    OuterAdd(Var, Var),
    /// Row softmax restricted to unmasked entries; fully-masked rows are zero.
    MaskedRowSoftmax(Var, Mask),
    LogSoftmaxRows(Var),
    /// Pick entries (r, c) into a (k x 1) column.
    GatherEntries(Var, Rc<Vec<(u32, u32)>>),
    SumAll(Var),
}

struct Node {
    op: Op,
    value: Mat,
}

/// Records a forward computation and runs the reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0 as usize].value
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        let id = Var(self.nodes.len() as u32);
        self.nodes.push(Node { op, value });
        id
    }

    /// Record a constant (no gradient flows into it).
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(Op::Const, value)
    }

    /// Record a parameter leaf; its gradient accumulates into the store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(Op::Param(id), store.value(id).clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(Op::MatMul(a, b), value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let bm = self.value(b);
        let value = Mat::from_fn(bm.rows(), bm.cols(), |r, c| {
            self.value(a).get(r, c) - bm.get(r, c)
        });
        self.push(Op::Sub(a, b), value)
    }

    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Var {
        let xm = self.value(x);
        let bm = self.value(bias);
        assert_eq!(bm.rows(), 1, "bias must be a row vector");
        assert_eq!(xm.cols(), bm.cols(), "bias width mismatch");
        let value = Mat::from_fn(xm.rows(), xm.cols(), |r, c| xm.get(r, c) + bm.get(0, c));
        self.push(Op::AddRowBroadcast(x, bias), value)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let am = self.value(a);
        let bm = self.value(b);
        assert_eq!(am.shape(), bm.shape(), "hadamard shape mismatch");
        let value = Mat::from_fn(am.rows(), am.cols(), |r, c| am.get(r, c) * bm.get(r, c));
        self.push(Op::Hadamard(a, b), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v * c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let am = self.value(a);
        let bm = self.value(b);
        assert_eq!(am.rows(), bm.rows(), "concat_cols row mismatch");
        let value = Mat::from_fn(am.rows(), am.cols() + bm.cols(), |r, c| {
            if c < am.cols() {
                am.get(r, c)
            } else {
                bm.get(r, c - am.cols())
            }
        });
        self.push(Op::ConcatCols(a, b), value)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let am = self.value(a);
        assert!(start + len <= am.cols(), "slice_cols out of range");
        let value = Mat::from_fn(am.rows(), len, |r, c| am.get(r, start + c));
        self.push(Op::SliceCols(a, start), value)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let am = self.value(a);
        assert!(start + len <= am.rows(), "slice_rows out of range");
        let value = Mat::from_fn(len, am.cols(), |r, c| am.get(start + r, c));
        self.push(Op::SliceRows(a, start), value)
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        let am = self.value(a);
        assert_eq!(am.rows(), 1, "repeat_rows expects a row vector");
        let value = Mat::from_fn(n, am.cols(), |_, c| am.get(0, c));
        self.push(Op::RepeatRows(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { v.exp_m1() });
        self.push(Op::Elu(a), value)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(Op::LeakyRelu(a, slope), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(Op::Square(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn outer_add(&mut self, u: Var, v: Var) -> Var {
        let um = self.value(u);
        let vm = self.value(v);
        assert_eq!(um.cols(), 1, "outer_add expects column vectors");
        assert_eq!(vm.cols(), 1, "outer_add expects column vectors");
        let value = Mat::from_fn(um.rows(), vm.rows(), |r, c| um.get(r, 0) + vm.get(c, 0));
        self.push(Op::OuterAdd(u, v), value)
    }

    /// Softmax of each row over the entries where `mask` is true. Masked
    /// entries produce 0. Rows whose mask is entirely false come out all
    /// zero, which realizes the "empty mailbox contributes nothing" rule.
    pub fn masked_row_softmax(&mut self, a: Var, mask: Mask) -> Var {
        let am = self.value(a);
        let (rows, cols) = am.shape();
        assert_eq!(mask.len(), rows * cols, "mask size mismatch");
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mrow = &mask[r * cols..(r + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for c in 0..cols {
                if mrow[c] {
                    max = max.max(am.get(r, c));
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // no neighbors along this edge type
            }
            let mut sum = 0.0;
            for c in 0..cols {
                if mrow[c] {
                    let e = (am.get(r, c) - max).exp();
                    value.set(r, c, e);
                    sum += e;
                }
            }
            for c in 0..cols {
                if mrow[c] {
                    value.set(r, c, value.get(r, c) / sum);
                }
            }
        }
        self.push(Op::MaskedRowSoftmax(a, mask), value)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let am = self.value(a);
        let (rows, cols) = am.shape();
        let mut value = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = am.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..cols {
                value.set(r, c, row[c] - lse);
            }
        }
        self.push(Op::LogSoftmaxRows(a), value)
    }

    pub fn gather_entries(&mut self, a: Var, entries: Rc<Vec<(u32, u32)>>) -> Var {
        let am = self.value(a);
        let mut value = Mat::zeros(entries.len(), 1);
        for (i, &(r, c)) in entries.iter().enumerate() {
            value.set(i, 0, am.get(r as usize, c as usize));
        }
        self.push(Op::GatherEntries(a, entries), value)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).as_slice().iter().sum();
        self.push(Op::SumAll(a), Mat::scalar(s))
    }

    /// Mean over all heads: sum then scale by 1/K.
    pub fn mean_of(&mut self, vars: &[Var]) -> Var {
        assert!(!vars.is_empty());
        let mut acc = vars[0];
        for &v in &vars[1..] {
            acc = self.add(acc, v);
        }
        self.scale(acc, 1.0 / vars.len() as f64)
    }

    /// Backward sweep from a scalar loss. Parameter gradients are added into
    /// `store`; call `store.zero_grads()` first if a fresh gradient is wanted.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward requires a scalar loss"
        );
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[loss.0 as usize] = Some(Mat::scalar(1.0));

        for idx in (0..n).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            // Split borrows: the node being processed vs. its parents' grads.
            macro_rules! acc {
                ($var:expr, $mat:expr) => {{
                    let slot = &mut grads[$var.0 as usize];
                    match slot {
                        Some(existing) => existing.add_assign(&$mat),
                        None => *slot = Some($mat),
                    }
                }};
            }
            match &self.nodes[idx].op {
                Op::Const => {}
                Op::Param(pid) => store.grad_mut(*pid).add_assign(&g),
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = g.matmul_nt(self.value(b));
                    let db = self.value(a).matmul_tn(&g);
                    acc!(a, da);
                    acc!(b, db);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    acc!(a, g.clone());
                    acc!(b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    let mut neg = g.clone();
                    neg.scale_assign(-1.0);
                    acc!(a, g);
                    acc!(b, neg);
                }
                Op::AddRowBroadcast(x, bias) => {
                    let (x, bias) = (*x, *bias);
                    let mut db = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            db.set(0, c, db.get(0, c) + g.get(r, c));
                        }
                    }
                    acc!(x, g);
                    acc!(bias, db);
                }
                Op::Hadamard(a, b) => {
                    let (a, b) = (*a, *b);
                    let am = self.value(a).clone();
                    let bm = self.value(b).clone();
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * bm.get(r, c));
                    let db = Mat::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * am.get(r, c));
                    acc!(a, da);
                    acc!(b, db);
                }
                Op::Scale(a, c) => {
                    let (a, c) = (*a, *c);
                    let mut da = g;
                    da.scale_assign(c);
                    acc!(a, da);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let ac = self.value(a).cols();
                    let da = Mat::from_fn(g.rows(), ac, |r, c| g.get(r, c));
                    let db = Mat::from_fn(g.rows(), g.cols() - ac, |r, c| g.get(r, ac + c));
                    acc!(a, da);
                    acc!(b, db);
                }
                Op::SliceCols(a, start) => {
                    let (a, start) = (*a, *start);
                    let am = self.value(a);
                    let mut da = Mat::zeros(am.rows(), am.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            da.set(r, start + c, g.get(r, c));
                        }
                    }
                    acc!(a, da);
                }
                Op::SliceRows(a, start) => {
                    let (a, start) = (*a, *start);
                    let am = self.value(a);
                    let mut da = Mat::zeros(am.rows(), am.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            da.set(start + r, c, g.get(r, c));
                        }
                    }
                    acc!(a, da);
                }
                Op::RepeatRows(a) => {
                    let a = *a;
                    let mut da = Mat::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            da.set(0, c, da.get(0, c) + g.get(r, c));
                        }
                    }
                    acc!(a, da);
                }
                Op::Sigmoid(a) => {
                    let a = *a;
                    let y = &self.nodes[idx].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| {
                        let s = y.get(r, c);
                        g.get(r, c) * s * (1.0 - s)
                    });
                    acc!(a, da);
                }
                Op::Tanh(a) => {
                    let a = *a;
                    let y = &self.nodes[idx].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| {
                        let t = y.get(r, c);
                        g.get(r, c) * (1.0 - t * t)
                    });
                    acc!(a, da);
                }
                Op::Elu(a) => {
                    let a = *a;
                    let y = &self.nodes[idx].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| {
                        let v = y.get(r, c);
                        g.get(r, c) * if v > 0.0 { 1.0 } else { v + 1.0 }
                    });
                    acc!(a, da);
                }
                Op::LeakyRelu(a, slope) => {
                    let (a, slope) = (*a, *slope);
                    let y = &self.nodes[idx].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| {
                        g.get(r, c) * if y.get(r, c) > 0.0 { 1.0 } else { slope }
                    });
                    acc!(a, da);
                }
                Op::Square(a) => {
                    let a = *a;
                    let x = self.value(a).clone();
                    let da =
                        Mat::from_fn(g.rows(), g.cols(), |r, c| 2.0 * x.get(r, c) * g.get(r, c));
                    acc!(a, da);
                }
                Op::Exp(a) => {
                    let a = *a;
                    let y = &self.nodes[idx].value;
                    let da = Mat::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * y.get(r, c));
                    acc!(a, da);
                }
                Op::OuterAdd(u, v) => {
                    let (u, v) = (*u, *v);
                    let mut du = Mat::zeros(g.rows(), 1);
                    let mut dv = Mat::zeros(g.cols(), 1);
                    for r in 0..g.rows() {
                        for c in 0..g.cols() {
                            du.set(r, 0, du.get(r, 0) + g.get(r, c));
                            dv.set(c, 0, dv.get(c, 0) + g.get(r, c));
                        }
                    }
                    acc!(u, du);
                    acc!(v, dv);
                }
                Op::MaskedRowSoftmax(a, mask) => {
                    let a = *a;
                    let mask = Rc::clone(mask);
                    let y = self.nodes[idx].value.clone();
                    let (rows, cols) = y.shape();
                    let mut da = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let mrow = &mask[r * cols..(r + 1) * cols];
                        let mut dot = 0.0;
                        for c in 0..cols {
                            if mrow[c] {
                                dot += g.get(r, c) * y.get(r, c);
                            }
                        }
                        for c in 0..cols {
                            if mrow[c] {
                                da.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                            }
                        }
                    }
                    acc!(a, da);
                }
                Op::LogSoftmaxRows(a) => {
                    let a = *a;
                    let y = self.nodes[idx].value.clone();
                    let (rows, cols) = y.shape();
                    let mut da = Mat::zeros(rows, cols);
                    for r in 0..rows {
                        let gsum: f64 = g.row(r).iter().sum();
                        for c in 0..cols {
                            let p = y.get(r, c).exp();
                            da.set(r, c, g.get(r, c) - p * gsum);
                        }
                    }
                    acc!(a, da);
                }
                Op::GatherEntries(a, entries) => {
                    let a = *a;
                    let entries = Rc::clone(entries);
                    let am = self.value(a);
                    let mut da = Mat::zeros(am.rows(), am.cols());
                    for (i, &(r, c)) in entries.iter().enumerate() {
                        let (r, c) = (r as usize, c as usize);
                        da.set(r, c, da.get(r, c) + g.get(i, 0));
                    }
                    acc!(a, da);
                }
                Op::SumAll(a) => {
                    let a = *a;
                    let am = self.value(a);
                    let mut da = Mat::zeros(am.rows(), am.cols());
                    da.fill(g.item());
                    acc!(a, da);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamStore};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central finite difference of `f` w.r.t. every entry of every parameter,
    /// compared against tape gradients.
    fn check_grads(store: &mut ParamStore, f: impl Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        store.zero_grads();
        tape.backward(loss, store);
        let analytic: Vec<Mat> = (0..store.len())
            .map(|i| store.grad(ParamId(i)).clone())
            .collect();

        let eps = 1e-6;
        for pi in 0..store.len() {
            let pid = ParamId(pi);
            for k in 0..store.value(pid).as_slice().len() {
                let orig = store.value(pid).as_slice()[k];
                store.value_mut(pid).as_mut_slice()[k] = orig + eps;
                let mut t1 = Tape::new();
                let lp = f(&mut t1, store);
                let fp = t1.value(lp).item();
                store.value_mut(pid).as_mut_slice()[k] = orig - eps;
                let mut t2 = Tape::new();
                let lm = f(&mut t2, store);
                let fm = t2.value(lm).item();
                store.value_mut(pid).as_mut_slice()[k] = orig;
                let fd = (fp - fm) / (2.0 * eps);
                let an = analytic[pi].as_slice()[k];
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "param {pi} entry {k}: fd={fd} analytic={an}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_through_mixed_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let w = store.alloc("w", 3, 4, Init::UniformFanIn, &mut rng);
        let b = store.alloc("b", 1, 4, Init::UniformFanIn, &mut rng);
        let a = store.alloc("a", 4, 1, Init::UniformFanIn, &mut rng);

        check_grads(&mut store, |tape, store| {
            let x = tape.constant(Mat::from_fn(2, 3, |r, c| 0.3 * (r as f64) - 0.2 * (c as f64)));
            let wv = tape.param(store, w);
            let bv = tape.param(store, b);
            let av = tape.param(store, a);
            let h = tape.matmul(x, wv);
            let h = tape.add_row_broadcast(h, bv);
            let h = tape.elu(h);
            let s = tape.matmul(h, av);
            let sq = tape.square(s);
            tape.sum_all(sq)
        });
    }

    #[test]
    fn gradients_match_through_attention_shaped_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let w = store.alloc("w", 2, 3, Init::UniformFanIn, &mut rng);
        let al = store.alloc("al", 3, 1, Init::UniformFanIn, &mut rng);
        let ar = store.alloc("ar", 3, 1, Init::UniformFanIn, &mut rng);
        let mask: Mask = Rc::new(vec![false, true, true, true, false, true, true, true, false]);

        check_grads(&mut store, |tape, store| {
            let h = tape.constant(Mat::from_fn(3, 2, |r, c| 0.4 * r as f64 - 0.3 * c as f64 + 0.1));
            let wv = tape.param(store, w);
            let alv = tape.param(store, al);
            let arv = tape.param(store, ar);
            let v = tape.matmul(h, wv);
            let la = tape.matmul(v, alv);
            let ra = tape.matmul(v, arv);
            let logits = tape.outer_add(la, ra);
            let logits = tape.leaky_relu(logits, 0.2);
            let alpha = tape.masked_row_softmax(logits, Rc::clone(&mask));
            let msg = tape.matmul(alpha, v);
            let act = tape.tanh(msg);
            let sq = tape.square(act);
            tape.sum_all(sq)
        });
    }

    #[test]
    fn gradients_match_through_log_softmax_gather() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut store = ParamStore::new();
        let w = store.alloc("w", 3, 5, Init::UniformFanIn, &mut rng);

        check_grads(&mut store, |tape, store| {
            let x = tape.constant(Mat::from_fn(2, 3, |r, c| 0.2 * (r + c) as f64 - 0.1));
            let wv = tape.param(store, w);
            let logits = tape.matmul(x, wv);
            let logp = tape.log_softmax_rows(logits);
            let picked = tape.gather_entries(logp, Rc::new(vec![(0, 2), (1, 4)]));
            let weights = tape.constant(Mat::column(&[0.7, -1.3]));
            let weighted = tape.hadamard(picked, weights);
            tape.sum_all(weighted)
        });
    }

    #[test]
    fn fully_masked_row_yields_zeros_and_zero_grad() {
        let mut tape = Tape::new();
        let x = tape.constant(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let mask: Mask = Rc::new(vec![false, false, true, true]);
        let s = tape.masked_row_softmax(x, mask);
        assert_eq!(tape.value(s).row(0), &[0.0, 0.0]);
        let sum: f64 = tape.value(s).row(1).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
