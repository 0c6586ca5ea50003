//! Parameter storage, initialization, small layer builders, and Adam.
//!
//! Parameters live in a flat, name-indexed [`ParamStore`] whose registration
//! order is deterministic for a given model configuration. Checkpoints dump
//! the arrays in that declared order, which keeps save/load byte-exact.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::mat::Mat;
use crate::tape::{Tape, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    /// Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] with fan_in = rows.
    UniformFanIn,
}

/// Flat collection of named parameters plus their gradient accumulators.
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
    grads: Vec<Mat>,
    /// Bumped once per optimizer step; used to enforce on-policy updates.
    version: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            version: 0,
        }
    }

    pub fn alloc(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let value = match init {
            Init::Zeros => Mat::zeros(rows, cols),
            Init::UniformFanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
            }
        };
        self.names.push(name.to_string());
        self.values.push(value);
        self.grads.push(Mat::zeros(rows, cols));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Mat {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.grads[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Add `other`'s gradient buffers into this store's (same layout).
    pub fn add_grads_from(&mut self, other: &[Mat]) {
        assert_eq!(other.len(), self.grads.len());
        for (g, o) in self.grads.iter_mut().zip(other) {
            g.add_assign(o);
        }
    }

    pub fn take_grads(&mut self) -> Vec<Mat> {
        let out = self.grads.clone();
        self.zero_grads();
        out
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    /// Global L2 norm over all gradient buffers.
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().map(Mat::norm_sq).sum::<f64>().sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.grads.iter().all(Mat::is_finite)
    }

    /// Scale all gradients so the global norm does not exceed `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in &mut self.grads {
                g.scale_assign(s);
            }
        }
        norm
    }
}

/// Fully-connected layer: `y = x W + b`.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Linear {
            w: store.alloc(&format!("{name}.w"), d_in, d_out, Init::UniformFanIn, rng),
            b: store.alloc(&format!("{name}.b"), 1, d_out, Init::Zeros, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let h = tape.matmul(x, w);
        tape.add_row_broadcast(h, b)
    }
}

/// Single LSTM cell applied to a batch of rows. Gate layout along the output
/// axis is [input, forget, cell, output]; the forget-gate bias starts at 1.
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let wx = store.alloc(&format!("{name}.wx"), d_in, 4 * hidden, Init::UniformFanIn, rng);
        let wh = store.alloc(&format!("{name}.wh"), hidden, 4 * hidden, Init::UniformFanIn, rng);
        let b = store.alloc(&format!("{name}.b"), 1, 4 * hidden, Init::Zeros, rng);
        for c in hidden..2 * hidden {
            store.value_mut(b).set(0, c, 1.0);
        }
        LstmCell { wx, wh, b, hidden }
    }

    /// One step: returns (h', c').
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        h: Var,
        c: Var,
    ) -> (Var, Var) {
        let wx = tape.param(store, self.wx);
        let wh = tape.param(store, self.wh);
        let b = tape.param(store, self.b);
        let gx = tape.matmul(x, wx);
        let gh = tape.matmul(h, wh);
        let gates = tape.add(gx, gh);
        let gates = tape.add_row_broadcast(gates, b);
        let hd = self.hidden;
        let i_g = tape.slice_cols(gates, 0, hd);
        let f_g = tape.slice_cols(gates, hd, hd);
        let g_g = tape.slice_cols(gates, 2 * hd, hd);
        let o_g = tape.slice_cols(gates, 3 * hd, hd);
        let i_g = tape.sigmoid(i_g);
        let f_g = tape.sigmoid(f_g);
        let g_g = tape.tanh(g_g);
        let o_g = tape.sigmoid(o_g);
        let fc = tape.hadamard(f_g, c);
        let ig = tape.hadamard(i_g, g_g);
        let c_next = tape.add(fc, ig);
        let c_act = tape.tanh(c_next);
        let h_next = tape.hadamard(o_g, c_act);
        (h_next, c_next)
    }
}

/// Adam optimizer with per-parameter moment estimates.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m = (0..store.len())
            .map(|i| {
                let (r, c) = store.value(ParamId(i)).shape();
                Mat::zeros(r, c)
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m,
            v,
        }
    }

    /// Apply one step from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..store.len() {
            let id = ParamId(i);
            let n = store.value(id).as_slice().len();
            for k in 0..n {
                let g = store.grad(id).as_slice()[k];
                let m = &mut self.m[i].as_mut_slice()[k];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                let mhat = *m / bc1;
                let v = &mut self.v[i].as_mut_slice()[k];
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let vhat = *v / bc2;
                store.value_mut(id).as_mut_slice()[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
