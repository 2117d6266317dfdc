//! Trainable linear readout over binary hidden codes: logits, softmax
//! cross-entropy with its analytic gradient, and Adam.
//!
//! Hidden codes are binary, so `O · W` is the sum of the rows of `W` selected
//! by the active units. Both the forward pass and the weight gradient reduce
//! to [`gather_rows_sum`].

use num_traits::Float;

/// `out[c] += Σ_{r ∈ rows} mat[r * stride + c]` for every column `c` of
/// `out`. Rows are added in the order given, so every column sees the same
/// sequence of additions regardless of how the loop is unrolled.
///
/// Whole rows are streamed four at a time into `out`, which stays in L1;
/// contiguous rows keep the hardware prefetcher busy.
pub fn gather_rows_sum<T: Float>(mat: &[T], stride: usize, rows: &[u32], out: &mut [T]) {
    let n = out.len();
    debug_assert!(n <= stride);
    let row = |r: u32| {
        let start = r as usize * stride;
        &mat[start..start + n]
    };
    let mut quads = rows.chunks_exact(4);
    for q in &mut quads {
        let (a, b, c, d) = (row(q[0]), row(q[1]), row(q[2]), row(q[3]));
        for i in 0..n {
            out[i] = out[i] + a[i] + b[i] + c[i] + d[i];
        }
    }
    for &r in quads.remainder() {
        for (o, &w) in out.iter_mut().zip(row(r)) {
            *o = *o + w;
        }
    }
}

/// Dense `d_hidden × n` weights (row-major) plus a bias of length `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Readout<T> {
    pub(crate) d_hidden: usize,
    pub(crate) n: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) bias: Vec<T>,
}

/// Gradient of the mean cross-entropy with respect to weights and bias.
#[derive(Clone, Debug)]
pub struct Gradient<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Float> Readout<T> {
    pub fn new(d_hidden: usize, n: usize, weights: Vec<T>, bias: Vec<T>) -> Self {
        assert_eq!(weights.len(), d_hidden * n);
        assert_eq!(bias.len(), n);
        Readout {
            d_hidden,
            n,
            weights,
            bias,
        }
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn logits(&self, active: &[u32]) -> Vec<T> {
        let mut out = self.bias.clone();
        gather_rows_sum(&self.weights, self.n, active, &mut out);
        out
    }

    /// Mean softmax cross-entropy over `codes`, where item `i` has label
    /// `i`.
    pub fn loss(&self, codes: &[Vec<u32>]) -> T {
        let mut total = T::zero();
        for (label, code) in codes.iter().enumerate() {
            let logits = self.logits(code);
            total = total + log_sum_exp(&logits) - logits[label];
        }
        total / T::from(codes.len()).unwrap()
    }

    /// Loss and gradient in one pass. `units` is the transpose of `codes`:
    /// `units[j]` lists the items whose code has unit `j` active.
    pub fn loss_and_gradient(&self, codes: &[Vec<u32>], units: &[Vec<u32>]) -> (T, Gradient<T>) {
        let n = self.n;
        let items = codes.len();
        let scale = T::one() / T::from(items).unwrap();

        // Row i of `delta` is (softmax(logits_i) - onehot(i)) / items.
        let mut delta = vec![T::zero(); items * n];
        let mut total = T::zero();
        for (label, (code, row)) in codes.iter().zip(delta.chunks_exact_mut(n)).enumerate() {
            row.copy_from_slice(&self.bias);
            gather_rows_sum(&self.weights, n, code, row);
            let lse = log_sum_exp(row);
            total = total + lse - row[label];
            for v in row.iter_mut() {
                *v = (*v - lse).exp() * scale;
            }
            row[label] = row[label] - scale;
        }

        let mut bias = vec![T::zero(); n];
        for row in delta.chunks_exact(n) {
            for (b, &d) in bias.iter_mut().zip(row) {
                *b = *b + d;
            }
        }
        let mut weights = vec![T::zero(); self.d_hidden * n];
        for (dst, contributors) in weights.chunks_exact_mut(n).zip(units) {
            gather_rows_sum(&delta, n, contributors, dst);
        }
        (total * scale, Gradient { weights, bias })
    }
}

pub fn log_sum_exp<T: Float>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let sum = v.iter().fold(T::zero(), |acc, &x| acc + (x - max).exp());
    max + sum.ln()
}

/// Numerically stable softmax, evaluated in `f64`. Results are floored at
/// the smallest positive normal so every score stays strictly positive.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v = (*v / sum).max(f64::MIN_POSITIVE);
    }
    out
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: i32,
    m_w: Vec<T>,
    v_w: Vec<T>,
    m_b: Vec<T>,
    v_b: Vec<T>,
}

impl<T: Float> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(lr: T, readout: &Readout<T>) -> Self {
        Adam {
            lr,
            beta1: T::from(Self::BETA1).unwrap(),
            beta2: T::from(Self::BETA2).unwrap(),
            eps: T::from(Self::EPS).unwrap(),
            step: 0,
            m_w: vec![T::zero(); readout.weights.len()],
            v_w: vec![T::zero(); readout.weights.len()],
            m_b: vec![T::zero(); readout.bias.len()],
            v_b: vec![T::zero(); readout.bias.len()],
        }
    }

    pub fn update(&mut self, readout: &mut Readout<T>, grad: &Gradient<T>) {
        self.step += 1;
        let c1 = T::one() - self.beta1.powi(self.step);
        let c2 = T::one() - self.beta2.powi(self.step);
        let step = Step {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            c1,
            c2,
        };
        step.apply(&mut readout.weights, &grad.weights, &mut self.m_w, &mut self.v_w);
        step.apply(&mut readout.bias, &grad.bias, &mut self.m_b, &mut self.v_b);
    }
}

struct Step<T> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    c1: T,
    c2: T,
}

impl<T: Float> Step<T> {
    fn apply(&self, params: &mut [T], grad: &[T], m: &mut [T], v: &mut [T]) {
        let one = T::one();
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = self.beta1 * *m + (one - self.beta1) * g;
            *v = self.beta2 * *v + (one - self.beta2) * g * g;
            let m_hat = *m / self.c1;
            let v_hat = *v / self.c2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Transposes per-item active lists into per-unit item lists.
pub fn transpose_codes(codes: &[Vec<u32>], d_hidden: usize) -> Vec<Vec<u32>> {
    let mut units = vec![Vec::new(); d_hidden];
    for (i, code) in codes.iter().enumerate() {
        for &j in code {
            units[j as usize].push(i as u32);
        }
    }
    units
}
