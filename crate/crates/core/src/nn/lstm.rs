//! Peephole LSTM with optional layer normalization, batched over sequences of
//! equal length.
//!
//! Per step, with gate blocks stored in the order `i, f, g, o`:
//!
//! ```text
//! i  = σ(N(W_i x) + N(U_i h) + V_i c + b_i)
//! f  = σ(N(W_f x) + N(U_f h) + V_f c + b_f)
//! g  = tanh(N(W_c x) + N(U_c h) + b_c)
//! c' = f ⊙ c + i ⊙ (m ⊙ g)
//! o  = σ(N(W_o x) + N(U_o h) + V_o c' + b_o)
//! h' = o ⊙ tanh(N(c'))
//! ```
//!
//! `N` is per-block layer normalization (identity when disabled) and `m` is a
//! per-sequence dropout mask on the candidate update. Peephole matrices are
//! full `hidden × hidden`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dropout::DropoutMask;
use super::params::{glorot, Parameterized};
use crate::error::{Error, Result};
use crate::math::{gemm, moments, sigmoid_scalar, Matrix, Vector, View, ViewMut};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Gain/bias pairs for the layer-normalized blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmNorm {
    pub input_gain: Vector,
    pub input_bias: Vector,
    pub recurrent_gain: Vector,
    pub recurrent_bias: Vector,
    pub cell_gain: Vector,
    pub cell_bias: Vector,
}

impl LstmNorm {
    fn new(hidden: usize) -> Self {
        LstmNorm {
            input_gain: Vector::filled(4 * hidden, 1.0),
            input_bias: Vector::zeros(4 * hidden),
            recurrent_gain: Vector::filled(4 * hidden, 1.0),
            recurrent_bias: Vector::zeros(4 * hidden),
            cell_gain: Vector::filled(hidden, 1.0),
            cell_bias: Vector::zeros(hidden),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    input_size: usize,
    hidden_size: usize,
    /// Input weights `[W_i; W_f; W_c; W_o]`, `4H × I`.
    pub w: Matrix,
    /// Recurrent weights `[U_i; U_f; U_c; U_o]`, `4H × H`.
    pub u: Matrix,
    /// Peephole weights `[V_i; V_f; V_o]`, `3H × H`.
    pub v: Matrix,
    /// `[b_i; b_f; b_c; b_o]`.
    pub b: Vector,
    pub norm: Option<LstmNorm>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vector,
    pub c: Vector,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Post-activation gate values of one step.
#[derive(Debug, Clone)]
pub struct Gates {
    pub input: Vector,
    pub forget: Vector,
    pub candidate: Vector,
    pub output: Vector,
}

/// Everything the backward pass needs from one forward step over a batch.
#[derive(Debug, Clone)]
struct StepCache {
    /// Post-activation `i, f, g, o` blocks, `B × 4H`.
    gates: Vec<f64>,
    /// Normalized (pre-gain) input block, `B × 4H`; empty without layer norm.
    input_hat: Vec<f64>,
    input_inv_std: Vec<f64>,
    recurrent_hat: Vec<f64>,
    recurrent_inv_std: Vec<f64>,
    /// Raw new context `c'`, `B × H`.
    c: Vec<f64>,
    c_hat: Vec<f64>,
    c_inv_std: Vec<f64>,
    /// `tanh(N(c'))`, `B × H`.
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Cached forward pass over a batch of equal-length sequences.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    batch: usize,
    hidden: usize,
    h0: Vec<f64>,
    c0: Vec<f64>,
    mask: Option<Vec<f64>>,
    steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Hidden outputs at step `k`, `B × H` row-major.
    pub fn hidden(&self, k: usize) -> &[f64] {
        &self.steps[k].h
    }

    pub fn context(&self, k: usize) -> &[f64] {
        &self.steps[k].c
    }

    pub fn gates(&self, k: usize, row: usize) -> Gates {
        let h = self.hidden;
        let g = &self.steps[k].gates[row * 4 * h..(row + 1) * 4 * h];
        Gates {
            input: g[..h].into(),
            forget: g[h..2 * h].into(),
            candidate: g[2 * h..3 * h].into(),
            output: g[3 * h..].into(),
        }
    }

    fn prev_h(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.h0
        } else {
            &self.steps[k - 1].h
        }
    }

    fn prev_c(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.c0
        } else {
            &self.steps[k - 1].c
        }
    }
}

impl LstmCell {
    /// Glorot-uniform weights, zero biases, forget-gate bias 1.
    pub fn new<R: Rng>(input_size: usize, hidden_size: usize, layer_norm: bool, rng: &mut R) -> Self {
        let h = hidden_size;
        let w = glorot(4 * h, input_size, input_size, h, rng);
        let u = glorot(4 * h, h, h, h, rng);
        let v = glorot(3 * h, h, h, h, rng);
        let mut b = Vector::zeros(4 * h);
        b[h..2 * h].fill(1.0);
        LstmCell {
            input_size,
            hidden_size,
            w,
            u,
            v,
            b,
            norm: layer_norm.then(|| LstmNorm::new(h)),
        }
    }

    /// All-zero parameters (layer-norm gains included).
    pub fn zeros(input_size: usize, hidden_size: usize, layer_norm: bool) -> Self {
        let h = hidden_size;
        let mut cell = LstmCell {
            input_size,
            hidden_size,
            w: Matrix::zeros(4 * h, input_size),
            u: Matrix::zeros(4 * h, h),
            v: Matrix::zeros(3 * h, h),
            b: Vector::zeros(4 * h),
            norm: layer_norm.then(|| LstmNorm::new(h)),
        };
        cell.fill_params(0.0);
        cell
    }

    pub fn input_size(&self) -> usize {
        self.input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn uses_layer_norm(&self) -> bool {
        self.norm.is_some()
    }

    pub(crate) fn check_shapes(&self) -> Result<()> {
        let (i, h) = (self.input_size, self.hidden_size);
        let checks = [
            (self.w.rows(), 4 * h),
            (self.w.cols(), i),
            (self.u.rows(), 4 * h),
            (self.u.cols(), h),
            (self.v.rows(), 3 * h),
            (self.v.cols(), h),
            (self.b.len(), 4 * h),
        ];
        for (actual, expected) in checks {
            if actual != expected {
                return Err(Error::dim("lstm parameter shape", expected, actual));
            }
        }
        if let Some(n) = &self.norm {
            for (v, expected) in [
                (&n.input_gain, 4 * h),
                (&n.input_bias, 4 * h),
                (&n.recurrent_gain, 4 * h),
                (&n.recurrent_bias, 4 * h),
                (&n.cell_gain, h),
                (&n.cell_bias, h),
            ] {
                if v.len() != expected {
                    return Err(Error::dim("lstm layer-norm shape", expected, v.len()));
                }
            }
        }
        Ok(())
    }

    /// One step for a single sequence. Returns the new state and the gate
    /// activations of that step.
    pub fn step(&self, x: &[f64], prev: &LstmState, mask: Option<&DropoutMask>) -> Result<(LstmState, Gates)> {
        let h = self.hidden_size;
        if prev.h.len() != h || prev.c.len() != h {
            return Err(Error::dim("lstm previous state", h, prev.h.len().max(prev.c.len())));
        }
        let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let masks = mask.map(|m| m.mask.as_slice().to_vec());
        let trace = self.forward_from(&[input], prev.h.as_slice(), prev.c.as_slice(), masks)?;
        let state = LstmState {
            h: trace.hidden(0).into(),
            c: trace.context(0).into(),
        };
        Ok((state, trace.gates(0, 0)))
    }

    /// Runs a batch of sequences from a zero state. `inputs[k]` is `B × I`;
    /// `masks`, when given, is `B × H` and held fixed across steps.
    pub fn forward(&self, inputs: &[Matrix], masks: Option<Vec<f64>>) -> Result<LstmTrace> {
        let batch = inputs.first().map_or(0, |m| m.rows());
        let zeros = vec![0.0; batch * self.hidden_size];
        self.forward_from(inputs, &zeros, &zeros, masks)
    }

    fn forward_from(&self, inputs: &[Matrix], h0: &[f64], c0: &[f64], masks: Option<Vec<f64>>) -> Result<LstmTrace> {
        self.check_shapes()?;
        let h = self.hidden_size;
        let batch = inputs.first().map_or(0, |m| m.rows());
        if h0.len() != batch * h || c0.len() != batch * h {
            return Err(Error::dim("lstm initial state", batch * h, h0.len()));
        }
        if let Some(m) = &masks {
            if m.len() != batch * h {
                return Err(Error::dim("lstm dropout mask", batch * h, m.len()));
            }
        }
        let mut trace = LstmTrace {
            batch,
            hidden: h,
            h0: h0.to_vec(),
            c0: c0.to_vec(),
            mask: masks,
            steps: Vec::with_capacity(inputs.len()),
        };
        for x in inputs {
            if x.rows() != batch {
                return Err(Error::dim("lstm batch rows", batch, x.rows()));
            }
            if x.cols() != self.input_size {
                return Err(Error::dim("lstm input", self.input_size, x.cols()));
            }
            let k = trace.steps.len();
            let step = self.forward_step(x, trace.prev_h(k), trace.prev_c(k), trace.mask.as_deref(), batch);
            if !step.h.iter().all(|v| v.is_finite()) || !step.c.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("lstm step"));
            }
            trace.steps.push(step);
        }
        Ok(trace)
    }

    fn forward_step(&self, x: &Matrix, h_prev: &[f64], c_prev: &[f64], mask: Option<&[f64]>, batch: usize) -> StepCache {
        let h = self.hidden_size;
        let g4 = 4 * h;

        let mut wx = vec![0.0; batch * g4];
        gemm(1.0, x.view(), self.w.view().t(), 0.0, ViewMut::row_major(&mut wx, batch, g4));
        let mut uh = vec![0.0; batch * g4];
        gemm(
            1.0,
            View::row_major(h_prev, batch, h),
            self.u.view().t(),
            0.0,
            ViewMut::row_major(&mut uh, batch, g4),
        );
        let mut peep = vec![0.0; batch * 2 * h];
        gemm(
            1.0,
            View::row_major(c_prev, batch, h),
            self.v.view().rows(0, 2 * h).t(),
            0.0,
            ViewMut::row_major(&mut peep, batch, 2 * h),
        );

        let mut cache = StepCache {
            gates: vec![0.0; batch * g4],
            input_hat: Vec::new(),
            input_inv_std: Vec::new(),
            recurrent_hat: Vec::new(),
            recurrent_inv_std: Vec::new(),
            c: vec![0.0; batch * h],
            c_hat: Vec::new(),
            c_inv_std: Vec::new(),
            tanh_c: vec![0.0; batch * h],
            h: vec![0.0; batch * h],
        };

        // Pre-activations accumulate into `wx`.
        if let Some(norm) = &self.norm {
            let (hat, inv) = normalize_blocks(&mut wx, batch, h, &norm.input_gain, &norm.input_bias);
            cache.input_hat = hat;
            cache.input_inv_std = inv;
            let (hat, inv) = normalize_blocks(&mut uh, batch, h, &norm.recurrent_gain, &norm.recurrent_bias);
            cache.recurrent_hat = hat;
            cache.recurrent_inv_std = inv;
        }
        for r in 0..batch {
            let pre = &mut wx[r * g4..(r + 1) * g4];
            let rec = &uh[r * g4..(r + 1) * g4];
            let pp = &peep[r * 2 * h..(r + 1) * 2 * h];
            for j in 0..g4 {
                pre[j] += rec[j] + self.b[j];
            }
            for j in 0..2 * h {
                pre[j] += pp[j];
            }
            let gates = &mut cache.gates[r * g4..(r + 1) * g4];
            let c_row = &mut cache.c[r * h..(r + 1) * h];
            let cp = &c_prev[r * h..(r + 1) * h];
            for j in 0..h {
                let i = sigmoid_scalar(pre[j]);
                let f = sigmoid_scalar(pre[h + j]);
                let g = pre[2 * h + j].tanh();
                let m = mask.map_or(1.0, |m| m[r * h + j]);
                gates[j] = i;
                gates[h + j] = f;
                gates[2 * h + j] = g;
                c_row[j] = f * cp[j] + i * m * g;
            }
        }

        let mut peep_o = vec![0.0; batch * h];
        gemm(
            1.0,
            View::row_major(&cache.c, batch, h),
            self.v.view().rows(2 * h, h).t(),
            0.0,
            ViewMut::row_major(&mut peep_o, batch, h),
        );
        let mut c_norm = cache.c.clone();
        if let Some(norm) = &self.norm {
            let (hat, inv) = normalize_blocks(&mut c_norm, batch, h, &norm.cell_gain, &norm.cell_bias);
            cache.c_hat = hat;
            cache.c_inv_std = inv;
        }
        for r in 0..batch {
            let pre = &wx[r * g4..(r + 1) * g4];
            for j in 0..h {
                let o = sigmoid_scalar(pre[3 * h + j] + peep_o[r * h + j]);
                let t = c_norm[r * h + j].tanh();
                cache.gates[r * g4 + 3 * h + j] = o;
                cache.tanh_c[r * h + j] = t;
                cache.h[r * h + j] = o * t;
            }
        }
        cache
    }

    /// Reverse accumulation through a cached forward pass.
    ///
    /// `output_grads[k]` is dLoss/dh at step `k` (`B × H`), excluding the
    /// recurrent contribution, which is handled here. Parameter gradients are
    /// added into `grads`; the returned matrices are dLoss/dx per step.
    pub fn backward(
        &self,
        inputs: &[Matrix],
        trace: &LstmTrace,
        output_grads: &[Vec<f64>],
        grads: &mut LstmCell,
    ) -> Result<Vec<Matrix>> {
        let steps = trace.len();
        if inputs.len() != steps {
            return Err(Error::dim("lstm backward inputs", steps, inputs.len()));
        }
        if output_grads.len() != steps {
            return Err(Error::dim("lstm backward output grads", steps, output_grads.len()));
        }
        let h = self.hidden_size;
        let g4 = 4 * h;
        let batch = trace.batch;
        for og in output_grads {
            if og.len() != batch * h {
                return Err(Error::dim("lstm backward output grad", batch * h, og.len()));
            }
        }
        if grads.input_size != self.input_size || grads.hidden_size != h || grads.norm.is_some() != self.norm.is_some() {
            return Err(Error::InvalidArgument("gradient accumulator shape differs from cell".into()));
        }

        let mut dx_all = vec![Matrix::zeros(batch, self.input_size); steps];
        let mut dh_next = vec![0.0; batch * h];
        let mut dc_next = vec![0.0; batch * h];
        let mut dz = vec![0.0; batch * g4];
        let mut da_in = vec![0.0; batch * g4];
        let mut da_rec = vec![0.0; batch * g4];

        for k in (0..steps).rev() {
            let st = &trace.steps[k];
            let c_prev = trace.prev_c(k);
            let h_prev = trace.prev_h(k);
            let mut dc = std::mem::take(&mut dc_next);

            // Output gate and the tanh(N(c')) path.
            let mut d_cnorm = vec![0.0; batch * h];
            for r in 0..batch {
                for j in 0..h {
                    let idx = r * h + j;
                    let dh = output_grads[k][idx] + dh_next[idx];
                    let o = st.gates[r * g4 + 3 * h + j];
                    let t = st.tanh_c[idx];
                    dz[r * g4 + 3 * h + j] = dh * t * o * (1.0 - o);
                    d_cnorm[idx] = dh * o * (1.0 - t * t);
                }
            }
            if let (Some(norm), Some(gn)) = (&self.norm, grads.norm.as_mut()) {
                let mut d_c = vec![0.0; batch * h];
                norm_backward(
                    &d_cnorm,
                    &st.c_hat,
                    &st.c_inv_std,
                    &norm.cell_gain,
                    batch,
                    h,
                    &mut gn.cell_gain,
                    &mut gn.cell_bias,
                    &mut d_c,
                );
                for (a, b) in dc.iter_mut().zip(&d_c) {
                    *a += b;
                }
            } else {
                for (a, b) in dc.iter_mut().zip(&d_cnorm) {
                    *a += b;
                }
            }
            let dz_view = View::row_major(&dz, batch, g4);
            // Output peephole reads the new context.
            gemm(
                1.0,
                dz_view.cols(3 * h, h),
                self.v.view().rows(2 * h, h),
                1.0,
                ViewMut::row_major(&mut dc, batch, h),
            );
            gemm(
                1.0,
                dz_view.cols(3 * h, h).t(),
                View::row_major(&st.c, batch, h),
                1.0,
                ViewMut::row_major(grads.v.as_mut_slice(), 3 * h, h).rows(2 * h, h),
            );

            // Context update.
            let mut dc_prev = vec![0.0; batch * h];
            for r in 0..batch {
                for j in 0..h {
                    let idx = r * h + j;
                    let gi = st.gates[r * g4 + j];
                    let gf = st.gates[r * g4 + h + j];
                    let gg = st.gates[r * g4 + 2 * h + j];
                    let m = trace.mask.as_ref().map_or(1.0, |m| m[idx]);
                    let d = dc[idx];
                    dz[r * g4 + j] = d * m * gg * gi * (1.0 - gi);
                    dz[r * g4 + h + j] = d * c_prev[idx] * gf * (1.0 - gf);
                    dz[r * g4 + 2 * h + j] = d * gi * m * (1.0 - gg * gg);
                    dc_prev[idx] = d * gf;
                }
            }
            let dz_view = View::row_major(&dz, batch, g4);
            gemm(
                1.0,
                dz_view.cols(0, 2 * h),
                self.v.view().rows(0, 2 * h),
                1.0,
                ViewMut::row_major(&mut dc_prev, batch, h),
            );
            gemm(
                1.0,
                dz_view.cols(0, 2 * h).t(),
                View::row_major(c_prev, batch, h),
                1.0,
                ViewMut::row_major(grads.v.as_mut_slice(), 3 * h, h).rows(0, 2 * h),
            );
            for r in 0..batch {
                for (gb, d) in grads.b.iter_mut().zip(&dz[r * g4..(r + 1) * g4]) {
                    *gb += d;
                }
            }

            // Through the (optionally normalized) input and recurrent blocks.
            if let (Some(norm), Some(gn)) = (&self.norm, grads.norm.as_mut()) {
                da_in.fill(0.0);
                da_rec.fill(0.0);
                norm_backward(
                    &dz,
                    &st.input_hat,
                    &st.input_inv_std,
                    &norm.input_gain,
                    batch,
                    h,
                    &mut gn.input_gain,
                    &mut gn.input_bias,
                    &mut da_in,
                );
                norm_backward(
                    &dz,
                    &st.recurrent_hat,
                    &st.recurrent_inv_std,
                    &norm.recurrent_gain,
                    batch,
                    h,
                    &mut gn.recurrent_gain,
                    &mut gn.recurrent_bias,
                    &mut da_rec,
                );
            } else {
                da_in.copy_from_slice(&dz);
                da_rec.copy_from_slice(&dz);
            }
            let da_in_view = View::row_major(&da_in, batch, g4);
            let da_rec_view = View::row_major(&da_rec, batch, g4);
            gemm(
                1.0,
                da_in_view.t(),
                inputs[k].view(),
                1.0,
                ViewMut::row_major(grads.w.as_mut_slice(), g4, self.input_size),
            );
            gemm(
                1.0,
                da_in_view,
                self.w.view(),
                0.0,
                ViewMut::row_major(dx_all[k].as_mut_slice(), batch, self.input_size),
            );
            gemm(
                1.0,
                da_rec_view.t(),
                View::row_major(h_prev, batch, h),
                1.0,
                ViewMut::row_major(grads.u.as_mut_slice(), g4, h),
            );
            gemm(
                1.0,
                da_rec_view,
                self.u.view(),
                0.0,
                ViewMut::row_major(&mut dh_next, batch, h),
            );
            dc_next = dc_prev;
        }
        Ok(dx_all)
    }
}

/// Per-row, per-`block`-sized layer normalization in place. Returns the
/// normalized pre-gain values and the inverse standard deviations (one per
/// row-block).
fn normalize_blocks(data: &mut [f64], batch: usize, block: usize, gain: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let width = gain.len();
    let blocks = width / block;
    let mut hat = vec![0.0; data.len()];
    let mut inv = vec![0.0; batch * blocks];
    for r in 0..batch {
        for q in 0..blocks {
            let off = r * width + q * block;
            let seg = &mut data[off..off + block];
            let (mean, inv_std) = moments(seg, LAYER_NORM_EPS);
            inv[r * blocks + q] = inv_std;
            for j in 0..block {
                let xh = (seg[j] - mean) * inv_std;
                hat[off + j] = xh;
                seg[j] = xh * gain[q * block + j] + bias[q * block + j];
            }
        }
    }
    (hat, inv)
}

/// Backward of [`normalize_blocks`]: accumulates gain/bias gradients and
/// writes dLoss/d(raw input) into `d_raw`.
#[allow(clippy::too_many_arguments)]
fn norm_backward(
    d_out: &[f64],
    hat: &[f64],
    inv: &[f64],
    gain: &[f64],
    batch: usize,
    block: usize,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
    d_raw: &mut [f64],
) {
    let width = gain.len();
    let blocks = width / block;
    let n = block as f64;
    let mut dhat = vec![0.0; block];
    for r in 0..batch {
        for q in 0..blocks {
            let off = r * width + q * block;
            let mut mean_d = 0.0;
            let mut mean_dx = 0.0;
            for j in 0..block {
                let p = q * block + j;
                let d = d_out[off + j];
                d_gain[p] += d * hat[off + j];
                d_bias[p] += d;
                dhat[j] = d * gain[p];
                mean_d += dhat[j];
                mean_dx += dhat[j] * hat[off + j];
            }
            mean_d /= n;
            mean_dx /= n;
            let s = inv[r * blocks + q];
            for j in 0..block {
                d_raw[off + j] = s * (dhat[j] - mean_d - hat[off + j] * mean_dx);
            }
        }
    }
}

impl Parameterized for LstmCell {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![self.w.as_slice(), self.u.as_slice(), self.v.as_slice(), self.b.as_slice()];
        if let Some(n) = &self.norm {
            out.extend([
                n.input_gain.as_slice(),
                n.input_bias.as_slice(),
                n.recurrent_gain.as_slice(),
                n.recurrent_bias.as_slice(),
                n.cell_gain.as_slice(),
                n.cell_bias.as_slice(),
            ]);
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.w.as_mut_slice(),
            self.u.as_mut_slice(),
            self.v.as_mut_slice(),
            self.b.as_mut_slice(),
        ];
        if let Some(n) = &mut self.norm {
            out.extend([
                n.input_gain.as_mut_slice(),
                n.input_bias.as_mut_slice(),
                n.recurrent_gain.as_mut_slice(),
                n.recurrent_bias.as_mut_slice(),
                n.cell_gain.as_mut_slice(),
                n.cell_bias.as_mut_slice(),
            ]);
        }
        out
    }
}
