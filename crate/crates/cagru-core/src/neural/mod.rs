//! The per-cluster forecaster: linear embedding of per-day features,
//! decay-weighted sinusoidal positional embedding, a single GRU layer, one
//! attention head with a compression readout, a GeLU projection, and a
//! sigmoid head trained with binary cross-entropy by manual reverse-mode
//! differentiation and adaptive-moment gradient descent.

mod checkpoint;
pub mod linalg;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use linalg::Mat;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SupervisedWindow;
use crate::error::{Error, Result};
use crate::metrics::rank_auc;

/// Probability clamp applied inside the BCE loss.
pub const PROB_CLAMP: f64 = 1e-7;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Readout applied to the attention context matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Compression {
    /// Final-timestep context row (the default).
    #[default]
    LastRow,
    /// Mean over context rows.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-day input feature count.
    pub feature_dim: usize,
    /// Embedding width d (even).
    pub embed_dim: usize,
    /// GRU hidden width w.
    pub hidden_dim: usize,
    /// Window length L.
    pub window_len: usize,
    /// Positional base l (maximum sequence length), >= window_len.
    pub positional_base: usize,
    /// Temporal decay factor in (0, 1]; 1 disables decay.
    pub decay: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// When false the readout is the final GRU state and the attention
    /// block is skipped entirely.
    pub use_attention: bool,
    /// Opt-in value projection inside the attention block.
    pub use_value_projection: bool,
    pub compression: Compression,
}

impl ModelConfig {
    pub fn new(feature_dim: usize, window_len: usize) -> Self {
        ModelConfig {
            feature_dim,
            embed_dim: 16,
            hidden_dim: 32,
            window_len,
            positional_base: window_len,
            decay: 0.95,
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            use_attention: true,
            use_value_projection: false,
            compression: Compression::LastRow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.embed_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding width must be even and positive, got {}",
                self.embed_dim
            )));
        }
        if self.feature_dim == 0
            || self.hidden_dim == 0
            || self.window_len == 0
            || self.batch_size == 0
            || self.max_epochs == 0
        {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.positional_base < self.window_len {
            return Err(Error::Config(format!(
                "positional base {} below window length {}",
                self.positional_base, self.window_len
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// All trainable tensors, in the fixed registry order used by the
/// optimizer, the checkpoint format, and gradient checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub embed_w: Mat,
    pub embed_b: Mat,
    pub w_z: Mat,
    pub u_z: Mat,
    pub b_z: Mat,
    pub w_r: Mat,
    pub u_r: Mat,
    pub b_r: Mat,
    pub w_h: Mat,
    pub u_h: Mat,
    pub b_h: Mat,
    pub attn_q: Mat,
    pub attn_k: Mat,
    pub attn_v: Option<Mat>,
    pub out_w: Mat,
    pub out_b: Mat,
    pub head_w: Mat,
    pub head_b: Mat,
}

impl ParamSet {
    fn shaped(config: &ModelConfig) -> Self {
        let f = config.feature_dim;
        let d = config.embed_dim;
        let g = 2 * d; // GRU input width after concatenation
        let w = config.hidden_dim;
        ParamSet {
            embed_w: Mat::zeros(d, f),
            embed_b: Mat::zeros(d, 1),
            w_z: Mat::zeros(w, g),
            u_z: Mat::zeros(w, w),
            b_z: Mat::zeros(w, 1),
            w_r: Mat::zeros(w, g),
            u_r: Mat::zeros(w, w),
            b_r: Mat::zeros(w, 1),
            w_h: Mat::zeros(w, g),
            u_h: Mat::zeros(w, w),
            b_h: Mat::zeros(w, 1),
            attn_q: Mat::zeros(w, w),
            attn_k: Mat::zeros(w, w),
            attn_v: config.use_value_projection.then(|| Mat::zeros(w, w)),
            out_w: Mat::zeros(w, w),
            out_b: Mat::zeros(w, 1),
            head_w: Mat::zeros(1, w),
            head_b: Mat::zeros(1, 1),
        }
    }

    pub fn tensors(&self) -> Vec<(&'static str, &Mat)> {
        let mut t = vec![
            ("embed_w", &self.embed_w),
            ("embed_b", &self.embed_b),
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
            ("attn_q", &self.attn_q),
            ("attn_k", &self.attn_k),
        ];
        if let Some(v) = &self.attn_v {
            t.push(("attn_v", v));
        }
        t.extend([
            ("out_w", &self.out_w),
            ("out_b", &self.out_b),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
        ]);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Mat)> {
        let mut t = vec![
            ("embed_w", &mut self.embed_w),
            ("embed_b", &mut self.embed_b),
            ("w_z", &mut self.w_z),
            ("u_z", &mut self.u_z),
            ("b_z", &mut self.b_z),
            ("w_r", &mut self.w_r),
            ("u_r", &mut self.u_r),
            ("b_r", &mut self.b_r),
            ("w_h", &mut self.w_h),
            ("u_h", &mut self.u_h),
            ("b_h", &mut self.b_h),
            ("attn_q", &mut self.attn_q),
            ("attn_k", &mut self.attn_k),
        ];
        if let Some(v) = &mut self.attn_v {
            t.push(("attn_v", v));
        }
        t.extend([
            ("out_w", &mut self.out_w),
            ("out_b", &mut self.out_b),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
        ]);
        t
    }

    fn zeros_like(&self) -> ParamSet {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }
}

/// One trained forecaster: config, parameters, and the (constant) decayed
/// positional embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub pe: Mat,
}

/// Optimizer and early-stopping state carried across epochs.
pub struct TrainState {
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
    pub step: u64,
    pub best_score: f64,
    pub epochs_since_improvement: usize,
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TrainingTrace {
    pub epoch_losses: Vec<f64>,
    pub validation_scores: Vec<f64>,
    pub epochs_run: usize,
}

/// Interleaved sin/cos positional embedding with per-position geometric
/// decay: row m is scaled by decay^(len-1-m), so the most recent day is
/// undamped.
pub fn positional_embedding(len: usize, dim: usize, base: usize, decay: f64) -> Result<Mat> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional embedding width must be even and positive, got {dim}"
        )));
    }
    if base < len {
        return Err(Error::Config(format!(
            "positional base {base} below sequence length {len}"
        )));
    }
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(Error::Config(format!("decay {decay} outside (0, 1]")));
    }
    let mut pe = Mat::zeros(len, dim);
    let base = base as f64;
    for m in 0..len {
        let alpha = decay.powi((len - 1 - m) as i32);
        let row = pe.row_mut(m);
        for j in 0..dim / 2 {
            let angle = m as f64 / base.powf(2.0 * j as f64 / dim as f64);
            row[2 * j] = alpha * angle.sin();
            row[2 * j + 1] = alpha * angle.cos();
        }
    }
    Ok(pe)
}

/// Row-wise concatenation [x | pe].
pub fn concat_embeddings(x: &Mat, pe: &Mat) -> Result<Mat> {
    if x.rows != pe.rows || x.cols != pe.cols {
        return Err(Error::Dimension(format!(
            "embedding {}x{} vs positional {}x{}",
            x.rows, x.cols, pe.rows, pe.cols
        )));
    }
    let mut out = Mat::zeros(x.rows, 2 * x.cols);
    for i in 0..x.rows {
        let row = out.row_mut(i);
        row[..x.cols].copy_from_slice(x.row(i));
        row[x.cols..].copy_from_slice(pe.row(i));
    }
    Ok(out)
}

/// Mean binary cross-entropy with probability clamping.
pub fn bce_loss(labels: &[u8], probs: &[f64]) -> Result<f64> {
    if labels.len() != probs.len() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} probabilities",
            labels.len(),
            probs.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("empty batch".into()));
    }
    let mut total = 0.0;
    for (&y, &p) in labels.iter().zip(probs) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / labels.len() as f64)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (k * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let k = (2.0 / std::f64::consts::PI).sqrt();
    let u = k * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * k * (1.0 + 3.0 * GELU_C * x * x)
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    inputs: Mat,
    x_bar: Mat,
    z: Mat,
    r: Mat,
    h_tilde: Mat,
    h: Mat,
    q: Mat,
    k: Mat,
    attn: Mat,
    value: Option<Mat>,
    compressed: Vec<f64>,
    out_pre: Vec<f64>,
    out_act: Vec<f64>,
    pub prob: f64,
}

/// Gate activations and hidden states from one GRU pass.
#[derive(Debug)]
pub struct GruTrace {
    pub z: Mat,
    pub r: Mat,
    pub h_tilde: Mat,
    /// Hidden state per step; the last row is h_n.
    pub h: Mat,
}

impl GruTrace {
    pub fn final_state(&self) -> &[f64] {
        self.h.row(self.h.rows - 1)
    }
}

/// Run the gated recurrence over a prepared input sequence, starting from
/// a zero hidden state:
///
///   z_t = sigmoid(W_z x_t + U_z h_{t-1} + b_z)
///   r_t = sigmoid(W_r x_t + U_r h_{t-1} + b_r)
///   c_t = tanh(W_h x_t + U_h (r_t . h_{t-1}) + b_h)
///   h_t = (1 - z_t) . h_{t-1} + z_t . c_t
pub fn gru_forward(params: &ParamSet, x_bar: &Mat) -> Result<GruTrace> {
    let l = x_bar.rows;
    let w = params.u_z.rows;
    if params.w_z.cols != x_bar.cols {
        return Err(Error::Dimension(format!(
            "GRU input width {} vs sequence width {}",
            params.w_z.cols, x_bar.cols
        )));
    }
    let mut z = Mat::zeros(l, w);
    let mut r = Mat::zeros(l, w);
    let mut h_tilde = Mat::zeros(l, w);
    let mut h = Mat::zeros(l, w);
    let mut h_prev = vec![0.0; w];
    let mut gate = vec![0.0; w];
    let mut scratch = vec![0.0; w];
    for t in 0..l {
        let x_t = x_bar.row(t);

        params.w_z.matvec(x_t, &mut gate);
        scratch.fill(0.0);
        params.u_z.matvec(&h_prev, &mut scratch);
        for i in 0..w {
            z.set(t, i, sigmoid(gate[i] + scratch[i] + params.b_z.data[i]));
        }

        params.w_r.matvec(x_t, &mut gate);
        scratch.fill(0.0);
        params.u_r.matvec(&h_prev, &mut scratch);
        for i in 0..w {
            r.set(t, i, sigmoid(gate[i] + scratch[i] + params.b_r.data[i]));
        }

        let gated: Vec<f64> = (0..w).map(|i| r.get(t, i) * h_prev[i]).collect();
        params.w_h.matvec(x_t, &mut gate);
        scratch.fill(0.0);
        params.u_h.matvec(&gated, &mut scratch);
        for i in 0..w {
            h_tilde.set(t, i, (gate[i] + scratch[i] + params.b_h.data[i]).tanh());
        }

        for i in 0..w {
            let ht = (1.0 - z.get(t, i)) * h_prev[i] + z.get(t, i) * h_tilde.get(t, i);
            if !ht.is_finite() {
                return Err(Error::Numeric(format!("non-finite GRU state at step {t}")));
            }
            h.set(t, i, ht);
            h_prev[i] = ht;
        }
    }
    Ok(GruTrace { z, r, h_tilde, h })
}

impl ForecastModel {
    /// Fresh model with seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    /// weights and zero biases.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let pe = positional_embedding(
            config.window_len,
            config.embed_dim,
            config.positional_base,
            config.decay,
        )?;
        let mut params = ParamSet::shaped(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for (name, tensor) in params.tensors_mut() {
            if name.starts_with('b') || name == "out_b" || name == "head_b" || name == "embed_b" {
                continue;
            }
            let bound = 1.0 / (tensor.cols as f64).sqrt();
            for v in &mut tensor.data {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(ForecastModel { config, params, pe })
    }

    /// Apply the shared linear projection to each day's feature vector.
    pub fn embed_window(&self, inputs: &Mat) -> Result<Mat> {
        if inputs.cols != self.config.feature_dim || inputs.rows != self.config.window_len {
            return Err(Error::Dimension(format!(
                "window {}x{} vs expected {}x{}",
                inputs.rows, inputs.cols, self.config.window_len, self.config.feature_dim
            )));
        }
        let d = self.config.embed_dim;
        let mut out = Mat::zeros(inputs.rows, d);
        for t in 0..inputs.rows {
            let row = &mut out.data[t * d..(t + 1) * d];
            self.params.embed_w.matvec(inputs.row(t), row);
            for (v, b) in row.iter_mut().zip(&self.params.embed_b.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Full forward pass for one window.
    pub fn forward(&self, window: &SupervisedWindow) -> Result<ForwardCache> {
        let l = self.config.window_len;
        let w = self.config.hidden_dim;
        if window.feature_dim != self.config.feature_dim || window.window_len() != l {
            return Err(Error::Dimension(format!(
                "window {}x{} vs model {}x{}",
                window.window_len(),
                window.feature_dim,
                l,
                self.config.feature_dim
            )));
        }
        let inputs = Mat {
            rows: l,
            cols: window.feature_dim,
            data: window.inputs.clone(),
        };
        let x_d = self.embed_window(&inputs)?;
        let x_bar = concat_embeddings(&x_d, &self.pe)?;
        let GruTrace { z, r, h_tilde, h } = gru_forward(&self.params, &x_bar)?;

        // Attention + compression, or the raw final state.
        let (q, k, attn, value, compressed) = if self.config.use_attention {
            attention_compress(
                &h,
                &self.params.attn_q,
                &self.params.attn_k,
                self.params.attn_v.as_ref(),
                self.config.compression,
            )?
        } else {
            (
                Mat::zeros(0, 0),
                Mat::zeros(0, 0),
                Mat::zeros(0, 0),
                None,
                h.row(l - 1).to_vec(),
            )
        };

        // Prediction head: GeLU projection then sigmoid.
        let mut out_pre = vec![0.0; w];
        self.params.out_w.matvec(&compressed, &mut out_pre);
        for (v, b) in out_pre.iter_mut().zip(&self.params.out_b.data) {
            *v += b;
        }
        let out_act: Vec<f64> = out_pre.iter().map(|&v| gelu(v)).collect();
        let logit: f64 = self
            .params
            .head_w
            .data
            .iter()
            .zip(&out_act)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.params.head_b.data[0];
        let prob = sigmoid(logit);
        if !prob.is_finite() {
            return Err(Error::Numeric("non-finite output probability".into()));
        }

        Ok(ForwardCache {
            inputs,
            x_bar,
            z,
            r,
            h_tilde,
            h,
            q,
            k,
            attn,
            value,
            compressed,
            out_pre,
            out_act,
            prob,
        })
    }

    /// Predicted purchase probability for one window.
    pub fn predict(&self, window: &SupervisedWindow) -> Result<f64> {
        Ok(self.forward(window)?.prob)
    }

    /// Accumulate `scale` times the gradient of this sample's BCE loss
    /// into `grads`. The cache must come from `forward` on this model.
    pub fn backward(&self, cache: &ForwardCache, label: u8, scale: f64, grads: &mut ParamSet) {
        let l = self.config.window_len;
        let w = self.config.hidden_dim;
        let d = self.config.embed_dim;
        let p = cache.prob;

        // d(BCE)/d(logit) for sigmoid output; zero where the clamp is active.
        let d_logit = if p <= PROB_CLAMP || p >= 1.0 - PROB_CLAMP {
            0.0
        } else {
            p - label as f64
        };

        grads.head_b.data[0] += scale * d_logit;
        for i in 0..w {
            grads.head_w.data[i] += scale * d_logit * cache.out_act[i];
        }
        let d_out_pre: Vec<f64> = (0..w)
            .map(|i| d_logit * self.params.head_w.data[i] * gelu_prime(cache.out_pre[i]))
            .collect();
        grads.out_w.outer_add(&d_out_pre, &cache.compressed, scale);
        for i in 0..w {
            grads.out_b.data[i] += scale * d_out_pre[i];
        }
        let mut d_compressed = vec![0.0; w];
        self.params.out_w.matvec_t_add(&d_out_pre, &mut d_compressed);

        // dY: gradient flowing into the GRU output rows.
        let mut d_y = Mat::zeros(l, w);
        if self.config.use_attention {
            let mut d_context = Mat::zeros(l, w);
            match self.config.compression {
                Compression::LastRow => {
                    d_context.row_mut(l - 1).copy_from_slice(&d_compressed);
                }
                Compression::Mean => {
                    for t in 0..l {
                        for (o, v) in d_context.row_mut(t).iter_mut().zip(&d_compressed) {
                            *o = v / l as f64;
                        }
                    }
                }
            }

            let value_mat = cache.value.as_ref().unwrap_or(&cache.h);
            let d_attn = d_context.matmul_bt(value_mat);
            let d_value = cache.attn.matmul_at(&d_context);
            if let (Some(wv), Some(gv)) = (&self.params.attn_v, &mut grads.attn_v) {
                let g = cache.h.matmul_at(&d_value);
                for (a, b) in gv.data.iter_mut().zip(&g.data) {
                    *a += scale * b;
                }
                d_y.add_assign(&d_value.matmul_bt(wv));
            } else {
                d_y.add_assign(&d_value);
            }

            // Softmax backward per row.
            let mut d_scores = Mat::zeros(l, l);
            for t in 0..l {
                let a = cache.attn.row(t);
                let da = d_attn.row(t);
                let dot: f64 = a.iter().zip(da).map(|(x, y)| x * y).sum();
                for j in 0..l {
                    d_scores.set(t, j, a[j] * (da[j] - dot));
                }
            }

            let d_q = d_scores.matmul(&cache.k);
            let d_k = d_scores.matmul_at(&cache.q);
            let g_q = cache.h.matmul_at(&d_q);
            let g_k = cache.h.matmul_at(&d_k);
            for (a, b) in grads.attn_q.data.iter_mut().zip(&g_q.data) {
                *a += scale * b;
            }
            for (a, b) in grads.attn_k.data.iter_mut().zip(&g_k.data) {
                *a += scale * b;
            }
            d_y.add_assign(&d_q.matmul_bt(&self.params.attn_q));
            d_y.add_assign(&d_k.matmul_bt(&self.params.attn_k));
        } else {
            d_y.row_mut(l - 1).copy_from_slice(&d_compressed);
        }

        // BPTT through the GRU.
        let zero_h = vec![0.0; w];
        let mut carry = vec![0.0; w];
        let mut d_x_bar = Mat::zeros(l, 2 * d);
        for t in (0..l).rev() {
            let h_prev: &[f64] = if t == 0 { &zero_h } else { cache.h.row(t - 1) };
            let x_t = cache.x_bar.row(t);
            let z_t = cache.z.row(t);
            let r_t = cache.r.row(t);
            let ht_t = cache.h_tilde.row(t);

            let d_h: Vec<f64> = (0..w).map(|i| d_y.get(t, i) + carry[i]).collect();
            let d_z: Vec<f64> = (0..w).map(|i| d_h[i] * (ht_t[i] - h_prev[i])).collect();
            let d_ht: Vec<f64> = (0..w).map(|i| d_h[i] * z_t[i]).collect();
            let mut d_h_prev: Vec<f64> = (0..w).map(|i| d_h[i] * (1.0 - z_t[i])).collect();

            let da_h: Vec<f64> = (0..w).map(|i| d_ht[i] * (1.0 - ht_t[i] * ht_t[i])).collect();
            let gated: Vec<f64> = (0..w).map(|i| r_t[i] * h_prev[i]).collect();
            grads.w_h.outer_add(&da_h, x_t, scale);
            grads.u_h.outer_add(&da_h, &gated, scale);
            for i in 0..w {
                grads.b_h.data[i] += scale * da_h[i];
            }
            let d_x = d_x_bar.row_mut(t);
            self.params.w_h.matvec_t_add(&da_h, d_x);
            let mut d_gated = vec![0.0; w];
            self.params.u_h.matvec_t_add(&da_h, &mut d_gated);
            let d_r: Vec<f64> = (0..w).map(|i| d_gated[i] * h_prev[i]).collect();
            for i in 0..w {
                d_h_prev[i] += d_gated[i] * r_t[i];
            }

            let da_z: Vec<f64> = (0..w).map(|i| d_z[i] * z_t[i] * (1.0 - z_t[i])).collect();
            grads.w_z.outer_add(&da_z, x_t, scale);
            grads.u_z.outer_add(&da_z, h_prev, scale);
            for i in 0..w {
                grads.b_z.data[i] += scale * da_z[i];
            }
            self.params.w_z.matvec_t_add(&da_z, d_x);
            self.params.u_z.matvec_t_add(&da_z, &mut d_h_prev);

            let da_r: Vec<f64> = (0..w).map(|i| d_r[i] * r_t[i] * (1.0 - r_t[i])).collect();
            grads.w_r.outer_add(&da_r, x_t, scale);
            grads.u_r.outer_add(&da_r, h_prev, scale);
            for i in 0..w {
                grads.b_r.data[i] += scale * da_r[i];
            }
            self.params.w_r.matvec_t_add(&da_r, d_x);
            self.params.u_r.matvec_t_add(&da_r, &mut d_h_prev);

            carry = d_h_prev;
        }

        // Embedding backward: only the first d columns of x_bar are learned.
        for t in 0..l {
            let d_xd = &d_x_bar.row(t)[..d];
            grads.embed_w.outer_add(d_xd, cache.inputs.row(t), scale);
            for i in 0..d {
                grads.embed_b.data[i] += scale * d_xd[i];
            }
        }
    }

    /// Mean-BCE gradient over a batch.
    pub fn batch_gradients(&self, batch: &[&SupervisedWindow]) -> Result<(f64, ParamSet)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let mut grads = self.params.zeros_like();
        let scale = 1.0 / batch.len() as f64;
        let mut labels = Vec::with_capacity(batch.len());
        let mut probs = Vec::with_capacity(batch.len());
        for window in batch {
            let cache = self.forward(window)?;
            self.backward(&cache, window.label, scale, &mut grads);
            labels.push(window.label);
            probs.push(cache.prob);
        }
        Ok((bce_loss(&labels, &probs)?, grads))
    }
}

/// Attention readout over a GRU output matrix: row-wise softmax of
/// q k^T (no scale factor) applied to the values, then compression.
/// Returns (q, k, attention, value, compressed).
pub fn attention_compress(
    y: &Mat,
    q_proj: &Mat,
    k_proj: &Mat,
    v_proj: Option<&Mat>,
    compression: Compression,
) -> Result<(Mat, Mat, Mat, Option<Mat>, Vec<f64>)> {
    if q_proj.rows != y.cols || k_proj.rows != y.cols {
        return Err(Error::Dimension(format!(
            "projection input width {} vs sequence width {}",
            q_proj.rows, y.cols
        )));
    }
    let l = y.rows;
    let w = y.cols;
    let q = y.matmul(q_proj);
    let k = y.matmul(k_proj);
    let mut attn = q.matmul_bt(&k);
    for t in 0..l {
        softmax_row(attn.row_mut(t))?;
    }
    let value = v_proj.map(|wv| y.matmul(wv));
    let context = attn.matmul(value.as_ref().unwrap_or(y));
    let compressed = match compression {
        Compression::LastRow => context.row(l - 1).to_vec(),
        Compression::Mean => {
            let mut mean = vec![0.0; w];
            for t in 0..l {
                for (m, v) in mean.iter_mut().zip(context.row(t)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= l as f64);
            mean
        }
    };
    Ok((q, k, attn, value, compressed))
}

fn softmax_row(row: &mut [f64]) -> Result<()> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numeric("non-finite attention logits".into()));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Train one forecaster with mini-batch adaptive-moment gradient descent
/// and early stopping on validation AUC.
///
/// Fully deterministic for a given config: parameter init, per-epoch
/// shuffling, and batch order all derive from `config.seed`.
pub fn fit(
    train: &[SupervisedWindow],
    validation: &[SupervisedWindow],
    config: &ModelConfig,
) -> Result<(ForecastModel, TrainingTrace)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("no training windows".into()));
    }
    let mut model = ForecastModel::init(config.clone())?;
    let mut state = TrainState {
        first_moment: model.params.zeros_like(),
        second_moment: model.params.zeros_like(),
        step: 0,
        best_score: f64::NEG_INFINITY,
        epochs_since_improvement: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best_params: Option<ParamSet> = None;

    let mut trace = TrainingTrace {
        epoch_losses: Vec::new(),
        validation_scores: Vec::new(),
        epochs_run: 0,
    };

    for _epoch in 0..config.max_epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&SupervisedWindow> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = model.batch_gradients(&batch)?;
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            state.step += 1;
            adam_step(&mut model.params, &grads, &mut state, config.learning_rate);
        }
        trace.epoch_losses.push(epoch_loss / seen as f64);
        trace.epochs_run += 1;

        if validation.is_empty() {
            trace.validation_scores.push(f64::NAN);
            continue;
        }
        let mut labels = Vec::with_capacity(validation.len());
        let mut probs = Vec::with_capacity(validation.len());
        for window in validation {
            labels.push(window.label);
            probs.push(model.predict(window)?);
        }
        let score = rank_auc(&labels, &probs)?;
        trace.validation_scores.push(score);

        if score > state.best_score {
            state.best_score = score;
            state.epochs_since_improvement = 0;
            best_params = Some(model.params.clone());
        } else {
            state.epochs_since_improvement += 1;
        }
        if state.epochs_since_improvement >= config.patience {
            break;
        }
    }

    if let Some(best) = best_params {
        model.params = best;
    }
    Ok((model, trace))
}

fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut TrainState, lr: f64) {
    let t = state.step as f64;
    let bias1 = 1.0 - BETA1.powf(t);
    let bias2 = 1.0 - BETA2.powf(t);
    let g: Vec<&Mat> = grads.tensors().into_iter().map(|(_, m)| m).collect();
    let mut p: Vec<&mut Mat> = params.tensors_mut().into_iter().map(|(_, m)| m).collect();
    let mut m: Vec<&mut Mat> = state
        .first_moment
        .tensors_mut()
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    let mut v: Vec<&mut Mat> = state
        .second_moment
        .tensors_mut()
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    for k in 0..p.len() {
        for i in 0..p[k].data.len() {
            let grad = g[k].data[i];
            m[k].data[i] = BETA1 * m[k].data[i] + (1.0 - BETA1) * grad;
            v[k].data[i] = BETA2 * v[k].data[i] + (1.0 - BETA2) * grad * grad;
            let m_hat = m[k].data[i] / bias1;
            let v_hat = v[k].data[i] / bias2;
            p[k].data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(inputs: Vec<f64>, feature_dim: usize, label: u8) -> SupervisedWindow {
        SupervisedWindow {
            inputs,
            feature_dim,
            label,
            customer: 0,
            end_day: 0,
        }
    }

    fn small_config() -> ModelConfig {
        let mut c = ModelConfig::new(2, 4);
        c.embed_dim = 4;
        c.hidden_dim = 3;
        c.seed = 42;
        c
    }

    #[test]
    fn pe_first_row_alternates_zero_one() {
        let pe = positional_embedding(5, 6, 5, 1.0).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn pe_without_decay_matches_closed_form() {
        let (len, dim, base) = (7, 8, 12usize);
        let pe = positional_embedding(len, dim, base, 1.0).unwrap();
        for m in 0..len {
            for j in 0..dim / 2 {
                let angle = m as f64 / (base as f64).powf(2.0 * j as f64 / dim as f64);
                assert!((pe.get(m, 2 * j) - angle.sin()).abs() < 1e-12);
                assert!((pe.get(m, 2 * j + 1) - angle.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pe_decay_scales_rows_geometrically() {
        let raw = positional_embedding(4, 4, 4, 1.0).unwrap();
        let decayed = positional_embedding(4, 4, 4, 0.5).unwrap();
        let factors = [0.125, 0.25, 0.5, 1.0];
        for m in 0..4 {
            for j in 0..4 {
                assert!((decayed.get(m, j) - factors[m] * raw.get(m, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pe_rejects_odd_width_and_short_base() {
        assert!(matches!(positional_embedding(4, 5, 4, 1.0), Err(Error::Config(_))));
        assert!(matches!(positional_embedding(4, 4, 3, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn embed_zero_params_yield_zero_matrix() {
        let mut model = ForecastModel::init(small_config()).unwrap();
        model.params.embed_w.data.fill(0.0);
        model.params.embed_b.data.fill(0.0);
        let inputs = Mat::from_rows(vec![vec![1.0, -2.0]; 4]);
        let out = model.embed_window(&inputs).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn embed_unit_basis_reads_weight_columns() {
        let mut model = ForecastModel::init(small_config()).unwrap();
        model.params.embed_b.data.fill(0.0);
        let inputs = Mat::from_rows(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let out = model.embed_window(&inputs).unwrap();
        for j in 0..2 {
            let col: Vec<f64> = (0..4).map(|i| model.params.embed_w.get(i, j)).collect();
            assert_eq!(out.row(j), &col[..]);
        }
        // Identical days embed identically.
        assert_eq!(out.row(0), out.row(2));
        assert_eq!(out.row(1), out.row(3));
    }

    #[test]
    fn concat_shape_and_row_locality() {
        let x = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        let pe = Mat::from_rows(vec![vec![5.0, 6.0], vec![7.0, 8.0]]);
        let out = concat_embeddings(&x, &pe).unwrap();
        assert_eq!(out.cols, 4);
        assert_eq!(out.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(out.row(1), &[3.0, 4.0, 7.0, 8.0]);
        let zero = concat_embeddings(&Mat::zeros(2, 2), &Mat::zeros(2, 2)).unwrap();
        assert!(zero.data.iter().all(|&v| v == 0.0));
        assert!(concat_embeddings(&x, &Mat::zeros(3, 2)).is_err());
    }

    fn scalar_gru_params() -> ParamSet {
        let one = Mat { rows: 1, cols: 1, data: vec![1.0] };
        let zero = Mat { rows: 1, cols: 1, data: vec![0.0] };
        ParamSet {
            embed_w: zero.clone(),
            embed_b: zero.clone(),
            w_z: one.clone(),
            u_z: one.clone(),
            b_z: zero.clone(),
            w_r: one.clone(),
            u_r: one.clone(),
            b_r: zero.clone(),
            w_h: one.clone(),
            u_h: one.clone(),
            b_h: zero.clone(),
            attn_q: zero.clone(),
            attn_k: zero.clone(),
            attn_v: None,
            out_w: zero.clone(),
            out_b: zero.clone(),
            head_w: zero.clone(),
            head_b: zero,
        }
    }

    #[test]
    fn gru_zero_params_stay_at_zero() {
        let config = small_config();
        let mut model = ForecastModel::init(config).unwrap();
        for (_, t) in model.params.tensors_mut() {
            t.data.fill(0.0);
        }
        let x_bar = Mat::from_rows(vec![vec![0.3; 8]; 4]);
        let trace = gru_forward(&model.params, &x_bar).unwrap();
        assert!(trace.h.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_scalar_hand_computation() {
        let params = scalar_gru_params();
        let x_bar = Mat { rows: 1, cols: 1, data: vec![0.5] };
        let trace = gru_forward(&params, &x_bar).unwrap();
        let z = 1.0 / (1.0 + (-0.5f64).exp());
        let expected = z * 0.5f64.tanh();
        assert!((trace.final_state()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.2877).abs() < 1e-4);
    }

    #[test]
    fn gru_is_order_sensitive() {
        let config = small_config();
        let model = ForecastModel::init(config).unwrap();
        let a = Mat::from_rows(vec![vec![1.0; 8], vec![-1.0; 8], vec![0.5; 8], vec![0.0; 8]]);
        let b = Mat::from_rows(vec![vec![-1.0; 8], vec![1.0; 8], vec![0.5; 8], vec![0.0; 8]]);
        let ha = gru_forward(&model.params, &a).unwrap();
        let hb = gru_forward(&model.params, &b).unwrap();
        assert_ne!(ha.final_state(), hb.final_state());
    }

    #[test]
    fn gru_state_stays_bounded_by_one() {
        for seed in 0..5 {
            let mut config = small_config();
            config.seed = seed;
            let mut model = ForecastModel::init(config).unwrap();
            // Exaggerate the weights; the tanh candidate still bounds h.
            for (_, t) in model.params.tensors_mut() {
                for v in &mut t.data {
                    *v *= 20.0;
                }
            }
            let x_bar = Mat::from_rows(vec![vec![3.0; 8], vec![-2.0; 8], vec![5.0; 8], vec![1.0; 8]]);
            let trace = gru_forward(&model.params, &x_bar).unwrap();
            assert!(trace.h.data.iter().all(|&v| v.abs() <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn gru_reports_non_finite_input() {
        let params = scalar_gru_params();
        let x_bar = Mat { rows: 2, cols: 1, data: vec![0.5, f64::NAN] };
        match gru_forward(&params, &x_bar) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("step 1")),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn attention_zero_query_is_column_mean() {
        let y = Mat::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let zero = Mat::zeros(2, 2);
        let k_proj = Mat::from_rows(vec![vec![0.7, -0.2], vec![0.4, 0.9]]);
        let (_, _, attn, _, compressed) =
            attention_compress(&y, &zero, &k_proj, None, Compression::LastRow).unwrap();
        for t in 0..3 {
            let sum: f64 = attn.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(attn.row(t).iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-12));
        }
        assert!((compressed[0] - 3.0).abs() < 1e-12);
        assert!((compressed[1] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn attention_single_row_passes_through() {
        let y = Mat::from_rows(vec![vec![2.0, -1.0]]);
        let q = Mat::from_rows(vec![vec![0.3, 0.1], vec![-0.4, 0.8]]);
        let k = Mat::from_rows(vec![vec![0.5, 0.2], vec![0.6, -0.3]]);
        let (_, _, _, _, compressed) =
            attention_compress(&y, &q, &k, None, Compression::LastRow).unwrap();
        assert_eq!(compressed, vec![2.0, -1.0]);
    }

    #[test]
    fn attention_rows_sum_to_one_on_random_inputs() {
        let model = ForecastModel::init(small_config()).unwrap();
        let w = window(vec![0.3, 0.7, 0.1, 0.9, 0.5, 0.2, 0.8, 0.4], 2, 1);
        let cache = model.forward(&w).unwrap();
        for t in 0..4 {
            let sum: f64 = cache.attn.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut a = vec![0.3, -1.0, 2.5, 0.0];
        let mut b: Vec<f64> = a.iter().map(|v| v + 123.456).collect();
        softmax_row(&mut a).unwrap();
        softmax_row(&mut b).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn predict_zero_params_is_half() {
        let mut model = ForecastModel::init(small_config()).unwrap();
        for (_, t) in model.params.tensors_mut() {
            t.data.fill(0.0);
        }
        let w = window(vec![0.5; 8], 2, 0);
        assert_eq!(model.predict(&w).unwrap(), 0.5);
    }

    #[test]
    fn predict_saturates_and_is_monotone_in_head_bias() {
        let mut model = ForecastModel::init(small_config()).unwrap();
        let w = window(vec![0.5; 8], 2, 0);
        model.params.head_b.data[0] = 30.0;
        assert!(model.predict(&w).unwrap() > 0.999);

        let mut previous = 0.0;
        for bias in [-5.0, -1.0, 0.0, 1.0, 5.0] {
            model.params.head_b.data[0] = bias;
            let p = model.predict(&w).unwrap();
            assert!(p >= previous);
            previous = p;
        }
    }

    #[test]
    fn bce_hand_values() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(&[1], &[0.5]).unwrap() - ln2).abs() < 1e-12);
        assert!(bce_loss(&[1, 0], &[1.0, 0.0]).unwrap() < 1e-6);
        // Batch mean equals the mean of per-sample losses.
        let labels = [1u8, 0, 1];
        let probs = [0.9, 0.3, 0.6];
        let per_sample: f64 = labels
            .iter()
            .zip(&probs)
            .map(|(&y, &p)| bce_loss(&[y], &[p]).unwrap())
            .sum::<f64>()
            / 3.0;
        assert!((bce_loss(&labels, &probs).unwrap() - per_sample).abs() < 1e-12);
        assert!(bce_loss(&[1], &[0.5, 0.6]).is_err());
    }

    #[test]
    fn head_bias_gradient_is_mean_residual() {
        // Stationary case: zero parameters, balanced labels.
        let mut model = ForecastModel::init(small_config()).unwrap();
        for (_, t) in model.params.tensors_mut() {
            t.data.fill(0.0);
        }
        let windows = vec![
            window(vec![0.2; 8], 2, 1),
            window(vec![0.8; 8], 2, 0),
        ];
        let refs: Vec<&SupervisedWindow> = windows.iter().collect();
        let (_, grads) = model.batch_gradients(&refs).unwrap();
        assert!(grads.head_b.data[0].abs() < 1e-15);

        // General case: the head-bias gradient is mean(p - y).
        let model = ForecastModel::init(small_config()).unwrap();
        let (_, grads) = model.batch_gradients(&refs).unwrap();
        let expected: f64 = refs
            .iter()
            .map(|w| model.predict(w).unwrap() - w.label as f64)
            .sum::<f64>()
            / refs.len() as f64;
        assert!((grads.head_b.data[0] - expected).abs() < 1e-12);
    }

    fn toy_task(n: usize) -> Vec<SupervisedWindow> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let v = if label == 1 { 0.9 } else { 0.1 };
                window(vec![v; 8], 2, label)
            })
            .collect()
    }

    #[test]
    fn fit_learns_separable_toy_task() {
        let windows = toy_task(80);
        let mut config = small_config();
        config.batch_size = 16;
        config.max_epochs = 50;
        config.patience = 50;
        config.learning_rate = 0.01;
        let (model, _) = fit(&windows, &[], &config).unwrap();
        let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
        let probs: Vec<f64> = windows.iter().map(|w| model.predict(w).unwrap()).collect();
        let auc = rank_auc(&labels, &probs).unwrap();
        assert!(auc > 0.95, "training AUC {auc}");
    }

    #[test]
    fn fit_patience_zero_runs_one_epoch() {
        let windows = toy_task(20);
        let mut config = small_config();
        config.patience = 0;
        config.max_epochs = 50;
        let (_, trace) = fit(&windows, &windows, &config).unwrap();
        assert_eq!(trace.epochs_run, 1);
    }

    #[test]
    fn fit_is_deterministic() {
        let windows = toy_task(30);
        let mut config = small_config();
        config.max_epochs = 3;
        let (a, _) = fit(&windows, &windows, &config).unwrap();
        let (b, _) = fit(&windows, &windows, &config).unwrap();
        for ((_, ta), (_, tb)) in a.params.tensors().iter().zip(b.params.tensors()) {
            for (x, y) in ta.data.iter().zip(&tb.data) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn fit_rejects_empty_training_set() {
        assert!(matches!(
            fit(&[], &[], &small_config()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn full_batch_loss_decreases_over_first_five_steps() {
        for seed in 0..5 {
            let windows = toy_task(24);
            let mut config = small_config();
            config.seed = seed;
            config.batch_size = windows.len();
            config.max_epochs = 5;
            config.patience = 5;
            config.learning_rate = 1e-3;
            let (_, trace) = fit(&windows, &[], &config).unwrap();
            assert_eq!(trace.epoch_losses.len(), 5);
            for pair in trace.epoch_losses.windows(2) {
                assert!(pair[1] < pair[0], "seed {seed}: loss trace {:?}", trace.epoch_losses);
            }
        }
    }
}
