//! Factorized unmasking model.
//!
//! A two-hidden-layer MLP reads the task features concatenated with the sum
//! of token embeddings of the current noised sequence and emits one softmax
//! row per concept position over the concept vocabulary (masks are never
//! predicted). Rows for positions already unmasked are replaced by one-hot
//! carry-over rows whose gradient is exactly zero. Time is not an input: the
//! masking pattern itself carries the noise level.
//!
//! Gradients are hand-written. Callers build a per-row logit adjoint and the
//! model back-propagates it through the shared trunk in one pass, so a batch
//! of weighted log-probability terms at the same `(x, w_t)` costs one forward
//! and one backward regardless of how many sequences are weighted.

use std::io::{Read, Write};
use std::path::Path;

use crate::diffusion::MaskedSeq;
use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// Architecture sizes. `feat_dim` input features, `emb_dim` token embedding
/// width, `hidden` units in each of the two hidden layers, `seq_len`
/// concept positions, `vocab` concept values per position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelShape {
    pub feat_dim: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub vocab: u32,
}

impl ModelShape {
    pub fn validate(&self) -> Result<()> {
        if self.feat_dim == 0
            || self.emb_dim == 0
            || self.hidden == 0
            || self.seq_len == 0
            || self.vocab == 0
        {
            return Err(Error::domain(format!("degenerate model shape {self:?}")));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.feat_dim + self.emb_dim
    }

    pub fn logit_dim(&self) -> usize {
        self.seq_len * self.vocab as usize
    }

    /// Offsets of the parameter tensors inside the flat vector, in order:
    /// embeddings, first layer, second layer, output layer.
    fn spans(&self) -> [(usize, usize); 7] {
        let emb = (self.vocab as usize + 1) * self.emb_dim;
        let w1 = self.hidden * self.input_dim();
        let b1 = self.hidden;
        let w2 = self.hidden * self.hidden;
        let b2 = self.hidden;
        let w3 = self.logit_dim() * self.hidden;
        let b3 = self.logit_dim();
        let sizes = [emb, w1, b1, w2, b2, w3, b3];
        let mut spans = [(0, 0); 7];
        let mut off = 0;
        for (i, &sz) in sizes.iter().enumerate() {
            spans[i] = (off, sz);
            off += sz;
        }
        spans
    }

    pub fn n_params(&self) -> usize {
        self.spans().iter().map(|&(_, sz)| sz).sum()
    }
}

/// Flat parameter vector plus its shape.
#[derive(Clone, Debug)]
pub struct ModelParams {
    shape: ModelShape,
    data: Vec<f64>,
}

/// Gradient with the same layout as the parameters.
#[derive(Clone, Debug)]
pub struct GradientBundle {
    shape: ModelShape,
    data: Vec<f64>,
}

/// First and second Adam moments plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-position distributions over concept values at one `(x, w_t)`.
/// Masked positions hold the model's softmax row; unmasked positions hold
/// the one-hot carry-over row.
#[derive(Clone, Debug)]
pub struct UnmaskingDistribution {
    seq_len: usize,
    vocab: u32,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    masked: Vec<bool>,
}

impl UnmaskingDistribution {
    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn vocab(&self) -> u32 {
        self.vocab
    }

    pub fn is_masked_dim(&self, i: usize) -> bool {
        self.masked[i]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let v = self.vocab as usize;
        &self.probs[i * v..(i + 1) * v]
    }

    pub fn log_row(&self, i: usize) -> &[f64] {
        let v = self.vocab as usize;
        &self.log_probs[i * v..(i + 1) * v]
    }

    /// Probability of token `tok` (in `1..=vocab`) at position `i`.
    pub fn prob(&self, i: usize, tok: u32) -> f64 {
        assert!(tok >= 1 && tok <= self.vocab, "token {tok} out of range");
        self.row(i)[(tok - 1) as usize]
    }

    pub fn log_prob(&self, i: usize, tok: u32) -> f64 {
        assert!(tok >= 1 && tok <= self.vocab, "token {tok} out of range");
        self.log_row(i)[(tok - 1) as usize]
    }

    /// Sum of log-probabilities of `target`'s tokens over the positions that
    /// are masked here (carry-over positions contribute log 1 = 0).
    pub fn logprob_masked(&self, target: &MaskedSeq) -> Result<f64> {
        if target.len() != self.seq_len || target.vocab() != self.vocab {
            return Err(Error::shape("target shape differs from distribution"));
        }
        let mut total = 0.0;
        for i in 0..self.seq_len {
            if self.masked[i] {
                total += self.log_prob(i, target.tok(i));
            }
        }
        Ok(total)
    }

    /// Independent draw of every position, giving a complete sequence that
    /// extends the conditioning state (carry-over rows are one-hot).
    pub fn sample_completion(&self, rng: &mut RandomSource) -> MaskedSeq {
        let mut toks = Vec::with_capacity(self.seq_len);
        for i in 0..self.seq_len {
            let v = rng.categorical(self.row(i)) as u32 + 1;
            toks.push(v);
        }
        MaskedSeq::new(self.vocab, toks).expect("sampled tokens are in range")
    }
}

/// Activations retained for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    z: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    masked: Vec<bool>,
    toks: Vec<u32>,
}

fn matvec(out: &mut [f64], w: &[f64], x: &[f64], b: &[f64]) {
    let n_in = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * n_in..(r + 1) * n_in];
        let mut acc = b[r];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// out += w^T * d  (accumulate rows of `w` scaled by `d` entries).
fn matvec_transpose_acc(out: &mut [f64], w: &[f64], d: &[f64]) {
    let n_in = out.len();
    for (r, &dr) in d.iter().enumerate() {
        if dr == 0.0 {
            continue;
        }
        let row = &w[r * n_in..(r + 1) * n_in];
        for (o, wi) in out.iter_mut().zip(row) {
            *o += dr * wi;
        }
    }
}

/// grad_w += d (outer) x, grad_b += d.
fn outer_acc(grad_w: &mut [f64], grad_b: &mut [f64], d: &[f64], x: &[f64]) {
    let n_in = x.len();
    for (r, &dr) in d.iter().enumerate() {
        grad_b[r] += dr;
        if dr == 0.0 {
            continue;
        }
        let row = &mut grad_w[r * n_in..(r + 1) * n_in];
        for (g, xi) in row.iter_mut().zip(x) {
            *g += dr * xi;
        }
    }
}

/// Numerically safe softmax of `logits` into probabilities and
/// log-probabilities (max subtraction, then log-sum-exp).
fn softmax_row(logits: &[f64], probs: &mut [f64], log_probs: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (p, &l) in probs.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *p = e;
        total += e;
    }
    let log_total = total.ln();
    for ((p, lp), &l) in probs.iter_mut().zip(log_probs.iter_mut()).zip(logits) {
        *p /= total;
        *lp = (l - max) - log_total;
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"NSDFCKP1";

impl ModelParams {
    /// Seeded initialization: embeddings and hidden layers get small-variance
    /// normal weights (1/sqrt(fan-in) scale), the output layer starts at
    /// exactly zero so every predictive row is uniform.
    pub fn init(shape: ModelShape, rng: &mut RandomSource) -> Result<Self> {
        shape.validate()?;
        let mut data = vec![0.0; shape.n_params()];
        let spans = shape.spans();
        let emb_std = 0.1;
        let w1_std = 1.0 / (shape.input_dim() as f64).sqrt();
        let w2_std = 1.0 / (shape.hidden as f64).sqrt();
        for (which, std) in [(0usize, emb_std), (1, w1_std), (3, w2_std)] {
            let (off, sz) = spans[which];
            for slot in &mut data[off..off + sz] {
                *slot = std * rng.normal();
            }
        }
        Ok(ModelParams { shape, data })
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    /// Overwrites every tensor (output layer included) with `scale`-sized
    /// normal draws. Diagnostics and cross-checks use this to freeze a model
    /// whose predictive rows are non-uniform and state-dependent.
    pub fn randomize(&mut self, scale: f64, rng: &mut RandomSource) {
        for slot in &mut self.data {
            *slot = scale * rng.normal();
        }
    }

    pub fn n_params(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    fn span(&self, i: usize) -> &[f64] {
        let (off, sz) = self.shape.spans()[i];
        &self.data[off..off + sz]
    }

    pub fn embeddings(&self) -> &[f64] {
        self.span(0)
    }

    fn check_inputs(&self, x: &[f64], wt: &MaskedSeq) -> Result<()> {
        if x.len() != self.shape.feat_dim {
            return Err(Error::shape(format!(
                "{} features, model wants {}",
                x.len(),
                self.shape.feat_dim
            )));
        }
        if wt.len() != self.shape.seq_len || wt.vocab() != self.shape.vocab {
            return Err(Error::shape(format!(
                "sequence {}x{}, model wants {}x{}",
                wt.len(),
                wt.vocab(),
                self.shape.seq_len,
                self.shape.vocab
            )));
        }
        Ok(())
    }

    /// Forward pass retaining activations for a later backward pass.
    pub fn forward(&self, x: &[f64], wt: &MaskedSeq) -> Result<(UnmaskingDistribution, ForwardTrace)> {
        self.check_inputs(x, wt)?;
        let sh = &self.shape;
        let (emb, w1, b1, w2, b2, w3, b3) = (
            self.span(0),
            self.span(1),
            self.span(2),
            self.span(3),
            self.span(4),
            self.span(5),
            self.span(6),
        );

        let mut z = vec![0.0; sh.input_dim()];
        z[..sh.feat_dim].copy_from_slice(x);
        for i in 0..sh.seq_len {
            let tok = wt.tok(i) as usize;
            let row = &emb[tok * sh.emb_dim..(tok + 1) * sh.emb_dim];
            for (acc, e) in z[sh.feat_dim..].iter_mut().zip(row) {
                *acc += e;
            }
        }

        let mut h1 = vec![0.0; sh.hidden];
        matvec(&mut h1, w1, &z, b1);
        for h in &mut h1 {
            *h = h.tanh();
        }
        let mut h2 = vec![0.0; sh.hidden];
        matvec(&mut h2, w2, &h1, b2);
        for h in &mut h2 {
            *h = h.tanh();
        }
        let mut logits = vec![0.0; sh.logit_dim()];
        matvec(&mut logits, w3, &h2, b3);

        let v = sh.vocab as usize;
        let mut probs = vec![0.0; sh.logit_dim()];
        let mut log_probs = vec![0.0; sh.logit_dim()];
        let mut masked = vec![false; sh.seq_len];
        for i in 0..sh.seq_len {
            let span = i * v..(i + 1) * v;
            if wt.is_masked(i) {
                masked[i] = true;
                softmax_row(&logits[span.clone()], &mut probs[span.clone()], &mut log_probs[span]);
            } else {
                // Carry-over: the revealed token is certain.
                let tok = (wt.tok(i) - 1) as usize;
                for (k, (p, lp)) in probs[span.clone()]
                    .iter_mut()
                    .zip(log_probs[span].iter_mut())
                    .enumerate()
                {
                    *p = if k == tok { 1.0 } else { 0.0 };
                    *lp = if k == tok { 0.0 } else { f64::NEG_INFINITY };
                }
            }
        }

        let dist = UnmaskingDistribution {
            seq_len: sh.seq_len,
            vocab: sh.vocab,
            probs,
            log_probs,
            masked: masked.clone(),
        };
        let trace = ForwardTrace {
            z,
            h1,
            h2,
            masked,
            toks: wt.toks().to_vec(),
        };
        Ok((dist, trace))
    }

    /// Forward pass without trace.
    pub fn dist(&self, x: &[f64], wt: &MaskedSeq) -> Result<UnmaskingDistribution> {
        Ok(self.forward(x, wt)?.0)
    }

    /// Back-propagates a per-row logit adjoint. Rows for carry-over
    /// (unmasked) positions are forced to zero: their output is constant.
    pub fn backward_from_dlogits(&self, trace: &ForwardTrace, dlogits: &[f64]) -> GradientBundle {
        let sh = &self.shape;
        assert_eq!(dlogits.len(), sh.logit_dim(), "adjoint shape mismatch");
        let v = sh.vocab as usize;
        let mut dl = dlogits.to_vec();
        for i in 0..sh.seq_len {
            if !trace.masked[i] {
                for d in &mut dl[i * v..(i + 1) * v] {
                    *d = 0.0;
                }
            }
        }

        let mut grad = GradientBundle::zeros(*sh);
        let spans = sh.spans();
        let (w1s, w2s, w3s) = (spans[1], spans[3], spans[5]);
        // Split grad.data into tensor views by raw offsets.
        macro_rules! gspan {
            ($g:expr, $i:expr) => {{
                let (off, sz) = spans[$i];
                &mut $g[off..off + sz]
            }};
        }

        // Output layer.
        let mut dh2 = vec![0.0; sh.hidden];
        matvec_transpose_acc(&mut dh2, &self.data[w3s.0..w3s.0 + w3s.1], &dl);
        {
            let (gw3_off, _) = spans[5];
            let (gb3_off, gb3_sz) = spans[6];
            let (head, tail) = grad.data.split_at_mut(gb3_off);
            outer_acc(
                &mut head[gw3_off..],
                &mut tail[..gb3_sz],
                &dl,
                &trace.h2,
            );
        }

        // Second hidden layer (tanh).
        let mut da2 = dh2;
        for (d, h) in da2.iter_mut().zip(&trace.h2) {
            *d *= 1.0 - h * h;
        }
        let mut dh1 = vec![0.0; sh.hidden];
        matvec_transpose_acc(&mut dh1, &self.data[w2s.0..w2s.0 + w2s.1], &da2);
        {
            let (gw2_off, _) = spans[3];
            let (gb2_off, gb2_sz) = spans[4];
            let (head, tail) = grad.data.split_at_mut(gb2_off);
            outer_acc(&mut head[gw2_off..], &mut tail[..gb2_sz], &da2, &trace.h1);
        }

        // First hidden layer (tanh).
        let mut da1 = dh1;
        for (d, h) in da1.iter_mut().zip(&trace.h1) {
            *d *= 1.0 - h * h;
        }
        let mut dz = vec![0.0; sh.input_dim()];
        matvec_transpose_acc(&mut dz, &self.data[w1s.0..w1s.0 + w1s.1], &da1);
        {
            let (gw1_off, _) = spans[1];
            let (gb1_off, gb1_sz) = spans[2];
            let (head, tail) = grad.data.split_at_mut(gb1_off);
            outer_acc(&mut head[gw1_off..], &mut tail[..gb1_sz], &da1, &trace.z);
        }

        // Embedding rows: the embedding input is the sum over positions.
        {
            let gemb = gspan!(grad.data, 0);
            let dz_emb = &dz[sh.feat_dim..];
            for i in 0..sh.seq_len {
                let tok = trace.toks[i] as usize;
                let row = &mut gemb[tok * sh.emb_dim..(tok + 1) * sh.emb_dim];
                for (g, d) in row.iter_mut().zip(dz_emb) {
                    *g += d;
                }
            }
        }

        grad
    }

    /// Gradient of `sum_j coeff_j * sum_{i masked} log p_i(target_j[i])`
    /// at one `(x, w_t)`: one forward, one backward for the whole batch.
    pub fn backward_logprob_batch(
        &self,
        x: &[f64],
        wt: &MaskedSeq,
        targets: &[MaskedSeq],
        coeffs: &[f64],
    ) -> Result<GradientBundle> {
        if targets.len() != coeffs.len() {
            return Err(Error::shape(format!(
                "{} targets vs {} coefficients",
                targets.len(),
                coeffs.len()
            )));
        }
        let (dist, trace) = self.forward(x, wt)?;
        let sh = &self.shape;
        let v = sh.vocab as usize;
        let mut dlogits = vec![0.0; sh.logit_dim()];
        for (target, &coeff) in targets.iter().zip(coeffs) {
            if target.len() != sh.seq_len || target.vocab() != sh.vocab {
                return Err(Error::shape("target shape differs from model"));
            }
            if !target.extends(wt) {
                return Err(Error::domain(
                    "log-probability target must extend the conditioning state",
                ));
            }
            if coeff == 0.0 {
                continue;
            }
            for i in 0..sh.seq_len {
                if !dist.is_masked_dim(i) {
                    continue;
                }
                let row = dist.row(i);
                let tgt = (target.tok(i) - 1) as usize;
                let drow = &mut dlogits[i * v..(i + 1) * v];
                // d log softmax[tgt] / d logit = onehot(tgt) - p.
                for (k, d) in drow.iter_mut().enumerate() {
                    *d += coeff * (f64::from(k == tgt) - row[k]);
                }
            }
        }
        Ok(self.backward_from_dlogits(&trace, &dlogits))
    }

    /// Gradient of the masked-position log-probability of one target.
    pub fn backward_logprob(
        &self,
        x: &[f64],
        wt: &MaskedSeq,
        target: &MaskedSeq,
        coeff: f64,
    ) -> Result<GradientBundle> {
        self.backward_logprob_batch(x, wt, std::slice::from_ref(target), &[coeff])
    }

    /// Entropy `sum_{i masked} H(p_i)` and its gradient.
    pub fn backward_entropy(&self, x: &[f64], wt: &MaskedSeq) -> Result<(f64, GradientBundle)> {
        let (dist, trace) = self.forward(x, wt)?;
        let sh = &self.shape;
        let v = sh.vocab as usize;
        let mut entropy = 0.0;
        let mut dlogits = vec![0.0; sh.logit_dim()];
        for i in 0..sh.seq_len {
            if !dist.is_masked_dim(i) {
                continue;
            }
            let (row, log_row) = (dist.row(i), dist.log_row(i));
            let h: f64 = row
                .iter()
                .zip(log_row)
                .map(|(&p, &lp)| if p > 0.0 { -p * lp } else { 0.0 })
                .sum();
            entropy += h;
            let drow = &mut dlogits[i * v..(i + 1) * v];
            // dH/d logit_v = -p_v (log p_v + H).
            for ((d, &p), &lp) in drow.iter_mut().zip(row).zip(log_row) {
                *d = if p > 0.0 { -p * (lp + h) } else { 0.0 };
            }
        }
        Ok((entropy, self.backward_from_dlogits(&trace, &dlogits)))
    }

    /// Writes parameters (and optionally optimizer state) in the versioned
    /// binary layout: magic, shape table, little-endian doubles.
    pub fn save(&self, path: &Path, adam: Option<&AdamState>) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        for dim in [
            self.shape.feat_dim as u64,
            self.shape.emb_dim as u64,
            self.shape.hidden as u64,
            self.shape.seq_len as u64,
            self.shape.vocab as u64,
        ] {
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        buf.extend_from_slice(&(self.data.len() as u64).to_le_bytes());
        for &x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        match adam {
            None => buf.push(0),
            Some(state) => {
                if state.m.len() != self.data.len() {
                    return Err(Error::shape(
                        "optimizer state length differs from parameters",
                    ));
                }
                buf.push(1);
                buf.extend_from_slice(&state.step.to_le_bytes());
                for &x in state.m.iter().chain(&state.v) {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Reads a checkpoint written by `save`. Refuses on bad magic, shape
    /// mismatch, or truncation.
    pub fn load(path: &Path) -> Result<(ModelParams, Option<AdamState>)> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut off = 0usize;
        let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
            if *off + n > bytes.len() {
                return Err(Error::Checkpoint(format!(
                    "truncated at byte {} of {}",
                    *off,
                    bytes.len()
                )));
            }
            let s = &bytes[*off..*off + n];
            *off += n;
            Ok(s)
        };
        let magic = take(&mut off, 8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {:02x?}, want {:02x?}",
                magic, CHECKPOINT_MAGIC
            )));
        }
        let read_u64 = |off: &mut usize| -> Result<u64> {
            Ok(u64::from_le_bytes(take(off, 8)?.try_into().unwrap()))
        };
        let feat_dim = read_u64(&mut off)? as usize;
        let emb_dim = read_u64(&mut off)? as usize;
        let hidden = read_u64(&mut off)? as usize;
        let seq_len = read_u64(&mut off)? as usize;
        let vocab = read_u64(&mut off)? as u32;
        let shape = ModelShape {
            feat_dim,
            emb_dim,
            hidden,
            seq_len,
            vocab,
        };
        shape.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_u64(&mut off)? as usize;
        if count != shape.n_params() {
            return Err(Error::Checkpoint(format!(
                "{count} parameters stored, shape wants {}",
                shape.n_params()
            )));
        }
        let read_f64s = |off: &mut usize, n: usize| -> Result<Vec<f64>> {
            let raw = take(off, n * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let data = read_f64s(&mut off, count)?;
        let flag = take(&mut off, 1)?[0];
        let adam = match flag {
            0 => None,
            1 => {
                let step = u64::from_le_bytes(take(&mut off, 8)?.try_into().unwrap());
                let m = read_f64s(&mut off, count)?;
                let v = read_f64s(&mut off, count)?;
                Some(AdamState { step, m, v })
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "unknown optimizer-state flag {other}"
                )))
            }
        };
        if off != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - off
            )));
        }
        Ok((ModelParams { shape, data }, adam))
    }
}

impl GradientBundle {
    pub fn zeros(shape: ModelShape) -> Self {
        GradientBundle {
            shape,
            data: vec![0.0; shape.n_params()],
        }
    }

    pub fn shape(&self) -> ModelShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// self += scale * other.
    pub fn add_scaled(&mut self, other: &GradientBundle, scale: f64) {
        assert_eq!(self.shape, other.shape, "gradient shapes differ");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in &mut self.data {
            *a *= factor;
        }
    }

    pub fn dot(&self, other: &GradientBundle) -> f64 {
        assert_eq!(self.shape, other.shape, "gradient shapes differ");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

impl AdamState {
    pub fn new(shape: ModelShape) -> Self {
        let n = shape.n_params();
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` along the descent direction of `grad`.
pub fn adam_step(
    params: &mut ModelParams,
    state: &mut AdamState,
    cfg: &AdamConfig,
    grad: &GradientBundle,
) {
    assert_eq!(params.shape, grad.shape, "gradient shape differs from model");
    assert_eq!(params.data.len(), state.m.len(), "optimizer state shape differs");
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .data
        .iter_mut()
        .zip(&grad.data)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}
