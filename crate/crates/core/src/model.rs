//! Attention-based recurrent encoder-decoder.
//!
//! The encoder runs a forward and a backward GRU over source embeddings and
//! concatenates their states per position. The decoder is a GRU whose input is
//! the previous target embedding together with an attention context, and the
//! output distribution is a softmax over a projection of
//! `[s_i; c_i; embedding(y_{i-1})]`.
//!
//! Attention scores use the additive form `v_aᵀ tanh(W_a s_{i-1} + U_a h_j)`.
//! Backward passes are written per layer by hand; [`loss_and_grad`] runs the
//! full teacher-forced forward/backward for one sentence pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, sigmoid, softmax_unchecked, Tensor2, PROB_FLOOR};
use crate::subword::{TokenId, BOS_ID};

/// Range of the symmetric uniform initializer.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
}

impl ModelDims {
    /// Default desk-scale sizes: embed 64, hidden 128, attention = hidden.
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelDims {
            src_vocab,
            tgt_vocab,
            embed_dim: 64,
            hidden_dim: 128,
            attention_dim: 128,
        }
    }

    pub fn with_sizes(mut self, embed_dim: usize, hidden_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.hidden_dim = hidden_dim;
        self.attention_dim = hidden_dim;
        self
    }

    /// Width of one encoder state (forward and backward concatenated).
    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of the output layer input `[s; c; emb]`.
    pub fn readout_dim(&self) -> usize {
        self.hidden_dim + self.encoder_dim() + self.embed_dim
    }
}

/// Weights of one GRU: update gate `z`, reset gate `r`, candidate `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights {
    pub w_z: Tensor2,
    pub u_z: Tensor2,
    pub b_z: Tensor2,
    pub w_r: Tensor2,
    pub u_r: Tensor2,
    pub b_r: Tensor2,
    pub w_h: Tensor2,
    pub u_h: Tensor2,
    pub b_h: Tensor2,
}

impl GruWeights {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor2::zeros(hidden_dim, input_dim);
        let u = || Tensor2::zeros(hidden_dim, hidden_dim);
        let b = || Tensor2::zeros(hidden_dim, 1);
        GruWeights {
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    fn tensors(&self) -> [(&'static str, &Tensor2); 9] {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor2; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }
}

/// All trainable parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub src_embed: Tensor2,
    pub tgt_embed: Tensor2,
    pub enc_fwd: GruWeights,
    pub enc_bwd: GruWeights,
    pub dec: GruWeights,
    /// Attention projection of the previous decoder state.
    pub att_w: Tensor2,
    /// Attention projection of encoder states.
    pub att_u: Tensor2,
    pub att_v: Tensor2,
    /// Maps the first backward encoder state to `s_0`.
    pub init_w: Tensor2,
    pub out_w: Tensor2,
    pub out_b: Tensor2,
}

/// Per-parameter gradients; same layout as [`ModelParams`].
pub type Gradients = ModelParams;

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Self {
        let ModelDims {
            src_vocab,
            tgt_vocab,
            embed_dim: e,
            hidden_dim: h,
            attention_dim: a,
        } = dims;
        ModelParams {
            dims,
            src_embed: Tensor2::zeros(src_vocab, e),
            tgt_embed: Tensor2::zeros(tgt_vocab, e),
            enc_fwd: GruWeights::zeros(e, h),
            enc_bwd: GruWeights::zeros(e, h),
            dec: GruWeights::zeros(e + 2 * h, h),
            att_w: Tensor2::zeros(a, h),
            att_u: Tensor2::zeros(a, 2 * h),
            att_v: Tensor2::zeros(a, 1),
            init_w: Tensor2::zeros(h, h),
            out_w: Tensor2::zeros(tgt_vocab, dims.readout_dim()),
            out_b: Tensor2::zeros(tgt_vocab, 1),
        }
    }

    /// Uniform initialization in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        Self::init_scaled(dims, seed, INIT_SCALE)
    }

    pub fn init_scaled(dims: ModelDims, seed: u64, scale: f64) -> Self {
        let mut params = Self::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in params.tensors_mut() {
            for v in t.as_mut_slice() {
                *v = rng.gen_range(-scale..=scale);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims)
    }

    /// Named tensors in the fixed serialization order.
    pub fn tensors(&self) -> Vec<(String, &Tensor2)> {
        let mut out: Vec<(String, &Tensor2)> = vec![
            ("src_embed".into(), &self.src_embed),
            ("tgt_embed".into(), &self.tgt_embed),
        ];
        for (prefix, gru) in [
            ("enc_fwd", &self.enc_fwd),
            ("enc_bwd", &self.enc_bwd),
            ("dec", &self.dec),
        ] {
            for (name, t) in gru.tensors() {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out.extend([
            ("att_w".to_string(), &self.att_w),
            ("att_u".to_string(), &self.att_u),
            ("att_v".to_string(), &self.att_v),
            ("init_w".to_string(), &self.init_w),
            ("out_w".to_string(), &self.out_w),
            ("out_b".to_string(), &self.out_b),
        ]);
        out
    }

    /// Mutable tensors, same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = vec![&mut self.src_embed, &mut self.tgt_embed];
        out.extend(self.enc_fwd.tensors_mut());
        out.extend(self.enc_bwd.tensors_mut());
        out.extend(self.dec.tensors_mut());
        out.extend([
            &mut self.att_w,
            &mut self.att_u,
            &mut self.att_v,
            &mut self.init_w,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.num_params());
        for (_, t) in self.tensors() {
            flat.extend_from_slice(t.as_slice());
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.fill(v);
        }
    }

    /// Expected `(name, rows, cols)` table for these dimensions.
    pub fn shape_table(dims: ModelDims) -> Vec<(String, usize, usize)> {
        Self::zeros(dims)
            .tensors()
            .into_iter()
            .map(|(n, t)| (n, t.rows(), t.cols()))
            .collect()
    }

    /// Checks every tensor against the shapes implied by `dims`.
    pub fn validate(&self) -> Result<()> {
        for ((name, t), (_, rows, cols)) in self.tensors().iter().zip(Self::shape_table(self.dims)) {
            if t.shape() != (rows, cols) {
                return Err(Error::Shape(format!(
                    "{name} is {:?}, expected ({rows}, {cols})",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::Numeric(format!("{name} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn sq_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, t)| t.as_slice().iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.as_mut_slice().iter_mut().for_each(|v| *v *= factor);
        }
    }
}

// ---------------------------------------------------------------------------
// GRU

#[derive(Debug, Clone)]
struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    cand: Vec<f64>,
    rh: Vec<f64>,
    h: Vec<f64>,
}

fn gru_forward(prev: &[f64], x: &[f64], w: &GruWeights) -> GruCache {
    let n = prev.len();
    let mut z = w.b_z.as_slice().to_vec();
    w.w_z.matvec_acc(x, &mut z);
    w.u_z.matvec_acc(prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = w.b_r.as_slice().to_vec();
    w.w_r.matvec_acc(x, &mut r);
    w.u_r.matvec_acc(prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let rh: Vec<f64> = r.iter().zip(prev).map(|(a, b)| a * b).collect();
    let mut cand = w.b_h.as_slice().to_vec();
    w.w_h.matvec_acc(x, &mut cand);
    w.u_h.matvec_acc(&rh, &mut cand);
    cand.iter_mut().for_each(|v| *v = v.tanh());

    let h = (0..n)
        .map(|k| (1.0 - z[k]) * prev[k] + z[k] * cand[k])
        .collect();
    GruCache {
        x: x.to_vec(),
        h_prev: prev.to_vec(),
        z,
        r,
        cand,
        rh,
        h,
    }
}

/// Accumulates weight gradients into `g`, input gradient into `dx` and
/// previous-state gradient into `dh_prev`.
fn gru_backward(
    c: &GruCache,
    dh: &[f64],
    w: &GruWeights,
    g: &mut GruWeights,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let n = dh.len();
    let mut da_z = vec![0.0; n];
    let mut da_h = vec![0.0; n];
    for k in 0..n {
        dh_prev[k] += dh[k] * (1.0 - c.z[k]);
        let dz = dh[k] * (c.cand[k] - c.h_prev[k]);
        da_z[k] = dz * c.z[k] * (1.0 - c.z[k]);
        let dcand = dh[k] * c.z[k];
        da_h[k] = dcand * (1.0 - c.cand[k] * c.cand[k]);
    }

    g.w_h.add_outer(&da_h, &c.x);
    g.u_h.add_outer(&da_h, &c.rh);
    g.b_h.add_slice(&da_h);
    w.w_h.matvec_t_acc(&da_h, dx);
    let mut drh = vec![0.0; n];
    w.u_h.matvec_t_acc(&da_h, &mut drh);

    let mut da_r = vec![0.0; n];
    for k in 0..n {
        dh_prev[k] += drh[k] * c.r[k];
        let dr = drh[k] * c.h_prev[k];
        da_r[k] = dr * c.r[k] * (1.0 - c.r[k]);
    }

    g.w_z.add_outer(&da_z, &c.x);
    g.u_z.add_outer(&da_z, &c.h_prev);
    g.b_z.add_slice(&da_z);
    w.w_z.matvec_t_acc(&da_z, dx);
    w.u_z.matvec_t_acc(&da_z, dh_prev);

    g.w_r.add_outer(&da_r, &c.x);
    g.u_r.add_outer(&da_r, &c.h_prev);
    g.b_r.add_slice(&da_r);
    w.w_r.matvec_t_acc(&da_r, dx);
    w.u_r.matvec_t_acc(&da_r, dh_prev);
}

/// One GRU transition: `h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)`.
pub fn gru_step(prev_state: &[f64], input: &[f64], weights: &GruWeights) -> Result<Vec<f64>> {
    if prev_state.len() != weights.hidden_dim() || input.len() != weights.input_dim() {
        return Err(Error::Shape(format!(
            "GRU expects state {} and input {}, got {} and {}",
            weights.hidden_dim(),
            weights.input_dim(),
            prev_state.len(),
            input.len()
        )));
    }
    Ok(gru_forward(prev_state, input, weights).h)
}

/// Gradient of `Σ_k dh[k] * h'[k]` with respect to the GRU weights, the input
/// and the previous state. Returned as `(weight grads, d input, d prev)`.
pub fn gru_step_backward(
    prev_state: &[f64],
    input: &[f64],
    weights: &GruWeights,
    dh: &[f64],
) -> Result<(GruWeights, Vec<f64>, Vec<f64>)> {
    gru_step(prev_state, input, weights)?;
    let cache = gru_forward(prev_state, input, weights);
    let mut g = GruWeights::zeros(weights.input_dim(), weights.hidden_dim());
    let mut dx = vec![0.0; input.len()];
    let mut dprev = vec![0.0; prev_state.len()];
    gru_backward(&cache, dh, weights, &mut g, &mut dx, &mut dprev);
    Ok((g, dx, dprev))
}

// ---------------------------------------------------------------------------
// Encoder

/// Encoder output: one `2 * hidden_dim` vector per source position, forward
/// state first, plus the attention keys `U_a h_j` derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    states: Vec<Vec<f64>>,
    keys: Vec<Vec<f64>>,
}

impl EncoderStates {
    /// Builds encoder states from raw vectors (for example to probe attention
    /// directly). Each vector must have length `2 * hidden_dim`.
    pub fn from_states(states: Vec<Vec<f64>>, params: &ModelParams) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Input("encoder states must be non-empty".into()));
        }
        let width = params.dims.encoder_dim();
        if let Some(bad) = states.iter().find(|s| s.len() != width) {
            return Err(Error::Shape(format!(
                "encoder state of width {}, expected {width}",
                bad.len()
            )));
        }
        let keys = states.iter().map(|h| params.att_u.matvec(h)).collect();
        Ok(EncoderStates { states, keys })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    /// Backward-direction half of the state at position `j`.
    pub fn backward_half(&self, j: usize) -> &[f64] {
        let h = self.dim() / 2;
        &self.states[j][h..]
    }

    pub fn forward_half(&self, j: usize) -> &[f64] {
        let h = self.dim() / 2;
        &self.states[j][..h]
    }
}

struct EncoderCache {
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
}

fn check_ids(ids: &[TokenId], vocab: usize, side: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Input(format!("empty {side} sequence")));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= vocab) {
        return Err(Error::Index(format!(
            "{side} id {bad} outside vocabulary of size {vocab}"
        )));
    }
    Ok(())
}

fn encode_cached(src: &[TokenId], params: &ModelParams) -> (EncoderStates, EncoderCache) {
    let h = params.dims.hidden_dim;
    let len = src.len();
    let mut fwd = Vec::with_capacity(len);
    let mut state = vec![0.0; h];
    for &id in src {
        let c = gru_forward(&state, params.src_embed.row(id as usize), &params.enc_fwd);
        state.clone_from(&c.h);
        fwd.push(c);
    }
    let mut bwd: Vec<GruCache> = Vec::with_capacity(len);
    let mut state = vec![0.0; h];
    for &id in src.iter().rev() {
        let c = gru_forward(&state, params.src_embed.row(id as usize), &params.enc_bwd);
        state.clone_from(&c.h);
        bwd.push(c);
    }
    bwd.reverse();
    let states: Vec<Vec<f64>> = (0..len)
        .map(|j| {
            let mut v = fwd[j].h.clone();
            v.extend_from_slice(&bwd[j].h);
            v
        })
        .collect();
    let keys = states.iter().map(|s| params.att_u.matvec(s)).collect();
    (EncoderStates { states, keys }, EncoderCache { fwd, bwd })
}

/// Bidirectional encoding from zero initial states.
pub fn encode(src: &[TokenId], params: &ModelParams) -> Result<EncoderStates> {
    check_ids(src, params.dims.src_vocab, "source")?;
    Ok(encode_cached(src, params).0)
}

// ---------------------------------------------------------------------------
// Attention and decoder

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f64>,
    pub last_token: TokenId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionResult {
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
}

struct AttentionCache {
    /// `tanh(W_a s + U_a h_j)` per position.
    act: Vec<Vec<f64>>,
    result: AttentionResult,
}

fn attend_cached(s_prev: &[f64], enc: &EncoderStates, params: &ModelParams) -> AttentionCache {
    let ws = params.att_w.matvec(s_prev);
    let v = params.att_v.as_slice();
    let mut act = Vec::with_capacity(enc.len());
    let mut scores = Vec::with_capacity(enc.len());
    for key in &enc.keys {
        let t: Vec<f64> = ws.iter().zip(key).map(|(a, b)| (a + b).tanh()).collect();
        scores.push(dot(v, &t));
        act.push(t);
    }
    let alpha = softmax_unchecked(&scores);
    let mut context = vec![0.0; enc.dim()];
    for (a, h) in alpha.iter().zip(&enc.states) {
        for (c, x) in context.iter_mut().zip(h) {
            *c += a * x;
        }
    }
    AttentionCache {
        act,
        result: AttentionResult { alpha, context },
    }
}

fn check_state(state: &DecoderState, enc: &EncoderStates, params: &ModelParams) -> Result<()> {
    if state.s.len() != params.dims.hidden_dim {
        return Err(Error::Shape(format!(
            "decoder state of width {}, expected {}",
            state.s.len(),
            params.dims.hidden_dim
        )));
    }
    if enc.is_empty() || enc.dim() != params.dims.encoder_dim() {
        return Err(Error::Shape("encoder states do not match the model".into()));
    }
    if state.last_token as usize >= params.dims.tgt_vocab {
        return Err(Error::Index(format!(
            "target id {} outside vocabulary of size {}",
            state.last_token, params.dims.tgt_vocab
        )));
    }
    Ok(())
}

/// Attention weights and context for the previous decoder state.
pub fn attend(s_prev: &DecoderState, h: &EncoderStates, params: &ModelParams) -> Result<AttentionResult> {
    check_state(s_prev, h, params)?;
    Ok(attend_cached(&s_prev.s, h, params).result)
}

/// `s_0 = tanh(W_init · h←_1)`, previous token BOS.
pub fn init_decoder(h: &EncoderStates, params: &ModelParams) -> Result<DecoderState> {
    if h.is_empty() || h.dim() != params.dims.encoder_dim() {
        return Err(Error::Shape("encoder states do not match the model".into()));
    }
    let mut s = params.init_w.matvec(h.backward_half(0));
    s.iter_mut().for_each(|v| *v = v.tanh());
    Ok(DecoderState {
        s,
        last_token: BOS_ID,
    })
}

struct StepCache {
    attention: AttentionCache,
    gru: GruCache,
    readout: Vec<f64>,
    probs: Vec<f64>,
}

fn decoder_step_cached(state: &DecoderState, enc: &EncoderStates, params: &ModelParams) -> StepCache {
    let attention = attend_cached(&state.s, enc, params);
    let emb = params.tgt_embed.row(state.last_token as usize);
    let mut input = emb.to_vec();
    input.extend_from_slice(&attention.result.context);
    let gru = gru_forward(&state.s, &input, &params.dec);

    let mut readout = gru.h.clone();
    readout.extend_from_slice(&attention.result.context);
    readout.extend_from_slice(emb);
    let mut logits = params.out_b.as_slice().to_vec();
    params.out_w.matvec_acc(&readout, &mut logits);
    let probs = softmax_unchecked(&logits);
    StepCache {
        attention,
        gru,
        readout,
        probs,
    }
}

/// Advances the decoder one step. The returned state still carries the
/// previous token; callers set `last_token` to the token they choose.
pub fn decoder_step(
    state: &DecoderState,
    h: &EncoderStates,
    params: &ModelParams,
) -> Result<(DecoderState, Vec<f64>)> {
    check_state(state, h, params)?;
    let cache = decoder_step_cached(state, h, params);
    if cache.probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("output distribution is not finite".into()));
    }
    Ok((
        DecoderState {
            s: cache.gru.h,
            last_token: state.last_token,
        },
        cache.probs,
    ))
}

/// `ln max(p, PROB_FLOOR)`; the one log used for scoring everywhere.
pub fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

/// Teacher-forced `log p(tgt | src)`, summed over steps.
pub fn sequence_logprob(src: &[TokenId], tgt: &[TokenId], params: &ModelParams) -> Result<f64> {
    check_ids(src, params.dims.src_vocab, "source")?;
    check_ids(tgt, params.dims.tgt_vocab, "target")?;
    let enc = encode(src, params)?;
    let mut state = init_decoder(&enc, params)?;
    let mut total = 0.0;
    for &y in tgt {
        let (next, probs) = decoder_step(&state, &enc, params)?;
        total += floored_ln(probs[y as usize]);
        state = DecoderState {
            s: next.s,
            last_token: y,
        };
    }
    Ok(total)
}

/// Per-pair teacher-forced statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForcedStats {
    /// Summed negative log-likelihood.
    pub nll: f64,
    pub tokens: usize,
    /// Steps whose argmax equals the reference token.
    pub correct: usize,
}

impl ForcedStats {
    pub fn merge(&mut self, other: ForcedStats) {
        self.nll += other.nll;
        self.tokens += other.tokens;
        self.correct += other.correct;
    }

    pub fn mean_nll(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.nll / self.tokens as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.correct as f64 / self.tokens as f64
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn forced_stats(src: &[TokenId], tgt: &[TokenId], params: &ModelParams) -> Result<ForcedStats> {
    check_ids(src, params.dims.src_vocab, "source")?;
    check_ids(tgt, params.dims.tgt_vocab, "target")?;
    let enc = encode(src, params)?;
    let mut state = init_decoder(&enc, params)?;
    let mut stats = ForcedStats::default();
    for &y in tgt {
        let cache = decoder_step_cached(&state, &enc, params);
        stats.nll -= floored_ln(cache.probs[y as usize]);
        stats.tokens += 1;
        if argmax(&cache.probs) == y as usize {
            stats.correct += 1;
        }
        state = DecoderState {
            s: cache.gru.h,
            last_token: y,
        };
    }
    Ok(stats)
}

/// Teacher-forced negative log-likelihood of one pair and its gradient.
///
/// The gradient of the summed NLL is added into `grads`; the NLL is returned.
pub fn loss_and_grad(
    src: &[TokenId],
    tgt: &[TokenId],
    params: &ModelParams,
    grads: &mut Gradients,
) -> Result<f64> {
    check_ids(src, params.dims.src_vocab, "source")?;
    check_ids(tgt, params.dims.tgt_vocab, "target")?;
    if grads.dims != params.dims {
        return Err(Error::Shape("gradient buffer has different dimensions".into()));
    }
    let dims = params.dims;
    let (hd, ed) = (dims.hidden_dim, dims.embed_dim);
    let (enc, enc_cache) = encode_cached(src, params);

    // Forward.
    let mut s0 = params.init_w.matvec(enc.backward_half(0));
    s0.iter_mut().for_each(|v| *v = v.tanh());
    let mut state = DecoderState {
        s: s0.clone(),
        last_token: BOS_ID,
    };
    let mut steps = Vec::with_capacity(tgt.len());
    let mut loss = 0.0;
    for &y in tgt {
        let cache = decoder_step_cached(&state, &enc, params);
        loss -= floored_ln(cache.probs[y as usize]);
        state = DecoderState {
            s: cache.gru.h.clone(),
            last_token: y,
        };
        steps.push(cache);
    }

    // Backward through the decoder.
    let len = enc.len();
    let mut d_enc: Vec<Vec<f64>> = vec![vec![0.0; 2 * hd]; len];
    let mut d_keys: Vec<Vec<f64>> = vec![vec![0.0; dims.attention_dim]; len];
    let mut carry = vec![0.0; hd];
    let v = params.att_v.as_slice();
    for (i, step) in steps.iter().enumerate().rev() {
        let prev_token = if i == 0 { BOS_ID } else { tgt[i - 1] } as usize;
        let mut dlogits = step.probs.clone();
        dlogits[tgt[i] as usize] -= 1.0;
        grads.out_w.add_outer(&dlogits, &step.readout);
        grads.out_b.add_slice(&dlogits);
        let mut dreadout = vec![0.0; dims.readout_dim()];
        params.out_w.matvec_t_acc(&dlogits, &mut dreadout);

        let mut ds = carry;
        for (a, b) in ds.iter_mut().zip(&dreadout[..hd]) {
            *a += b;
        }
        let mut dctx = dreadout[hd..3 * hd].to_vec();
        let mut demb = dreadout[3 * hd..].to_vec();

        let mut dx = vec![0.0; ed + 2 * hd];
        let mut ds_prev = vec![0.0; hd];
        gru_backward(&step.gru, &ds, &params.dec, &mut grads.dec, &mut dx, &mut ds_prev);
        for (a, b) in demb.iter_mut().zip(&dx[..ed]) {
            *a += b;
        }
        for (a, b) in dctx.iter_mut().zip(&dx[ed..]) {
            *a += b;
        }
        for (g, d) in grads.tgt_embed.row_mut(prev_token).iter_mut().zip(&demb) {
            *g += d;
        }

        // Attention.
        let alpha = &step.attention.result.alpha;
        let dalpha: Vec<f64> = enc.states.iter().map(|h| dot(&dctx, h)).collect();
        let weighted = dot(alpha, &dalpha);
        let mut dws = vec![0.0; dims.attention_dim];
        for j in 0..len {
            for (g, c) in d_enc[j].iter_mut().zip(&dctx) {
                *g += alpha[j] * c;
            }
            let de = alpha[j] * (dalpha[j] - weighted);
            if de == 0.0 {
                continue;
            }
            let act = &step.attention.act[j];
            for (k, t) in act.iter().enumerate() {
                grads.att_v.as_mut_slice()[k] += de * t;
                let da = de * v[k] * (1.0 - t * t);
                dws[k] += da;
                d_keys[j][k] += da;
            }
        }
        let s_prev = &step.gru.h_prev;
        grads.att_w.add_outer(&dws, s_prev);
        params.att_w.matvec_t_acc(&dws, &mut ds_prev);
        carry = ds_prev;
    }

    // Decoder initialization.
    let da0: Vec<f64> = carry.iter().zip(&s0).map(|(d, s)| d * (1.0 - s * s)).collect();
    grads.init_w.add_outer(&da0, enc.backward_half(0));
    let mut d_first_bwd = vec![0.0; hd];
    params.init_w.matvec_t_acc(&da0, &mut d_first_bwd);
    for (g, d) in d_enc[0][hd..].iter_mut().zip(&d_first_bwd) {
        *g += d;
    }

    // Attention keys.
    for j in 0..len {
        grads.att_u.add_outer(&d_keys[j], &enc.states[j]);
        params.att_u.matvec_t_acc(&d_keys[j], &mut d_enc[j]);
    }

    // Encoder: forward direction runs right to left in backprop.
    let mut carry = vec![0.0; hd];
    for j in (0..len).rev() {
        let dh: Vec<f64> = carry.iter().zip(&d_enc[j][..hd]).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; ed];
        let mut dprev = vec![0.0; hd];
        gru_backward(&enc_cache.fwd[j], &dh, &params.enc_fwd, &mut grads.enc_fwd, &mut dx, &mut dprev);
        for (g, d) in grads.src_embed.row_mut(src[j] as usize).iter_mut().zip(&dx) {
            *g += d;
        }
        carry = dprev;
    }
    let mut carry = vec![0.0; hd];
    for j in 0..len {
        let dh: Vec<f64> = carry.iter().zip(&d_enc[j][hd..]).map(|(a, b)| a + b).collect();
        let mut dx = vec![0.0; ed];
        let mut dprev = vec![0.0; hd];
        gru_backward(&enc_cache.bwd[j], &dh, &params.enc_bwd, &mut grads.enc_bwd, &mut dx, &mut dprev);
        for (g, d) in grads.src_embed.row_mut(src[j] as usize).iter_mut().zip(&dx) {
            *g += d;
        }
        carry = dprev;
    }

    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            src_vocab: 7,
            tgt_vocab: 6,
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 3,
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    }

    #[test]
    fn gru_zero_weights_keep_zero_state() {
        let w = GruWeights::zeros(3, 4);
        let out = gru_step(&[0.0; 4], &[0.5, -1.0, 2.0], &w).unwrap();
        assert_eq!(out, vec![0.0; 4]);
        let out = gru_step(&[0.4, -0.2, 0.0, 1.0], &[1.0, 1.0, 1.0], &w).unwrap();
        assert_eq!(out, vec![0.2, -0.1, 0.0, 0.5]);
    }

    #[test]
    fn gru_shape_mismatch() {
        let w = GruWeights::zeros(3, 4);
        assert!(matches!(gru_step(&[0.0; 3], &[0.0; 3], &w), Err(Error::Shape(_))));
        assert!(matches!(gru_step(&[0.0; 4], &[0.0; 2], &w), Err(Error::Shape(_))));
    }

    #[test]
    fn gru_output_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = ModelParams::init_scaled(small_dims(), 3, 2.0);
        for _ in 0..1000 {
            let prev = random_vec(&mut rng, 4, -0.999, 0.999);
            let x = random_vec(&mut rng, 3, -5.0, 5.0);
            let h = gru_step(&prev, &x, &params.enc_fwd).unwrap();
            assert!(h.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn gru_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = ModelParams::init_scaled(small_dims(), 5, 0.7);
        let w = params.enc_fwd.clone();
        let prev = random_vec(&mut rng, 4, -0.9, 0.9);
        let x = random_vec(&mut rng, 3, -1.0, 1.0);
        let dh = random_vec(&mut rng, 4, -1.0, 1.0);
        let (g, dx, dprev) = gru_step_backward(&prev, &x, &w, &dh).unwrap();

        // Pack (weights, x, prev) into one parameter vector.
        let mut flat: Vec<f64> = w.tensors().iter().flat_map(|(_, t)| t.as_slice().to_vec()).collect();
        let nw = flat.len();
        flat.extend(&x);
        flat.extend(&prev);
        let mut analytic: Vec<f64> = g.tensors().iter().flat_map(|(_, t)| t.as_slice().to_vec()).collect();
        analytic.extend(&dx);
        analytic.extend(&dprev);

        let objective = |theta: &[f64]| {
            let mut w2 = w.clone();
            let mut off = 0;
            for t in w2.tensors_mut() {
                let n = t.len();
                t.as_mut_slice().copy_from_slice(&theta[off..off + n]);
                off += n;
            }
            let h = gru_step(&theta[nw + 3..], &theta[nw..nw + 3], &w2).unwrap();
            dot(&h, &dh)
        };
        let report = grad_check(objective, &flat, &analytic, 1e-6).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn encode_length_one_matches_direct_step() {
        let params = ModelParams::init_scaled(small_dims(), 1, 0.5);
        let enc = encode(&[4], &params).unwrap();
        let zero = vec![0.0; 4];
        let f = gru_step(&zero, params.src_embed.row(4), &params.enc_fwd).unwrap();
        let b = gru_step(&zero, params.src_embed.row(4), &params.enc_bwd).unwrap();
        assert_eq!(enc.forward_half(0), &f[..]);
        assert_eq!(enc.backward_half(0), &b[..]);
        assert_eq!(enc.dim(), 8);
    }

    #[test]
    fn backward_states_equal_forward_pass_over_reversed_input() {
        let params = ModelParams::init_scaled(small_dims(), 2, 0.5);
        let src = [4, 5, 6, 0, 3];
        let enc = encode(&src, &params).unwrap();
        let mut swapped = params.clone();
        std::mem::swap(&mut swapped.enc_fwd, &mut swapped.enc_bwd);
        let reversed: Vec<TokenId> = src.iter().rev().copied().collect();
        let enc_rev = encode(&reversed, &swapped).unwrap();
        for j in 0..src.len() {
            assert_eq!(enc.backward_half(j), enc_rev.forward_half(src.len() - 1 - j));
        }
    }

    #[test]
    fn encode_errors_and_lengths() {
        let params = ModelParams::init(small_dims(), 1);
        assert!(matches!(encode(&[], &params), Err(Error::Input(_))));
        assert!(matches!(encode(&[7], &params), Err(Error::Index(_))));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in 1..=50 {
            let src: Vec<TokenId> = (0..len).map(|_| rng.gen_range(0..7)).collect();
            let enc = encode(&src, &params).unwrap();
            assert_eq!(enc.len(), len);
            assert!(enc.states().iter().all(|s| s.len() == 8));
        }
    }

    #[test]
    fn attention_single_position_and_uniform() {
        let params = ModelParams::init_scaled(small_dims(), 4, 0.5);
        let state = DecoderState {
            s: vec![0.1, -0.2, 0.3, 0.0],
            last_token: BOS_ID,
        };
        let h1 = vec![0.5, -0.1, 0.2, 0.3, 0.9, -0.7, 0.0, 0.1];
        let enc = EncoderStates::from_states(vec![h1.clone()], &params).unwrap();
        let att = attend(&state, &enc, &params).unwrap();
        assert_eq!(att.alpha, vec![1.0]);
        assert_eq!(att.context, h1);

        let enc = EncoderStates::from_states(vec![h1.clone(); 5], &params).unwrap();
        let att = attend(&state, &enc, &params).unwrap();
        for a in att.alpha {
            assert!((a - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_sums_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = ModelParams::init_scaled(small_dims(), 6, 1.5);
        for _ in 0..1000 {
            let j = rng.gen_range(1..12);
            let states = (0..j).map(|_| random_vec(&mut rng, 8, -1.0, 1.0)).collect();
            let enc = EncoderStates::from_states(states, &params).unwrap();
            let state = DecoderState {
                s: random_vec(&mut rng, 4, -1.0, 1.0),
                last_token: 0,
            };
            let att = attend(&state, &enc, &params).unwrap();
            assert!((att.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(att.alpha.iter().all(|a| *a >= 0.0));
        }
    }

    #[test]
    fn init_decoder_cases() {
        let mut params = ModelParams::init(small_dims(), 9);
        let enc = encode(&[1, 2, 3], &params).unwrap();
        let a = init_decoder(&enc, &params).unwrap();
        assert_eq!(a, init_decoder(&enc, &params).unwrap());
        assert_eq!(a.last_token, BOS_ID);
        params.init_w.fill(0.0);
        assert_eq!(init_decoder(&enc, &params).unwrap().s, vec![0.0; 4]);
    }

    #[test]
    fn decoder_step_distribution() {
        let mut params = ModelParams::init(small_dims(), 10);
        let enc = encode(&[1, 2, 3], &params).unwrap();
        let state = init_decoder(&enc, &params).unwrap();
        let (_, probs) = decoder_step(&state, &enc, &params).unwrap();
        assert_eq!(probs.len(), 6);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        params.out_b.as_mut_slice()[4] = 1000.0;
        let (_, probs) = decoder_step(&state, &enc, &params).unwrap();
        assert!(probs[4] > 1.0 - 1e-9);
    }

    #[test]
    fn logprob_chain_rule_and_forced_one_hot() {
        let mut params = ModelParams::init(small_dims(), 13);
        let src = [3, 4, 5];
        let tgt = [4, 5, 2];
        let total = sequence_logprob(&src, &tgt, &params).unwrap();
        let enc = encode(&src, &params).unwrap();
        let mut state = init_decoder(&enc, &params).unwrap();
        let mut manual = 0.0;
        for &y in &tgt {
            let (next, probs) = decoder_step(&state, &enc, &params).unwrap();
            manual -= crate::numerics::cross_entropy(&probs, y as usize).unwrap();
            state = DecoderState { s: next.s, last_token: y };
        }
        assert!((total - manual).abs() < 1e-12);

        params.out_b.as_mut_slice()[2] = 1e4;
        let lp = sequence_logprob(&src, &[2], &params).unwrap();
        assert_eq!(lp, 0.0);
    }

    #[test]
    fn logprob_never_increases_when_appending() {
        let params = ModelParams::init(small_dims(), 14);
        let src = [3, 4];
        let mut tgt = vec![5];
        let mut prev = sequence_logprob(&src, &tgt, &params).unwrap();
        for y in [1, 0, 3, 2] {
            tgt.push(y);
            let lp = sequence_logprob(&src, &tgt, &params).unwrap();
            assert!(lp <= prev);
            prev = lp;
        }
    }

    #[test]
    fn loss_matches_negative_logprob() {
        let params = ModelParams::init(small_dims(), 15);
        let mut grads = params.zeros_like();
        let loss = loss_and_grad(&[1, 2, 3], &[4, 2], &params, &mut grads).unwrap();
        let lp = sequence_logprob(&[1, 2, 3], &[4, 2], &params).unwrap();
        assert!((loss + lp).abs() < 1e-12);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let dims = ModelDims {
            src_vocab: 5,
            tgt_vocab: 5,
            embed_dim: 3,
            hidden_dim: 4,
            attention_dim: 4,
        };
        // Unit-scale weights keep gradient entries well above finite-difference noise.
        let params = ModelParams::init_scaled(dims, 21, 1.0);
        let (src, tgt) = ([3, 4, 1], [4, 2]);
        let mut grads = params.zeros_like();
        loss_and_grad(&src, &tgt, &params, &mut grads).unwrap();
        let mut probe = params.clone();
        let report = grad_check(
            |theta| {
                probe.set_flat(theta).unwrap();
                -sequence_logprob(&src, &tgt, &probe).unwrap()
            },
            &params.to_flat(),
            &grads.to_flat(),
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn flat_roundtrip_and_validate() {
        let params = ModelParams::init(small_dims(), 16);
        let mut other = params.zeros_like();
        other.set_flat(&params.to_flat()).unwrap();
        assert_eq!(other, params);
        params.validate().unwrap();
        let mut broken = params.clone();
        broken.att_v = Tensor2::zeros(2, 1);
        assert!(matches!(broken.validate(), Err(Error::Shape(_))));
    }
}
