//! Patch-embedding transformer encoder classifier.
//!
//! Pre-norm residual blocks with multi-head self-attention and a GELU
//! feed-forward network, a final layer norm, mean pooling over tokens and a
//! linear head. The positional encoding is pluggable through [`PeStrategy`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{patch_mean_values, Tape, Var};
use crate::dywpe::{self, DyWpeConfig, DyWpeParams, StaticWaveletParams};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::pe::{self, AttentionHook, PeKind, PeStrategy};
use crate::tensor::Tensor;
use crate::wavelet::WaveletName;

/// Length at which the wavelet encoders run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    /// On per-channel patch means, one step per token.
    Token,
    /// On the raw series; the encoding is then patch-averaged to tokens.
    Raw,
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "token" => Ok(Resolution::Token),
            "raw" => Ok(Resolution::Raw),
            other => Err(Error::Config(format!(
                "unknown resolution '{other}' (expected token or raw)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeConfig {
    pub kind: PeKind,
    pub wavelet: WaveletName,
    /// `None` picks [`dywpe::default_levels`] for the encoding length.
    pub levels: Option<usize>,
    pub init_std: f64,
    pub resolution: Resolution,
    pub alibi_causal: bool,
}

impl Default for PeConfig {
    fn default() -> Self {
        Self {
            kind: PeKind::Dywpe,
            wavelet: WaveletName::Haar,
            levels: None,
            init_std: dywpe::DEFAULT_INIT_STD,
            resolution: Resolution::Token,
            alibi_causal: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelConfig {
    pub seq_len: usize,
    pub d_x: usize,
    pub num_classes: usize,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub patch_len: usize,
    pub dropout: f64,
    pub seed: u64,
    pub pe: PeConfig,
}

impl ModelConfig {
    /// Defaults: 4 layers, 4 heads, width 128, `d_ff = 4 d_model`,
    /// patch length 8, dropout 0.2.
    pub fn new(seq_len: usize, d_x: usize, num_classes: usize) -> Self {
        Self {
            seq_len,
            d_x,
            num_classes,
            layers: 4,
            heads: 4,
            d_model: 128,
            d_ff: 512,
            patch_len: 8,
            dropout: 0.2,
            seed: 0,
            pe: PeConfig::default(),
        }
    }

    pub fn tokens(&self) -> usize {
        self.seq_len.div_ceil(self.patch_len)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Length the wavelet encoders see.
    pub fn encoding_len(&self) -> usize {
        match self.pe.resolution {
            Resolution::Token => self.tokens(),
            Resolution::Raw => self.seq_len,
        }
    }

    /// Encoder config for the wavelet strategies.
    pub fn dywpe_config(&self) -> DyWpeConfig {
        let len = self.encoding_len();
        let levels = match self.pe.kind {
            PeKind::SingleScale => 1,
            _ => self
                .pe
                .levels
                .unwrap_or_else(|| dywpe::default_levels(len, self.pe.wavelet.filter_len())),
        };
        DyWpeConfig {
            d_x: self.d_x,
            d_model: self.d_model,
            levels,
            wavelet: self.pe.wavelet,
            init_std: self.pe.init_std,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seq_len == 0 || self.d_x == 0 || self.layers == 0 || self.d_ff == 0 {
            return bad("seq_len, d_x, layers and d_ff must be positive".into());
        }
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            ));
        }
        if self.patch_len == 0 {
            return bad("patch_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.pe.kind == PeKind::Sinusoidal && !self.d_model.is_multiple_of(2) {
            return bad("sinusoidal encoding needs an even d_model".into());
        }
        if self.pe.kind == PeKind::Rope && !self.head_dim().is_multiple_of(2) {
            return bad("rotary encoding needs an even head dimension".into());
        }
        if self.pe.kind.is_wavelet() {
            self.dywpe_config().check_length(self.encoding_len())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    ln1: (ParamId, ParamId),
    w_q: ParamId,
    w_k: ParamId,
    w_v: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2: (ParamId, ParamId),
    w_1: ParamId,
    b_1: ParamId,
    w_2: ParamId,
    b_2: ParamId,
}

/// Learnable state owned by the positional-encoding strategy.
#[derive(Clone, Debug)]
pub enum PeParams {
    Fixed,
    Learnable(ParamId),
    Dywpe(DyWpeParams, DyWpeConfig),
    Swpe(StaticWaveletParams, DyWpeConfig),
}

/// What the encoder injects, and where.
#[derive(Clone, Copy, Debug)]
pub enum PeInjection {
    /// A `[B, T, d]` or `[T, d]` table added to the tokens, or nothing.
    Additive(Option<Var>),
    Rotary,
    /// `[heads, T, T]` logit bias.
    Bias(Var),
}

#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    pub strategy: PeStrategy,
    pub pe_params: PeParams,
    patch_proj: ParamId,
    patch_bias: ParamId,
    layers: Vec<EncoderLayer>,
    final_ln: (ParamId, ParamId),
    head_w: ParamId,
    head_b: ParamId,
}

fn dense<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: String,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<ParamId> {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    Ok(store.add(name, Tensor::randn(&[fan_in, fan_out], std, rng)?))
}

fn layer_norm_params(store: &mut ParamStore, name: &str, d: usize) -> Result<(ParamId, ParamId)> {
    Ok((
        store.add(format!("{name}.gamma"), Tensor::full(&[d], 1.0)?),
        store.add(format!("{name}.beta"), Tensor::zeros(&[d])?),
    ))
}

impl ModelBundle {
    /// Builds the backbone from `cfg.seed`, then the encoding's parameters
    /// from a separate stream, so every strategy shares the same backbone
    /// initialization.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let patch_in = cfg.patch_len * cfg.d_x;
        let patch_proj = dense(&mut store, "patch.w".into(), patch_in, d, &mut rng)?;
        let patch_bias = store.add("patch.b", Tensor::zeros(&[d])?);
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("layer{l}");
            layers.push(EncoderLayer {
                ln1: layer_norm_params(&mut store, &format!("{p}.ln1"), d)?,
                w_q: dense(&mut store, format!("{p}.attn.w_q"), d, d, &mut rng)?,
                w_k: dense(&mut store, format!("{p}.attn.w_k"), d, d, &mut rng)?,
                w_v: dense(&mut store, format!("{p}.attn.w_v"), d, d, &mut rng)?,
                w_o: dense(&mut store, format!("{p}.attn.w_o"), d, d, &mut rng)?,
                b_o: store.add(format!("{p}.attn.b_o"), Tensor::zeros(&[d])?),
                ln2: layer_norm_params(&mut store, &format!("{p}.ln2"), d)?,
                w_1: dense(&mut store, format!("{p}.ffn.w_1"), d, cfg.d_ff, &mut rng)?,
                b_1: store.add(format!("{p}.ffn.b_1"), Tensor::zeros(&[cfg.d_ff])?),
                w_2: dense(&mut store, format!("{p}.ffn.w_2"), cfg.d_ff, d, &mut rng)?,
                b_2: store.add(format!("{p}.ffn.b_2"), Tensor::zeros(&[d])?),
            });
        }
        let final_ln = layer_norm_params(&mut store, "final_ln", d)?;
        let head_w = dense(&mut store, "head.w".into(), d, cfg.num_classes, &mut rng)?;
        let head_b = store.add("head.b", Tensor::zeros(&[cfg.num_classes])?);

        let mut pe_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f9e);
        let pe_params = match cfg.pe.kind {
            PeKind::None | PeKind::Sinusoidal | PeKind::Rope | PeKind::Alibi => PeParams::Fixed,
            PeKind::Learnable => {
                let t = pe::learnable_pe_init(cfg.tokens(), d, cfg.pe.init_std, &mut pe_rng)?;
                PeParams::Learnable(store.add("pe.table", t))
            }
            PeKind::Dywpe | PeKind::SingleScale => {
                let dc = cfg.dywpe_config();
                PeParams::Dywpe(DyWpeParams::init(&mut store, &dc, "pe.", &mut pe_rng)?, dc)
            }
            PeKind::Swpe => {
                let dc = cfg.dywpe_config();
                let len = cfg.encoding_len();
                PeParams::Swpe(StaticWaveletParams::init(&mut store, &dc, len, "pe.", &mut pe_rng)?, dc)
            }
        };
        Ok(Self {
            strategy: PeStrategy::new(cfg.pe.kind, cfg.pe.alibi_causal),
            cfg,
            store,
            pe_params,
            patch_proj,
            patch_bias,
            layers,
            final_ln,
            head_w,
            head_b,
        })
    }

    /// Parameters that belong to the positional encoding.
    pub fn pe_param_count(&self) -> usize {
        self.store
            .iter()
            .filter(|(name, _)| name.starts_with("pe."))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Tokens, the encoding injection, and logits for one batch.
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        x: &Tensor,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let (tokens, x_patched) = patch_embed(tape, bound, self, x)?;
        let injection = self.pe_injection(tape, bound, x, &x_patched)?;
        encoder_forward(tape, bound, tokens, injection, self, train_mode, rng)
    }

    /// Logits without recording gradients for parameters.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, &bound, x, false, &mut rng)?;
        Ok(tape.tensor(out))
    }

    fn pe_injection(&self, tape: &mut Tape, bound: &Bound, x: &Tensor, x_patched: &Tensor) -> Result<PeInjection> {
        let cfg = &self.cfg;
        let (b, t) = (x.shape()[0], cfg.tokens());
        let wavelet_input = |tape: &mut Tape| match cfg.pe.resolution {
            Resolution::Token => tape.constant(x_patched.clone()),
            Resolution::Raw => tape.constant(x.clone()),
        };
        let to_tokens = |tape: &mut Tape, p: Var| -> Result<Var> {
            match cfg.pe.resolution {
                Resolution::Token => Ok(p),
                Resolution::Raw => tape.patch_mean(p, cfg.patch_len),
            }
        };
        Ok(match (&self.pe_params, cfg.pe.kind) {
            (_, PeKind::None) => PeInjection::Additive(None),
            (_, PeKind::Sinusoidal) => PeInjection::Additive(Some(tape.constant(pe::sinusoidal_pe(t, cfg.d_model)?))),
            (_, PeKind::Rope) => PeInjection::Rotary,
            (_, PeKind::Alibi) => PeInjection::Bias(tape.constant(pe::alibi_bias(t, cfg.heads, cfg.pe.alibi_causal)?)),
            (PeParams::Learnable(id), PeKind::Learnable) => PeInjection::Additive(Some(bound.get(*id))),
            (PeParams::Dywpe(p, dc), PeKind::Dywpe | PeKind::SingleScale) => {
                let xin = wavelet_input(tape);
                let enc = if cfg.pe.kind == PeKind::SingleScale {
                    dywpe::single_scale_forward(tape, xin, p, bound, dc)?
                } else {
                    dywpe::dywpe_forward(tape, xin, p, bound, dc)?
                };
                PeInjection::Additive(Some(to_tokens(tape, enc)?))
            }
            (PeParams::Swpe(p, dc), PeKind::Swpe) => {
                let enc = dywpe::swpe_forward(tape, p, bound, dc, b)?;
                PeInjection::Additive(Some(to_tokens(tape, enc)?))
            }
            (params, kind) => {
                return Err(Error::contract(format!("{kind} strategy with parameters {params:?}")));
            }
        })
    }
}

/// Zero-pads `[B, L, d_x]` to whole patches and projects each flattened
/// patch to `d_model`. Also returns per-channel patch means over the real
/// samples, `[B, T, d_x]`.
pub fn patch_embed(tape: &mut Tape, bound: &Bound, model: &ModelBundle, x: &Tensor) -> Result<(Var, Tensor)> {
    let cfg = &model.cfg;
    let s = x.shape();
    if s.len() != 3 || s[1] != cfg.seq_len || s[2] != cfg.d_x {
        return Err(Error::contract(format!(
            "model expects [B, {}, {}], got {s:?}",
            cfg.seq_len, cfg.d_x
        )));
    }
    let (b, l, c) = (s[0], s[1], s[2]);
    let t = cfg.tokens();
    let padded_len = t * cfg.patch_len;
    let mut padded = vec![0.0; b * padded_len * c];
    for bi in 0..b {
        padded[bi * padded_len * c..bi * padded_len * c + l * c]
            .copy_from_slice(&x.data()[bi * l * c..(bi + 1) * l * c]);
    }
    let flat = tape.constant(Tensor::new(&[b * t, cfg.patch_len * c], padded)?);
    let proj = tape.matmul(flat, bound.get(model.patch_proj))?;
    let proj = tape.add(proj, bound.get(model.patch_bias))?;
    let tokens = tape.reshape(proj, &[b, t, cfg.d_model])?;
    let means = Tensor::new(&[b, t, c], patch_mean_values(x.data(), b, l, c, cfg.patch_len))?;
    Ok((tokens, means))
}

fn dropout(tape: &mut Tape, v: Var, p: f64, train_mode: bool, rng: &mut ChaCha8Rng) -> Result<Var> {
    if !train_mode || p == 0.0 {
        return Ok(v);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(tape.shape(v), |_| if rng.random::<f64>() < p { 0.0 } else { keep })?;
    let mask = tape.constant(mask);
    tape.mul(v, mask)
}

/// Multi-head scaled dot-product self-attention on `[B, T, d]`.
fn attention(
    tape: &mut Tape,
    bound: &Bound,
    layer: &EncoderLayer,
    h: Var,
    cfg: &ModelConfig,
    hook: Option<(AttentionHook, Option<Var>)>,
) -> Result<Var> {
    let s = tape.shape(h).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let (heads, dh) = (cfg.heads, cfg.head_dim());
    let flat = tape.reshape(h, &[b * t, d])?;
    let split = |tape: &mut Tape, w: ParamId| -> Result<Var> {
        let p = tape.matmul(flat, bound.get(w))?;
        let p = tape.reshape(p, &[b, t, heads, dh])?;
        let p = tape.permute(p, &[0, 2, 1, 3])?;
        tape.reshape(p, &[b * heads, t, dh])
    };
    let mut q = split(tape, layer.w_q)?;
    let mut k = split(tape, layer.w_k)?;
    let v = split(tape, layer.w_v)?;
    if let Some((AttentionHook::Rotary, _)) = hook {
        let positions: Vec<usize> = (0..t).collect();
        q = tape.rope(q, &positions)?;
        k = tape.rope(k, &positions)?;
    }
    let scores = tape.bmm(q, k, true)?;
    let mut scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
    if let Some((AttentionHook::Bias { .. }, Some(bias))) = hook {
        let s4 = tape.reshape(scores, &[b, heads, t, t])?;
        let s4 = tape.add(s4, bias)?;
        scores = tape.reshape(s4, &[b * heads, t, t])?;
    }
    let probs = tape.softmax_last(scores);
    let ctx = tape.bmm(probs, v, false)?;
    let ctx = tape.reshape(ctx, &[b, heads, t, dh])?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[b * t, d])?;
    let out = tape.matmul(ctx, bound.get(layer.w_o))?;
    let out = tape.add(out, bound.get(layer.b_o))?;
    tape.reshape(out, &[b, t, d])
}

/// Runs the encoder stack and head on `[B, T, d]` tokens.
pub fn encoder_forward(
    tape: &mut Tape,
    bound: &Bound,
    tokens: Var,
    injection: PeInjection,
    model: &ModelBundle,
    train_mode: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Var> {
    let cfg = &model.cfg;
    let strategy = model.strategy;
    strategy.validate()?;
    let hook = match (injection, strategy.attention_hook) {
        (PeInjection::Additive(_), None) => None,
        (PeInjection::Rotary, Some(AttentionHook::Rotary)) => Some((AttentionHook::Rotary, None)),
        (PeInjection::Bias(v), Some(h @ AttentionHook::Bias { .. })) => Some((h, Some(v))),
        (inj, _) => {
            return Err(Error::contract(format!(
                "{inj:?} injection does not match the {} strategy",
                strategy.kind
            )));
        }
    };
    let s = tape.shape(tokens).to_vec();
    let (b, t, d) = (s[0], s[1], s[2]);
    let mut x = tokens;
    if let PeInjection::Additive(Some(p)) = injection {
        x = tape.add(x, p)?;
    }
    x = dropout(tape, x, cfg.dropout, train_mode, rng)?;
    for layer in &model.layers {
        let h = tape.layer_norm(x, bound.get(layer.ln1.0), bound.get(layer.ln1.1))?;
        let a = attention(tape, bound, layer, h, cfg, hook)?;
        let a = dropout(tape, a, cfg.dropout, train_mode, rng)?;
        x = tape.add(x, a)?;

        let h = tape.layer_norm(x, bound.get(layer.ln2.0), bound.get(layer.ln2.1))?;
        let h = tape.reshape(h, &[b * t, d])?;
        let f = tape.matmul(h, bound.get(layer.w_1))?;
        let f = tape.add(f, bound.get(layer.b_1))?;
        let f = tape.gelu(f);
        let f = tape.matmul(f, bound.get(layer.w_2))?;
        let f = tape.add(f, bound.get(layer.b_2))?;
        let f = tape.reshape(f, &[b, t, d])?;
        let f = dropout(tape, f, cfg.dropout, train_mode, rng)?;
        x = tape.add(x, f)?;
    }
    let x = tape.layer_norm(x, bound.get(model.final_ln.0), bound.get(model.final_ln.1))?;
    let pooled = tape.mean_axis(x, 1)?;
    let logits = tape.matmul(pooled, bound.get(model.head_w))?;
    tape.add(logits, bound.get(model.head_b))
}
