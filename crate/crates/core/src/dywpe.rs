//! Dynamic wavelet positional encoding.
//!
//! The encoder maps a `[B, L, d_x]` signal to a `[B, L, d_model]` encoding:
//! the channels are projected to a single series, decomposed into `J`
//! wavelet levels, every band is expanded to `d_model` channels by a gated
//! transform of its learnable scale embedding, and the expanded pyramid is
//! synthesized back to length `L`.
//!
//! The static variant replaces the signal's coefficients by learnable bands
//! and the single-scale variant fixes `J = 1`.

use rand::Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::wavelet::{self, CoeffPyramid, FilterBank, WaveletName};

pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DyWpeConfig {
    pub d_x: usize,
    pub d_model: usize,
    /// Decomposition depth `J`.
    pub levels: usize,
    pub wavelet: WaveletName,
    pub init_std: f64,
}

impl DyWpeConfig {
    /// Config with `J` from [`default_levels`] for sequences of `len` steps.
    pub fn for_length(d_x: usize, d_model: usize, len: usize, wavelet: WaveletName) -> Self {
        Self {
            d_x,
            d_model,
            levels: default_levels(len, wavelet.filter_len()),
            wavelet,
            init_std: DEFAULT_INIT_STD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_x == 0 || self.d_model == 0 {
            return Err(Error::contract(format!(
                "d_x and d_model must be positive (got {} and {})",
                self.d_x, self.d_model
            )));
        }
        if self.levels == 0 {
            return Err(Error::contract("J must be at least 1"));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::contract(format!("invalid init_std {}", self.init_std)));
        }
        Ok(())
    }

    /// Fails unless `1 <= J <= max_level(len, filter_len)`.
    pub fn check_length(&self, len: usize) -> Result<()> {
        let max = wavelet::max_level(len, self.wavelet.filter_len());
        if self.levels == 0 || self.levels > max {
            return Err(Error::contract(format!(
                "J = {} is invalid for encoding length {len} with {} (max_level = {max})",
                self.levels, self.wavelet
            )));
        }
        Ok(())
    }

    pub fn filter_bank(&self) -> FilterBank {
        FilterBank::new(self.wavelet)
    }
}

/// `min(max_level(len), floor(log2 len) - 1)`, at least 1.
///
/// With this choice the `J + 1` scale embeddings number `floor(log2 len)`
/// whenever the filter allows it.
pub fn default_levels(len: usize, filter_len: usize) -> usize {
    let log2 = if len == 0 { 0 } else { len.ilog2() as usize };
    wavelet::max_level(len, filter_len).min(log2.saturating_sub(1)).max(1)
}

/// Handles of the encoder's tensors inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct DyWpeParams {
    pub w_channel: ParamId,
    /// `e_A(J), e_D(J), ..., e_D(1)`.
    pub scale_embeds: Vec<ParamId>,
    pub w_g: ParamId,
    pub w_v: ParamId,
}

/// Scale embeddings and gate weights shared by all encoder variants.
fn init_gate_params<R: Rng + ?Sized>(
    store: &mut ParamStore,
    cfg: &DyWpeConfig,
    prefix: &str,
    rng: &mut R,
) -> Result<(Vec<ParamId>, ParamId, ParamId)> {
    let d = cfg.d_model;
    let mut embeds = Vec::with_capacity(cfg.levels + 1);
    embeds.push(store.add(
        format!("{prefix}scale_embed.A{}", cfg.levels),
        Tensor::randn(&[d], cfg.init_std, rng)?,
    ));
    for j in (1..=cfg.levels).rev() {
        embeds.push(store.add(
            format!("{prefix}scale_embed.D{j}"),
            Tensor::randn(&[d], cfg.init_std, rng)?,
        ));
    }
    let w_g = store.add(format!("{prefix}w_g"), Tensor::randn(&[d, d], cfg.init_std, rng)?);
    let w_v = store.add(format!("{prefix}w_v"), Tensor::randn(&[d, d], cfg.init_std, rng)?);
    Ok((embeds, w_g, w_v))
}

impl DyWpeParams {
    /// Registers the encoder's tensors; names are prefixed with `prefix`.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &DyWpeConfig, prefix: &str, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let w_channel = store.add(
            format!("{prefix}w_channel"),
            Tensor::full(&[cfg.d_x], 1.0 / cfg.d_x as f64)?,
        );
        let (scale_embeds, w_g, w_v) = init_gate_params(store, cfg, prefix, rng)?;
        Ok(Self {
            w_channel,
            scale_embeds,
            w_g,
            w_v,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.w_channel];
        ids.extend(&self.scale_embeds);
        ids.extend([self.w_g, self.w_v]);
        ids
    }
}

/// Learnable stand-ins for the coefficient bands, one `[1, n_j]` tensor per
/// scale, ordered like the scale embeddings.
#[derive(Clone, Debug)]
pub struct StaticWaveletParams {
    pub scale_embeds: Vec<ParamId>,
    pub w_g: ParamId,
    pub w_v: ParamId,
    pub bands: Vec<ParamId>,
    pub level_lengths: Vec<usize>,
}

impl StaticWaveletParams {
    /// Bands are drawn from N(0, 1), the scale of the coefficients of a
    /// standardized signal.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        cfg: &DyWpeConfig,
        len: usize,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        cfg.check_length(len)?;
        let (scale_embeds, w_g, w_v) = init_gate_params(store, cfg, prefix, rng)?;
        let level_lengths = wavelet::level_lengths(len, cfg.levels)?;
        let mut bands = Vec::with_capacity(cfg.levels + 1);
        let n_approx = level_lengths[cfg.levels - 1].div_ceil(2);
        bands.push(store.add(
            format!("{prefix}static_band.A{}", cfg.levels),
            Tensor::randn(&[1, n_approx], 1.0, rng)?,
        ));
        for j in (1..=cfg.levels).rev() {
            let n = level_lengths[j - 1].div_ceil(2);
            bands.push(store.add(format!("{prefix}static_band.D{j}"), Tensor::randn(&[1, n], 1.0, rng)?));
        }
        Ok(Self {
            scale_embeds,
            w_g,
            w_v,
            bands,
            level_lengths,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = self.scale_embeds.clone();
        ids.extend([self.w_g, self.w_v]);
        ids.extend(&self.bands);
        ids
    }

    pub fn encoding_len(&self) -> usize {
        self.level_lengths[0]
    }
}

/// `x_mono[b, t] = sum_c x[b, t, c] * w[c]`: `[B, L, d_x] -> [B, L]`.
pub fn project_channels(tape: &mut Tape, x: Var, w_channel: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let dx = tape.shape(w_channel).to_vec();
    if s.len() != 3 || dx.len() != 1 || s[2] != dx[0] {
        return Err(Error::contract(format!(
            "project_channels: input {s:?} does not match channel weights {dx:?}"
        )));
    }
    let flat = tape.reshape(x, &[s[0] * s[1], s[2]])?;
    let w = tape.reshape(w_channel, &[s[2], 1])?;
    let mono = tape.matmul(flat, w)?;
    tape.reshape(mono, &[s[0], s[1]])
}

/// `(sigmoid(W_g e) * tanh(W_v e)) ⊗ c`: `[B, n] -> [B, n, d_model]`.
pub fn gate(tape: &mut Tape, e: Var, c: Var, w_g: Var, w_v: Var) -> Result<Var> {
    let d = match *tape.shape(e) {
        [d] => d,
        ref s => return Err(Error::contract(format!("gate: embedding must be a vector, got {s:?}"))),
    };
    for (name, w) in [("W_g", w_g), ("W_v", w_v)] {
        if tape.shape(w) != [d, d] {
            return Err(Error::contract(format!(
                "gate: {name} has shape {:?}, expected [{d}, {d}]",
                tape.shape(w)
            )));
        }
    }
    if tape.shape(c).len() != 2 {
        return Err(Error::contract(format!(
            "gate: coefficients must be [B, n], got {:?}",
            tape.shape(c)
        )));
    }
    let col = tape.reshape(e, &[d, 1])?;
    let ge = tape.matmul(w_g, col)?;
    let ve = tape.matmul(w_v, col)?;
    let s = tape.sigmoid(ge);
    let t = tape.tanh(ve);
    let g = tape.mul(s, t)?;
    let g = tape.reshape(g, &[d])?;
    tape.broadcast_outer(g, c)
}

/// Gates each band of a single-channel pyramid with its scale embedding and
/// synthesizes the `d_model`-channel result.
fn gate_and_synthesize(
    tape: &mut Tape,
    bands: &CoeffPyramid<Var>,
    embeds: &[Var],
    w_g: Var,
    w_v: Var,
    fb: &FilterBank,
) -> Result<Var> {
    if embeds.len() != bands.levels() + 1 {
        return Err(Error::contract(format!(
            "{} scale embeddings for a {}-level pyramid (need {})",
            embeds.len(),
            bands.levels(),
            bands.levels() + 1
        )));
    }
    let mut gated = Vec::with_capacity(embeds.len());
    for (&band, &e) in bands.bands().zip(embeds) {
        let s = tape.shape(band).to_vec();
        let c = tape.reshape(band, &[s[0], s[1]])?;
        gated.push(gate(tape, e, c, w_g, w_v)?);
    }
    let expanded = CoeffPyramid {
        approx: gated[0],
        details: gated[1..].to_vec(),
        level_lengths: bands.level_lengths.clone(),
    };
    wavelet::idwt_multi_var(tape, &expanded, fb)
}

/// Full encoder on the tape: `[B, L, d_x] -> [B, L, d_model]`.
pub fn dywpe_forward(tape: &mut Tape, x: Var, params: &DyWpeParams, bound: &Bound, cfg: &DyWpeConfig) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::contract(format!("dywpe_forward needs [B, L, d_x], got {s:?}")));
    }
    cfg.check_length(s[1])?;
    let mono = project_channels(tape, x, bound.get(params.w_channel))?;
    let mono = tape.reshape(mono, &[s[0], s[1], 1])?;
    let fb = cfg.filter_bank();
    let pyramid = wavelet::dwt_multi_var(tape, mono, &fb, cfg.levels)?;
    let embeds: Vec<Var> = params.scale_embeds.iter().map(|&id| bound.get(id)).collect();
    gate_and_synthesize(
        tape,
        &pyramid,
        &embeds,
        bound.get(params.w_g),
        bound.get(params.w_v),
        &fb,
    )
}

/// Input-independent variant: `[batch, L, d_model]` with identical rows.
pub fn swpe_forward(
    tape: &mut Tape,
    params: &StaticWaveletParams,
    bound: &Bound,
    cfg: &DyWpeConfig,
    batch: usize,
) -> Result<Var> {
    if params.bands.len() != cfg.levels + 1 || params.level_lengths.len() != cfg.levels {
        return Err(Error::contract(format!(
            "static bands for {} levels do not match J = {}",
            params.level_lengths.len(),
            cfg.levels
        )));
    }
    let mut bands = Vec::with_capacity(params.bands.len());
    for &id in &params.bands {
        let v = bound.get(id);
        let n = tape.shape(v)[1];
        bands.push(tape.reshape(v, &[1, n, 1])?);
    }
    let pyramid = CoeffPyramid {
        approx: bands[0],
        details: bands[1..].to_vec(),
        level_lengths: params.level_lengths.clone(),
    };
    let embeds: Vec<Var> = params.scale_embeds.iter().map(|&id| bound.get(id)).collect();
    let fb = cfg.filter_bank();
    let one = gate_and_synthesize(
        tape,
        &pyramid,
        &embeds,
        bound.get(params.w_g),
        bound.get(params.w_v),
        &fb,
    )?;
    if batch == 1 {
        Ok(one)
    } else {
        tape.repeat_leading(one, batch)
    }
}

/// [`dywpe_forward`] with `J = 1`; `params` must hold two scale embeddings.
pub fn single_scale_forward(
    tape: &mut Tape,
    x: Var,
    params: &DyWpeParams,
    bound: &Bound,
    cfg: &DyWpeConfig,
) -> Result<Var> {
    let cfg = DyWpeConfig {
        levels: 1,
        ..cfg.clone()
    };
    dywpe_forward(tape, x, params, bound, &cfg)
}

/// `2 d^2 + (J + 1) d`, plus `d_x` when the channel projection is counted.
pub fn param_count(cfg: &DyWpeConfig, include_channel_proj: bool) -> usize {
    let d = cfg.d_model;
    2 * d * d + (cfg.levels + 1) * d + if include_channel_proj { cfg.d_x } else { 0 }
}

/// The closed-form count `2 d^2 + floor(log2 L) d` used for complexity tables.
pub fn table_param_formula(d_model: usize, len: usize) -> usize {
    2 * d_model * d_model + len.ilog2() as usize * d_model
}

/// Both accountings side by side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParamAccounting {
    pub count: usize,
    pub count_with_channel_proj: usize,
    pub table_formula: usize,
    /// Whether `J + 1 == floor(log2 L)`, so the two formulas agree.
    pub matches_table: bool,
}

pub fn param_accounting(cfg: &DyWpeConfig, len: usize) -> ParamAccounting {
    let count = param_count(cfg, false);
    let table_formula = table_param_formula(cfg.d_model, len);
    ParamAccounting {
        count,
        count_with_channel_proj: param_count(cfg, true),
        table_formula,
        matches_table: count == table_formula,
    }
}

/// Self-contained encoder owning its parameters.
#[derive(Clone, Debug)]
pub struct DyWpe {
    pub cfg: DyWpeConfig,
    pub store: ParamStore,
    pub params: DyWpeParams,
}

impl DyWpe {
    pub fn new<R: Rng + ?Sized>(cfg: DyWpeConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = DyWpeParams::init(&mut store, &cfg, "", rng)?;
        Ok(Self { cfg, store, params })
    }

    /// Encodes a `[B, L, d_x]` signal.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let p = dywpe_forward(&mut tape, xv, &self.params, &bound, &self.cfg)?;
        Ok(tape.tensor(p))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_elements()
    }
}

/// Self-contained static variant for a fixed encoding length.
#[derive(Clone, Debug)]
pub struct StaticWpe {
    pub cfg: DyWpeConfig,
    pub store: ParamStore,
    pub params: StaticWaveletParams,
}

impl StaticWpe {
    pub fn new<R: Rng + ?Sized>(cfg: DyWpeConfig, len: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let params = StaticWaveletParams::init(&mut store, &cfg, len, "", rng)?;
        Ok(Self { cfg, store, params })
    }

    /// Encoding for a `[B, L, d_x]` input; only `B` and `L` are read.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 3 || x.shape()[1] != self.params.encoding_len() {
            return Err(Error::contract(format!(
                "static encoder built for length {}, got input {:?}",
                self.params.encoding_len(),
                x.shape()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape);
        let p = swpe_forward(&mut tape, &self.params, &bound, &self.cfg, x.shape()[0])?;
        Ok(tape.tensor(p))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gradcheck::finite_diff_check;
    use crate::pe::sinusoidal_pe;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, -2.0, 2.0, &mut rng(seed)).unwrap()
    }

    fn cfg(d_x: usize, d_model: usize, levels: usize, wavelet: WaveletName) -> DyWpeConfig {
        DyWpeConfig {
            d_x,
            d_model,
            levels,
            wavelet,
            init_std: 0.5,
        }
    }

    /// Weighted sum with fixed random weights.
    fn weighted(tape: &mut Tape, v: Var, seed: u64) -> Result<Var> {
        let w = tape.constant(random(tape.shape(v), seed));
        let p = tape.mul(v, w)?;
        Ok(tape.sum(p))
    }

    #[test]
    fn projection_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 3, 1], vec![1.0, -2.0, 0.5]).unwrap());
        let w = tape.constant(Tensor::new(&[1], vec![1.0]).unwrap());
        let m = project_channels(&mut tape, x, w).unwrap();
        assert_eq!(tape.shape(m), &[1, 3]);
        assert_eq!(tape.value(m), &[1.0, -2.0, 0.5]);

        let x = tape.constant(Tensor::new(&[1, 2, 2], vec![3.0, 3.0, -1.0, -1.0]).unwrap());
        let w = tape.constant(Tensor::new(&[2], vec![0.5, 0.5]).unwrap());
        let m = project_channels(&mut tape, x, w).unwrap();
        assert_eq!(tape.value(m), &[3.0, -1.0]);

        let bad = tape.constant(Tensor::new(&[3], vec![1.0; 3]).unwrap());
        assert!(matches!(project_channels(&mut tape, x, bad), Err(Error::Contract(_))));
    }

    #[test]
    fn projection_gradient() {
        let mut store = ParamStore::new();
        let w = store.add("w", random(&[3], 1));
        let x = random(&[2, 8, 3], 2);
        let r = finite_diff_check(&mut store, 1e-5, |tape, bd| {
            let xv = tape.constant(x.clone());
            let m = project_channels(tape, xv, bd.get(w))?;
            weighted(tape, m, 3)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn gate_examples() {
        let mut tape = Tape::new();
        let eye = tape.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let e = tape.constant(Tensor::new(&[2], vec![1.0, 0.0]).unwrap());
        let c = tape.constant(Tensor::new(&[1, 1], vec![2.0]).unwrap());
        let out = gate(&mut tape, e, c, eye, eye).unwrap();
        assert_eq!(tape.shape(out), &[1, 1, 2]);
        let v = tape.value(out);
        // sigmoid(1) * tanh(1) = 0.7310586 * 0.7615942
        assert!((v[0] - 2.0 * 0.556_769_941_1).abs() < 1e-9 && v[1] == 0.0, "{v:?}");

        let zero = tape.constant(Tensor::zeros(&[2, 2]).unwrap());
        let c = tape.constant(random(&[2, 3], 4));
        let out = gate(&mut tape, e, c, zero, zero).unwrap();
        assert!(tape.value(out).iter().all(|&x| x == 0.0));

        let c0 = tape.constant(Tensor::zeros(&[2, 3]).unwrap());
        let out = gate(&mut tape, e, c0, eye, eye).unwrap();
        assert!(tape.value(out).iter().all(|&x| x == 0.0));

        let wrong = tape.constant(Tensor::zeros(&[3, 3]).unwrap());
        assert!(gate(&mut tape, e, c, wrong, eye).is_err());
    }

    #[test]
    fn gate_is_linear_in_coefficients() {
        let mut tape = Tape::new();
        let e = tape.constant(random(&[4], 1));
        let wg = tape.constant(random(&[4, 4], 2));
        let wv = tape.constant(random(&[4, 4], 3));
        let (c1, c2) = (random(&[2, 3], 4), random(&[2, 3], 5));
        let sum = tape.constant(c1.lincomb(2.0, &c2, -0.5).unwrap());
        let (c1, c2) = (tape.constant(c1), tape.constant(c2));
        let o = gate(&mut tape, e, sum, wg, wv).unwrap();
        let o1 = gate(&mut tape, e, c1, wg, wv).unwrap();
        let o2 = gate(&mut tape, e, c2, wg, wv).unwrap();
        for i in 0..tape.value(o).len() {
            let expect = 2.0 * tape.value(o1)[i] - 0.5 * tape.value(o2)[i];
            assert!((tape.value(o)[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn encoder_shape_and_zero_input() {
        for (l, name) in [
            (32usize, WaveletName::Haar),
            (29, WaveletName::Db2),
            (37, WaveletName::Db4),
        ] {
            let c = cfg(3, 8, 2, name);
            let enc = DyWpe::new(c, &mut rng(1)).unwrap();
            let p = enc.encode(&random(&[2, l, 3], 2)).unwrap();
            assert_eq!(p.shape(), &[2, l, 8]);
            let z = enc.encode(&Tensor::zeros(&[2, l, 3]).unwrap()).unwrap();
            assert!(z.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn encoder_is_linear_in_signal() {
        let enc = DyWpe::new(cfg(3, 8, 3, WaveletName::Db2), &mut rng(5)).unwrap();
        let x = random(&[2, 45, 3], 6);
        let y = random(&[2, 45, 3], 7);
        let px = enc.encode(&x).unwrap();
        let py = enc.encode(&y).unwrap();
        for alpha in [-1.0, 0.5, 3.0] {
            let scaled = enc.encode(&x.map(|v| alpha * v)).unwrap();
            assert!(scaled.max_abs_diff(&px.map(|v| alpha * v)).unwrap() < 1e-9);
        }
        let both = enc.encode(&x.lincomb(1.0, &y, 1.0).unwrap()).unwrap();
        assert!(both.max_abs_diff(&px.lincomb(1.0, &py, 1.0).unwrap()).unwrap() < 1e-9);
    }

    #[test]
    fn invalid_levels_are_rejected() {
        let enc = DyWpe::new(cfg(1, 4, 5, WaveletName::Haar), &mut rng(0)).unwrap();
        let err = enc.encode(&random(&[1, 16, 1], 1)).unwrap_err().to_string();
        assert!(err.contains("max_level = 4"), "{err}");
    }

    #[test]
    fn full_encoder_gradient_check() {
        let c = cfg(3, 8, 3, WaveletName::Haar);
        let mut store = ParamStore::new();
        let params = DyWpeParams::init(&mut store, &c, "", &mut rng(11)).unwrap();
        let x = random(&[2, 32, 3], 12);
        let r = finite_diff_check(&mut store, 1e-5, |tape, bd| {
            let xv = tape.constant(x.clone());
            let p = dywpe_forward(tape, xv, &params, bd, &c)?;
            assert_eq!(tape.shape(p), &[2, 32, 8]);
            weighted(tape, p, 13)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn every_parameter_entry_gets_gradient() {
        let c = cfg(3, 6, 2, WaveletName::Db2);
        let mut store = ParamStore::new();
        let params = DyWpeParams::init(&mut store, &c, "", &mut rng(3)).unwrap();
        let mut tape = Tape::new();
        let bd = store.bind(&mut tape);
        let xv = tape.constant(random(&[2, 24, 3], 4));
        let p = dywpe_forward(&mut tape, xv, &params, &bd, &c).unwrap();
        let l = weighted(&mut tape, p, 5).unwrap();
        tape.backward(l).unwrap();
        for id in params.ids() {
            let g = tape.grad(bd.get(id)).unwrap();
            assert!(
                g.iter().all(|v| v.abs() > 0.0),
                "{} has a zero gradient entry",
                store.name(id)
            );
        }
    }

    #[test]
    fn haar_single_level_is_local() {
        let enc = DyWpe::new(cfg(2, 4, 1, WaveletName::Haar), &mut rng(8)).unwrap();
        let x = random(&[1, 16, 2], 9);
        let base = enc.encode(&x).unwrap();
        for t in [0usize, 5, 10, 15] {
            let mut y = x.clone();
            y.data_mut()[t * 2] += 0.75;
            let out = enc.encode(&y).unwrap();
            let footprint = [t & !1, (t & !1) + 1];
            for s in 0..16 {
                let changed = (0..4).any(|k| out.at(&[0, s, k]) != base.at(&[0, s, k]));
                assert_eq!(changed, footprint.contains(&s), "t={t} s={s}");
            }
        }
    }

    #[test]
    fn differs_from_sinusoidal() {
        let enc = DyWpe::new(cfg(1, 8, 2, WaveletName::Haar), &mut rng(2)).unwrap();
        let p = enc.encode(&random(&[1, 16, 1], 3)).unwrap();
        let s = sinusoidal_pe(16, 8).unwrap();
        assert!(p.reshape(&[16, 8]).unwrap().max_abs_diff(&s).unwrap() > 1e-3);
    }

    #[test]
    fn static_variant_ignores_signal() {
        let c = cfg(2, 4, 2, WaveletName::Db2);
        let enc = StaticWpe::new(c.clone(), 20, &mut rng(1)).unwrap();
        let a = enc.encode(&random(&[3, 20, 2], 2)).unwrap();
        let b = enc.encode(&random(&[3, 20, 2], 3)).unwrap();
        assert_eq!(a, b);
        for row in 1..3 {
            for t in 0..20 {
                for k in 0..4 {
                    assert_eq!(a.at(&[row, t, k]), a.at(&[0, t, k]));
                }
            }
        }
        assert!(enc.encode(&random(&[1, 21, 2], 0)).is_err());

        let mut zeroed = enc.clone();
        for &id in &zeroed.params.bands.clone() {
            zeroed.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert!(zeroed
            .encode(&random(&[2, 20, 2], 4))
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn static_variant_gradient_check() {
        let c = cfg(1, 4, 2, WaveletName::Haar);
        let mut store = ParamStore::new();
        let params = StaticWaveletParams::init(&mut store, &c, 12, "", &mut rng(6)).unwrap();
        let r = finite_diff_check(&mut store, 1e-5, |tape, bd| {
            let p = swpe_forward(tape, &params, bd, &c, 2)?;
            weighted(tape, p, 7)
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn single_scale_matches_one_level_encoder() {
        let c = cfg(2, 4, 1, WaveletName::Db2);
        let mut store = ParamStore::new();
        let params = DyWpeParams::init(&mut store, &c, "", &mut rng(4)).unwrap();
        let mut tape = Tape::new();
        let bd = store.bind(&mut tape);
        let x = tape.constant(random(&[2, 18, 2], 5));
        let a = dywpe_forward(&mut tape, x, &params, &bd, &c).unwrap();
        let deeper = DyWpeConfig { levels: 3, ..c.clone() };
        let b = single_scale_forward(&mut tape, x, &params, &bd, &deeper).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        assert_eq!(param_count(&c, false), 2 * 16 + 2 * 4);
        assert_eq!(param_count(&c, true), 2 * 16 + 2 * 4 + 2);
    }

    #[test]
    fn parameter_accounting() {
        let c = DyWpeConfig::for_length(3, 128, 96, WaveletName::Haar);
        assert_eq!(c.levels, 5);
        let acc = param_accounting(&c, 96);
        assert_eq!(acc.count, 33536);
        assert_eq!(acc.table_formula, 33536);
        assert!(acc.matches_table);
        assert_eq!(acc.count_with_channel_proj, 33539);

        let tiny = cfg(1, 1, 1, WaveletName::Haar);
        assert_eq!(param_count(&tiny, false), 4);
        assert_eq!(param_count(&tiny, true), 5);

        for (d_x, d, j) in [(3usize, 8usize, 3usize), (1, 5, 1), (7, 16, 4)] {
            let c = cfg(d_x, d, j, WaveletName::Haar);
            let enc = DyWpe::new(c.clone(), &mut rng(0)).unwrap();
            assert_eq!(enc.num_parameters(), param_count(&c, true));
        }
    }

    #[test]
    fn default_levels_examples() {
        assert_eq!(default_levels(96, 2), 5);
        assert_eq!(default_levels(16, 2), 3);
        assert_eq!(default_levels(16, 8), 1);
        assert_eq!(default_levels(2, 2), 1);
    }
}
