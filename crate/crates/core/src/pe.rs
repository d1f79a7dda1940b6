//! Signal-agnostic positional encodings and the strategy descriptor that
//! tells the model where an encoding is injected.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{rope_apply, rope_tables};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `pe[t, 2i] = sin(t / 10000^(2i/d))`, `pe[t, 2i+1] = cos(...)`.
pub fn sinusoidal_pe(t_len: usize, d_model: usize) -> Result<Tensor> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::contract(format!(
            "sinusoidal encoding needs an even d_model, got {d_model}"
        )));
    }
    let mut data = vec![0.0; t_len * d_model];
    for i in 0..d_model / 2 {
        let freq = 10000f64.powf(-((2 * i) as f64) / d_model as f64);
        for t in 0..t_len {
            let angle = t as f64 * freq;
            data[t * d_model + 2 * i] = angle.sin();
            data[t * d_model + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(&[t_len, d_model], data)
}

/// Trainable `[T, d_model]` table drawn from N(0, init_std).
pub fn learnable_pe_init<R: Rng + ?Sized>(t_len: usize, d_model: usize, init_std: f64, rng: &mut R) -> Result<Tensor> {
    Ok(Tensor::randn(&[t_len, d_model], init_std, rng)?.with_requires_grad(true))
}

/// Rotates each `[.., T, d_head]` row pair-wise by `positions[t] * theta_i`.
pub fn rope_rotate(x: &Tensor, positions: &[usize]) -> Result<Tensor> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::contract(format!("rope needs [..., T, d_head], got {s:?}")));
    }
    let (t_len, dh) = (s[s.len() - 2], s[s.len() - 1]);
    if dh % 2 != 0 {
        return Err(Error::contract(format!("rope needs an even head dimension, got {dh}")));
    }
    if positions.len() != t_len {
        return Err(Error::dim("rope", s, &[positions.len()]));
    }
    let (cos, sin) = rope_tables(positions, dh);
    Tensor::new(s, rope_apply(x.data(), &cos, &sin, t_len, dh, false))
}

/// `2^(-8 (h + 1) / heads)` for each head.
pub fn alibi_slopes(heads: usize) -> Vec<f64> {
    (0..heads)
        .map(|h| 2f64.powf(-8.0 * (h + 1) as f64 / heads as f64))
        .collect()
}

/// `[heads, T, T]` logit bias `-slope_h |i - j|`.
///
/// With `causal`, keys after the query are masked with `-inf` and the
/// remaining bias is `-slope_h (i - j)`.
pub fn alibi_bias(t_len: usize, heads: usize, causal: bool) -> Result<Tensor> {
    if heads == 0 {
        return Err(Error::contract("alibi needs at least one head"));
    }
    let slopes = alibi_slopes(heads);
    let mut data = Vec::with_capacity(heads * t_len * t_len);
    for slope in slopes {
        for i in 0..t_len {
            for j in 0..t_len {
                data.push(if causal && j > i {
                    f64::NEG_INFINITY
                } else {
                    -slope * i.abs_diff(j) as f64
                });
            }
        }
    }
    Tensor::new(&[heads, t_len, t_len], data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PeKind {
    None,
    Sinusoidal,
    Learnable,
    Dywpe,
    Swpe,
    SingleScale,
    Rope,
    Alibi,
}

impl PeKind {
    pub const ALL: [PeKind; 8] = [
        PeKind::None,
        PeKind::Sinusoidal,
        PeKind::Learnable,
        PeKind::Dywpe,
        PeKind::Swpe,
        PeKind::SingleScale,
        PeKind::Rope,
        PeKind::Alibi,
    ];

    /// True for encodings computed from the wavelet pipeline.
    pub fn is_wavelet(self) -> bool {
        matches!(self, PeKind::Dywpe | PeKind::Swpe | PeKind::SingleScale)
    }
}

impl fmt::Display for PeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeKind::None => "none",
            PeKind::Sinusoidal => "sinusoidal",
            PeKind::Learnable => "learnable",
            PeKind::Dywpe => "dywpe",
            PeKind::Swpe => "swpe",
            PeKind::SingleScale => "single-scale",
            PeKind::Rope => "rope",
            PeKind::Alibi => "alibi",
        })
    }
}

impl FromStr for PeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        PeKind::ALL
            .into_iter()
            .find(|k| k.to_string() == key)
            .ok_or_else(|| Error::Config(format!("unknown positional encoding '{s}'")))
    }
}

/// How an attention-level encoding enters the attention computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionHook {
    /// Queries and keys are rotated before the scores are formed.
    Rotary,
    /// A fixed bias is added to the logits before the softmax.
    Bias { causal: bool },
}

/// Where a [`PeKind`] acts: additively on the token embeddings, or inside
/// every attention block. Never both.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeStrategy {
    pub kind: PeKind,
    pub additive: bool,
    pub attention_hook: Option<AttentionHook>,
}

impl PeStrategy {
    pub fn new(kind: PeKind, alibi_causal: bool) -> Self {
        let attention_hook = match kind {
            PeKind::Rope => Some(AttentionHook::Rotary),
            PeKind::Alibi => Some(AttentionHook::Bias { causal: alibi_causal }),
            _ => None,
        };
        Self {
            kind,
            additive: attention_hook.is_none(),
            attention_hook,
        }
    }

    /// Exactly one injection mechanism, and the one the kind calls for.
    pub fn validate(&self) -> Result<()> {
        let expected = PeStrategy::new(
            self.kind,
            matches!(self.attention_hook, Some(AttentionHook::Bias { causal: true })),
        );
        if self.additive == self.attention_hook.is_some() || *self != expected {
            return Err(Error::contract(format!(
                "inconsistent injection for {}: {self:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn sinusoidal_rows() {
        let pe = sinusoidal_pe(5, 6).unwrap();
        assert_eq!(&pe.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        for t in 0..5 {
            let norm: f64 = (0..6).map(|k| pe.at(&[t, k]).powi(2)).sum();
            assert!((norm - 3.0).abs() < 1e-12);
        }
        let pe = sinusoidal_pe(2, 4).unwrap();
        assert!((pe.at(&[1, 0]) - 0.841471).abs() < 1e-6);
        assert!((pe.at(&[1, 1]) - 0.540302).abs() < 1e-6);
        assert!((pe.at(&[1, 2]) - 0.01f64.sin()).abs() < 1e-15);
        assert!(sinusoidal_pe(4, 5).is_err());
    }

    #[test]
    fn learnable_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = learnable_pe_init(7, 4, 0.0, &mut rng).unwrap();
        assert_eq!(t.shape(), &[7, 4]);
        assert!(t.requires_grad());
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rope_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[2, 2, 3, 8], -2.0, 2.0, &mut rng).unwrap();
        assert_eq!(rope_rotate(&x, &[0, 0, 0]).unwrap(), x);
        let r = rope_rotate(&x, &[0, 4, 9]).unwrap();
        for (a, b) in x.data().chunks(2).zip(r.data().chunks(2)) {
            let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            assert!((na - nb).abs() < 1e-12);
        }
        assert!(rope_rotate(&Tensor::zeros(&[1, 2, 3]).unwrap(), &[0, 1]).is_err());

        let q = Tensor::uniform(&[1, 1, 1, 8], -2.0, 2.0, &mut rng).unwrap();
        let k = Tensor::uniform(&[1, 1, 1, 8], -2.0, 2.0, &mut rng).unwrap();
        let dot = |m: usize, n: usize| -> f64 {
            let a = rope_rotate(&q, &[m]).unwrap();
            let b = rope_rotate(&k, &[n]).unwrap();
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
        };
        assert!((dot(3, 1) - dot(7, 5)).abs() < 1e-10);
    }

    #[test]
    fn alibi_tables() {
        let slopes = alibi_slopes(8);
        let expect: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
        assert_eq!(slopes, expect);
        let b = alibi_bias(3, 8, false).unwrap();
        for h in 0..8 {
            for i in 0..3 {
                assert_eq!(b.at(&[h, i, i]), 0.0);
            }
        }
        assert_eq!(&b.data()[..3], &[0.0, -0.5, -1.0]);
        let c = alibi_bias(3, 2, true).unwrap();
        assert_eq!(c.at(&[0, 0, 1]), f64::NEG_INFINITY);
        assert_eq!(c.at(&[0, 2, 0]), -2.0 * 2f64.powi(-4));
        assert!(alibi_bias(3, 0, false).is_err());
    }

    #[test]
    fn strategy_injection_is_exclusive() {
        for kind in PeKind::ALL {
            let s = PeStrategy::new(kind, false);
            s.validate().unwrap();
            assert_ne!(s.additive, s.attention_hook.is_some());
            assert_eq!(kind.to_string().parse::<PeKind>().unwrap(), kind);
        }
        let broken = PeStrategy {
            kind: PeKind::Rope,
            additive: true,
            attention_hook: Some(AttentionHook::Rotary),
        };
        assert!(broken.validate().is_err());
        assert!("tape".parse::<PeKind>().is_err());
        assert_eq!("single_scale".parse::<PeKind>().unwrap(), PeKind::SingleScale);
    }
}
