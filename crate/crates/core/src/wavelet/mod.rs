//! Periodized multi-level DWT/IDWT along axis 1 of `[B, L, C]` tensors.
//!
//! Plain functions work on [`Tensor`]s; the `*_var` variants record onto a
//! [`Tape`] so gradients reach every band.

mod filters;
pub(crate) mod kernel;
mod pyramid;

pub use filters::{FilterBank, WaveletName};
pub(crate) use pyramid::level_lengths;
pub use pyramid::CoeffPyramid;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Largest `J` such that `(filter_len - 1) * 2^J <= length`.
///
/// This keeps the signal entering each level at least as long as the filter
/// support minus one. Returns 0 when `length < filter_len`.
pub fn max_level(length: usize, filter_len: usize) -> usize {
    if filter_len < 2 || length < filter_len {
        return 0;
    }
    let base = filter_len - 1;
    let mut j = 0;
    while base << (j + 1) <= length {
        j += 1;
    }
    j
}

fn dims3(op: &str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [b, l, c] => Ok((b, l, c)),
        _ => Err(Error::contract(format!("{op} needs a [B, L, C] tensor, got {shape:?}"))),
    }
}

fn check_levels(len: usize, fb: &FilterBank, levels: usize) -> Result<()> {
    let max = max_level(len, fb.len());
    if levels == 0 || levels > max {
        return Err(Error::contract(format!(
            "J = {levels} out of range for length {len} with {} (max_level = {max})",
            fb.name
        )));
    }
    Ok(())
}

/// One analysis level: `([B, ceil(L/2), C], [B, ceil(L/2), C])`.
pub fn dwt_level(x: &Tensor, fb: &FilterBank) -> Result<(Tensor, Tensor)> {
    let (b, l, c) = dims3("dwt_level", x.shape())?;
    if l < 2 {
        return Err(Error::contract(format!("dwt_level needs L >= 2, got {l}")));
    }
    let n = kernel::band_len(l);
    let ca = kernel::analyze(x.data(), b, l, c, &fb.dec_lo);
    let cd = kernel::analyze(x.data(), b, l, c, &fb.dec_hi);
    Ok((Tensor::new(&[b, n, c], ca)?, Tensor::new(&[b, n, c], cd)?))
}

/// One synthesis level; `target_len` must be `2n` or `2n - 1`.
pub fn idwt_level(ca: &Tensor, cd: &Tensor, fb: &FilterBank, target_len: usize) -> Result<Tensor> {
    if ca.shape() != cd.shape() {
        return Err(Error::dim("idwt_level", ca.shape(), cd.shape()));
    }
    let (b, n, c) = dims3("idwt_level", ca.shape())?;
    if target_len != 2 * n && target_len + 1 != 2 * n {
        return Err(Error::contract(format!(
            "idwt_level target length {target_len} incompatible with band length {n}"
        )));
    }
    let mut out = vec![0.0; b * target_len * c];
    kernel::synthesize_into(ca.data(), b, n, c, &fb.dec_lo, target_len, &mut out);
    kernel::synthesize_into(cd.data(), b, n, c, &fb.dec_hi, target_len, &mut out);
    Tensor::new(&[b, target_len, c], out)
}

/// `levels`-level decomposition, `1 <= levels <= max_level(L, filter_len)`.
pub fn dwt_multi(x: &Tensor, fb: &FilterBank, levels: usize) -> Result<CoeffPyramid> {
    let (_, l, _) = dims3("dwt_multi", x.shape())?;
    check_levels(l, fb, levels)?;
    let mut details = Vec::with_capacity(levels);
    let mut approx = x.clone().with_requires_grad(false);
    for _ in 0..levels {
        let (a, d) = dwt_level(&approx, fb)?;
        details.push(d);
        approx = a;
    }
    details.reverse();
    Ok(CoeffPyramid {
        approx,
        details,
        level_lengths: level_lengths(l, levels)?,
    })
}

/// Inverse of [`dwt_multi`].
pub fn idwt_multi(p: &CoeffPyramid, fb: &FilterBank) -> Result<Tensor> {
    p.validate(|t| t.shape().to_vec())?;
    let mut cur = p.approx.clone();
    for (k, d) in p.details.iter().enumerate() {
        let target = p.level_lengths[p.levels() - 1 - k];
        cur = idwt_level(&cur, d, fb, target)?;
    }
    Ok(cur)
}

/// [`dwt_multi`] recorded on a tape.
pub fn dwt_multi_var(tape: &mut Tape, x: Var, fb: &FilterBank, levels: usize) -> Result<CoeffPyramid<Var>> {
    let (_, l, _) = dims3("dwt_multi", tape.shape(x))?;
    check_levels(l, fb, levels)?;
    let mut details = Vec::with_capacity(levels);
    let mut approx = x;
    for _ in 0..levels {
        let d = tape.dwt_band(approx, &fb.dec_hi)?;
        approx = tape.dwt_band(approx, &fb.dec_lo)?;
        details.push(d);
    }
    details.reverse();
    Ok(CoeffPyramid {
        approx,
        details,
        level_lengths: level_lengths(l, levels)?,
    })
}

/// [`idwt_multi`] recorded on a tape.
pub fn idwt_multi_var(tape: &mut Tape, p: &CoeffPyramid<Var>, fb: &FilterBank) -> Result<Var> {
    p.validate(|&v| tape.shape(v).to_vec())?;
    let mut cur = p.approx;
    for (k, &d) in p.details.iter().enumerate() {
        let target = p.level_lengths[p.levels() - 1 - k];
        cur = tape.idwt(cur, d, &fb.dec_lo, &fb.dec_hi, target)?;
    }
    Ok(cur)
}
