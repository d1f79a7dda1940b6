//! Raw single-level filter-bank loops over `[batch, len, channels]` buffers.
//!
//! Boundary handling is periodization: a level with input length `len`
//! produces `ceil(len / 2)` coefficients per band by circular correlation over
//! a period of `2 * ceil(len / 2)`. Odd inputs are padded with a single zero
//! sample, so analysis is an isometry and synthesis is its exact adjoint.

pub(crate) fn band_len(len: usize) -> usize {
    len.div_ceil(2)
}

/// `out[b, k, c] = sum_n taps[n] * x_pad[b, (2k + n) mod 2*half, c]`.
pub(crate) fn analyze(x: &[f64], batch: usize, len: usize, ch: usize, taps: &[f64]) -> Vec<f64> {
    let half = band_len(len);
    let period = 2 * half;
    let mut out = vec![0.0; batch * half * ch];
    for b in 0..batch {
        let xb = &x[b * len * ch..(b + 1) * len * ch];
        let ob = &mut out[b * half * ch..(b + 1) * half * ch];
        for k in 0..half {
            let row = &mut ob[k * ch..(k + 1) * ch];
            for (n, &h) in taps.iter().enumerate() {
                let idx = (2 * k + n) % period;
                if idx >= len {
                    continue;
                }
                let src = &xb[idx * ch..(idx + 1) * ch];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += h * s;
                }
            }
        }
    }
    out
}

/// Adjoint of [`analyze`]: scatters `coef[b, k, c] * taps[m]` onto sample
/// `(2k + m) mod 2n`, dropping the padded sample when `target_len` is odd.
/// Accumulates into `out`, which has shape `[batch, target_len, ch]`.
pub(crate) fn synthesize_into(
    coef: &[f64],
    batch: usize,
    n: usize,
    ch: usize,
    taps: &[f64],
    target_len: usize,
    out: &mut [f64],
) {
    let period = 2 * n;
    for b in 0..batch {
        let cb = &coef[b * n * ch..(b + 1) * n * ch];
        let ob = &mut out[b * target_len * ch..(b + 1) * target_len * ch];
        for k in 0..n {
            let src = &cb[k * ch..(k + 1) * ch];
            for (m, &h) in taps.iter().enumerate() {
                let idx = (2 * k + m) % period;
                if idx >= target_len {
                    continue;
                }
                let dst = &mut ob[idx * ch..(idx + 1) * ch];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += h * s;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthesis_is_adjoint_of_analysis() {
        // <A x, y> == <x, A^T y> for an odd length.
        let taps = [0.3, -0.2, 0.9, 0.1];
        let len = 7;
        let x: Vec<f64> = (0..len).map(|i| (i as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..band_len(len)).map(|i| (i as f64 * 1.3).cos()).collect();
        let ax = analyze(&x, 1, len, 1, &taps);
        let mut aty = vec![0.0; len];
        synthesize_into(&y, 1, band_len(len), 1, &taps, len, &mut aty);
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-14);
    }
}
