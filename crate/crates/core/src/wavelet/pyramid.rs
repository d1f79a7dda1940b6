use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::wavelet::kernel::band_len;

/// Bands of a `J`-level decomposition.
///
/// `details` runs from the coarsest band (level `J`) to the finest (level 1).
/// `level_lengths[j]` is the signal length fed into level `j + 1`, so
/// `level_lengths[0]` is the original length.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffPyramid<T = Tensor> {
    pub approx: T,
    pub details: Vec<T>,
    pub level_lengths: Vec<usize>,
}

impl<T> CoeffPyramid<T> {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn signal_len(&self) -> usize {
        self.level_lengths[0]
    }

    /// Approximation band followed by the detail bands, coarsest first.
    pub fn bands(&self) -> impl Iterator<Item = &T> {
        std::iter::once(&self.approx).chain(&self.details)
    }

    /// Band length at level `level` (1-based).
    pub fn band_len_at(&self, level: usize) -> usize {
        band_len(self.level_lengths[level - 1])
    }

    /// Checks the length bookkeeping and that every band is `[B, n, C]` with
    /// the `n` it implies.
    pub(crate) fn validate(&self, shape_of: impl Fn(&T) -> Vec<usize>) -> Result<()> {
        let j = self.details.len();
        if j == 0 {
            return Err(Error::contract("pyramid has no detail bands"));
        }
        if self.level_lengths.len() != j {
            return Err(Error::contract(format!(
                "pyramid has {j} detail bands but {} level lengths",
                self.level_lengths.len()
            )));
        }
        for w in self.level_lengths.windows(2) {
            if w[0] < 2 || w[1] != band_len(w[0]) {
                return Err(Error::contract(format!(
                    "corrupted level lengths {:?}: {} does not halve to {}",
                    self.level_lengths, w[0], w[1]
                )));
            }
        }
        if self.level_lengths[j - 1] < 2 {
            return Err(Error::contract(format!(
                "corrupted level lengths {:?}",
                self.level_lengths
            )));
        }
        let a = shape_of(&self.approx);
        if a.len() != 3 || a[1] != self.band_len_at(j) {
            return Err(Error::contract(format!(
                "approximation band shape {a:?} does not match level lengths {:?}",
                self.level_lengths
            )));
        }
        for (k, d) in self.details.iter().enumerate() {
            let s = shape_of(d);
            let level = j - k;
            if s.len() != 3 || s[0] != a[0] || s[2] != a[2] || s[1] != self.band_len_at(level) {
                return Err(Error::contract(format!(
                    "detail band for level {level} has shape {s:?}, expected [{}, {}, {}]",
                    a[0],
                    self.band_len_at(level),
                    a[2]
                )));
            }
        }
        Ok(())
    }
}

impl CoeffPyramid<Tensor> {
    /// All-zero pyramid for a `[batch, len, ch]` signal decomposed to `levels`.
    pub fn zeros(batch: usize, len: usize, ch: usize, levels: usize) -> Result<Self> {
        let lengths = level_lengths(len, levels)?;
        let band = |n: usize| Tensor::zeros(&[batch, band_len(n), ch]);
        let details = lengths.iter().rev().map(|&n| band(n)).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            approx: band(lengths[levels - 1])?,
            details,
            level_lengths: lengths,
        })
    }

    /// Sum of squared coefficients over all bands.
    pub fn energy(&self) -> f64 {
        self.bands().map(Tensor::norm_sq).sum()
    }

    /// Largest absolute bandwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.level_lengths != other.level_lengths {
            return Err(Error::contract("pyramids have different level lengths"));
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.bands().zip(other.bands()) {
            worst = worst.max(a.max_abs_diff(b)?);
        }
        Ok(worst)
    }
}

/// Input length at each of `levels` successive halvings of `len`.
pub(crate) fn level_lengths(len: usize, levels: usize) -> Result<Vec<usize>> {
    if levels == 0 {
        return Err(Error::contract("decomposition needs at least one level"));
    }
    let mut out = Vec::with_capacity(levels);
    let mut n = len;
    for _ in 0..levels {
        if n < 2 {
            return Err(Error::contract(format!("length {len} cannot be halved {levels} times")));
        }
        out.push(n);
        n = band_len(n);
    }
    Ok(out)
}
