//! Orthonormal Daubechies filter banks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletName {
    Haar,
    Db2,
    Db4,
}

impl WaveletName {
    pub const ALL: [WaveletName; 3] = [WaveletName::Haar, WaveletName::Db2, WaveletName::Db4];

    pub fn filter_len(self) -> usize {
        match self {
            WaveletName::Haar => 2,
            WaveletName::Db2 => 4,
            WaveletName::Db4 => 8,
        }
    }
}

impl fmt::Display for WaveletName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WaveletName::Haar => "haar",
            WaveletName::Db2 => "db2",
            WaveletName::Db4 => "db4",
        })
    }
}

impl FromStr for WaveletName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "haar" | "db1" => Ok(WaveletName::Haar),
            "db2" => Ok(WaveletName::Db2),
            "db4" => Ok(WaveletName::Db4),
            other => Err(Error::Config(format!(
                "unknown wavelet '{other}' (expected haar, db2 or db4)"
            ))),
        }
    }
}

// Published db4 scaling filter, decomposition low-pass in convolution order.
const DB4_DEC_LO: [f64; 8] = [
    -0.010597401785069032,
    0.0328830116668852,
    0.030841381835560764,
    -0.18703481171909309,
    -0.027983769416859854,
    0.6308807679298589,
    0.7148465705529157,
    0.2303778133088965,
];

/// Two-channel orthogonal filter bank.
///
/// Taps follow the usual published ordering of the decomposition filters.
/// The transforms in this crate *correlate* with `dec_lo`/`dec_hi`
/// (coefficient `k` reads the window starting at sample `2k`), and the
/// reconstruction filters are the time-reversed decomposition filters.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub name: WaveletName,
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl FilterBank {
    pub fn new(name: WaveletName) -> Self {
        let dec_lo: Vec<f64> = match name {
            WaveletName::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletName::Db2 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 - s3) / d, (3.0 - s3) / d, (3.0 + s3) / d, (1.0 + s3) / d]
            }
            WaveletName::Db4 => DB4_DEC_LO.to_vec(),
        };
        // Quadrature mirror: hi[n] = (-1)^(n+1) lo[N-1-n].
        let n = dec_lo.len();
        let dec_hi: Vec<f64> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                sign * dec_lo[n - 1 - i]
            })
            .collect();
        let rec_lo = dec_lo.iter().rev().copied().collect();
        let rec_hi = dec_hi.iter().rev().copied().collect();
        Self {
            name,
            dec_lo,
            dec_hi,
            rec_lo,
            rec_hi,
        }
    }

    pub fn haar() -> Self {
        Self::new(WaveletName::Haar)
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dot_shift(a: &[f64], b: &[f64], shift: usize) -> f64 {
        (0..a.len())
            .filter(|&n| n + shift < b.len())
            .map(|n| a[n] * b[n + shift])
            .sum()
    }

    #[test]
    fn orthonormal_taps() {
        for name in WaveletName::ALL {
            let fb = FilterBank::new(name);
            assert_eq!(fb.len(), name.filter_len());
            assert_eq!(fb.dec_hi.len(), fb.len());
            for shift in (0..fb.len()).step_by(2) {
                let expect = if shift == 0 { 1.0 } else { 0.0 };
                assert!(
                    (dot_shift(&fb.dec_lo, &fb.dec_lo, shift) - expect).abs() < 1e-12,
                    "{name} lo shift {shift}"
                );
                assert!(
                    (dot_shift(&fb.dec_hi, &fb.dec_hi, shift) - expect).abs() < 1e-12,
                    "{name} hi shift {shift}"
                );
                assert!(dot_shift(&fb.dec_lo, &fb.dec_hi, shift).abs() < 1e-12);
                assert!(dot_shift(&fb.dec_hi, &fb.dec_lo, shift).abs() < 1e-12);
            }
            let sum: f64 = fb.dec_lo.iter().sum();
            assert!((sum - std::f64::consts::SQRT_2).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_filters_are_reversed() {
        let fb = FilterBank::new(WaveletName::Db2);
        let mut r = fb.rec_lo.clone();
        r.reverse();
        assert_eq!(r, fb.dec_lo);
        let mut r = fb.rec_hi.clone();
        r.reverse();
        assert_eq!(r, fb.dec_hi);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn matches_published_haar_and_db2() {
        // Reference values as published by PyWavelets.
        let haar = FilterBank::haar();
        assert_eq!(haar.dec_hi, vec![-0.7071067811865476, 0.7071067811865476]);
        let db2 = FilterBank::new(WaveletName::Db2);
        let published = [
            -0.12940952255126037,
            0.2241438680420134,
            0.8365163037378079,
            0.48296291314453416,
        ];
        for (a, b) in db2.dec_lo.iter().zip(published) {
            assert!((a - b).abs() < 1e-14);
        }
        let published_hi = [
            -0.48296291314453416,
            0.8365163037378079,
            -0.2241438680420134,
            -0.12940952255126037,
        ];
        for (a, b) in db2.dec_hi.iter().zip(published_hi) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("Haar".parse::<WaveletName>().unwrap(), WaveletName::Haar);
        assert_eq!("db4".parse::<WaveletName>().unwrap(), WaveletName::Db4);
        assert!("sym5".parse::<WaveletName>().is_err());
    }
}
