//! Labelled time-series datasets: synthetic generators, a long-format CSV
//! reader/writer, and per-channel standardization.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetMeta {
    pub name: String,
    pub seq_len: usize,
    pub d_x: usize,
    pub num_classes: usize,
    /// Stats used by the last [`normalize`] call, if any.
    pub norm: Option<NormStats>,
    /// `[start, end)` of the event window, for generators that place one.
    pub event_window: Option<(usize, usize)>,
}

/// `x` is `[N, L, d_x]`; `y[i]` is the class of sample `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub meta: DatasetMeta,
}

impl DatasetSplit {
    pub fn new(x: Tensor, y: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        let s = x.shape();
        if s.len() != 3 || s[0] != y.len() || s[1] != meta.seq_len || s[2] != meta.d_x {
            return Err(Error::contract(format!(
                "dataset tensor {s:?} does not match {} labels of length {} with {} channels",
                y.len(),
                meta.seq_len,
                meta.d_x
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= meta.num_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {} classes",
                meta.num_classes
            )));
        }
        if !x.is_finite() {
            return Err(Error::Numeric("dataset contains non-finite values".into()));
        }
        Ok(Self { x, y, meta })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Samples `idx` as a `[idx.len(), L, d_x]` tensor plus their labels.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let row = self.meta.seq_len * self.meta.d_x;
        let mut data = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            data.extend_from_slice(&self.x.data()[i * row..(i + 1) * row]);
        }
        let x = Tensor::new(&[idx.len(), self.meta.seq_len, self.meta.d_x], data)?;
        Ok((x, idx.iter().map(|&i| self.y[i]).collect()))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.meta.num_classes];
        for &l in &self.y {
            counts[l] += 1;
        }
        counts
    }
}

/// Balanced labels `0..classes` in random order.
fn balanced_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(rng);
    y
}

fn noise(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma.max(0.0)).expect("finite non-negative sigma")
}

/// Knobs of [`gen_sigctx_with`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SigCtxOptions {
    /// Standard deviation of the additive white noise.
    pub noise: f64,
    /// Event window length as a fraction of `L`.
    pub window_frac: f64,
    /// Window start as a fraction of `L`.
    pub window_pos: f64,
    /// Oscillation periods (in samples) of the low- and high-frequency
    /// bursts.
    pub periods: (f64, f64),
    /// Range of the end-to-end rise or fall of the background.
    pub trend: (f64, f64),
    /// Range of the burst amplitude.
    pub amplitude: (f64, f64),
    /// Width of the background's constant steps; 1 gives a straight ramp.
    pub step: usize,
}

impl Default for SigCtxOptions {
    fn default() -> Self {
        Self {
            noise: 0.1,
            window_frac: 0.125,
            window_pos: 0.25,
            periods: (16.0, 8.0),
            trend: (1.0, 2.0),
            amplitude: (0.5, 1.5),
            step: 16,
        }
    }
}

/// [`gen_sigctx_with`] at default options.
pub fn gen_sigctx(n: usize, len: usize, seed: u64) -> Result<DatasetSplit> {
    gen_sigctx_with(n, len, seed, &SigCtxOptions::default())
}

/// Four classes: burst frequency (low, high) × background (rising, falling).
///
/// Class `k` has a high-frequency burst iff `k & 1` and a falling
/// background iff `k & 2`. The background moves in constant steps of
/// `opts.step` samples. Every sample places its burst in the same window,
/// so the time index alone carries no label information. Burst amplitude,
/// phase, trend magnitude and offset are drawn per sample.
pub fn gen_sigctx_with(n: usize, len: usize, seed: u64, opts: &SigCtxOptions) -> Result<DatasetSplit> {
    if len < 64 {
        return Err(Error::contract(format!("sigctx needs L >= 64, got {len}")));
    }
    if !(opts.window_frac > 0.0 && opts.window_pos >= 0.0 && opts.window_pos + opts.window_frac <= 1.0) {
        return Err(Error::Config(format!(
            "event window [{}, {}) does not fit in the sequence",
            opts.window_pos,
            opts.window_pos + opts.window_frac
        )));
    }
    let step = opts.step.clamp(1, len / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = (opts.window_pos * len as f64).round() as usize;
    let width = ((opts.window_frac * len as f64).round() as usize).max(1);
    let end = (start + width).min(len);
    let y = balanced_labels(n, 4, &mut rng);
    let eps = noise(opts.noise);
    let mut data = Vec::with_capacity(n * len);
    for &label in &y {
        let period = if label & 1 == 1 { opts.periods.1 } else { opts.periods.0 };
        let direction = if label & 2 == 2 { -1.0 } else { 1.0 };
        let rise = direction * rng.random_range(opts.trend.0..=opts.trend.1);
        let offset = rng.random_range(-0.5..0.5);
        let amp = rng.random_range(opts.amplitude.0..=opts.amplitude.1);
        let phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..len {
            let stair = (t / step * step) as f64 / (len - step) as f64;
            let mut v = offset + rise * (stair - 0.5);
            if (start..end).contains(&t) {
                v += amp * (2.0 * PI * (t - start) as f64 / period + phase).sin();
            }
            data.push(v + eps.sample(&mut rng));
        }
    }
    let meta = DatasetMeta {
        name: "sigctx".into(),
        seq_len: len,
        d_x: 1,
        num_classes: 4,
        norm: None,
        event_window: Some((start, end)),
    };
    DatasetSplit::new(Tensor::new(&[n, len, 1], data)?, y, meta)
}

/// Knobs of [`gen_multiscale_with`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiScaleOptions {
    pub noise: f64,
    /// Amplitude of the coarse oscillation.
    pub coarse_amp: f64,
    /// Amplitude of the finest-scale alternation.
    pub fine_amp: f64,
    /// Range of the end-to-end drift of the random background.
    pub drift: f64,
    /// Number of slow background waves, with periods drawn between `L / 2`
    /// and `L`.
    pub waves: usize,
    /// Upper bound of each wave's amplitude.
    pub wave_amp: f64,
}

impl Default for MultiScaleOptions {
    fn default() -> Self {
        Self {
            noise: 0.1,
            coarse_amp: 1.0,
            fine_amp: 0.5,
            drift: 6.0,
            waves: 3,
            wave_amp: 4.0,
        }
    }
}

/// [`gen_multiscale_with`] at default options.
pub fn gen_multiscale(n: usize, len: usize, j_true: usize, seed: u64) -> Result<DatasetSplit> {
    gen_multiscale_with(n, len, j_true, seed, &MultiScaleOptions::default())
}

/// Two classes defined by the phase relation of two scales.
///
/// Each sample is a drifting background with a few slow waves, a coarse
/// oscillation with period `2^(j_true + 1)` and random phase, and an alternating `(-1)^t`
/// component switched on only during the positive half-cycles of the coarse
/// oscillation (class 1) or only during the negative ones (class 0).
pub fn gen_multiscale_with(
    n: usize,
    len: usize,
    j_true: usize,
    seed: u64,
    opts: &MultiScaleOptions,
) -> Result<DatasetSplit> {
    if j_true == 0 || j_true >= usize::BITS as usize - 1 || 1usize << (j_true + 1) > len {
        return Err(Error::contract(format!(
            "multiscale needs 2^(J_true + 1) <= L, got J_true = {j_true}, L = {len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = (1usize << (j_true + 1)) as f64;
    let y = balanced_labels(n, 2, &mut rng);
    let eps = noise(opts.noise);
    let mut data = Vec::with_capacity(n * len);
    for &label in &y {
        let phase = rng.random_range(0.0..2.0 * PI);
        let drift = rng.random_range(-opts.drift..=opts.drift);
        let offset = rng.random_range(-1.0..1.0);
        let waves: Vec<(f64, f64, f64)> = (0..opts.waves)
            .map(|_| {
                (
                    rng.random_range(0.0..=opts.wave_amp),
                    rng.random_range(len as f64 / 2.0..=len as f64),
                    rng.random_range(0.0..2.0 * PI),
                )
            })
            .collect();
        let want = if label == 1 { 1.0 } else { -1.0 };
        for t in 0..len {
            let u = t as f64 / (len - 1) as f64 - 0.5;
            let background = offset
                + drift * u
                + waves
                    .iter()
                    .map(|&(a, p, ph)| a * (2.0 * PI * t as f64 / p + ph).sin())
                    .sum::<f64>();
            let coarse = (2.0 * PI * t as f64 / period + phase).sin();
            let alt = if t % 2 == 0 { 1.0 } else { -1.0 };
            let fine = if coarse * want > 0.0 { opts.fine_amp * alt } else { 0.0 };
            data.push(background + opts.coarse_amp * coarse + fine + eps.sample(&mut rng));
        }
    }
    let meta = DatasetMeta {
        name: format!("multiscale-j{j_true}"),
        seq_len: len,
        d_x: 1,
        num_classes: 2,
        norm: None,
        event_window: None,
    };
    DatasetSplit::new(Tensor::new(&[n, len, 1], data)?, y, meta)
}

/// Channel means and standard deviations over all samples and steps.
pub fn channel_stats(split: &DatasetSplit) -> NormStats {
    let c = split.meta.d_x;
    let count = (split.len() * split.meta.seq_len) as f64;
    let mut mean = vec![0.0; c];
    for row in split.x.data().chunks(c) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; c];
    for row in split.x.data().chunks(c) {
        for k in 0..c {
            var[k] += (row[k] - mean[k]).powi(2);
        }
    }
    let std = var.iter().map(|v| (v / count).sqrt()).collect();
    NormStats { mean, std }
}

/// Standardizes `split` per channel with statistics of `stats_from`
/// (normally the training split). Standard deviations are floored at 1e-8.
pub fn normalize(split: &DatasetSplit, stats_from: &DatasetSplit) -> Result<DatasetSplit> {
    if split.meta.d_x != stats_from.meta.d_x {
        return Err(Error::contract(format!(
            "cannot normalize {} channels with stats of {}",
            split.meta.d_x, stats_from.meta.d_x
        )));
    }
    let stats = channel_stats(stats_from);
    let c = split.meta.d_x;
    let mut x = split.x.clone();
    for row in x.data_mut().chunks_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s.max(1e-8);
        }
    }
    let mut meta = split.meta.clone();
    meta.norm = Some(stats);
    DatasetSplit::new(x, split.y.clone(), meta)
}

/// Optional expectations checked by [`load_csv`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvSchema {
    pub seq_len: Option<usize>,
    pub d_x: Option<usize>,
    /// Defaults to `max(label) + 1`.
    pub num_classes: Option<usize>,
}

fn parse_err(row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        location: format!("row {row}"),
        message: message.into(),
    }
}

/// Reads a long-format file with header `sample_id,t,ch_0,...,label`.
///
/// Rows of one sample must be contiguous with `t` running `0..L`; every
/// sample must have the same `L` and a single integer label. Parse errors
/// are located as `path:row N`, counting the header as row 1.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<DatasetSplit> {
    read_csv(path, schema).map_err(|e| match e {
        Error::Parse { location, message } => Error::Parse {
            location: format!("{}:{location}", path.display()),
            message,
        },
        other => other,
    })
}

fn read_csv(path: &Path, schema: &CsvSchema) -> Result<DatasetSplit> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!(),
            },
            _ => Error::Csv(e),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let d_x = header.len().saturating_sub(3);
    let expected: Vec<String> = ["sample_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((0..d_x).map(|k| format!("ch_{k}")))
        .chain(["label".to_string()])
        .collect();
    if header.len() < 4 || header != expected {
        return Err(parse_err(
            1,
            format!("header must be sample_id,t,ch_0..ch_{{d_x-1}},label; got {header:?}"),
        ));
    }
    if let Some(want) = schema.d_x {
        if want != d_x {
            return Err(parse_err(
                1,
                format!("schema declares d_x = {want}, file has {d_x} channels"),
            ));
        }
    }

    let mut ids: Vec<String> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut lens: Vec<usize> = Vec::new();
    let mut first_row: BTreeMap<String, usize> = BTreeMap::new();
    let mut data: Vec<f64> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| parse_err(row, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                row,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let id = rec[0].to_string();
        let t: usize = rec[1]
            .parse()
            .map_err(|_| parse_err(row, format!("time index '{}' is not a non-negative integer", &rec[1])))?;
        let label: usize = rec[d_x + 2]
            .parse()
            .map_err(|_| parse_err(row, format!("label '{}' is not a non-negative integer", &rec[d_x + 2])))?;
        if ids.last() != Some(&id) {
            if first_row.contains_key(&id) {
                return Err(parse_err(row, format!("rows of sample '{id}' are not contiguous")));
            }
            if let (Some(prev), Some(&n)) = (ids.last(), lens.last()) {
                check_len(prev, n, &lens, schema, row)?;
            }
            first_row.insert(id.clone(), row);
            ids.push(id.clone());
            labels.push(label);
            lens.push(0);
        }
        let n = lens.last_mut().expect("a sample is open");
        if t != *n {
            return Err(parse_err(
                row,
                format!("sample '{id}': expected t = {n}, found t = {t}"),
            ));
        }
        if label != *labels.last().expect("a sample is open") {
            return Err(parse_err(row, format!("sample '{id}' changes label mid-sequence")));
        }
        for k in 0..d_x {
            let v: f64 = rec[k + 2]
                .parse()
                .map_err(|_| parse_err(row, format!("value '{}' in ch_{k} is not a number", &rec[k + 2])))?;
            if !v.is_finite() {
                return Err(parse_err(row, format!("value in ch_{k} is not finite")));
            }
            data.push(v);
        }
        *n += 1;
    }
    let Some((last, &n)) = ids.last().zip(lens.last()) else {
        return Err(parse_err(2, "file has no samples"));
    };
    check_len(last, n, &lens, schema, 0)?;
    let seq_len = lens[0];
    let num_classes = match schema.num_classes {
        Some(c) => c,
        None => labels.iter().max().map_or(0, |m| m + 1).max(2),
    };
    let meta = DatasetMeta {
        name: path
            .file_stem()
            .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        seq_len,
        d_x,
        num_classes,
        norm: None,
        event_window: None,
    };
    DatasetSplit::new(Tensor::new(&[ids.len(), seq_len, d_x], data)?, labels, meta)
}

/// Length check for a finished sample; `row == 0` means end of file.
fn check_len(id: &str, n: usize, lens: &[usize], schema: &CsvSchema, row: usize) -> Result<()> {
    let want = schema.seq_len.unwrap_or(lens[0]);
    if n != want {
        let at = if row == 0 {
            "end of file".to_string()
        } else {
            format!("row {row}")
        };
        return Err(Error::Parse {
            location: at,
            message: format!("sample '{id}' has {n} time steps, expected {want}"),
        });
    }
    Ok(())
}

/// Writes `split` in the format read by [`load_csv`]; sample ids are
/// `0..N`.
pub fn write_csv(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("cannot open {}: {other:?}", path.display())),
    })?;
    let c = split.meta.d_x;
    let mut header = vec!["sample_id".to_string(), "t".to_string()];
    header.extend((0..c).map(|k| format!("ch_{k}")));
    header.push("label".into());
    w.write_record(&header)?;
    let l = split.meta.seq_len;
    for (i, &label) in split.y.iter().enumerate() {
        for t in 0..l {
            let mut rec = vec![i.to_string(), t.to_string()];
            let base = (i * l + t) * c;
            rec.extend(split.x.data()[base..base + c].iter().map(|v| v.to_string()));
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn sigctx_is_balanced_and_deterministic() {
        let a = gen_sigctx(102, 64, 5).unwrap();
        let counts = a.class_counts();
        assert!(counts.iter().all(|&c| c == 25 || c == 26), "{counts:?}");
        assert_eq!(a.meta.event_window, Some((16, 24)));
        let b = gen_sigctx(102, 64, 5).unwrap();
        assert_eq!(
            a.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(a.y, b.y);
        assert_ne!(gen_sigctx(102, 64, 6).unwrap().x, a.x);
        assert!(gen_sigctx(10, 32, 0).is_err());
    }

    #[test]
    fn multiscale_is_balanced_and_deterministic() {
        let a = gen_multiscale(51, 64, 3, 1).unwrap();
        let counts = a.class_counts();
        assert!(counts == vec![26, 25], "{counts:?}");
        assert_eq!(a, gen_multiscale(51, 64, 3, 1).unwrap());
        assert!(gen_multiscale(4, 8, 3, 0).is_err());
        assert!(gen_multiscale(4, 16, 3, 0).is_ok());
    }

    #[test]
    fn normalization() {
        let train = gen_sigctx(40, 64, 1).unwrap();
        let n = normalize(&train, &train).unwrap();
        let s = channel_stats(&n);
        assert!(s.mean[0].abs() < 1e-10 && (s.std[0] - 1.0).abs() < 1e-10);

        let test = gen_sigctx(40, 64, 2).unwrap();
        let by_train = normalize(&test, &train).unwrap();
        let by_self = normalize(&test, &test).unwrap();
        assert_ne!(by_train.x, by_self.x);

        let meta = DatasetMeta {
            name: "flat".into(),
            seq_len: 3,
            d_x: 2,
            num_classes: 2,
            norm: None,
            event_window: None,
        };
        let flat = DatasetSplit::new(
            Tensor::new(&[1, 3, 2], vec![4.0, 1.0, 4.0, 2.0, 4.0, 3.0]).unwrap(),
            vec![1],
            meta,
        )
        .unwrap();
        let z = normalize(&flat, &flat).unwrap();
        assert!(z.x.is_finite());
        assert_eq!(z.x.at(&[0, 1, 0]), 0.0);
    }

    #[test]
    fn csv_reads_hand_written_file() {
        let f = write("sample_id,t,ch_0,label\na,0,1.5,1\na,1,2,1\na,2,-3,1\nb,0,0,0\nb,1,0.25,0\nb,2,7,0\n");
        let s = load_csv(f.path(), &CsvSchema::default()).unwrap();
        assert_eq!(s.x.shape(), &[2, 3, 1]);
        assert_eq!(s.y, vec![1, 0]);
        assert_eq!(s.x.data(), &[1.5, 2.0, -3.0, 0.0, 0.25, 7.0]);
    }

    #[test]
    fn csv_errors_name_the_problem() {
        let ragged = write("sample_id,t,ch_0,label\na,0,1,0\na,1,1,0\na,2,1,0\nb,0,1,1\nb,1,1,1\nb,2,1,1\nb,3,1,1\n");
        let err = load_csv(ragged.path(), &CsvSchema::default()).unwrap_err().to_string();
        assert!(err.contains("'b'") && err.contains("4 time steps"), "{err}");

        let gap = write("sample_id,t,ch_0,label\na,0,1,0\na,2,1,0\n");
        let err = load_csv(gap.path(), &CsvSchema::default()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("expected t = 1"), "{err}");

        let label = write("sample_id,t,ch_0,label\na,0,1,x\n");
        let err = load_csv(label.path(), &CsvSchema::default()).unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("label"), "{err}");

        let bad_header = write("id,t,ch_0,label\na,0,1,0\n");
        assert!(load_csv(bad_header.path(), &CsvSchema::default()).is_err());

        let f = write("sample_id,t,ch_0,label\na,0,1,0\na,1,1,0\n");
        let schema = CsvSchema {
            seq_len: Some(3),
            ..CsvSchema::default()
        };
        assert!(load_csv(f.path(), &schema).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let split = gen_multiscale(6, 16, 2, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_csv(&split, &p1).unwrap();
        let back = load_csv(&p1, &CsvSchema::default()).unwrap();
        assert_eq!(back.x, split.x);
        assert_eq!(back.y, split.y);
        write_csv(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
