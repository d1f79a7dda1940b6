//! The experiment runner behind each CLI verb.
//!
//! Every command reads an [`ExperimentConfig`], writes fixed-name JSON/CSV
//! files under `output_dir` and returns an [`Outcome`] whose `passed` flag
//! becomes the process exit code.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardFault, Tape};
use crate::config::ExperimentConfig;
use crate::data::DatasetSplit;
use crate::dywpe::{self, DyWpe, DyWpeConfig, StaticWpe};
use crate::error::{Error, Result};
use crate::gradcheck::{finite_diff_check_with, GradCheckReport};
use crate::model::{ModelBundle, ModelConfig};
use crate::pe::{self, PeKind};
use crate::tensor::Tensor;
use crate::train::{self, History};
use crate::wavelet::{self, FilterBank, WaveletName};

/// Result of one command: whether its checks passed, and lines for the
/// terminal.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ----- gradcheck ----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradGroup {
    pub group: String,
    pub tensors: usize,
    pub elements: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutput {
    pub eps: f64,
    pub threshold: f64,
    pub fault: String,
    pub groups: Vec<GradGroup>,
    pub max_rel_error: f64,
    pub failed_groups: Vec<String>,
    pub passed: bool,
}

/// `layer0.attn.w_q -> layer0.attn`, `pe.scale_embed.D2 -> pe.scale_embed`,
/// `pe.w_g -> pe.w_g`, `w_channel -> w_channel`.
pub fn param_group(name: &str) -> String {
    let parts: Vec<&str> = name.split('.').collect();
    match parts.as_slice() {
        [single] => single.to_string(),
        ["pe", _] => name.to_string(),
        [init @ .., _] => init.join("."),
        [] => String::new(),
    }
}

fn group_report(section: &str, report: &GradCheckReport, store_sizes: &[usize], threshold: f64) -> Vec<GradGroup> {
    let mut groups: Vec<GradGroup> = Vec::new();
    for ((name, err), &size) in report.per_param.iter().zip(store_sizes) {
        let key = format!("{section}/{}", param_group(name));
        match groups.iter_mut().find(|g| g.group == key) {
            Some(g) => {
                g.tensors += 1;
                g.elements += size;
                g.max_rel_error = g.max_rel_error.max(*err);
            }
            None => groups.push(GradGroup {
                group: key,
                tensors: 1,
                elements: size,
                max_rel_error: *err,
                passed: true,
            }),
        }
    }
    for g in &mut groups {
        g.passed = g.max_rel_error < threshold;
    }
    groups
}

/// Model used by the gradient check: the configured dimensions, two input
/// channels, three classes, no dropout.
pub fn gradcheck_model_config(cfg: &ExperimentConfig) -> Result<ModelConfig> {
    let mut mc = cfg.model_config(cfg.pe, cfg.seeds.first().copied().unwrap_or(0), cfg.seq_len, 2, 3);
    mc.dropout = 0.0;
    if mc.d_model > 16 || mc.tokens() > 16 {
        return Err(Error::Config(format!(
            "gradcheck needs tiny dimensions (d_model <= 16, tokens <= 16); got d_model = {}, tokens = {}",
            mc.d_model,
            mc.tokens()
        )));
    }
    mc.validate()?;
    Ok(mc)
}

/// Finite-difference check of the encoder alone and of the full model.
pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mc = gradcheck_model_config(cfg)?;
    let fault = cfg.gradcheck_fault;
    let make_tape = || {
        if fault {
            Tape::with_fault(BackwardFault::SigmoidDerivative)
        } else {
            Tape::new()
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(mc.seed ^ 0x9c);

    // Encoder alone on the raw series, against a fixed random projection.
    let dc = DyWpeConfig {
        levels: mc
            .pe
            .levels
            .unwrap_or_else(|| dywpe::default_levels(mc.seq_len, mc.pe.wavelet.filter_len())),
        ..mc.dywpe_config()
    };
    dc.check_length(mc.seq_len)?;
    let mut enc = DyWpe::new(dc.clone(), &mut rng)?;
    let x = Tensor::randn(&[2, mc.seq_len, mc.d_x], 1.0, &mut rng)?;
    let weights = Tensor::randn(&[2, mc.seq_len, mc.d_model], 1.0, &mut rng)?;
    let params = enc.params.clone();
    let sizes: Vec<usize> = enc.store.iter().map(|(_, t)| t.numel()).collect();
    let alone = finite_diff_check_with(&mut enc.store, cfg.gradcheck_eps, make_tape, |tape, bound| {
        let xv = tape.constant(x.clone());
        let p = dywpe::dywpe_forward(tape, xv, &params, bound, &dc)?;
        let w = tape.constant(weights.clone());
        let prod = tape.mul(p, w)?;
        Ok(tape.sum(prod))
    })?;
    let mut groups = group_report("dywpe", &alone, &sizes, cfg.gradcheck_threshold);

    // Full model under cross-entropy.
    let mut model = ModelBundle::new(mc.clone())?;
    let xm = Tensor::randn(&[2, mc.seq_len, mc.d_x], 1.0, &mut rng)?;
    let labels = [0usize, 2];
    let frozen = model.clone();
    let sizes: Vec<usize> = model.store.iter().map(|(_, t)| t.numel()).collect();
    let full = finite_diff_check_with(&mut model.store, cfg.gradcheck_eps, make_tape, |tape, bound| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(0);
        let logits = frozen.forward(tape, bound, &xm, false, &mut drop_rng)?;
        tape.cross_entropy(logits, &labels)
    })?;
    groups.extend(group_report("model", &full, &sizes, cfg.gradcheck_threshold));

    let max_rel_error = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let failed_groups: Vec<String> = groups.iter().filter(|g| !g.passed).map(|g| g.group.clone()).collect();
    let out = GradCheckOutput {
        eps: cfg.gradcheck_eps,
        threshold: cfg.gradcheck_threshold,
        fault: if fault { "sigmoid".into() } else { "none".into() },
        passed: failed_groups.is_empty(),
        groups,
        max_rel_error,
        failed_groups,
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("gradcheck.json"), &out)?;

    let mut lines: Vec<String> = out
        .groups
        .iter()
        .map(|g| {
            format!(
                "{:<28} {:>6} elems  max rel err {:.3e}  {}",
                g.group,
                g.elements,
                g.max_rel_error,
                if g.passed { "ok" } else { "FAIL" }
            )
        })
        .collect();
    lines.push(if out.passed {
        format!(
            "gradcheck passed: max rel err {:.3e} < {:.0e}",
            out.max_rel_error, out.threshold
        )
    } else {
        format!("gradcheck FAILED in: {}", out.failed_groups.join(", "))
    });
    Ok(Outcome {
        passed: out.passed,
        lines,
    })
}

// ----- recon --------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconRow {
    #[serde(rename = "L")]
    pub length: usize,
    pub wavelet: WaveletName,
    #[serde(rename = "J")]
    pub levels: usize,
    pub max_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconOutput {
    pub threshold: f64,
    pub rows: Vec<ReconRow>,
    pub max_error: f64,
    pub failures: Vec<ReconRow>,
    pub passed: bool,
}

/// Round-trip error of every (length, wavelet, valid J) combination.
pub fn cmd_recon(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut rows = Vec::new();
    for &len in &cfg.recon_lengths {
        let x = Tensor::randn(&[2, len, 3], 1.0, &mut rng)?;
        for &name in &cfg.recon_wavelets {
            let fb = FilterBank::new(name);
            for levels in 1..=wavelet::max_level(len, fb.len()) {
                let back = wavelet::idwt_multi(&wavelet::dwt_multi(&x, &fb, levels)?, &fb)?;
                rows.push(ReconRow {
                    length: len,
                    wavelet: name,
                    levels,
                    max_error: back.max_abs_diff(&x)?,
                });
            }
        }
    }
    let max_error = rows.iter().map(|r| r.max_error).fold(0.0, f64::max);
    let failures: Vec<ReconRow> = rows
        .iter()
        .filter(|r| r.max_error.is_nan() || r.max_error >= cfg.recon_threshold)
        .cloned()
        .collect();
    let out = ReconOutput {
        threshold: cfg.recon_threshold,
        passed: failures.is_empty(),
        rows,
        max_error,
        failures,
    };
    ensure_dir(&cfg.output_dir)?;
    write_json(&cfg.output_dir.join("recon.json"), &out)?;
    let mut lines = vec![format!(
        "{} cases, max round-trip error {:.3e}",
        out.rows.len(),
        out.max_error
    )];
    for f in &out.failures {
        lines.push(format!(
            "FAIL L = {}, {}, J = {}: {:.3e}",
            f.length, f.wavelet, f.levels, f.max_error
        ));
    }
    Ok(Outcome {
        passed: out.passed,
        lines,
    })
}

// ----- train / ablate -----------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub pe: PeKind,
    pub seed: u64,
    pub dataset: String,
    pub num_parameters: usize,
    pub pe_parameters: usize,
    pub history: History,
    pub final_accuracy: f64,
}

/// Trains one model; returns the record and its wall time in seconds.
pub fn run_one(
    cfg: &ExperimentConfig,
    kind: PeKind,
    seed: u64,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
) -> Result<(RunRecord, f64)> {
    let m = &train_split.meta;
    let mut model = ModelBundle::new(cfg.model_config(kind, seed, m.seq_len, m.d_x, m.num_classes))?;
    let start = Instant::now();
    let history = train::train(&mut model, train_split, test_split, &cfg.train_config(seed))?;
    let seconds = start.elapsed().as_secs_f64();
    Ok((
        RunRecord {
            pe: kind,
            seed,
            dataset: m.name.clone(),
            num_parameters: model.store.num_elements(),
            pe_parameters: model.pe_param_count(),
            final_accuracy: history.final_accuracy,
            history,
        },
        seconds,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub pe: PeKind,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_accuracy: f64,
    pub config: BTreeMap<String, String>,
}

// output_dir is left out so results don't depend on where they are written.
fn config_map(cfg: &ExperimentConfig) -> BTreeMap<String, String> {
    cfg.to_pairs()
        .into_iter()
        .filter(|(k, _)| *k != "output_dir")
        .map(|(k, v)| (k.to_string(), v))
        .collect()
}

/// One model per seed: `seed_<s>/run.json`, `summary.json`, and wall
/// times in `timing.json`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seeds must not be empty".into()));
    }
    let (tr, te) = cfg.datasets()?;
    ensure_dir(&cfg.output_dir)?;
    let mut accuracies = Vec::new();
    let mut timing = BTreeMap::new();
    let mut lines = Vec::new();
    for &seed in &cfg.seeds {
        let (rec, secs) = run_one(cfg, cfg.pe, seed, &tr, &te)?;
        let dir = cfg.output_dir.join(format!("seed_{seed}"));
        ensure_dir(&dir)?;
        write_json(&dir.join("run.json"), &rec)?;
        lines.push(format!(
            "{} seed {seed}: accuracy {:.4} ({secs:.1}s)",
            cfg.pe, rec.final_accuracy
        ));
        accuracies.push(rec.final_accuracy);
        timing.insert(format!("seed_{seed}"), secs);
    }
    let (mean, std) = mean_std(&accuracies);
    let summary = TrainSummary {
        pe: cfg.pe,
        dataset: tr.meta.name.clone(),
        seeds: cfg.seeds.clone(),
        accuracies,
        mean_accuracy: mean,
        std_accuracy: std,
        config: config_map(cfg),
    };
    write_json(&cfg.output_dir.join("summary.json"), &summary)?;
    write_json(&cfg.output_dir.join("timing.json"), &timing)?;
    lines.push(format!(
        "mean accuracy {mean:.4} ± {std:.4} over {} seeds",
        cfg.seeds.len()
    ));
    Ok(Outcome { passed: true, lines })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub variant: PeKind,
    pub accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub pe_parameters: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateOutput {
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblateRow>,
    pub config: BTreeMap<String, String>,
}

impl AblateOutput {
    pub fn mean_of(&self, kind: PeKind) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == kind).map(|r| r.mean_accuracy)
    }
}

/// Every variant under the same data, seeds and hyperparameters:
/// `ablate.json`, `ablate.csv` and `ablate_timing.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("seeds must not be empty".into()));
    }
    let (tr, te) = cfg.datasets()?;
    ensure_dir(&cfg.output_dir)?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    let mut lines = Vec::new();
    for &kind in &cfg.variants {
        let mut accs = Vec::new();
        let mut pe_parameters = 0;
        for &seed in &cfg.seeds {
            let (rec, secs) = run_one(cfg, kind, seed, &tr, &te)?;
            accs.push(rec.final_accuracy);
            pe_parameters = rec.pe_parameters;
            times.push((kind, seed, secs));
        }
        let (mean, std) = mean_std(&accs);
        lines.push(format!("{:<13} {mean:.4} ± {std:.4}  {accs:?}", kind.to_string()));
        rows.push(AblateRow {
            variant: kind,
            accuracies: accs,
            mean_accuracy: mean,
            std_accuracy: std,
            pe_parameters,
        });
    }
    let out = AblateOutput {
        dataset: tr.meta.name.clone(),
        seeds: cfg.seeds.clone(),
        rows,
        config: config_map(cfg),
    };
    write_json(&cfg.output_dir.join("ablate.json"), &out)?;

    let path = cfg.output_dir.join("ablate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["variant", "mean_accuracy", "std_accuracy", "seeds"])?;
    let seeds = cfg.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    for r in &out.rows {
        w.write_record([
            r.variant.to_string(),
            r.mean_accuracy.to_string(),
            r.std_accuracy.to_string(),
            seeds.clone(),
        ])?;
    }
    flush(w, &path)?;

    let path = cfg.output_dir.join("ablate_timing.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["variant", "seed", "wall_seconds"])?;
    for (k, s, t) in times {
        w.write_record([k.to_string(), s.to_string(), format!("{t:.3}")])?;
    }
    flush(w, &path)?;
    Ok(Outcome { passed: true, lines })
}

// ----- bench --------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub pe: PeKind,
    #[serde(rename = "L")]
    pub length: usize,
    pub median_seconds: f64,
    /// Median at this length over the median at half of it, when measured.
    pub ratio_vs_half_l: Option<f64>,
}

/// A prepared encoding computation at one length.
enum BenchCase {
    Sinusoidal,
    Learnable(Tensor),
    Wavelet(DyWpe, Tensor),
    Static(StaticWpe, Tensor),
    Rope(Tensor),
    Alibi,
}

fn bench_case(kind: PeKind, len: usize, d: usize, rng: &mut ChaCha8Rng) -> Result<Option<BenchCase>> {
    let heads = 4;
    let x = Tensor::randn(&[1, len, 1], 1.0, rng)?;
    let wavelet_cfg = |levels: usize| DyWpeConfig {
        d_x: 1,
        d_model: d,
        levels,
        wavelet: WaveletName::Haar,
        init_std: dywpe::DEFAULT_INIT_STD,
    };
    Ok(Some(match kind {
        PeKind::None => return Ok(None),
        PeKind::Sinusoidal => BenchCase::Sinusoidal,
        PeKind::Learnable => BenchCase::Learnable(pe::learnable_pe_init(len, d, 0.02, rng)?),
        PeKind::Dywpe => BenchCase::Wavelet(DyWpe::new(wavelet_cfg(dywpe::default_levels(len, 2)), rng)?, x),
        PeKind::SingleScale => BenchCase::Wavelet(DyWpe::new(wavelet_cfg(1), rng)?, x),
        PeKind::Swpe => BenchCase::Static(StaticWpe::new(wavelet_cfg(dywpe::default_levels(len, 2)), len, rng)?, x),
        PeKind::Rope => BenchCase::Rope(Tensor::randn(&[1, heads, len, d / heads], 1.0, rng)?),
        PeKind::Alibi => BenchCase::Alibi,
    }))
}

fn run_case(case: &BenchCase, len: usize, d: usize) -> Result<f64> {
    let positions: Vec<usize>;
    let out = match case {
        BenchCase::Sinusoidal => pe::sinusoidal_pe(len, d)?,
        BenchCase::Learnable(table) => {
            let mut tape = Tape::new();
            let t = tape.param(table);
            let tokens = tape.constant(Tensor::zeros(&[1, len, d])?);
            let y = tape.add(tokens, t)?;
            tape.tensor(y)
        }
        BenchCase::Wavelet(enc, x) => enc.encode(x)?,
        BenchCase::Static(enc, x) => enc.encode(x)?,
        BenchCase::Rope(q) => {
            positions = (0..len).collect();
            pe::rope_rotate(q, &positions)?
        }
        BenchCase::Alibi => pe::alibi_bias(len, 4, false)?,
    };
    Ok(out.data()[out.numel() / 2])
}

/// Pins the process to one CPU and stops glibc from handing freed memory
/// back to the kernel, so that repeats time the computation rather than
/// page faults on fresh allocations. Process-wide and permanent.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn quiet_platform() {
    // SAFETY: plain libc calls with valid arguments; a failure only leaves
    // the defaults in place.
    unsafe {
        let mut set: libc::cpu_set_t = std::mem::zeroed();
        libc::CPU_SET(0, &mut set);
        libc::sched_setaffinity(0, std::mem::size_of::<libc::cpu_set_t>(), &set);
        libc::mallopt(libc::M_MMAP_MAX, 0);
        libc::mallopt(libc::M_TRIM_THRESHOLD, libc::c_int::MAX);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn quiet_platform() {}

/// Median forward time of each encoding per length: `bench.csv`, plus
/// `tradeoff.csv` when `ablate.json` is present in `output_dir`.
pub fn cmd_bench(cfg: &ExperimentConfig) -> Result<Outcome> {
    if cfg.bench_repeats == 0 {
        return Err(Error::Config("bench_repeats must be positive".into()));
    }
    quiet_platform();
    let d = cfg.bench_d_model;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let mut rows: Vec<BenchRow> = Vec::new();
    let mut lines = Vec::new();
    let mut sink = 0.0;
    for &kind in &cfg.bench_pes {
        for &len in &cfg.bench_lengths {
            if kind == PeKind::Alibi && len > cfg.bench_alibi_max_len {
                continue;
            }
            let Some(case) = bench_case(kind, len, d, &mut rng)? else {
                continue;
            };
            for _ in 0..cfg.bench_warmup {
                sink += run_case(&case, len, d)?;
            }
            let mut times = Vec::with_capacity(cfg.bench_repeats);
            for _ in 0..cfg.bench_repeats {
                let start = Instant::now();
                sink += run_case(&case, len, d)?;
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(f64::total_cmp);
            let median = times[times.len() / 2];
            let ratio = rows
                .iter()
                .find(|r| r.pe == kind && 2 * r.length == len)
                .map(|r| median / r.median_seconds);
            lines.push(format!(
                "{:<13} L = {len:>6}  {median:.6}s{}",
                kind.to_string(),
                ratio.map_or_else(String::new, |r| format!("  x{r:.2}"))
            ));
            rows.push(BenchRow {
                pe: kind,
                length: len,
                median_seconds: median,
                ratio_vs_half_l: ratio,
            });
        }
    }
    std::hint::black_box(sink);
    ensure_dir(&cfg.output_dir)?;
    let path = cfg.output_dir.join("bench.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["pe", "L", "median_seconds", "ratio_vs_half_L"])?;
    for r in &rows {
        w.write_record([
            r.pe.to_string(),
            r.length.to_string(),
            format!("{:.9}", r.median_seconds),
            r.ratio_vs_half_l.map_or_else(String::new, |x| format!("{x:.6}")),
        ])?;
    }
    flush(w, &path)?;

    let ablate_path = cfg.output_dir.join("ablate.json");
    if ablate_path.exists() {
        let ablate: AblateOutput = read_json(&ablate_path)?;
        let path = cfg.output_dir.join("tradeoff.csv");
        write_tradeoff(&path, &ablate, &rows)?;
        lines.push(format!("wrote {}", path.display()));
    }
    Ok(Outcome { passed: true, lines })
}

/// `(overhead, accuracy)` pairs: each variant's median time at the longest
/// length also measured for the sinusoidal table, relative to that table.
/// The variant without an encoding has zero overhead.
fn write_tradeoff(path: &Path, ablate: &AblateOutput, rows: &[BenchRow]) -> Result<()> {
    let at = |kind: PeKind, len: usize| {
        rows.iter()
            .find(|r| r.pe == kind && r.length == len)
            .map(|r| r.median_seconds)
    };
    let mut w = csv_writer(path)?;
    w.write_record([
        "variant",
        "mean_accuracy",
        "L",
        "median_seconds",
        "overhead_vs_sinusoidal",
    ])?;
    for r in &ablate.rows {
        if r.variant == PeKind::None {
            w.write_record([
                r.variant.to_string(),
                r.mean_accuracy.to_string(),
                String::new(),
                "0".into(),
                "0".into(),
            ])?;
            continue;
        }
        let common = rows
            .iter()
            .filter(|b| b.pe == r.variant && at(PeKind::Sinusoidal, b.length).is_some())
            .map(|b| b.length)
            .max();
        let Some(len) = common else { continue };
        let (t, base) = (
            at(r.variant, len).unwrap_or(0.0),
            at(PeKind::Sinusoidal, len).unwrap_or(1.0),
        );
        w.write_record([
            r.variant.to_string(),
            r.mean_accuracy.to_string(),
            len.to_string(),
            format!("{t:.9}"),
            format!("{:.6}", t / base),
        ])?;
    }
    flush(w, path)
}

/// Output files a command writes, relative to `output_dir`.
pub fn expected_outputs(verb: &str, cfg: &ExperimentConfig) -> Vec<PathBuf> {
    match verb {
        "gradcheck" => vec!["gradcheck.json".into()],
        "recon" => vec!["recon.json".into()],
        "train" => {
            let mut v: Vec<PathBuf> = cfg
                .seeds
                .iter()
                .map(|s| PathBuf::from(format!("seed_{s}/run.json")))
                .collect();
            v.push("summary.json".into());
            v.push("timing.json".into());
            v
        }
        "ablate" => vec!["ablate.json".into(), "ablate.csv".into(), "ablate_timing.csv".into()],
        "bench" => vec!["bench.csv".into()],
        _ => Vec::new(),
    }
}
