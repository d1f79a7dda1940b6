//! Acceptance checks, one PASS/FAIL line each. Exits nonzero if any fails.
//!
//! The training criteria run the shipped desk configs end to end and take
//! several minutes on one core.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use dywpe::commands::{self, AblateOutput};
use dywpe::config::ExperimentConfig;
use dywpe::dywpe::{param_count, table_param_formula, DyWpe, DyWpeConfig, StaticWpe};
use dywpe::model::{ModelBundle, ModelConfig};
use dywpe::pe::PeKind;
use dywpe::wavelet::{dwt_multi, max_level, FilterBank, WaveletName};
use dywpe::Tensor;

type Check = Result<(bool, String), String>;
type CheckFn<'a> = Box<dyn Fn() -> Check + 'a>;

fn config(name: &str, out: &Path) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    let mut cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn c1_reconstruction(out: &Path) -> Check {
    let cfg = config("recon.cfg", out);
    let start = Instant::now();
    let outcome = commands::cmd_recon(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let report: commands::ReconOutput =
        serde_json::from_str(&std::fs::read_to_string(out.join("recon.json")).map_err(err)?).map_err(err)?;
    let wavelets_ok = cfg.recon_wavelets == WaveletName::ALL;
    Ok((
        outcome.passed && report.max_error < 1e-9 && wavelets_ok && secs < 30.0,
        format!(
            "{} cases, max error {:.2e} (< 1e-9), {secs:.1}s (< 30s)",
            report.rows.len(),
            report.max_error
        ),
    ))
}

fn c2_energy() -> Check {
    let mut r = rng(2);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 200 {
        let len = r.random_range(2..1200usize);
        let fb = FilterBank::new(WaveletName::ALL[r.random_range(0..3)]);
        let max = max_level(len, fb.len());
        if max == 0 {
            continue;
        }
        let x = Tensor::randn(&[1, len, 1], 1.0, &mut r).map_err(err)?;
        let p = dwt_multi(&x, &fb, r.random_range(1..=max)).map_err(err)?;
        let ex: f64 = x.data().iter().map(|v| v * v).sum();
        worst = worst.max(((p.energy() - ex) / ex).abs());
        cases += 1;
    }
    Ok((
        worst < 1e-10,
        format!("200 cases, max relative mismatch {worst:.2e} (< 1e-10)"),
    ))
}

fn c3_gradients(out: &Path) -> Check {
    let cfg = config("gradcheck.cfg", out);
    if cfg.d_model != 8 || cfg.layers != 1 || cfg.gradcheck_eps != 1e-5 {
        return Err("gradcheck.cfg no longer describes the 1-layer, d_model = 8 model at eps = 1e-5".into());
    }
    let start = Instant::now();
    let outcome = commands::cmd_gradcheck(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let report: commands::GradCheckOutput =
        serde_json::from_str(&std::fs::read_to_string(out.join("gradcheck.json")).map_err(err)?).map_err(err)?;
    Ok((
        outcome.passed && report.max_rel_error < 1e-4 && secs < 60.0,
        format!(
            "{} groups, max relative error {:.2e} (< 1e-4), {secs:.2}s (< 60s)",
            report.groups.len(),
            report.max_rel_error
        ),
    ))
}

fn c4_linearity() -> Check {
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let len = r.random_range(8..200usize);
        let d_x = r.random_range(1..4usize);
        let name = WaveletName::ALL[r.random_range(0..3)];
        if max_level(len, name.filter_len()) == 0 {
            continue;
        }
        let cfg = DyWpeConfig {
            init_std: 0.5,
            ..DyWpeConfig::for_length(d_x, 16, len, name)
        };
        let enc = DyWpe::new(cfg, &mut rng(trial)).map_err(err)?;
        let x = Tensor::randn(&[2, len, d_x], 1.0, &mut r).map_err(err)?;
        let y = Tensor::randn(&[2, len, d_x], 1.0, &mut r).map_err(err)?;
        let (a, b): (f64, f64) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let mix = Tensor::from_fn(x.shape(), |i| a * x.data()[i] + b * y.data()[i]).map_err(err)?;
        let (pm, px, py) = (
            enc.encode(&mix).map_err(err)?,
            enc.encode(&x).map_err(err)?,
            enc.encode(&y).map_err(err)?,
        );
        for i in 0..pm.numel() {
            worst = worst.max((pm.data()[i] - a * px.data()[i] - b * py.data()[i]).abs());
        }
    }
    Ok((
        worst < 1e-9,
        format!("100 trials, max |P(ax+by) - aP(x) - bP(y)| = {worst:.2e} (< 1e-9)"),
    ))
}

fn c5_parameters() -> Check {
    let (d, len, d_x) = (128, 96, 3);
    let cfg = DyWpeConfig::for_length(d_x, d, len, WaveletName::Haar);
    let enc = DyWpe::new(cfg.clone(), &mut rng(5)).map_err(err)?;
    let stored = enc.num_parameters();
    let without_proj = stored - d_x;
    let ok = cfg.levels + 1 == 6
        && without_proj == param_count(&cfg, false)
        && stored == param_count(&cfg, true)
        && without_proj == 33_536
        && table_param_formula(d, len) == 33_536;
    Ok((
        ok,
        format!(
            "d = 128, L = 96, J + 1 = {}: {without_proj} (+{d_x} channel weights = {stored}), expected 33536",
            cfg.levels + 1
        ),
    ))
}

fn c6_linear_time(out: &Path) -> Check {
    let cfg = config("bench.cfg", out);
    let start = Instant::now();
    commands::cmd_bench(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let mut reader = csv::Reader::from_path(out.join("bench.csv")).map_err(err)?;
    let mut ratios = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(err)?;
        let len: usize = rec[1].parse().map_err(err)?;
        if &rec[0] == "dywpe" && (8192..=65536).contains(&len) {
            ratios.push(rec[3].parse::<f64>().map_err(err)?);
        }
    }
    if ratios.len() != 4 {
        return Err(format!(
            "expected 4 DyWPE doubling ratios over 4096..65536, found {}",
            ratios.len()
        ));
    }
    let mean = ratios.iter().sum::<f64>() / 4.0;
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok((
        mean <= 3.0 && max <= 3.5 && secs < 300.0,
        format!(
            "DyWPE ratios {:?}, mean {mean:.2} (<= 3.0), max {max:.2} (<= 3.5), sweep {secs:.0}s (< 300s)",
            ratios.iter().map(|r| (r * 100.0).round() / 100.0).collect::<Vec<_>>()
        ),
    ))
}

fn ablate(name: &str, out: &Path) -> Result<(AblateOutput, f64), String> {
    let cfg = config(name, out);
    let start = Instant::now();
    commands::cmd_ablate(&cfg).map_err(err)?;
    let secs = start.elapsed().as_secs_f64();
    let report = serde_json::from_str(&std::fs::read_to_string(out.join("ablate.json")).map_err(err)?).map_err(err)?;
    Ok((report, secs))
}

fn mean(report: &AblateOutput, kind: PeKind) -> Result<f64, String> {
    report.mean_of(kind).ok_or_else(|| format!("no {kind} row"))
}

fn c7_signal_awareness(out: &Path) -> Check {
    let cfg = config("ablate_sigctx.cfg", out);
    let setup_ok =
        cfg.n_train == 2000 && cfg.n_test == 500 && cfg.seq_len == 128 && cfg.seeds.len() == 3 && cfg.epochs <= 100;
    let (report, secs) = ablate("ablate_sigctx.cfg", out)?;
    let dy = mean(&report, PeKind::Dywpe)?;
    let sw = mean(&report, PeKind::Swpe)?;
    let sin = mean(&report, PeKind::Sinusoidal)?;
    let none = mean(&report, PeKind::None)?;
    let ok = setup_ok && dy >= sw && dy >= sin + 0.05 && none < dy && sin < dy && secs < 900.0;
    let rows: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {:.3}", r.variant, r.mean_accuracy))
        .collect();
    Ok((
        ok,
        format!(
            "{}; dywpe - sinusoidal = {:+.3} (>= 0.05), {secs:.0}s (< 900s)",
            rows.join(", "),
            dy - sin
        ),
    ))
}

fn c8_multiscale(out: &Path) -> Check {
    let cfg = config("ablate_multiscale.cfg", out);
    if cfg.j_true != 3 || cfg.seeds.len() != 3 {
        return Err("ablate_multiscale.cfg must use j_true = 3 and three seeds".into());
    }
    let (report, secs) = ablate("ablate_multiscale.cfg", out)?;
    let dy = mean(&report, PeKind::Dywpe)?;
    let single = mean(&report, PeKind::SingleScale)?;
    Ok((
        dy >= single + 0.03,
        format!(
            "dywpe {dy:.3}, single-scale {single:.3}, gap {:+.3} (>= 0.03), {secs:.0}s",
            dy - single
        ),
    ))
}

fn c9_static_independence() -> Check {
    let len = 96;
    let cfg = DyWpeConfig::for_length(2, 32, len, WaveletName::Db2);
    let stat = StaticWpe::new(cfg.clone(), len, &mut rng(9)).map_err(err)?;
    let dynamic = DyWpe::new(cfg, &mut rng(9)).map_err(err)?;
    let mut r = rng(90);
    let inputs: Vec<Tensor> = (0..100)
        .map(|_| Tensor::randn(&[1, len, 2], 1.0, &mut r))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let first = stat.encode(&inputs[0]).map_err(err)?;
    let mut identical = true;
    for x in &inputs[1..] {
        identical &= stat.encode(x).map_err(err)?.data() == first.data();
    }
    let encs: Vec<Tensor> = inputs
        .iter()
        .map(|x| dynamic.encode(x))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut closest = f64::INFINITY;
    for i in 0..encs.len() {
        for j in i + 1..encs.len() {
            closest = closest.min(encs[i].max_abs_diff(&encs[j]).map_err(err)?);
        }
    }
    Ok((
        identical && closest > 1e-8,
        format!("static bitwise identical: {identical}; closest dynamic pair differs by {closest:.2e} (> 1e-8)"),
    ))
}

fn c10_permutation() -> Check {
    let model = |kind| {
        let mut cfg = ModelConfig::new(64, 2, 4);
        cfg.layers = 2;
        cfg.heads = 4;
        cfg.d_model = 16;
        cfg.d_ff = 32;
        cfg.patch_len = 4;
        cfg.dropout = 0.0;
        cfg.seed = 10;
        cfg.pe.kind = kind;
        ModelBundle::new(cfg)
    };
    let (plain, dynamic) = (model(PeKind::None).map_err(err)?, model(PeKind::Dywpe).map_err(err)?);
    let x = Tensor::randn(&[4, 64, 2], 1.0, &mut rng(10)).map_err(err)?;
    let (base_plain, base_dyn) = (plain.logits(&x).map_err(err)?, dynamic.logits(&x).map_err(err)?);
    let mut r = rng(100);
    let (mut worst_plain, mut least_dyn) = (0.0f64, f64::INFINITY);
    for _ in 0..20 {
        let mut order: Vec<usize> = (0..16).collect();
        order.shuffle(&mut r);
        let xs = Tensor::from_fn(x.shape(), |i| {
            let (n, rest) = (i / 128, i % 128);
            let (t, c) = (rest / 2, rest % 2);
            x.data()[n * 128 + (order[t / 4] * 4 + t % 4) * 2 + c]
        })
        .map_err(err)?;
        worst_plain = worst_plain.max(plain.logits(&xs).map_err(err)?.max_abs_diff(&base_plain).map_err(err)?);
        least_dyn = least_dyn.min(dynamic.logits(&xs).map_err(err)?.max_abs_diff(&base_dyn).map_err(err)?);
    }
    Ok((
        worst_plain < 1e-10 && least_dyn > 1e-8,
        format!("20 shuffles: no encoding max change {worst_plain:.2e} (< 1e-10); dywpe min change {least_dyn:.2e}"),
    ))
}

fn c11_determinism(root: &Path) -> Check {
    let tiny = |cfg: &mut ExperimentConfig| {
        for pair in [
            "n_train=64",
            "n_test=32",
            "seq_len=64",
            "d_model=8",
            "layers=1",
            "heads=2",
            "d_ff=16",
            "patch_len=8",
            "epochs=2",
            "dropout=0.1",
            "seeds=1,2",
        ] {
            cfg.set_pair(pair).unwrap();
        }
    };
    let files: [(&str, &[&str]); 4] = [
        ("gradcheck", &["gradcheck.json"]),
        ("recon", &["recon.json"]),
        ("train", &["seed_1/run.json", "seed_2/run.json", "summary.json"]),
        ("ablate", &["ablate.json", "ablate.csv"]),
    ];
    let mut compared = 0;
    for (verb, names) in files {
        let mut contents: Vec<Vec<Vec<u8>>> = Vec::new();
        for attempt in 0..2 {
            let out: PathBuf = root.join(format!("{verb}_{attempt}"));
            let mut cfg = match verb {
                "gradcheck" => config("gradcheck.cfg", &out),
                "recon" => config("recon.cfg", &out),
                _ => {
                    let mut c = ExperimentConfig {
                        output_dir: out.clone(),
                        ..ExperimentConfig::default()
                    };
                    tiny(&mut c);
                    c
                }
            };
            cfg.output_dir = out.clone();
            match verb {
                "gradcheck" => commands::cmd_gradcheck(&cfg),
                "recon" => commands::cmd_recon(&cfg),
                "train" => commands::cmd_train(&cfg),
                _ => commands::cmd_ablate(&cfg),
            }
            .map_err(err)?;
            contents.push(
                names
                    .iter()
                    .map(|n| std::fs::read(out.join(n)))
                    .collect::<Result<_, _>>()
                    .map_err(err)?,
            );
        }
        if contents[0] != contents[1] {
            return Ok((false, format!("{verb} wrote different files on a re-run")));
        }
        compared += names.len();
    }
    Ok((
        true,
        format!("gradcheck, recon, train, ablate: {compared} metric files byte-identical across re-runs"),
    ))
}

fn main() {
    let dir = TempDir::new().expect("temporary directory");
    let sub = |name: &str| dir.path().join(name);
    let checks: Vec<(&str, CheckFn)> = vec![
        (
            "C1 perfect reconstruction",
            Box::new(|| c1_reconstruction(&sub("recon"))),
        ),
        ("C2 energy conservation", Box::new(c2_energy)),
        ("C3 gradient correctness", Box::new(|| c3_gradients(&sub("gradcheck")))),
        ("C4 linearity in the signal", Box::new(c4_linearity)),
        ("C5 parameter accounting", Box::new(c5_parameters)),
        ("C6 linear time", Box::new(|| c6_linear_time(&sub("bench")))),
        ("C7 signal awareness", Box::new(|| c7_signal_awareness(&sub("sigctx")))),
        (
            "C8 multi-scale necessity",
            Box::new(|| c8_multiscale(&sub("multiscale"))),
        ),
        ("C9 static input independence", Box::new(c9_static_independence)),
        ("C10 permutation sanity", Box::new(c10_permutation)),
        ("C11 determinism", Box::new(|| c11_determinism(&sub("determinism")))),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
