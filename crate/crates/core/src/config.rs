//! Flat `key = value` experiment configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default (see [`ExperimentConfig::default`]) and unknown
//! keys are rejected. `--set key=value` overrides use the same parser.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{self, CsvSchema, DatasetSplit, MultiScaleOptions, SigCtxOptions};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PeConfig, Resolution};
use crate::pe::PeKind;
use crate::train::TrainConfig;
use crate::wavelet::WaveletName;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Sigctx,
    Multiscale,
    /// `csv:<train>,<test>`
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

impl fmt::Display for DatasetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetSpec::Sigctx => f.write_str("sigctx"),
            DatasetSpec::Multiscale => f.write_str("multiscale"),
            DatasetSpec::Csv { train, test } => write!(f, "csv:{},{}", train.display(), test.display()),
        }
    }
}

impl FromStr for DatasetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigctx" => Ok(DatasetSpec::Sigctx),
            "multiscale" => Ok(DatasetSpec::Multiscale),
            _ => {
                let rest = s.strip_prefix("csv:").ok_or_else(|| {
                    Error::Config(format!(
                        "unknown dataset '{s}' (expected sigctx, multiscale or csv:<train>,<test>)"
                    ))
                })?;
                let (train, test) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("csv dataset needs '<train>,<test>', got '{rest}'")))?;
                Ok(DatasetSpec::Csv {
                    train: PathBuf::from(train.trim()),
                    test: PathBuf::from(test.trim()),
                })
            }
        }
    }
}

/// Every setting of every command. Field names match the config keys,
/// except `levels` whose key is `J`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seq_len: usize,
    pub data_seed: u64,
    pub noise: f64,
    pub window_frac: f64,
    pub j_true: usize,
    pub normalize: bool,

    pub pe: PeKind,
    pub wavelet: WaveletName,
    /// `None` (`J = auto`) picks the default for the encoding length.
    pub levels: Option<usize>,
    pub init_std: f64,
    pub dywpe_resolution: Resolution,
    pub alibi_causal: bool,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// `None` (`d_ff = auto`) means `4 d_model`.
    pub d_ff: Option<usize>,
    pub patch_len: usize,
    pub dropout: f64,

    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub variants: Vec<PeKind>,
    pub output_dir: PathBuf,

    pub gradcheck_eps: f64,
    pub gradcheck_threshold: f64,
    pub gradcheck_fault: bool,

    pub recon_lengths: Vec<usize>,
    pub recon_wavelets: Vec<WaveletName>,
    pub recon_threshold: f64,

    pub bench_lengths: Vec<usize>,
    pub bench_pes: Vec<PeKind>,
    pub bench_d_model: usize,
    pub bench_repeats: usize,
    pub bench_warmup: usize,
    pub bench_alibi_max_len: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::Sigctx,
            n_train: 2000,
            n_test: 500,
            seq_len: 128,
            data_seed: 0,
            noise: 0.1,
            window_frac: 0.125,
            j_true: 3,
            normalize: true,
            pe: PeKind::Dywpe,
            wavelet: WaveletName::Haar,
            levels: None,
            init_std: crate::dywpe::DEFAULT_INIT_STD,
            dywpe_resolution: Resolution::Token,
            alibi_causal: false,
            d_model: 128,
            layers: 4,
            heads: 4,
            d_ff: None,
            patch_len: 8,
            dropout: 0.2,
            lr: 1e-3,
            epochs: 100,
            batch_size: 32,
            eval_every: 1,
            seeds: vec![1, 2, 3, 4, 5],
            variants: vec![
                PeKind::Dywpe,
                PeKind::Swpe,
                PeKind::SingleScale,
                PeKind::Sinusoidal,
                PeKind::None,
            ],
            output_dir: PathBuf::from("runs"),
            gradcheck_eps: 1e-5,
            gradcheck_threshold: 1e-4,
            gradcheck_fault: false,
            recon_lengths: vec![7, 24, 29, 30, 36, 62, 96, 151, 178, 896, 1152],
            recon_wavelets: WaveletName::ALL.to_vec(),
            recon_threshold: 1e-9,
            bench_lengths: (10..=16).map(|k| 1 << k).collect(),
            bench_pes: vec![
                PeKind::Sinusoidal,
                PeKind::Learnable,
                PeKind::Dywpe,
                PeKind::Swpe,
                PeKind::SingleScale,
                PeKind::Rope,
                PeKind::Alibi,
            ],
            bench_d_model: 128,
            bench_repeats: 11,
            bench_warmup: 3,
            bench_alibi_max_len: 2048,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("{key} needs at least one entry")));
    }
    Ok(items)
}

fn parse_kinds(key: &str, value: &str) -> Result<Vec<PeKind>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(Error::Config(format!("{key} needs at least one entry")))
            } else {
                Ok(v)
            }
        })
}

fn parse_auto(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "auto" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn auto(v: Option<usize>) -> String {
    v.map_or_else(|| "auto".into(), |n| n.to_string())
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults. `origin` names the source
    /// in error messages.
    pub fn parse_str(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                location: format!("{origin}:{}", i + 1),
                message: format!("expected key = value, got '{line}'"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                location: format!("{origin}:{}", i + 1),
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_str(&text, &path.display().to_string())
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{pair}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = value.parse()?,
            "n_train" => self.n_train = parse(key, value)?,
            "n_test" => self.n_test = parse(key, value)?,
            "seq_len" => self.seq_len = parse(key, value)?,
            "data_seed" => self.data_seed = parse(key, value)?,
            "noise" => self.noise = parse(key, value)?,
            "window_frac" => self.window_frac = parse(key, value)?,
            "j_true" => self.j_true = parse(key, value)?,
            "normalize" => self.normalize = parse(key, value)?,
            "pe" => self.pe = value.parse()?,
            "wavelet" => self.wavelet = value.parse()?,
            "J" => self.levels = parse_auto(key, value)?,
            "init_std" => self.init_std = parse(key, value)?,
            "dywpe_resolution" => self.dywpe_resolution = value.parse()?,
            "alibi_causal" => self.alibi_causal = parse(key, value)?,
            "d_model" => self.d_model = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "d_ff" => self.d_ff = parse_auto(key, value)?,
            "patch_len" => self.patch_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "seeds" => self.seeds = parse_list(key, value)?,
            "variants" => self.variants = parse_kinds(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            "gradcheck_eps" => self.gradcheck_eps = parse(key, value)?,
            "gradcheck_threshold" => self.gradcheck_threshold = parse(key, value)?,
            "gradcheck_fault" => {
                self.gradcheck_fault = match value {
                    "none" => false,
                    "sigmoid" => true,
                    _ => {
                        return Err(Error::Config(format!(
                            "gradcheck_fault must be none or sigmoid, got '{value}'"
                        )))
                    }
                }
            }
            "recon_lengths" => self.recon_lengths = parse_list(key, value)?,
            "recon_wavelets" => self.recon_wavelets = parse_list(key, value)?,
            "recon_threshold" => self.recon_threshold = parse(key, value)?,
            "bench_lengths" => self.bench_lengths = parse_list(key, value)?,
            "bench_pes" => self.bench_pes = parse_kinds(key, value)?,
            "bench_d_model" => self.bench_d_model = parse(key, value)?,
            "bench_repeats" => self.bench_repeats = parse(key, value)?,
            "bench_warmup" => self.bench_warmup = parse(key, value)?,
            "bench_alibi_max_len" => self.bench_alibi_max_len = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("dataset", self.dataset.to_string()),
            ("n_train", self.n_train.to_string()),
            ("n_test", self.n_test.to_string()),
            ("seq_len", self.seq_len.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("noise", self.noise.to_string()),
            ("window_frac", self.window_frac.to_string()),
            ("j_true", self.j_true.to_string()),
            ("normalize", self.normalize.to_string()),
            ("pe", self.pe.to_string()),
            ("wavelet", self.wavelet.to_string()),
            ("J", auto(self.levels)),
            ("init_std", self.init_std.to_string()),
            (
                "dywpe_resolution",
                format!("{:?}", self.dywpe_resolution).to_lowercase(),
            ),
            ("alibi_causal", self.alibi_causal.to_string()),
            ("d_model", self.d_model.to_string()),
            ("layers", self.layers.to_string()),
            ("heads", self.heads.to_string()),
            ("d_ff", auto(self.d_ff)),
            ("patch_len", self.patch_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("seeds", join(&self.seeds)),
            ("variants", join(&self.variants)),
            ("output_dir", self.output_dir.display().to_string()),
            ("gradcheck_eps", self.gradcheck_eps.to_string()),
            ("gradcheck_threshold", self.gradcheck_threshold.to_string()),
            (
                "gradcheck_fault",
                if self.gradcheck_fault { "sigmoid" } else { "none" }.into(),
            ),
            ("recon_lengths", join(&self.recon_lengths)),
            ("recon_wavelets", join(&self.recon_wavelets)),
            ("recon_threshold", self.recon_threshold.to_string()),
            ("bench_lengths", join(&self.bench_lengths)),
            ("bench_pes", join(&self.bench_pes)),
            ("bench_d_model", self.bench_d_model.to_string()),
            ("bench_repeats", self.bench_repeats.to_string()),
            ("bench_warmup", self.bench_warmup.to_string()),
            ("bench_alibi_max_len", self.bench_alibi_max_len.to_string()),
        ]
    }

    /// Config text that parses back to `self`.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Model for encoding `kind` and backbone seed `seed`, sized for the
    /// given data.
    pub fn model_config(&self, kind: PeKind, seed: u64, seq_len: usize, d_x: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            seq_len,
            d_x,
            num_classes,
            layers: self.layers,
            heads: self.heads,
            d_model: self.d_model,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            patch_len: self.patch_len,
            dropout: self.dropout,
            seed,
            pe: PeConfig {
                kind,
                wavelet: self.wavelet,
                levels: self.levels,
                init_std: self.init_std,
                resolution: self.dywpe_resolution,
                alibi_causal: self.alibi_causal,
            },
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            seed,
            eval_every: self.eval_every,
        }
    }

    /// Train and test splits, normalized with training statistics when
    /// `normalize` is set.
    pub fn datasets(&self) -> Result<(DatasetSplit, DatasetSplit)> {
        let test_seed = self.data_seed ^ 0x7e57_5eed;
        let (train, test) = match &self.dataset {
            DatasetSpec::Sigctx => {
                let opts = SigCtxOptions {
                    noise: self.noise,
                    window_frac: self.window_frac,
                    ..SigCtxOptions::default()
                };
                (
                    data::gen_sigctx_with(self.n_train, self.seq_len, self.data_seed, &opts)?,
                    data::gen_sigctx_with(self.n_test, self.seq_len, test_seed, &opts)?,
                )
            }
            DatasetSpec::Multiscale => {
                let opts = MultiScaleOptions {
                    noise: self.noise,
                    ..MultiScaleOptions::default()
                };
                (
                    data::gen_multiscale_with(self.n_train, self.seq_len, self.j_true, self.data_seed, &opts)?,
                    data::gen_multiscale_with(self.n_test, self.seq_len, self.j_true, test_seed, &opts)?,
                )
            }
            DatasetSpec::Csv { train, test } => {
                let tr = data::load_csv(train, &CsvSchema::default())?;
                let schema = CsvSchema {
                    seq_len: Some(tr.meta.seq_len),
                    d_x: Some(tr.meta.d_x),
                    num_classes: Some(tr.meta.num_classes),
                };
                let te = data::load_csv(test, &schema)?;
                (tr, te)
            }
        };
        if self.normalize {
            Ok((data::normalize(&train, &train)?, data::normalize(&test, &train)?))
        } else {
            Ok((train, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = ExperimentConfig::parse_str(
            "# desk run\npe = swpe\n\nseeds = 1, 2 # two seeds\nJ = 3\nd_ff = auto\ndataset = csv:a.csv,b.csv\n",
            "t",
        )
        .unwrap();
        assert_eq!(cfg.pe, PeKind::Swpe);
        assert_eq!(cfg.seeds, vec![1, 2]);
        assert_eq!(cfg.levels, Some(3));
        assert_eq!(cfg.d_ff, None);
        assert_eq!(
            cfg.dataset,
            DatasetSpec::Csv {
                train: "a.csv".into(),
                test: "b.csv".into()
            }
        );
        let mut cfg = cfg;
        cfg.set_pair("lr=0.01").unwrap();
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let err = ExperimentConfig::parse_str("pe = dywpe\nlearning_rate = 1\n", "cfg")
            .unwrap_err()
            .to_string();
        assert!(err.contains("cfg:2") && err.contains("learning_rate"), "{err}");
        assert!(ExperimentConfig::parse_str("epochs 10\n", "cfg").is_err());
        assert!(ExperimentConfig::parse_str("epochs = ten\n", "cfg").is_err());
        assert!(ExperimentConfig::parse_str("seeds = ,\n", "cfg").is_err());
        assert!(ExperimentConfig::parse_str("pe = tape\n", "cfg").is_err());
        assert!(ExperimentConfig::default().set_pair("epochs").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("variants", "dywpe,single-scale").unwrap();
        cfg.set("gradcheck_fault", "sigmoid").unwrap();
        cfg.set("dywpe_resolution", "raw").unwrap();
        let back = ExperimentConfig::parse_str(&cfg.to_text(), "rt").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            ExperimentConfig::parse_str(&ExperimentConfig::default().to_text(), "d").unwrap(),
            ExperimentConfig::default()
        );
    }
}
