//! Python bindings. Arrays cross the boundary as nested lists of floats:
//! a batch of series is `[batch][time][channel]`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dywpe::commands;
use dywpe::config::ExperimentConfig;
use dywpe::data::{self, DatasetSplit};
use dywpe::dywpe::{self as core, DyWpeConfig};
use dywpe::pe;
use dywpe::wavelet::{self, CoeffPyramid, FilterBank, WaveletName};
use dywpe::Tensor;

fn py_err(e: dywpe::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn wavelet_name(name: &str) -> PyResult<WaveletName> {
    name.parse().map_err(py_err)
}

fn to_tensor(x: Vec<Vec<Vec<f64>>>) -> PyResult<Tensor> {
    let b = x.len();
    let l = x.first().map_or(0, Vec::len);
    let c = x.first().and_then(|s| s.first()).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(b * l * c);
    for (n, series) in x.into_iter().enumerate() {
        if series.len() != l {
            return Err(PyValueError::new_err(format!(
                "series {n} has {} steps, expected {l}",
                series.len()
            )));
        }
        for (t, row) in series.into_iter().enumerate() {
            if row.len() != c {
                return Err(PyValueError::new_err(format!(
                    "series {n}, step {t} has {} channels, expected {c}",
                    row.len()
                )));
            }
            flat.extend(row);
        }
    }
    Tensor::new(&[b, l, c], flat).map_err(py_err)
}

fn to_nested(t: &Tensor) -> Vec<Vec<Vec<f64>>> {
    let s = t.shape();
    let (l, c) = (s[1], s[2]);
    t.data()
        .chunks(l * c)
        .map(|series| series.chunks(c).map(<[f64]>::to_vec).collect())
        .collect()
}

fn series(x: Vec<f64>) -> PyResult<Tensor> {
    let n = x.len();
    Tensor::new(&[1, n, 1], x).map_err(py_err)
}

/// Signal-dependent wavelet positional encoder.
#[pyclass(name = "DyWpe")]
struct PyDyWpe {
    inner: core::DyWpe,
}

#[pymethods]
impl PyDyWpe {
    /// `levels=None` picks the default depth for `seq_len`.
    #[new]
    #[pyo3(signature = (d_x, d_model, seq_len, wavelet="haar", levels=None, init_std=0.02, seed=0))]
    fn new(
        d_x: usize,
        d_model: usize,
        seq_len: usize,
        wavelet: &str,
        levels: Option<usize>,
        init_std: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let mut cfg = DyWpeConfig::for_length(d_x, d_model, seq_len, wavelet_name(wavelet)?);
        cfg.init_std = init_std;
        if let Some(j) = levels {
            cfg.levels = j;
        }
        cfg.check_length(seq_len).map_err(py_err)?;
        let inner = core::DyWpe::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// `[batch][seq_len][d_x]` to `[batch][seq_len][d_model]`.
    fn encode(&self, x: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(to_nested(&self.inner.encode(&to_tensor(x)?).map_err(py_err)?))
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.cfg.levels
    }

    #[getter]
    fn d_model(&self) -> usize {
        self.inner.cfg.d_model
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.cfg;
        format!(
            "DyWpe(d_x={}, d_model={}, levels={}, wavelet='{}')",
            c.d_x, c.d_model, c.levels, c.wavelet
        )
    }
}

/// Input-independent wavelet encoder with learnable bands.
#[pyclass(name = "StaticWpe")]
struct PyStaticWpe {
    inner: core::StaticWpe,
}

#[pymethods]
impl PyStaticWpe {
    #[new]
    #[pyo3(signature = (d_model, seq_len, wavelet="haar", levels=None, seed=0))]
    fn new(d_model: usize, seq_len: usize, wavelet: &str, levels: Option<usize>, seed: u64) -> PyResult<Self> {
        let mut cfg = DyWpeConfig::for_length(1, d_model, seq_len, wavelet_name(wavelet)?);
        if let Some(j) = levels {
            cfg.levels = j;
        }
        cfg.check_length(seq_len).map_err(py_err)?;
        let inner = core::StaticWpe::new(cfg, seq_len, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn encode(&self, x: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<Vec<Vec<f64>>>> {
        Ok(to_nested(&self.inner.encode(&to_tensor(x)?).map_err(py_err)?))
    }
}

/// Bands of a multi-level decomposition of one series.
#[pyclass(name = "Pyramid")]
struct PyPyramid {
    inner: CoeffPyramid,
    wavelet: WaveletName,
}

#[pymethods]
impl PyPyramid {
    #[getter]
    fn approx(&self) -> Vec<f64> {
        self.inner.approx.data().to_vec()
    }

    /// Detail bands, coarsest first.
    #[getter]
    fn details(&self) -> Vec<Vec<f64>> {
        self.inner.details.iter().map(|d| d.data().to_vec()).collect()
    }

    #[getter]
    fn levels(&self) -> usize {
        self.inner.levels()
    }

    fn energy(&self) -> f64 {
        self.inner.energy()
    }

    /// Synthesizes the series back.
    fn reconstruct(&self) -> PyResult<Vec<f64>> {
        let fb = FilterBank::new(self.wavelet);
        Ok(wavelet::idwt_multi(&self.inner, &fb).map_err(py_err)?.into_data())
    }
}

#[pyfunction]
#[pyo3(signature = (x, wavelet="haar", levels=1))]
fn dwt(x: Vec<f64>, wavelet: &str, levels: usize) -> PyResult<PyPyramid> {
    let name = wavelet_name(wavelet)?;
    let inner = wavelet::dwt_multi(&series(x)?, &FilterBank::new(name), levels).map_err(py_err)?;
    Ok(PyPyramid { inner, wavelet: name })
}

#[pyfunction]
#[pyo3(signature = (length, wavelet="haar"))]
fn max_level(length: usize, wavelet: &str) -> PyResult<usize> {
    Ok(wavelet::max_level(length, wavelet_name(wavelet)?.filter_len()))
}

#[pyfunction]
fn sinusoidal_pe(t_len: usize, d_model: usize) -> PyResult<Vec<Vec<f64>>> {
    let t = pe::sinusoidal_pe(t_len, d_model).map_err(py_err)?;
    Ok(t.data().chunks(d_model).map(<[f64]>::to_vec).collect())
}

#[pyfunction]
fn alibi_slopes(heads: usize) -> Vec<f64> {
    pe::alibi_slopes(heads)
}

/// Encoder parameter count `2 d^2 + (J + 1) d`, plus `d_x` when the
/// channel projection is counted.
#[pyfunction]
#[pyo3(signature = (d_model, seq_len, levels=None, d_x=1, include_channel_proj=false, wavelet="haar"))]
fn param_count(
    d_model: usize,
    seq_len: usize,
    levels: Option<usize>,
    d_x: usize,
    include_channel_proj: bool,
    wavelet: &str,
) -> PyResult<usize> {
    let mut cfg = DyWpeConfig::for_length(d_x, d_model, seq_len, wavelet_name(wavelet)?);
    if let Some(j) = levels {
        cfg.levels = j;
    }
    Ok(core::param_count(&cfg, include_channel_proj))
}

type Dataset = (Vec<Vec<Vec<f64>>>, Vec<usize>);

fn unpack(split: DatasetSplit) -> Dataset {
    (to_nested(&split.x), split.y)
}

/// `(x, y)` for the context-dependent classification task.
#[pyfunction]
#[pyo3(signature = (n, length=128, seed=0))]
fn gen_sigctx(n: usize, length: usize, seed: u64) -> PyResult<Dataset> {
    Ok(unpack(data::gen_sigctx(n, length, seed).map_err(py_err)?))
}

/// `(x, y)` for the task whose label lives at wavelet level `j_true`.
#[pyfunction]
#[pyo3(signature = (n, length=64, j_true=3, seed=0))]
fn gen_multiscale(n: usize, length: usize, j_true: usize, seed: u64) -> PyResult<Dataset> {
    Ok(unpack(data::gen_multiscale(n, length, j_true, seed).map_err(py_err)?))
}

/// Runs a CLI verb; returns `(passed, report_lines)`.
#[pyfunction]
#[pyo3(signature = (verb, config=None, overrides=Vec::new()))]
fn run(py: Python<'_>, verb: &str, config: Option<PathBuf>, overrides: Vec<String>) -> PyResult<(bool, Vec<String>)> {
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(&path).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    for pair in &overrides {
        cfg.set_pair(pair).map_err(py_err)?;
    }
    let command = match verb {
        "gradcheck" => commands::cmd_gradcheck,
        "recon" => commands::cmd_recon,
        "train" => commands::cmd_train,
        "ablate" => commands::cmd_ablate,
        "bench" => commands::cmd_bench,
        other => return Err(PyValueError::new_err(format!("unknown verb '{other}'"))),
    };
    let outcome = py.detach(|| command(&cfg)).map_err(py_err)?;
    Ok((outcome.passed, outcome.lines))
}

#[pymodule]
fn pydywpe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDyWpe>()?;
    m.add_class::<PyStaticWpe>()?;
    m.add_class::<PyPyramid>()?;
    m.add_function(wrap_pyfunction!(dwt, m)?)?;
    m.add_function(wrap_pyfunction!(max_level, m)?)?;
    m.add_function(wrap_pyfunction!(sinusoidal_pe, m)?)?;
    m.add_function(wrap_pyfunction!(alibi_slopes, m)?)?;
    m.add_function(wrap_pyfunction!(param_count, m)?)?;
    m.add_function(wrap_pyfunction!(gen_sigctx, m)?)?;
    m.add_function(wrap_pyfunction!(gen_multiscale, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
