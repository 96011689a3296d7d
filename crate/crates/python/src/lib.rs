//! Python bindings: synthetic clips, the guidance and metric oracles, and
//! the pipeline subcommands. Tensors cross the boundary as flat lists in
//! channel-major order plus a shape.

use std::collections::HashMap;
use std::path::PathBuf;

use diffmvr_cli::ablate::{cmd_ablate, worker_budget};
use diffmvr_cli::commands::{cmd_eval, cmd_gen, cmd_inpaint, cmd_pretrain_vae, cmd_train};
use diffmvr_cli::RunConfig;
use diffmvr_core::dataio::{generate_clip as synth_clip, SynthConfig};
use diffmvr_core::diffusion::{build_schedule, ScheduleSpec};
use diffmvr_core::numerics::Tensor;
use diffmvr_core::{metrics, preprocess, Error};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Io(_) | Error::Format(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn tensor(data: Vec<f32>, shape: &[usize]) -> PyResult<Tensor<f32>> {
    Tensor::new(shape, data).map_err(py_err)
}

/// Cumulative products ᾱ_1..ᾱ_T. Without a β range, the default range
/// rescaled to `t_max` steps is used.
#[pyfunction]
#[pyo3(signature = (t_max, beta_start=None, beta_end=None))]
fn alpha_bars(t_max: usize, beta_start: Option<f64>, beta_end: Option<f64>) -> PyResult<Vec<f64>> {
    let s = match (beta_start, beta_end) {
        (Some(a), Some(b)) => build_schedule(t_max, a, b),
        (None, None) => ScheduleSpec::scaled(t_max).build(),
        _ => return Err(PyValueError::new_err("give both beta_start and beta_end, or neither")),
    }
    .map_err(py_err)?;
    Ok((1..=t_max).map(|t| s.alpha_bar(t)).collect())
}

/// SSIM of two `[C, H, W]` images.
#[pyfunction]
fn ssim(a: Vec<f32>, b: Vec<f32>, shape: [usize; 3]) -> PyResult<f64> {
    metrics::ssim(&tensor(a, &shape)?, &tensor(b, &shape)?).map_err(py_err)
}

#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    metrics::frechet_distance(&a, &b).map_err(py_err)
}

/// Most recent frame before `t` with coverage below `threshold`.
#[pyfunction]
#[pyo3(signature = (coverages, t, threshold=preprocess::DEFAULT_CLEAN_THRESHOLD))]
fn find_past(coverages: Vec<f64>, t: usize, threshold: f64) -> Option<usize> {
    preprocess::find_past_in_coverages(&coverages, t, threshold)
}

/// Estimated mirror axis of a `[C, H, W]` frame under a `[1, H, W]` mask.
#[pyfunction]
fn symmetry_axis(frame: Vec<f32>, mask: Vec<f32>, shape: [usize; 3]) -> PyResult<usize> {
    let m = tensor(mask, &[1, shape[1], shape[2]])?;
    preprocess::estimate_symmetry_axis(&tensor(frame, &shape)?, &m).map_err(py_err)
}

/// One synthetic clip as a dict of flat frames, masks, truth and coverages.
#[pyfunction]
#[pyo3(signature = (seed, p=32, frames=8))]
fn generate_clip<'py>(py: Python<'py>, seed: u64, p: usize, frames: usize) -> PyResult<Bound<'py, PyDict>> {
    let v = synth_clip(&SynthConfig { p, frames, seed, ..Default::default() }).map_err(py_err)?;
    let flat = |ts: &[Tensor<f32>]| ts.iter().map(|t| t.data().to_vec()).collect::<Vec<_>>();
    let d = PyDict::new(py);
    d.set_item("shape", (v.channels(), p, p))?;
    d.set_item("frames", flat(v.frames()))?;
    d.set_item("masks", flat(v.masks()))?;
    d.set_item("truth", v.truth().map(flat))?;
    d.set_item("coverages", v.coverages())?;
    Ok(d)
}

/// Run a subcommand (`gen`, `pretrain-vae`, `train`, `inpaint`, `eval`,
/// `ablate`) with an optional config file and `key -> value` settings.
/// Returns the path or table the command produced.
#[pyfunction]
#[pyo3(signature = (command, config=None, settings=None))]
fn run(py: Python<'_>, command: &str, config: Option<PathBuf>, settings: Option<HashMap<String, String>>) -> PyResult<String> {
    let mut cfg = match config {
        Some(p) => RunConfig::from_file(&p).map_err(py_err)?,
        None => RunConfig::default(),
    };
    let mut keys: Vec<_> = settings.unwrap_or_default().into_iter().collect();
    keys.sort();
    for (k, v) in keys {
        cfg.set(&k, &v).map_err(py_err)?;
    }
    let command = command.to_string();
    py.detach(move || -> diffmvr_core::Result<String> {
        Ok(match command.as_str() {
            "gen" => {
                let s = cmd_gen(&cfg)?;
                format!("{} train, {} val, {} test", s.train, s.val, s.test)
            }
            "pretrain-vae" => cmd_pretrain_vae(&cfg)?.display().to_string(),
            "train" => cmd_train(&cfg)?.checkpoint.display().to_string(),
            "inpaint" => {
                cmd_inpaint(&cfg)?;
                cfg.out.join("inpainted").display().to_string()
            }
            "eval" => cmd_eval(&cfg)?.to_table(),
            "ablate" => cmd_ablate(&cfg, worker_budget()?)?.to_text(),
            other => return Err(Error::Config(format!("unknown command {other:?}"))),
        })
    })
    .map_err(py_err)
}

#[pymodule]
fn diffmvr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(alpha_bars, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(find_past, m)?)?;
    m.add_function(wrap_pyfunction!(symmetry_axis, m)?)?;
    m.add_function(wrap_pyfunction!(generate_clip, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
