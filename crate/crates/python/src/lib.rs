//! Python bindings: the UNet, training, synthetic data, metrics and the CLI.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use scarseg::data::{self, SynthConfig as CoreSynthConfig};
use scarseg::eval::{self, MetricsReport as CoreMetrics};
use scarseg::tensor::{Rng, Tape, Tensor};
use scarseg::train::{self, Checkpoint, TrainConfig as CoreTrainConfig};
use scarseg::unet::{UNetConfig, UNetModel};
use scarseg::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Load { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Encoder-decoder segmentation network over stacked RGB+NIR channels.
#[pyclass(name = "UNet")]
struct PyUNet {
    inner: UNetModel<f32>,
}

#[pymethods]
impl PyUNet {
    #[new]
    #[pyo3(signature = (in_channels=4, depth=4, base_width=16, dropout_p=0.1, seed=0))]
    fn new(in_channels: usize, depth: usize, base_width: usize, dropout_p: f64, seed: u64) -> PyResult<Self> {
        let config = UNetConfig {
            in_channels,
            depth,
            base_width,
            dropout_p,
            out_channels: 1,
        };
        let inner = UNetModel::build(config, &Rng::new(seed)).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Loads the model stored in a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).map_err(to_py)?.model,
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.config().depth
    }

    #[getter]
    fn base_width(&self) -> usize {
        self.inner.config().base_width
    }

    fn param_count(&self) -> usize {
        self.inner.params().element_count()
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params().iter().map(|(_, n, _)| n.to_string()).collect()
    }

    /// Eval-mode forward. `x` is a flat row-major `[N, C, H, W]` buffer;
    /// returns the flat `[N, 1, H, W]` probabilities and their shape.
    fn predict(&self, x: Vec<f32>, shape: Vec<usize>) -> PyResult<(Vec<f32>, Vec<usize>)> {
        let t = Tensor::new(&shape, x).map_err(to_py)?;
        let y = self.inner.predict(&t).map_err(to_py)?;
        Ok((y.data().to_vec(), y.shape().to_vec()))
    }

    /// Probability map for a scene directory; returns (height, width, flat probs).
    #[pyo3(signature = (scene_dir, tile=256, stride=256))]
    fn predict_scene(&self, scene_dir: PathBuf, tile: usize, stride: usize) -> PyResult<(usize, usize, Vec<f32>)> {
        let s = data::load_scene(&scene_dir).map_err(to_py)?;
        let p = eval::predict_scene(&self.inner, &s, tile, stride).map_err(to_py)?;
        Ok((p.height, p.width, p.data))
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "UNet(in_channels={}, depth={}, base_width={}, dropout_p={}, params={})",
            c.in_channels,
            c.depth,
            c.base_width,
            c.dropout_p,
            self.param_count()
        )
    }
}

/// Confusion counts and derived fractions.
#[pyclass(name = "MetricsReport", frozen)]
struct PyMetrics {
    inner: CoreMetrics,
}

#[pymethods]
impl PyMetrics {
    #[getter]
    fn tp(&self) -> u64 {
        self.inner.tp
    }
    #[getter]
    fn fp(&self) -> u64 {
        self.inner.fp
    }
    #[getter]
    fn tn(&self) -> u64 {
        self.inner.tn
    }
    #[getter]
    fn fn_(&self) -> u64 {
        self.inner.fn_
    }
    #[getter]
    fn pixel_accuracy(&self) -> f64 {
        self.inner.pixel_accuracy
    }
    #[getter]
    fn precision(&self) -> f64 {
        self.inner.precision
    }
    #[getter]
    fn recall(&self) -> f64 {
        self.inner.recall
    }
    #[getter]
    fn f1(&self) -> f64 {
        self.inner.f1
    }
    #[getter]
    fn iou(&self) -> f64 {
        self.inner.iou
    }

    fn __repr__(&self) -> String {
        self.inner.to_key_values().trim_end().replace('\n', " ")
    }
}

/// Compares two flat binary masks of the same `height x width`.
#[pyfunction]
fn compute_metrics(pred: Vec<u8>, reference: Vec<u8>, height: usize, width: usize) -> PyResult<PyMetrics> {
    let p = data::Mask::from_vec(height, width, pred).map_err(to_py)?;
    let r = data::Mask::from_vec(height, width, reference).map_err(to_py)?;
    Ok(PyMetrics {
        inner: eval::compute_metrics(&p, &r).map_err(to_py)?,
    })
}

/// Mean clamped binary cross-entropy of flat probability and target buffers.
#[pyfunction]
fn bce_loss(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    let n = pred.len();
    let mut tape = Tape::<f64>::new();
    let p = tape.leaf(Tensor::new(&[1, 1, 1, n], pred).map_err(to_py)?);
    let y = Tensor::new(&[1, 1, 1, n], target).map_err(to_py)?;
    let l = train::bce_loss(&mut tape, p, &y).map_err(to_py)?;
    tape.value(l).item().map_err(to_py)
}

/// Window origins along one axis for a tile/stride grid.
#[pyfunction]
fn tile_offsets(length: usize, tile: usize, stride: usize) -> PyResult<Vec<usize>> {
    data::tile_offsets(length, tile, stride).map_err(to_py)
}

/// Writes a synthetic dataset tree under `root`; returns the scene count.
#[pyfunction]
#[pyo3(signature = (root, n_scenes=16, canvas=128, seed=0, label_drop_fraction=0.0, false_label_count=0, river_prob=0.0, cloud_prob=0.0))]
#[allow(clippy::too_many_arguments)]
fn synth_dataset(
    root: PathBuf,
    n_scenes: usize,
    canvas: usize,
    seed: u64,
    label_drop_fraction: f64,
    false_label_count: usize,
    river_prob: f64,
    cloud_prob: f64,
) -> PyResult<usize> {
    let cfg = CoreSynthConfig {
        n_scenes,
        canvas,
        seed,
        label_drop_fraction,
        false_label_count,
        river_prob,
        cloud_prob,
        ..CoreSynthConfig::default()
    };
    let scenes = data::synth_dataset(&cfg).map_err(to_py)?;
    data::save_dataset(&root, &scenes).map_err(to_py)?;
    Ok(scenes.len())
}

/// Trains `model` on every scene under `root` (whole-scene or tiled) without
/// a validation split. Returns the history CSV text.
#[pyfunction]
#[pyo3(signature = (model, root, epochs=5, lr=1e-4, batch_size=8, tile=128, seed=0))]
fn fit(
    model: &mut PyUNet,
    root: PathBuf,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    tile: usize,
    seed: u64,
) -> PyResult<String> {
    let scenes = data::load_dataset(&root).map_err(to_py)?;
    let mut examples = Vec::new();
    for s in &scenes {
        for t in data::tile_scene(s, tile, tile).map_err(to_py)? {
            examples.push(t.example());
        }
    }
    let cfg = CoreTrainConfig {
        epochs,
        lr,
        batch_train: batch_size,
        seed,
        ..CoreTrainConfig::default()
    };
    let mut trainer = train::Trainer::new(model.inner.clone(), cfg).map_err(to_py)?;
    trainer.fit(&examples, None).map_err(to_py)?;
    let csv = trainer.history.to_csv();
    model.inner = trainer.model;
    Ok(csv)
}

/// Runs the command-line interface with `args` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    let argv = std::iter::once("scarseg".to_string()).chain(args);
    scarseg::cli::run(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

#[pymodule]
fn scarseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyUNet>()?;
    m.add_class::<PyMetrics>()?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(bce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(tile_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(synth_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
