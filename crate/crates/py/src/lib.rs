//! Python bindings: scenes, sensing, rewards, Q-networks and the trainer.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pushgrasp::geometry::Vec2;
use pushgrasp::policy::Primitive;
use pushgrasp::qfcn::{gradient_check as grad_check, read_checkpoint, write_checkpoint, Architecture, Network, Tensor};
use pushgrasp::reward::{self, Outcome};
use pushgrasp::sensing::{self, HeightmapState, Perspectives};
use pushgrasp::trainer::{self, MetricsRow};
use pushgrasp::world::{self, GraspCommand, PushCommand, Shape, WorldConfig};
use pushgrasp::TrainConfig;

fn err(e: pushgrasp::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr<Err = pushgrasp::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

/// Tabletop scene of rigid 2D objects.
#[pyclass(name = "Scene")]
struct PyScene {
    inner: world::Scene,
    cfg: WorldConfig,
}

#[pymethods]
impl PyScene {
    /// `n_known` blocks plus `n_unknown` objects of `shape`, placed at random.
    #[staticmethod]
    #[pyo3(signature = (n_known, n_unknown=0, shape="cylinder", seed=0, spawn_extent=None))]
    fn spawn(n_known: usize, n_unknown: usize, shape: &str, seed: u64, spawn_extent: Option<f64>) -> PyResult<Self> {
        let mut cfg = WorldConfig::default();
        if let Some(e) = spawn_extent {
            cfg.spawn_extent = e;
        }
        let inner = world::spawn_scene(n_known, n_unknown, parse::<Shape>(shape)?, seed, &cfg).map_err(err)?;
        Ok(Self { inner, cfg })
    }

    fn __len__(&self) -> usize {
        self.inner.objects.len()
    }

    #[getter]
    fn step_count(&self) -> usize {
        self.inner.step_count
    }

    /// One dict per object: id, shape, x, y, heading, height.
    fn objects<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .objects
            .iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("id", o.id)?;
                d.set_item("shape", o.shape.name())?;
                d.set_item("x", o.pose.x)?;
                d.set_item("y", o.pose.y)?;
                d.set_item("heading", o.pose.heading)?;
                d.set_item("height", o.height)?;
                Ok(d)
            })
            .collect()
    }

    fn is_terminal(&self, max_actions: usize) -> bool {
        self.inner.is_terminal(max_actions)
    }

    /// Pushes 5 cm from `(x, y)` along `angle`; returns `(moved, removed)` ids.
    fn push(&mut self, x: f64, y: f64, angle: f64) -> PyResult<(Vec<u32>, Vec<u32>)> {
        let cmd = PushCommand::new(Vec2::new(x, y), angle, self.cfg.push_distance).map_err(err)?;
        let (next, report) = world::apply_push(&self.inner, &cmd, &self.cfg);
        self.inner = next;
        Ok((report.moved, report.removed))
    }

    /// Closes the jaws across `angle` at `(x, y)`; returns the grasped id.
    fn grasp(&mut self, x: f64, y: f64, angle: f64) -> PyResult<Option<u32>> {
        let cmd = GraspCommand::new(Vec2::new(x, y), angle, self.cfg.aperture, self.cfg.finger_width, 0.0).map_err(err)?;
        let (next, out) = world::apply_grasp(&self.inner, &cmd, &self.cfg);
        self.inner = next;
        Ok(out.grasped)
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_snapshot().map_err(err)
    }
}

/// Fused top-view observation.
#[pyclass(name = "Heightmap")]
struct PyHeightmap {
    inner: HeightmapState,
}

#[pymethods]
impl PyHeightmap {
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.geometry.rows, self.inner.geometry.cols)
    }

    #[getter]
    fn cell_size(&self) -> f64 {
        self.inner.geometry.cell_size
    }

    fn height(&self) -> Vec<Vec<f32>> {
        self.inner.height.chunks(self.inner.geometry.cols).map(|r| r.to_vec()).collect()
    }

    fn valid(&self) -> Vec<Vec<bool>> {
        self.inner.valid.chunks(self.inner.geometry.cols).map(|r| r.to_vec()).collect()
    }

    fn color(&self) -> Vec<Vec<[f32; 3]>> {
        self.inner.color.chunks(self.inner.geometry.cols).map(|r| r.to_vec()).collect()
    }

    fn valid_count(&self) -> usize {
        self.inner.valid_count()
    }

    /// World coordinates of a cell center.
    fn cell_center(&self, u: usize, v: usize) -> (f64, f64) {
        let p = self.inner.geometry.cell_center(u, v);
        (p.x, p.y)
    }

    /// Fraction of occupied cells whose height changed going to `after`.
    fn change_rate(&self, after: &PyHeightmap) -> PyResult<f64> {
        sensing::pixel_change_rate(&self.inner, &after.inner).map_err(err)
    }
}

/// Camera rig that turns scenes into heightmaps.
#[pyclass(name = "Sensor")]
struct PySensor {
    inner: sensing::Sensor,
}

#[pymethods]
impl PySensor {
    #[new]
    #[pyo3(signature = (resolution=64, perspectives="dual"))]
    fn new(resolution: usize, perspectives: &str) -> PyResult<Self> {
        let p: Perspectives = parse(perspectives)?;
        let inner = sensing::Sensor::new(&WorldConfig::default().workspace, resolution, p).map_err(err)?;
        Ok(Self { inner })
    }

    fn observe(&self, scene: &PyScene) -> PyHeightmap {
        PyHeightmap {
            inner: self.inner.observe(&scene.inner),
        }
    }
}

fn outcome(primitive: &str, grasp_success: Option<bool>, tau: Option<f64>) -> PyResult<Outcome> {
    Ok(Outcome {
        primitive: match primitive {
            "push" => Primitive::Push,
            "grasp" => Primitive::Grasp,
            _ => return Err(PyValueError::new_err(format!("unknown primitive `{primitive}`"))),
        },
        grasp_success,
        tau,
    })
}

#[pyfunction]
#[pyo3(signature = (primitive, grasp_success=None, tau=None))]
fn piecewise_reward(primitive: &str, grasp_success: Option<bool>, tau: Option<f64>) -> PyResult<f64> {
    reward::piecewise_reward(&outcome(primitive, grasp_success, tau)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (primitive, grasp_success=None, tau=None, threshold=reward::DEFAULT_SINGLE_THRESHOLD))]
fn single_reward(primitive: &str, grasp_success: Option<bool>, tau: Option<f64>, threshold: f64) -> PyResult<f64> {
    reward::single_reward(&outcome(primitive, grasp_success, tau)?, threshold).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (reward, next_qmax, terminal, gamma=0.6))]
fn td_target(reward: f64, next_qmax: f64, terminal: bool, gamma: f64) -> f64 {
    trainer::td_target(reward, next_qmax, terminal, gamma)
}

fn architecture(spec: &str) -> PyResult<Architecture> {
    match spec {
        "stride4" => Ok(Architecture::stride4()),
        "stride16" => Ok(Architecture::stride16()),
        "tiny" => Ok(Architecture::tiny()),
        text => parse(text),
    }
}

/// One fully convolutional Q-network.
#[pyclass(name = "QNetwork")]
struct PyQNetwork {
    inner: Network<f32>,
}

#[pymethods]
impl PyQNetwork {
    /// `arch` is `stride4`, `stride16`, `tiny` or an architecture string.
    #[new]
    #[pyo3(signature = (arch="stride4", seed=0))]
    fn new(arch: &str, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: Network::init(&architecture(arch)?, seed).map_err(err)?,
        })
    }

    #[getter]
    fn architecture(&self) -> String {
        self.inner.architecture().to_string()
    }

    fn num_trainable(&self) -> usize {
        self.inner.num_trainable()
    }

    /// Eval-mode forward of a `[channel][row][col]` input; returns the Q map.
    fn forward(&self, input: Vec<Vec<Vec<f32>>>) -> PyResult<Vec<Vec<f32>>> {
        let (c, r) = (input.len(), input.first().map_or(0, |p| p.len()));
        let cols = input.first().and_then(|p| p.first()).map_or(0, |row| row.len());
        let data: Vec<f32> = input.into_iter().flatten().flatten().collect();
        let x = Tensor::new(c, r, cols, data).map_err(err)?;
        let q = self.inner.forward_eval(&x).map_err(err)?;
        Ok(q.data.chunks(q.cols).map(|row| row.to_vec()).collect())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path)?;
        write_checkpoint(&self.inner, &mut BufWriter::new(f))?;
        Ok(())
    }

    #[staticmethod]
    #[pyo3(signature = (path, arch="stride4"))]
    fn load(path: PathBuf, arch: &str) -> PyResult<Self> {
        let f = File::open(&path)?;
        Ok(Self {
            inner: read_checkpoint(BufReader::new(f), &architecture(arch)?).map_err(err)?,
        })
    }
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("global_step", r.global_step)?;
    d.set_item("episode", r.episode)?;
    d.set_item("group", r.group)?;
    d.set_item("primitive", r.primitive.name())?;
    d.set_item("rotation_bin", r.rotation_bin)?;
    d.set_item("pixel", r.pixel)?;
    d.set_item("reward", r.reward)?;
    d.set_item("td_target", r.td_target)?;
    d.set_item("loss", r.loss)?;
    d.set_item("epsilon", r.epsilon)?;
    d.set_item("grasp_attempts", r.grasp_attempts)?;
    d.set_item("grasp_successes", r.grasp_successes)?;
    d.set_item("objects_remaining", r.objects_remaining)?;
    d.set_item("grasped", r.grasped)?;
    d.set_item("explored", r.explored)?;
    Ok(d)
}

/// Online push-grasp Q-learner at desk scale, with `key=value` overrides.
#[pyclass(name = "Trainer")]
struct PyTrainer {
    inner: trainer::Trainer,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (seed=0, **overrides))]
    fn new(seed: u64, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut cfg = TrainConfig::desk_scale();
        cfg.seed = seed;
        if let Some(kv) = overrides {
            for (k, v) in kv.iter() {
                cfg.set(&k.extract::<String>()?, &v.str()?.to_string()).map_err(err)?;
            }
        }
        Ok(Self {
            inner: trainer::Trainer::new(cfg).map_err(err)?,
        })
    }

    #[getter]
    fn global_step(&self) -> usize {
        self.inner.global_step()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon()
    }

    fn config(&self) -> String {
        self.inner.cfg.to_text()
    }

    fn observation(&self) -> PyHeightmap {
        PyHeightmap {
            inner: self.inner.state().clone(),
        }
    }

    /// One training action; returns its metrics row.
    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let report = self.inner.step().map_err(err)?;
        row_dict(py, &report.row)
    }

    /// `n` training actions; returns their metrics rows.
    fn run<'py>(&mut self, py: Python<'py>, n: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
        (0..n)
            .map(|_| {
                let report = self.inner.step().map_err(err)?;
                row_dict(py, &report.row)
            })
            .collect()
    }

    /// Writes `push_<tag>.ckpt` and `grasp_<tag>.ckpt` under `dir`.
    fn save(&self, dir: PathBuf, tag: &str) -> PyResult<(PathBuf, PathBuf)> {
        self.inner.agent.save(&dir, tag).map_err(err)
    }
}

/// Finite-difference check of the tiny network; returns a summary dict.
#[pyfunction]
#[pyo3(signature = (seed=0, step=1e-4, tolerance=1e-4))]
fn gradient_check<'py>(py: Python<'py>, seed: u64, step: f64, tolerance: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = grad_check(&Architecture::tiny(), 8, 8, seed, step, tolerance).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("scalars", r.scalars)?;
    d.set_item("failures", r.failures)?;
    d.set_item("max_relative_error", r.max_relative_error)?;
    d.set_item("passed", r.passed())?;
    Ok(d)
}

#[pymodule]
fn pushgrasp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScene>()?;
    m.add_class::<PyHeightmap>()?;
    m.add_class::<PySensor>()?;
    m.add_class::<PyQNetwork>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(piecewise_reward, m)?)?;
    m.add_function(wrap_pyfunction!(single_reward, m)?)?;
    m.add_function(wrap_pyfunction!(td_target, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    Ok(())
}
