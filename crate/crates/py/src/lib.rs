//! Python bindings: meshes, metrics, losses, rendering, the gradient suite and
//! the toy trainer. Points cross the boundary as lists of `(x, y, z)` tuples.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use mutualmesh::losses;
use mutualmesh::mesh::{self, MeshGraph, MeshRole};
use mutualmesh::metrics;
use mutualmesh::pipeline::{self, PipelineConfig};
use mutualmesh::raster::{self, CameraWP, RenderOptions, ViewAngle};
use mutualmesh::selfcheck::{gradient_suite, SuiteOptions};
use mutualmesh::{Error, Vec3};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Checkpoint(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

type Point = (f64, f64, f64);

fn points_in(points: Vec<Point>) -> Vec<Vec3> {
    points.into_iter().map(|(x, y, z)| Vec3::new(x, y, z)).collect()
}

fn points_out(points: &[Vec3]) -> Vec<Point> {
    points.iter().map(|p| (p.x, p.y, p.z)).collect()
}

/// Closed triangle mesh with a fixed topology.
#[pyclass(name = "Mesh", module = "mutualmesh_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyMesh {
    inner: MeshGraph,
}

#[pymethods]
impl PyMesh {
    #[new]
    fn new(vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> PyResult<Self> {
        let inner = MeshGraph::new(points_in(vertices), faces, MeshRole::GroundTruth).map_err(to_py)?;
        Ok(PyMesh { inner })
    }

    #[staticmethod]
    fn icosphere(subdivisions: u32) -> PyResult<Self> {
        Ok(PyMesh {
            inner: mesh::make_icosphere(subdivisions).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn from_obj(text: &str) -> PyResult<Self> {
        Ok(PyMesh {
            inner: mesh::load_obj(text.as_bytes()).map_err(to_py)?,
        })
    }

    fn to_obj(&self) -> PyResult<String> {
        let bytes = mesh::write_obj(&self.inner).map_err(to_py)?;
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    #[getter]
    fn vertices(&self) -> Vec<Point> {
        points_out(self.inner.vertices())
    }

    #[getter]
    fn faces(&self) -> Vec<[usize; 3]> {
        self.inner.faces().to_vec()
    }

    #[getter]
    fn edges(&self) -> Vec<[usize; 2]> {
        self.inner.edges().to_vec()
    }

    fn counts(&self) -> (usize, usize, usize) {
        (self.inner.num_vertices(), self.inner.num_edges(), self.inner.num_faces())
    }

    /// Same topology, new positions.
    fn with_vertices(&self, vertices: Vec<Point>) -> PyResult<Self> {
        if vertices.len() != self.inner.num_vertices() {
            return Err(PyValueError::new_err(format!(
                "expected {} vertices, got {}",
                self.inner.num_vertices(),
                vertices.len()
            )));
        }
        Ok(PyMesh {
            inner: self.inner.with_vertices(points_in(vertices)),
        })
    }

    /// `(passed, violation_count)`.
    fn validate(&self) -> (bool, usize) {
        let r = mesh::validate_manifold(&self.inner);
        (r.pass, r.violations.len())
    }

    fn vertex_normals(&self) -> PyResult<Vec<Point>> {
        Ok(points_out(&mesh::vertex_normals(&self.inner).map_err(to_py)?))
    }

    /// Four neighbouring edge indices per edge.
    fn edge_adjacency(&self) -> PyResult<Vec<[usize; 4]>> {
        Ok(mesh::build_edge_adjacency(&self.inner).map_err(to_py)?.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        let (v, e, f) = self.counts();
        format!("Mesh(V={v}, E={e}, F={f})")
    }
}

#[pyfunction]
fn chamfer(a: Vec<Point>, b: Vec<Point>) -> PyResult<f64> {
    losses::chamfer(&points_in(a), &points_in(b)).map_err(to_py)
}

#[pyfunction]
fn normal_loss(pred: &PyMesh, target: &PyMesh) -> PyResult<f64> {
    losses::normal_loss(&pred.inner, &target.inner).map_err(to_py)
}

#[pyfunction]
fn mpjpe(pred: Vec<Point>, gt: Vec<Point>) -> PyResult<f64> {
    metrics::mpjpe(&points_in(pred), &points_in(gt)).map_err(to_py)
}

#[pyfunction]
fn pa_mpjpe(pred: Vec<Point>, gt: Vec<Point>) -> PyResult<f64> {
    metrics::pa_mpjpe(&points_in(pred), &points_in(gt)).map_err(to_py)
}

#[pyfunction]
fn mvpe(pred: Vec<Point>, gt: Vec<Point>) -> PyResult<f64> {
    metrics::mvpe(&points_in(pred), &points_in(gt)).map_err(to_py)
}

/// `(chamfer, p2s, s2p)` from area-uniform samples.
#[pyfunction]
#[pyo3(signature = (recon, gt, n_samples = 10_000, seed = 0))]
fn surface_distances(recon: &PyMesh, gt: &PyMesh, n_samples: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let d = metrics::surface_distances(&recon.inner, &gt.inner, n_samples, seed).map_err(to_py)?;
    Ok((d.chamfer, d.p2s, d.s2p))
}

/// `(cos, l2)` averaged over the four canonical yaw views.
#[pyfunction]
#[pyo3(signature = (recon, gt, resolution = 256))]
fn normal_map_metrics(recon: &PyMesh, gt: &PyMesh, resolution: usize) -> PyResult<(f64, f64)> {
    let cam = metrics::framing_camera(&gt.inner, resolution).map_err(to_py)?;
    let opts = RenderOptions::default().with_pivot(gt.inner.centroid());
    let m = metrics::normal_map_metrics(&recon.inner, &gt.inner, &cam, opts).map_err(to_py)?;
    Ok((m.cos, m.l2))
}

/// Row-major `0/1` silhouette as bytes. `camera` is `(scale, tx, ty)`; the
/// default frames the mesh.
#[pyfunction]
#[pyo3(signature = (mesh, angle = 0.0, resolution = 256, camera = None))]
fn render_silhouette<'py>(
    py: Python<'py>,
    mesh: &PyMesh,
    angle: f64,
    resolution: usize,
    camera: Option<(f64, f64, f64)>,
) -> PyResult<Bound<'py, PyBytes>> {
    let cam = match camera {
        Some((s, tx, ty)) => CameraWP::new(s, tx, ty, resolution, resolution),
        None => metrics::framing_camera(&mesh.inner, resolution),
    }
    .map_err(to_py)?;
    let mask = raster::render_silhouette(&mesh.inner, ViewAngle(angle), &cam, RenderOptions::default()).map_err(to_py)?;
    Ok(PyBytes::new(py, &mask.data))
}

/// Runs the layer and loss gradient checks; returns `(passed, max_error, failures)`.
#[pyfunction(name = "gradient_suite")]
#[pyo3(signature = (seed = 0, tolerance = 1e-4, step = 1e-5))]
fn py_gradient_suite(seed: u64, tolerance: f64, step: f64) -> PyResult<(bool, f64, Vec<String>)> {
    let r = gradient_suite(SuiteOptions {
        seed,
        tolerance,
        step,
        inject_fault: false,
    })
    .map_err(to_py)?;
    let failures = r.failures().into_iter().map(str::to_owned).collect();
    Ok((r.passed(), r.max_error(), failures))
}

#[pyfunction]
fn default_config() -> String {
    PipelineConfig::default().to_json()
}

/// Trained two-stage network.
#[pyclass(name = "Network", module = "mutualmesh_py", frozen)]
struct PyNetwork {
    inner: pipeline::Network,
}

#[pymethods]
impl PyNetwork {
    #[staticmethod]
    fn load(bytes: &[u8]) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: pipeline::load_checkpoint(bytes).map_err(to_py)?,
        })
    }

    fn save<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &pipeline::save_checkpoint(&self.inner))
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    /// Predicted `(body, clothed)` meshes for synthetic sample `index` of
    /// the dataset described by `config_json`.
    #[pyo3(signature = (index, config_json = None))]
    fn predict_synthetic(&self, index: usize, config_json: Option<&str>) -> PyResult<(PyMesh, PyMesh)> {
        let cfg = parse_config(config_json)?;
        let data = pipeline::make_synthetic_dataset(&cfg.data, self.inner.config.template_subdivisions).map_err(to_py)?;
        let sample = data
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("sample {index} out of range 0..{}", data.len())))?;
        let pred = self.inner.forward(sample).map_err(to_py)?;
        Ok((PyMesh { inner: pred.body }, PyMesh { inner: pred.clothed }))
    }
}

fn parse_config(json: Option<&str>) -> PyResult<PipelineConfig> {
    match json {
        Some(text) => PipelineConfig::from_json(text).map_err(to_py),
        None => Ok(PipelineConfig::default()),
    }
}

/// Trains on synthetic data. Returns the network and a dict with the
/// history CSV and the first and last total losses.
#[pyfunction]
#[pyo3(signature = (config_json = None))]
fn train_toy<'py>(py: Python<'py>, config_json: Option<&str>) -> PyResult<(PyNetwork, Bound<'py, PyDict>)> {
    let cfg = parse_config(config_json)?;
    let (net, history) = py.detach(|| pipeline::train_toy(&cfg, |_| {})).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("csv", history.to_csv())?;
    out.set_item("initial_total", history.rows.first().map(|r| r.losses.total))?;
    out.set_item("final_total", history.rows.last().map(|r| r.losses.total))?;
    Ok((PyNetwork { inner: net }, out))
}

#[pymodule]
fn mutualmesh_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(chamfer, m)?)?;
    m.add_function(wrap_pyfunction!(normal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(pa_mpjpe, m)?)?;
    m.add_function(wrap_pyfunction!(mvpe, m)?)?;
    m.add_function(wrap_pyfunction!(surface_distances, m)?)?;
    m.add_function(wrap_pyfunction!(normal_map_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(render_silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(py_gradient_suite, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(train_toy, m)?)?;
    Ok(())
}
