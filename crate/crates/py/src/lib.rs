//! Python bindings: label schema, segmentation metrics, pose
//! canonicalization, projection and the command-line entry point.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use skatepose::camera::{project_perspective, VirtualCamera};
use skatepose::geometry::{canonicalize_sequence, CanonicalPose, RansacConfig};
use skatepose::skeleton::{PoseSequence3D, Skeleton};
use skatepose::tas::{self, EvalConfig, LabelSchema, LabeledTimeline, Level};

fn err(e: skatepose::Error) -> PyErr {
    PyValueError::new_err(format!("[{}] {e}", e.category()))
}

fn level(name: &str) -> PyResult<Level> {
    name.parse().map_err(err)
}

fn timeline(id: &str, labels: &[String], schema: &LabelSchema) -> PyResult<LabeledTimeline> {
    let parsed = labels
        .iter()
        .map(|l| schema.parse_label(l))
        .collect::<skatepose::Result<Vec<_>>>()
        .map_err(err)?;
    LabeledTimeline::new(id, parsed, schema).map_err(err)
}

/// Non-None labels of the "set" or "element" schema, in order.
#[pyfunction]
#[pyo3(signature = (level_name = "element"))]
fn label_schema(level_name: &str) -> PyResult<Vec<String>> {
    Ok(tas::build_label_schema(level(level_name)?)
        .into_iter()
        .map(|l| l.to_string())
        .collect())
}

/// F1@k (k in percent) between two frame-label lists.
#[pyfunction]
#[pyo3(signature = (pred, gt, k, level_name = "element"))]
fn f1_at_k(pred: Vec<String>, gt: Vec<String>, k: f64, level_name: &str) -> PyResult<f64> {
    let schema = LabelSchema::new(level(level_name)?);
    let cfg = EvalConfig::default();
    let p = timeline("pred", &pred, &schema)?;
    let g = timeline("gt", &gt, &schema)?;
    Ok(tas::f1_at_k(&p, &g, k, &cfg).map_err(err)?.f1)
}

/// Frame accuracy and F1 at the default thresholds, as a dict.
#[pyfunction]
#[pyo3(signature = (pred, gt, level_name = "element"))]
fn evaluate<'py>(py: Python<'py>, pred: Vec<String>, gt: Vec<String>, level_name: &str) -> PyResult<Bound<'py, PyDict>> {
    let schema = LabelSchema::new(level(level_name)?);
    let p = timeline("pred", &pred, &schema)?;
    let g = timeline("gt", &gt, &schema)?;
    let report = tas::evaluate(&p, &g, &EvalConfig::default()).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("frame_accuracy", report.frame_accuracy)?;
    let f1 = PyDict::new(py);
    for s in &report.scores {
        f1.set_item(s.k, s.f1)?;
    }
    out.set_item("f1", f1)?;
    Ok(out)
}

type Frames = Vec<Vec<[f64; 3]>>;

/// Ground-plane fit, gravity and facing alignment and normalization of a
/// T x N x 3 sequence. Returns (canonical frames, facing angles).
#[pyfunction]
#[pyo3(signature = (frames, skeleton = "h36m17", fps = 30.0, seed = 0))]
fn canonicalize(frames: Frames, skeleton: &str, fps: f64, seed: u64) -> PyResult<(Frames, Vec<f64>)> {
    let sk = Skeleton::by_name(skeleton).ok_or_else(|| PyValueError::new_err(format!("unknown skeleton {skeleton:?}")))?;
    let seq = PoseSequence3D::new(sk, frames, fps, "py", "py").map_err(err)?;
    let cfg = RansacConfig {
        seed,
        ..RansacConfig::default()
    };
    let poses = canonicalize_sequence(&seq, &cfg).map_err(err)?;
    Ok(poses.into_iter().map(|p| (p.coords, p.facing_angle)).unzip())
}

/// Root-centered perspective projection (focal length 1) of one pose.
#[pyfunction]
fn project(coords: Vec<[f64; 3]>, azimuth: f64, elevation: f64, distance: f64) -> PyResult<Vec<[f64; 2]>> {
    let cam = VirtualCamera::new(azimuth, elevation, distance).map_err(err)?;
    let pose = CanonicalPose {
        coords,
        facing_angle: 0.0,
    };
    Ok(project_perspective(&pose, &cam).map_err(err)?.coords)
}

/// Runs the command-line tool with `args` (without the program name) and
/// returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    skatepose::cli::run(std::iter::once("skatepose".to_string()).chain(args))
}

#[pymodule]
fn skatepose_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(label_schema, m)?)?;
    m.add_function(wrap_pyfunction!(f1_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(canonicalize, m)?)?;
    m.add_function(wrap_pyfunction!(project, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
