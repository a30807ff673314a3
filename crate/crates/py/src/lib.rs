//! Python bindings: arm geometry and kinematics, the inverse model,
//! self-supervised pretraining, and per-target reaching.
//!
//! Angles cross the boundary in degrees, positions in meters.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use reach_precise::bench::{BenchConfig, Scale};
use reach_precise::emssl;
use reach_precise::kinematics::{
    self, ArmGeometry, JointConfig, JointDelta, JointResolution, RelativePosition, DOF,
};
use reach_precise::model::{InverseModel, Normalization, DEFAULT_ENVELOPE_M};
use reach_precise::reach::{
    self, ParallelMode, ReachTask, Strategy, ThresholdMode,
};

fn angles6(v: Vec<f64>) -> PyResult<[f64; DOF]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err("expected 6 joint values"))
}

fn point3(v: Vec<f64>) -> PyResult<[f64; 3]> {
    v.try_into()
        .map_err(|_| PyValueError::new_err("expected 3 coordinates"))
}

#[pyclass(name = "ArmGeometry", from_py_object)]
#[derive(Clone)]
struct PyArmGeometry {
    inner: ArmGeometry,
}

#[pymethods]
impl PyArmGeometry {
    /// The calibrated UR3 geometry used throughout the experiments.
    #[staticmethod]
    fn ur3() -> Self {
        Self { inner: ArmGeometry::ur3_default() }
    }

    /// Closed joint intervals, degrees.
    #[getter]
    fn joint_ranges_deg(&self) -> Vec<(f64, f64)> {
        self.inner
            .joint_ranges
            .iter()
            .map(|(lo, hi)| (lo.to_degrees(), hi.to_degrees()))
            .collect()
    }

    /// Per-step joint variation bound, degrees.
    #[getter]
    fn delta_bound_deg(&self) -> f64 {
        self.inner.delta_bound.to_degrees()
    }

    /// Reference posture for the displacement studies, degrees.
    #[staticmethod]
    fn reference_config_deg() -> Vec<f64> {
        ArmGeometry::reference_config().to_degrees().to_vec()
    }

    /// End-effector position (m) and 3x3 orientation for a configuration.
    fn forward_kinematics(&self, angles_deg: Vec<f64>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let q = JointConfig::from_degrees(angles6(angles_deg)?);
        let pose = kinematics::forward_kinematics(&q, &self.inner)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((
            pose.position.to_vec(),
            pose.orientation.iter().map(|r| r.to_vec()).collect(),
        ))
    }

    /// Tool-frame displacement (m) produced by a joint variation.
    fn displacement(&self, angles_deg: Vec<f64>, deltas_deg: Vec<f64>) -> PyResult<Vec<f64>> {
        let q = JointConfig::from_degrees(angles6(angles_deg)?);
        let dq = JointDelta::from_degrees(angles6(deltas_deg)?);
        let dp = kinematics::displacement_in_tool_frame(&q, &dq, &self.inner)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(dp.p.to_vec())
    }

    /// Smallest single-joint single-step tip motion at a posture:
    /// (exact_m, small_angle_estimate_m).
    fn min_end_displacement(&self, angles_deg: Vec<f64>, alpha_deg: f64) -> PyResult<(f64, f64)> {
        let q = JointConfig::from_degrees(angles6(angles_deg)?);
        let res = JointResolution::from_degrees(alpha_deg);
        let md = kinematics::min_end_displacement(&q, &res, &self.inner);
        Ok((md.exact, md.small_angle))
    }

    /// Seeded random search for the largest reachable relative distance (m)
    /// under a per-joint variation bound.
    #[pyo3(signature = (bound_deg, samples=100_000, seed=0))]
    fn max_relative_distance(&self, bound_deg: f64, samples: usize, seed: u64) -> f64 {
        kinematics::max_relative_distance(bound_deg.to_radians(), &self.inner, samples, seed)
    }
}

/// Snap joint variations (degrees) to multiples of the resolution.
#[pyfunction]
fn quantize(deltas_deg: Vec<f64>, alpha_deg: f64) -> PyResult<Vec<f64>> {
    let dq = JointDelta::from_degrees(angles6(deltas_deg)?);
    let res = JointResolution::from_degrees(alpha_deg);
    Ok(kinematics::quantize(&dq, &res).to_degrees().to_vec())
}

#[pyclass(name = "InverseModel")]
struct PyInverseModel {
    inner: InverseModel,
}

#[pymethods]
impl PyInverseModel {
    /// Untrained network with the given hidden layer widths.
    #[new]
    #[pyo3(signature = (geometry, hidden, seed=42))]
    fn new(geometry: &PyArmGeometry, hidden: Vec<usize>, seed: u64) -> PyResult<Self> {
        let mut dims = vec![9];
        dims.extend_from_slice(&hidden);
        dims.push(DOF);
        let norm = Normalization::from_geometry(&geometry.inner, DEFAULT_ENVELOPE_M);
        let inner = InverseModel::new(&dims, norm, geometry.inner.delta_bound, seed)
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = InverseModel::load(std::path::Path::new(path))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner
            .save(std::path::Path::new(path))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    /// Joint variation (degrees) proposed for a state and target.
    fn infer(&self, angles_deg: Vec<f64>, target_rel_m: Vec<f64>) -> PyResult<Vec<f64>> {
        let q = JointConfig::from_degrees(angles6(angles_deg)?);
        let dp = RelativePosition::new(point3(target_rel_m)?);
        Ok(self.inner.infer(&q, &dp).to_degrees().to_vec())
    }

    /// SHA-256 of the parameters; replication-isolation checks hang off this.
    fn param_hash(&self) -> String {
        self.inner.param_hash()
    }

    fn replicate(&self) -> Self {
        Self { inner: self.inner.replicate() }
    }
}

/// Self-supervised pretraining at a chosen scale ("desk" or "paper"), on
/// freshly generated data. Returns the trained model and the per-iteration
/// test precision curve (meters).
#[pyfunction]
#[pyo3(signature = (scale="desk", seed=42, iterations=None, n_train=None, n_test=None))]
fn pretrain(
    scale: &str,
    seed: u64,
    iterations: Option<usize>,
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> PyResult<(PyInverseModel, Vec<f64>)> {
    let scale = match scale {
        "desk" => Scale::Desk,
        "paper" => Scale::Paper,
        other => return Err(PyValueError::new_err(format!("unknown scale '{other}'"))),
    };
    let mut cfg = BenchConfig::preset(scale, seed);
    if let Some(t) = iterations {
        cfg.pretrain.max_iterations = t;
    }
    if let Some(n) = n_train {
        cfg.dataset.n_train = n;
    }
    if let Some(n) = n_test {
        cfg.dataset.n_test = n;
    }
    let u = emssl::generate_dataset(
        &cfg.geometry,
        cfg.dataset.n_train + cfg.dataset.n_test,
        cfg.dataset.n_train,
        cfg.seed,
    );
    let result = emssl::pretrain(&u, &cfg.geometry, cfg.fresh_model(), &cfg.pretrain);
    if let Some(reason) = result.aborted {
        return Err(PyRuntimeError::new_err(format!("pretraining aborted: {reason}")));
    }
    let curve = result.metrics.iter().map(|m| m.test_mean_precision_m).collect();
    Ok((PyInverseModel { inner: result.model }, curve))
}

fn report_to_dict<'py>(
    py: Python<'py>,
    report: &reach::ReachReport,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("strategy", report.strategy.name())?;
    d.set_item("final_precision_m", report.final_precision_m)?;
    d.set_item("success", report.success)?;
    d.set_item("threshold_m", report.threshold_m)?;
    d.set_item(
        "trajectory_deg",
        report.trajectory_deg.iter().map(|s| s.to_vec()).collect::<Vec<_>>(),
    )?;
    d.set_item("online_iterations", report.online_iterations)?;
    d.set_item("fs_steps", report.fs_steps)?;
    d.set_item("wall_time_s", report.wall_time_s)?;
    Ok(d)
}

/// Reach one target with a replicated model. Strategy is one of
/// "basic", "s1", "s2", "parallel", "baseline".
#[pyfunction]
#[pyo3(signature = (geometry, model, start_deg, target_rel_m, resolution_deg=0.01,
                    strategy="parallel", threshold_mode="min", threaded=false))]
#[allow(clippy::too_many_arguments)]
fn reach_target<'py>(
    py: Python<'py>,
    geometry: &PyArmGeometry,
    model: &PyInverseModel,
    start_deg: Vec<f64>,
    target_rel_m: Vec<f64>,
    resolution_deg: f64,
    strategy: &str,
    threshold_mode: &str,
    threaded: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let Some(strategy) = Strategy::parse(strategy) else {
        return Err(PyValueError::new_err(format!("unknown strategy '{strategy}'")));
    };
    let mode = match threshold_mode {
        "min" => ThresholdMode::MinDisp,
        "half" => ThresholdMode::HalfMinDisp,
        other => return Err(PyValueError::new_err(format!("unknown threshold mode '{other}'"))),
    };
    let geom = &geometry.inner;
    let task = ReachTask::new(
        JointConfig::from_degrees(angles6(start_deg)?),
        RelativePosition::new(point3(target_rel_m)?),
        JointResolution::from_degrees(resolution_deg),
        mode,
        geom,
    );
    let report = match (strategy, threaded) {
        (Strategy::Parallel, true) => {
            reach::run_parallel(&task, &model.inner, geom, ParallelMode::Threaded)
        }
        _ => reach::run_strategy(&task, &model.inner, strategy, geom),
    };
    let audited = report
        .audit(&task, geom)
        .map_err(PyRuntimeError::new_err)?;
    let d = report_to_dict(py, &report)?;
    d.set_item("audited_precision_m", audited)?;
    Ok(d)
}

#[pymodule]
fn reach_precise_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArmGeometry>()?;
    m.add_class::<PyInverseModel>()?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(reach_target, m)?)?;
    Ok(())
}
