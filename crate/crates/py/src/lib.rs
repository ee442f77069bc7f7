//! Python bindings: topology sampling, contraction factors, spectral gaps,
//! consensus metrics, and full experiment execution behind one module.
//!
//! Matrices cross the boundary as plain lists of row lists, so the module
//! has no numpy dependency; converting to an array on the Python side is
//! one call away.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hsl_core::bounds;
use hsl_core::config::parse_config;
use hsl_core::learning::TrainConfig;
use hsl_core::metrics::ModelMatrix;
use hsl_core::rng::{stream, TAG_INIT};
use hsl_core::runner::{execute as execute_spec, RunStatus};
use hsl_core::spectral;
use hsl_core::topology::{sample_round_matrix, MixingMatrix, TopologyConfig};

fn to_py_err(e: hsl_core::Error) -> PyErr {
    use hsl_core::Error::*;
    match e {
        Config(_) | Dimension(_) | Parse { .. } => PyValueError::new_err(e.to_string()),
        Sampling(_) | Divergence { .. } | Io(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rows_of(w: &MixingMatrix) -> Vec<Vec<f64>> {
    (0..w.rows())
        .map(|i| (0..w.cols()).map(|j| w.entry(i, j)).collect())
        .collect()
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<ModelMatrix> {
    let n = rows.len();
    if n == 0 {
        return Err(PyValueError::new_err("matrix must have at least one row"));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must be nonempty and equal length"));
    }
    let mut data = ndarray::Array2::<f64>::zeros((n, d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            data[[i, j]] = v;
        }
    }
    Ok(ModelMatrix::from_array(data))
}

/// One communication graph family, the shared handle for sampling, edge
/// accounting, and spectral summaries.
#[pyclass(frozen)]
struct Topology {
    inner: TopologyConfig,
}

#[pymethods]
impl Topology {
    #[staticmethod]
    fn hsl(n_s: usize, n_h: usize, b_hs: usize, b_hh: usize, b_sh: usize) -> PyResult<Self> {
        let inner = TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn el_local(n_s: usize, k: usize) -> PyResult<Self> {
        let inner = TopologyConfig::ElLocal { n_s, k };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn el_oracle(n_s: usize, k: usize) -> PyResult<Self> {
        let inner = TopologyConfig::ElOracle { n_s, k };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn erdos_renyi(n_s: usize, p: f64) -> PyResult<Self> {
        let inner = TopologyConfig::ErdosRenyi { n_s, p };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn torus(n_s: usize) -> PyResult<Self> {
        let inner = TopologyConfig::Torus { n_s };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[staticmethod]
    fn fedavg_star(n_s: usize) -> PyResult<Self> {
        let inner = TopologyConfig::FedavgStar { n_s };
        inner.validate().map_err(to_py_err)?;
        Ok(Topology { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind_str()
    }

    #[getter]
    fn n_s(&self) -> usize {
        self.inner.n_s()
    }

    fn total_edges(&self) -> u64 {
        self.inner.total_edges()
    }

    fn is_static(&self) -> bool {
        self.inner.is_static()
    }

    /// Samples one round's effective spoke-to-spoke mixing matrix.
    fn sample_round(&self, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let mut rng = stream(seed, &[TAG_INIT]);
        let w = sample_round_matrix(&self.inner, &mut rng).map_err(to_py_err)?;
        Ok(rows_of(&w))
    }

    /// Monte Carlo spectral gap over freshly sampled rounds:
    /// `(mean_gap, std_gap, edges)`.
    fn average_spectral_gap(&self, samples: usize, seed: u64) -> PyResult<(f64, f64, u64)> {
        let report = spectral::average_spectral_gap(&self.inner, samples, seed).map_err(to_py_err)?;
        Ok((report.mean_gap, report.std_gap, report.edges))
    }

    /// Contraction factors `(beta_hs, beta_hh, beta_sh, beta_hsl, beta_prime)`.
    fn beta_bounds(&self) -> PyResult<(f64, f64, f64, f64, f64)> {
        match self.inner {
            TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh } => {
                let b = bounds::beta_bounds(n_s, n_h, b_hs, b_hh, b_sh).map_err(to_py_err)?;
                Ok((b.beta_hs, b.beta_hh, b.beta_sh, b.beta_hsl, b.beta_prime))
            }
            _ => Err(PyValueError::new_err(
                "contraction factors are defined for the hsl kind only",
            )),
        }
    }

    fn __repr__(&self) -> String {
        format!("Topology({:?})", self.inner)
    }
}

/// Mean contraction factor of one random gossip stage among `n` nodes with
/// fanout `b`.
#[pyfunction]
fn beta_gossip(n: usize, b: usize) -> PyResult<f64> {
    bounds::beta_gossip(n, b).map_err(to_py_err)
}

/// Mean squared distance of rows to their average.
#[pyfunction]
fn consensus_distance(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(hsl_core::metrics::consensus_distance(&matrix_from_rows(rows)?))
}

/// `1 - |lambda_2|` of a row-stochastic matrix.
#[pyfunction]
fn spectral_gap(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix_from_rows(rows)?;
    let w = MixingMatrix::from_array(m.into_array()).map_err(to_py_err)?;
    spectral::spectral_gap(&w).map_err(to_py_err)
}

/// Tuned SGD step size from the problem constants and an HSL topology.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn derived_step_size(
    l_smooth: f64,
    sigma_sq: f64,
    h_sq: f64,
    delta0: f64,
    rounds: usize,
    n_s: usize,
    n_h: usize,
    b_hs: usize,
    b_hh: usize,
    b_sh: usize,
) -> PyResult<f64> {
    let b = bounds::beta_bounds(n_s, n_h, b_hs, b_hh, b_sh).map_err(to_py_err)?;
    let c = bounds::ProblemConstants { l_smooth, sigma_sq, h_sq, delta0, rounds, n_s };
    bounds::derived_step_size(&c, &b).map_err(to_py_err)
}

/// Steady-state consensus-distance bound for an HSL topology at step size
/// `gamma`.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn long_run_cd_bound(
    n_s: usize,
    n_h: usize,
    b_hs: usize,
    b_hh: usize,
    b_sh: usize,
    gamma: f64,
    sigma_sq: f64,
    h_sq: f64,
) -> PyResult<f64> {
    let b = bounds::beta_bounds(n_s, n_h, b_hs, b_hh, b_sh).map_err(to_py_err)?;
    bounds::long_run_cd_bound(&b, gamma, sigma_sq, h_sq).map_err(to_py_err)
}

/// Parses an experiment document, applies optional overrides, executes it,
/// and returns `(status, output_dir, [file names])`. `status` is "ok",
/// "diverged:<round>", or "claims_failed:<count>".
#[pyfunction]
#[pyo3(signature = (config_text, out_dir=None, seed=None))]
fn execute(
    config_text: &str,
    out_dir: Option<&str>,
    seed: Option<u64>,
) -> PyResult<(String, String, Vec<String>)> {
    let mut spec = parse_config(config_text).map_err(to_py_err)?;
    if let Some(dir) = out_dir {
        spec.output_dir = dir.into();
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    let manifest = execute_spec(&spec).map_err(to_py_err)?;
    let status = match manifest.status {
        RunStatus::Ok => "ok".to_string(),
        RunStatus::Diverged { round } => format!("diverged:{round}"),
        RunStatus::ClaimsFailed { failed } => format!("claims_failed:{failed}"),
    };
    let files = manifest.files.iter().map(|(n, _)| n.clone()).collect();
    Ok((status, manifest.output_dir.display().to_string(), files))
}

/// Full training run on a shared-design quadratic fleet; returns the
/// per-round `(round, cd_pre, cd_post)` triples. Meant for quick
/// interactive exploration; `execute` is the complete interface.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn run_quadratic(
    n_s: usize,
    n_h: usize,
    b_hs: usize,
    b_hh: usize,
    b_sh: usize,
    rounds: usize,
    local_steps: usize,
    step_size: f64,
    seed: u64,
) -> PyResult<Vec<(usize, f64, f64)>> {
    let topology = TopologyConfig::Hsl { n_s, n_h, b_hs, b_hh, b_sh };
    topology.validate().map_err(to_py_err)?;
    let diag: Vec<f64> = (0..8).map(|j| 1.0 + (j + 1) as f64 / 8.0).collect();
    let obj = hsl_core::learning::make_shared_design_quadratic(
        n_s,
        &diag,
        0.5,
        &mut stream(seed, &[hsl_core::rng::TAG_OBJECTIVE]),
    );
    let cfg = TrainConfig {
        topology,
        rounds,
        local_steps,
        step_size,
        batch_size: usize::MAX,
        eval_every: rounds.max(1),
        seed,
        x0_value: 0.0,
    };
    let result = hsl_core::learning::run_experiment(&cfg, &obj).map_err(to_py_err)?;
    Ok(result
        .metrics
        .iter()
        .map(|m| (m.round, m.cd_pre, m.cd_post))
        .collect())
}

#[pymodule]
fn hsl_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Topology>()?;
    m.add_function(wrap_pyfunction!(beta_gossip, m)?)?;
    m.add_function(wrap_pyfunction!(consensus_distance, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_gap, m)?)?;
    m.add_function(wrap_pyfunction!(derived_step_size, m)?)?;
    m.add_function(wrap_pyfunction!(long_run_cd_bound, m)?)?;
    m.add_function(wrap_pyfunction!(execute, m)?)?;
    m.add_function(wrap_pyfunction!(run_quadratic, m)?)?;
    Ok(())
}
