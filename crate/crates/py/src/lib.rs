use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use trajstat_core::analysis;
use trajstat_core::mpo::{self, ClusterSpec, FoldedPropagator};
use trajstat_core::mps::{self, Diagnostics};
use trajstat_core::validate::{run_validation, ValidateOptions};
use trajstat_core::{
    noise, rng_from_seed, Error, GateSequence, SiteCouplings, TrajectoryRecord, TruncationPolicy,
};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(m) | Error::Config(m) => PyValueError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn policy(chi: Option<usize>, eps: f64) -> PyResult<TruncationPolicy> {
    let p = TruncationPolicy {
        svd_cutoff: eps,
        max_bond: chi,
    };
    p.validate().map_err(to_py)?;
    Ok(p)
}

/// Uniform model parameters. Times in units of `1/Ω` when `omega = 1`.
#[pyclass(name = "ModelParams", from_py_object)]
#[derive(Clone)]
struct PyModelParams {
    inner: trajstat_core::ModelParams,
}

#[pymethods]
impl PyModelParams {
    #[new]
    #[pyo3(signature = (sites, omega=1.0, v=5.875, gamma=3.0, dt=1.25, substeps=10))]
    fn new(
        sites: usize,
        omega: f64,
        v: f64,
        gamma: f64,
        dt: f64,
        substeps: usize,
    ) -> PyResult<Self> {
        let inner =
            trajstat_core::ModelParams::new(sites, omega, v, gamma, dt, substeps).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega
    }

    #[getter]
    fn v(&self) -> f64 {
        self.inner.v
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.dt
    }

    #[getter]
    fn substeps(&self) -> usize {
        self.inner.substeps
    }

    #[getter]
    fn gamma0(&self) -> f64 {
        self.inner.gamma0()
    }

    fn with_v(&self, v: f64) -> Self {
        Self {
            inner: self.inner.with_v(v),
        }
    }

    fn __repr__(&self) -> String {
        let p = &self.inner;
        format!(
            "ModelParams(sites={}, omega={}, v={}, gamma={}, dt={}, substeps={})",
            p.sites, p.omega, p.v, p.gamma, p.dt, p.substeps
        )
    }
}

impl PyModelParams {
    fn propagator(&self) -> PyResult<FoldedPropagator> {
        let g = GateSequence::from_params(&self.inner, &SiteCouplings::uniform(&self.inner))
            .map_err(to_py)?;
        Ok(FoldedPropagator::new(&g))
    }
}

fn records_from(rows: Vec<Vec<Vec<u8>>>) -> PyResult<Vec<TrajectoryRecord>> {
    rows.iter()
        .map(|r| TrajectoryRecord::from_rows(r).map_err(to_py))
        .collect()
}

/// Outcome record of one trajectory from `|0>^L`, as `steps` rows of `L` bits.
#[pyfunction]
#[pyo3(signature = (params, steps, seed, chi=None, eps=1e-10))]
fn trajectory(
    py: Python<'_>,
    params: &PyModelParams,
    steps: usize,
    seed: u64,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<Vec<Vec<u8>>> {
    let pol = policy(chi, eps)?;
    let p = params.inner.clone();
    let rec = py
        .detach(|| {
            mps::run_trajectory(
                &p,
                &SiteCouplings::uniform(&p),
                &pol,
                steps,
                seed,
                Diagnostics::default(),
            )
        })
        .map_err(to_py)?;
    Ok(rec.rows())
}

/// `log p_{ℓ×τ}` for `τ = 1..=tau_max`.
#[pyfunction]
#[pyo3(signature = (params, ell, tau_max, chi=Some(64), eps=1e-10))]
fn cluster_log_p(
    py: Python<'_>,
    params: &PyModelParams,
    ell: usize,
    tau_max: usize,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<Vec<f64>> {
    let pol = policy(chi, eps)?;
    let prop = params.propagator()?;
    let rows = py
        .detach(|| mpo::tau_sweep(&prop, ell, tau_max, &pol))
        .map_err(to_py)?;
    Ok(rows.iter().map(|r| r.log_p).collect())
}

/// `log p` of two `ℓ×τ` clusters, `delta_t` steps apart (same sites) or
/// `delta_i` sites apart (same steps).
#[pyfunction]
#[pyo3(signature = (params, ell, tau, delta_t=None, delta_i=None, chi=Some(64), eps=1e-10))]
fn two_cluster_log_p(
    py: Python<'_>,
    params: &PyModelParams,
    ell: usize,
    tau: usize,
    delta_t: Option<usize>,
    delta_i: Option<usize>,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<f64> {
    let pol = policy(chi, eps)?;
    let prop = params.propagator()?;
    let r = py.detach(|| match (delta_t, delta_i) {
        (Some(d), None) => mpo::p_two_clusters_temporal(&prop, ell, tau, d, &pol),
        (None, Some(d)) => mpo::p_two_clusters_spatial(&prop, ell, tau, d, &pol),
        _ => Err(Error::InvalidParameter(
            "give exactly one of delta_t and delta_i".into(),
        )),
    });
    Ok(r.map_err(to_py)?.log_p)
}

/// Single-cluster `log p` for one geometry; shorthand for the last entry of
/// `cluster_log_p`.
#[pyfunction]
#[pyo3(signature = (params, ell, tau, chi=Some(64), eps=1e-10))]
fn free_energy(
    py: Python<'_>,
    params: &PyModelParams,
    ell: usize,
    tau: usize,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<f64> {
    let pol = policy(chi, eps)?;
    let prop = params.propagator()?;
    let r = py
        .detach(|| mpo::p_cluster(&prop, ClusterSpec::new(ell, tau), &pol))
        .map_err(to_py)?;
    Ok(-r.log_p)
}

/// Connected autocorrelation `c(δ)` of one ancilla for `δ = 1..=delta_max`.
#[pyfunction]
#[pyo3(signature = (params, delta_max, site=None, chi=Some(64), eps=1e-10))]
fn autocorrelation(
    py: Python<'_>,
    params: &PyModelParams,
    delta_max: usize,
    site: Option<usize>,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<Vec<f64>> {
    let pol = policy(chi, eps)?;
    let prop = params.propagator()?;
    let site = site.unwrap_or_else(|| mpo::central_site(params.inner.sites));
    let rows = py
        .detach(|| mpo::autocorrelation_sweep(&prop, site, delta_max, &pol))
        .map_err(to_py)?;
    Ok(rows.iter().map(|a| a.c).collect())
}

/// Fraction of all-zero `ℓ×τ` windows: `(mean, stderr)` across records.
#[pyfunction]
#[pyo3(signature = (records, ell, tau, margin=0, burn_in=0))]
fn empirical_cluster_prob(
    records: Vec<Vec<Vec<u8>>>,
    ell: usize,
    tau: usize,
    margin: usize,
    burn_in: usize,
) -> PyResult<(f64, f64)> {
    let e = analysis::empirical_cluster_prob(&records_from(records)?, ell, tau, margin, burn_in)
        .map_err(to_py)?;
    Ok((e.value, e.stderr))
}

/// Each bit flipped independently with probability `p_err`.
#[pyfunction]
fn readout_errors(record: Vec<Vec<u8>>, p_err: f64, seed: u64) -> PyResult<Vec<Vec<u8>>> {
    let r = TrajectoryRecord::from_rows(&record).map_err(to_py)?;
    let noisy = noise::apply_readout_errors(&r, p_err, &mut rng_from_seed(seed)).map_err(to_py)?;
    Ok(noisy.rows())
}

/// Backend cross-checks on a small chain: `(name, deviation, tolerance, passed)`.
#[pyfunction]
#[pyo3(signature = (params, steps=100, seed=1, chi=None, eps=1e-12))]
fn validate(
    py: Python<'_>,
    params: &PyModelParams,
    steps: usize,
    seed: u64,
    chi: Option<usize>,
    eps: f64,
) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let opts = ValidateOptions {
        policy: policy(chi, eps)?,
        steps,
        seed,
        corrupt_gate_order: false,
    };
    let p = params.inner.clone();
    let checks = py
        .detach(|| run_validation(&p, &SiteCouplings::uniform(&p), &opts))
        .map_err(to_py)?;
    Ok(checks
        .into_iter()
        .map(|c| (c.name, c.deviation, c.tolerance, c.passed))
        .collect())
}

#[pymodule]
fn trajstat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelParams>()?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(cluster_log_p, m)?)?;
    m.add_function(wrap_pyfunction!(two_cluster_log_p, m)?)?;
    m.add_function(wrap_pyfunction!(free_energy, m)?)?;
    m.add_function(wrap_pyfunction!(autocorrelation, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_cluster_prob, m)?)?;
    m.add_function(wrap_pyfunction!(readout_errors, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
