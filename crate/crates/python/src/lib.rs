//! Python bindings. Matrices cross the boundary as lists of rows; datasets
//! as lists of such matrices.

use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stiefel_core::cli::config::{from_rows, to_rows};
use stiefel_core::cli::dataset;
use stiefel_core::inference;
use stiefel_core::matfn::{self, SeriesControl};
use stiefel_core::priors::{select_hyperparameters, Belief, JCPDParams};
use stiefel_core::samplers::{gibbs_jcpc, GibbsConfig};
use stiefel_core::stiefel::{self as st, MLParams, StiefelPoint};
use stiefel_core::Error;

type Rows = Vec<Vec<f64>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NoConvergence { .. } | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &Rows, what: &str) -> PyResult<DMatrix<f64>> {
    from_rows(rows, what).map_err(py_err)
}

fn points(data: &[Rows]) -> PyResult<Vec<StiefelPoint>> {
    data.iter()
        .map(|x| StiefelPoint::new(matrix(x, "observation")?).map_err(py_err))
        .collect()
}

fn ctl(eps: Option<f64>) -> PyResult<SeriesControl> {
    let mut c = SeriesControl::default();
    if let Some(e) = eps {
        c.eps = e;
    }
    c.validate().map_err(py_err)?;
    Ok(c)
}

fn gibbs(iters: usize, burn_in: usize) -> PyResult<GibbsConfig> {
    let cfg = GibbsConfig { n_iter: iters, burn_in, ..GibbsConfig::default() };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// log 0F1(n/2, D^2/4) for concentrations d.
#[pyfunction]
#[pyo3(signature = (n, d, eps=None))]
fn log_0f1(n: usize, d: Vec<f64>, eps: Option<f64>) -> PyResult<f64> {
    Ok(matfn::log_0f1_ml(n, &d, &ctl(eps)?).map_err(py_err)?.ln())
}

#[pyfunction]
fn h(n: usize, d: Vec<f64>) -> PyResult<Vec<f64>> {
    matfn::h(n, &d, &ctl(None)?).map_err(py_err)
}

#[pyfunction]
fn h_inv(eta: Vec<f64>, n: usize) -> PyResult<Vec<f64>> {
    Ok(matfn::h_inv(&eta, n, &ctl(None)?).map_err(py_err)?.d.to_vec())
}

#[pyfunction]
#[pyo3(signature = (n, p, seed=0))]
fn haar_sample(n: usize, p: usize, seed: u64) -> PyResult<Rows> {
    let x = st::haar_sample(n, p, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(py_err)?;
    Ok(to_rows(x.matrix()))
}

/// `count` independent matrix Langevin draws with parameter F.
#[pyfunction]
#[pyo3(signature = (f, count, seed=0))]
fn ml_sample(py: Python<'_>, f: Rows, count: usize, seed: u64) -> PyResult<Vec<Rows>> {
    let theta = MLParams::from_f(&matrix(&f, "f")?).map_err(py_err)?;
    let draws = py
        .detach(|| inference::simulate_data(&theta, count, &mut ChaCha8Rng::seed_from_u64(seed)))
        .map_err(py_err)?;
    Ok(draws.iter().map(|x| to_rows(x.matrix())).collect())
}

/// Unique SVD of a matrix: (M, d, V) with M's first row nonnegative.
#[pyfunction]
fn unique_svd(a: Rows) -> PyResult<(Rows, Vec<f64>, Rows)> {
    let s = st::unique_svd(&matrix(&a, "a")?).map_err(py_err)?;
    Ok((to_rows(s.m.matrix()), s.d, to_rows(s.v.matrix())))
}

fn prior(data: &[StiefelPoint], nu: Option<f64>, psi: Option<Rows>, c: &SeriesControl) -> PyResult<JCPDParams> {
    match (nu, psi) {
        (Some(nu), Some(psi)) => JCPDParams::new(nu, matrix(&psi, "psi")?).map_err(py_err),
        (None, None) => {
            let first = data.first().ok_or_else(|| PyValueError::new_err("no observations"))?;
            Ok(select_hyperparameters(Belief::Uniform { n: first.n(), p: first.p() }, c).map_err(py_err)?.prior)
        }
        _ => Err(PyValueError::new_err("give both nu and psi, or neither for the uniform prior")),
    }
}

/// Posterior mode (M, d, V) under a JCPD prior; uniform when nu and psi are omitted.
#[pyfunction]
#[pyo3(signature = (data, nu=None, psi=None))]
fn posterior_mode(data: Vec<Rows>, nu: Option<f64>, psi: Option<Rows>) -> PyResult<(Rows, Vec<f64>, Rows)> {
    let c = ctl(None)?;
    let pts = points(&data)?;
    let pr = prior(&pts, nu, psi, &c)?;
    let mode = inference::posterior_mode(&pr, &pts, &c).map_err(py_err)?;
    Ok((to_rows(mode.m.matrix()), mode.d, to_rows(mode.v.matrix())))
}

/// Gibbs fit; returns posterior mean and sd of F, the d draws and the acceptance rate.
#[pyfunction]
#[pyo3(signature = (data, nu=None, psi=None, iters=3000, burn_in=1000, seed=0))]
fn fit<'py>(
    py: Python<'py>,
    data: Vec<Rows>,
    nu: Option<f64>,
    psi: Option<Rows>,
    iters: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = gibbs(iters, burn_in)?;
    let pts = points(&data)?;
    let pr = prior(&pts, nu, psi, &cfg.series)?;
    let chain = py
        .detach(|| gibbs_jcpc(&pts, &pr, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)))
        .map_err(py_err)?;
    let summary = inference::posterior_mean_f(&chain).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("mean_f", to_rows(&summary.mean))?;
    out.set_item("sd_f", to_rows(&summary.sd))?;
    out.set_item("d", chain.draws.iter().map(|d| d.d.clone()).collect::<Vec<_>>())?;
    out.set_item("log_likelihood", chain.log_likelihoods.clone())?;
    out.set_item("acceptance_rate", chain.meta.acceptance_rate())?;
    Ok(out)
}

/// Two-sample test; positive log B01 favours a common distribution.
#[pyfunction]
#[pyo3(signature = (data1, data2, prior_strength_frac=0.01, iters=3000, burn_in=1000, seed=0))]
fn bayes_factor<'py>(
    py: Python<'py>,
    data1: Vec<Rows>,
    data2: Vec<Rows>,
    prior_strength_frac: f64,
    iters: usize,
    burn_in: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = gibbs(iters, burn_in)?;
    let (a, b) = (points(&data1)?, points(&data2)?);
    let r = py
        .detach(|| {
            inference::bayes_factor_two_sample(&a, &b, prior_strength_frac, &cfg, &mut ChaCha8Rng::seed_from_u64(seed))
        })
        .map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("log_bayes_factor", r.log_bayes_factor)?;
    out.set_item("model0_logml", r.model0_logml)?;
    out.set_item("model1_logml", r.model1_logml)?;
    out.set_item("hme_unstable", r.hme_unstable)?;
    out.set_item("note", r.decision_note)?;
    Ok(out)
}

#[pyfunction]
fn read_dataset(path: std::path::PathBuf) -> PyResult<Vec<Rows>> {
    let ds = dataset::read_dataset(&path).map_err(py_err)?;
    Ok(ds.points.iter().map(|x| to_rows(x.matrix())).collect())
}

#[pyfunction]
fn write_dataset(path: std::path::PathBuf, data: Vec<Rows>) -> PyResult<()> {
    dataset::write_dataset(&path, &points(&data)?).map_err(py_err)
}

#[pymodule]
fn stiefel_bayes(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(log_0f1, m)?)?;
    m.add_function(wrap_pyfunction!(h, m)?)?;
    m.add_function(wrap_pyfunction!(h_inv, m)?)?;
    m.add_function(wrap_pyfunction!(haar_sample, m)?)?;
    m.add_function(wrap_pyfunction!(ml_sample, m)?)?;
    m.add_function(wrap_pyfunction!(unique_svd, m)?)?;
    m.add_function(wrap_pyfunction!(posterior_mode, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(bayes_factor, m)?)?;
    m.add_function(wrap_pyfunction!(read_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_dataset, m)?)?;
    Ok(())
}
