//! Python bindings: model, echoes, work distributions, Boltzmann weights,
//! Metropolis chains, the simulated Ramsey protocol and the exact oracle.

use std::sync::Arc;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use echotherm::dynamics::{EchoEngine, EchoMethod, EchoSeries, TimeGrid};
use echotherm::model::{self, SpinConfiguration};
use echotherm::oracle::{reference_curve, SpectralDecomposition};
use echotherm::pipeline::{chain_seed, EchoSource, EchoWeigher, SpectralSettings};
use echotherm::protocol::{NoiseModel, ProtocolKind, RamseySimulator};
use echotherm::sampler::{run_chain, ChainConfig, Observable};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_state(model: &model::IsingModel, text: &str) -> PyResult<SpinConfiguration> {
    let psi: SpinConfiguration = text
        .parse()
        .map_err(|e| value_error(format!("state {text:?}: {e}")))?;
    if psi.len() != model.sites() {
        return Err(value_error(format!(
            "state {text:?} has {} sites, the model has {}",
            psi.len(),
            model.sites()
        )));
    }
    Ok(psi)
}

fn grid(dt: f64, n_steps: usize) -> PyResult<TimeGrid> {
    if !(dt > 0.0 && dt.is_finite()) || n_steps == 0 {
        return Err(value_error("dt must be positive and n_steps at least 1"));
    }
    Ok(TimeGrid::new(dt, n_steps))
}

fn parse_method(name: &str, sites: usize) -> PyResult<EchoMethod> {
    match name {
        "auto" => Ok(EchoMethod::auto(sites)),
        "eigen" => Ok(EchoMethod::Eigen),
        "krylov" => Ok(EchoMethod::KRYLOV_DEFAULT),
        "lanczos" => Ok(EchoMethod::LANCZOS_DEFAULT),
        other => Err(value_error(format!(
            "unknown method {other:?}; use auto, eigen, krylov or lanczos"
        ))),
    }
}

fn series_tuple(series: &EchoSeries) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t = (0..series.values.len()).map(|k| series.grid.time(k)).collect();
    (
        t,
        series.values.iter().map(|g| g.re).collect(),
        series.values.iter().map(|g| g.im).collect(),
    )
}

/// Long-range transverse-field Ising chain with couplings J/|i-j|^alpha.
#[pyclass(name = "IsingModel", frozen)]
struct PyIsingModel {
    inner: Arc<model::IsingModel>,
}

#[pymethods]
impl PyIsingModel {
    #[new]
    #[pyo3(signature = (sites, field, alpha, coupling = 1.0))]
    fn new(sites: usize, field: f64, alpha: f64, coupling: f64) -> PyResult<Self> {
        if sites == 0 || sites > model::MAX_TABLE_SITES {
            return Err(value_error(format!("sites must lie in 1..={}", model::MAX_TABLE_SITES)));
        }
        Ok(Self {
            inner: Arc::new(model::IsingModel::new(sites, coupling, field, alpha)),
        })
    }

    #[getter]
    fn sites(&self) -> usize {
        self.inner.sites()
    }

    /// <psi|H|psi> for a bit string, site 0 first.
    fn diagonal_energy(&self, state: &str) -> PyResult<f64> {
        Ok(self.inner.diagonal_energy(&parse_state(&self.inner, state)?))
    }

    /// <psi|H^2|psi> - <psi|H|psi>^2, equal to g^2 L.
    fn energy_variance(&self, state: &str) -> PyResult<f64> {
        let psi = parse_state(&self.inner, state)?;
        let v = model::StateVector::basis(&psi);
        let hv = self.inner.apply_hamiltonian(&v);
        let e = self.inner.diagonal_energy(&psi);
        Ok(hv.norm().powi(2) - e * e)
    }

    fn __repr__(&self) -> String {
        format!("IsingModel(sites={})", self.inner.sites())
    }
}

/// Loschmidt echo G(t) = <psi|e^{-iHt}|psi> on t = 0, dt, ..., n_steps dt.
/// Returns (t, re, im).
#[pyfunction]
#[pyo3(signature = (model, state, dt, n_steps, method = "auto"))]
fn loschmidt_echo(
    model: &PyIsingModel,
    state: &str,
    dt: f64,
    n_steps: usize,
    method: &str,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let psi = parse_state(&model.inner, state)?;
    let engine = EchoEngine::new(model.inner.clone(), parse_method(method, model.inner.sites())?).map_err(value_error)?;
    let series = engine.loschmidt_series(&psi, &grid(dt, n_steps)?).map_err(value_error)?;
    Ok(series_tuple(&series))
}

/// Filtered work distribution centred on the state's diagonal energy.
/// Returns (omega relative to the shift, weights, shift).
#[pyfunction]
#[pyo3(signature = (model, state, dt, n_steps, delta, p_cut = 0.0))]
fn work_distribution(
    model: &PyIsingModel,
    state: &str,
    dt: f64,
    n_steps: usize,
    delta: f64,
    p_cut: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let psi = parse_state(&model.inner, state)?;
    let settings = SpectralSettings::new(grid(dt, n_steps)?, delta, p_cut);
    settings.validate().map_err(value_error)?;
    let engine = EchoEngine::new(model.inner.clone(), EchoMethod::auto(model.inner.sites())).map_err(value_error)?;
    let echo = engine.loschmidt_series(&psi, &settings.grid).map_err(value_error)?;
    let wd = settings.distribution(&echo);
    Ok((wd.omega, wd.weights, wd.shift_energy))
}

/// ln p_psi(T) with filter-corrected per-state <H> and <H^2>.
/// Returns (log_weight, energy, energy_sq).
#[pyfunction]
#[pyo3(signature = (model, state, temperature, dt, n_steps, delta, p_cut = 1e-6))]
fn boltzmann_weight(
    model: &PyIsingModel,
    state: &str,
    temperature: f64,
    dt: f64,
    n_steps: usize,
    delta: f64,
    p_cut: f64,
) -> PyResult<(f64, f64, f64)> {
    if !(temperature > 0.0) {
        return Err(value_error("temperature must be positive"));
    }
    let psi = parse_state(&model.inner, state)?;
    let settings = SpectralSettings::new(grid(dt, n_steps)?, delta, p_cut);
    settings.validate().map_err(value_error)?;
    let engine = EchoEngine::new(model.inner.clone(), EchoMethod::auto(model.inner.sites())).map_err(value_error)?;
    let w = settings.weigh(&engine.loschmidt_series(&psi, &settings.grid).map_err(value_error)?, temperature);
    Ok((w.log_weight, w.energy, w.energy_sq))
}

/// One Metropolis chain. With `shots`, echoes come from the simulated
/// Ramsey protocol (`kind` "sequential" or "ghz"); otherwise they are exact.
/// Returns a dict with acceptance_rate and {name: (mean, error)} estimates.
#[pyfunction]
#[pyo3(signature = (
    model, temperature, n_mc, burn_in, seed, dt, n_steps, delta,
    p_cut = 1e-6, shots = None, kind = "sequential"
))]
#[allow(clippy::too_many_arguments)]
fn metropolis_chain<'py>(
    py: Python<'py>,
    model: &PyIsingModel,
    temperature: f64,
    n_mc: usize,
    burn_in: usize,
    seed: u64,
    dt: f64,
    n_steps: usize,
    delta: f64,
    p_cut: f64,
    shots: Option<u64>,
    kind: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let settings = SpectralSettings::new(grid(dt, n_steps)?, delta, p_cut);
    settings.validate().map_err(value_error)?;
    let engine = EchoEngine::new(model.inner.clone(), EchoMethod::auto(model.inner.sites())).map_err(value_error)?;
    let source = match shots {
        None => EchoSource::Exact(Arc::new(engine)),
        Some(n) => EchoSource::Measured {
            simulator: Arc::new(RamseySimulator::with_full_engine(engine).map_err(value_error)?),
            noise: NoiseModel::with_shots(n),
            kind: parse_kind(kind)?,
            seed: chain_seed(seed, 0, 1),
        },
    };
    let config = ChainConfig::new(temperature, n_mc, burn_in, seed);
    let inner = model.inner.clone();
    let result = py
        .detach(move || {
            let mut weigher = EchoWeigher::new(source, settings, temperature);
            let observables = [
                Observable::MagnetizationSquared,
                Observable::Sz2,
                Observable::Sz4,
                Observable::Energy,
                Observable::EnergySquared,
            ];
            run_chain(&inner, &config, &mut weigher, &observables)
        })
        .map_err(value_error)?;
    let out = PyDict::new(py);
    out.set_item("acceptance_rate", result.acceptance_rate)?;
    let estimates = PyDict::new(py);
    for (name, e) in &result.estimates {
        estimates.set_item(name, (e.mean, e.error))?;
    }
    out.set_item("estimates", estimates)?;
    Ok(out)
}

fn parse_kind(kind: &str) -> PyResult<ProtocolKind> {
    match kind {
        "sequential" => Ok(ProtocolKind::Sequential),
        "ghz" => Ok(ProtocolKind::Ghz),
        other => Err(value_error(format!("unknown protocol {other:?}; use sequential or ghz"))),
    }
}

/// Echo reconstructed from the simulated Ramsey protocol with `shots`
/// repetitions per probability (None for exact probabilities).
/// Returns (t, re, im, shots_used).
#[pyfunction]
#[pyo3(signature = (model, state, dt, n_steps, shots = None, kind = "sequential", seed = 0))]
fn ramsey_echo(
    model: &PyIsingModel,
    state: &str,
    dt: f64,
    n_steps: usize,
    shots: Option<u64>,
    kind: &str,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>, u64)> {
    let psi = parse_state(&model.inner, state)?;
    let noise = NoiseModel {
        shots,
        ..NoiseModel::noiseless()
    };
    noise.validate().map_err(value_error)?;
    let simulator = RamseySimulator::new(model.inner.clone()).map_err(value_error)?;
    let noisy = simulator
        .noisy_loschmidt_series(&psi, &grid(dt, n_steps)?, &noise, parse_kind(kind)?, &mut ChaCha8Rng::seed_from_u64(seed))
        .map_err(value_error)?;
    let (t, re, im) = series_tuple(&noisy.series);
    Ok((t, re, im, noisy.shots_used))
}

/// Exact-diagonalization curves: list of dicts with T, msq, binder, energy, cv.
#[pyfunction]
fn exact_curve<'py>(py: Python<'py>, model: &PyIsingModel, temperatures: Vec<f64>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if model.inner.sites() > model::MAX_DENSE_SITES {
        return Err(value_error(format!(
            "exact diagonalization is limited to {} sites",
            model::MAX_DENSE_SITES
        )));
    }
    if temperatures.iter().any(|t| !(*t > 0.0)) {
        return Err(value_error("temperatures must be positive"));
    }
    let inner = model.inner.clone();
    let curve = py.detach(move || {
        let dec = SpectralDecomposition::new(&inner);
        reference_curve(&inner, &dec, &temperatures)
    });
    curve
        .iter()
        .map(|p| {
            let d = PyDict::new(py);
            d.set_item("T", p.temperature)?;
            d.set_item("msq", p.msq)?;
            d.set_item("binder", p.binder)?;
            d.set_item("energy", p.energy)?;
            d.set_item("cv", p.cv)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn pyechotherm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIsingModel>()?;
    m.add_function(wrap_pyfunction!(loschmidt_echo, m)?)?;
    m.add_function(wrap_pyfunction!(work_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(boltzmann_weight, m)?)?;
    m.add_function(wrap_pyfunction!(metropolis_chain, m)?)?;
    m.add_function(wrap_pyfunction!(ramsey_echo, m)?)?;
    m.add_function(wrap_pyfunction!(exact_curve, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
