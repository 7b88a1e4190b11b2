//! Python bindings. Configurations cross the boundary as 0/1 strings with
//! spin orbital 0 first; structured results come back as plain dicts.

use std::path::PathBuf;

use ::bfvmc as core;
use core::ansatz::{self, AnsatzConfig, BackflowNet};
use core::determinant::{OccupationConfig, SpinSector};
use core::driver::{self, CliOverrides, RunConfig};
use core::fci::{build_dense, DEFAULT_DIMENSION_CAP};
use core::hamiltonian::{write_fcidump, IntegralTable};
use core::local_energy::{energy_estimate, local_values_exact};
use core::sampler::{SampleBatch, Sampler, SamplerConfig};
use core::spin::{self as spin, SpinStatePoint};
use core::wavefunction::{TableWavefunction, Wavefunction};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

fn err(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        e if e.is_config_error() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_config(s: &str) -> PyResult<OccupationConfig> {
    s.parse().map_err(err)
}

/// serde value -> Python object, via JSON.
fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let json = py.import("json")?;
    Ok(json.call_method1("loads", (text,))?.unbind())
}

/// One-electron and two-electron integrals read from an FCIDUMP file.
#[pyclass(name = "Integrals", frozen)]
struct PyIntegrals {
    inner: IntegralTable,
}

#[pymethods]
impl PyIntegrals {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(PyIntegrals {
            inner: IntegralTable::from_path(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_string(text: &str) -> PyResult<Self> {
        Ok(PyIntegrals {
            inner: core::hamiltonian::parse_fcidump(text).map_err(err)?,
        })
    }

    #[getter]
    fn n_orb(&self) -> usize {
        self.inner.n_orb
    }

    #[getter]
    fn n_elec(&self) -> usize {
        self.inner.n_elec
    }

    #[getter]
    fn ms2(&self) -> i32 {
        self.inner.ms2
    }

    #[getter]
    fn core_energy(&self) -> f64 {
        self.inner.core_energy
    }

    fn one_body(&self, p: usize, q: usize) -> f64 {
        self.inner.one_body(p, q)
    }

    fn eri(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.inner.eri(p, q, r, s)
    }

    /// Nonzero `(config, <x'|H|x>)` pairs, diagonal first.
    fn connections(&self, config: &str) -> PyResult<Vec<(String, f64)>> {
        let c = parse_config(config)?;
        Ok(self
            .inner
            .connect(&c, 0.0)
            .into_iter()
            .map(|k| (k.target.to_string(), k.element))
            .collect())
    }

    fn to_fcidump(&self) -> String {
        write_fcidump(&self.inner)
    }

    /// Exact eigenpairs of the `(n_electrons, two_sz)` sector, lowest first,
    /// as `(energy, {config: coefficient})`.
    #[pyo3(signature = (n_electrons=None, two_sz=None, n_states=1))]
    fn exact_states(
        &self,
        n_electrons: Option<usize>,
        two_sz: Option<i32>,
        n_states: usize,
    ) -> PyResult<Vec<(f64, Vec<(String, f64)>)>> {
        let sector = self.sector(n_electrons, two_sz)?;
        let h = build_dense(&self.inner, sector, DEFAULT_DIMENSION_CAP).map_err(err)?;
        let pairs = h.eigenpairs().map_err(err)?;
        Ok(pairs
            .into_iter()
            .take(n_states)
            .map(|p| {
                let coeffs = h.basis.iter().map(|c| c.to_string()).zip(p.coefficients.iter().copied()).collect();
                (p.energy, coeffs)
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Integrals(n_orb={}, n_elec={}, ms2={})",
            self.inner.n_orb, self.inner.n_elec, self.inner.ms2
        )
    }
}

impl PyIntegrals {
    fn sector(&self, n_electrons: Option<usize>, two_sz: Option<i32>) -> PyResult<SpinSector> {
        SpinSector::new(n_electrons.unwrap_or(self.inner.n_elec), two_sz.unwrap_or(self.inner.ms2)).map_err(err)
    }
}

/// Transformer backflow network.
#[pyclass(name = "BackflowNet")]
struct PyNet {
    inner: BackflowNet,
}

#[pymethods]
impl PyNet {
    #[new]
    #[pyo3(signature = (n_spin_orbitals, n_electrons, seed, t=4, d_f=256, n_layers=2, n_heads=4, d_atten=256, mlp_layers=2, d_mlp=256, n_dets=2))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_spin_orbitals: usize,
        n_electrons: usize,
        seed: u64,
        t: usize,
        d_f: usize,
        n_layers: usize,
        n_heads: usize,
        d_atten: usize,
        mlp_layers: usize,
        d_mlp: usize,
        n_dets: usize,
    ) -> PyResult<Self> {
        let config = AnsatzConfig {
            t,
            d_f,
            n_layers,
            n_heads,
            d_atten,
            mlp_layers,
            d_mlp,
            n_dets,
        };
        Ok(PyNet {
            inner: BackflowNet::new(config, n_spin_orbitals, n_electrons, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_checkpoint(data: &[u8]) -> PyResult<Self> {
        Ok(PyNet {
            inner: ansatz::read_checkpoint(data).map_err(err)?,
        })
    }

    fn to_checkpoint<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &ansatz::write_checkpoint(&self.inner))
    }

    #[getter]
    fn n_params(&self) -> usize {
        self.inner.n_params()
    }

    #[getter]
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_params(params).map_err(err)
    }

    /// `(sign, log|psi|)`.
    fn amplitude(&self, config: &str) -> PyResult<(f64, f64)> {
        let a = self.inner.amplitude(&parse_config(config)?);
        Ok((a.sign, a.log_abs))
    }

    /// `d ln|psi| / d theta`.
    fn log_grad(&self, config: &str) -> PyResult<Vec<f64>> {
        Ok(self.inner.log_grad(&parse_config(config)?).map_err(err)?.1)
    }

    fn tokenize(&self, config: &str) -> PyResult<Vec<usize>> {
        Ok(self.inner.tokenize(&parse_config(config)?))
    }

    /// Largest relative error between analytic and central-difference gradients.
    #[pyo3(signature = (configs, step=1e-5))]
    fn check_gradients(&self, configs: Vec<String>, step: f64) -> PyResult<f64> {
        let cs = configs.iter().map(|c| parse_config(c)).collect::<PyResult<Vec<_>>>()?;
        Ok(ansatz::gradcheck::check_gradients(&self.inner, &cs, step)
            .map_err(err)?
            .max_relative_error)
    }
}

/// Either a network or an explicit amplitude table.
enum Source<'a> {
    Net(PyRef<'a, PyNet>),
    Table(TableWavefunction),
}

impl Source<'_> {
    fn extract<'a>(obj: &Bound<'a, PyAny>, n_so: usize) -> PyResult<Source<'a>> {
        if let Ok(net) = obj.extract::<PyRef<'a, PyNet>>() {
            return Ok(Source::Net(net));
        }
        let entries: Vec<(String, f64)> = obj
            .extract()
            .map_err(|_| PyValueError::new_err("expected a BackflowNet or a list of (config, coefficient)"))?;
        let table = entries
            .iter()
            .map(|(c, v)| Ok((parse_config(c)?, *v)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Source::Table(TableWavefunction::new(n_so, table)))
    }

    fn wf(&self) -> &dyn Wavefunction {
        match self {
            Source::Net(n) => &n.inner,
            Source::Table(t) => t,
        }
    }
}

/// Metropolis samples of `|psi|^2` in the integrals' sector.
#[pyfunction]
#[pyo3(signature = (integrals, wavefunction, seed, batch_size=4096, n_chains=64, n_electrons=None, two_sz=None))]
#[allow(clippy::too_many_arguments)]
fn sample(
    integrals: &PyIntegrals,
    wavefunction: &Bound<'_, PyAny>,
    seed: u64,
    batch_size: usize,
    n_chains: usize,
    n_electrons: Option<usize>,
    two_sz: Option<i32>,
) -> PyResult<Vec<String>> {
    let sector = integrals.sector(n_electrons, two_sz)?;
    let n_orb = integrals.inner.n_orb;
    let src = Source::extract(wavefunction, 2 * n_orb)?;
    let cfg = SamplerConfig {
        n_chains,
        batch_size,
        ..SamplerConfig::default()
    };
    let batch = Sampler::new(cfg, sector, n_orb, seed)
        .map_err(err)?
        .sample(src.wf())
        .map_err(err)?;
    Ok(batch.configs.iter().map(|c| c.to_string()).collect())
}

fn batch_of(configs: &[String], wf: &dyn Wavefunction) -> PyResult<SampleBatch> {
    let cs = configs.iter().map(|c| parse_config(c)).collect::<PyResult<Vec<_>>>()?;
    let amps = cs.iter().map(|c| wf.amplitude(c)).collect();
    Ok(SampleBatch::from_samples(cs, amps))
}

/// `(mean, stderr, {config: E_loc})` over the given samples.
#[pyfunction]
fn local_energy(
    py: Python<'_>,
    integrals: &PyIntegrals,
    wavefunction: &Bound<'_, PyAny>,
    configs: Vec<String>,
) -> PyResult<(f64, f64, Py<PyDict>)> {
    let src = Source::extract(wavefunction, 2 * integrals.inner.n_orb)?;
    let batch = batch_of(&configs, src.wf())?;
    let report = local_values_exact(&batch, &integrals.inner, src.wf()).map_err(err)?;
    let (mean, stderr) = energy_estimate(&report);
    let values = PyDict::new(py);
    for (c, v) in batch.unique_configs.iter().zip(&report.values) {
        values.set_item(c.to_string(), v)?;
    }
    Ok((mean, stderr, values.unbind()))
}

/// `<S^2>` of an orbital set, or `<S_i . S_j>` when `pair` is given.
#[pyfunction]
#[pyo3(signature = (wavefunction, configs, n_spin_orbitals, orbitals=None, pair=None))]
fn spin_expectation(
    wavefunction: &Bound<'_, PyAny>,
    configs: Vec<String>,
    n_spin_orbitals: usize,
    orbitals: Option<Vec<usize>>,
    pair: Option<(usize, usize)>,
) -> PyResult<(f64, f64)> {
    let src = Source::extract(wavefunction, n_spin_orbitals)?;
    let batch = batch_of(&configs, src.wf())?;
    let o = match (orbitals, pair) {
        (_, Some((i, j))) => spin::measure_sisj(i, j, &batch, src.wf()),
        (Some(set), None) => {
            let set = spin::OrbitalSet {
                name: "set".into(),
                orbitals: set,
            };
            spin::measure_s2_set(&set, &batch, src.wf())
        }
        (None, None) => {
            let set = spin::OrbitalSet {
                name: "all".into(),
                orbitals: (0..n_spin_orbitals / 2).collect(),
            };
            spin::measure_s2_set(&set, &batch, src.wf())
        }
    }
    .map_err(err)?;
    Ok((o.value, o.stderr))
}

/// Slope of energy against `<S^2>`: `{j_hartree, j_wavenumber, intercept, r_squared}`.
#[pyfunction]
fn yamaguchi_j(py: Python<'_>, points: Vec<(f64, f64)>) -> PyResult<Py<PyAny>> {
    let pts: Vec<SpinStatePoint> = points.into_iter().map(|(energy, s2)| SpinStatePoint { energy, s2 }).collect();
    let fit = spin::yamaguchi_j(&pts).map_err(err)?;
    to_py(py, &driver::measure::JFitReport::from((fit, pts.len())))
}

fn load_config(path: Option<PathBuf>, seed: Option<u64>, output: Option<PathBuf>) -> PyResult<RunConfig> {
    let cli = CliOverrides {
        seed,
        output,
        ..CliOverrides::default()
    };
    RunConfig::load(path.as_deref(), std::env::vars(), &cli).map_err(err)
}

/// Runs `bfvmc train` in-process and returns the summary.
#[pyfunction]
#[pyo3(signature = (config, seed=None, output=None))]
fn train(py: Python<'_>, config: PathBuf, seed: Option<u64>, output: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(Some(config), seed, output)?;
    let summary = py.detach(|| driver::run_train(&cfg)).map_err(err)?;
    to_py(py, &summary)
}

/// Runs `bfvmc measure` in-process.
#[pyfunction]
#[pyo3(signature = (config, seed=None, output=None))]
fn measure(py: Python<'_>, config: PathBuf, seed: Option<u64>, output: Option<PathBuf>) -> PyResult<Py<PyAny>> {
    let cfg = load_config(Some(config), seed, output)?;
    let report = py.detach(|| driver::run_measure(&cfg)).map_err(err)?;
    to_py(py, &report)
}

/// Every configuration of a sector, in basis order.
#[pyfunction]
fn sector_configs(n_orb: usize, n_electrons: usize, two_sz: i32) -> PyResult<Vec<String>> {
    let sector = SpinSector::new(n_electrons, two_sz).map_err(err)?;
    Ok(core::determinant::enumerate_sector(sector, n_orb, DEFAULT_DIMENSION_CAP)
        .map_err(err)?
        .iter()
        .map(|c| c.to_string())
        .collect())
}

#[pymodule]
#[pyo3(name = "bfvmc")]
fn bfvmc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyIntegrals>()?;
    m.add_class::<PyNet>()?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(local_energy, m)?)?;
    m.add_function(wrap_pyfunction!(spin_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(yamaguchi_j, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(sector_configs, m)?)?;
    m.add("HARTREE_TO_WAVENUMBER", spin::HARTREE_TO_WAVENUMBER)?;
    Ok(())
}
