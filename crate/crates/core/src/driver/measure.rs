//! Observables on a trained network or an exact eigenstate, plus the small
//! utility commands: oracle fixtures, gradient checks and the exchange fit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::{sector_for, SEED_MEASURE, SEED_NETWORK};
use crate::ansatz::gradcheck::check_gradients;
use crate::ansatz::{read_checkpoint, BackflowNet};
use crate::determinant::SpinSector;
use crate::error::{Error, Result};
use crate::fci::{build_dense, OracleFixture};
use crate::hamiltonian::IntegralTable;
use crate::local_energy::{energy_estimate, local_energy};
use crate::rng::{derive_seed, stream_rng};
use crate::sampler::Sampler;
use crate::spin::{
    measure_s2_set, measure_set_correlation, measure_si2, measure_sisj, yamaguchi_j, ExchangeFit, Observable, OrbitalSet,
};
use crate::wavefunction::Wavefunction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureReport {
    pub source: String,
    /// Exact eigenvalue when measuring an oracle state.
    pub exact_energy: Option<f64>,
    pub records: Vec<Observable>,
}

fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn observables<W: Wavefunction>(
    cfg: &RunConfig,
    ints: &IntegralTable,
    sector: SpinSector,
    wf: &W,
    seed: u64,
) -> Result<Vec<Observable>> {
    let m = &cfg.measure;
    let sets: BTreeMap<&str, &OrbitalSet> = m.orbital_sets.iter().map(|s| (s.name.as_str(), s)).collect();
    for s in &m.orbital_sets {
        s.validate(ints.n_orb)?;
    }
    for &i in m.sites.iter().chain(m.site_pairs.iter().flatten()) {
        if i >= ints.n_orb {
            return Err(Error::Config(format!("site {i} is out of range for {} orbitals", ints.n_orb)));
        }
    }
    let lookup = |name: &str| {
        sets.get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown orbital set {name:?}")))
    };

    let sampler_seed = derive_seed(seed, &[SEED_MEASURE]);
    let mut sampler = Sampler::new(cfg.sampler, sector, ints.n_orb, sampler_seed)?;
    let batch = sampler.sample(wf)?;
    let report = local_energy(&batch, ints, wf, &cfg.energy, derive_seed(seed, &[SEED_MEASURE, 1]))?;
    let (value, stderr) = energy_estimate(&report);
    let mut out = vec![Observable {
        observable: "energy".into(),
        value,
        stderr,
        batch_size: batch.len(),
        seed: None,
    }];
    for &i in &m.sites {
        out.push(measure_si2(i, &batch, wf)?);
    }
    for &[i, j] in &m.site_pairs {
        out.push(measure_sisj(i, j, &batch, wf)?);
    }
    for s in &m.orbital_sets {
        out.push(measure_s2_set(s, &batch, wf)?);
    }
    for [p, q] in &m.set_pairs {
        out.push(measure_set_correlation(lookup(p)?, lookup(q)?, &batch, wf)?);
    }
    for o in &mut out {
        o.seed = Some(seed);
    }
    Ok(out)
}

/// Measures either the configured exact eigenstate or the network in the checkpoint.
pub fn run_measure(cfg: &RunConfig) -> Result<MeasureReport> {
    let seed = cfg.seed()?;
    cfg.sampler.validate()?;
    cfg.energy.validate()?;
    let ints = IntegralTable::from_path(cfg.fcidump()?)?;
    let sector = sector_for(cfg, &ints)?;
    let report = match cfg.measure.oracle_state {
        Some(k) => {
            let h = build_dense(&ints, sector, cfg.system.max_dimension)?;
            let pairs = h.eigenpairs()?;
            let state = pairs
                .get(k)
                .ok_or_else(|| Error::Config(format!("sector has only {} eigenstates", pairs.len())))?;
            let wf = h.wavefunction(state);
            MeasureReport {
                source: format!("oracle state {k}"),
                exact_energy: Some(state.energy),
                records: observables(cfg, &ints, sector, &wf, seed)?,
            }
        }
        None => {
            let path = cfg
                .run
                .checkpoint_in
                .clone()
                .unwrap_or_else(|| cfg.checkpoint_out());
            let bytes = std::fs::read(&path)
                .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
            let net = read_checkpoint(&bytes)?;
            if net.n_electrons() != sector.n_electrons || net.n_spin_orbitals() != 2 * ints.n_orb {
                return Err(Error::Checkpoint("network shape does not match the system".into()));
            }
            MeasureReport {
                source: path.display().to_string(),
                exact_energy: None,
                records: observables(cfg, &ints, sector, &net, seed)?,
            }
        }
    };
    write_json(cfg.run.output_dir.join("measure.json"), &report)?;
    Ok(report)
}

/// Ground-state fixture for the configured system, written to `out`.
pub fn run_oracle(cfg: &RunConfig, out: Option<PathBuf>) -> Result<OracleFixture> {
    let path = cfg.fcidump()?;
    let bytes = std::fs::read(path)?;
    let ints = IntegralTable::from_reader(bytes.as_slice())?;
    let sector = sector_for(cfg, &ints)?;
    let fixture = OracleFixture::compute(&bytes, &ints, sector, cfg.run.oracle_top_k, cfg.system.max_dimension)?;
    let out = out.unwrap_or_else(|| cfg.run.output_dir.join("oracle.json"));
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, fixture.to_json())?;
    Ok(fixture)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckSummary {
    pub seed: u64,
    pub n_params: usize,
    pub n_checked: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub worst_group: String,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_CONFIGS: usize = 4;

/// Finite-difference check of a freshly initialized network on random sector configurations.
pub fn run_check_gradients(cfg: &RunConfig) -> Result<GradCheckSummary> {
    let seed = cfg.seed()?;
    cfg.ansatz.validate()?;
    let ints = IntegralTable::from_path(cfg.fcidump()?)?;
    let sector = sector_for(cfg, &ints)?;
    let net = BackflowNet::new(cfg.ansatz, 2 * ints.n_orb, sector.n_electrons, derive_seed(seed, &[SEED_NETWORK]))?;
    let mut rng = stream_rng(seed, &[4]);
    let configs = (0..GRADCHECK_CONFIGS)
        .map(|_| sector.random_config(ints.n_orb, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let r = check_gradients(&net, &configs, GRADCHECK_STEP)?;
    let summary = GradCheckSummary {
        seed,
        n_params: net.n_params(),
        n_checked: r.n_checked,
        max_relative_error: r.max_relative_error,
        worst_index: r.worst_index,
        worst_group: format!("{:?}", r.worst_group),
        passed: r.max_relative_error < GRADCHECK_TOLERANCE,
    };
    write_json(cfg.run.output_dir.join("gradcheck.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JFitReport {
    pub j_hartree: f64,
    pub j_wavenumber: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

impl From<(ExchangeFit, usize)> for JFitReport {
    fn from((fit, n): (ExchangeFit, usize)) -> Self {
        JFitReport {
            j_hartree: fit.j,
            j_wavenumber: fit.j_wavenumber(),
            intercept: fit.intercept,
            r_squared: fit.r_squared,
            n_points: n,
        }
    }
}

/// Exchange coupling from the `[measure] spin_states` points.
pub fn run_jfit(cfg: &RunConfig) -> Result<JFitReport> {
    let pts = &cfg.measure.spin_states;
    let report = JFitReport::from((yamaguchi_j(pts)?, pts.len()));
    write_json(cfg.run.output_dir.join("jfit.json"), &report)?;
    Ok(report)
}
