//! The optimization loop: sample, local energies, log-derivatives, update.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, RunConfig};
use super::trace::{tail_mean, Phase, TraceRecord, TraceWriter, TrainSummary};
use crate::ansatz::{read_checkpoint, write_checkpoint, BackflowNet};
use crate::determinant::{OccupationConfig, SpinSector};
use crate::error::{Error, Result};
use crate::hamiltonian::IntegralTable;
use crate::local_energy::{energy_estimate, local_energy, SemistochasticConfig};
use crate::optimizer::{march_step, sgd_gradient, Adam, JacobianBatch, MarchState};
use crate::rng::derive_seed;
use crate::sampler::{SampleBatch, Sampler, SamplerConfig};

/// Seed paths for the independent random consumers of a run.
pub(crate) const SEED_NETWORK: u64 = 0;
pub(crate) const SEED_SAMPLER: u64 = 1;
pub(crate) const SEED_ENERGY: u64 = 2;
pub(crate) const SEED_MEASURE: u64 = 3;

pub const RUN_STATE_VERSION: u32 = 1;

/// Everything besides the network parameters needed to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub version: u32,
    pub fingerprint: String,
    pub step: u64,
    pub phase: Phase,
    pub march_started_at: Option<u64>,
    pub sampler_round: u64,
    pub chains: Vec<OccupationConfig>,
    pub adam: Adam,
    pub march: MarchState,
    pub energies: Vec<f64>,
}

pub fn state_path(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".state.json");
    PathBuf::from(name)
}

pub struct Trainer<'a> {
    ints: &'a IntegralTable,
    pub net: BackflowNet,
    sampler: Sampler,
    energy: SemistochasticConfig,
    opt: OptimizerConfig,
    seed: u64,
    pub phase: Phase,
    pub march_started_at: Option<u64>,
    adam: Adam,
    march: MarchState,
    /// Completed steps.
    pub step: u64,
    energies: Vec<f64>,
}

/// Sector from the config, falling back to the FCIDUMP header.
pub fn sector_for(cfg: &RunConfig, ints: &IntegralTable) -> Result<SpinSector> {
    SpinSector::new(
        cfg.system.n_electrons.unwrap_or(ints.n_elec),
        cfg.system.two_sz.unwrap_or(ints.ms2),
    )
}

impl<'a> Trainer<'a> {
    /// Fresh run with a newly initialized network.
    pub fn new(
        ints: &'a IntegralTable,
        sector: SpinSector,
        ansatz: crate::ansatz::AnsatzConfig,
        sampler: SamplerConfig,
        energy: SemistochasticConfig,
        opt: OptimizerConfig,
        seed: u64,
    ) -> Result<Self> {
        let net = BackflowNet::new(ansatz, 2 * ints.n_orb, sector.n_electrons, derive_seed(seed, &[SEED_NETWORK]))?;
        Self::with_network(ints, sector, net, sampler, energy, opt, seed)
    }

    pub fn with_network(
        ints: &'a IntegralTable,
        sector: SpinSector,
        net: BackflowNet,
        sampler: SamplerConfig,
        energy: SemistochasticConfig,
        opt: OptimizerConfig,
        seed: u64,
    ) -> Result<Self> {
        if net.n_electrons() != sector.n_electrons || crate::wavefunction::Wavefunction::n_spin_orbitals(&net) != 2 * ints.n_orb {
            return Err(Error::Checkpoint("network shape does not match the system".into()));
        }
        let sampler = Sampler::new(sampler, sector, ints.n_orb, derive_seed(seed, &[SEED_SAMPLER]))?;
        let n = net.n_params();
        Ok(Trainer {
            ints,
            net,
            sampler,
            energy,
            adam: Adam::new(opt.adam, n),
            march: MarchState::new(opt.march, n),
            opt,
            seed,
            phase: Phase::Adam,
            march_started_at: None,
            step: 0,
            energies: Vec::new(),
        })
    }

    pub fn from_config(ints: &'a IntegralTable, cfg: &RunConfig) -> Result<Self> {
        let sector = sector_for(cfg, ints)?;
        let seed = cfg.seed()?;
        match &cfg.run.checkpoint_in {
            None => Self::new(ints, sector, cfg.ansatz, cfg.sampler, cfg.energy, cfg.optimizer.clone(), seed),
            Some(path) => {
                let net = read_checkpoint(&std::fs::read(path)?)?;
                if net.config() != &cfg.ansatz {
                    return Err(Error::Checkpoint(format!(
                        "checkpoint architecture {:?} does not match the configured {:?}",
                        net.config(),
                        cfg.ansatz
                    )));
                }
                let mut t = Self::with_network(ints, sector, net, cfg.sampler, cfg.energy, cfg.optimizer.clone(), seed)?;
                let sp = state_path(path);
                if sp.exists() {
                    let text = std::fs::read_to_string(&sp)?;
                    let state: RunState =
                        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", sp.display())))?;
                    t.restore(state)?;
                }
                Ok(t)
            }
        }
    }

    pub fn save_state(&self) -> RunState {
        RunState {
            version: RUN_STATE_VERSION,
            fingerprint: self.net.fingerprint(),
            step: self.step,
            phase: self.phase,
            march_started_at: self.march_started_at,
            sampler_round: self.sampler.round(),
            chains: self.sampler.chain_configs().to_vec(),
            adam: self.adam.clone(),
            march: self.march.clone(),
            energies: self.energies.clone(),
        }
    }

    pub fn restore(&mut self, state: RunState) -> Result<()> {
        if state.version != RUN_STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported run state version {}", state.version)));
        }
        if state.fingerprint != self.net.fingerprint() {
            return Err(Error::Checkpoint("run state belongs to a different architecture".into()));
        }
        self.sampler.restore(state.sampler_round, state.chains)?;
        self.step = state.step;
        self.phase = state.phase;
        self.march_started_at = state.march_started_at;
        self.adam = state.adam;
        self.march = state.march;
        self.energies = state.energies;
        Ok(())
    }

    /// Writes the network and the run state next to it.
    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        if let Some(dir) = checkpoint.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(checkpoint, write_checkpoint(&self.net))?;
        let json = serde_json::to_string(&self.save_state()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(state_path(checkpoint), json)?;
        Ok(())
    }

    fn plateaued(&self) -> bool {
        let w = self.opt.plateau_window;
        let n = self.energies.len();
        if n < 2 * w {
            return false;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        let previous = mean(&self.energies[n - 2 * w..n - w]);
        let recent = mean(&self.energies[n - w..]);
        previous - recent < self.opt.plateau_tolerance
    }

    /// Raw `d ln|psi| / d theta` for every recorded sample, one row each.
    fn jacobian_rows(&self, batch: &SampleBatch) -> Result<DMatrix<f64>> {
        let grads: Vec<Result<Vec<f64>>> = batch
            .unique_configs
            .par_iter()
            .map(|c| self.net.log_grad(c).map(|(_, g)| g))
            .collect();
        let grads: Vec<Vec<f64>> = grads.into_iter().collect::<Result<_>>()?;
        let index = batch.unique_index();
        let n = self.net.n_params();
        let mut raw = DMatrix::zeros(batch.len(), n);
        for (row, &u) in index.iter().enumerate() {
            for (j, g) in grads[u].iter().enumerate() {
                raw[(row, j)] = *g;
            }
        }
        Ok(raw)
    }

    pub fn step(&mut self) -> Result<TraceRecord> {
        let start = Instant::now();
        if self.phase == Phase::Adam && (self.opt.adam_steps.is_some_and(|n| self.step >= n) || self.plateaued()) {
            log::info!("switching to MARCH after step {}", self.step);
            self.phase = Phase::March;
            self.march_started_at = Some(self.step);
        }
        let batch = self.sampler.sample(&self.net)?;
        let energy_seed = derive_seed(self.seed, &[SEED_ENERGY, self.step]);
        let report = local_energy(&batch, self.ints, &self.net, &self.energy, energy_seed)?;
        let (energy, stderr) = energy_estimate(&report);
        let index = batch.unique_index();
        let e_loc: Vec<f64> = index.iter().map(|&u| report.values[u]).collect();
        let jb = JacobianBatch::new(self.jacobian_rows(&batch)?, &e_loc);

        let (grad_norm, eta_eff, delta) = match self.phase {
            Phase::Adam => {
                let g = sgd_gradient(&jb);
                let delta = self.adam.step(self.net.params_mut(), g.as_slice());
                (g.norm(), self.opt.adam.lr, delta)
            }
            Phase::March => {
                let up = march_step(&mut self.march, &jb, self.opt.partition)?;
                for (p, d) in self.net.params_mut().iter_mut().zip(&up.delta) {
                    *p += d;
                }
                (up.grad_norm, up.eta_eff, up.delta)
            }
        };
        if self.net.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::SolverFailure(format!("parameters became non-finite at step {}", self.step + 1)));
        }
        let record = TraceRecord {
            step: self.step + 1,
            phase: self.phase,
            energy,
            stderr,
            grad_norm,
            eta_eff,
            update_norm: delta.iter().map(|d| d * d).sum::<f64>().sqrt(),
            acceptance: batch.acceptance_rate(),
            unique_samples: batch.unique_configs.len(),
            wall_time: start.elapsed().as_secs_f64(),
        };
        self.step += 1;
        self.energies.push(energy);
        Ok(record)
    }
}

/// Runs the configured number of steps, writing the trace, summary and checkpoint.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate_for_training()?;
    let ints = IntegralTable::from_path(cfg.fcidump()?)?;
    let started = Instant::now();
    let mut trainer = Trainer::from_config(&ints, cfg)?;
    std::fs::create_dir_all(&cfg.run.output_dir)?;
    let trace_path = cfg.run.output_dir.join("trace.csv");
    let resuming = trainer.step > 0;
    let mut writer = TraceWriter::open(&trace_path, resuming)?;
    let checkpoint = cfg.checkpoint_out();
    let mut records = Vec::new();
    while trainer.step < cfg.optimizer.max_steps {
        let r = trainer.step()?;
        log::info!(
            "step {} [{:?}] E = {:.8} +- {:.2e} |g| = {:.3e}",
            r.step,
            r.phase,
            r.energy,
            r.stderr,
            r.grad_norm
        );
        writer.write(&r)?;
        records.push(r);
        if cfg.run.checkpoint_every > 0 && trainer.step % cfg.run.checkpoint_every == 0 {
            trainer.save(&checkpoint)?;
        }
    }
    trainer.save(&checkpoint)?;
    let all = if resuming { super::trace::read_trace(&trace_path)? } else { records };
    let (energy, energy_stderr, window) = tail_mean(&all, cfg.optimizer.summary_window);
    let summary = TrainSummary {
        steps: trainer.step,
        final_phase: trainer.phase,
        march_started_at: trainer.march_started_at,
        energy,
        energy_stderr,
        window,
        n_params: trainer.net.n_params(),
        fingerprint: trainer.net.fingerprint(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Error::Checkpoint(e.to_string()))?;
    std::fs::write(cfg.run.output_dir.join("summary.json"), json + "\n")?;
    Ok(summary)
}
