//! Metropolis sampling of `|psi|^2` inside one `(N_e, S_z)` sector.
//!
//! Moves use random hopping: a uniformly chosen movable electron jumps to a
//! uniformly chosen vacancy of its own spin. The proposal is symmetric, so
//! acceptance is the plain amplitude ratio.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::determinant::{spin_of, OccupationConfig, Spin, SpinSector};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::wavefunction::{Amplitude, Wavefunction};

/// Redraws allowed per chain when the initial configuration has `psi = 0`.
pub const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Steps discarded per chain at the start of every batch; `None` means `10 * N_so`.
    pub burn_in: Option<usize>,
    /// Steps between recorded states; `None` means `N_so`.
    pub thin: Option<usize>,
    pub batch_size: usize,
    /// Continue the chains from the previous batch. When off, every batch
    /// starts from fresh random sector configurations, which keeps rarely
    /// connected regions of the sector represented.
    pub persistent: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_chains: 64,
            burn_in: None,
            thin: None,
            batch_size: 4096,
            persistent: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 || self.batch_size == 0 || self.batch_size % self.n_chains != 0 {
            return Err(Error::Config(format!(
                "batch size {} must be a positive multiple of the chain count {}",
                self.batch_size, self.n_chains
            )));
        }
        if self.thin == Some(0) {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        Ok(())
    }

    pub fn burn_in_for(&self, n_so: usize) -> usize {
        self.burn_in.unwrap_or(10 * n_so)
    }

    pub fn thin_for(&self, n_so: usize) -> usize {
        self.thin.unwrap_or(n_so)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainState {
    pub current: OccupationConfig,
    pub current_amp: Amplitude,
    /// Index of this chain's private random stream.
    pub stream: u64,
}

/// Moves one electron to an empty spin orbital of the same spin.
pub fn propose_hop<R: Rng + ?Sized>(c: &OccupationConfig, rng: &mut R) -> Result<OccupationConfig> {
    let n_spatial = c.n_spatial();
    let movable = |spin: Spin| {
        let n = match spin {
            Spin::Up => c.n_alpha(),
            Spin::Down => c.n_beta(),
        };
        if n > 0 && n < n_spatial {
            n
        } else {
            0
        }
    };
    let (n_up, n_down) = (movable(Spin::Up), movable(Spin::Down));
    if n_up + n_down == 0 {
        return Err(Error::FrozenSector);
    }
    let pick = rng.gen_range(0..n_up + n_down);
    let spin = if pick < n_up { Spin::Up } else { Spin::Down };
    let index = if pick < n_up { pick } else { pick - n_up };
    let from = c.occupied_with_spin(spin)[index];
    let holes = c.unoccupied_with_spin(spin);
    let to = holes[rng.gen_range(0..holes.len())];
    debug_assert_eq!(spin_of(from), spin_of(to));
    Ok(c.moved(from, to))
}

/// `min(1, |psi_new|^2 / |psi_old|^2)`; a zero current amplitude accepts any
/// nonzero proposal.
pub fn acceptance_probability(old: &Amplitude, new: &Amplitude) -> f64 {
    if new.is_zero() {
        0.0
    } else if old.is_zero() {
        1.0
    } else {
        (2.0 * (new.log_abs - old.log_abs)).exp().min(1.0)
    }
}

/// One Metropolis step; returns whether the proposal was accepted.
pub fn metropolis_step<W, R>(chain: &mut ChainState, wf: &W, rng: &mut R) -> Result<bool>
where
    W: Wavefunction + ?Sized,
    R: Rng + ?Sized,
{
    let proposal = propose_hop(&chain.current, rng)?;
    let amp = wf.amplitude(&proposal);
    Ok(accept(chain, proposal, amp, rng))
}

fn accept<R: Rng + ?Sized>(chain: &mut ChainState, proposal: OccupationConfig, amp: Amplitude, rng: &mut R) -> bool {
    let accepted = if amp.is_zero() {
        false
    } else if chain.current_amp.is_zero() {
        true
    } else {
        // Compare in the log domain so huge ratios never overflow.
        let log_ratio = 2.0 * (amp.log_abs - chain.current_amp.log_abs);
        log_ratio >= 0.0 || rng.gen::<f64>().ln() < log_ratio
    };
    if accepted {
        chain.current = proposal;
        chain.current_amp = amp;
    }
    accepted
}

/// Samples with multiplicity plus the compacted unique view.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Recorded states in chain-major order.
    pub configs: Vec<OccupationConfig>,
    pub amplitudes: Vec<Amplitude>,
    /// Distinct configurations in ascending order of their bit pattern.
    pub unique_configs: Vec<OccupationConfig>,
    pub unique_amplitudes: Vec<Amplitude>,
    pub counts: Vec<usize>,
    pub accepted: usize,
    pub proposed: usize,
}

impl SampleBatch {
    /// Builds the batch and its compacted view from recorded states.
    pub fn from_samples(configs: Vec<OccupationConfig>, amplitudes: Vec<Amplitude>) -> Self {
        let mut table: BTreeMap<u128, (OccupationConfig, Amplitude, usize)> = BTreeMap::new();
        for (c, a) in configs.iter().zip(&amplitudes) {
            table.entry(c.bits()).or_insert((*c, *a, 0)).2 += 1;
        }
        let mut unique_configs = Vec::with_capacity(table.len());
        let mut unique_amplitudes = Vec::with_capacity(table.len());
        let mut counts = Vec::with_capacity(table.len());
        for (c, a, n) in table.into_values() {
            unique_configs.push(c);
            unique_amplitudes.push(a);
            counts.push(n);
        }
        SampleBatch {
            configs,
            amplitudes,
            unique_configs,
            unique_amplitudes,
            counts,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Position of each recorded state in `unique_configs`.
    pub fn unique_index(&self) -> Vec<usize> {
        let lookup: HashMap<OccupationConfig, usize> =
            self.unique_configs.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        self.configs.iter().map(|c| lookup[c]).collect()
    }
}

/// Ensemble of Markov chains. With `persistent` set, every call to
/// [`Sampler::sample`] resumes the chains from where the previous call left them.
#[derive(Debug, Clone)]
pub struct Sampler {
    config: SamplerConfig,
    sector: SpinSector,
    n_spatial: usize,
    seed: u64,
    round: u64,
    chains: Vec<OccupationConfig>,
}

impl Sampler {
    pub fn new(config: SamplerConfig, sector: SpinSector, n_spatial: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if sector.n_alpha() > n_spatial || sector.n_beta() > n_spatial {
            return Err(Error::Config(format!(
                "sector ({} alpha, {} beta) does not fit {n_spatial} orbitals",
                sector.n_alpha(),
                sector.n_beta()
            )));
        }
        Ok(Sampler {
            config,
            sector,
            n_spatial,
            seed,
            round: 0,
            chains: Vec::new(),
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Number of completed `sample` calls.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Current chain positions; empty before the first batch.
    pub fn chain_configs(&self) -> &[OccupationConfig] {
        &self.chains
    }

    /// Restores a saved position so a resumed run continues identically.
    pub fn restore(&mut self, round: u64, chains: Vec<OccupationConfig>) -> Result<()> {
        if !chains.is_empty() && chains.len() != self.config.n_chains {
            return Err(Error::Checkpoint(format!(
                "saved state has {} chains, configuration asks for {}",
                chains.len(),
                self.config.n_chains
            )));
        }
        if let Some(bad) = chains.iter().find(|c| c.sector() != self.sector || c.n_spatial() != self.n_spatial) {
            return Err(Error::Checkpoint(format!("saved chain {bad} is outside the sector")));
        }
        self.round = round;
        self.chains = chains;
        Ok(())
    }

    fn initial_chain<W: Wavefunction + ?Sized>(&self, wf: &W, rng: &mut ChaCha8Rng) -> Result<(OccupationConfig, Amplitude)> {
        for _ in 0..MAX_INIT_ATTEMPTS {
            let c = self.sector.random_config(self.n_spatial, rng)?;
            let amp = wf.amplitude(&c);
            if !amp.is_zero() {
                return Ok((c, amp));
            }
        }
        Err(Error::InitializationFailure(MAX_INIT_ATTEMPTS))
    }

    /// Draws `batch_size` states: every chain runs `burn_in` steps, then
    /// records every `thin`-th state.
    pub fn sample<W: Wavefunction + ?Sized>(&mut self, wf: &W) -> Result<SampleBatch> {
        let n_so = 2 * self.n_spatial;
        let burn_in = self.config.burn_in_for(n_so);
        let thin = self.config.thin_for(n_so);
        let per_chain = self.config.batch_size / self.config.n_chains;
        let round = self.round;
        let seed = self.seed;
        let starts: Vec<Option<OccupationConfig>> = if self.chains.is_empty() || !self.config.persistent {
            vec![None; self.config.n_chains]
        } else {
            self.chains.iter().map(|c| Some(*c)).collect()
        };
        let results: Vec<Result<ChainRun>> = starts
            .into_par_iter()
            .enumerate()
            .map(|(k, start)| {
                let mut rng = stream_rng(seed, &[round, k as u64]);
                let (current, current_amp) = match start {
                    Some(c) => (c, wf.amplitude(&c)),
                    None => self.initial_chain(wf, &mut rng)?,
                };
                let mut chain = ChainState {
                    current,
                    current_amp,
                    stream: k as u64,
                };
                run_chain(&mut chain, wf, &mut rng, burn_in, thin, per_chain)
            })
            .collect();
        let mut configs = Vec::with_capacity(self.config.batch_size);
        let mut amplitudes = Vec::with_capacity(self.config.batch_size);
        let mut finals = Vec::with_capacity(self.config.n_chains);
        let (mut accepted, mut proposed) = (0, 0);
        for r in results {
            let run = r?;
            configs.extend(run.configs);
            amplitudes.extend(run.amplitudes);
            finals.push(run.last);
            accepted += run.accepted;
            proposed += run.proposed;
        }
        self.chains = finals;
        self.round += 1;
        let mut batch = SampleBatch::from_samples(configs, amplitudes);
        batch.accepted = accepted;
        batch.proposed = proposed;
        Ok(batch)
    }
}

struct ChainRun {
    configs: Vec<OccupationConfig>,
    amplitudes: Vec<Amplitude>,
    last: OccupationConfig,
    accepted: usize,
    proposed: usize,
}

fn run_chain<W: Wavefunction + ?Sized>(
    chain: &mut ChainState,
    wf: &W,
    rng: &mut ChaCha8Rng,
    burn_in: usize,
    thin: usize,
    n_records: usize,
) -> Result<ChainRun> {
    // Parameters are fixed for the whole call, so amplitudes can be reused.
    let mut cache: HashMap<OccupationConfig, Amplitude> = HashMap::new();
    cache.insert(chain.current, chain.current_amp);
    let mut run = ChainRun {
        configs: Vec::with_capacity(n_records),
        amplitudes: Vec::with_capacity(n_records),
        last: chain.current,
        accepted: 0,
        proposed: 0,
    };
    let mut step = |chain: &mut ChainState, run: &mut ChainRun| -> Result<()> {
        let proposal = propose_hop(&chain.current, rng)?;
        let amp = *cache.entry(proposal).or_insert_with(|| wf.amplitude(&proposal));
        run.proposed += 1;
        if accept(chain, proposal, amp, rng) {
            run.accepted += 1;
        }
        Ok(())
    };
    for _ in 0..burn_in {
        step(chain, &mut run)?;
    }
    for _ in 0..n_records {
        for _ in 0..thin {
            step(chain, &mut run)?;
        }
        run.configs.push(chain.current);
        run.amplitudes.push(chain.current_amp);
    }
    run.last = chain.current;
    Ok(run)
}
