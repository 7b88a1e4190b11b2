#![allow(dead_code)]

use std::path::PathBuf;

use bfvmc::ansatz::{AnsatzConfig, BackflowNet};
use bfvmc::determinant::{enumerate_sector, OccupationConfig, SpinSector};
use bfvmc::fci::{build_dense, DenseHamiltonian, DEFAULT_DIMENSION_CAP};
use bfvmc::hamiltonian::IntegralTable;
use bfvmc::sampler::SampleBatch;
use bfvmc::wavefunction::Wavefunction;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str) -> IntegralTable {
    IntegralTable::from_path(fixture(name)).unwrap()
}

pub fn dense(ints: &IntegralTable, two_sz: i32) -> DenseHamiltonian {
    build_dense(ints, SpinSector::new(ints.n_elec, two_sz).unwrap(), DEFAULT_DIMENSION_CAP).unwrap()
}

/// A small architecture that still exercises every layer type.
pub fn small_ansatz() -> AnsatzConfig {
    AnsatzConfig {
        t: 2,
        d_f: 8,
        n_layers: 1,
        n_heads: 2,
        d_atten: 8,
        mlp_layers: 1,
        d_mlp: 8,
        n_dets: 2,
    }
}

pub fn small_net(ints: &IntegralTable, seed: u64) -> BackflowNet {
    BackflowNet::new(small_ansatz(), 2 * ints.n_orb, ints.n_elec, seed).unwrap()
}

/// Every sector configuration exactly once, as a batch.
pub fn full_batch<W: Wavefunction>(sector: SpinSector, n_orb: usize, wf: &W) -> SampleBatch {
    let configs = enumerate_sector(sector, n_orb, DEFAULT_DIMENSION_CAP).unwrap();
    let amps = configs.iter().map(|c| wf.amplitude(c)).collect();
    SampleBatch::from_samples(configs, amps)
}

/// `<x|H|psi> / <x|psi>` from the dense matrix, for each basis state.
pub fn dense_local_energies<W: Wavefunction>(h: &DenseHamiltonian, wf: &W) -> Vec<(OccupationConfig, f64)> {
    let psi: Vec<f64> = h.basis.iter().map(|c| wf.amplitude(c).value()).collect();
    (0..h.dimension())
        .map(|a| {
            let num: f64 = (0..h.dimension()).map(|b| h.matrix[(a, b)] * psi[b]).sum();
            (h.basis[a], num / psi[a])
        })
        .collect()
}

/// Worst standardized deviation of observed counts from `n p`.
pub fn max_multinomial_z(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .filter(|(_, p)| **p > 0.0)
        .map(|(&k, &p)| {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            (k as f64 - n as f64 * p).abs() / sd.max(f64::MIN_POSITIVE)
        })
        .fold(0.0, f64::max)
}

pub fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}
