mod common;

use bfvmc::sampler::{Sampler, SamplerConfig};
use bfvmc::spin::{measure_s2_set, measure_si2, measure_sisj, yamaguchi_j, OrbitalSet, SpinStatePoint};
use common::*;

const FLOOR: f64 = 1e-10;

fn close(value: f64, stderr: f64, target: f64) -> bool {
    (value - target).abs() <= 3.0 * stderr + FLOOR
}

fn all_orbitals(n: usize) -> OrbitalSet {
    OrbitalSet {
        name: "all".into(),
        orbitals: (0..n).collect(),
    }
}

fn sample_state(name: &str, two_sz: i32, k: usize) -> (bfvmc::sampler::SampleBatch, bfvmc::wavefunction::TableWavefunction, usize) {
    let ints = load(name);
    let h = dense(&ints, two_sz);
    let state = &h.eigenpairs().unwrap()[k];
    let wf = h.wavefunction(state);
    let cfg = SamplerConfig {
        n_chains: 32,
        batch_size: 4096,
        ..SamplerConfig::default()
    };
    let batch = Sampler::new(cfg, h.sector, ints.n_orb, 3).unwrap().sample(&wf).unwrap();
    (batch, wf, ints.n_orb)
}

#[test]
fn ground_states_have_expected_total_spin() {
    for (name, two_sz, target) in [
        ("h4_chain.fcidump", 0, 0.0),
        ("h4_chain.fcidump", 2, 2.0),
        ("hubbard_2x2_u4.fcidump", 0, 0.0),
        ("hubbard_2x2_u4.fcidump", 2, 2.0),
    ] {
        let (batch, wf, n) = sample_state(name, two_sz, 0);
        let o = measure_s2_set(&all_orbitals(n), &batch, &wf).unwrap();
        assert!(close(o.value, o.stderr, target), "{name} 2Sz={two_sz}: {} +- {}", o.value, o.stderr);
    }
}

#[test]
fn dissociated_dimer_is_an_antiferromagnetic_pair() {
    let (batch, wf, _) = sample_state("hubbard_dimer_u1e4.fcidump", 0, 0);
    let o = measure_sisj(0, 1, &batch, &wf).unwrap();
    assert!(close(o.value, o.stderr, -0.75), "{} +- {}", o.value, o.stderr);
    let swapped = measure_sisj(1, 0, &batch, &wf).unwrap();
    assert_eq!(o.value, swapped.value);
    // Each site holds one electron, so S_i^2 = 3/4.
    let local = measure_si2(0, &batch, &wf).unwrap();
    assert!(close(local.value, local.stderr, 0.75));
}

#[test]
fn triplet_component_in_the_zero_projection_sector() {
    // The M_s = 0 partner of the H4 triplet ground state.
    let ints = load("h4_chain.fcidump");
    let e_t = dense(&ints, 2).ground_state().unwrap().energy;
    let pairs = dense(&ints, 0).eigenpairs().unwrap();
    let k = pairs.iter().position(|p| (p.energy - e_t).abs() < 1e-8).unwrap();
    let (batch, wf, n) = sample_state("h4_chain.fcidump", 0, k);
    let o = measure_s2_set(&all_orbitals(n), &batch, &wf).unwrap();
    assert!(close(o.value, o.stderr, 2.0), "{} +- {}", o.value, o.stderr);
}

#[test]
fn exchange_fit_from_exact_states() {
    // Singlet and triplet of the same system lie on a line of slope J.
    let ints = load("hubbard_dimer_u1e4.fcidump");
    let points: Vec<SpinStatePoint> = [(0, 0.0), (2, 2.0)]
        .iter()
        .map(|&(two_sz, s2)| SpinStatePoint {
            energy: dense(&ints, two_sz).ground_state().unwrap().energy,
            s2,
        })
        .collect();
    let fit = yamaguchi_j(&points).unwrap();
    // Superexchange: E_T - E_S ~ 4 t^2 / U with t = 1, U = 1e4.
    assert!((fit.j * 2.0 - 4e-4).abs() < 1e-9, "{}", fit.j);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
}
