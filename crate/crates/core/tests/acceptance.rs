//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test --test acceptance`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use bfvmc::ansatz::gradcheck::check_gradients;
use bfvmc::ansatz::{read_checkpoint, write_checkpoint, AnsatzConfig, BackflowNet};
use bfvmc::determinant::{enumerate_sector, SpinSector};
use bfvmc::driver::trace::{read_trace, TrainSummary};
use bfvmc::driver::{run_train, RunConfig};
use bfvmc::fci::DEFAULT_DIMENSION_CAP;
use bfvmc::hamiltonian::{parse_fcidump, write_fcidump, IntegralTable};
use bfvmc::local_energy::{local_values_exact, local_values_semistochastic, EnergyMode, SemistochasticConfig};
use bfvmc::optimizer::{march_step, minsr_step, JacobianBatch, MarchHyper, MarchState};
use bfvmc::rng::stream_rng;
use bfvmc::sampler::{propose_hop, SampleBatch, Sampler, SamplerConfig};
use bfvmc::spin::{measure_s2_set, measure_sisj, yamaguchi_j, OrbitalSet, SpinStatePoint};
use common::*;
use nalgebra::DMatrix;
use rand::Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// The scaled architecture used for the training criteria.
fn scaled_ansatz() -> AnsatzConfig {
    AnsatzConfig {
        t: 2,
        d_f: 16,
        n_layers: 2,
        n_heads: 4,
        d_atten: 16,
        mlp_layers: 2,
        d_mlp: 16,
        n_dets: 2,
    }
}

fn exact_e0(ints: &IntegralTable) -> f64 {
    dense(ints, ints.ms2).ground_state().unwrap().energy
}

struct Run {
    name: &'static str,
    e0: f64,
    summary: TrainSummary,
    seconds: f64,
}

fn train(dir: &Path, name: &'static str, fcidump: &str) -> Run {
    let a = scaled_ansatz();
    let text = format!(
        r#"
[system]
fcidump = "{}"
[ansatz]
t = {}
d_f = {}
n_layers = {}
n_heads = {}
d_atten = {}
mlp_layers = {}
d_mlp = {}
n_dets = {}
[sampler]
n_chains = 64
batch_size = 256
persistent = false
[optimizer]
max_steps = 2000
adam_steps = 0
summary_window = 500
[run]
seed = 1
output_dir = "{}"
checkpoint_every = 0
"#,
        fixture(fcidump).display(),
        a.t,
        a.d_f,
        a.n_layers,
        a.n_heads,
        a.d_atten,
        a.mlp_layers,
        a.d_mlp,
        a.n_dets,
        dir.join(name).display(),
    );
    let cfg = RunConfig::from_toml_str(&text).unwrap();
    let start = Instant::now();
    let summary = run_train(&cfg).unwrap();
    Run {
        name,
        e0: exact_e0(&load(fcidump)),
        summary,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn accuracy(runs: &[Run], tolerance: f64, minutes: f64) -> Outcome {
    let mut ok = true;
    let mut lines = Vec::new();
    for r in runs {
        let err = r.summary.energy - r.e0;
        let pass = err.abs() <= tolerance && r.summary.steps <= 2000 && r.seconds < 60.0 * minutes;
        ok &= pass;
        lines.push(format!(
            "{}: E = {:.6} +- {:.1e}, E0 = {:.6}, error {:.3} mHa, {} steps, {:.0} s",
            r.name,
            r.summary.energy,
            r.summary.energy_stderr,
            r.e0,
            1e3 * err,
            r.summary.steps,
            r.seconds
        ));
    }
    check(ok, lines.join("; "))
}

fn variational_bound(runs: &[Run]) -> Outcome {
    let violations: Vec<String> = runs
        .iter()
        .filter(|r| r.summary.energy < r.e0 - 3.0 * r.summary.energy_stderr)
        .map(|r| format!("{}: {} < {} - 3 * {}", r.name, r.summary.energy, r.e0, r.summary.energy_stderr))
        .collect();
    check(violations.is_empty(), format!("{} runs, violations {violations:?}", runs.len()))
}

fn gradient_correctness() -> Outcome {
    let configs = enumerate_sector(SpinSector::new(2, 0).unwrap(), 2, DEFAULT_DIMENSION_CAP).unwrap();
    let mut worst = 0.0f64;
    for seed in 1..=5 {
        let net = BackflowNet::new(scaled_ansatz(), 4, 2, seed).unwrap();
        worst = worst.max(check_gradients(&net, &configs, 1e-5).unwrap().max_relative_error);
    }
    check(worst < 1e-5, format!("max relative error {worst:.2e} over 5 seeds"))
}

fn local_energy_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut spread = 0.0f64;
    for (name, seed) in [("h2_sto3g.fcidump", 21), ("h4_chain.fcidump", 22)] {
        let ints = load(name);
        let h = dense(&ints, 0);
        let net = small_net(&ints, seed);
        let batch = full_batch(h.sector, ints.n_orb, &net);
        let reference = in_pool(1, || local_values_exact(&batch, &ints, &net).unwrap());
        for (c, e) in dense_local_energies(&h, &net) {
            let i = batch.unique_configs.iter().position(|u| *u == c).unwrap();
            worst = worst.max((reference.values[i] - e).abs() / e.abs().max(1.0));
        }
        for threads in [2, 8] {
            let other = in_pool(threads, || local_values_exact(&batch, &ints, &net).unwrap());
            for (a, b) in reference.values.iter().zip(&other.values) {
                spread = spread.max((a - b).abs());
            }
        }
    }
    check(
        worst < 1e-10 && spread < 1e-13,
        format!("max deviation from dense {worst:.1e}, thread spread {spread:.1e}"),
    )
}

fn semistochastic_unbiased() -> Outcome {
    // Two hopping partners of equal weight; with a threshold above both,
    // each evaluation draws one of them.
    let ints = load("hubbard_dimer_u1e4.fcidump");
    let net = small_net(&ints, 31);
    let c = "1100".parse().unwrap();
    let batch = SampleBatch::from_samples(vec![c], vec![net.amplitude(&c)]);
    let exact = local_values_exact(&batch, &ints, &net).unwrap();
    let cfg = SemistochasticConfig {
        mode: EnergyMode::Semistochastic,
        epsilon_det: 2.0,
        n_candidate_samples: Some(1),
    };
    let runs: Vec<_> = (0..500)
        .map(|s| local_values_semistochastic(&batch, &ints, &net, &cfg, s).unwrap())
        .collect();
    let n = runs.len() as f64;
    let mean = runs.iter().map(|r| r.values[0]).sum::<f64>() / n;
    let sd = (runs.iter().map(|r| (r.values[0] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let sigma = sd / n.sqrt();
    let most = runs.iter().map(|r| r.n_evaluations).max().unwrap();
    check(
        sd > 0.0 && (mean - exact.values[0]).abs() <= 3.0 * sigma && most < exact.n_evaluations,
        format!(
            "mean {mean:.6} vs exact {:.6} (sigma {sigma:.1e}); evaluations {most} vs {}",
            exact.values[0], exact.n_evaluations
        ),
    )
}

fn random_batch(rows: usize, cols: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>) {
    let mut rng = stream_rng(seed, &[]);
    let raw = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
    let e = (0..rows).map(|_| rng.gen_range(-2.0..-1.0)).collect();
    (raw, e)
}

fn march_contract() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;

    // (a)
    let (raw, e) = random_batch(12, 30, 1);
    let jb = JacobianBatch::new(raw.clone(), &e);
    let hyper = MarchHyper {
        beta1: 0.0,
        ..MarchHyper::default()
    };
    let up = march_step(&mut MarchState::new(hyper, 30), &jb, 1).unwrap();
    let reference = minsr_step(&jb, hyper.lambda).unwrap();
    let a = up.gradient.iter().zip(reference.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ok &= a < 1e-12;
    notes.push(format!("(a) vs MinSR {a:.1e}"));

    // (b), (c), (d) over a sequence of steps.
    let hyper = MarchHyper {
        epsilon_clip: 10.0,
        c: 0.05,
        ..MarchHyper::default()
    };
    let batches: Vec<_> = (0..6)
        .map(|s| {
            let (mut raw, e) = random_batch(16, 41, 10 + s);
            raw *= 1.0 + 10.0 * s as f64;
            JacobianBatch::new(raw, &e)
        })
        .collect();
    let mut runs = Vec::new();
    let (mut max_norm, mut v_ok) = (0.0f64, true);
    for p in [1, 2, 4] {
        let mut st = MarchState::new(hyper, 41);
        let mut deltas = Vec::new();
        for jb in &batches {
            let up = march_step(&mut st, jb, p).unwrap();
            max_norm = max_norm.max(up.delta.iter().map(|d| d * d).sum::<f64>().sqrt());
            v_ok &= st.v.iter().all(|v| (0.1..=10.0).contains(v));
            deltas.extend(up.delta);
        }
        runs.push(deltas);
    }
    let b = runs[1..]
        .iter()
        .flat_map(|r| r.iter().zip(&runs[0]).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    ok &= b < 1e-10 && max_norm <= hyper.c * (1.0 + 1e-12) && v_ok;
    notes.push(format!("(b) partition spread {b:.1e}"));
    notes.push(format!("(c) max step norm {max_norm:.4} <= {}", hyper.c));
    notes.push(format!("(d) v within clip bounds: {v_ok}"));

    // (e)
    let shifted: Vec<f64> = e.iter().map(|x| x + 123.456).collect();
    let mut s1 = MarchState::new(MarchHyper::default(), 30);
    let mut s2 = s1.clone();
    let g1 = march_step(&mut s1, &JacobianBatch::new(raw.clone(), &e), 1).unwrap();
    let g2 = march_step(&mut s2, &JacobianBatch::new(raw, &shifted), 1).unwrap();
    let d = g1.gradient.iter().zip(&g2.gradient).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    ok &= d < 1e-10;
    notes.push(format!("(e) shift changes g by {d:.1e}"));

    check(ok, notes.join(", "))
}

fn sampler_correctness() -> Outcome {
    let ints = load("h2_sto3g.fcidump");
    let net = small_net(&ints, 41);
    let sector = SpinSector::new(2, 0).unwrap();
    let configs = enumerate_sector(sector, 2, DEFAULT_DIMENSION_CAP).unwrap();
    let weights: Vec<f64> = configs.iter().map(|c| net.amplitude(c).value().powi(2)).collect();
    let total: f64 = weights.iter().sum();
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let cfg = SamplerConfig {
        n_chains: 100,
        burn_in: Some(100),
        thin: Some(20),
        batch_size: 100_000,
        persistent: true,
    };
    let batch = Sampler::new(cfg, sector, 2, 5).unwrap().sample(&net).unwrap();
    let mut counts = vec![0usize; configs.len()];
    for c in &batch.configs {
        counts[configs.iter().position(|x| x == c).unwrap()] += 1;
    }
    let z = max_multinomial_z(&counts, &probs);

    let mut rng = stream_rng(6, &[]);
    let mut violations = 0usize;
    for (sector, n_orb) in [(sector, 2), (SpinSector::new(4, 0).unwrap(), 4)] {
        let mut c = sector.random_config(n_orb, &mut rng).unwrap();
        for _ in 0..1_000_000 {
            c = propose_hop(&c, &mut rng).unwrap();
            if c.n_alpha() != sector.n_alpha() || c.n_beta() != sector.n_beta() {
                violations += 1;
            }
        }
    }
    check(
        z < 3.0 && violations == 0,
        format!("B = {}, max |z| = {z:.2}; sector violations in 2e6 proposals: {violations}", batch.len()),
    )
}

fn sampled(name: &str, two_sz: i32, k: usize) -> (SampleBatch, bfvmc::wavefunction::TableWavefunction, usize) {
    let ints = load(name);
    let h = dense(&ints, two_sz);
    let wf = h.wavefunction(&h.eigenpairs().unwrap()[k]);
    let cfg = SamplerConfig {
        n_chains: 32,
        batch_size: 4096,
        ..SamplerConfig::default()
    };
    let batch = Sampler::new(cfg, h.sector, ints.n_orb, 9).unwrap().sample(&wf).unwrap();
    (batch, wf, ints.n_orb)
}

fn spin_observables() -> Outcome {
    let floor = 1e-10;
    let all = |n: usize| OrbitalSet {
        name: "all".into(),
        orbitals: (0..n).collect(),
    };
    let (b, wf, n) = sampled("h4_chain.fcidump", 0, 0);
    let singlet = measure_s2_set(&all(n), &b, &wf).unwrap();
    let (b, wf, n) = sampled("h4_chain.fcidump", 2, 0);
    let triplet = measure_s2_set(&all(n), &b, &wf).unwrap();
    let (b, wf, _) = sampled("hubbard_dimer_u1e4.fcidump", 0, 0);
    let pair = measure_sisj(0, 1, &b, &wf).unwrap();
    let j = 0.0123;
    let points: Vec<_> = [0.0, 2.0, 6.0, 12.0]
        .iter()
        .map(|&s2| SpinStatePoint { energy: -5.0 + j * s2, s2 })
        .collect();
    let fit = yamaguchi_j(&points).unwrap();
    let within = |o: &bfvmc::spin::Observable, t: f64| (o.value - t).abs() <= 3.0 * o.stderr + floor;
    check(
        within(&singlet, 0.0)
            && within(&triplet, 2.0)
            && within(&pair, -0.75)
            && (fit.j - j).abs() < 1e-12
            && (fit.r_squared - 1.0).abs() < 1e-12,
        format!(
            "S2 singlet {:.2e} +- {:.1e}, triplet {:.6} +- {:.1e}, S1.S2 {:.6} +- {:.1e}, J {:.6} r2 {:.15}",
            singlet.value, singlet.stderr, triplet.value, triplet.stderr, pair.value, pair.stderr, fit.j, fit.r_squared
        ),
    )
}

fn format_fidelity() -> Outcome {
    let mut ok = true;
    let mut n_values = 0;
    for name in ["h2_sto3g.fcidump", "h4_chain.fcidump", "hubbard_2x2_u4.fcidump", "hubbard_dimer_u1e4.fcidump"] {
        let a = parse_fcidump(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap();
        let b = parse_fcidump(&write_fcidump(&a)).unwrap();
        let n = a.n_orb;
        ok &= a.core_energy.to_bits() == b.core_energy.to_bits();
        for p in 0..n {
            for q in 0..n {
                ok &= a.one_body(p, q).to_bits() == b.one_body(p, q).to_bits();
                for r in 0..n {
                    for s in 0..n {
                        ok &= a.eri(p, q, r, s).to_bits() == b.eri(p, q, r, s).to_bits();
                        n_values += 1;
                    }
                }
            }
        }
    }
    let net = BackflowNet::new(scaled_ansatz(), 8, 4, 77).unwrap();
    let bytes = write_checkpoint(&net);
    let back = read_checkpoint(&bytes).unwrap();
    let params_equal = net.params().iter().zip(back.params()).all(|(x, y)| x.to_bits() == y.to_bits());
    let bytes_equal = write_checkpoint(&back) == bytes;
    let c = "11001100".parse().unwrap();
    let amp_equal = net.amplitude(&c).log_abs.to_bits() == back.amplitude(&c).log_abs.to_bits();
    check(
        ok && params_equal && bytes_equal && amp_equal,
        format!(
            "{n_values} two-electron integrals round-tripped; checkpoint of {} parameters bit-exact: {}",
            net.n_params(),
            params_equal && bytes_equal && amp_equal
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("PASS {name} ({secs:.1} s): {d}");
            true
        }
        Err(d) => {
            println!("FAIL {name} ({secs:.1} s): {d}");
            false
        }
    }
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results = vec![
        run("gradient correctness", gradient_correctness),
        run("local energy exactness", local_energy_exactness),
        run("semistochastic unbiasedness", semistochastic_unbiased),
        run("march contract", march_contract),
        run("sampler correctness", sampler_correctness),
        run("spin observables", spin_observables),
        run("format fidelity", format_fidelity),
    ];

    let mut runs = Vec::new();
    let mut h2 = Vec::new();
    results.push(run("ground state H2", || {
        h2.push(train(tmp.path(), "H2", "h2_sto3g.fcidump"));
        accuracy(&h2, 1.0e-3, 5.0)
    }));
    runs.extend(h2);
    let mut larger = Vec::new();
    results.push(run("ground state H4 chain and 2x2 Hubbard", || {
        larger.push(train(tmp.path(), "H4", "h4_chain.fcidump"));
        larger.push(train(tmp.path(), "Hubbard 2x2", "hubbard_2x2_u4.fcidump"));
        accuracy(&larger, 1.6e-3, 30.0)
    }));
    runs.extend(larger);
    results.push(run("variational bound", || {
        check(!runs.is_empty(), String::new())?;
        for r in &runs {
            let trace = read_trace(&tmp.path().join(r.name).join("trace.csv")).unwrap();
            assert_eq!(trace.len() as u64, r.summary.steps);
        }
        variational_bound(&runs)
    }));

    let failed = results.iter().filter(|ok| !**ok).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
