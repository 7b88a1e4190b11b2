//! Spin operators as local estimators, and exchange-constant fits.
//!
//! `S_i . S_j = 1/2 (S+_i S-_j + S-_i S+_j) + Sz_i Sz_j` for `i != j` and
//! `S_i^2 = 3/4 (n_up + n_down - 2 n_up n_down)`, with `S+_i = a+_{i up} a_{i down}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::determinant::{annihilate, apply_operators, create, spin_orbital, OccupationConfig, Spin};
use crate::error::{Error, Result};
use crate::hamiltonian::Connection;
use crate::local_energy::{energy_estimate, local_values_exact, LocalOperator};
use crate::sampler::SampleBatch;
use crate::wavefunction::Wavefunction;

pub const HARTREE_TO_WAVENUMBER: f64 = 219474.6313632;

/// Named set of spatial orbitals, e.g. those localized on one metal center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrbitalSet {
    pub name: String,
    pub orbitals: Vec<usize>,
}

impl OrbitalSet {
    pub fn validate(&self, n_orb: usize) -> Result<()> {
        let mut seen = self.orbitals.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.orbitals.len() {
            return Err(Error::Config(format!("orbital set {} has repeated indices", self.name)));
        }
        if let Some(&bad) = self.orbitals.iter().find(|&&i| i >= n_orb) {
            return Err(Error::Config(format!("orbital set {}: index {bad} >= {n_orb}", self.name)));
        }
        Ok(())
    }
}

/// `sum_k w_k S_{i_k} . S_{j_k}`; a pair with `i == j` stands for `S_i^2`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpinOperator {
    terms: Vec<(usize, usize, f64)>,
}

fn n(c: &OccupationConfig, i: usize, spin: Spin) -> f64 {
    c.is_occupied(spin_orbital(i, spin)) as u8 as f64
}

fn sz(c: &OccupationConfig, i: usize) -> f64 {
    0.5 * (n(c, i, Spin::Up) - n(c, i, Spin::Down))
}

impl SpinOperator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(mut self, i: usize, j: usize, weight: f64) -> Self {
        self.terms.push((i, j, weight));
        self
    }

    pub fn site_squared(i: usize) -> Self {
        Self::new().add(i, i, 1.0)
    }

    pub fn pair(i: usize, j: usize) -> Self {
        Self::new().add(i, j, 1.0)
    }

    /// `S_P^2 = sum_{i<j in P} 2 S_i . S_j + sum_{i in P} S_i^2`.
    pub fn set_squared(set: &[usize]) -> Self {
        let mut op = Self::new();
        for (a, &i) in set.iter().enumerate() {
            op = op.add(i, i, 1.0);
            for &j in &set[a + 1..] {
                op = op.add(i, j, 2.0);
            }
        }
        op
    }

    /// `S_P . S_Q = sum_{i in P, j in Q} S_i . S_j`.
    pub fn set_pair(p: &[usize], q: &[usize]) -> Self {
        let mut op = Self::new();
        for &i in p {
            for &j in q {
                op = op.add(i, j, 1.0);
            }
        }
        op
    }
}

impl LocalOperator for SpinOperator {
    fn connections(&self, c: &OccupationConfig) -> Vec<Connection> {
        let mut diagonal = 0.0;
        let mut off: BTreeMap<u128, (OccupationConfig, f64)> = BTreeMap::new();
        for &(i, j, w) in &self.terms {
            if i == j {
                let (u, d) = (n(c, i, Spin::Up), n(c, i, Spin::Down));
                diagonal += w * 0.75 * (u + d - 2.0 * u * d);
                continue;
            }
            diagonal += w * sz(c, i) * sz(c, j);
            let (iu, id) = (spin_orbital(i, Spin::Up), spin_orbital(i, Spin::Down));
            let (ju, jd) = (spin_orbital(j, Spin::Up), spin_orbital(j, Spin::Down));
            let flips = [
                [create(iu), annihilate(id), create(jd), annihilate(ju)],
                [create(id), annihilate(iu), create(ju), annihilate(jd)],
            ];
            for ops in &flips {
                if let Some((t, sign)) = apply_operators(c, ops) {
                    off.entry(t.bits()).or_insert((t, 0.0)).1 += 0.5 * w * sign;
                }
            }
        }
        let mut out = vec![Connection {
            target: *c,
            element: diagonal,
        }];
        out.extend(
            off.into_values()
                .filter(|(_, e)| *e != 0.0)
                .map(|(target, element)| Connection { target, element }),
        );
        out
    }
}

/// One measured expectation value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub observable: String,
    pub value: f64,
    pub stderr: f64,
    pub batch_size: usize,
    pub seed: Option<u64>,
}

/// Sample mean of the local estimator of `op` and its standard error.
pub fn measure<W: Wavefunction + ?Sized>(name: &str, op: &SpinOperator, batch: &SampleBatch, wf: &W) -> Result<Observable> {
    let report = local_values_exact(batch, op, wf)?;
    let (value, stderr) = energy_estimate(&report);
    Ok(Observable {
        observable: name.to_string(),
        value,
        stderr,
        batch_size: batch.len(),
        seed: None,
    })
}

pub fn measure_si2<W: Wavefunction + ?Sized>(i: usize, batch: &SampleBatch, wf: &W) -> Result<Observable> {
    measure(&format!("S{i}^2"), &SpinOperator::site_squared(i), batch, wf)
}

pub fn measure_sisj<W: Wavefunction + ?Sized>(i: usize, j: usize, batch: &SampleBatch, wf: &W) -> Result<Observable> {
    if i == j {
        return Err(Error::Config("S_i.S_j needs two distinct orbitals; use S_i^2".into()));
    }
    measure(&format!("S{i}.S{j}"), &SpinOperator::pair(i, j), batch, wf)
}

pub fn measure_s2_set<W: Wavefunction + ?Sized>(set: &OrbitalSet, batch: &SampleBatch, wf: &W) -> Result<Observable> {
    measure(&format!("S^2[{}]", set.name), &SpinOperator::set_squared(&set.orbitals), batch, wf)
}

pub fn measure_set_correlation<W: Wavefunction + ?Sized>(
    p: &OrbitalSet,
    q: &OrbitalSet,
    batch: &SampleBatch,
    wf: &W,
) -> Result<Observable> {
    measure(
        &format!("S[{}].S[{}]", p.name, q.name),
        &SpinOperator::set_pair(&p.orbitals, &q.orbitals),
        batch,
        wf,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinStatePoint {
    /// Hartree.
    pub energy: f64,
    pub s2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeFit {
    /// Slope of `E` against `<S^2>`, Hartree.
    pub j: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ExchangeFit {
    pub fn j_wavenumber(&self) -> f64 {
        self.j * HARTREE_TO_WAVENUMBER
    }
}

/// Least-squares line through `(s2, energy)`; the slope is `J`.
pub fn yamaguchi_j(points: &[SpinStatePoint]) -> Result<ExchangeFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateAbscissa);
    }
    let m = points.len() as f64;
    let mx = points.iter().map(|p| p.s2).sum::<f64>() / m;
    let my = points.iter().map(|p| p.energy).sum::<f64>() / m;
    let sxx: f64 = points.iter().map(|p| (p.s2 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.s2 - mx) * (p.energy - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.energy - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateAbscissa);
    }
    let j = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ExchangeFit {
        j,
        intercept: my - j * mx,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavefunction::TableWavefunction;

    fn cfg(s: &str) -> OccupationConfig {
        s.parse().unwrap()
    }

    fn batch(wf: &TableWavefunction, configs: &[&str]) -> SampleBatch {
        let cs: Vec<OccupationConfig> = configs.iter().map(|s| cfg(s)).collect();
        let amps = cs.iter().map(|c| wf.amplitude(c)).collect();
        SampleBatch::from_samples(cs, amps)
    }

    #[test]
    fn site_squared_by_occupation() {
        let wf = TableWavefunction::new(4, [(cfg("1000"), 1.0), (cfg("1100"), 1.0), (cfg("0011"), 1.0)]);
        assert_eq!(measure_si2(0, &batch(&wf, &["1000"]), &wf).unwrap().value, 0.75);
        assert_eq!(measure_si2(0, &batch(&wf, &["1100"]), &wf).unwrap().value, 0.0);
        assert_eq!(measure_si2(0, &batch(&wf, &["0011"]), &wf).unwrap().value, 0.0);
    }

    #[test]
    fn two_site_singlet_and_triplet() {
        // (|up, down> -+ |down, up>)/sqrt(2) on two sites.
        let a = cfg("1001");
        let b = cfg("0110");
        let singlet = TableWavefunction::new(4, [(a, 1.0), (b, -1.0)]);
        let triplet = TableWavefunction::new(4, [(a, 1.0), (b, 1.0)]);
        let s = measure_sisj(0, 1, &batch(&singlet, &["1001", "0110"]), &singlet).unwrap();
        assert!((s.value + 0.75).abs() < 1e-15 && s.stderr < 1e-15);
        let t = measure_sisj(0, 1, &batch(&triplet, &["1001", "0110"]), &triplet).unwrap();
        assert!((t.value - 0.25).abs() < 1e-15);
        let all = OrbitalSet {
            name: "all".into(),
            orbitals: vec![0, 1],
        };
        assert!(measure_s2_set(&all, &batch(&singlet, &["1001"]), &singlet).unwrap().value.abs() < 1e-15);
        assert!((measure_s2_set(&all, &batch(&triplet, &["0110"]), &triplet).unwrap().value - 2.0).abs() < 1e-15);
        // High-spin component |up, up> is an S = 1 eigenstate too.
        let up = TableWavefunction::new(4, [(cfg("1010"), 1.0)]);
        assert!((measure_s2_set(&all, &batch(&up, &["1010"]), &up).unwrap().value - 2.0).abs() < 1e-15);
    }

    #[test]
    fn closed_shell_site_is_uncorrelated() {
        let wf = TableWavefunction::new(6, [(cfg("110010"), 1.0), (cfg("110001"), 0.5)]);
        let b = batch(&wf, &["110010", "110001"]);
        assert_eq!(measure_sisj(0, 1, &b, &wf).unwrap().value, 0.0);
        assert_eq!(measure_sisj(0, 2, &b, &wf).unwrap().value, 0.0);
    }

    #[test]
    fn pair_is_symmetric() {
        let wf = TableWavefunction::new(
            6,
            [(cfg("100110"), 0.3), (cfg("011010"), -0.8), (cfg("100101"), 0.5), (cfg("010110"), 0.1)],
        );
        let b = batch(&wf, &["100110", "011010", "100101", "010110"]);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert_eq!(
                measure_sisj(i, j, &b, &wf).unwrap().value,
                measure_sisj(j, i, &b, &wf).unwrap().value
            );
        }
    }

    #[test]
    fn single_orbital_set_is_site_squared() {
        let wf = TableWavefunction::new(4, [(cfg("1001"), 1.0), (cfg("0110"), 0.4)]);
        let b = batch(&wf, &["1001", "0110"]);
        let set = OrbitalSet {
            name: "one".into(),
            orbitals: vec![1],
        };
        assert_eq!(measure_s2_set(&set, &b, &wf).unwrap().value, measure_si2(1, &b, &wf).unwrap().value);
        assert!(set.validate(2).is_ok());
        assert!(set.validate(1).is_err());
    }

    #[test]
    fn fit_two_points() {
        let fit = yamaguchi_j(&[
            SpinStatePoint { energy: -1.1, s2: 0.0 },
            SpinStatePoint { energy: -1.0, s2: 30.0 },
        ])
        .unwrap();
        assert!((fit.j - 0.1 / 30.0).abs() < 1e-15);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.j_wavenumber() - 0.1 / 30.0 * 219474.6313632).abs() < 1e-9);
    }

    #[test]
    fn fit_needs_spread() {
        let p = SpinStatePoint { energy: -1.0, s2: 2.0 };
        assert!(matches!(yamaguchi_j(&[p, p]), Err(Error::DegenerateAbscissa)));
        assert!(matches!(yamaguchi_j(&[p]), Err(Error::DegenerateAbscissa)));
    }
}
