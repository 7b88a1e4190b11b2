//! Local estimators `O_loc(x) = sum_x' O_xx' psi(x') / psi(x)` over a sample batch.
//!
//! Evaluation runs in three phases: every source configuration lists the
//! partner terms it needs, the distinct partners across the whole batch are
//! evaluated once, and each source sums its terms in a fixed order. The last
//! phase never depends on scheduling, so exact-mode results are identical for
//! any thread count.

use std::collections::{BTreeSet, HashMap};

use rand::distributions::{Distribution, WeightedIndex};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::determinant::OccupationConfig;
use crate::error::{Error, Result};
use crate::hamiltonian::{Connection, IntegralTable};
use crate::rng::stream_rng;
use crate::sampler::SampleBatch;
use crate::wavefunction::{Amplitude, Wavefunction};

/// A Hermitian operator given by its matrix elements.
pub trait LocalOperator: Sync {
    /// Diagonal element first, then every nonzero `<x'|O|x>` with `x' != x`.
    fn connections(&self, c: &OccupationConfig) -> Vec<Connection>;
}

impl LocalOperator for IntegralTable {
    fn connections(&self, c: &OccupationConfig) -> Vec<Connection> {
        self.connect(c, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnergyMode {
    #[default]
    Exact,
    Semistochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemistochasticConfig {
    pub mode: EnergyMode,
    /// Off-diagonal elements with `|H| > epsilon_det` are summed exactly.
    pub epsilon_det: f64,
    /// Draws from the remaining elements per source; `None` means `max(1, |C| / 10)`.
    pub n_candidate_samples: Option<usize>,
}

impl Default for SemistochasticConfig {
    fn default() -> Self {
        SemistochasticConfig {
            mode: EnergyMode::Exact,
            epsilon_det: 1e-8,
            n_candidate_samples: None,
        }
    }
}

impl SemistochasticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_det >= 0.0) {
            return Err(Error::Config(format!("epsilon_det must be >= 0, got {}", self.epsilon_det)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalEnergyReport {
    /// One value per entry of `SampleBatch::unique_configs`.
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    /// Count-weighted mean.
    pub mean: f64,
    /// Count-weighted population variance.
    pub variance: f64,
    /// Amplitudes computed for partner configurations not already in the batch.
    pub n_evaluations: usize,
}

/// `(mean, stderr)` with `stderr = sqrt(variance / B)`; autocorrelation is ignored.
pub fn energy_estimate(report: &LocalEnergyReport) -> (f64, f64) {
    let b: usize = report.counts.iter().sum();
    (report.mean, (report.variance / b as f64).sqrt())
}

/// Partner terms of one source: `(x', coefficient)` with the diagonal kept apart.
struct Terms {
    diagonal: f64,
    partners: Vec<(OccupationConfig, f64)>,
}

fn exact_terms<O: LocalOperator + ?Sized>(op: &O, c: &OccupationConfig) -> Terms {
    let conns = op.connections(c);
    let diagonal = conns.first().map_or(0.0, |d| d.element);
    Terms {
        diagonal,
        partners: conns[1..].iter().map(|k| (k.target, k.element)).collect(),
    }
}

fn semistochastic_terms<O: LocalOperator + ?Sized>(
    op: &O,
    c: &OccupationConfig,
    cfg: &SemistochasticConfig,
    seed: u64,
    index: u64,
) -> Terms {
    let conns = op.connections(c);
    let diagonal = conns.first().map_or(0.0, |d| d.element);
    let mut partners = Vec::new();
    let mut candidates = Vec::new();
    for k in &conns[1..] {
        if k.element.abs() > cfg.epsilon_det {
            partners.push((k.target, k.element));
        } else {
            candidates.push(*k);
        }
    }
    if !candidates.is_empty() {
        let n = cfg.n_candidate_samples.unwrap_or((candidates.len() / 10).max(1));
        if n > 0 {
            let norm: f64 = candidates.iter().map(|k| k.element.abs()).sum();
            let dist = WeightedIndex::new(candidates.iter().map(|k| k.element.abs())).expect("nonzero candidate weights");
            let mut rng = stream_rng(seed, &[index]);
            // H / P(x') / n with P = |H| / norm.
            let mut drawn: HashMap<OccupationConfig, f64> = HashMap::new();
            let mut order = Vec::new();
            for _ in 0..n {
                let k = candidates[dist.sample(&mut rng)];
                let w = k.element.signum() * norm / n as f64;
                match drawn.get_mut(&k.target) {
                    Some(acc) => *acc += w,
                    None => {
                        drawn.insert(k.target, w);
                        order.push(k.target);
                    }
                }
            }
            partners.extend(order.into_iter().map(|t| (t, drawn[&t])));
        }
    }
    Terms { diagonal, partners }
}

fn ratio(num: &Amplitude, den: &Amplitude) -> f64 {
    if num.is_zero() {
        0.0
    } else {
        num.sign * den.sign * (num.log_abs - den.log_abs).exp()
    }
}

fn evaluate<W: Wavefunction + ?Sized>(batch: &SampleBatch, wf: &W, terms: Vec<Terms>) -> Result<LocalEnergyReport> {
    if let Some(i) = batch.unique_amplitudes.iter().position(|a| a.is_zero()) {
        return Err(Error::ZeroAmplitude(batch.unique_configs[i].to_string()));
    }
    let mut known: HashMap<OccupationConfig, Amplitude> =
        batch.unique_configs.iter().copied().zip(batch.unique_amplitudes.iter().copied()).collect();
    let pool: Vec<OccupationConfig> = terms
        .iter()
        .flat_map(|t| t.partners.iter().map(|p| p.0))
        .filter(|c| !known.contains_key(c))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let amps: Vec<Amplitude> = pool.par_iter().map(|c| wf.amplitude(c)).collect();
    let n_evaluations = pool.len();
    known.extend(pool.into_iter().zip(amps));
    let values: Vec<f64> = terms
        .par_iter()
        .zip(batch.unique_amplitudes.par_iter())
        .map(|(t, amp)| {
            let mut e = t.diagonal;
            for (target, coeff) in &t.partners {
                e += coeff * ratio(&known[target], amp);
            }
            e
        })
        .collect();
    let b: usize = batch.counts.iter().sum();
    let mean = values.iter().zip(&batch.counts).map(|(v, n)| v * *n as f64).sum::<f64>() / b as f64;
    let variance = values
        .iter()
        .zip(&batch.counts)
        .map(|(v, n)| (v - mean).powi(2) * *n as f64)
        .sum::<f64>()
        / b as f64;
    Ok(LocalEnergyReport {
        values,
        counts: batch.counts.clone(),
        mean,
        variance,
        n_evaluations,
    })
}

/// Exact local values: every connection is summed.
pub fn local_values_exact<O, W>(batch: &SampleBatch, op: &O, wf: &W) -> Result<LocalEnergyReport>
where
    O: LocalOperator + ?Sized,
    W: Wavefunction + ?Sized,
{
    let terms = batch.unique_configs.par_iter().map(|c| exact_terms(op, c)).collect();
    evaluate(batch, wf, terms)
}

/// Local values with small off-diagonal elements importance-sampled. Each
/// source draws from its own stream of `seed`, so the result does not depend
/// on the thread count either.
pub fn local_values_semistochastic<O, W>(
    batch: &SampleBatch,
    op: &O,
    wf: &W,
    cfg: &SemistochasticConfig,
    seed: u64,
) -> Result<LocalEnergyReport>
where
    O: LocalOperator + ?Sized,
    W: Wavefunction + ?Sized,
{
    cfg.validate()?;
    let terms = batch
        .unique_configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| semistochastic_terms(op, c, cfg, seed, i as u64))
        .collect();
    evaluate(batch, wf, terms)
}

/// Dispatches on `cfg.mode`.
pub fn local_energy<W: Wavefunction + ?Sized>(
    batch: &SampleBatch,
    ints: &IntegralTable,
    wf: &W,
    cfg: &SemistochasticConfig,
    seed: u64,
) -> Result<LocalEnergyReport> {
    match cfg.mode {
        EnergyMode::Exact => local_values_exact(batch, ints, wf),
        EnergyMode::Semistochastic => local_values_semistochastic(batch, ints, wf, cfg, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::determinant::{enumerate_sector, SpinSector};
    use crate::wavefunction::TableWavefunction;

    fn toy_ints() -> IntegralTable {
        let mut t = IntegralTable::zeros(2, 2, 0);
        t.core_energy = 0.3;
        t.set_one_body(0, 0, -1.2);
        t.set_one_body(1, 1, -0.4);
        t.set_one_body(0, 1, 0.1);
        t.set_eri(0, 0, 0, 0, 0.6);
        t.set_eri(1, 1, 1, 1, 0.7);
        t.set_eri(0, 0, 1, 1, 0.5);
        t.set_eri(0, 1, 0, 1, 0.2);
        t.set_eri(0, 0, 0, 1, 0.05);
        t
    }

    fn batch_of(configs: &[OccupationConfig], wf: &TableWavefunction) -> SampleBatch {
        SampleBatch::from_samples(configs.to_vec(), configs.iter().map(|c| wf.amplitude(c)).collect())
    }

    #[test]
    fn constant_values_have_zero_error() {
        let r = LocalEnergyReport {
            values: vec![-1.5, -1.5],
            counts: vec![3, 5],
            mean: -1.5,
            variance: 0.0,
            n_evaluations: 0,
        };
        assert_eq!(energy_estimate(&r), (-1.5, 0.0));
    }

    #[test]
    fn single_config_sector_gives_diagonal() {
        let ints = toy_ints();
        let c: OccupationConfig = "1010".parse().unwrap();
        let wf = TableWavefunction::new(4, [(c, 0.3)]);
        let r = local_values_exact(&batch_of(&[c], &wf), &ints, &wf).unwrap();
        assert!((r.values[0] - ints.diagonal_element(&c)).abs() < 1e-15);
    }

    #[test]
    fn zero_amplitude_source_is_an_error() {
        let ints = toy_ints();
        let c: OccupationConfig = "1100".parse().unwrap();
        let wf = TableWavefunction::new(4, []);
        let batch = SampleBatch::from_samples(vec![c], vec![Amplitude::ZERO]);
        assert!(matches!(local_values_exact(&batch, &ints, &wf), Err(Error::ZeroAmplitude(_))));
    }

    #[test]
    fn degenerate_split_equals_exact_bitwise() {
        let ints = toy_ints();
        let configs = enumerate_sector(SpinSector::new(2, 0).unwrap(), 2, 10).unwrap();
        let wf = TableWavefunction::new(4, configs.iter().enumerate().map(|(i, c)| (*c, 0.4 + 0.3 * i as f64)));
        let batch = batch_of(&configs, &wf);
        let exact = local_values_exact(&batch, &ints, &wf).unwrap();
        let cfg = SemistochasticConfig {
            mode: EnergyMode::Semistochastic,
            epsilon_det: 0.0,
            n_candidate_samples: None,
        };
        let semi = local_values_semistochastic(&batch, &ints, &wf, &cfg, 1).unwrap();
        assert_eq!(exact.values, semi.values);
        assert_eq!(exact.n_evaluations, semi.n_evaluations);
    }

    #[test]
    fn duplicates_are_counted_once() {
        let ints = toy_ints();
        let configs = enumerate_sector(SpinSector::new(2, 0).unwrap(), 2, 10).unwrap();
        let wf = TableWavefunction::new(4, configs.iter().map(|c| (*c, 1.0)));
        let samples = vec![configs[0], configs[0], configs[1]];
        let batch = batch_of(&samples, &wf);
        let r = local_values_exact(&batch, &ints, &wf).unwrap();
        assert_eq!(r.counts.iter().sum::<usize>(), 3);
        let expected = (2.0 * r.values[batch.unique_configs.iter().position(|c| *c == configs[0]).unwrap()]
            + r.values[batch.unique_configs.iter().position(|c| *c == configs[1]).unwrap()])
            / 3.0;
        assert!((r.mean - expected).abs() < 1e-14);
        // Partners outside the batch are the other two sector states.
        assert_eq!(r.n_evaluations, 2);
    }
}
