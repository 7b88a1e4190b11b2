//! MARCH: MinSR with a first momentum `m_t = beta1 g_{t-1}` and a per-parameter
//! velocity `v` that rescales the Fisher matrix.
//!
//! One step, on the normalized batch:
//!
//! ```text
//! m     = beta1 * g_prev
//! S     = O diag(v)^-1/2 O^T + lambda I
//! zeta  = lstsq(S, chi - O m)
//! g     = diag(v)^-1/2 O^T zeta + m
//! v     = clip(beta2 v + (g - g_prev)^2, 1/eps_clip, eps_clip)
//! theta = theta - min(eta, c / |g|) g
//! ```
//!
//! With `P` workers the Jacobian arrives row-distributed, is exchanged into
//! column slices, each worker contributes its slice to `S` and `O m`, every
//! worker solves the same `B x B` system, and the gradient slices are gathered.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::collective::{all_gather, all_reduce_sum, all_to_all, WorkerPartition};
use super::{symmetric_lstsq, JacobianBatch};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarchHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda: f64,
    pub epsilon_clip: f64,
    /// Bound on the step norm.
    pub c: f64,
}

impl Default for MarchHyper {
    fn default() -> Self {
        MarchHyper {
            eta: 0.1,
            beta1: 0.95,
            beta2: 0.995,
            lambda: 0.001,
            epsilon_clip: 1e8,
            c: 0.1,
        }
    }
}

impl MarchHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.c > 0.0 && self.lambda >= 0.0 && self.epsilon_clip >= 1.0) {
            return Err(Error::Config(format!("invalid MARCH hyperparameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarchState {
    pub hyper: MarchHyper,
    pub v: Vec<f64>,
    pub g_prev: Vec<f64>,
    pub g_prev2: Vec<f64>,
    /// Completed steps.
    pub t: u64,
}

impl MarchState {
    /// Starts from `v = 1` and no previous gradient.
    pub fn new(hyper: MarchHyper, n_params: usize) -> Self {
        MarchState {
            hyper,
            v: vec![1.0; n_params],
            g_prev: vec![0.0; n_params],
            g_prev2: vec![0.0; n_params],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarchUpdate {
    /// Change to apply to the parameters, `-eta_eff * g`.
    pub delta: Vec<f64>,
    pub gradient: Vec<f64>,
    pub grad_norm: f64,
    pub eta_eff: f64,
}

/// Per-worker output of the first compute phase.
struct Partial {
    s: Vec<f64>,
    om: Vec<f64>,
}

pub fn march_step(state: &mut MarchState, jb: &JacobianBatch, workers: usize) -> Result<MarchUpdate> {
    let h = state.hyper;
    let n = jb.n_params();
    if state.v.len() != n {
        return Err(Error::Config(format!(
            "optimizer state has {} parameters, batch has {n}",
            state.v.len()
        )));
    }
    let part = WorkerPartition::new(workers, jb.n_samples(), n)?;
    let (o, chi) = jb.normalized();
    let nr = part.padded_rows();
    let nc = part.padded_cols();
    let pad = |x: &[f64], fill: f64| -> Vec<f64> {
        let mut p = x.to_vec();
        p.resize(nc, fill);
        p
    };
    let m = pad(&state.g_prev.iter().map(|g| h.beta1 * g).collect::<Vec<_>>(), 0.0);
    let inv_sqrt_v: Vec<f64> = pad(&state.v, 1.0).iter().map(|v| 1.0 / v.sqrt()).collect();

    let chi_full = all_gather(part.scatter_vector(chi.as_slice()));
    let cols = all_to_all(&part, &part.scatter_rows(&o));

    let partials: Vec<Partial> = (0..workers)
        .into_par_iter()
        .map(|r| {
            let range = part.col_slice(r);
            let oc = &cols[r];
            let mut scaled = oc.clone();
            for (k, j) in range.clone().enumerate() {
                scaled.column_mut(k).scale_mut(inv_sqrt_v[j]);
            }
            let s = &scaled * oc.transpose();
            let mc = DVector::from_iterator(range.len(), range.map(|j| m[j]));
            Partial {
                s: s.as_slice().to_vec(),
                om: (oc * mc).as_slice().to_vec(),
            }
        })
        .collect();
    let (s_parts, om_parts): (Vec<_>, Vec<_>) = partials.into_iter().map(|p| (p.s, p.om)).unzip();
    let mut s = DMatrix::from_vec(nr, nr, all_reduce_sum(s_parts));
    let om = all_reduce_sum(om_parts);
    for i in 0..nr {
        s[(i, i)] += h.lambda;
    }
    let xi = DVector::from_iterator(nr, chi_full.iter().zip(&om).map(|(c, x)| c - x));

    // Every worker solves the same system; each then owns its gradient slice.
    let slices: Vec<Result<Vec<f64>>> = (0..workers)
        .into_par_iter()
        .map(|r| {
            let zeta = symmetric_lstsq(&s, &xi)?;
            let range = part.col_slice(r);
            let oc = &cols[r];
            let g = oc.tr_mul(&zeta);
            Ok(range.enumerate().map(|(k, j)| inv_sqrt_v[j] * g[k] + m[j]).collect())
        })
        .collect();
    let mut gathered = Vec::with_capacity(workers);
    for s in slices {
        gathered.push(s?);
    }
    let mut g = all_gather(gathered);
    g.truncate(n);

    let (lo, hi) = (1.0 / h.epsilon_clip, h.epsilon_clip);
    for j in 0..n {
        let diff = g[j] - state.g_prev[j];
        state.v[j] = (h.beta2 * state.v[j] + diff * diff).clamp(lo, hi);
    }
    let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !grad_norm.is_finite() {
        return Err(Error::SolverFailure("MARCH gradient is not finite".into()));
    }
    let eta_eff = effective_rate(h.eta, h.c, grad_norm);
    let delta = g.iter().map(|x| -eta_eff * x).collect();
    state.g_prev2 = std::mem::replace(&mut state.g_prev, g.clone());
    state.t += 1;
    Ok(MarchUpdate {
        delta,
        gradient: g,
        grad_norm,
        eta_eff,
    })
}

/// `min(eta, c / |g|)`.
pub fn effective_rate(eta: f64, c: f64, grad_norm: f64) -> f64 {
    if grad_norm > 0.0 {
        eta.min(c / grad_norm)
    } else {
        eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::minsr_step;

    fn batch(rows: usize, cols: usize, seed: u64) -> JacobianBatch {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, &[]);
        let raw = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let e: Vec<f64> = (0..rows).map(|_| rng.gen_range(-2.0..-1.0)).collect();
        JacobianBatch::new(raw, &e)
    }

    #[test]
    fn scalar_first_step() {
        let jb = JacobianBatch {
            o: DMatrix::from_element(1, 1, 1.0),
            chi: DVector::from_element(1, 0.37),
        };
        let hyper = MarchHyper {
            lambda: 0.0,
            ..MarchHyper::default()
        };
        let mut st = MarchState::new(hyper, 1);
        let up = march_step(&mut st, &jb, 1).unwrap();
        assert!((up.gradient[0] - 0.37).abs() < 1e-15);
    }

    #[test]
    fn effective_rate_rule() {
        assert!((effective_rate(0.1, 0.1, 10.0) - 0.01).abs() < 1e-18);
        assert_eq!(effective_rate(0.1, 0.1, 0.5), 0.1);
    }

    #[test]
    fn first_step_without_momentum_is_minsr() {
        let jb = batch(10, 17, 1);
        let hyper = MarchHyper {
            beta1: 0.0,
            ..MarchHyper::default()
        };
        let mut st = MarchState::new(hyper, 17);
        let up = march_step(&mut st, &jb, 1).unwrap();
        let reference = minsr_step(&jb, hyper.lambda).unwrap();
        for (a, b) in up.gradient.iter().zip(reference.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn worker_count_does_not_matter() {
        let batches: Vec<_> = (0..4).map(|s| batch(13, 23, 10 + s)).collect();
        let run = |workers| {
            let mut st = MarchState::new(MarchHyper::default(), 23);
            batches
                .iter()
                .map(|jb| march_step(&mut st, jb, workers).unwrap().delta)
                .collect::<Vec<_>>()
        };
        let serial = run(1);
        for p in [2, 3, 4, 8] {
            for (a, b) in serial.iter().flatten().zip(run(p).iter().flatten()) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn velocity_is_clipped() {
        let hyper = MarchHyper {
            epsilon_clip: 2.0,
            ..MarchHyper::default()
        };
        let mut st = MarchState::new(hyper, 9);
        for s in 0..20 {
            let mut jb = batch(6, 9, s);
            jb.o *= 50.0;
            march_step(&mut st, &jb, 2).unwrap();
            assert!(st.v.iter().all(|v| (0.5..=2.0).contains(v)));
        }
    }
}
