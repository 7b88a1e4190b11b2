//! Parameter updates from a batch of log-derivatives and local energies.
//!
//! The sample-space solvers (MinSR and MARCH) work with `O / sqrt(B)` and
//! `chi / sqrt(B)`, so the regularizer `lambda` is measured against the
//! sample-averaged Fisher matrix and keeps its meaning as `B` changes.

mod collective;
mod march;

pub use collective::{all_gather, all_reduce_sum, all_to_all, WorkerPartition};
pub use march::{march_step, MarchHyper, MarchState, MarchUpdate};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are dropped in least-squares solves.
pub const LSTSQ_RELATIVE_CUTOFF: f64 = 1e-12;

/// Centered log-derivatives (one row per sample) and `chi = 2 (E_loc - mean)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBatch {
    pub o: DMatrix<f64>,
    pub chi: DVector<f64>,
}

impl JacobianBatch {
    /// Centers the raw `d ln|psi| / d theta` rows and local energies.
    pub fn new(raw: DMatrix<f64>, e_loc: &[f64]) -> Self {
        assert_eq!(raw.nrows(), e_loc.len(), "one local energy per row");
        let b = e_loc.len() as f64;
        let mut o = raw;
        for mut col in o.column_iter_mut() {
            let mean = col.sum() / b;
            col.add_scalar_mut(-mean);
        }
        let mean = e_loc.iter().sum::<f64>() / b;
        let chi = DVector::from_iterator(e_loc.len(), e_loc.iter().map(|e| 2.0 * (e - mean)));
        JacobianBatch { o, chi }
    }

    pub fn n_samples(&self) -> usize {
        self.o.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.o.ncols()
    }

    /// `(O / sqrt(B), chi / sqrt(B))`.
    pub fn normalized(&self) -> (DMatrix<f64>, DVector<f64>) {
        let s = 1.0 / (self.n_samples() as f64).sqrt();
        (&self.o * s, &self.chi * s)
    }
}

/// `g = O^T chi / B`, the gradient of the energy.
pub fn sgd_gradient(jb: &JacobianBatch) -> DVector<f64> {
    jb.o.tr_mul(&jb.chi) / jb.n_samples() as f64
}

/// Minimum-norm least-squares solution of `S x = rhs` for symmetric `S`,
/// through its eigendecomposition.
pub fn symmetric_lstsq(s: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if s.iter().chain(rhs.iter()).any(|x| !x.is_finite()) {
        return Err(Error::SolverFailure("non-finite entries in the linear system".into()));
    }
    let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::SolverFailure("eigendecomposition did not converge".into()))?;
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let proj = eig.eigenvectors.tr_mul(rhs);
    let scaled = DVector::from_iterator(
        proj.len(),
        proj.iter().zip(eig.eigenvalues.iter()).map(|(p, l)| {
            if top > 0.0 && l.abs() > LSTSQ_RELATIVE_CUTOFF * top {
                p / l
            } else {
                0.0
            }
        }),
    );
    let x = &eig.eigenvectors * scaled;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure("least-squares solution is not finite; increase lambda".into()));
    }
    Ok(x)
}

/// `g = O^T (O O^T + lambda I)^-1 chi` on the normalized batch.
pub fn minsr_step(jb: &JacobianBatch, lambda: f64) -> Result<DVector<f64>> {
    let (o, chi) = jb.normalized();
    let mut s = &o * o.transpose();
    for i in 0..s.nrows() {
        s[(i, i)] += lambda;
    }
    let zeta = symmetric_lstsq(&s, &chi)?;
    Ok(o.tr_mul(&zeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub hyper: AdamHyper,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(hyper: AdamHyper, n_params: usize) -> Self {
        Adam {
            hyper,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Updates `params` in place and returns the applied step.
    pub fn step(&mut self, params: &mut [f64], g: &[f64]) -> Vec<f64> {
        let h = self.hyper;
        self.t += 1;
        let c1 = 1.0 - h.beta1.powi(self.t as i32);
        let c2 = 1.0 - h.beta2.powi(self.t as i32);
        let mut delta = vec![0.0; params.len()];
        for i in 0..params.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * g[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * g[i] * g[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            delta[i] = -h.lr * m_hat / (v_hat.sqrt() + h.eps);
            params[i] += delta[i];
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo_random(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(seed, &[]);
        DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn centering() {
        let raw = pseudo_random(6, 4, 1);
        let jb = JacobianBatch::new(raw, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        for col in jb.o.column_iter() {
            assert!(col.sum().abs() < 1e-12);
        }
        assert!(jb.chi.sum().abs() < 1e-12);
    }

    #[test]
    fn sgd_matches_double_loop() {
        let raw = pseudo_random(7, 5, 2);
        let e: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let jb = JacobianBatch::new(raw, &e);
        let g = sgd_gradient(&jb);
        for k in 0..5 {
            let mut acc = 0.0;
            for i in 0..7 {
                acc += jb.o[(i, k)] * jb.chi[i];
            }
            assert!((g[k] - acc / 7.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sgd_degenerate_cases() {
        let jb = JacobianBatch::new(pseudo_random(5, 3, 3), &[0.7; 5]);
        assert!(sgd_gradient(&jb).iter().all(|x| *x == 0.0));
        let jb = JacobianBatch::new(pseudo_random(1, 3, 4), &[0.2]);
        assert!(sgd_gradient(&jb).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn minsr_with_orthonormal_rows() {
        // Rows of a permutation-like matrix are orthonormal; scale by sqrt(B)
        // so the normalized batch has orthonormal rows too.
        let b = 3.0f64;
        let mut o = DMatrix::zeros(3, 5);
        o[(0, 1)] = b.sqrt();
        o[(1, 3)] = b.sqrt();
        o[(2, 4)] = b.sqrt();
        let jb = JacobianBatch {
            o: o.clone(),
            chi: DVector::from_vec(vec![0.3, -0.6, 0.3]),
        };
        let g = minsr_step(&jb, 0.0).unwrap();
        let expected = o.tr_mul(&jb.chi) / b;
        assert!((g - expected).amax() < 1e-14);
    }

    #[test]
    fn minsr_matches_parameter_space_sr() {
        // Full row rank: O^T (O O^T + l)^-1 = (O^T O + l)^-1 O^T.
        let jb = JacobianBatch::new(pseudo_random(8, 20, 5), &(0..8).map(|i| (i * i) as f64 * 0.1).collect::<Vec<_>>());
        let lambda = 1e-3;
        let g = minsr_step(&jb, lambda).unwrap();
        let (o, chi) = jb.normalized();
        let mut sr = o.tr_mul(&o);
        for i in 0..20 {
            sr[(i, i)] += lambda;
        }
        let expected = sr.try_inverse().unwrap() * o.tr_mul(&chi);
        assert!((g - expected).amax() < 1e-10);
    }

    #[test]
    fn lstsq_rejects_nan() {
        let s = DMatrix::from_element(2, 2, f64::NAN);
        assert!(matches!(symmetric_lstsq(&s, &DVector::zeros(2)), Err(Error::SolverFailure(_))));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut adam = Adam::new(AdamHyper::default(), 2);
        let mut p = vec![0.5, -0.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0, 0.0]);
        }
        assert_eq!(p, vec![0.5, -0.5]);
    }

    #[test]
    fn adam_hand_trace() {
        let mut adam = Adam::new(AdamHyper::default(), 1);
        let mut p = vec![1.0];
        let grads = [0.5, -1.0, 2.0];
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        for (t, g) in grads.iter().enumerate() {
            adam.step(&mut p, &[*g]);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = (t + 1) as i32;
            x -= 1e-3 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
            assert!((p[0] - x).abs() < 1e-15);
        }
        // First step of Adam moves by lr * sign(g).
        let mut fresh = Adam::new(AdamHyper::default(), 1);
        let mut q = vec![0.0];
        fresh.step(&mut q, &[0.5]);
        assert!((q[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn adam_constant_gradient_limit() {
        let mut adam = Adam::new(AdamHyper::default(), 1);
        let mut p = vec![0.0];
        let mut last = 0.0;
        for _ in 0..5000 {
            last = adam.step(&mut p, &[-3.0])[0];
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }
}
