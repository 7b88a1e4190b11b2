//! Exact diagonalization inside one spin sector.
//!
//! The Hamiltonian matrix is built from the Slater–Condon connections, and a
//! second builder applies the second-quantized operator term by term so the
//! two can be checked against each other.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::determinant::{annihilate, apply_operators, create, enumerate_sector, OccupationConfig, SpinSector};
use crate::error::{Error, Result};
use crate::hamiltonian::IntegralTable;
use crate::wavefunction::TableWavefunction;

pub const DEFAULT_DIMENSION_CAP: usize = 20000;

#[derive(Debug, Clone)]
pub struct DenseHamiltonian {
    pub sector: SpinSector,
    /// Sector configurations in lexicographic string order.
    pub basis: Vec<OccupationConfig>,
    pub matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub energy: f64,
    /// Normalized, with the largest-magnitude entry positive.
    pub coefficients: Vec<f64>,
}

fn basis_for(ints: &IntegralTable, sector: SpinSector, cap: usize) -> Result<(Vec<OccupationConfig>, HashMap<OccupationConfig, usize>)> {
    let basis = enumerate_sector(sector, ints.n_orb, cap)?;
    let index = basis.iter().enumerate().map(|(i, c)| (*c, i)).collect();
    Ok((basis, index))
}

/// Dense `H` from [`IntegralTable::connect`].
pub fn build_dense(ints: &IntegralTable, sector: SpinSector, cap: usize) -> Result<DenseHamiltonian> {
    let (basis, index) = basis_for(ints, sector, cap)?;
    let n = basis.len();
    let mut matrix = DMatrix::zeros(n, n);
    for (col, c) in basis.iter().enumerate() {
        for conn in ints.connect(c, 0.0) {
            matrix[(index[&conn.target], col)] = conn.element;
        }
    }
    Ok(DenseHamiltonian { sector, basis, matrix })
}

/// Dense `H` by applying `sum h_pq a+_p a_q + 1/2 sum <pq|rs> a+_p a+_q a_s a_r`
/// to every basis state.
pub fn build_dense_by_operators(ints: &IntegralTable, sector: SpinSector, cap: usize) -> Result<DenseHamiltonian> {
    let (basis, index) = basis_for(ints, sector, cap)?;
    let n = basis.len();
    let n_so = 2 * ints.n_orb;
    let mut matrix = DMatrix::zeros(n, n);
    for (col, c) in basis.iter().enumerate() {
        matrix[(col, col)] += ints.core_energy;
        for p in 0..n_so {
            for q in 0..n_so {
                let h = ints.h_so(p, q);
                if h == 0.0 {
                    continue;
                }
                if let Some((t, s)) = apply_operators(c, &[create(p), annihilate(q)]) {
                    matrix[(index[&t], col)] += s * h;
                }
            }
        }
        for p in 0..n_so {
            for q in 0..n_so {
                for r in 0..n_so {
                    for s in 0..n_so {
                        let g = ints.g_so(p, q, r, s);
                        if g == 0.0 {
                            continue;
                        }
                        let ops = [create(p), create(q), annihilate(s), annihilate(r)];
                        if let Some((t, sign)) = apply_operators(c, &ops) {
                            matrix[(index[&t], col)] += 0.5 * sign * g;
                        }
                    }
                }
            }
        }
    }
    Ok(DenseHamiltonian { sector, basis, matrix })
}

fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // First entry within rounding of the maximum, so near-ties resolve by position.
    if let Some(k) = v.iter().position(|x| x.abs() >= max - 1e-12) {
        if v[k] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn normalized(col: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = col.collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    fix_sign(&mut v);
    v
}

/// All eigenpairs in ascending order from nalgebra's symmetric solver.
pub fn symmetric_eigenpairs(matrix: &DMatrix<f64>) -> Result<Vec<Eigenpair>> {
    let n = matrix.nrows();
    let eig = SymmetricEigen::try_new(matrix.clone(), f64::EPSILON, 0)
        .ok_or_else(|| Error::ConvergenceFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    Ok(order
        .into_iter()
        .map(|k| Eigenpair {
            energy: eig.eigenvalues[k],
            coefficients: normalized(eig.eigenvectors.column(k).iter().copied()),
        })
        .collect())
}

/// All eigenpairs in ascending order from cyclic Jacobi rotations.
pub fn jacobi_eigenpairs(matrix: &DMatrix<f64>, max_sweeps: usize) -> Result<Vec<Eigenpair>> {
    let n = matrix.nrows();
    let mut a = matrix.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..max_sweeps {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure(format!("Jacobi rotations did not converge in {max_sweeps} sweeps")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    Ok(order
        .into_iter()
        .map(|k| Eigenpair {
            energy: a[(k, k)],
            coefficients: normalized(v.column(k).iter().copied()),
        })
        .collect())
}

impl DenseHamiltonian {
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Largest `|H - H^T|` entry.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax()
    }

    pub fn eigenpairs(&self) -> Result<Vec<Eigenpair>> {
        symmetric_eigenpairs(&self.matrix)
    }

    pub fn ground_state(&self) -> Result<Eigenpair> {
        Ok(self.eigenpairs()?.remove(0))
    }

    /// The eigenvector as an amplitude table over the basis.
    pub fn wavefunction(&self, state: &Eigenpair) -> TableWavefunction {
        let n_so = self.basis.first().map_or(0, |c| c.n_spin_orbitals());
        TableWavefunction::new(n_so, self.basis.iter().copied().zip(state.coefficients.iter().copied()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSector {
    pub n_electrons: usize,
    pub two_sz: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureCoefficient {
    pub config: String,
    pub coefficient: f64,
}

/// Frozen ground-state reference for tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    /// SHA-256 of the FCIDUMP file bytes.
    pub fcidump_hash: String,
    pub n_orb: usize,
    pub sector: FixtureSector,
    pub dimension: usize,
    pub e0: f64,
    pub top_coefficients: Vec<FixtureCoefficient>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OracleFixture {
    /// Ground state of `ints` in `sector`, keeping the `top_k` largest coefficients.
    pub fn compute(fcidump_bytes: &[u8], ints: &IntegralTable, sector: SpinSector, top_k: usize, cap: usize) -> Result<Self> {
        let h = build_dense(ints, sector, cap)?;
        let gs = h.ground_state()?;
        let mut ranked: Vec<(usize, f64)> = gs.coefficients.iter().copied().enumerate().collect();
        // Stable sort: equal magnitudes keep basis order.
        ranked.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
        Ok(OracleFixture {
            fcidump_hash: sha256_hex(fcidump_bytes),
            n_orb: ints.n_orb,
            sector: FixtureSector {
                n_electrons: sector.n_electrons,
                two_sz: sector.two_sz,
            },
            dimension: h.dimension(),
            e0: gs.energy,
            top_coefficients: ranked
                .into_iter()
                .take(top_k)
                .map(|(i, c)| FixtureCoefficient {
                    config: h.basis[i].to_string(),
                    coefficient: c,
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fixture serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad oracle fixture: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_integrals_give_scaled_identity() {
        let mut ints = IntegralTable::zeros(3, 2, 0);
        ints.core_energy = 0.7;
        let h = build_dense(&ints, SpinSector::new(2, 0).unwrap(), 100).unwrap();
        assert_eq!(h.dimension(), 9);
        assert_eq!(h.matrix, DMatrix::identity(9, 9) * 0.7);
    }

    #[test]
    fn diagonal_matrix_ground_state() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, -2.0, 1.0]));
        for pairs in [symmetric_eigenpairs(&m).unwrap(), jacobi_eigenpairs(&m, 50).unwrap()] {
            assert_eq!(pairs[0].energy, -2.0);
            assert_eq!(pairs[0].coefficients, vec![0.0, 1.0, 0.0]);
        }
    }

    #[test]
    fn two_by_two_flip() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        for pairs in [symmetric_eigenpairs(&m).unwrap(), jacobi_eigenpairs(&m, 50).unwrap()] {
            assert!((pairs[0].energy + 1.0).abs() < 1e-15);
            assert!((pairs[0].coefficients[0] - r).abs() < 1e-15);
            assert!((pairs[0].coefficients[1] + r).abs() < 1e-15);
        }
    }

    #[test]
    fn capacity_is_enforced() {
        let ints = IntegralTable::zeros(8, 8, 0);
        assert!(matches!(
            build_dense(&ints, SpinSector::new(8, 0).unwrap(), 100),
            Err(Error::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn jacobi_agrees_on_random_symmetric() {
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0 + (i * j) as f64 * 0.01);
        let m = &a + a.transpose();
        let x = symmetric_eigenpairs(&m).unwrap();
        let y = jacobi_eigenpairs(&m, 100).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p.energy - q.energy).abs() < 1e-10);
        }
    }
}
