//! Second-quantized electronic Hamiltonian over active-space integrals.
//!
//! Matrix elements follow the Slater–Condon rules in the spin-orbital basis
//! with `<PQ|RS> = (pr|qs) δ(σP,σR) δ(σQ,σS)`.

mod fcidump;

pub use fcidump::{eri_index, parse_fcidump, write_fcidump, IntegralTable, DUPLICATE_TOLERANCE};

use crate::determinant::{spatial_of, spin_of, OccupationConfig};

/// One nonzero entry `H_{xx'}` of a Hamiltonian row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Connection {
    pub target: OccupationConfig,
    pub element: f64,
}

impl IntegralTable {
    /// `h_PQ` between spin orbitals.
    #[inline]
    pub fn h_so(&self, p: usize, q: usize) -> f64 {
        if spin_of(p) == spin_of(q) {
            self.one_body(spatial_of(p), spatial_of(q))
        } else {
            0.0
        }
    }

    /// Physicists' `<PQ|RS>` between spin orbitals.
    #[inline]
    pub fn g_so(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        if spin_of(p) == spin_of(r) && spin_of(q) == spin_of(s) {
            self.eri(spatial_of(p), spatial_of(r), spatial_of(q), spatial_of(s))
        } else {
            0.0
        }
    }

    /// Antisymmetrized `<PQ||RS> = <PQ|RS> - <PQ|SR>`.
    #[inline]
    pub fn g_anti(&self, p: usize, q: usize, r: usize, s: usize) -> f64 {
        self.g_so(p, q, r, s) - self.g_so(p, q, s, r)
    }

    /// `<x|H|x>` including the core energy.
    pub fn diagonal_element(&self, c: &OccupationConfig) -> f64 {
        let occ = c.occupied_indices();
        let mut e = self.core_energy;
        for (n, &i) in occ.iter().enumerate() {
            let si = spatial_of(i);
            e += self.one_body(si, si);
            for &j in &occ[..n] {
                let sj = spatial_of(j);
                e += self.eri(si, si, sj, sj);
                if spin_of(i) == spin_of(j) {
                    e -= self.eri(si, sj, sj, si);
                }
            }
        }
        e
    }

    /// `<x'|H|x>` for `x' = c†_a c_i x`, including the fermionic sign.
    pub fn single_element(&self, c: &OccupationConfig, occ: &[usize], i: usize, a: usize) -> f64 {
        let mut e = self.h_so(a, i);
        for &j in occ {
            if j != i {
                e += self.g_anti(a, j, i, j);
            }
        }
        if e == 0.0 {
            return 0.0;
        }
        e * c.excitation_parity(i, a).expect("valid single excitation")
    }

    /// The full row of `H` at `c`: the diagonal first, then every
    /// spin-conserving single and double excitation with `|H| > cutoff`.
    /// The diagonal is always kept.
    pub fn connect(&self, c: &OccupationConfig, cutoff: f64) -> Vec<Connection> {
        let occ = c.occupied_indices();
        let vac = c.unoccupied_indices();
        let mut out = Vec::with_capacity(1 + occ.len() * vac.len() * (1 + occ.len() * vac.len() / 4));
        out.push(Connection {
            target: *c,
            element: self.diagonal_element(c),
        });
        for &i in &occ {
            for &a in &vac {
                if spin_of(a) != spin_of(i) {
                    continue;
                }
                let element = self.single_element(c, &occ, i, a);
                if element.abs() > cutoff {
                    out.push(Connection {
                        target: c.moved(i, a),
                        element,
                    });
                }
            }
        }
        for (n, &i) in occ.iter().enumerate() {
            for &j in &occ[n + 1..] {
                let up_out = (spin_of(i) as u8) + (spin_of(j) as u8);
                for (m, &a) in vac.iter().enumerate() {
                    for &b in &vac[m + 1..] {
                        if (spin_of(a) as u8) + (spin_of(b) as u8) != up_out {
                            continue;
                        }
                        let g = self.g_anti(a, b, i, j);
                        if g == 0.0 {
                            continue;
                        }
                        let s1 = c.excitation_parity(i, a).expect("valid first move");
                        let mid = c.moved(i, a);
                        let s2 = mid.excitation_parity(j, b).expect("valid second move");
                        let element = g * s1 * s2;
                        if element.abs() > cutoff {
                            out.push(Connection {
                                target: mid.moved(j, b),
                                element,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}
