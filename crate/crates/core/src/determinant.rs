//! Second-quantized occupation-number configurations.
//!
//! Spin orbitals are interleaved: spatial orbital `i` owns index `2i` (spin
//! up) and `2i + 1` (spin down). A determinant is the product of creation
//! operators applied in ascending spin-orbital index to the vacuum, which
//! fixes the reference sign of every configuration.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widest supported spin-orbital basis.
pub const MAX_SPIN_ORBITALS: usize = 128;

const ALPHA_MASK: u128 = 0x5555_5555_5555_5555_5555_5555_5555_5555;
const BETA_MASK: u128 = ALPHA_MASK << 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

pub fn spin_orbital(spatial: usize, spin: Spin) -> usize {
    match spin {
        Spin::Up => 2 * spatial,
        Spin::Down => 2 * spatial + 1,
    }
}

pub fn spatial_of(spin_orbital: usize) -> usize {
    spin_orbital / 2
}

pub fn spin_of(spin_orbital: usize) -> Spin {
    if spin_orbital % 2 == 0 {
        Spin::Up
    } else {
        Spin::Down
    }
}

/// Fixed electron number and spin projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpinSector {
    pub n_electrons: usize,
    /// Twice the spin projection, so half-integer `S_z` stays integral.
    pub two_sz: i32,
}

impl SpinSector {
    pub fn new(n_electrons: usize, two_sz: i32) -> Result<Self> {
        let sector = SpinSector {
            n_electrons,
            two_sz,
        };
        let twice_alpha = n_electrons as i64 + two_sz as i64;
        if twice_alpha < 0 || twice_alpha % 2 != 0 || twice_alpha > 2 * n_electrons as i64 {
            return Err(Error::OccupancyViolation(format!(
                "no integral (n_alpha, n_beta) for {n_electrons} electrons with 2Sz = {two_sz}"
            )));
        }
        Ok(sector)
    }

    pub fn n_alpha(&self) -> usize {
        ((self.n_electrons as i64 + self.two_sz as i64) / 2) as usize
    }

    pub fn n_beta(&self) -> usize {
        self.n_electrons - self.n_alpha()
    }

    /// Number of configurations with `n_spatial` spatial orbitals.
    pub fn dimension(&self, n_spatial: usize) -> u128 {
        binomial(n_spatial, self.n_alpha()) * binomial(n_spatial, self.n_beta())
    }

    /// Draws a uniformly random configuration of this sector.
    pub fn random_config<R: Rng + ?Sized>(&self, n_spatial: usize, rng: &mut R) -> Result<OccupationConfig> {
        if self.n_alpha() > n_spatial || self.n_beta() > n_spatial {
            return Err(Error::OccupancyViolation(format!(
                "sector ({}, {}) does not fit in {n_spatial} spatial orbitals",
                self.n_alpha(),
                self.n_beta()
            )));
        }
        let mut bits = 0u128;
        for i in sample_indices(rng, n_spatial, self.n_alpha()) {
            bits |= 1 << spin_orbital(i, Spin::Up);
        }
        for i in sample_indices(rng, n_spatial, self.n_beta()) {
            bits |= 1 << spin_orbital(i, Spin::Down);
        }
        OccupationConfig::new(bits, 2 * n_spatial)
    }
}

/// Occupation bit string `|x_0 x_1 ... x_{N_so-1}>`; bit `j` is `x_j`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OccupationConfig {
    bits: u128,
    n_so: u16,
}

impl OccupationConfig {
    pub fn new(bits: u128, n_so: usize) -> Result<Self> {
        if n_so > MAX_SPIN_ORBITALS {
            return Err(Error::CapacityExceeded {
                what: "spin orbitals",
                required: n_so as u128,
                cap: MAX_SPIN_ORBITALS as u128,
            });
        }
        if n_so < MAX_SPIN_ORBITALS && bits >> n_so != 0 {
            return Err(Error::OccupancyViolation(format!(
                "bits set beyond spin orbital {n_so}"
            )));
        }
        Ok(OccupationConfig {
            bits,
            n_so: n_so as u16,
        })
    }

    pub fn from_occupied(occupied: &[usize], n_so: usize) -> Result<Self> {
        let mut bits = 0u128;
        for &k in occupied {
            if k >= n_so {
                return Err(Error::OccupancyViolation(format!(
                    "spin orbital {k} outside basis of {n_so}"
                )));
            }
            if bits >> k & 1 == 1 {
                return Err(Error::OccupancyViolation(format!(
                    "spin orbital {k} listed twice"
                )));
            }
            bits |= 1 << k;
        }
        OccupationConfig::new(bits, n_so)
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn n_spin_orbitals(&self) -> usize {
        self.n_so as usize
    }

    pub fn n_spatial(&self) -> usize {
        self.n_so as usize / 2
    }

    pub fn n_electrons(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn n_alpha(&self) -> usize {
        (self.bits & ALPHA_MASK).count_ones() as usize
    }

    pub fn n_beta(&self) -> usize {
        (self.bits & BETA_MASK).count_ones() as usize
    }

    pub fn sector(&self) -> SpinSector {
        SpinSector {
            n_electrons: self.n_electrons(),
            two_sz: self.n_alpha() as i32 - self.n_beta() as i32,
        }
    }

    pub fn is_occupied(&self, k: usize) -> bool {
        k < self.n_so as usize && self.bits >> k & 1 == 1
    }

    /// Strictly increasing positions of the set bits.
    pub fn occupied_indices(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_electrons());
        let mut rest = self.bits;
        while rest != 0 {
            let k = rest.trailing_zeros() as usize;
            out.push(k);
            rest &= rest - 1;
        }
        out
    }

    pub fn unoccupied_indices(&self) -> Vec<usize> {
        (0..self.n_so as usize)
            .filter(|&k| !self.is_occupied(k))
            .collect()
    }

    pub fn occupied_with_spin(&self, spin: Spin) -> Vec<usize> {
        self.occupied_indices()
            .into_iter()
            .filter(|&k| spin_of(k) == spin)
            .collect()
    }

    pub fn unoccupied_with_spin(&self, spin: Spin) -> Vec<usize> {
        (0..self.n_spatial())
            .map(|i| spin_orbital(i, spin))
            .filter(|&k| !self.is_occupied(k))
            .collect()
    }

    /// Number of occupied spin orbitals strictly between `a` and `b`.
    pub fn occupied_between(&self, a: usize, b: usize) -> u32 {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if hi <= lo + 1 {
            return 0;
        }
        let width = hi - lo - 1;
        let mask = if width >= 128 { u128::MAX } else { (1u128 << width) - 1 };
        ((self.bits >> (lo + 1)) & mask).count_ones()
    }

    /// Fermionic sign of `c†_to c_from |self>`: `(-1)^k` with `k` the number
    /// of occupied orbitals strictly between `from` and `to`.
    pub fn excitation_parity(&self, from: usize, to: usize) -> Result<f64> {
        if !self.is_occupied(from) {
            return Err(Error::OccupancyViolation(format!(
                "annihilation from empty spin orbital {from}"
            )));
        }
        if to >= self.n_so as usize || (self.is_occupied(to) && to != from) {
            return Err(Error::OccupancyViolation(format!(
                "creation into occupied or out-of-range spin orbital {to}"
            )));
        }
        Ok(parity_sign(self.occupied_between(from, to)))
    }

    /// Configuration after moving the electron in `from` to `to`, without sign.
    pub fn moved(&self, from: usize, to: usize) -> OccupationConfig {
        debug_assert!(self.is_occupied(from) && (from == to || !self.is_occupied(to)));
        OccupationConfig {
            bits: (self.bits & !(1u128 << from)) | (1u128 << to),
            n_so: self.n_so,
        }
    }

    /// Number of spin orbitals whose occupation differs, halved.
    pub fn excitation_level(&self, other: &OccupationConfig) -> usize {
        (self.bits ^ other.bits).count_ones() as usize / 2
    }
}

/// One creation (`dagger = true`) or annihilation operator on a spin orbital.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ladder {
    pub dagger: bool,
    pub orbital: usize,
}

pub fn create(orbital: usize) -> Ladder {
    Ladder { dagger: true, orbital }
}

pub fn annihilate(orbital: usize) -> Ladder {
    Ladder { dagger: false, orbital }
}

/// Applies an operator product written left to right (so the rightmost
/// operator acts first) to `|c>`. Returns the resulting configuration and its
/// sign, or `None` if the product annihilates the state. Each operator picks
/// up `(-1)^n` with `n` the occupied orbitals of lower index.
pub fn apply_operators(c: &OccupationConfig, ops: &[Ladder]) -> Option<(OccupationConfig, f64)> {
    let mut bits = c.bits;
    let mut sign = 1.0;
    for op in ops.iter().rev() {
        let mask = 1u128 << op.orbital;
        if (bits & mask != 0) == op.dagger {
            return None;
        }
        if (bits & (mask - 1)).count_ones() % 2 == 1 {
            sign = -sign;
        }
        bits ^= mask;
    }
    Some((OccupationConfig { bits, n_so: c.n_so }, sign))
}

pub(crate) fn parity_sign(count: u32) -> f64 {
    if count % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl fmt::Display for OccupationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.n_so as usize {
            f.write_str(if self.is_occupied(k) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for OccupationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|{self}>")
    }
}

impl FromStr for OccupationConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut bits = 0u128;
        for (k, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' if k < MAX_SPIN_ORBITALS => bits |= 1 << k,
                '1' => {}
                _ => {
                    return Err(Error::OccupancyViolation(format!(
                        "invalid occupation character {ch:?}"
                    )))
                }
            }
        }
        OccupationConfig::new(bits, s.chars().count())
    }
}

impl Serialize for OccupationConfig {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for OccupationConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// All `k`-subsets of `0..n`, each ascending, in lexicographic order.
pub(crate) fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

/// Every configuration of `sector` over `n_spatial` orbitals, ordered
/// lexicographically by the 0/1 string (spin orbital 0 leftmost).
pub fn enumerate_sector(
    sector: SpinSector,
    n_spatial: usize,
    max_configs: usize,
) -> Result<Vec<OccupationConfig>> {
    let n_so = 2 * n_spatial;
    if n_so > MAX_SPIN_ORBITALS {
        return Err(Error::CapacityExceeded {
            what: "spin orbitals",
            required: n_so as u128,
            cap: MAX_SPIN_ORBITALS as u128,
        });
    }
    let dim = sector.dimension(n_spatial);
    if dim > max_configs as u128 {
        return Err(Error::CapacityExceeded {
            what: "sector dimension",
            required: dim,
            cap: max_configs as u128,
        });
    }
    let alphas = combinations(n_spatial, sector.n_alpha());
    let betas = combinations(n_spatial, sector.n_beta());
    let mut out = Vec::with_capacity(dim as usize);
    for a in &alphas {
        for b in &betas {
            let mut bits = 0u128;
            for &i in a {
                bits |= 1 << spin_orbital(i, Spin::Up);
            }
            for &i in b {
                bits |= 1 << spin_orbital(i, Spin::Down);
            }
            out.push(OccupationConfig { bits, n_so: n_so as u16 });
        }
    }
    // Lexicographic on the string means comparing bit 0 first; reversing the
    // bit order turns that into plain integer order.
    out.sort_by_key(|c| c.bits.reverse_bits());
    Ok(out)
}
