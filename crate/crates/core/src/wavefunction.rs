use std::collections::HashMap;

use crate::determinant::OccupationConfig;
use crate::linalg::SignedLog;

/// `psi(x)` as a sign and `ln|psi(x)|`.
pub type Amplitude = SignedLog;

/// Anything that can hand out amplitudes for configurations.
///
/// Implementations are pure functions of the configuration so they can be
/// shared across sampler chains and local-energy workers.
pub trait Wavefunction: Sync {
    fn n_spin_orbitals(&self) -> usize;
    fn amplitude(&self, c: &OccupationConfig) -> Amplitude;
}

/// Explicit amplitude table; configurations not listed have `psi = 0`.
#[derive(Debug, Clone, Default)]
pub struct TableWavefunction {
    n_so: usize,
    values: HashMap<OccupationConfig, f64>,
}

impl TableWavefunction {
    pub fn new(n_so: usize, entries: impl IntoIterator<Item = (OccupationConfig, f64)>) -> Self {
        TableWavefunction {
            n_so,
            values: entries.into_iter().collect(),
        }
    }

    pub fn value(&self, c: &OccupationConfig) -> f64 {
        self.values.get(c).copied().unwrap_or(0.0)
    }
}

impl Wavefunction for TableWavefunction {
    fn n_spin_orbitals(&self) -> usize {
        self.n_so
    }

    fn amplitude(&self, c: &OccupationConfig) -> Amplitude {
        SignedLog::from_value(self.value(c))
    }
}

impl<W: Wavefunction + ?Sized> Wavefunction for &W {
    fn n_spin_orbitals(&self) -> usize {
        (**self).n_spin_orbitals()
    }

    fn amplitude(&self, c: &OccupationConfig) -> Amplitude {
        (**self).amplitude(c)
    }
}
