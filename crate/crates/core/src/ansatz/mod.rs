//! Transformer backflow wavefunction.
//!
//! A configuration is cut into tokens of `t` consecutive spin orbitals, each
//! token is embedded through its own lookup table, a stack of post-norm
//! encoder layers mixes the tokens, and one MLP per token emits `t` rows of
//! each of the `D` orbital matrices. The amplitude is the sum over `D` of the
//! determinants of the occupied rows, evaluated in the log domain.

mod checkpoint;
pub mod gradcheck;
mod layout;
mod network;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use layout::{Dense, EncoderOffsets, MlpOffsets, ParamGroup, ParamLayout};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::determinant::OccupationConfig;
use crate::error::{Error, Result};
use crate::linalg::{log_det_and_inverse, signed_log_det, signed_log_sum_exp, SignedLog};
use crate::wavefunction::{Amplitude, Wavefunction};
use network::{backward, forward, Shapes};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnsatzConfig {
    /// Spin orbitals per token.
    pub t: usize,
    /// Feature width of the residual stream.
    pub d_f: usize,
    /// Encoder layers.
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_atten: usize,
    /// Hidden layers in each token MLP.
    pub mlp_layers: usize,
    pub d_mlp: usize,
    /// Number of determinants summed in the amplitude.
    pub n_dets: usize,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig {
            t: 4,
            d_f: 256,
            n_layers: 2,
            n_heads: 4,
            d_atten: 256,
            mlp_layers: 2,
            d_mlp: 256,
            n_dets: 2,
        }
    }
}

impl AnsatzConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidAnsatz(m.to_string()));
        if self.t == 0 || self.t > 16 {
            return fail("t must be in 1..=16");
        }
        if self.n_dets == 0 {
            return fail("at least one determinant is required");
        }
        if self.d_f == 0 {
            return fail("d_f must be positive");
        }
        if self.n_layers > 0 {
            if self.n_heads == 0 || self.d_atten % self.n_heads != 0 {
                return fail("d_atten must be a positive multiple of n_heads");
            }
            if self.d_atten > self.d_f {
                return fail("d_atten may not exceed d_f");
            }
        }
        if self.mlp_layers > 0 && self.d_mlp == 0 {
            return fail("d_mlp must be positive");
        }
        Ok(())
    }

    pub fn n_tokens(&self, n_so: usize) -> usize {
        n_so.div_ceil(self.t)
    }
}

/// Token codes of `c`: bit `k` of a code is the occupation of the `k`-th
/// spin orbital of that token; the last token is zero-padded.
pub fn tokenize(c: &OccupationConfig, t: usize) -> Vec<usize> {
    let n_so = c.n_spin_orbitals();
    let n_tokens = n_so.div_ceil(t);
    let bits = c.bits();
    (0..n_tokens)
        .map(|n| {
            let start = n * t;
            let width = t.min(n_so - start);
            ((bits >> start) & ((1u128 << width) - 1)) as usize
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackflowNet {
    config: AnsatzConfig,
    n_so: usize,
    n_e: usize,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl BackflowNet {
    /// Randomly initialized network. Linear layers and embeddings draw from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` (embeddings use `fan_in = 1`),
    /// LayerNorms start at unit gain and zero bias, and each head bias holds
    /// rows of a random orthonormal matrix so the starting determinants are
    /// nonsingular.
    pub fn new(config: AnsatzConfig, n_so: usize, n_e: usize, seed: u64) -> Result<Self> {
        let mut net = BackflowNet::zeros(config, n_so, n_e)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniform = |rng: &mut ChaCha8Rng, slot: &mut [f64], bound: f64| {
            for v in slot {
                *v = rng.gen_range(-bound..bound);
            }
        };
        let layout = net.layout.clone();
        let d = config.d_f;
        let n_t = config.n_tokens(n_so);
        let emb_len = n_t * (1 << config.t) * d;
        uniform(&mut rng, &mut net.params[layout.embedding..layout.embedding + emb_len], 1.0);
        for off in &layout.encoder {
            let b = 1.0 / (d as f64).sqrt();
            for w in [off.w_q, off.w_k, off.w_v] {
                uniform(&mut rng, &mut net.params[w..w + d * config.d_atten], b);
            }
            net.params[off.ln1_gain..off.ln1_gain + d].fill(1.0);
            net.params[off.ln2_gain..off.ln2_gain + d].fill(1.0);
            uniform(&mut rng, &mut net.params[off.ffn.weight..off.ffn.weight + off.ffn.len()], b);
        }
        let per_det = config.t * n_e;
        let mut orthos = Vec::with_capacity(config.n_dets);
        for _ in 0..config.n_dets {
            let m = DMatrix::<f64>::from_fn(n_so, n_so, |_, _| rng.gen_range(-1.0..1.0));
            orthos.push(m.qr().q());
        }
        for mlp in &layout.mlps {
            for layer in &mlp.hidden {
                let b = 1.0 / (layer.fan_in as f64).sqrt();
                uniform(&mut rng, &mut net.params[layer.weight..layer.weight + layer.len()], b);
            }
            let head = &mlp.head;
            let b = 1.0 / (head.fan_in as f64).sqrt();
            uniform(&mut rng, &mut net.params[head.weight..head.weight + head.fan_in * head.fan_out], b);
        }
        for (n, mlp) in layout.mlps.iter().enumerate() {
            for (det, q) in orthos.iter().enumerate() {
                for r in 0..config.t {
                    let row = n * config.t + r;
                    for e in 0..n_e {
                        let value = if row < n_so { q[(row, e)] } else { 0.0 };
                        net.params[mlp.head.bias + det * per_det + r * n_e + e] = value;
                    }
                }
            }
        }
        Ok(net)
    }

    /// Network with every parameter zero.
    pub fn zeros(config: AnsatzConfig, n_so: usize, n_e: usize) -> Result<Self> {
        config.validate()?;
        if n_e > n_so {
            return Err(Error::InvalidAnsatz(format!("{n_e} electrons in {n_so} spin orbitals")));
        }
        let layout = ParamLayout::new(&config, config.n_tokens(n_so), n_e);
        let params = vec![0.0; layout.total];
        Ok(BackflowNet {
            config,
            n_so,
            n_e,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &AnsatzConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_electrons(&self) -> usize {
        self.n_e
    }

    pub fn n_params(&self) -> usize {
        self.layout.total
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::InvalidAnsatz(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    fn shapes(&self) -> Shapes {
        Shapes {
            n_tokens: self.config.n_tokens(self.n_so),
            n_so: self.n_so,
            n_e: self.n_e,
        }
    }

    pub fn tokenize(&self, c: &OccupationConfig) -> Vec<usize> {
        tokenize(c, self.config.t)
    }

    /// Encoder output, `N_t x d_f` row-major.
    pub fn encode(&self, tokens: &[usize]) -> Vec<f64> {
        forward(&self.config, &self.layout, &self.shapes(), &self.params, tokens).features
    }

    /// The `D` orbital matrices (`N_so x N_e`, row-major) for `c`.
    pub fn orbital_matrices(&self, c: &OccupationConfig) -> Vec<Vec<f64>> {
        let tokens = self.tokenize(c);
        forward(&self.config, &self.layout, &self.shapes(), &self.params, &tokens).orbitals
    }

    fn check_config(&self, c: &OccupationConfig) {
        assert_eq!(c.n_spin_orbitals(), self.n_so, "configuration width mismatch");
        assert_eq!(c.n_electrons(), self.n_e, "configuration electron count mismatch");
    }

    fn occupied_block(&self, orbital: &[f64], occ: &[usize]) -> Vec<f64> {
        let n = self.n_e;
        let mut block = Vec::with_capacity(n * n);
        for &row in occ {
            block.extend_from_slice(&orbital[row * n..(row + 1) * n]);
        }
        block
    }

    pub fn amplitude(&self, c: &OccupationConfig) -> Amplitude {
        self.check_config(c);
        let occ = c.occupied_indices();
        let dets: Vec<SignedLog> = self
            .orbital_matrices(c)
            .iter()
            .map(|orb| signed_log_det(&self.occupied_block(orb, &occ), self.n_e))
            .collect();
        signed_log_sum_exp(&dets)
    }

    /// Amplitude and `d ln|psi| / d theta` in layout order.
    pub fn log_grad(&self, c: &OccupationConfig) -> Result<(Amplitude, Vec<f64>)> {
        self.check_config(c);
        let occ = c.occupied_indices();
        let shapes = self.shapes();
        let tokens = self.tokenize(c);
        let pass = forward(&self.config, &self.layout, &shapes, &self.params, &tokens);
        let n = self.n_e;
        let factored: Vec<(SignedLog, Option<Vec<f64>>)> = pass
            .orbitals
            .iter()
            .map(|orb| log_det_and_inverse(&self.occupied_block(orb, &occ), n))
            .collect();
        let dets: Vec<SignedLog> = factored.iter().map(|(d, _)| *d).collect();
        let psi = signed_log_sum_exp(&dets);
        if psi.is_zero() {
            return Err(Error::ZeroAmplitude(c.to_string()));
        }
        // d ln|psi| / dM_d = (det_d / psi) M_d^{-T}. A singular term has no
        // inverse and contributes nothing here.
        let mut d_orbitals = vec![vec![0.0; self.n_so * n]; self.config.n_dets];
        for ((det, inv), d_orb) in factored.iter().zip(d_orbitals.iter_mut()) {
            let Some(inv) = inv else { continue };
            let weight = det.sign * psi.sign * (det.log_abs - psi.log_abs).exp();
            for (k, &row) in occ.iter().enumerate() {
                for e in 0..n {
                    d_orb[row * n + e] = weight * inv[e * n + k];
                }
            }
        }
        let grad = backward(&self.config, &self.layout, &shapes, &self.params, &pass, &d_orbitals);
        Ok((psi, grad))
    }
}

impl Wavefunction for BackflowNet {
    fn n_spin_orbitals(&self) -> usize {
        self.n_so
    }

    fn amplitude(&self, c: &OccupationConfig) -> Amplitude {
        BackflowNet::amplitude(self, c)
    }
}
