//! Run configuration: a TOML file, then `BFVMC__SECTION__KEY` environment
//! variables, then command-line flags, each overriding the previous layer.
//!
//! ```toml
//! [system]
//! fcidump = "h2.fcidump"   # relative paths resolve against this file
//! n_electrons = 2          # defaults to NELEC from the FCIDUMP header
//! two_sz = 0               # defaults to MS2
//!
//! [ansatz]                 # AnsatzConfig fields
//! [sampler]                # n_chains, burn_in, thin, batch_size
//! [energy]                 # mode = "exact" | "semistochastic", epsilon_det, n_candidate_samples
//! [optimizer]              # max_steps, adam_steps, plateau_window, plateau_tolerance,
//!                          # summary_window, partition, [optimizer.adam], [optimizer.march]
//! [measure]                # sites, site_pairs, orbital_sets, set_pairs, oracle_state, spin_states
//!
//! [run]
//! seed = 7                 # required
//! output_dir = "out"
//! checkpoint_in = "..."    # resume from this network checkpoint
//! threads = 4
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::AnsatzConfig;
use crate::error::{Error, Result};
use crate::fci::DEFAULT_DIMENSION_CAP;
use crate::local_energy::SemistochasticConfig;
use crate::optimizer::{AdamHyper, MarchHyper};
use crate::sampler::SamplerConfig;
use crate::spin::{OrbitalSet, SpinStatePoint};

pub const ENV_PREFIX: &str = "BFVMC__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub fcidump: Option<PathBuf>,
    pub n_electrons: Option<usize>,
    pub two_sz: Option<i32>,
    /// Largest sector the exact solver will build.
    pub max_dimension: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            fcidump: None,
            n_electrons: None,
            two_sz: None,
            max_dimension: DEFAULT_DIMENSION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub max_steps: u64,
    /// Switch to MARCH after this many Adam steps even without a plateau;
    /// zero runs MARCH from the first step.
    pub adam_steps: Option<u64>,
    /// Adam stops once the mean energy of the last window improves on the
    /// window before it by less than `plateau_tolerance`.
    pub plateau_window: usize,
    pub plateau_tolerance: f64,
    /// Steps averaged for the summary energy.
    pub summary_window: usize,
    /// Workers in the partitioned MARCH step.
    pub partition: usize,
    pub adam: AdamHyper,
    pub march: MarchHyper,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_steps: 2000,
            adam_steps: None,
            plateau_window: 200,
            plateau_tolerance: 1e-4,
            summary_window: 1000,
            partition: 1,
            adam: AdamHyper::default(),
            march: MarchHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// Orbitals whose `S_i^2` is reported.
    pub sites: Vec<usize>,
    pub site_pairs: Vec<[usize; 2]>,
    /// Each set gets its `S^2`.
    pub orbital_sets: Vec<OrbitalSet>,
    /// Named set pairs for `S_P . S_Q`.
    pub set_pairs: Vec<[String; 2]>,
    /// Measure the `k`-th exact eigenstate of the sector instead of a trained network.
    pub oracle_state: Option<usize>,
    /// `(energy, s2)` points for `j-fit`.
    pub spin_states: Vec<SpinStatePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
    /// Worker threads; `None` lets rayon decide.
    pub threads: Option<usize>,
    /// Coefficients kept in oracle fixtures.
    pub oracle_top_k: usize,
    /// Write a checkpoint every this many steps (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: None,
            output_dir: PathBuf::from("out"),
            checkpoint_in: None,
            checkpoint_out: None,
            threads: None,
            oracle_top_k: 8,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub ansatz: AnsatzConfig,
    pub sampler: SamplerConfig,
    pub energy: SemistochasticConfig,
    pub optimizer: OptimizerConfig,
    pub measure: MeasureConfig,
    pub run: RunSection,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub partition: Option<usize>,
    pub output: Option<PathBuf>,
}

fn parse_value(raw: &str) -> toml::Value {
    // Anything that is not a TOML literal is taken as a bare string.
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<()> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{} is not a section", path.join("."))))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::layered(text, std::iter::empty(), &CliOverrides::default(), None)
    }

    /// Reads `path` (if any) and applies environment and CLI overrides.
    pub fn load(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        cli: &CliOverrides,
    ) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?,
            None => String::new(),
        };
        let base = path.and_then(|p| p.parent()).map(Path::to_path_buf);
        Self::layered(&text, env, cli, base.as_deref())
    }

    fn layered(
        text: &str,
        env: impl IntoIterator<Item = (String, String)>,
        cli: &CliOverrides,
        base: Option<&Path>,
    ) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        env.sort();
        for (key, raw) in env {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(|s| s.to_lowercase()).collect();
            if path.len() < 2 || path.iter().any(String::is_empty) {
                return Err(Error::Config(format!("environment override {key} needs SECTION__KEY")));
            }
            let refs: Vec<&str> = path.iter().map(String::as_str).collect();
            set_path(&mut table, &refs, parse_value(&raw))?;
        }
        if let Some(seed) = cli.seed {
            set_path(&mut table, &["run", "seed"], toml::Value::Integer(seed as i64))?;
        }
        if let Some(t) = cli.threads {
            set_path(&mut table, &["run", "threads"], toml::Value::Integer(t as i64))?;
        }
        if let Some(p) = cli.partition {
            set_path(&mut table, &["optimizer", "partition"], toml::Value::Integer(p as i64))?;
        }
        if let Some(out) = &cli.output {
            set_path(&mut table, &["run", "output_dir"], toml::Value::String(out.display().to_string()))?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        if let Some(base) = base {
            resolve(base, &mut cfg.system.fcidump);
            resolve(base, &mut cfg.run.checkpoint_in);
            resolve(base, &mut cfg.run.checkpoint_out);
            if cfg.run.output_dir.is_relative() && cli.output.is_none() {
                cfg.run.output_dir = base.join(&cfg.run.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> Result<u64> {
        self.run
            .seed
            .ok_or_else(|| Error::Config("a seed is required ([run] seed or --seed)".into()))
    }

    pub fn fcidump(&self) -> Result<&Path> {
        let p = self
            .system
            .fcidump
            .as_deref()
            .ok_or_else(|| Error::Config("[system] fcidump is required".into()))?;
        if !p.exists() {
            return Err(Error::Config(format!("FCIDUMP {} does not exist", p.display())));
        }
        Ok(p)
    }

    /// Checks everything a training run needs.
    pub fn validate_for_training(&self) -> Result<()> {
        self.seed()?;
        self.fcidump()?;
        self.ansatz.validate()?;
        self.sampler.validate()?;
        self.energy.validate()?;
        self.optimizer.march.validate()?;
        if self.optimizer.partition == 0 {
            return Err(Error::Config("optimizer partition must be at least 1".into()));
        }
        if self.optimizer.plateau_window == 0 || self.optimizer.summary_window == 0 {
            return Err(Error::Config("plateau and summary windows must be positive".into()));
        }
        if let Some(p) = &self.run.checkpoint_in {
            if !p.exists() {
                return Err(Error::Config(format!("checkpoint {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn checkpoint_out(&self) -> PathBuf {
        self.run
            .checkpoint_out
            .clone()
            .unwrap_or_else(|| self.run.output_dir.join("network.ckpt"))
    }
}
