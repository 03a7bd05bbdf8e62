//! Run configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Args;
use kcqe::cqe::SolverOptions;
use kcqe::surrogate::{Activation, TrainConfig};
use kcqe::{HamiltonianFamily, Mode, ParameterRegime};
use serde::{Deserialize, Serialize};

/// Every key is optional in the file; flags win over file values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub family: Option<String>,
    pub qubits: Option<usize>,
    pub sites: Option<usize>,
    pub particles: Option<usize>,
    /// `weak`, `strong`, `repulsive` or `box` (uniform in `lower..upper`).
    pub regime: Option<String>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub seed: Option<u64>,
    pub k: Option<usize>,
    pub mode: Option<String>,
    pub params: Option<Vec<f64>>,
    pub sample_index: Option<u64>,
    pub count: Option<usize>,
    pub dataset: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub grid_lower: Option<f64>,
    pub grid_upper: Option<f64>,
    pub grid_count: Option<usize>,
    pub train_fraction: Option<f64>,
    pub split_seed: Option<u64>,
    pub mlp_seed: Option<u64>,
    pub train_seed: Option<u64>,
    pub hidden_width: Option<usize>,
    pub hidden_layers: Option<usize>,
    pub residual: Option<bool>,
    pub activation: Option<Activation>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub patience: Option<usize>,
    pub energy_every: Option<usize>,
    /// `validation` (default) or `all`.
    pub records: Option<String>,
    pub solver: Option<SolverOptions>,
}

/// Flags shared by every subcommand; each mirrors a [`RunConfig`] key.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `pauli` or `hubbard`.
    #[arg(long)]
    pub family: Option<String>,
    /// Qubit count of a Pauli family.
    #[arg(long = "M")]
    pub qubits: Option<usize>,
    /// Lattice sites.
    #[arg(long = "L")]
    pub sites: Option<usize>,
    /// Fermion number.
    #[arg(long = "N")]
    pub particles: Option<usize>,
    #[arg(long)]
    pub regime: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub upper: Option<f64>,
    /// Sampling seed of the parameter regime.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// `full`, `unitary` or `hermitian`.
    #[arg(long)]
    pub mode: Option<String>,
    /// Interaction strength of a lattice family (shorthand for `--params`).
    #[arg(long = "U", allow_hyphen_values = true)]
    pub interaction: Option<f64>,
    /// Comma-separated physical parameters.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Option<Vec<f64>>,
    #[arg(long)]
    pub sample_index: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub grid_upper: Option<f64>,
    #[arg(long)]
    pub grid_count: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub mlp_seed: Option<u64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub residual: Option<bool>,
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Evaluate the held-out energy error every this many epochs.
    #[arg(long)]
    pub energy_every: Option<usize>,
    #[arg(long)]
    pub records: Option<String>,
    /// Ridge weight of each layer minimization (overrides `solver.ridge`).
    #[arg(long)]
    pub ridge: Option<f64>,
}

macro_rules! overlay {
    ($cfg:ident, $args:ident, $($field:ident),*) => {
        $( if let Some(v) = $args.$field.clone() { $cfg.$field = Some(v); } )*
    };
}

impl ConfigArgs {
    /// File values overlaid with flags.
    pub fn merge(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        let args = self;
        overlay!(
            cfg,
            args,
            family,
            qubits,
            sites,
            particles,
            regime,
            lower,
            upper,
            seed,
            k,
            mode,
            params,
            sample_index,
            count,
            dataset,
            model,
            out,
            workers,
            grid_lower,
            grid_upper,
            grid_count,
            train_fraction,
            split_seed,
            mlp_seed,
            train_seed,
            hidden_width,
            hidden_layers,
            residual,
            epochs,
            learning_rate,
            batch_size,
            patience,
            energy_every,
            records
        );
        if let Some(ridge) = self.ridge {
            cfg.solver.get_or_insert_with(SolverOptions::default).ridge = ridge;
        }
        if let Some(u) = self.interaction {
            cfg.params = Some(vec![u]);
        }
        if let Some(name) = &self.activation {
            cfg.activation = Some(match name.as_str() {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                other => bail!("unknown activation `{other}` (expected relu or tanh)"),
            });
        }
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn family(&self) -> anyhow::Result<HamiltonianFamily> {
        let name = self.family.as_deref().ok_or_else(|| anyhow!("missing `family`"))?;
        let family = match name {
            "pauli" => HamiltonianFamily::pauli(self.qubits.unwrap_or(2))?,
            "hubbard" => {
                let sites = self
                    .sites
                    .ok_or_else(|| anyhow!("hubbard family needs `sites` (--L)"))?;
                HamiltonianFamily::hubbard(sites, self.particles.unwrap_or(2))?
            }
            other => bail!("unknown family `{other}` (expected pauli or hubbard)"),
        };
        Ok(family)
    }

    pub fn require_seed(&self) -> anyhow::Result<u64> {
        self.seed
            .ok_or_else(|| anyhow!("missing regime `seed`; every seed must be given explicitly"))
    }

    pub fn regime(&self, family: &HamiltonianFamily) -> anyhow::Result<ParameterRegime> {
        let seed = self.require_seed()?;
        let dim = family.physical_param_dim();
        let default = match family.kind() {
            kcqe::FamilyKind::Pauli { .. } => "weak",
            kcqe::FamilyKind::Hubbard { .. } => "repulsive",
        };
        let name = self.regime.as_deref().unwrap_or(default);
        let (lo, hi) = match name {
            "weak" => (-0.2, 0.2),
            "strong" => (-3.8, -1.2),
            "repulsive" => (0.0, 20.0),
            "box" => (
                self.lower.ok_or_else(|| anyhow!("box regime needs `lower`"))?,
                self.upper.ok_or_else(|| anyhow!("box regime needs `upper`"))?,
            ),
            other => bail!("unknown regime `{other}` (expected weak, strong, repulsive or box)"),
        };
        Ok(ParameterRegime::uniform(name, dim, lo, hi, seed)?)
    }

    pub fn k(&self) -> anyhow::Result<usize> {
        match self.k {
            Some(0) => bail!("`k` must be at least 1"),
            Some(k) => Ok(k),
            None => bail!("missing `k`"),
        }
    }

    pub fn mode(&self) -> anyhow::Result<Mode> {
        let text = self.mode.as_deref().ok_or_else(|| anyhow!("missing `mode`"))?;
        text.parse().map_err(|e: kcqe::Error| anyhow!("{e}"))
    }

    pub fn solver(&self) -> anyhow::Result<SolverOptions> {
        let solver = self.solver.clone().unwrap_or_default();
        solver.lbfgs.validate()?;
        Ok(solver)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.dataset
            .clone()
            .unwrap_or_else(|| self.out_dir().join("dataset.jsonl"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir().join("model.json"))
    }

    pub fn train_config(&self) -> anyhow::Result<TrainConfig> {
        let base = TrainConfig::default();
        let cfg = TrainConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            epochs: self.epochs.unwrap_or(base.epochs),
            seed: self
                .train_seed
                .ok_or_else(|| anyhow!("missing `train_seed`; every seed must be given explicitly"))?,
            patience: self.patience,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Writes the effective configuration to `<out>/config.json`.
    pub fn echo(&self, out: &Path) -> anyhow::Result<()> {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(out.join("config.json"), text + "\n")?;
        Ok(())
    }

    pub fn as_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// The config without keys that only say where or how fast a run
    /// executes, so the embedded copy does not change the file bytes.
    pub fn portable_json(&self) -> serde_json::Value {
        let mut value = self.as_json();
        if let Some(map) = value.as_object_mut() {
            for key in ["out", "dataset", "workers"] {
                map.remove(key);
            }
        }
        value
    }
}
