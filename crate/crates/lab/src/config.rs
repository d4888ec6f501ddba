//! Experiment configuration: TOML (or JSON) files, defaults, and CLI overrides.
//!
//! Precedence, lowest first: built-in defaults, config file, command-line flags.
//! The top-level `seed` drives every random stream and overwrites `train.seed`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dyweight::synthlab::CouplingScale;
use dyweight::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SynthGrid,
    TrainToy,
    AblateCalibration,
    AblateOrder,
    AblateInit,
    CompareSupervision,
    VerifyCoeffs,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::SynthGrid => "synth-grid",
            Command::TrainToy => "train-toy",
            Command::AblateCalibration => "ablate-calibration",
            Command::AblateOrder => "ablate-order",
            Command::AblateInit => "ablate-init",
            Command::CompareSupervision => "compare-supervision",
            Command::VerifyCoeffs => "verify-coeffs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoeffsConfig {
    /// Random non-uniform histories per order.
    pub draws: usize,
    pub classic_abs_tol: f64,
    pub oracle_rel_tol: f64,
}

impl Default for CoeffsConfig {
    fn default() -> Self {
        CoeffsConfig {
            draws: 1000,
            classic_abs_tol: 1e-12,
            oracle_rel_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dim: usize,
    pub k_values: Vec<usize>,
    pub s_values: Vec<usize>,
    pub orders: Vec<usize>,
    pub runs: usize,
    pub coupling: CouplingScale,
    /// Also fit per-step weights for every cell.
    pub optimize: bool,
    pub iterations: usize,
    pub lr: f64,
    /// Step count of the high-step AB-4 reference; omitted when absent.
    pub teacher_steps: Option<usize>,
    pub check_k: usize,
    pub check_s: usize,
    pub min_step_gap: f64,
    pub teacher_tol: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dim: dyweight::synthlab::DEFAULT_DIM,
            k_values: (1..=8).map(|i| 5 * i).collect(),
            s_values: (3..=10).map(|i| 2 * i).collect(),
            orders: vec![1, 2, 3, 4],
            runs: 50,
            coupling: CouplingScale::StdDev,
            optimize: false,
            iterations: 2000,
            lr: 1e-3,
            teacher_steps: Some(100),
            check_k: 20,
            check_s: 14,
            min_step_gap: 2.0,
            teacher_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// Mixture fixture JSON; the two-mode default when absent.
    pub mixture: Option<PathBuf>,
    /// Consecutive seeds per configuration, starting at the experiment seed.
    pub runs: usize,
    /// Learning-rate halvings allowed after a diverged or unevaluable run.
    pub max_lr_retries: usize,
    pub nfes: Vec<usize>,
    pub min_improvement: f64,
    pub improvement_nfe: usize,
    pub calibration_nfe: usize,
    pub order_nfe: usize,
    pub orders: Vec<usize>,
    pub init_nfe: usize,
    pub supervision_nfe: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            mixture: None,
            runs: 1,
            max_lr_retries: 3,
            nfes: vec![3, 5, 7],
            min_improvement: 0.2,
            improvement_nfe: 3,
            calibration_nfe: 5,
            order_nfe: 6,
            orders: vec![1, 2, 3, 4],
            init_nfe: 4,
            supervision_nfe: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub svg: bool,
    pub coeffs: CoeffsConfig,
    pub synth: SynthConfig,
    pub toy: ToyConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: None,
            seed: 0,
            workers: 0,
            output_dir: PathBuf::from("out"),
            svg: false,
            coeffs: CoeffsConfig::default(),
            synth: SynthConfig::default(),
            toy: ToyConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(c) = o.command {
            match self.command {
                Some(file) if file != c => bail!(
                    "config file is for `{}` but `{}` was requested",
                    file.as_str(),
                    c.as_str()
                ),
                _ => self.command = Some(c),
            }
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(w) = o.workers {
            self.workers = w;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.command.is_none() {
            bail!("no command given");
        }
        if self.synth.runs == 0 || self.toy.runs == 0 {
            bail!("runs must be positive");
        }
        if self.coeffs.draws == 0 {
            bail!("coeffs.draws must be positive");
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        if self.workers == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            self.workers
        }
    }
}

/// Parses a config from text; `json` selects the JSON reader.
pub fn parse_config(text: &str, json: bool) -> Result<ExperimentConfig> {
    if json {
        Ok(serde_json::from_str(text)?)
    } else {
        Ok(toml::from_str(text)?)
    }
}

/// Loads a TOML config, or JSON when the extension is `.json`.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let json = path.extension().is_some_and(|e| e == "json");
    parse_config(&text, json).with_context(|| format!("parsing config {}", path.display()))
}

/// Writes the resolved config as `config.resolved.json` in `dir`.
pub fn emit_config(config: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("config.resolved.json");
    let text = serde_json::to_string_pretty(config)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}
