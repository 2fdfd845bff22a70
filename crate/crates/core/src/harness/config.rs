//! Experiment configuration: a flat TOML document whose keys all default to
//! the published hyperparameters. Unknown keys are rejected.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bilm::BiLmConfig;
use crate::corpus::batch::SWEEP_FRACTIONS;
use crate::error::{Error, Result};
use crate::multitask::DEFAULT_GAMMA;
use crate::parallel::Parallelism;
use crate::tagger::TaggerConfig;
use crate::train::TrainSettings;

pub const DEFAULT_DROPOUT_GRID: [f64; 5] = [0.25, 0.35, 0.5, 0.65, 0.75];

/// Pipeline variants. Names follow the `LM[...]_Sup[...]` convention where a
/// dash marks a fine-tuning step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `Sup[T]`: tagger on target data only.
    Baseline,
    /// Tagger with auxiliary LM loss on target data only.
    Multitask,
    /// `LM[U]_Sup[S-T]`.
    SupervisedFt,
    /// `LM[U-S]_Sup[T]`.
    UnsupervisedFt,
    /// `Sup[S-T]`: supervised transfer without a language model.
    AblationSupSt,
    /// `LM[U]_Sup[T]`.
    AblationLmGeneric,
    /// `LM[S]_Sup[T]`.
    AblationLmIndomain,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Baseline,
        Variant::Multitask,
        Variant::SupervisedFt,
        Variant::UnsupervisedFt,
        Variant::AblationSupSt,
        Variant::AblationLmGeneric,
        Variant::AblationLmIndomain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Multitask => "multitask",
            Variant::SupervisedFt => "supervised-ft",
            Variant::UnsupervisedFt => "unsupervised-ft",
            Variant::AblationSupSt => "ablation-sup-st",
            Variant::AblationLmGeneric => "ablation-lm-generic",
            Variant::AblationLmIndomain => "ablation-lm-indomain",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown variant {s}")))
    }
}

/// How the grid is applied to the two dropout sites.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    /// One rate for the ELMo input and the tagger (one run per grid point).
    Shared,
    /// Every pair of rates (grid size squared runs).
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variants: Vec<Variant>,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Data-parallel gradient computation; results are identical either way.
    pub parallel: bool,

    pub word_dim: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_kernel: usize,
    pub highway_layers: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Weight of the auxiliary LM loss in the multitask variant.
    pub gamma: f64,

    pub elmo_dim: usize,
    pub lm_layers: usize,
    pub lm_char_filters: usize,
    pub lm_highway_layers: usize,
    pub lm_dropout: f64,

    pub learning_rate: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub l2: f64,
    pub lm_learning_rate: f64,
    pub lm_epochs: usize,
    pub lm_patience: usize,
    pub lm_batch_size: usize,

    pub dropout_grid: Vec<f64>,
    pub dropout_mode: DropoutMode,
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Seed of every language model; shared by all tagger seeds.
    pub lm_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let tagger = TaggerConfig::default();
        let lm = BiLmConfig::default();
        let train = TrainSettings::default();
        ExperimentConfig {
            variants: vec![Variant::Baseline],
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs"),
            parallel: true,
            word_dim: tagger.word_dim,
            char_dim: tagger.char_dim,
            char_filters: tagger.char_filters,
            char_kernel: tagger.char_kernel,
            highway_layers: tagger.highway_layers,
            hidden: tagger.hidden,
            layers: tagger.layers,
            gamma: DEFAULT_GAMMA,
            elmo_dim: lm.elmo_dim,
            lm_layers: lm.layers,
            lm_char_filters: lm.char_filters,
            lm_highway_layers: lm.highway_layers,
            lm_dropout: lm.dropout,
            learning_rate: train.learning_rate,
            clip_norm: train.clip_norm,
            batch_size: train.batch_size,
            epochs: train.epochs,
            patience: train.patience,
            l2: train.l2,
            lm_learning_rate: train.learning_rate,
            lm_epochs: 20,
            lm_patience: 5,
            lm_batch_size: train.batch_size,
            dropout_grid: DEFAULT_DROPOUT_GRID.to_vec(),
            dropout_mode: DropoutMode::Shared,
            fractions: SWEEP_FRACTIONS.to_vec(),
            seeds: vec![1, 2, 3],
            lm_seed: 1,
        }
    }
}

impl ExperimentConfig {
    /// Small networks and a two-point grid that run the synthetic
    /// benchmark on a single core in minutes.
    pub fn desk() -> Self {
        ExperimentConfig {
            variants: Variant::ALL.to_vec(),
            word_dim: 16,
            char_dim: 8,
            char_filters: 16,
            highway_layers: 1,
            hidden: 16,
            layers: 1,
            elmo_dim: 64,
            lm_layers: 1,
            lm_char_filters: 32,
            lm_highway_layers: 1,
            learning_rate: 0.01,
            batch_size: 4,
            l2: 0.0,
            lm_learning_rate: 0.01,
            lm_epochs: 15,
            lm_batch_size: 32,
            dropout_grid: vec![0.25, 0.5],
            fractions: vec![0.01, 1.0],
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tagger_config(0.0, 0.0).validate()?;
        self.lm_config().validate()?;
        if self.variants.is_empty() {
            return Err(Error::config("no variant selected"));
        }
        if self.dropout_grid.is_empty() {
            return Err(Error::config("dropout_grid is empty"));
        }
        if let Some(d) = self.dropout_grid.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(Error::config(format!("dropout {d} outside [0, 1)")));
        }
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::config("fractions must be non-empty and within (0, 1]"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("no seeds given"));
        }
        if self.batch_size == 0 || self.lm_batch_size == 0 || self.epochs == 0 || self.lm_epochs == 0 {
            return Err(Error::config("batch sizes and epoch counts must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism::from_flag(self.parallel)
    }

    pub fn tagger_config(&self, dropout: f64, elmo_dropout: f64) -> TaggerConfig {
        TaggerConfig {
            word_dim: self.word_dim,
            char_dim: self.char_dim,
            char_filters: self.char_filters,
            char_kernel: self.char_kernel,
            highway_layers: self.highway_layers,
            hidden: self.hidden,
            layers: self.layers,
            dropout,
            elmo_dropout,
            lm_gamma: None,
        }
    }

    pub fn lm_config(&self) -> BiLmConfig {
        BiLmConfig {
            char_dim: self.char_dim,
            char_filters: self.lm_char_filters,
            char_kernel: self.char_kernel,
            highway_layers: self.lm_highway_layers,
            elmo_dim: self.elmo_dim,
            layers: self.lm_layers,
            dropout: self.lm_dropout,
        }
    }

    pub fn train_settings(&self, seed: u64) -> TrainSettings {
        TrainSettings {
            learning_rate: self.learning_rate,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            l2: self.l2,
            seed,
        }
    }

    pub fn lm_settings(&self) -> TrainSettings {
        TrainSettings {
            learning_rate: self.lm_learning_rate,
            batch_size: self.lm_batch_size,
            epochs: self.lm_epochs,
            patience: self.lm_patience,
            l2: 0.0,
            ..self.train_settings(self.lm_seed)
        }
    }

    /// `(tagger dropout, ELMo dropout)` pairs in grid order.
    pub fn dropout_points(&self) -> Vec<(f64, f64)> {
        match self.dropout_mode {
            DropoutMode::Shared => self.dropout_grid.iter().map(|&d| (d, d)).collect(),
            DropoutMode::Independent => self
                .dropout_grid
                .iter()
                .flat_map(|&d| self.dropout_grid.iter().map(move |&e| (d, e)))
                .collect(),
        }
    }

    /// Short stable digest of everything that affects results. Directories
    /// and the parallelism flag are left out; data enters through content
    /// fingerprints instead.
    pub fn hash(&self) -> String {
        let substance = ExperimentConfig {
            data_dir: PathBuf::new(),
            out_dir: PathBuf::new(),
            parallel: true,
            ..self.clone()
        };
        crate::harness::checkpoint::config_hash(&substance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_published_values() {
        let c = ExperimentConfig::default();
        assert_eq!((c.word_dim, c.char_dim, c.char_filters, c.elmo_dim, c.hidden, c.layers), (50, 16, 128, 1024, 200, 2));
        assert_eq!((c.l2, c.patience, c.learning_rate, c.clip_norm, c.batch_size, c.epochs), (0.1, 25, 0.001, 5.0, 32, 150));
        assert_eq!(c.dropout_grid, vec![0.25, 0.35, 0.5, 0.65, 0.75]);
        assert_eq!(c.fractions, SWEEP_FRACTIONS.to_vec());
        assert_eq!(c.dropout_points().len(), 5);
    }

    #[test]
    fn empty_document_is_default_and_round_trips() {
        let c = ExperimentConfig::from_toml("# nothing set\n").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        let d = ExperimentConfig::desk();
        assert_eq!(ExperimentConfig::from_toml(&d.to_toml()).unwrap(), d);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let err = ExperimentConfig::from_toml("hiden = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn hash_ignores_locations_and_parallelism() {
        let a = ExperimentConfig::desk();
        let b = ExperimentConfig {
            out_dir: "elsewhere".into(),
            data_dir: "other".into(),
            parallel: false,
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        let c = ExperimentConfig { seeds: vec![9], ..a.clone() };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn keys_override_and_validate() {
        let c = ExperimentConfig::from_toml("variants = [\"supervised-ft\"]\nhidden = 8\ndropout_mode = \"independent\"\ndropout_grid = [0.25, 0.5]\n").unwrap();
        assert_eq!(c.variants, vec![Variant::SupervisedFt]);
        assert_eq!(c.hidden, 8);
        assert_eq!(c.dropout_points(), vec![(0.25, 0.25), (0.25, 0.5), (0.5, 0.25), (0.5, 0.5)]);
        assert!(ExperimentConfig::from_toml("dropout_grid = []\n").is_err());
        assert!(ExperimentConfig::from_toml("fractions = [0.0]\n").is_err());
        assert!(ExperimentConfig::from_toml("variants = [\"nope\"]\n").is_err());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
