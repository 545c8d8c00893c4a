//! TOML run configuration with sections `dataset`, `stft`, `model`, `train`
//! and `variant`. Unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use xumx_core::data::{default_source_names, load_musdb_layout, synth_dataset, DatasetSplit, SynthSpec};
use xumx_core::dsp::StftConfig;
use xumx_core::model::ModelConfig;
use xumx_core::training::{TrainConfig, VariantConfig};

use crate::CliError;

/// Environment variable that replaces the built-in training seed.
pub const SEED_ENV: &str = "XUMX_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Synthetic,
    Musdb,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Root of a track-per-folder WAV layout (`kind = "musdb"`).
    pub path: Option<PathBuf>,
    /// Stem names; defaults to bass, drums, other, vocals.
    pub sources: Option<Vec<String>>,
    pub num_tracks: usize,
    pub duration_s: f64,
    pub sample_rate: u32,
    pub num_sources: usize,
    pub seed: u64,
    pub crossover_hz: f64,
    pub valid_tracks: usize,
    pub test_tracks: usize,
    pub split_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            kind: DatasetKind::Synthetic,
            path: None,
            sources: None,
            num_tracks: s.num_tracks,
            duration_s: s.duration_s,
            sample_rate: s.sample_rate,
            num_sources: s.sources,
            seed: s.seed,
            crossover_hz: s.crossover_hz,
            valid_tracks: 2,
            test_tracks: 2,
            split_seed: 0,
        }
    }
}

impl DatasetSection {
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            num_tracks: self.num_tracks,
            duration_s: self.duration_s,
            sample_rate: self.sample_rate,
            sources: self.num_sources,
            seed: self.seed,
            crossover_hz: self.crossover_hz,
        }
    }

    pub fn load(&self) -> Result<DatasetSplit, CliError> {
        let tracks = match self.kind {
            DatasetKind::Synthetic => synth_dataset(&self.synth_spec())?,
            DatasetKind::Musdb => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("dataset.path is required when dataset.kind = \"musdb\"".into()))?;
                if !path.is_dir() {
                    return Err(CliError::Usage(format!(
                        "dataset.path: {} is not a directory",
                        path.display()
                    )));
                }
                let sources = self.sources.clone().unwrap_or_else(|| default_source_names(4));
                load_musdb_layout(path, &sources)?
            }
        };
        Ok(DatasetSplit::new(
            tracks,
            self.valid_tracks,
            self.test_tracks,
            self.split_seed,
        )?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StftSection {
    pub fft_size: usize,
    pub hop_size: usize,
}

impl Default for StftSection {
    fn default() -> Self {
        let d = StftConfig::desk();
        Self {
            fft_size: d.fft_size,
            hop_size: d.hop_size,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariantSection {
    /// One of C1..C7 or P; the flags below override individual switches.
    pub name: Option<String>,
    pub use_mdl: Option<bool>,
    pub use_cl: Option<bool>,
    pub use_bridging: Option<bool>,
}

impl VariantSection {
    pub fn resolve(&self) -> Result<VariantConfig, CliError> {
        let mut v: VariantConfig = match &self.name {
            Some(n) => n
                .parse()
                .map_err(|e: xumx_core::Error| CliError::Usage(format!("variant.name: {e}")))?,
            None => TrainConfig::default().variant,
        };
        if let Some(b) = self.use_mdl {
            v.use_mdl = b;
        }
        if let Some(b) = self.use_cl {
            v.use_cl = b;
        }
        if let Some(b) = self.use_bridging {
            v.use_bridging = b;
        }
        Ok(v)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(default)]
    dataset: DatasetSection,
    #[serde(default)]
    stft: StftSection,
    #[serde(default)]
    model: ModelConfig,
    #[serde(default)]
    train: TrainConfig,
    #[serde(default)]
    variant: VariantSection,
}

/// A fully resolved run configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    pub stft: StftConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

impl RunConfig {
    /// Parses TOML text. The training seed is taken from `seed_flag`, then
    /// `train.seed`, then `XUMX_SEED`, then the built-in default.
    pub fn parse(text: &str, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let train_table = table.get("train").and_then(|t| t.as_table());
        if train_table.is_some_and(|t| t.contains_key("variant")) {
            return Err(CliError::Usage(
                "config: train.variant is not a key; use the [variant] section".into(),
            ));
        }
        let file_seed = train_table.is_some_and(|t| t.contains_key("seed"));
        let file: FileConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;

        let mut train = file.train;
        train.variant = file.variant.resolve()?;
        if let Some(s) = seed_flag {
            train.seed = s;
        } else if !file_seed {
            if let Some(s) = env_seed()? {
                train.seed = s;
            }
        }
        train.validate().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        let stft = StftConfig::new(file.stft.fft_size, file.stft.hop_size)
            .map_err(|e| CliError::Usage(format!("config: stft: {e}")))?;
        if file.model.hidden_size == 0 || file.model.recurrent_layers == 0 {
            return Err(CliError::Usage(
                "config: model.hidden_size and model.recurrent_layers must be positive".into(),
            ));
        }
        Ok(Self {
            dataset: file.dataset,
            stft,
            model: file.model,
            train,
        })
    }

    pub fn load(path: &Path, seed_flag: Option<u64>) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, seed_flag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::parse("", Some(7)).unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.variant.name(), "P");
        assert_eq!(c.stft, StftConfig::desk());
        assert_eq!(c.dataset.kind, DatasetKind::Synthetic);
    }

    #[test]
    fn sections_and_overrides() {
        let text = r#"
            [dataset]
            num_tracks = 5
            [model]
            hidden_size = 8
            [train]
            epochs = 3
            seed = 11
            [variant]
            name = "C3"
            use_bridging = true
        "#;
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.dataset.num_tracks, 5);
        assert_eq!(c.model.hidden_size, 8);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.seed, 11);
        assert_eq!(c.train.variant.name(), "C7");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[train]\nepoch = 3",
            "[nonsense]\na = 1",
            "[train]\nvariant = 1",
            "[variant]\nname = \"C9\"",
        ] {
            assert!(
                matches!(RunConfig::parse(text, None), Err(CliError::Usage(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn musdb_requires_path() {
        let c = RunConfig::parse("[dataset]\nkind = \"musdb\"", None).unwrap();
        match c.dataset.load() {
            Err(CliError::Usage(m)) => assert!(m.contains("dataset.path"), "{m}"),
            other => panic!("{other:?}"),
        }
    }
}
