use std::path::{Path, PathBuf};

use anyhow::Context as _;
use ctxmt_core::experiment::ExperimentConfig;
use ctxmt_core::synth::SynthConfig;
use serde::Deserialize;
use toml::{Table, Value};

/// Corpus paths for `experiment`; every split is a blank-line separated document file pair.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub test_src: PathBuf,
    pub test_tgt: PathBuf,
    pub ood_src: Option<PathBuf>,
}

/// Validation files for `train`, line aligned like the training files.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidPaths {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub ctx: Option<PathBuf>,
}

/// Parsed configuration file. Keys other than `seed`, `data`, `valid` and
/// `synth` are laid over the default [`ExperimentConfig`].
#[derive(Clone, Debug)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub experiment: ExperimentConfig,
    pub data: Option<DataPaths>,
    pub valid: Option<ValidPaths>,
    pub synth: SynthConfig,
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn take<T: serde::de::DeserializeOwned>(table: &mut Table, key: &str) -> anyhow::Result<Option<T>> {
    table.remove(key).map(|v| v.try_into().with_context(|| format!("invalid `{key}` entry"))).transpose()
}

impl FileConfig {
    pub fn parse(text: &str) -> anyhow::Result<FileConfig> {
        let mut table: Table = toml::from_str(text)?;
        let seed = take(&mut table, "seed")?;
        let data = take(&mut table, "data")?;
        let valid = take(&mut table, "valid")?;
        let synth = take(&mut table, "synth")?.unwrap_or_default();
        let mut base = Table::try_from(ExperimentConfig::default())?;
        merge(&mut base, table);
        let experiment = base.try_into().context("invalid experiment settings")?;
        Ok(FileConfig { seed, experiment, data, valid, synth })
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<FileConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::parse(&text)
            .with_context(|| format!("in config {}", path.map_or("<none>".into(), |p| p.display().to_string())))
    }
}
