use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use scs_generate::GenerationConfig;

/// Optional TOML file supplying defaults for command-line flags. Relative
/// paths resolve against the file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub manifest: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub cache_only: Option<bool>,
    pub embedding_dim: Option<usize>,
    pub encoder_name: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub verbosity: Option<String>,
    pub generation: Option<GenerationConfig>,
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut c: CliConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut c.manifest, &mut c.model_file, &mut c.out_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(v) = &c.verbosity {
            if v.parse::<log::LevelFilter>().is_err() {
                bail!("config verbosity `{v}` is not a log level");
            }
        }
        Ok(c)
    }
}
