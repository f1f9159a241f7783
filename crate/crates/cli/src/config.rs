use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use molrag_core::backends::HttpConfig;
use molrag_core::pipeline::PipelineConfig;
use serde::Deserialize;

/// Contents of the TOML config file. Relative paths are taken from the
/// file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub data: DataConfig,
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// KG snapshot directory or raw triplet TSV.
    pub kg: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub traces: Option<PathBuf>,
    /// `smiles<TAB>caption` table served as the captioning tool.
    pub tool_captions: Option<PathBuf>,
    /// External captioning command; reads SMILES on stdin.
    pub captioner: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: Option<String>,
    pub script: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub http: HttpConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub parallelism: usize,
    pub strict: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            parallelism: 4,
            strict: false,
        }
    }
}

fn resolve(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.kg,
            &mut cfg.data.annotations,
            &mut cfg.data.embeddings,
            &mut cfg.data.traces,
            &mut cfg.data.tool_captions,
            &mut cfg.backend.script,
            &mut cfg.backend.cache_dir,
        ] {
            resolve(base, p);
        }
        Ok(cfg)
    }
}
