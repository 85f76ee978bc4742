//! Run configuration: TOML file merged with command-line flags. Unknown keys
//! are rejected; every run writes its fully resolved config next to its
//! outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use newsfuse::dataset::SchemaMap;
use newsfuse::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: PathsConfig,
    pub dataset: DatasetConfig,
    pub synth: SynthConfig,
    pub backbone: BackboneSection,
    pub text: TextSection,
    pub fusion: FusionSection,
    pub tabular: TabularSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub backbone_checkpoint: Option<PathBuf>,
    pub text_checkpoint: Option<PathBuf>,
    pub meta_checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub folds: usize,
    pub stratified: bool,
    pub schema: SchemaMap,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            seed: 42,
            folds: 10,
            stratified: true,
            schema: SchemaMap::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n: usize,
    pub strength: f64,
    pub reliable_share: f64,
    pub missing_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            strength: 1.0,
            reliable_share: 4238.0 / 5172.0,
            missing_rate: 0.05,
        }
    }
}

/// Desk-scale toy backbone dims; `kind = "pretrained"` switches to the
/// checkpoint in `paths.backbone_checkpoint`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackboneSection {
    pub kind: String,
    pub layers: usize,
    pub hidden: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub ffn_factor: usize,
}

impl Default for BackboneSection {
    fn default() -> Self {
        BackboneSection {
            kind: "toy".into(),
            layers: 3,
            hidden: 32,
            vocab_size: 1024,
            max_seq_len: 16,
            ffn_factor: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextSection {
    pub blocks: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
    pub gradual_unfreezing: bool,
    pub discriminative_lr: bool,
}

impl Default for TextSection {
    fn default() -> Self {
        TextSection {
            blocks: String::new(),
            epochs: 6,
            batch_size: 32,
            max_lr: 2e-3,
            gradual_unfreezing: true,
            discriminative_lr: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionSection {
    pub combine: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_lr: f64,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            combine: "concat".into(),
            epochs: 2,
            batch_size: 32,
            max_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TabularSection {
    pub model: String,
}

impl Default for TabularSection {
    fn default() -> Self {
        TabularSection {
            model: "gradient_boosting".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn to_backbone_config(&self, seed: u64) -> Result<newsfuse::textenc::BackboneConfig> {
        use newsfuse::textenc::{BackboneConfig, BackboneKind};
        let kind = match self.backbone.kind.as_str() {
            "toy" => BackboneKind::Toy { seed },
            "pretrained" => {
                let checkpoint = self.paths.backbone_checkpoint.clone().ok_or_else(|| {
                    Error::Config(
                        "backbone.kind = \"pretrained\" needs paths.backbone_checkpoint".into(),
                    )
                })?;
                BackboneKind::Pretrained { checkpoint }
            }
            other => return Err(Error::Config(format!("unknown backbone kind {other:?}"))),
        };
        Ok(BackboneConfig {
            kind,
            layers: self.backbone.layers,
            hidden: self.backbone.hidden,
            vocab_size: self.backbone.vocab_size,
            max_seq_len: self.backbone.max_seq_len,
            ffn_factor: self.backbone.ffn_factor,
            tokenizer_id: "hash-v1".into(),
        })
    }
}

/// Resolve the output directory: flag, then config, then
/// `$NEWSFUSE_OUT/<subcommand>`, then `./newsfuse_out/<subcommand>`.
pub fn resolve_out_dir(
    flag: Option<&Path>,
    config: &RunConfig,
    subcommand: &str,
) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Some(dir) = &config.paths.output_dir {
        return dir.clone();
    }
    let root = std::env::var_os("NEWSFUSE_OUT")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("newsfuse_out"));
    root.join(subcommand)
}
