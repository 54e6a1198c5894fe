//! Experiment configuration. A run is fully determined by one TOML file;
//! the five ablation presets ship embedded and can be addressed by name.
//! CLI overrides patch dotted key paths before deserialization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backbone::Precision;
use crate::data::augment::AugmentParams;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::peft::AdapterSpec;
use crate::sphere::SlerpMode;
use crate::util::fnv1a64;

/// The five ablation setups: each adds one ingredient to the previous one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetupKind {
    LinearProbe,
    Ln,
    LnNorm,
    LnNormUnal,
    LnNormUnalSlerp,
}

impl SetupKind {
    pub fn display_name(self) -> &'static str {
        match self {
            SetupKind::LinearProbe => "Linear Probing",
            SetupKind::Ln => "LN-Tuning",
            SetupKind::LnNorm => "LN-Tuning + Norm",
            SetupKind::LnNormUnal => "LN-Tuning + Norm + UnAl",
            SetupKind::LnNormUnalSlerp => "LN-Tuning + Norm + UnAl + Slerp",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub setup: SetupKind,
    #[serde(default)]
    pub run_name: Option<String>,
    pub encoder: String,
    /// Path to the encoder weights file; falls back to the DFDET_WEIGHTS
    /// environment variable. Unused by the toy encoder.
    #[serde(default)]
    pub weights_path: Option<PathBuf>,
    pub seed: u64,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub decay_epochs: usize,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub precision: Precision,
    /// Project features to the unit sphere before the classifier.
    pub normalize: bool,
    /// Slerp latent augmentation between same-class features.
    pub slerp: bool,
    #[serde(default)]
    pub slerp_mode: SlerpMode,
    pub loss_weights: LossWeights,
    pub adapter: AdapterSpec,
    #[serde(default)]
    pub augment: AugmentParams,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    #[serde(default = "default_val_every")]
    pub val_every_epochs: usize,
    /// Optional hard cap on optimizer steps (desk-scale runs).
    #[serde(default)]
    pub max_steps: Option<usize>,
}

fn default_val_every() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_final > self.lr_initial {
            return Err(Error::Config(format!(
                "lr_final {} exceeds lr_initial {}",
                self.lr_final, self.lr_initial
            )));
        }
        if self.decay_epochs == 0 {
            return Err(Error::Config("decay_epochs must be positive".into()));
        }
        let pairwise = self.loss_weights.alignment > 0.0
            || self.loss_weights.uniformity > 0.0
            || self.loss_weights.supcon > 0.0;
        if pairwise && self.batch_size < 2 {
            return Err(Error::Config("pairwise losses need batch_size >= 2".into()));
        }
        if self.slerp && !self.normalize {
            return Err(Error::Config("slerp augmentation requires normalized features".into()));
        }
        self.loss_weights.validate()?;
        self.adapter.validate()?;
        Ok(())
    }

    pub fn display_name(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| self.setup.display_name().to_string())
    }

    /// Stable hash of the full serialized config.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        format!("{:016x}", fnv1a64(text.as_bytes()))
    }

    pub fn resolved_weights_path(&self) -> Option<PathBuf> {
        self.weights_path
            .clone()
            .or_else(|| std::env::var("DFDET_WEIGHTS").ok().map(PathBuf::from))
    }
}

const PRESETS: [(&str, &str); 5] = [
    ("setup1", include_str!("../presets/setup1.toml")),
    ("setup2", include_str!("../presets/setup2.toml")),
    ("setup3", include_str!("../presets/setup3.toml")),
    ("setup4", include_str!("../presets/setup4.toml")),
    ("setup5", include_str!("../presets/setup5.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Raw TOML text for a preset name or config file path.
fn config_text(name_or_path: &str) -> Result<String> {
    if let Some((_, text)) = PRESETS.iter().find(|(n, _)| *n == name_or_path) {
        return Ok(text.to_string());
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return Ok(std::fs::read_to_string(path)?);
    }
    Err(Error::Config(format!(
        "`{name_or_path}` is neither a preset ({}) nor a config file",
        preset_names().join(", ")
    )))
}

/// Load a config from a preset name or path, applying `key=value` overrides
/// (dotted paths, TOML literals) before deserialization.
pub fn load_config(name_or_path: &str, overrides: &[String]) -> Result<TrainConfig> {
    let text = config_text(name_or_path)?;
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
        apply_override(&mut table, key.trim(), value.trim())?;
    }
    let cfg: TrainConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(format!("{name_or_path}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_literal(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, dotted: &str, value: &str) -> Result<()> {
    let mut parts = dotted.split('.').collect::<Vec<_>>();
    let last = parts
        .pop()
        .ok_or_else(|| Error::Config(format!("empty override key `{dotted}`")))?;
    let mut cursor = table;
    for p in parts {
        cursor = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path `{dotted}` crosses a non-table")))?;
    }
    cursor.insert(last.to_string(), parse_literal(value));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::peft::PeftStrategy;

    #[test]
    fn all_presets_parse_and_validate() {
        for name in preset_names() {
            let cfg = load_config(name, &[]).unwrap();
            assert_eq!(cfg.lr_initial, 8e-5, "{name}");
            assert_eq!(cfg.lr_final, 5e-5, "{name}");
            assert_eq!(cfg.decay_epochs, 50, "{name}");
            assert_eq!(cfg.betas, (0.9, 0.999), "{name}");
            assert_eq!(cfg.weight_decay, 0.0, "{name}");
            assert_eq!(cfg.batch_size, 128, "{name}");
        }
    }

    #[test]
    fn presets_encode_the_ablation_ladder() {
        let cfgs: Vec<TrainConfig> =
            preset_names().iter().map(|n| load_config(n, &[]).unwrap()).collect();
        assert_eq!(cfgs[0].adapter.strategy, PeftStrategy::LinearProbe);
        for c in &cfgs[1..] {
            assert_eq!(c.adapter.strategy, PeftStrategy::LnTuning);
        }
        assert!(!cfgs[0].normalize && !cfgs[1].normalize);
        assert!(cfgs[2].normalize && cfgs[3].normalize && cfgs[4].normalize);
        assert!(cfgs[3].loss_weights.uniformity > 0.0 && cfgs[3].loss_weights.alignment > 0.0);
        assert_eq!(cfgs[2].loss_weights.uniformity, 0.0);
        assert!(!cfgs[3].slerp);
        assert!(cfgs[4].slerp);
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let cfg = load_config(
            "setup5",
            &[
                "seed=7".into(),
                "encoder=\"toy\"".into(),
                "batch_size=16".into(),
                "loss_weights.uniformity=0.25".into(),
                "max_steps=100".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.encoder, "toy");
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.loss_weights.uniformity, 0.25);
        assert_eq!(cfg.max_steps, Some(100));
    }

    #[test]
    fn unknown_keys_and_bad_configs_fail() {
        assert!(load_config("setup1", &["no_such_key=1".into()]).is_err());
        assert!(load_config("setup9", &[]).is_err());
        assert!(load_config("setup5", &["normalize=false".into()]).is_err());
        assert!(load_config("setup1", &["lr_final=9e-5".into()]).is_err());
    }

    #[test]
    fn config_hash_tracks_content() {
        let a = load_config("setup3", &[]).unwrap();
        let b = load_config("setup3", &[]).unwrap();
        let c = load_config("setup3", &["seed=99".into()]).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }
}
