//! Run configuration: presets, TOML files layered over a preset, validation
//! and the architecture hash stored in checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EtcConfig, HibertConfig};
use crate::error::{Error, Result};
use crate::oracle::TargetOrder;
use crate::plan::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hibert,
    Etc,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hibert" => Ok(EncoderKind::Hibert),
            "etc" => Ok(EncoderKind::Etc),
            _ => Err(Error::Config(format!("unknown encoder {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub sent_layers: usize,
    pub doc_layers: usize,
    pub etc_layers: usize,
    pub max_sent_len: usize,
    pub max_doc_units: usize,
    pub max_plan_len: usize,
    pub long_budget: usize,
    pub summary_budget: usize,
    pub global_cap: usize,
    pub local_radius: usize,
    pub relpos_vocab_size: usize,
    pub separate_global_projections: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Validation and checkpoint cadence in steps.
    pub eval_every: usize,
    /// Stop after this many evaluations without a better validation loss;
    /// 0 disables early stopping.
    pub patience: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam: usize,
    pub max_steps: usize,
    pub no_repeat: bool,
    pub triblk: bool,
    /// Greedy decoding where only names, cities and breaks may repeat.
    pub repeat_exceptions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub max_size: usize,
    /// 0 means no truncation.
    pub token_budget: usize,
    pub order: TargetOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub vocab_min_count: usize,
    pub max_vocab: usize,
    pub rotowire_max_units: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub stem: bool,
    pub drop_name_city_date: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub task: Task,
    pub encoder: EncoderKind,
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub decode: DecodeConfig,
    pub oracle: OracleConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn preset(preset: Preset, task: Task, encoder: EncoderKind) -> Self {
        let rotowire = task == Task::Rotowire;
        let model = match preset {
            Preset::Desk => ModelConfig {
                dim: 64,
                heads: 2,
                ffn_dim: 256,
                sent_layers: 2,
                doc_layers: 2,
                etc_layers: 2,
                max_sent_len: 32,
                max_doc_units: if rotowire { 384 } else { 64 },
                max_plan_len: if rotowire { 128 } else { 8 },
                long_budget: 381,
                summary_budget: 126,
                global_cap: 64,
                local_radius: 8,
                relpos_vocab_size: 12,
                separate_global_projections: false,
            },
            Preset::Paper => ModelConfig {
                dim: 768,
                heads: 12,
                ffn_dim: 3072,
                sent_layers: 8,
                doc_layers: 4,
                etc_layers: 12,
                max_sent_len: 32,
                max_doc_units: if rotowire { 512 } else { 128 },
                max_plan_len: if rotowire { 256 } else { 8 },
                long_budget: 6141,
                summary_budget: 2048,
                global_cap: 512,
                local_radius: 84,
                relpos_vocab_size: 24,
                separate_global_projections: false,
            },
        };
        let optim = match (preset, encoder) {
            (Preset::Desk, _) => OptimConfig {
                learning_rate: 1e-3,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                batch_size: 8,
                max_steps: 5000,
                eval_every: 200,
                patience: 0,
            },
            (Preset::Paper, EncoderKind::Hibert) => OptimConfig {
                learning_rate: 0.01,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                batch_size: if rotowire { 128 } else { 32 },
                max_steps: 100_000,
                eval_every: 1000,
                patience: 0,
            },
            (Preset::Paper, EncoderKind::Etc) => OptimConfig {
                learning_rate: 2.5e-5,
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
                batch_size: 512,
                max_steps: 5000,
                eval_every: 1000,
                patience: 0,
            },
        };
        let decode = if rotowire {
            DecodeConfig { beam: 1, max_steps: model.max_plan_len, no_repeat: true, triblk: false, repeat_exceptions: true }
        } else {
            DecodeConfig { beam: 3, max_steps: 4, no_repeat: true, triblk: false, repeat_exceptions: false }
        };
        RunConfig {
            preset,
            task,
            encoder,
            seed: 17,
            model,
            optim,
            decode,
            oracle: OracleConfig { max_size: 4, token_budget: 0, order: TargetOrder::Document },
            data: DataConfig {
                vocab_min_count: 1,
                max_vocab: if preset == Preset::Desk { 20_000 } else { 50_000 },
                rotowire_max_units: if preset == Preset::Desk { 384 } else { 512 },
            },
            eval: EvalConfig { stem: preset == Preset::Paper, drop_name_city_date: true },
        }
    }

    /// Reads `preset`, `task` and `encoder` from the file, starts from that
    /// preset and overlays every other key in the file.
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let get = |key: &str, default: &str| -> Result<String> {
            match file.get(key) {
                None => Ok(default.to_string()),
                Some(toml::Value::String(s)) => Ok(s.clone()),
                Some(v) => Err(Error::Config(format!("{key} must be a string, got {v}"))),
            }
        };
        let preset = match get("preset", "desk")?.as_str() {
            "desk" => Preset::Desk,
            "paper" => Preset::Paper,
            other => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        let task: Task = get("task", "cnndm")?.parse()?;
        let encoder: EncoderKind = get("encoder", "hibert")?.parse()?;
        let base = toml::Value::try_from(Self::preset(preset, task, encoder)).map_err(|e| Error::Config(e.to_string()))?;
        let merged = merge(base, toml::Value::Table(file))?;
        let config: RunConfig = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hibert(&self, vocab_size: usize) -> HibertConfig {
        let m = &self.model;
        HibertConfig {
            vocab_size,
            dim: m.dim,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            sent_layers: m.sent_layers,
            doc_layers: m.doc_layers,
            max_sent_len: m.max_sent_len,
            max_doc_units: m.max_doc_units,
            max_plan_len: m.max_plan_len,
        }
    }

    pub fn etc(&self, vocab_size: usize) -> EtcConfig {
        let m = &self.model;
        EtcConfig {
            vocab_size,
            dim: m.dim,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            layers: m.etc_layers,
            long_budget: m.long_budget,
            summary_budget: m.summary_budget,
            global_cap: m.global_cap,
            local_radius: m.local_radius,
            relpos_vocab_size: m.relpos_vocab_size,
            separate_global_projections: m.separate_global_projections,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.encoder {
            EncoderKind::Hibert => self.hibert(1).validate()?,
            EncoderKind::Etc => self.etc(1).validate()?,
        }
        let m = &self.model;
        if m.sent_layers == 0 || m.doc_layers == 0 || m.etc_layers == 0 {
            return bad("layer counts must be positive".into());
        }
        let o = &self.optim;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", o.learning_rate));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || o.epsilon <= 0.0 {
            return bad("adam betas must lie in [0, 1) and epsilon must be positive".into());
        }
        if o.batch_size == 0 || o.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        if self.decode.beam == 0 || self.decode.max_steps == 0 {
            return bad("decode beam and max_steps must be positive".into());
        }
        if self.decode.max_steps > m.max_plan_len + 1 && self.encoder == EncoderKind::Hibert {
            return bad(format!("decode max_steps {} exceeds max_plan_len {} + 1", self.decode.max_steps, m.max_plan_len));
        }
        if self.oracle.max_size == 0 {
            return bad("oracle max_size must be positive".into());
        }
        if self.data.max_vocab == 0 || self.data.rotowire_max_units == 0 {
            return bad("max_vocab and rotowire_max_units must be positive".into());
        }
        Ok(())
    }

    /// SHA-256 over the fields that determine parameter shapes and meaning.
    pub fn architecture_hash(&self) -> String {
        let key = serde_json::json!({ "task": self.task, "encoder": self.encoder, "model": self.model });
        let digest = Sha256::digest(key.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: toml::Value, over: toml::Value) -> Result<toml::Value> {
    match (base, over) {
        (toml::Value::Table(mut b), toml::Value::Table(o)) => {
            for (k, v) in o {
                let merged = match b.remove(&k) {
                    Some(existing @ toml::Value::Table(_)) => {
                        if !v.is_table() {
                            return Err(Error::Config(format!("[{k}] must be a section")));
                        }
                        merge(existing, v)?
                    }
                    _ => v,
                };
                b.insert(k, merged);
            }
            Ok(toml::Value::Table(b))
        }
        (_, o) => Ok(o),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_preset_matches_the_documented_sizes() {
        let c = RunConfig::preset(Preset::Desk, Task::Cnndm, EncoderKind::Etc);
        assert_eq!((c.model.dim, c.model.heads, c.model.sent_layers, c.model.doc_layers, c.model.etc_layers), (64, 2, 2, 2, 2));
        assert_eq!((c.model.long_budget, c.model.summary_budget, c.optim.batch_size), (381, 126, 8));
        assert_eq!((c.decode.beam, c.decode.max_steps, c.decode.no_repeat, c.decode.triblk), (3, 4, true, false));
        c.validate().unwrap();
        RunConfig::preset(Preset::Paper, Task::Rotowire, EncoderKind::Hibert).validate().unwrap();
    }

    #[test]
    fn file_overrides_preset() {
        let c = RunConfig::from_toml("preset = \"desk\"\ntask = \"rotowire\"\nencoder = \"etc\"\nseed = 3\n\n[model]\ndim = 32\n\n[decode]\ntriblk = true\n").unwrap();
        assert_eq!(c.task, Task::Rotowire);
        assert_eq!(c.encoder, EncoderKind::Etc);
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.dim, 32);
        assert_eq!(c.model.heads, 2);
        assert!(c.decode.triblk);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_and_bad_ranges_are_rejected() {
        assert!(RunConfig::from_toml("[model]\ndimm = 3\n").is_err());
        assert!(RunConfig::from_toml("colour = \"red\"\n").is_err());
        assert!(RunConfig::from_toml("[model]\ndim = 30\nheads = 4\n").is_err());
        assert!(RunConfig::from_toml("[optim]\nlearning_rate = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[decode]\nbeam = 0\n").is_err());
        assert!(RunConfig::from_toml("model = 3\n").is_err());
        assert!(RunConfig::from_toml("preset = \"huge\"\n").is_err());
    }

    #[test]
    fn architecture_hash_ignores_decode_settings() {
        let a = RunConfig::preset(Preset::Desk, Task::Cnndm, EncoderKind::Hibert);
        let mut b = a.clone();
        b.decode.beam = 5;
        b.seed = 99;
        assert_eq!(a.architecture_hash(), b.architecture_hash());
        b.model.dim = 32;
        assert_ne!(a.architecture_hash(), b.architecture_hash());
        assert_eq!(a.architecture_hash().len(), 64);
    }
}
