//! Versioned text checkpoints: one `key=value` per line, floats in shortest
//! round-trip form, so save → load → save reproduces the file byte for byte.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use super::adam::Adam;
use super::config::TrainConfig;
use crate::data::NormalizationSpec;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::tensor::Tensor;

pub const FORMAT: &str = "contractive-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LogSummary {
    pub epochs: usize,
    pub final_loss: f64,
    pub best_loss: f64,
    pub gamma: f64,
    pub eig_min: f64,
}

impl Default for LogSummary {
    fn default() -> Self {
        LogSummary {
            epochs: 0,
            final_loss: f64::NAN,
            best_loss: f64::NAN,
            gamma: f64::NAN,
            eig_min: f64::NAN,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub state_dim: usize,
    pub policy: Policy<f64>,
    pub adam: Adam<f64>,
    pub norm: NormalizationSpec<f64>,
    pub summary: LogSummary,
    pub rng_seed: u64,
    pub rng_word_pos: u128,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("format", FORMAT.into());
        kv("version", self.version.to_string());
        for (k, v) in self.config.pairs() {
            kv(&format!("config.{k}"), v);
        }
        kv("data.state_dim", self.state_dim.to_string());
        kv("norm.shift", join(&self.norm.shift));
        kv("norm.scale", join(&self.norm.scale));
        kv("log.epochs", self.summary.epochs.to_string());
        kv("log.final_loss", self.summary.final_loss.to_string());
        kv("log.best_loss", self.summary.best_loss.to_string());
        kv("log.gamma", self.summary.gamma.to_string());
        kv("log.eig_min", self.summary.eig_min.to_string());
        kv("rng.seed", self.rng_seed.to_string());
        kv("rng.word_pos", self.rng_word_pos.to_string());
        kv("opt.step", self.adam.step.to_string());
        for ((p, m), v) in self
            .policy
            .params
            .iter()
            .zip(&self.adam.m)
            .zip(&self.adam.v)
        {
            kv(&format!("param.{}.shape", p.name), join(p.value.shape()));
            kv(&format!("param.{}.value", p.name), join(p.value.data()));
            kv(&format!("param.{}.m", p.name), join(m.data()));
            kv(&format!("param.{}.v", p.name), join(v.data()));
        }
        out
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: source.to_string(),
            line,
            msg,
        };
        let mut map: HashMap<&str, (usize, &str)> = HashMap::new();
        let mut config_text = String::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| perr(i + 1, "expected key=value".into()))?;
            if let Some(ck) = k.strip_prefix("config.") {
                let _ = writeln!(config_text, "{ck}={v}");
            }
            if map.insert(k, (i + 1, v)).is_some() {
                return Err(perr(i + 1, format!("duplicate key `{k}`")));
            }
        }
        let get = |k: &str| -> Result<(usize, &str)> {
            map.get(k)
                .copied()
                .ok_or_else(|| perr(0, format!("missing key `{k}`")))
        };
        let scalar = |k: &str| -> Result<f64> {
            let (line, v) = get(k)?;
            v.parse()
                .map_err(|_| perr(line, format!("bad number `{v}`")))
        };
        let list = |k: &str| -> Result<Vec<f64>> {
            let (line, v) = get(k)?;
            if v.is_empty() {
                return Ok(Vec::new());
            }
            v.split(',')
                .map(|x| {
                    x.parse()
                        .map_err(|_| perr(line, format!("bad number `{x}`")))
                })
                .collect()
        };
        let integer = |k: &str| -> Result<u128> {
            let (line, v) = get(k)?;
            v.parse()
                .map_err(|_| perr(line, format!("bad integer `{v}`")))
        };

        let (line, fmt) = get("format")?;
        if fmt != FORMAT {
            return Err(perr(line, format!("not a checkpoint (format `{fmt}`)")));
        }
        let version = integer("version")? as u32;
        if version != VERSION {
            return Err(perr(
                get("version")?.0,
                format!("unsupported version {version}"),
            ));
        }
        let config = TrainConfig::from_kv(&config_text)?;
        let state_dim = integer("data.state_dim")? as usize;
        let mut policy = Policy::init(config.policy_config(state_dim), config.seed)?;
        let mut adam = Adam::new(&policy.params);
        adam.step = integer("opt.step")? as u64;
        let names: Vec<String> = policy.params.iter().map(|p| p.name.clone()).collect();
        let param_keys = map
            .keys()
            .filter(|k| k.starts_with("param.") && k.ends_with(".shape"))
            .count();
        if param_keys != names.len() {
            return Err(perr(
                0,
                format!("expected {} parameters, found {param_keys}", names.len()),
            ));
        }
        for (idx, (p, name)) in policy.params.iter_mut().zip(&names).enumerate() {
            let shape: Vec<usize> = list(&format!("param.{name}.shape"))?
                .into_iter()
                .map(|v| v as usize)
                .collect();
            if shape != p.value.shape() {
                return Err(perr(
                    get(&format!("param.{name}.shape"))?.0,
                    format!(
                        "parameter `{name}` has shape {shape:?}, expected {:?}",
                        p.value.shape()
                    ),
                ));
            }
            let load = |suffix: &str| -> Result<Tensor<f64>> {
                let k = format!("param.{name}.{suffix}");
                let data = list(&k)?;
                Tensor::new(shape.clone(), data)
                    .map_err(|e| perr(get(&k).map(|x| x.0).unwrap_or(0), e.to_string()))
            };
            p.value = load("value")?;
            adam.m[idx] = load("m")?;
            adam.v[idx] = load("v")?;
        }
        let norm = NormalizationSpec {
            shift: list("norm.shift")?,
            scale: list("norm.scale")?,
        };
        if norm.shift.len() != state_dim || norm.scale.len() != state_dim {
            return Err(perr(
                get("norm.shift")?.0,
                "normalization does not match the state dimension".into(),
            ));
        }
        Ok(Checkpoint {
            version,
            config,
            state_dim,
            policy,
            adam,
            norm,
            summary: LogSummary {
                epochs: integer("log.epochs")? as usize,
                final_loss: scalar("log.final_loss")?,
                best_loss: scalar("log.best_loss")?,
                gamma: scalar("log.gamma")?,
                eig_min: scalar("log.eig_min")?,
            },
            rng_seed: integer("rng.seed")? as u64,
            rng_word_pos: integer("rng.word_pos")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_text(&text, &path.display().to_string())
    }
}
