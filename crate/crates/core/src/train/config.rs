//! Flat `key=value` training configuration.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::loss::{Metric, DEFAULT_BETA, DEFAULT_EPS_DIST};
use crate::policy::{PolicyConfig, RateConfig};
use crate::rollout::{Method, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSpec {
    Fixed(f64),
    /// Effective rate `gamma_min + softplus(raw)` starting at `init`, trained
    /// with the penalty `−μ(1/(γ − γ0)² − c)`.
    Learnable {
        init: f64,
        gamma_min: f64,
        mu: f64,
        c: f64,
        gamma0: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub latent_dim: usize,
    pub implicit_dim: usize,
    pub coupling_layers: usize,
    pub coupling_width: usize,
    pub horizon: usize,
    pub method: Method,
    pub substeps: usize,
    pub metric: Metric,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub gamma: GammaSpec,
    pub eps: f64,
    pub eps_p: f64,
    pub eps_dist: f64,
    pub clip: f64,
    pub init_gain: f64,
    pub proj_noise: f64,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            latent_dim: 32,
            implicit_dim: 16,
            coupling_layers: 4,
            coupling_width: 32,
            horizon: 30,
            method: Method::Rk4,
            substeps: 1,
            metric: Metric::SoftDtw { beta: DEFAULT_BETA },
            lr: 5e-3,
            epochs: 1000,
            seed: 0,
            gamma: GammaSpec::Fixed(1.0),
            eps: 1e-2,
            eps_p: 1.0,
            eps_dist: DEFAULT_EPS_DIST,
            clip: 10.0,
            init_gain: 0.2,
            proj_noise: 1e-2,
            log_every: 50,
            checkpoint_every: 0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

impl TrainConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig::new(self.method, self.horizon, self.substeps)
    }

    pub fn policy_config(&self, state_dim: usize) -> PolicyConfig {
        PolicyConfig {
            state_dim,
            latent_dim: self.latent_dim,
            implicit_dim: self.implicit_dim,
            coupling_layers: self.coupling_layers,
            coupling_width: self.coupling_width,
            eps: self.eps,
            eps_p: self.eps_p,
            rate: match self.gamma {
                GammaSpec::Fixed(g) => RateConfig::Fixed(g),
                GammaSpec::Learnable {
                    init, gamma_min, ..
                } => RateConfig::Learnable { gamma_min, init },
            },
            init_gain: self.init_gain,
            proj_noise: self.proj_noise,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::invalid("horizon must be at least 2"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("learning rate must be non-negative"));
        }
        if !(self.eps_dist > 0.0) || !(self.clip > 0.0) {
            return Err(Error::invalid("eps_dist and clip must be positive"));
        }
        if let GammaSpec::Learnable {
            mu,
            gamma0,
            gamma_min,
            ..
        } = self.gamma
        {
            if !(mu >= 0.0) {
                return Err(Error::invalid("mu must be non-negative"));
            }
            if mu > 0.0 && !(gamma_min > gamma0) {
                return Err(Error::invalid(
                    "gamma_min must exceed gamma0 so the penalty stays finite",
                ));
            }
        }
        self.metric.validate()?;
        self.solver().validate()?;
        self.policy_config(1).validate()
    }

    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "latent_dim" => self.latent_dim = num(key, v)?,
            "implicit_dim" => self.implicit_dim = num(key, v)?,
            "coupling_layers" => self.coupling_layers = num(key, v)?,
            "coupling_width" => self.coupling_width = num(key, v)?,
            "horizon" => self.horizon = num(key, v)?,
            "solver" => self.method = v.parse()?,
            "substeps" => self.substeps = num(key, v)?,
            "metric" => {
                let beta = match self.metric {
                    Metric::SoftDtw { beta } => beta,
                    Metric::Mse => DEFAULT_BETA,
                };
                self.metric = match v.parse()? {
                    Metric::SoftDtw { .. } => Metric::SoftDtw { beta },
                    m => m,
                };
            }
            "beta" => {
                let b = num(key, v)?;
                if let Metric::SoftDtw { beta } = &mut self.metric {
                    *beta = b;
                }
            }
            "lr" => self.lr = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "gamma_mode" => {
                let g = self.gamma_value();
                self.gamma = match v {
                    "fixed" => GammaSpec::Fixed(g),
                    "learnable" => match self.gamma {
                        l @ GammaSpec::Learnable { .. } => l,
                        GammaSpec::Fixed(_) => GammaSpec::Learnable {
                            init: g,
                            gamma_min: 0.5,
                            mu: 0.1,
                            c: 0.0,
                            gamma0: 0.0,
                        },
                    },
                    _ => {
                        return Err(Error::invalid(format!(
                            "gamma_mode must be fixed or learnable, got `{v}`"
                        )))
                    }
                };
            }
            "gamma" => {
                let g = num(key, v)?;
                match &mut self.gamma {
                    GammaSpec::Fixed(x) => *x = g,
                    GammaSpec::Learnable { init, .. } => *init = g,
                }
            }
            "gamma_min" | "mu" | "c" | "gamma0" => {
                let x: f64 = num(key, v)?;
                match &mut self.gamma {
                    GammaSpec::Learnable {
                        gamma_min,
                        mu,
                        c,
                        gamma0,
                        ..
                    } => match key {
                        "gamma_min" => *gamma_min = x,
                        "mu" => *mu = x,
                        "c" => *c = x,
                        _ => *gamma0 = x,
                    },
                    GammaSpec::Fixed(_) => {
                        return Err(Error::invalid(format!(
                            "`{key}` requires gamma_mode=learnable (set it first)"
                        )))
                    }
                }
            }
            "eps" => self.eps = num(key, v)?,
            "eps_p" => self.eps_p = num(key, v)?,
            "eps_dist" => self.eps_dist = num(key, v)?,
            "clip" => self.clip = num(key, v)?,
            "init_gain" => self.init_gain = num(key, v)?,
            "proj_noise" => self.proj_noise = num(key, v)?,
            "log_every" => self.log_every = num(key, v)?,
            "checkpoint_every" => self.checkpoint_every = num(key, v)?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn gamma_value(&self) -> f64 {
        match self.gamma {
            GammaSpec::Fixed(g) => g,
            GammaSpec::Learnable { init, .. } => init,
        }
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    /// `gamma_mode` is applied first so that rate keys may appear in any
    /// order.
    pub fn merge_kv(&mut self, text: &str) -> Result<()> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key=value", i + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        pairs.sort_by_key(|(k, _)| k != "gamma_mode");
        for (k, v) in pairs {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.merge_kv(text)?;
        Ok(cfg)
    }

    /// Pairs in a fixed order; `from_kv(to_kv())` restores the config.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![
            ("latent_dim", self.latent_dim.to_string()),
            ("implicit_dim", self.implicit_dim.to_string()),
            ("coupling_layers", self.coupling_layers.to_string()),
            ("coupling_width", self.coupling_width.to_string()),
            ("horizon", self.horizon.to_string()),
            ("solver", self.method.to_string()),
            ("substeps", self.substeps.to_string()),
            ("metric", self.metric.to_string()),
        ];
        if let Metric::SoftDtw { beta } = self.metric {
            p.push(("beta", beta.to_string()));
        }
        p.extend([
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        match self.gamma {
            GammaSpec::Fixed(g) => {
                p.push(("gamma_mode", "fixed".into()));
                p.push(("gamma", g.to_string()));
            }
            GammaSpec::Learnable {
                init,
                gamma_min,
                mu,
                c,
                gamma0,
            } => {
                p.push(("gamma_mode", "learnable".into()));
                p.push(("gamma", init.to_string()));
                p.push(("gamma_min", gamma_min.to_string()));
                p.push(("mu", mu.to_string()));
                p.push(("c", c.to_string()));
                p.push(("gamma0", gamma0.to_string()));
            }
        }
        p.extend([
            ("eps", self.eps.to_string()),
            ("eps_p", self.eps_p.to_string()),
            ("eps_dist", self.eps_dist.to_string()),
            ("clip", self.clip.to_string()),
            ("init_gain", self.init_gain.to_string()),
            ("proj_noise", self.proj_noise.to_string()),
            ("log_every", self.log_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
        ]);
        p
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
