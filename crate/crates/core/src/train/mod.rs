//! Full-batch training of contractive policies.

mod adam;
mod checkpoint;
mod config;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, LogSummary, FORMAT, VERSION};
pub use config::{GammaSpec, TrainConfig};

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Dataset, NormalizationSpec, Units};
use crate::error::{Error, Result};
use crate::loss::{augmented_loss_on, weighted_loss_on};
use crate::policy::{Policy, PolicyTape};
use crate::tensor::{Tape, Tensor, Var};

/// Demonstrations in training units, resampled to the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingData {
    /// Normalized and resampled copy of the source dataset.
    pub dataset: Dataset<f64>,
    pub demos: Vec<Tensor<f64>>,
    pub inits: Vec<Vec<f64>>,
    pub norm: NormalizationSpec<f64>,
}

impl TrainingData {
    /// Normalizes (or applies `norm` when given) and resamples to `horizon`.
    pub fn prepare(
        ds: &Dataset<f64>,
        norm: Option<&NormalizationSpec<f64>>,
        horizon: usize,
    ) -> Result<Self> {
        let (normalized, spec) = match norm {
            Some(spec) => {
                if spec.dim() != ds.dim() {
                    return Err(Error::invalid(format!(
                        "dataset has {} coordinates, model expects {}",
                        ds.dim(),
                        spec.dim()
                    )));
                }
                let n = match ds.units {
                    Units::Raw => {
                        let mut out = ds.clone();
                        for d in &mut out.demos {
                            let rows: Vec<f64> = (0..d.len())
                                .flat_map(|i| spec.apply(d.states.row(i)))
                                .collect();
                            d.states = Tensor::new(d.states.shape().to_vec(), rows)?;
                        }
                        out.units = Units::Normalized;
                        out
                    }
                    Units::Normalized => ds.clone(),
                };
                (n, spec.clone())
            }
            None => ds.normalize()?,
        };
        let resampled = normalized.resample(horizon)?;
        Ok(TrainingData {
            inits: resampled.inits(),
            demos: resampled.trajectories(),
            dataset: resampled,
            norm: spec,
        })
    }

    pub fn dim(&self) -> usize {
        self.demos[0].cols()
    }
}

/// Loss values of one step, taken before the update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Mean λ-weighted discrepancy over the dataset's initial states.
    pub loss: f64,
    /// `loss` plus the rate penalty when the rate is learned.
    pub objective: f64,
    pub grad_norm: f64,
}

/// Mean over dataset initial states of the λ-weighted discrepancy, and the
/// penalized objective.
pub fn training_loss_on<'t>(
    policy: &Policy<f64>,
    pt: &PolicyTape<'t, f64>,
    data: &TrainingData,
    cfg: &TrainConfig,
) -> Result<(Var<'t, f64>, Var<'t, f64>)> {
    let solver = cfg.solver();
    let mut total: Option<Var<'t, f64>> = None;
    for y0 in &data.inits {
        let roll = policy.rollout_var(pt, y0, &solver)?;
        let term = weighted_loss_on(roll, y0, &data.demos, cfg.metric, cfg.eps_dist)?;
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    let loss = total
        .ok_or_else(|| Error::invalid("training data has no demonstrations"))?
        .scale(1.0 / data.inits.len() as f64);
    let objective = match cfg.gamma {
        GammaSpec::Learnable { mu, c, gamma0, .. } if mu > 0.0 => {
            augmented_loss_on(loss, pt.sys.gamma, mu, c, gamma0)?
        }
        _ => loss,
    };
    Ok((loss, objective))
}

/// One full-batch step: rollouts, loss, backward, clipping, Adam update.
pub fn train_step(
    policy: &mut Policy<f64>,
    data: &TrainingData,
    cfg: &TrainConfig,
    opt: &mut Adam<f64>,
) -> Result<StepStats> {
    policy.params.zero_grad();
    let tape = Tape::new();
    let pt = policy.on_tape(&tape)?;
    let (loss, objective) = training_loss_on(policy, &pt, data, cfg)?;
    let (lv, ov) = (loss.item(), objective.item());
    if !ov.is_finite() {
        return Err(Error::NonFinite {
            what: format!("training objective (loss {lv:e}, gamma {})", policy.gamma()),
        });
    }
    let grads = tape.backward(objective)?;
    policy.params.accumulate(&pt.bound, &grads);
    drop(pt);
    let grad_norm = Adam::clip(&mut policy.params, cfg.clip);
    opt.update(&mut policy.params, cfg.lr)?;
    Ok(StepStats {
        loss: lv,
        objective: ov,
        grad_norm,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub loss: f64,
    pub objective: f64,
    pub gamma: f64,
    pub eig_min: f64,
    pub wall_ms: f64,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log record serializes")
    }
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: Policy<f64>,
    pub opt: Adam<f64>,
    pub data: TrainingData,
    pub summary: LogSummary,
    rng: ChaCha8Rng,
    started: Instant,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, ds: &Dataset<f64>) -> Result<Self> {
        cfg.validate()?;
        let data = TrainingData::prepare(ds, None, cfg.horizon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let policy = Policy::init_with_rng(cfg.policy_config(data.dim()), &mut rng)?;
        let opt = Adam::new(&policy.params);
        Ok(Trainer {
            cfg,
            policy,
            opt,
            data,
            summary: LogSummary::default(),
            rng,
            started: Instant::now(),
        })
    }

    /// Continues from a checkpoint; `ds` is prepared with the stored
    /// normalization.
    pub fn resume(ckpt: Checkpoint, ds: &Dataset<f64>) -> Result<Self> {
        let data = TrainingData::prepare(ds, Some(&ckpt.norm), ckpt.config.horizon)?;
        let mut rng = ChaCha8Rng::seed_from_u64(ckpt.rng_seed);
        rng.set_word_pos(ckpt.rng_word_pos);
        Ok(Trainer {
            cfg: ckpt.config,
            policy: ckpt.policy,
            opt: ckpt.adam,
            data,
            summary: ckpt.summary,
            rng,
            started: Instant::now(),
        })
    }

    pub fn epoch(&self) -> usize {
        self.summary.epochs
    }

    pub fn step(&mut self) -> Result<StepStats> {
        let stats = train_step(&mut self.policy, &self.data, &self.cfg, &mut self.opt)?;
        let s = &mut self.summary;
        s.epochs += 1;
        s.final_loss = stats.loss;
        if !(s.best_loss <= stats.loss) {
            s.best_loss = stats.loss;
        }
        s.gamma = self.policy.gamma();
        Ok(stats)
    }

    /// Smallest eigenvalue of the assembled LMI matrix; errors if it falls
    /// below the construction margin.
    pub fn check_lmi(&mut self) -> Result<f64> {
        let eig = self.policy.matrices()?.lmi_eig_min();
        self.summary.eig_min = eig;
        if eig < self.cfg.eps - 1e-9 {
            return Err(Error::invalid(format!(
                "contraction LMI violated at epoch {}: eig_min {eig:e} < eps {}",
                self.epoch(),
                self.cfg.eps
            )));
        }
        Ok(eig)
    }

    /// Runs until `cfg.epochs` epochs are done. `on_log` sees a record every
    /// `log_every` and every `checkpoint_every` epochs and at the last one,
    /// together with the trainer so that callers can checkpoint.
    pub fn run(
        &mut self,
        mut on_log: impl FnMut(&LogRecord, &Trainer) -> Result<()>,
    ) -> Result<()> {
        while self.epoch() < self.cfg.epochs {
            let stats = self.step()?;
            let e = self.epoch();
            let every = |k: usize| k > 0 && e.is_multiple_of(k);
            let logged = e == self.cfg.epochs
                || every(self.cfg.log_every)
                || every(self.cfg.checkpoint_every);
            if logged {
                let eig = self.check_lmi()?;
                let rec = LogRecord {
                    epoch: e,
                    loss: stats.loss,
                    objective: stats.objective,
                    gamma: self.summary.gamma,
                    eig_min: eig,
                    wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
                };
                log::debug!("{}", rec.to_json());
                on_log(&rec, self)?;
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: VERSION,
            config: self.cfg,
            state_dim: self.data.dim(),
            policy: self.policy.clone(),
            adam: self.opt.clone(),
            norm: self.data.norm.clone(),
            summary: self.summary.clone(),
            rng_seed: self.cfg.seed,
            rng_word_pos: self.rng.get_word_pos(),
        }
    }
}

/// Trains from scratch and returns the final checkpoint.
pub fn train(cfg: TrainConfig, ds: &Dataset<f64>) -> Result<Checkpoint> {
    let mut t = Trainer::new(cfg, ds)?;
    t.run(|_, _| Ok(()))?;
    Ok(t.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize, MotionKind, SynthSpec};
    use crate::loss::Metric;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            latent_dim: 3,
            implicit_dim: 2,
            coupling_layers: 2,
            coupling_width: 4,
            horizon: 5,
            epochs: 3,
            log_every: 1,
            ..TrainConfig::default()
        }
    }

    fn sine(m: usize) -> Dataset<f64> {
        synthesize(&SynthSpec {
            kind: MotionKind::Sine,
            demos: m,
            horizon: 20,
            dim: 2,
            noise_std: 0.0,
            seed: 1,
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let cfg = TrainConfig {
            lr: 0.0,
            ..tiny_cfg()
        };
        let mut t = Trainer::new(cfg, &sine(2)).unwrap();
        let before = t.policy.params.clone();
        let a = t.step().unwrap();
        let b = t.step().unwrap();
        assert_eq!(a.loss, b.loss);
        for (p, q) in t.policy.params.iter().zip(before.iter()) {
            assert_eq!(p.value, q.value);
        }
    }

    #[test]
    fn checkpoint_text_round_trip() {
        let mut t = Trainer::new(tiny_cfg(), &sine(2)).unwrap();
        t.run(|_, _| Ok(())).unwrap();
        let text = t.checkpoint().to_text();
        let back = Checkpoint::from_text(&text, "mem").unwrap();
        assert_eq!(back.to_text(), text);
        for (p, q) in back.policy.params.iter().zip(t.policy.params.iter()) {
            assert_eq!(p.value, q.value);
        }
        assert_eq!(back.adam.m, t.opt.m);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = TrainConfig {
            metric: Metric::Mse,
            ..tiny_cfg()
        };
        let ds = sine(2);
        let mut full = Trainer::new(cfg, &ds).unwrap();
        full.step().unwrap();
        let ckpt = Checkpoint::from_text(&full.checkpoint().to_text(), "mem").unwrap();
        let s_full = full.step().unwrap();
        let mut resumed = Trainer::resume(ckpt, &ds).unwrap();
        let s_res = resumed.step().unwrap();
        assert_eq!(s_full, s_res);
        assert_eq!(full.checkpoint().to_text(), resumed.checkpoint().to_text());
    }
}
