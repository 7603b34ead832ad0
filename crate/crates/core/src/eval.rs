//! In-sample / out-of-sample evaluation and loss certificates for trained
//! checkpoints. Everything is computed in normalized units.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::bounds::{self, BoundInputs, EllipseRegion, SamplerSpec, ALPHA_SAFETY};
use crate::data::{sample_oos_inits, Dataset, Demo, Units};
use crate::error::{Error, Result};
use crate::loss::{self, Metric, DEFAULT_BETA};
use crate::rollout::Trajectory;
use crate::tensor::Tensor;
use crate::train::{Checkpoint, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Stats {
                mean: f64::NAN,
                std: f64::NAN,
            };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Stats {
            mean,
            std: var.sqrt(),
        }
    }
}

/// Losses of one set of rollouts against the λ-weighted demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct SetReport {
    pub inits: Vec<Vec<f64>>,
    pub rollouts: Vec<Trajectory<f64>>,
    pub mse: Vec<f64>,
    pub soft_dtw: Vec<f64>,
}

impl SetReport {
    pub fn mse_stats(&self) -> Stats {
        Stats::of(&self.mse)
    }

    pub fn soft_dtw_stats(&self) -> Stats {
        Stats::of(&self.soft_dtw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub beta: f64,
    pub in_sample: SetReport,
    pub oos: SetReport,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>5} {:>24} {:>24}",
            "set",
            "n",
            "mse",
            format!("soft_dtw(beta={})", self.beta)
        );
        for (name, r) in [("in-sample", &self.in_sample), ("oos", &self.oos)] {
            let (m, d) = (r.mse_stats(), r.soft_dtw_stats());
            let _ = writeln!(
                s,
                "{:<10} {:>5} {:>24} {:>24}",
                name,
                r.inits.len(),
                format!("{:.6} ± {:.6}", m.mean, m.std),
                format!("{:.6} ± {:.6}", d.mean, d.std)
            );
        }
        s
    }
}

fn score_set(
    ckpt: &Checkpoint,
    data: &TrainingData,
    inits: Vec<Vec<f64>>,
    beta: f64,
) -> Result<SetReport> {
    let solver = ckpt.config.solver();
    let eps = ckpt.config.eps_dist;
    let rollouts = ckpt.policy.rollout_batch(&inits, &solver)?;
    let scores: Vec<(f64, f64)> = inits
        .par_iter()
        .zip(rollouts.par_iter())
        .map(|(y0, r)| -> Result<(f64, f64)> {
            Ok((
                loss::weighted_loss(&r.states, y0, &data.demos, Metric::Mse, eps)?,
                loss::weighted_loss(&r.states, y0, &data.demos, Metric::SoftDtw { beta }, eps)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (mse, soft_dtw) = scores.into_iter().unzip();
    Ok(SetReport {
        inits,
        rollouts,
        mse,
        soft_dtw,
    })
}

/// Rolls out from the dataset's initial states and from `sampler` draws and
/// scores both sets. soft-DTW uses the training β when the model was trained
/// with it.
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset<f64>, sampler: &SamplerSpec) -> Result<EvalReport> {
    let data = TrainingData::prepare(ds, Some(&ckpt.norm), ckpt.config.horizon)?;
    let beta = match ckpt.config.metric {
        Metric::SoftDtw { beta } => beta,
        Metric::Mse => DEFAULT_BETA,
    };
    let oos_inits = sample_oos_inits(&data.dataset, sampler)?;
    Ok(EvalReport {
        beta,
        in_sample: score_set(ckpt, &data, data.inits.clone(), beta)?,
        oos: score_set(ckpt, &data, oos_inits, beta)?,
    })
}

/// Rollouts as a dataset (one demo per rollout, ids are rollout indices),
/// mapped back to the units of the source data.
pub fn rollouts_to_dataset(
    ckpt: &Checkpoint,
    rollouts: &[Trajectory<f64>],
    name: &str,
) -> Result<Dataset<f64>> {
    let demos = rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| -> Result<Demo<f64>> {
            let rows: Vec<f64> = r.rows().iter().flat_map(|y| ckpt.norm.invert(y)).collect();
            Ok(Demo {
                id: i.to_string(),
                t: (0..r.horizon()).map(|k| k as f64 * r.dt).collect(),
                states: Tensor::new(vec![r.horizon(), r.dim()], rows)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(name, demos, Units::Raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub y0: Vec<f64>,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    /// Monte Carlo estimate before the safety factor.
    pub alpha_raw: f64,
    pub alpha: f64,
    pub r: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub per_demo_mse: Vec<f64>,
    pub term_two: f64,
    pub true_bound: f64,
    pub samples: Vec<BoundSample>,
    /// Whether α had to be re-estimated with a larger sample.
    pub reestimated: bool,
}

impl BoundReport {
    pub fn observed_mean(&self) -> f64 {
        Stats::of(&self.samples.iter().map(|s| s.observed).collect::<Vec<_>>()).mean
    }

    pub fn violations(&self) -> usize {
        self.samples.iter().filter(|s| s.observed > s.bound).count()
    }

    /// Smallest `bound − observed` over the samples.
    pub fn min_margin(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.bound - s.observed)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn term_one(&self) -> Stats {
        Stats::of(
            &self
                .samples
                .iter()
                .map(|s| s.bound - self.term_two)
                .collect::<Vec<_>>(),
        )
    }

    pub fn to_text(&self, per_sample: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "alpha_hat        {:.6} (raw {:.6} x {ALPHA_SAFETY})",
            self.alpha, self.alpha_raw
        );
        let _ = writeln!(s, "R                {:.6}", self.r);
        let _ = writeln!(s, "gamma            {:.6}", self.gamma);
        let _ = writeln!(s, "H                {}", self.horizon);
        let _ = writeln!(s, "M                {}", self.per_demo_mse.len());
        let pd: Vec<String> = self
            .per_demo_mse
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        let _ = writeln!(s, "per_demo_mse     {}", pd.join(" "));
        let t1 = self.term_one();
        let _ = writeln!(s, "term_one         {:.6} ± {:.6}", t1.mean, t1.std);
        let _ = writeln!(s, "term_two         {:.6}", self.term_two);
        let _ = writeln!(s, "corollary_bound  {:.6}", self.true_bound);
        let _ = writeln!(s, "observed_mean    {:.6}", self.observed_mean());
        let _ = writeln!(s, "min_margin       {:.6}", self.min_margin());
        let _ = writeln!(
            s,
            "violations       {}/{}",
            self.violations(),
            self.samples.len()
        );
        if self.reestimated {
            let _ = writeln!(s, "note             alpha re-estimated with 4x samples");
        }
        if per_sample {
            let _ = writeln!(s, "sample,observed,bound");
            for (i, b) in self.samples.iter().enumerate() {
                let _ = writeln!(s, "{i},{:.9},{:.9}", b.observed, b.bound);
            }
        }
        s
    }
}

/// Theorem-style certificate on `sampler` draws: α̂ from Monte Carlo over the
/// draws and the dataset starts (times the safety factor), R as the tightest
/// region around the dataset starts containing every draw, and per-draw
/// worst-case bounds next to the observed λ-weighted MSE.
///
/// If any draw violates its bound, α̂ is re-estimated once from four times as
/// many draws.
pub fn certify(ckpt: &Checkpoint, ds: &Dataset<f64>, sampler: &SamplerSpec) -> Result<BoundReport> {
    if sampler.count == 0 {
        return Err(Error::invalid("bound needs at least one sample"));
    }
    let data = TrainingData::prepare(ds, Some(&ckpt.norm), ckpt.config.horizon)?;
    let solver = ckpt.config.solver();
    let policy = &ckpt.policy;
    let eps = ckpt.config.eps_dist;

    let draws = sample_oos_inits(&data.dataset, sampler)?;
    let region = EllipseRegion::enclosing(data.inits.clone(), &draws)?;

    let own = policy.rollout_batch(&data.inits, &solver)?;
    let per_demo_mse = own
        .iter()
        .zip(&data.demos)
        .map(|(r, d)| loss::mse(&r.states, d))
        .collect::<Result<Vec<_>>>()?;

    let alpha_from = |extra: &[Vec<f64>]| -> Result<f64> {
        let mut pool = data.inits.clone();
        pool.extend_from_slice(extra);
        bounds::estimate_alpha(policy, &pool, &solver)
    };
    let mut alpha_raw = alpha_from(&draws)?;

    let rollouts = policy.rollout_batch(&draws, &solver)?;
    let observed = draws
        .par_iter()
        .zip(rollouts.par_iter())
        .map(|(y0, r)| loss::weighted_loss(&r.states, y0, &data.demos, Metric::Mse, eps))
        .collect::<Result<Vec<_>>>()?;

    let evaluate = |alpha_raw: f64| -> Result<(BoundInputs, Vec<BoundSample>)> {
        let inputs = BoundInputs {
            alpha: alpha_raw * ALPHA_SAFETY,
            gamma: policy.gamma(),
            horizon: solver.horizon,
            r: region.r,
            per_demo_mse: per_demo_mse.clone(),
        };
        let samples = draws
            .iter()
            .zip(&observed)
            .map(|(y0, &obs)| -> Result<BoundSample> {
                Ok(BoundSample {
                    y0: y0.clone(),
                    observed: obs,
                    bound: bounds::worst_case_bound(y0, &data.inits, &inputs, eps)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((inputs, samples))
    };

    let (mut inputs, mut samples) = evaluate(alpha_raw)?;
    let mut reestimated = false;
    if samples.iter().any(|s| s.observed > s.bound) {
        let wide = SamplerSpec {
            count: sampler.count * 4,
            seed: sampler.seed.wrapping_add(1),
            ..*sampler
        };
        let more = sample_oos_inits(&data.dataset, &wide)?;
        let inside: Vec<Vec<f64>> = more.into_iter().filter(|y| region.in_region(y).0).collect();
        alpha_raw = alpha_raw.max(alpha_from(&[draws.clone(), inside].concat())?);
        (inputs, samples) = evaluate(alpha_raw)?;
        reestimated = true;
    }
    Ok(BoundReport {
        alpha_raw,
        alpha: inputs.alpha,
        r: inputs.r,
        gamma: inputs.gamma,
        horizon: inputs.horizon,
        term_two: inputs.term_two()?,
        true_bound: bounds::true_loss_bound(&inputs)?,
        per_demo_mse,
        samples,
        reestimated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_population_std() {
        let s = Stats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert!(Stats::of(&[]).mean.is_nan());
    }
}
