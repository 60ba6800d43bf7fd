use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{LossConfig, LossReport, LossTargets, LossWeights};
use super::params::DenoiserParams;
use crate::diffusion::{drop_conditioning, gaussian_grid, q_sample, Conditioning, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::vcs::VcsModel;
use crate::cohort::PhantomCase;
use crate::voxel::{sdf_from_mask, volume_ml, BinaryMask, ScalarGrid, SdfConfig};

const PURPOSE_SHUFFLE: u64 = 0x5348;
const PURPOSE_STEP: u64 = 0x5354;
const PURPOSE_VAL: u64 = 0x5641;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Per-signal conditioning dropout probability.
    pub dropout: f64,
    /// Epoch at which the VCS calibration term switches on; `None` means a
    /// quarter of `epochs`.
    pub warmup_epochs: Option<usize>,
    pub weights: LossWeights,
    pub seed: u64,
    /// Cases held out from the end of the cohort for validation.
    pub validation_cases: usize,
    /// Per-step decay of the parameter moving average that is evaluated,
    /// checkpointed and returned; 0 disables averaging.
    pub ema_decay: f64,
    /// Global L2 norm the mini-batch gradient is rescaled to when exceeded.
    pub grad_clip: Option<f64>,
    /// Final learning rate as a fraction of `learning_rate`, reached by a
    /// per-epoch cosine decay; 1 keeps the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 4,
            learning_rate: 5e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout: 0.3,
            warmup_epochs: None,
            weights: LossWeights { vcs: 0.5, ..LossWeights::default() },
            seed: 0,
            validation_cases: 0,
            ema_decay: 0.99,
            grad_clip: Some(1.0),
            final_lr_fraction: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("train.learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("train.beta1/beta2 must be in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("train.eps must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("train.dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("train.ema_decay must be in [0, 1), got {}", self.ema_decay)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("train.grad_clip must be > 0, got {c}")));
            }
        }
        if !(0.0..=1.0).contains(&self.final_lr_fraction) {
            return Err(Error::Config(format!(
                "train.final_lr_fraction must be in [0, 1], got {}",
                self.final_lr_fraction
            )));
        }
        Ok(())
    }

    /// Learning rate used throughout `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let f = self.final_lr_fraction;
        if f == 1.0 || self.epochs <= 1 {
            return self.learning_rate;
        }
        let x = epoch as f64 / (self.epochs - 1) as f64;
        self.learning_rate * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * x).cos()))
    }

    pub fn warmup(&self) -> usize {
        self.warmup_epochs.unwrap_or(self.epochs / 4)
    }
}

/// Decoupled weight-decay Adam.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] *= 1.0 - self.lr * self.weight_decay;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One supervised case for a single organ, built from reference masks.
#[derive(Debug, Clone, PartialEq)]
pub struct OrganExample {
    pub case_id: String,
    pub body_sdf: ScalarGrid,
    /// Max-composition of the reference SDFs of all earlier organs.
    pub context_sdf: ScalarGrid,
    pub context_mask: BinaryMask,
    pub target_sdf: ScalarGrid,
    pub target_mask: BinaryMask,
    pub body_volume: f64,
    pub organ_volume: f64,
    /// VCS of the reference organ.
    pub v: f64,
}

impl OrganExample {
    /// Supervision for `organ` from a reference case; the context is built
    /// from the organs that precede it in the case's generation order.
    pub fn from_case(case: &PhantomCase, organ: &str, vcs: &VcsModel, sdf: &SdfConfig) -> Result<Self> {
        let (context_sdf, context_mask) = case.context_before(organ, sdf)?;
        let target_mask = case
            .organ(organ)
            .ok_or_else(|| Error::Data(format!("{}: no organ {organ}", case.case_id)))?
            .clone();
        let body_volume = volume_ml(&case.body);
        let organ_volume = volume_ml(&target_mask);
        Ok(Self {
            case_id: case.case_id.clone(),
            body_sdf: sdf_from_mask(&case.body, sdf),
            context_sdf,
            context_mask,
            target_sdf: sdf_from_mask(&target_mask, sdf),
            target_mask,
            body_volume,
            organ_volume,
            v: vcs.vcs_of(organ_volume, body_volume),
        })
    }

    pub fn conditioning(&self) -> Result<Conditioning> {
        Conditioning::new(self.body_sdf.clone(), self.context_sdf.clone(), self.v)
    }

    fn targets(&self) -> LossTargets<'_> {
        LossTargets {
            sdf: &self.target_sdf,
            mask: &self.target_mask,
            context_mask: &self.context_mask,
            v_target: self.v,
            body_volume: self.body_volume,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub vcs_active: bool,
    pub train: LossReport,
    pub val: Option<LossReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub history: Vec<EpochRecord>,
}

struct Ctx<'a> {
    schedule: &'a NoiseSchedule,
    sdf: &'a SdfConfig,
    vcs: &'a VcsModel,
    cfg: &'a TrainConfig,
}

fn example_grad(
    params: &DenoiserParams,
    ex: &OrganExample,
    rng: &mut impl Rng,
    dropout: f64,
    vcs_active: bool,
    ctx: &Ctx<'_>,
) -> Result<(Vec<f64>, LossReport)> {
    let t = rng.gen_range(1..=ctx.schedule.steps());
    let noise = gaussian_grid(ex.target_sdf.dims(), ex.target_sdf.spacing(), rng)?;
    let x_t = q_sample(&ex.target_sdf, t, &noise, ctx.schedule)?;
    let cond = drop_conditioning(&ex.conditioning()?, dropout, ctx.sdf, rng)?;
    let lc = LossConfig {
        weights: ctx.cfg.weights,
        sdf: *ctx.sdf,
        vcs: vcs_active.then_some(ctx.vcs),
        overlap_active: true,
    };
    super::backward(params, &x_t, &cond, t, &ex.targets(), &lc)
}

/// Loss on `examples` at fixed per-case timesteps and noise, without dropout.
pub fn evaluate(
    params: &DenoiserParams,
    examples: &[OrganExample],
    vcs: &VcsModel,
    vcs_active: bool,
    schedule: &NoiseSchedule,
    sdf: &SdfConfig,
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let ctx = Ctx { schedule, sdf, vcs, cfg };
    let reports = examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let mut rng = stream(cfg.seed, &[PURPOSE_VAL, i as u64]);
            example_grad(params, ex, &mut rng, 0.0, vcs_active, &ctx).map(|(_, r)| r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport::mean(&reports))
}

/// AdamW training over shuffled mini-batches with uniformly sampled
/// timesteps. `on_epoch` runs after every epoch (e.g. to checkpoint); a
/// non-finite loss aborts with an error and leaves earlier checkpoints as
/// they were.
#[allow(clippy::too_many_arguments)]
pub fn train(
    mut params: DenoiserParams,
    train_set: &[OrganExample],
    val_set: &[OrganExample],
    vcs: &VcsModel,
    schedule: &NoiseSchedule,
    sdf: &SdfConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&DenoiserParams, &[EpochRecord]) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let ctx = Ctx { schedule, sdf, vcs, cfg };
    let mut opt = AdamW::new(params.len(), cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let warmup = cfg.warmup();
    let mut ema = (cfg.ema_decay > 0.0).then(|| params.clone());
    for epoch in 0..cfg.epochs {
        let vcs_active = epoch >= warmup;
        opt.set_learning_rate(cfg.learning_rate_at(epoch));
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng = stream(cfg.seed, &[PURPOSE_SHUFFLE, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut reports = Vec::with_capacity(train_set.len());
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = stream(cfg.seed, &[PURPOSE_STEP, epoch as u64, i as u64]);
                    example_grad(&params, &train_set[i], &mut rng, cfg.dropout, vcs_active, &ctx)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::Numeric(msg) => Error::Numeric(format!("training diverged at epoch {epoch}: {msg}")),
                    other => other,
                })?;
            // reduce in batch order so the sum is independent of scheduling
            let mut grad = vec![0.0; params.len()];
            for (g, r) in &results {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
                reports.push(*r);
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(c) = cfg.grad_clip {
                let norm = scale * grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > c {
                    scale *= c / norm;
                }
            }
            grad.iter_mut().for_each(|g| *g *= scale);
            opt.step(params.flat_mut(), &grad);
            if let Some(avg) = ema.as_mut() {
                let d = cfg.ema_decay;
                for (a, &p) in avg.flat_mut().iter_mut().zip(params.flat()) {
                    *a = d * *a + (1.0 - d) * p;
                }
            }
        }
        let current = ema.as_ref().unwrap_or(&params);
        let val = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(current, val_set, vcs, vcs_active, schedule, sdf, cfg)?)
        };
        let record = EpochRecord {
            epoch,
            vcs_active,
            train: LossReport::mean(&reports),
            val,
        };
        log::info!(
            "epoch={epoch} total={:.5} l_sdf={:.5} l_bce={:.5} l_ov={:.5} l_vcs={} val_total={}",
            record.train.total,
            record.train.l_sdf,
            record.train.l_bce,
            record.train.l_ov,
            record.train.l_vcs.map_or("-".into(), |v| format!("{v:.5}")),
            record.val.map_or("-".into(), |v| format!("{:.5}", v.total)),
        );
        history.push(record);
        on_epoch(current, &history)?;
    }
    Ok(TrainOutcome { params: ema.unwrap_or(params), history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.0, ..Default::default() };
        let mut opt = AdamW::new(2, &cfg);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn adamw_decay_is_decoupled() {
        let cfg = TrainConfig { learning_rate: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut opt = AdamW::new(1, &cfg);
        let mut p = vec![2.0];
        opt.step(&mut p, &[0.0]);
        assert_eq!(p[0], 2.0 * (1.0 - 0.05));
    }

    #[test]
    fn zero_lr_keeps_params() {
        let cfg = TrainConfig { learning_rate: 0.0, ..Default::default() };
        let mut opt = AdamW::new(3, &cfg);
        let mut p = vec![0.25, -3.5, 7.0];
        for _ in 0..10 {
            opt.step(&mut p, &[1.0, -2.0, 0.1]);
        }
        assert_eq!(p, vec![0.25, -3.5, 7.0]);
    }

    #[test]
    fn cosine_decay_endpoints() {
        let cfg = TrainConfig { epochs: 11, learning_rate: 1e-3, final_lr_fraction: 0.1, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(0), 1e-3);
        assert!((cfg.learning_rate_at(10) - 1e-4).abs() < 1e-18);
        assert!((cfg.learning_rate_at(5) - 5.5e-4).abs() < 1e-15);
        let flat = TrainConfig { epochs: 11, ..Default::default() };
        assert!((0..11).all(|e| flat.learning_rate_at(e) == flat.learning_rate));
        assert!(TrainConfig { final_lr_fraction: 1.5, ..Default::default() }.validate().is_err());
    }
}
