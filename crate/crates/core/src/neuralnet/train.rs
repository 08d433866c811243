//! Training loop, per-epoch learning-rate schedule and inference.

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::network::{backward_sample, forward_sample, Architecture, NetworkParams, Workspace};
use super::ops::masked_mse;
use super::NnError;
use crate::assembly::select_clearest;
use crate::member::DataMember;
use crate::metric::cpsnr;
use crate::raster::{Image, Plane};
use crate::seed::{derive, rng, Stream};

/// Number of LR frames fed to the network.
pub const INPUT_FRAMES: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Ignore concealed HR pixels in the loss.
    pub mask_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 4,
            lr_initial: 1e-3,
            lr_final: 7.666e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            mask_loss: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: &str| Err(NnError::Config(msg.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr_final > 0.0 && self.lr_final.is_finite() && self.lr_initial.is_finite()) {
            return bad("learning rates must be positive and finite");
        }
        if self.lr_final >= self.lr_initial {
            return bad("lr_final must be below lr_initial");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        Ok(())
    }
}

/// Learning rate for `epoch` (0-based): exponential interpolation from
/// `lr_initial` at the first epoch to `lr_final` at the last.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.lr_initial;
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    cfg.lr_initial * (cfg.lr_final / cfg.lr_initial).powf(t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-sample losses seen during the epoch.
    pub train_loss: f64,
    /// Mean cPSNR on the validation members, when there are any.
    pub val_cpsnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub history: Vec<EpochRecord>,
}

/// The five clearest LR frames of `member` stacked channel-first, clearest
/// first.
pub fn stack_inputs(member: &DataMember) -> Result<(Vec<f32>, usize, usize), NnError> {
    let picks = select_clearest(member, INPUT_FRAMES)?;
    let (w, h) = member.lrs()[picks[0]].image.dims();
    let mut out = Vec::with_capacity(INPUT_FRAMES * w * h);
    for i in picks {
        let img = &member.lrs()[i].image;
        if img.dims() != (w, h) {
            return Err(NnError::Shape("LR frames differ in size".into()));
        }
        out.extend(img.as_slice().iter().map(|&v| v as f32));
    }
    Ok((out, h, w))
}

struct Sample {
    input: Vec<f32>,
    h: usize,
    w: usize,
    target: Vec<f32>,
    mask: Option<Vec<bool>>,
}

fn prepare(member: &DataMember, mask_loss: bool) -> Result<Sample, NnError> {
    let (input, h, w) = stack_inputs(member)?;
    Ok(Sample {
        input,
        h,
        w,
        target: member.hr().as_slice().iter().map(|&v| v as f32).collect(),
        mask: mask_loss.then(|| member.hr_mask().as_slice().to_vec()),
    })
}

/// Forward pass for one member, unclamped, as an HR-sized plane.
pub fn predict(params: &NetworkParams<f32>, member: &DataMember) -> Result<Plane, NnError> {
    let (input, h, w) = stack_inputs(member)?;
    let mut ws = Workspace::new();
    forward_sample(params, &input, h, w, &mut ws)?;
    let s = params.arch().deconv.stride;
    let data = ws.output().iter().map(|&v| f64::from(v)).collect();
    Plane::new(w * s, h * s, data).map_err(|e| NnError::Shape(e.to_string()))
}

/// Super-resolved image for one member, clamped to `[0, 1]`.
pub fn infer(params: &NetworkParams<f32>, member: &DataMember) -> Result<Image, NnError> {
    Ok(predict(params, member)?.clamp_to_image())
}

/// cPSNR of the network output for every member.
pub fn score_members(params: &NetworkParams<f32>, members: &[DataMember]) -> Result<Vec<f64>, NnError> {
    members
        .iter()
        .map(|m| {
            let sr = infer(params, m)?;
            Ok(cpsnr(m.hr(), m.hr_mask(), &sr)?.cpsnr)
        })
        .collect()
}

/// Mean per-sample loss of `params` over `members`, skipping members with
/// no clear HR pixel.
pub fn mean_loss(
    params: &NetworkParams<f32>,
    members: &[DataMember],
    mask_loss: bool,
) -> Result<f64, NnError> {
    let mut ws = Workspace::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for m in members {
        let s = prepare(m, mask_loss)?;
        forward_sample(params, &s.input, s.h, s.w, &mut ws)?;
        if let Some((loss, _)) = masked_mse(ws.output(), &s.target, s.mask.as_deref()) {
            total += loss;
            count += 1;
        }
    }
    Ok(if count == 0 { f64::NAN } else { total / count as f64 })
}

/// Trains a freshly initialized network on `train_set`, scoring `val_set`
/// after every epoch.
pub fn train(
    train_set: &[DataMember],
    val_set: &[DataMember],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    let params = NetworkParams::init(Architecture::MISR, cfg.seed);
    train_from(params, train_set, val_set, cfg)
}

/// [`train`] starting from the given parameters.
pub fn train_from(
    mut params: NetworkParams<f32>,
    train_set: &[DataMember],
    val_set: &[DataMember],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NnError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(NnError::Config("empty training set".into()));
    }
    let samples = train_set
        .iter()
        .map(|m| prepare(m, cfg.mask_loss))
        .collect::<Result<Vec<_>, _>>()?;

    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.2.len()).collect();
    let mut opt = Adam::new(&sizes, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut grads = NetworkParams::<f32>::zeros(*params.arch());
    let mut ws = Workspace::new();
    let mut d_out: Vec<f32> = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = learning_rate(cfg, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng(derive(cfg.seed, Stream::Shuffle, epoch as u64)));

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill(0.0);
            let mut used = 0usize;
            for &i in batch {
                let s = &samples[i];
                forward_sample(&params, &s.input, s.h, s.w, &mut ws)?;
                let Some((loss, grad)) = masked_mse(ws.output(), &s.target, s.mask.as_deref()) else {
                    warn!("training sample {i} has no clear target pixel; skipped");
                    continue;
                };
                if !loss.is_finite() {
                    return Err(NnError::Divergence { epoch, what: "loss" });
                }
                loss_sum += loss;
                loss_count += 1;
                used += 1;
                d_out.clear();
                d_out.extend(grad);
                backward_sample(&params, &d_out, &mut ws, &mut grads)?;
            }
            if used == 0 {
                continue;
            }
            let inv = 1.0 / used as f32;
            for g in grads.tensors_mut() {
                g.iter_mut().for_each(|v| *v *= inv);
            }
            let grad_views: Vec<&[f32]> = grads.tensors().into_iter().map(|t| t.2).collect();
            if grad_views.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NnError::Divergence { epoch, what: "gradient" });
            }
            opt.step(lr, &mut params.tensors_mut(), &grad_views);
        }
        if !params.is_finite() {
            return Err(NnError::Divergence { epoch, what: "parameters" });
        }

        let train_loss = if loss_count == 0 {
            f64::NAN
        } else {
            loss_sum / loss_count as f64
        };
        let val_cpsnr = if val_set.is_empty() {
            None
        } else {
            let scores = score_members(&params, val_set)?;
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        };
        info!(
            "epoch {}/{}: lr {lr:.3e}, train loss {train_loss:.6e}{}",
            epoch + 1,
            cfg.epochs,
            val_cpsnr.map_or(String::new(), |v| format!(", val cPSNR {v:.3} dB"))
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_cpsnr,
        });
    }
    Ok(TrainOutcome { params, history })
}
