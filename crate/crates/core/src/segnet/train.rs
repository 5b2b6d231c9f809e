use std::io::Write;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureMap, LossConfig, SegModel};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, Aggregation};
use crate::raster::Mask;
use crate::scene_labels::LabeledTile;

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Evaluate on the held-out set every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 30,
            batch_size: 4,
            rng_seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning_rate", "must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        Ok(())
    }
}

/// Network input and its binary target.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub input: FeatureMap,
    pub target: Mask,
}

impl TrainingSample {
    pub fn from_tile(tile: &LabeledTile) -> Self {
        TrainingSample {
            input: image_to_input(&tile.image),
            target: tile.mask.clone(),
        }
    }
}

/// RGB image as a `3×H×W` map scaled to `[0, 1]`.
pub fn image_to_input(img: &RgbImage) -> FeatureMap {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let n = w * h;
    let mut data = vec![0.0; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = px.0[c] as f64 / 255.0;
        }
    }
    FeatureMap::from_vec(3, h, w, data).expect("image has positive size")
}

/// Mean loss over `batch` and its exact gradient with respect to every
/// model parameter.
pub fn backward(model: &SegModel, batch: &[TrainingSample], loss: &LossConfig) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for s in batch {
        let acts = model.forward_cached(&s.input)?;
        let out = loss.evaluate(&acts.logits, &s.target)?;
        if !out.value.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        total += out.value;
        model.backward_from(&s.input, &acts, &out.grad, &mut grad);
    }
    let k = batch.len() as f64;
    for g in &mut grad {
        *g /= k;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    Ok((total / k, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: Mask,
    /// Softmax class probabilities, `2×H×W`.
    pub scores: FeatureMap,
}

/// Per-pixel argmax (ties to class 0) with softmax scores.
pub fn predict(model: &SegModel, input: &FeatureMap) -> Result<Prediction> {
    let logits = model.forward(input)?;
    let (h, w) = (logits.height(), logits.width());
    let (l0, l1) = (logits.channel(0), logits.channel(1));
    let mut mask = Vec::with_capacity(h * w);
    let mut p0 = Vec::with_capacity(h * w);
    let mut p1 = Vec::with_capacity(h * w);
    for (&a, &b) in l0.iter().zip(l1) {
        mask.push(u8::from(b > a));
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        p0.push(ea / (ea + eb));
        p1.push(eb / (ea + eb));
    }
    p0.extend(p1);
    Ok(Prediction {
        mask: Mask::from_values(w, h, mask)?,
        scores: FeatureMap::from_vec(2, h, w, p0)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval_f1_ger: Option<f64>,
    pub eval_miou_ger: Option<f64>,
    pub eval_pixel_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SegModel,
    pub log: Vec<EpochLog>,
}

/// Mini-batch SGD with momentum (`v ← μv + g; θ ← θ − ηv`). Shuffling uses a
/// seeded ChaCha stream so a run is reproducible bit for bit.
pub fn train(
    mut model: SegModel,
    train_set: &[TrainingSample],
    eval_set: &[TrainingSample],
    cfg: &TrainConfig,
    loss: &LossConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut velocity = vec![0.0; model.num_params()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            step += 1;
            let (value, grad) = backward(&model, &batch, loss).map_err(|e| match e {
                Error::NonFinite(_) => Error::Diverged {
                    epoch,
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
            if value > DIVERGENCE_LOSS {
                return Err(Error::Diverged { epoch, step, loss: value });
            }
            sum += value;
            batches += 1;
            for ((p, v), g) in model.params_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
        }
        let mut entry = EpochLog {
            epoch,
            train_loss: sum / batches as f64,
            eval_f1_ger: None,
            eval_miou_ger: None,
            eval_pixel_acc: None,
        };
        if cfg.eval_every > 0 && epoch % cfg.eval_every == 0 && !eval_set.is_empty() {
            let preds = eval_set
                .iter()
                .map(|s| predict(&model, &s.input).map(|p| p.mask))
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(preds.iter().zip(eval_set.iter().map(|s| &s.target)), Aggregation::Pooled)?;
            entry.eval_f1_ger = Some(report.ger().f1);
            entry.eval_miou_ger = Some(report.miou);
            entry.eval_pixel_acc = Some(report.pixel_accuracy);
        }
        log.push(entry);
    }
    Ok(TrainOutcome { model, log })
}

/// `epoch,train_loss,eval_f1_ger,eval_miou_ger,eval_pixel_acc`; epochs
/// without evaluation leave the metric columns empty.
pub fn write_training_log<W: Write>(log: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "eval_f1_ger", "eval_miou_ger", "eval_pixel_acc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            opt(e.eval_f1_ger),
            opt(e.eval_miou_ger),
            opt(e.eval_pixel_acc),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<training log>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::model::Stage;
    use crate::segnet::ModelConfig;

    fn micro_config(seed: u64) -> ModelConfig {
        ModelConfig {
            in_channels: 3,
            backbone: vec![Stage { channels: 4, stride: 1 }, Stage { channels: 5, stride: 2 }],
            aspp_rates: vec![1, 2],
            aspp_channels: 3,
            fuse_channels: 4,
            seed,
        }
    }

    fn sample(seed: u64, h: usize, w: usize) -> TrainingSample {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * h * w).map(|_| rng.random::<f64>()).collect();
        let target = (0..h * w).map(|_| u8::from(rng.random::<f64>() < 0.3)).collect();
        TrainingSample {
            input: FeatureMap::from_vec(3, h, w, data).unwrap(),
            target: Mask::from_values(w, h, target).unwrap(),
        }
    }

    /// Relative error with a floor so near-zero components don't dominate.
    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn check_gradient(model: &SegModel, batch: &[TrainingSample], loss: &LossConfig) -> f64 {
        let (_, grad) = backward(model, batch, loss).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in (0..model.num_params()).step_by(3) {
            let mut p = model.clone();
            p.params_mut()[i] += h;
            let mut q = model.clone();
            q.params_mut()[i] -= h;
            let lp = backward(&p, batch, loss).unwrap().0;
            let lq = backward(&q, batch, loss).unwrap().0;
            let fd = (lp - lq) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad[i]));
        }
        worst
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let m = SegModel::new(micro_config(3)).unwrap();
        let batch = [sample(1, 8, 8), sample(2, 8, 8)];
        let err = check_gradient(&m, &batch, &LossConfig::cross_entropy());
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let m = SegModel::new(micro_config(4)).unwrap();
        let batch = [sample(5, 8, 8)];
        let err = check_gradient(&m, &batch, &LossConfig::default());
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_kernels_gradient() {
        let m = SegModel::zeroed(micro_config(0)).unwrap();
        let batch = [sample(9, 8, 8)];
        let err = check_gradient(&m, &batch, &LossConfig::cross_entropy());
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn perfect_prediction_has_vanishing_gradient() {
        let mut m = SegModel::zeroed(micro_config(0)).unwrap();
        m.param_mut("head.bias").unwrap().copy_from_slice(&[40.0, -40.0]);
        let mut s = sample(1, 8, 8);
        s.target = Mask::zeros(8, 8);
        let (l, g) = backward(&m, &[s], &LossConfig::cross_entropy()).unwrap();
        assert!(l < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn biased_head_predicts_background() {
        let mut m = SegModel::new(micro_config(1)).unwrap();
        m.param_mut("head.bias").unwrap().copy_from_slice(&[1e6, -1e6]);
        let p = predict(&m, &sample(3, 16, 16).input).unwrap();
        assert_eq!(p.mask.count_ones(), 0);
        let again = predict(&m, &sample(3, 16, 16).input).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn zero_learning_rate_and_determinism() {
        let data: Vec<_> = (0..3).map(|i| sample(i, 8, 8)).collect();
        let m = SegModel::new(micro_config(2)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 2,
            eval_every: 0,
            ..Default::default()
        };
        let out = train(m.clone(), &data, &[], &cfg, &LossConfig::default()).unwrap();
        assert_eq!(out.model.params(), m.params());

        let cfg = TrainConfig { learning_rate: 0.05, ..cfg };
        let a = train(m.clone(), &data, &[], &cfg, &LossConfig::default()).unwrap();
        let b = train(m, &data, &[], &cfg, &LossConfig::default()).unwrap();
        assert_eq!(a.model.params(), b.model.params());
        assert_ne!(a.model.params(), out.model.params());
    }

    #[test]
    fn divergence_is_reported() {
        let data: Vec<_> = (0..2).map(|i| sample(i, 8, 8)).collect();
        let m = SegModel::new(micro_config(2)).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e6,
            epochs: 20,
            batch_size: 1,
            eval_every: 0,
            ..Default::default()
        };
        let r = train(m, &data, &[], &cfg, &LossConfig::cross_entropy());
        assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    }

    #[test]
    fn log_csv_header() {
        let log = [EpochLog {
            epoch: 1,
            train_loss: 0.5,
            eval_f1_ger: Some(0.7),
            eval_miou_ger: None,
            eval_pixel_acc: None,
        }];
        let mut buf = Vec::new();
        write_training_log(&log, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "epoch,train_loss,eval_f1_ger,eval_miou_ger,eval_pixel_acc\n1,0.5,0.7,,\n");
    }
}
