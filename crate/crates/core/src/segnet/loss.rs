//! Pixel-wise cross-entropy and the class-weighted focal variant.
//!
//! Per pixel `i` with logits `ŷ_i` and target `t_i`:
//!
//! ```text
//! CE_i = -LogSoftmax(ŷ_i)[t_i]
//! α_i  = θ[argmax ŷ_i]            (ties go to class 0)
//! FL_i = CE_i · (1 - exp(-CE_i)) · α_i
//! ```
//!
//! Scalars are means over all pixels. `α` and the argmax are constants under
//! differentiation.

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};
use crate::raster::Mask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    #[default]
    Focal,
}

/// Where the focal modulation is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalAggregation {
    /// Modulate each pixel's CE, then average.
    #[default]
    PerPixel,
    /// Modulate the averaged CE once, weighted by the mean pixel weight.
    OnMean,
}

/// Which class selects a pixel's weight `θ_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightBy {
    #[default]
    PredictionArgmax,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// `(θ_non_ger, θ_ger)`.
    pub class_weights: [f64; 2],
    #[serde(default)]
    pub focal_aggregation: FocalAggregation,
    #[serde(default)]
    pub weight_by: WeightBy,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Focal,
            class_weights: [0.1, 0.9],
            focal_aggregation: FocalAggregation::PerPixel,
            weight_by: WeightBy::PredictionArgmax,
        }
    }
}

impl LossConfig {
    pub fn cross_entropy() -> Self {
        LossConfig {
            kind: LossKind::CrossEntropy,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("class_weights", "weights must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn evaluate(&self, logits: &FeatureMap, target: &Mask) -> Result<LossOutput> {
        match self.kind {
            LossKind::CrossEntropy => ce_loss(logits, target),
            LossKind::Focal => focal_with(logits, target, self),
        }
    }
}

/// Scalar loss, per-pixel losses and the gradient of the scalar with respect
/// to the logits (same layout as the logits).
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub per_pixel: Vec<f64>,
    pub grad: FeatureMap,
}

struct PixelTerms {
    ce: Vec<f64>,
    /// softmax minus one-hot target, per class plane
    dce: [Vec<f64>; 2],
    argmax: Vec<u8>,
}

fn check_shapes(logits: &FeatureMap, target: &Mask) -> Result<()> {
    if logits.channels() != 2 || logits.height() != target.height() || logits.width() != target.width() {
        return Err(Error::ShapeMismatch {
            expected: format!("2x{}x{} logits", target.height(), target.width()),
            got: format!("{}x{}x{}", logits.channels(), logits.height(), logits.width()),
        });
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite("logits"));
    }
    Ok(())
}

fn pixel_terms(logits: &FeatureMap, target: &Mask) -> PixelTerms {
    let (l0, l1) = (logits.channel(0), logits.channel(1));
    let n = l0.len();
    let mut ce = Vec::with_capacity(n);
    let mut d0 = Vec::with_capacity(n);
    let mut d1 = Vec::with_capacity(n);
    let mut argmax = Vec::with_capacity(n);
    for ((&a, &b), &t) in l0.iter().zip(l1).zip(target.as_slice()) {
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        let lse = m + (ea + eb).ln();
        let (p0, p1) = (ea / (ea + eb), eb / (ea + eb));
        let target_logit = if t != 0 { b } else { a };
        ce.push(lse - target_logit);
        d0.push(p0 - if t == 0 { 1.0 } else { 0.0 });
        d1.push(p1 - if t != 0 { 1.0 } else { 0.0 });
        argmax.push(u8::from(b > a));
    }
    PixelTerms {
        ce,
        dce: [d0, d1],
        argmax,
    }
}

fn grad_map(logits: &FeatureMap, scale: impl Fn(usize) -> f64, dce: &[Vec<f64>; 2]) -> FeatureMap {
    let n = dce[0].len();
    let mut g = Vec::with_capacity(2 * n);
    for plane in dce {
        g.extend(plane.iter().enumerate().map(|(i, d)| d * scale(i)));
    }
    FeatureMap::from_vec(2, logits.height(), logits.width(), g).expect("logit shape")
}

/// Mean pixel-wise cross-entropy.
pub fn ce_loss(logits: &FeatureMap, target: &Mask) -> Result<LossOutput> {
    check_shapes(logits, target)?;
    let terms = pixel_terms(logits, target);
    let n = terms.ce.len() as f64;
    let value = terms.ce.iter().sum::<f64>() / n;
    let grad = grad_map(logits, |_| 1.0 / n, &terms.dce);
    Ok(LossOutput {
        value,
        per_pixel: terms.ce,
        grad,
    })
}

/// Focal loss with class weights `θ`, per-pixel aggregation and
/// prediction-argmax weighting.
pub fn focal_loss(logits: &FeatureMap, target: &Mask, class_weights: [f64; 2]) -> Result<LossOutput> {
    let cfg = LossConfig {
        kind: LossKind::Focal,
        class_weights,
        ..Default::default()
    };
    focal_with(logits, target, &cfg)
}

fn focal_with(logits: &FeatureMap, target: &Mask, cfg: &LossConfig) -> Result<LossOutput> {
    cfg.validate()?;
    check_shapes(logits, target)?;
    let terms = pixel_terms(logits, target);
    let theta = cfg.class_weights;
    let alpha: Vec<f64> = match cfg.weight_by {
        WeightBy::PredictionArgmax => terms.argmax.iter().map(|&c| theta[c as usize]).collect(),
        WeightBy::Target => target.as_slice().iter().map(|&t| theta[usize::from(t != 0)]).collect(),
    };
    let n = terms.ce.len() as f64;
    // d/dx [x (1 - e^{-x})] = 1 - e^{-x} + x e^{-x}
    let modulation = |ce: f64| ce * (1.0 - (-ce).exp());
    let slope = |ce: f64| {
        let e = (-ce).exp();
        1.0 - e + ce * e
    };
    match cfg.focal_aggregation {
        FocalAggregation::PerPixel => {
            let per_pixel: Vec<f64> = terms
                .ce
                .iter()
                .zip(&alpha)
                .map(|(&ce, &a)| modulation(ce) * a)
                .collect();
            let value = per_pixel.iter().sum::<f64>() / n;
            let grad = grad_map(logits, |i| alpha[i] * slope(terms.ce[i]) / n, &terms.dce);
            Ok(LossOutput {
                value,
                per_pixel,
                grad,
            })
        }
        FocalAggregation::OnMean => {
            let ce_mean = terms.ce.iter().sum::<f64>() / n;
            let alpha_mean = alpha.iter().sum::<f64>() / n;
            let value = modulation(ce_mean) * alpha_mean;
            let k = alpha_mean * slope(ce_mean) / n;
            let grad = grad_map(logits, |_| k, &terms.dce);
            let per_pixel = terms
                .ce
                .iter()
                .zip(&alpha)
                .map(|(&ce, &a)| modulation(ce) * a)
                .collect();
            Ok(LossOutput {
                value,
                per_pixel,
                grad,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_pixel(l0: f64, l1: f64, t: u8) -> (FeatureMap, Mask) {
        (
            FeatureMap::from_vec(2, 1, 1, vec![l0, l1]).unwrap(),
            Mask::from_values(1, 1, vec![t]).unwrap(),
        )
    }

    #[test]
    fn ce_of_uniform_logits_is_ln2() {
        let (l, t) = one_pixel(0.0, 0.0, 1);
        let out = ce_loss(&l, &t).unwrap();
        assert!((out.value - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_tie_breaks_to_class_zero() {
        let (l, t) = one_pixel(0.0, 0.0, 1);
        let out = focal_loss(&l, &t, [0.1, 0.9]).unwrap();
        // ln2 · (1 - e^{-ln2}) · θ0 = ln2 · 0.5 · 0.1
        let expected = std::f64::consts::LN_2 * 0.5 * 0.1;
        assert!((out.value - expected).abs() < 1e-15);
        assert!((out.value - 0.034657).abs() < 1e-6);
    }

    #[test]
    fn perfect_prediction_vanishes() {
        let (l, t) = one_pixel(-40.0, 40.0, 1);
        assert!(ce_loss(&l, &t).unwrap().value < 1e-6);
        assert!(focal_loss(&l, &t, [0.1, 0.9]).unwrap().value < 1e-6);
        let g = ce_loss(&l, &t).unwrap().grad;
        assert!(g.as_slice().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn mean_normalization_invariant_to_replication() {
        let l = FeatureMap::from_vec(2, 1, 2, vec![0.3, -1.0, 0.2, 0.7]).unwrap();
        let t = Mask::from_values(2, 1, vec![1, 0]).unwrap();
        // double H and W with replicated content
        let l2 = FeatureMap::from_vec(
            2, 2, 4,
            vec![0.3, 0.3, -1.0, -1.0, 0.3, 0.3, -1.0, -1.0, 0.2, 0.2, 0.7, 0.7, 0.2, 0.2, 0.7, 0.7],
        )
        .unwrap();
        let t2 = Mask::from_values(4, 2, vec![1, 1, 0, 0, 1, 1, 0, 0]).unwrap();
        let a = ce_loss(&l, &t).unwrap().value;
        let b = ce_loss(&l2, &t2).unwrap().value;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (l, t) = one_pixel(f64::NAN, 0.0, 1);
        assert!(matches!(ce_loss(&l, &t), Err(Error::NonFinite(_))));
        let (l, t) = one_pixel(0.0, 0.0, 1);
        assert!(focal_loss(&l, &t, [-0.1, 0.9]).is_err());
        let wrong = Mask::from_values(2, 1, vec![0, 1]).unwrap();
        assert!(matches!(ce_loss(&l, &wrong), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn target_weighting_and_on_mean_variants() {
        let (l, t) = one_pixel(0.0, 0.0, 1);
        let cfg = LossConfig {
            weight_by: WeightBy::Target,
            ..Default::default()
        };
        let v = cfg.evaluate(&l, &t).unwrap().value;
        assert!((v - std::f64::consts::LN_2 * 0.5 * 0.9).abs() < 1e-15);
        let cfg = LossConfig {
            focal_aggregation: FocalAggregation::OnMean,
            ..Default::default()
        };
        // a single pixel: both aggregations coincide
        let v = cfg.evaluate(&l, &t).unwrap().value;
        assert!((v - 0.034657359).abs() < 1e-9);
    }

    fn pixels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(-8.0f64..8.0, 2 * n),
                proptest::collection::vec(0u8..2, n),
            )
        })
    }

    fn build(v: &[f64], t: &[u8]) -> (FeatureMap, Mask) {
        let n = t.len();
        (
            FeatureMap::from_vec(2, 1, n, v.to_vec()).unwrap(),
            Mask::from_values(n, 1, t.to_vec()).unwrap(),
        )
    }

    proptest! {
        #[test]
        fn losses_non_negative_and_damped((v, t) in pixels(), w0 in 0.0f64..2.0, w1 in 0.0f64..2.0) {
            let (l, m) = build(&v, &t);
            let ce = ce_loss(&l, &m).unwrap();
            let fl = focal_loss(&l, &m, [w0, w1]).unwrap();
            prop_assert!(ce.value >= 0.0 && fl.value >= 0.0);
            for (f, c) in fl.per_pixel.iter().zip(&ce.per_pixel) {
                prop_assert!(*f <= c * w0.max(w1) + 1e-15);
            }
        }

        #[test]
        fn theta_scaling_is_linear((v, t) in pixels(), c in 0.1f64..10.0) {
            let (l, m) = build(&v, &t);
            let a = focal_loss(&l, &m, [0.1, 0.9]).unwrap().value;
            let b = focal_loss(&l, &m, [0.1 * c, 0.9 * c]).unwrap().value;
            prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn logit_gradients_match_finite_differences((v, t) in pixels(), agg in any::<bool>()) {
            let (l, m) = build(&v, &t);
            let cfg = LossConfig {
                focal_aggregation: if agg { FocalAggregation::OnMean } else { FocalAggregation::PerPixel },
                ..Default::default()
            };
            let out = cfg.evaluate(&l, &m).unwrap();
            let h = 1e-6;
            for i in 0..v.len() {
                let mut p = v.clone();
                p[i] += h;
                let mut q = v.clone();
                q[i] -= h;
                let (lp, _) = build(&p, &t);
                let (lq, _) = build(&q, &t);
                let vp = cfg.evaluate(&lp, &m).unwrap();
                let vq = cfg.evaluate(&lq, &m).unwrap();
                // skip perturbations that flip the stop-gradient argmax
                let n = t.len();
                let px = i % n;
                let flips = |x: &FeatureMap| x.get(1, 0, px) > x.get(0, 0, px);
                if flips(&lp) != flips(&l) || flips(&lq) != flips(&l) {
                    continue;
                }
                let fd = (vp.value - vq.value) / (2.0 * h);
                prop_assert!((fd - out.grad.as_slice()[i]).abs() < 1e-7, "{} vs {}", fd, out.grad.as_slice()[i]);
            }
        }
    }
}
