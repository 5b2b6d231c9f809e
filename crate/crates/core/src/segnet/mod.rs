//! A desk-scale semantic segmentation network for ger detection.
//!
//! The architecture follows the DeepLab pattern at a small size: a strided
//! convolutional backbone, atrous spatial pyramid pooling (parallel atrous
//! convolutions fused by a 1×1 convolution), a 1×1 classifier producing two
//! logit channels, and bilinear upsampling back to the input resolution.
//! Gradients are computed exactly by a hand-written reverse pass.

mod checkpoint;
mod conv;
mod loss;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use conv::{atrous_conv, Conv2d, ConvSpec};
pub use loss::{
    ce_loss, focal_loss, FocalAggregation, LossConfig, LossKind, LossOutput, WeightBy,
};
pub use model::{ModelConfig, ParamView, SegModel, Stage};
pub use train::{
    backward, image_to_input, predict, train, write_training_log, EpochLog, Prediction, TrainConfig,
    TrainOutcome, TrainingSample,
};

use crate::error::{Error, Result};

/// Channel-major (`C×H×W`) real feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::invalid("shape", "dimensions must be ≥ 1"));
        }
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                expected: format!("{channels}x{height}x{width}"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Zeroes gradient entries where the ReLU output was not positive.
    pub(crate) fn mask_by_relu(&mut self, activated: &FeatureMap) {
        for (g, &a) in self.data.iter_mut().zip(&activated.data) {
            if a <= 0.0 {
                *g = 0.0;
            }
        }
    }

    /// Stacks maps of equal spatial size along the channel axis.
    pub fn concat(maps: &[FeatureMap]) -> Result<FeatureMap> {
        let first = maps.first().ok_or(Error::Empty("feature maps"))?;
        let (h, w) = (first.height, first.width);
        if maps.iter().any(|m| m.height != h || m.width != w) {
            return Err(Error::ShapeMismatch {
                expected: format!("{h}x{w} maps"),
                got: "maps of differing size".into(),
            });
        }
        let channels = maps.iter().map(|m| m.channels).sum();
        let mut data = Vec::with_capacity(channels * h * w);
        for m in maps {
            data.extend_from_slice(&m.data);
        }
        FeatureMap::from_vec(channels, h, w, data)
    }

    /// Splits along channels into consecutive groups of the given sizes.
    pub(crate) fn split_channels(&self, sizes: &[usize]) -> Vec<FeatureMap> {
        let n = self.height * self.width;
        let mut start = 0;
        sizes
            .iter()
            .map(|&c| {
                let m = FeatureMap {
                    channels: c,
                    height: self.height,
                    width: self.width,
                    data: self.data[start * n..(start + c) * n].to_vec(),
                };
                start += c;
                m
            })
            .collect()
    }
}

/// Atrous spatial pyramid pooling: parallel atrous convolutions, each followed
/// by ReLU, concatenated along channels and fused by `fuse` (plus ReLU).
pub fn aspp(m: &FeatureMap, branches: &[Conv2d], fuse: &Conv2d) -> Result<FeatureMap> {
    if branches.is_empty() {
        return Err(Error::Empty("aspp rates"));
    }
    let outs = branches
        .iter()
        .map(|b| {
            if b.spec.stride != 1 {
                return Err(Error::invalid("aspp", "branches must use stride 1"));
            }
            let mut y = atrous_conv(m, b)?;
            y.relu_in_place();
            Ok(y)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut y = atrous_conv(&FeatureMap::concat(&outs)?, fuse)?;
    y.relu_in_place();
    Ok(y)
}

/// Bilinear resampling (half-pixel centers) between grid sizes.
pub(crate) struct Resampler {
    rows: Vec<(usize, usize, f64)>,
    cols: Vec<(usize, usize, f64)>,
    in_h: usize,
    in_w: usize,
}

impl Resampler {
    pub(crate) fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        fn axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
            let scale = n_in as f64 / n_out as f64;
            (0..n_out)
                .map(|o| {
                    let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                    let i0 = src.floor() as usize;
                    let i1 = (i0 + 1).min(n_in - 1);
                    (i0, i1, src - i0 as f64)
                })
                .collect()
        }
        Resampler {
            rows: axis(in_h, out_h),
            cols: axis(in_w, out_w),
            in_h,
            in_w,
        }
    }

    pub(crate) fn forward(&self, x: &FeatureMap) -> FeatureMap {
        let (oh, ow) = (self.rows.len(), self.cols.len());
        let mut out = Vec::with_capacity(x.channels * oh * ow);
        for c in 0..x.channels {
            let plane = x.channel(c);
            for &(y0, y1, fy) in &self.rows {
                let r0 = &plane[y0 * self.in_w..(y0 + 1) * self.in_w];
                let r1 = &plane[y1 * self.in_w..(y1 + 1) * self.in_w];
                for &(x0, x1, fx) in &self.cols {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
                    out.push(top + (bottom - top) * fy);
                }
            }
        }
        FeatureMap {
            channels: x.channels,
            height: oh,
            width: ow,
            data: out,
        }
    }

    pub(crate) fn backward(&self, dy: &FeatureMap) -> FeatureMap {
        let ow = self.cols.len();
        let mut dx = FeatureMap::zeros(dy.channels, self.in_h, self.in_w);
        let n_in = self.in_h * self.in_w;
        for c in 0..dy.channels {
            let g = dy.channel(c);
            let plane = &mut dx.data[c * n_in..(c + 1) * n_in];
            for (oy, &(y0, y1, fy)) in self.rows.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in self.cols.iter().enumerate() {
                    let v = g[oy * ow + ox];
                    plane[y0 * self.in_w + x0] += v * (1.0 - fy) * (1.0 - fx);
                    plane[y0 * self.in_w + x1] += v * (1.0 - fy) * fx;
                    plane[y1 * self.in_w + x0] += v * fy * (1.0 - fx);
                    plane[y1 * self.in_w + x1] += v * fy * fx;
                }
            }
        }
        dx
    }
}
