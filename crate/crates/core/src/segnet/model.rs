use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::conv::{conv_backward, conv_forward};
use super::{ConvSpec, FeatureMap, Resampler};
use crate::error::{Error, Result};

/// One backbone stage: a 3×3 convolution followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub backbone: Vec<Stage>,
    pub aspp_rates: Vec<usize>,
    pub aspp_channels: usize,
    pub fuse_channels: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// 8→16→32→32 with two stride-2 stages, ASPP rates (1, 2, 4).
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            backbone: vec![
                Stage { channels: 8, stride: 1 },
                Stage { channels: 16, stride: 2 },
                Stage { channels: 32, stride: 2 },
                Stage { channels: 32, stride: 1 },
            ],
            aspp_rates: vec![1, 2, 4],
            aspp_channels: 16,
            fuse_channels: 32,
            seed: 7,
        }
    }
}

impl ModelConfig {
    /// A faster variant for single-core CPU training: the first stage already
    /// downsamples, and widths are halved.
    pub fn tiny() -> Self {
        ModelConfig {
            backbone: vec![
                Stage { channels: 8, stride: 2 },
                Stage { channels: 16, stride: 2 },
                Stage { channels: 16, stride: 1 },
            ],
            aspp_channels: 8,
            fuse_channels: 16,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.aspp_channels == 0 || self.fuse_channels == 0 {
            return Err(Error::invalid("model", "channel counts must be positive"));
        }
        if self.backbone.is_empty() {
            return Err(Error::Empty("backbone stages"));
        }
        if self.aspp_rates.is_empty() {
            return Err(Error::Empty("aspp rates"));
        }
        if self.backbone.iter().any(|s| s.channels == 0 || s.stride == 0) {
            return Err(Error::invalid("backbone", "stages need positive channels and stride"));
        }
        Ok(())
    }
}

/// Named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamView {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone)]
struct Layer {
    spec: ConvSpec,
    weight: usize,
    bias: usize,
}

/// Backbone stages, ASPP branches, fusion and the 1×1 classifier head, all
/// stored in one flat parameter vector.
#[derive(Debug, Clone)]
pub struct SegModel {
    config: ModelConfig,
    layers: Vec<Layer>,
    views: Vec<ParamView>,
    params: Vec<f64>,
}

pub(crate) struct Activations {
    /// Post-ReLU output of each backbone stage.
    stages: Vec<FeatureMap>,
    branches: Vec<FeatureMap>,
    concat: FeatureMap,
    fused: FeatureMap,
    resampler: Resampler,
    pub(crate) logits: FeatureMap,
}

impl SegModel {
    /// He-initialized model.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let mut model = Self::zeroed(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        for layer in &model.layers {
            let fan_in = (layer.spec.in_channels * layer.spec.kernel_size * layer.spec.kernel_size) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for w in &mut model.params[layer.weight..layer.weight + layer.spec.weight_len()] {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(model)
    }

    /// Model with every parameter zero.
    pub fn zeroed(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut specs: Vec<(String, ConvSpec)> = Vec::new();
        let mut c = config.in_channels;
        for (i, s) in config.backbone.iter().enumerate() {
            specs.push((format!("backbone.{i}"), ConvSpec::new(c, s.channels, 3, 1, s.stride)?));
            c = s.channels;
        }
        for (j, &r) in config.aspp_rates.iter().enumerate() {
            specs.push((format!("aspp.{j}"), ConvSpec::new(c, config.aspp_channels, 3, r, 1)?));
        }
        let cat = config.aspp_channels * config.aspp_rates.len();
        specs.push(("aspp.fuse".into(), ConvSpec::new(cat, config.fuse_channels, 1, 1, 1)?));
        specs.push(("head".into(), ConvSpec::new(config.fuse_channels, 2, 1, 1, 1)?));

        let mut layers = Vec::with_capacity(specs.len());
        let mut views = Vec::with_capacity(2 * specs.len());
        let mut offset = 0;
        for (name, spec) in specs {
            let k = spec.kernel_size;
            views.push(ParamView {
                name: format!("{name}.weight"),
                shape: vec![spec.out_channels, spec.in_channels, k, k],
                offset,
                len: spec.weight_len(),
            });
            let weight = offset;
            offset += spec.weight_len();
            views.push(ParamView {
                name: format!("{name}.bias"),
                shape: vec![spec.out_channels],
                offset,
                len: spec.out_channels,
            });
            let bias = offset;
            offset += spec.out_channels;
            layers.push(Layer { spec, weight, bias });
        }
        Ok(SegModel {
            config,
            layers,
            views,
            params: vec![0.0; offset],
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn views(&self) -> &[ParamView] {
        &self.views
    }

    pub fn view(&self, name: &str) -> Option<&ParamView> {
        self.views.iter().find(|v| v.name == name)
    }

    /// Mutable slice of a named parameter block.
    pub fn param_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let v = self.view(name)?.clone();
        Some(&mut self.params[v.offset..v.offset + v.len])
    }

    pub(crate) fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", self.params.len()),
                got: params.len().to_string(),
            });
        }
        self.params = params;
        Ok(())
    }

    fn n_stages(&self) -> usize {
        self.config.backbone.len()
    }

    fn n_branches(&self) -> usize {
        self.config.aspp_rates.len()
    }

    fn conv(&self, i: usize, x: &FeatureMap) -> FeatureMap {
        let l = &self.layers[i];
        conv_forward(
            &l.spec,
            &self.params[l.weight..l.weight + l.spec.weight_len()],
            &self.params[l.bias..l.bias + l.spec.out_channels],
            x,
        )
    }

    /// Logits (2 channels) at the input's spatial size.
    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        Ok(self.forward_cached(input)?.logits)
    }

    pub(crate) fn forward_cached(&self, input: &FeatureMap) -> Result<Activations> {
        if input.channels() != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} input channels", self.config.in_channels),
                got: format!("{} channels", input.channels()),
            });
        }
        let mut stages = Vec::with_capacity(self.n_stages());
        for i in 0..self.n_stages() {
            let mut y = self.conv(i, stages.last().unwrap_or(input));
            y.relu_in_place();
            stages.push(y);
        }
        let feat = stages.last().expect("non-empty backbone");
        let branches: Vec<FeatureMap> = (0..self.n_branches())
            .map(|j| {
                let mut y = self.conv(self.n_stages() + j, feat);
                y.relu_in_place();
                y
            })
            .collect();
        let concat = FeatureMap::concat(&branches)?;
        let fuse_idx = self.n_stages() + self.n_branches();
        let mut fused = self.conv(fuse_idx, &concat);
        fused.relu_in_place();
        let low = self.conv(fuse_idx + 1, &fused);
        let resampler = Resampler::new(low.height(), low.width(), input.height(), input.width());
        let logits = resampler.forward(&low);
        Ok(Activations {
            stages,
            branches,
            concat,
            fused,
            resampler,
            logits,
        })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂logits`.
    pub(crate) fn backward_from(&self, input: &FeatureMap, acts: &Activations, dlogits: &FeatureMap, grad: &mut [f64]) {
        let ns = self.n_stages();
        let nb = self.n_branches();
        let fuse_idx = ns + nb;

        let dlow = acts.resampler.backward(dlogits);
        let mut dfused = self
            .layer_backward(fuse_idx + 1, &acts.fused, &dlow, grad, true)
            .expect("dx requested");
        dfused.mask_by_relu(&acts.fused);
        let dcat = self
            .layer_backward(fuse_idx, &acts.concat, &dfused, grad, true)
            .expect("dx requested");
        let sizes = vec![self.config.aspp_channels; nb];
        let feat = &acts.stages[ns - 1];
        let mut dfeat = FeatureMap::zeros(feat.channels(), feat.height(), feat.width());
        for (j, mut db) in dcat.split_channels(&sizes).into_iter().enumerate() {
            db.mask_by_relu(&acts.branches[j]);
            let dx = self.layer_backward(ns + j, feat, &db, grad, true).expect("dx requested");
            for (a, b) in dfeat.as_mut_slice().iter_mut().zip(dx.as_slice()) {
                *a += b;
            }
        }
        let mut dy = dfeat;
        for i in (0..ns).rev() {
            dy.mask_by_relu(&acts.stages[i]);
            let x = if i == 0 { input } else { &acts.stages[i - 1] };
            match self.layer_backward(i, x, &dy, grad, i > 0) {
                Some(dx) => dy = dx,
                None => break,
            }
        }
    }

    fn layer_backward(&self, i: usize, x: &FeatureMap, dy: &FeatureMap, grad: &mut [f64], need_dx: bool) -> Option<FeatureMap> {
        let l = &self.layers[i];
        let wl = l.spec.weight_len();
        // weight and bias blocks are adjacent in the flat vector
        let (dw, db) = grad[l.weight..l.bias + l.spec.out_channels].split_at_mut(wl);
        conv_backward(&l.spec, &self.params[l.weight..l.weight + wl], x, dy, dw, db, need_dx)
    }
}
