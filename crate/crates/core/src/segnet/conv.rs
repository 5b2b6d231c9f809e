//! Atrous (dilated) 2-D convolution with zero "same" padding.
//!
//! Output pixel `i` sums `m[i·stride + rate·k] · ω[k]` over centered kernel
//! offsets `k`. Forward and backward passes go through im2col and GEMM.

use serde::{Deserialize, Serialize};

use super::FeatureMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd square kernel side.
    pub kernel_size: usize,
    /// Atrous rate; 1 is an ordinary convolution.
    pub rate: usize,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, rate: usize, stride: usize) -> Result<Self> {
        let spec = ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            rate,
            stride,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid("channels", "must be positive"));
        }
        if self.kernel_size % 2 == 0 {
            return Err(Error::invalid("kernel_size", "must be odd"));
        }
        if self.rate == 0 {
            return Err(Error::invalid("rate", "atrous rate must be ≥ 1"));
        }
        if self.stride == 0 {
            return Err(Error::invalid("stride", "must be ≥ 1"));
        }
        Ok(())
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.patch_len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    pub fn output_size(&self, height: usize, width: usize) -> (usize, usize) {
        (height.div_ceil(self.stride), width.div_ceil(self.stride))
    }

    /// Input pixels spanned by one output pixel along an axis.
    pub fn receptive_span(&self) -> usize {
        (self.kernel_size - 1) * self.rate + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel_size == 1 && self.stride == 1
    }
}

/// A convolution with its own parameters.
///
/// Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub spec: ConvSpec,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(spec: ConvSpec, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if weight.len() != spec.weight_len() || bias.len() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                expected: format!("{} weights, {} biases", spec.weight_len(), spec.out_channels),
                got: format!("{} weights, {} biases", weight.len(), bias.len()),
            });
        }
        Ok(Conv2d { spec, weight, bias })
    }

    pub fn forward(&self, input: &FeatureMap) -> Result<FeatureMap> {
        atrous_conv(input, self)
    }
}

/// Atrous convolution of `m` by `conv`, preserving `H×W` when stride is 1.
pub fn atrous_conv(m: &FeatureMap, conv: &Conv2d) -> Result<FeatureMap> {
    if m.channels() != conv.spec.in_channels {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input channels", conv.spec.in_channels),
            got: format!("{} channels", m.channels()),
        });
    }
    Ok(conv_forward(&conv.spec, &conv.weight, &conv.bias, m))
}

pub(crate) fn conv_forward(spec: &ConvSpec, weight: &[f64], bias: &[f64], x: &FeatureMap) -> FeatureMap {
    debug_assert_eq!(x.channels(), spec.in_channels);
    let (oh, ow) = spec.output_size(x.height(), x.width());
    let n = oh * ow;
    let mut out = vec![0.0; spec.out_channels * n];
    for (o, chunk) in out.chunks_exact_mut(n).enumerate() {
        chunk.fill(bias[o]);
    }
    let owned;
    let cols: &[f64] = if spec.is_pointwise() {
        x.as_slice()
    } else {
        owned = im2col(spec, x, oh, ow);
        &owned
    };
    gemm(
        spec.out_channels,
        spec.patch_len(),
        n,
        weight,
        Layout::RowMajor,
        cols,
        Layout::RowMajor,
        &mut out,
        1.0,
    );
    FeatureMap::from_vec(spec.out_channels, oh, ow, out).expect("sizes computed above")
}

/// Accumulates weight and bias gradients into `dw`/`db` and returns the input
/// gradient when `need_dx` is set.
pub(crate) fn conv_backward(
    spec: &ConvSpec,
    weight: &[f64],
    x: &FeatureMap,
    dy: &FeatureMap,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<FeatureMap> {
    let (oh, ow) = (dy.height(), dy.width());
    let n = oh * ow;
    let k = spec.patch_len();
    for (o, g) in dy.as_slice().chunks_exact(n).enumerate() {
        db[o] += g.iter().sum::<f64>();
    }
    let owned;
    let cols: &[f64] = if spec.is_pointwise() {
        x.as_slice()
    } else {
        owned = im2col(spec, x, oh, ow);
        &owned
    };
    // dW[o, k] += dY[o, n] · cols[k, n]ᵀ
    gemm(spec.out_channels, n, k, dy.as_slice(), Layout::RowMajor, cols, Layout::Transposed, dw, 1.0);
    if !need_dx {
        return None;
    }
    // dcols[k, n] = Wᵀ[k, o] · dY[o, n]
    let mut dcols = vec![0.0; k * n];
    gemm(k, spec.out_channels, n, weight, Layout::Transposed, dy.as_slice(), Layout::RowMajor, &mut dcols, 0.0);
    let dx = if spec.is_pointwise() {
        dcols
    } else {
        col2im(spec, &dcols, x.height(), x.width(), oh, ow)
    };
    Some(FeatureMap::from_vec(spec.in_channels, x.height(), x.width(), dx).expect("input shape"))
}

/// Offsets of the kernel taps along one axis, centered on zero.
fn tap_offsets(spec: &ConvSpec) -> impl Iterator<Item = isize> + '_ {
    let half = (spec.kernel_size / 2) as isize;
    (0..spec.kernel_size).map(move |t| (t as isize - half) * spec.rate as isize)
}

fn im2col(spec: &ConvSpec, x: &FeatureMap, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = (x.height() as isize, x.width() as isize);
    let n = oh * ow;
    let s = spec.stride as isize;
    let mut cols = vec![0.0; spec.patch_len() * n];
    let offsets: Vec<isize> = tap_offsets(spec).collect();
    let mut row = 0;
    for c in 0..spec.in_channels {
        let plane = x.channel(c);
        for &dy in &offsets {
            for &dx in &offsets {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = oy as isize * s + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = ox as isize * s + dx;
                        if ix >= 0 && ix < w {
                            *v = src[ix as usize];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im(spec: &ConvSpec, dcols: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let n = oh * ow;
    let s = spec.stride as isize;
    let (hi, wi) = (h as isize, w as isize);
    let mut dx = vec![0.0; spec.in_channels * h * w];
    let offsets: Vec<isize> = tap_offsets(spec).collect();
    let mut row = 0;
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for &dy in &offsets {
            for &ddx in &offsets {
                let src = &dcols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let iy = oy as isize * s + dy;
                    if iy < 0 || iy >= hi {
                        continue;
                    }
                    let base = (iy * wi) as usize;
                    for ox in 0..ow {
                        let ix = ox as isize * s + ddx;
                        if ix >= 0 && ix < wi {
                            plane[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

#[derive(Clone, Copy)]
enum Layout {
    RowMajor,
    Transposed,
}

/// `c = a·b + beta·c` for an `m×k` matrix `a` and `k×n` matrix `b`, each
/// stored row-major either as given or as its transpose.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], la: Layout, b: &[f64], lb: Layout, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = match la {
        Layout::RowMajor => (k as isize, 1),
        Layout::Transposed => (1, m as isize),
    };
    let (rsb, csb) = match lb {
        Layout::RowMajor => (n as isize, 1),
        Layout::Transposed => (1, k as isize),
    };
    // SAFETY: the assert above bounds every index dgemm touches for these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
