use std::fmt;

use crate::conv::{self, EnkConvParams};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Whether a forward pass is part of training (noise on) or evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    EnkConv,
    GaussianNoise,
    Relu,
    Elu,
    AvgPool,
    MaxPool,
    Flatten,
    Dense,
    Softmax,
}

impl LayerKind {
    pub const ALL: [LayerKind; 10] = [
        LayerKind::Conv,
        LayerKind::EnkConv,
        LayerKind::GaussianNoise,
        LayerKind::Relu,
        LayerKind::Elu,
        LayerKind::AvgPool,
        LayerKind::MaxPool,
        LayerKind::Flatten,
        LayerKind::Dense,
        LayerKind::Softmax,
    ];

    /// Tag byte used by the checkpoint format.
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::EnkConv => "enk-conv",
            LayerKind::GaussianNoise => "gaussian-noise",
            LayerKind::Relu => "relu",
            LayerKind::Elu => "elu",
            LayerKind::AvgPool => "avg-pool",
            LayerKind::MaxPool => "max-pool",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense => "dense",
            LayerKind::Softmax => "softmax",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::EnkConv)
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully connected weights, `weight` is `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DenseParams {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape(format!(
                "dense weight {:?} / bias {:?} mismatch",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Standard convolution. `b` is held at zero and is not trainable.
    Conv(EnkConvParams),
    EnkConv(EnkConvParams),
    GaussianNoise {
        sigma: f64,
    },
    Relu,
    /// ELU with alpha = 1.
    Elu,
    /// Non-overlapping pooling: stride equals the window, remainder dropped.
    AvgPool {
        kh: usize,
        kw: usize,
    },
    MaxPool {
        kh: usize,
        kw: usize,
    },
    Flatten,
    Dense(DenseParams),
    Softmax,
}

fn expect_rank(input: &[usize], rank: usize, what: &str) -> Result<(), String> {
    if input.len() != rank {
        return Err(format!("{what} expects a rank-{rank} input, got {input:?}"));
    }
    Ok(())
}

impl Layer {
    pub fn conv(params: EnkConvParams) -> Self {
        Layer::Conv(params.with_b(0.0))
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Conv(_) => LayerKind::Conv,
            Layer::EnkConv(_) => LayerKind::EnkConv,
            Layer::GaussianNoise { .. } => LayerKind::GaussianNoise,
            Layer::Relu => LayerKind::Relu,
            Layer::Elu => LayerKind::Elu,
            Layer::AvgPool { .. } => LayerKind::AvgPool,
            Layer::MaxPool { .. } => LayerKind::MaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Softmax => LayerKind::Softmax,
        }
    }

    pub fn conv_params(&self) -> Option<&EnkConvParams> {
        match self {
            Layer::Conv(p) | Layer::EnkConv(p) => Some(p),
            _ => None,
        }
    }

    /// Output shape for a given input shape; the message explains any
    /// incompatibility.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Conv(p) | Layer::EnkConv(p) => {
                expect_rank(input, 3, "convolution")?;
                if input[0] != p.in_channels() {
                    return Err(format!(
                        "input has {} channels, kernel expects {}",
                        input[0],
                        p.in_channels()
                    ));
                }
                let d = conv::ConvDims::new(
                    input[0],
                    p.filters(),
                    (input[1], input[2]),
                    (p.kh(), p.kw()),
                )
                .map_err(|e| e.to_string())?;
                Ok(d.output_shape().to_vec())
            }
            Layer::GaussianNoise { sigma } => {
                if sigma.is_nan() || *sigma < 0.0 {
                    return Err(format!("negative sigma {sigma}"));
                }
                Ok(input.to_vec())
            }
            Layer::Relu | Layer::Elu => Ok(input.to_vec()),
            Layer::AvgPool { kh, kw } | Layer::MaxPool { kh, kw } => {
                expect_rank(input, 3, "pooling")?;
                if *kh == 0 || *kw == 0 || *kh > input[1] || *kw > input[2] {
                    return Err(format!(
                        "pool window {kh}x{kw} does not fit {}x{}",
                        input[1], input[2]
                    ));
                }
                Ok(vec![input[0], input[1] / kh, input[2] / kw])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(p) => {
                expect_rank(input, 1, "dense")?;
                if input[0] != p.inputs() {
                    return Err(format!(
                        "dense expects {} inputs, got {}",
                        p.inputs(),
                        input[0]
                    ));
                }
                Ok(vec![p.outputs()])
            }
            Layer::Softmax => {
                expect_rank(input, 1, "softmax")?;
                Ok(input.to_vec())
            }
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Tensor> {
        match self {
            Layer::Conv(p) => conv::conv2d_forward(x, p),
            Layer::EnkConv(p) => conv::enk_forward_decomposed(x, p),
            Layer::GaussianNoise { sigma } => {
                conv::gaussian_noise_forward(x, *sigma, mode == Mode::Train, rng)
            }
            Layer::Relu => Ok(x.map(|v| v.max(0.0))),
            Layer::Elu => Ok(x.map(|v| if v > 0.0 { v } else { v.exp_m1() })),
            Layer::AvgPool { kh, kw } => pool_forward(x, *kh, *kw, PoolOp::Avg),
            Layer::MaxPool { kh, kw } => pool_forward(x, *kh, *kw, PoolOp::Max),
            Layer::Flatten => x.clone().reshape(&[x.len()]),
            Layer::Dense(p) => dense_forward(x, p),
            Layer::Softmax => Ok(softmax(x)),
        }
    }

    /// Gradient with respect to the layer input, plus the parameter
    /// gradients in [`Layer::params`] order. `y` is this layer's output.
    pub fn backward(
        &self,
        x: &Tensor,
        y: &Tensor,
        d_out: &Tensor,
    ) -> Result<(Tensor, Vec<Vec<f64>>)> {
        match self {
            Layer::Conv(p) => {
                let g = conv::conv2d_backward(x, p, d_out)?;
                Ok((
                    g.d_input,
                    vec![g.d_kernel.into_data(), g.d_bias.into_data()],
                ))
            }
            Layer::EnkConv(p) => {
                let g = conv::enk_backward(x, p, d_out)?;
                Ok((
                    g.d_input,
                    vec![g.d_kernel.into_data(), g.d_bias.into_data(), vec![g.d_b]],
                ))
            }
            Layer::GaussianNoise { .. } => Ok((d_out.clone(), vec![])),
            Layer::Relu => Ok((
                x.zip_with(d_out, |v, g| if v > 0.0 { g } else { 0.0 })?,
                vec![],
            )),
            Layer::Elu => {
                // For v <= 0 the derivative exp(v) equals y + 1.
                let mut d = d_out.clone();
                for ((dv, &xv), &yv) in d.data_mut().iter_mut().zip(x.data()).zip(y.data()) {
                    if xv <= 0.0 {
                        *dv *= yv + 1.0;
                    }
                }
                Ok((d, vec![]))
            }
            Layer::AvgPool { kh, kw } => {
                Ok((pool_backward(x, d_out, *kh, *kw, PoolOp::Avg)?, vec![]))
            }
            Layer::MaxPool { kh, kw } => {
                Ok((pool_backward(x, d_out, *kh, *kw, PoolOp::Max)?, vec![]))
            }
            Layer::Flatten => Ok((d_out.clone().reshape(x.shape())?, vec![])),
            Layer::Dense(p) => dense_backward(x, p, d_out),
            Layer::Softmax => {
                let dot: f64 = y.data().iter().zip(d_out.data()).map(|(s, g)| s * g).sum();
                Ok((y.zip_with(d_out, |s, g| s * (g - dot))?, vec![]))
            }
        }
    }

    /// Trainable parameter buffers: conv `[kernel, bias]`, enk-conv
    /// `[kernel, bias, b]`, dense `[weight, bias]`.
    pub fn params(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv(p) => vec![p.kernel.data(), p.bias.data()],
            Layer::EnkConv(p) => vec![p.kernel.data(), p.bias.data(), std::slice::from_ref(&p.b)],
            Layer::Dense(p) => vec![p.weight.data(), p.bias.data()],
            _ => vec![],
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Layer::Conv(p) => vec![p.kernel.data_mut(), p.bias.data_mut()],
            Layer::EnkConv(p) => vec![
                p.kernel.data_mut(),
                p.bias.data_mut(),
                std::slice::from_mut(&mut p.b),
            ],
            Layer::Dense(p) => vec![p.weight.data_mut(), p.bias.data_mut()],
            _ => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

pub fn softmax(x: &Tensor) -> Tensor {
    let max = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = x.map(|v| (v - max).exp());
    let total: f64 = exps.data().iter().sum();
    exps.map(|v| v / total)
}

fn dense_forward(x: &Tensor, p: &DenseParams) -> Result<Tensor> {
    if x.shape() != [p.inputs()] {
        return Err(Error::shape(format!(
            "dense expects [{}], got {:?}",
            p.inputs(),
            x.shape()
        )));
    }
    let w = p.weight.data();
    let out: Vec<f64> = (0..p.outputs())
        .map(|o| {
            let row = &w[o * p.inputs()..][..p.inputs()];
            row.iter().zip(x.data()).map(|(a, b)| a * b).sum::<f64>() + p.bias.data()[o]
        })
        .collect();
    Tensor::from_vec(&[p.outputs()], out)
}

fn dense_backward(x: &Tensor, p: &DenseParams, d_out: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
    let (n_out, n_in) = (p.outputs(), p.inputs());
    if d_out.shape() != [n_out] {
        return Err(Error::shape(format!(
            "dense output gradient {:?}, expected [{n_out}]",
            d_out.shape()
        )));
    }
    let w = p.weight.data();
    let g = d_out.data();
    let mut d_w = vec![0.0; n_out * n_in];
    let mut d_x = vec![0.0; n_in];
    for o in 0..n_out {
        let row = &w[o * n_in..][..n_in];
        let drow = &mut d_w[o * n_in..][..n_in];
        for i in 0..n_in {
            drow[i] = g[o] * x.data()[i];
            d_x[i] += g[o] * row[i];
        }
    }
    Ok((Tensor::from_vec(&[n_in], d_x)?, vec![d_w, g.to_vec()]))
}

#[derive(Clone, Copy)]
enum PoolOp {
    Avg,
    Max,
}

fn pool_forward(x: &Tensor, kh: usize, kw: usize, op: PoolOp) -> Result<Tensor> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ho, wo) = (h / kh, w / kw);
    let xd = x.data();
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = match op {
                    PoolOp::Avg => 0.0,
                    PoolOp::Max => f64::NEG_INFINITY,
                };
                for a in 0..kh {
                    for b in 0..kw {
                        let v = xd[(ch * h + i * kh + a) * w + j * kw + b];
                        acc = match op {
                            PoolOp::Avg => acc + v,
                            PoolOp::Max => acc.max(v),
                        };
                    }
                }
                if let PoolOp::Avg = op {
                    acc /= (kh * kw) as f64;
                }
                out.push(acc);
            }
        }
    }
    Tensor::from_vec(&[c, ho, wo], out)
}

fn pool_backward(x: &Tensor, d_out: &Tensor, kh: usize, kw: usize, op: PoolOp) -> Result<Tensor> {
    let s = x.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let (ho, wo) = (h / kh, w / kw);
    if d_out.shape() != [c, ho, wo] {
        return Err(Error::shape(format!(
            "pool output gradient {:?}, expected {:?}",
            d_out.shape(),
            [c, ho, wo]
        )));
    }
    let xd = x.data();
    let g = d_out.data();
    let mut dx = vec![0.0; xd.len()];
    let area = (kh * kw) as f64;
    for ch in 0..c {
        for i in 0..ho {
            for j in 0..wo {
                let gv = g[(ch * ho + i) * wo + j];
                match op {
                    PoolOp::Avg => {
                        for a in 0..kh {
                            for b in 0..kw {
                                dx[(ch * h + i * kh + a) * w + j * kw + b] += gv / area;
                            }
                        }
                    }
                    PoolOp::Max => {
                        // First maximal element in scan order wins ties.
                        let mut best = (f64::NEG_INFINITY, 0);
                        for a in 0..kh {
                            for b in 0..kw {
                                let idx = (ch * h + i * kh + a) * w + j * kw + b;
                                if xd[idx] > best.0 {
                                    best = (xd[idx], idx);
                                }
                            }
                        }
                        dx[best.1] += gv;
                    }
                }
            }
        }
    }
    Tensor::from_vec(s, dx)
}
