//! Toy CNN families for EEG-shaped inputs `[1, channels, samples]`.
//!
//! Every family has a slot right after its first convolution: a 1 x `slot`
//! temporal convolution that keeps the channel count. The `org` variant
//! fills it with a standard convolution, `enk` with an EnK convolution
//! (one extra parameter), and `gauss` puts a Gaussian-noise layer in front
//! of the standard one. Weights depend only on the seed and the position
//! among parametric layers, so the three variants share them.
//!
//! The families are loose analogs of compact, shallow and deep EEG nets:
//! no batch normalization, dropout or depthwise convolution.
//!
//! - `compact-toy`: temporal conv, slot, spatial conv, ELU, avg-pool, then a
//!   second temporal conv, ELU, avg-pool.
//! - `shallow-toy`: one wide block with a long temporal kernel, slot,
//!   spatial conv, ELU, avg-pool.
//! - `deep-toy`: four conv blocks with ELU and max-pool, the first split
//!   into temporal and spatial convs around the slot.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::conv::EnkConvParams;
use crate::data::synth::TABLE_PRESETS;
use crate::error::{Error, Result};
use crate::nn::{DenseParams, Layer, ModelGraph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Compact,
    Shallow,
    Deep,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Compact, Family::Shallow, Family::Deep];

    pub fn name(self) -> &'static str {
        match self {
            Family::Compact => "compact-toy",
            Family::Shallow => "shallow-toy",
            Family::Deep => "deep-toy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Org,
    Enk,
    Gauss,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Org, Variant::Enk, Variant::Gauss];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Org => "org",
            Variant::Enk => "enk",
            Variant::Gauss => "gauss",
        }
    }
}

macro_rules! named_enum {
    ($t:ty, $what:literal) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .into_iter()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| {
                        let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                        Error::param(format!(
                            concat!("unknown ", $what, " {:?}, expected one of {}"),
                            s,
                            names.join(", ")
                        ))
                    })
            }
        }
    };
}

named_enum!(Family, "family");
named_enum!(Variant, "variant");

/// Filter counts and kernel extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Widths {
    /// Width of the first temporal kernel.
    pub temporal: usize,
    /// Filters of the first convolution (and of the slot).
    pub filters: usize,
    /// Filters of the spatial convolution spanning all channels.
    pub spatial_filters: usize,
    /// Width of the slot kernel.
    pub slot: usize,
    /// Pool width; pools shrink to the available width when needed.
    pub pool: usize,
    /// Width of the temporal kernels in later blocks.
    pub block_kernel: usize,
}

impl Widths {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Compact => Widths {
                temporal: 16,
                filters: 4,
                spatial_filters: 8,
                slot: 16,
                pool: 4,
                block_kernel: 8,
            },
            Family::Shallow => Widths {
                temporal: 25,
                filters: 8,
                spatial_filters: 8,
                slot: 16,
                pool: 16,
                block_kernel: 1,
            },
            Family::Deep => Widths {
                temporal: 5,
                filters: 8,
                spatial_filters: 8,
                slot: 16,
                pool: 2,
                block_kernel: 5,
            },
        }
    }

    /// Narrow widths that fit inputs of a few channels and 32 samples.
    pub fn miniature(family: Family) -> Self {
        match family {
            Family::Compact => Widths {
                temporal: 3,
                filters: 2,
                spatial_filters: 3,
                slot: 4,
                pool: 2,
                block_kernel: 3,
            },
            Family::Shallow => Widths {
                temporal: 5,
                filters: 3,
                spatial_filters: 2,
                slot: 4,
                pool: 4,
                block_kernel: 1,
            },
            Family::Deep => Widths {
                temporal: 3,
                filters: 2,
                spatial_filters: 2,
                slot: 4,
                pool: 2,
                block_kernel: 2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub family: Family,
    pub variant: Variant,
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    pub widths: Widths,
    /// Initial `b` of the EnK layer.
    pub b_init: f64,
    /// Standard deviation of the Gaussian-noise layer.
    pub noise_sigma: f64,
    /// Weight-init seed.
    pub seed: u64,
}

impl ModelSpec {
    pub const DEFAULT_NOISE_SIGMA: f64 = 0.1;

    pub fn new(
        family: Family,
        variant: Variant,
        channels: usize,
        samples: usize,
        classes: usize,
    ) -> Self {
        Self {
            family,
            variant,
            channels,
            samples,
            classes,
            widths: Widths::default_for(family),
            b_init: 0.0,
            noise_sigma: Self::DEFAULT_NOISE_SIGMA,
            seed: 0,
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.channels, self.samples]
    }
}

struct Builder {
    shape: [usize; 3],
    layers: Vec<Layer>,
    seed: u64,
    parametric: u64,
}

impl Builder {
    fn glorot(&mut self, shape: &[usize], fan_in: usize, fan_out: usize) -> Result<Tensor> {
        let mut rng = rng::seeded(rng::derive(self.seed, &[self.parametric]));
        self.parametric += 1;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n = shape.iter().product();
        Tensor::from_vec(
            shape,
            (0..n).map(|_| rng.random_range(-limit..limit)).collect(),
        )
    }

    fn conv_params(&mut self, filters: usize, kh: usize, kw: usize) -> Result<EnkConvParams> {
        let [c, h, w] = self.shape;
        if kh == 0 || kw == 0 || filters == 0 || kh > h || kw > w {
            return Err(Error::dims(format!(
                "layer {}: {filters} filters of {kh}x{kw} do not fit input {c}x{h}x{w}",
                self.layers.len()
            )));
        }
        let kernel = self.glorot(&[filters, c, kh, kw], c * kh * kw, filters * kh * kw)?;
        self.shape = [filters, h - kh + 1, w - kw + 1];
        EnkConvParams::new(kernel, Tensor::zeros(&[filters])?, 0.0)
    }

    fn conv(&mut self, filters: usize, kh: usize, kw: usize) -> Result<()> {
        let p = self.conv_params(filters, kh, kw)?;
        self.layers.push(Layer::conv(p));
        Ok(())
    }

    fn enk(&mut self, filters: usize, kh: usize, kw: usize, b: f64) -> Result<()> {
        let p = self.conv_params(filters, kh, kw)?.with_b(b);
        self.layers.push(Layer::EnkConv(p));
        Ok(())
    }

    fn slot(&mut self, spec: &ModelSpec) -> Result<()> {
        let filters = self.shape[0];
        let kw = spec.widths.slot;
        match spec.variant {
            Variant::Org => self.conv(filters, 1, kw),
            Variant::Enk => self.enk(filters, 1, kw, spec.b_init),
            Variant::Gauss => {
                if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
                    return Err(Error::param(format!(
                        "noise sigma {} must be finite and non-negative",
                        spec.noise_sigma
                    )));
                }
                self.layers.push(Layer::GaussianNoise {
                    sigma: spec.noise_sigma,
                });
                self.conv(filters, 1, kw)
            }
        }
    }

    fn pool(&mut self, kw: usize, max: bool) -> Result<()> {
        let kw = kw.clamp(1, self.shape[2]);
        self.layers.push(if max {
            Layer::MaxPool { kh: 1, kw }
        } else {
            Layer::AvgPool { kh: 1, kw }
        });
        self.shape[2] /= kw;
        Ok(())
    }

    fn classifier(mut self, classes: usize, input_shape: &[usize]) -> Result<ModelGraph> {
        let inputs: usize = self.shape.iter().product();
        let weight = self.glorot(&[classes, inputs], inputs, classes)?;
        self.layers.push(Layer::Flatten);
        self.layers.push(Layer::Dense(DenseParams::new(
            weight,
            Tensor::zeros(&[classes])?,
        )?));
        ModelGraph::new(input_shape, self.layers)
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<ModelGraph> {
    if spec.channels == 0 || spec.samples == 0 {
        return Err(Error::param("input shape must be positive"));
    }
    if spec.classes < 2 {
        return Err(Error::param(format!(
            "need at least 2 classes, got {}",
            spec.classes
        )));
    }
    if !spec.b_init.is_finite() {
        return Err(Error::param("initial b must be finite"));
    }
    let w = spec.widths;
    let mut b = Builder {
        shape: spec.input_shape(),
        layers: Vec::new(),
        seed: spec.seed,
        parametric: 0,
    };
    match spec.family {
        Family::Compact => {
            b.conv(w.filters, 1, w.temporal)?;
            b.slot(spec)?;
            b.conv(w.spatial_filters, spec.channels, 1)?;
            b.layers.push(Layer::Elu);
            b.pool(w.pool, false)?;
            b.conv(w.spatial_filters, 1, w.block_kernel)?;
            b.layers.push(Layer::Elu);
            b.pool(2 * w.pool, false)?;
        }
        Family::Shallow => {
            b.conv(w.filters, 1, w.temporal)?;
            b.slot(spec)?;
            b.conv(w.spatial_filters, spec.channels, 1)?;
            b.layers.push(Layer::Elu);
            b.pool(w.pool, false)?;
        }
        Family::Deep => {
            b.conv(w.filters, 1, w.temporal)?;
            b.slot(spec)?;
            b.conv(w.spatial_filters, spec.channels, 1)?;
            b.layers.push(Layer::Elu);
            b.pool(w.pool, true)?;
            let mut filters = w.spatial_filters;
            for _ in 0..3 {
                filters *= 2;
                b.conv(filters, 1, w.block_kernel)?;
                b.layers.push(Layer::Elu);
                b.pool(w.pool, true)?;
            }
        }
    }
    b.classifier(spec.classes, &spec.input_shape())
}

/// A dataset shape crossed with a family, variant `org`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedSpec {
    pub preset: &'static str,
    pub spec: ModelSpec,
}

pub fn list_presets() -> Vec<NamedSpec> {
    TABLE_PRESETS
        .iter()
        .flat_map(|p| {
            Family::ALL.into_iter().map(move |family| NamedSpec {
                preset: p.name,
                spec: ModelSpec::new(family, Variant::Org, p.channels, p.samples, p.classes),
            })
        })
        .collect()
}
