//! Model checkpoint file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic        "ENKM"
//! version      u32 = 1
//! layer count  u32
//! input rank   u32, then rank x u32 extents
//! per layer:   kind tag u8, shape header, raw f64 parameter payload
//! ```
//!
//! Shape headers and payloads by kind:
//!
//! | kind                | header                          | payload                          |
//! |---------------------|---------------------------------|----------------------------------|
//! | conv (0)            | u32 filters, channels, kh, kw   | kernel, bias                     |
//! | enk-conv (1)        | u32 filters, channels, kh, kw   | kernel, bias, b (one f64)        |
//! | gaussian-noise (2)  | none                            | sigma (one f64)                  |
//! | avg/max-pool (5, 6) | u32 kh, kw                      | none                             |
//! | dense (8)           | u32 outputs, inputs             | weight (row-major), bias         |
//! | others              | none                            | none                             |

use std::path::Path;

use crate::binio::{to_u32, Reader, Writer};
use crate::conv::EnkConvParams;
use crate::error::{Error, Result};
use crate::nn::graph::ModelGraph;
use crate::nn::layer::{DenseParams, Layer, LayerKind};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ENKM";
pub const VERSION: u32 = 1;

pub fn encode(graph: &ModelGraph) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(to_u32(graph.len(), "layer count")?);
    w.u32(to_u32(graph.input_shape().len(), "input rank")?);
    for &e in graph.input_shape() {
        w.u32(to_u32(e, "input extent")?);
    }
    for layer in graph.layers() {
        w.u8(layer.kind().tag());
        match layer {
            Layer::Conv(p) | Layer::EnkConv(p) => {
                for &e in p.kernel.shape() {
                    w.u32(to_u32(e, "kernel extent")?);
                }
                w.f64s(p.kernel.data());
                w.f64s(p.bias.data());
                if let Layer::EnkConv(_) = layer {
                    w.f64(p.b);
                }
            }
            Layer::GaussianNoise { sigma } => w.f64(*sigma),
            Layer::AvgPool { kh, kw } | Layer::MaxPool { kh, kw } => {
                w.u32(to_u32(*kh, "pool height")?);
                w.u32(to_u32(*kw, "pool width")?);
            }
            Layer::Dense(p) => {
                w.u32(to_u32(p.outputs(), "dense outputs")?);
                w.u32(to_u32(p.inputs(), "dense inputs")?);
                w.f64s(p.weight.data());
                w.f64s(p.bias.data());
            }
            Layer::Relu | Layer::Elu | Layer::Flatten | Layer::Softmax => {}
        }
    }
    Ok(w.buf)
}

fn tensor_at(r: &mut Reader<'_>, shape: &[usize], what: &str) -> Result<Tensor> {
    let at = r.offset();
    let n = shape.iter().product();
    let data = r.f64s(n, what)?;
    Tensor::from_vec(shape, data).map_err(|e| Error::format(at, format!("{what}: {e}")))
}

fn dim(r: &mut Reader<'_>, what: &str) -> Result<usize> {
    let at = r.offset();
    let v = r.u32(what)? as usize;
    if v == 0 {
        return Err(Error::format(at, format!("{what} is zero")));
    }
    Ok(v)
}

pub fn decode(bytes: &[u8]) -> Result<ModelGraph> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"ENKM\""),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    let rank = r.u32("input rank")? as usize;
    let mut input_shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        input_shape.push(dim(&mut r, "input extent")?);
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.offset();
        let tag = r.u8("layer tag")?;
        let kind = LayerKind::from_tag(tag)
            .ok_or_else(|| Error::format(at, format!("unknown layer tag {tag}")))?;
        let layer = match kind {
            LayerKind::Conv | LayerKind::EnkConv => {
                let mut shape = [0usize; 4];
                for s in shape.iter_mut() {
                    *s = dim(&mut r, "kernel extent")?;
                }
                let kernel = tensor_at(&mut r, &shape, "kernel")?;
                let bias = tensor_at(&mut r, &[shape[0]], "bias")?;
                let b = if kind == LayerKind::EnkConv {
                    r.f64("time scale")?
                } else {
                    0.0
                };
                let p = EnkConvParams::new(kernel, bias, b)
                    .map_err(|e| Error::format(at, e.to_string()))?;
                if kind == LayerKind::Conv {
                    Layer::conv(p)
                } else {
                    Layer::EnkConv(p)
                }
            }
            LayerKind::GaussianNoise => Layer::GaussianNoise {
                sigma: r.f64("sigma")?,
            },
            LayerKind::AvgPool | LayerKind::MaxPool => {
                let kh = dim(&mut r, "pool height")?;
                let kw = dim(&mut r, "pool width")?;
                if kind == LayerKind::AvgPool {
                    Layer::AvgPool { kh, kw }
                } else {
                    Layer::MaxPool { kh, kw }
                }
            }
            LayerKind::Dense => {
                let out = dim(&mut r, "dense outputs")?;
                let inp = dim(&mut r, "dense inputs")?;
                let weight = tensor_at(&mut r, &[out, inp], "dense weight")?;
                let bias = tensor_at(&mut r, &[out], "dense bias")?;
                Layer::Dense(DenseParams::new(weight, bias)?)
            }
            LayerKind::Relu => Layer::Relu,
            LayerKind::Elu => Layer::Elu,
            LayerKind::Flatten => Layer::Flatten,
            LayerKind::Softmax => Layer::Softmax,
        };
        layers.push(layer);
    }
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    ModelGraph::new(&input_shape, layers)
}

pub fn save(graph: &ModelGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(graph)?).map_err(|e| Error::file(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelGraph> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
    decode(&bytes)
}
