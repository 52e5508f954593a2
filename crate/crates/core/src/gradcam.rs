//! Gradient-weighted class activation maps.
//!
//! For a convolution output `A` of shape `[filters, h, w]`, each filter's
//! weight is the mean of `d score[class] / d A_f` over its map, and the
//! map is `ReLU(sum_f alpha_f * A_f)`. The map is upsampled to the input's
//! `channels x samples` grid by nearest neighbour (source index
//! `floor(i * h / H)`) and divided by its maximum.

use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::format_g9;
use crate::nn::{Mode, ModelGraph};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    /// Normalized values `[channels, samples]`, all in `[0, 1]`.
    pub values: Tensor,
    pub layer: usize,
    pub class: usize,
    /// Maximum of the raw map before scaling; zero for an all-zero map.
    pub raw_max: f64,
}

impl HeatMap {
    fn normalized(mut values: Tensor, layer: usize, class: usize) -> Self {
        let raw_max = values.data().iter().fold(0.0f64, |m, &v| m.max(v));
        if raw_max > 0.0 {
            values.data_mut().iter_mut().for_each(|v| *v /= raw_max);
        }
        Self {
            values,
            layer,
            class,
            raw_max,
        }
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.values.shape()[1]
    }

    /// Sum over channels for every sample.
    pub fn time_marginal(&self) -> Vec<f64> {
        let (c, t) = (self.channels(), self.samples());
        let v = self.values.data();
        (0..t)
            .map(|s| (0..c).map(|ch| v[ch * t + s]).sum())
            .collect()
    }
}

/// Layer used when none is requested: the first convolution.
pub fn default_layer(g: &ModelGraph) -> Option<usize> {
    (0..g.len()).find(|&i| g.layers()[i].kind().is_conv())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax_first(v: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|b| x > v[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn grad_cam(g: &ModelGraph, x: &Tensor, class: usize, layer: usize) -> Result<HeatMap> {
    let kind = g
        .layers()
        .get(layer)
        .map(|l| l.kind())
        .ok_or_else(|| Error::param(format!("layer index {layer} out of range")))?;
    if !kind.is_conv() {
        return Err(Error::param(format!(
            "layer {layer} is {kind}, not a convolution"
        )));
    }
    if class >= g.class_count() {
        return Err(Error::param(format!(
            "class {class} outside {} classes",
            g.class_count()
        )));
    }
    if x.rank() != 3 {
        return Err(Error::shape(format!(
            "input must be [planes, channels, samples], got {:?}",
            x.shape()
        )));
    }
    let mut unused = rng::seeded(0);
    let trace = g.forward_traced(x, Mode::Eval, &mut unused)?;
    let mut d_scores = Tensor::zeros(g.output_shape())?;
    d_scores.data_mut()[class] = 1.0;
    let d_a = g.output_gradient(&trace, &d_scores, layer)?;
    let a = &trace.activations[layer + 1];

    let [f, h, w] = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let plane = h * w;
    let mut cam = vec![0.0; plane];
    for fi in 0..f {
        let grads = &d_a.data()[fi * plane..(fi + 1) * plane];
        let alpha = grads.iter().sum::<f64>() / plane as f64;
        let acts = &a.data()[fi * plane..(fi + 1) * plane];
        for (c, &v) in cam.iter_mut().zip(acts) {
            *c += alpha * v;
        }
    }
    cam.iter_mut().for_each(|v| *v = v.max(0.0));

    let (rows, cols) = (x.shape()[1], x.shape()[2]);
    let mut up = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let si = i * h / rows;
        for j in 0..cols {
            up.push(cam[si * w + j * w / cols]);
        }
    }
    Ok(HeatMap::normalized(
        Tensor::from_vec(&[rows, cols], up)?,
        layer,
        class,
    ))
}

/// Elementwise `|a - b|`, renormalized.
pub fn heatmap_diff(a: &HeatMap, b: &HeatMap) -> Result<HeatMap> {
    if a.values.shape() != b.values.shape() {
        return Err(Error::param(format!(
            "heat map shapes {:?} and {:?} differ",
            a.values.shape(),
            b.values.shape()
        )));
    }
    let d = a.values.zip_with(&b.values, |x, y| (x - y).abs())?;
    Ok(HeatMap::normalized(d, a.layer, a.class))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Pgm,
}

impl std::str::FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "pgm" => Ok(ExportFormat::Pgm),
            other => Err(Error::param(format!(
                "unknown heat map format {other:?}, expected csv or pgm"
            ))),
        }
    }
}

/// CSV: a header `t0..t{samples-1}` then one row per channel.
/// PGM: binary P5, one pixel row per channel, 255 at the maximum.
pub fn heatmap_encode(h: &HeatMap, format: ExportFormat) -> Vec<u8> {
    let (rows, cols) = (h.channels(), h.samples());
    match format {
        ExportFormat::Csv => grid_csv(&h.values).into_bytes(),
        ExportFormat::Pgm => {
            let mut out = format!("P5 {cols} {rows} 255\n").into_bytes();
            out.extend(
                h.values
                    .data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
            );
            out
        }
    }
}

/// A rank-2 tensor as CSV with a `t0,t1,...` header.
pub fn grid_csv(values: &Tensor) -> String {
    let cols = values.shape()[1];
    let mut s = (0..cols)
        .map(|j| format!("t{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for row in values.data().chunks(cols) {
        let cells: Vec<String> = row.iter().map(|&v| format_g9(v)).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn heatmap_export(h: &HeatMap, path: impl AsRef<Path>, format: ExportFormat) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(&heatmap_encode(h, format))
        .map_err(|e| Error::file(path, e))
}

/// Reads the values of a CSV written by [`heatmap_export`].
pub fn heatmap_read_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::file(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut values = Vec::new();
    let mut rows = 0;
    let mut cols = None;
    for (i, rec) in reader.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::row(row, e.to_string()))?;
        let width = *cols.get_or_insert(rec.len());
        if rec.len() != width {
            return Err(Error::row(
                row,
                format!("{} columns, expected {width}", rec.len()),
            ));
        }
        for cell in rec.iter() {
            values.push(
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::row(row, format!("{cell:?} is not a number")))?,
            );
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::row(2, "no data rows"))?;
    Tensor::from_vec(&[rows, cols], values)
}
