use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind, Mode};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// Identifies one parameter buffer: layer index and slot within
/// [`Layer::params`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub slot: usize,
}

/// Per-layer parameter gradients, aligned with [`Layer::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_for(graph: &ModelGraph) -> Self {
        Self {
            layers: graph
                .layers()
                .iter()
                .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
                .collect(),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for buf in self.layers.iter_mut().flatten() {
            for v in buf.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.layers
            .get(id.layer)?
            .get(id.slot)
            .map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.layers.iter().enumerate().flat_map(|(layer, slots)| {
            slots
                .iter()
                .enumerate()
                .map(move |(slot, g)| (ParamId { layer, slot }, g.as_slice()))
        })
    }
}

/// Activations recorded by [`ModelGraph::forward_traced`]:
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub activations: Vec<Tensor>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations
            .last()
            .expect("trace holds at least the input")
    }
}

/// An ordered, shape-checked list of layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    shapes: Vec<Vec<usize>>,
}

impl ModelGraph {
    pub fn new(input_shape: &[usize], layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::graph(0, "graph has no layers"));
        }
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::graph(0, format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut current = input_shape.to_vec();
        for (i, layer) in layers.iter().enumerate() {
            current = layer
                .output_shape(&current)
                .map_err(|msg| Error::graph(i, format!("{}: {msg}", layer.kind())))?;
            if current.contains(&0) {
                return Err(Error::graph(
                    i,
                    format!("{} produces empty output {current:?}", layer.kind()),
                ));
            }
            shapes.push(current.clone());
        }
        Ok(Self {
            input_shape: input_shape.to_vec(),
            layers,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty graph")
    }

    /// Output shape of layer `i`.
    pub fn layer_shape(&self, i: usize) -> Option<&[usize]> {
        self.shapes.get(i).map(|s| s.as_slice())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, i: usize) -> Option<&mut Layer> {
        self.layers.get_mut(i)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn count_kind(&self, kind: LayerKind) -> usize {
        self.layers.iter().filter(|l| l.kind() == kind).count()
    }

    pub fn position(&self, kind: LayerKind) -> Option<usize> {
        self.layers.iter().position(|l| l.kind() == kind)
    }

    pub fn params(&self) -> Vec<(ParamId, &[f64])> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(layer, l)| {
                l.params()
                    .into_iter()
                    .enumerate()
                    .map(move |(slot, p)| (ParamId { layer, slot }, p))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(ParamId, &mut [f64])> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(layer, l)| {
                l.params_mut()
                    .into_iter()
                    .enumerate()
                    .map(move |(slot, p)| (ParamId { layer, slot }, p))
            })
            .collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::graph(
                0,
                format!(
                    "input shape {:?} does not match graph input {:?}",
                    x.shape(),
                    self.input_shape
                ),
            ));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass: noise disabled, nothing cached.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        // Eval mode never draws from the generator.
        let mut rng = rng::seeded(0);
        let mut current = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            current = layer
                .forward(&current, Mode::Eval, &mut rng)
                .map_err(|e| Error::graph(i, e.to_string()))?;
        }
        current.ensure_finite("graph output")?;
        Ok(current)
    }

    /// Forward pass that records every activation for [`ModelGraph::backward`].
    pub fn forward_traced(&self, x: &Tensor, mode: Mode, rng: &mut Rng) -> Result<Trace> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer
                .forward(activations.last().unwrap(), mode, rng)
                .map_err(|e| Error::graph(i, e.to_string()))?;
            activations.push(y);
        }
        activations.last().unwrap().ensure_finite("graph output")?;
        Ok(Trace { activations })
    }

    /// Backpropagates `d_scores` through every layer in reverse order.
    pub fn backward(&self, trace: &Trace, d_scores: &Tensor) -> Result<Gradients> {
        let (grads, _) = self.backprop(trace, d_scores, 0)?;
        Ok(grads)
    }

    /// Gradient of the scalar behind `d_scores` with respect to the output
    /// of layer `layer`.
    pub fn output_gradient(
        &self,
        trace: &Trace,
        d_scores: &Tensor,
        layer: usize,
    ) -> Result<Tensor> {
        if layer >= self.layers.len() {
            return Err(Error::param(format!("layer index {layer} out of range")));
        }
        let (_, d) = self.backprop(trace, d_scores, layer + 1)?;
        Ok(d)
    }

    /// Runs backward over layers `stop..len` in reverse; returns parameter
    /// gradients (zero for layers below `stop`) and the gradient at the
    /// input of layer `stop`.
    fn backprop(
        &self,
        trace: &Trace,
        d_scores: &Tensor,
        stop: usize,
    ) -> Result<(Gradients, Tensor)> {
        if trace.activations.len() != self.layers.len() + 1 {
            return Err(Error::graph(0, "trace does not belong to this graph"));
        }
        if d_scores.shape() != self.output_shape() {
            return Err(Error::graph(
                self.layers.len() - 1,
                format!(
                    "score gradient {:?} does not match output {:?}",
                    d_scores.shape(),
                    self.output_shape()
                ),
            ));
        }
        let mut grads = Gradients::zeros_for(self);
        let mut d = d_scores.clone();
        for i in (stop..self.layers.len()).rev() {
            let (dx, pg) = self.layers[i]
                .backward(&trace.activations[i], &trace.activations[i + 1], &d)
                .map_err(|e| Error::graph(i, e.to_string()))?;
            grads.layers[i] = pg;
            d = dx;
        }
        Ok((grads, d))
    }
}
