//! Mini-batch training and evaluation loops.
//!
//! Batch items may be processed on a worker pool, but per-item results are
//! always collected in item order and reduced sequentially, so the outcome
//! does not depend on the number of threads.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::adam::AdamState;
use crate::nn::graph::{Gradients, ModelGraph};
use crate::nn::layer::Mode;
use crate::nn::loss::cross_entropy_loss;
use crate::rng;
use crate::tensor::Tensor;

/// Indexed, labeled inputs.
pub trait Samples: Sync {
    fn sample_count(&self) -> usize;

    fn input(&self, index: usize) -> Result<Tensor>;

    fn label(&self, index: usize) -> usize;
}

/// Optional worker pool. With zero or one thread everything runs inline.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn new(threads: usize) -> Result<Self> {
        if threads <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::param(format!("cannot start worker pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    /// `f(0..n)` with results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        use rayon::prelude::*;
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub mean_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mean_loss: f64,
    pub labels: Vec<usize>,
    pub predictions: Vec<usize>,
}

impl Evaluation {
    pub fn accuracy(&self) -> f64 {
        let hits = self
            .labels
            .iter()
            .zip(&self.predictions)
            .filter(|(a, b)| a == b)
            .count();
        hits as f64 / self.labels.len().max(1) as f64
    }
}

/// Index of the largest score; the first one wins ties.
pub fn argmax(scores: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in scores.data().iter().enumerate() {
        if v > scores.data()[best] {
            best = i;
        }
    }
    best
}

struct ItemResult {
    loss: f64,
    correct: bool,
    grads: Gradients,
}

/// One pass over `batches`, visited in an order shuffled by `seed`.
/// Gradients are averaged over each batch before the Adam step.
pub fn train_epoch<S: Samples + ?Sized>(
    graph: &mut ModelGraph,
    samples: &S,
    batches: &[Vec<usize>],
    adam: &mut AdamState,
    seed: u64,
    exec: &Executor,
) -> Result<EpochMetrics> {
    if batches.iter().all(|b| b.is_empty()) {
        return Err(Error::param("no training samples"));
    }
    let mut order: Vec<usize> = (0..batches.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive(seed, &[0])));

    let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
    for &bi in &order {
        let batch = &batches[bi];
        if batch.is_empty() {
            continue;
        }
        let frozen: &ModelGraph = graph;
        let results = exec.map(batch.len(), |k| -> Result<ItemResult> {
            let idx = batch[k];
            let x = samples.input(idx)?;
            let label = samples.label(idx);
            let mut item_rng = rng::seeded(rng::derive(seed, &[1, bi as u64, idx as u64]));
            let trace = frozen.forward_traced(&x, Mode::Train, &mut item_rng)?;
            let (loss, d_scores) = cross_entropy_loss(trace.output(), label)?;
            let correct = argmax(trace.output()) == label;
            let grads = frozen.backward(&trace, &d_scores)?;
            Ok(ItemResult {
                loss,
                correct,
                grads,
            })
        });
        let mut total = Gradients::zeros_for(graph);
        for r in results {
            let r = r?;
            loss_sum += r.loss;
            correct += r.correct as usize;
            total.accumulate(&r.grads);
        }
        seen += batch.len();
        total.scale(1.0 / batch.len() as f64);
        adam.step(graph, &total)?;
    }
    Ok(EpochMetrics {
        mean_loss: loss_sum / seen as f64,
        accuracy: correct as f64 / seen as f64,
    })
}

/// Eval-mode loss and predictions on the given sample indices.
pub fn evaluate<S: Samples + ?Sized>(
    graph: &ModelGraph,
    samples: &S,
    indices: &[usize],
    exec: &Executor,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::param("nothing to evaluate"));
    }
    let results = exec.map(indices.len(), |k| -> Result<(f64, usize, usize)> {
        let idx = indices[k];
        let scores = graph.forward(&samples.input(idx)?)?;
        let label = samples.label(idx);
        let (loss, _) = cross_entropy_loss(&scores, label)?;
        Ok((loss, label, argmax(&scores)))
    });
    let mut eval = Evaluation {
        mean_loss: 0.0,
        labels: Vec::with_capacity(indices.len()),
        predictions: Vec::with_capacity(indices.len()),
    };
    for r in results {
        let (loss, label, pred) = r?;
        eval.mean_loss += loss;
        eval.labels.push(label);
        eval.predictions.push(pred);
    }
    eval.mean_loss /= indices.len() as f64;
    Ok(eval)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

/// Trains for `epochs` epochs, evaluating on `val` after each one when it
/// is non-empty. Epoch `e` uses the seed `derive(seed, [e])`.
#[allow(clippy::too_many_arguments)]
pub fn fit<S: Samples + ?Sized>(
    graph: &mut ModelGraph,
    samples: &S,
    batches: &[Vec<usize>],
    val: &[usize],
    adam: &mut AdamState,
    epochs: usize,
    seed: u64,
    exec: &Executor,
) -> Result<Vec<EpochRecord>> {
    let mut history = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let m = train_epoch(
            graph,
            samples,
            batches,
            adam,
            rng::derive(seed, &[epoch as u64]),
            exec,
        )?;
        let (val_loss, val_accuracy) = if val.is_empty() {
            (None, None)
        } else {
            let e = evaluate(graph, samples, val, exec)?;
            (Some(e.mean_loss), Some(e.accuracy()))
        };
        history.push(EpochRecord {
            epoch,
            train_loss: m.mean_loss,
            train_accuracy: m.accuracy,
            val_loss,
            val_accuracy,
        });
    }
    Ok(history)
}
