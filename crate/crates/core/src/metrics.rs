//! Confusion matrices, accuracy and F1.
//!
//! Per-class F1 is `2PR / (P + R)` with `P = 0` when a class is never
//! predicted and `F1 = 0` when `P + R = 0`. The weighted F1 averages
//! per-class scores by true-class support.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Counts indexed `[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn class_count(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    fn nonempty(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::param("confusion matrix is empty")),
            n => Ok(n),
        }
    }
}

pub fn confusion(
    labels: &[usize],
    predictions: &[usize],
    class_count: usize,
) -> Result<ConfusionMatrix> {
    if labels.len() != predictions.len() {
        return Err(Error::param(format!(
            "{} labels but {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut counts = vec![vec![0u64; class_count]; class_count];
    for (i, (&t, &p)) in labels.iter().zip(predictions).enumerate() {
        if t >= class_count || p >= class_count {
            return Err(Error::param(format!(
                "pair {i} ({t}, {p}) outside {class_count} classes"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty()?;
    let trace: u64 = (0..cm.class_count()).map(|c| cm.get(c, c)).sum();
    Ok(trace as f64 / total as f64)
}

/// F1 of every class.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    cm.nonempty()?;
    Ok((0..cm.class_count())
        .map(|c| {
            let tp = cm.get(c, c) as f64;
            let predicted = cm.predicted(c) as f64;
            let support = cm.support(c) as f64;
            let p = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let r = if support > 0.0 { tp / support } else { 0.0 };
            if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            }
        })
        .collect())
}

pub fn f1_weighted(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.nonempty()? as f64;
    let f1 = f1_per_class(cm)?;
    Ok(f1
        .iter()
        .enumerate()
        .map(|(c, f)| f * cm.support(c) as f64)
        .sum::<f64>()
        / total)
}

/// Positive-class F1 of a binary problem, `None` otherwise.
pub fn f1_class1(cm: &ConfusionMatrix) -> Result<Option<f64>> {
    if cm.class_count() != 2 {
        return Ok(None);
    }
    Ok(Some(f1_per_class(cm)?[1]))
}

/// Formats like C's `%.9g`.
pub fn format_g9(v: f64) -> String {
    const P: i32 = 9;
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0" } else { "0" }.into();
    }
    let sci = format!("{:.*e}", (P - 1) as usize, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    fn trim(s: &str) -> &str {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.')
        } else {
            s
        }
    }
    if !(-4..P).contains(&exp) {
        let mut out = trim(mantissa).to_string();
        let _ = write!(out, "e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
        out
    } else {
        trim(&format!("{:.*}", (P - 1 - exp) as usize, v)).to_string()
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub dataset: String,
    pub family: String,
    pub variant: String,
    pub seed: u64,
    pub accuracy: f64,
    pub f1_weighted: f64,
    pub f1_class1: Option<f64>,
    pub epochs_run: usize,
    pub param_count: usize,
}

impl MetricsRow {
    pub const HEADER: [&'static str; 10] = [
        "run_id",
        "dataset",
        "family",
        "variant",
        "seed",
        "accuracy",
        "f1_weighted",
        "f1_class1",
        "epochs_run",
        "param_count",
    ];

    pub fn record(&self) -> Vec<String> {
        vec![
            self.run_id.clone(),
            self.dataset.clone(),
            self.family.clone(),
            self.variant.clone(),
            self.seed.to_string(),
            format_g9(self.accuracy),
            format_g9(self.f1_weighted),
            self.f1_class1.map(format_g9).unwrap_or_default(),
            self.epochs_run.to_string(),
            self.param_count.to_string(),
        ]
    }

    /// Header plus this row.
    pub fn to_csv(&self) -> Result<String> {
        write_csv(&Self::HEADER, std::iter::once(self.record()))
    }
}

/// Comma-separated text with a header row.
pub fn write_csv<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::param(format!("csv: {e}"));
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::param(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
