//! Central finite-difference checks of the analytic gradients.
//!
//! The relative error of an analytic value `a` against a numeric `n` is
//! `|a - n| / max(|a|, |n|, floor)`, so values near zero are compared
//! absolutely.

use rand::Rng as _;

use crate::conv::{enk_backward, enk_forward_naive, EnkConvParams};
use crate::error::Result;
use crate::nn::{cross_entropy_loss, Layer, Mode, ModelGraph};
use crate::rng;
use crate::tensor::Tensor;
use crate::zoo::{build_model, Family, ModelSpec, Variant, Widths};

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub step: f64,
    pub floor: f64,
    /// Tolerance for the convolution suite.
    pub conv_tolerance: f64,
    /// Tolerance for the whole-graph suite.
    pub graph_tolerance: f64,
    pub instances: usize,
    pub seed: u64,
    /// Multiplies every analytic `d_b` by `1 + perturb_db`; nonzero values
    /// exist to prove that the checks can fail.
    pub perturb_db: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-4,
            conv_tolerance: 1e-5,
            graph_tolerance: 1e-4,
            instances: 20,
            seed: 0,
            perturb_db: 0.0,
        }
    }
}

/// Worst relative error over one group of gradient entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GroupReport {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            checked: 0,
            max_rel_error: 0.0,
            tolerance,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, floor: f64) {
        let denom = analytic.abs().max(numeric.abs()).max(floor);
        let err = (analytic - numeric).abs() / denom;
        // NaN must register as a failure.
        if err.is_nan() || err > self.max_rel_error {
            self.max_rel_error = err;
        }
        self.checked += 1;
    }

    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= self.tolerance
    }
}

fn random_tensor(rng: &mut rng::Rng, shape: &[usize]) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

/// `d_input`, `d_kernel`, `d_b` and `d_bias` of the EnK convolution on
/// `cfg.instances` random miniature problems. Every third instance has
/// `b = 0`.
pub fn check_conv_ops(cfg: &GradcheckConfig) -> Result<Vec<GroupReport>> {
    let tol = cfg.conv_tolerance;
    let mut groups = ["d_input", "d_kernel", "d_b", "d_bias"]
        .map(|n| GroupReport::new(format!("conv.{n}"), tol));
    let mut rng = rng::seeded(rng::derive(cfg.seed, &[0xc0]));
    let h = cfg.step;
    for i in 0..cfg.instances {
        let c = rng.random_range(1..=3);
        let f = rng.random_range(1..=3);
        let kh = rng.random_range(1..=3);
        let kw = rng.random_range(1..=4);
        let hh = kh + rng.random_range(0..=3);
        let ww = kw + rng.random_range(0..=6);
        let x = random_tensor(&mut rng, &[c, hh, ww])?;
        let b = if i % 3 == 0 {
            0.0
        } else {
            rng.random_range(-0.5..0.5)
        };
        let p = EnkConvParams::new(
            random_tensor(&mut rng, &[f, c, kh, kw])?,
            random_tensor(&mut rng, &[f])?,
            b,
        )?;
        let d_out = random_tensor(&mut rng, &[f, hh - kh + 1, ww - kw + 1])?;
        let objective = |x: &Tensor, p: &EnkConvParams| -> Result<f64> {
            let y = enk_forward_naive(x, p)?;
            Ok(y.data().iter().zip(d_out.data()).map(|(a, b)| a * b).sum())
        };
        let g = enk_backward(&x, &p, &d_out)?;

        for j in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            let n = (objective(&xp, &p)? - objective(&xm, &p)?) / (2.0 * h);
            groups[0].record(g.d_input.data()[j], n, cfg.floor);
        }
        for j in 0..p.kernel.len() {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.kernel.data_mut()[j] += h;
            pm.kernel.data_mut()[j] -= h;
            let n = (objective(&x, &pp)? - objective(&x, &pm)?) / (2.0 * h);
            groups[1].record(g.d_kernel.data()[j], n, cfg.floor);
        }
        {
            let pp = p.clone().with_b(p.b + h);
            let pm = p.clone().with_b(p.b - h);
            let n = (objective(&x, &pp)? - objective(&x, &pm)?) / (2.0 * h);
            groups[2].record(g.d_b * (1.0 + cfg.perturb_db), n, cfg.floor);
        }
        for j in 0..f {
            let (mut pp, mut pm) = (p.clone(), p.clone());
            pp.bias.data_mut()[j] += h;
            pm.bias.data_mut()[j] -= h;
            let n = (objective(&x, &pp)? - objective(&x, &pm)?) / (2.0 * h);
            groups[3].record(g.d_bias.data()[j], n, cfg.floor);
        }
    }
    Ok(groups.into())
}

fn slot_name(layer: &Layer, slot: usize) -> &'static str {
    match (layer, slot) {
        (Layer::Dense(_), 0) => "weight",
        (_, 0) => "kernel",
        (_, 1) => "bias",
        _ => "b",
    }
}

/// Cross-entropy gradient of every parameter of `g` at `(x, label)` in
/// evaluation mode, one group per parameter tensor.
pub fn check_graph(
    g: &ModelGraph,
    x: &Tensor,
    label: usize,
    prefix: &str,
    cfg: &GradcheckConfig,
) -> Result<Vec<GroupReport>> {
    let loss = |g: &ModelGraph| -> Result<f64> { Ok(cross_entropy_loss(&g.forward(x)?, label)?.0) };
    let mut unused = rng::seeded(0);
    let trace = g.forward_traced(x, Mode::Eval, &mut unused)?;
    let (_, d_scores) = cross_entropy_loss(trace.output(), label)?;
    let grads = g.backward(&trace, &d_scores)?;

    let mut work = g.clone();
    let mut reports = Vec::new();
    for (id, analytic) in grads.iter() {
        let layer = &g.layers()[id.layer];
        let is_b = matches!(layer, Layer::EnkConv(_)) && id.slot == 2;
        let mut rep = GroupReport::new(
            format!(
                "{prefix}layer{}.{}.{}",
                id.layer,
                layer.kind(),
                slot_name(layer, id.slot)
            ),
            cfg.graph_tolerance,
        );
        for (j, &a) in analytic.iter().enumerate() {
            let original = g.params()[k_index(g, id)].1[j];
            let mut at = |v: f64| -> Result<f64> {
                work.params_mut()[k_index(g, id)].1[j] = v;
                loss(&work)
            };
            let n = (at(original + cfg.step)? - at(original - cfg.step)?) / (2.0 * cfg.step);
            at(original)?;
            let a = if is_b { a * (1.0 + cfg.perturb_db) } else { a };
            rep.record(a, n, cfg.floor);
        }
        reports.push(rep);
    }
    Ok(reports)
}

fn k_index(g: &ModelGraph, id: crate::nn::ParamId) -> usize {
    g.params()
        .iter()
        .position(|(pid, _)| *pid == id)
        .expect("parameter id comes from this graph")
}

/// Whole-graph checks for every family and variant at a 4 x 32 input with
/// miniature widths and a nonzero `b`.
pub fn check_model_zoo(cfg: &GradcheckConfig) -> Result<Vec<GroupReport>> {
    let mut reports = Vec::new();
    let mut rng = rng::seeded(rng::derive(cfg.seed, &[0x9a]));
    for family in Family::ALL {
        for variant in Variant::ALL {
            let spec = ModelSpec {
                widths: Widths::miniature(family),
                b_init: 0.02,
                seed: rng::derive(cfg.seed, &[1]),
                ..ModelSpec::new(family, variant, 4, 32, 2)
            };
            let g = build_model(&spec)?;
            let x = random_tensor(&mut rng, &[1, 4, 32])?;
            let label = rng.random_range(0..2);
            reports.extend(check_graph(
                &g,
                &x,
                label,
                &format!("{family}.{variant}."),
                cfg,
            )?);
        }
    }
    Ok(reports)
}

/// Both suites.
pub fn run_all(cfg: &GradcheckConfig) -> Result<Vec<GroupReport>> {
    let mut reports = check_conv_ops(cfg)?;
    reports.extend(check_model_zoo(cfg)?);
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_suite_passes() {
        let reports = check_conv_ops(&GradcheckConfig::default()).unwrap();
        assert_eq!(reports.len(), 4);
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn zoo_suite_passes() {
        let reports = check_model_zoo(&GradcheckConfig::default()).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
        assert!(reports
            .iter()
            .any(|r| r.name.starts_with("deep-toy.enk.") && r.name.ends_with(".b")));
    }

    #[test]
    fn perturbed_db_is_caught() {
        let cfg = GradcheckConfig {
            perturb_db: 0.1,
            instances: 4,
            ..Default::default()
        };
        let reports = check_conv_ops(&cfg).unwrap();
        let db = reports.iter().find(|r| r.name == "conv.d_b").unwrap();
        assert!(!db.passed());
        assert!(reports
            .iter()
            .filter(|r| r.name != "conv.d_b")
            .all(|r| r.passed()));
    }

    #[test]
    fn zero_b_graph_still_checks_db() {
        let spec = ModelSpec {
            widths: Widths::miniature(Family::Compact),
            ..ModelSpec::new(Family::Compact, Variant::Enk, 4, 32, 2)
        };
        let g = build_model(&spec).unwrap();
        let x = Tensor::new(&[1, 4, 32], 0.3).unwrap();
        let reports = check_graph(&g, &x, 1, "", &GradcheckConfig::default()).unwrap();
        let db = reports.iter().find(|r| r.name.ends_with(".b")).unwrap();
        assert_eq!(db.checked, 1);
        assert!(db.passed(), "{db:?}");
    }

    #[test]
    fn nan_fails() {
        let mut r = GroupReport::new("x", 1e-4);
        r.record(f64::NAN, 1.0, 1e-4);
        assert!(!r.passed());
    }
}
