//! Acceptance suite. Every criterion runs at its stated tolerance and prints
//! one PASS or FAIL line; the test fails if any criterion does.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use enk_core::conv::{conv2d_forward, enk_forward_decomposed, enk_forward_naive, EnkConvParams};
use enk_core::data::{dataset_preset, split_and_batch, synth_generate, TABLE_PRESETS};
use enk_core::gradcam::{argmax_first, default_layer, grad_cam};
use enk_core::gradcheck::{check_conv_ops, check_model_zoo, GradcheckConfig};
use enk_core::metrics::{accuracy, confusion, f1_weighted};
use enk_core::nn::{fit, AdamConfig, AdamState, Executor};
use enk_core::zoo::{build_model, list_presets, Family, ModelSpec, Variant};
use enk_core::{rng, Tensor};
use rand::Rng as _;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn random(r: &mut rng::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

/// One problem of the convolution sweep: input and parameters with nonzero b.
fn sweep_instance(i: usize) -> (Tensor, EnkConvParams) {
    let mut r = rng::seeded(rng::derive(2024, &[i as u64]));
    let (c, h, w, f, kh, kw) = match TABLE_PRESETS.get(i) {
        Some(p) => (1, p.channels, p.samples, 4, 1, 16),
        None => {
            let (kh, kw) = (r.random_range(1..=4), r.random_range(1..=9));
            (
                r.random_range(1..=4),
                kh + r.random_range(0..=8),
                kw + r.random_range(0..=40),
                r.random_range(1..=4),
                kh,
                kw,
            )
        }
    };
    let x = random(&mut r, &[c, h, w]);
    let kernel = random(&mut r, &[f, c, kh, kw]);
    let bias = random(&mut r, &[f]);
    let b = r.random_range(-0.1..0.1);
    (x, EnkConvParams::new(kernel, bias, b).unwrap())
}

const SWEEP: usize = 100;

fn reduction_identity() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..SWEEP {
        let (x, p) = sweep_instance(i);
        let p = p.with_b(0.0);
        let a = enk_forward_naive(&x, &p).unwrap();
        let c = conv2d_forward(&x, &p).unwrap();
        for (u, v) in a.data().iter().zip(c.data()) {
            worst = worst.max((u - v).abs());
        }
    }
    let detail = format!("max abs diff {worst:e} over {SWEEP} instances");
    if worst == 0.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn decomposition_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for i in 0..SWEEP {
        let (x, p) = sweep_instance(i);
        let naive = enk_forward_naive(&x, &p).unwrap();
        let dec = enk_forward_decomposed(&x, &p).unwrap();
        let scale = naive.max_abs().max(f64::MIN_POSITIVE);
        for (u, v) in naive.data().iter().zip(dec.data()) {
            worst = worst.max((u - v).abs() / scale);
        }
    }
    let detail = format!("max relative error {worst:e} over {SWEEP} instances");
    if worst < 1e-10 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_fidelity() -> Outcome {
    let cfg = GradcheckConfig {
        step: 1e-5,
        conv_tolerance: 1e-5,
        graph_tolerance: 1e-4,
        instances: 20,
        ..Default::default()
    };
    let conv = check_conv_ops(&cfg).unwrap();
    let zoo = check_model_zoo(&cfg).unwrap();
    let worst = |rs: &[enk_core::gradcheck::GroupReport]| {
        rs.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    };
    let failed: Vec<&str> = conv
        .iter()
        .chain(&zoo)
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let families: Vec<bool> = Family::ALL
        .iter()
        .map(|f| zoo.iter().any(|r| r.name.starts_with(&format!("{f}."))))
        .collect();
    let detail = format!(
        "conv worst {:e} (tol 1e-5, {} instances), graph worst {:e} (tol 1e-4, {} groups)",
        worst(&conv),
        cfg.instances,
        worst(&zoo),
        zoo.len()
    );
    if failed.is_empty() && families.iter().all(|&b| b) {
        Ok(detail)
    } else {
        Err(format!("{detail}; failed {failed:?}"))
    }
}

fn parameter_delta() -> Outcome {
    let mut bad = Vec::new();
    let mut n = 0;
    for named in list_presets() {
        let count = |v| {
            build_model(&named.spec.with_variant(v))
                .unwrap()
                .param_count()
        };
        let (org, enk, gauss) = (
            count(Variant::Org),
            count(Variant::Enk),
            count(Variant::Gauss),
        );
        n += 1;
        if enk != org + 1 || gauss != org {
            bad.push(format!(
                "{} {}: org {org} enk {enk} gauss {gauss}",
                named.preset, named.spec.family
            ));
        }
    }
    if bad.is_empty() && n == 12 {
        Ok(format!(
            "{n} family x preset pairs: enk = org + 1, gauss = org"
        ))
    } else {
        Err(format!("{n} pairs checked, mismatches {bad:?}"))
    }
}

struct RunResult {
    val_accuracy: f64,
    first_loss: f64,
    last_loss: f64,
}

fn train_timepos(
    family: Family,
    variant: Variant,
    noise: f64,
    batch: usize,
    seed: u64,
) -> RunResult {
    let p = dataset_preset("timepos").unwrap();
    let e = synth_generate(&p.synth_spec(200, noise, seed)).unwrap();
    let split = split_and_batch(&e, 0.2, batch, rng::derive(seed, &[0])).unwrap();
    let mut g = build_model(&ModelSpec {
        seed,
        ..ModelSpec::new(family, variant, p.channels, p.samples, p.classes)
    })
    .unwrap();
    let mut adam = AdamState::new(AdamConfig::default());
    let h = fit(
        &mut g,
        &e,
        &split.batches,
        &split.val,
        &mut adam,
        100,
        rng::derive(seed, &[1]),
        &Executor::sequential(),
    )
    .unwrap();
    RunResult {
        val_accuracy: h.last().unwrap().val_accuracy.unwrap(),
        first_loss: h[0].train_loss,
        last_loss: h.last().unwrap().train_loss,
    }
}

fn learnability() -> Outcome {
    // Noise levels span noiseless to 0.1; batch sizes are the preset ones.
    let settings = [(0.0, 8), (0.1, 16), (0.1, 8), (0.1, 4)];
    let mut ok = true;
    let mut parts = Vec::new();
    for family in Family::ALL {
        let mut worst = f64::INFINITY;
        let mut org = 0.0;
        let mut enk_mean = 0.0;
        for (i, &(noise, batch)) in settings.iter().enumerate() {
            let r = train_timepos(family, Variant::Enk, noise, batch, 1 + i as u64);
            let pass = r.val_accuracy >= 0.90 && r.last_loss < r.first_loss;
            if !pass {
                ok = false;
                println!(
                    "  {family} enk noise {noise} batch {batch}: val acc {:.3}, loss {:.4} -> {:.4}",
                    r.val_accuracy, r.first_loss, r.last_loss
                );
            }
            worst = worst.min(r.val_accuracy);
            enk_mean += r.val_accuracy / settings.len() as f64;
            if noise > 0.0 && batch == 8 {
                org = train_timepos(family, Variant::Org, noise, batch, 1 + i as u64).val_accuracy;
            }
        }
        parts.push(format!(
            "{family} worst enk {worst:.3} (mean {enk_mean:.3}, org at noise 0.1 batch 8 {org:.3})"
        ));
    }
    let detail = parts.join("; ");
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracle() -> Outcome {
    let mut r = rng::seeded(7);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = r.random_range(2..=5);
        let n = r.random_range(1..=60);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let preds: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();

        // Counting oracle straight from the definitions.
        let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
        let acc = correct as f64 / n as f64;
        let mut wf1 = 0.0;
        for c in 0..k {
            let tp = (0..n).filter(|&i| labels[i] == c && preds[i] == c).count() as f64;
            let fp = (0..n).filter(|&i| labels[i] != c && preds[i] == c).count() as f64;
            let fneg = (0..n).filter(|&i| labels[i] == c && preds[i] != c).count() as f64;
            let f1 = if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fneg)
            };
            wf1 += f1 * (tp + fneg) / n as f64;
        }

        let cm = confusion(&labels, &preds, k).unwrap();
        worst = worst
            .max((accuracy(&cm).unwrap() - acc).abs())
            .max((f1_weighted(&cm).unwrap() - wf1).abs());
    }
    let hand = f1_weighted(&confusion(&[0, 0, 1, 1], &[0, 0, 1, 0], 2).unwrap()).unwrap();
    let detail = format!("oracle max diff {worst:e} over 1000 pairs, hand case {hand:.6}");
    if worst <= 1e-12 && (hand - 0.7333).abs() <= 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradcam_locality() -> Outcome {
    let p = dataset_preset("separable").unwrap();
    let mut local = 0;
    let mut peaks = Vec::new();
    for seed in 1..=10u64 {
        let spec = p.synth_spec(200, 0.0, seed);
        let e = synth_generate(&spec).unwrap();
        let split = split_and_batch(&e, 0.2, p.batch_size, rng::derive(seed, &[0])).unwrap();
        let mut g = build_model(&ModelSpec {
            seed,
            ..ModelSpec::new(
                Family::Compact,
                Variant::Enk,
                p.channels,
                p.samples,
                p.classes,
            )
        })
        .unwrap();
        let mut adam = AdamState::new(AdamConfig::default());
        fit(
            &mut g,
            &e,
            &split.batches,
            &[],
            &mut adam,
            30,
            rng::derive(seed, &[1]),
            &Executor::sequential(),
        )
        .unwrap();

        let (class, event) = spec
            .events
            .iter()
            .enumerate()
            .find_map(|(c, ev)| ev.clone().map(|ev| (c, ev)))
            .unwrap();
        let trial = e.labels().iter().position(|&l| l == class).unwrap();
        let layer = default_layer(&g).unwrap();
        let h = grad_cam(&g, &e.trial_input(trial).unwrap(), class, layer).unwrap();
        let peak = argmax_first(&h.time_marginal()).unwrap();
        let lo = event.latency.saturating_sub(event.width);
        let hi = event.latency + 2 * event.width;
        if (lo..=hi).contains(&peak) {
            local += 1;
        }
        peaks.push(peak);
    }
    let detail = format!("{local}/10 runs local, peaks {peaks:?}");
    if local >= 8 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn train_once(dir: &Path, variant: &str, threads: &str) -> (Vec<u8>, Vec<u8>) {
    let status = Command::new(env!("CARGO_BIN_EXE_enk"))
        .args(["train", "--out"])
        .arg(dir)
        .args([
            "--data.preset",
            "timepos",
            "--data.trials",
            "60",
            "--data.noise_std",
            "0.1",
            "--model.variant",
            variant,
            "--model.b_init",
            "0.01",
            "--train.epochs",
            "10",
            "--train.seed",
            "5",
            "--train.reproducible",
            "true",
            "--run_id",
            "det",
        ])
        .env("ENK_THREADS", threads)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    (
        std::fs::read(dir.join("det.enkm")).unwrap(),
        std::fs::read(dir.join("det.metrics.csv")).unwrap(),
    )
}

fn determinism() -> Outcome {
    let mut checked = 0;
    for variant in ["enk", "gauss"] {
        let runs: Vec<_> = ["1", "1", "3"]
            .iter()
            .map(|t| {
                let dir = tempfile::tempdir().unwrap();
                train_once(dir.path(), variant, t)
            })
            .collect();
        for r in &runs[1..] {
            if r != &runs[0] {
                return Err(format!("{variant}: outputs differ between identical runs"));
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} repeat runs byte-identical (checkpoint and metrics, 1 and 3 threads)"
    ))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("1 reduction identity", reduction_identity),
        ("2 decomposition equivalence", decomposition_equivalence),
        ("3 gradient fidelity", gradient_fidelity),
        ("4 parameter delta", parameter_delta),
        ("5 end-to-end learnability", learnability),
        ("6 metric oracle", metric_oracle),
        ("7 grad-cam locality", gradcam_locality),
        ("8 determinism", determinism),
    ];
    let mut failures = Vec::new();
    for (name, f) in criteria {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        match &outcome {
            Ok(d) => println!("PASS {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                println!("FAIL {name}: {d} [{secs:.1}s]");
                failures.push(name);
            }
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
