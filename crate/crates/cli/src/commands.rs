use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use enk_core::conv::{conv2d_forward, enk_forward_decomposed, enk_forward_naive, EnkConvParams};
use enk_core::data::{
    csv_import, dataset_preset, epochs_read, epochs_write, split_and_batch, synth_generate,
    DatasetPreset, EpochSet, SynthSpec, TABLE_PRESETS,
};
use enk_core::gradcam::{
    default_layer, grad_cam, grid_csv, heatmap_diff, heatmap_encode, ExportFormat, HeatMap,
};
use enk_core::gradcheck::{run_all, GradcheckConfig};
use enk_core::metrics::{
    accuracy, confusion, f1_class1, f1_weighted, format_g9, write_csv, MetricsRow,
};
use enk_core::nn::{
    checkpoint, evaluate, fit, AdamConfig, AdamState, Executor, LayerKind, ModelGraph,
};
use enk_core::zoo::{build_model, Family, ModelSpec, Variant};
use enk_core::{rng, Element, Tensor};
use rand::Rng as _;

use crate::config::{parse_bool, Config};
use crate::error::CliError;

pub const MAX_EPOCHS: usize = 500;

type Res<T = ()> = Result<T, CliError>;

/// Shared state of one command invocation.
pub struct Run<'a> {
    pub cfg: &'a Config,
    pub command: &'static str,
    pub exec: Executor,
    derived: BTreeMap<String, String>,
    outputs: Vec<PathBuf>,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a Config, command: &'static str, exec: Executor) -> Self {
        Self {
            cfg,
            command,
            exec,
            derived: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    fn derive(&mut self, key: &str, value: impl ToString) {
        if !self.cfg.is_set(key) {
            self.derived.insert(key.to_string(), value.to_string());
        }
    }

    fn out_dir(&self) -> Res<PathBuf> {
        let dir = PathBuf::from(self.cfg.get("out").unwrap_or("."));
        if !dir.is_dir() {
            return Err(CliError::io(
                &dir,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "output directory does not exist",
                ),
            ));
        }
        Ok(dir)
    }

    fn run_id(&mut self, fallback: impl FnOnce() -> String) -> String {
        let id = self
            .cfg
            .get("run_id")
            .map(str::to_string)
            .unwrap_or_else(fallback);
        self.derive("run_id", &id);
        id
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Res {
        std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    /// Writes `{out}/{run_id}.{command}.manifest` echoing the resolved
    /// config and every file written.
    fn manifest(&mut self, run_id: &str) -> Res {
        let path = self
            .out_dir()?
            .join(format!("{run_id}.{}.manifest", self.command));
        let mut text = format!(
            "enk-cli {}\ncommand = {}\n",
            env!("CARGO_PKG_VERSION"),
            self.command
        );
        text.push_str(&self.cfg.resolved_lines(&self.derived));
        for o in &self.outputs {
            text.push_str(&format!("output = {}\n", o.display()));
        }
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }
}

fn synth_from_config(cfg: &Config) -> Res<(DatasetPreset, SynthSpec)> {
    let name: String = cfg.require("data.preset")?;
    let preset = dataset_preset(&name)
        .ok_or_else(|| CliError::Usage(format!("unknown data.preset {name:?}")))?;
    let spec = preset
        .synth_spec(
            cfg.require("data.trials")?,
            cfg.require("data.noise_std")?,
            cfg.require("data.seed")?,
        )
        .with_amplitude(cfg.require("data.amplitude")?);
    Ok((preset, spec))
}

/// The epoch set named by the config and a short dataset name.
fn load_data(cfg: &Config) -> Res<(EpochSet, String, Option<DatasetPreset>)> {
    if let Some(csv) = cfg.get("data.csv") {
        let labels: PathBuf = cfg.require("data.labels")?;
        let e = csv_import(
            csv,
            labels,
            cfg.require("data.channels")?,
            cfg.require("data.sample_rate")?,
        )?;
        return Ok((e, "csv".into(), None));
    }
    if let Some(file) = cfg.get("data.file") {
        let e = epochs_read(file)?;
        let name = Path::new(file)
            .file_stem()
            .map_or("data".into(), |s| s.to_string_lossy().into_owned());
        return Ok((e, name, None));
    }
    let (preset, spec) = synth_from_config(cfg)?;
    Ok((synth_generate(&spec)?, preset.name.into(), Some(preset)))
}

fn model_spec(cfg: &Config, e: &EpochSet, seed: u64) -> Res<ModelSpec> {
    let family: Family = cfg.require::<String>("model.family")?.parse()?;
    let variant: Variant = cfg.require::<String>("model.variant")?.parse()?;
    let mut spec = ModelSpec::new(
        family,
        variant,
        e.channels(),
        e.samples(),
        e.class_count().max(2),
    );
    spec.b_init = cfg.require("model.b_init")?;
    spec.noise_sigma = cfg.require("model.noise_sigma")?;
    spec.seed = seed;
    let w = &mut spec.widths;
    for (key, field) in [
        ("model.temporal", &mut w.temporal),
        ("model.filters", &mut w.filters),
        ("model.spatial_filters", &mut w.spatial_filters),
        ("model.slot", &mut w.slot),
        ("model.pool", &mut w.pool),
        ("model.block_kernel", &mut w.block_kernel),
    ] {
        if let Some(v) = cfg.parse(key)? {
            *field = v;
        }
    }
    Ok(spec)
}

fn variant_of(g: &ModelGraph) -> Variant {
    if g.count_kind(LayerKind::EnkConv) > 0 {
        Variant::Enk
    } else if g.count_kind(LayerKind::GaussianNoise) > 0 {
        Variant::Gauss
    } else {
        Variant::Org
    }
}

pub fn gen_data(run: &mut Run) -> Res {
    let (preset, spec) = synth_from_config(run.cfg)?;
    let run_id = run.run_id(|| format!("{}-s{}", preset.name, spec.seed));
    let path = match run.cfg.get("data.file") {
        Some(f) => PathBuf::from(f),
        None => run.out_dir()?.join(format!("{run_id}.epochs")),
    };
    run.derive("data.file", path.display());
    let e = synth_generate(&spec)?;
    epochs_write(&e, &path)?;
    run.outputs.push(path.clone());
    println!(
        "wrote {}: {} trials x {} channels x {} samples, {} classes, {} Hz",
        path.display(),
        e.trials(),
        e.channels(),
        e.samples(),
        e.class_count(),
        e.sample_rate()
    );
    run.manifest(&run_id)
}

pub fn train(run: &mut Run) -> Res {
    let cfg = run.cfg;
    let (e, dataset, preset) = load_data(cfg)?;
    let epochs: usize = cfg.require("train.epochs")?;
    if epochs == 0 || epochs > MAX_EPOCHS {
        return Err(CliError::Usage(format!(
            "train.epochs = {epochs} outside 1..={MAX_EPOCHS}"
        )));
    }
    let lr: f64 = cfg.require("train.lr")?;
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(CliError::Usage(format!(
            "train.lr = {lr} must be finite and non-negative"
        )));
    }
    let reproducible = parse_bool(
        "train.reproducible",
        cfg.get("train.reproducible").unwrap_or("true"),
    )?;
    let seed: u64 = cfg.require("train.seed")?;
    let batch_size = match cfg.parse::<usize>("train.batch_size")? {
        Some(b) => b,
        None => preset.map_or(16, |p| p.batch_size),
    };
    run.derive("train.batch_size", batch_size);
    let model_seed = cfg.parse::<u64>("model.seed")?.unwrap_or(seed);
    run.derive("model.seed", model_seed);
    let spec = model_spec(cfg, &e, model_seed)?;
    let run_id = run.run_id(|| format!("{dataset}-{}-{}-s{seed}", spec.family, spec.variant));
    let out = run.out_dir()?;

    let split = split_and_batch(
        &e,
        cfg.require("train.val_fraction")?,
        batch_size,
        rng::derive(seed, &[0]),
    )?;
    let mut g = build_model(&spec)?;
    let mut adam = AdamState::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    let history = fit(
        &mut g,
        &e,
        &split.batches,
        &split.val,
        &mut adam,
        epochs,
        rng::derive(seed, &[1]),
        &run.exec,
    )?;

    let scored: Vec<usize> = if split.val.is_empty() {
        split.train().collect()
    } else {
        split.val.clone()
    };
    let ev = evaluate(&g, &e, &scored, &run.exec)?;
    let cm = confusion(&ev.labels, &ev.predictions, g.class_count())?;
    let row = MetricsRow {
        run_id: run_id.clone(),
        dataset,
        family: spec.family.to_string(),
        variant: spec.variant.to_string(),
        seed,
        accuracy: accuracy(&cm)?,
        f1_weighted: f1_weighted(&cm)?,
        f1_class1: f1_class1(&cm)?,
        epochs_run: history.len(),
        param_count: g.param_count(),
    };

    run.write(
        &out.join(format!("{run_id}.enkm")),
        &checkpoint::encode(&g)?,
    )?;
    let opt = |v: Option<f64>| v.map(format_g9).unwrap_or_default();
    let curve = write_csv(
        &[
            "epoch",
            "train_loss",
            "train_accuracy",
            "val_loss",
            "val_accuracy",
        ],
        history.iter().map(|r| {
            vec![
                r.epoch.to_string(),
                format_g9(r.train_loss),
                format_g9(r.train_accuracy),
                opt(r.val_loss),
                opt(r.val_accuracy),
            ]
        }),
    )?;
    run.write(&out.join(format!("{run_id}.epochs.csv")), curve.as_bytes())?;
    run.write(
        &out.join(format!("{run_id}.metrics.csv")),
        row.to_csv()?.as_bytes(),
    )?;
    let last = history.last().expect("at least one epoch");
    println!(
        "{run_id}: {} epochs{}, final train loss {}, {} accuracy {}, f1_weighted {}, {} parameters",
        history.len(),
        if reproducible {
            ""
        } else {
            " (reproducible=false)"
        },
        format_g9(last.train_loss),
        if split.val.is_empty() {
            "train"
        } else {
            "validation"
        },
        format_g9(row.accuracy),
        format_g9(row.f1_weighted),
        row.param_count
    );
    run.manifest(&run_id)
}

pub fn eval(run: &mut Run) -> Res {
    let cfg = run.cfg;
    let ckpt: PathBuf = cfg.require("eval.checkpoint")?;
    let g = checkpoint::load(&ckpt)?;
    let (e, dataset, _) = load_data(cfg)?;
    let want = [1, e.channels(), e.samples()];
    if g.input_shape() != want {
        return Err(enk_core::Error::Graph {
            layer: 0,
            msg: format!(
                "checkpoint expects input {:?}, data has {:?}",
                g.input_shape(),
                want
            ),
        }
        .into());
    }
    if e.class_count() > g.class_count() {
        return Err(enk_core::Error::Graph {
            layer: g.len() - 1,
            msg: format!(
                "checkpoint scores {} classes, data has {}",
                g.class_count(),
                e.class_count()
            ),
        }
        .into());
    }
    let variant = variant_of(&g);
    let seed: u64 = cfg.require("train.seed")?;
    let run_id = run.run_id(|| format!("{dataset}-{variant}-eval"));
    let out = run.out_dir()?;
    let all: Vec<usize> = (0..e.trials()).collect();
    let ev = evaluate(&g, &e, &all, &run.exec)?;
    let cm = confusion(&ev.labels, &ev.predictions, g.class_count())?;
    let row = MetricsRow {
        run_id: run_id.clone(),
        dataset,
        family: cfg.require("model.family")?,
        variant: variant.to_string(),
        seed,
        accuracy: accuracy(&cm)?,
        f1_weighted: f1_weighted(&cm)?,
        f1_class1: f1_class1(&cm)?,
        epochs_run: 0,
        param_count: g.param_count(),
    };
    let csv = row.to_csv()?;
    run.write(&out.join(format!("{run_id}.eval.csv")), csv.as_bytes())?;
    print!("{csv}");
    run.manifest(&run_id)
}

pub fn gradcheck(run: &mut Run) -> Res {
    let cfg = run.cfg;
    let gc = GradcheckConfig {
        instances: cfg.require("gradcheck.instances")?,
        seed: cfg.require("gradcheck.seed")?,
        graph_tolerance: cfg.require("gradcheck.tolerance")?,
        conv_tolerance: cfg.require("gradcheck.conv_tolerance")?,
        perturb_db: cfg.require("gradcheck.perturb_db")?,
        ..GradcheckConfig::default()
    };
    let run_id = run.run_id(|| "gradcheck".into());
    let out = run.out_dir()?;
    let reports = run_all(&gc)?;
    let mut failed = Vec::new();
    let mut rows = Vec::new();
    for r in &reports {
        let status = if r.passed() { "pass" } else { "FAIL" };
        println!(
            "{:<48} {:>6} entries  max rel err {:<12} tol {:<8} {status}",
            r.name,
            r.checked,
            format_g9(r.max_rel_error),
            format_g9(r.tolerance)
        );
        if !r.passed() {
            failed.push(r.name.clone());
        }
        rows.push(vec![
            r.name.clone(),
            r.checked.to_string(),
            format_g9(r.max_rel_error),
            format_g9(r.tolerance),
            status.to_lowercase(),
        ]);
    }
    let csv = write_csv(
        &["group", "checked", "max_rel_error", "tolerance", "status"],
        rows,
    )?;
    run.write(&out.join(format!("{run_id}.gradcheck.csv")), csv.as_bytes())?;
    run.manifest(&run_id)?;
    if failed.is_empty() {
        println!("all {} groups pass", reports.len());
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "{} of {} gradient groups failed: {}",
            failed.len(),
            reports.len(),
            failed.join(", ")
        )))
    }
}

fn random<T: Element>(r: &mut rng::Rng, shape: &[usize]) -> Res<Tensor<T>> {
    let n = shape.iter().product();
    Ok(Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| T::from_f64(r.random_range(-1.0..1.0)))
            .collect(),
    )?)
}

fn rel_max_diff<T: Element>(a: &Tensor<T>, reference: &Tensor<T>) -> f64 {
    let scale = reference.max_abs().as_f64().max(f64::MIN_POSITIVE);
    let diff = a
        .data()
        .iter()
        .zip(reference.data())
        .fold(0.0f64, |m, (x, y)| m.max((x.as_f64() - y.as_f64()).abs()));
    diff / scale
}

fn median_and_min(mut ms: Vec<f64>) -> (f64, f64) {
    ms.sort_by(f64::total_cmp);
    let n = ms.len();
    let median = if n % 2 == 1 {
        ms[n / 2]
    } else {
        0.5 * (ms[n / 2 - 1] + ms[n / 2])
    };
    (median, ms[0])
}

fn bench_dtype<T: Element>(cfg: &Config, rows: &mut Vec<Vec<String>>) -> Res {
    let k: usize = cfg.require("benchmark.k")?;
    if k == 0 {
        return Err(CliError::Usage("benchmark.k must be at least 1".into()));
    }
    let maps: usize = cfg.require("benchmark.maps")?;
    let filters: usize = cfg.require("benchmark.filters")?;
    let (kh, kw): (usize, usize) = (cfg.require("benchmark.kh")?, cfg.require("benchmark.kw")?);
    let b: f64 = cfg.require("benchmark.b")?;
    let seed: u64 = cfg.require("benchmark.seed")?;
    // Agreement required before anything is timed.
    let tolerance = if T::NAME == "f64" { 1e-10 } else { 1e-4 };
    for (pi, preset) in TABLE_PRESETS.iter().enumerate() {
        let mut r = rng::seeded(rng::derive(seed, &[pi as u64]));
        let x = random::<T>(&mut r, &[maps, preset.channels, preset.samples])?;
        let params = EnkConvParams::new(
            random::<T>(&mut r, &[filters, maps, kh, kw])?,
            random::<T>(&mut r, &[filters])?,
            T::from_f64(b),
        )?;
        let shape = format!("{}x{}x{}", maps, preset.channels, preset.samples);

        let plain = params.clone().with_b(T::zero());
        if enk_forward_naive(&x, &plain)? != conv2d_forward(&x, &plain)? {
            return Err(CliError::Check(format!(
                "{}: naive EnK at b = 0 differs from convolution",
                preset.name
            )));
        }
        let naive = enk_forward_naive(&x, &params)?;
        let err = rel_max_diff(&enk_forward_decomposed(&x, &params)?, &naive);
        if err.is_nan() || err >= tolerance {
            return Err(CliError::Check(format!(
                "{}: decomposed EnK relative error {err:e} exceeds {tolerance:e}",
                preset.name
            )));
        }

        type Impl<T> = fn(&Tensor<T>, &EnkConvParams<T>) -> enk_core::Result<Tensor<T>>;
        let impls: [(&str, Impl<T>); 3] = [
            ("naive", enk_forward_naive),
            ("decomposed", enk_forward_decomposed),
            ("conv", conv2d_forward),
        ];
        for (name, f) in impls {
            let mut times = Vec::with_capacity(k);
            for _ in 0..k {
                let t = Instant::now();
                let y = f(&x, &params)?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(y);
            }
            let (median, min) = median_and_min(times);
            println!(
                "{:<5} {shape:<12} {name:<10} {} median {} ms",
                preset.name,
                T::NAME,
                format_g9(median)
            );
            rows.push(vec![
                preset.name.to_string(),
                shape.clone(),
                name.to_string(),
                T::NAME.to_string(),
                k.to_string(),
                format_g9(median),
                format_g9(min),
                format_g9(err),
            ]);
        }
    }
    Ok(())
}

pub fn benchmark(run: &mut Run) -> Res {
    let dtype: String = run.cfg.require("benchmark.dtype")?;
    let run_id = run.run_id(|| "benchmark".into());
    let out = run.out_dir()?;
    let mut rows = Vec::new();
    match dtype.as_str() {
        "f64" => bench_dtype::<f64>(run.cfg, &mut rows)?,
        "f32" => bench_dtype::<f32>(run.cfg, &mut rows)?,
        other => {
            return Err(CliError::Usage(format!(
                "benchmark.dtype = {other:?}, expected f32 or f64"
            )))
        }
    }
    let csv = write_csv(
        &[
            "preset",
            "shape",
            "impl",
            "dtype",
            "k",
            "median_ms",
            "min_ms",
            "decomposed_rel_err",
        ],
        rows,
    )?;
    run.write(&out.join(format!("{run_id}.benchmark.csv")), csv.as_bytes())?;
    run.manifest(&run_id)
}

fn export(run: &mut Run, stem: &Path, h: &HeatMap, formats: &[ExportFormat]) -> Res {
    for &f in formats {
        let ext = match f {
            ExportFormat::Csv => "csv",
            ExportFormat::Pgm => "pgm",
        };
        let path = stem.with_extension(ext);
        run.write(&path, &heatmap_encode(h, f))?;
    }
    Ok(())
}

pub fn gradcam(run: &mut Run) -> Res {
    let cfg = run.cfg;
    let mut models = Vec::new();
    for (name, key) in [
        ("org", "gradcam.org_checkpoint"),
        ("enk", "gradcam.enk_checkpoint"),
    ] {
        if let Some(p) = cfg.get(key) {
            models.push((name, checkpoint::load(p)?));
        }
    }
    if models.is_empty() {
        return Err(CliError::Usage(
            "gradcam needs gradcam.org_checkpoint and/or gradcam.enk_checkpoint".into(),
        ));
    }
    let formats = cfg
        .require::<String>("gradcam.format")?
        .split(',')
        .map(|f| f.trim().parse::<ExportFormat>())
        .collect::<Result<Vec<_>, _>>()?;
    let trials = cfg
        .require::<String>("gradcam.trials")?
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| CliError::Usage(format!("gradcam.trials entry {t:?}: {e}")))
        })
        .collect::<Res<Vec<_>>>()?;
    let (e, dataset, _) = load_data(cfg)?;
    let run_id = run.run_id(|| format!("{dataset}-gradcam"));
    let out = run.out_dir()?;
    let class_override: Option<usize> = cfg.parse("gradcam.class")?;
    let layer_override: Option<usize> = cfg.parse("gradcam.layer")?;

    for &i in &trials {
        let x = e.trial_input(i)?;
        let class = class_override.unwrap_or(e.labels()[i]);
        let mut maps = Vec::new();
        for (name, g) in &models {
            let layer = match layer_override {
                Some(l) => l,
                None => default_layer(g).ok_or_else(|| {
                    CliError::Usage(format!("{name} checkpoint has no convolution layer"))
                })?,
            };
            let h = grad_cam(g, &x, class, layer)?;
            let marginal = h.time_marginal();
            let peak = enk_core::gradcam::argmax_first(&marginal).unwrap_or(0);
            println!("trial {i} class {class} {name}: layer {layer}, peak sample {peak}");
            export(
                run,
                &out.join(format!("{run_id}.{name}.trial{i}.class{class}")),
                &h,
                &formats,
            )?;
            maps.push(h);
        }
        if let [a, b] = maps.as_slice() {
            let d = heatmap_diff(a, b)?;
            export(
                run,
                &out.join(format!("{run_id}.diff.trial{i}.class{class}")),
                &d,
                &formats,
            )?;
        }
        let raw = Tensor::from_vec(
            &[e.channels(), e.samples()],
            e.trial(i).iter().map(|&v| v as f64).collect(),
        )?;
        run.write(
            &out.join(format!("{run_id}.raw.trial{i}.csv")),
            grid_csv(&raw).as_bytes(),
        )?;
    }
    run.manifest(&run_id)
}
