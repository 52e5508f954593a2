//! Flat `key = value` run configuration.
//!
//! Values come from built-in defaults, then an optional config file, then
//! `--key value` flags, later sources winning. Keys are namespaced with
//! `data.`, `model.`, `train.` and one prefix per command.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::CliError;

pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(key: &'static str, default: Option<&'static str>, help: &'static str) -> KeySpec {
    KeySpec { key, default, help }
}

pub const KEYS: &[KeySpec] = &[
    key("out", Some("."), "output directory, must exist"),
    key(
        "run_id",
        None,
        "prefix of every output file; derived from the config when unset",
    ),
    key(
        "data.preset",
        Some("p300"),
        "synthetic dataset: cc, phrc, p300, mrcp, timepos, separable",
    ),
    key("data.trials", Some("200"), "synthetic trial count"),
    key(
        "data.noise_std",
        Some("0.5"),
        "white-noise standard deviation",
    ),
    key("data.amplitude", Some("1"), "event amplitude"),
    key("data.seed", Some("0"), "generation seed"),
    key(
        "data.file",
        None,
        "epoch file: written by gen-data, read by the other commands",
    ),
    key(
        "data.csv",
        None,
        "CSV with trials x channels rows and one column per sample",
    ),
    key(
        "data.labels",
        None,
        "CSV with one label per trial, used with data.csv",
    ),
    key("data.channels", None, "channel count of data.csv"),
    key(
        "data.sample_rate",
        Some("1000"),
        "sample rate of data.csv in Hz",
    ),
    key(
        "model.family",
        Some("compact-toy"),
        "compact-toy, shallow-toy or deep-toy",
    ),
    key("model.variant", Some("enk"), "org, enk or gauss"),
    key(
        "model.b_init",
        Some("0"),
        "initial time scale b of the EnK layer",
    ),
    key(
        "model.noise_sigma",
        Some("0.1"),
        "standard deviation of the gauss variant's noise",
    ),
    key(
        "model.seed",
        None,
        "weight-init seed, defaults to train.seed",
    ),
    key("model.temporal", None, "first temporal kernel width"),
    key("model.filters", None, "filters of the first convolution"),
    key(
        "model.spatial_filters",
        None,
        "filters of the spatial convolution",
    ),
    key(
        "model.slot",
        None,
        "kernel width of the slot after the first convolution",
    ),
    key("model.pool", None, "pool width"),
    key(
        "model.block_kernel",
        None,
        "temporal kernel width of later blocks",
    ),
    key("train.epochs", Some("500"), "epochs to run, at most 500"),
    key(
        "train.batch_size",
        None,
        "batch size, defaults to the preset's (16, 16, 8, 4)",
    ),
    key("train.lr", Some("0.001"), "Adam learning rate"),
    key("train.seed", Some("0"), "split, shuffle and noise seed"),
    key(
        "train.val_fraction",
        Some("0.2"),
        "stratified validation fraction in [0, 1)",
    ),
    key(
        "train.reproducible",
        Some("true"),
        "ordered gradient reduction; recorded in the manifest",
    ),
    key("eval.checkpoint", None, "checkpoint to evaluate"),
    key(
        "gradcheck.instances",
        Some("20"),
        "random convolution problems",
    ),
    key("gradcheck.seed", Some("0"), "seed of the random problems"),
    key(
        "gradcheck.tolerance",
        Some("1e-4"),
        "relative tolerance of the whole-graph suite",
    ),
    key(
        "gradcheck.conv_tolerance",
        Some("1e-5"),
        "relative tolerance of the convolution suite",
    ),
    key(
        "gradcheck.perturb_db",
        Some("0"),
        "relative error injected into analytic d_b",
    ),
    key(
        "benchmark.k",
        Some("9"),
        "timed repetitions per implementation",
    ),
    key("benchmark.dtype", Some("f64"), "f32 or f64"),
    key("benchmark.maps", Some("4"), "input feature maps"),
    key("benchmark.filters", Some("4"), "output filters"),
    key("benchmark.kh", Some("1"), "kernel height"),
    key("benchmark.kw", Some("16"), "kernel width"),
    key("benchmark.b", Some("0.01"), "time scale used for timing"),
    key("benchmark.seed", Some("0"), "input seed"),
    key(
        "gradcam.org_checkpoint",
        None,
        "checkpoint of the org model",
    ),
    key(
        "gradcam.enk_checkpoint",
        None,
        "checkpoint of the enk model",
    ),
    key("gradcam.trials", Some("0"), "comma-separated trial indices"),
    key(
        "gradcam.class",
        None,
        "target class, defaults to each trial's label",
    ),
    key(
        "gradcam.layer",
        None,
        "target layer, defaults to the first convolution",
    ),
    key(
        "gradcam.format",
        Some("csv,pgm"),
        "csv, pgm or both, comma-separated",
    ),
];

/// Short flags accepted in place of full keys.
const ALIASES: &[(&str, &str)] = &[
    ("checkpoint", "eval.checkpoint"),
    ("org-checkpoint", "gradcam.org_checkpoint"),
    ("enk-checkpoint", "gradcam.enk_checkpoint"),
    ("run-id", "run_id"),
];

fn spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|k| k.key == key)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = ALIASES
            .iter()
            .find(|(a, _)| *a == key)
            .map_or(key, |(_, k)| *k);
        if spec(key).is_none() {
            return Err(CliError::Usage(format!("unknown key {key:?}")));
        }
        self.values
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn parse_file_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!("{origin}:{}: expected key = value", i + 1))
            })?;
            self.set(k.trim(), v)
                .map_err(|e| CliError::Usage(format!("{origin}:{}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.parse_file_text(&text, &path.display().to_string())
    }

    /// Applies `--key value` and `--key=value` pairs.
    pub fn apply_flags(&mut self, flags: &[String]) -> Result<(), CliError> {
        let mut it = flags.iter();
        while let Some(flag) = it.next() {
            let body = flag
                .strip_prefix("--")
                .ok_or_else(|| CliError::Usage(format!("unexpected argument {flag:?}")))?;
            match body.split_once('=') {
                Some((k, v)) => self.set(k, v)?,
                None => {
                    let v = it
                        .next()
                        .ok_or_else(|| CliError::Usage(format!("--{body} needs a value")))?;
                    self.set(body, v)?;
                }
            }
        }
        Ok(())
    }

    /// Explicit value or built-in default.
    pub fn get(&self, key: &str) -> Option<&str> {
        let spec = spec(key).unwrap_or_else(|| panic!("unregistered key {key}"));
        self.values
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
            .or(spec.default)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.get(key).is_some_and(|v| !v.is_empty())
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Usage(format!("{key} = {v:?}: {e}")))
            })
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse(key)?
            .ok_or_else(|| CliError::Usage(format!("{key} is required")))
    }

    /// Every key with its resolved value, empty when unset, one per line.
    pub fn resolved_lines(&self, derived: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for k in KEYS {
            let v = derived
                .get(k.key)
                .map(String::as_str)
                .or_else(|| self.get(k.key))
                .unwrap_or("");
            if v.is_empty() {
                out.push_str(&format!("{} =\n", k.key));
            } else {
                out.push_str(&format!("{} = {v}\n", k.key));
            }
        }
        out
    }
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::Usage(format!("{key} = {v:?} is not a boolean"))),
    }
}
