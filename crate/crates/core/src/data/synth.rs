//! Synthetic ERP-style epochs.
//!
//! Each trial is white noise plus its class's event: a raised-cosine bump
//! at a fixed latency on a subset of channels. Classes that differ only in
//! latency make time position the discriminative feature.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};

use crate::data::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// One class's event: `amplitude` scaled raised cosine spanning
/// `latency..latency + width` samples on `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSpec {
    pub latency: usize,
    pub width: usize,
    pub amplitude: f64,
    pub channels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub channels: usize,
    pub samples: usize,
    pub trials: usize,
    pub class_count: usize,
    pub sample_rate: f64,
    /// One entry per class; `None` means the class has no event.
    pub events: Vec<Option<EventSpec>>,
    pub noise_std: f64,
    pub seed: u64,
}

/// `width` samples of `amplitude * (1 - cos(2 pi (t + 1/2) / width)) / 2`.
pub fn raised_cosine(width: usize, amplitude: f64) -> Vec<f64> {
    (0..width)
        .map(|t| amplitude * 0.5 * (1.0 - (2.0 * PI * (t as f64 + 0.5) / width as f64).cos()))
        .collect()
}

/// Sum of squares of [`raised_cosine`]: `3 * width * amplitude^2 / 8` for
/// `width >= 3`.
pub fn raised_cosine_energy(width: usize, amplitude: f64) -> f64 {
    3.0 * width as f64 * amplitude * amplitude / 8.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples == 0 || self.trials == 0 {
            return Err(Error::param(
                "channels, samples and trials must be positive",
            ));
        }
        if self.class_count < 2 {
            return Err(Error::param(format!(
                "need at least 2 classes, got {}",
                self.class_count
            )));
        }
        if self.events.len() != self.class_count {
            return Err(Error::param(format!(
                "{} event specs for {} classes",
                self.events.len(),
                self.class_count
            )));
        }
        if self.sample_rate.is_nan() || self.sample_rate <= 0.0 {
            return Err(Error::param("sample rate must be positive"));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::param("noise std must be finite and non-negative"));
        }
        for (c, ev) in self.events.iter().enumerate() {
            let Some(ev) = ev else { continue };
            if ev.width == 0 || ev.latency + ev.width > self.samples {
                return Err(Error::param(format!(
                    "class {c}: event {}..{} outside {} samples",
                    ev.latency,
                    ev.latency + ev.width,
                    self.samples
                )));
            }
            if !ev.amplitude.is_finite() {
                return Err(Error::param(format!("class {c}: non-finite amplitude")));
            }
            if ev.channels.is_empty() || ev.channels.iter().any(|&ch| ch >= self.channels) {
                return Err(Error::param(format!(
                    "class {c}: event channels {:?} invalid for {} channels",
                    ev.channels, self.channels
                )));
            }
        }
        Ok(())
    }

    /// Same spec with every event amplitude replaced.
    pub fn with_amplitude(mut self, amplitude: f64) -> Self {
        for ev in self.events.iter_mut().flatten() {
            ev.amplitude = ev.amplitude.signum() * amplitude.abs();
        }
        self
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<EpochSet> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);

    // Balanced labels, counts differ by at most one.
    let mut labels: Vec<usize> = (0..spec.trials).map(|i| i % spec.class_count).collect();
    labels.shuffle(&mut rng);

    let waves: Vec<Option<Vec<f64>>> = spec
        .events
        .iter()
        .map(|ev| ev.as_ref().map(|e| raised_cosine(e.width, e.amplitude)))
        .collect();
    let noise = if spec.noise_std > 0.0 {
        Some(Normal::new(0.0, spec.noise_std).map_err(|e| Error::param(e.to_string()))?)
    } else {
        None
    };

    let per_trial = spec.channels * spec.samples;
    let mut data = Vec::with_capacity(spec.trials * per_trial);
    let mut trial = vec![0.0f64; per_trial];
    for &label in &labels {
        match &noise {
            Some(n) => trial.iter_mut().for_each(|v| *v = n.sample(&mut rng)),
            None => trial.fill(0.0),
        }
        if let (Some(ev), Some(wave)) = (&spec.events[label], &waves[label]) {
            for &ch in &ev.channels {
                let row = &mut trial[ch * spec.samples + ev.latency..][..ev.width];
                for (v, w) in row.iter_mut().zip(wave) {
                    *v += w;
                }
            }
        }
        data.extend(trial.iter().map(|&v| v as f32));
    }
    let data = Tensor::from_vec(&[spec.trials, spec.channels, spec.samples], data)?;
    EpochSet::new(data, labels, spec.sample_rate, spec.class_count)
}

/// Named dataset shape with its training batch size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetPreset {
    pub name: &'static str,
    pub channels: usize,
    pub samples: usize,
    pub sample_rate: f64,
    pub classes: usize,
    pub batch_size: usize,
    /// Trial count of the recorded dataset this shape mirrors; synthetic
    /// sets default to far fewer.
    pub reference_trials: usize,
}

/// The four EEG dataset shapes.
pub const TABLE_PRESETS: [DatasetPreset; 4] = [
    DatasetPreset {
        name: "cc",
        channels: 62,
        samples: 1200,
        sample_rate: 1000.0,
        classes: 2,
        batch_size: 16,
        reference_trials: 6841,
    },
    DatasetPreset {
        name: "phrc",
        channels: 32,
        samples: 1200,
        sample_rate: 1000.0,
        classes: 2,
        batch_size: 16,
        reference_trials: 4895,
    },
    DatasetPreset {
        name: "p300",
        channels: 64,
        samples: 240,
        sample_rate: 240.0,
        classes: 2,
        batch_size: 8,
        reference_trials: 340,
    },
    DatasetPreset {
        name: "mrcp",
        channels: 28,
        samples: 500,
        sample_rate: 1000.0,
        classes: 4,
        batch_size: 4,
        reference_trials: 316,
    },
];

/// Small two-class tasks used for learning checks.
pub const TASK_PRESETS: [DatasetPreset; 2] = [
    DatasetPreset {
        name: "timepos",
        channels: 8,
        samples: 128,
        sample_rate: 128.0,
        classes: 2,
        batch_size: 8,
        reference_trials: 0,
    },
    DatasetPreset {
        name: "separable",
        channels: 8,
        samples: 128,
        sample_rate: 128.0,
        classes: 2,
        batch_size: 8,
        reference_trials: 0,
    },
];

pub fn dataset_preset(name: &str) -> Option<DatasetPreset> {
    TABLE_PRESETS
        .iter()
        .chain(&TASK_PRESETS)
        .find(|p| p.name == name)
        .copied()
}

fn ms_to_samples(ms: f64, rate: f64) -> usize {
    (ms * rate / 1000.0).round() as usize
}

impl DatasetPreset {
    pub const DEFAULT_TRIALS: usize = 200;

    /// Event layout for this preset. Deflections follow the usual ERP
    /// timing: a frontal negativity at 150-250 ms for the conflict sets, a
    /// parietal positivity at 30% of the epoch for P300, four
    /// channel/latency groups for MRCP, and latency-only contrasts for the
    /// small tasks.
    pub fn synth_spec(&self, trials: usize, noise_std: f64, seed: u64) -> SynthSpec {
        let rate = self.sample_rate;
        let span = |lo: usize, hi: usize| (lo..hi.min(self.channels)).collect::<Vec<_>>();
        let events = match self.name {
            "cc" | "phrc" => vec![
                None,
                Some(EventSpec {
                    latency: ms_to_samples(150.0, rate),
                    width: ms_to_samples(100.0, rate),
                    amplitude: -1.0,
                    channels: span(0, self.channels / 4),
                }),
            ],
            "p300" => vec![
                None,
                Some(EventSpec {
                    latency: (0.3 * self.samples as f64).round() as usize,
                    width: ms_to_samples(100.0, rate),
                    amplitude: 1.0,
                    channels: span(self.channels / 2, self.channels * 3 / 4),
                }),
            ],
            "mrcp" => (0..4)
                .map(|c| {
                    let group = self.channels / 7;
                    Some(EventSpec {
                        latency: ms_to_samples(100.0 + 60.0 * c as f64, rate),
                        width: ms_to_samples(80.0, rate),
                        amplitude: -1.0,
                        channels: span(2 * group + c * group, 3 * group + c * group),
                    })
                })
                .collect(),
            "timepos" => [24, 80]
                .iter()
                .map(|&latency| {
                    Some(EventSpec {
                        latency,
                        width: 16,
                        amplitude: 1.0,
                        channels: span(2, 6),
                    })
                })
                .collect(),
            "separable" => vec![
                None,
                Some(EventSpec {
                    latency: 80,
                    width: 16,
                    amplitude: 1.0,
                    channels: span(2, 6),
                }),
            ],
            other => unreachable!("unknown preset {other}"),
        };
        SynthSpec {
            channels: self.channels,
            samples: self.samples,
            trials,
            class_count: self.classes,
            sample_rate: rate,
            events,
            noise_std,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_trial_is_exactly_the_event() {
        let spec = dataset_preset("p300").unwrap().synth_spec(20, 0.0, 3);
        let e = synth_generate(&spec).unwrap();
        let ev = spec.events[1].clone().unwrap();
        for i in 0..e.trials() {
            let t = e.trial(i);
            for ch in 0..e.channels() {
                for s in 0..e.samples() {
                    let v = t[ch * e.samples() + s];
                    let inside = e.labels()[i] == 1
                        && ev.channels.contains(&ch)
                        && (ev.latency..ev.latency + ev.width).contains(&s);
                    if inside {
                        assert!(v > 0.0);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
            let peak = t.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if e.labels()[i] == 1 {
                assert!((peak as f64 - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = dataset_preset("mrcp").unwrap().synth_spec(12, 0.5, 77);
        assert_eq!(
            synth_generate(&spec).unwrap(),
            synth_generate(&spec).unwrap()
        );
        let other = SynthSpec {
            seed: 78,
            ..spec.clone()
        };
        assert_ne!(
            synth_generate(&spec).unwrap(),
            synth_generate(&other).unwrap()
        );
    }

    #[test]
    fn classes_are_balanced() {
        for trials in [7, 10, 13] {
            let spec = dataset_preset("mrcp").unwrap().synth_spec(trials, 0.1, 1);
            let counts = synth_generate(&spec).unwrap().class_counts();
            let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
            assert!(hi - lo <= 1, "{counts:?}");
        }
    }

    #[test]
    fn raised_cosine_energy_closed_form() {
        for width in [3, 4, 16, 24, 101] {
            for amplitude in [1.0, -0.7, 3.0] {
                let e: f64 = raised_cosine(width, amplitude).iter().map(|v| v * v).sum();
                let want = raised_cosine_energy(width, amplitude);
                assert!(
                    (e - want).abs() / want < 1e-9,
                    "width {width}: {e} vs {want}"
                );
            }
        }
    }

    #[test]
    fn stored_trial_energy_matches_at_f32_precision() {
        let spec = dataset_preset("separable").unwrap().synth_spec(10, 0.0, 5);
        let ev = spec.events[1].clone().unwrap();
        let want = raised_cosine_energy(ev.width, ev.amplitude) * ev.channels.len() as f64;
        let e = synth_generate(&spec).unwrap();
        for i in 0..e.trials() {
            let energy: f64 = e.trial(i).iter().map(|&v| (v as f64).powi(2)).sum();
            if e.labels()[i] == 1 {
                assert!((energy - want).abs() / want < 1e-6);
            } else {
                assert_eq!(energy, 0.0);
            }
        }
    }

    #[test]
    fn p300_mean_amplitude_probe() {
        // Threshold the mean over the event window and channels halfway
        // between the class means (0 and amplitude / 2).
        let spec = dataset_preset("p300").unwrap().synth_spec(200, 0.1, 11);
        let ev = spec.events[1].clone().unwrap();
        let e = synth_generate(&spec).unwrap();
        let mut hits = 0;
        for i in 0..e.trials() {
            let t = e.trial(i);
            let mut sum = 0.0;
            for &ch in &ev.channels {
                for s in ev.latency..ev.latency + ev.width {
                    sum += t[ch * e.samples() + s] as f64;
                }
            }
            let mean = sum / (ev.channels.len() * ev.width) as f64;
            let pred = usize::from(mean > 0.25);
            hits += usize::from(pred == e.labels()[i]);
        }
        assert!(hits as f64 / e.trials() as f64 >= 0.99);
    }

    #[test]
    fn presets_validate() {
        for p in TABLE_PRESETS.iter().chain(&TASK_PRESETS) {
            p.synth_spec(8, 0.1, 0).validate().unwrap();
        }
        let p300 = dataset_preset("p300").unwrap();
        assert_eq!((p300.channels, p300.samples, p300.classes), (64, 240, 2));
        assert_eq!(dataset_preset("mrcp").unwrap().classes, 4);
    }

    #[test]
    fn invalid_specs_rejected() {
        let base = dataset_preset("timepos").unwrap().synth_spec(8, 0.1, 0);
        let mut late = base.clone();
        late.events[0].as_mut().unwrap().latency = 120;
        assert!(matches!(synth_generate(&late), Err(Error::Param(_))));
        let one_class = SynthSpec {
            class_count: 1,
            events: vec![None],
            ..base.clone()
        };
        assert!(synth_generate(&one_class).is_err());
        let noisy = SynthSpec {
            noise_std: -1.0,
            ..base
        };
        assert!(synth_generate(&noisy).is_err());
    }
}
