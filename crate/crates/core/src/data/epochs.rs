use std::path::Path;

use crate::binio::{to_u32, Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Samples;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ENK1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 5 * 4 + 8;

/// Labeled trials stored trial-major as `[trials, channels, samples]`.
///
/// Channel-first notation such as `62x1200x6841` (channels x samples x
/// trials) maps onto this layout by moving the trial axis to the front.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    data: Tensor<f32>,
    labels: Vec<usize>,
    sample_rate: f64,
    class_count: usize,
}

impl EpochSet {
    pub fn new(
        data: Tensor<f32>,
        labels: Vec<usize>,
        sample_rate: f64,
        class_count: usize,
    ) -> Result<Self> {
        if data.rank() != 3 {
            return Err(Error::shape(format!(
                "epoch data must be [trials, channels, samples], got {:?}",
                data.shape()
            )));
        }
        if labels.len() != data.shape()[0] {
            return Err(Error::param(format!(
                "{} labels for {} trials",
                labels.len(),
                data.shape()[0]
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::param(format!(
                "sample rate {sample_rate} must be positive"
            )));
        }
        if class_count == 0 {
            return Err(Error::param("class count must be positive"));
        }
        if let Some(i) = labels.iter().position(|&l| l >= class_count) {
            return Err(Error::param(format!(
                "label {} of trial {i} is not below class count {class_count}",
                labels[i]
            )));
        }
        Ok(Self {
            data,
            labels,
            sample_rate,
            class_count,
        })
    }

    pub fn trials(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn samples(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    /// Raw values of trial `i`, `[channels, samples]` row-major.
    pub fn trial(&self, i: usize) -> &[f32] {
        let n = self.channels() * self.samples();
        &self.data.data()[i * n..(i + 1) * n]
    }

    /// Trial `i` as a single-plane model input `[1, channels, samples]`.
    pub fn trial_input(&self, i: usize) -> Result<Tensor> {
        if i >= self.trials() {
            return Err(Error::param(format!("trial {i} out of range")));
        }
        Tensor::from_vec(
            &[1, self.channels(), self.samples()],
            self.trial(i).iter().map(|&v| v as f64).collect(),
        )
    }

    /// Same data with a different label vector.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.data.clone(),
            labels,
            self.sample_rate,
            self.class_count,
        )
    }

    /// Per-class trial counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

impl Samples for EpochSet {
    fn sample_count(&self) -> usize {
        self.trials()
    }

    fn input(&self, index: usize) -> Result<Tensor> {
        self.trial_input(index)
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }
}

/// Serializes to the epoch file layout:
/// magic `ENK1`, version u32, trials u32, channels u32, samples u32,
/// class count u32, sample rate f64, labels u16 x trials, then the
/// trial-major f32 payload. All little-endian.
pub fn encode(e: &EpochSet) -> Result<Vec<u8>> {
    if e.trials() == 0 {
        return Err(Error::format(8, "trial count is zero"));
    }
    if e.class_count() > u16::MAX as usize + 1 {
        return Err(Error::format(
            20,
            format!("class count {} does not fit u16 labels", e.class_count()),
        ));
    }
    let mut w = Writer::default();
    w.buf
        .reserve(HEADER_LEN + 2 * e.trials() + 4 * e.data().len());
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(to_u32(e.trials(), "trial count")?);
    w.u32(to_u32(e.channels(), "channel count")?);
    w.u32(to_u32(e.samples(), "sample count")?);
    w.u32(to_u32(e.class_count(), "class count")?);
    w.f64(e.sample_rate());
    for &l in e.labels() {
        w.u16(l as u16);
    }
    w.f32s(e.data().data());
    Ok(w.buf)
}

pub fn decode(bytes: &[u8]) -> Result<EpochSet> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {magic:?}, expected \"ENK1\""),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 4];
    let names = [
        "trial count",
        "channel count",
        "sample count",
        "class count",
    ];
    for (d, name) in dims.iter_mut().zip(names) {
        let at = r.offset();
        *d = r.u32(name)? as usize;
        if *d == 0 {
            return Err(Error::format(at, format!("{name} is zero")));
        }
    }
    let [trials, channels, samples, class_count] = dims;
    let at = r.offset();
    let sample_rate = r.f64("sample rate")?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::format(
            at,
            format!("sample rate {sample_rate} must be positive"),
        ));
    }
    let mut labels = Vec::with_capacity(trials.min(1 << 20));
    for _ in 0..trials {
        let at = r.offset();
        let l = r.u16("label")? as usize;
        if l >= class_count {
            return Err(Error::format(
                at,
                format!("label {l} not below class count {class_count}"),
            ));
        }
        labels.push(l);
    }
    let n = trials
        .checked_mul(channels)
        .and_then(|v| v.checked_mul(samples))
        .ok_or_else(|| Error::format(8, "payload size overflows"))?;
    let at = r.offset();
    let payload = r.f32s(n, "payload")?;
    if r.remaining() != 0 {
        return Err(Error::format(
            r.offset(),
            format!("{} trailing bytes", r.remaining()),
        ));
    }
    let data = Tensor::from_vec(&[trials, channels, samples], payload)
        .map_err(|e| Error::format(at, e.to_string()))?;
    EpochSet::new(data, labels, sample_rate, class_count)
}

pub fn epochs_write(e: &EpochSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(e)?).map_err(|err| Error::file(path, err))
}

pub fn epochs_read(path: impl AsRef<Path>) -> Result<EpochSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|err| Error::file(path, err))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_set() -> EpochSet {
        let data = Tensor::from_vec(&[2, 1, 3], vec![0.5, -1.0, 2.0, 3.25, 0.0, 1e-7]).unwrap();
        EpochSet::new(data, vec![1, 0], 250.0, 2).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small_set()).unwrap();
        assert_eq!(&bytes[..4], b"ENK1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 250.0);
        assert_eq!(u16::from_le_bytes(bytes[32..34].try_into().unwrap()), 1);
        assert_eq!(bytes.len(), 32 + 2 * 2 + 4 * 6);
    }

    #[test]
    fn bad_magic_at_offset_zero() {
        let mut bytes = encode(&small_set()).unwrap();
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let bytes = encode(&small_set()).unwrap();
        let err = decode(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 36, .. }), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode(&small_set()).unwrap();
        bytes[4] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 4, .. })
        ));
    }

    #[test]
    fn zero_trials_rejected() {
        let mut bytes = encode(&small_set()).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::Format { offset: 8, .. })
        ));
        // An empty set cannot be constructed in the first place.
        assert!(Tensor::<f32>::zeros(&[0, 1, 3]).is_err());
    }

    #[test]
    fn invariants_enforced() {
        let data = Tensor::<f32>::zeros(&[2, 1, 3]).unwrap();
        assert!(EpochSet::new(data.clone(), vec![0], 1.0, 2).is_err());
        assert!(EpochSet::new(data.clone(), vec![0, 2], 1.0, 2).is_err());
        assert!(EpochSet::new(data, vec![0, 1], 0.0, 2).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            (trials, channels, samples) in (1usize..4, 1usize..4, 1usize..6),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::rng::seeded(seed);
            let n = trials * channels * samples;
            let data: Vec<f32> = (0..n).map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let labels = (0..trials).map(|_| rng.random_range(0..3)).collect();
            let e = EpochSet::new(
                Tensor::from_vec(&[trials, channels, samples], data).unwrap(),
                labels,
                rng.random_range(1.0..2000.0),
                3,
            ).unwrap();
            let back = decode(&encode(&e).unwrap()).unwrap();
            let same_bits = back.data().data().iter().zip(e.data().data()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(back, e);
        }
    }
}
