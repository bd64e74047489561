//! ADC virtualization: pre-recorded samples streamed through two chained
//! FIFOs at a configured sampling rate.
//!
//! The software FIFO stages samples moved from storage into memory; the
//! hardware FIFO holds what the host reads over its serial port. Both are
//! primed to capacity before the first sample instant. A refill moves up to
//! `refill_batch` samples into the hardware FIFO and takes
//! `refill_latency_cycles`; at most one refill is in flight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

pub const SAMPLE_BITS: u32 = 16;

const HEADER_MAGIC: &[u8] = b"#femu-samples ";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdcError {
    #[error("sample source is empty")]
    EmptySource,
    #[error("sampling rate {fs_hz} Hz outside [1, {clock_hz}] Hz")]
    InvalidRate { fs_hz: u64, clock_hz: u64 },
    #[error("invalid FIFO configuration: {0}")]
    InvalidFifo(String),
    #[error("hardware FIFO underrun at cycle {at}")]
    Underrun { at: u64 },
    #[error("sample source exhausted after {delivered} samples")]
    SourceExhausted { delivered: u64 },
    #[error("sample file: {0}")]
    File(String),
}

/// Ordered, read-only 16-bit samples and a read cursor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSource {
    samples: Arc<[i16]>,
    cursor: usize,
}

impl Serialize for SampleSource {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("SampleSource", 2)?;
        st.serialize_field("len", &self.samples.len())?;
        st.serialize_field("cursor", &self.cursor)?;
        st.end()
    }
}

impl SampleSource {
    pub fn from_samples(samples: impl Into<Arc<[i16]>>) -> Self {
        Self {
            samples: samples.into(),
            cursor: 0,
        }
    }

    /// Little-endian 16-bit payload; a trailing odd byte is an error.
    pub fn from_raw_le(bytes: &[u8]) -> Result<Self, AdcError> {
        if bytes.len() % 2 != 0 {
            return Err(AdcError::File(format!(
                "payload length {} is not a multiple of 2",
                bytes.len()
            )));
        }
        let samples: Vec<i16> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(Self::from_samples(samples))
    }

    /// Raw little-endian file, or a `#femu-samples {json}\n` header line followed by the payload.
    ///
    /// The header's optional `count` field must match the payload length.
    pub fn from_file(path: &Path) -> Result<Self, AdcError> {
        let bytes = std::fs::read(path).map_err(|e| AdcError::File(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdcError> {
        let Some(rest) = bytes.strip_prefix(HEADER_MAGIC) else {
            return Self::from_raw_le(bytes);
        };
        let nl = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| AdcError::File("header line is not terminated".into()))?;
        let header: SampleHeader =
            serde_json::from_slice(&rest[..nl]).map_err(|e| AdcError::File(format!("header: {e}")))?;
        let source = Self::from_raw_le(&rest[nl + 1..])?;
        if let Some(count) = header.count {
            if count != source.len() as u64 {
                return Err(AdcError::File(format!(
                    "header declares {count} samples, payload holds {}",
                    source.len()
                )));
            }
        }
        Ok(source)
    }

    /// Encodes samples with a header line; inverse of [`SampleSource::from_bytes`].
    pub fn encode_with_header(samples: &[i16], fs_hz: Option<u64>) -> Vec<u8> {
        let header = SampleHeader {
            count: Some(samples.len() as u64),
            fs_hz,
        };
        let mut out = HEADER_MAGIC.to_vec();
        out.extend(serde_json::to_vec(&header).expect("header serializes"));
        out.push(b'\n');
        for s in samples {
            out.extend(s.to_le_bytes());
        }
        out
    }

    /// Deterministic test signal: a tone plus seeded noise.
    pub fn synthetic(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples: Vec<i16> = (0..len)
            .map(|n| {
                let phase = (n % 1000) as f64 / 1000.0 * std::f64::consts::TAU;
                let tone = 12_000.0 * phase.sin();
                let noise: f64 = rng.gen_range(-800.0..800.0);
                (tone + noise).round() as i16
            })
            .collect();
        Self::from_samples(samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.samples.len() - self.cursor
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    /// Same samples, cursor at `cursor` (clamped to the length).
    pub fn at(&self, cursor: usize) -> Self {
        Self {
            samples: Arc::clone(&self.samples),
            cursor: cursor.min(self.samples.len()),
        }
    }

    fn take(&mut self) -> Option<i16> {
        let s = self.samples.get(self.cursor).copied()?;
        self.cursor += 1;
        Some(s)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleHeader {
    #[serde(default)]
    count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fs_hz: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SoftFifo {
    pub capacity: usize,
    pub refill_batch: usize,
    pub refill_latency_cycles: u64,
}

impl Default for SoftFifo {
    fn default() -> Self {
        Self {
            capacity: 4096,
            refill_batch: 32,
            refill_latency_cycles: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardFifo {
    pub capacity: usize,
}

impl Default for HardFifo {
    fn default() -> Self {
        Self { capacity: 64 }
    }
}

impl HardFifo {
    /// Refill is requested once more than this many slots are vacant.
    pub fn refill_threshold(&self) -> usize {
        self.capacity / 2
    }

    /// Largest refill latency that never starves a stream with the given sample period.
    ///
    /// Holds whenever refills deliver at least `capacity - threshold` samples.
    pub fn no_underrun_latency_bound(&self, period_cycles: u64) -> u64 {
        (self.capacity - self.refill_threshold()) as u64 * period_cycles
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderrunPolicy {
    Fatal,
    /// The host stalls (clock-gated) until the in-flight refill lands.
    #[default]
    CountAndStall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcConfig {
    pub fs_hz: u64,
    #[serde(default)]
    pub underrun_policy: UnderrunPolicy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcStats {
    pub delivered: u64,
    pub refills: u64,
    pub underruns: u64,
}

/// Outcome of a host read.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pop {
    /// A sample; `refill_at` is set when this read started a refill completing then.
    Sample { value: i16, refill_at: Option<u64> },
    /// Hardware FIFO empty; retry once the refill completing at `refill_at` has landed.
    Stall { refill_at: u64 },
}

/// A primed streaming session.
#[derive(Debug, Clone, Serialize)]
pub struct AdcSession {
    cfg: AdcConfig,
    soft_cfg: SoftFifo,
    hard_cfg: HardFifo,
    source: SampleSource,
    soft: VecDeque<i16>,
    hard: VecDeque<i16>,
    refill_due: Option<u64>,
    stats: AdcStats,
}

/// Validates the configuration and primes both FIFOs from `source`.
pub fn configure_adc(
    source: SampleSource,
    cfg: AdcConfig,
    soft: SoftFifo,
    hard: HardFifo,
    clock_hz: u64,
) -> Result<AdcSession, AdcError> {
    if cfg.fs_hz == 0 || cfg.fs_hz > clock_hz {
        return Err(AdcError::InvalidRate {
            fs_hz: cfg.fs_hz,
            clock_hz,
        });
    }
    if hard.capacity == 0 {
        return Err(AdcError::InvalidFifo("hardware FIFO capacity must be positive".into()));
    }
    if soft.refill_batch == 0 || soft.refill_batch > soft.capacity {
        return Err(AdcError::InvalidFifo(format!(
            "refill_batch {} must lie in [1, {}]",
            soft.refill_batch, soft.capacity
        )));
    }
    if source.remaining() == 0 {
        return Err(AdcError::EmptySource);
    }
    let mut session = AdcSession {
        cfg,
        soft_cfg: soft,
        hard_cfg: hard,
        source,
        soft: VecDeque::with_capacity(soft.capacity),
        hard: VecDeque::with_capacity(hard.capacity),
        refill_due: None,
        stats: AdcStats::default(),
    };
    while session.hard.len() < hard.capacity {
        match session.source.take() {
            Some(s) => session.hard.push_back(s),
            None => break,
        }
    }
    session.top_up_soft();
    Ok(session)
}

impl AdcSession {
    pub fn config(&self) -> &AdcConfig {
        &self.cfg
    }

    pub fn stats(&self) -> AdcStats {
        self.stats
    }

    pub fn hard_occupancy(&self) -> usize {
        self.hard.len()
    }

    pub fn soft_occupancy(&self) -> usize {
        self.soft.len()
    }

    /// Source position after the last sample handed to the host.
    pub fn consumed_cursor(&self) -> usize {
        self.source.cursor() - self.soft.len() - self.hard.len()
    }

    pub fn refill_due(&self) -> Option<u64> {
        self.refill_due
    }

    fn top_up_soft(&mut self) {
        while self.soft.len() < self.soft_cfg.capacity {
            match self.source.take() {
                Some(s) => self.soft.push_back(s),
                None => break,
            }
        }
    }

    fn needs_refill(&self) -> bool {
        self.hard.len() + self.hard_cfg.refill_threshold() < self.hard_cfg.capacity && !self.soft.is_empty()
    }

    fn maybe_start_refill(&mut self, now: u64) -> Option<u64> {
        if self.refill_due.is_none() && self.needs_refill() {
            let due = now + self.soft_cfg.refill_latency_cycles;
            self.refill_due = Some(due);
            Some(due)
        } else {
            None
        }
    }

    /// Host read at cycle `now`.
    pub fn pop(&mut self, now: u64) -> Result<Pop, AdcError> {
        if let Some(value) = self.hard.pop_front() {
            self.stats.delivered += 1;
            let refill_at = self.maybe_start_refill(now);
            return Ok(Pop::Sample { value, refill_at });
        }
        let refill_at = match self.refill_due {
            Some(due) => due,
            None => match self.maybe_start_refill(now) {
                Some(due) => due,
                None => {
                    return Err(AdcError::SourceExhausted {
                        delivered: self.stats.delivered,
                    })
                }
            },
        };
        self.stats.underruns += 1;
        match self.cfg.underrun_policy {
            UnderrunPolicy::Fatal => Err(AdcError::Underrun { at: now }),
            UnderrunPolicy::CountAndStall => Ok(Pop::Stall { refill_at }),
        }
    }

    /// Lands the in-flight refill at cycle `now`; returns the next refill's due cycle if one starts.
    pub fn complete_refill(&mut self, now: u64) -> Option<u64> {
        self.refill_due.take()?;
        let room = self.hard_cfg.capacity - self.hard.len();
        let moved = self.soft_cfg.refill_batch.min(room).min(self.soft.len());
        self.hard.extend(self.soft.drain(..moved));
        self.stats.refills += 1;
        self.top_up_soft();
        self.maybe_start_refill(now)
    }
}

/// Stream `n` samples at a fixed period with no host work between reads,
/// landing refills before reads that fall on the same cycle.
///
/// Returns the delivered samples. Stalls (under `CountAndStall`) delay every
/// later read by the stall length.
pub fn replay(session: &mut AdcSession, n: usize, period_cycles: u64) -> Result<Vec<i16>, AdcError> {
    let mut out = Vec::with_capacity(n);
    let mut now = 0u64;
    let mut shift = 0u64;
    for k in 0..n as u64 {
        let due_read = k * period_cycles + shift;
        loop {
            match session.refill_due() {
                Some(due) if due <= due_read => {
                    now = due;
                    session.complete_refill(now);
                }
                _ => break,
            }
        }
        now = due_read;
        match session.pop(now)? {
            Pop::Sample { value, .. } => out.push(value),
            Pop::Stall { refill_at } => {
                shift += refill_at - now;
                session.complete_refill(refill_at);
                now = refill_at;
                match session.pop(now)? {
                    Pop::Sample { value, .. } => out.push(value),
                    Pop::Stall { .. } => unreachable!("refill landed with data"),
                }
            }
        }
    }
    let _ = now;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CLOCK: u64 = 20_000_000;

    fn session(len: usize, hard: usize, batch: usize, latency: u64) -> AdcSession {
        let source = SampleSource::from_samples((0..len).map(|i| i as i16).collect::<Vec<_>>());
        configure_adc(
            source,
            AdcConfig {
                fs_hz: 1000,
                underrun_policy: UnderrunPolicy::Fatal,
            },
            SoftFifo {
                capacity: batch.max(8) * 2,
                refill_batch: batch,
                refill_latency_cycles: latency,
            },
            HardFifo { capacity: hard },
            CLOCK,
        )
        .unwrap()
    }

    #[test]
    fn invalid_rate_and_empty_source() {
        let cfg = |fs_hz| AdcConfig {
            fs_hz,
            underrun_policy: UnderrunPolicy::default(),
        };
        let src = SampleSource::from_samples(vec![1i16]);
        let err = configure_adc(src.clone(), cfg(0), SoftFifo::default(), HardFifo::default(), CLOCK);
        assert!(matches!(err, Err(AdcError::InvalidRate { .. })));
        let err = configure_adc(src, cfg(CLOCK + 1), SoftFifo::default(), HardFifo::default(), CLOCK);
        assert!(matches!(err, Err(AdcError::InvalidRate { .. })));
        let empty = SampleSource::from_samples(Vec::<i16>::new());
        let err = configure_adc(empty, cfg(100), SoftFifo::default(), HardFifo::default(), CLOCK);
        assert_eq!(err.unwrap_err(), AdcError::EmptySource);
    }

    #[test]
    fn rejects_bad_batch() {
        let src = SampleSource::from_samples(vec![1i16; 4]);
        let soft = SoftFifo {
            capacity: 4,
            refill_batch: 5,
            refill_latency_cycles: 0,
        };
        let cfg = AdcConfig {
            fs_hz: 100,
            underrun_policy: UnderrunPolicy::Fatal,
        };
        assert!(matches!(
            configure_adc(src, cfg, soft, HardFifo::default(), CLOCK),
            Err(AdcError::InvalidFifo(_))
        ));
    }

    #[test]
    fn small_source_needs_no_refill() {
        let mut s = session(40, 64, 32, 10);
        assert_eq!(s.hard_occupancy(), 40);
        let out = replay(&mut s, 40, 1000).unwrap();
        assert_eq!(out, (0..40).collect::<Vec<i16>>());
        assert_eq!(s.stats().refills, 0);
    }

    #[test]
    fn first_pop_returns_first_sample() {
        let mut s = session(100, 8, 4, 0);
        assert_eq!(
            s.pop(0).unwrap(),
            Pop::Sample {
                value: 0,
                refill_at: None
            }
        );
    }

    #[test]
    fn fatal_underrun_on_empty_fifo() {
        let mut s = session(100, 2, 1, 1_000_000);
        s.pop(0).unwrap();
        s.pop(1).unwrap();
        assert_eq!(s.pop(2), Err(AdcError::Underrun { at: 2 }));
    }

    #[test]
    fn exhausted_source_is_reported() {
        let mut s = session(3, 8, 4, 0);
        for t in 0..3 {
            s.pop(t).unwrap();
        }
        assert_eq!(s.pop(3), Err(AdcError::SourceExhausted { delivered: 3 }));
    }

    #[test]
    fn refill_count_matches_closed_form() {
        let n = 1_000_000usize;
        let mut s = session(n, 64, 32, 100);
        let out = replay(&mut s, n, 1000).unwrap();
        assert_eq!(out.len(), n);
        assert_eq!(s.stats().refills, ((n - 64) as u64).div_ceil(32));
    }

    #[test]
    fn header_file_round_trip() {
        let samples = vec![1i16, -2, 300, i16::MIN];
        let bytes = SampleSource::encode_with_header(&samples, Some(100));
        let src = SampleSource::from_bytes(&bytes).unwrap();
        assert_eq!(src.samples(), &samples[..]);
        let raw: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
        assert_eq!(SampleSource::from_bytes(&raw).unwrap().samples(), &samples[..]);
        assert!(SampleSource::from_raw_le(&[1, 2, 3]).is_err());
        let mut bad = SampleSource::encode_with_header(&samples, None);
        bad.pop();
        assert!(SampleSource::from_bytes(&bad).is_err());
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(SampleSource::synthetic(1000, 7), SampleSource::synthetic(1000, 7));
        assert_ne!(SampleSource::synthetic(1000, 7), SampleSource::synthetic(1000, 8));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn delivers_exactly_once_in_order(
            len in 1usize..5000,
            hard in 1usize..128,
            batch_frac in 0.01f64..1.0,
            latency in 0u64..20_000,
            period in 1u64..2000,
        ) {
            let batch = ((hard as f64 * batch_frac).ceil() as usize).clamp(1, hard);
            let source = SampleSource::synthetic(len, len as u64);
            let expected = source.samples().to_vec();
            let mut s = configure_adc(
                source,
                AdcConfig { fs_hz: 1000, underrun_policy: UnderrunPolicy::CountAndStall },
                SoftFifo { capacity: batch * 3, refill_batch: batch, refill_latency_cycles: latency },
                HardFifo { capacity: hard },
                CLOCK,
            ).unwrap();
            let out = replay(&mut s, len, period).unwrap();
            prop_assert_eq!(out, expected);
        }

        #[test]
        fn underrun_bound_is_tight(
            hard in 1usize..96,
            extra in 0usize..96,
            period in 1u64..500,
            violate in any::<bool>(),
        ) {
            let fifo = HardFifo { capacity: hard };
            let min_batch = hard - fifo.refill_threshold();
            let batch = (min_batch + extra).min(hard);
            let bound = fifo.no_underrun_latency_bound(period);
            let latency = if violate { bound + 1 } else { bound };
            let n = hard * 8 + 50;
            let mut s = configure_adc(
                SampleSource::synthetic(n, 1),
                AdcConfig { fs_hz: 1000, underrun_policy: UnderrunPolicy::Fatal },
                SoftFifo { capacity: hard * 2, refill_batch: batch, refill_latency_cycles: latency },
                fifo,
                CLOCK,
            ).unwrap();
            let result = replay(&mut s, n, period);
            if violate {
                let is_underrun = matches!(result, Err(AdcError::Underrun { .. }));
                prop_assert!(is_underrun);
            } else {
                prop_assert!(result.is_ok());
            }
        }
    }
}
