//! Per-channel signal validity and clean-window metrics.
//!
//! Invalid samples are flagged for out-of-range values, missing data,
//! flat lines, excessive high-frequency noise and excessive variance. The
//! clean-window metrics (baseline wander, QRS-band power ratio, kurtosis)
//! gate which ECG sections may contribute beats to a patient's own beat bank.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Psd};
use crate::error::{Error, Result};
use crate::record::{ChannelKind, Record};

/// Welch segment length in seconds.
pub const PSD_SEGMENT_S: f64 = 2.0;

pub const ABP_MIN_MMHG: f64 = 0.0;
pub const ABP_MAX_MMHG: f64 = 300.0;
pub const ECG_MAX_ABS_MV: f64 = 10.0;

/// Flat-line detection: variance floor over a sliding window.
pub const FLAT_WINDOW_S: f64 = 2.0;
pub const FLAT_VARIANCE_FLOOR: f64 = 1e-6;

/// ECG sub-windows with more than this fraction of power above
/// [`NOISE_BAND_EDGE_HZ`] are spectral noise.
pub const NOISE_WINDOW_S: f64 = 2.0;
pub const NOISE_BAND_EDGE_HZ: f64 = 40.0;
pub const NOISE_POWER_FRACTION: f64 = 0.5;

/// Standard deviation ceilings over a 2 s sub-window.
pub const ECG_MAX_STD_MV: f64 = 3.0;
pub const ABP_MAX_STD_MMHG: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InvalidReason {
    OutOfRange,
    FlatLine,
    MissingData,
    SpectralNoise,
    ExcessVariance,
}

/// Half-open span of invalid samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidInterval {
    pub start: usize,
    pub end: usize,
    pub reason: InvalidReason,
}

impl InvalidInterval {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanThresholds {
    pub baseline_wander_min: f64,
    pub power_ratio_min: f64,
    pub kurtosis_min: f64,
}

impl Default for CleanThresholds {
    fn default() -> Self {
        Self {
            baseline_wander_min: 0.75,
            power_ratio_min: 0.9,
            kurtosis_min: 4.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleanMetrics {
    /// `1 − P[0,1 Hz] / P[0,40 Hz]`; high means little sub-1 Hz drift.
    pub baseline_wander: f64,
    /// `P[5,15 Hz] / P[5,40 Hz]`.
    pub power_ratio: f64,
    pub kurtosis: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelQuality {
    pub intervals: Vec<InvalidInterval>,
    pub validity_weight: f64,
    pub clean_metrics: Option<CleanMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub channels: Vec<ChannelQuality>,
}

impl QualityReport {
    pub fn weight(&self, channel: usize) -> f64 {
        self.channels.get(channel).map_or(0.0, |c| c.validity_weight)
    }

    pub fn invalid_samples(&self, channel: usize, window: Range<usize>) -> usize {
        self.channels
            .get(channel)
            .map_or(0, |c| invalid_in(&c.intervals, window))
    }
}

fn invalid_in(intervals: &[InvalidInterval], window: Range<usize>) -> usize {
    intervals
        .iter()
        .map(|iv| {
            let s = iv.start.max(window.start);
            let e = iv.end.min(window.end);
            e.saturating_sub(s)
        })
        .sum()
}

fn runs(flags: &[bool], reason: InvalidReason) -> Vec<InvalidInterval> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &f) in flags.iter().chain(std::iter::once(&false)).enumerate() {
        match (f, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push(InvalidInterval {
                    start: s,
                    end: i,
                    reason,
                });
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Sorts and merges overlapping or touching intervals. A merged interval
/// keeps the reason of its earliest member.
pub fn merge_intervals(mut intervals: Vec<InvalidInterval>) -> Vec<InvalidInterval> {
    intervals.retain(|iv| !iv.is_empty());
    intervals.sort_by_key(|iv| (iv.start, iv.end));
    let mut out: Vec<InvalidInterval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start <= last.end => last.end = last.end.max(iv.end),
            _ => out.push(iv),
        }
    }
    out
}

fn flat_lines(samples: &[f64], sample_rate: f64) -> Vec<InvalidInterval> {
    let n = samples.len();
    let w = (FLAT_WINDOW_S * sample_rate).round() as usize;
    if w < 2 || n < w {
        return Vec::new();
    }
    let mut s1 = vec![0.0; n + 1];
    let mut s2 = vec![0.0; n + 1];
    let mut nan = vec![0usize; n + 1];
    for (i, &x) in samples.iter().enumerate() {
        let (v, missing) = if x.is_finite() { (x, 0) } else { (0.0, 1) };
        s1[i + 1] = s1[i] + v;
        s2[i + 1] = s2[i] + v * v;
        nan[i + 1] = nan[i] + missing;
    }
    // difference array of window coverage
    let mut cover = vec![0i64; n + 1];
    for s in 0..=n - w {
        let e = s + w;
        if nan[e] != nan[s] {
            continue;
        }
        let sum = s1[e] - s1[s];
        let var = ((s2[e] - s2[s]) - sum * sum / w as f64) / w as f64;
        if var < FLAT_VARIANCE_FLOOR {
            cover[s] += 1;
            cover[e] -= 1;
        }
    }
    let mut level = 0i64;
    let flags: Vec<bool> = cover[..n]
        .iter()
        .map(|d| {
            level += d;
            level > 0
        })
        .collect();
    runs(&flags, InvalidReason::FlatLine)
}

/// Non-overlapping sub-windows tiling the signal; a trailing partial window
/// is replaced by one aligned to the end.
fn tiles(n: usize, w: usize) -> Vec<Range<usize>> {
    if w == 0 || n < w {
        return Vec::new();
    }
    let mut out: Vec<Range<usize>> = (0..n / w).map(|k| k * w..(k + 1) * w).collect();
    if n % w != 0 {
        out.push(n - w..n);
    }
    out
}

/// Flags invalid samples of one channel.
pub fn detect_invalid_segments(samples: &[f64], kind: ChannelKind, sample_rate: f64) -> Vec<InvalidInterval> {
    let mut found = runs(
        &samples.iter().map(|x| !x.is_finite()).collect::<Vec<_>>(),
        InvalidReason::MissingData,
    );
    let out_of_range: Vec<bool> = samples
        .iter()
        .map(|&x| {
            x.is_finite()
                && match kind {
                    ChannelKind::Abp => x <= ABP_MIN_MMHG || x >= ABP_MAX_MMHG,
                    ChannelKind::Ecg => x.abs() > ECG_MAX_ABS_MV,
                    _ => false,
                }
        })
        .collect();
    found.extend(runs(&out_of_range, InvalidReason::OutOfRange));
    found.extend(flat_lines(samples, sample_rate));

    let std_ceiling = match kind {
        ChannelKind::Ecg => Some(ECG_MAX_STD_MV),
        ChannelKind::Abp => Some(ABP_MAX_STD_MMHG),
        _ => None,
    };
    let w = (NOISE_WINDOW_S * sample_rate).round() as usize;
    for tile in tiles(samples.len(), w) {
        let seg = &samples[tile.clone()];
        if seg.iter().any(|x| !x.is_finite()) {
            continue;
        }
        if kind == ChannelKind::Ecg && sample_rate / 2.0 > NOISE_BAND_EDGE_HZ {
            if let Some(psd) = dsp::welch(seg, sample_rate, seg.len(), 0) {
                let total = psd.total_power();
                let high = psd.band_power(NOISE_BAND_EDGE_HZ + psd.resolution() * 0.5, f64::INFINITY);
                if total > 0.0 && high / total > NOISE_POWER_FRACTION {
                    found.push(InvalidInterval {
                        start: tile.start,
                        end: tile.end,
                        reason: InvalidReason::SpectralNoise,
                    });
                    continue;
                }
            }
        }
        if let Some(ceiling) = std_ceiling {
            if dsp::std_dev(seg) > ceiling {
                found.push(InvalidInterval {
                    start: tile.start,
                    end: tile.end,
                    reason: InvalidReason::ExcessVariance,
                });
            }
        }
    }
    merge_intervals(found)
}

/// Welch PSD with 2 s Hann segments at 50 % overlap.
pub fn welch_psd(samples: &[f64], sample_rate: f64) -> Result<Psd> {
    let seg = (PSD_SEGMENT_S * sample_rate).round() as usize;
    dsp::welch(samples, sample_rate, seg, seg / 2).ok_or(Error::WindowTooShort {
        needed: seg,
        available: samples.len(),
    })
}

/// Ratio of the power in `[lo, hi]` to the power in `[lo2, hi2]`.
pub fn band_fraction(psd: &Psd, lo: f64, hi: f64, lo2: f64, hi2: f64) -> Result<f64> {
    if !(0.0 <= lo && lo < hi && 0.0 <= lo2 && lo2 < hi2) {
        return Err(Error::Config(format!("bad bands [{lo},{hi}] / [{lo2},{hi2}]")));
    }
    let den = psd.band_power(lo2, hi2);
    if den <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(psd.band_power(lo, hi) / den)
}

/// Fourth standardized moment with population standard deviation.
pub fn kurtosis(samples: &[f64]) -> Result<f64> {
    let mu = dsp::mean(samples);
    let sigma = dsp::std_dev(samples);
    if samples.is_empty() || sigma <= f64::EPSILON * mu.abs().max(1.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(samples.iter().map(|x| ((x - mu) / sigma).powi(4)).sum::<f64>() / samples.len() as f64)
}

/// Baseline wander, QRS-band power ratio and kurtosis of an ECG window.
pub fn clean_window_metrics(window: &[f64], sample_rate: f64) -> Result<CleanMetrics> {
    let kurt = kurtosis(window)?;
    let psd = welch_psd(window, sample_rate)?;
    let baseline_wander = 1.0 - band_fraction(&psd, 0.0, 1.0, 0.0, 40.0)?;
    let power_ratio = band_fraction(&psd, 5.0, 15.0, 5.0, 40.0)?;
    Ok(CleanMetrics {
        baseline_wander,
        power_ratio,
        kurtosis: kurt,
    })
}

/// Every metric at or above its threshold. Non-finite metrics are never clean.
pub fn is_clean(metrics: &CleanMetrics, thresholds: &CleanThresholds) -> bool {
    metrics.baseline_wander >= thresholds.baseline_wander_min
        && metrics.power_ratio >= thresholds.power_ratio_min
        && metrics.kurtosis >= thresholds.kurtosis_min
}

/// `1 − invalid fraction` inside `window`.
pub fn channel_validity(intervals: &[InvalidInterval], window: Range<usize>) -> f64 {
    let len = window.end.saturating_sub(window.start);
    if len == 0 {
        return 0.0;
    }
    (1.0 - invalid_in(intervals, window) as f64 / len as f64).clamp(0.0, 1.0)
}

/// Seconds at the end of an ECG channel used for the clean-window metrics.
pub const CLEAN_WINDOW_S: f64 = 10.0;

/// Quality of every channel over the whole record.
pub fn assess(record: &Record) -> QualityReport {
    let n = record.len();
    let fs = record.sample_rate;
    let channels = record
        .channels
        .iter()
        .zip(&record.samples)
        .map(|(meta, samples)| {
            let intervals = detect_invalid_segments(samples, meta.kind, fs);
            let validity_weight = channel_validity(&intervals, 0..n);
            let clean_metrics = (meta.kind == ChannelKind::Ecg)
                .then(|| {
                    let w = ((CLEAN_WINDOW_S * fs).round() as usize).min(n);
                    clean_window_metrics(&samples[n - w..], fs).ok()
                })
                .flatten();
            ChannelQuality {
                intervals,
                validity_weight,
                clean_metrics,
            }
        })
        .collect();
    QualityReport { channels }
}
