//! Beat detection, heart-rate windows, beat segmentation and spectral beat
//! labels.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{self, Cascade};
use crate::error::{Error, Result};
use crate::record::Record;

pub const REFRACTORY_S: f64 = 0.2;
pub const PULSE_REFRACTORY_S: f64 = 0.3;
pub const MIN_DETECTION_S: f64 = 2.0;

const QRS_BAND: (f64, f64) = (5.0, 15.0);
const INTEGRATION_S: f64 = 0.15;
const SEARCH_BACK_RR: f64 = 1.66;

const PULSE_LOWPASS_HZ: f64 = 10.0;
const SLOPE_WINDOW_S: f64 = 0.128;
const PULSE_THRESHOLD: f64 = 0.4;

/// Ventricular iff power in the low band exceeds power in the high band.
pub const LOW_BAND_HZ: (f64, f64) = (0.5, 10.0);
pub const HIGH_BAND_HZ: (f64, f64) = (10.0, 30.0);
/// Half-width of the QRS-centred window handed to the spectral classifier.
pub const QRS_HALF_WIDTH_S: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeatLabel {
    Normal,
    Ventricular,
    Unknown,
}

impl BeatLabel {
    pub fn code(self) -> char {
        match self {
            BeatLabel::Normal => 'N',
            BeatLabel::Ventricular => 'V',
            BeatLabel::Unknown => 'Q',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub channel: usize,
    /// Strictly increasing sample indices.
    pub indices: Vec<usize>,
    pub labels: Option<Vec<BeatLabel>>,
}

impl BeatAnnotation {
    pub fn new(channel: usize, indices: Vec<usize>) -> Self {
        Self {
            channel,
            indices,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn label(&self, i: usize) -> BeatLabel {
        self.labels
            .as_ref()
            .and_then(|l| l.get(i).copied())
            .unwrap_or(BeatLabel::Unknown)
    }

    /// Beats with `start <= index < end`, labels carried along.
    pub fn within(&self, start: usize, end: usize) -> BeatAnnotation {
        let lo = self.indices.partition_point(|&i| i < start);
        let hi = self.indices.partition_point(|&i| i < end);
        BeatAnnotation {
            channel: self.channel,
            indices: self.indices[lo..hi].to_vec(),
            labels: self.labels.as_ref().map(|l| l[lo..hi].to_vec()),
        }
    }
}

/// Span around one beat used for template comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatSegment {
    /// Position of the beat in its annotation.
    pub ordinal: usize,
    /// Sample index of the beat.
    pub beat: usize,
    pub start: usize,
    pub end: usize,
}

fn refractory_samples(seconds: f64, sample_rate: f64) -> usize {
    ((seconds * sample_rate) - 1e-9).ceil().max(1.0) as usize
}

fn ensure_length(samples: &[f64], sample_rate: f64) -> Result<()> {
    let needed = (MIN_DETECTION_S * sample_rate).round() as usize;
    if samples.len() < needed {
        return Err(Error::WindowTooShort {
            needed,
            available: samples.len(),
        });
    }
    Ok(())
}

fn hold_missing(samples: &[f64]) -> Vec<f64> {
    let mut last = samples.iter().copied().find(|x| x.is_finite()).unwrap_or(0.0);
    samples
        .iter()
        .map(|&x| {
            if x.is_finite() {
                last = x;
            }
            last
        })
        .collect()
}

fn centred_mean(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Median over 2 s blocks of the block maximum.
fn typical_block_peak(x: &[f64], block: usize) -> f64 {
    let mut peaks: Vec<f64> = x.chunks(block.max(1)).map(|c| c.iter().copied().fold(0.0, f64::max)).collect();
    peaks.sort_by(f64::total_cmp);
    let median = peaks[peaks.len() / 2];
    if median > 0.0 {
        median
    } else {
        peaks.last().copied().unwrap_or(0.0)
    }
}

fn local_maxima(x: &[f64]) -> Vec<usize> {
    (1..x.len().saturating_sub(1))
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > 0.0)
        .collect()
}

/// Energy envelope of the QRS detector: band-pass, derivative, square,
/// centred moving integration.
pub fn qrs_envelope(samples: &[f64], sample_rate: f64) -> Vec<f64> {
    let x: Vec<f64> = samples.iter().map(|&v| if v.is_finite() { v } else { 0.0 }).collect();
    let band = Cascade::butterworth_bandpass(2, QRS_BAND.0, QRS_BAND.1, sample_rate).filtfilt(&x);
    let n = band.len();
    let at = |i: isize| band[i.clamp(0, n as isize - 1) as usize];
    let squared: Vec<f64> = (0..n as isize)
        .map(|i| {
            let d = (2.0 * (at(i + 1) - at(i - 1)) + at(i + 2) - at(i - 2)) * sample_rate / 8.0;
            d * d
        })
        .collect();
    centred_mean(&squared, (INTEGRATION_S * sample_rate).round() as usize)
}

/// QRS detection in the style of Pan and Tompkins on a zero-phase envelope.
pub fn detect_qrs(samples: &[f64], sample_rate: f64) -> Result<Vec<usize>> {
    ensure_length(samples, sample_rate)?;
    let env = qrs_envelope(samples, sample_rate);
    let block = (MIN_DETECTION_S * sample_rate).round() as usize;
    let typical = typical_block_peak(&env, block);
    if typical <= 0.0 {
        return Ok(Vec::new());
    }
    let refractory = refractory_samples(REFRACTORY_S, sample_rate);
    let mut spki = typical;
    let mut npki = dsp::mean(&env) / 2.0;
    let mut beats: Vec<usize> = Vec::new();
    let mut noise: Vec<usize> = Vec::new();
    let threshold = |s: f64, n: f64| n + 0.25 * (s - n);

    for p in local_maxima(&env) {
        // search back for a missed beat before considering this peak
        if let Some(&last) = beats.last() {
            if beats.len() >= 2 {
                let recent = &beats[beats.len().saturating_sub(9)..];
                let mean_rr = (recent[recent.len() - 1] - recent[0]) as f64 / (recent.len() - 1) as f64;
                if (p - last) as f64 > SEARCH_BACK_RR * mean_rr {
                    let half = threshold(spki, npki) / 2.0;
                    let mut recovered: Vec<usize> = Vec::new();
                    for &q in noise.iter().filter(|&&q| q >= last + refractory && q + refractory <= p && env[q] > half) {
                        match recovered.last_mut() {
                            Some(r) if q - *r < refractory => {
                                if env[q] > env[*r] {
                                    *r = q;
                                }
                            }
                            _ => recovered.push(q),
                        }
                    }
                    // a replacement can land within the refractory period of its predecessor
                    recovered.dedup_by(|b, a| *b - *a < refractory);
                    for q in recovered {
                        beats.push(q);
                        spki = 0.25 * env[q] + 0.75 * spki;
                    }
                }
            }
        }
        let t1 = threshold(spki, npki);
        let value = env[p];
        match beats.last().copied() {
            Some(last) if p - last < refractory => {
                if value > env[last] && (beats.len() < 2 || p - beats[beats.len() - 2] >= refractory) {
                    *beats.last_mut().unwrap() = p;
                } else {
                    npki = 0.125 * value + 0.875 * npki;
                    noise.push(p);
                }
            }
            _ if value > t1 => {
                beats.push(p);
                spki = 0.125 * value + 0.875 * spki;
            }
            _ => {
                npki = 0.125 * value + 0.875 * npki;
                noise.push(p);
            }
        }
    }
    Ok(beats)
}

/// Pulse onsets on a pressure or plethysmogram channel via a slope-sum
/// function.
pub fn detect_pulses(samples: &[f64], sample_rate: f64) -> Result<Vec<usize>> {
    ensure_length(samples, sample_rate)?;
    let held = hold_missing(samples);
    let x = Cascade::butterworth_lowpass(2, PULSE_LOWPASS_HZ.min(0.45 * sample_rate), sample_rate).filtfilt(&held);
    let n = x.len();
    let w = (SLOPE_WINDOW_S * sample_rate).round().max(1.0) as usize;
    let mut ssf = vec![0.0; n];
    let mut acc = 0.0;
    let rise = |i: usize| if i == 0 { 0.0 } else { (x[i] - x[i - 1]).max(0.0) };
    for i in 0..n {
        acc += rise(i);
        if i >= w {
            acc -= rise(i - w);
        }
        ssf[i] = acc.max(0.0);
    }
    let block = (MIN_DETECTION_S * sample_rate).round() as usize;
    let base = typical_block_peak(&ssf, block);
    if base <= f64::EPSILON * x.iter().fold(1.0, |m: f64, v| m.max(v.abs())) {
        return Ok(Vec::new());
    }
    let refractory = refractory_samples(PULSE_REFRACTORY_S, sample_rate);
    let lookback = refractory_samples(0.15, sample_rate);
    let mut peak_est = base;
    let mut onsets: Vec<usize> = Vec::new();
    let mut i = 1;
    while i < n {
        let t = PULSE_THRESHOLD * peak_est;
        if ssf[i] > t && ssf[i - 1] <= t {
            // foot of the pulse: minimum of the filtered wave shortly before
            let lo = i.saturating_sub(lookback).max(onsets.last().map_or(0, |&o| o + refractory));
            let foot = (lo..=i).min_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap_or(i);
            if onsets.last().is_none_or(|&o| foot >= o + refractory) {
                onsets.push(foot);
                let hi = (i + refractory).min(n);
                let pk = ssf[i..hi].iter().copied().fold(0.0, f64::max);
                peak_est = (0.75 * peak_est + 0.25 * pk).clamp(0.5 * base, 2.0 * base);
                i += refractory;
                continue;
            }
        }
        i += 1;
    }
    Ok(onsets)
}

/// Heart rate `60·(k−1)/Δt` for every run of `k` consecutive beats.
pub fn window_heart_rate(indices: &[usize], sample_rate: f64, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Config(format!("heart-rate window of {k} beats")));
    }
    if indices.len() < k {
        return Err(Error::TooFewBeats {
            needed: k,
            available: indices.len(),
        });
    }
    Ok(indices
        .windows(k)
        .map(|w| 60.0 * (k - 1) as f64 * sample_rate / (w[k - 1] - w[0]) as f64)
        .collect())
}

/// Segments from a third of the preceding interval before each beat to two
/// thirds of the following interval after it. The first beat borrows its
/// following interval and the last beat its preceding one; a segment that
/// would start before sample 0 is dropped.
pub fn beat_segments(indices: &[usize]) -> Result<Vec<BeatSegment>> {
    let n = indices.len();
    if n < 3 {
        return Err(Error::TooFewBeats {
            needed: 3,
            available: n,
        });
    }
    let third = |gap: usize| (gap as f64 / 3.0).round() as usize;
    let two_thirds = |gap: usize| (2.0 * gap as f64 / 3.0).round() as usize;
    let mut out = Vec::with_capacity(n);
    for (i, &idx) in indices.iter().enumerate() {
        let before = if i == 0 { indices[1] - idx } else { idx - indices[i - 1] };
        let after = if i == n - 1 { idx - indices[i - 1] } else { indices[i + 1] - idx };
        let Some(start) = idx.checked_sub(third(before)) else {
            continue;
        };
        out.push(BeatSegment {
            ordinal: i,
            beat: idx,
            start,
            end: idx + two_thirds(after),
        });
    }
    Ok(out)
}

/// Ventricular iff spectral power in 0.5–10 Hz exceeds power in 10–30 Hz.
pub fn classify_beat_spectral(beat: &[f64], sample_rate: f64) -> Result<BeatLabel> {
    let needed = (0.2 * sample_rate).round() as usize;
    if beat.len() < needed {
        return Err(Error::WindowTooShort {
            needed,
            available: beat.len(),
        });
    }
    if beat.iter().any(|x| !x.is_finite()) {
        return Ok(BeatLabel::Unknown);
    }
    let psd = dsp::periodogram(beat, sample_rate, sample_rate.ceil() as usize);
    let low = psd.band_power(LOW_BAND_HZ.0, LOW_BAND_HZ.1);
    let high = psd.band_power(HIGH_BAND_HZ.0, HIGH_BAND_HZ.1);
    Ok(if low > high {
        BeatLabel::Ventricular
    } else {
        BeatLabel::Normal
    })
}

/// Spectral label of every beat using a QRS-centred window; beats whose
/// window leaves the signal are `Unknown`.
pub fn label_beats_spectral(samples: &[f64], indices: &[usize], sample_rate: f64) -> Vec<BeatLabel> {
    let half = (QRS_HALF_WIDTH_S * sample_rate).round() as usize;
    indices
        .iter()
        .map(|&i| {
            if i < half || i + half > samples.len() {
                return BeatLabel::Unknown;
            }
            classify_beat_spectral(&samples[i - half..i + half], sample_rate).unwrap_or(BeatLabel::Unknown)
        })
        .collect()
}

/// Parses an annotation listing: one sample index per line, optionally
/// followed by `N` or `V`.
pub fn parse_annotations(text: &str, record_len: usize, channel: usize) -> Result<BeatAnnotation> {
    let mut indices = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = false;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty());
        let idx: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedAnnotation(format!("line {}: {line:?}", n + 1)))?;
        let label = match parts.next() {
            None => BeatLabel::Unknown,
            Some(code) => {
                any_label = true;
                match code.to_ascii_uppercase().as_str() {
                    "N" => BeatLabel::Normal,
                    "V" => BeatLabel::Ventricular,
                    _ => return Err(Error::MalformedAnnotation(format!("line {}: label {code:?}", n + 1))),
                }
            }
        };
        if parts.next().is_some() {
            return Err(Error::MalformedAnnotation(format!("line {}: extra fields", n + 1)));
        }
        if indices.last().is_some_and(|&prev| idx <= prev) {
            return Err(Error::MalformedAnnotation(format!("line {}: index {idx} out of order", n + 1)));
        }
        if idx >= record_len {
            return Err(Error::IndexOutOfBounds {
                index: idx,
                len: record_len,
            });
        }
        indices.push(idx);
        labels.push(label);
    }
    Ok(BeatAnnotation {
        channel,
        indices,
        labels: any_label.then_some(labels),
    })
}

pub fn import_annotations(path: &Path, record_len: usize, channel: usize) -> Result<BeatAnnotation> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, record_len, channel)
}

/// Annotation files for one record found in `dir`: `<record>.beats` covers
/// the primary ECG and `<record>.<channel>.beats` names its channel.
pub fn load_annotation_dir(dir: &Path, record: &Record) -> Result<Vec<BeatAnnotation>> {
    let mut found = Vec::new();
    if let Some(ecg) = record.primary_ecg() {
        let path = dir.join(format!("{}.beats", record.name));
        if path.is_file() {
            found.push(import_annotations(&path, record.len(), ecg)?);
        }
    }
    for (ch, meta) in record.channels.iter().enumerate() {
        let path = dir.join(format!("{}.{}.beats", record.name, meta.name));
        if path.is_file() {
            found.retain(|a: &BeatAnnotation| a.channel != ch);
            found.push(import_annotations(&path, record.len(), ch)?);
        }
    }
    Ok(found)
}

pub fn format_annotations(annotation: &BeatAnnotation) -> String {
    let mut out = String::new();
    for (i, idx) in annotation.indices.iter().enumerate() {
        match &annotation.labels {
            Some(_) => out.push_str(&format!("{idx} {}\n", annotation.label(i).code())),
            None => out.push_str(&format!("{idx}\n")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, Event, SynthSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const FS: f64 = 250.0;

    #[test]
    fn annotation_dir_naming() {
        use crate::record::Arrhythmia;
        let rec = crate::testutil::record_from(&[("ABP", vec![80.0; 1000]), ("II", vec![0.0; 1000])], FS, Arrhythmia::Asystole);
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(format!("{}.beats", rec.name)), "10\n300\n").unwrap();
        std::fs::write(dir.path().join(format!("{}.ABP.beats", rec.name)), "50 N\n").unwrap();
        let mut found = load_annotation_dir(dir.path(), &rec).unwrap();
        found.sort_by_key(|a| a.channel);
        assert_eq!(found.len(), 2);
        assert_eq!((found[0].channel, found[0].indices.clone()), (0, vec![50]));
        assert_eq!((found[1].channel, found[1].indices.clone()), (1, vec![10, 300]));
        assert!(load_annotation_dir(tempfile::tempdir().unwrap().path(), &rec).unwrap().is_empty());
    }

    /// Fraction of `truth` matched by `found` within `tol` samples, and the
    /// fraction of `found` that matches some truth beat.
    fn match_rates(truth: &[usize], found: &[usize], tol: usize) -> (f64, f64) {
        let near = |a: &[usize], x: usize| a.iter().any(|&y| x.abs_diff(y) <= tol);
        let sens = truth.iter().filter(|&&t| near(found, t)).count() as f64 / truth.len() as f64;
        let ppv = found.iter().filter(|&&f| near(truth, f)).count() as f64 / found.len().max(1) as f64;
        (sens, ppv)
    }

    fn sinus(bpm: f64, seconds: f64, noise: f64, seed: u64) -> synth::SynthOutput {
        synth::generate(&SynthSpec {
            heart_rate: bpm,
            duration_s: seconds,
            noise,
            seed,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn qrs_count_at_80_bpm() {
        let out = sinus(80.0, 60.0, 0.01, 1);
        let found = detect_qrs(&out.record.samples[0], FS).unwrap();
        assert!((found.len() as f64 - 80.0).abs() <= 1.0, "{}", found.len());
        let (sens, ppv) = match_rates(&out.beats, &found, 19);
        assert!(sens >= 0.99 && ppv >= 0.99, "{sens} {ppv}");
    }

    #[test]
    fn qrs_matches_ground_truth_across_rates() {
        for (bpm, seed) in [(40.0, 2), (60.0, 3), (100.0, 4), (150.0, 5), (180.0, 6)] {
            let out = sinus(bpm, 60.0, 0.0, seed);
            let found = detect_qrs(&out.record.samples[0], FS).unwrap();
            let (sens, ppv) = match_rates(&out.beats, &found, 19);
            assert!(sens >= 0.99 && ppv >= 0.99, "{bpm} bpm: {sens} {ppv}");
        }
    }

    #[test]
    fn qrs_on_zero_signal_is_empty() {
        assert!(detect_qrs(&vec![0.0; 2500], FS).unwrap().is_empty());
        assert!(matches!(detect_qrs(&[0.0; 100], FS), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn qrs_dropout_leaves_gap() {
        let out = synth::generate(&SynthSpec {
            heart_rate: 80.0,
            duration_s: 60.0,
            event: Event::Dropout { start_s: 30.0, seconds: 5.0 },
            ..SynthSpec::default()
        })
        .unwrap();
        let found = detect_qrs(&out.record.samples[0], FS).unwrap();
        let widest = found.windows(2).map(|w| w[1] - w[0]).max().unwrap();
        assert!(widest as f64 >= 5.0 * FS, "{widest}");
    }

    #[test]
    fn qrs_finds_ventricular_run() {
        let out = synth::generate(&SynthSpec {
            heart_rate: 80.0,
            duration_s: 60.0,
            event: Event::VtRun { beats: 7, bpm: 130.0 },
            ..SynthSpec::default()
        })
        .unwrap();
        let found = detect_qrs(&out.record.samples[0], FS).unwrap();
        let (sens, ppv) = match_rates(&out.beats, &found, 19);
        assert!(sens >= 0.99 && ppv >= 0.99, "{sens} {ppv}");
    }

    #[test]
    fn pulses_at_one_and_two_hertz() {
        for (bpm, seconds, expected) in [(60.0, 30.0, 30.0), (120.0, 10.0, 20.0)] {
            let out = synth::generate(&SynthSpec {
                heart_rate: bpm,
                duration_s: seconds,
                rr_jitter: 0.0,
                first_beat_s: 0.05,
                channels: vec!["ABP".into(), "PLETH".into()],
                ..SynthSpec::default()
            })
            .unwrap();
            for ch in 0..2 {
                let found = detect_pulses(&out.record.samples[ch], FS).unwrap();
                assert!((found.len() as f64 - expected).abs() <= 1.0, "{bpm} ch{ch}: {}", found.len());
            }
        }
        assert!(detect_pulses(&vec![0.0; 2500], FS).unwrap().is_empty());
    }

    #[test]
    fn pulses_follow_beats() {
        let out = synth::generate(&SynthSpec {
            heart_rate: 75.0,
            duration_s: 60.0,
            channels: vec!["II".into(), "ABP".into()],
            ..SynthSpec::default()
        })
        .unwrap();
        let found = detect_pulses(&out.record.samples[1], FS).unwrap();
        // onsets trail the R peaks by the transit delay
        let delay = (synth::ABP_DELAY_S * FS) as usize;
        let shifted: Vec<usize> = out.beats.iter().map(|b| b + delay).collect();
        let (sens, ppv) = match_rates(&shifted, &found, 19);
        assert!(sens >= 0.98 && ppv >= 0.98, "{sens} {ppv}");
    }

    #[test]
    fn heart_rate_windows() {
        let one_hz: Vec<usize> = (0..10).map(|i| i * 250).collect();
        assert!(window_heart_rate(&one_hz, FS, 4).unwrap().iter().all(|&h| (h - 60.0).abs() < 1e-12));
        let fast: Vec<usize> = (0..20).map(|i| i * 100).collect();
        let hr = window_heart_rate(&fast, FS, 17).unwrap();
        assert_eq!(hr.len(), 4);
        assert!(hr.iter().all(|&h| (h - 150.0).abs() < 1e-9));
        assert!(matches!(window_heart_rate(&[0, 250, 500], FS, 4), Err(Error::TooFewBeats { needed: 4, available: 3 })));
    }

    #[test]
    fn segment_arithmetic() {
        let s = beat_segments(&[300, 600, 900]).unwrap();
        assert_eq!((s[1].start, s[1].end), (500, 800));
        assert_eq!((s[0].start, s[0].end), (200, 500));
        assert_eq!((s[2].start, s[2].end), (800, 1100));
        let s = beat_segments(&[0, 300, 330, 900]).unwrap();
        // the first beat would start below zero
        assert_eq!(s.len(), 3);
        assert_eq!((s[1].beat, s[1].start, s[1].end), (330, 320, 710));
        let s = beat_segments(&[100, 200, 300, 400, 500]).unwrap();
        assert!(s.iter().all(|g| g.end - g.start == 100));
        assert!(matches!(beat_segments(&[1, 2]), Err(Error::TooFewBeats { .. })));
    }

    fn tone(freq: f64, n: usize) -> Vec<f64> {
        let hann = dsp::hann(n);
        (0..n).map(|i| hann[i] * (2.0 * PI * freq * i as f64 / FS).sin()).collect()
    }

    #[test]
    fn spectral_labels() {
        assert_eq!(classify_beat_spectral(&tone(5.0, 100), FS).unwrap(), BeatLabel::Ventricular);
        assert_eq!(classify_beat_spectral(&tone(20.0, 60), FS).unwrap(), BeatLabel::Normal);
        assert!(matches!(classify_beat_spectral(&[0.0; 10], FS), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn synthetic_templates_label_correctly() {
        let out = synth::generate(&SynthSpec {
            heart_rate: 80.0,
            duration_s: 60.0,
            event: Event::VtRun { beats: 7, bpm: 130.0 },
            ..SynthSpec::default()
        })
        .unwrap();
        let labels = label_beats_spectral(&out.record.samples[0], &out.beats, FS);
        for (got, want) in labels.iter().zip(&out.labels) {
            assert_eq!(got, want);
        }
        assert_eq!(out.labels.iter().filter(|l| **l == BeatLabel::Ventricular).count(), 7);
    }

    #[test]
    fn annotation_files() {
        let a = parse_annotations("250\n500\n750\n", 1000, 0).unwrap();
        assert_eq!(a.indices, vec![250, 500, 750]);
        assert!(a.labels.is_none());
        assert!(matches!(parse_annotations("500\n250", 1000, 0), Err(Error::MalformedAnnotation(_))));
        assert!(matches!(parse_annotations("250\n1000", 1000, 0), Err(Error::IndexOutOfBounds { index: 1000, len: 1000 })));
        let a = parse_annotations("10 N\n20 V\n30\n", 100, 1).unwrap();
        assert_eq!(a.labels.unwrap(), vec![BeatLabel::Normal, BeatLabel::Ventricular, BeatLabel::Unknown]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ann.txt");
        let mut ann = BeatAnnotation::new(0, vec![5, 9, 40]);
        ann.labels = Some(vec![BeatLabel::Normal, BeatLabel::Ventricular, BeatLabel::Normal]);
        std::fs::write(&path, format_annotations(&ann)).unwrap();
        assert_eq!(import_annotations(&path, 50, 0).unwrap(), ann);
    }

    #[test]
    fn within_clips_and_keeps_labels() {
        let mut ann = BeatAnnotation::new(2, vec![10, 20, 30, 40]);
        ann.labels = Some(vec![BeatLabel::Normal, BeatLabel::Ventricular, BeatLabel::Normal, BeatLabel::Ventricular]);
        let w = ann.within(15, 40);
        assert_eq!(w.indices, vec![20, 30]);
        assert_eq!(w.labels.unwrap(), vec![BeatLabel::Ventricular, BeatLabel::Normal]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn qrs_output_invariants(seed in 0u64..1000, len in 500usize..3000, scale in 0.0f64..5.0, spikes in proptest::collection::vec((0usize..3000, -10.0f64..10.0), 0..20)) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut x: Vec<f64> = (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            for (i, v) in spikes {
                if i < len { x[i] = v; }
            }
            if seed % 7 == 0 {
                for v in x.iter_mut().take(len / 3) { *v = f64::NAN; }
            }
            let found = detect_qrs(&x, FS).unwrap();
            let refractory = refractory_samples(REFRACTORY_S, FS);
            for w in found.windows(2) {
                prop_assert!(w[1] > w[0] && w[1] - w[0] >= refractory);
            }
            prop_assert!(found.iter().all(|&i| i < len));
            prop_assert_eq!(detect_qrs(&x, FS).unwrap(), found);
        }

        #[test]
        fn heart_rate_window_count(gaps in proptest::collection::vec(1usize..500, 1..60), k in 2usize..20) {
            let mut idx = vec![0usize];
            for g in gaps { idx.push(idx.last().unwrap() + g); }
            match window_heart_rate(&idx, FS, k) {
                Ok(hr) => {
                    prop_assert_eq!(hr.len(), idx.len() - k + 1);
                    prop_assert!(hr.iter().all(|&h| h > 0.0));
                }
                Err(Error::TooFewBeats { .. }) => prop_assert!(idx.len() < k),
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn segments_disjoint_and_ordered(start in 0usize..400, gaps in proptest::collection::vec(2usize..500, 2..40)) {
            let mut idx = vec![start];
            for g in gaps { idx.push(idx.last().unwrap() + g); }
            let segs = beat_segments(&idx).unwrap();
            for s in &segs {
                prop_assert!(s.start < s.beat && s.beat < s.end);
            }
            for w in segs.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
                prop_assert!(w[0].beat < w[1].beat);
            }
        }

        #[test]
        fn spectral_label_scale_invariant(seed in 0u64..500, a in prop_oneof![-100.0f64..-1e-3, 1e-3f64..100.0]) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().map(|v| a * v).collect();
            prop_assert_eq!(classify_beat_spectral(&x, FS).unwrap(), classify_beat_spectral(&y, FS).unwrap());
        }
    }
}
