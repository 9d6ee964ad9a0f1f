//! Alarm adjudication: validity, the regular-activity gate, and one test per
//! arrhythmia.
//!
//! Every test looks at the analysis window that ends at the alarm. A test
//! that cannot be evaluated (too few beats, no usable channel) confirms the
//! alarm rather than suppressing it.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::banks::{self, BankClassifier, BankKind, BeatBank};
use crate::beats::{self, BeatAnnotation, BeatLabel};
use crate::dsp;
use crate::dtw::{self, TrainingCorpus, WarpParams};
use crate::error::{Error, Result};
use crate::quality::{self, CleanThresholds, InvalidInterval, QualityReport};
use crate::record::{AlarmLabel, Arrhythmia, ChannelKind, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Baseline,
    Improved,
    DtwFull,
    DtwVbank,
    DtwSelfMin,
    DtwSelfKl,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Baseline,
        Method::Improved,
        Method::DtwFull,
        Method::DtwVbank,
        Method::DtwSelfMin,
        Method::DtwSelfKl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Improved => "improved",
            Method::DtwFull => "dtw-full",
            Method::DtwVbank => "dtw-vbank",
            Method::DtwSelfMin => "dtw-self-min",
            Method::DtwSelfKl => "dtw-self-kl",
        }
    }

    pub fn is_dtw(self) -> bool {
        !matches!(self, Method::Baseline | Method::Improved)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Positive,
    Negative,
    NotEvaluated,
    Regular,
    Irregular,
}

impl Outcome {
    pub fn from_label(label: AlarmLabel) -> Self {
        if label.is_true() {
            Outcome::Positive
        } else {
            Outcome::Negative
        }
    }

    fn from_option(v: Option<bool>) -> Self {
        match v {
            Some(true) => Outcome::Positive,
            Some(false) => Outcome::Negative,
            None => Outcome::NotEvaluated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEvidence {
    pub channel: String,
    pub test: String,
    pub outcome: Outcome,
    pub witnesses: BTreeMap<String, f64>,
}

impl ChannelEvidence {
    pub fn new(channel: &str, test: &str, outcome: Outcome) -> Self {
        Self {
            channel: channel.to_string(),
            test: test.to_string(),
            outcome,
            witnesses: BTreeMap::new(),
        }
    }

    pub fn witness(&mut self, name: &str, value: f64) {
        self.witnesses.insert(name.to_string(), value);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub record: String,
    pub arrhythmia: Arrhythmia,
    pub method: Method,
    pub decision: AlarmLabel,
    /// Regular activity dismissed the alarm; implies `FalseAlarm`.
    pub gate_fired: bool,
    pub evidence: Vec<ChannelEvidence>,
    pub notes: Vec<String>,
}

impl Verdict {
    pub fn new(record: &Record, method: Method, decision: AlarmLabel) -> Self {
        Self {
            record: record.name.clone(),
            arrhythmia: record.alarm.arrhythmia,
            method,
            decision,
            gate_fired: false,
            evidence: Vec::new(),
            notes: Vec::new(),
        }
    }
}

/// Thresholds and windows of every test. Comparisons are strict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestConfig {
    pub analysis_window_s: f64,
    /// Beat detection starts this long before the window.
    pub detection_lead_in_s: f64,
    pub asystole_gap_s: f64,
    pub brady_hr: f64,
    pub brady_beats: usize,
    pub tachy_hr: f64,
    pub tachy_beats: usize,
    pub vt_hr: f64,
    pub vt_beats: usize,
    pub vt_abp_std: f64,
    /// Channels below this validity weight are not voted in the VT test.
    pub vt_min_validity: f64,
    pub vf_min_duration_s: f64,
    pub vf_band_lo_hz: f64,
    pub vf_band_hi_hz: f64,
    pub vf_power_fraction: f64,
    pub vf_halfwidth_hz: f64,
    pub vf_total_lo_hz: f64,
    pub vf_total_hi_hz: f64,
    pub vf_window_s: f64,
    pub vf_hop_s: f64,
    pub regular_min_beats: usize,
    pub rr_cv_max: f64,
    pub rr_min_s: f64,
    pub rr_max_s: f64,
    pub dtw_lead: String,
    pub dtw_radius: usize,
    pub beat_radius: usize,
    pub clean_baseline_wander_min: f64,
    pub clean_power_ratio_min: f64,
    pub clean_kurtosis_min: f64,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            analysis_window_s: 16.0,
            detection_lead_in_s: 4.0,
            asystole_gap_s: 3.0,
            brady_hr: 45.0,
            brady_beats: 4,
            tachy_hr: 140.0,
            tachy_beats: 17,
            vt_hr: 95.0,
            vt_beats: 4,
            vt_abp_std: 6.0,
            vt_min_validity: 0.5,
            vf_min_duration_s: 3.0,
            vf_band_lo_hz: 2.0,
            vf_band_hi_hz: 8.0,
            vf_power_fraction: 0.6,
            vf_halfwidth_hz: 1.0,
            vf_total_lo_hz: 0.5,
            vf_total_hi_hz: 30.0,
            vf_window_s: 2.0,
            vf_hop_s: 0.5,
            regular_min_beats: 5,
            rr_cv_max: 0.1,
            rr_min_s: 0.43,
            rr_max_s: 1.5,
            dtw_lead: dtw::DEFAULT_LEAD.to_string(),
            dtw_radius: dtw::FULL_SIGNAL_RADIUS,
            beat_radius: banks::BEAT_RADIUS,
            clean_baseline_wander_min: 0.75,
            clean_power_ratio_min: 0.9,
            clean_kurtosis_min: 4.0,
        }
    }
}

impl TestConfig {
    pub fn clean_thresholds(&self) -> CleanThresholds {
        CleanThresholds {
            baseline_wander_min: self.clean_baseline_wander_min,
            power_ratio_min: self.clean_power_ratio_min,
            kurtosis_min: self.clean_kurtosis_min,
        }
    }

    /// Sets one field from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("{key} = {value:?}"));
        let float = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let count = |v: &str| v.parse::<usize>().map_err(|_| bad());
        match key {
            "analysis_window_s" => self.analysis_window_s = float(value)?,
            "detection_lead_in_s" => self.detection_lead_in_s = float(value)?,
            "asystole_gap_s" => self.asystole_gap_s = float(value)?,
            "brady_hr" => self.brady_hr = float(value)?,
            "brady_beats" => self.brady_beats = count(value)?,
            "tachy_hr" => self.tachy_hr = float(value)?,
            "tachy_beats" => self.tachy_beats = count(value)?,
            "vt_hr" => self.vt_hr = float(value)?,
            "vt_beats" => self.vt_beats = count(value)?,
            "vt_abp_std" => self.vt_abp_std = float(value)?,
            "vt_min_validity" => self.vt_min_validity = float(value)?,
            "vf_min_duration_s" => self.vf_min_duration_s = float(value)?,
            "vf_band_lo_hz" => self.vf_band_lo_hz = float(value)?,
            "vf_band_hi_hz" => self.vf_band_hi_hz = float(value)?,
            "vf_power_fraction" => self.vf_power_fraction = float(value)?,
            "vf_halfwidth_hz" => self.vf_halfwidth_hz = float(value)?,
            "vf_total_lo_hz" => self.vf_total_lo_hz = float(value)?,
            "vf_total_hi_hz" => self.vf_total_hi_hz = float(value)?,
            "vf_window_s" => self.vf_window_s = float(value)?,
            "vf_hop_s" => self.vf_hop_s = float(value)?,
            "regular_min_beats" => self.regular_min_beats = count(value)?,
            "rr_cv_max" => self.rr_cv_max = float(value)?,
            "rr_min_s" => self.rr_min_s = float(value)?,
            "rr_max_s" => self.rr_max_s = float(value)?,
            "dtw_lead" => self.dtw_lead = value.to_string(),
            "dtw_radius" => self.dtw_radius = count(value)?,
            "beat_radius" => self.beat_radius = count(value)?,
            "clean_baseline_wander_min" => self.clean_baseline_wander_min = float(value)?,
            "clean_power_ratio_min" => self.clean_power_ratio_min = float(value)?,
            "clean_kurtosis_min" => self.clean_kurtosis_min = float(value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let floats = [
            ("analysis_window_s", self.analysis_window_s),
            ("asystole_gap_s", self.asystole_gap_s),
            ("brady_hr", self.brady_hr),
            ("tachy_hr", self.tachy_hr),
            ("vt_hr", self.vt_hr),
            ("vt_abp_std", self.vt_abp_std),
            ("vf_min_duration_s", self.vf_min_duration_s),
            ("vf_band_lo_hz", self.vf_band_lo_hz),
            ("vf_band_hi_hz", self.vf_band_hi_hz),
            ("vf_power_fraction", self.vf_power_fraction),
            ("vf_halfwidth_hz", self.vf_halfwidth_hz),
            ("vf_total_hi_hz", self.vf_total_hi_hz),
            ("vf_window_s", self.vf_window_s),
            ("vf_hop_s", self.vf_hop_s),
            ("rr_cv_max", self.rr_cv_max),
            ("rr_min_s", self.rr_min_s),
            ("rr_max_s", self.rr_max_s),
        ];
        if let Some((k, v)) = floats.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("{k} must be positive, got {v}")));
        }
        if self.detection_lead_in_s < 0.0 || self.vt_min_validity < 0.0 || self.vf_total_lo_hz < 0.0 {
            return Err(Error::Config("negative lead-in, validity floor or band edge".into()));
        }
        if self.brady_beats < 2 || self.tachy_beats < 2 || self.vt_beats < 2 || self.regular_min_beats < 2 {
            return Err(Error::Config("beat windows need at least 2 beats".into()));
        }
        if self.rr_min_s >= self.rr_max_s || self.vf_band_lo_hz >= self.vf_band_hi_hz {
            return Err(Error::Config("empty RR or VF band range".into()));
        }
        Ok(())
    }
}

/// `key = value` lines over the defaults; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<TestConfig> {
    let mut cfg = TestConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        cfg.set(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TestConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// External inputs some methods need.
#[derive(Debug, Clone, Copy, Default)]
pub struct Resources<'a> {
    /// Beat annotations replacing the built-in detectors, one per channel,
    /// in record sample coordinates.
    pub annotations: &'a [BeatAnnotation],
    pub corpus: Option<&'a TrainingCorpus>,
    pub ventricular_bank: Option<&'a BeatBank>,
    pub standard_bank: Option<&'a BeatBank>,
}

/// Analysis window of a record with its quality and beats.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub window: Record,
    /// Window start in record samples.
    pub offset: usize,
    pub quality: QualityReport,
    /// Window-local beat indices for ECG, ABP and PPG channels.
    pub beats: Vec<Option<BeatAnnotation>>,
}

fn beat_kind(kind: ChannelKind) -> bool {
    matches!(kind, ChannelKind::Ecg | ChannelKind::Abp | ChannelKind::Ppg)
}

fn detect(kind: ChannelKind, samples: &[f64], fs: f64) -> Vec<usize> {
    let found = match kind {
        ChannelKind::Ecg => beats::detect_qrs(samples, fs),
        _ => beats::detect_pulses(samples, fs),
    };
    found.unwrap_or_default()
}

/// Beats over the whole record on one channel: external annotations when
/// supplied, otherwise the built-in detector.
pub fn record_beats(record: &Record, channel: usize, external: &[BeatAnnotation]) -> Vec<usize> {
    match external.iter().find(|a| a.channel == channel) {
        Some(a) => a.indices.clone(),
        None => detect(record.channels[channel].kind, &record.samples[channel], record.sample_rate),
    }
}

pub fn analyze(record: &Record, cfg: &TestConfig, external: &[BeatAnnotation]) -> Analysis {
    let fs = record.sample_rate;
    let end = record.alarm.alarm_index;
    let offset = end.saturating_sub((cfg.analysis_window_s * fs).round() as usize);
    let lead_in_start = offset.saturating_sub((cfg.detection_lead_in_s * fs).round() as usize);
    let window = record.slice(offset, end);
    let quality = quality::assess(&window);
    let beats = record
        .channels
        .iter()
        .enumerate()
        .map(|(ch, meta)| {
            if !beat_kind(meta.kind) {
                return None;
            }
            let absolute = match external.iter().find(|a| a.channel == ch) {
                Some(a) => a.within(offset, end),
                None => {
                    let found = detect(meta.kind, &record.samples[ch][lead_in_start..end], fs);
                    BeatAnnotation::new(ch, found.into_iter().map(|i| i + lead_in_start).collect()).within(offset, end)
                }
            };
            Some(BeatAnnotation {
                channel: ch,
                indices: absolute.indices.iter().map(|i| i - offset).collect(),
                labels: absolute.labels,
            })
        })
        .collect();
    Analysis {
        window,
        offset,
        quality,
        beats,
    }
}

/// Regularity of one channel's beats over a window of `window_len` samples.
pub fn channel_regular(indices: &[usize], window_len: usize, invalid_samples: usize, fs: f64, cfg: &TestConfig) -> (bool, BTreeMap<String, f64>) {
    let mut w = BTreeMap::new();
    w.insert("beats".into(), indices.len() as f64);
    w.insert("invalid_samples".into(), invalid_samples as f64);
    if indices.len() < cfg.regular_min_beats.max(2) {
        return (false, w);
    }
    let rr: Vec<f64> = indices.windows(2).map(|p| (p[1] - p[0]) as f64 / fs).collect();
    let mean = dsp::mean(&rr);
    let cv = dsp::std_dev(&rr) / mean;
    let lo = rr.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = rr.iter().copied().fold(0.0, f64::max);
    let lead = indices[0] as f64 / fs;
    let trail = (window_len - indices[indices.len() - 1]) as f64 / fs;
    w.insert("rr_cv".into(), cv);
    w.insert("rr_min_s".into(), lo);
    w.insert("rr_max_s".into(), hi);
    w.insert("edge_gap_s".into(), lead.max(trail));
    let regular = invalid_samples == 0
        && cv <= cfg.rr_cv_max
        && lo >= cfg.rr_min_s
        && hi <= cfg.rr_max_s
        && lead <= cfg.rr_max_s
        && trail <= cfg.rr_max_s;
    (regular, w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularActivity {
    /// `None` for channels that carry no beats.
    pub per_channel: Vec<Option<bool>>,
    pub any: bool,
    pub evidence: Vec<ChannelEvidence>,
}

/// A channel is regular when it has no invalid samples and its RR intervals
/// are plentiful, steady and within range; one regular channel suffices.
pub fn regular_activity(analysis: &Analysis, cfg: &TestConfig) -> RegularActivity {
    let w = &analysis.window;
    let mut per_channel = Vec::with_capacity(w.channels.len());
    let mut evidence = Vec::new();
    for (ch, ann) in analysis.beats.iter().enumerate() {
        let Some(ann) = ann else {
            per_channel.push(None);
            continue;
        };
        let invalid = analysis.quality.invalid_samples(ch, 0..w.len());
        let (regular, witnesses) = channel_regular(&ann.indices, w.len(), invalid, w.sample_rate, cfg);
        per_channel.push(Some(regular));
        evidence.push(ChannelEvidence {
            channel: w.channels[ch].name.clone(),
            test: "regular_activity".into(),
            outcome: if regular { Outcome::Regular } else { Outcome::Irregular },
            witnesses,
        });
    }
    let any = per_channel.iter().any(|r| *r == Some(true));
    RegularActivity { per_channel, any, evidence }
}

fn priority(record: &Record, ch: usize) -> u8 {
    match record.channels[ch].kind {
        ChannelKind::Ecg if record.primary_ecg() == Some(ch) && record.channels[ch].name.eq_ignore_ascii_case("II") => 4,
        ChannelKind::Ecg => 3,
        ChannelKind::Abp => 2,
        ChannelKind::Ppg => 1,
        _ => 0,
    }
}

/// Highest validity weight among channels accepted by `filter`; ties go to
/// lead II, then other ECG, then ABP, then PPG, then the lower index.
pub fn most_reliable(analysis: &Analysis, filter: impl Fn(ChannelKind) -> bool) -> Option<usize> {
    let w = &analysis.window;
    (0..w.channels.len())
        .filter(|&ch| analysis.beats[ch].is_some() && filter(w.channels[ch].kind))
        .max_by(|&a, &b| {
            analysis
                .quality
                .weight(a)
                .total_cmp(&analysis.quality.weight(b))
                .then(priority(w, a).cmp(&priority(w, b)))
                .then(b.cmp(&a))
        })
}

/// Longest beat-free stretch in seconds, window edges included.
pub fn longest_gap_s(indices: &[usize], window_len: usize, fs: f64) -> f64 {
    let mut longest = match (indices.first(), indices.last()) {
        (Some(&f), Some(&l)) => f.max(window_len.saturating_sub(l + 1)),
        _ => window_len,
    };
    for p in indices.windows(2) {
        longest = longest.max(p[1] - p[0] - 1);
    }
    longest as f64 / fs
}

/// True when some sub-window of `asystole_gap_s` holds no beat.
pub fn test_asystole(indices: &[usize], window_len: usize, fs: f64, cfg: &TestConfig) -> bool {
    let need = (cfg.asystole_gap_s * fs).round() as usize;
    window_len < need || longest_gap_s(indices, window_len, fs) * fs >= need as f64 - 1e-9
}

/// Minimum heart rate over `brady_beats`-beat windows below the threshold;
/// `None` when there are too few beats.
pub fn test_bradycardia(indices: &[usize], fs: f64, cfg: &TestConfig) -> Option<(bool, f64)> {
    let hr = beats::window_heart_rate(indices, fs, cfg.brady_beats).ok()?;
    let min = hr.iter().copied().fold(f64::INFINITY, f64::min);
    Some((min < cfg.brady_hr, min))
}

/// Maximum heart rate over `tachy_beats`-beat windows above the threshold.
pub fn test_tachycardia(indices: &[usize], fs: f64, cfg: &TestConfig) -> Option<(bool, f64)> {
    let hr = beats::window_heart_rate(indices, fs, cfg.tachy_beats).ok()?;
    let max = hr.iter().copied().fold(0.0, f64::max);
    Some((max > cfg.tachy_hr, max))
}

fn vf_window_positive(seg: &[f64], fs: f64, cfg: &TestConfig) -> bool {
    seg.iter().all(|v| v.is_finite())
        && dsp::welch(seg, fs, seg.len(), 0).is_some_and(|psd| {
            let total = psd.band_power(cfg.vf_total_lo_hz, cfg.vf_total_hi_hz);
            match psd.peak_in(cfg.vf_total_lo_hz, cfg.vf_total_hi_hz) {
                Some(f) if total > 0.0 && f >= cfg.vf_band_lo_hz && f <= cfg.vf_band_hi_hz => {
                    psd.band_power(f - cfg.vf_halfwidth_hz, f + cfg.vf_halfwidth_hz) / total >= cfg.vf_power_fraction
                }
                _ => false,
            }
        })
}

/// Longest sustained stretch, in seconds, of low-frequency dominance.
///
/// The signal is cut into hop-long slices. A slice counts only when every
/// sliding window covering it is dominated, so one loud burst cannot be
/// stretched by the windows that merely overlap it.
pub fn vf_dominance_s(ecg: &[f64], fs: f64, cfg: &TestConfig) -> Result<f64> {
    let needed = (cfg.vf_min_duration_s * fs).round() as usize;
    let win = (cfg.vf_window_s * fs).round() as usize;
    if ecg.len() < needed.max(win) || win == 0 {
        return Err(Error::WindowTooShort {
            needed: needed.max(win).max(1),
            available: ecg.len(),
        });
    }
    let hop = ((cfg.vf_hop_s * fs).round() as usize).clamp(1, win);
    let starts: Vec<usize> = (0..=ecg.len() - win).step_by(hop).collect();
    let positive: Vec<bool> = starts.iter().map(|&s| vf_window_positive(&ecg[s..s + win], fs, cfg)).collect();
    let covered_end = starts[starts.len() - 1] + win;
    let mut run = 0usize;
    let mut best = 0usize;
    let mut slice = 0;
    while slice < covered_end {
        let slice_end = (slice + hop).min(covered_end);
        let mut covering = starts.iter().zip(&positive).filter(|(&s, _)| s <= slice && s + win >= slice_end).peekable();
        let counts = covering.peek().is_some() && covering.all(|(_, &p)| p);
        if counts {
            run += slice_end - slice;
            best = best.max(run);
        } else {
            run = 0;
        }
        slice = slice_end;
    }
    Ok(best as f64 / fs)
}

pub fn test_vfib(ecg: &[f64], fs: f64, cfg: &TestConfig) -> Result<bool> {
    Ok(vf_dominance_s(ecg, fs, cfg)? >= cfg.vf_min_duration_s - 1e-9)
}

/// Positive when `vt_beats` consecutive ventricular beats exceed the rate
/// threshold. Returns the decision and the fastest qualifying rate.
pub fn vt_ecg_positive(indices: &[usize], labels: &[BeatLabel], fs: f64, cfg: &TestConfig) -> Option<(bool, f64)> {
    let k = cfg.vt_beats;
    if indices.len() < k || labels.len() != indices.len() {
        return None;
    }
    let mut fastest = 0.0f64;
    for i in 0..=indices.len() - k {
        if labels[i..i + k].iter().all(|l| *l == BeatLabel::Ventricular) {
            let hr = 60.0 * (k - 1) as f64 * fs / (indices[i + k - 1] - indices[i]) as f64;
            fastest = fastest.max(hr);
        }
    }
    Some((fastest > cfg.vt_hr, fastest))
}

fn valid_samples(samples: &[f64], intervals: &[InvalidInterval]) -> Vec<f64> {
    let mut keep = vec![true; samples.len()];
    for iv in intervals {
        keep[iv.start.min(samples.len())..iv.end.min(samples.len())].fill(false);
    }
    samples.iter().zip(keep).filter(|(v, k)| *k && v.is_finite()).map(|(v, _)| *v).collect()
}

/// Standard deviation of the valid pressure samples below the threshold.
pub fn vt_abp_positive(samples: &[f64], intervals: &[InvalidInterval], cfg: &TestConfig) -> Option<(bool, f64)> {
    let valid = valid_samples(samples, intervals);
    if valid.len() < 2 {
        return None;
    }
    let sd = dsp::std_dev(&valid);
    Some((sd < cfg.vt_abp_std, sd))
}

/// Combines per-channel VT outcomes. Unevaluated channels abstain; with no
/// evaluated channel the alarm stands.
pub fn vote(outcomes: &[Option<bool>], method: Method) -> AlarmLabel {
    let evaluated: Vec<bool> = outcomes.iter().flatten().copied().collect();
    if evaluated.is_empty() {
        return AlarmLabel::TrueAlarm;
    }
    AlarmLabel::from_bool(match method {
        Method::Baseline => evaluated.iter().all(|&p| p),
        _ => evaluated.iter().any(|&p| p),
    })
}

fn channel_name(a: &Analysis, ch: usize) -> String {
    a.window.channels[ch].name.clone()
}

fn fail_safe(name: &str, test: &str) -> ChannelEvidence {
    ChannelEvidence::new(name, test, Outcome::NotEvaluated)
}

fn rate_test(
    a: &Analysis,
    test: &str,
    f: impl Fn(&[usize], f64) -> Option<(bool, f64)>,
    witness: &str,
) -> (AlarmLabel, ChannelEvidence) {
    let Some(ch) = most_reliable(a, |_| true) else {
        return (AlarmLabel::TrueAlarm, fail_safe("none", test));
    };
    let ann = a.beats[ch].as_ref().expect("beat channel");
    match f(&ann.indices, a.window.sample_rate) {
        Some((positive, value)) => {
            let mut e = ChannelEvidence::new(&channel_name(a, ch), test, Outcome::from_option(Some(positive)));
            e.witness(witness, value);
            e.witness("beats", ann.len() as f64);
            (AlarmLabel::from_bool(positive), e)
        }
        None => {
            let mut e = fail_safe(&channel_name(a, ch), test);
            e.witness("beats", ann.len() as f64);
            (AlarmLabel::TrueAlarm, e)
        }
    }
}

fn run_asystole(a: &Analysis, cfg: &TestConfig) -> (AlarmLabel, Vec<ChannelEvidence>) {
    let Some(ch) = most_reliable(a, |_| true) else {
        return (AlarmLabel::TrueAlarm, vec![fail_safe("none", "asystole")]);
    };
    let ann = a.beats[ch].as_ref().expect("beat channel");
    let fs = a.window.sample_rate;
    let positive = test_asystole(&ann.indices, a.window.len(), fs, cfg);
    let mut e = ChannelEvidence::new(&channel_name(a, ch), "asystole", Outcome::from_option(Some(positive)));
    e.witness("longest_gap_s", longest_gap_s(&ann.indices, a.window.len(), fs));
    (AlarmLabel::from_bool(positive), vec![e])
}

fn run_vfib(a: &Analysis, cfg: &TestConfig) -> (AlarmLabel, Vec<ChannelEvidence>) {
    let Some(ch) = most_reliable(a, |k| k == ChannelKind::Ecg) else {
        return (AlarmLabel::TrueAlarm, vec![fail_safe("none", "vfib")]);
    };
    match vf_dominance_s(&a.window.samples[ch], a.window.sample_rate, cfg) {
        Ok(sustained) => {
            let positive = sustained >= cfg.vf_min_duration_s - 1e-9;
            let mut e = ChannelEvidence::new(&channel_name(a, ch), "vfib", Outcome::from_option(Some(positive)));
            e.witness("dominance_s", sustained);
            (AlarmLabel::from_bool(positive), vec![e])
        }
        Err(_) => (AlarmLabel::TrueAlarm, vec![fail_safe(&channel_name(a, ch), "vfib")]),
    }
}

/// Per-channel VT outcomes from beat labels on the given ECG channels plus
/// the pressure branch when `with_abp` is set.
fn vt_outcomes(
    a: &Analysis,
    labels: &BTreeMap<usize, Vec<BeatLabel>>,
    with_abp: bool,
    cfg: &TestConfig,
) -> (Vec<Option<bool>>, Vec<ChannelEvidence>) {
    let fs = a.window.sample_rate;
    let mut outcomes = Vec::new();
    let mut evidence = Vec::new();
    for (&ch, l) in labels {
        let ann = a.beats[ch].as_ref().expect("beat channel");
        let usable = a.quality.weight(ch) >= cfg.vt_min_validity;
        let result = if usable { vt_ecg_positive(&ann.indices, l, fs, cfg) } else { None };
        let mut e = ChannelEvidence::new(&channel_name(a, ch), "vtach", Outcome::from_option(result.map(|r| r.0)));
        e.witness("ventricular_beats", l.iter().filter(|x| **x == BeatLabel::Ventricular).count() as f64);
        e.witness("beats", ann.len() as f64);
        e.witness("validity", a.quality.weight(ch));
        if let Some((_, hr)) = result {
            e.witness("max_run_hr", hr);
        }
        outcomes.push(result.map(|r| r.0));
        evidence.push(e);
    }
    if with_abp {
        for ch in (0..a.window.channels.len()).filter(|&c| a.window.channels[c].kind == ChannelKind::Abp) {
            let usable = a.quality.weight(ch) >= cfg.vt_min_validity;
            let result = if usable {
                vt_abp_positive(&a.window.samples[ch], &a.quality.channels[ch].intervals, cfg)
            } else {
                None
            };
            let mut e = ChannelEvidence::new(&channel_name(a, ch), "vtach_abp", Outcome::from_option(result.map(|r| r.0)));
            e.witness("validity", a.quality.weight(ch));
            if let Some((_, sd)) = result {
                e.witness("std_mmhg", sd);
            }
            outcomes.push(result.map(|r| r.0));
            evidence.push(e);
        }
    }
    (outcomes, evidence)
}

fn spectral_labels(a: &Analysis, ch: usize) -> Vec<BeatLabel> {
    let ann = a.beats[ch].as_ref().expect("beat channel");
    match &ann.labels {
        Some(l) if l.iter().all(|x| *x != BeatLabel::Unknown) => l.clone(),
        _ => beats::label_beats_spectral(&a.window.samples[ch], &ann.indices, a.window.sample_rate),
    }
}

/// Lead for beat-bank methods: the configured lead when it is an ECG
/// channel, otherwise the primary ECG.
fn bank_lead(record: &Record, cfg: &TestConfig) -> Option<usize> {
    record
        .channel_index(&cfg.dtw_lead)
        .filter(|&c| record.channels[c].kind == ChannelKind::Ecg)
        .or_else(|| record.primary_ecg())
}

fn bank_labels(
    record: &Record,
    a: &Analysis,
    lead: usize,
    method: Method,
    cfg: &TestConfig,
    res: &Resources<'_>,
) -> Result<(Vec<usize>, Vec<BeatLabel>)> {
    let end = record.alarm.alarm_index;
    let all = record_beats(record, lead, res.annotations);
    let in_window: Vec<usize> = all.iter().copied().filter(|&b| b >= a.offset && b < end).map(|b| b - a.offset).collect();
    let self_bank = banks::extract_self_bank(record, lead, &all, &cfg.clean_thresholds());
    let labels = match method {
        Method::DtwVbank => {
            let ventricular = res.ventricular_bank.ok_or_else(|| Error::MissingResource {
                method: method.to_string(),
                resource: "a ventricular beat bank directory".into(),
            })?;
            let mut standard = BeatBank::new(BankKind::StandardRepresentative);
            if let Ok(b) = &self_bank {
                standard.beats.extend(b.beats.iter().cloned());
            }
            if let Some(extra) = res.standard_bank {
                standard.beats.extend(extra.beats.iter().cloned());
            }
            let classifier = BankClassifier::Vbank {
                ventricular,
                standard: &standard,
            };
            banks::vt_labels_from_bank(record, lead, &all, (a.offset, end), classifier, cfg.beat_radius)?
        }
        _ => {
            let bank = self_bank?;
            let stats = banks::bank_novelty_stats(&bank, cfg.beat_radius)?;
            let classifier = if method == Method::DtwSelfMin {
                BankClassifier::SelfMin { bank: &bank, stats: &stats }
            } else {
                BankClassifier::SelfKl { bank: &bank, stats: &stats }
            };
            banks::vt_labels_from_bank(record, lead, &all, (a.offset, end), classifier, cfg.beat_radius)?
        }
    };
    Ok((in_window, labels))
}

fn run_vtach(record: &Record, a: &mut Analysis, method: Method, cfg: &TestConfig, res: &Resources<'_>, notes: &mut Vec<String>) -> Result<(AlarmLabel, Vec<ChannelEvidence>)> {
    let mut labels = BTreeMap::new();
    let with_abp = !method.is_dtw();
    if method.is_dtw() {
        let Some(lead) = bank_lead(record, cfg) else {
            return Err(Error::MissingLead(cfg.dtw_lead.clone()));
        };
        match bank_labels(record, a, lead, method, cfg, res) {
            Ok((indices, l)) => {
                a.beats[lead] = Some(BeatAnnotation {
                    channel: lead,
                    indices,
                    labels: None,
                });
                labels.insert(lead, l);
            }
            Err(e @ Error::MissingResource { .. }) => return Err(e),
            Err(e) => {
                notes.push(format!("beat bank unavailable ({e}); spectral beat labels used"));
                labels.insert(lead, spectral_labels(a, lead));
            }
        }
    } else {
        for ch in (0..a.window.channels.len()).filter(|&c| a.window.channels[c].kind == ChannelKind::Ecg && a.beats[c].is_some()) {
            labels.insert(ch, spectral_labels(a, ch));
        }
    }
    let (outcomes, evidence) = vt_outcomes(a, &labels, with_abp, cfg);
    let voting = if method == Method::Baseline { Method::Baseline } else { Method::Improved };
    Ok((vote(&outcomes, voting), evidence))
}

/// Full adjudication of one record.
pub fn classify_alarm(record: &Record, method: Method, cfg: &TestConfig, res: &Resources<'_>) -> Result<Verdict> {
    let arrhythmia = record.alarm.arrhythmia;
    if method.is_dtw() && arrhythmia != Arrhythmia::VTach {
        return Err(Error::UnsupportedMethod {
            method: method.to_string(),
            arrhythmia: arrhythmia.to_string(),
        });
    }
    if method == Method::DtwFull {
        let corpus = res.corpus.ok_or_else(|| Error::MissingResource {
            method: method.to_string(),
            resource: "a training corpus".into(),
        })?;
        return dtw::classify_full_signal(record, corpus, &cfg.dtw_lead, WarpParams::new(cfg.dtw_radius));
    }

    let mut a = analyze(record, cfg, res.annotations);
    let gate = regular_activity(&a, cfg);
    let mut verdict = Verdict::new(record, method, AlarmLabel::FalseAlarm);
    verdict.evidence.extend(gate.evidence);
    if gate.any {
        verdict.gate_fired = true;
        return Ok(verdict);
    }
    let (decision, evidence) = match arrhythmia {
        Arrhythmia::Asystole => run_asystole(&a, cfg),
        Arrhythmia::Bradycardia => {
            let (d, e) = rate_test(&a, "bradycardia", |i, fs| test_bradycardia(i, fs, cfg), "min_hr");
            (d, vec![e])
        }
        Arrhythmia::Tachycardia => {
            let (d, e) = rate_test(&a, "tachycardia", |i, fs| test_tachycardia(i, fs, cfg), "max_hr");
            (d, vec![e])
        }
        Arrhythmia::VFib => run_vfib(&a, cfg),
        Arrhythmia::VTach => run_vtach(record, &mut a, method, cfg, res, &mut verdict.notes)?,
    };
    verdict.decision = decision;
    verdict.evidence.extend(evidence);
    Ok(verdict)
}
