//! Beat banks for beat-level DTW labelling.
//!
//! A ventricular representative bank and a standard bank label beats by
//! their nearest neighbour. A patient's own bank of clean pre-alarm beats
//! labels beats by novelty: either the minimum distance to the bank or the
//! KL divergence between distance histograms, each against μ + σ of the
//! bank's own statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::beats::{beat_segments, BeatLabel};
use crate::dsp;
use crate::dtw::{beat_distance, znormalize};
use crate::error::{Error, Result};
use crate::quality::{clean_window_metrics, is_clean, CleanThresholds};
use crate::record::{resample_half, Record};

pub const BANK_RATE: f64 = 125.0;
pub const BANK_SIZE: usize = 20;
/// One second at the bank rate.
pub const BEAT_RADIUS: usize = 125;
pub const SECTION_S: f64 = 10.0;
pub const MIN_PRE_ALARM_S: f64 = 30.0;
/// Bank sections end this long before the alarm so the alarm window itself
/// never contributes beats.
pub const ALARM_EXCLUSION_S: f64 = 16.0;
pub const MIN_BEAT_S: f64 = 0.2;
pub const MAX_BEAT_S: f64 = 2.0;

pub const KL_BINS: usize = 10;
pub const KL_RANGE_FACTOR: f64 = 1.5;
pub const KL_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BankKind {
    VentricularRepresentative,
    StandardRepresentative,
    SelfNonVentricular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankBeat {
    /// Z-normalized samples at 125 Hz.
    pub samples: Vec<f64>,
    pub record: String,
    /// Sample range at 125 Hz in the source record.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatBank {
    pub kind: BankKind,
    pub beats: Vec<BankBeat>,
}

impl BeatBank {
    pub fn new(kind: BankKind) -> Self {
        Self { kind, beats: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.beats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beats.is_empty()
    }

    pub fn push_samples(&mut self, samples: &[f64], record: &str) -> Result<()> {
        self.beats.push(BankBeat {
            samples: znormalize(samples)?,
            record: record.to_string(),
            start: 0,
            end: samples.len(),
        });
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyStats {
    pub mu_min: f64,
    pub sigma_min: f64,
    pub mu_kl: f64,
    pub sigma_kl: f64,
    /// Distances of every unordered pair of bank beats.
    pub reference_distances: Vec<f64>,
    pub bin_edges: Vec<f64>,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    (dsp::mean(x), dsp::std_dev(x))
}

fn to_bank_rate(record: &Record) -> Result<Record> {
    if (record.sample_rate - BANK_RATE).abs() < 1e-9 {
        Ok(record.clone())
    } else {
        resample_half(record)
    }
}

fn bank_index(index: usize, sample_rate: f64) -> usize {
    (index as f64 * BANK_RATE / sample_rate).round() as usize
}

/// Self bank from clean 10 s sections before the alarm window, scanned
/// from the most recent section backward. `beats` are QRS indices on
/// `lead` at the record's own rate.
pub fn extract_self_bank(record: &Record, lead: usize, beats: &[usize], thresholds: &CleanThresholds) -> Result<BeatBank> {
    let alarm_s = record.alarm.alarm_index as f64 / record.sample_rate;
    if alarm_s + 1e-9 < MIN_PRE_ALARM_S {
        return Err(Error::InsufficientData {
            needed: (MIN_PRE_ALARM_S * record.sample_rate).round() as usize,
            available: record.alarm.alarm_index,
        });
    }
    let lead_only = to_bank_rate(&record.select(&[lead]))?;
    let x = &lead_only.samples[0];
    let section = (SECTION_S * BANK_RATE).round() as usize;
    let beats125: Vec<usize> = beats.iter().map(|&b| bank_index(b, record.sample_rate)).collect();
    let segments = if beats125.len() >= 3 { beat_segments(&beats125)? } else { Vec::new() };
    let min_len = (MIN_BEAT_S * BANK_RATE).round() as usize;
    let max_len = (MAX_BEAT_S * BANK_RATE).round() as usize;

    let mut bank = BeatBank::new(BankKind::SelfNonVentricular);
    let mut end = ((alarm_s - ALARM_EXCLUSION_S).max(0.0) * BANK_RATE).round() as usize;
    end = end.min(x.len());
    while end >= section && bank.len() < BANK_SIZE {
        let start = end - section;
        let clean = clean_window_metrics(&x[start..end], BANK_RATE).is_ok_and(|m| is_clean(&m, thresholds));
        if clean {
            for seg in segments.iter().rev().filter(|s| s.start >= start && s.end <= end) {
                let len = seg.end - seg.start;
                if !(min_len..=max_len).contains(&len) {
                    continue;
                }
                if let Ok(z) = znormalize(&x[seg.start..seg.end]) {
                    bank.beats.push(BankBeat {
                        samples: z,
                        record: record.name.clone(),
                        start: seg.start,
                        end: seg.end,
                    });
                    if bank.len() == BANK_SIZE {
                        break;
                    }
                }
            }
        }
        end = start;
    }
    if bank.len() < BANK_SIZE {
        return Err(Error::InsufficientCleanBeats {
            found: bank.len(),
            needed: BANK_SIZE,
        });
    }
    Ok(bank)
}

/// Histogram bin of `v` over equal-width `edges`; values past the last edge
/// land in the last bin.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    let hi = edges[bins];
    if hi <= 0.0 {
        return if v <= 0.0 { 0 } else { bins - 1 };
    }
    (((v / hi) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Normalized histogram.
pub fn histogram(values: &[f64], edges: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; edges.len() - 1];
    for &v in values {
        h[bin_of(v, edges)] += 1.0;
    }
    let total = values.len().max(1) as f64;
    h.iter_mut().for_each(|c| *c /= total);
    h
}

/// Additive smoothing followed by renormalization.
pub fn smooth(q: &[f64], epsilon: f64) -> Vec<f64> {
    let total: f64 = q.iter().sum::<f64>() + epsilon * q.len() as f64;
    q.iter().map(|v| (v + epsilon) / total).collect()
}

/// `Σ P(i)·ln(P(i)/Q(i))` with `0·ln(0/q) = 0`. Infinite when `Q` has a zero
/// where `P` does not; callers smooth `Q` first.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(p.len(), q.len()));
    }
    for d in [p, q] {
        let s: f64 = d.iter().sum();
        if (s - 1.0).abs() > 1e-9 || d.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::NotNormalized(s));
        }
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| if *qi > 0.0 { pi * (pi / qi).ln() } else { f64::INFINITY })
        .sum())
}

fn pairwise(bank: &BeatBank, radius: usize) -> Result<Vec<Vec<f64>>> {
    let n = bank.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = beat_distance(&bank.beats[i].samples, &bank.beats[j].samples, radius)?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

fn edges_for(reference: &[f64]) -> Vec<f64> {
    let hi = KL_RANGE_FACTOR * reference.iter().copied().fold(0.0, f64::max);
    (0..=KL_BINS).map(|k| hi * k as f64 / KL_BINS as f64).collect()
}

/// Within-bank minimum-distance and leave-one-out KL statistics.
pub fn bank_novelty_stats(bank: &BeatBank, radius: usize) -> Result<NoveltyStats> {
    let n = bank.len();
    if n < 3 {
        return Err(Error::BankTooSmall(n));
    }
    let d = pairwise(bank, radius)?;
    let minima: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| d[i][j]).fold(f64::INFINITY, f64::min))
        .collect();
    let reference: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| d[i][j]).collect();
    let edges = edges_for(&reference);
    let kls = (0..n)
        .map(|k| {
            let own: Vec<f64> = (0..n).filter(|&j| j != k).map(|j| d[k][j]).collect();
            let rest: Vec<f64> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|&(i, j)| i != k && j != k)
                .map(|(i, j)| d[i][j])
                .collect();
            kl_divergence(&histogram(&own, &edges), &smooth(&histogram(&rest, &edges), KL_EPSILON))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mu_min, sigma_min) = mean_std(&minima);
    let (mu_kl, sigma_kl) = mean_std(&kls);
    Ok(NoveltyStats {
        mu_min,
        sigma_min,
        mu_kl,
        sigma_kl,
        reference_distances: reference,
        bin_edges: edges,
    })
}

fn distances(beat: &[f64], bank: &BeatBank, radius: usize) -> Result<Vec<f64>> {
    bank.beats.iter().map(|b| beat_distance(beat, &b.samples, radius)).collect()
}

/// Label of the nearest beat over both banks. The ventricular bank is
/// searched first and only a strictly smaller distance displaces a match.
pub fn classify_beat_vbank(beat: &[f64], ventricular: &BeatBank, standard: &BeatBank, radius: usize) -> Result<BeatLabel> {
    if ventricular.is_empty() || standard.is_empty() {
        return Err(Error::EmptyBank);
    }
    let mut best = (f64::INFINITY, BeatLabel::Ventricular);
    for (bank, label) in [(ventricular, BeatLabel::Ventricular), (standard, BeatLabel::Normal)] {
        for d in distances(beat, bank, radius)? {
            if d < best.0 {
                best = (d, label);
            }
        }
    }
    Ok(best.1)
}

/// Ventricular iff the minimum distance to the bank exceeds μ + σ.
pub fn classify_beat_self_min(beat: &[f64], bank: &BeatBank, stats: &NoveltyStats, radius: usize) -> Result<BeatLabel> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let min = distances(beat, bank, radius)?.into_iter().fold(f64::INFINITY, f64::min);
    Ok(if min > stats.mu_min + stats.sigma_min {
        BeatLabel::Ventricular
    } else {
        BeatLabel::Normal
    })
}

/// KL divergence of the beat's distance histogram from the bank's reference
/// histogram.
pub fn beat_kl(beat: &[f64], bank: &BeatBank, stats: &NoveltyStats, radius: usize) -> Result<f64> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    let p = histogram(&distances(beat, bank, radius)?, &stats.bin_edges);
    let q = smooth(&histogram(&stats.reference_distances, &stats.bin_edges), KL_EPSILON);
    kl_divergence(&p, &q)
}

/// Ventricular iff the beat's KL divergence exceeds μ + σ of the bank's
/// leave-one-out divergences.
pub fn classify_beat_self_kl(beat: &[f64], bank: &BeatBank, stats: &NoveltyStats, radius: usize) -> Result<BeatLabel> {
    Ok(if beat_kl(beat, bank, stats, radius)? > stats.mu_kl + stats.sigma_kl {
        BeatLabel::Ventricular
    } else {
        BeatLabel::Normal
    })
}

/// How beats are labelled from banks.
#[derive(Debug, Clone, Copy)]
pub enum BankClassifier<'a> {
    Vbank {
        ventricular: &'a BeatBank,
        standard: &'a BeatBank,
    },
    SelfMin {
        bank: &'a BeatBank,
        stats: &'a NoveltyStats,
    },
    SelfKl {
        bank: &'a BeatBank,
        stats: &'a NoveltyStats,
    },
}

impl BankClassifier<'_> {
    pub fn classify(&self, beat: &[f64], radius: usize) -> Result<BeatLabel> {
        match *self {
            BankClassifier::Vbank { ventricular, standard } => classify_beat_vbank(beat, ventricular, standard, radius),
            BankClassifier::SelfMin { bank, stats } => classify_beat_self_min(beat, bank, stats, radius),
            BankClassifier::SelfKl { bank, stats } => classify_beat_self_kl(beat, bank, stats, radius),
        }
    }
}

/// Labels every beat of `beats` (indices on `lead` at the record's rate)
/// that falls in `[window_start, window_end)`. Beats without a complete
/// segment, or with a constant segment, are `Unknown`.
pub fn vt_labels_from_bank(
    record: &Record,
    lead: usize,
    beats: &[usize],
    window: (usize, usize),
    classifier: BankClassifier<'_>,
    radius: usize,
) -> Result<Vec<BeatLabel>> {
    let lead_only = to_bank_rate(&record.select(&[lead]))?;
    let x = &lead_only.samples[0];
    let fs = record.sample_rate;
    let beats125: Vec<usize> = beats.iter().map(|&b| bank_index(b, fs)).collect();
    let segments = beat_segments(&beats125)?;
    let mut labels = Vec::new();
    for (ordinal, &b) in beats.iter().enumerate() {
        if b < window.0 || b >= window.1 {
            continue;
        }
        let label = match segments.iter().find(|s| s.ordinal == ordinal) {
            Some(seg) if seg.end <= x.len() => {
                let raw = &x[seg.start..seg.end];
                if raw.iter().any(|v| !v.is_finite()) {
                    BeatLabel::Unknown
                } else {
                    match znormalize(raw) {
                        Ok(z) => classifier.classify(&z, radius)?,
                        Err(_) => BeatLabel::Unknown,
                    }
                }
            }
            _ => BeatLabel::Unknown,
        };
        labels.push(label);
    }
    Ok(labels)
}

/// Beat file: `fs=125 label=V|N` header, then one sample per line.
pub fn parse_beat_file(text: &str, path: &Path) -> Result<(BeatLabel, Vec<f64>)> {
    let bad = |reason: String| Error::MalformedBeatFile {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut fs = None;
    let mut label = None;
    for field in header.split_whitespace() {
        match field.split_once('=') {
            Some(("fs", v)) => fs = v.parse::<f64>().ok(),
            Some(("label", "V")) => label = Some(BeatLabel::Ventricular),
            Some(("label", "N")) => label = Some(BeatLabel::Normal),
            _ => return Err(bad(format!("header field {field:?}"))),
        }
    }
    match fs {
        Some(f) if (f - BANK_RATE).abs() < 1e-9 => {}
        _ => return Err(bad(format!("header {header:?} must declare fs=125"))),
    }
    let label = label.ok_or_else(|| bad("header lacks label=V|N".into()))?;
    let samples = lines
        .map(|l| l.parse::<f64>().map_err(|_| bad(format!("sample {l:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    let (lo, hi) = ((MIN_BEAT_S * BANK_RATE).round() as usize, (MAX_BEAT_S * BANK_RATE).round() as usize);
    if !(lo..=hi).contains(&samples.len()) {
        return Err(bad(format!("{} samples, expected {lo}..={hi}", samples.len())));
    }
    Ok((label, samples))
}

pub fn format_beat_file(label: BeatLabel, samples: &[f64]) -> String {
    let code = if label == BeatLabel::Ventricular { 'V' } else { 'N' };
    let mut out = format!("fs=125 label={code}\n");
    for v in samples {
        out.push_str(&format!("{v}\n"));
    }
    out
}

/// Loads every file in `dir` (sorted by name) into a ventricular and a
/// standard bank.
pub fn load_bank_dir(dir: &Path) -> Result<(BeatBank, BeatBank)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let mut ventricular = BeatBank::new(BankKind::VentricularRepresentative);
    let mut standard = BeatBank::new(BankKind::StandardRepresentative);
    for path in paths {
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let (label, samples) = parse_beat_file(&text, &path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let bank = if label == BeatLabel::Ventricular { &mut ventricular } else { &mut standard };
        bank.push_samples(&samples, &name).map_err(|e| Error::MalformedBeatFile {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok((ventricular, standard))
}

/// Writes one beat file per bank beat as `<prefix>_<nn>.txt`.
pub fn write_bank(bank: &BeatBank, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let label = if bank.kind == BankKind::VentricularRepresentative {
        BeatLabel::Ventricular
    } else {
        BeatLabel::Normal
    };
    bank.beats
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let path = dir.join(format!("{prefix}_{i:02}.txt"));
            fs::write(&path, format_beat_file(label, &b.samples)).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
