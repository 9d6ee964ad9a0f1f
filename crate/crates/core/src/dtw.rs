//! Banded dynamic time warping and 1-nearest-neighbour classification of
//! pre-alarm signals.
//!
//! Local cost is the squared difference and the distance is the square root
//! of the accumulated cost, so radius 0 on equal lengths is the Euclidean
//! norm. Steps are up, left and diagonal without weights.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::alarm::{ChannelEvidence, Method, Outcome, Verdict};
use crate::dsp;
use crate::error::{Error, Result};
use crate::record::{pre_alarm_window, resample_half, AlarmLabel, Arrhythmia, Record};

/// Length of the pre-alarm signal compared by full-signal DTW.
pub const FULL_SIGNAL_S: f64 = 10.0;
pub const FULL_SIGNAL_RATE: f64 = 125.0;
/// Default full-signal radius: two seconds at 125 Hz.
pub const FULL_SIGNAL_RADIUS: usize = 250;
pub const DEFAULT_LEAD: &str = "II";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarpParams {
    /// Sakoe–Chiba radius in samples; `usize::MAX` is unconstrained.
    pub radius: usize,
}

impl WarpParams {
    pub const UNCONSTRAINED: WarpParams = WarpParams { radius: usize::MAX };

    pub fn new(radius: usize) -> Self {
        Self { radius }
    }
}

/// Zero mean, unit population standard deviation.
pub fn znormalize(x: &[f64]) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mu = dsp::mean(x);
    let sigma = dsp::std_dev(x);
    if !(sigma > f64::EPSILON * mu.abs().max(1.0)) {
        return Err(Error::ZeroVariance);
    }
    Ok(x.iter().map(|v| (v - mu) / sigma).collect())
}

/// Banded DTW distance using two rolling rows of the band width.
pub fn dtw_distance(a: &[f64], b: &[f64], params: WarpParams) -> Result<f64> {
    let (la, lb) = (a.len(), b.len());
    if la == 0 || lb == 0 {
        return Err(Error::EmptySequence);
    }
    let r = params.radius;
    if la.abs_diff(lb) > r {
        return Err(Error::BandInfeasible {
            len_a: la,
            len_b: lb,
            radius: r,
        });
    }
    let span = |i: usize| (i.saturating_sub(r), i.saturating_add(r).min(lb - 1));
    let width = r.saturating_mul(2).saturating_add(1).min(lb);
    let mut prev = Vec::with_capacity(width);
    let mut cur = Vec::with_capacity(width);
    let mut prev_lo = 0usize;
    for i in 0..la {
        let (lo, hi) = span(i);
        cur.clear();
        let prev_hi = prev_lo + prev.len();
        let from_prev = |j: usize, prev: &Vec<f64>| {
            if i > 0 && j >= prev_lo && j < prev_hi {
                prev[j - prev_lo]
            } else {
                f64::INFINITY
            }
        };
        for j in lo..=hi {
            let d = a[i] - b[j];
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let up = from_prev(j, &prev);
                let diag = if j > 0 { from_prev(j - 1, &prev) } else { f64::INFINITY };
                let left = if j > lo { cur[j - lo - 1] } else { f64::INFINITY };
                up.min(diag).min(left)
            };
            cur.push(d * d + best);
        }
        std::mem::swap(&mut prev, &mut cur);
        prev_lo = lo;
    }
    Ok(prev[lb - 1 - prev_lo].sqrt())
}

/// DTW between beats of possibly different lengths: the radius is widened
/// to the length difference when needed.
pub fn beat_distance(a: &[f64], b: &[f64], radius: usize) -> Result<f64> {
    dtw_distance(a, b, WarpParams::new(radius.max(a.len().abs_diff(b.len()))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    /// Z-normalized sequence.
    pub sequence: Vec<f64>,
    pub label: AlarmLabel,
    pub lead: String,
    pub arrhythmia: Arrhythmia,
    pub record: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingCorpus {
    pub entries: Vec<CorpusEntry>,
}

impl TrainingCorpus {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries of one lead and alarm type, order preserved.
    pub fn filtered(&self, lead: &str, arrhythmia: Arrhythmia) -> TrainingCorpus {
        TrainingCorpus {
            entries: self
                .entries
                .iter()
                .filter(|e| e.lead.eq_ignore_ascii_case(lead) && e.arrhythmia == arrhythmia)
                .cloned()
                .collect(),
        }
    }

    /// Writes the binary cache: u32 count, then per entry a label byte
    /// (1 = true alarm), u32 length and little-endian f64 values.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            buf.push(u8::from(e.label.is_true()));
            buf.extend_from_slice(&(e.sequence.len() as u32).to_le_bytes());
            for v in &e.sequence {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Reads a cache written by [`TrainingCorpus::save`]; the cache does not
    /// store lead or alarm type, so the caller supplies them.
    pub fn load(path: &Path, lead: &str, arrhythmia: Arrhythmia) -> Result<TrainingCorpus> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::MalformedCorpus(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for k in 0..count {
            let label = match take(1)?[0] {
                0 => AlarmLabel::FalseAlarm,
                1 => AlarmLabel::TrueAlarm,
                other => return Err(Error::MalformedCorpus(format!("label byte {other} in entry {k}"))),
            };
            let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            if len == 0 {
                return Err(Error::MalformedCorpus(format!("entry {k} is empty")));
            }
            let raw = take(len.checked_mul(8).ok_or_else(|| Error::MalformedCorpus("length overflow".into()))?)?;
            let sequence = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push(CorpusEntry {
                sequence,
                label,
                lead: lead.to_string(),
                arrhythmia,
                record: format!("#{k}"),
            });
        }
        if pos != bytes.len() {
            return Err(Error::MalformedCorpus(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(TrainingCorpus { entries })
    }
}

/// Index and distance of the nearest corpus entry; ties go to the earliest.
pub fn nearest(test: &[f64], corpus: &TrainingCorpus, params: WarpParams) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in corpus.entries.iter().enumerate() {
        let d = dtw_distance(test, &e.sequence, params)?;
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.ok_or(Error::EmptyCorpus)
}

pub fn nn1_label(test: &[f64], corpus: &TrainingCorpus, params: WarpParams) -> Result<AlarmLabel> {
    nearest(test, corpus, params).map(|(i, _)| corpus.entries[i].label)
}

fn fill_missing(x: &mut [f64]) {
    let Some(first) = x.iter().copied().find(|v| v.is_finite()) else {
        return;
    };
    let mut last = first;
    for v in x.iter_mut() {
        if v.is_finite() {
            last = *v;
        } else {
            *v = last;
        }
    }
}

/// Last 10 s before the alarm on `lead`, at 125 Hz, z-normalized. Missing
/// samples hold the previous value.
pub fn full_signal(record: &Record, lead: &str) -> Result<Vec<f64>> {
    let ch = record.channel_index(lead).ok_or_else(|| Error::MissingLead(lead.to_string()))?;
    let one = record.select(&[ch]);
    let at_125 = if (one.sample_rate - FULL_SIGNAL_RATE).abs() < 1e-9 {
        one
    } else {
        // a short margin keeps filter edge effects out of the window
        let margin = (2.0 * one.sample_rate) as usize;
        let needed = (FULL_SIGNAL_S * one.sample_rate).round() as usize;
        let end = one.alarm.alarm_index;
        if end < needed {
            return Err(Error::InsufficientData { needed, available: end });
        }
        let mut trimmed = one.slice(end.saturating_sub(needed + margin), end);
        fill_missing(&mut trimmed.samples[0]);
        resample_half(&trimmed)?
    };
    let mut window = pre_alarm_window(&at_125, FULL_SIGNAL_S)?.samples.swap_remove(0);
    fill_missing(&mut window);
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::ZeroVariance);
    }
    znormalize(&window)
}

/// Corpus entry for one training record.
pub fn corpus_entry(record: &Record, lead: &str) -> Result<CorpusEntry> {
    let label = record.alarm.truth.ok_or_else(|| Error::MalformedRow {
        line: 0,
        reason: format!("record {} has no ground truth", record.name),
    })?;
    Ok(CorpusEntry {
        sequence: full_signal(record, lead)?,
        label,
        lead: lead.to_string(),
        arrhythmia: record.alarm.arrhythmia,
        record: record.name.clone(),
    })
}

/// Full-signal DTW verdict against the same-lead, same-alarm-type subset of
/// the corpus.
pub fn classify_full_signal(record: &Record, corpus: &TrainingCorpus, lead: &str, params: WarpParams) -> Result<Verdict> {
    let test = full_signal(record, lead)?;
    let pool = corpus.filtered(lead, record.alarm.arrhythmia);
    let (i, d) = nearest(&test, &pool, params)?;
    let decision = pool.entries[i].label;
    let mut evidence = ChannelEvidence::new(lead, "dtw-full", Outcome::from_label(decision));
    evidence.witness("distance", d);
    evidence.witness("radius", if params.radius == usize::MAX { f64::INFINITY } else { params.radius as f64 });
    evidence.witness("corpus_size", pool.len() as f64);
    let mut v = Verdict::new(record, Method::DtwFull, decision);
    v.evidence.push(evidence);
    v.notes.push(format!("nearest training record {}", pool.entries[i].record));
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, Event, SynthSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Full-matrix DP with an explicit band mask.
    fn oracle(a: &[f64], b: &[f64], radius: Option<usize>) -> f64 {
        let (n, m) = (a.len(), b.len());
        let mut d = vec![vec![f64::INFINITY; m + 1]; n + 1];
        d[0][0] = 0.0;
        for i in 1..=n {
            for j in 1..=m {
                if radius.is_some_and(|r| i.abs_diff(j) > r) {
                    continue;
                }
                let c = (a[i - 1] - b[j - 1]).powi(2);
                d[i][j] = c + d[i - 1][j].min(d[i][j - 1]).min(d[i - 1][j - 1]);
            }
        }
        d[n][m].sqrt()
    }

    fn random_seq(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
        let n = rng.random_range(1..=max_len);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn examples() {
        let p0 = WarpParams::new(0);
        assert_eq!(dtw_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], p0).unwrap(), 0.0);
        assert!((dtw_distance(&[0.0, 0.0], &[1.0, 1.0], p0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(dtw_distance(&[], &[1.0], p0), Err(Error::EmptySequence)));
        assert!(matches!(dtw_distance(&[1.0; 5], &[1.0; 8], WarpParams::new(2)), Err(Error::BandInfeasible { .. })));
        // warping absorbs a shift that lockstep cannot
        let a = [0.0, 0.0, 1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(dtw_distance(&a, &b, WarpParams::new(1)).unwrap(), 0.0);
        assert!(dtw_distance(&a, &b, p0).unwrap() > 1.0);
    }

    #[test]
    fn matches_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let a = random_seq(&mut rng, 32);
            let b = random_seq(&mut rng, 32);
            for r in [0usize, 4, usize::MAX] {
                let got = dtw_distance(&a, &b, WarpParams::new(r));
                if a.len().abs_diff(b.len()) > r {
                    assert!(matches!(got, Err(Error::BandInfeasible { .. })));
                } else {
                    let want = oracle(&a, &b, (r != usize::MAX).then_some(r));
                    assert!((got.unwrap() - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn znormalize_examples() {
        let z = znormalize(&[1.0, 2.0, 3.0]).unwrap();
        assert!(dsp::mean(&z).abs() < 1e-12 && (dsp::std_dev(&z) - 1.0).abs() < 1e-12);
        let again = znormalize(&z).unwrap();
        assert!(z.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!(matches!(znormalize(&[5.0, 5.0, 5.0]), Err(Error::ZeroVariance)));
    }

    fn entry(seq: Vec<f64>, label: AlarmLabel) -> CorpusEntry {
        CorpusEntry {
            sequence: seq,
            label,
            lead: "II".into(),
            arrhythmia: Arrhythmia::VTach,
            record: String::new(),
        }
    }

    #[test]
    fn nearest_neighbour_rules() {
        let p = WarpParams::new(2);
        let corpus = TrainingCorpus {
            entries: vec![
                entry(vec![0.0, 1.0, 0.0], AlarmLabel::FalseAlarm),
                entry(vec![1.0, 1.0, 1.0], AlarmLabel::TrueAlarm),
            ],
        };
        assert_eq!(nn1_label(&[1.0, 1.0, 1.0], &corpus, p).unwrap(), AlarmLabel::TrueAlarm);
        let single = TrainingCorpus { entries: vec![entry(vec![3.0, -2.0], AlarmLabel::FalseAlarm)] };
        assert_eq!(nn1_label(&[0.0, 9.0, 1.0], &single, p).unwrap(), AlarmLabel::FalseAlarm);
        let tied = TrainingCorpus {
            entries: vec![entry(vec![1.0, 1.0], AlarmLabel::FalseAlarm), entry(vec![-1.0, -1.0], AlarmLabel::TrueAlarm)],
        };
        assert_eq!(nn1_label(&[0.0, 0.0], &tied, p).unwrap(), AlarmLabel::FalseAlarm);
        assert!(matches!(nn1_label(&[0.0], &TrainingCorpus::default(), p), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn corpus_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let corpus = TrainingCorpus {
            entries: vec![entry(vec![0.5, -1.25, 3.0], AlarmLabel::TrueAlarm), entry(vec![2.0], AlarmLabel::FalseAlarm)],
        };
        corpus.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + (1 + 4 + 24) + (1 + 4 + 8));
        assert_eq!(&bytes[..5], &[2, 0, 0, 0, 1]);
        let back = TrainingCorpus::load(&path, "II", Arrhythmia::VTach).unwrap();
        assert_eq!(back.entries.iter().map(|e| (&e.sequence, e.label)).collect::<Vec<_>>(),
                   corpus.entries.iter().map(|e| (&e.sequence, e.label)).collect::<Vec<_>>());
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(TrainingCorpus::load(&path, "II", Arrhythmia::VTach), Err(Error::MalformedCorpus(_))));
    }

    #[test]
    fn full_signal_classification() {
        let gen = |seed, event, truth: bool| {
            let mut out = synth::generate(&SynthSpec {
                alarm: Arrhythmia::VTach,
                event,
                seed,
                duration_s: 40.0,
                ..SynthSpec::default()
            })
            .unwrap();
            out.record.alarm.truth = Some(AlarmLabel::from_bool(truth));
            out.record
        };
        let vt = gen(1, Event::VtRun { beats: 6, bpm: 130.0 }, true);
        let sinus = gen(2, Event::None, false);
        let corpus = TrainingCorpus {
            entries: vec![corpus_entry(&sinus, "II").unwrap(), corpus_entry(&vt, "II").unwrap()],
        };
        let v = classify_full_signal(&vt, &corpus, "II", WarpParams::new(FULL_SIGNAL_RADIUS)).unwrap();
        assert_eq!(v.decision, AlarmLabel::TrueAlarm);
        assert_eq!(full_signal(&vt, "II").unwrap().len(), 1250);
        assert!(matches!(full_signal(&vt.select(&[2, 3]), "II"), Err(Error::MissingLead(_))));
        let short = vt.slice(vt.len() - 1000, vt.len());
        assert!(matches!(full_signal(&short, "II"), Err(Error::InsufficientData { .. })));
    }

    proptest! {
        #[test]
        fn metric_properties(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_seq(&mut rng, 24);
            let b = random_seq(&mut rng, 24);
            let u = WarpParams::UNCONSTRAINED;
            prop_assert_eq!(dtw_distance(&a, &a, u).unwrap(), 0.0);
            let ab = dtw_distance(&a, &b, u).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - dtw_distance(&b, &a, u).unwrap()).abs() < 1e-12);
            let base = a.len().abs_diff(b.len());
            let mut last = f64::INFINITY;
            for r in [base, base + 1, base + 3, base + 8, usize::MAX] {
                let d = dtw_distance(&a, &b, WarpParams::new(r)).unwrap();
                prop_assert!(d <= last + 1e-12);
                last = d;
            }
            let wide = dtw_distance(&a, &b, WarpParams::new(a.len().max(b.len()))).unwrap();
            prop_assert_eq!(wide, oracle(&a, &b, None));
        }

        #[test]
        fn radius_zero_is_euclidean(v in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..64)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let e = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            prop_assert!((dtw_distance(&a, &b, WarpParams::new(0)).unwrap() - e).abs() < 1e-12);
        }

        #[test]
        fn znormalize_canonical(x in proptest::collection::vec(-10.0f64..10.0, 3..50), a in prop_oneof![-20.0f64..-0.1, 0.1f64..20.0], b in -50.0f64..50.0) {
            prop_assume!(dsp::std_dev(&x) > 1e-3);
            let zx = znormalize(&x).unwrap();
            let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let zy = znormalize(&y).unwrap();
            let s = a.signum();
            for (p, q) in zx.iter().zip(&zy) {
                prop_assert!((s * p - q).abs() < 1e-9);
            }
            let zz = znormalize(&zx).unwrap();
            prop_assert!(zx.iter().zip(&zz).all(|(p, q)| (p - q).abs() < 1e-9));
        }
    }
}
