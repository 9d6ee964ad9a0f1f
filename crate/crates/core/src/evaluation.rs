//! Confusion accounting and the challenge metric suite.
//!
//! The positive class is `TrueAlarm`: suppressing a real alarm is a false
//! negative. Ratios whose denominator is zero are reported as `None`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::AddAssign;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use serde::{Deserialize, Serialize};

use crate::alarm::{classify_alarm, Method, Resources, TestConfig, Verdict};
use crate::banks::BeatBank;
use crate::beats::load_annotation_dir;
use crate::dtw::{corpus_entry, TrainingCorpus};
use crate::error::{Error, Result};
use crate::record::{load_record, AlarmLabel, Arrhythmia, Manifest, ManifestEntry, Record};

/// Weight of a false negative in the challenge score.
pub const FN_PENALTY: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn record(&mut self, predicted: AlarmLabel, truth: AlarmLabel) {
        match (predicted.is_true(), truth.is_true()) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }
}

impl AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.tn += o.tn;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn accumulate(predictions: &[AlarmLabel], truths: &[Option<AlarmLabel>]) -> Result<ConfusionCounts> {
    if predictions.len() != truths.len() {
        return Err(Error::LengthMismatch {
            expected: predictions.len(),
            found: truths.len(),
        });
    }
    let mut c = ConfusionCounts::default();
    for (i, (p, t)) in predictions.iter().zip(truths).enumerate() {
        c.record(*p, t.ok_or(Error::UnknownTruth(i))?);
    }
    Ok(c)
}

/// (TP + TN) / (TP + TN + FP + 5 FN).
pub fn challenge_score(c: &ConfusionCounts) -> Result<f64> {
    if c.total() == 0 {
        return Err(Error::EmptyCounts);
    }
    let num = (c.tp + c.tn) as f64;
    Ok(num / (c.tp + c.tn + c.fp + FN_PENALTY * c.fn_) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
    pub f1: Option<f64>,
    pub challenge_score: f64,
}

impl Metrics {
    /// Name and value pairs in table order.
    pub fn rows(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("Sensitivity", self.sensitivity),
            ("Specificity", self.specificity),
            ("Challenge score", Some(self.challenge_score)),
            ("NPV", self.npv),
            ("PPV", self.ppv),
            ("F1", self.f1),
        ]
    }
}

pub fn metric_suite(c: &ConfusionCounts) -> Result<Metrics> {
    let challenge_score = challenge_score(c)?;
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let ppv = ratio(c.tp, c.tp + c.fp);
    let f1 = match (ppv, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Ok(Metrics {
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        ppv,
        npv: ratio(c.tn, c.tn + c.fn_),
        f1,
        challenge_score,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub counts: ConfusionCounts,
    /// `None` when the class has no results.
    pub metrics: Option<Metrics>,
}

impl ClassReport {
    fn from_counts(counts: ConfusionCounts) -> Self {
        Self {
            counts,
            metrics: metric_suite(&counts).ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_arrhythmia: BTreeMap<Arrhythmia, ClassReport>,
    /// Metrics of the pooled counts.
    pub overall: ClassReport,
}

/// One report per arrhythmia plus the pooled overall report.
pub fn per_arrhythmia_report(results: impl IntoIterator<Item = (Arrhythmia, AlarmLabel, AlarmLabel)>) -> MetricsReport {
    let mut counts: BTreeMap<Arrhythmia, ConfusionCounts> = Arrhythmia::ALL.iter().map(|a| (*a, ConfusionCounts::default())).collect();
    for (arrhythmia, predicted, truth) in results {
        counts.get_mut(&arrhythmia).expect("every class present").record(predicted, truth);
    }
    let mut pooled = ConfusionCounts::default();
    for c in counts.values() {
        pooled += *c;
    }
    MetricsReport {
        per_arrhythmia: counts.into_iter().map(|(a, c)| (a, ClassReport::from_counts(c))).collect(),
        overall: ClassReport::from_counts(pooled),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

/// CSV with one row per (arrhythmia, metric), undefined values as `n/a`.
pub fn report_csv(report: &MetricsReport, method: Method) -> String {
    let mut out = format!("arrhythmia,metric,{method}\n");
    let classes = report
        .per_arrhythmia
        .iter()
        .map(|(a, r)| (a.header_name(), r))
        .chain(std::iter::once(("Overall", &report.overall)));
    for (name, r) in classes {
        let rows = r.metrics.map(|m| m.rows());
        for (k, metric) in ["Sensitivity", "Specificity", "Challenge score", "NPV", "PPV", "F1"].iter().enumerate() {
            let value = rows.and_then(|rows| rows[k].1);
            let _ = writeln!(out, "{name},{metric},{}", cell(value));
        }
    }
    out
}

/// Outcome of one manifest row. Exactly one of `verdict` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub record: String,
    pub arrhythmia: Arrhythmia,
    pub truth: Option<AlarmLabel>,
    pub verdict: Option<Verdict>,
    pub error: Option<String>,
    pub latency_ms: f64,
}

impl RecordOutcome {
    pub fn decision(&self) -> Option<AlarmLabel> {
        self.verdict.as_ref().map(|v| v.decision)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: Method,
    /// False when some record failed; failed records are left out of the
    /// metrics and listed in `records` with their error.
    pub complete: bool,
    pub records: Vec<RecordOutcome>,
    pub metrics: MetricsReport,
    pub max_latency_ms: f64,
    pub mean_latency_ms: f64,
}

/// Builds the report; every outcome must carry a known truth.
pub fn evaluation_report(method: Method, records: Vec<RecordOutcome>) -> Result<EvaluationReport> {
    let mut scored = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let truth = r.truth.ok_or(Error::UnknownTruth(i))?;
        if let Some(d) = r.decision() {
            scored.push((r.arrhythmia, d, truth));
        }
    }
    let latencies: Vec<f64> = records.iter().map(|r| r.latency_ms).collect();
    let max_latency_ms = latencies.iter().copied().fold(0.0, f64::max);
    let mean_latency_ms = if latencies.is_empty() {
        0.0
    } else {
        latencies.iter().sum::<f64>() / latencies.len() as f64
    };
    Ok(EvaluationReport {
        method,
        complete: scored.len() == records.len(),
        metrics: per_arrhythmia_report(scored),
        records,
        max_latency_ms,
        mean_latency_ms,
    })
}

/// Shared inputs for classifying manifest rows.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub config: &'a TestConfig,
    /// Directory searched for external beat annotations.
    pub annotation_dir: Option<&'a Path>,
    pub corpus: Option<&'a TrainingCorpus>,
    pub ventricular_bank: Option<&'a BeatBank>,
    pub standard_bank: Option<&'a BeatBank>,
}

impl<'a> EvalContext<'a> {
    pub fn new(config: &'a TestConfig) -> Self {
        Self {
            config,
            annotation_dir: None,
            corpus: None,
            ventricular_bank: None,
            standard_bank: None,
        }
    }
}

/// Loads a manifest row; the manifest's arrhythmia and label win over the
/// header's.
pub fn load_entry(manifest: &Manifest, entry: &ManifestEntry) -> Result<Record> {
    let mut record = load_record(&manifest.resolve(entry))?;
    record.alarm.arrhythmia = entry.arrhythmia;
    if entry.truth.is_some() {
        record.alarm.truth = entry.truth;
    }
    Ok(record)
}

fn classify_entry(manifest: &Manifest, entry: &ManifestEntry, method: Method, ctx: &EvalContext<'_>) -> Result<Verdict> {
    let record = load_entry(manifest, entry)?;
    let annotations = match ctx.annotation_dir {
        Some(dir) => load_annotation_dir(dir, &record)?,
        None => Vec::new(),
    };
    let res = Resources {
        annotations: &annotations,
        corpus: ctx.corpus,
        ventricular_bank: ctx.ventricular_bank,
        standard_bank: ctx.standard_bank,
    };
    classify_alarm(&record, method, ctx.config, &res)
}

/// Classifies one row and times it. Failures are kept, not dropped.
pub fn evaluate_entry(manifest: &Manifest, entry: &ManifestEntry, method: Method, ctx: &EvalContext<'_>) -> RecordOutcome {
    let started = Instant::now();
    let result = classify_entry(manifest, entry, method, ctx);
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    let (verdict, error) = match result {
        Ok(v) => (Some(v), None),
        Err(e) => (None, Some(e.to_string())),
    };
    RecordOutcome {
        record: entry.record.clone(),
        arrhythmia: entry.arrhythmia,
        truth: entry.truth,
        verdict,
        error,
        latency_ms,
    }
}

/// Seeded shuffle into `train_size` training rows and the rest for testing.
pub fn train_test_split(entries: &[ManifestEntry], train_size: usize, seed: u64) -> (Vec<ManifestEntry>, Vec<ManifestEntry>) {
    let mut shuffled = entries.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(train_size.min(shuffled.len()));
    (shuffled, test)
}

/// Full-signal training corpus from the labeled rows carrying `lead`.
/// Rows without the lead are skipped; other failures propagate.
pub fn build_corpus(manifest: &Manifest, entries: &[ManifestEntry], lead: &str) -> Result<TrainingCorpus> {
    let mut corpus = TrainingCorpus::default();
    for entry in entries.iter().filter(|e| e.truth.is_some()) {
        let record = load_entry(manifest, entry)?;
        match corpus_entry(&record, lead) {
            Ok(e) => corpus.entries.push(e),
            Err(Error::MissingLead(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use AlarmLabel::{FalseAlarm as F, TrueAlarm as T};

    #[test]
    fn accumulate_examples() {
        assert_eq!(accumulate(&[T, F], &[Some(T), Some(T)]).unwrap(), ConfusionCounts::new(1, 0, 0, 1));
        assert_eq!(accumulate(&[], &[]).unwrap(), ConfusionCounts::default());
        assert!(matches!(accumulate(&[T], &[None]), Err(Error::UnknownTruth(0))));
        assert!(matches!(accumulate(&[T], &[]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn score_examples() {
        assert_eq!(challenge_score(&ConfusionCounts::new(1, 1, 1, 1)).unwrap(), 0.25);
        assert_eq!(challenge_score(&ConfusionCounts::new(0, 0, 0, 1)).unwrap(), 0.0);
        assert!(matches!(challenge_score(&ConfusionCounts::default()), Err(Error::EmptyCounts)));
    }

    #[test]
    fn suite_examples() {
        let m = metric_suite(&ConfusionCounts::new(9, 8, 2, 1)).unwrap();
        assert!((m.sensitivity.unwrap() - 0.9).abs() < 1e-12);
        assert!((m.specificity.unwrap() - 0.8).abs() < 1e-12);
        let perfect = metric_suite(&ConfusionCounts::new(4, 7, 0, 0)).unwrap();
        for (_, v) in perfect.rows() {
            assert_eq!(v, Some(1.0));
        }
        // no negatives at all
        let m = metric_suite(&ConfusionCounts::new(3, 0, 0, 2)).unwrap();
        assert_eq!((m.specificity, m.npv), (None, Some(0.0)));
        let m = metric_suite(&ConfusionCounts::new(0, 5, 0, 0)).unwrap();
        assert_eq!((m.sensitivity, m.ppv, m.f1), (None, None, None));
    }

    #[test]
    fn undefined_serializes_as_null() {
        let m = metric_suite(&ConfusionCounts::new(0, 5, 0, 0)).unwrap();
        let v = serde_json::to_value(m).unwrap();
        assert!(v["sensitivity"].is_null() && v["f1"].is_null());
        assert_eq!(v["specificity"], 1.0);
        let c = serde_json::to_value(ConfusionCounts::new(1, 2, 3, 4)).unwrap();
        assert_eq!(c["fn"], 4);
    }

    #[test]
    fn single_class_overall_matches() {
        let r = per_arrhythmia_report(vec![(Arrhythmia::VFib, T, T), (Arrhythmia::VFib, F, T), (Arrhythmia::VFib, F, F)]);
        assert_eq!(r.overall, r.per_arrhythmia[&Arrhythmia::VFib]);
        assert_eq!(r.per_arrhythmia[&Arrhythmia::Asystole].metrics, None);
        assert_eq!(r.per_arrhythmia.len(), 5);
    }

    #[test]
    fn pooled_counts_are_sums() {
        let r = per_arrhythmia_report(vec![(Arrhythmia::Asystole, T, T), (Arrhythmia::Tachycardia, T, F), (Arrhythmia::Tachycardia, F, F)]);
        assert_eq!(r.overall.counts, ConfusionCounts::new(1, 1, 1, 0));
    }

    #[test]
    fn csv_layout() {
        let r = per_arrhythmia_report(vec![(Arrhythmia::Asystole, T, T), (Arrhythmia::Asystole, F, F)]);
        let csv = report_csv(&r, Method::Improved);
        assert!(csv.starts_with("arrhythmia,metric,improved\n"));
        assert!(csv.contains("Asystole,Challenge score,1.000\n"));
        assert!(csv.contains("Bradycardia,Sensitivity,n/a\n"));
        assert_eq!(csv.lines().count(), 1 + 6 * 6);
    }

    #[test]
    fn failed_records_flag_the_report() {
        let ok = RecordOutcome {
            record: "a".into(),
            arrhythmia: Arrhythmia::Asystole,
            truth: Some(T),
            verdict: None,
            error: Some("boom".into()),
            latency_ms: 2.0,
        };
        let rep = evaluation_report(Method::Improved, vec![ok.clone()]).unwrap();
        assert!(!rep.complete);
        assert_eq!(rep.metrics.overall.counts.total(), 0);
        let unknown = RecordOutcome { truth: None, ..ok };
        assert!(evaluation_report(Method::Improved, vec![unknown]).is_err());
    }

    #[test]
    fn split_is_seeded_partition() {
        let entries: Vec<ManifestEntry> = (0..30)
            .map(|i| ManifestEntry {
                record: format!("r{i}"),
                arrhythmia: Arrhythmia::VTach,
                truth: Some(T),
            })
            .collect();
        let (train, test) = train_test_split(&entries, 20, 2015);
        assert_eq!((train.len(), test.len()), (20, 10));
        assert_eq!(train_test_split(&entries, 20, 2015), (train.clone(), test.clone()));
        assert_ne!(train_test_split(&entries, 20, 1).0, train);
        let mut names: Vec<String> = train.iter().chain(&test).map(|e| e.record.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 30);
        assert_eq!(train_test_split(&entries, 99, 0).1.len(), 0);
    }

    #[test]
    fn evaluate_entry_keeps_failures() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest {
            base_dir: dir.path().to_path_buf(),
            entries: vec![ManifestEntry {
                record: "absent".into(),
                arrhythmia: Arrhythmia::Asystole,
                truth: Some(F),
            }],
        };
        let cfg = TestConfig::default();
        let out = evaluate_entry(&manifest, &manifest.entries[0], Method::Improved, &EvalContext::new(&cfg));
        assert!(out.verdict.is_none() && out.error.is_some());
    }

    fn counts() -> impl Strategy<Value = ConfusionCounts> {
        (0usize..60, 0usize..60, 0usize..60, 0usize..60).prop_map(|(a, b, c, d)| ConfusionCounts::new(a, b, c, d))
    }

    proptest! {
        #[test]
        fn score_bounded_by_accuracy(c in counts()) {
            prop_assume!(c.total() > 0);
            let s = challenge_score(&c).unwrap();
            let acc = c.accuracy().unwrap();
            prop_assert!(s <= acc + 1e-15);
            prop_assert_eq!((s - acc).abs() < 1e-15, c.fn_ == 0 || c.tp + c.tn == 0);
        }

        #[test]
        fn tn_to_fn_lowers_score(c in counts()) {
            prop_assume!(c.tn > 0 && c.tp + c.tn > 1);
            let worse = ConfusionCounts::new(c.tp, c.tn - 1, c.fp, c.fn_ + 1);
            prop_assert!(challenge_score(&worse).unwrap() < challenge_score(&c).unwrap());
        }

        #[test]
        fn metrics_in_unit_interval(c in counts()) {
            prop_assume!(c.total() > 0);
            for (_, v) in metric_suite(&c).unwrap().rows() {
                if let Some(v) = v {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn merge_is_associative(a in counts(), b in counts(), c in counts()) {
            let mut left = a;
            left += b;
            left += c;
            let mut bc = b;
            bc += c;
            let mut right = a;
            right += bc;
            prop_assert_eq!(left, right);
        }
    }
}
