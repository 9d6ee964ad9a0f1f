//! Waveform records: header parsing, 16-bit sample files, resampling,
//! pre-alarm windowing and evaluation manifests.
//!
//! Header grammar (space delimited):
//!
//! ```text
//! <name> <n_sig> <fs> <n_samples>
//! <file> 16 <gain> <baseline> <units> <channel name>     (n_sig lines)
//! #<arrhythmia>
//! #True alarm | #False alarm
//! #ALARM_AT <sample>
//! ```
//!
//! Samples are interleaved frames of little-endian `i16`, one value per
//! channel per frame. The count `-32768` marks missing data and decodes to NaN.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::Cascade;
use crate::error::{Error, Result};

/// Reserved count for absent samples.
pub const MISSING_COUNT: i16 = i16::MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ChannelKind {
    Ecg,
    Abp,
    Ppg,
    Resp,
    Other,
}

const ECG_LEADS: [&str; 8] = ["I", "II", "III", "V", "AVR", "AVL", "AVF", "MCL"];

impl ChannelKind {
    /// Infers the channel kind from its label.
    pub fn from_name(name: &str) -> Self {
        let upper = name.trim().to_ascii_uppercase();
        if upper.contains("ABP") || upper.contains("ART") {
            ChannelKind::Abp
        } else if upper.contains("PLETH") || upper.contains("PPG") {
            ChannelKind::Ppg
        } else if upper.contains("RESP") {
            ChannelKind::Resp
        } else if ECG_LEADS.contains(&upper.as_str())
            || ECG_LEADS.iter().any(|lead| {
                // numbered precordial and modified chest leads: V1..V6, MCL1
                upper
                    .strip_prefix(lead)
                    .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
            })
        {
            ChannelKind::Ecg
        } else {
            ChannelKind::Other
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    /// Sample file the channel is stored in.
    pub file: String,
    pub name: String,
    pub kind: ChannelKind,
    pub units: String,
    /// Counts per analog unit.
    pub gain: f64,
    /// Count offset of analog zero.
    pub baseline: i32,
}

impl ChannelMeta {
    pub fn new(file: impl Into<String>, name: impl Into<String>, units: impl Into<String>, gain: f64, baseline: i32) -> Self {
        let name = name.into();
        Self {
            file: file.into(),
            kind: ChannelKind::from_name(&name),
            name,
            units: units.into(),
            gain,
            baseline,
        }
    }

    pub fn to_analog(&self, count: i16) -> f64 {
        decode_count(count, self.gain, self.baseline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arrhythmia {
    Asystole,
    Bradycardia,
    Tachycardia,
    VTach,
    VFib,
}

impl Arrhythmia {
    pub const ALL: [Arrhythmia; 5] = [
        Arrhythmia::Asystole,
        Arrhythmia::Bradycardia,
        Arrhythmia::Tachycardia,
        Arrhythmia::VTach,
        Arrhythmia::VFib,
    ];

    /// Name used in header comments of the challenge distribution.
    pub fn header_name(self) -> &'static str {
        match self {
            Arrhythmia::Asystole => "Asystole",
            Arrhythmia::Bradycardia => "Bradycardia",
            Arrhythmia::Tachycardia => "Tachycardia",
            Arrhythmia::VTach => "Ventricular_Tachycardia",
            Arrhythmia::VFib => "Ventricular_Flutter_Fib",
        }
    }
}

impl fmt::Display for Arrhythmia {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header_name())
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for Arrhythmia {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match squash(s).as_str() {
            "asystole" | "asys" => Ok(Arrhythmia::Asystole),
            "bradycardia" | "extremebradycardia" | "brady" => Ok(Arrhythmia::Bradycardia),
            "tachycardia" | "extremetachycardia" | "tachy" => Ok(Arrhythmia::Tachycardia),
            "ventriculartachycardia" | "vtach" | "vt" => Ok(Arrhythmia::VTach),
            "ventricularflutterfib" | "ventricularflutterfibrillation" | "ventricularfibrillation"
            | "ventricularflutter" | "vfib" | "vf" | "vfl" => Ok(Arrhythmia::VFib),
            _ => Err(Error::UnknownArrhythmia(s.trim().to_string())),
        }
    }
}

/// Adjudication outcome; also the ground-truth label of an alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlarmLabel {
    TrueAlarm,
    FalseAlarm,
}

impl AlarmLabel {
    pub fn from_bool(is_true: bool) -> Self {
        if is_true {
            AlarmLabel::TrueAlarm
        } else {
            AlarmLabel::FalseAlarm
        }
    }

    pub fn is_true(self) -> bool {
        self == AlarmLabel::TrueAlarm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmMeta {
    pub arrhythmia: Arrhythmia,
    pub truth: Option<AlarmLabel>,
    /// Sample index at which the alarm was raised.
    pub alarm_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub name: String,
    pub channels: Vec<ChannelMeta>,
    pub sample_rate: f64,
    pub n_samples: usize,
    pub alarm: AlarmMeta,
}

/// Multichannel record in analog units.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub channels: Vec<ChannelMeta>,
    pub sample_rate: f64,
    /// One sequence per channel, all of equal length.
    pub samples: Vec<Vec<f64>>,
    pub alarm: AlarmMeta,
}

impl Record {
    pub fn new(
        name: impl Into<String>,
        channels: Vec<ChannelMeta>,
        sample_rate: f64,
        samples: Vec<Vec<f64>>,
        alarm: AlarmMeta,
    ) -> Result<Self> {
        if channels.is_empty() || channels.len() != samples.len() {
            return Err(Error::MalformedHeader(format!(
                "{} channel descriptions for {} sample sequences",
                channels.len(),
                samples.len()
            )));
        }
        let len = samples[0].len();
        if len == 0 {
            return Err(Error::InsufficientData {
                needed: 1,
                available: 0,
            });
        }
        if let Some(bad) = samples.iter().find(|s| s.len() != len) {
            return Err(Error::LengthMismatch {
                expected: len,
                found: bad.len(),
            });
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::MalformedHeader(format!("sample rate {sample_rate}")));
        }
        if alarm.alarm_index > len {
            return Err(Error::IndexOutOfBounds {
                index: alarm.alarm_index,
                len,
            });
        }
        Ok(Self {
            name: name.into(),
            channels,
            sample_rate,
            samples,
            alarm,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels
            .iter()
            .position(|c| c.name.trim().eq_ignore_ascii_case(name.trim()))
    }

    /// Lead II when present, otherwise the first ECG channel.
    pub fn primary_ecg(&self) -> Option<usize> {
        self.channel_index("II")
            .filter(|&i| self.channels[i].kind == ChannelKind::Ecg)
            .or_else(|| self.channels.iter().position(|c| c.kind == ChannelKind::Ecg))
    }

    /// Sub-record over `[start, end)`; the alarm index is clamped into range.
    pub fn slice(&self, start: usize, end: usize) -> Record {
        let end = end.min(self.len());
        let start = start.min(end);
        Record {
            name: self.name.clone(),
            channels: self.channels.clone(),
            sample_rate: self.sample_rate,
            samples: self.samples.iter().map(|s| s[start..end].to_vec()).collect(),
            alarm: AlarmMeta {
                alarm_index: self.alarm.alarm_index.clamp(start, end) - start,
                ..self.alarm.clone()
            },
        }
    }

    /// Record restricted to the given channels, in the given order.
    pub fn select(&self, channels: &[usize]) -> Record {
        Record {
            name: self.name.clone(),
            channels: channels.iter().map(|&i| self.channels[i].clone()).collect(),
            sample_rate: self.sample_rate,
            samples: channels.iter().map(|&i| self.samples[i].clone()).collect(),
            alarm: self.alarm.clone(),
        }
    }
}

/// Converts a stored count to analog units.
pub fn decode_count(count: i16, gain: f64, baseline: i32) -> f64 {
    if count == MISSING_COUNT {
        f64::NAN
    } else {
        (count as f64 - baseline as f64) / gain
    }
}

/// Converts an analog value to the nearest representable count.
pub fn encode_value(value: f64, gain: f64, baseline: i32) -> i16 {
    if !value.is_finite() {
        return MISSING_COUNT;
    }
    let c = (value * gain + baseline as f64).round();
    c.clamp(i16::MIN as f64 + 1.0, i16::MAX as f64) as i16
}

/// Little-endian encoding of counts.
pub fn encode_counts(counts: &[i16]) -> Vec<u8> {
    counts.iter().flat_map(|c| c.to_le_bytes()).collect()
}

pub fn decode_counts(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() % 2 != 0 {
        return Err(Error::LengthMismatch {
            expected: bytes.len() + 1,
            found: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect())
}

fn parse_field<T: FromStr>(tok: Option<&str>, what: &str, line: &str) -> Result<T> {
    tok.and_then(|t| t.parse().ok())
        .ok_or_else(|| Error::MalformedHeader(format!("bad {what} in {line:?}")))
}

/// Parses header text.
pub fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let first = lines
        .next()
        .ok_or_else(|| Error::MalformedHeader("empty header".into()))?;
    if first.starts_with('#') {
        return Err(Error::MalformedHeader("record line missing".into()));
    }
    let mut toks = first.split_whitespace();
    let name = toks
        .next()
        .ok_or_else(|| Error::MalformedHeader("record name missing".into()))?
        .to_string();
    let n_sig: usize = parse_field(toks.next(), "signal count", first)?;
    let sample_rate: f64 = parse_field(toks.next(), "sampling frequency", first)?;
    let n_samples: usize = parse_field(toks.next(), "sample count", first)?;
    if n_sig == 0 {
        return Err(Error::MalformedHeader("record declares no signals".into()));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::MalformedHeader(format!("sampling frequency {sample_rate}")));
    }

    let mut channels = Vec::with_capacity(n_sig);
    let mut comments = Vec::new();
    for line in lines {
        if let Some(c) = line.strip_prefix('#') {
            comments.push(c.trim());
            continue;
        }
        if channels.len() == n_sig {
            return Err(Error::MalformedHeader(format!("unexpected line {line:?}")));
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 6 {
            return Err(Error::MalformedHeader(format!("signal line {line:?} has {} fields", toks.len())));
        }
        if toks[1] != "16" {
            return Err(Error::MalformedHeader(format!("unsupported format {:?}", toks[1])));
        }
        let gain: f64 = parse_field(Some(toks[2]), "gain", line)?;
        if gain == 0.0 || !gain.is_finite() {
            return Err(Error::MalformedHeader(format!("gain {gain}")));
        }
        let baseline: i32 = parse_field(Some(toks[3]), "baseline", line)?;
        channels.push(ChannelMeta::new(toks[0], toks[5..].join(" "), toks[4], gain, baseline));
    }
    if channels.len() != n_sig {
        return Err(Error::MalformedHeader(format!(
            "expected {n_sig} signal lines, found {}",
            channels.len()
        )));
    }

    let mut arrhythmia = None;
    let mut truth = None;
    let mut alarm_index = None;
    let mut unrecognised = Vec::new();
    for c in comments {
        let key = squash(c);
        if key == "truealarm" {
            truth = Some(AlarmLabel::TrueAlarm);
        } else if key == "falsealarm" {
            truth = Some(AlarmLabel::FalseAlarm);
        } else if let Some(rest) = c.strip_prefix("ALARM_AT") {
            let at: usize = parse_field(Some(rest.trim()), "alarm index", c)?;
            if at > n_samples {
                return Err(Error::MalformedHeader(format!("alarm index {at} beyond {n_samples} samples")));
            }
            alarm_index = Some(at);
        } else if let Ok(a) = c.parse::<Arrhythmia>() {
            arrhythmia = Some(a);
        } else {
            unrecognised.push(c.to_string());
        }
    }
    let arrhythmia = arrhythmia.ok_or_else(|| {
        Error::UnknownArrhythmia(unrecognised.first().cloned().unwrap_or_default())
    })?;

    Ok(Header {
        name,
        channels,
        sample_rate,
        n_samples,
        alarm: AlarmMeta {
            arrhythmia,
            truth,
            alarm_index: alarm_index.unwrap_or(n_samples),
        },
    })
}

/// Renders a header that [`parse_header`] reads back unchanged.
pub fn format_header(header: &Header) -> String {
    let mut out = format!(
        "{} {} {} {}\n",
        header.name,
        header.channels.len(),
        header.sample_rate,
        header.n_samples
    );
    for c in &header.channels {
        out.push_str(&format!("{} 16 {} {} {} {}\n", c.file, c.gain, c.baseline, c.units, c.name));
    }
    out.push_str(&format!("#{}\n", header.alarm.arrhythmia.header_name()));
    match header.alarm.truth {
        Some(AlarmLabel::TrueAlarm) => out.push_str("#True alarm\n"),
        Some(AlarmLabel::FalseAlarm) => out.push_str("#False alarm\n"),
        None => {}
    }
    if header.alarm.alarm_index != header.n_samples {
        out.push_str(&format!("#ALARM_AT {}\n", header.alarm.alarm_index));
    }
    out
}

/// Path of the header for a record reference given with or without `.hea`.
pub fn header_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "hea") {
        path.to_path_buf()
    } else {
        let mut p = path.as_os_str().to_owned();
        p.push(".hea");
        PathBuf::from(p)
    }
}

/// Loads a record from its header path and the companion sample file.
pub fn load_record(header_path: &Path) -> Result<Record> {
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let header = parse_header(&text)?;
    let file = &header.channels[0].file;
    if header.channels.iter().any(|c| &c.file != file) {
        return Err(Error::MalformedHeader("channels stored in more than one file".into()));
    }
    let dat_path = header_path.parent().unwrap_or(Path::new(".")).join(file);
    let bytes = fs::read(&dat_path).map_err(|e| Error::io(&dat_path, e))?;
    let n_sig = header.channels.len();
    let expected = header.n_samples * n_sig * 2;
    if bytes.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            found: bytes.len(),
        });
    }
    let counts = decode_counts(&bytes)?;
    let mut samples = vec![Vec::with_capacity(header.n_samples); n_sig];
    for frame in counts.chunks_exact(n_sig) {
        for ((dst, meta), &c) in samples.iter_mut().zip(&header.channels).zip(frame) {
            dst.push(meta.to_analog(c));
        }
    }
    Record::new(header.name, header.channels, header.sample_rate, samples, header.alarm)
}

/// Writes `<dir>/<name>.hea` and the interleaved sample file. Returns the
/// header path.
pub fn write_record(record: &Record, dir: &Path) -> Result<PathBuf> {
    let dat_name = format!("{}.dat", record.name);
    let channels: Vec<ChannelMeta> = record
        .channels
        .iter()
        .map(|c| ChannelMeta {
            file: dat_name.clone(),
            ..c.clone()
        })
        .collect();
    let header = Header {
        name: record.name.clone(),
        channels,
        sample_rate: record.sample_rate,
        n_samples: record.len(),
        alarm: record.alarm.clone(),
    };
    let mut counts = Vec::with_capacity(record.len() * record.channels.len());
    for i in 0..record.len() {
        for (meta, s) in header.channels.iter().zip(&record.samples) {
            counts.push(encode_value(s[i], meta.gain, meta.baseline));
        }
    }
    let dat_path = dir.join(&dat_name);
    fs::write(&dat_path, encode_counts(&counts)).map_err(|e| Error::io(&dat_path, e))?;
    let hea_path = dir.join(format!("{}.hea", record.name));
    fs::write(&hea_path, format_header(&header)).map_err(|e| Error::io(&hea_path, e))?;
    Ok(hea_path)
}

/// Decimates a 250 Hz record to 125 Hz after a zero-phase 4th-order
/// Butterworth low-pass at 50 Hz.
pub fn resample_half(record: &Record) -> Result<Record> {
    if (record.sample_rate - 250.0).abs() > 1e-9 {
        return Err(Error::UnsupportedRate(record.sample_rate));
    }
    let lp = Cascade::butterworth_lowpass(4, 50.0, record.sample_rate);
    let samples = record
        .samples
        .iter()
        .map(|s| {
            // hold the last finite value across gaps so the filter stays finite
            let mut last = s.iter().copied().find(|v| v.is_finite()).unwrap_or(0.0);
            let filled: Vec<f64> = s
                .iter()
                .map(|&v| {
                    if v.is_finite() {
                        last = v;
                    }
                    last
                })
                .collect();
            let smooth = lp.filtfilt(&filled);
            (0..s.len())
                .step_by(2)
                .map(|i| {
                    let gap = !s[i].is_finite() || s.get(i + 1).is_some_and(|v| !v.is_finite());
                    if gap {
                        f64::NAN
                    } else {
                        smooth[i]
                    }
                })
                .collect()
        })
        .collect();
    Ok(Record {
        name: record.name.clone(),
        channels: record.channels.clone(),
        sample_rate: record.sample_rate / 2.0,
        samples,
        alarm: AlarmMeta {
            alarm_index: record.alarm.alarm_index.div_ceil(2),
            ..record.alarm.clone()
        },
    })
}

/// The `seconds` immediately before the alarm, `[alarm − seconds·fs, alarm)`.
pub fn pre_alarm_window(record: &Record, seconds: f64) -> Result<Record> {
    if !(seconds > 0.0) {
        return Err(Error::Config(format!("window of {seconds} s")));
    }
    let needed = (seconds * record.sample_rate).round() as usize;
    let end = record.alarm.alarm_index;
    if end < needed {
        return Err(Error::InsufficientData {
            needed,
            available: end,
        });
    }
    Ok(record.slice(end - needed, end))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Record reference as written in the manifest (header path with or
    /// without `.hea`), relative to the manifest's directory.
    pub record: String,
    pub arrhythmia: Arrhythmia,
    pub truth: Option<AlarmLabel>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Header path of an entry.
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        header_path(&self.base_dir.join(&entry.record))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("record,arrhythmia,label\n");
        for e in &self.entries {
            let label = match e.truth {
                Some(AlarmLabel::TrueAlarm) => "true",
                Some(AlarmLabel::FalseAlarm) => "false",
                None => "unknown",
            };
            out.push_str(&format!("{},{},{}\n", e.record, e.arrhythmia.header_name(), label));
        }
        out
    }
}

/// Parses manifest CSV text (`record,arrhythmia,label`).
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        if row.iter().all(str::is_empty) {
            continue;
        }
        if row.len() != 3 {
            return Err(Error::MalformedRow {
                line,
                reason: format!("expected 3 fields, found {}", row.len()),
            });
        }
        if line == 1 && row[0].eq_ignore_ascii_case("record") {
            continue;
        }
        let arrhythmia: Arrhythmia = row[1].parse().map_err(|_| Error::MalformedRow {
            line,
            reason: format!("unknown arrhythmia {:?}", &row[1]),
        })?;
        let truth = match row[2].to_ascii_lowercase().as_str() {
            "true" | "1" => Some(AlarmLabel::TrueAlarm),
            "false" | "0" => Some(AlarmLabel::FalseAlarm),
            "unknown" | "" => None,
            other => {
                return Err(Error::MalformedRow {
                    line,
                    reason: format!("label {other:?}"),
                })
            }
        };
        if !seen.insert(row[0].to_string()) {
            return Err(Error::DuplicateEntry(row[0].to_string()));
        }
        entries.push(ManifestEntry {
            record: row[0].to_string(),
            arrhythmia,
            truth,
        });
    }
    Ok(Manifest {
        base_dir: base_dir.to_path_buf(),
        entries,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path.parent().unwrap_or(Path::new(".")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::record_from;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const HEADER: &str = "a103l 3 250 75000
a103l.dat 16 200 0 mV II
a103l.dat 16 200 0 mV V
a103l.dat 16 100 0 mmHg ABP
#Asystole
#False alarm
";

    #[test]
    fn parses_challenge_style_header() {
        let h = parse_header(HEADER).unwrap();
        assert_eq!(h.channels.len(), 3);
        assert_eq!(h.sample_rate, 250.0);
        assert_eq!(h.n_samples, 75000);
        assert_eq!(h.alarm.arrhythmia, Arrhythmia::Asystole);
        assert_eq!(h.alarm.truth, Some(AlarmLabel::FalseAlarm));
        assert_eq!(h.alarm.alarm_index, 75000);
        assert_eq!(h.channels[2].kind, ChannelKind::Abp);
        assert_eq!(h.channels[0].kind, ChannelKind::Ecg);
    }

    #[test]
    fn zero_signals_is_malformed() {
        let err = parse_header("r 0 250 1000\n#Asystole\n").unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn missing_signal_line_is_malformed() {
        let err = parse_header("r 2 250 1000\nr.dat 16 200 0 mV II\n#Asystole\n").unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)));
    }

    #[test]
    fn arrhythmia_aliases() {
        let h = parse_header("r 1 250 10\nr.dat 16 200 0 mV II\n#Ventricular_Tachycardia\n#True alarm\n").unwrap();
        assert_eq!(h.alarm.arrhythmia, Arrhythmia::VTach);
        assert_eq!(h.alarm.truth, Some(AlarmLabel::TrueAlarm));
        assert_eq!("Ventricular_Flutter_Fib".parse::<Arrhythmia>().unwrap(), Arrhythmia::VFib);
        assert_eq!("Extreme bradycardia".parse::<Arrhythmia>().unwrap(), Arrhythmia::Bradycardia);
    }

    #[test]
    fn unknown_arrhythmia_comment() {
        let err = parse_header("r 1 250 10\nr.dat 16 200 0 mV II\n#Atrial_Flutter\n").unwrap_err();
        assert!(matches!(err, Error::UnknownArrhythmia(s) if s == "Atrial_Flutter"));
    }

    #[test]
    fn alarm_at_override() {
        let h = parse_header("r 1 250 1000\nr.dat 16 200 0 mV II\n#Asystole\n#ALARM_AT 750\n").unwrap();
        assert_eq!(h.alarm.alarm_index, 750);
    }

    #[test]
    fn channel_kind_inference() {
        use ChannelKind::*;
        for (name, kind) in [
            ("II", Ecg),
            ("V", Ecg),
            ("aVF", Ecg),
            ("MCL", Ecg),
            ("V2", Ecg),
            ("ABP", Abp),
            ("ART", Abp),
            ("PLETH", Ppg),
            ("RESP", Resp),
            ("CVP", Other),
        ] {
            assert_eq!(ChannelKind::from_name(name), kind, "{name}");
        }
    }

    #[test]
    fn count_conversion() {
        assert!((decode_count(1024, 200.0, 0) - 5.12).abs() < 1e-12);
        assert!(decode_count(MISSING_COUNT, 200.0, 0).is_nan());
        assert_eq!(encode_value(f64::NAN, 200.0, 0), MISSING_COUNT);
    }

    #[test]
    fn load_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let hea = dir.path().join("a103l.hea");
        fs::write(&hea, "a103l 2 250 3\na103l.dat 16 200 0 mV II\na103l.dat 16 100 10 mmHg ABP\n#Asystole\n").unwrap();
        let counts = [1024i16, 110, -200, 8010, MISSING_COUNT, 10];
        fs::write(dir.path().join("a103l.dat"), encode_counts(&counts)).unwrap();
        let r = load_record(&hea).unwrap();
        assert_eq!(r.len(), 3);
        assert!((r.samples[0][0] - 5.12).abs() < 1e-12);
        assert!((r.samples[1][1] - 80.0).abs() < 1e-12);
        assert!(r.samples[0][2].is_nan());
        assert_eq!(r.alarm.alarm_index, 3);

        fs::write(dir.path().join("a103l.dat"), encode_counts(&counts[..5])).unwrap();
        assert!(matches!(load_record(&hea), Err(Error::LengthMismatch { expected: 12, found: 10 })));
        assert!(matches!(load_record(&dir.path().join("nope.hea")), Err(Error::Io { .. })));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = record_from(&[("II", vec![0.5, -0.25, 1.0, 0.0]), ("ABP", vec![80.0, 90.5, 120.0, 70.0])], 250.0, Arrhythmia::VFib);
        r.channels[1].gain = 100.0;
        r.alarm.alarm_index = 3;
        r.alarm.truth = Some(AlarmLabel::TrueAlarm);
        let hea = write_record(&r, dir.path()).unwrap();
        let back = load_record(&hea).unwrap();
        assert_eq!(back.alarm, r.alarm);
        assert_eq!(back.channels[1].kind, ChannelKind::Abp);
        for (a, b) in back.samples.iter().flatten().zip(r.samples.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn resample_sinusoid() {
        let n = 75000;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 10.0 * i as f64 / 250.0).sin()).collect();
        let r = record_from(&[("II", x)], 250.0, Arrhythmia::VTach);
        let half = resample_half(&r).unwrap();
        assert_eq!(half.len(), 37500);
        assert_eq!(half.sample_rate, 125.0);
        assert_eq!(half.alarm.alarm_index, 37500);
        let peak = half.samples[0].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.05, "peak {peak}");
    }

    #[test]
    fn resample_constant_and_odd_length() {
        let r = record_from(&[("II", vec![2.5; 101])], 250.0, Arrhythmia::VTach);
        let half = resample_half(&r).unwrap();
        assert_eq!(half.len(), 51);
        assert!(half.samples[0].iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn resample_rejects_other_rates() {
        let r = record_from(&[("II", vec![0.0; 10])], 125.0, Arrhythmia::VTach);
        assert!(matches!(resample_half(&r), Err(Error::UnsupportedRate(_))));
    }

    #[test]
    fn windowing() {
        let x: Vec<f64> = (0..75000).map(|i| i as f64).collect();
        let r = record_from(&[("II", x)], 250.0, Arrhythmia::VTach);
        let w = pre_alarm_window(&r, 10.0).unwrap();
        assert_eq!(w.len(), 2500);
        assert_eq!(w.samples[0][0], 72500.0);
        assert_eq!(w.samples[0][2499], 74999.0);
        assert_eq!(w.alarm.alarm_index, 2500);

        let half = resample_half(&r).unwrap();
        assert_eq!(pre_alarm_window(&half, 10.0).unwrap().len(), 1250);

        let short = record_from(&[("II", vec![0.0; 1250])], 250.0, Arrhythmia::VTach);
        assert!(matches!(pre_alarm_window(&short, 10.0), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn manifest_parsing() {
        let base = Path::new("/data");
        let m = parse_manifest("record,arrhythmia,label\na103l,Asystole,false\nv100s,Ventricular_Tachycardia,true\nb1,Bradycardia,unknown\n", base).unwrap();
        assert_eq!(m.entries.len(), 3);
        assert_eq!(m.entries[1].arrhythmia, Arrhythmia::VTach);
        assert_eq!(m.entries[2].truth, None);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a103l.hea"));
        assert!(parse_manifest("", base).unwrap().entries.is_empty());
        let numeric = parse_manifest("a103l,Asystole,0\na104s,Asystole,1\n", base).unwrap();
        assert_eq!(numeric.entries[0].truth, Some(AlarmLabel::FalseAlarm));
        assert_eq!(numeric.entries[1].truth, Some(AlarmLabel::TrueAlarm));
        assert!(matches!(parse_manifest("record,arrhythmia,label\na,Asystole\n", base), Err(Error::MalformedRow { line: 2, .. })));
        assert!(matches!(parse_manifest("a,Asystole,true\na,Asystole,false\n", base), Err(Error::DuplicateEntry(_))));
        assert!(matches!(parse_manifest("a,Flutter,true\n", base), Err(Error::MalformedRow { .. })));
        let again = parse_manifest(&m.to_csv(), base).unwrap();
        assert_eq!(again, m);
    }

    proptest! {
        #[test]
        fn counts_round_trip(counts in proptest::collection::vec(any::<i16>(), 0..64)) {
            prop_assert_eq!(decode_counts(&encode_counts(&counts)).unwrap(), counts);
        }

        #[test]
        fn unit_conversion_inverts(count in (i16::MIN + 1)..=i16::MAX, gain in 1.0f64..2000.0, baseline in -1000i32..1000) {
            let v = decode_count(count, gain, baseline);
            let back = encode_value(v, gain, baseline);
            // values pushed past the count range by the baseline saturate
            let expect = (count as i32).clamp(i16::MIN as i32 + 1, i16::MAX as i32) as i16;
            prop_assert_eq!(back, expect);
        }

        #[test]
        fn window_length_exact(secs in 1u32..20, extra in 0usize..500) {
            let n = 250 * 20 + extra;
            let r = record_from(&[("II", vec![0.0; n])], 250.0, Arrhythmia::VTach);
            prop_assert_eq!(pre_alarm_window(&r, secs as f64).unwrap().len(), secs as usize * 250);
        }
    }
}
