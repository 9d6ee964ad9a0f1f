//! Deterministic synthetic multichannel records with known beat times and
//! known alarm truth.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::banks::{BankKind, BeatBank, BANK_RATE, BANK_SIZE};
use crate::beats::{format_annotations, BeatAnnotation, BeatLabel};
use crate::error::{Error, Result};
use crate::record::{
    write_record, AlarmLabel, AlarmMeta, Arrhythmia, ChannelKind, ChannelMeta, Manifest, ManifestEntry, Record,
};

/// Pulse transit delay from R peak to pressure upstroke.
pub const ABP_DELAY_S: f64 = 0.15;
pub const PPG_DELAY_S: f64 = 0.25;

/// Events are placed inside the final window of this length.
pub const EVENT_WINDOW_S: f64 = 16.0;

const ABP_DIASTOLIC: f64 = 75.0;
const ABP_PULSE: f64 = 40.0;
const PPG_PULSE: f64 = 1.0;
const WANDER_HZ: f64 = 0.3;

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Clean sinus rhythm throughout.
    None,
    /// Beat-free pause ending 1.5 s before the alarm.
    Gap { seconds: f64 },
    /// Rate change over the final 20 s.
    Rate { bpm: f64 },
    /// Run of wide ventricular beats ending 3 s before the alarm.
    VtRun { beats: usize, bpm: f64 },
    /// Ventricular fibrillation over the final `seconds`; beats and pulses stop.
    Vf { freq_hz: f64, seconds: f64 },
    /// Every channel missing over `[start_s, start_s + seconds)`.
    Dropout { start_s: f64, seconds: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub name: String,
    pub alarm: Arrhythmia,
    pub event: Event,
    pub heart_rate: f64,
    /// Fractional standard deviation of RR intervals.
    pub rr_jitter: f64,
    pub first_beat_s: f64,
    /// Ventricular QRS width; the normal QRS is fixed at about 80 ms.
    pub qrs_width_ms: f64,
    /// Additive Gaussian noise relative to each channel's pulse amplitude.
    pub noise: f64,
    /// Amplitude of a 0.3 Hz baseline sinusoid relative to pulse amplitude.
    pub wander: f64,
    pub seed: u64,
    pub duration_s: f64,
    pub sample_rate: f64,
    /// Any of II, V, ABP, PLETH.
    pub channels: Vec<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            name: "synth".into(),
            alarm: Arrhythmia::Asystole,
            event: Event::None,
            heart_rate: 80.0,
            rr_jitter: 0.01,
            first_beat_s: 0.5,
            qrs_width_ms: 140.0,
            noise: 0.01,
            wander: 0.0,
            seed: 0,
            duration_s: 90.0,
            sample_rate: 250.0,
            channels: ["II", "V", "ABP", "PLETH"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub record: Record,
    /// R-peak sample indices of every beat that is present in the signal.
    pub beats: Vec<usize>,
    pub labels: Vec<BeatLabel>,
    /// Truth by construction; unknown for quality-only events.
    pub expected: Option<AlarmLabel>,
}

fn gauss(t: f64, centre: f64, sigma: f64) -> f64 {
    (-0.5 * ((t - centre) / sigma).powi(2)).exp()
}

fn normal_beat(t: f64) -> f64 {
    let qrs = (2.0 * PI * 11.0 * t).cos() * gauss(t, 0.0, 0.04);
    0.12 * gauss(t, -0.16, 0.025) + qrs + 0.25 * gauss(t, 0.25, 0.05)
}

fn ventricular_beat(t: f64, width_s: f64) -> f64 {
    2.0 * gauss(t, 0.0, width_s / 4.0) - 0.5 * gauss(t, 0.3, 0.06)
}

fn alpha(tau: f64, peak: f64) -> f64 {
    if tau <= 0.0 {
        0.0
    } else {
        (tau / peak) * (1.0 - tau / peak).exp()
    }
}

fn validate(spec: &SynthSpec) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
    if !(spec.sample_rate >= 50.0 && spec.sample_rate.is_finite()) {
        return bad("sample rate below 50 Hz");
    }
    let min_duration = match spec.event {
        Event::None | Event::Dropout { .. } => 4.0,
        _ => EVENT_WINDOW_S + 4.0,
    };
    if !(spec.duration_s >= min_duration && spec.duration_s <= 3600.0) {
        return bad("duration below the event window or above 1 h");
    }
    if !(spec.heart_rate > 20.0 && spec.heart_rate <= 250.0) {
        return bad("heart rate must lie in (20, 250] bpm");
    }
    if !(0.0..0.2).contains(&spec.rr_jitter) || !(spec.noise >= 0.0) || !(spec.wander >= 0.0) {
        return bad("jitter, noise and wander must be non-negative; jitter below 0.2");
    }
    if !(spec.first_beat_s >= 0.0 && spec.first_beat_s < spec.duration_s) {
        return bad("first beat outside the record");
    }
    if !(spec.qrs_width_ms >= 60.0 && spec.qrs_width_ms <= 250.0) {
        return bad("QRS width must lie in [60, 250] ms");
    }
    if spec.channels.is_empty() {
        return bad("no channels");
    }
    if let Some(c) = spec.channels.iter().find(|c| !["II", "V", "ABP", "PLETH"].contains(&c.as_str())) {
        return Err(Error::InvalidSpec(format!("unsupported channel {c}")));
    }
    let in_window = |s: f64| s > 0.0 && s <= EVENT_WINDOW_S - 2.0;
    match spec.event {
        Event::None => {}
        Event::Gap { seconds } if in_window(seconds) => {}
        Event::Rate { bpm } if bpm > 20.0 && bpm <= 250.0 => {}
        Event::VtRun { beats, bpm } if beats >= 1 && bpm > 20.0 && bpm <= 250.0 && beats as f64 * 60.0 / bpm <= EVENT_WINDOW_S - 4.0 => {}
        Event::Vf { freq_hz, seconds } if freq_hz > 0.0 && freq_hz < spec.sample_rate / 2.0 && in_window(seconds) => {}
        Event::Dropout { start_s, seconds } if start_s >= 0.0 && seconds > 0.0 && start_s + seconds <= spec.duration_s => {}
        ref e => return Err(Error::InvalidSpec(format!("event parameters out of range: {e:?}"))),
    }
    Ok(())
}

/// Beat times and labels in seconds.
fn schedule(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, BeatLabel)> {
    let d = spec.duration_s;
    let jitter = Normal::new(0.0, 1.0).unwrap();
    let next_rr = |bpm: f64, rng: &mut ChaCha8Rng| {
        let z: f64 = jitter.sample(rng);
        60.0 / bpm * (1.0 + spec.rr_jitter * z.clamp(-3.0, 3.0))
    };
    let mut beats = Vec::new();
    let mut t = spec.first_beat_s;
    match spec.event {
        Event::VtRun { beats: count, bpm } => {
            let rr_v = 60.0 / bpm;
            let run_start = d - 3.0 - count as f64 * rr_v;
            while t < run_start {
                beats.push((t, BeatLabel::Normal));
                t += next_rr(spec.heart_rate, rng);
            }
            let mut v = beats.last().map_or(t, |b| b.0);
            for _ in 0..count {
                v += rr_v;
                beats.push((v, BeatLabel::Ventricular));
            }
            t = v + 60.0 / spec.heart_rate * 1.2;
            while t < d {
                beats.push((t, BeatLabel::Normal));
                t += next_rr(spec.heart_rate, rng);
            }
        }
        Event::Rate { bpm } => {
            while t < d {
                beats.push((t, BeatLabel::Normal));
                let bpm_now = if t >= d - 20.0 { bpm } else { spec.heart_rate };
                t += next_rr(bpm_now, rng);
            }
        }
        _ => {
            while t < d {
                beats.push((t, BeatLabel::Normal));
                t += next_rr(spec.heart_rate, rng);
            }
        }
    }
    match spec.event {
        Event::Gap { seconds } => {
            let end = d - 1.5;
            let start = end - seconds;
            beats.retain(|b| b.0 < start || b.0 > end);
        }
        Event::Vf { seconds, .. } => beats.retain(|b| b.0 < d - seconds - 0.3),
        _ => {}
    }
    beats
}

/// Builds one record. Channel order follows `spec.channels`.
pub fn generate(spec: &SynthSpec) -> Result<SynthOutput> {
    validate(spec)?;
    let fs = spec.sample_rate;
    let n = (spec.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let beats = schedule(spec, &mut rng);
    let width = spec.qrs_width_ms / 1000.0;
    let vf = match spec.event {
        Event::Vf { freq_hz, seconds } => Some((spec.duration_s - seconds, freq_hz)),
        _ => None,
    };
    let unit = Normal::new(0.0, 1.0).unwrap();
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let vf_phase = rng.random_range(0.0..2.0 * PI);

    let mut samples = Vec::with_capacity(spec.channels.len());
    let mut metas = Vec::with_capacity(spec.channels.len());
    for name in &spec.channels {
        let (kind, scale) = match name.as_str() {
            "II" => (ChannelKind::Ecg, 1.0),
            "V" => (ChannelKind::Ecg, 0.8),
            "ABP" => (ChannelKind::Abp, ABP_PULSE),
            _ => (ChannelKind::Ppg, PPG_PULSE),
        };
        let mut x = vec![0.0; n];
        match kind {
            ChannelKind::Ecg => {
                for &(tb, label) in &beats {
                    let lo = ((tb - 0.4) * fs).floor().max(0.0) as usize;
                    let hi = (((tb + 0.7) * fs).ceil() as usize).min(n);
                    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                        let t = i as f64 / fs - tb;
                        *v += scale
                            * match label {
                                BeatLabel::Ventricular => ventricular_beat(t, width),
                                _ => normal_beat(t),
                            };
                    }
                }
                if let Some((onset, f)) = vf {
                    for (i, v) in x.iter_mut().enumerate() {
                        let t = i as f64 / fs;
                        if t >= onset {
                            let ramp = ((t - onset) / 0.3).min(1.0);
                            let am = 0.8 + 0.2 * (2.0 * PI * 0.4 * t).sin();
                            *v += scale * 0.6 * ramp * am * (2.0 * PI * f * t + vf_phase).sin();
                        }
                    }
                }
            }
            _ => {
                let (delay, peak, base) = if kind == ChannelKind::Abp {
                    (ABP_DELAY_S, 0.1, ABP_DIASTOLIC)
                } else {
                    (PPG_DELAY_S, 0.15, 0.0)
                };
                for (i, v) in x.iter_mut().enumerate() {
                    let t = i as f64 / fs;
                    *v = match vf {
                        Some((onset, _)) if kind == ChannelKind::Abp && t > onset => {
                            35.0 + (base - 35.0) * (-(t - onset) / 1.5).exp()
                        }
                        _ => base,
                    };
                }
                for &(tb, label) in &beats {
                    let amp = if label == BeatLabel::Ventricular { 0.5 } else { 1.0 };
                    let lo = ((tb + delay) * fs).floor().max(0.0) as usize;
                    let hi = (((tb + delay + 12.0 * peak) * fs).ceil() as usize).min(n);
                    for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
                        *v += scale * amp * alpha(i as f64 / fs - tb - delay, peak);
                    }
                }
            }
        }
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / fs;
            *v += scale * spec.wander * (2.0 * PI * WANDER_HZ * t + wander_phase).sin();
            if spec.noise > 0.0 {
                let z: f64 = unit.sample(&mut rng);
                *v += scale * spec.noise * z;
            }
        }
        if let Event::Dropout { start_s, seconds } = spec.event {
            let lo = (start_s * fs).round() as usize;
            let hi = (((start_s + seconds) * fs).round() as usize).min(n);
            x[lo..hi].fill(f64::NAN);
        }
        let (units, gain) = match kind {
            ChannelKind::Ecg => ("mV", 1000.0),
            ChannelKind::Abp => ("mmHg", 100.0),
            _ => ("NU", 1000.0),
        };
        metas.push(ChannelMeta::new(format!("{}.dat", spec.name), name.clone(), units, gain, 0));
        samples.push(x);
    }

    let expected = match spec.event {
        Event::None => Some(AlarmLabel::FalseAlarm),
        Event::Dropout { .. } => None,
        _ => Some(AlarmLabel::TrueAlarm),
    };
    let record = Record::new(
        spec.name.clone(),
        metas,
        fs,
        samples,
        AlarmMeta {
            arrhythmia: spec.alarm,
            truth: expected,
            alarm_index: n,
        },
    )?;

    let missing = match spec.event {
        Event::Dropout { start_s, seconds } => Some((start_s, start_s + seconds)),
        _ => None,
    };
    let (beats, labels): (Vec<usize>, Vec<BeatLabel>) = beats
        .into_iter()
        .filter(|(t, _)| missing.is_none_or(|(a, b)| *t < a || *t >= b))
        .map(|(t, l)| ((t * fs).round() as usize, l))
        .filter(|(i, _)| *i < n)
        .unzip();
    Ok(SynthOutput {
        record,
        beats,
        labels,
        expected,
    })
}

/// Surrogate ventricular representative bank: 20 wide beats of varying
/// width, rate and amplitude at 125 Hz, each flanked by its neighbours.
pub fn ventricular_bank(seed: u64) -> BeatBank {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let fs = BANK_RATE;
    let mut bank = BeatBank::new(BankKind::VentricularRepresentative);
    while bank.len() < BANK_SIZE {
        let width = rng.random_range(0.12..0.16);
        let rr = rng.random_range(0.4..0.5);
        let amp = rng.random_range(0.8..1.2);
        let start = -rr / 3.0;
        let n = (rr * fs).round() as usize;
        let beat: Vec<f64> = (0..n)
            .map(|i| {
                let t = start + i as f64 / fs;
                let z: f64 = unit.sample(&mut rng);
                amp * (ventricular_beat(t, width) + ventricular_beat(t + rr, width) + ventricular_beat(t - rr, width)) + 0.01 * z
            })
            .collect();
        let name = format!("surrogate_{:02}", bank.len());
        bank.push_samples(&beat, &name).expect("surrogate beat has variance");
    }
    bank
}

/// Short tag used in suite record names.
fn tag(a: Arrhythmia) -> &'static str {
    match a {
        Arrhythmia::Asystole => "asys",
        Arrhythmia::Bradycardia => "brady",
        Arrhythmia::Tachycardia => "tachy",
        Arrhythmia::VTach => "vtach",
        Arrhythmia::VFib => "vfib",
    }
}

/// Specs of the 50-record acceptance suite: for each arrhythmia five true
/// alarms and five clean sinus records carrying the same alarm tag.
pub fn suite_specs(seed: u64) -> Vec<SynthSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(50);
    for arrhythmia in Arrhythmia::ALL {
        for k in 0..10 {
            let is_true = k < 5;
            let heart_rate = if is_true { rng.random_range(60.0..90.0) } else { rng.random_range(60.0..100.0) };
            let event = if !is_true {
                Event::None
            } else {
                match arrhythmia {
                    Arrhythmia::Asystole => Event::Gap {
                        seconds: rng.random_range(5.0..6.0),
                    },
                    Arrhythmia::Bradycardia => Event::Rate {
                        bpm: rng.random_range(35.0..38.0),
                    },
                    Arrhythmia::Tachycardia => Event::Rate {
                        bpm: rng.random_range(150.0..170.0),
                    },
                    Arrhythmia::VTach => Event::VtRun {
                        beats: rng.random_range(6..=8),
                        bpm: rng.random_range(120.0..150.0),
                    },
                    Arrhythmia::VFib => Event::Vf {
                        freq_hz: rng.random_range(4.0..6.0),
                        seconds: rng.random_range(6.0..8.0),
                    },
                }
            };
            specs.push(SynthSpec {
                name: format!("{}_{}_{k:02}", tag(arrhythmia), if is_true { "t" } else { "f" }),
                alarm: arrhythmia,
                event,
                heart_rate,
                seed: rng.random(),
                ..SynthSpec::default()
            });
        }
    }
    specs
}

/// Writes the suite records, ground-truth beat files (`<name>.beats`) and
/// `manifest.csv` into `dir`.
pub fn generate_suite(seed: u64, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        base_dir: dir.to_path_buf(),
        entries: Vec::new(),
    };
    for spec in suite_specs(seed) {
        let out = generate(&spec)?;
        write_record(&out.record, dir)?;
        let ecg = out.record.primary_ecg().unwrap_or(0);
        let ann = BeatAnnotation {
            channel: ecg,
            indices: out.beats.clone(),
            labels: Some(out.labels.clone()),
        };
        let beats_path = dir.join(format!("{}.beats", spec.name));
        fs::write(&beats_path, format_annotations(&ann)).map_err(|e| Error::io(&beats_path, e))?;
        manifest.entries.push(ManifestEntry {
            record: spec.name.clone(),
            arrhythmia: spec.alarm,
            truth: out.expected,
        });
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest.to_csv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
