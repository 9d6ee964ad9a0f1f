use crate::record::{AlarmMeta, Arrhythmia, ChannelMeta, Record};

pub(crate) fn record_from(channels: &[(&str, Vec<f64>)], fs: f64, arrhythmia: Arrhythmia) -> Record {
    let n = channels[0].1.len();
    Record::new(
        "t",
        channels
            .iter()
            .map(|(name, _)| ChannelMeta::new("t.dat", *name, "mV", 200.0, 0))
            .collect(),
        fs,
        channels.iter().map(|(_, s)| s.clone()).collect(),
        AlarmMeta {
            arrhythmia,
            truth: None,
            alarm_index: n,
        },
    )
    .unwrap()
}

/// Beat indices at a steady rate starting at `first_s`.
pub(crate) fn steady_beats(bpm: f64, first_s: f64, duration_s: f64, fs: f64) -> Vec<usize> {
    let rr = 60.0 / bpm;
    let mut t = first_s;
    let mut out = Vec::new();
    while t < duration_s {
        out.push((t * fs).round() as usize);
        t += rr;
    }
    out
}
