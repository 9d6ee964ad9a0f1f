//! Filtering and spectral estimation shared by the quality, beat and
//! resampling stages.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// One second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    b0: f64,
    b1: f64,
    b2: f64,
    a1: f64,
    a2: f64,
}

impl Biquad {
    fn from_raw(b: [f64; 3], a: [f64; 3]) -> Self {
        Self {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        }
    }

    pub fn lowpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_raw(
            [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
            [1.0 + alpha, -2.0 * cos, 1.0 - alpha],
        )
    }

    pub fn highpass(cutoff: f64, sample_rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        Self::from_raw(
            [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
            [1.0 + alpha, -2.0 * cos, 1.0 - alpha],
        )
    }

    fn dc_gain(&self) -> f64 {
        let den = 1.0 + self.a1 + self.a2;
        if den.abs() < f64::EPSILON {
            0.0
        } else {
            (self.b0 + self.b1 + self.b2) / den
        }
    }

    /// State that makes a constant input `level` pass without transient.
    fn steady_state(&self, level: f64) -> [f64; 2] {
        let g = self.dc_gain();
        [(g - self.b0) * level, (self.b2 - self.a2 * g) * level]
    }

    fn run(&self, signal: &mut [f64], mut state: [f64; 2]) {
        for x in signal.iter_mut() {
            let input = *x;
            let y = self.b0 * input + state[0];
            state[0] = self.b1 * input - self.a1 * y + state[1];
            state[1] = self.b2 * input - self.a2 * y;
            *x = y;
        }
    }
}

/// A cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    assert!(order >= 2 && order % 2 == 0, "even Butterworth order required");
    (0..order / 2).map(move |k| 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).cos()))
}

impl Cascade {
    pub fn butterworth_lowpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        Self {
            sections: butterworth_qs(order)
                .map(|q| Biquad::lowpass(cutoff, sample_rate, q))
                .collect(),
        }
    }

    pub fn butterworth_highpass(order: usize, cutoff: f64, sample_rate: f64) -> Self {
        Self {
            sections: butterworth_qs(order)
                .map(|q| Biquad::highpass(cutoff, sample_rate, q))
                .collect(),
        }
    }

    /// Band-pass as a high-pass cascade followed by a low-pass cascade.
    pub fn butterworth_bandpass(order: usize, low: f64, high: f64, sample_rate: f64) -> Self {
        let mut sections = Self::butterworth_highpass(order, low, sample_rate).sections;
        sections.extend(Self::butterworth_lowpass(order, high, sample_rate).sections);
        Self { sections }
    }

    /// Causal filtering from a zero state.
    pub fn filter(&self, signal: &[f64]) -> Vec<f64> {
        let mut out = signal.to_vec();
        for s in &self.sections {
            s.run(&mut out, [0.0; 2]);
        }
        out
    }

    fn filter_steady(&self, data: &mut [f64]) {
        if data.is_empty() {
            return;
        }
        let mut level = data[0];
        for s in &self.sections {
            let state = s.steady_state(level);
            s.run(data, state);
            level *= s.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering with odd reflection padding and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n < 2 {
            return signal.to_vec();
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * signal[0] - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * signal[n - 1] - signal[n - 1 - i]));
        self.filter_steady(&mut ext);
        ext.reverse();
        self.filter_steady(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// One-sided power spectral density on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub density: Vec<f64>,
}

impl Psd {
    pub fn resolution(&self) -> f64 {
        if self.frequencies.len() < 2 {
            0.0
        } else {
            self.frequencies[1] - self.frequencies[0]
        }
    }

    /// Power in `[lo, hi]`: each bin whose centre lies inside the closed band
    /// contributes `density · Δf`. Summed over all bins this equals the mean
    /// square of the windowed, detrended input.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let df = self.resolution();
        let tol = df * 1e-9;
        self.frequencies
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo - tol && **f <= hi + tol)
            .map(|(_, p)| p * df)
            .sum()
    }

    pub fn total_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.resolution()
    }

    /// Frequency of the largest density value within `[lo, hi]`.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<f64> {
        self.frequencies
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(f, _)| *f)
    }
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

fn power_spectrum(planner: &mut FftPlanner<f64>, frame: &[f64], nfft: usize) -> Vec<f64> {
    let fft = planner.plan_fft_forward(nfft);
    let mut buf: Vec<Complex<f64>> = frame
        .iter()
        .map(|&x| Complex::new(x, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    fft.process(&mut buf);
    buf[..nfft / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

fn one_sided(mut power: Vec<f64>, nfft: usize, scale: f64) -> Vec<f64> {
    let last = power.len() - 1;
    for (k, p) in power.iter_mut().enumerate() {
        *p *= scale;
        let edge = k == 0 || (nfft % 2 == 0 && k == last);
        if !edge {
            *p *= 2.0;
        }
    }
    power
}

/// Welch estimate with Hann-windowed, mean-detrended segments.
///
/// Returns `None` when the signal is shorter than one segment.
pub fn welch(signal: &[f64], sample_rate: f64, segment_len: usize, overlap: usize) -> Option<Psd> {
    if segment_len < 2 || signal.len() < segment_len || overlap >= segment_len {
        return None;
    }
    let window = hann(segment_len);
    let norm: f64 = window.iter().map(|w| w * w).sum::<f64>() * sample_rate;
    let hop = segment_len - overlap;
    let mut planner = FftPlanner::new();
    let mut acc = vec![0.0; segment_len / 2 + 1];
    let mut count = 0usize;
    let mut start = 0;
    let mut frame = vec![0.0; segment_len];
    while start + segment_len <= signal.len() {
        let seg = &signal[start..start + segment_len];
        let mean = seg.iter().sum::<f64>() / segment_len as f64;
        for ((f, &x), &w) in frame.iter_mut().zip(seg).zip(&window) {
            *f = (x - mean) * w;
        }
        for (a, p) in acc.iter_mut().zip(power_spectrum(&mut planner, &frame, segment_len)) {
            *a += p;
        }
        count += 1;
        start += hop;
    }
    let density = one_sided(acc, segment_len, 1.0 / (norm * count as f64));
    let frequencies = (0..density.len())
        .map(|k| k as f64 * sample_rate / segment_len as f64)
        .collect();
    Some(Psd {
        frequencies,
        density,
    })
}

/// Mean-removed, rectangular-window periodogram zero-padded to `nfft`.
pub fn periodogram(signal: &[f64], sample_rate: f64, nfft: usize) -> Psd {
    let nfft = nfft.max(signal.len()).max(2);
    let mean = if signal.is_empty() {
        0.0
    } else {
        signal.iter().sum::<f64>() / signal.len() as f64
    };
    let frame: Vec<f64> = signal.iter().map(|x| x - mean).collect();
    let mut planner = FftPlanner::new();
    let scale = 1.0 / (sample_rate * signal.len().max(1) as f64);
    let density = one_sided(power_spectrum(&mut planner, &frame, nfft), nfft, scale);
    let frequencies = (0..density.len())
        .map(|k| k as f64 * sample_rate / nfft as f64)
        .collect();
    Psd {
        frequencies,
        density,
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

/// Population standard deviation.
pub(crate) fn std_dev(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn lowpass_passes_dc_exactly_under_filtfilt() {
        let lp = Cascade::butterworth_lowpass(4, 50.0, 250.0);
        let out = lp.filtfilt(&vec![3.25; 400]);
        assert!(out.iter().all(|v| (v - 3.25).abs() < 1e-12));
    }

    #[test]
    fn lowpass_attenuates_above_cutoff() {
        let lp = Cascade::butterworth_lowpass(4, 10.0, 250.0);
        let x = tone(40.0, 250.0, 2500);
        let y = lp.filtfilt(&x);
        let rms = (y[500..2000].iter().map(|v| v * v).sum::<f64>() / 1500.0).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn bandpass_keeps_centre_tone() {
        let bp = Cascade::butterworth_bandpass(2, 5.0, 15.0, 250.0);
        let x = tone(9.0, 250.0, 2500);
        let y = bp.filtfilt(&x);
        let peak = y[500..2000].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        // forward-backward squares the Butterworth magnitude response
        let expected = 1.0 / (1.0 + (5.0f64 / 9.0).powi(4)) / (1.0 + (9.0f64 / 15.0).powi(4));
        assert!((peak - expected).abs() < 0.01, "peak {peak} expected {expected}");
    }

    #[test]
    fn welch_parseval_on_tone() {
        let x = tone(10.0, 250.0, 2500);
        let psd = welch(&x, 250.0, 500, 250).unwrap();
        let var = std_dev(&x).powi(2);
        assert!((psd.total_power() - var).abs() / var < 0.01);
        assert!((psd.peak_in(0.0, 125.0).unwrap() - 10.0).abs() <= psd.resolution());
    }

    #[test]
    fn welch_rejects_short_input() {
        assert!(welch(&[0.0; 10], 250.0, 500, 250).is_none());
    }

    #[test]
    fn periodogram_peak_at_tone() {
        let x = tone(20.0, 250.0, 50);
        let psd = periodogram(&x, 250.0, 250);
        assert!((psd.peak_in(0.0, 125.0).unwrap() - 20.0).abs() <= 1.0);
    }
}
