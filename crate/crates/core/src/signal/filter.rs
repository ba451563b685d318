use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::types::SignalWindow;

/// Pole-pair quality factors of a 4th-order Butterworth prototype.
const BUTTER4_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_6];

#[derive(Clone, Copy, Debug)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 - cos) / a0;
        Self { b: [b1 / 2.0, b1, b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn highpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b1 = (1.0 + cos) / a0;
        Self { b: [b1 / 2.0, -b1, b1 / 2.0], a: [-2.0 * cos / a0, (1.0 - alpha) / a0] }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II, state primed as if `x[0]` had been held forever.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let g = self.dc_gain();
        let mut s2 = (self.b[2] - self.a[1] * g) * x0;
        let mut s1 = (self.b[1] - self.a[0] * g) * x0 + s2;
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[0] * y + s2;
            s2 = self.b[2] * input - self.a[1] * y;
            *v = y;
        }
    }
}

fn design(low_hz: f64, high_hz: f64, rate: f64) -> Vec<Biquad> {
    let nyquist = rate / 2.0;
    let mut sections = Vec::new();
    if high_hz < nyquist {
        sections.extend(BUTTER4_Q.iter().map(|&q| Biquad::lowpass(high_hz, rate, q)));
    }
    if low_hz > 0.0 {
        sections.extend(BUTTER4_Q.iter().map(|&q| Biquad::highpass(low_hz, rate, q)));
    }
    sections
}

/// Zero-phase band-pass: 4th-order Butterworth low- and/or high-pass
/// sections run forward then backward over an odd-reflected padding.
/// A band edge at 0 Hz or at Nyquist drops that side of the filter.
pub fn bandpass_filter(window: &SignalWindow, low_hz: f64, high_hz: f64) -> Result<SignalWindow> {
    let rate = window.sample_rate_hz;
    if !(low_hz >= 0.0 && low_hz < high_hz && high_hz <= rate / 2.0) {
        return Err(Error::Invalid(format!(
            "band [{low_hz}, {high_hz}] Hz must satisfy 0 <= low < high <= {} Hz",
            rate / 2.0
        )));
    }
    let sections = design(low_hz, high_hz, rate);
    let mut out = window.clone();
    out.samples = filtfilt(&sections, &window.samples);
    Ok(out)
}

fn filtfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if sections.is_empty() || n == 0 {
        return x.to_vec();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    for s in sections {
        s.run(&mut ext);
    }
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: f64, len: usize) -> SignalWindow {
        let s = (0..len).map(|t| (2.0 * PI * freq * t as f64 / rate).sin()).collect();
        SignalWindow::new(s, rate, 0, "s", None).unwrap()
    }

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    #[test]
    fn passes_low_and_rejects_high() {
        let pass = tone(10.0, 200.0, 3000);
        let out = bandpass_filter(&pass, 0.0, 40.0).unwrap();
        assert_eq!(out.len(), pass.len());
        assert!((rms(&out.samples) / rms(&pass.samples) - 1.0).abs() < 0.05);

        let stop = tone(60.0, 200.0, 3000);
        let out = bandpass_filter(&stop, 0.0, 40.0).unwrap();
        assert!(rms(&out.samples) < 0.1 * rms(&stop.samples));
    }

    #[test]
    fn zero_in_zero_out() {
        let w = SignalWindow::new(vec![0.0; 100], 100.0, 0, "s", None).unwrap();
        assert!(bandpass_filter(&w, 0.5, 40.0).unwrap().samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_band_is_identity() {
        let w = tone(7.0, 100.0, 50);
        assert_eq!(bandpass_filter(&w, 0.0, 50.0).unwrap(), w);
    }

    #[test]
    fn invalid_band() {
        let w = tone(7.0, 100.0, 50);
        assert!(bandpass_filter(&w, 40.0, 10.0).is_err());
        assert!(bandpass_filter(&w, 0.0, 60.0).is_err());
        assert!(bandpass_filter(&w, -1.0, 10.0).is_err());
    }

    #[test]
    fn dc_survives_lowpass_exactly_enough() {
        let w = SignalWindow::new(vec![2.5; 64], 100.0, 0, "s", None).unwrap();
        let out = bandpass_filter(&w, 0.0, 10.0).unwrap();
        assert!(out.samples.iter().all(|v| (v - 2.5).abs() < 1e-9));
    }
}
