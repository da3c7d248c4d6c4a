//! RF conditioning: zero-phase band-pass, analytic-signal envelope, direct
//! wave masking and amplitude normalisation.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RingArrayGeometry;
use crate::simulator::RfFrame;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    pub bandpass_lo: f64,
    pub bandpass_hi: f64,
    /// Width of the raised-cosine roll-off centred on each cutoff, Hz.
    pub bandpass_transition: f64,
    pub mask_pre: usize,
    pub mask_post: usize,
    pub clip_sigma_factor: f64,
    /// In frames fired by several transmitters, mask the direct wave of each
    /// one (see [`mask_direct_waves`]) instead of only the strongest.
    #[serde(default)]
    pub mask_each_transmitter: bool,
    /// Half-width (samples) of the window around the geometric arrival in
    /// which each transmitter's envelope maximum is searched.
    #[serde(default = "default_mask_search")]
    pub mask_search: usize,
}

fn default_mask_search() -> usize {
    10
}

impl PreprocessConfig {
    /// Scatterer experiments: 0.5–8 MHz band, mask 100 before / 120 after,
    /// divide by 3 sigma.
    pub fn scatterer() -> Self {
        Self {
            bandpass_lo: 0.5e6,
            bandpass_hi: 8.0e6,
            bandpass_transition: 0.25e6,
            mask_pre: 100,
            mask_post: 120,
            clip_sigma_factor: 3.0,
            mask_each_transmitter: false,
            mask_search: default_mask_search(),
        }
    }

    /// Natural-image and breast experiments: mask 30 before / 50 after.
    pub fn natural_image() -> Self {
        Self {
            mask_pre: 30,
            mask_post: 50,
            ..Self::scatterer()
        }
    }

    /// Frequencies divided by `factor`; sample counts unchanged.
    pub fn frequency_scaled(&self, factor: f64) -> Self {
        Self {
            bandpass_lo: self.bandpass_lo / factor,
            bandpass_hi: self.bandpass_hi / factor,
            bandpass_transition: self.bandpass_transition / factor,
            ..self.clone()
        }
    }

    pub fn validate(&self, sampling_rate: f64) -> Result<()> {
        validate_band(self.bandpass_lo, self.bandpass_hi, sampling_rate)?;
        if !(self.bandpass_transition >= 0.0) {
            return Err(Error::Config("band-pass transition must be >= 0".into()));
        }
        if !(self.clip_sigma_factor > 0.0) {
            return Err(Error::Config(format!(
                "clip_sigma_factor must be positive, got {}",
                self.clip_sigma_factor
            )));
        }
        Ok(())
    }
}

fn validate_band(lo: f64, hi: f64, fs: f64) -> Result<()> {
    if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
        return Err(Error::Config(format!(
            "band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < fs/2 = {}",
            fs / 2.0
        )));
    }
    Ok(())
}

/// Gain of the band-pass at frequency `f` (Hz): flat passband with
/// raised-cosine edges of width `transition` centred on each cutoff.
pub fn band_pass_gain(f: f64, lo: f64, hi: f64, transition: f64) -> f64 {
    let f = f.abs();
    let edge = |x: f64| 0.5 * (1.0 - (std::f64::consts::PI * x).cos());
    let w = transition;
    if w <= 0.0 {
        return if (lo..=hi).contains(&f) { 1.0 } else { 0.0 };
    }
    if f <= lo - w / 2.0 || f >= hi + w / 2.0 {
        0.0
    } else if f < lo + w / 2.0 {
        edge((f - (lo - w / 2.0)) / w)
    } else if f <= hi - w / 2.0 {
        1.0
    } else {
        edge(((hi + w / 2.0) - f) / w)
    }
}

/// Zero-phase band-pass filter for traces of one length.
pub struct BandPass {
    len: usize,
    n_fft: usize,
    gain: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl BandPass {
    pub fn new(len: usize, lo: f64, hi: f64, transition: f64, fs: f64) -> Result<Self> {
        validate_band(lo, hi, fs)?;
        // Pad to avoid circular wrap of the filter's impulse response.
        let n_fft = (2 * len.max(1)).next_power_of_two();
        let gain = (0..n_fft)
            .map(|k| {
                let m = if k <= n_fft / 2 { k as f64 } else { k as f64 - n_fft as f64 };
                band_pass_gain(m * fs / n_fft as f64, lo, hi, transition)
            })
            .collect();
        let (forward, inverse) = plans(n_fft);
        Ok(Self {
            len,
            n_fft,
            gain,
            forward,
            inverse,
        })
    }

    pub fn from_config(len: usize, config: &PreprocessConfig, fs: f64) -> Result<Self> {
        Self::new(
            len,
            config.bandpass_lo,
            config.bandpass_hi,
            config.bandpass_transition,
            fs,
        )
    }

    pub fn apply(&self, trace: ArrayView1<'_, f64>) -> Vec<f64> {
        assert_eq!(trace.len(), self.len, "trace length differs from filter length");
        let mut buf: Vec<Complex64> = trace.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        buf.resize(self.n_fft, Complex64::new(0.0, 0.0));
        self.forward.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&self.gain) {
            *b *= g;
        }
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.n_fft as f64;
        buf[..self.len].iter().map(|c| c.re * scale).collect()
    }
}

pub fn band_pass(trace: &[f64], lo: f64, hi: f64, fs: f64) -> Result<Vec<f64>> {
    let filter = BandPass::new(trace.len(), lo, hi, 0.25e6, fs)?;
    Ok(filter.apply(ArrayView1::from(trace)))
}

/// Analytic signal `x + i H[x]` by zeroing negative frequencies.
pub fn analytic_signal(trace: &[f64]) -> Vec<Complex64> {
    let n = trace.len();
    if n == 0 {
        return Vec::new();
    }
    let (forward, inverse) = plans(n);
    let mut buf: Vec<Complex64> = trace.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward.process(&mut buf);
    let half = n / 2;
    for (k, b) in buf.iter_mut().enumerate() {
        let h = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *b *= h / n as f64;
    }
    inverse.process(&mut buf);
    buf
}

/// Discrete Hilbert transform (imaginary part of the analytic signal).
pub fn hilbert(trace: &[f64]) -> Vec<f64> {
    analytic_signal(trace).iter().map(|c| c.im).collect()
}

pub fn envelope(trace: &[f64]) -> Vec<f64> {
    analytic_signal(trace).iter().map(|c| c.norm()).collect()
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Zeroes `[k - pre, k + post]` (inclusive, clipped) around the envelope
/// maximum `k` of every receiver trace.
pub fn mask_direct_wave(frame: &RfFrame, pre: usize, post: usize) -> RfFrame {
    let mut samples = frame.samples.clone();
    let t = frame.n_samples();
    for mut row in samples.axis_iter_mut(Axis(0)) {
        let trace: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let k = argmax(&envelope(&trace));
        let lo = k.saturating_sub(pre);
        let hi = (k + post).min(t.saturating_sub(1));
        for v in row.iter_mut().take(hi + 1).skip(lo) {
            *v = 0.0;
        }
    }
    frame.with_samples(samples)
}

/// Divides the frame by `sigma_factor` times its population standard
/// deviation and clips to `[-1, 1]`. A constant frame becomes all zeros.
pub fn normalize(frame: &RfFrame, sigma_factor: f64) -> Result<RfFrame> {
    if !(sigma_factor > 0.0) {
        return Err(Error::Config(format!(
            "sigma factor must be positive, got {sigma_factor}"
        )));
    }
    let n = frame.samples.len() as f64;
    let mean = frame.samples.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = frame
        .samples
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let sigma = var.sqrt();
    if sigma == 0.0 || !sigma.is_finite() {
        return Ok(frame.with_samples(Array2::zeros(frame.samples.dim())));
    }
    let scale = 1.0 / (sigma_factor * sigma);
    Ok(frame.with_samples(
        frame
            .samples
            .mapv(|v| ((v as f64) * scale).clamp(-1.0, 1.0) as f32),
    ))
}

/// Zero-phase band-pass of every receiver trace.
pub fn band_pass_frame(frame: &RfFrame, config: &PreprocessConfig) -> Result<RfFrame> {
    config.validate(frame.sampling_rate)?;
    let filter = BandPass::from_config(frame.n_samples(), config, frame.sampling_rate)?;
    let mut filtered = Array2::<f32>::zeros(frame.samples.dim());
    for (src, mut dst) in frame
        .samples
        .axis_iter(Axis(0))
        .zip(filtered.axis_iter_mut(Axis(0)))
    {
        let trace = src.mapv(|v| v as f64);
        for (d, v) in dst.iter_mut().zip(filter.apply(trace.view())) {
            *d = v as f32;
        }
    }
    Ok(frame.with_samples(filtered))
}

/// Band-pass, mask the direct wave, normalise.
pub fn preprocess_pipeline(frame: &RfFrame, config: &PreprocessConfig) -> Result<RfFrame> {
    let filtered = band_pass_frame(frame, config)?;
    let masked = mask_direct_wave(&filtered, config.mask_pre, config.mask_post);
    normalize(&masked, config.clip_sigma_factor)
}

/// Sample index at which the direct wave of transmitter `tx` reaches each
/// receiver.
pub fn direct_arrivals(
    geometry: &RingArrayGeometry,
    tx: usize,
    sound_speed: f64,
    sampling_rate: f64,
    t0: f64,
) -> Result<Vec<f64>> {
    let src = geometry.transmitter(tx)?;
    Ok(geometry
        .receiver_positions()
        .iter()
        .map(|r| (src.distance(r) * 1e-3 / sound_speed - t0) * sampling_rate)
        .collect())
}

/// Masks the direct wave of every transmitter in `frame.tx_set`. For each
/// receiver and transmitter the envelope maximum `k` is searched within
/// `search` samples of the geometric arrival and `[k - pre, k + post]` is
/// zeroed. Overlapping arrivals in a mixed frame defeat a global arg-max.
pub fn mask_direct_waves(
    frame: &RfFrame,
    geometry: &RingArrayGeometry,
    sound_speed: f64,
    pre: usize,
    post: usize,
    search: usize,
) -> Result<RfFrame> {
    if frame.n_receivers() != geometry.n_receivers {
        return Err(Error::shape(
            format!("{} receivers", geometry.n_receivers),
            frame.n_receivers().to_string(),
        ));
    }
    let arrivals = frame
        .tx_set
        .iter()
        .map(|&tx| direct_arrivals(geometry, tx, sound_speed, frame.sampling_rate, frame.t0))
        .collect::<Result<Vec<_>>>()?;
    let t = frame.n_samples();
    let mut samples = frame.samples.clone();
    for (r, mut row) in samples.axis_iter_mut(Axis(0)).enumerate() {
        let trace: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let env = envelope(&trace);
        for a in &arrivals {
            let centre = a[r].round();
            if centre < -(search as f64) || centre >= (t + search) as f64 {
                continue;
            }
            let lo = (centre - search as f64).max(0.0) as usize;
            let hi = ((centre + search as f64) as usize).min(t - 1);
            let k = lo + argmax(&env[lo..=hi]);
            let (a, b) = (k.saturating_sub(pre), (k + post).min(t - 1));
            for v in row.iter_mut().take(b + 1).skip(a) {
                *v = 0.0;
            }
        }
    }
    Ok(frame.with_samples(samples))
}

/// [`preprocess_pipeline`], except that with `mask_each_transmitter` set a
/// multi-transmitter frame has every direct wave masked.
pub fn preprocess_frame(
    frame: &RfFrame,
    config: &PreprocessConfig,
    geometry: &RingArrayGeometry,
    sound_speed: f64,
) -> Result<RfFrame> {
    if !(config.mask_each_transmitter && frame.tx_set.len() > 1) {
        return preprocess_pipeline(frame, config);
    }
    let filtered = band_pass_frame(frame, config)?;
    let masked = mask_direct_waves(
        &filtered,
        geometry,
        sound_speed,
        config.mask_pre,
        config.mask_post,
        config.mask_search,
    )?;
    normalize(&masked, config.clip_sigma_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn tone(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).cos()).collect()
    }

    fn interior_amplitude(x: &[f64]) -> f64 {
        let n = x.len();
        x[n / 4..3 * n / 4].iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Gain of the filter at a tone, read off the DFT of the filtered signal.
    fn dft_gain(input: &[f64], output: &[f64], f: f64, fs: f64) -> f64 {
        let project = |x: &[f64]| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / fs;
                re += v * ph.cos();
                im += v * ph.sin();
            }
            re.hypot(im)
        };
        let n = input.len();
        project(&output[n / 4..3 * n / 4]) / project(&input[n / 4..3 * n / 4])
    }

    #[test]
    fn passband_tone_survives() {
        let fs = 40e6;
        let x = tone(2e6, fs, 4096);
        let y = band_pass(&x, 0.5e6, 8e6, fs).unwrap();
        let g = dft_gain(&x, &y, 2e6, fs);
        assert!((0.9..=1.0 + 1e-9).contains(&g), "gain {g}");
        let a = interior_amplitude(&y);
        // edge leakage of the truncated tone adds a few ppm
        assert!((0.9..=1.0 + 1e-3).contains(&a), "amplitude {a}");
        assert_abs_diff_eq!(band_pass_gain(2e6, 0.5e6, 8e6, 0.25e6), 1.0);
    }

    #[test]
    fn stopband_tone_is_removed() {
        let fs = 40e6;
        let x = tone(12e6, fs, 4096);
        let y = band_pass(&x, 0.5e6, 8e6, fs).unwrap();
        assert!(dft_gain(&x, &y, 12e6, fs) < 0.1);
        assert!(interior_amplitude(&y) < 0.1);
    }

    #[test]
    fn band_pass_zero_and_invalid() {
        let z = band_pass(&[0.0; 64], 0.5e6, 8e6, 40e6).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        assert!(band_pass(&[0.0; 64], 8e6, 0.5e6, 40e6).is_err());
        assert!(band_pass(&[0.0; 64], 0.5e6, 25e6, 40e6).is_err());
        assert!(band_pass(&[0.0; 64], 0.0, 8e6, 40e6).is_err());
    }

    #[test]
    fn band_pass_keeps_arrival_time() {
        let fs = 40e6;
        let n = 2048;
        let pulse: Vec<f64> = (0..n)
            .map(|i| {
                let t = (i as f64 - 1000.0) / fs;
                (2.0 * PI * 2e6 * t).cos() * (-(t * 2e6).powi(2)).exp()
            })
            .collect();
        let y = band_pass(&pulse, 0.5e6, 8e6, fs).unwrap();
        assert_eq!(argmax(&envelope(&y)), 1000);
    }

    #[test]
    fn hilbert_of_cosine_is_sine() {
        let n = 1000;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 7.0 * i as f64 / n as f64).cos()).collect();
        let h = hilbert(&x);
        for (i, v) in h.iter().enumerate() {
            assert_abs_diff_eq!(*v, (2.0 * PI * 7.0 * i as f64 / n as f64).sin(), epsilon = 1e-6);
        }
        assert!(hilbert(&[0.0; 16]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn double_hilbert_negates() {
        let n = 512;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / n as f64;
                (2.0 * PI * 5.0 * t).sin() + 0.3 * (2.0 * PI * 31.0 * t + 0.4).cos()
            })
            .collect();
        let hh = hilbert(&hilbert(&x));
        for (a, b) in hh.iter().zip(&x) {
            assert_abs_diff_eq!(*a, -*b, epsilon = 1e-6);
        }
    }

    #[test]
    fn envelope_of_unit_cosine() {
        let n = 2000;
        let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * 40.0 * i as f64 / n as f64).cos()).collect();
        let e = envelope(&x);
        for v in &e[n / 20..n - n / 20] {
            assert!((v - 1.0).abs() < 0.02);
        }
        assert!(envelope(&[0.0; 10]).iter().all(|&v| v == 0.0));
    }

    fn frame(rows: Vec<Vec<f32>>) -> RfFrame {
        let r = rows.len();
        let t = rows[0].len();
        let flat: Vec<f32> = rows.into_iter().flatten().collect();
        RfFrame::new(Array2::from_shape_vec((r, t), flat).unwrap(), 40e6, vec![0])
    }

    fn burst_at(center: usize, t: usize) -> Vec<f32> {
        (0..t)
            .map(|i| {
                let d = i as f64 - center as f64;
                ((2.0 * PI * d / 20.0).cos() * (-(d / 8.0).powi(2)).exp()) as f32
            })
            .collect()
    }

    #[test]
    fn mask_window_around_peak() {
        let f = frame(vec![burst_at(500, 1024)]);
        let m = mask_direct_wave(&f, 100, 120);
        let row = m.samples.row(0);
        for i in 0..1024 {
            if (400..=620).contains(&i) {
                assert_eq!(row[i], 0.0, "sample {i}");
            } else {
                assert_eq!(row[i], f.samples[[0, i]]);
            }
        }
    }

    #[test]
    fn natural_image_mask_width() {
        let g = frame(vec![burst_at(150, 300)]);
        let m = mask_direct_wave(&g, 30, 50);
        let zeroed = m
            .samples
            .iter()
            .zip(g.samples.iter())
            .filter(|(a, b)| **a == 0.0 && **b != 0.0)
            .count();
        let already_zero = g.samples.iter().skip(120).take(81).filter(|v| **v == 0.0).count();
        assert_eq!(zeroed + already_zero, 81);
    }

    #[test]
    fn mask_of_zero_trace_is_identity() {
        let f = frame(vec![vec![0.0; 64]]);
        assert_eq!(mask_direct_wave(&f, 10, 10), f);
    }

    #[test]
    fn normalize_hand_computed() {
        let f = frame(vec![vec![-6.0, 0.0, 6.0]]);
        let n = normalize(&f, 3.0).unwrap();
        let expect = 6.0 / (3.0 * 24f64.sqrt());
        assert_abs_diff_eq!(n.samples[[0, 0]] as f64, -expect, epsilon = 1e-6);
        assert_abs_diff_eq!(n.samples[[0, 1]] as f64, 0.0);
        assert_abs_diff_eq!(n.samples[[0, 2]] as f64, expect, epsilon = 1e-6);
        assert_abs_diff_eq!(expect, 0.408, epsilon = 1e-3);
        let z = frame(vec![vec![0.0; 8]]);
        assert_eq!(normalize(&z, 3.0).unwrap(), z);
        assert!(normalize(&f, 0.0).is_err());
    }

    #[test]
    fn pipeline_preserves_zero_and_range() {
        let z = frame(vec![vec![0.0; 256]; 4]);
        let cfg = PreprocessConfig::scatterer();
        assert_eq!(preprocess_pipeline(&z, &cfg).unwrap(), z);

        let rows: Vec<Vec<f32>> = (0..4)
            .map(|r| {
                let mut v = burst_at(300 + 10 * r, 1024);
                for (i, x) in burst_at(800, 1024).iter().enumerate() {
                    v[i] += 0.05 * x;
                }
                v
            })
            .collect();
        let f = frame(rows);
        let out = preprocess_pipeline(&f, &cfg).unwrap();
        assert!(out.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
        // the direct-wave window stays zero after normalisation
        for r in 0..4 {
            let k = 300 + 10 * r;
            for i in (k - 90)..=(k + 110) {
                assert_eq!(out.samples[[r, i]], 0.0);
            }
        }
        assert!(out.samples.iter().any(|&v| v != 0.0));
    }

    fn signal() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, 128)
    }

    proptest! {
        #[test]
        fn band_pass_and_hilbert_are_linear(x in signal(), y in signal(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let scale = 1.0 + a.abs() + b.abs();
            for f in [
                (|v: &[f64]| band_pass(v, 0.5e6, 8e6, 40e6).unwrap()) as fn(&[f64]) -> Vec<f64>,
                hilbert,
            ] {
                let fm = f(&mix);
                let fx = f(&x);
                let fy = f(&y);
                for i in 0..fm.len() {
                    prop_assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
                }
            }
        }

        #[test]
        fn envelope_bounds_the_signal(x in signal(), k in -4.0f64..4.0) {
            let e = envelope(&x);
            for (ei, xi) in e.iter().zip(&x) {
                prop_assert!(*ei >= xi.abs() - 1e-9);
            }
            let scaled: Vec<f64> = x.iter().map(|v| k * v).collect();
            for (a, b) in envelope(&scaled).iter().zip(&e) {
                prop_assert!((a - k.abs() * b).abs() < 1e-9);
            }
        }

        #[test]
        fn remasking_never_restores(rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 200), 3), pre in 0usize..40, post in 0usize..40) {
            let f = frame(rows);
            let once = mask_direct_wave(&f, pre, post);
            let twice = mask_direct_wave(&once, pre, post);
            for (a, b) in once.samples.iter().zip(twice.samples.iter()) {
                prop_assert!(*b == *a || *b == 0.0);
            }
        }

        #[test]
        fn normalized_spread(rows in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 64), 4)) {
            let f = frame(rows);
            let n = normalize(&f, 3.0).unwrap();
            prop_assert!(n.samples.iter().all(|v| (-1.0..=1.0).contains(v)));
            let len = n.samples.len() as f64;
            let mean = n.samples.iter().map(|&v| v as f64).sum::<f64>() / len;
            let sd = (n.samples.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / len).sqrt();
            // without any clipping the spread is exactly 1/3
            let clipped = f.samples.iter().zip(n.samples.iter()).any(|(_, b)| b.abs() == 1.0);
            if !clipped {
                prop_assert!((sd - 1.0 / 3.0).abs() < 1e-5);
            } else {
                prop_assert!(sd <= 1.0 / 3.0 + 1e-5);
            }
        }
    }
}
