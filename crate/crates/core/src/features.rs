//! Audio buffers and the log-spectral front end.
//!
//! The engine runs at a canonical 16 kHz. [`spectrogram`] frames the signal,
//! applies a Hann window, takes the power spectrum and optionally a triangular
//! mel filterbank, then a floored natural log. [`add_context`] widens each
//! frame with its neighbours and [`normalize`] standardizes every column over
//! the utterance.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::nn::Matrix;

/// Sample rate every feature extraction call expects.
pub const SAMPLE_RATE: u32 = 16_000;

/// Floor added to power before the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Added to the standard deviation in [`normalize`].
pub const NORM_EPSILON: f64 = 1e-8;

/// `T×D` feature matrix, one row per frame.
pub type FeatureMatrix = Matrix;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FeatureError {
    #[error("empty audio buffer")]
    EmptyBuffer,
    #[error("feature extraction requires {expected} Hz audio, got {actual} Hz")]
    WrongSampleRate { expected: u32, actual: u32 },
    #[error("audio has {samples} samples, shorter than one {window}-sample window")]
    TooShort { samples: usize, window: usize },
    #[error("invalid feature config: {0}")]
    InvalidConfig(&'static str),
    #[error("empty feature matrix")]
    EmptyFeatures,
}

/// Mono audio with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    /// Samples outside `[-1, 1]` are clamped. Panics if `sample_rate` is zero.
    pub fn new(mut samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        for s in &mut samples {
            *s = if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) };
        }
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureConfig {
    pub window_ms: u32,
    pub hop_ms: u32,
    /// Power of two, at least the window length in samples.
    pub fft_size: usize,
    /// Mel filter count; zero keeps the raw `fft_size/2 + 1` power bins.
    pub n_mel: usize,
    /// Frames stacked on each side by [`add_context`].
    pub n_context: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_ms: 25,
            hop_ms: 10,
            fft_size: 512,
            n_mel: 26,
            n_context: 9,
        }
    }
}

impl FeatureConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms as u64 * SAMPLE_RATE as u64 / 1000) as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms as u64 * SAMPLE_RATE as u64 / 1000) as usize
    }

    /// Width of one frame before context stacking.
    pub fn base_dim(&self) -> usize {
        if self.n_mel > 0 {
            self.n_mel
        } else {
            self.fft_size / 2 + 1
        }
    }

    /// Width of one frame after context stacking.
    pub fn feature_dim(&self) -> usize {
        self.base_dim() * (2 * self.n_context + 1)
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if self.window_ms == 0 || self.hop_ms == 0 {
            return Err(FeatureError::InvalidConfig(
                "window and hop must be positive",
            ));
        }
        if self.hop_ms > self.window_ms {
            return Err(FeatureError::InvalidConfig("hop longer than window"));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(FeatureError::InvalidConfig(
                "fft size is not a power of two",
            ));
        }
        if self.fft_size < self.window_samples() {
            return Err(FeatureError::InvalidConfig(
                "fft size smaller than the window",
            ));
        }
        Ok(())
    }
}

/// Linear-interpolation resampling to `target_rate`.
pub fn resample(buf: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, FeatureError> {
    if buf.is_empty() {
        return Err(FeatureError::EmptyBuffer);
    }
    if target_rate == 0 {
        return Err(FeatureError::InvalidConfig("target rate must be positive"));
    }
    if target_rate == buf.sample_rate {
        return Ok(buf.clone());
    }
    let src = &buf.samples;
    let ratio = buf.sample_rate as f64 / target_rate as f64;
    let out_len =
        libm::round(src.len() as f64 * target_rate as f64 / buf.sample_rate as f64) as usize;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let k = (pos as usize).min(last);
            let frac = pos - k as f64;
            if k == last || frac == 0.0 {
                src[k]
            } else {
                let (a, b) = (src[k] as f64, src[k + 1] as f64);
                (a + (b - a) * frac) as f32
            }
        })
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate: target_rate,
    })
}

/// Number of frames produced for `n` samples.
pub fn frame_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window {
        0
    } else {
        1 + (n - window) / hop
    }
}

/// Log power (or log mel) spectrogram of 16 kHz audio.
pub fn spectrogram(buf: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    cfg.validate()?;
    if buf.sample_rate != SAMPLE_RATE {
        return Err(FeatureError::WrongSampleRate {
            expected: SAMPLE_RATE,
            actual: buf.sample_rate,
        });
    }
    let window = cfg.window_samples();
    let hop = cfg.hop_samples();
    if buf.len() < window {
        return Err(FeatureError::TooShort {
            samples: buf.len(),
            window,
        });
    }
    let frames = frame_count(buf.len(), window, hop);
    let n_bins = cfg.fft_size / 2 + 1;
    let hann: Vec<f64> = (0..window)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * PI * i as f64 / window as f64))
        .collect();
    let fft = Fft::new(cfg.fft_size);
    let mel = (cfg.n_mel > 0).then(|| mel_filterbank(cfg.n_mel, cfg.fft_size, SAMPLE_RATE));
    let dim = cfg.base_dim();

    let mut out = Matrix::zeros(frames, dim);
    let mut re = alloc::vec![0f64; cfg.fft_size];
    let mut im = alloc::vec![0f64; cfg.fft_size];
    let mut power = alloc::vec![0f64; n_bins];
    for t in 0..frames {
        let frame = &buf.samples[t * hop..t * hop + window];
        re.fill(0.0);
        im.fill(0.0);
        for ((r, &s), &w) in re.iter_mut().zip(frame).zip(&hann) {
            *r = s as f64 * w;
        }
        fft.transform(&mut re, &mut im);
        for (k, p) in power.iter_mut().enumerate() {
            *p = re[k] * re[k] + im[k] * im[k];
        }
        let row = out.row_mut(t);
        match &mel {
            Some(bank) => {
                for (m, filter) in bank.chunks_exact(n_bins).enumerate() {
                    let e: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                    row[m] = libm::log(e + LOG_FLOOR) as f32;
                }
            }
            None => {
                for (v, p) in row.iter_mut().zip(&power) {
                    *v = libm::log(p + LOG_FLOOR) as f32;
                }
            }
        }
    }
    Ok(out)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * libm::log10(1.0 + hz / 700.0)
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (libm::pow(10.0, mel / 2595.0) - 1.0)
}

/// `n_mel × (fft_size/2 + 1)` row-major triangular filters spanning 0 Hz to Nyquist.
pub fn mel_filterbank(n_mel: usize, fft_size: usize, sample_rate: u32) -> Vec<f64> {
    let n_bins = fft_size / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mel + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mel + 1) as f64))
        .collect();
    let mut bank = alloc::vec![0f64; n_mel * n_bins];
    for m in 0..n_mel {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            let w = if f <= lo || f >= hi {
                0.0
            } else if f <= centre {
                (f - lo) / (centre - lo)
            } else {
                (hi - f) / (hi - centre)
            };
            bank[m * n_bins + k] = w;
        }
    }
    bank
}

/// Concatenates rows `t−C ..= t+C` into row `t`, zero-padding past either end.
pub fn add_context(feat: &FeatureMatrix, n_context: usize) -> Result<FeatureMatrix, FeatureError> {
    if feat.rows() == 0 || feat.cols() == 0 {
        return Err(FeatureError::EmptyFeatures);
    }
    if n_context == 0 {
        return Ok(feat.clone());
    }
    let (t_len, d) = (feat.rows(), feat.cols());
    let width = 2 * n_context + 1;
    let mut out = Matrix::zeros(t_len, d * width);
    for t in 0..t_len {
        let row = out.row_mut(t);
        for (slot, offset) in (0..width).enumerate() {
            let src = t as isize + offset as isize - n_context as isize;
            if (0..t_len as isize).contains(&src) {
                row[slot * d..(slot + 1) * d].copy_from_slice(feat.row(src as usize));
            }
        }
    }
    Ok(out)
}

/// Per-column standardization: `(x − mean) / (std + 1e-8)` with population std.
pub fn normalize(feat: &FeatureMatrix) -> Result<FeatureMatrix, FeatureError> {
    let (t_len, d) = (feat.rows(), feat.cols());
    if t_len == 0 {
        return Err(FeatureError::EmptyFeatures);
    }
    let mut out = feat.clone();
    for c in 0..d {
        let mean = (0..t_len).map(|t| feat.get(t, c) as f64).sum::<f64>() / t_len as f64;
        let var = (0..t_len)
            .map(|t| {
                let x = feat.get(t, c) as f64 - mean;
                x * x
            })
            .sum::<f64>()
            / t_len as f64;
        let scale = 1.0 / (libm::sqrt(var) + NORM_EPSILON);
        for t in 0..t_len {
            out.row_mut(t)[c] = ((feat.get(t, c) as f64 - mean) * scale) as f32;
        }
    }
    Ok(out)
}

/// The full front end: resample to 16 kHz, spectrogram, context stacking, normalization.
pub fn extract(buf: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix, FeatureError> {
    let resampled;
    let buf = if buf.sample_rate == SAMPLE_RATE {
        buf
    } else {
        resampled = resample(buf, SAMPLE_RATE)?;
        &resampled
    };
    let spec = spectrogram(buf, cfg)?;
    normalize(&add_context(&spec, cfg.n_context)?)
}

/// In-place iterative radix-2 FFT with precomputed twiddles.
struct Fft {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl Fft {
    fn new(n: usize) -> Self {
        debug_assert!(n.is_power_of_two());
        let half = n / 2;
        let angle = |k: usize| -2.0 * PI * k as f64 / n as f64;
        Self {
            n,
            cos: (0..half).map(|k| libm::cos(angle(k))).collect(),
            sin: (0..half).map(|k| libm::sin(angle(k))).collect(),
        }
    }

    fn transform(&self, re: &mut [f64], im: &mut [f64]) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let stride = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..len / 2 {
                    let (wr, wi) = (self.cos[k * stride], self.sin[k * stride]);
                    let (a, b) = (start + k, start + k + len / 2);
                    let tr = re[b] * wr - im[b] * wi;
                    let ti = re[b] * wi + im[b] * wr;
                    re[b] = re[a] - tr;
                    im[b] = im[a] - ti;
                    re[a] += tr;
                    im[a] += ti;
                }
            }
            len <<= 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sine(freq: f64, rate: u32, n: usize) -> AudioBuffer {
        let samples = (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32)
            .collect();
        AudioBuffer::new(samples, rate)
    }

    /// O(N²) DFT power spectrum, independent of the FFT path.
    fn dft_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn argmax64(xs: &[f64]) -> usize {
        let mut best = 0;
        for (i, &x) in xs.iter().enumerate() {
            if x > xs[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn fft_matches_direct_dft() {
        let mut rng = crate::rng::XorShift64Star::new(3);
        let x: Vec<f64> = (0..64).map(|_| rng.next_weight() as f64).collect();
        let (mut re, mut im) = (x.clone(), vec![0.0; 64]);
        Fft::new(64).transform(&mut re, &mut im);
        let oracle = dft_power(&x);
        for k in 0..33 {
            let p = re[k] * re[k] + im[k] * im[k];
            assert!((p - oracle[k]).abs() < 1e-9 * oracle[k].max(1.0));
        }
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let buf = sine(440.0, 16000, 1000);
        assert_eq!(resample(&buf, 16000).unwrap(), buf);
    }

    #[test]
    fn resample_constant_upsample() {
        let buf = AudioBuffer::new(vec![0.7; 800], 8000);
        let up = resample(&buf, 16000).unwrap();
        assert_eq!(up.len(), 1600);
        assert_eq!(up.sample_rate(), 16000);
        assert!(up.samples().iter().all(|&s| s == 0.7));
    }

    #[test]
    fn resample_preserves_tone_frequency() {
        let buf = sine(1000.0, 48000, 4800);
        let down = resample(&buf, 16000).unwrap();
        assert_eq!(down.len(), 1600);
        let before: Vec<f64> = buf.samples()[..960].iter().map(|&v| v as f64).collect();
        let after: Vec<f64> = down.samples()[..320].iter().map(|&v| v as f64).collect();
        let fb = argmax64(&dft_power(&before)) as f64 * 48000.0 / 960.0;
        let fa = argmax64(&dft_power(&after)) as f64 * 16000.0 / 320.0;
        assert_eq!(fb, 1000.0);
        assert_eq!(fa, 1000.0);
    }

    #[test]
    fn resample_rejects_empty() {
        let buf = AudioBuffer::new(vec![], 8000);
        assert_eq!(resample(&buf, 16000), Err(FeatureError::EmptyBuffer));
    }

    #[test]
    fn silence_is_log_floor() {
        let buf = AudioBuffer::new(vec![0.0; 16000], SAMPLE_RATE);
        for n_mel in [0, 26] {
            let cfg = FeatureConfig {
                n_mel,
                ..Default::default()
            };
            let spec = spectrogram(&buf, &cfg).unwrap();
            assert!(spec
                .as_slice()
                .iter()
                .all(|&v| (v as f64 - (-23.025851)).abs() < 1e-5));
        }
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let buf = sine(1000.0, SAMPLE_RATE, 4000);
        let cfg = FeatureConfig {
            n_mel: 0,
            ..Default::default()
        };
        let spec = spectrogram(&buf, &cfg).unwrap();
        assert_eq!(spec.cols(), 257);
        // Oracle: direct DFT of the first windowed, zero-padded frame.
        let mut frame = vec![0.0; 512];
        for (i, (f, &s)) in frame.iter_mut().zip(buf.samples()).take(400).enumerate() {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / 400.0).cos();
            *f = s as f64 * w;
        }
        assert_eq!(argmax64(&dft_power(&frame)), 32);
        for t in 0..spec.rows() {
            assert_eq!(crate::nn::argmax(spec.row(t)), 32);
        }
    }

    #[test]
    fn frame_count_half_second() {
        let buf = AudioBuffer::new(vec![0.0; 8000], SAMPLE_RATE);
        let spec = spectrogram(&buf, &FeatureConfig::default()).unwrap();
        assert_eq!(spec.rows(), 48);
        assert_eq!(spec.cols(), 26);
    }

    #[test]
    fn spectrogram_errors() {
        let cfg = FeatureConfig::default();
        let short = AudioBuffer::new(vec![0.0; 399], SAMPLE_RATE);
        assert_eq!(
            spectrogram(&short, &cfg),
            Err(FeatureError::TooShort {
                samples: 399,
                window: 400
            })
        );
        let wrong = AudioBuffer::new(vec![0.0; 4000], 8000);
        assert!(matches!(
            spectrogram(&wrong, &cfg),
            Err(FeatureError::WrongSampleRate { .. })
        ));
        let bad = FeatureConfig {
            fft_size: 300,
            ..cfg
        };
        assert!(matches!(
            spectrogram(&wrong, &bad),
            Err(FeatureError::InvalidConfig(_))
        ));
        let small = FeatureConfig {
            fft_size: 256,
            ..cfg
        };
        assert!(small.validate().is_err());
        let hop = FeatureConfig { hop_ms: 30, ..cfg };
        assert!(hop.validate().is_err());
    }

    #[test]
    fn context_zero_is_identity() {
        let m = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(add_context(&m, 0).unwrap(), m);
    }

    #[test]
    fn context_padding() {
        let m = Matrix::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = add_context(&m, 1).unwrap();
        assert_eq!(c.cols(), 6);
        assert_eq!(c.row(0), &[0.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(c.row(1), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(c.row(2), &[3.0, 4.0, 5.0, 6.0, 0.0, 0.0]);
        let wide = add_context(&Matrix::zeros(4, 3), 9).unwrap();
        assert_eq!((wide.rows(), wide.cols()), (4, 57));
        assert_eq!(FeatureConfig::default().feature_dim(), 494);
    }

    #[test]
    fn normalize_examples() {
        let m = Matrix::new(3, 1, vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(normalize(&m).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
        let m = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let n = normalize(&m).unwrap();
        assert!((n.get(0, 0) + 1.0).abs() < 1e-7);
        assert!((n.get(1, 0) - 1.0).abs() < 1e-7);
        assert!(normalize(&Matrix::zeros(0, 3)).is_err());
    }

    proptest! {
        #[test]
        fn frame_count_law(n in 400usize..6000, hop_ms in 1u32..=25) {
            let cfg = FeatureConfig { n_mel: 8, hop_ms, ..Default::default() };
            let buf = AudioBuffer::new(vec![0.1; n], SAMPLE_RATE);
            let spec = spectrogram(&buf, &cfg).unwrap();
            let hop = hop_ms as usize * 16;
            prop_assert_eq!(spec.rows(), 1 + (n - 400) / hop);
        }

        #[test]
        fn spectrogram_is_finite(xs in prop::collection::vec(-1.0f32..1.0, 400..1200)) {
            let buf = AudioBuffer::new(xs, SAMPLE_RATE);
            for n_mel in [0usize, 13] {
                let cfg = FeatureConfig { n_mel, ..Default::default() };
                prop_assert!(spectrogram(&buf, &cfg).unwrap().is_finite());
            }
        }

        #[test]
        fn context_is_linear(
            a in prop::collection::vec(-5.0f32..5.0, 12),
            b in prop::collection::vec(-5.0f32..5.0, 12),
            c in 0usize..4,
        ) {
            let ma = Matrix::new(4, 3, a.clone()).unwrap();
            let mb = Matrix::new(4, 3, b.clone()).unwrap();
            let sum: Vec<f32> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let ms = add_context(&Matrix::new(4, 3, sum).unwrap(), c).unwrap();
            let ca = add_context(&ma, c).unwrap();
            let cb = add_context(&mb, c).unwrap();
            for i in 0..ms.as_slice().len() {
                prop_assert_eq!(ms.as_slice()[i], ca.as_slice()[i] + cb.as_slice()[i]);
            }
        }

        #[test]
        fn normalized_columns_are_centred(xs in prop::collection::vec(-50.0f32..50.0, 6..60)) {
            let rows = xs.len() / 3;
            let m = Matrix::new(rows, 3, xs[..rows * 3].to_vec()).unwrap();
            let n = normalize(&m).unwrap();
            for c in 0..3 {
                let mean: f64 = (0..rows).map(|t| n.get(t, c) as f64).sum::<f64>() / rows as f64;
                prop_assert!(mean.abs() < 1e-6);
            }
        }

        #[test]
        fn resample_round_trip_keeps_constant(v in -1.0f32..1.0, n in 1usize..500, r in 4000u32..24000) {
            let buf = AudioBuffer::new(vec![v; n], r);
            let up = resample(&buf, 2 * r).unwrap();
            let back = resample(&up, r).unwrap();
            prop_assert!(back.samples().iter().all(|&s| s == v));
        }
    }
}
