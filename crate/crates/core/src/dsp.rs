//! Signal containers, framing, the orthonormal cosine transform and the
//! Bark-spaced cochlear filterbank shared by the analysis stages.

use std::f64::consts::PI;
use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("audio buffer is empty"));
        }
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
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

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Parameters of the long-window FDLP analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    /// Analysis window length in seconds.
    pub window_len_s: f64,
    /// Hop between analysis windows in seconds.
    pub hop_s: f64,
    /// Linear prediction order per sub-band.
    pub model_order: usize,
    /// Number of modulation coefficients kept per band.
    pub n_mod_coeffs: usize,
    pub n_bands: usize,
    /// White-noise floor added to every band's zero-lag autocorrelation,
    /// relative to the mean power of the window. `None` disables it.
    pub noise_floor_db: Option<f64>,
    /// Subtract the window mean before analysis.
    pub remove_dc: bool,
    /// First-order pre-emphasis coefficient applied per window.
    pub pre_emphasis: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_len_s: 1.5,
            hop_s: 0.01,
            model_order: 80,
            n_mod_coeffs: 80,
            n_bands: 20,
            noise_floor_db: Some(-40.0),
            remove_dc: false,
            pre_emphasis: None,
        }
    }
}

impl AnalysisConfig {
    pub fn window_samples(&self, sample_rate: u32) -> usize {
        (self.window_len_s * sample_rate as f64).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        ((self.hop_s * sample_rate as f64).round() as usize).max(1)
    }

    /// Modulation-frequency spacing of the analysis, `1 / window_len_s`.
    pub fn resolution_hz(&self) -> f64 {
        1.0 / self.window_len_s
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(self.window_len_s > 0.0 && self.window_len_s.is_finite()) {
            return Err(Error::invalid("window length must be positive"));
        }
        if !(self.hop_s > 0.0 && self.hop_s.is_finite()) {
            return Err(Error::invalid("hop must be positive"));
        }
        if self.model_order == 0 || self.n_mod_coeffs == 0 || self.n_bands == 0 {
            return Err(Error::invalid(
                "model order, modulation coefficients and bands must be positive",
            ));
        }
        if self.window_samples(sample_rate) < 2 * self.model_order {
            return Err(Error::invalid(format!(
                "window of {} samples is shorter than twice the model order {}",
                self.window_samples(sample_rate),
                self.model_order
            )));
        }
        if self.n_mod_coeffs > self.model_order {
            return Err(Error::invalid(format!(
                "n_mod_coeffs {} exceeds model order {}",
                self.n_mod_coeffs, self.model_order
            )));
        }
        if let Some(alpha) = self.pre_emphasis {
            if !(0.0..1.0).contains(&alpha) {
                return Err(Error::invalid("pre-emphasis must lie in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// Symmetric Hann window, `0.5 - 0.5 cos(2 pi i / (n - 1))`.
pub fn hann_window(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid(format!("Hann window needs n >= 2, got {n}")));
    }
    let denom = (n - 1) as f64;
    Ok((0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / denom).cos())
        .collect())
}

/// Start offsets of every analysis window. A signal shorter than one window
/// still yields one (zero-padded) window.
pub fn frame_starts(len: usize, window: usize, hop: usize) -> Vec<usize> {
    let extra = len.saturating_sub(window);
    let count = 1 + extra.div_ceil(hop);
    (0..count).map(|i| i * hop).collect()
}

/// Copies `window` samples starting at `start`, zero-padding past the end.
pub fn segment_at(samples: &[f64], start: usize, window: usize) -> Vec<f64> {
    let mut out = vec![0.0; window];
    if start < samples.len() {
        let end = (start + window).min(samples.len());
        out[..end - start].copy_from_slice(&samples[start..end]);
    }
    out
}

/// Rectangular (unwindowed) segmentation on the configured hop grid.
pub fn segment_signal(audio: &AudioBuffer, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let sr = audio.sample_rate();
    let window = cfg.window_samples(sr);
    if window < 2 {
        return Err(Error::invalid("window is shorter than two samples"));
    }
    let hop = cfg.hop_samples(sr);
    Ok(frame_starts(audio.len(), window, hop)
        .into_iter()
        .map(|s| segment_at(audio.samples(), s, window))
        .collect())
}

/// Hann-windowed frames on the configured hop grid.
pub fn frame_signal(audio: &AudioBuffer, cfg: &AnalysisConfig) -> Result<Vec<Vec<f64>>> {
    let window = hann_window(cfg.window_samples(audio.sample_rate()))?;
    let mut frames = segment_signal(audio, cfg)?;
    for frame in &mut frames {
        frame.iter_mut().zip(&window).for_each(|(x, w)| *x *= w);
    }
    Ok(frames)
}

/// Orthonormal DCT-II and its inverse for a fixed length.
#[derive(Clone)]
pub struct CosineTransform {
    len: usize,
    plan: Arc<dyn TransformType2And3<f64>>,
}

impl std::fmt::Debug for CosineTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CosineTransform")
            .field("len", &self.len)
            .finish()
    }
}

impl CosineTransform {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::invalid("cosine transform length must be positive"));
        }
        let plan = DctPlanner::new().plan_dct2(len);
        Ok(Self { len, plan })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn forward(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.check(frame)?;
        let mut buf = frame.to_vec();
        self.plan.process_dct2(&mut buf);
        let n = self.len as f64;
        let scale = (2.0 / n).sqrt();
        buf.iter_mut().for_each(|x| *x *= scale);
        buf[0] *= std::f64::consts::FRAC_1_SQRT_2;
        Ok(buf)
    }

    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.check(coeffs)?;
        let mut buf = coeffs.to_vec();
        let n = self.len as f64;
        let scale = (2.0 / n).sqrt();
        buf.iter_mut().for_each(|x| *x *= scale);
        buf[0] *= std::f64::consts::SQRT_2;
        self.plan.process_dct3(&mut buf);
        Ok(buf)
    }

    fn check(&self, data: &[f64]) -> Result<()> {
        if data.len() != self.len {
            return Err(Error::Dimension {
                expected: format!("length {}", self.len),
                found: format!("length {}", data.len()),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite input to cosine transform"));
        }
        Ok(())
    }
}

/// Orthonormal type-II cosine transform of `frame`.
pub fn cosine_transform(frame: &[f64]) -> Result<Vec<f64>> {
    CosineTransform::new(frame.len())?.forward(frame)
}

/// Inverse of [`cosine_transform`].
pub fn inverse_cosine_transform(coeffs: &[f64]) -> Result<Vec<f64>> {
    CosineTransform::new(coeffs.len())?.inverse(coeffs)
}

/// Hz to Bark, `6 asinh(f / 600)`.
pub fn hz_to_bark(hz: f64) -> f64 {
    6.0 * (hz / 600.0).asinh()
}

pub fn bark_to_hz(bark: f64) -> f64 {
    600.0 * (bark / 6.0).sinh()
}

/// Shape parameters for [`design_filterbank_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterbankShape {
    /// Full support width of each raised-cosine bump, in Bark.
    pub width_bark: f64,
    /// Minimum fractional overlap between neighbouring bands; the width grows
    /// beyond `width_bark` when the band spacing would leave less overlap.
    pub min_overlap: f64,
}

impl Default for FilterbankShape {
    fn default() -> Self {
        Self {
            width_bark: 2.5,
            min_overlap: 0.63,
        }
    }
}

/// One band's nonzero weights, stored from `offset` onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub offset: usize,
    pub weights: Vec<f64>,
    pub center_hz: f64,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl Band {
    pub fn support(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weights.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CochlearFilterbank {
    sample_rate: u32,
    n_coeffs: usize,
    bands: Vec<Band>,
}

impl CochlearFilterbank {
    pub fn n_bands(&self) -> usize {
        self.bands.len()
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band(&self, b: usize) -> &Band {
        &self.bands[b]
    }

    pub fn centers_hz(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.center_hz).collect()
    }

    pub fn band_edges(&self) -> Vec<(f64, f64)> {
        self.bands.iter().map(|b| (b.low_hz, b.high_hz)).collect()
    }

    /// Full-length weight vector of band `b`.
    pub fn dense_weights(&self, b: usize) -> Vec<f64> {
        let band = &self.bands[b];
        let mut w = vec![0.0; self.n_coeffs];
        w[band.support()].copy_from_slice(&band.weights);
        w
    }

    /// Frequency represented by cosine-transform coefficient `k`.
    pub fn coefficient_hz(&self, k: usize) -> f64 {
        coefficient_hz(k, self.n_coeffs, self.sample_rate)
    }

    /// Weight of band `b` at an arbitrary frequency, from the same formula
    /// used to build the coefficient weights.
    pub fn weight_at_hz(&self, b: usize, hz: f64) -> f64 {
        let band = &self.bands[b];
        let center = hz_to_bark(band.center_hz);
        let half = (hz_to_bark(band.high_hz) - hz_to_bark(band.low_hz)) / 2.0;
        raised_cosine((hz_to_bark(hz) - center) / half)
    }
}

fn coefficient_hz(k: usize, n_coeffs: usize, sample_rate: u32) -> f64 {
    k as f64 * sample_rate as f64 / (2.0 * n_coeffs as f64)
}

fn raised_cosine(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 + 0.5 * (PI * d).cos()
    } else {
        0.0
    }
}

/// Bark-spaced raised-cosine filterbank over `n_coeffs` cosine-transform
/// coefficients, with the default shape.
pub fn design_filterbank(
    n_bands: usize,
    n_coeffs: usize,
    sample_rate: u32,
) -> Result<CochlearFilterbank> {
    design_filterbank_with(n_bands, n_coeffs, sample_rate, FilterbankShape::default())
}

pub fn design_filterbank_with(
    n_bands: usize,
    n_coeffs: usize,
    sample_rate: u32,
    shape: FilterbankShape,
) -> Result<CochlearFilterbank> {
    if n_bands == 0 {
        return Err(Error::invalid("filterbank needs at least one band"));
    }
    if sample_rate == 0 {
        return Err(Error::invalid("sample rate must be positive"));
    }
    if n_coeffs <= 2 * n_bands {
        return Err(Error::invalid(format!(
            "{n_bands} bands are too many for {n_coeffs} coefficients"
        )));
    }
    if !(shape.width_bark > 0.0) || !(0.0..1.0).contains(&shape.min_overlap) {
        return Err(Error::invalid("invalid filterbank shape"));
    }

    let nyquist_bark = hz_to_bark(sample_rate as f64 / 2.0);
    let spacing = nyquist_bark / (n_bands + 1) as f64;
    let width = shape.width_bark.max(spacing / (1.0 - shape.min_overlap));
    let half = width / 2.0;
    let coeff_bark: Vec<f64> = (0..n_coeffs)
        .map(|k| hz_to_bark(coefficient_hz(k, n_coeffs, sample_rate)))
        .collect();

    let mut bands = Vec::with_capacity(n_bands);
    for i in 0..n_bands {
        let center = spacing * (i + 1) as f64;
        let lo = coeff_bark.partition_point(|&z| z <= center - half);
        let hi = coeff_bark.partition_point(|&z| z < center + half);
        let weights: Vec<f64> = coeff_bark[lo..hi]
            .iter()
            .map(|&z| raised_cosine((z - center) / half))
            .collect();
        if !weights.iter().any(|&w| w > 0.5) {
            return Err(Error::invalid(format!(
                "{n_bands} bands are too many for {n_coeffs} coefficients: band {i} has no passband"
            )));
        }
        bands.push(Band {
            offset: lo,
            weights,
            center_hz: bark_to_hz(center),
            low_hz: bark_to_hz((center - half).max(0.0)),
            high_hz: bark_to_hz(center + half),
        });
    }

    let fb = CochlearFilterbank {
        sample_rate,
        n_coeffs,
        bands,
    };
    check_coverage(&fb)?;
    Ok(fb)
}

fn check_coverage(fb: &CochlearFilterbank) -> Result<()> {
    let centers = fb.centers_hz();
    if centers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("band centres are not strictly increasing"));
    }
    let first = (centers[0] * 2.0 * fb.n_coeffs as f64 / fb.sample_rate as f64).ceil() as usize;
    let last = (centers[centers.len() - 1] * 2.0 * fb.n_coeffs as f64 / fb.sample_rate as f64)
        .floor() as usize;
    let mut covered = vec![false; fb.n_coeffs];
    for band in &fb.bands {
        for (k, &w) in band.support().zip(&band.weights) {
            covered[k] |= w > 0.0;
        }
    }
    if let Some(k) = (first..=last.min(fb.n_coeffs - 1)).find(|&k| !covered[k]) {
        return Err(Error::invalid(format!(
            "filterbank leaves coefficient {k} uncovered"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hann_small_cases() {
        let w = hann_window(3).unwrap();
        assert_abs_diff_eq!(w[0], 0.0);
        assert_abs_diff_eq!(w[1], 1.0);
        assert_abs_diff_eq!(w[2], 0.0);
        let w = hann_window(5).unwrap();
        for (a, b) in w.iter().zip([0.0, 0.5, 1.0, 0.5, 0.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(hann_window(1).is_err());
        assert!(hann_window(0).is_err());
    }

    #[test]
    fn hann_coherent_gain() {
        // direct summation of the closed form: sum = (n - 1) / 2 exactly
        let n = 1024;
        let w = hann_window(n).unwrap();
        let gain = w.iter().sum::<f64>() / n as f64;
        assert_abs_diff_eq!(gain, 0.5 * (n - 1) as f64 / n as f64, epsilon = 1e-12);
        assert!((gain - 0.5).abs() < 1e-3);
    }

    fn cfg(window: f64, hop: f64) -> AnalysisConfig {
        AnalysisConfig {
            window_len_s: window,
            hop_s: hop,
            ..AnalysisConfig::default()
        }
    }

    #[test]
    fn framing_counts() {
        let audio = AudioBuffer::new(vec![0.1; 3 * 16000], 16000).unwrap();
        let frames = frame_signal(&audio, &cfg(1.5, 0.75)).unwrap();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.len() == 24000));

        let audio = AudioBuffer::new(vec![0.1; 24000], 16000).unwrap();
        assert_eq!(frame_signal(&audio, &cfg(1.5, 0.01)).unwrap().len(), 1);

        // shorter than a window: one zero-padded frame
        let audio = AudioBuffer::new(vec![1.0; 100], 16000).unwrap();
        let frames = segment_signal(&audio, &cfg(1.5, 0.01)).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0][99], 1.0);
        assert_eq!(frames[0][100], 0.0);

        // partial trailing frame is padded
        assert_eq!(frame_starts(3100, 1500, 750), vec![0, 750, 1500, 2250]);
    }

    #[test]
    fn constant_signal_frame_is_window() {
        let audio = AudioBuffer::new(vec![1.0; 1600], 1000).unwrap();
        let frames = frame_signal(&audio, &cfg(1.5, 0.1)).unwrap();
        let w = hann_window(1500).unwrap();
        assert_eq!(frames[0], w);
    }

    #[test]
    fn audio_buffer_rejects_bad_input() {
        assert!(AudioBuffer::new(vec![], 16000).is_err());
        assert!(AudioBuffer::new(vec![0.0], 0).is_err());
        assert!(AudioBuffer::new(vec![f64::NAN], 16000).is_err());
    }

    #[test]
    fn config_invariants() {
        let mut c = AnalysisConfig::default();
        assert!(c.validate(16000).is_ok());
        c.n_mod_coeffs = 81;
        assert!(c.validate(16000).is_err());
        let c = AnalysisConfig {
            window_len_s: 0.005,
            ..AnalysisConfig::default()
        };
        assert!(c.validate(16000).is_err());
    }

    #[test]
    fn dct_impulse_closed_form() {
        let y = cosine_transform(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        // orthonormal: |X[k]| = sqrt(1/n) for k = 0 and sqrt(2/n) cos(pi k / 2n) otherwise;
        // the first coefficient and the energy are fixed by the impulse
        assert_abs_diff_eq!(y[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(y.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-14);
        for (k, v) in y.iter().enumerate().skip(1) {
            let expected = (0.5f64).sqrt() * (PI * k as f64 / 8.0).cos();
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn dct_basis_vector_maps_to_single_index() {
        let n = 32;
        let k0 = 5;
        let x: Vec<f64> = (0..n)
            .map(|i| (PI * k0 as f64 * (2 * i + 1) as f64 / (2.0 * n as f64)).cos())
            .collect();
        let y = cosine_transform(&x).unwrap();
        for (k, v) in y.iter().enumerate() {
            if k == k0 {
                assert!(v.abs() > 1.0);
            } else {
                assert!(v.abs() < 1e-12, "k={k} v={v}");
            }
        }
    }

    #[test]
    fn dct_rejects_non_finite() {
        assert!(cosine_transform(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn filterbank_single_band() {
        let fb = design_filterbank(1, 1000, 16000).unwrap();
        assert_eq!(fb.n_bands(), 1);
        let w = fb.dense_weights(0);
        assert!(w.iter().all(|&x| x > 0.0));
        let peak = w.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-3);
    }

    #[test]
    fn filterbank_spacing_is_perceptual() {
        let fb = design_filterbank(20, 24000, 16000).unwrap();
        let c = fb.centers_hz();
        assert!(c.windows(2).all(|w| w[1] > w[0]));
        let below = c.iter().filter(|&&f| f < 1000.0).count() as f64 / 1000.0;
        let above = c.iter().filter(|&&f| f > 4000.0).count() as f64 / 4000.0;
        assert!(below > above, "density below 1 kHz {below} vs above 4 kHz {above}");
        assert!(c[19] < 8000.0);
    }

    #[test]
    fn filterbank_exhaustive_coverage() {
        for &(n_bands, n_coeffs, sr) in &[
            (1, 24000, 16000),
            (20, 24000, 16000),
            (50, 24000, 16000),
            (20, 12000, 8000),
        ] {
            let fb = design_filterbank(n_bands, n_coeffs, sr).unwrap();
            let mut sum = vec![0.0; n_coeffs];
            for b in 0..n_bands {
                let w = fb.dense_weights(b);
                assert!(w.iter().all(|&x| x >= 0.0));
                assert!(w.iter().any(|&x| x > 0.5));
                sum.iter_mut().zip(&w).for_each(|(s, x)| *s += x);
            }
            let c = fb.centers_hz();
            for (k, s) in sum.iter().enumerate() {
                let f = fb.coefficient_hz(k);
                if f >= c[0] && f <= c[n_bands - 1] {
                    assert!(*s > 0.0, "hole at {f} Hz for {n_bands} bands");
                }
            }
        }
    }

    #[test]
    fn filterbank_too_many_bands() {
        assert!(design_filterbank(20, 40, 16000).is_err());
        assert!(design_filterbank(20, 41, 16000).is_err());
    }
}
