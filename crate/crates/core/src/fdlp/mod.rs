//! Frequency-domain linear prediction per sub-band and the modulation
//! coefficients derived from it.
//!
//! A window of signal is taken to the cosine-transform domain, weighted by
//! each cochlear band and modelled by linear prediction. The resulting
//! all-pole model's response over the transform index traces the band's
//! temporal power envelope across the window. Its cepstrum, obtained by
//! recursion on the LP coefficients, is the cosine series of the log
//! envelope; modulation coefficients at `1 / T` Hz spacing follow by a
//! closed-form Hann-windowed projection of that series.

mod cepstrum;
mod lpc;

use std::f64::consts::PI;

use num_complex::Complex64;

pub use cepstrum::{envelope_from_model, lpc_to_cepstrum, modulation_via_envelope};
pub use lpc::{levinson_durbin, subband_autocorrelation, AllPoleModel};

pub use cepstrum::{modulation_from_cepstrum, power_cepstrum};
use lpc::AutocorrPlan;

use crate::dsp::{AnalysisConfig, AudioBuffer, CochlearFilterbank, CosineTransform};
use crate::error::{Error, Result};

/// Cepstral terms computed past `2 * n_mod` for the sine projection, in
/// multiples of the model order.
const CEPSTRUM_TAIL_ORDERS: usize = 16;

/// Complex modulation coefficients of one band.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpectrum {
    pub coeffs: Vec<Complex64>,
    /// Bin spacing, `1 / T`.
    pub resolution_hz: f64,
    /// Resolution after the Hann window, `2 / T`.
    pub effective_resolution_hz: f64,
    pub band_index: usize,
}

impl ModulationSpectrum {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.coeffs.iter().map(|z| z.norm()).collect()
    }

    pub fn frequencies_hz(&self) -> Vec<f64> {
        (0..self.coeffs.len())
            .map(|n| n as f64 * self.resolution_hz)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }
}

/// Per-band results for one analysis window; `None` marks a degenerate band.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameModulations {
    pub bands: Vec<Option<ModulationSpectrum>>,
}

impl FrameModulations {
    pub fn degenerate_bands(&self) -> Vec<usize> {
        self.bands
            .iter()
            .enumerate()
            .filter_map(|(b, m)| m.is_none().then_some(b))
            .collect()
    }
}

/// Multiplies bin `n` by its modulation frequency `n * resolution_hz`.
pub fn one_over_f_compensate(ms: &ModulationSpectrum) -> ModulationSpectrum {
    let coeffs = ms
        .coeffs
        .iter()
        .enumerate()
        .map(|(n, z)| z * (n as f64 * ms.resolution_hz))
        .collect();
    ModulationSpectrum {
        coeffs,
        ..ms.clone()
    }
}

/// `(1 + depth cos(2 pi f_m t)) cos(2 pi f_c t)`.
pub fn am_test_signal(
    carrier_hz: f64,
    mod_hz: f64,
    depth: f64,
    duration_s: f64,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    if !(0.0..1.0).contains(&depth) {
        return Err(Error::invalid(format!("depth {depth} outside [0, 1)")));
    }
    let nyquist = sample_rate as f64 / 2.0;
    if !(mod_hz >= 0.0 && mod_hz < carrier_hz && carrier_hz < nyquist) {
        return Err(Error::invalid(format!(
            "need 0 <= mod ({mod_hz}) < carrier ({carrier_hz}) < Nyquist ({nyquist})"
        )));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let n = (duration_s * sample_rate as f64).round() as usize;
    let fs = sample_rate as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (1.0 + depth * (2.0 * PI * mod_hz * t).cos()) * (2.0 * PI * carrier_hz * t).cos()
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

/// Reusable per-window FDLP analysis for a fixed filterbank and configuration.
///
/// Shares no mutable state; one analyzer may serve many threads.
#[derive(Clone)]
pub struct FdlpAnalyzer {
    cfg: AnalysisConfig,
    fb: CochlearFilterbank,
    dct: CosineTransform,
    autocorr: Vec<AutocorrPlan>,
    window: usize,
}

impl std::fmt::Debug for FdlpAnalyzer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FdlpAnalyzer")
            .field("cfg", &self.cfg)
            .field("window", &self.window)
            .field("n_bands", &self.fb.n_bands())
            .finish()
    }
}

impl FdlpAnalyzer {
    pub fn new(fb: CochlearFilterbank, cfg: AnalysisConfig) -> Result<Self> {
        let sr = fb.sample_rate();
        cfg.validate(sr)?;
        let window = cfg.window_samples(sr);
        if fb.n_coeffs() != window {
            return Err(Error::Dimension {
                expected: format!("filterbank over {window} coefficients"),
                found: format!("{}", fb.n_coeffs()),
            });
        }
        let autocorr = fb
            .bands()
            .iter()
            .map(|b| AutocorrPlan::new(b.weights.len(), cfg.model_order))
            .collect();
        Ok(Self {
            dct: CosineTransform::new(window)?,
            cfg,
            fb,
            autocorr,
            window,
        })
    }

    pub fn config(&self) -> &AnalysisConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &CochlearFilterbank {
        &self.fb
    }

    pub fn window_samples(&self) -> usize {
        self.window
    }

    /// Cepstral length used for the modulation projection.
    pub fn cepstrum_len(&self) -> usize {
        2 * self.cfg.n_mod_coeffs + 1 + CEPSTRUM_TAIL_ORDERS * self.cfg.model_order
    }

    fn preprocess(&self, frame: &[f64]) -> Vec<f64> {
        let mut x = frame.to_vec();
        if self.cfg.remove_dc {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            x.iter_mut().for_each(|v| *v -= mean);
        }
        if let Some(alpha) = self.cfg.pre_emphasis {
            for i in (1..x.len()).rev() {
                x[i] -= alpha * x[i - 1];
            }
        }
        x
    }

    /// All-pole model of every band for one window; `None` where the band is
    /// degenerate (no energy, or the recursion hit the unit circle).
    pub fn band_models(&self, frame: &[f64]) -> Result<Vec<Option<AllPoleModel>>> {
        if frame.len() != self.window {
            return Err(Error::Dimension {
                expected: format!("frame of {} samples", self.window),
                found: format!("{}", frame.len()),
            });
        }
        let x = self.preprocess(frame);
        let coeffs = self.dct.forward(&x)?;
        let mean_power = coeffs.iter().map(|v| v * v).sum::<f64>() / coeffs.len() as f64;
        let floor = self
            .cfg
            .noise_floor_db
            .map(|db| 10f64.powf(db / 10.0) * mean_power)
            .unwrap_or(0.0);

        let models = self
            .fb
            .bands()
            .iter()
            .zip(&self.autocorr)
            .enumerate()
            .map(|(b, (band, plan))| {
                let y: Vec<f64> = coeffs[band.support()]
                    .iter()
                    .zip(&band.weights)
                    .map(|(x, w)| x * w)
                    .collect();
                let mut r = plan.compute(&y);
                r[0] += floor * band.weights.iter().map(|w| w * w).sum::<f64>();
                if !(r[0] > 0.0) {
                    return None;
                }
                levinson_durbin(&r, self.cfg.model_order)
                    .ok()
                    .map(|m| m.with_band(b))
            })
            .collect();
        Ok(models)
    }

    /// Power cepstra (`len` terms) of every band.
    pub fn band_cepstra(&self, frame: &[f64], len: usize) -> Result<Vec<Option<Vec<f64>>>> {
        Ok(self
            .band_models(frame)?
            .into_iter()
            .map(|m| m.map(|m| power_cepstrum(&m, len)))
            .collect())
    }

    /// Modulation spectrum of every band of one (unwindowed) analysis window.
    pub fn modulation_spectrum(&self, frame: &[f64]) -> Result<FrameModulations> {
        let n_mod = self.cfg.n_mod_coeffs;
        let len = self.cepstrum_len();
        let resolution = self.cfg.resolution_hz();
        let bands = self
            .band_models(frame)?
            .into_iter()
            .enumerate()
            .map(|(b, m)| {
                m.map(|m| ModulationSpectrum {
                    coeffs: modulation_from_cepstrum(&power_cepstrum(&m, len), n_mod),
                    resolution_hz: resolution,
                    effective_resolution_hz: 2.0 * resolution,
                    band_index: b,
                })
            })
            .collect();
        Ok(FrameModulations { bands })
    }
}

/// One-shot form of [`FdlpAnalyzer::modulation_spectrum`].
pub fn modulation_spectrum(
    frame: &[f64],
    fb: &CochlearFilterbank,
    cfg: &AnalysisConfig,
) -> Result<FrameModulations> {
    FdlpAnalyzer::new(fb.clone(), cfg.clone())?.modulation_spectrum(frame)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::design_filterbank;
    use approx::assert_abs_diff_eq;

    fn analyzer(sr: u32, n_bands: usize) -> FdlpAnalyzer {
        let cfg = AnalysisConfig {
            n_bands,
            ..AnalysisConfig::default()
        };
        let fb = design_filterbank(n_bands, cfg.window_samples(sr), sr).unwrap();
        FdlpAnalyzer::new(fb, cfg).unwrap()
    }

    fn band_containing(fb: &CochlearFilterbank, hz: f64) -> usize {
        (0..fb.n_bands())
            .max_by(|&a, &b| {
                fb.weight_at_hz(a, hz)
                    .partial_cmp(&fb.weight_at_hz(b, hz))
                    .unwrap()
            })
            .unwrap()
    }

    #[test]
    fn am_signal_closed_form() {
        let s = am_test_signal(1000.0, 2.0, 0.5, 0.1, 16000).unwrap();
        assert_abs_diff_eq!(s.samples()[0], 1.5);
        let tone = am_test_signal(1000.0, 2.0, 0.0, 0.01, 16000).unwrap();
        for (i, v) in tone.samples().iter().enumerate() {
            let t = i as f64 / 16000.0;
            assert_abs_diff_eq!(*v, (2.0 * PI * 1000.0 * t).cos(), epsilon = 1e-12);
        }
        assert!(am_test_signal(1000.0, 2.0, 1.0, 1.0, 16000).is_err());
        assert!(am_test_signal(1000.0, 2000.0, 0.5, 1.0, 16000).is_err());
        assert!(am_test_signal(9000.0, 2.0, 0.5, 1.0, 16000).is_err());
    }

    #[test]
    fn am_depth_recovered_in_band() {
        let an = analyzer(16000, 20);
        let sig = am_test_signal(1000.0, 2.0, 0.5, 1.5, 16000).unwrap();
        let out = an.modulation_spectrum(sig.samples()).unwrap();
        let b = band_containing(an.filterbank(), 1000.0);
        let mags = out.bands[b].as_ref().unwrap().magnitudes();
        assert!((mags[3] - 0.5).abs() < 0.1, "2 Hz magnitude {}", mags[3]);

        let far = band_containing(an.filterbank(), 5000.0);
        let mags = out.bands[far].as_ref().unwrap().magnitudes();
        assert!(mags[3] < 0.05, "far band 2 Hz magnitude {}", mags[3]);
    }

    #[test]
    fn pure_tone_has_no_modulation() {
        let an = analyzer(16000, 20);
        let sig = am_test_signal(1000.0, 2.0, 0.0, 1.5, 16000).unwrap();
        let out = an.modulation_spectrum(sig.samples()).unwrap();
        let b = band_containing(an.filterbank(), 1000.0);
        let mags = out.bands[b].as_ref().unwrap().magnitudes();
        assert!(mags[1..].iter().all(|&m| m < 0.01), "{mags:?}");
    }

    #[test]
    fn silent_frame_is_degenerate() {
        let an = analyzer(8000, 4);
        let out = an.modulation_spectrum(&vec![0.0; 12000]).unwrap();
        assert_eq!(out.degenerate_bands(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn compensation() {
        let ms = ModulationSpectrum {
            coeffs: vec![Complex64::new(1.0, 0.0); 6],
            resolution_hz: 0.67,
            effective_resolution_hz: 1.34,
            band_index: 0,
        };
        let comp = one_over_f_compensate(&ms);
        for (n, m) in comp.magnitudes().iter().enumerate() {
            assert_abs_diff_eq!(*m, 0.67 * n as f64, epsilon = 1e-15);
        }
        let ms = ModulationSpectrum {
            coeffs: (0..6).map(|n| Complex64::from_polar(1.0 + n as f64, 0.3 * n as f64)).collect(),
            ..ms
        };
        let comp = one_over_f_compensate(&ms);
        assert_eq!(comp.coeffs[0].norm(), 0.0);
        for n in 1..6 {
            let back = comp.coeffs[n] / (n as f64 * ms.resolution_hz);
            assert_abs_diff_eq!(back.re, ms.coeffs[n].re, epsilon = 1e-12);
            assert_abs_diff_eq!(back.im, ms.coeffs[n].im, epsilon = 1e-12);
        }
    }

    #[test]
    fn frame_length_checked() {
        let an = analyzer(8000, 4);
        assert!(an.modulation_spectrum(&[0.0; 100]).is_err());
    }
}
