//! Modulation-weighted FDLP spectrogram and the learnable weights applied
//! to it.
//!
//! Each band's cepstrum is split into modulation nodes: node 0 holds `c[0]`
//! and node `n >= 1` holds the pair `c[2n - 1], c[2n]`, which together carry
//! the envelope's content around `n / T` Hz. The even term sets the real part
//! of the node's modulation coefficient and the odd term the imaginary part,
//! so magnitude mode scales both with one weight while real-imag mode gives
//! each its own. Node 0 only sets the mean log level, which the classifier
//! standardizes away, so its weight is stored but never applied.

mod train;
mod weights_io;

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

pub use train::{
    train_weights, weight_gradient_check, Classifier, TrainOutput, TrainSchedule, Trainer,
};
pub use weights_io::{load_weights, load_weights_for, save_weights, WEIGHT_FILE_VERSION};

use crate::dsp::{segment_at, AnalysisConfig, AudioBuffer, CochlearFilterbank};
use crate::error::{Error, Result};
use crate::fdlp::FdlpAnalyzer;

/// Spectrogram frame rate.
pub const FRAME_RATE_HZ: f64 = 100.0;
/// Envelope samples per spectrogram frame.
const SUBSAMPLES: usize = 8;
/// Floor applied to frame energies before the log.
const ENERGY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    Magnitude,
    RealImag,
}

impl WeightMode {
    pub fn params_per_coeff(self) -> usize {
        match self {
            WeightMode::Magnitude => 1,
            WeightMode::RealImag => 2,
        }
    }
}

/// Per-band, per-node modulation weights stored as log-parameters, so every
/// effective weight `exp(param)` is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationWeights {
    mode: WeightMode,
    n_bands: usize,
    n_coeffs: usize,
    /// Band-major; real-imag mode interleaves `(re, im)` per node.
    params: Vec<f64>,
}

impl ModulationWeights {
    /// All effective weights 1.
    pub fn ones(mode: WeightMode, n_bands: usize, n_coeffs: usize) -> Result<Self> {
        let n = n_bands * n_coeffs * mode.params_per_coeff();
        Self::from_params(mode, n_bands, n_coeffs, vec![0.0; n])
    }

    pub fn from_params(
        mode: WeightMode,
        n_bands: usize,
        n_coeffs: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if n_bands == 0 || n_coeffs == 0 {
            return Err(Error::invalid("weights need at least one band and coefficient"));
        }
        let expected = n_bands * n_coeffs * mode.params_per_coeff();
        if params.len() != expected {
            return Err(Error::Dimension {
                expected: format!("{expected} parameters"),
                found: format!("{}", params.len()),
            });
        }
        // -inf is allowed: it is an effective weight of exactly zero
        if params.iter().any(|p| p.is_nan() || *p == f64::INFINITY) {
            return Err(Error::invalid("weight parameters must be finite or -inf"));
        }
        Ok(Self {
            mode,
            n_bands,
            n_coeffs,
            params,
        })
    }

    /// From effective (nonnegative) weights in parameter layout.
    pub fn from_effective(
        mode: WeightMode,
        n_bands: usize,
        n_coeffs: usize,
        weights: &[f64],
    ) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::invalid("effective weights must be finite and nonnegative"));
        }
        Self::from_params(mode, n_bands, n_coeffs, weights.iter().map(|w| w.ln()).collect())
    }

    pub fn mode(&self) -> WeightMode {
        self.mode
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn n_coeffs(&self) -> usize {
        self.n_coeffs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `exp(params)` in parameter layout.
    pub fn effective(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.exp()).collect()
    }

    /// Effective `(real, imaginary)` weights of node `n` in band `b`; equal
    /// in magnitude mode.
    pub fn node(&self, b: usize, n: usize) -> (f64, f64) {
        let k = self.mode.params_per_coeff();
        let i = (b * self.n_coeffs + n) * k;
        let re = self.params[i].exp();
        let im = self.params[i + k - 1].exp();
        (re, im)
    }

    /// Effective real-part weights of band `b`, one per node.
    pub fn band_real(&self, b: usize) -> Vec<f64> {
        (0..self.n_coeffs).map(|n| self.node(b, n).0).collect()
    }

    pub fn check_dims(&self, n_bands: usize, n_coeffs: usize) -> Result<()> {
        if (self.n_bands, self.n_coeffs) != (n_bands, n_coeffs) {
            return Err(Error::Dimension {
                expected: format!("{n_bands} bands x {n_coeffs} coefficients"),
                found: format!("{} bands x {} coefficients", self.n_bands, self.n_coeffs),
            });
        }
        Ok(())
    }

    /// Applies band `b`'s weights to a cepstrum of `2 * n_coeffs - 1` terms;
    /// `c[0]` passes through.
    pub(crate) fn weight_cepstrum(&self, b: usize, c: &[f64]) -> Vec<f64> {
        debug_assert_eq!(c.len(), 2 * self.n_coeffs - 1);
        let mut out = Vec::with_capacity(c.len());
        out.push(c[0]);
        for n in 1..self.n_coeffs {
            let (re, im) = self.node(b, n);
            out.push(im * c[2 * n - 1]);
            out.push(re * c[2 * n]);
        }
        out
    }

    /// Chain rule from `dL/d(weighted cepstrum)` to the parameters of band
    /// `b`, added into `grad` (parameter layout).
    pub(crate) fn accumulate_grad(&self, b: usize, c: &[f64], dc: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(dc.len(), c.len());
        let k = self.mode.params_per_coeff();
        let base = b * self.n_coeffs * k;
        for n in 1..self.n_coeffs {
            let (re, im) = self.node(b, n);
            let g_re = re * c[2 * n] * dc[2 * n];
            let g_im = im * c[2 * n - 1] * dc[2 * n - 1];
            let i = base + n * k;
            match self.mode {
                WeightMode::Magnitude => grad[i] += g_re + g_im,
                WeightMode::RealImag => {
                    grad[i] += g_re;
                    grad[i + 1] += g_im;
                }
            }
        }
    }
}

impl Serialize for ModulationWeights {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ModulationWeights", 4)?;
        st.serialize_field("mode", &self.mode)?;
        st.serialize_field("n_bands", &self.n_bands)?;
        st.serialize_field("n_coeffs", &self.n_coeffs)?;
        st.serialize_field("effective", &self.effective())?;
        st.end()
    }
}

/// Frames x bands log energies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdlpSpectrogram {
    pub frames: Vec<Vec<f64>>,
    pub frame_rate_hz: f64,
    pub band_centers_hz: Vec<f64>,
}

impl FdlpSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Turns a (weighted) cepstrum into per-frame log energies over one block,
/// and carries gradients back.
#[derive(Clone)]
pub(crate) struct EnvelopeSynth {
    frames_per_block: usize,
    grid: usize,
    n_ceps: usize,
    fft: Arc<dyn Fft<f64>>,
}

/// Forward state of one band over one block.
pub(crate) struct BlockEnvelope {
    pub(crate) log_energy: Vec<f64>,
    power: Vec<f64>,
    energy: Vec<f64>,
}

impl EnvelopeSynth {
    fn new(frames_per_block: usize, n_ceps: usize) -> Self {
        let grid = frames_per_block * SUBSAMPLES;
        let fft = FftPlanner::new().plan_fft_forward(2 * grid);
        Self {
            frames_per_block,
            grid,
            n_ceps,
            fft,
        }
    }

    /// `sum_m z[m] cos(pi m j / grid)` for `j < grid`.
    fn cosine_sum(&self, z: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); 2 * self.grid];
        for (b, &v) in buf.iter_mut().zip(z) {
            b.re = v;
        }
        self.fft.process(&mut buf);
        buf[..self.grid].iter().map(|v| v.re).collect()
    }

    pub(crate) fn forward(&self, ceps: &[f64]) -> BlockEnvelope {
        let power: Vec<f64> = self.cosine_sum(ceps).into_iter().map(f64::exp).collect();
        let energy: Vec<f64> = power
            .chunks(SUBSAMPLES)
            .map(|c| c.iter().sum::<f64>() / SUBSAMPLES as f64)
            .collect();
        let log_energy = energy.iter().map(|e| e.max(ENERGY_FLOOR).ln()).collect();
        BlockEnvelope {
            log_energy,
            power,
            energy,
        }
    }

    /// `dL/dceps` given `dL/dlog_energy` for every frame of the block.
    pub(crate) fn backward(&self, env: &BlockEnvelope, grad_frames: &[f64]) -> Vec<f64> {
        let mut q = vec![0.0; self.grid];
        for (f, &g) in grad_frames.iter().enumerate() {
            let e = env.energy[f];
            if g == 0.0 || !(e > ENERGY_FLOOR) {
                continue;
            }
            let s = g / (SUBSAMPLES as f64 * e);
            let span = f * SUBSAMPLES..(f + 1) * SUBSAMPLES;
            q[span.clone()]
                .iter_mut()
                .zip(&env.power[span])
                .for_each(|(q, p)| *q = s * p);
        }
        let mut d = self.cosine_sum(&q);
        d.truncate(self.n_ceps);
        d
    }

    fn floor_block(&self) -> BlockEnvelope {
        BlockEnvelope {
            log_energy: vec![ENERGY_FLOOR.ln(); self.frames_per_block],
            power: vec![0.0; self.grid],
            energy: vec![0.0; self.frames_per_block],
        }
    }
}

/// Unweighted band cepstra of an utterance on non-overlapping windows.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceCepstra {
    /// `blocks x bands`; `None` for degenerate bands.
    pub(crate) blocks: Vec<Vec<Option<Vec<f64>>>>,
    pub(crate) n_frames: usize,
}

impl UtteranceCepstra {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }
}

/// FDLP spectrogram extraction for a fixed filterbank and configuration.
///
/// The window is tiled without overlap; `cfg.hop_s` is not used here.
#[derive(Clone)]
pub struct SpectrogramExtractor {
    analyzer: FdlpAnalyzer,
    synth: EnvelopeSynth,
}

impl std::fmt::Debug for SpectrogramExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectrogramExtractor")
            .field("analyzer", &self.analyzer)
            .field("frames_per_block", &self.synth.frames_per_block)
            .finish()
    }
}

impl SpectrogramExtractor {
    pub fn new(fb: &CochlearFilterbank, cfg: &AnalysisConfig) -> Result<Self> {
        let frames = cfg.window_len_s * FRAME_RATE_HZ;
        if (frames - frames.round()).abs() > 1e-9 || frames.round() < 1.0 {
            return Err(Error::invalid(format!(
                "window of {} s is not a whole number of {} ms frames",
                cfg.window_len_s,
                1000.0 / FRAME_RATE_HZ
            )));
        }
        let analyzer = FdlpAnalyzer::new(fb.clone(), cfg.clone())?;
        let synth = EnvelopeSynth::new(frames.round() as usize, 2 * cfg.n_mod_coeffs - 1);
        Ok(Self { analyzer, synth })
    }

    pub fn n_bands(&self) -> usize {
        self.analyzer.filterbank().n_bands()
    }

    pub fn n_coeffs(&self) -> usize {
        self.analyzer.config().n_mod_coeffs
    }

    pub fn filterbank(&self) -> &CochlearFilterbank {
        self.analyzer.filterbank()
    }

    pub(crate) fn synth(&self) -> &EnvelopeSynth {
        &self.synth
    }

    pub fn frames_per_block(&self) -> usize {
        self.synth.frames_per_block
    }

    /// Runs the FDLP stage, which does not depend on the weights.
    pub fn cepstra(&self, audio: &AudioBuffer) -> Result<UtteranceCepstra> {
        let sr = self.filterbank().sample_rate();
        if audio.sample_rate() != sr {
            return Err(Error::invalid(format!(
                "audio at {} Hz, filterbank designed for {sr} Hz",
                audio.sample_rate()
            )));
        }
        let n_frames = (audio.duration_s() * FRAME_RATE_HZ).floor() as usize;
        if n_frames == 0 {
            return Err(Error::invalid("audio is shorter than one frame"));
        }
        let window = self.analyzer.window_samples();
        let n_blocks = n_frames.div_ceil(self.synth.frames_per_block);
        let blocks = (0..n_blocks)
            .map(|k| {
                let seg = segment_at(audio.samples(), k * window, window);
                self.analyzer.band_cepstra(&seg, self.synth.n_ceps)
            })
            .collect::<Result<_>>()?;
        Ok(UtteranceCepstra { blocks, n_frames })
    }

    /// Forward envelopes of every block and band.
    pub(crate) fn envelopes(
        &self,
        ceps: &UtteranceCepstra,
        w: &ModulationWeights,
    ) -> Vec<Vec<BlockEnvelope>> {
        ceps.blocks
            .iter()
            .map(|bands| {
                bands
                    .iter()
                    .enumerate()
                    .map(|(b, c)| match c {
                        Some(c) => self.synth.forward(&w.weight_cepstrum(b, c)),
                        None => self.synth.floor_block(),
                    })
                    .collect()
            })
            .collect()
    }

    pub fn spectrogram(
        &self,
        ceps: &UtteranceCepstra,
        w: &ModulationWeights,
    ) -> Result<FdlpSpectrogram> {
        w.check_dims(self.n_bands(), self.n_coeffs())?;
        let env = self.envelopes(ceps, w);
        Ok(FdlpSpectrogram {
            frames: assemble_frames(&env, ceps.n_frames, self.synth.frames_per_block),
            frame_rate_hz: FRAME_RATE_HZ,
            band_centers_hz: self.filterbank().centers_hz(),
        })
    }
}

pub(crate) fn assemble_frames(
    env: &[Vec<BlockEnvelope>],
    n_frames: usize,
    frames_per_block: usize,
) -> Vec<Vec<f64>> {
    (0..n_frames)
        .map(|f| {
            let (k, i) = (f / frames_per_block, f % frames_per_block);
            env[k].iter().map(|e| e.log_energy[i]).collect()
        })
        .collect()
}

/// Log-energy spectrogram of `audio` at 100 frames per second with the
/// modulation weights applied.
pub fn fdlp_spectrogram(
    audio: &AudioBuffer,
    fb: &CochlearFilterbank,
    w: &ModulationWeights,
    cfg: &AnalysisConfig,
) -> Result<FdlpSpectrogram> {
    w.check_dims(fb.n_bands(), cfg.n_mod_coeffs)?;
    let ex = SpectrogramExtractor::new(fb, cfg)?;
    ex.spectrogram(&ex.cepstra(audio)?, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::design_filterbank;
    use crate::fdlp::am_test_signal;

    fn setup() -> (CochlearFilterbank, AnalysisConfig, AudioBuffer) {
        let cfg = AnalysisConfig {
            n_bands: 6,
            model_order: 40,
            n_mod_coeffs: 40,
            ..AnalysisConfig::default()
        };
        let fb = design_filterbank(6, cfg.window_samples(8000), 8000).unwrap();
        let audio = am_test_signal(600.0, 4.0, 0.5, 2.0, 8000).unwrap();
        (fb, cfg, audio)
    }

    #[test]
    fn layout_and_positivity() {
        let w = ModulationWeights::ones(WeightMode::RealImag, 3, 4).unwrap();
        assert_eq!(w.params().len(), 24);
        assert_eq!(w.node(2, 3), (1.0, 1.0));
        let p: Vec<f64> = (0..12).map(|i| -40.0 + i as f64).collect();
        let w = ModulationWeights::from_params(WeightMode::Magnitude, 3, 4, p).unwrap();
        assert!(w.effective().iter().all(|&v| v > 0.0));
        assert!(ModulationWeights::from_params(WeightMode::Magnitude, 3, 4, vec![0.0; 11]).is_err());
    }

    #[test]
    fn spectrogram_shape_and_identity() {
        let (fb, cfg, audio) = setup();
        let w = ModulationWeights::ones(WeightMode::Magnitude, 6, 40).unwrap();
        let s = fdlp_spectrogram(&audio, &fb, &w, &cfg).unwrap();
        assert_eq!(s.n_frames(), 200);
        assert!(s.frames.iter().flatten().all(|v| v.is_finite()));
        let wri = ModulationWeights::ones(WeightMode::RealImag, 6, 40).unwrap();
        assert_eq!(s, fdlp_spectrogram(&audio, &fb, &wri, &cfg).unwrap());
    }

    #[test]
    fn only_c0_gives_flat_blocks() {
        let (fb, cfg, audio) = setup();
        let mut eff = vec![0.0; 6 * 40];
        for b in 0..6 {
            eff[b * 40] = 1.0;
        }
        let w = ModulationWeights::from_effective(WeightMode::Magnitude, 6, 40, &eff).unwrap();
        let s = fdlp_spectrogram(&audio, &fb, &w, &cfg).unwrap();
        for block in s.frames.chunks(150) {
            for row in block {
                for (a, b) in row.iter().zip(&block[0]) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let (fb, cfg, audio) = setup();
        let w = ModulationWeights::ones(WeightMode::Magnitude, 5, 40).unwrap();
        assert!(matches!(
            fdlp_spectrogram(&audio, &fb, &w, &cfg),
            Err(Error::Dimension { .. })
        ));
    }
}
