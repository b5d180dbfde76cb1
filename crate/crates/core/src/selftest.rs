//! Built-in numerical checks: the carrier sweep of a 2 Hz AM tone and the
//! agreement of the two routes to modulation coefficients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::speech_like_frame;
use crate::dsp::{design_filterbank, hz_to_bark, AnalysisConfig, CochlearFilterbank};
use crate::error::Result;
use crate::fdlp::{am_test_signal, modulation_from_cepstrum, modulation_via_envelope, power_cepstrum, FdlpAnalyzer};

/// Where a carrier sits relative to the analysed band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// Band weight at least one half.
    Passband,
    /// At least `OUTSIDE_MARGIN_BARK` beyond the band's support.
    Outside,
    Transition,
}

pub const OUTSIDE_MARGIN_BARK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub carrier_hz: f64,
    pub band_weight: f64,
    pub region: Region,
    pub magnitude: f64,
}

impl SweepRow {
    /// Passband rows must read `depth +- 0.1`, outside rows at most 0.05.
    pub fn passes(&self, depth: f64) -> bool {
        match self.region {
            Region::Passband => (self.magnitude - depth).abs() <= 0.1,
            Region::Outside => self.magnitude <= 0.05,
            Region::Transition => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub band: usize,
    pub band_center_hz: f64,
    pub mod_hz: f64,
    pub depth: f64,
    pub rows: Vec<SweepRow>,
}

impl Sweep {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.passes(self.depth))
    }
}

/// Carriers from 100 Hz to 4 kHz in 50 Hz steps.
pub fn default_carriers() -> Vec<f64> {
    (2..=80).map(|k| 50.0 * k as f64).collect()
}

/// Sweeps an AM tone's carrier across the band whose centre is nearest
/// `band_hz` and reads back the magnitude at the modulation frequency.
pub fn carrier_sweep(
    cfg: &AnalysisConfig,
    sample_rate: u32,
    band_hz: f64,
    mod_hz: f64,
    depth: f64,
    carriers: &[f64],
) -> Result<Sweep> {
    let fb = design_filterbank(cfg.n_bands, cfg.window_samples(sample_rate), sample_rate)?;
    let band = nearest_band(&fb, band_hz);
    let analyzer = FdlpAnalyzer::new(fb.clone(), cfg.clone())?;
    let bin = (mod_hz * cfg.window_len_s).round() as usize;
    let (low, high) = fb.band_edges()[band];
    let rows = carriers
        .par_iter()
        .map(|&carrier| {
            let sig = am_test_signal(carrier, mod_hz, depth, cfg.window_len_s, sample_rate)?;
            let out = analyzer.modulation_spectrum(sig.samples())?;
            let magnitude = out.bands[band]
                .as_ref()
                .map_or(0.0, |m| m.coeffs[bin].norm());
            let band_weight = fb.weight_at_hz(band, carrier);
            let z = hz_to_bark(carrier);
            let region = if band_weight >= 0.5 {
                Region::Passband
            } else if z >= hz_to_bark(high) + OUTSIDE_MARGIN_BARK
                || z <= hz_to_bark(low) - OUTSIDE_MARGIN_BARK
            {
                Region::Outside
            } else {
                Region::Transition
            };
            Ok(SweepRow {
                carrier_hz: carrier,
                band_weight,
                region,
                magnitude,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sweep {
        band,
        band_center_hz: fb.band(band).center_hz,
        mod_hz,
        depth,
        rows,
    })
}

fn nearest_band(fb: &CochlearFilterbank, hz: f64) -> usize {
    let z = hz_to_bark(hz);
    (0..fb.n_bands())
        .min_by(|&a, &b| {
            let da = (hz_to_bark(fb.band(a).center_hz) - z).abs();
            let db = (hz_to_bark(fb.band(b).center_hz) - z).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0)
}

/// Largest per-band relative gap `max|a - b| / max|b|` between the
/// cepstral and envelope routes over `n_frames` seeded speech-like frames.
pub fn two_path_deviation(
    cfg: &AnalysisConfig,
    sample_rate: u32,
    n_frames: usize,
    grid: usize,
    seed: u64,
) -> Result<f64> {
    let fb = design_filterbank(cfg.n_bands, cfg.window_samples(sample_rate), sample_rate)?;
    let analyzer = FdlpAnalyzer::new(fb, cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames: Vec<Vec<f64>> = (0..n_frames)
        .map(|_| speech_like_frame(&mut rng, analyzer.window_samples(), sample_rate))
        .collect();
    let n_mod = cfg.n_mod_coeffs;
    let len = analyzer.cepstrum_len();
    let per_frame = frames
        .par_iter()
        .map(|frame| {
            let mut worst: f64 = 0.0;
            for model in analyzer.band_models(frame)?.into_iter().flatten() {
                let a = modulation_from_cepstrum(&power_cepstrum(&model, len), n_mod);
                let b = modulation_via_envelope(&model, n_mod, grid)?;
                let scale = b.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
                let gap = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).norm())
                    .fold(0.0, f64::max);
                worst = worst.max(gap / scale);
            }
            Ok(worst)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_frame.into_iter().fold(0.0, f64::max))
}
