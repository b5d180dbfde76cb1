//! Labelled utterances and seeded synthetic material for tests and demos.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::AudioBuffer;
use crate::error::{Error, Result};
use crate::infotheory::LabelTrack;

/// One audio file with its frame labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub labels: LabelTrack,
}

/// Voiced, syllable-rate modulated noise-and-harmonics frame of `len`
/// samples: a random pitch with formant-shaped harmonics, a slow random
/// envelope and a faint white-noise floor.
pub fn speech_like_frame(rng: &mut impl Rng, len: usize, sample_rate: u32) -> Vec<f64> {
    let fs = sample_rate as f64;
    let f0 = rng.gen_range(90.0..260.0);
    let formants: Vec<(f64, f64)> = [(300.0, 900.0), (900.0, 2400.0), (2000.0, 3400.0)]
        .iter()
        .map(|&(lo, hi)| (rng.gen_range(lo..hi), rng.gen_range(80.0..250.0)))
        .collect();
    let n_harm = ((0.45 * fs) / f0) as usize;
    let harmonics: Vec<(f64, f64, f64)> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let amp: f64 = formants
                .iter()
                .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                .sum::<f64>()
                + 0.01;
            (f, amp, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let syllables: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(1.0..12.0),
                rng.gen_range(0.05..0.3),
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let noise = 0.02;
    (0..len)
        .map(|i| {
            let t = i as f64 / fs;
            let env = 1.0
                + syllables
                    .iter()
                    .map(|&(f, a, p)| a * (2.0 * PI * f * t + p).cos())
                    .sum::<f64>();
            let voiced: f64 = harmonics
                .iter()
                .map(|&(f, a, p)| a * (2.0 * PI * f * t + p).cos())
                .sum();
            env.max(0.05) * voiced + noise * rng.gen_range(-1.0..1.0)
        })
        .collect()
}

/// A two-kind corpus whose labels depend on one band's modulation.
///
/// Every utterance is a carrier whose log amplitude is a sum of sinusoids,
/// so the log envelope holds exactly the planted rates and no harmonics.
/// Utterances alternate between a "slow" kind modulated at `slow_hz`, whose
/// frames are labelled 1 while that modulator is positive and 0 otherwise,
/// and a "fast" kind modulated at `fast_hz` and labelled 0 throughout. Both
/// kinds share random background modulation spread over
/// `background_band_hz`, plus faint broadband noise.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoClassCorpus {
    pub sample_rate: u32,
    pub n_utterances: usize,
    pub duration_s: f64,
    pub carrier_hz: f64,
    pub slow_hz: f64,
    pub fast_hz: f64,
    /// Amplitude of the planted modulator in the log amplitude.
    pub depth: f64,
    pub background_components: usize,
    pub background_depth: f64,
    pub background_band_hz: (f64, f64),
    pub noise: f64,
    pub seed: u64,
}

impl TwoClassCorpus {
    pub fn new(carrier_hz: f64, n_utterances: usize, seed: u64) -> Self {
        Self {
            sample_rate: 8000,
            n_utterances,
            duration_s: 6.0,
            carrier_hz,
            slow_hz: 4.0,
            fast_hz: 16.0,
            depth: 0.3,
            background_components: 60,
            background_depth: 0.05,
            background_band_hz: (0.3, 45.0),
            noise: 0.001,
            seed,
        }
    }

    pub fn generate(&self) -> Result<Vec<Utterance>> {
        let fs = self.sample_rate as f64;
        if !(self.carrier_hz > self.fast_hz && self.carrier_hz < fs / 2.0) {
            return Err(Error::invalid(
                "carrier must lie between the modulation rate and Nyquist",
            ));
        }
        let (bg_lo, bg_hi) = self.background_band_hz;
        if !(bg_lo < bg_hi) {
            return Err(Error::invalid("empty background modulation band"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = (self.duration_s * fs).round() as usize;
        let n_frames = (self.duration_s * 100.0).floor() as usize;
        (0..self.n_utterances)
            .map(|u| {
                let slow = u % 2 == 0;
                let rate = if slow { self.slow_hz } else { self.fast_hz };
                let phase = rng.gen_range(0.0..2.0 * PI);
                let carrier_phase = rng.gen_range(0.0..2.0 * PI);
                let background: Vec<(f64, f64)> = (0..self.background_components)
                    .map(|_| (rng.gen_range(bg_lo..bg_hi), rng.gen_range(0.0..2.0 * PI)))
                    .collect();
                let samples: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = i as f64 / fs;
                        let log_amp = self.depth * (2.0 * PI * rate * t + phase).cos()
                            + self.background_depth
                                * background
                                    .iter()
                                    .map(|&(f, p)| (2.0 * PI * f * t + p).cos())
                                    .sum::<f64>();
                        0.3 * log_amp.exp() * (2.0 * PI * self.carrier_hz * t + carrier_phase).cos()
                            + self.noise * rng.gen_range(-1.0..1.0)
                    })
                    .collect();
                let labels = (0..n_frames)
                    .map(|f| {
                        let t = (f as f64 + 0.5) / 100.0;
                        let up = (2.0 * PI * self.slow_hz * t + phase).cos() > 0.0;
                        usize::from(slow && up)
                    })
                    .collect();
                Ok(Utterance {
                    id: format!("{}{u:04}", if slow { "slow" } else { "fast" }),
                    audio: AudioBuffer::new(samples, self.sample_rate)?,
                    labels: LabelTrack::new(labels, 2, 100.0)?,
                })
            })
            .collect()
    }
}
