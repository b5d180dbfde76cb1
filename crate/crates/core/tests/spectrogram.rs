use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fdlp::corpus::speech_like_frame;
use fdlp::dsp::{design_filterbank, AnalysisConfig, AudioBuffer};
use fdlp::fdlp::{AllPoleModel, FdlpAnalyzer};
use fdlp::frontend::{fdlp_spectrogram, ModulationWeights, WeightMode};

/// Direct evaluation of `g^2 / |A(e^{iu})|^2`.
fn envelope_at(model: &AllPoleModel, u: f64) -> f64 {
    let poly = model.polynomial();
    let (re, im) = poly.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, a)| {
        (re + a * (i as f64 * u).cos(), im - a * (i as f64 * u).sin())
    });
    model.gain() * model.gain() / (re * re + im * im)
}

/// Cosine series of `ln P(u)` by the rectangle rule on the full circle,
/// which is exact up to aliasing of terms beyond `n / 2`.
fn log_envelope_series(model: &AllPoleModel, terms: usize) -> Vec<f64> {
    let n = 4096;
    let log_p: Vec<f64> = (0..n)
        .map(|k| envelope_at(model, 2.0 * PI * k as f64 / n as f64).ln())
        .collect();
    (0..terms)
        .map(|m| {
            let s: f64 = log_p
                .iter()
                .enumerate()
                .map(|(k, v)| v * (2.0 * PI * (m * k) as f64 / n as f64).cos())
                .sum();
            if m == 0 {
                s / n as f64
            } else {
                2.0 * s / n as f64
            }
        })
        .collect()
}

/// Zeroing every weight above 10 Hz must equal low-pass filtering the log
/// envelope directly: the spectrogram frame is the log of the mean power
/// of the truncated series over its 10 ms.
#[test]
fn zero_weights_act_as_a_low_pass_on_the_log_envelope() {
    let cfg = AnalysisConfig::default();
    let sr = 16000;
    let fb = design_filterbank(cfg.n_bands, cfg.window_samples(sr), sr).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let samples = speech_like_frame(&mut rng, cfg.window_samples(sr), sr);
    let audio = AudioBuffer::new(samples.clone(), sr).unwrap();

    let cut = 10.0;
    let keep = (cut * cfg.window_len_s) as usize;
    let params: Vec<f64> = (0..cfg.n_bands)
        .flat_map(|_| (0..cfg.n_mod_coeffs).map(|n| if n <= keep { 0.0 } else { f64::NEG_INFINITY }))
        .collect();
    let w = ModulationWeights::from_params(WeightMode::Magnitude, cfg.n_bands, cfg.n_mod_coeffs, params)
        .unwrap();
    let low = fdlp_spectrogram(&audio, &fb, &w, &cfg).unwrap();
    let ones = ModulationWeights::ones(WeightMode::Magnitude, cfg.n_bands, cfg.n_mod_coeffs).unwrap();
    let full = fdlp_spectrogram(&audio, &fb, &ones, &cfg).unwrap();
    assert_eq!(low.n_frames(), 150);

    let models = FdlpAnalyzer::new(fb.clone(), cfg.clone())
        .unwrap()
        .band_models(&samples)
        .unwrap();
    let (frames, sub) = (150, 8);
    let grid = frames * sub;
    let mut smoothing = 0.0_f64;
    for (b, model) in models.iter().enumerate() {
        let model = model.as_ref().expect("speech-like band is not degenerate");
        // node n holds cepstral terms 2n - 1 and 2n
        let c = log_envelope_series(model, 2 * keep + 1);
        for f in 0..frames {
            let mean_power = (f * sub..(f + 1) * sub)
                .map(|j| {
                    let u = PI * j as f64 / grid as f64;
                    c.iter()
                        .enumerate()
                        .map(|(m, cm)| cm * (m as f64 * u).cos())
                        .sum::<f64>()
                        .exp()
                })
                .sum::<f64>()
                / sub as f64;
            let expected = mean_power.ln();
            let got = low.frames[f][b];
            assert!(
                (got - expected).abs() < 1e-6 * expected.abs().max(1.0),
                "band {b} frame {f}: {got} vs {expected}"
            );
            smoothing = smoothing.max((full.frames[f][b] - got).abs());
        }
    }
    // the cut must actually remove something
    assert!(smoothing > 1e-3, "{smoothing}");
}

#[test]
fn spectrogram_tiles_long_audio_block_by_block() {
    let cfg = AnalysisConfig {
        n_bands: 6,
        ..AnalysisConfig::default()
    };
    let sr = 8000;
    let fb = design_filterbank(cfg.n_bands, cfg.window_samples(sr), sr).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let first = speech_like_frame(&mut rng, cfg.window_samples(sr), sr);
    let second = speech_like_frame(&mut rng, sr as usize, sr);
    let joined: Vec<f64> = first.iter().chain(&second).copied().collect();
    let w = ModulationWeights::ones(WeightMode::RealImag, cfg.n_bands, cfg.n_mod_coeffs).unwrap();
    let whole = fdlp_spectrogram(&AudioBuffer::new(joined, sr).unwrap(), &fb, &w, &cfg).unwrap();
    let head = fdlp_spectrogram(&AudioBuffer::new(first, sr).unwrap(), &fb, &w, &cfg).unwrap();
    assert_eq!(whole.n_frames(), 250);
    assert_eq!(&whole.frames[..150], &head.frames[..]);
    assert!(whole.frames.iter().flatten().all(|v| v.is_finite()));
}
