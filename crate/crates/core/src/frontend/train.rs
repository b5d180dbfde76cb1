use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{assemble_frames, ModulationWeights, SpectrogramExtractor, UtteranceCepstra};
use crate::corpus::Utterance;
use crate::dsp::{AnalysisConfig, CochlearFilterbank};
use crate::error::{Error, Result};

/// Step used by the finite-difference gradient check.
const FD_STEP: f64 = 1e-5;

/// Full-batch gradient descent schedule. Weight parameters stay at their
/// initial values for the first `freeze_epochs` epochs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSchedule {
    pub total_epochs: usize,
    pub freeze_epochs: usize,
    pub lr_classifier: f64,
    pub lr_weights: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            total_epochs: 150,
            freeze_epochs: 60,
            lr_classifier: 0.5,
            lr_weights: 2.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.freeze_epochs > self.total_epochs {
            return Err(Error::invalid(format!(
                "freeze_epochs {} exceeds total_epochs {}",
                self.freeze_epochs, self.total_epochs
            )));
        }
        if !(self.lr_classifier >= 0.0 && self.lr_weights >= 0.0)
            || !self.lr_classifier.is_finite()
            || !self.lr_weights.is_finite()
        {
            return Err(Error::invalid("learning rates must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Linear softmax over standardized spectrogram rows. The standardization
/// is measured once, on the features at initialization, and then frozen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classifier {
    pub n_classes: usize,
    pub n_features: usize,
    /// Class-major `n_classes x n_features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Classifier {
    /// Weights uniform in `[-0.01, 0.01)` from `seed`, zero bias.
    pub fn init(n_classes: usize, mean: Vec<f64>, scale: Vec<f64>, seed: u64) -> Self {
        let n_features = mean.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..n_classes * n_features)
            .map(|_| rng.gen_range(-0.01..0.01))
            .collect();
        Self {
            n_classes,
            n_features,
            weights,
            bias: vec![0.0; n_classes],
            mean,
            scale,
        }
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Log class probabilities of one spectrogram row.
    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        let z = self.standardize(x);
        let logits: Vec<f64> = self
            .weights
            .chunks(self.n_features)
            .zip(&self.bias)
            .map(|(w, b)| b + w.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.iter().map(|l| l - lse).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let lp = self.log_probs(x);
        (0..lp.len())
            .max_by(|&a, &b| lp[a].total_cmp(&lp[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutput {
    pub weights: ModulationWeights,
    pub classifier: Classifier,
    /// Mean cross-entropy at the start of every epoch.
    pub losses: Vec<f64>,
}

/// Sums over the frames of one utterance.
struct Pass {
    loss: f64,
    frames: usize,
    grad_w: Vec<f64>,
    grad_b: Vec<f64>,
    grad_params: Option<Vec<f64>>,
    errors: usize,
}

/// Utterances reduced to their weight-independent FDLP cepstra, ready for
/// repeated training runs.
pub struct Trainer {
    extractor: SpectrogramExtractor,
    data: Vec<(UtteranceCepstra, Vec<usize>)>,
    n_classes: usize,
}

impl std::fmt::Debug for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Trainer")
            .field("utterances", &self.data.len())
            .field("n_classes", &self.n_classes)
            .finish()
    }
}

impl Trainer {
    pub fn new(corpus: &[Utterance], fb: &CochlearFilterbank, cfg: &AnalysisConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::invalid("empty training corpus"));
        }
        let n_classes = corpus[0].labels.n_classes();
        let extractor = SpectrogramExtractor::new(fb, cfg)?;
        let data = corpus
            .par_iter()
            .map(|u| {
                if u.labels.n_classes() != n_classes {
                    return Err(Error::invalid(format!(
                        "utterance '{}' has {} classes, expected {n_classes}",
                        u.id,
                        u.labels.n_classes()
                    )));
                }
                let ceps = extractor.cepstra(&u.audio)?;
                let found = u.labels.len();
                if ceps.n_frames.abs_diff(found) >= 2 {
                    return Err(Error::Alignment {
                        utterance: u.id.clone(),
                        detail: format!("{found} label frames for {} expected", ceps.n_frames),
                    });
                }
                let n = ceps.n_frames.min(found);
                Ok((ceps, u.labels.labels()[..n].to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut seen = vec![false; n_classes];
        data.iter()
            .flat_map(|(_, l)| l)
            .for_each(|&l| seen[l] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::invalid("training needs at least two classes in the labels"));
        }
        Ok(Self {
            extractor,
            data,
            n_classes,
        })
    }

    pub fn extractor(&self) -> &SpectrogramExtractor {
        &self.extractor
    }

    pub fn n_frames(&self) -> usize {
        self.data.iter().map(|(_, l)| l.len()).sum()
    }

    /// Per-band mean and standard deviation of the features under `w`.
    fn feature_stats(&self, w: &ModulationWeights) -> Result<(Vec<f64>, Vec<f64>)> {
        let nb = self.extractor.n_bands();
        let rows: Vec<Vec<Vec<f64>>> = self
            .data
            .par_iter()
            .map(|(c, l)| {
                let mut s = self.extractor.spectrogram(c, w)?.frames;
                s.truncate(l.len());
                Ok(s)
            })
            .collect::<Result<_>>()?;
        let n = self.n_frames() as f64;
        let mut mean = vec![0.0; nb];
        for row in rows.iter().flatten() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; nb];
        for row in rows.iter().flatten() {
            var.iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(s, (v, m))| *s += (v - m) * (v - m));
        }
        let scale = var
            .iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-9 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok((mean, scale))
    }

    /// Mean loss, summed classifier gradients and (optionally) weight
    /// gradients over the whole corpus, reduced in corpus order.
    fn batch(&self, w: &ModulationWeights, clf: &Classifier, want_params: bool) -> Pass {
        let passes: Vec<Pass> = self
            .data
            .par_iter()
            .map(|(c, l)| utterance_pass(&self.extractor, c, l, w, clf, usize::MAX, want_params))
            .collect();
        let mut total = Pass {
            loss: 0.0,
            frames: 0,
            grad_w: vec![0.0; clf.weights.len()],
            grad_b: vec![0.0; clf.n_classes],
            grad_params: want_params.then(|| vec![0.0; w.params().len()]),
            errors: 0,
        };
        for p in passes {
            total.loss += p.loss;
            total.frames += p.frames;
            total.errors += p.errors;
            add_into(&mut total.grad_w, &p.grad_w);
            add_into(&mut total.grad_b, &p.grad_b);
            if let (Some(t), Some(g)) = (&mut total.grad_params, &p.grad_params) {
                add_into(t, g);
            }
        }
        total
    }

    pub fn init_classifier(&self, w: &ModulationWeights, seed: u64) -> Result<Classifier> {
        let (mean, scale) = self.feature_stats(w)?;
        Ok(Classifier::init(self.n_classes, mean, scale, seed))
    }

    /// Mean cross-entropy over all frames.
    pub fn loss(&self, w: &ModulationWeights, clf: &Classifier) -> f64 {
        let p = self.batch(w, clf, false);
        p.loss / p.frames as f64
    }

    /// Fraction of frames whose most probable class is wrong.
    pub fn frame_error(&self, w: &ModulationWeights, clf: &Classifier) -> f64 {
        let p = self.batch(w, clf, false);
        p.errors as f64 / p.frames as f64
    }

    /// Trains the classifier from a seeded initialization and, after the
    /// frozen epochs, the modulation weights starting from `init`.
    pub fn train(
        &self,
        sched: &TrainSchedule,
        init: ModulationWeights,
        seed: u64,
    ) -> Result<TrainOutput> {
        sched.validate()?;
        init.check_dims(self.extractor.n_bands(), self.extractor.n_coeffs())?;
        let mut w = init;
        let mut clf = self.init_classifier(&w, seed)?;
        let mut losses = Vec::with_capacity(sched.total_epochs);
        for epoch in 0..sched.total_epochs {
            let learn_w = epoch >= sched.freeze_epochs && sched.lr_weights > 0.0;
            let p = self.batch(&w, &clf, learn_w);
            let n = p.frames as f64;
            let loss = p.loss / n;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, loss });
            }
            losses.push(loss);
            let lr = sched.lr_classifier / n;
            clf.weights
                .iter_mut()
                .zip(&p.grad_w)
                .for_each(|(v, g)| *v -= lr * g);
            clf.bias
                .iter_mut()
                .zip(&p.grad_b)
                .for_each(|(v, g)| *v -= lr * g);
            if let Some(g) = &p.grad_params {
                let lr = sched.lr_weights / n;
                w.params_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(v, g)| *v -= lr * g);
                if w.params().iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return Err(Error::Training {
                        epoch,
                        loss: f64::NAN,
                    });
                }
            }
        }
        Ok(TrainOutput {
            weights: w,
            classifier: clf,
            losses,
        })
    }

    /// Largest relative gap between analytic and central-difference weight
    /// gradients of the mean loss over the first `n_frames` frames of
    /// utterance `index`.
    pub fn gradient_check(
        &self,
        w: &ModulationWeights,
        clf: &Classifier,
        index: usize,
        n_frames: usize,
    ) -> Result<f64> {
        let (ceps, labels) = self
            .data
            .get(index)
            .ok_or_else(|| Error::invalid(format!("no utterance {index}")))?;
        gradient_deviation(&self.extractor, ceps, labels, w, clf, n_frames)
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

fn utterance_pass(
    ex: &SpectrogramExtractor,
    ceps: &UtteranceCepstra,
    labels: &[usize],
    w: &ModulationWeights,
    clf: &Classifier,
    limit: usize,
    want_params: bool,
) -> Pass {
    let fpb = ex.frames_per_block();
    let n = ceps.n_frames.min(labels.len()).min(limit);
    let used = UtteranceCepstra {
        blocks: ceps.blocks[..n.div_ceil(fpb)].to_vec(),
        n_frames: n,
    };
    let env = ex.envelopes(&used, w);
    let frames = assemble_frames(&env, n, fpb);

    let nf = clf.n_features;
    let mut pass = Pass {
        loss: 0.0,
        frames: n,
        grad_w: vec![0.0; clf.weights.len()],
        grad_b: vec![0.0; clf.n_classes],
        grad_params: None,
        errors: 0,
    };
    // dL/dx per frame and band
    let mut gx = vec![vec![0.0; nf]; n];
    for (f, x) in frames.iter().enumerate() {
        let lp = clf.log_probs(x);
        let y = labels[f];
        pass.loss -= lp[y];
        if clf.predict(x) != y {
            pass.errors += 1;
        }
        let z = clf.standardize(x);
        for (c, &l) in lp.iter().enumerate() {
            let d = l.exp() - f64::from(u8::from(c == y));
            pass.grad_b[c] += d;
            let row = &clf.weights[c * nf..(c + 1) * nf];
            for i in 0..nf {
                pass.grad_w[c * nf + i] += d * z[i];
                gx[f][i] += d * row[i] / clf.scale[i];
            }
        }
    }

    if want_params {
        let mut grad = vec![0.0; w.params().len()];
        for (k, bands) in used.blocks.iter().enumerate() {
            let lo = k * fpb;
            let hi = ((k + 1) * fpb).min(n);
            for (b, c) in bands.iter().enumerate() {
                let Some(c) = c else { continue };
                let g_frames: Vec<f64> = (lo..hi).map(|f| gx[f][b]).collect();
                let dc = ex.synth().backward(&env[k][b], &g_frames);
                w.accumulate_grad(b, c, &dc, &mut grad);
            }
        }
        pass.grad_params = Some(grad);
    }
    pass
}

fn gradient_deviation(
    ex: &SpectrogramExtractor,
    ceps: &UtteranceCepstra,
    labels: &[usize],
    w: &ModulationWeights,
    clf: &Classifier,
    n_frames: usize,
) -> Result<f64> {
    if !(1..=10).contains(&n_frames) {
        return Err(Error::invalid("gradient check takes between 1 and 10 frames"));
    }
    let n = n_frames.min(ceps.n_frames).min(labels.len());
    if n == 0 {
        return Err(Error::invalid("sample has no frames"));
    }
    let analytic = utterance_pass(ex, ceps, labels, w, clf, n, true)
        .grad_params
        .expect("requested");
    let scale = 1.0 / n as f64;

    let block = &ceps.blocks[0];
    let base: Vec<Vec<f64>> = block
        .iter()
        .enumerate()
        .map(|(b, c)| band_column(ex, w, b, c.as_deref(), n))
        .collect();
    let loss_with = |col: usize, values: &[f64]| -> f64 {
        (0..n)
            .map(|f| {
                let x: Vec<f64> = (0..base.len())
                    .map(|b| if b == col { values[f] } else { base[b][f] })
                    .collect();
                -clf.log_probs(&x)[labels[f]]
            })
            .sum::<f64>()
            * scale
    };

    let per_band = w.n_coeffs() * w.mode().params_per_coeff();
    let deviations: Vec<f64> = (0..w.params().len())
        .into_par_iter()
        .map(|i| {
            let b = i / per_band;
            let numeric = match block[b].as_deref() {
                None => 0.0,
                Some(c) => {
                    let mut up = w.clone();
                    up.params_mut()[i] += FD_STEP;
                    let mut down = w.clone();
                    down.params_mut()[i] -= FD_STEP;
                    let lu = loss_with(b, &band_column(ex, &up, b, Some(c), n));
                    let ld = loss_with(b, &band_column(ex, &down, b, Some(c), n));
                    (lu - ld) / (2.0 * FD_STEP)
                }
            };
            let a = analytic[i] * scale;
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6)
        })
        .collect();
    Ok(deviations.into_iter().fold(0.0, f64::max))
}

/// Log energies of band `b` over the first `n` frames of block 0.
fn band_column(
    ex: &SpectrogramExtractor,
    w: &ModulationWeights,
    b: usize,
    c: Option<&[f64]>,
    n: usize,
) -> Vec<f64> {
    let env = match c {
        Some(c) => ex.synth().forward(&w.weight_cepstrum(b, c)),
        None => ex.synth().floor_block(),
    };
    env.log_energy[..n].to_vec()
}

/// Convenience wrapper: builds a [`Trainer`] and runs one schedule.
pub fn train_weights(
    corpus: &[Utterance],
    fb: &CochlearFilterbank,
    cfg: &AnalysisConfig,
    sched: &TrainSchedule,
    init: ModulationWeights,
    seed: u64,
) -> Result<TrainOutput> {
    Trainer::new(corpus, fb, cfg)?.train(sched, init, seed)
}

/// Finite-difference check of the weight gradient on the first `n_frames`
/// frames of one utterance.
pub fn weight_gradient_check(
    w: &ModulationWeights,
    clf: &Classifier,
    sample: &Utterance,
    fb: &CochlearFilterbank,
    cfg: &AnalysisConfig,
    n_frames: usize,
) -> Result<f64> {
    let ex = SpectrogramExtractor::new(fb, cfg)?;
    w.check_dims(ex.n_bands(), ex.n_coeffs())?;
    let ceps = ex.cepstra(&sample.audio)?;
    gradient_deviation(&ex, &ceps, sample.labels.labels(), w, clf, n_frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TwoClassCorpus;
    use crate::dsp::design_filterbank;
    use crate::frontend::WeightMode;

    fn small() -> (Vec<Utterance>, CochlearFilterbank, AnalysisConfig) {
        let cfg = AnalysisConfig {
            n_bands: 6,
            model_order: 30,
            n_mod_coeffs: 30,
            ..AnalysisConfig::default()
        };
        let fb = design_filterbank(6, cfg.window_samples(8000), 8000).unwrap();
        let carrier = fb.centers_hz()[2];
        let mut spec = TwoClassCorpus::new(carrier, 4, 3);
        spec.duration_s = 3.0;
        (spec.generate().unwrap(), fb, cfg)
    }

    #[test]
    fn frozen_schedule_keeps_weights() {
        let (corpus, fb, cfg) = small();
        let sched = TrainSchedule {
            total_epochs: 8,
            freeze_epochs: 8,
            ..TrainSchedule::default()
        };
        let init = ModulationWeights::ones(WeightMode::Magnitude, 6, 30).unwrap();
        let out = train_weights(&corpus, &fb, &cfg, &sched, init.clone(), 1).unwrap();
        assert_eq!(out.weights, init);
        assert!(out.losses.windows(2).take(5).all(|p| p[1] < p[0]), "{:?}", out.losses);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (corpus, fb, cfg) = small();
        let trainer = Trainer::new(&corpus, &fb, &cfg).unwrap();
        for mode in [WeightMode::Magnitude, WeightMode::RealImag] {
            let w = ModulationWeights::ones(mode, 6, 30).unwrap();
            let mut clf = trainer.init_classifier(&w, 5).unwrap();
            // larger classifier weights make the weight gradient non-trivial
            clf.weights.iter_mut().for_each(|v| *v *= 100.0);
            let dev = trainer.gradient_check(&w, &clf, 0, 5).unwrap();
            assert!(dev < 1e-4, "{mode:?}: {dev}");
            assert_eq!(dev, trainer.gradient_check(&w, &clf, 0, 5).unwrap());
        }
    }

    #[test]
    fn rejects_single_class() {
        let (mut corpus, fb, cfg) = small();
        corpus.retain(|u| u.id.starts_with("fast"));
        assert!(matches!(
            Trainer::new(&corpus, &fb, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn schedule_validation() {
        let s = TrainSchedule {
            total_epochs: 3,
            freeze_epochs: 4,
            ..TrainSchedule::default()
        };
        assert!(s.validate().is_err());
    }
}
