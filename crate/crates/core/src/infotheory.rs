//! Histogram discretization and plug-in mutual information between
//! modulation magnitudes and frame labels.

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::Utterance;
use crate::dsp::{frame_starts, segment_at, AnalysisConfig, CochlearFilterbank};
use crate::error::{Error, Result};
use crate::fdlp::{one_over_f_compensate, FdlpAnalyzer};

/// Equal-width bins over `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramSpec {
    n_bins: usize,
    min: f64,
    max: f64,
}

impl HistogramSpec {
    pub fn new(n_bins: usize, min: f64, max: f64) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::invalid(format!("need at least 2 bins, got {n_bins}")));
        }
        if !(min < max) || !min.is_finite() || !max.is_finite() {
            return Err(Error::invalid(format!("invalid bin range [{min}, {max}]")));
        }
        Ok(Self { n_bins, min, max })
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }
}

/// Exact minimum and maximum of a stream with at least two distinct values.
pub fn global_extrema(values: impl IntoIterator<Item = f64>) -> Result<(f64, f64)> {
    let (lo, hi) = values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if lo > hi {
        return Err(Error::DegenerateDistribution("empty stream".into()));
    }
    if lo == hi {
        return Err(Error::DegenerateDistribution(format!(
            "all values equal {lo}"
        )));
    }
    Ok((lo, hi))
}

/// Equal-width bin index, clamped to `[0, n_bins)`.
pub fn discretize(value: f64, spec: &HistogramSpec) -> usize {
    let rel = (value - spec.min) / (spec.max - spec.min);
    let idx = (rel * spec.n_bins as f64).floor();
    if idx.is_nan() || idx <= 0.0 {
        0
    } else {
        (idx as usize).min(spec.n_bins - 1)
    }
}

/// Frame-wise class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrack {
    labels: Vec<usize>,
    n_classes: usize,
    frame_rate_hz: f64,
}

impl LabelTrack {
    pub fn new(labels: Vec<usize>, n_classes: usize, frame_rate_hz: f64) -> Result<Self> {
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be positive"));
        }
        if !(frame_rate_hz > 0.0 && frame_rate_hz.is_finite()) {
            return Err(Error::invalid("frame rate must be positive"));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::invalid(format!(
                "label {l} at frame {i} is outside [0, {n_classes})"
            )));
        }
        Ok(Self {
            labels,
            n_classes,
            frame_rate_hz,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Counts of (bin, class) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct JointHistogram {
    n_bins: usize,
    n_classes: usize,
    counts: Vec<u32>,
    total: u64,
}

impl JointHistogram {
    pub fn new(n_bins: usize, n_classes: usize) -> Self {
        Self {
            n_bins,
            n_classes,
            counts: vec![0; n_bins * n_classes],
            total: 0,
        }
    }

    /// Builds a histogram from a row-major `n_bins x n_classes` table.
    pub fn from_counts(n_bins: usize, n_classes: usize, counts: Vec<u32>) -> Result<Self> {
        if counts.len() != n_bins * n_classes {
            return Err(Error::Dimension {
                expected: format!("{n_bins} x {n_classes} counts"),
                found: format!("{}", counts.len()),
            });
        }
        let total = counts.iter().map(|&c| c as u64).sum();
        Ok(Self {
            n_bins,
            n_classes,
            counts,
            total,
        })
    }

    pub fn add(&mut self, bin: usize, class: usize) {
        assert!(bin < self.n_bins && class < self.n_classes);
        self.counts[bin * self.n_classes + class] += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &JointHistogram) -> Result<()> {
        if (self.n_bins, self.n_classes) != (other.n_bins, other.n_classes) {
            return Err(Error::Dimension {
                expected: format!("{} x {}", self.n_bins, self.n_classes),
                found: format!("{} x {}", other.n_bins, other.n_classes),
            });
        }
        self.counts
            .iter_mut()
            .zip(&other.counts)
            .for_each(|(a, b)| *a += b);
        self.total += other.total;
        Ok(())
    }

    pub fn count(&self, bin: usize, class: usize) -> u32 {
        self.counts[bin * self.n_classes + class]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn bin_marginal(&self) -> Vec<u64> {
        self.counts
            .chunks(self.n_classes)
            .map(|row| row.iter().map(|&c| c as u64).sum())
            .collect()
    }

    pub fn class_marginal(&self) -> Vec<u64> {
        let mut m = vec![0u64; self.n_classes];
        for row in self.counts.chunks(self.n_classes) {
            m.iter_mut().zip(row).for_each(|(a, &c)| *a += c as u64);
        }
        m
    }

    /// Entropy of the binned variable in bits.
    pub fn bin_entropy(&self) -> f64 {
        entropy_bits(&self.bin_marginal())
    }

    /// Entropy of the labels in bits.
    pub fn class_entropy(&self) -> f64 {
        entropy_bits(&self.class_marginal())
    }
}

/// Entropy in bits of a count vector; zero counts contribute nothing.
pub fn entropy_bits(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Plug-in mutual information in bits.
pub fn mutual_information(joint: &JointHistogram) -> Result<f64> {
    if joint.total == 0 {
        return Err(Error::invalid("mutual information of an empty histogram"));
    }
    let n = joint.total as f64;
    let px = joint.bin_marginal();
    let py = joint.class_marginal();
    let mut mi = 0.0;
    for (x, row) in joint.counts.chunks(joint.n_classes).enumerate() {
        if px[x] == 0 {
            continue;
        }
        for (y, &c) in row.iter().enumerate() {
            if c == 0 {
                continue;
            }
            // c * n / (px * py) without the rounding of three divisions
            let ratio = (c as f64 * n) / (px[x] as f64 * py[y] as f64);
            mi += c as f64 / n * ratio.log2();
        }
    }
    let bound = joint.bin_entropy().min(joint.class_entropy());
    Ok(mi.clamp(0.0, bound.max(0.0)))
}

/// Mutual information per (band, modulation bin), in bits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MIMatrix {
    /// Band-major, `n_bands x n_mod_bins`.
    pub mi: Vec<Vec<f64>>,
    pub band_centers_hz: Vec<f64>,
    pub mod_freqs_hz: Vec<f64>,
    /// Analysis windows that entered the histograms.
    pub n_windows: u64,
}

impl MIMatrix {
    /// Arithmetic mean over bands for every modulation bin.
    pub fn average_curve(&self) -> Vec<f64> {
        let n = self.mi.len() as f64;
        (0..self.mod_freqs_hz.len())
            .map(|j| self.mi.iter().map(|row| row[j]).sum::<f64>() / n)
            .collect()
    }

    pub fn max(&self) -> f64 {
        self.mi.iter().flatten().cloned().fold(0.0, f64::max)
    }
}

/// Windows of one utterance that carry a label: `(start, label)`.
fn labelled_windows(
    utt: &Utterance,
    window: usize,
    hop: usize,
) -> Result<Vec<(usize, usize)>> {
    let sr = utt.audio.sample_rate() as f64;
    let rate = utt.labels.frame_rate_hz();
    let expected = (utt.audio.duration_s() * rate).floor() as i64;
    let found = utt.labels.len() as i64;
    if (expected - found).abs() >= 2 {
        return Err(Error::Alignment {
            utterance: utt.id.clone(),
            detail: format!("{found} label frames for {expected} expected"),
        });
    }
    Ok(frame_starts(utt.audio.len(), window, hop)
        .into_iter()
        .filter_map(|s| {
            let centre = (s as f64 + window as f64 / 2.0) / sr;
            let idx = (centre * rate).round() as usize;
            utt.labels.labels().get(idx).map(|&l| (s, l))
        })
        .collect())
}

/// 1/f-compensated magnitudes of every labelled window, band-major per
/// window with `NaN` for degenerate bands.
fn window_features(
    analyzer: &FdlpAnalyzer,
    utt: &Utterance,
    windows: &[(usize, usize)],
) -> Result<Vec<Vec<f64>>> {
    let n_bands = analyzer.filterbank().n_bands();
    let n_mod = analyzer.config().n_mod_coeffs;
    windows
        .iter()
        .map(|&(start, _)| {
            let seg = segment_at(utt.audio.samples(), start, analyzer.window_samples());
            let frame = analyzer.modulation_spectrum(&seg)?;
            let mut row = Vec::with_capacity(n_bands * n_mod);
            for band in &frame.bands {
                match band {
                    Some(ms) => row.extend(one_over_f_compensate(ms).magnitudes()),
                    None => row.extend(std::iter::repeat_n(f64::NAN, n_mod)),
                }
            }
            Ok(row)
        })
        .collect()
}

/// Two-pass MI between every (band, modulation bin) magnitude and the label
/// at each window's centre.
///
/// Cells whose magnitude never varies across the corpus get zero MI.
/// Results do not depend on the size of the rayon pool.
pub fn mi_analysis(
    corpus: &[Utterance],
    fb: &CochlearFilterbank,
    cfg: &AnalysisConfig,
    n_bins: usize,
) -> Result<MIMatrix> {
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    if n_bins < 2 || n_bins > u16::MAX as usize {
        return Err(Error::invalid(format!("unsupported bin count {n_bins}")));
    }
    let n_classes = corpus[0].labels.n_classes();
    if let Some(u) = corpus.iter().find(|u| u.labels.n_classes() != n_classes) {
        return Err(Error::invalid(format!(
            "utterance '{}' has {} classes, expected {n_classes}",
            u.id,
            u.labels.n_classes()
        )));
    }
    let sr = fb.sample_rate();
    if let Some(u) = corpus.iter().find(|u| u.audio.sample_rate() != sr) {
        return Err(Error::invalid(format!(
            "utterance '{}' is at {} Hz, filterbank expects {sr} Hz",
            u.id,
            u.audio.sample_rate()
        )));
    }
    let analyzer = FdlpAnalyzer::new(fb.clone(), cfg.clone())?;
    let window = analyzer.window_samples();
    let hop = cfg.hop_samples(sr);
    let n_cells = fb.n_bands() * cfg.n_mod_coeffs;

    let windows: Vec<Vec<(usize, usize)>> = corpus
        .iter()
        .map(|u| labelled_windows(u, window, hop))
        .collect::<Result<_>>()?;

    // pass 1: per-cell extrema
    let extrema = corpus
        .par_iter()
        .zip(&windows)
        .map(|(u, w)| {
            let feats = window_features(&analyzer, u, w)?;
            let mut ext = vec![(f64::INFINITY, f64::NEG_INFINITY); n_cells];
            for row in &feats {
                for (e, &v) in ext.iter_mut().zip(row) {
                    if v.is_finite() {
                        *e = (e.0.min(v), e.1.max(v));
                    }
                }
            }
            Ok(ext)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .reduce(|mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                *x = (x.0.min(y.0), x.1.max(y.1));
            }
            a
        })
        .unwrap_or_default();
    let specs: Vec<Option<HistogramSpec>> = extrema
        .iter()
        .map(|&(lo, hi)| HistogramSpec::new(n_bins, lo, hi).ok())
        .collect();

    // pass 2: bin in parallel, accumulate in manifest order
    let mut hists = vec![JointHistogram::new(n_bins, n_classes); n_cells];
    let mut n_windows = 0u64;
    let chunk = 2 * rayon::current_num_threads().max(1);
    for (utts, wins) in corpus.chunks(chunk).zip(windows.chunks(chunk)) {
        let binned: Vec<Vec<Vec<u16>>> = utts
            .par_iter()
            .zip(wins)
            .map(|(u, w)| {
                let feats = window_features(&analyzer, u, w)?;
                Ok(feats
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&specs)
                            .map(|(&v, spec)| match spec {
                                Some(s) if v.is_finite() => discretize(v, s) as u16,
                                _ => u16::MAX,
                            })
                            .collect()
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        for (rows, w) in binned.iter().zip(wins) {
            for (row, &(_, label)) in rows.iter().zip(w) {
                n_windows += 1;
                for (h, &b) in hists.iter_mut().zip(row) {
                    if b != u16::MAX {
                        h.add(b as usize, label);
                    }
                }
            }
        }
    }
    if n_windows == 0 {
        return Err(Error::invalid("no labelled analysis windows in corpus"));
    }

    let flat: Vec<f64> = hists
        .iter()
        .zip(&specs)
        .map(|(h, s)| match s {
            Some(_) if h.total() > 0 => mutual_information(h),
            _ => Ok(0.0),
        })
        .collect::<Result<_>>()?;
    Ok(MIMatrix {
        mi: flat.chunks(cfg.n_mod_coeffs).map(|r| r.to_vec()).collect(),
        band_centers_hz: fb.centers_hz(),
        mod_freqs_hz: (0..cfg.n_mod_coeffs)
            .map(|n| n as f64 * cfg.resolution_hz())
            .collect(),
        n_windows,
    })
}
