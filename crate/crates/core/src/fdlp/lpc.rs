use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// All-pole model `g^2 / |A(e^{jw})|^2` with `A(z) = 1 + sum a[i] z^-i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AllPoleModel {
    lp_coeffs: Vec<f64>,
    gain: f64,
    reflection: Vec<f64>,
    prediction_errors: Vec<f64>,
    band_index: usize,
}

impl AllPoleModel {
    /// Builds a model from `a[1..=p]` and a gain, checking minimum phase by
    /// stepping the polynomial down to its reflection coefficients.
    pub fn new(lp_coeffs: Vec<f64>, gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Domain(format!("gain must be positive, got {gain}")));
        }
        if lp_coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::Domain("non-finite LP coefficient".into()));
        }
        let reflection = step_down(&lp_coeffs)?;
        Ok(Self {
            lp_coeffs,
            gain,
            reflection,
            prediction_errors: Vec::new(),
            band_index: 0,
        })
    }

    pub fn with_band(mut self, band_index: usize) -> Self {
        self.band_index = band_index;
        self
    }

    pub fn order(&self) -> usize {
        self.lp_coeffs.len()
    }

    /// `a[1..=p]`; `a[0] = 1` is implicit.
    pub fn lp_coeffs(&self) -> &[f64] {
        &self.lp_coeffs
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn reflection_coeffs(&self) -> &[f64] {
        &self.reflection
    }

    /// Prediction error after each Levinson stage, starting with `r[0]`.
    /// Empty for models not produced by [`levinson_durbin`].
    pub fn prediction_errors(&self) -> &[f64] {
        &self.prediction_errors
    }

    pub fn band_index(&self) -> usize {
        self.band_index
    }

    pub fn is_minimum_phase(&self) -> bool {
        self.reflection.iter().all(|k| k.abs() < 1.0)
    }

    /// `[1, a1, .., ap]`.
    pub fn polynomial(&self) -> Vec<f64> {
        std::iter::once(1.0)
            .chain(self.lp_coeffs.iter().copied())
            .collect()
    }
}

/// Reflection coefficients of `1 + sum a[i] z^-i` by the backward recursion.
fn step_down(lp: &[f64]) -> Result<Vec<f64>> {
    let p = lp.len();
    let mut a = lp.to_vec();
    let mut k = vec![0.0; p];
    for m in (1..=p).rev() {
        let km = a[m - 1];
        k[m - 1] = km;
        if km.abs() >= 1.0 {
            return Err(Error::Domain(format!(
                "model is not minimum phase: |k{m}| = {}",
                km.abs()
            )));
        }
        let denom = 1.0 - km * km;
        let prev: Vec<f64> = (1..m)
            .map(|i| (a[i - 1] - km * a[m - i - 1]) / denom)
            .collect();
        a.truncate(m - 1);
        a.copy_from_slice(&prev);
    }
    Ok(k)
}

/// Autocorrelation lags `0..=order` of `freq_coeffs * band_weights`.
pub fn subband_autocorrelation(
    freq_coeffs: &[f64],
    band_weights: &[f64],
    order: usize,
) -> Result<Vec<f64>> {
    if freq_coeffs.len() != band_weights.len() {
        return Err(Error::Dimension {
            expected: format!("{} band weights", freq_coeffs.len()),
            found: format!("{}", band_weights.len()),
        });
    }
    if order >= freq_coeffs.len() {
        return Err(Error::invalid(format!(
            "order {order} must be below the sequence length {}",
            freq_coeffs.len()
        )));
    }
    let y: Vec<f64> = freq_coeffs
        .iter()
        .zip(band_weights)
        .map(|(x, w)| x * w)
        .collect();
    let first = y.iter().position(|&v| v != 0.0);
    let Some(first) = first else {
        return Err(Error::DegenerateBand { band: 0 });
    };
    let last = y.iter().rposition(|&v| v != 0.0).unwrap_or(first);
    let plan = AutocorrPlan::new(last - first + 1, order);
    Ok(plan.compute(&y[first..=last]))
}

/// FFT plans for the autocorrelation of sequences up to a fixed length.
#[derive(Clone)]
pub(crate) struct AutocorrPlan {
    max_len: usize,
    order: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl AutocorrPlan {
    pub(crate) fn new(max_len: usize, order: usize) -> Self {
        let n = (2 * max_len).next_power_of_two().max(2);
        let mut planner = FftPlanner::new();
        Self {
            max_len,
            order,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }

    /// Lags `0..=order` of `y`; lags past the sequence length are zero.
    pub(crate) fn compute(&self, y: &[f64]) -> Vec<f64> {
        debug_assert!(y.len() <= self.max_len);
        let n = self.forward.len();
        let mut buf: Vec<Complex64> = y
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
            .take(n)
            .collect();
        self.forward.process(&mut buf);
        buf.iter_mut()
            .for_each(|z| *z = Complex64::new(z.norm_sqr(), 0.0));
        self.inverse.process(&mut buf);
        let scale = 1.0 / n as f64;
        (0..=self.order)
            .map(|m| if m < y.len() { buf[m].re * scale } else { 0.0 })
            .collect()
    }
}

/// Levinson-Durbin solution of the Toeplitz normal equations for lags `r[0..=order]`.
pub fn levinson_durbin(r: &[f64], order: usize) -> Result<AllPoleModel> {
    if r.len() < order + 1 {
        return Err(Error::invalid(format!(
            "need {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(Error::invalid(format!("r[0] must be positive, got {}", r[0])));
    }
    let mut a = vec![0.0; order];
    let mut tmp = vec![0.0; order];
    let mut reflection = Vec::with_capacity(order);
    let mut errors = Vec::with_capacity(order + 1);
    let mut err = r[0];
    errors.push(err);
    for i in 1..=order {
        let acc = r[i] + (1..i).map(|j| a[j - 1] * r[i - j]).sum::<f64>();
        let k = -acc / err;
        if !(k.abs() < 1.0) {
            return Err(Error::NumericalDegeneracy {
                stage: i,
                magnitude: k.abs(),
            });
        }
        tmp[..i - 1].copy_from_slice(&a[..i - 1]);
        for j in 1..i {
            a[j - 1] = tmp[j - 1] + k * tmp[i - j - 1];
        }
        a[i - 1] = k;
        err *= 1.0 - k * k;
        reflection.push(k);
        errors.push(err);
    }
    if !(err > 0.0) {
        return Err(Error::NumericalDegeneracy {
            stage: order,
            magnitude: 1.0,
        });
    }
    Ok(AllPoleModel {
        lp_coeffs: a,
        gain: err.sqrt(),
        reflection,
        prediction_errors: errors,
        band_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn white_process() {
        let mut r = vec![0.0; 11];
        r[0] = 1.0;
        let m = levinson_durbin(&r, 10).unwrap();
        assert!(m.lp_coeffs().iter().all(|&a| a == 0.0));
        assert_abs_diff_eq!(m.gain(), 1.0);
    }

    #[test]
    fn first_order_closed_form() {
        let m = levinson_durbin(&[1.0, 0.5], 1).unwrap();
        assert_abs_diff_eq!(m.lp_coeffs()[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m.prediction_errors()[1], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(m.gain(), 0.75f64.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn levinson_errors() {
        assert!(matches!(
            levinson_durbin(&[0.0, 0.0], 1),
            Err(Error::InvalidArgument(_))
        ));
        match levinson_durbin(&[1.0, 1.5], 1) {
            Err(Error::NumericalDegeneracy { stage, .. }) => assert_eq!(stage, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn step_down_recovers_reflections() {
        let mut r = vec![0.0; 9];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let y: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (m, v) in r.iter_mut().enumerate() {
            *v = (0..200 - m).map(|i| y[i] * y[i + m]).sum();
        }
        let m = levinson_durbin(&r, 8).unwrap();
        let rebuilt = AllPoleModel::new(m.lp_coeffs().to_vec(), m.gain()).unwrap();
        for (a, b) in rebuilt.reflection_coeffs().iter().zip(m.reflection_coeffs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        assert!(AllPoleModel::new(vec![0.0, -1.2], 1.0).is_err());
        assert!(AllPoleModel::new(vec![0.1], 0.0).is_err());
    }

    #[test]
    fn autocorrelation_identity_and_impulse() {
        let x = [0.5, -1.0, 2.0, 0.25, 0.0, 1.0];
        let ones = [1.0; 6];
        let r = subband_autocorrelation(&x, &ones, 3).unwrap();
        for (m, v) in r.iter().enumerate() {
            let direct: f64 = (0..6 - m).map(|k| x[k] * x[k + m]).sum();
            assert_abs_diff_eq!(*v, direct, epsilon = 1e-12);
        }
        let mut imp = [0.0; 8];
        imp[3] = 1.0;
        let r = subband_autocorrelation(&imp, &[1.0; 8], 4).unwrap();
        assert_abs_diff_eq!(r[0], 1.0, epsilon = 1e-15);
        assert!(r[1..].iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn autocorrelation_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..256).map(|_| rng.gen_range(0.0..1.0)).collect();
        let r = subband_autocorrelation(&x, &w, 10).unwrap();
        let y: Vec<f64> = x.iter().zip(&w).map(|(a, b)| a * b).collect();
        for (m, v) in r.iter().enumerate() {
            let direct: f64 = (0..256 - m).map(|k| y[k] * y[k + m]).sum();
            assert!((v - direct).abs() <= 1e-10 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn autocorrelation_errors() {
        assert!(matches!(
            subband_autocorrelation(&[1.0, 2.0], &[0.0, 0.0], 1),
            Err(Error::DegenerateBand { .. })
        ));
        assert!(subband_autocorrelation(&[1.0, 2.0], &[1.0], 1).is_err());
        assert!(subband_autocorrelation(&[1.0, 2.0], &[1.0, 1.0], 2).is_err());
    }
}
