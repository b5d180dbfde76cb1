use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::lpc::AllPoleModel;
use crate::error::{Error, Result};

/// Power-envelope cepstrum of an all-pole model as real values, `len` terms.
///
/// `ln(g^2 / |A(e^{jw})|^2) = c[0] + sum_{m>=1} c[m] cos(m w)` with
/// `c[0] = 2 ln g` and `c[m]` twice the minimum-phase cepstrum of `1/A`.
pub fn power_cepstrum(model: &AllPoleModel, len: usize) -> Vec<f64> {
    let a = model.lp_coeffs();
    let p = a.len();
    let mut half = vec![0.0; len];
    for m in 1..len {
        let mut acc = if m <= p { -a[m - 1] } else { 0.0 };
        let lo = m.saturating_sub(p).max(1);
        for k in lo..m {
            acc -= (k as f64 / m as f64) * half[k] * a[m - k - 1];
        }
        half[m] = acc;
    }
    let mut c: Vec<f64> = half.into_iter().map(|v| 2.0 * v).collect();
    if len > 0 {
        c[0] = 2.0 * model.gain().ln();
    }
    c
}

/// Complex cepstrum `c[0..n)` of the model's power envelope, by recursion on
/// the LP coefficients.
pub fn lpc_to_cepstrum(model: &AllPoleModel, n: usize) -> Result<Vec<Complex64>> {
    if !model.is_minimum_phase() {
        return Err(Error::Domain("model is not minimum phase".into()));
    }
    Ok(power_cepstrum(model, n)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect())
}

/// Samples `g^2 / |A(e^{j pi t / n})|^2` for `t = 0..n`, the model's temporal
/// power envelope across the analysis window.
pub fn envelope_from_model(model: &AllPoleModel, n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 * model.order() || n_points == 0 {
        return Err(Error::invalid(format!(
            "envelope needs at least {} points, got {n_points}",
            2 * model.order()
        )));
    }
    let mut env = full_circle_envelope(model, 2 * n_points);
    env.truncate(n_points);
    Ok(env)
}

/// Envelope at `w = 2 pi j / n` for `j = 0..n`.
pub(crate) fn full_circle_envelope(model: &AllPoleModel, n: usize) -> Vec<f64> {
    let poly = model.polynomial();
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n];
    // aliasing the polynomial is exact for n > order; fold in case it is not
    for (i, &c) in poly.iter().enumerate() {
        buf[i % n] += Complex64::new(c, 0.0);
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let g2 = model.gain() * model.gain();
    buf.iter().map(|z| g2 / z.norm_sqr()).collect()
}

/// Odd-index part of the Hann-windowed sine projection,
/// `int_0^pi sin^2(u) sin(k u) du` for odd `k`.
fn hann_sine_integral(k: i64) -> f64 {
    if k % 2 == 0 {
        return 0.0;
    }
    let k = k as f64;
    -4.0 / (k * (k * k - 4.0))
}

/// Hann-windowed modulation coefficients from a power cepstrum.
///
/// With `u = pi t / T` spanning the window, coefficient `n` is
/// `(2 / pi) int_0^pi sin^2(u) (ln P(u) - c[0]) e^{-2 i n u} du`, i.e. the
/// windowed Fourier coefficient at `n / T` Hz. Entry 0 carries `c[0]`.
/// Panics unless `cepstrum` holds more than `2 * n_mod` terms. The imaginary part
/// sums over all supplied terms.
pub fn modulation_from_cepstrum(cepstrum: &[f64], n_mod: usize) -> Vec<Complex64> {
    assert!(cepstrum.len() > 2 * n_mod, "cepstrum too short");
    let c = cepstrum;
    let mut out = Vec::with_capacity(n_mod);
    if n_mod > 0 {
        out.push(Complex64::new(c[0], 0.0));
    }
    for n in 1..n_mod {
        let mut re = 0.5 * c[2 * n] - 0.25 * c[2 * n + 2];
        if n >= 2 {
            re -= 0.25 * c[2 * n - 2];
        }
        let two_n = 2 * n as i64;
        let mut im = 0.0;
        for (m, &cm) in c.iter().enumerate().skip(1).step_by(2) {
            let m = m as i64;
            im += cm * (hann_sine_integral(two_n + m) + hann_sine_integral(two_n - m));
        }
        out.push(Complex64::new(re, -im / PI));
    }
    out
}

/// Same quantity as the cepstral route, computed from the sampled envelope:
/// evaluate the model on a `2 * grid`-point circle, take the log, apply the
/// Hann window and transform numerically.
pub fn modulation_via_envelope(
    model: &AllPoleModel,
    n_mod: usize,
    grid: usize,
) -> Result<Vec<Complex64>> {
    if grid < 2 * model.order().max(n_mod) {
        return Err(Error::invalid(format!("grid of {grid} points is too coarse")));
    }
    let env = full_circle_envelope(model, 2 * grid);
    let log_env: Vec<f64> = env.iter().map(|v| v.ln()).collect();
    let c0 = log_env.iter().sum::<f64>() / log_env.len() as f64;
    let mut buf: Vec<Complex64> = (0..grid)
        .map(|j| {
            let u = PI * j as f64 / grid as f64;
            Complex64::new(u.sin().powi(2) * (log_env[j] - c0), 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(grid).process(&mut buf);
    let scale = 2.0 / grid as f64;
    let mut out: Vec<Complex64> = buf.iter().take(n_mod).map(|z| z * scale).collect();
    if n_mod > 0 {
        out[0] = Complex64::new(c0, 0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdlp::lpc::levinson_durbin;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flat_model_has_zero_cepstrum() {
        let m = AllPoleModel::new(vec![0.0; 4], 1.0).unwrap();
        let c = lpc_to_cepstrum(&m, 10).unwrap();
        assert!(c.iter().all(|z| z.norm() == 0.0));
        let env = envelope_from_model(&m, 16).unwrap();
        assert!(env.iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn first_order_series() {
        let m = AllPoleModel::new(vec![-0.5], 1.0).unwrap();
        let c = lpc_to_cepstrum(&m, 12).unwrap();
        assert_abs_diff_eq!(c[0].re, 0.0);
        for (k, z) in c.iter().enumerate().skip(1) {
            let expected = 2.0 * 0.5f64.powi(k as i32) / k as f64;
            assert_abs_diff_eq!(z.re, expected, epsilon = 1e-15);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn gain_law() {
        let m1 = AllPoleModel::new(vec![-0.3, 0.2], 1.5).unwrap();
        let m2 = AllPoleModel::new(vec![-0.3, 0.2], 3.0).unwrap();
        let e1 = envelope_from_model(&m1, 64).unwrap();
        let e2 = envelope_from_model(&m2, 64).unwrap();
        for (a, b) in e1.iter().zip(&e2) {
            assert_abs_diff_eq!(b / a, 4.0, epsilon = 1e-12);
        }
        assert!(envelope_from_model(&m1, 3).is_err());
    }

    #[test]
    fn minimum_phase_required() {
        let m = levinson_durbin(&[1.0, 0.9, 0.7], 2).unwrap();
        assert!(lpc_to_cepstrum(&m, 5).is_ok());
        assert!(matches!(
            AllPoleModel::new(vec![-2.5, 1.5], 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn sine_integral_matches_quadrature() {
        for k in [-7i64, -3, -1, 1, 2, 3, 5, 9, 21] {
            let n = 200_000;
            let h = PI / n as f64;
            let q: f64 = (0..n)
                .map(|j| {
                    let u = (j as f64 + 0.5) * h;
                    u.sin().powi(2) * (k as f64 * u).sin()
                })
                .sum::<f64>()
                * h;
            assert_abs_diff_eq!(hann_sine_integral(k), q, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_cosine_gives_half_amplitude() {
        // ln P = 2 cos(6 u): windowed coefficient at n = 3 is 1, neighbours -1/2
        let mut c = vec![0.0; 40];
        c[6] = 2.0;
        let m = modulation_from_cepstrum(&c, 8);
        assert_abs_diff_eq!(m[3].re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[2].re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(m[4].re, -0.5, epsilon = 1e-15);
        assert!(m.iter().all(|z| z.im.abs() < 1e-15));
    }
}
