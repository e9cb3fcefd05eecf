//! Butterworth low-pass design and zero-phase filtering.
//!
//! The analog target is `|H(f)| = 1 / sqrt(1 + eps * (f / f_p)^(2n))`. The
//! digital realization is a cascade of second-order sections obtained by the
//! bilinear transform, prewarped so the digital response at `f_p` equals the
//! analog one. Filtering runs forward then backward over an odd-reflected
//! extension of the signal, with steady-state initial conditions, so constant
//! signals pass through unchanged and no phase shift is introduced.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: usize,
    pub cutoff_hz: f64,
    /// Passband gain parameter; the response at the cutoff is `1/sqrt(1+eps)`.
    pub epsilon: f64,
    pub sample_rate_hz: f64,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            order: 4,
            cutoff_hz: 500.0,
            epsilon: 1.0,
            sample_rate_hz: 10_000.0,
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::InvalidSpec("order must be at least 1".into()));
        }
        if !self.sample_rate_hz.is_finite() || self.sample_rate_hz <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        let nyquist = self.sample_rate_hz / 2.0;
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz < nyquist) {
            return Err(Error::InvalidSpec(format!(
                "cutoff {} Hz must lie strictly between 0 and Nyquist {} Hz",
                self.cutoff_hz, nyquist
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Edge padding used by [`filter_zero_phase`].
    pub fn pad_len(&self) -> usize {
        3 * 2 * self.order
    }
}

/// Analog Butterworth magnitude `1 / sqrt(1 + eps * (f / f_p)^(2n))`.
pub fn magnitude_response(spec: &FilterSpec, f: f64) -> f64 {
    let ratio = f / spec.cutoff_hz;
    1.0 / (1.0 + spec.epsilon * ratio.powi(2 * spec.order as i32)).sqrt()
}

/// The analog magnitude evaluated at the bilinear-warped frequency. This is
/// what the digital cascade realizes exactly at every `f` below Nyquist.
pub fn prewarped_response(spec: &FilterSpec, f: f64) -> f64 {
    let fs = spec.sample_rate_hz;
    let ratio = (PI * f / fs).tan() / (PI * spec.cutoff_hz / fs).tan();
    1.0 / (1.0 + spec.epsilon * ratio.powi(2 * spec.order as i32)).sqrt()
}

/// One biquad `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Section {
    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Both poles strictly inside the unit circle (Jury conditions).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    /// `|H(e^{jw})|` at normalized angular frequency `w` (radians/sample).
    pub fn magnitude(&self, w: f64) -> f64 {
        let (c1, s1) = (w.cos(), w.sin());
        let (c2, s2) = ((2.0 * w).cos(), (2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = -(self.b1 * s1 + self.b2 * s2);
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = -(self.a1 * s1 + self.a2 * s2);
        (num_re.hypot(num_im)) / (den_re.hypot(den_im))
    }

    /// Direct-form II transposed state for a constant input `x` already at
    /// steady state.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        [y - self.b0 * x, self.b2 * x - self.a2 * y]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoeffs {
    pub order: usize,
    pub sections: Vec<Section>,
    pub overall_gain: f64,
}

impl FilterCoeffs {
    /// Single-pass digital magnitude at `f` Hz for sample rate `fs`.
    pub fn magnitude(&self, f: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * f / fs;
        self.overall_gain.abs() * self.sections.iter().map(|s| s.magnitude(w)).product::<f64>()
    }

    pub fn pad_len(&self) -> usize {
        3 * 2 * self.order
    }

    /// Causal single pass, starting from the steady state for `x[0]`.
    pub fn filter_forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = x.iter().map(|v| v * self.overall_gain).collect();
        let Some(&first) = out.first() else {
            return out;
        };
        let mut level = first;
        for s in &self.sections {
            let [mut z1, mut z2] = s.steady_state(level);
            level *= s.dc_gain();
            for v in out.iter_mut() {
                let input = *v;
                let y = s.b0 * input + z1;
                z1 = s.b1 * input - s.a1 * y + z2;
                z2 = s.b2 * input - s.a2 * y;
                *v = y;
            }
        }
        out
    }
}

/// Designs the digital low-pass cascade for `spec`.
pub fn design_butterworth(spec: &FilterSpec) -> Result<FilterCoeffs> {
    spec.validate()?;
    let n = spec.order;
    let k = 2.0 * spec.sample_rate_hz;
    let warped = k * (PI * spec.cutoff_hz / spec.sample_rate_hz).tan();
    // eps scales the analog corner: (W/Wp)^2n * eps = (W/W0)^2n.
    let w0 = warped * spec.epsilon.powf(-1.0 / (2.0 * n as f64));
    let w0_sq = w0 * w0;

    let mut sections = Vec::with_capacity(n.div_ceil(2));
    for idx in 1..=n / 2 {
        let theta = PI * (2 * idx + n - 1) as f64 / (2 * n) as f64;
        let re = w0 * theta.cos();
        let a0 = k * k - 2.0 * re * k + w0_sq;
        let a1 = 2.0 * (w0_sq - k * k) / a0;
        let a2 = (k * k + 2.0 * re * k + w0_sq) / a0;
        let g = w0_sq / a0;
        sections.push(Section {
            b0: g,
            b1: 2.0 * g,
            b2: g,
            a1,
            a2,
        });
    }
    if n % 2 == 1 {
        let a0 = k + w0;
        let g = w0 / a0;
        sections.push(Section {
            b0: g,
            b1: g,
            b2: 0.0,
            a1: (w0 - k) / a0,
            a2: 0.0,
        });
    }
    if let Some(bad) = sections.iter().position(|s| !s.is_stable()) {
        return Err(Error::Numeric(format!("section {bad} is unstable")));
    }
    Ok(FilterCoeffs {
        order: n,
        sections,
        overall_gain: 1.0,
    })
}

/// Forward-backward filtering with odd reflection padding of
/// `3 * 2 * order` samples at each end.
pub fn filter_zero_phase(coeffs: &FilterCoeffs, series: &[f64]) -> Result<Vec<f64>> {
    let pad = coeffs.pad_len();
    let n = series.len();
    if n <= pad {
        return Err(Error::SeriesTooShort { len: n, min: pad });
    }
    let first = series[0];
    let last = series[n - 1];
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - series[i]));
    ext.extend_from_slice(series);
    ext.extend((1..=pad).map(|i| 2.0 * last - series[n - 1 - i]));

    let mut y = coeffs.filter_forward(&ext);
    y.reverse();
    let mut y = coeffs.filter_forward(&y);
    y.reverse();
    Ok(y[pad..pad + n].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn analog_magnitude_values() {
        let spec = FilterSpec::default();
        assert_eq!(magnitude_response(&spec, 0.0), 1.0);
        for order in 1..8 {
            let s = FilterSpec { order, ..spec };
            assert!((magnitude_response(&s, s.cutoff_hz) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
        let s2 = FilterSpec { order: 2, ..spec };
        assert!((magnitude_response(&s2, 1000.0) - 1.0 / 17f64.sqrt()).abs() < 1e-15);
        assert!((magnitude_response(&s2, 1000.0) - 0.24254).abs() < 1e-5);
    }

    #[test]
    fn invalid_specs() {
        let base = FilterSpec::default();
        for bad in [
            FilterSpec { cutoff_hz: 5000.0, ..base },
            FilterSpec { cutoff_hz: 6000.0, ..base },
            FilterSpec { cutoff_hz: 0.0, ..base },
            FilterSpec { order: 0, ..base },
            FilterSpec { epsilon: 0.0, ..base },
        ] {
            assert!(matches!(design_butterworth(&bad), Err(Error::InvalidSpec(_))), "{bad:?}");
        }
    }

    #[test]
    fn design_dc_and_cutoff() {
        for order in 1..=8 {
            for &eps in &[0.25, 1.0, 3.0] {
                for &fc in &[50.0, 500.0, 2000.0, 4500.0] {
                    let spec = FilterSpec {
                        order,
                        cutoff_hz: fc,
                        epsilon: eps,
                        sample_rate_hz: 10_000.0,
                    };
                    let c = design_butterworth(&spec).unwrap();
                    assert_eq!(c.sections.len(), order.div_ceil(2));
                    assert!(c.sections.iter().all(Section::is_stable));
                    assert!((c.magnitude(0.0, 1e4) - 1.0).abs() <= 1e-9);
                    let at_cut = c.magnitude(fc, 1e4);
                    assert!((at_cut - magnitude_response(&spec, fc)).abs() <= 1e-6, "{spec:?} {at_cut}");
                }
            }
        }
    }

    #[test]
    fn digital_matches_prewarped_target_on_grid() {
        let spec = FilterSpec::default();
        let c = design_butterworth(&spec).unwrap();
        let nyq = spec.sample_rate_hz / 2.0;
        for i in 0..=200 {
            let f = 0.4 * nyq * i as f64 / 200.0;
            let got = c.magnitude(f, spec.sample_rate_hz);
            let want = prewarped_response(&spec, f);
            assert!(((got - want) / want).abs() <= 1e-3, "f={f} got={got} want={want}");
        }
    }

    #[test]
    fn constant_series_is_fixed_point() {
        let c = design_butterworth(&FilterSpec::default()).unwrap();
        let x = vec![7.3; 1000];
        let y = filter_zero_phase(&c, &x).unwrap();
        assert_eq!(y.len(), 1000);
        assert!(y.iter().all(|v| (v - 7.3).abs() <= 1e-9));
    }

    #[test]
    fn too_short_series() {
        let c = design_butterworth(&FilterSpec::default()).unwrap();
        assert!(matches!(
            filter_zero_phase(&c, &[1.0; 24]),
            Err(Error::SeriesTooShort { len: 24, min: 24 })
        ));
        assert!(filter_zero_phase(&c, &[1.0; 25]).is_ok());
    }

    #[test]
    fn two_tone_spectrum() {
        use rustfft::{num_complex::Complex, FftPlanner};
        let spec = FilterSpec::default();
        let coeffs = design_butterworth(&spec).unwrap();
        let n = 10_000;
        let fs = spec.sample_rate_hz;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * 50.0 * t).sin() + (2.0 * PI * 3000.0 * t).sin()
            })
            .collect();
        let y = filter_zero_phase(&coeffs, &x).unwrap();
        let mut buf: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        // one-hertz bins: integer tones land exactly on bins
        let amp = |hz: usize| 2.0 * buf[hz].norm() / n as f64;
        assert!(amp(50) >= 0.999, "{}", amp(50));
        let bound = magnitude_response(&spec, 3000.0).powi(2) + 1e-3;
        assert!(amp(3000) <= bound, "{} > {bound}", amp(3000));
    }

    proptest! {
        #[test]
        fn linear(
            x in proptest::collection::vec(-100.0f64..100.0, 64),
            y in proptest::collection::vec(-100.0f64..100.0, 64),
            a in -5.0f64..5.0,
            b in -5.0f64..5.0,
        ) {
            let c = design_butterworth(&FilterSpec::default()).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = filter_zero_phase(&c, &mix).unwrap();
            let fx = filter_zero_phase(&c, &x).unwrap();
            let fy = filter_zero_phase(&c, &y).unwrap();
            let scale = lhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..lhs.len() {
                let rhs = a * fx[i] + b * fy[i];
                prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn constants_pass_through(level in -1e4f64..1e4, len in 25usize..400) {
            let c = design_butterworth(&FilterSpec::default()).unwrap();
            let y = filter_zero_phase(&c, &vec![level; len]).unwrap();
            for v in y {
                prop_assert!((v - level).abs() <= 1e-9 * level.abs().max(1.0));
            }
        }
    }
}
