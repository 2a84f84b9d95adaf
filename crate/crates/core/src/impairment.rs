//! Per-emitter transmitter distortion chain.
//!
//! Each emitter applies, in order: I/Q imbalance, a shift to its digital IF
//! together with an additive spurious tone and carrier leakage, then a
//! memoryless polynomial power amplifier.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::IqBuffer;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterProfile {
    /// Gain imbalance between I and Q branches (1 = balanced).
    pub gain_imbalance: f64,
    /// Quadrature phase error in radians.
    pub phase_bias_rad: f64,
    pub spur_amplitude: f64,
    /// Spurious tone offset relative to the emitter's IF.
    pub spur_offset_hz: f64,
    pub leakage_amplitude: f64,
    /// Power amplifier polynomial coefficients, first order first.
    pub pa_coeffs: Vec<Complex<f64>>,
    /// Digital IF; assigned from the overlap layout when omitted.
    #[serde(default)]
    pub if_offset_hz: f64,
}

impl EmitterProfile {
    /// A profile whose distortion chain is the exact identity.
    pub fn neutral() -> Self {
        Self {
            gain_imbalance: 1.0,
            phase_bias_rad: 0.0,
            spur_amplitude: 0.0,
            spur_offset_hz: 0.0,
            leakage_amplitude: 0.0,
            pa_coeffs: vec![Complex::new(1.0, 0.0)],
            if_offset_hz: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scalars = [
            ("gain_imbalance", self.gain_imbalance),
            ("phase_bias_rad", self.phase_bias_rad),
            ("spur_amplitude", self.spur_amplitude),
            ("spur_offset_hz", self.spur_offset_hz),
            ("leakage_amplitude", self.leakage_amplitude),
            ("if_offset_hz", self.if_offset_hz),
        ];
        for (name, v) in scalars {
            if !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be finite, got {v}")));
            }
        }
        if self.gain_imbalance <= 0.0 {
            return Err(Error::invalid(format!(
                "gain_imbalance must be positive, got {}",
                self.gain_imbalance
            )));
        }
        if self.spur_amplitude < 0.0 || self.leakage_amplitude < 0.0 {
            return Err(Error::invalid("tone amplitudes must be non-negative"));
        }
        if self.pa_coeffs.is_empty() {
            return Err(Error::invalid("pa_coeffs must not be empty"));
        }
        if self.pa_coeffs.iter().any(|b| !(b.re.is_finite() && b.im.is_finite())) {
            return Err(Error::invalid("pa_coeffs must be finite"));
        }
        Ok(())
    }

    /// Draw a profile uniformly from `ranges`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, ranges: &ImpairmentRanges, if_offset_hz: f64) -> Self {
        let mut u = |(lo, hi): (f64, f64)| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let gain_imbalance = u(ranges.gain_imbalance);
        let phase_bias_rad = u(ranges.phase_bias_deg).to_radians();
        let spur_amplitude = u(ranges.spur_amplitude);
        let spur_offset_hz = u(ranges.spur_offset_hz);
        let leakage_amplitude = u(ranges.leakage_amplitude);
        let cubic = u(ranges.pa_cubic);
        Self {
            gain_imbalance,
            phase_bias_rad,
            spur_amplitude,
            spur_offset_hz,
            leakage_amplitude,
            pa_coeffs: vec![Complex::new(1.0, 0.0), Complex::new(0.0, 0.0), Complex::new(cubic, 0.0)],
            if_offset_hz,
        }
    }
}

/// Uniform draw intervals used when emitter profiles are sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentRanges {
    pub gain_imbalance: (f64, f64),
    pub phase_bias_deg: (f64, f64),
    pub spur_amplitude: (f64, f64),
    pub spur_offset_hz: (f64, f64),
    pub leakage_amplitude: (f64, f64),
    /// Real third-order PA coefficient; the profile uses `[1, 0, b3]`.
    pub pa_cubic: (f64, f64),
}

impl Default for ImpairmentRanges {
    fn default() -> Self {
        Self {
            gain_imbalance: (0.9, 1.1),
            phase_bias_deg: (-5.0, 5.0),
            spur_amplitude: (0.01, 0.05),
            spur_offset_hz: (1e6, 5e6),
            leakage_amplitude: (0.01, 0.05),
            pa_cubic: (-0.05, -0.01),
        }
    }
}

/// I/Q imbalance coefficients `(mu, nu)` for gain `g` and phase error `zeta`.
pub fn iq_coefficients(g: f64, zeta: f64) -> (Complex<f64>, Complex<f64>) {
    let (s, c) = (zeta / 2.0).sin_cos();
    let mu = Complex::new(0.5 * (g + 1.0) * c, 0.5 * (g - 1.0) * s);
    let nu = Complex::new(0.5 * (g - 1.0) * c, 0.5 * (g + 1.0) * s);
    (mu, nu)
}

fn to_s<S: Scalar>(z: Complex<f64>) -> Complex<S> {
    Complex::new(S::lit(z.re), S::lit(z.im))
}

/// `out[n] = mu * x[n] + nu * conj(x[n])`.
pub fn iq_imbalance<S: Scalar>(x: &IqBuffer<S>, gain: f64, phase_bias_rad: f64) -> Result<IqBuffer<S>> {
    if !(gain.is_finite() && phase_bias_rad.is_finite()) {
        return Err(Error::invalid("I/Q imbalance parameters must be finite"));
    }
    if gain <= 0.0 {
        return Err(Error::invalid(format!("gain imbalance must be positive, got {gain}")));
    }
    let (mu, nu) = iq_coefficients(gain, phase_bias_rad);
    let (mu, nu) = (to_s::<S>(mu), to_s::<S>(nu));
    x.map_samples(|_, z| mu * z + nu * z.conj())
}

/// Shift to the emitter IF and add the spurious tone and carrier leakage:
///
/// `out[n] = x[n] e^{j2π f t} + a_st e^{j2π (f + f_st) t} + a_cl e^{j2π f t}`, `t = n / fs`.
pub fn upconvert_with_spur_leak<S: Scalar>(x: &IqBuffer<S>, profile: &EmitterProfile) -> Result<IqBuffer<S>> {
    let fs = x.sample_rate_hz();
    let f = profile.if_offset_hz;
    let f_st = profile.spur_offset_hz;
    let required = 2.0 * (f.abs() + f_st.abs());
    if fs <= required {
        return Err(Error::Aliasing {
            sample_rate_hz: fs,
            required_hz: required,
        });
    }
    let a_st = S::lit(profile.spur_amplitude);
    let a_cl = S::lit(profile.leakage_amplitude);
    x.map_samples(|n, z| {
        let t = n as f64 / fs;
        let carrier = to_s::<S>(Complex::from_polar(1.0, 2.0 * PI * f * t));
        let spur = to_s::<S>(Complex::from_polar(1.0, 2.0 * PI * (f + f_st) * t));
        z * carrier + spur * a_st + carrier * a_cl
    })
}

/// Memoryless polynomial `sum_l b_l x^l` (l starting at 1), evaluated by Horner.
pub fn pa_nonlinearity<S: Scalar>(x: &IqBuffer<S>, coeffs: &[Complex<f64>]) -> Result<IqBuffer<S>> {
    if coeffs.is_empty() {
        return Err(Error::invalid("PA coefficient list must not be empty"));
    }
    let b: Vec<Complex<S>> = coeffs.iter().map(|&c| to_s(c)).collect();
    x.map_samples(|_, z| {
        let mut acc = b[b.len() - 1];
        for &bl in b[..b.len() - 1].iter().rev() {
            acc = bl + z * acc;
        }
        z * acc
    })
}

/// Full transmitter chain for one emitter.
pub fn distort<S: Scalar>(x: &IqBuffer<S>, profile: &EmitterProfile) -> Result<IqBuffer<S>> {
    profile.validate()?;
    let stage1 = iq_imbalance(x, profile.gain_imbalance, profile.phase_bias_rad)?;
    let stage2 = upconvert_with_spur_leak(&stage1, profile)?;
    pa_nonlinearity(&stage2, &profile.pa_coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type C = Complex<f64>;

    fn buf(v: Vec<C>, fs: f64) -> IqBuffer<f64> {
        IqBuffer::new(v, fs).unwrap()
    }

    fn close(a: C, b: C, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn iq_identity_case() {
        let (mu, nu) = iq_coefficients(1.0, 0.0);
        assert_eq!(mu, C::new(1.0, 0.0));
        assert_eq!(nu, C::new(0.0, 0.0));
        let x = buf(vec![C::new(0.3, -0.7), C::new(-1.0, 2.0)], 1.0);
        assert_eq!(iq_imbalance(&x, 1.0, 0.0).unwrap(), x);
    }

    #[test]
    fn iq_gain_two() {
        let (mu, nu) = iq_coefficients(2.0, 0.0);
        assert!(close(mu, C::new(1.5, 0.0), 1e-15));
        assert!(close(nu, C::new(0.5, 0.0), 1e-15));
        let y = iq_imbalance(&buf(vec![C::new(1.0, 0.0)], 1.0), 2.0, 0.0).unwrap();
        assert!(close(y.samples()[0], C::new(2.0, 0.0), 1e-12));
    }

    #[test]
    fn iq_quarter_phase() {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let (mu, nu) = iq_coefficients(1.0, std::f64::consts::FRAC_PI_2);
        assert!(close(mu, C::new(r, 0.0), 1e-12));
        assert!(close(nu, C::new(0.0, r), 1e-12));
        let y = iq_imbalance(&buf(vec![C::new(1.0, 0.0)], 1.0), 1.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert!(close(y.samples()[0], C::new(r, r), 1e-12));
    }

    #[test]
    fn iq_rejects_bad_params() {
        let x = buf(vec![C::new(1.0, 0.0)], 1.0);
        assert!(iq_imbalance(&x, 0.0, 0.0).is_err());
        assert!(iq_imbalance(&x, f64::NAN, 0.0).is_err());
        assert!(iq_imbalance(&x, 1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn upconvert_neutral_is_identity() {
        let x = buf(vec![C::new(0.5, 0.25), C::new(-0.1, 0.9)], 100.0);
        let y = upconvert_with_spur_leak(&x, &EmitterProfile::neutral()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn spur_at_quarter_rate_cycles() {
        let fs = 100.0;
        let x = buf(vec![C::new(0.0, 0.0); 8], fs);
        let p = EmitterProfile {
            spur_amplitude: 1.0,
            spur_offset_hz: fs / 4.0,
            ..EmitterProfile::neutral()
        };
        let y = upconvert_with_spur_leak(&x, &p).unwrap();
        let cycle = [C::new(1.0, 0.0), C::new(0.0, 1.0), C::new(-1.0, 0.0), C::new(0.0, -1.0)];
        for (n, z) in y.samples().iter().enumerate() {
            assert!(close(*z, cycle[n % 4], 1e-12), "n={n}: {z}");
        }
    }

    #[test]
    fn leakage_is_constant_at_zero_if() {
        let x = buf(vec![C::new(0.0, 0.0); 5], 10.0);
        let p = EmitterProfile {
            leakage_amplitude: 0.5,
            ..EmitterProfile::neutral()
        };
        let y = upconvert_with_spur_leak(&x, &p).unwrap();
        assert!(y.samples().iter().all(|z| *z == C::new(0.5, 0.0)));
    }

    #[test]
    fn upconvert_rejects_aliasing() {
        let x = buf(vec![C::new(0.0, 0.0); 4], 10.0);
        let p = EmitterProfile {
            if_offset_hz: 3.0,
            spur_offset_hz: 2.0,
            ..EmitterProfile::neutral()
        };
        assert!(matches!(upconvert_with_spur_leak(&x, &p), Err(Error::Aliasing { .. })));
    }

    #[test]
    fn pa_examples() {
        let one = buf(vec![C::new(1.0, 0.0)], 1.0);
        let y = pa_nonlinearity(&one, &[C::new(1.0, 0.0), C::new(0.5, 0.0)]).unwrap();
        assert!(close(y.samples()[0], C::new(1.5, 0.0), 1e-12));
        let j = buf(vec![C::new(0.0, 1.0)], 1.0);
        let y = pa_nonlinearity(&j, &[C::new(0.0, 0.0), C::new(1.0, 0.0)]).unwrap();
        assert!(close(y.samples()[0], C::new(-1.0, 0.0), 1e-12));
        assert!(pa_nonlinearity(&one, &[]).is_err());
    }

    #[test]
    fn distort_chain_examples() {
        let x = buf(vec![C::new(1.0, 0.0)], 1.0);
        let p = EmitterProfile {
            pa_coeffs: vec![C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.1, 0.0)],
            ..EmitterProfile::neutral()
        };
        assert!(close(distort(&x, &p).unwrap().samples()[0], C::new(1.1, 0.0), 1e-12));
        let p = EmitterProfile {
            gain_imbalance: 2.0,
            ..EmitterProfile::neutral()
        };
        assert!(close(distort(&x, &p).unwrap().samples()[0], C::new(2.0, 0.0), 1e-12));
    }

    #[test]
    fn default_draw_respects_ranges() {
        let mut rng = crate::rng::RngStream::new(3, 0).rng();
        let r = ImpairmentRanges::default();
        for _ in 0..100 {
            let p = EmitterProfile::draw(&mut rng, &r, 0.0);
            p.validate().unwrap();
            assert!((0.9..1.1).contains(&p.gain_imbalance));
            assert!(p.phase_bias_rad.abs() <= 5f64.to_radians());
            assert!((1e6..5e6).contains(&p.spur_offset_hz));
            assert!((-0.05..-0.01).contains(&p.pa_coeffs[2].re));
        }
    }

    fn arb_samples() -> impl Strategy<Value = Vec<C>> {
        prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0).prop_map(|(a, b)| C::new(a, b)), 1..64)
    }

    proptest! {
        #[test]
        fn iq_matches_real_matrix(xs in arb_samples(), g in 0.5f64..1.5, zeta in -0.5f64..0.5) {
            // out = [[mr+nr, ni-mi], [mi+ni, mr-nr]] [re, im]^T
            let (mu, nu) = iq_coefficients(g, zeta);
            let m = [[mu.re + nu.re, nu.im - mu.im], [mu.im + nu.im, mu.re - nu.re]];
            let y = iq_imbalance(&buf(xs.clone(), 1.0), g, zeta).unwrap();
            for (x, z) in xs.iter().zip(y.samples()) {
                let re = m[0][0] * x.re + m[0][1] * x.im;
                let im = m[1][0] * x.re + m[1][1] * x.im;
                prop_assert!((z.re - re).abs() < 1e-12 && (z.im - im).abs() < 1e-12);
            }
        }

        #[test]
        fn neutral_distort_is_bit_exact(xs in arb_samples()) {
            let x = buf(xs, 1e6);
            prop_assert_eq!(distort(&x, &EmitterProfile::neutral()).unwrap(), x);
        }

        #[test]
        fn trailing_zero_pa_is_identity(xs in arb_samples(), zeros in 0usize..5) {
            let mut b = vec![C::new(1.0, 0.0)];
            b.extend(std::iter::repeat_n(C::new(0.0, 0.0), zeros));
            let x = buf(xs, 1.0);
            let y = pa_nonlinearity(&x, &b).unwrap();
            prop_assert_eq!(y, x);
        }

        #[test]
        fn stages_preserve_length(xs in arb_samples(), g in 0.8f64..1.2) {
            let n = xs.len();
            let x = buf(xs, 120e6);
            let p = EmitterProfile {
                gain_imbalance: g,
                spur_amplitude: 0.02,
                spur_offset_hz: 2e6,
                leakage_amplitude: 0.03,
                if_offset_hz: 13e6,
                pa_coeffs: vec![C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(-0.03, 0.0)],
                ..EmitterProfile::neutral()
            };
            prop_assert_eq!(distort(&x, &p).unwrap().len(), n);
        }
    }
}
