//! Flat block-fading channel and SNR-calibrated mixing.

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{mean_power, IqBuffer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Awgn,
    Rician,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub kind: ChannelKind,
    /// Rician K-factor in dB; ignored for AWGN.
    #[serde(default = "default_k_db")]
    pub rician_k_db: f64,
    /// Mixture SNR in dB, referenced to the mean power of the faded sum.
    pub snr_db: f64,
    /// Disable receiver noise entirely (equivalent to infinite SNR).
    #[serde(default)]
    pub noiseless: bool,
}

fn default_k_db() -> f64 {
    10.0
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            kind: ChannelKind::Rician,
            rician_k_db: default_k_db(),
            snr_db: 10.0,
            noiseless: false,
        }
    }
}

impl ChannelConfig {
    pub fn awgn(snr_db: f64) -> Self {
        Self {
            kind: ChannelKind::Awgn,
            snr_db,
            ..Self::default()
        }
    }

    pub fn noiseless(kind: ChannelKind) -> Self {
        Self {
            kind,
            noiseless: true,
            ..Self::default()
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = snr_db;
        self
    }

    pub fn noise_enabled(&self) -> bool {
        !self.noiseless && self.snr_db != f64::INFINITY
    }

    pub fn validate(&self) -> Result<()> {
        if self.rician_k_db.is_nan() || self.rician_k_db == f64::NEG_INFINITY {
            return Err(Error::invalid("rician_k_db must be a number"));
        }
        if self.snr_db.is_nan() || (self.snr_db.is_infinite() && self.snr_db < 0.0) {
            return Err(Error::invalid(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        Ok(())
    }
}

/// One Rician block-fading coefficient with unit mean power.
///
/// `h = sqrt(K/(K+1)) + sqrt(1/(2(K+1))) (n1 + j n2)`, `K = 10^(k_db/10)`.
pub fn rician_coeff<S: Scalar, R: Rng + ?Sized>(k_db: f64, rng: &mut R) -> Complex<S> {
    let k = 10f64.powf(k_db / 10.0);
    if k.is_infinite() {
        return Complex::new(S::one(), S::zero());
    }
    let los = (k / (k + 1.0)).sqrt();
    let scatter = (1.0 / (2.0 * (k + 1.0))).sqrt();
    let n1: f64 = rng.sample(StandardNormal);
    let n2: f64 = rng.sample(StandardNormal);
    Complex::new(S::lit(los + scatter * n1), S::lit(scatter * n2))
}

/// Circularly-symmetric complex Gaussian with total variance `var`.
pub fn complex_noise<S: Scalar, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex<S> {
    let sigma = (var / 2.0).sqrt();
    let a: f64 = rng.sample(StandardNormal);
    let b: f64 = rng.sample(StandardNormal);
    Complex::new(S::lit(sigma * a), S::lit(sigma * b))
}

/// Sum the faded signals and add receiver noise at the configured SNR.
///
/// For `ChannelKind::Awgn` all coefficients are forced to one. The noise
/// variance is `P_s / 10^(snr/10)` with `P_s` the empirical mean power of the
/// noiseless sum.
pub fn mix<S: Scalar, R: Rng + ?Sized>(
    signals: &[IqBuffer<S>],
    coeffs: &[Complex<S>],
    config: &ChannelConfig,
    rng: &mut R,
) -> Result<IqBuffer<S>> {
    let sum = superpose(signals, coeffs, config.kind)?;
    let fs = signals[0].sample_rate_hz();
    if !config.noise_enabled() {
        return IqBuffer::new(sum, fs);
    }
    let p_s = mean_power(&sum).as_f64();
    let var = p_s / 10f64.powf(config.snr_db / 10.0);
    let noisy = sum.into_iter().map(|z| z + complex_noise::<S, R>(rng, var)).collect();
    IqBuffer::new(noisy, fs)
}

/// Noiseless `sum_m h_m x_m`.
pub fn superpose<S: Scalar>(
    signals: &[IqBuffer<S>],
    coeffs: &[Complex<S>],
    kind: ChannelKind,
) -> Result<Vec<Complex<S>>> {
    let first = signals
        .first()
        .ok_or_else(|| Error::invalid("mix needs at least one signal"))?;
    if coeffs.len() != signals.len() {
        return Err(Error::invalid(format!(
            "{} signals but {} channel coefficients",
            signals.len(),
            coeffs.len()
        )));
    }
    for (i, s) in signals.iter().enumerate() {
        if s.len() != first.len() {
            return Err(Error::invalid(format!(
                "signal {i} has {} samples, expected {}",
                s.len(),
                first.len()
            )));
        }
        if s.sample_rate_hz() != first.sample_rate_hz() {
            return Err(Error::invalid(format!(
                "signal {i} sample rate {} differs from {}",
                s.sample_rate_hz(),
                first.sample_rate_hz()
            )));
        }
    }
    let unit = Complex::new(S::one(), S::zero());
    let mut sum = vec![Complex::new(S::zero(), S::zero()); first.len()];
    for (s, &h) in signals.iter().zip(coeffs) {
        let h = match kind {
            ChannelKind::Awgn => unit,
            ChannelKind::Rician => h,
        };
        for (acc, &z) in sum.iter_mut().zip(s.samples()) {
            *acc += h * z;
        }
    }
    Ok(sum)
}

/// `10 log10(P_clean / P_noise)` where the noise is `noisy - clean`.
pub fn measured_snr_db<S: Scalar>(clean: &[Complex<S>], noisy: &[Complex<S>]) -> f64 {
    let p_s = mean_power(clean).as_f64();
    let noise: Vec<Complex<S>> = noisy.iter().zip(clean).map(|(y, x)| *y - *x).collect();
    let p_n = mean_power(&noise).as_f64();
    10.0 * (p_s / p_n).log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    type C = Complex<f64>;

    fn tone(n: usize, fs: f64) -> IqBuffer<f64> {
        let v = (0..n).map(|i| C::from_polar(1.0, 0.37 * i as f64)).collect();
        IqBuffer::new(v, fs).unwrap()
    }

    #[test]
    fn infinite_k_is_line_of_sight() {
        let mut rng = RngStream::new(1, 0).rng();
        let h: C = rician_coeff(f64::INFINITY, &mut rng);
        assert_eq!(h, C::new(1.0, 0.0));
        let h: C = rician_coeff(400.0, &mut rng);
        assert!((h - C::new(1.0, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn rician_unit_mean_power_and_variance() {
        // closed-form Rician moments with unit mean power:
        // E|h|^2 = 1, Var|h|^2 = (2K + 1) / (K + 1)^2
        let mut rng = RngStream::new(9, 1).rng();
        let n = 1_000_000;
        let k_db = 10.0;
        let k = 10f64.powf(k_db / 10.0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let p = rician_coeff::<f64, _>(k_db, &mut rng).norm_sqr();
            s1 += p;
            s2 += p * p;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!((mean - 1.0).abs() < 1e-2, "mean {mean}");
        let want = (2.0 * k + 1.0) / ((k + 1.0) * (k + 1.0));
        assert!((var - want).abs() < 0.05 * want, "var {var} vs {want}");
    }

    #[test]
    fn noiseless_single_is_identity() {
        let x = tone(32, 1.0);
        let mut rng = RngStream::new(0, 0).rng();
        let cfg = ChannelConfig::noiseless(ChannelKind::Awgn);
        let y = mix(std::slice::from_ref(&x), &[C::new(0.3, 0.1)], &cfg, &mut rng).unwrap();
        assert_eq!(y, x);
        let cfg = ChannelConfig::awgn(f64::INFINITY);
        let y = mix(std::slice::from_ref(&x), &[C::new(1.0, 0.0)], &cfg, &mut rng).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn superposition_doubles() {
        let x = tone(16, 1.0);
        let mut rng = RngStream::new(0, 0).rng();
        let one = C::new(1.0, 0.0);
        let y = mix(
            &[x.clone(), x.clone()],
            &[one, one],
            &ChannelConfig::noiseless(ChannelKind::Rician),
            &mut rng,
        )
        .unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert_eq!(*a, *b * 2.0);
        }
    }

    #[test]
    fn zero_db_noise_power() {
        let n = 100_000;
        let x = tone(n, 1.0);
        let mut rng = RngStream::new(5, 2).rng();
        let y = mix(
            std::slice::from_ref(&x),
            &[C::new(1.0, 0.0)],
            &ChannelConfig::awgn(0.0),
            &mut rng,
        )
        .unwrap();
        let noise: Vec<C> = y.samples().iter().zip(x.samples()).map(|(a, b)| a - b).collect();
        let ratio = mean_power(&noise) / x.mean_power();
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn mix_is_deterministic() {
        let x = tone(256, 1.0);
        let cfg = ChannelConfig::awgn(3.0);
        let a = mix(
            std::slice::from_ref(&x),
            &[C::new(1.0, 0.0)],
            &cfg,
            &mut RngStream::new(4, 4).rng(),
        )
        .unwrap();
        let b = mix(&[x], &[C::new(1.0, 0.0)], &cfg, &mut RngStream::new(4, 4).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rician_coefficients_are_applied() {
        let x = tone(8, 1.0);
        let h = C::new(0.5, -0.5);
        let y = superpose(std::slice::from_ref(&x), &[h], ChannelKind::Rician).unwrap();
        for (a, b) in y.iter().zip(x.samples()) {
            assert_eq!(*a, h * b);
        }
        let y = superpose(std::slice::from_ref(&x), &[h], ChannelKind::Awgn).unwrap();
        assert_eq!(y, x.samples());
    }

    #[test]
    fn mix_validation() {
        let mut rng = RngStream::new(0, 0).rng();
        let cfg = ChannelConfig::awgn(10.0);
        let one = C::new(1.0, 0.0);
        assert!(mix::<f64, _>(&[], &[], &cfg, &mut rng).is_err());
        assert!(mix(&[tone(4, 1.0), tone(5, 1.0)], &[one, one], &cfg, &mut rng).is_err());
        assert!(mix(&[tone(4, 1.0), tone(4, 2.0)], &[one, one], &cfg, &mut rng).is_err());
        assert!(mix(&[tone(4, 1.0)], &[one, one], &cfg, &mut rng).is_err());
    }
}
