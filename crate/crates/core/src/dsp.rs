//! Baseband symbol generation and root-raised-cosine pulse shaping.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A finite complex baseband waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct IqBuffer<S: Scalar> {
    samples: Vec<Complex<S>>,
    sample_rate_hz: f64,
}

impl<S: Scalar> IqBuffer<S> {
    pub fn new(samples: Vec<Complex<S>>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("IQ buffer must hold at least one sample"));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::invalid(format!(
                "sample rate must be positive and finite, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[Complex<S>] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex<S>> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean of |x|^2 over the buffer.
    pub fn mean_power(&self) -> S {
        mean_power(&self.samples)
    }

    /// Apply a per-sample map, keeping the sample rate. The result is
    /// re-validated so non-finite outputs surface as errors.
    pub(crate) fn map_samples<F>(&self, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, Complex<S>) -> Complex<S>,
    {
        let out = self.samples.iter().enumerate().map(|(n, &z)| f(n, z)).collect();
        IqBuffer::new(out, self.sample_rate_hz)
    }
}

pub(crate) fn mean_power<S: Scalar>(xs: &[Complex<S>]) -> S {
    if xs.is_empty() {
        return S::zero();
    }
    xs.iter().map(|z| z.norm_sqr()).sum::<S>() / S::from_usize_lossy(xs.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RrcSpec {
    pub rolloff: f64,
    pub span_symbols: usize,
    pub sps: usize,
}

impl Default for RrcSpec {
    fn default() -> Self {
        Self {
            rolloff: 0.3,
            span_symbols: 10,
            sps: 6,
        }
    }
}

impl RrcSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rolloff > 0.0 && self.rolloff <= 1.0) {
            return Err(Error::invalid(format!(
                "RRC roll-off must lie in (0, 1], got {}",
                self.rolloff
            )));
        }
        if self.span_symbols == 0 || self.sps == 0 {
            return Err(Error::invalid("RRC span and samples-per-symbol must be positive"));
        }
        Ok(())
    }

    pub fn num_taps(&self) -> usize {
        self.span_symbols * self.sps + 1
    }

    /// Samples of filter transient at each end of a shaped burst.
    pub fn transient_len(&self) -> usize {
        self.span_symbols * self.sps
    }
}

/// Gray-coded QPSK. Bit pairs `(b1, b0)` map to `((1-2*b1) + j(1-2*b0)) / sqrt(2)`.
pub fn map_qpsk<S: Scalar>(bits: &[u8]) -> Result<Vec<Complex<S>>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "QPSK mapping needs an even number of bits, got {}",
            bits.len()
        )));
    }
    let amp = S::FRAC_1_SQRT_2();
    bits.chunks_exact(2)
        .map(|pair| {
            let axis = |b: u8| match b {
                0 => Ok(amp),
                1 => Ok(-amp),
                other => Err(Error::invalid(format!("bit value {other} is not 0 or 1"))),
            };
            Ok(Complex::new(axis(pair[0])?, axis(pair[1])?))
        })
        .collect()
}

pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<u8> {
    (0..n).map(|_| rng.gen_range(0..2u8)).collect()
}

/// Unnormalized RRC impulse response at `t` (in symbol periods).
///
/// The removable singularities at `t = 0` and `|t| = 1/(4 alpha)` are
/// evaluated by their analytic limits.
pub fn rrc_response<S: Scalar>(t: S, rolloff: S) -> S {
    let one = S::one();
    let two = S::lit(2.0);
    let four = S::lit(4.0);
    let pi = S::PI();
    let a = rolloff;
    let eps = S::lit(1e-9);

    if t.abs() < eps {
        return one - a + four * a / pi;
    }
    let x = four * a * t;
    if (one - x * x).abs() < eps {
        let arg = pi / (four * a);
        return a / two.sqrt() * ((one + two / pi) * arg.sin() + (one - two / pi) * arg.cos());
    }
    let num = (pi * t * (one - a)).sin() + four * a * t * (pi * t * (one + a)).cos();
    let den = pi * t * (one - x * x);
    num / den
}

/// Symmetric RRC taps normalized to unit energy.
pub fn rrc_taps<S: Scalar>(spec: &RrcSpec) -> Result<Vec<S>> {
    spec.validate()?;
    let n = spec.num_taps();
    let half = (n - 1) / 2;
    let sps = S::from_usize_lossy(spec.sps);
    let a = S::lit(spec.rolloff);
    let mut taps: Vec<S> = (0..n)
        .map(|i| {
            // mirror so both halves are evaluated at identical |t|
            let d = i.abs_diff(half);
            rrc_response(S::from_usize_lossy(d) / sps, a)
        })
        .collect();
    let norm = taps.iter().map(|&h| h * h).sum::<S>().sqrt();
    for h in &mut taps {
        *h /= norm;
    }
    Ok(taps)
}

/// Zero-stuff by `sps` and convolve with the RRC taps (full convolution).
///
/// Output length is `sps * symbols.len() + taps - 1`.
pub fn pulse_shape<S: Scalar>(symbols: &[Complex<S>], spec: &RrcSpec, symbol_rate_hz: f64) -> Result<IqBuffer<S>> {
    if symbols.is_empty() {
        return Err(Error::invalid("pulse shaping needs at least one symbol"));
    }
    let taps = rrc_taps::<S>(spec)?;
    let out = shape_with_taps(symbols, &taps, spec.sps);
    IqBuffer::new(out, symbol_rate_hz * spec.sps as f64)
}

pub(crate) fn shape_with_taps<S: Scalar>(symbols: &[Complex<S>], taps: &[S], sps: usize) -> Vec<Complex<S>> {
    let len = sps * symbols.len() + taps.len() - 1;
    let mut out = vec![Complex::new(S::zero(), S::zero()); len];
    for (i, &sym) in symbols.iter().enumerate() {
        let base = i * sps;
        for (j, &h) in taps.iter().enumerate() {
            out[base + j] += sym * h;
        }
    }
    out
}
