//! Scenario sampling, steady-state windowing and labeled example assembly.

mod format;

pub use format::{read_dataset, write_dataset, Manifest, FORMAT_VERSION, MAGIC};

use num_complex::Complex;
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{mix, rician_coeff, ChannelConfig, ChannelKind};
use crate::dsp::{map_qpsk, random_bits, rrc_taps, shape_with_taps, IqBuffer, RrcSpec};
use crate::error::{Error, Result};
use crate::impairment::{distort, EmitterProfile, ImpairmentRanges};
use crate::rng::RngStream;

/// Carrier spacing between neighbouring emitters at 50% overlap.
pub const HALF_OVERLAP_SPACING_HZ: f64 = 13e6;

/// Activity indicators, one per emitter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector {
    pub bits: Vec<bool>,
}

impl LabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    /// Bit `m` of `mask` is emitter `m + 1`.
    pub fn from_mask(mask: u32, k: usize) -> Self {
        Self {
            bits: (0..k).map(|m| mask >> m & 1 == 1).collect(),
        }
    }

    pub fn mask(&self) -> u32 {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (m, &b)| acc | (u32::from(b) << m))
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// 1-based indices of the active emitters.
    pub fn active(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(m, _)| m + 1)
            .collect()
    }

    pub fn is_subset_of(&self, other: &LabelVector) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overlap {
    /// Co-channel: every emitter at 0 Hz IF.
    Full,
    /// Emitters spaced 13 MHz apart, centred on 0 Hz.
    Half,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetPolicy {
    #[default]
    UniformSubsets,
    UniformCardinality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }

    /// 80/10/10 partition of `total` examples.
    pub fn counts(total: usize) -> (usize, usize, usize) {
        let val = total / 10;
        let test = total / 10;
        (total - val - test, val, test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub k: usize,
    pub overlap: Overlap,
    /// Window length T in samples.
    pub window_len: usize,
    pub num_symbols: usize,
    pub symbol_rate_hz: f64,
    pub rrc: RrcSpec,
    pub channel: ChannelConfig,
    pub profiles: Vec<EmitterProfile>,
    #[serde(default)]
    pub subset_policy: SubsetPolicy,
}

impl ScenarioConfig {
    /// Default desk-scale scenario with profiles drawn once from `ranges`.
    pub fn with_drawn_profiles(
        k: usize,
        overlap: Overlap,
        channel: ChannelConfig,
        ranges: &ImpairmentRanges,
        profile_seed: u64,
    ) -> Self {
        let offsets = if_offsets(k, overlap);
        let mut rng = RngStream::new(profile_seed, u64::MAX).rng();
        let profiles = offsets
            .iter()
            .map(|&f| EmitterProfile::draw(&mut rng, ranges, f))
            .collect();
        Self {
            k,
            overlap,
            window_len: 1024,
            num_symbols: 256,
            symbol_rate_hz: 20e6,
            rrc: RrcSpec::default(),
            channel,
            profiles,
            subset_policy: SubsetPolicy::UniformSubsets,
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.symbol_rate_hz * self.rrc.sps as f64
    }

    pub fn burst_len(&self) -> usize {
        self.rrc.sps * self.num_symbols + self.rrc.num_taps() - 1
    }

    pub fn validate(&self) -> Result<()> {
        self.rrc.validate()?;
        self.channel.validate()?;
        if self.k == 0 || self.k > 16 {
            return Err(Error::Config(format!("k must lie in 1..=16, got {}", self.k)));
        }
        if self.profiles.len() != self.k {
            return Err(Error::Config(format!(
                "profiles: expected {} emitter profiles, got {}",
                self.k,
                self.profiles.len()
            )));
        }
        for (m, p) in self.profiles.iter().enumerate() {
            p.validate().map_err(|e| Error::Config(format!("profiles[{m}]: {e}")))?;
        }
        if self.window_len == 0 {
            return Err(Error::Config("window_len must be positive".into()));
        }
        if !(self.symbol_rate_hz.is_finite() && self.symbol_rate_hz > 0.0) {
            return Err(Error::Config("symbol_rate_hz must be positive".into()));
        }
        let need = self.window_len + 2 * self.rrc.transient_len();
        if self.num_symbols == 0 || self.burst_len() < need {
            return Err(Error::Config(format!(
                "num_symbols: burst of {} samples is shorter than window_len + 2*span*sps = {need}",
                self.burst_len()
            )));
        }
        if self.overlap == Overlap::Half && self.sample_rate_hz() < self.k as f64 * HALF_OVERLAP_SPACING_HZ {
            return Err(Error::Config(format!(
                "overlap: half overlap for k={} needs a sample rate of at least {} Hz",
                self.k,
                self.k as f64 * HALF_OVERLAP_SPACING_HZ
            )));
        }
        Ok(())
    }
}

/// One received window with its activity label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    /// `2 x T`, real row followed by imaginary row.
    pub window: Vec<f32>,
    pub label: LabelVector,
    pub snr_db: f32,
}

impl LabeledExample {
    pub fn window_len(&self) -> usize {
        self.window.len() / 2
    }

    pub fn real(&self) -> &[f32] {
        &self.window[..self.window_len()]
    }

    pub fn imag(&self) -> &[f32] {
        &self.window[self.window_len()..]
    }

    pub fn power(&self) -> f64 {
        let t = self.window_len();
        self.window.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>() / t as f64
    }
}

pub fn sample_active_set<R: Rng + ?Sized>(k: usize, policy: SubsetPolicy, rng: &mut R) -> LabelVector {
    assert!((1..=31).contains(&k), "k must lie in 1..=31");
    match policy {
        SubsetPolicy::UniformSubsets => {
            let mask = rng.gen_range(1..(1u32 << k));
            LabelVector::from_mask(mask, k)
        }
        SubsetPolicy::UniformCardinality => {
            let c = rng.gen_range(1..=k);
            let mut bits = vec![false; k];
            for m in sample_indices(rng, k, c) {
                bits[m] = true;
            }
            LabelVector::new(bits)
        }
    }
}

/// Digital IF per emitter: 0 Hz for full overlap, 13 MHz spacing centred on
/// zero for half overlap.
pub fn if_offsets(k: usize, overlap: Overlap) -> Vec<f64> {
    match overlap {
        Overlap::Full => vec![0.0; k],
        Overlap::Half => {
            let centre = (k as f64 + 1.0) / 2.0;
            (1..=k).map(|m| (m as f64 - centre) * HALF_OVERLAP_SPACING_HZ).collect()
        }
    }
}

/// Drop `span*sps` samples at each end, then take `t` contiguous samples at a
/// uniformly drawn offset within what remains.
pub fn steady_window<S: crate::Scalar, R: Rng + ?Sized>(
    x: &IqBuffer<S>,
    spec: &RrcSpec,
    t: usize,
    rng: &mut R,
) -> Result<IqBuffer<S>> {
    let edge = spec.transient_len();
    let required = t + 2 * edge;
    if t == 0 || x.len() < required {
        return Err(Error::BufferTooShort {
            required,
            actual: x.len(),
        });
    }
    let positions = x.len() - required + 1;
    let start = edge + rng.gen_range(0..positions);
    IqBuffer::new(x.samples()[start..start + t].to_vec(), x.sample_rate_hz())
}

/// Synthesize one labeled example. All randomness comes from `stream`.
pub fn synth_example(cfg: &ScenarioConfig, stream: RngStream) -> Result<LabeledExample> {
    let taps = rrc_taps::<f64>(&cfg.rrc)?;
    synth_with_taps(cfg, &taps, stream)
}

fn synth_with_taps(cfg: &ScenarioConfig, taps: &[f64], stream: RngStream) -> Result<LabeledExample> {
    let mut rng = stream.rng();
    let label = sample_active_set(cfg.k, cfg.subset_policy, &mut rng);
    let offsets = if_offsets(cfg.k, cfg.overlap);
    let fs = cfg.sample_rate_hz();

    let mut signals = Vec::with_capacity(label.active_count());
    let mut coeffs = Vec::with_capacity(label.active_count());
    for m in label.active() {
        let bits = random_bits(&mut rng, 2 * cfg.num_symbols);
        let symbols = map_qpsk::<f64>(&bits)?;
        let shaped = IqBuffer::new(shape_with_taps(&symbols, taps, cfg.rrc.sps), fs)?;
        let profile = EmitterProfile {
            if_offset_hz: offsets[m - 1],
            ..cfg.profiles[m - 1].clone()
        };
        signals.push(distort(&shaped, &profile)?);
        coeffs.push(match cfg.channel.kind {
            ChannelKind::Awgn => Complex::new(1.0, 0.0),
            ChannelKind::Rician => rician_coeff(cfg.channel.rician_k_db, &mut rng),
        });
    }
    let received = mix(&signals, &coeffs, &cfg.channel, &mut rng)?;
    let window = steady_window(&received, &cfg.rrc, cfg.window_len, &mut rng)?;

    let power = window.mean_power();
    let scale = if power > 0.0 { 1.0 / power.sqrt() } else { 1.0 };
    let t = cfg.window_len;
    let mut out = vec![0f32; 2 * t];
    for (n, z) in window.samples().iter().enumerate() {
        out[n] = (z.re * scale) as f32;
        out[t + n] = (z.im * scale) as f32;
    }
    let snr_db = if cfg.channel.noise_enabled() {
        cfg.channel.snr_db as f32
    } else {
        f32::INFINITY
    };
    Ok(LabeledExample {
        window: out,
        label,
        snr_db,
    })
}

/// Stream id of example `index` at SNR grid point `snr_index` in `split`.
pub fn example_stream_id(split: Split, snr_index: usize, index: usize) -> u64 {
    (split.tag() << 56) | ((snr_index as u64) << 40) | index as u64
}

/// Generate `count_per_snr` examples at every SNR in `snr_grid`, SNR-major.
///
/// Each example owns its stream id, so the result is identical for any
/// worker count.
pub fn generate(
    cfg: &ScenarioConfig,
    seed: u64,
    split: Split,
    snr_grid: &[f64],
    count_per_snr: usize,
) -> Result<Vec<LabeledExample>> {
    cfg.validate()?;
    let taps = rrc_taps::<f64>(&cfg.rrc)?;
    let jobs: Vec<(usize, usize)> = (0..snr_grid.len())
        .flat_map(|s| (0..count_per_snr).map(move |i| (s, i)))
        .collect();
    jobs.into_par_iter()
        .map(|(s, i)| {
            let mut c = cfg.clone();
            c.channel = c.channel.with_snr(snr_grid[s]);
            synth_with_taps(&c, &taps, RngStream::new(seed, example_stream_id(split, s, i)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelKind;

    fn neutral_cfg(k: usize, overlap: Overlap) -> ScenarioConfig {
        let offsets = if_offsets(k, overlap);
        ScenarioConfig {
            k,
            overlap,
            window_len: 256,
            num_symbols: 80,
            symbol_rate_hz: 20e6,
            rrc: RrcSpec::default(),
            channel: ChannelConfig::noiseless(ChannelKind::Awgn),
            profiles: offsets
                .iter()
                .map(|&f| EmitterProfile {
                    if_offset_hz: f,
                    ..EmitterProfile::neutral()
                })
                .collect(),
            subset_policy: SubsetPolicy::UniformSubsets,
        }
    }

    #[test]
    fn label_mask_round_trip() {
        let l = LabelVector::new(vec![true, false, true]);
        assert_eq!(l.mask(), 0b101);
        assert_eq!(LabelVector::from_mask(0b101, 3), l);
        assert_eq!(l.active(), vec![1, 3]);
    }

    #[test]
    fn k1_always_selects_the_emitter() {
        let mut rng = RngStream::new(1, 1).rng();
        for policy in [SubsetPolicy::UniformSubsets, SubsetPolicy::UniformCardinality] {
            for _ in 0..100 {
                assert_eq!(sample_active_set(1, policy, &mut rng).bits, vec![true]);
            }
        }
    }

    #[test]
    fn uniform_subsets_frequencies() {
        let mut rng = RngStream::new(2, 0).rng();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_active_set(2, SubsetPolicy::UniformSubsets, &mut rng).mask() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn uniform_cardinality_frequencies() {
        let mut rng = RngStream::new(3, 0).rng();
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_active_set(3, SubsetPolicy::UniformCardinality, &mut rng).active_count()] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn if_offset_layouts() {
        assert_eq!(if_offsets(3, Overlap::Full), vec![0.0, 0.0, 0.0]);
        assert_eq!(if_offsets(2, Overlap::Half), vec![-6.5e6, 6.5e6]);
        assert_eq!(if_offsets(3, Overlap::Half), vec![-13e6, 0.0, 13e6]);
    }

    #[test]
    fn steady_window_unique_offset_and_errors() {
        let spec = RrcSpec::default();
        let t = 16;
        let n = t + 2 * spec.transient_len();
        let x = IqBuffer::new((0..n).map(|i| Complex::new(i as f64, 0.0)).collect(), 1.0).unwrap();
        let mut rng = RngStream::new(0, 0).rng();
        let w = steady_window(&x, &spec, t, &mut rng).unwrap();
        assert_eq!(w.samples()[0].re, spec.transient_len() as f64);
        assert_eq!(w.len(), t);
        let short = IqBuffer::new(x.samples()[1..].to_vec(), 1.0).unwrap();
        match steady_window(&short, &spec, t, &mut rng) {
            Err(Error::BufferTooShort { required, actual }) => {
                assert_eq!(required, n);
                assert_eq!(actual, n - 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn steady_window_zero_in_zero_out() {
        let spec = RrcSpec::default();
        let x = IqBuffer::new(vec![Complex::new(0.0, 0.0); 200], 1.0).unwrap();
        let w = steady_window(&x, &spec, 32, &mut RngStream::new(0, 0).rng()).unwrap();
        assert!(w.samples().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn steady_window_offset_is_uniform() {
        let spec = RrcSpec::default();
        let t = 8;
        let n = t + 2 * spec.transient_len() + 10;
        let x = IqBuffer::new((0..n).map(|i| Complex::new(i as f64, 0.0)).collect(), 1.0).unwrap();
        let mut rng = RngStream::new(11, 0).rng();
        let draws = 110_000;
        let mut counts = [0usize; 11];
        for _ in 0..draws {
            let w = steady_window(&x, &spec, t, &mut rng).unwrap();
            counts[w.samples()[0].re as usize - spec.transient_len()] += 1;
        }
        for c in counts {
            assert!((c as f64 / draws as f64 - 1.0 / 11.0).abs() < 0.01);
        }
    }

    #[test]
    fn neutral_single_emitter_is_normalized_qpsk() {
        // replay the example's stream by hand: subset draw, bits, window offset
        let cfg = neutral_cfg(1, Overlap::Full);
        let stream = RngStream::new(42, 7);
        let ex = synth_example(&cfg, stream).unwrap();

        let mut rng = stream.rng();
        let _ = sample_active_set(1, cfg.subset_policy, &mut rng);
        let bits = random_bits(&mut rng, 2 * cfg.num_symbols);
        let shaped = crate::dsp::pulse_shape(&map_qpsk::<f64>(&bits).unwrap(), &cfg.rrc, cfg.symbol_rate_hz).unwrap();
        let w = steady_window(&shaped, &cfg.rrc, cfg.window_len, &mut rng).unwrap();
        let scale = 1.0 / w.mean_power().sqrt();
        for (n, z) in w.samples().iter().enumerate() {
            assert_eq!(ex.real()[n], (z.re * scale) as f32);
            assert_eq!(ex.imag()[n], (z.im * scale) as f32);
        }
        assert!((ex.power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = ScenarioConfig {
            window_len: 256,
            num_symbols: 80,
            ..ScenarioConfig::with_drawn_profiles(
                3,
                Overlap::Full,
                ChannelConfig::default(),
                &ImpairmentRanges::default(),
                5,
            )
        };
        let a = synth_example(&cfg, RngStream::new(9, 1)).unwrap();
        let b = synth_example(&cfg, RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
        assert!(a.label.active_count() >= 1);
        assert!((a.power() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn config_validation_names_the_field() {
        let mut cfg = neutral_cfg(2, Overlap::Full);
        cfg.num_symbols = 10;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("num_symbols"), "{msg}");
        let mut cfg = neutral_cfg(2, Overlap::Full);
        cfg.profiles.pop();
        assert!(cfg.validate().unwrap_err().to_string().contains("profiles"));
    }

    #[test]
    fn split_counts_partition() {
        assert_eq!(Split::counts(100), (80, 10, 10));
        let (a, b, c) = Split::counts(37);
        assert_eq!(a + b + c, 37);
    }

    #[test]
    fn generate_is_order_independent_of_workers() {
        let cfg = ScenarioConfig {
            window_len: 128,
            num_symbols: 60,
            ..ScenarioConfig::with_drawn_profiles(
                2,
                Overlap::Half,
                ChannelConfig::awgn(10.0),
                &ImpairmentRanges::default(),
                1,
            )
        };
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| generate(&cfg, 3, Split::Train, &[0.0, 10.0], 6).unwrap());
        let four = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| generate(&cfg, 3, Split::Train, &[0.0, 10.0], 6).unwrap());
        assert_eq!(one, four);
        assert_eq!(one.len(), 12);
        assert!(one[..6].iter().all(|e| e.snr_db == 0.0));
    }
}
