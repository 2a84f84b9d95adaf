//! Experiment configuration: TOML or JSON, every field optional.

use std::path::{Path, PathBuf};

use mixsei_core::channel::{ChannelConfig, ChannelKind};
use mixsei_core::dataset::{if_offsets, Overlap, ScenarioConfig, SubsetPolicy};
use mixsei_core::dsp::RrcSpec;
use mixsei_core::impairment::{EmitterProfile, ImpairmentRanges};
use mixsei_core::model::{Arch, ExtractorConfig, ModelSpec, TrainConfig};
use mixsei_core::rng::RngStream;
use mixsei_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Stream id reserved for drawing emitter profiles.
const PROFILE_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub precision: Precision,
    pub snr_grid_db: Vec<f64>,
    pub count_per_snr: usize,
    pub scenario: ScenarioSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub outputs: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F32,
            snr_grid_db: (0..8).map(|i| -3.0 + 3.0 * i as f64).collect(),
            count_per_snr: 1000,
            scenario: ScenarioSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            outputs: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub k: usize,
    pub overlap: Overlap,
    pub window_len: usize,
    pub num_symbols: usize,
    pub symbol_rate_hz: f64,
    pub rrc: RrcSpec,
    pub channel: ChannelSection,
    pub subset_policy: SubsetPolicy,
    pub impairments: ImpairmentRanges,
    /// Seed for the one-off profile draw; defaults to the experiment seed.
    pub profile_seed: Option<u64>,
    /// Explicit per-emitter profiles; replaces the random draw when set.
    pub profiles: Option<Vec<EmitterProfile>>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            k: 3,
            overlap: Overlap::Full,
            window_len: 1024,
            num_symbols: 256,
            symbol_rate_hz: 20e6,
            rrc: RrcSpec::default(),
            channel: ChannelSection::default(),
            subset_policy: SubsetPolicy::UniformSubsets,
            impairments: ImpairmentRanges::default(),
            profile_seed: None,
            profiles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub kind: ChannelKind,
    pub rician_k_db: f64,
    pub noiseless: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let c = ChannelConfig::default();
        Self {
            kind: c.kind,
            rician_k_db: c.rician_k_db,
            noiseless: c.noiseless,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub arch: Arch,
    pub width: f64,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stem_kernel: usize,
    pub block_kernel: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let e = ExtractorConfig::default();
        Self {
            arch: Arch::Smei,
            width: e.width,
            stem_channels: e.stem_channels,
            stage_channels: e.stage_channels,
            stem_kernel: e.stem_kernel,
            block_kernel: e.block_kernel,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

fn prefixed(prefix: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(m) => Error::Config(format!("{prefix}.{m}")),
        other => Error::Config(format!("{prefix}: {other}")),
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let cfg: Self = if json {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        Ok(cfg)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// Emitter profiles with IF offsets applied for the configured overlap.
    pub fn profiles(&self) -> Vec<EmitterProfile> {
        let s = &self.scenario;
        let offsets = if_offsets(s.k, s.overlap);
        match &s.profiles {
            Some(list) => list
                .iter()
                .zip(&offsets)
                .map(|(p, &f)| EmitterProfile {
                    if_offset_hz: f,
                    ..p.clone()
                })
                .collect(),
            None => {
                let mut rng = RngStream::new(s.profile_seed.unwrap_or(self.seed), PROFILE_STREAM).rng();
                offsets
                    .iter()
                    .map(|&f| EmitterProfile::draw(&mut rng, &s.impairments, f))
                    .collect()
            }
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        ScenarioConfig {
            k: s.k,
            overlap: s.overlap,
            window_len: s.window_len,
            num_symbols: s.num_symbols,
            symbol_rate_hz: s.symbol_rate_hz,
            rrc: s.rrc,
            channel: ChannelConfig {
                kind: s.channel.kind,
                rician_k_db: s.channel.rician_k_db,
                snr_db: self.snr_grid_db.first().copied().unwrap_or(0.0),
                noiseless: s.channel.noiseless,
            },
            profiles: self.profiles(),
            subset_policy: s.subset_policy,
        }
    }

    pub fn extractor(&self, input_len: usize) -> ExtractorConfig {
        let m = &self.model;
        ExtractorConfig {
            input_len,
            in_channels: 2,
            stem_channels: m.stem_channels,
            stage_channels: m.stage_channels.clone(),
            stem_kernel: m.stem_kernel,
            block_kernel: m.block_kernel,
            width: m.width,
        }
    }

    pub fn model_spec(&self, k: usize, input_len: usize) -> ModelSpec {
        ModelSpec::new(self.model.arch, k, self.extractor(input_len))
    }

    /// Semantic checks; messages name the offending field.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.snr_grid_db.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Config(format!(
                    "snr_grid_db[{i}] must be finite (use scenario.channel.noiseless for a clean channel)"
                )));
            }
        }
        let r = &self.scenario.impairments;
        for (name, (lo, hi)) in [
            ("gain_imbalance", r.gain_imbalance),
            ("phase_bias_deg", r.phase_bias_deg),
            ("spur_amplitude", r.spur_amplitude),
            ("spur_offset_hz", r.spur_offset_hz),
            ("leakage_amplitude", r.leakage_amplitude),
            ("pa_cubic", r.pa_cubic),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!(
                    "scenario.impairments.{name}: need finite bounds with lower <= upper, got ({lo}, {hi})"
                )));
            }
        }
        if let Some(p) = &self.scenario.profiles {
            if p.len() != self.scenario.k {
                return Err(Error::Config(format!(
                    "scenario.profiles: expected {} entries, got {}",
                    self.scenario.k,
                    p.len()
                )));
            }
        }
        if self.scenario.k == 0 || self.scenario.k > 16 {
            return Err(Error::Config(format!(
                "scenario.k must lie in 1..=16, got {}",
                self.scenario.k
            )));
        }
        self.scenario_config().validate().map_err(prefixed("scenario"))?;
        self.model_spec(self.scenario.k, self.scenario.window_len)
            .validate()
            .map_err(prefixed("model"))?;
        self.train.validate().map_err(prefixed("train"))?;
        Ok(())
    }
}
