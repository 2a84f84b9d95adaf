//! Residual 1-D CNN extractor with either an independent-sigmoid head or a
//! subset-enumeration softmax head.

mod checkpoint;
mod train;

pub use checkpoint::{checkpoint_dtype, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, EpochRecord, TrainConfig, TrainLog};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autonet::{
    bce_with_logits, sigmoid, softmax_ce_loss, softmax_rows, Conv1d, Dense, GlobalAvgPool, Layer, MaxPool1d, Relu,
    Tensor,
};
use crate::dataset::{LabelVector, LabeledExample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DEFAULT_THETA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub input_len: usize,
    pub in_channels: usize,
    pub stem_channels: usize,
    pub stage_channels: Vec<usize>,
    pub stem_kernel: usize,
    pub block_kernel: usize,
    /// Multiplier applied to every hidden channel count.
    pub width: f64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_len: 1024,
            in_channels: 2,
            stem_channels: 32,
            stage_channels: vec![64, 128, 256],
            stem_kernel: 7,
            block_kernel: 3,
            width: 1.0,
        }
    }
}

impl ExtractorConfig {
    pub fn with_width(width: f64) -> Self {
        Self {
            width,
            ..Self::default()
        }
    }

    fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width).round() as usize).max(1)
    }

    /// Stem width followed by each stage's output width, after scaling.
    pub fn channel_plan(&self) -> Vec<usize> {
        std::iter::once(self.stem_channels)
            .chain(self.stage_channels.iter().copied())
            .map(|c| self.scaled(c))
            .collect()
    }

    pub fn feature_dim(&self) -> usize {
        *self.channel_plan().last().unwrap()
    }

    pub fn pool_factor(&self) -> usize {
        1 << self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(Error::Config(format!("width must be positive, got {}", self.width)));
        }
        if self.stage_channels.is_empty() || self.stage_channels.len() > 16 {
            return Err(Error::Config("stage_channels must list 1..=16 stages".into()));
        }
        for (name, k) in [("stem_kernel", self.stem_kernel), ("block_kernel", self.block_kernel)] {
            if k % 2 == 0 {
                return Err(Error::Config(format!("{name} must be odd, got {k}")));
            }
        }
        if self.in_channels == 0 || self.stem_channels == 0 || self.stage_channels.contains(&0) {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        self.check_len(self.input_len)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == 0 || !len.is_multiple_of(self.pool_factor()) {
            return Err(Error::invalid(format!(
                "input length {len} must be a positive multiple of {}",
                self.pool_factor()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Smei,
    Baseline,
}

impl Arch {
    pub fn output_dim(self, k: usize) -> usize {
        match self {
            Arch::Smei => k,
            Arch::Baseline => (1usize << k) - 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Smei => "smei",
            Arch::Baseline => "baseline",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smei" => Ok(Arch::Smei),
            "baseline" => Ok(Arch::Baseline),
            _ => Err(Error::Config(format!("arch must be smei or baseline, got {s:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's layer stack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub k: usize,
    pub extractor: ExtractorConfig,
}

impl ModelSpec {
    pub fn new(arch: Arch, k: usize, extractor: ExtractorConfig) -> Self {
        Self { arch, k, extractor }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 16 {
            return Err(Error::Config(format!("k must lie in 1..=16, got {}", self.k)));
        }
        self.extractor.validate()
    }
}

/// Baseline class `c` is the subset with bitmask `c + 1`.
pub fn mask_to_class(mask: u32, k: usize) -> Result<usize> {
    if mask == 0 || (mask as u64) >= 1u64 << k {
        return Err(Error::invalid(format!(
            "mask {mask:#b} is not a non-empty subset of {k} emitters"
        )));
    }
    Ok(mask as usize - 1)
}

pub fn class_to_mask(class: usize, k: usize) -> Result<u32> {
    if class + 1 >= 1usize << k {
        return Err(Error::invalid(format!("class {class} out of range for {k} emitters")));
    }
    Ok(class as u32 + 1)
}

/// Emitters whose probability strictly exceeds `theta`.
pub fn decide_set<S: Scalar>(probs: &[S], theta: f64) -> Result<LabelVector> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::invalid(format!("theta must lie in (0, 1), got {theta}")));
    }
    let th = S::lit(theta);
    Ok(LabelVector::new(probs.iter().map(|&p| p > th).collect()))
}

pub struct ResidualBlock<S: Scalar> {
    pub conv1: Conv1d<S>,
    pub conv2: Conv1d<S>,
    /// 1x1 projection on the skip path when the channel count changes.
    pub proj: Option<Conv1d<S>>,
    relu1: Relu<S>,
    relu_out: Relu<S>,
}

impl<S: Scalar> ResidualBlock<S> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, cin: usize, cout: usize, kernel: usize) -> Self {
        let pad = kernel / 2;
        let conv1 = Conv1d::new(rng, cin, cout, kernel, 1, pad);
        let conv2 = Conv1d::new(rng, cout, cout, kernel, 1, pad);
        let proj = (cin != cout).then(|| Conv1d::new(rng, cin, cout, 1, 1, 0));
        Self {
            conv1,
            conv2,
            proj,
            relu1: Relu::new(),
            relu_out: Relu::new(),
        }
    }
}

fn add_in_place<S: Scalar>(a: &mut Tensor<S>, b: &Tensor<S>) -> Result<()> {
    b.expect_shape(a.shape())?;
    for (x, &y) in a.values_mut().iter_mut().zip(b.values()) {
        *x += y;
    }
    Ok(())
}

impl<S: Scalar> Layer<S> for ResidualBlock<S> {
    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = self.relu1.forward(&self.conv1.forward(x)?)?;
        let mut y = self.conv2.forward(&h)?;
        match &self.proj {
            Some(p) => add_in_place(&mut y, &p.forward(x)?)?,
            None => add_in_place(&mut y, x)?,
        }
        self.relu_out.forward(&y)
    }

    fn forward_train(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let a = self.conv1.forward_train(x)?;
        let h = self.relu1.forward_train(&a)?;
        let mut y = self.conv2.forward_train(&h)?;
        match &mut self.proj {
            Some(p) => add_in_place(&mut y, &p.forward_train(x)?)?,
            None => add_in_place(&mut y, x)?,
        }
        self.relu_out.forward_train(&y)
    }

    fn backward(&mut self, grad_out: &Tensor<S>) -> Result<Tensor<S>> {
        let g = self.relu_out.backward(grad_out)?;
        let gh = self.conv2.backward(&g)?;
        let ga = self.relu1.backward(&gh)?;
        let mut gx = self.conv1.backward(&ga)?;
        match &mut self.proj {
            Some(p) => add_in_place(&mut gx, &p.backward(&g)?)?,
            None => add_in_place(&mut gx, &g)?,
        }
        Ok(gx)
    }

    fn params(&self) -> Vec<&Tensor<S>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        if let Some(p) = &self.proj {
            v.extend(p.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        if let Some(p) = &mut self.proj {
            v.extend(p.params_mut());
        }
        v
    }
}

/// Extractor plus classification head.
pub struct Model<S: Scalar> {
    spec: ModelSpec,
    stem: Conv1d<S>,
    stem_relu: Relu<S>,
    blocks: Vec<ResidualBlock<S>>,
    pools: Vec<MaxPool1d<S>>,
    gap: GlobalAvgPool<S>,
    head: Dense<S>,
}

/// Training targets for one batch.
pub enum Targets<S: Scalar> {
    /// `[B, K]` 0/1 indicators.
    Multilabel(Tensor<S>),
    /// Baseline class per row.
    Classes(Vec<usize>),
}

impl<S: Scalar> Model<S> {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let e = &spec.extractor;
        let plan = e.channel_plan();
        let stem = Conv1d::new(rng, e.in_channels, plan[0], e.stem_kernel, 1, e.stem_kernel / 2);
        let blocks = plan
            .windows(2)
            .map(|w| ResidualBlock::new(rng, w[0], w[1], e.block_kernel))
            .collect();
        let head = Dense::new(rng, e.feature_dim(), spec.arch.output_dim(spec.k));
        Ok(Self {
            stem,
            stem_relu: Relu::new(),
            blocks,
            pools: (0..e.stage_channels.len()).map(|_| MaxPool1d::new(2)).collect(),
            gap: GlobalAvgPool::default(),
            head,
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn arch(&self) -> Arch {
        self.spec.arch
    }

    pub fn k(&self) -> usize {
        self.spec.k
    }

    pub fn head(&self) -> &Dense<S> {
        &self.head
    }

    /// Trainable tensors in checkpoint order.
    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut v = self.stem.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.head.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut v = self.stem.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.head.params_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        x.expect_rank(3, "model input")?;
        let c = self.spec.extractor.in_channels;
        if x.shape()[1] != c {
            return Err(Error::shape(&[x.shape()[0], c, x.shape()[2]], x.shape()));
        }
        self.spec.extractor.check_len(x.shape()[2])
    }

    /// `[B, C, T] -> [B, F]` feature vectors.
    pub fn features(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.check_input(x)?;
        let mut h = self.stem_relu.forward(&self.stem.forward(x)?)?;
        for (b, p) in self.blocks.iter().zip(&self.pools) {
            h = p.forward(&b.forward(&h)?)?;
        }
        self.gap.forward(&h)
    }

    pub fn logits(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.head.forward(&self.features(x)?)
    }

    /// Per-output probabilities: sigmoid for SMEI, softmax over subsets for
    /// the baseline.
    pub fn probabilities(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let z = self.logits(x)?;
        match self.spec.arch {
            Arch::Smei => {
                let shape = z.shape().to_vec();
                Tensor::new(shape, z.into_values().into_iter().map(sigmoid).collect())
            }
            Arch::Baseline => softmax_rows(&z),
        }
    }

    /// Estimated emitter sets. `theta` applies to the SMEI head; the
    /// baseline takes the arg-max subset.
    pub fn predict_sets(&self, x: &Tensor<S>, theta: f64) -> Result<Vec<LabelVector>> {
        let p = self.probabilities(x)?;
        let width = p.shape()[1];
        p.values()
            .chunks_exact(width)
            .map(|row| match self.spec.arch {
                Arch::Smei => decide_set(row, theta),
                Arch::Baseline => {
                    let best = row
                        .iter()
                        .enumerate()
                        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best });
                    Ok(LabelVector::from_mask(class_to_mask(best, self.spec.k)?, self.spec.k))
                }
            })
            .collect()
    }

    /// Forward, loss and backward for one batch. Parameter gradients are
    /// accumulated; the caller steps the optimizer and clears them.
    pub fn accumulate_gradients(&mut self, x: &Tensor<S>, targets: &Targets<S>) -> Result<S> {
        self.check_input(x)?;
        let mut h = self.stem_relu.forward_train(&self.stem.forward_train(x)?)?;
        for (b, p) in self.blocks.iter_mut().zip(&mut self.pools) {
            h = p.forward_train(&b.forward_train(&h)?)?;
        }
        let f = self.gap.forward_train(&h)?;
        let z = self.head.forward_train(&f)?;
        let (loss, gz) = match (self.spec.arch, targets) {
            (Arch::Smei, Targets::Multilabel(y)) => bce_with_logits(&z, y)?,
            (Arch::Baseline, Targets::Classes(c)) => softmax_ce_loss(&z, c)?,
            _ => return Err(Error::invalid("targets do not match the model head")),
        };
        let mut g = self.gap.backward(&self.head.backward(&gz)?)?;
        for (b, p) in self.blocks.iter_mut().zip(&mut self.pools).rev() {
            g = b.backward(&p.backward(&g)?)?;
        }
        self.stem.backward(&self.stem_relu.backward(&g)?)?;
        Ok(loss)
    }

    /// Reject examples whose K or T does not fit this model.
    pub fn check_examples(&self, examples: &[LabeledExample]) -> Result<()> {
        for ex in examples {
            if ex.label.k() != self.spec.k {
                return Err(Error::shape(&[self.spec.k], &[ex.label.k()]));
            }
            if ex.window_len() != self.spec.extractor.input_len {
                return Err(Error::shape(
                    &[self.spec.extractor.in_channels, self.spec.extractor.input_len],
                    &[2, ex.window_len()],
                ));
            }
        }
        Ok(())
    }

    pub fn targets(&self, examples: &[&LabeledExample]) -> Result<Targets<S>> {
        match self.spec.arch {
            Arch::Smei => {
                let v = examples
                    .iter()
                    .flat_map(|e| e.label.bits.iter().map(|&b| if b { S::one() } else { S::zero() }))
                    .collect();
                Ok(Targets::Multilabel(Tensor::new(vec![examples.len(), self.spec.k], v)?))
            }
            Arch::Baseline => examples
                .iter()
                .map(|e| mask_to_class(e.label.mask(), self.spec.k))
                .collect::<Result<_>>()
                .map(Targets::Classes),
        }
    }

    /// Predicted sets for every example, evaluated in fixed-size chunks.
    pub fn predict_examples(&self, examples: &[LabeledExample], theta: f64, batch: usize) -> Result<Vec<LabelVector>> {
        self.check_examples(examples)?;
        let chunks: Vec<Vec<LabelVector>> = examples
            .par_chunks(batch.max(1))
            .map(|c| {
                let refs: Vec<&LabeledExample> = c.iter().collect();
                self.predict_sets(&batch_input(&refs)?, theta)
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Stack example windows into a `[B, 2, T]` input tensor.
pub fn batch_input<S: Scalar>(examples: &[&LabeledExample]) -> Result<Tensor<S>> {
    let t = examples.first().map_or(0, |e| e.window_len());
    let mut v = Vec::with_capacity(examples.len() * 2 * t);
    for e in examples {
        if e.window_len() != t {
            return Err(Error::shape(&[2, t], &[2, e.window_len()]));
        }
        v.extend(e.window.iter().map(|&s| S::lit(f64::from(s))));
    }
    Tensor::new(vec![examples.len(), 2, t], v)
}
