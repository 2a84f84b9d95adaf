//! Independent reference implementations used to check the core crate.

use mixsei_core::autonet::layers::Layer;
use mixsei_core::autonet::{
    bce_with_logits, softmax_ce_loss, Conv1d, ConvGeometry, Dense, GlobalAvgPool, MaxPool1d, Relu,
};
use mixsei_core::dataset::LabelVector;
use mixsei_core::model::ResidualBlock;
use mixsei_core::Tensor64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// `||a - n|| / max(||a||, ||n||)`, zero when both vanish.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let s = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if s == 0.0 {
        0.0
    } else {
        d / s
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor64 {
    let n = shape.iter().product();
    Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn probe(layer: &dyn Layer<f64>, x: &Tensor64, r: &Tensor64) -> f64 {
    let y = layer.forward(x).unwrap();
    y.values().iter().zip(r.values()).map(|(a, b)| a * b).sum()
}

/// Central-difference check of a layer against its analytic backward pass,
/// for the scalar probe `sum(r * layer(x))`. Covers the input and every
/// parameter tensor.
pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor64, rng: &mut ChaCha8Rng) -> f64 {
    for p in layer.params_mut() {
        p.zero_grad();
    }
    let y = layer.forward_train(x).unwrap();
    let r = random_tensor(rng, y.shape());
    let gx = layer.backward(&r).unwrap();

    let mut analytic = gx.values().to_vec();
    for p in layer.params() {
        analytic.extend_from_slice(p.grad().unwrap());
    }

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let v = x.values()[i];
        xp.values_mut()[i] = v + FD_STEP;
        let up = probe(layer, &xp, &r);
        xp.values_mut()[i] = v - FD_STEP;
        let down = probe(layer, &xp, &r);
        xp.values_mut()[i] = v;
        numeric.push((up - down) / (2.0 * FD_STEP));
    }
    let sizes: Vec<usize> = layer.params().iter().map(|p| p.len()).collect();
    for (j, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let v = layer.params()[j].values()[i];
            layer.params_mut()[j].values_mut()[i] = v + FD_STEP;
            let up = probe(layer, x, &r);
            layer.params_mut()[j].values_mut()[i] = v - FD_STEP;
            let down = probe(layer, x, &r);
            layer.params_mut()[j].values_mut()[i] = v;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    rel_err(&analytic, &numeric)
}

pub fn check_bce(rng: &mut ChaCha8Rng, b: usize, k: usize) -> f64 {
    let z = random_tensor(rng, &[b, k])
        .values()
        .iter()
        .map(|v| 4.0 * v)
        .collect::<Vec<_>>();
    let z = Tensor64::new(vec![b, k], z).unwrap();
    let y = Tensor64::new(
        vec![b, k],
        (0..b * k).map(|_| f64::from(rng.gen::<bool>() as u8)).collect(),
    )
    .unwrap();
    let (_, g) = bce_with_logits(&z, &y).unwrap();
    let numeric: Vec<f64> = (0..z.len())
        .map(|i| {
            let mut zp = z.clone();
            zp.values_mut()[i] += FD_STEP;
            let up = bce_with_logits(&zp, &y).unwrap().0;
            zp.values_mut()[i] -= 2.0 * FD_STEP;
            let down = bce_with_logits(&zp, &y).unwrap().0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(g.values(), &numeric)
}

pub fn check_ce(rng: &mut ChaCha8Rng, b: usize, c: usize) -> f64 {
    let z = random_tensor(rng, &[b, c]);
    let classes: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
    let (_, g) = softmax_ce_loss(&z, &classes).unwrap();
    let numeric: Vec<f64> = (0..z.len())
        .map(|i| {
            let mut zp = z.clone();
            zp.values_mut()[i] += FD_STEP;
            let up = softmax_ce_loss(&zp, &classes).unwrap().0;
            zp.values_mut()[i] -= 2.0 * FD_STEP;
            let down = softmax_ce_loss(&zp, &classes).unwrap().0;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect();
    rel_err(g.values(), &numeric)
}

pub const LAYER_KINDS: [&str; 8] = [
    "conv1d",
    "relu",
    "maxpool1d",
    "global_avg_pool",
    "dense",
    "residual_block",
    "bce_loss",
    "softmax_ce_loss",
];

/// One gradient check of layer kind `kind` on a random small shape
/// (B <= 3, C <= 4, L <= 16). Returns the relative error.
pub fn random_trial(kind: &str, rng: &mut ChaCha8Rng) -> f64 {
    let b = rng.gen_range(1..=3);
    let c = rng.gen_range(1..=4);
    match kind {
        "conv1d" => {
            let cout = rng.gen_range(1..=4);
            let kernel: usize = rng.gen_range(1..=5);
            let stride = rng.gen_range(1..=2);
            let padding: usize = rng.gen_range(0..=2);
            let len = rng.gen_range(kernel.saturating_sub(2 * padding).max(1)..=16);
            let g = ConvGeometry {
                kernel,
                stride,
                padding,
            };
            assert!(g.out_len(len).is_ok());
            let mut layer = Conv1d::new(rng, c, cout, kernel, stride, padding);
            let x = random_tensor(rng, &[b, c, len]);
            check_layer(&mut layer, &x, rng)
        }
        "relu" => {
            let len = rng.gen_range(1..=16);
            let mut x = random_tensor(rng, &[b, c, len]);
            // keep inputs away from the kink so the difference quotient is smooth
            for v in x.values_mut() {
                if v.abs() < 1e-3 {
                    *v += 0.01;
                }
            }
            check_layer(&mut Relu::new(), &x, rng)
        }
        "maxpool1d" => {
            let len = 2 * rng.gen_range(1..=8);
            let x = random_tensor(rng, &[b, c, len]);
            check_layer(&mut MaxPool1d::new(2), &x, rng)
        }
        "global_avg_pool" => {
            let len = rng.gen_range(1..=16);
            let x = random_tensor(rng, &[b, c, len]);
            check_layer(&mut GlobalAvgPool::default(), &x, rng)
        }
        "dense" => {
            let dout = rng.gen_range(1..=4);
            let mut layer = Dense::new(rng, c, dout);
            let x = random_tensor(rng, &[b, c]);
            check_layer(&mut layer, &x, rng)
        }
        "residual_block" => {
            let cout = rng.gen_range(1..=4);
            let len = rng.gen_range(1..=16);
            let mut layer = ResidualBlock::new(rng, c, cout, 3);
            let x = random_tensor(rng, &[b, c, len]);
            check_layer(&mut layer, &x, rng)
        }
        "bce_loss" => check_bce(rng, b, c),
        "softmax_ce_loss" => {
            let classes = rng.gen_range(2..=5);
            check_ce(rng, b, classes)
        }
        other => panic!("unknown layer kind {other}"),
    }
}

/// Brute-force metrics: enumerate every (sample, emitter) cell and rebuild
/// each quantity from set cardinalities.
pub struct OracleMetrics {
    pub subset: f64,
    pub hamming: f64,
    pub macro_f1: f64,
}

pub fn oracle_metrics(pred: &[LabelVector], truth: &[LabelVector]) -> OracleMetrics {
    let n = truth.len();
    let k = truth[0].k();
    let exact = (0..n)
        .filter(|&i| (0..k).all(|m| pred[i].bits[m] == truth[i].bits[m]))
        .count();
    let agree = (0..n)
        .flat_map(|i| (0..k).map(move |m| (i, m)))
        .filter(|&(i, m)| pred[i].bits[m] == truth[i].bits[m])
        .count();
    let mut f1_sum = 0.0;
    for m in 0..k {
        let p: Vec<usize> = (0..n).filter(|&i| pred[i].bits[m]).collect();
        let t: Vec<usize> = (0..n).filter(|&i| truth[i].bits[m]).collect();
        let tp = p.iter().filter(|i| t.contains(i)).count();
        let fp = p.len() - tp;
        let fn_ = t.len() - tp;
        f1_sum += if tp + fp + fn_ == 0 {
            1.0
        } else {
            (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
        };
    }
    OracleMetrics {
        subset: exact as f64 / n as f64,
        hamming: agree as f64 / (n * k) as f64,
        macro_f1: f1_sum / k as f64,
    }
}

/// Mean measured SNR over `trials` three-emitter Rician mixtures of
/// `symbols` symbols each, at requested `snr_db`.
pub fn mean_measured_snr(snr_db: f64, trials: u64, symbols: usize) -> f64 {
    use mixsei_core::channel::{measured_snr_db, mix, rician_coeff, superpose, ChannelConfig, ChannelKind};
    use mixsei_core::dsp::{map_qpsk, pulse_shape, random_bits, RrcSpec};
    use mixsei_core::impairment::{distort, EmitterProfile, ImpairmentRanges};
    use mixsei_core::rng::RngStream;

    let spec = RrcSpec::default();
    let cfg = ChannelConfig {
        kind: ChannelKind::Rician,
        ..ChannelConfig::default()
    }
    .with_snr(snr_db);
    let mut total = 0.0;
    for t in 0..trials {
        let mut rng = RngStream::new(0x534e52, t).rng();
        let mut signals = Vec::new();
        let mut coeffs = Vec::new();
        for m in 0..3 {
            let p = EmitterProfile::draw(&mut rng, &ImpairmentRanges::default(), (m as f64 - 1.0) * 13e6);
            let bits = random_bits(&mut rng, 2 * symbols);
            let x = pulse_shape::<f64>(&map_qpsk(&bits).unwrap(), &spec, 20e6).unwrap();
            signals.push(distort(&x, &p).unwrap());
            coeffs.push(rician_coeff::<f64, _>(cfg.rician_k_db, &mut rng));
        }
        let clean = superpose(&signals, &coeffs, cfg.kind).unwrap();
        let noisy = mix(&signals, &coeffs, &cfg, &mut rng).unwrap();
        assert!(noisy.len() >= 10_000);
        total += measured_snr_db(&clean, noisy.samples());
    }
    total / trials as f64
}
