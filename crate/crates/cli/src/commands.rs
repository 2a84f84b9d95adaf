use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mixsei_core::channel::ChannelKind;
use mixsei_core::dataset::{generate, read_dataset, write_dataset, LabeledExample, Manifest, Overlap, Split};
use mixsei_core::metrics::{metrics_report, parse_csv, render_csv, snr_key, SweepRow};
use mixsei_core::model::{
    checkpoint_dtype, load_checkpoint, save_checkpoint, train as fit, Arch, ExtractorConfig, Model, ModelSpec,
};
use mixsei_core::rng::RngStream;
use mixsei_core::{Error, Result, Scalar};
use serde_json::json;

use crate::config::{ExperimentConfig, Precision};
use crate::{EvalArgs, ParamcountArgs, ReportArgs, SplitArg, SynthArgs, TrainArgs, VERSION};

/// Stream id of the weight initialization draw.
const INIT_STREAM: u64 = 0x494e_4954;

fn with_path(path: &Path) -> impl FnOnce(io::Error) -> Error + '_ {
    move |e| Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(with_path(path))?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(with_path(path))?))
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_path(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run_meta(cfg: &ExperimentConfig) -> serde_json::Value {
    json!({ "version": VERSION, "config": cfg.to_json() })
}

fn split_path(out: &Path, split: Split) -> PathBuf {
    let tag = match split {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
    };
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    out.with_file_name(name)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.count {
        cfg.count_per_snr = c;
    }
    if let Some(k) = a.k {
        cfg.scenario.k = k;
    }
    if let Some(o) = &a.overlap {
        cfg.scenario.overlap = if o == "half" { Overlap::Half } else { Overlap::Full };
    }
    if let Some(c) = &a.channel {
        cfg.scenario.channel.kind = if c == "awgn" {
            ChannelKind::Awgn
        } else {
            ChannelKind::Rician
        };
    }
    if let Some(grid) = a.snr {
        cfg.snr_grid_db = grid;
    }
    if let Some(t) = a.window_len {
        cfg.scenario.window_len = t;
    }
    cfg.validate()?;
    let out = a
        .out
        .or_else(|| cfg.outputs.data.clone())
        .ok_or_else(|| Error::Config("no output path: pass --out or set outputs.data".into()))?;

    let jobs = match a.split {
        SplitArg::All => {
            let (tr, va, te) = Split::counts(cfg.count_per_snr);
            vec![
                (Split::Train, tr, split_path(&out, Split::Train)),
                (Split::Val, va, split_path(&out, Split::Val)),
                (Split::Test, te, split_path(&out, Split::Test)),
            ]
        }
        one => {
            let s = match one {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                _ => Split::Test,
            };
            vec![(s, cfg.count_per_snr, out)]
        }
    };

    let scenario = cfg.scenario_config();
    for (split, count, path) in jobs {
        let examples = generate(&scenario, cfg.seed, split, &cfg.snr_grid_db, count)?;
        let mut manifest = Manifest::new(scenario.clone(), cfg.seed, split, cfg.snr_grid_db.clone(), count);
        manifest.experiment = Some(run_meta(&cfg));
        let mut w = create(&path)?;
        write_dataset(&mut w, &manifest, &examples)?;
        w.flush().map_err(with_path(&path))?;
        println!(
            "wrote {} examples ({count} per SNR) to {}",
            examples.len(),
            path.display()
        );
    }
    Ok(())
}

fn read_data(path: &Path) -> Result<(Manifest, Vec<LabeledExample>)> {
    read_dataset(open(path)?)
}

fn embedded_config(manifest: &Manifest) -> Result<ExperimentConfig> {
    match manifest.experiment.as_ref().and_then(|e| e.get("config")) {
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("embedded config: {e}"))),
        None => Ok(ExperimentConfig::default()),
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (manifest, data) = read_data(&a.data)?;
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_path(p)?,
        None => embedded_config(&manifest)?,
    };
    if let Some(arch) = &a.arch {
        cfg.model.arch = arch.parse()?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = a.width {
        cfg.model.width = w;
    }
    if let Some(p) = a.precision {
        cfg.precision = p;
    }
    if let Some(lr) = a.lr {
        cfg.train.schedule.base_lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    let out = a
        .out
        .clone()
        .or_else(|| cfg.outputs.checkpoint.clone())
        .ok_or_else(|| Error::Config("no checkpoint path: pass --out or set outputs.checkpoint".into()))?;

    let k = manifest.scenario.k;
    let t = manifest.scenario.window_len;
    let spec = cfg.model_spec(k, t);
    spec.validate().map_err(|e| Error::Config(format!("model: {e}")))?;
    cfg.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
    let val = match &a.val {
        Some(p) => {
            let (vm, v) = read_data(p)?;
            if vm.scenario.k != k || vm.scenario.window_len != t {
                return Err(Error::ShapeMismatch {
                    expected: vec![k, t],
                    actual: vec![vm.scenario.k, vm.scenario.window_len],
                });
            }
            Some(v)
        }
        None => None,
    };

    let mut log_file = a.log.as_deref().map(create).transpose()?;
    let ctx = TrainCtx {
        cfg: &cfg,
        manifest: &manifest,
        data: &data,
        val: val.as_deref(),
        spec,
        out: &out,
    };
    match cfg.precision {
        Precision::F32 => train_at::<f32>(ctx, log_file.as_mut()),
        Precision::F64 => train_at::<f64>(ctx, log_file.as_mut()),
    }?;
    if let (Some(mut f), Some(p)) = (log_file, a.log.as_deref()) {
        f.flush().map_err(with_path(p))?;
    }
    Ok(())
}

struct TrainCtx<'a> {
    cfg: &'a ExperimentConfig,
    manifest: &'a Manifest,
    data: &'a [LabeledExample],
    val: Option<&'a [LabeledExample]>,
    spec: ModelSpec,
    out: &'a Path,
}

fn train_at<S: Scalar>(ctx: TrainCtx, mut log: Option<&mut BufWriter<File>>) -> Result<()> {
    let cfg = ctx.cfg;
    let mut model = Model::<S>::new(ctx.spec, &mut RngStream::new(cfg.train.seed, INIT_STREAM).rng())?;
    println!(
        "training {} (k={}, {} params, {}) on {} examples",
        model.arch().name(),
        model.k(),
        model.param_count(),
        S::DTYPE,
        ctx.data.len()
    );
    let mut log_err = None;
    let result = fit(&mut model, ctx.data, ctx.val, &cfg.train, |r| {
        let mut line = format!("epoch {:>3}  lr {:.4e}  loss {:.6}", r.epoch, r.lr, r.train_loss);
        if let Some(v) = &r.val {
            line.push_str(&format!(
                "  val subset {:.4} hamming {:.4} f1 {:.4}",
                v.subset_accuracy, v.hamming_accuracy, v.macro_f1
            ));
        }
        println!("{line}");
        if let Some(f) = log.as_mut() {
            let rec = serde_json::to_string(r).expect("epoch record serializes");
            if let Err(e) = writeln!(f, "{rec}") {
                log_err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(Error::Io(e));
    }
    let m = &result.final_train;
    println!(
        "final train: subset {:.4} hamming {:.4} f1 {:.4} (n={})",
        m.subset_accuracy, m.hamming_accuracy, m.macro_f1, m.n
    );
    let mut meta = run_meta(cfg);
    meta["data"] = json!({
        "seed": ctx.manifest.seed,
        "split": ctx.manifest.split,
        "count": ctx.manifest.count,
    });
    meta["log"] = serde_json::to_value(&result).expect("train log serializes");
    let mut w = create(ctx.out)?;
    save_checkpoint(&mut w, &model, Some(meta))?;
    w.flush().map_err(with_path(ctx.out))?;
    println!("wrote checkpoint to {}", ctx.out.display());
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if !(a.theta > 0.0 && a.theta < 1.0) {
        return Err(Error::Config(format!("--theta must lie in (0, 1), got {}", a.theta)));
    }
    let bytes = std::fs::read(&a.ckpt).map_err(with_path(&a.ckpt))?;
    let (manifest, data) = read_data(&a.data)?;
    let csv = match checkpoint_dtype(&bytes)?.as_str() {
        "f64" => eval_at::<f64>(&bytes, &manifest, &data, a.theta)?,
        _ => eval_at::<f32>(&bytes, &manifest, &data, a.theta)?,
    };
    match &a.report {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(csv.as_bytes())
                .and_then(|()| w.flush())
                .map_err(with_path(p))?;
            eprintln!("wrote report to {}", p.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn eval_at<S: Scalar>(bytes: &[u8], manifest: &Manifest, data: &[LabeledExample], theta: f64) -> Result<String> {
    let (model, meta) = load_checkpoint::<S, _>(bytes)?;
    model.check_examples(data)?;
    let batch = meta
        .as_ref()
        .and_then(|m| m.pointer("/config/train/batch_size"))
        .and_then(|v| v.as_u64())
        .map_or(64, |b| b as usize);
    let pred = model.predict_examples(data, theta, batch)?;

    let mut groups: Vec<(u32, Vec<usize>)> = Vec::new();
    for (i, ex) in data.iter().enumerate() {
        let key = ex.snr_db.to_bits();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((key, vec![i])),
        }
    }
    let arch = model.arch().name();
    let overlap = match manifest.scenario.overlap {
        Overlap::Full => "full",
        Overlap::Half => "half",
    };
    let channel = match manifest.scenario.channel.kind {
        ChannelKind::Awgn => "awgn",
        ChannelKind::Rician => "rician",
    };
    let mut rows = Vec::with_capacity(groups.len() + 1);
    for (key, idx) in &groups {
        let p: Vec<_> = idx.iter().map(|&i| pred[i].clone()).collect();
        let t: Vec<_> = idx.iter().map(|&i| data[i].label.clone()).collect();
        let m = metrics_report(&p, &t)?;
        rows.push(SweepRow::new(snr_key(f32::from_bits(*key)), arch, overlap, channel, &m));
    }
    if !data.is_empty() {
        let truth: Vec<_> = data.iter().map(|e| e.label.clone()).collect();
        rows.push(SweepRow::new(
            "all".into(),
            arch,
            overlap,
            channel,
            &metrics_report(&pred, &truth)?,
        ));
    }

    let run = json!({
        "version": VERSION,
        "theta": theta,
        "checkpoint_config": meta.as_ref().and_then(|m| m.get("config")),
        "data_config": manifest.experiment.as_ref().and_then(|m| m.get("config")),
        "data": { "seed": manifest.seed, "split": manifest.split, "count": manifest.count },
    });
    render_csv(&[format!("run: {run}")], &rows)
}

pub fn paramcount(a: ParamcountArgs) -> Result<()> {
    if a.k_min == 0 || a.k_min > a.k_max || a.k_max > 16 {
        return Err(Error::Config(format!(
            "need 1 <= k-min <= k-max <= 16, got {}..{}",
            a.k_min, a.k_max
        )));
    }
    let archs: Vec<Arch> = match a.arch.as_str() {
        "both" => vec![Arch::Smei, Arch::Baseline],
        one => vec![one.parse()?],
    };
    let extractor = ExtractorConfig::with_width(a.width);
    println!("k,{}", archs.iter().map(|x| x.name()).collect::<Vec<_>>().join(","));
    for k in a.k_min..=a.k_max {
        let counts = archs
            .iter()
            .map(|&arch| {
                let spec = ModelSpec::new(arch, k, extractor.clone());
                Model::<f32>::new(spec, &mut RngStream::new(0, INIT_STREAM).rng()).map(|m| m.param_count().to_string())
            })
            .collect::<Result<Vec<_>>>()
            .map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("model: {m}")),
                other => other,
            })?;
        println!("{k},{}", counts.join(","));
    }
    Ok(())
}

fn snr_order(s: &str) -> (u8, f64) {
    match s.parse::<f64>() {
        Ok(v) => (0, v),
        Err(_) => (1, 0.0),
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let text = std::fs::read_to_string(p).map_err(with_path(p))?;
        let parsed = parse_csv(&text).map_err(|e| Error::InvalidInput(format!("{}: {e}", p.display())))?;
        rows.extend(parsed);
    }
    rows.sort_by(|x, y| {
        (&x.arch, &x.overlap, &x.channel)
            .cmp(&(&y.arch, &y.overlap, &y.channel))
            .then(snr_order(&x.snr_db).partial_cmp(&snr_order(&y.snr_db)).unwrap())
    });
    let csv = render_csv(
        &[format!("merged from {} reports by mixsei {VERSION}", a.inputs.len())],
        &rows,
    )?;
    match &a.out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(csv.as_bytes())
                .and_then(|()| w.flush())
                .map_err(with_path(p))?;
        }
        None => print!("{csv}"),
    }
    Ok(())
}
