use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use prunekit::data::{gen_frame_dataset, gen_kws_streams, KwsStreamSpec, SyntheticSpec};
use prunekit::decomposition::{decompose_network, DecompTrainConfig, DecomposeOptions};
use prunekit::io::{
    read_features, read_labels, read_model, write_decomposition_csv, write_features, write_history_csv, write_labels,
    write_model, write_roc_csv,
};
use prunekit::kws::{
    build_keyword_fst, evaluate_roc, ground_truth_posteriors, net_posteriors, threshold_grid, DecodeConfig,
    LabeledStream,
};
use prunekit::nn::{cross_entropy, frame_accuracy, mlp_param_count, train_sgd, width_for_param_budget};
use prunekit::pruning::{Criterion, DeletionRule, PruneRunConfig, Schedule};
use prunekit::{Activation, DenseNet, FrameDataset, PruneMask, TrainConfig};
use serde::Serialize;

use crate::config::Config;

pub type Inputs = BTreeMap<String, PathBuf>;

/// Config keys and defaults of one command.
pub struct CommandSpec {
    pub name: &'static str,
    pub defaults: &'static [(&'static str, &'static str)],
}

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("hidden", "64"),
    ("depth", "3"),
    ("hidden_activation", "relu"),
    ("learning_rate", "0.05"),
    ("epochs", "10"),
    ("batch_size", "32"),
    ("lr_decay", "0.9"),
    ("seed", "0"),
];

pub const COMMANDS: &[CommandSpec] = &[
    CommandSpec {
        name: "gen-data",
        defaults: &[
            ("feature_dim", "40"),
            ("num_classes", "3"),
            ("modes_per_class", "16"),
            ("informative_dims", "10"),
            ("mean_scale", "1.0"),
            ("noise_scale", "0.6"),
            ("frames", "20000"),
            ("test_frames", "10000"),
            ("class_priors", ""),
            ("kws_test_streams", "4"),
            ("kws_keywords_per_stream", "10"),
            ("kws_unit_frames", "20"),
            ("kws_gap_min", "80"),
            ("kws_gap_max", "160"),
            ("kws_environment_frames", "36000"),
            ("kws_environment_bursts", "40"),
            ("kws_burst_frames", "20"),
            ("seed", "0"),
        ],
    },
    CommandSpec {
        name: "train",
        defaults: TRAIN_KEYS,
    },
    CommandSpec {
        name: "prune",
        defaults: &[
            ("criterion", "magnitude"),
            ("rule", "proportion:0.5"),
            ("iterations_between_prunes", "3"),
            ("target", "0.1"),
            ("scope", "per-layer"),
            ("revision", "literal"),
            ("learning_rate", "0.02"),
            ("batch_size", "32"),
            ("lr_decay", "0.9"),
            ("lr_boost", "2.0"),
            ("obs_damping", "1e-4"),
            ("hessian_frames", "0"),
            ("max_generations", "100"),
            ("seed", "0"),
        ],
    },
    CommandSpec {
        name: "baseline-ps",
        defaults: &[
            ("depth", "0"),
            ("hidden_activation", "relu"),
            ("learning_rate", "0.05"),
            ("epochs", "25"),
            ("batch_size", "32"),
            ("lr_decay", "0.9"),
            ("seed", "0"),
        ],
    },
    CommandSpec {
        name: "decompose",
        defaults: &[
            ("rate", "0.1"),
            ("learning_rate", "0.5"),
            ("epochs", "2000"),
            ("tolerance", "1e-10"),
            ("include_output", "false"),
            ("fine_tune_epochs", "0"),
            ("fine_tune_learning_rate", "0.02"),
            ("fine_tune_batch_size", "32"),
            ("fine_tune_lr_decay", "0.9"),
            ("seed", "0"),
        ],
    },
    CommandSpec {
        name: "eval-frames",
        defaults: &[("seed", "0")],
    },
    CommandSpec {
        name: "eval-kws",
        defaults: &[
            ("unit_count", "2"),
            ("frame_period", "0.01"),
            ("smoothing_window", "10"),
            ("min_duration", "3"),
            ("lockout", "50"),
            ("threshold_points", "20"),
            ("seed", "0"),
        ],
    },
    CommandSpec {
        name: "inspect",
        defaults: &[("arch", ""), ("bytes_per_param", "4"), ("seed", "0")],
    },
];

pub fn spec(name: &str) -> Result<&'static CommandSpec> {
    COMMANDS
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| anyhow!("unknown command `{name}`"))
}

pub fn run(name: &str, cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    match name {
        "gen-data" => gen_data(cfg, out),
        "train" => train(cfg, inputs, out),
        "prune" => prune(cfg, inputs, out),
        "baseline-ps" => baseline_ps(cfg, inputs, out),
        "decompose" => decompose(cfg, inputs, out),
        "eval-frames" => eval_frames(inputs, out),
        "eval-kws" => eval_kws(cfg, inputs, out),
        "inspect" => inspect(cfg, inputs, out),
        other => bail!("unknown command `{other}`"),
    }
}

fn input<'a>(inputs: &'a Inputs, key: &str) -> Result<&'a Path> {
    inputs
        .get(key)
        .map(PathBuf::as_path)
        .ok_or_else(|| anyhow!("missing input `--{}`", key.replace('_', "-")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_features(path: &Path) -> Result<FrameDataset> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_features(BufReader::new(f)).with_context(|| path.display().to_string())
}

fn load_model(path: &Path) -> Result<(DenseNet, Option<PruneMask>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_model(BufReader::new(f)).with_context(|| path.display().to_string())
}

fn save_model(path: &Path, net: &DenseNet, mask: Option<&PruneMask>) -> Result<()> {
    let mut w = create(path)?;
    write_model(&mut w, net, mask)?;
    w.flush()?;
    Ok(())
}

fn save_features(path: &Path, data: &FrameDataset) -> Result<()> {
    let mut w = create(path)?;
    write_features(&mut w, data)?;
    w.flush()?;
    Ok(())
}

fn train_config(cfg: &Config, prefix: &str) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: cfg.get(&format!("{prefix}learning_rate"))?,
        epochs: cfg.get(&format!("{prefix}epochs"))?,
        batch_size: cfg.get(&format!("{prefix}batch_size"))?,
        lr_decay: cfg.get(&format!("{prefix}lr_decay"))?,
        seed: cfg.get("seed")?,
    })
}

/// Kept weights plus biases.
fn effective_params(net: &DenseNet, mask: Option<&PruneMask>) -> usize {
    let biases: usize = net.layers().iter().map(|l| l.bias.len()).sum();
    let weights = mask.map_or_else(|| net.weight_count(), PruneMask::remain_count);
    weights + biases
}

fn gen_data(cfg: &Config, out: &Path) -> Result<()> {
    let seed: u64 = cfg.get("seed")?;
    let frames: usize = cfg.get("frames")?;
    let test_frames: usize = cfg.get("test_frames")?;
    let priors = cfg.raw("class_priors")?;
    let class_priors = if priors.is_empty() {
        Vec::new()
    } else {
        priors
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("class_priors: {e}")))
            .collect::<Result<Vec<_>>>()?
    };
    let spec = SyntheticSpec {
        feature_dim: cfg.get("feature_dim")?,
        num_classes: cfg.get("num_classes")?,
        modes_per_class: cfg.get("modes_per_class")?,
        informative_dims: cfg.get("informative_dims")?,
        mean_scale: cfg.get("mean_scale")?,
        noise_scale: cfg.get("noise_scale")?,
        frames: frames + test_frames,
        class_priors,
        seed,
    };
    let all = gen_frame_dataset(&spec)?;
    let (train, test) = all.split(frames)?;
    save_features(&out.join("train.csv"), &train)?;
    save_features(&out.join("test.csv"), &test)?;

    let kws_spec = KwsStreamSpec {
        test_streams: cfg.get("kws_test_streams")?,
        keywords_per_stream: cfg.get("kws_keywords_per_stream")?,
        unit_frames: cfg.get("kws_unit_frames")?,
        gap_frames: (cfg.get("kws_gap_min")?, cfg.get("kws_gap_max")?),
        environment_frames: cfg.get("kws_environment_frames")?,
        environment_bursts: cfg.get("kws_environment_bursts")?,
        burst_frames: cfg.get("kws_burst_frames")?,
        seed: seed.wrapping_add(1000),
    };
    let kws = gen_kws_streams(&spec, &kws_spec)?;
    let dir = out.join("kws");
    let mut rows = Vec::new();
    for (i, s) in kws.tests.iter().enumerate() {
        save_features(&dir.join(format!("test_{i}.csv")), &s.data)?;
        rows.extend(s.keyword_ends.iter().map(|&e| (i, e)));
    }
    let mut w = create(&dir.join("labels.csv"))?;
    write_labels(&mut w, &rows)?;
    w.flush()?;
    save_features(&dir.join("environment.csv"), &kws.environment.data)?;
    write_json(
        &out.join("gen-data.json"),
        &serde_json::json!({
            "train_frames": train.len(),
            "test_frames": test.len(),
            "kws_test_streams": kws.tests.len(),
            "kws_keywords": rows.len(),
            "kws_environment_frames": kws.environment.data.len(),
        }),
    )
}

#[derive(Serialize)]
struct TrainSummary {
    architecture: Vec<usize>,
    param_count: usize,
    initial_loss: f64,
    final_loss: f64,
    epoch_losses: Vec<f64>,
    frame_accuracy: f64,
}

fn train(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let data = load_features(input(inputs, "data")?)?;
    let hidden: usize = cfg.get("hidden")?;
    let depth: usize = cfg.get("depth")?;
    let mut dims = vec![data.feature_dim()];
    dims.extend(std::iter::repeat_n(hidden, depth));
    dims.push(data.num_classes());
    let act: Activation = cfg.get("hidden_activation")?;
    let tc = train_config(cfg, "")?;
    let mut net = DenseNet::init(&dims, act, Activation::Softmax, tc.seed)?;
    let report = train_sgd(&mut net, &data, &tc, None)?;
    save_model(&out.join("model.txt"), &net, None)?;
    write_json(
        &out.join("train.json"),
        &TrainSummary {
            architecture: dims,
            param_count: net.param_count(),
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            epoch_losses: report.epoch_losses,
            frame_accuracy: frame_accuracy(&net, &data)?,
        },
    )
}

#[derive(Serialize)]
struct PruneSummary {
    label: String,
    criterion: String,
    status: String,
    generations: usize,
    remain_rate: f64,
    layer_remain_rates: Vec<f64>,
    effective_params: usize,
    frame_accuracy: f64,
}

fn prune(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let (net, mask) = load_model(input(inputs, "model")?)?;
    if mask.is_some() {
        bail!("prune expects a dense model; the input already carries a mask");
    }
    let data = load_features(input(inputs, "data")?)?;
    let criterion: Criterion = cfg.get("criterion")?;
    let rule: DeletionRule = cfg.get("rule")?;
    let schedule = Schedule {
        rule,
        iterations_between_prunes: cfg.get("iterations_between_prunes")?,
    };
    let mut pc = PruneRunConfig::new(criterion, schedule, cfg.get("target")?);
    pc.retrain = TrainConfig {
        epochs: schedule.iterations_between_prunes,
        ..train_config_without_epochs(cfg)?
    };
    pc.post_prune_lr_boost = cfg.get("lr_boost")?;
    pc.scope = cfg.get("scope")?;
    pc.revision_mode = cfg.get("revision")?;
    pc.obs_damping = cfg.get("obs_damping")?;
    let hf: usize = cfg.get("hessian_frames")?;
    pc.hessian_frames = (hf > 0).then_some(hf);
    pc.max_generations = cfg.get("max_generations")?;
    let run = prunekit::pruning::prune_retrain_loop(net, &data, &pc)?;
    save_model(&out.join("model.txt"), &run.net, Some(&run.mask))?;
    let mut w = create(&out.join("history.csv"))?;
    write_history_csv(&mut w, &run.history)?;
    w.flush()?;
    let last = run.history.last().expect("history holds generation 0");
    write_json(
        &out.join("prune.json"),
        &PruneSummary {
            label: criterion.label().to_string(),
            criterion: criterion.to_string(),
            status: run.status.to_string(),
            generations: run.generations(),
            remain_rate: run.mask.remain_rate(),
            layer_remain_rates: run.mask.layers().iter().map(|l| l.remain_rate()).collect(),
            effective_params: effective_params(&run.net, Some(&run.mask)),
            frame_accuracy: last.frame_acc,
        },
    )
}

fn train_config_without_epochs(cfg: &Config) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: cfg.get("learning_rate")?,
        epochs: 0,
        batch_size: cfg.get("batch_size")?,
        lr_decay: cfg.get("lr_decay")?,
        seed: cfg.get("seed")?,
    })
}

#[derive(Serialize)]
struct PsSummary {
    budget: usize,
    depth: usize,
    width: usize,
    param_count: usize,
    initial_loss: f64,
    final_loss: f64,
    frame_accuracy: f64,
}

fn baseline_ps(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let (sparse, mask) = load_model(input(inputs, "sparse_model")?)?;
    let data = load_features(input(inputs, "data")?)?;
    let budget = effective_params(&sparse, mask.as_ref());
    let depth = match cfg.get::<usize>("depth")? {
        0 => sparse.layers().len() - 1,
        d => d,
    };
    let width = width_for_param_budget(data.feature_dim(), data.num_classes(), depth, budget)
        .ok_or_else(|| anyhow!("no dense network of depth {depth} fits {budget} parameters"))?;
    let mut dims = vec![data.feature_dim()];
    dims.extend(std::iter::repeat_n(width, depth));
    dims.push(data.num_classes());
    let tc = train_config(cfg, "")?;
    let mut net = DenseNet::init(&dims, cfg.get("hidden_activation")?, Activation::Softmax, tc.seed)?;
    let report = train_sgd(&mut net, &data, &tc, None)?;
    save_model(&out.join("model.txt"), &net, None)?;
    write_json(
        &out.join("ps.json"),
        &PsSummary {
            budget,
            depth,
            width,
            param_count: mlp_param_count(data.feature_dim(), data.num_classes(), width, depth),
            initial_loss: report.initial_loss,
            final_loss: report.final_loss,
            frame_accuracy: frame_accuracy(&net, &data)?,
        },
    )
}

#[derive(Serialize)]
struct DecomposeSummary {
    label: String,
    rate: f64,
    params_before: usize,
    params_after: usize,
    param_ratio: f64,
    fine_tune_final_loss: Option<f64>,
    frame_accuracy: Option<f64>,
}

fn decompose(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    // Pruned weights are stored as zeros, so a masked model factors its sparse matrices.
    let (net, _) = load_model(input(inputs, "model")?)?;
    let data = inputs.get("data").map(|p| load_features(p)).transpose()?;
    let rate: f64 = cfg.get("rate")?;
    let dc = DecompTrainConfig {
        learning_rate: cfg.get("learning_rate")?,
        epochs: cfg.get("epochs")?,
        seed: cfg.get("seed")?,
        tolerance: cfg.get("tolerance")?,
    };
    let tune = train_config(cfg, "fine_tune_")?;
    let fine_tune = match (&data, tune.epochs) {
        (_, 0) => None,
        (Some(d), _) => Some((&tune, d)),
        (None, _) => bail!("fine_tune_epochs > 0 needs --data"),
    };
    let opts = DecomposeOptions {
        include_output: cfg.get("include_output")?,
        fine_tune,
    };
    let (spliced, report) = decompose_network(&net, rate, &dc, opts)?;
    save_model(&out.join("model.txt"), &spliced, None)?;
    let mut w = create(&out.join("decomposition.csv"))?;
    write_decomposition_csv(&mut w, &report.layers)?;
    w.flush()?;
    let frame_accuracy = data.as_ref().map(|d| frame_accuracy(&spliced, d)).transpose()?;
    write_json(
        &out.join("decompose.json"),
        &DecomposeSummary {
            label: format!("DCS{}", (rate * 100.0).round()),
            rate,
            params_before: report.params_before,
            params_after: report.params_after,
            param_ratio: report.param_ratio(),
            fine_tune_final_loss: report.fine_tune.as_ref().map(|r| r.final_loss),
            frame_accuracy,
        },
    )
}

fn eval_frames(inputs: &Inputs, out: &Path) -> Result<()> {
    let (net, _) = load_model(input(inputs, "model")?)?;
    let data = load_features(input(inputs, "data")?)?;
    let acc = frame_accuracy(&net, &data)?;
    println!("frame accuracy {acc:.4} on {} frames", data.len());
    write_json(
        &out.join("eval.json"),
        &serde_json::json!({
            "frames": data.len(),
            "frame_accuracy": acc,
            "cross_entropy": cross_entropy(&net, &data)?,
        }),
    )
}

fn eval_kws(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let dir = input(inputs, "kws_dir")?;
    let model = inputs.get("model").map(|p| load_model(p)).transpose()?.map(|(n, _)| n);
    let period: f64 = cfg.get("frame_period")?;
    let fst = build_keyword_fst(cfg.get("unit_count")?)?;
    let posteriors = |data: &FrameDataset| match &model {
        Some(net) => net_posteriors(net, data, period),
        None => ground_truth_posteriors(data.labels(), data.num_classes(), period),
    };
    let f = File::open(dir.join("labels.csv")).with_context(|| format!("opening labels in {}", dir.display()))?;
    let labels = read_labels(BufReader::new(f))?;
    let mut tests = Vec::new();
    loop {
        let path = dir.join(format!("test_{}.csv", tests.len()));
        if !path.exists() {
            break;
        }
        let data = load_features(&path)?;
        let id = tests.len();
        tests.push(LabeledStream {
            stream: posteriors(&data)?,
            keyword_ends: labels.iter().filter(|(s, _)| *s == id).map(|&(_, e)| e).collect(),
        });
    }
    if let Some((s, _)) = labels.iter().find(|(s, _)| *s >= tests.len()) {
        bail!("labels.csv names stream {s} but only {} test streams exist", tests.len());
    }
    let env = posteriors(&load_features(&dir.join("environment.csv"))?)?;
    let dc = DecodeConfig {
        smoothing_window: cfg.get("smoothing_window")?,
        min_duration: cfg.get("min_duration")?,
        lockout: cfg.get("lockout")?,
        ..DecodeConfig::default()
    };
    let roc = evaluate_roc(&fst, &tests, &env, &dc, &threshold_grid(cfg.get("threshold_points")?))?;
    let mut w = create(&out.join("roc.csv"))?;
    write_roc_csv(&mut w, &roc)?;
    w.flush()?;
    for p in &roc.points {
        println!("θ {:.3}  TA {:.3}  FA/h {:.2}", p.threshold, p.ta_rate, p.fa_per_hour);
    }
    Ok(())
}

#[derive(Serialize)]
struct LayerInfo {
    index: usize,
    rows: usize,
    cols: usize,
    activation: String,
    weights: usize,
    kept: usize,
    remain_rate: f64,
}

#[derive(Serialize)]
struct InspectSummary {
    input_dim: usize,
    layers: Vec<LayerInfo>,
    param_count: usize,
    effective_params: usize,
    remain_rate: f64,
    dense_bytes: usize,
    sparse_bytes: usize,
    dense_mib: f64,
    sparse_mib: f64,
}

fn parse_arch(text: &str) -> Result<Vec<usize>> {
    let dims = text
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| anyhow!("arch `{text}`: {e}")))
        .collect::<Result<Vec<_>>>()?;
    if dims.len() < 2 {
        bail!("arch needs at least input and output sizes, got `{text}`");
    }
    Ok(dims)
}

fn inspect(cfg: &Config, inputs: &Inputs, out: &Path) -> Result<()> {
    let arch = cfg.raw("arch")?;
    let (net, mask) = match (inputs.get("model"), arch.is_empty()) {
        (Some(p), true) => load_model(p)?,
        (None, false) => (DenseNet::mlp(&parse_arch(arch)?, cfg.get("seed")?)?, None),
        (Some(_), false) => bail!("give either --model or --arch, not both"),
        (None, true) => bail!("inspect needs --model or --arch"),
    };
    let bpp: usize = cfg.get("bytes_per_param")?;
    let layers: Vec<LayerInfo> = net
        .layers()
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let weights = l.weights.len();
            let kept = mask.as_ref().map_or(weights, |m| m.layer(k).remain_count());
            LayerInfo {
                index: k,
                rows: l.weights.rows(),
                cols: l.weights.cols(),
                activation: l.activation.to_string(),
                weights,
                kept,
                remain_rate: kept as f64 / weights as f64,
            }
        })
        .collect();
    let biases: usize = net.layers().iter().map(|l| l.bias.len()).sum();
    let kept: usize = layers.iter().map(|l| l.kept).sum();
    // CSR: a value and a column index per kept weight, row pointers, biases.
    let row_ptrs: usize = net.layers().iter().map(|l| l.weights.rows() + 1).sum();
    let sparse_bytes = (2 * kept + row_ptrs + biases) * bpp;
    let dense_bytes = net.param_count() * bpp;
    let mib = |b: usize| b as f64 / (1024.0 * 1024.0);
    let summary = InspectSummary {
        input_dim: net.input_dim(),
        param_count: net.param_count(),
        effective_params: kept + biases,
        remain_rate: kept as f64 / net.weight_count() as f64,
        dense_bytes,
        sparse_bytes,
        dense_mib: mib(dense_bytes),
        sparse_mib: mib(sparse_bytes),
        layers,
    };
    println!("input {}", summary.input_dim);
    for l in &summary.layers {
        println!(
            "layer {} {}x{} {:<8} kept {}/{} ({:.4})",
            l.index, l.rows, l.cols, l.activation, l.kept, l.weights, l.remain_rate
        );
    }
    println!(
        "parameters {} (effective {}), remain rate {:.4}",
        summary.param_count, summary.effective_params, summary.remain_rate
    );
    println!(
        "size dense {:.2} MiB, sparse {:.2} MiB at {bpp} bytes per value",
        summary.dense_mib, summary.sparse_mib
    );
    write_json(&out.join("inspect.json"), &summary)
}
