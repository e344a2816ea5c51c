//! Command-line entry points: corpus synthesis, training, evaluation,
//! per-clip inference, and the gradient verification suite.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::data::{
    class_balance_filter, generate_clip, load_clip, random_scene, read_manifest, save_clip,
    scenario_balanced_iter, write_manifest, Background, ClipSample,
};
use crate::gradcheck::grad_check;
use crate::graph::{OpGraph, OpKind};
use crate::metrics::{evaluate, write_report, THRESHOLD};
use crate::model::{
    build_graph, build_model, load_checkpoint, save_checkpoint, Backbone, ChangeModule,
    ModelConfig,
};
use crate::tensor::{save_rten, Dims5, Tensor5};
use crate::train::{train, LossConfig, OptimConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: msg.into() }
    }

    fn data(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_DATA, message: msg.into() }
    }

    fn numeric(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: msg.into() }
    }
}

impl From<crate::config::ConfigError> for CliError {
    fn from(e: crate::config::ConfigError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<crate::data::DataError> for CliError {
    fn from(e: crate::data::DataError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<crate::model::ModelError> for CliError {
    fn from(e: crate::model::ModelError) -> Self {
        match e {
            crate::model::ModelError::Config(_) => CliError::usage(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<crate::train::TrainError> for CliError {
    fn from(e: crate::train::TrainError) -> Self {
        match e {
            crate::train::TrainError::NonFinite { .. } => CliError::numeric(e.to_string()),
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "retrodet", version, about = "Spatio-temporal change detection toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct CommonArgs {
    /// Config file (key=value with [section] headers).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus manifest file.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Inference scales, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<f64>>,
    /// Override the configured iteration budget.
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Disable static-sample synthesis interleaving.
    #[arg(long)]
    pub no_static_synthesis: bool,
    /// Worker count for evaluation (default 1 for reproducibility).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Run gradient checks in f64 (default for gradcheck).
    #[arg(long)]
    pub f64: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a clip corpus from scenario specs.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model on a corpus.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate a checkpoint on a corpus.
    Eval {
        /// Checkpoint file.
        checkpoint: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run inference on one clip file.
    Infer {
        /// Checkpoint file.
        checkpoint: PathBuf,
        /// Clip file.
        clip: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Verify analytic gradients for every operator and a full model.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Parse args and dispatch; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth { common } => cmd_synth(&common),
        Command::Train { common } => cmd_train(&common),
        Command::Eval { checkpoint, common } => cmd_eval(&checkpoint, &common),
        Command::Infer { checkpoint, clip, common } => cmd_infer(&checkpoint, &clip, &common),
        Command::Gradcheck { common } => cmd_gradcheck(&common),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn require_out(common: &CommonArgs) -> Result<&Path, CliError> {
    let out = common.out.as_deref().ok_or_else(|| CliError::usage("--out is required"))?;
    std::fs::create_dir_all(out).map_err(|e| CliError::data(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

/// Written into the output directory before any long computation starts.
fn write_run_manifest(command: &str, common: &CommonArgs, out: &Path) -> Result<(), CliError> {
    let timestamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let text = format!(
        "command={command}\nconfig={}\ncorpus={}\nseed={}\nout={}\nversion={}\ntimestamp={timestamp}\n",
        common.config.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
        common.corpus.as_deref().map(|p| p.display().to_string()).unwrap_or_default(),
        common.seed,
        out.display(),
        env!("CARGO_PKG_VERSION"),
    );
    std::fs::write(out.join("run_manifest.txt"), text)?;
    Ok(())
}

fn parse_background(name: &str) -> Result<Background, CliError> {
    Ok(match name {
        "static-texture" => Background::StaticTexture,
        "dynamic-sinusoid" => Background::DynamicSinusoid,
        "noise-field" => Background::NoiseField,
        other => return Err(CliError::usage(format!("unknown background {other}"))),
    })
}

/// Model section of a config file -> ModelConfig.
pub fn model_config_from(cfg: &Config) -> Result<ModelConfig, CliError> {
    if cfg.section("model").is_none() {
        return Ok(ModelConfig::desk_default());
    }
    let backbone = match cfg.parse_or::<String>("model", "backbone", "simple-3layer".into())?.as_str() {
        "raw-input" => Backbone::RawInput,
        "simple-3layer" => Backbone::Simple3Layer,
        other => {
            let blocks = other
                .strip_prefix("stacked-")
                .and_then(|r| r.strip_suffix("-blocks"))
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| CliError::usage(format!("unknown backbone {other}")))?;
            Backbone::Stacked { blocks_per_stage: blocks }
        }
    };
    let change_module = match cfg.parse_or::<String>("model", "change_module", "arpp".into())?.as_str() {
        "conv3d-pair" => ChangeModule::Conv3dPair,
        "retro" => ChangeModule::Retro,
        "arpp" => ChangeModule::Arpp,
        other => return Err(CliError::usage(format!("unknown change module {other}"))),
    };
    let default = ModelConfig::desk_default();
    let backbone_widths = match cfg.get("model", "backbone_widths") {
        Some(_) => cfg.parse_list("model", "backbone_widths")?,
        None => default.backbone_widths.clone(),
    };
    let arpp_dilations = match cfg.get("model", "arpp_dilations") {
        Some(_) => cfg.parse_list("model", "arpp_dilations")?,
        None if change_module == ChangeModule::Arpp => default.arpp_dilations.clone(),
        None => vec![],
    };
    let change_widths = match cfg.get("model", "change_widths") {
        Some(_) => cfg.parse_list("model", "change_widths")?,
        None => default.change_widths.clone(),
    };
    let taps = if backbone == Backbone::RawInput { 1 } else { backbone_widths.len() };
    let mc = ModelConfig {
        backbone,
        backbone_widths,
        change_module,
        arpp_dilations,
        change_widths,
        decoder_levels: cfg.parse_or("model", "decoder_levels", taps.saturating_sub(1))?,
        input_length_hint: cfg.parse_or("model", "input_length_hint", 4)?,
    };
    mc.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(mc)
}

fn optim_config_from(cfg: &Config, common: &CommonArgs) -> Result<OptimConfig, CliError> {
    let d = OptimConfig::default();
    let mut oc = OptimConfig {
        base_lr: cfg.parse_or("optim", "base_lr", d.base_lr)?,
        lr_decay_factor: cfg.parse_or("optim", "lr_decay_factor", d.lr_decay_factor)?,
        decay_every_iters: cfg.parse_or("optim", "decay_every_iters", d.decay_every_iters)?,
        momentum: cfg.parse_or("optim", "momentum", d.momentum)?,
        weight_decay: cfg.parse_or("optim", "weight_decay", d.weight_decay)?,
        batch_size: cfg.parse_or("optim", "batch_size", d.batch_size)?,
        max_iters: cfg.parse_or("optim", "max_iters", d.max_iters)?,
    };
    if let Some(n) = common.max_iters {
        oc.max_iters = n;
    }
    Ok(oc)
}

fn loss_config_from(cfg: &Config) -> Result<LossConfig, CliError> {
    let d = LossConfig::default();
    Ok(LossConfig {
        alpha: cfg.parse_or("loss", "alpha", d.alpha)?,
        epsilon: cfg.parse_or("loss", "epsilon", d.epsilon)?,
    })
}

pub fn cmd_synth(common: &CommonArgs) -> Result<(), CliError> {
    let cfg_path = common.config.as_deref().ok_or_else(|| CliError::usage("--config is required"))?;
    let cfg = Config::load(cfg_path)?;
    let out = require_out(common)?;
    write_run_manifest("synth", common, out)?;

    let canvas_h: usize = cfg.parse_or("synth", "canvas_h", 64)?;
    let canvas_w: usize = cfg.parse_or("synth", "canvas_w", 64)?;
    let length: usize = cfg.parse_or("synth", "length", 4)?;
    let clips: usize = cfg.parse_or("synth", "clips_per_scenario", 50)?;
    let scenarios: Vec<String> = cfg.parse_list("synth", "scenarios")?;
    if scenarios.is_empty() {
        return Err(CliError::usage("[synth] scenarios must be nonempty"));
    }

    let mut paths = Vec::new();
    let mut histogram = [0usize; 10];
    for (si, scenario) in scenarios.iter().enumerate() {
        // scenario name: "<background>-slow" or "<background>-fast"
        let (bg_name, fast) = match scenario.rsplit_once('-') {
            Some((bg, "slow")) => (bg, false),
            Some((bg, "fast")) => (bg, true),
            _ => {
                return Err(CliError::usage(format!(
                    "scenario {scenario} must end in -slow or -fast"
                )))
            }
        };
        let background = parse_background(bg_name)?;
        let mut rng = ChaCha8Rng::seed_from_u64(common.seed ^ (si as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut count = 0usize;
        for k in 0..clips {
            let spec = random_scene((canvas_h, canvas_w), background, scenario, fast, &mut rng);
            let sample = generate_clip(&spec, length)?;
            let bucket = ((sample.fg_ratio() * 10.0) as usize).min(9);
            histogram[bucket] += 1;
            let name = format!("{scenario}_{k:04}.rcclip");
            save_clip(&sample, &out.join(&name))?;
            paths.push(name);
            count += 1;
        }
        println!("{scenario}: {count} clips");
    }
    write_manifest(&paths, &out.join("corpus.txt"))?;
    println!("fg_ratio histogram (10% buckets): {histogram:?}");
    println!("wrote {} clips to {}", paths.len(), out.display());
    Ok(())
}

fn load_corpus(manifest: &Path) -> Result<Vec<ClipSample>, CliError> {
    let paths = read_manifest(manifest)?;
    if paths.is_empty() {
        return Err(CliError::usage(format!("corpus manifest {} is empty", manifest.display())));
    }
    paths
        .iter()
        .map(|p| load_clip(p).map_err(|e| CliError::data(format!("{}: {e}", p.display()))))
        .collect()
}

pub fn cmd_train(common: &CommonArgs) -> Result<(), CliError> {
    let corpus_path = common.corpus.as_deref().ok_or_else(|| CliError::usage("--corpus is required"))?;
    let cfg = match common.config.as_deref() {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let out = require_out(common)?;
    write_run_manifest("train", common, out)?;

    let model_cfg = model_config_from(&cfg)?;
    let optim_cfg = optim_config_from(&cfg, common)?;
    let loss_cfg = loss_config_from(&cfg)?;
    let fg_lo: f64 = cfg.parse_or("sampler", "fg_lo", 0.05)?;
    let fg_hi: f64 = cfg.parse_or("sampler", "fg_hi", 0.60)?;

    let samples = load_corpus(corpus_path)?;
    let total = samples.len();
    let kept = class_balance_filter(samples, fg_lo, fg_hi);
    if kept.is_empty() {
        return Err(CliError::data(format!(
            "class-balance filter ({fg_lo}, {fg_hi}) removed all {total} samples"
        )));
    }
    let mut sampler = scenario_balanced_iter(kept, ChaCha8Rng::seed_from_u64(common.seed))
        .map_err(|e| CliError::data(e.to_string()))?;

    let mut model = build_model(&model_cfg, common.seed)?;
    let log_every = (optim_cfg.max_iters / 20).max(1);
    let report = train(
        &mut model,
        &mut sampler,
        &loss_cfg,
        &optim_cfg,
        !common.no_static_synthesis,
        log_every,
        |line| println!("{line}"),
    )?;

    save_checkpoint(&model, &out.join("checkpoint.rcnet"))?;
    std::fs::write(out.join("loss.log"), report.loss_log.join("\n") + "\n")?;
    println!("checkpoint written to {}", out.join("checkpoint.rcnet").display());
    Ok(())
}

pub fn cmd_eval(checkpoint: &Path, common: &CommonArgs) -> Result<(), CliError> {
    let corpus_path = common.corpus.as_deref().ok_or_else(|| CliError::usage("--corpus is required"))?;
    let model = load_checkpoint(checkpoint)?;
    let paths = read_manifest(corpus_path)?;
    if paths.is_empty() {
        return Err(CliError::usage(format!("corpus manifest {} is empty", corpus_path.display())));
    }
    let scales = common.scales.clone().unwrap_or_else(|| vec![1.0]);
    let report = evaluate(&model, &paths, &scales, |w| eprintln!("warning: {w}"))?;
    print!("{}", report.render());
    if let Some(out) = common.out.as_deref() {
        std::fs::create_dir_all(out)?;
        write_run_manifest("eval", common, out)?;
        write_report(&report, out)?;
    }
    Ok(())
}

/// Binary P5 graymap; mask pixels become 0 or 255.
pub fn write_pgm(values: &[u8], h: usize, w: usize, path: &Path) -> Result<(), CliError> {
    assert_eq!(values.len(), h * w);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(values.iter().map(|&v| if v > 0 { 255u8 } else { 0 }));
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn cmd_infer(checkpoint: &Path, clip_path: &Path, common: &CommonArgs) -> Result<(), CliError> {
    let model = load_checkpoint(checkpoint)?;
    let sample = load_clip(clip_path)?;
    let out = require_out(common)?;
    write_run_manifest("infer", common, out)?;

    let scales = common.scales.clone().unwrap_or_else(|| vec![1.0]);
    let pred = model.infer_multiscale(&sample.clip, &scales)?;
    save_rten(&pred, &out.join("probability.rten")).map_err(|e| CliError::data(e.to_string()))?;

    let d = pred.dims();
    let mask: Vec<u8> = pred.data().iter().map(|&p| (p >= THRESHOLD) as u8).collect();
    write_pgm(&mask, d.h, d.w, &out.join("mask.pgm"))?;
    let fg = mask.iter().map(|&v| v as usize).sum::<usize>() as f64 / mask.len() as f64;
    println!("foreground fraction {fg:.4}; outputs in {}", out.display());
    Ok(())
}

/// One small graph per operator kind, each with trainable parameters in
/// front so gradients flow through the op under test.
pub fn gradcheck_suites(seed: u64) -> Vec<(&'static str, OpGraph<f64>, Tensor5<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn rand_tensor(rng: &mut ChaCha8Rng, dims: Dims5) -> Tensor5<f64> {
        let data: Vec<f64> = (0..dims.count().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor5::from_vec(dims, data).unwrap()
    }

    let mut suites = Vec::new();
    let input = rand_tensor(&mut rng, Dims5::new(2, 2, 3, 8, 8));

    // conv3d (with temporal padding) standalone
    {
        let mut g = OpGraph::<f64>::new();
        let x = g.input();
        let w = g.add_param("conv.w", rand_tensor(&mut rng, Dims5::new(3, 2, 3, 3, 3)));
        let b = g.add_param("conv.b", rand_tensor(&mut rng, Dims5::new(3, 1, 1, 1, 1)));
        g.add_node("conv", OpKind::Conv3d { w, b, stride: (1, 1), pad: (1, 1), pad_l: 1 }, vec![x]).unwrap();
        suites.push(("conv3d", g, input.clone()));
    }
    // retro_conv (dilation 2 exercises the atrous path)
    {
        let mut g = OpGraph::<f64>::new();
        let x = g.input();
        let w = g.add_param("retro.w", rand_tensor(&mut rng, Dims5::new(3, 2, 2, 3, 3)));
        let b = g.add_param("retro.b", rand_tensor(&mut rng, Dims5::new(3, 1, 1, 1, 1)));
        g.add_node("retro", OpKind::RetroConv { w, b, dilation: 2 }, vec![x]).unwrap();
        suites.push(("retro_conv", g, input.clone()));
    }
    // each remaining op behind a 1x1 conv so it sees parameter gradients
    let with_front = |rng: &mut ChaCha8Rng, name: &'static str, op: OpKind| {
        let mut g = OpGraph::<f64>::new();
        let x = g.input();
        let mk = |rng: &mut ChaCha8Rng, dims: Dims5| {
            let data: Vec<f64> = (0..dims.count().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            Tensor5::from_vec(dims, data).unwrap()
        };
        let w = g.add_param("front.w", mk(rng, Dims5::new(2, 2, 1, 1, 1)));
        let b = g.add_param("front.b", mk(rng, Dims5::new(2, 1, 1, 1, 1)));
        let front = g
            .add_node("front", OpKind::Conv3d { w, b, stride: (1, 1), pad: (0, 0), pad_l: 0 }, vec![x])
            .unwrap();
        let inputs = if matches!(op, OpKind::ConcatChannels) { vec![front, front] } else { vec![front] };
        g.add_node(name, op, inputs).unwrap();
        (name, g)
    };
    {
        let (name, g) = with_front(&mut rng, "temporal_avg_pool", OpKind::TemporalAvgPool);
        suites.push((name, g, input.clone()));
    }
    {
        let (name, g) = with_front(&mut rng, "maxpool2", OpKind::MaxPool2);
        suites.push((name, g, input.clone()));
    }
    {
        let (name, g) = with_front(&mut rng, "relu", OpKind::Relu);
        suites.push((name, g, input.clone()));
    }
    {
        let (name, g) = with_front(&mut rng, "sigmoid", OpKind::Sigmoid);
        suites.push((name, g, input.clone()));
    }
    {
        let (name, g) = with_front(&mut rng, "concat_channels", OpKind::ConcatChannels);
        suites.push((name, g, input.clone()));
    }
    // deconv2x2 standalone (needs a single time slice)
    {
        let mut g = OpGraph::<f64>::new();
        let x = g.input();
        let w = g.add_param("deconv.w", rand_tensor(&mut rng, Dims5::new(3, 2, 1, 2, 2)));
        let b = g.add_param("deconv.b", rand_tensor(&mut rng, Dims5::new(3, 1, 1, 1, 1)));
        g.add_node("deconv", OpKind::Deconv2x2 { w, b }, vec![x]).unwrap();
        let slice = rand_tensor(&mut rng, Dims5::new(2, 2, 1, 8, 8));
        suites.push(("deconv2x2", g, slice));
    }
    // full 3-stage model at reduced width
    {
        let cfg = ModelConfig {
            backbone: Backbone::Simple3Layer,
            backbone_widths: vec![4, 4, 4],
            change_module: ChangeModule::Arpp,
            arpp_dilations: vec![1, 3],
            change_widths: vec![4, 4, 4],
            decoder_levels: 2,
            input_length_hint: 4,
        };
        let g = build_graph::<f64>(&cfg, seed).expect("valid config");
        let dims = Dims5::new(1, 3, 4, 16, 16);
        let data: Vec<f64> = (0..dims.count().unwrap()).map(|_| rng.gen_range(0.0..1.0)).collect();
        suites.push(("full_model_3stage", g, Tensor5::from_vec(dims, data).unwrap()));
    }
    suites
}

pub fn cmd_gradcheck(common: &CommonArgs) -> Result<(), CliError> {
    // gradcheck always runs in f64; the flag is accepted for symmetry
    let _ = common.f64;
    let (epsilon, tolerance) = (1e-5, 1e-4);
    let mut failed = Vec::new();
    for (name, mut g, input) in gradcheck_suites(common.seed) {
        let report = grad_check(&mut g, &input, epsilon, tolerance)
            .map_err(|e| CliError::numeric(format!("{name}: {e}")))?;
        let status = if report.pass() { "pass" } else { "FAIL" };
        println!("op {name}: {status} (max_rel {:.3e})", report.max_rel());
        if !report.pass() {
            print!("{}", report.render());
            failed.push(name);
        }
    }
    if failed.is_empty() {
        println!("all operator gradients verified at tolerance {tolerance:e}");
        Ok(())
    } else {
        Err(CliError::numeric(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
