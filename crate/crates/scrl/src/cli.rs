//! Command-line interface: dataset synthesis, training, embedding,
//! evaluation, MFCC extraction, and the (η₁, η₂) grid sweep.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data or format error,
//! 3 numeric failure (non-finite loss). Named outputs are removed again if
//! the command fails partway.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::apply_kv;
use crate::error::{Error, Result};
use crate::mfcc;
use crate::model::ImageMode;
use crate::retrieval::{self, Protocol};
use crate::synth::SynthSpec;
use crate::tensor::Tensor;
use crate::tensor_file;
use crate::trainer::{hyperparameter_sweep, sweep_csv, TrainConfig, Trainer};

#[derive(Parser)]
#[command(
    name = "scrl",
    version,
    about = "Cross-modal image-voice retrieval: train, embed, and evaluate semantics-consistent representations"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic image-voice dataset
    Synth(SynthArgs),
    /// Train a model on a manifest dataset
    Train(TrainArgs),
    /// Embed a dataset with a trained checkpoint
    Embed(EmbedArgs),
    /// Evaluate retrieval metrics (mAP, P@k, precision curves)
    Eval(EvalArgs),
    /// Extract the canonical flattened MFCC input from a WAV file
    Mfcc(MfccArgs),
    /// Grid-search the consistency/classification trade-off coefficients
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long = "per-class", default_value_t = 50)]
    per_class: usize,
    /// Falls back to $SCRL_SEED, then 42
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "image-size", default_value_t = 224)]
    image_size: usize,
    #[arg(long = "voice-secs", default_value_t = 2.0)]
    voice_secs: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// key=value configuration file (flags override file values)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Resume from an existing checkpoint (only --epochs may be overridden)
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Optional per-epoch loss CSV
    #[arg(long = "loss-log")]
    loss_log: Option<PathBuf>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Disable a loss term (repeatable): pair, intra, inter, class
    #[arg(long = "disable")]
    disable: Vec<String>,
    /// Override every voice-network conv dilation (1 = undilated)
    #[arg(long)]
    dilation: Option<usize>,
    #[arg(long = "hidden-dim")]
    hidden_dim: Option<usize>,
    #[arg(long = "rep-dim")]
    rep_dim: Option<usize>,
    /// tinycnn | precomputed
    #[arg(long = "image-mode")]
    image_mode: Option<String>,
    #[arg(long = "train-frac")]
    train_frac: Option<f64>,
    /// Force single-threaded, bit-reproducible execution
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    deterministic: bool,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output prefix; writes <prefix>.images.scrlt, .voices.scrlt, .labels.scrlt, .ids.tsv
    #[arg(long = "out-prefix")]
    out_prefix: String,
    /// all | train | test (split derived from the checkpoint's seed)
    #[arg(long, default_value = "all")]
    split: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// i2v | v2i | both
    #[arg(long, default_value = "both")]
    protocol: String,
    /// Comma-separated P@k cutoffs
    #[arg(long, default_value = "1,5,10")]
    k: String,
    /// Metrics CSV output (protocol,metric,k,value)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Precision-curve CSV output (k,precision); with --protocol both the
    /// protocol code is inserted before the extension
    #[arg(long)]
    curve: Option<PathBuf>,
    /// test | train | all
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct MfccArgs {
    #[arg(long)]
    wav: PathBuf,
    /// Output tensor file holding the flattened voice-network input
    #[arg(long)]
    out: PathBuf,
    /// Optional key=value file for mfcc_* settings
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated η₁ grid
    #[arg(long = "eta1-grid")]
    eta1_grid: String,
    /// Comma-separated η₂ grid
    #[arg(long = "eta2-grid")]
    eta2_grid: String,
    /// Sweep table CSV output
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

/// Parse argv and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 1,
                Error::NonFinite(_) => 3,
                _ => 2,
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Mfcc(a) => cmd_mfcc(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

/// Removes registered outputs unless the command commits.
struct OutputGuard {
    files: Vec<PathBuf>,
    trees: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    fn new() -> Self {
        Self { files: Vec::new(), trees: Vec::new(), committed: false }
    }

    fn file(&mut self, p: &Path) {
        self.files.push(p.to_path_buf());
    }

    fn tree(&mut self, p: &Path) {
        self.trees.push(p.to_path_buf());
    }

    fn commit(mut self) {
        self.committed = true;
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        for d in &self.trees {
            let _ = fs::remove_dir_all(d);
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SCRL_SEED") {
        Ok(v) => v
            .trim()
            .parse::<u64>()
            .map(Some)
            .map_err(|_| Error::Config(format!("SCRL_SEED is not a valid seed: {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn resolve_seed(flag: Option<u64>, file_seed: Option<u64>) -> Result<u64> {
    Ok(match (flag, file_seed, env_seed()?) {
        (Some(s), _, _) => s,
        (None, Some(s), _) => s,
        (None, None, Some(s)) => s,
        (None, None, None) => 42,
    })
}

fn read_config_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let spec = SynthSpec {
        classes: a.classes,
        per_class: a.per_class,
        seed,
        image_size: a.image_size,
        voice_secs: a.voice_secs,
        ..Default::default()
    };
    let mut guard = OutputGuard::new();
    if a.out.exists() {
        guard.tree(&a.out.join("images"));
        guard.tree(&a.out.join("voices"));
        guard.file(&a.out.join("manifest.tsv"));
    } else {
        guard.tree(&a.out);
    }
    let manifest = crate::synth::synth_dataset(&spec, &a.out)?;
    println!(
        "wrote {} image-voice pairs across {} classes to {}",
        manifest.records.len(),
        manifest.n_classes,
        a.out.display()
    );
    guard.commit();
    Ok(())
}

fn build_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let mut file_seed = None;
    if let Some(path) = &a.config {
        let text = read_config_file(path)?;
        apply_kv(&mut cfg, &text)?;
        if text.lines().any(|l| l.trim_start().starts_with("seed")) {
            file_seed = Some(cfg.seed);
        }
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.eta1 {
        cfg.loss.eta1 = v;
    }
    if let Some(v) = a.eta2 {
        cfg.loss.eta2 = v;
    }
    if let Some(v) = a.xi {
        cfg.loss.xi = v;
    }
    if let Some(v) = a.zeta {
        cfg.loss.zeta = v;
    }
    for term in &a.disable {
        match term.as_str() {
            "pair" => cfg.loss.enable_pair = false,
            "intra" => cfg.loss.enable_intra = false,
            "inter" => cfg.loss.enable_inter = false,
            "class" => cfg.loss.enable_class = false,
            other => return Err(Error::Config(format!("unknown loss term {other:?} in --disable"))),
        }
    }
    if let Some(v) = a.dilation {
        cfg.dilation_override = Some(v);
    }
    if let Some(v) = a.hidden_dim {
        cfg.hidden_dim = v;
    }
    if let Some(v) = a.rep_dim {
        cfg.rep_dim = v;
    }
    if let Some(mode) = &a.image_mode {
        cfg.image_mode = match mode.as_str() {
            "tinycnn" => ImageMode::TinyCnn,
            "precomputed" => ImageMode::Precomputed,
            other => return Err(Error::Config(format!("unknown image mode {other:?}"))),
        };
    }
    if let Some(v) = a.train_frac {
        cfg.train_frac = v;
    }
    cfg.deterministic = a.deterministic;
    cfg.seed = resolve_seed(a.seed, file_seed)?;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let manifest = crate::manifest::load_manifest(&a.manifest)?;
    let mut trainer = if let Some(resume_path) = &a.resume {
        if a.config.is_some() {
            return Err(Error::Config("--config cannot be combined with --resume".into()));
        }
        let ckpt = load_checkpoint(resume_path)?;
        let mut cfg_epochs = ckpt.cfg.epochs;
        if let Some(v) = a.epochs {
            cfg_epochs = v;
        }
        let mut ckpt = ckpt;
        ckpt.cfg.epochs = cfg_epochs;
        Trainer::from_checkpoint(&manifest, ckpt)?
    } else {
        Trainer::new(&manifest, build_train_config(&a)?)?
    };

    let mut guard = OutputGuard::new();
    guard.file(&a.out);
    if let Some(p) = &a.loss_log {
        guard.file(p);
    }
    trainer.run(|epoch, loss| println!("epoch {epoch} loss {loss}"))?;
    save_checkpoint(&trainer.to_checkpoint(), &a.out)?;
    if let Some(p) = &a.loss_log {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in trainer.loss_log.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", i + 1, l));
        }
        fs::write(p, csv).map_err(|e| Error::io(p, e))?;
    }
    println!("checkpoint written to {}", a.out.display());
    guard.commit();
    Ok(())
}

fn split_subset(trainer: &Trainer, split: &str) -> Result<Vec<usize>> {
    Ok(match split {
        "all" => (0..trainer.data.ids.len()).collect(),
        "train" => trainer.train_idx.clone(),
        "test" => trainer.test_idx.clone(),
        other => return Err(Error::Config(format!("unknown split {other:?} (expected all|train|test)"))),
    })
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let manifest = crate::manifest::load_manifest(&a.manifest)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let trainer = Trainer::from_checkpoint(&manifest, ckpt)?;
    let idx = split_subset(&trainer, &a.split)?;
    let corpus = trainer.embed(&idx)?;

    let paths = [
        PathBuf::from(format!("{}.images.scrlt", a.out_prefix)),
        PathBuf::from(format!("{}.voices.scrlt", a.out_prefix)),
        PathBuf::from(format!("{}.labels.scrlt", a.out_prefix)),
        PathBuf::from(format!("{}.ids.tsv", a.out_prefix)),
    ];
    let mut guard = OutputGuard::new();
    for p in &paths {
        guard.file(p);
    }
    tensor_file::write_tensor(&corpus.image_reps, &paths[0])?;
    tensor_file::write_tensor(&corpus.voice_reps, &paths[1])?;
    let labels = Tensor::from_vec(corpus.labels.iter().map(|&l| l as f64).collect());
    tensor_file::write_tensor(&labels, &paths[2])?;
    let ids = corpus.ids.join("\n") + "\n";
    fs::write(&paths[3], ids).map_err(|e| Error::io(&paths[3], e))?;
    println!("embedded {} samples to {}.*", corpus.ids.len(), a.out_prefix);
    guard.commit();
    Ok(())
}

fn curve_path(base: &Path, protocol: Protocol, both: bool) -> PathBuf {
    if !both {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
    let ext = base.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    base.with_file_name(format!("{stem}.{}.{ext}", protocol.code()))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let manifest = crate::manifest::load_manifest(&a.manifest)?;
    let ckpt = load_checkpoint(&a.ckpt)?;
    let trainer = Trainer::from_checkpoint(&manifest, ckpt)?;
    let idx = split_subset(&trainer, &a.split)?;
    let corpus = trainer.embed(&idx)?;

    let protocols: Vec<Protocol> = match a.protocol.as_str() {
        "i2v" => vec![Protocol::ImageToVoice],
        "v2i" => vec![Protocol::VoiceToImage],
        "both" => vec![Protocol::ImageToVoice, Protocol::VoiceToImage],
        other => return Err(Error::Config(format!("unknown protocol {other:?} (expected i2v|v2i|both)"))),
    };
    let ks: Vec<usize> = a
        .k
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad k value {s:?}"))))
        .collect::<Result<_>>()?;

    let mut guard = OutputGuard::new();
    let mut reports = Vec::new();
    for &p in &protocols {
        let report = retrieval::evaluate(&corpus, p, &ks, None)?;
        if report.skipped_queries > 0 {
            eprintln!(
                "warning: {} {} queries had no relevant target and were excluded from mAP",
                report.skipped_queries,
                p.code()
            );
        }
        reports.push(report);
    }
    if let Some(out) = &a.out {
        guard.file(out);
        fs::write(out, retrieval::metrics_csv(&reports)).map_err(|e| Error::io(out, e))?;
    }
    if let Some(curve) = &a.curve {
        for report in &reports {
            let path = curve_path(curve, report.protocol, protocols.len() > 1);
            guard.file(&path);
            fs::write(&path, retrieval::curve_csv(report)).map_err(|e| Error::io(&path, e))?;
        }
    }
    print!("{}", retrieval::summary_kv(&reports));
    guard.commit();
    Ok(())
}

fn cmd_mfcc(a: MfccArgs) -> Result<()> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &a.config {
        apply_kv(&mut cfg, &read_config_file(path)?)?;
    }
    let bytes = fs::read(&a.wav).map_err(|e| Error::io(&a.wav, e))?;
    let input = mfcc::voice_input_from_wav_bytes(&bytes, &cfg.mfcc)?;
    let mut guard = OutputGuard::new();
    guard.file(&a.out);
    tensor_file::write_tensor(&input, &a.out)?;
    println!("wrote {}-element voice input to {}", input.numel(), a.out.display());
    guard.commit();
    Ok(())
}

fn parse_grid(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad {what} grid value {s:?}")))
        })
        .collect()
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let manifest = crate::manifest::load_manifest(&a.manifest)?;
    let mut cfg = TrainConfig::default();
    let mut file_seed = None;
    if let Some(path) = &a.config {
        let text = read_config_file(path)?;
        apply_kv(&mut cfg, &text)?;
        if text.lines().any(|l| l.trim_start().starts_with("seed")) {
            file_seed = Some(cfg.seed);
        }
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    cfg.seed = resolve_seed(a.seed, file_seed)?;
    cfg.validate().map_err(|e| Error::Config(e.to_string()))?;

    let eta1 = parse_grid(&a.eta1_grid, "eta1")?;
    let eta2 = parse_grid(&a.eta2_grid, "eta2")?;
    let mut guard = OutputGuard::new();
    guard.file(&a.out);
    let rows = hyperparameter_sweep(&manifest, &cfg, &eta1, &eta2, |cell, row| {
        eprintln!(
            "cell {cell}: eta1={} eta2={} mAP i2v={:.4} v2i={:.4}",
            row.eta1, row.eta2, row.map_i2v, row.map_v2i
        );
    })?;
    fs::write(&a.out, sweep_csv(&rows)).map_err(|e| Error::io(&a.out, e))?;
    print!("{}", sweep_csv(&rows));
    guard.commit();
    Ok(())
}
