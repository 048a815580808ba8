//! `wamair` — train, evaluate, and poke at wavelet/Mamba restoration nets.
//!
//! Configuration is plain-text `key=value` (`#` comments), merged in order:
//! file from `--config`, then each `--set KEY=VALUE`, then the dedicated
//! flags (`--seed`, `--steps`). Every command writes the configuration it
//! actually resolved — defaults filled in, checkpoint-supplied values where a
//! checkpoint decides — to `OUT/config.txt` so a run can be reproduced exactly.
//!
//! Exit codes: 1 bad config or arguments, 2 I/O or file-format trouble,
//! 3 training aborted on a non-finite loss.

use clap::{Args, Parser, Subcommand};
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use wamair_core::config::{
    corpus_from_settings, corpus_to_settings, net_from_settings, net_to_settings,
    train_from_settings, train_to_settings, Settings,
};
use wamair_core::data::ppm::{load_image, save_image};
use wamair_core::data::build_corpus;
use wamair_core::net::build;
use wamair_core::tensor::Tensor;
use wamair_core::train::ablate::{ablation_grid, format_table};
use wamair_core::train::checkpoint::{load_checkpoint, save_checkpoint};
use wamair_core::train::{clamp01, evaluate, format_log, init_state, train_until};
use wamair_core::wavelet::dwt2;
use wamair_core::Error;

#[derive(Parser)]
#[command(name = "wamair", version, about = "Image restoration training kit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Plain-text key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set train.steps=500 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory for logs, checkpoints, images, and the config echo
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Shorthand that sets both data.seed and train.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for train.steps
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train on a synthetic-degradation corpus; writes model.wama + train.log
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from an existing checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out split; prints "psnr=<f> ssim=<f> n=<int>"
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Restore one image with a trained checkpoint
    Restore {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input image (binary PPM)
        #[arg(long)]
        input: PathBuf,
    },
    /// Decompose an image and write the four subbands as viewable files
    Inspect {
        #[command(flatten)]
        common: Common,
        /// Input image (binary PPM)
        #[arg(long)]
        input: PathBuf,
        /// Decomposition level (1 halves the size once)
        #[arg(long, default_value_t = 1)]
        level: usize,
    },
    /// Retrain across the architecture/loss toggle grid and emit a table
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn settings_for(common: &Common) -> Result<Settings, Error> {
    let mut s = match &common.config {
        Some(p) => Settings::parse(&fs::read_to_string(p)?)?,
        None => Settings::default(),
    };
    for kv in &common.set {
        s.apply_override(kv)?;
    }
    if let Some(seed) = common.seed {
        s.set("data.seed", seed);
        s.set("train.seed", seed);
    }
    if let Some(steps) = common.steps {
        s.set("train.steps", steps);
    }
    Ok(s)
}

fn write_echo(common: &Common, s: &Settings, extra: &[(&str, String)]) -> Result<(), Error> {
    fs::create_dir_all(&common.out)?;
    let mut echo = s.clone();
    for (k, v) in extra {
        echo.set(k, v.clone());
    }
    fs::write(common.out.join("config.txt"), echo.serialize())?;
    Ok(())
}

fn cmd_train(common: Common, checkpoint: Option<PathBuf>) -> Result<(), Error> {
    let s = settings_for(&common)?;
    let spec = corpus_from_settings(&s)?;
    let tc = train_from_settings(&s)?;
    let (net, state) = match &checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let net = build(&net_from_settings(&s)?, tc.seed)?;
            let state = init_state(&tc, &net);
            (net, state)
        }
    };
    let mut resolved = Settings::default();
    corpus_to_settings(&spec, &mut resolved);
    net_to_settings(&net.cfg, &mut resolved);
    train_to_settings(&tc, &mut resolved);
    let mut extra = vec![("cli.command", "train".to_string())];
    if let Some(p) = &checkpoint {
        extra.push(("cli.checkpoint", p.display().to_string()));
    }
    write_echo(&common, &resolved, &extra)?;
    let corpus = build_corpus(&spec)?;
    let until = state.step.max(tc.steps);
    let (net, state, logs) = train_until(net, state, &corpus.train, until)?;
    let mut log_text = String::new();
    for e in &logs {
        let line = format_log(e);
        println!("{line}");
        log_text.push_str(&line);
        log_text.push('\n');
    }
    fs::write(common.out.join("train.log"), log_text)?;
    let model = common.out.join("model.wama");
    save_checkpoint(&net, &state, &model)?;
    if !corpus.val.is_empty() {
        let m = evaluate(&net, &corpus.val)?;
        println!("psnr={:.4} ssim={:.4} n={}", m.psnr, m.ssim, m.n);
    }
    println!("checkpoint: {}", model.display());
    Ok(())
}

fn cmd_eval(common: Common, checkpoint: PathBuf) -> Result<(), Error> {
    let s = settings_for(&common)?;
    let spec = corpus_from_settings(&s)?;
    let (net, _) = load_checkpoint(&checkpoint)?;
    let mut resolved = Settings::default();
    corpus_to_settings(&spec, &mut resolved);
    net_to_settings(&net.cfg, &mut resolved);
    write_echo(&common, &resolved, &[
        ("cli.command", "eval".into()),
        ("cli.checkpoint", checkpoint.display().to_string()),
    ])?;
    let corpus = build_corpus(&spec)?;
    let split = if corpus.val.is_empty() {
        eprintln!("warning: held-out split is empty, evaluating on the training split");
        &corpus.train
    } else {
        &corpus.val
    };
    let m = evaluate(&net, split)?;
    println!("psnr={:.4} ssim={:.4} n={}", m.psnr, m.ssim, m.n);
    Ok(())
}

fn cmd_restore(common: Common, checkpoint: PathBuf, input: PathBuf) -> Result<(), Error> {
    settings_for(&common)?; // restore takes no config keys, but bad syntax should still fail
    let (net, _) = load_checkpoint(&checkpoint)?;
    let mut resolved = Settings::default();
    net_to_settings(&net.cfg, &mut resolved);
    write_echo(&common, &resolved, &[
        ("cli.command", "restore".into()),
        ("cli.checkpoint", checkpoint.display().to_string()),
        ("cli.input", input.display().to_string()),
    ])?;
    let img = load_image(&input)?;
    let shape = img.shape().to_vec();
    let batched = img.reshape(&[1, shape[0], shape[1], shape[2]]);
    let (full, _, _) = net.forward(&batched)?;
    let restored = clamp01(&full).reshape(&shape);
    let path = common.out.join("restored.ppm");
    save_image(&restored, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Detail coefficients are signed; render them with zero at mid-gray and the
/// largest magnitude at the edges of the range. An all-zero band is flat 0.5.
fn detail_to_image(t: &Tensor) -> Tensor {
    let m = t.data().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mapped = t.data().iter().map(|v| if m == 0.0 { 0.5 } else { 0.5 + v / (2.0 * m) }).collect();
    Tensor::from_vec(mapped, t.shape())
}

fn cmd_inspect(common: Common, input: PathBuf, level: usize) -> Result<(), Error> {
    if level == 0 {
        return Err(Error::Config("inspect level must be at least 1".into()));
    }
    settings_for(&common)?; // inspect takes no config keys either
    write_echo(&common, &Settings::default(), &[
        ("cli.command", "inspect".into()),
        ("cli.input", input.display().to_string()),
        ("cli.level", level.to_string()),
    ])?;
    let img = load_image(&input)?;
    let c = img.shape()[0];
    let mut cur = img.reshape(&[1, c, img.shape()[1], img.shape()[2]]);
    let mut bands = dwt2(&cur)?;
    for _ in 1..level {
        cur = bands.ll;
        bands = dwt2(&cur)?;
    }
    let (h, w) = (bands.ll.shape()[2], bands.ll.shape()[3]);
    // the smooth band is the coarse image scaled by 2 per level; detail bands
    // get the signed mid-gray mapping
    let ll_scale = (1u64 << level) as f64;
    let ll = Tensor::from_vec(
        bands.ll.data().iter().map(|v| (v / ll_scale).clamp(0.0, 1.0)).collect(),
        bands.ll.shape(),
    );
    for (name, t) in [("ll", &ll), ("lh", &bands.lh), ("hl", &bands.hl), ("hh", &bands.hh)] {
        let img = if name == "ll" { t.reshape(&[c, h, w]) } else { detail_to_image(t).reshape(&[c, h, w]) };
        save_image(&img, common.out.join(format!("{name}.ppm")))?;
    }
    println!("wrote ll/lh/hl/hh at level {level} ({w}x{h}) in {}", common.out.display());
    Ok(())
}

fn cmd_ablate(common: Common) -> Result<(), Error> {
    let s = settings_for(&common)?;
    let spec = corpus_from_settings(&s)?;
    let net_cfg = net_from_settings(&s)?;
    let tc = train_from_settings(&s)?;
    let mut resolved = Settings::default();
    corpus_to_settings(&spec, &mut resolved);
    net_to_settings(&net_cfg, &mut resolved);
    train_to_settings(&tc, &mut resolved);
    write_echo(&common, &resolved, &[("cli.command", "ablate".into())])?;
    let corpus = build_corpus(&spec)?;
    let val = if corpus.val.is_empty() { &corpus.train } else { &corpus.val };
    let rows = ablation_grid(&net_cfg, &tc, &corpus.train, val)?;
    let table = format_table(&rows);
    print!("{table}");
    fs::write(common.out.join("ablation.txt"), table)?;
    Ok(())
}

fn exit_for(e: &Error) -> u8 {
    match e {
        Error::NanAbort { .. } => 3,
        Error::Io(_) | Error::ImageParse(_) | Error::Checkpoint(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Train { common, checkpoint } => cmd_train(common, checkpoint),
        Cmd::Eval { common, checkpoint } => cmd_eval(common, checkpoint),
        Cmd::Restore { common, checkpoint, input } => cmd_restore(common, checkpoint, input),
        Cmd::Inspect { common, input, level } => cmd_inspect(common, input, level),
        Cmd::Ablate { common } => cmd_ablate(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_for(&e))
        }
    }
}
