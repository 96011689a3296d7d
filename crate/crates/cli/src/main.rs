use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diffmvr_cli::ablate::{cmd_ablate, worker_budget};
use diffmvr_cli::commands::{cmd_eval, cmd_gen, cmd_inpaint, cmd_pretrain_vae, cmd_train};
use diffmvr_cli::{exit_code, RunConfig};
use diffmvr_core::{Error, Result};

#[derive(Parser)]
#[command(name = "diffmvr", version, about = "Dual-guided latent diffusion video inpainting")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic occluded-clip dataset with 70/10/20 splits.
    Gen,
    /// Pretrain and freeze the VAE on the training split.
    PretrainVae,
    /// Train guidance encoders, projectors and the U-Net.
    Train,
    /// Inpaint a split with a trained checkpoint and write frame grids.
    Inpaint,
    /// Score inpainted clips against their ground truth.
    Eval,
    /// Train and score the seven ablation configurations.
    Ablate,
}

#[derive(Args)]
struct Flags {
    /// Flat `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    vae: Option<PathBuf>,
    #[arg(long, global = true)]
    inpainted: Option<PathBuf>,
    /// dual | sym | past | present (single-* aliases accepted)
    #[arg(long, global = true)]
    guidance: Option<String>,
    /// on | off
    #[arg(long, global = true)]
    motion_loss: Option<String>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
    #[arg(long, global = true)]
    alpha1: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// Any other config key, as `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn config(f: &Flags) -> Result<RunConfig> {
    let mut cfg = match &f.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &f.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let overrides = [
        ("seed", f.seed.map(|v| v.to_string())),
        ("out", path(&f.out)),
        ("data", path(&f.data)),
        ("checkpoint", path(&f.checkpoint)),
        ("vae", path(&f.vae)),
        ("inpainted", path(&f.inpainted)),
        ("guidance", f.guidance.clone()),
        ("motion_loss", f.motion_loss.clone()),
        ("lambda", f.lambda.map(|v| v.to_string())),
        ("alpha1", f.alpha1.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.force |= f.force;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(&cli.flags)?;
    match cli.cmd {
        Cmd::Gen => {
            let s = cmd_gen(&cfg)?;
            println!("wrote {} clips to {} (train {}, val {}, test {})", cfg.clips, cfg.out.display(), s.train, s.val, s.test);
        }
        Cmd::PretrainVae => {
            let p = cmd_pretrain_vae(&cfg)?;
            println!("VAE checkpoint: {}", p.display());
        }
        Cmd::Train => {
            let s = cmd_train(&cfg)?;
            let n = s.report.records.len();
            let tail = s.report.mean_total(n.saturating_sub(99), n);
            println!("checkpoint: {} (mean loss over the last 100 steps {tail:.4})", s.checkpoint.display());
        }
        Cmd::Inpaint => {
            let r = cmd_inpaint(&cfg)?;
            println!("inpainted {} clips into {}", r.len(), cfg.out.join("inpainted").display());
        }
        Cmd::Eval => print!("{}", cmd_eval(&cfg)?.to_table()),
        Cmd::Ablate => {
            let t = cmd_ablate(&cfg, worker_budget()?)?;
            print!("{}", t.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
