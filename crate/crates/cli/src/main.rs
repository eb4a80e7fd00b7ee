use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use clearseg::{
    build_surgery, gen_fixture, run_ablate, run_eval, run_segment, run_stats, AblationGrid,
    CliError, FixtureOptions, RunConfig, SurgeryOverrides,
};
use clearseg_core::stats::TokenSelection;
use clearseg_core::{AttnMode, GeluVariant};

#[derive(Parser)]
#[command(
    name = "clearseg",
    version,
    about = "Training-free open-vocabulary segmentation with CLIP ViT encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one label-map PNG per image.
    Segment(SegmentArgs),
    /// Score predictions against ground-truth label maps.
    Eval(EvalArgs),
    /// Per-layer feature statistics averaged over images.
    Stats(StatsArgs),
    /// mIoU over a grid of surgery configurations.
    Ablate(AblateArgs),
    /// Write a seeded synthetic checkpoint, text embeddings and test image.
    GenFixture(GenFixtureArgs),
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Safetensors text embeddings with a `.labels.json` sidecar.
    #[arg(long)]
    text_emb: PathBuf,
    /// JSON object renaming archive keys.
    #[arg(long)]
    key_map: Option<PathBuf>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    gelu: Option<GeluVariant>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, default_value_t = clearseg::config::DEFAULT_SHORTER_SIDE)]
    shorter_side: usize,
    #[arg(long, default_value_t = clearseg::config::DEFAULT_CROP)]
    crop: usize,
    #[arg(long, default_value_t = clearseg::config::DEFAULT_STRIDE)]
    stride: usize,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SurgeryArgs {
    /// vanilla, clearclip, maskclip or sclip.
    #[arg(long)]
    surgery: Option<String>,
    #[arg(long)]
    attn: Option<AttnMode>,
    #[arg(long, conflicts_with = "residual")]
    no_residual: bool,
    #[arg(long)]
    residual: bool,
    #[arg(long, conflicts_with = "ffn")]
    no_ffn: bool,
    #[arg(long)]
    ffn: bool,
    #[arg(long)]
    alpha: Option<f32>,
    /// Fraction of residual channels to zero in the last block.
    #[arg(long)]
    beta: Option<f32>,
}

impl SurgeryArgs {
    fn overrides(&self) -> SurgeryOverrides {
        let flag = |on: bool, off: bool| match (on, off) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        };
        SurgeryOverrides {
            attn: self.attn,
            residual: flag(self.residual, self.no_residual),
            ffn: flag(self.ffn, self.no_ffn),
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    surgery: SurgeryArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Also write fused logits as safetensors.
    #[arg(long)]
    dump_logits: bool,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    surgery: SurgeryArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "image")]
    images: Vec<PathBuf>,
    /// Ground-truth PNG paired with the `--image` at the same position.
    #[arg(long = "gt")]
    gts: Vec<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    surgery: SurgeryArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Include the class token.
    #[arg(long)]
    all_tokens: bool,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn get(self) -> bool {
        matches!(self, Toggle::On)
    }
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[arg(long = "image")]
    images: Vec<PathBuf>,
    #[arg(long = "gt")]
    gts: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "qk,qq")]
    attn_modes: Vec<AttnMode>,
    #[arg(long = "rc", value_delimiter = ',', default_value = "on,off")]
    residual: Vec<Toggle>,
    #[arg(long = "ffn", value_delimiter = ',', default_value = "on,off")]
    ffn: Vec<Toggle>,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    alphas: Vec<f32>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    betas: Vec<f32>,
}

#[derive(Args)]
struct GenFixtureArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value = "fixture")]
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    image_size: usize,
    #[arg(long, default_value_t = 4)]
    patch_size: usize,
    #[arg(long, default_value_t = 16)]
    width: usize,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    #[arg(long, default_value = "quick")]
    gelu: GeluVariant,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    image_height: usize,
    #[arg(long, default_value_t = 16)]
    image_width: usize,
}

fn run_config(
    model: ModelArgs,
    pipeline: PipelineArgs,
    surgery: Option<(&SurgeryArgs, &str)>,
) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::new(model.checkpoint, model.text_emb, pipeline.out);
    cfg.key_map = model.key_map;
    cfg.heads = model.heads;
    cfg.gelu = model.gelu;
    cfg.shorter_side = pipeline.shorter_side;
    cfg.crop = pipeline.crop;
    cfg.stride = pipeline.stride;
    cfg.jobs = pipeline.jobs;
    if let Some((args, default_preset)) = surgery {
        let preset = args.surgery.as_deref().unwrap_or(default_preset);
        cfg.surgery = build_surgery(preset, &args.overrides())?;
    }
    cfg.resolve()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Segment(a) => {
            let mut cfg = run_config(a.model, a.pipeline, Some((&a.surgery, "clearclip")))?;
            cfg.dump_logits = a.dump_logits;
            let entries = run_segment(&cfg, &a.images)?;
            println!(
                "segmented {} image(s) into {}",
                entries.len(),
                cfg.out_dir.display()
            );
        }
        Command::Eval(a) => {
            let cfg = run_config(a.model, a.pipeline, Some((&a.surgery, "clearclip")))?;
            let report = run_eval(&cfg, &a.images, &a.gts)?;
            println!("mIoU {:.4}", report.miou);
        }
        Command::Stats(a) => {
            let mut cfg = run_config(a.model, a.pipeline, Some((&a.surgery, "vanilla")))?;
            if a.all_tokens {
                cfg.tokens = TokenSelection::AllTokens;
            }
            let records = run_stats(&cfg, &a.images)?;
            println!(
                "wrote {} rows to {}",
                records.len(),
                cfg.out_dir.join("stats.csv").display()
            );
        }
        Command::Ablate(a) => {
            let cfg = run_config(a.model, a.pipeline, None)?;
            let grid = AblationGrid {
                attn_modes: a.attn_modes,
                residual: a.residual.into_iter().map(Toggle::get).collect(),
                ffn: a.ffn.into_iter().map(Toggle::get).collect(),
                alphas: a.alphas,
                betas: a.betas,
            };
            let rows = run_ablate(&cfg, &a.images, &a.gts, &grid)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                cfg.out_dir.join("ablation.csv").display()
            );
        }
        Command::GenFixture(a) => {
            let opts = FixtureOptions {
                seed: a.seed,
                image_size: a.image_size,
                patch_size: a.patch_size,
                width: a.width,
                layers: a.layers,
                heads: a.heads,
                embed_dim: a.embed_dim,
                gelu: a.gelu,
                classes: a.classes,
                image_height: a.image_height,
                image_width: a.image_width,
            };
            let paths = gen_fixture(&opts, &a.out)?;
            println!(
                "fixture written to {}",
                paths.checkpoint.parent().unwrap_or(&a.out).display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLEARSEG_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!(": {text}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
