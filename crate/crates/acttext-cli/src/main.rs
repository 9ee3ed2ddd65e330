//! `acttext` — drive the integer-text action toolkit from the shell:
//! generate demonstrations, fit quantization bounds, export masked training
//! samples, evaluate policies closed-loop, run the ablation grid, serve the
//! action gateway, and self-check the codec.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

mod commands;
mod config;

#[derive(Parser)]
#[command(name = "acttext", version, about = "Robot actions as plain integer text: tooling and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate successful scripted demonstrations as JSONL.
    GenDemos(GenDemosArgs),
    /// Fit per-dimension quantization bounds from a demo file.
    FitBounds(FitBoundsArgs),
    /// Export masked training samples from demos as JSONL.
    ExportSamples(ExportSamplesArgs),
    /// Evaluate one policy configuration closed-loop and write reports.
    Eval(EvalArgs),
    /// Run the six-row ablation grid and write reports.
    Ablate(AblateArgs),
    /// Serve the action gateway against a model backend.
    Serve(ServeArgs),
    /// Run the scripted stub backend for hermetic testing.
    StubVlm(StubVlmArgs),
    /// Round-trip and monotonicity self-check of the codec.
    CodecCheck(CodecCheckArgs),
    /// Preview masked action text.
    MaskPreview(MaskPreviewArgs),
}

#[derive(Args)]
struct GenDemosArgs {
    /// Environment: pointmass or arm.
    #[arg(long, default_value = "pointmass")]
    env: String,
    /// Number of successful episodes to keep.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitBoundsArgs {
    /// Demo JSONL produced by gen-demos.
    #[arg(long)]
    demos: PathBuf,
    /// Fraction of the observed span added on each side.
    #[arg(long, default_value_t = 0.0)]
    padding: f64,
    #[arg(long, default_value_t = 8)]
    horizon: usize,
    #[arg(long, default_value_t = 1000)]
    resolution: u32,
    /// Output bounds document (JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportSamplesArgs {
    #[arg(long)]
    demos: PathBuf,
    /// Bounds document from fit-bounds.
    #[arg(long)]
    bounds: PathBuf,
    /// Per-digit mask probability.
    #[arg(long, default_value_t = 0.3)]
    mask_p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also rasterize each window's start state as PNG into this directory.
    #[arg(long)]
    render_dir: Option<PathBuf>,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct RunOverrides {
    /// Config file (TOML or JSON); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment: pointmass or arm.
    #[arg(long)]
    env: Option<String>,
    /// Episodes per configuration.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Ensemble window (1 disables ensembling).
    #[arg(long)]
    ensemble_n: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    resolution: Option<u32>,
    /// Mask probability echoed in reports.
    #[arg(long)]
    mask_p: Option<f64>,
    /// Policy: oracle or nn.
    #[arg(long)]
    policy: Option<String>,
    /// Demonstrations fitted by the nn policy.
    #[arg(long)]
    demo_count: Option<usize>,
    #[arg(long)]
    demo_seed: Option<u64>,
    /// Bounds document; overrides the environment's default bounds.
    #[arg(long)]
    bounds_file: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    overrides: RunOverrides,
    /// Directory for eval_report.csv and eval_report.json.
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    overrides: RunOverrides,
    /// Resolution axis as baseline,high,low.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    resolutions: Option<Vec<u32>>,
    /// Directory for ablation_report.csv and ablation_report.json.
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: String,
    /// Backend base URL (chat-completions endpoint appended if absent).
    #[arg(long)]
    backend_url: String,
    #[arg(long)]
    model: String,
    /// Chunk horizon (default 8, or the bounds document's value).
    #[arg(long)]
    horizon: Option<usize>,
    /// Action dimensions (default 2, or the bounds document's value).
    #[arg(long)]
    dims: Option<usize>,
    /// Integer resolution (default 1000, or the bounds document's value).
    #[arg(long)]
    resolution: Option<u32>,
    /// Bounds document; its codec fields are used unless overridden above.
    #[arg(long)]
    bounds_file: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    ensemble_n: usize,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long)]
    max_tokens: Option<u32>,
    /// Sampling temperature (default greedy).
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Explicit API key; otherwise the ACTTEXT_API_KEY variable is used.
    #[arg(long)]
    api_key: Option<String>,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["reply", "script_file"])))]
struct StubVlmArgs {
    #[arg(long, default_value = "127.0.0.1:8090")]
    bind: String,
    /// Canned reply; repeat the flag for a script of several.
    #[arg(long)]
    reply: Vec<String>,
    /// File with one canned reply per line.
    #[arg(long)]
    script_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

#[derive(Args)]
struct CodecCheckArgs {
    /// Bounds document to check.
    #[arg(long)]
    bounds: PathBuf,
    /// Override the document's resolution.
    #[arg(long)]
    resolution: Option<u32>,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MaskPreviewArgs {
    /// Action text to mask.
    #[arg(long)]
    text: String,
    #[arg(long, default_value_t = 0.3)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = '#')]
    mask_char: char,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenDemos(args) => commands::gen_demos(args),
        Command::FitBounds(args) => commands::fit_bounds(args),
        Command::ExportSamples(args) => commands::export_samples(args),
        Command::Eval(args) => commands::eval(args),
        Command::Ablate(args) => commands::ablate(args),
        Command::Serve(args) => commands::serve(args),
        Command::StubVlm(args) => commands::stub_vlm(args),
        Command::CodecCheck(args) => commands::codec_check(args),
        Command::MaskPreview(args) => commands::mask_preview(args),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
