//! `scs`: score, compare and annotate image-generation models by semantic
//! consistency across seeds.

mod config;

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scs_core::analysis::{
    compare_models, compute_agreement, load_prompt_runs, prompt_embeddings, score_experiment,
    sensitivity_analysis, EmbeddingSource,
};
use scs_core::dataset::{
    load_manifest, load_scores, load_scores_as, persist_scores, read_records, ExperimentManifest,
    ScoreTable,
};
use scs_core::encoder::{EncoderDescriptor, PREPROCESSING_ID};
use scs_generate::GenerationClient;
use scs_onnx::OnnxEncoder;
use scs_service::ServiceConfig;

use crate::config::CliConfig;

#[derive(Parser)]
#[command(
    name = "scs",
    version,
    about = "Semantic consistency scoring for image-generation models",
    long_about = "Scores how consistently a model renders one prompt across seeds \
                  (mean pairwise clamped cosine similarity of image embeddings, 0..100), \
                  compares two models statistically, sweeps repetition counts and \
                  serves a blinded annotation session."
)]
struct Cli {
    /// TOML file with defaults for manifest, encoder, jobs and generation settings
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More logging (-v info, -vv debug, -vvv trace)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fetch missing images from the configured generation API
    Generate(GenerateArgs),
    /// Embed every image and write per-prompt .scse caches
    Encode(EncodeArgs),
    /// Score every prompt of one model and write the scores CSV
    Score(ScoreArgs),
    /// Compare two score tables with normality, KS and Wilcoxon tests
    Compare(CompareArgs),
    /// Score growing seed prefixes to find where the score settles
    Sensitivity(SensitivityArgs),
    /// Agreement between annotator choices and the higher-scoring model
    Agreement(AgreementArgs),
    /// Run the annotation service until interrupted
    Serve(ServeArgs),
}

#[derive(Args)]
struct ManifestArg {
    /// Experiment manifest (JSON)
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EncoderArgs {
    /// ONNX image encoder; images are embedded when caches are missing or stale
    #[arg(long, value_name = "FILE", conflicts_with = "cache_only")]
    model_file: Option<PathBuf>,

    /// Read embeddings from .scse caches only (the default without --model-file)
    #[arg(long)]
    cache_only: bool,

    /// Output width of the encoder
    #[arg(long, value_name = "N")]
    embedding_dim: Option<usize>,

    /// Name recorded in caches; defaults to the model file stem
    #[arg(long, value_name = "NAME")]
    encoder_name: Option<String>,
}

#[derive(Args)]
struct JobsArg {
    /// Worker threads (default: available cores)
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Print the report as JSON instead of text
    #[arg(long)]
    json: bool,

    /// Also write the JSON report to this file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    /// Only this model (repeatable; default all)
    #[arg(long = "model", value_name = "ID")]
    models: Vec<String>,

    /// Concurrent requests (overrides the config)
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    concurrency: Option<u64>,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    #[command(flatten)]
    encoder: EncoderArgs,

    /// Only this model (repeatable; default all)
    #[arg(long = "model", value_name = "ID")]
    models: Vec<String>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    /// Model to score
    #[arg(long, value_name = "ID")]
    model: String,

    #[command(flatten)]
    encoder: EncoderArgs,

    #[command(flatten)]
    jobs: JobsArg,

    /// Scores CSV path, `-` for stdout (default: <root>/<experiment>.scores/<model>.csv)
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Scores CSV of the first model
    #[arg(long, value_name = "CSV")]
    a: PathBuf,

    /// Scores CSV of the second model
    #[arg(long, value_name = "CSV")]
    b: PathBuf,

    /// Model id for --a (default: file stem)
    #[arg(long, value_name = "ID")]
    a_model: Option<String>,

    /// Model id for --b (default: file stem)
    #[arg(long, value_name = "ID")]
    b_model: Option<String>,

    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct SensitivityArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    /// Model to analyse
    #[arg(long, value_name = "ID")]
    model: String,

    /// Repetition counts, `START..END:STEP` or a comma list
    #[arg(long, default_value = "10..100:10", value_parser = parse_grid)]
    grid: Grid,

    /// Use the first N manifest prompts (default all)
    #[arg(long, value_name = "N")]
    prompts: Option<usize>,

    #[command(flatten)]
    encoder: EncoderArgs,

    #[command(flatten)]
    jobs: JobsArg,

    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct AgreementArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    /// Annotation store (default: <root>/<experiment>.annotations.jsonl)
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,

    /// Scores CSV of the first model (default from the manifest layout)
    #[arg(long, value_name = "CSV")]
    a: Option<PathBuf>,

    /// Scores CSV of the second model (default from the manifest layout)
    #[arg(long, value_name = "CSV")]
    b: Option<PathBuf>,

    #[command(flatten)]
    report: ReportArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    manifest: ManifestArg,

    #[arg(long, default_value_t = 8787)]
    port: u16,

    #[arg(long, default_value = "127.0.0.1", value_name = "ADDR")]
    bind: String,

    /// Allow cross-origin API calls from this origin (UI dev server)
    #[arg(long, value_name = "ORIGIN")]
    cors_origin: Option<String>,

    /// Built annotation UI to serve at /
    #[arg(long, value_name = "DIR")]
    ui_dir: Option<PathBuf>,

    /// Annotation store (default: <root>/<experiment>.annotations.jsonl)
    #[arg(long, value_name = "FILE")]
    annotations: Option<PathBuf>,

    /// Scores CSV of the first manifest model (default from the layout)
    #[arg(long, value_name = "CSV")]
    a: Option<PathBuf>,

    /// Scores CSV of the second manifest model (default from the layout)
    #[arg(long, value_name = "CSV")]
    b: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Grid(Vec<usize>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let grid: Vec<usize> = if let Some((range, step)) = s.split_once(':') {
        let (start, end) = range
            .split_once("..")
            .ok_or_else(|| format!("expected START..END:STEP, got `{s}`"))?;
        let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
        let (start, end, step) = (num(start)?, num(end)?, num(step)?);
        if step == 0 {
            return Err("step must be positive".into());
        }
        (start..=end).step_by(step).collect()
    } else {
        s.split(',')
            .map(|t| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}")))
            .collect::<Result<_, _>>()?
    };
    if grid.is_empty() {
        return Err(format!("`{s}` is empty"));
    }
    if grid[0] < 2 {
        return Err("repetition counts start at 2".into());
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("`{s}` is not strictly increasing"));
    }
    Ok(Grid(grid))
}

/// A problem with how the command was invoked (exit code 2).
#[derive(Debug)]
struct UsageError(String);

impl Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

struct Ctx {
    config: CliConfig,
}

impl Ctx {
    fn manifest(&self, arg: &ManifestArg) -> Result<ExperimentManifest> {
        let path = arg
            .manifest
            .clone()
            .or_else(|| self.config.manifest.clone())
            .ok_or_else(|| usage("--manifest is required (or `manifest` in --config)"))?;
        Ok(load_manifest(&path)?)
    }

    fn jobs(&self, arg: &JobsArg) -> usize {
        arg.jobs
            .map(|j| j as usize)
            .or(self.config.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    fn encoder(&self, args: &EncoderArgs) -> Result<Option<OnnxEncoder>> {
        if args.cache_only {
            return Ok(None);
        }
        let Some(path) = args
            .model_file
            .clone()
            .or_else(|| self.config.model_file.clone().filter(|_| self.config.cache_only != Some(true)))
        else {
            return Ok(None);
        };
        let name = args
            .encoder_name
            .clone()
            .or_else(|| self.config.encoder_name.clone())
            .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "encoder".into());
        let dim = args.embedding_dim.or(self.config.embedding_dim).unwrap_or(512);
        let descriptor = EncoderDescriptor::new(name, dim, PREPROCESSING_ID)?;
        log::info!("loading encoder {}", path.display());
        Ok(Some(OnnxEncoder::load(path, descriptor)?))
    }
}

fn source(enc: &Option<OnnxEncoder>) -> EmbeddingSource<'_> {
    match enc {
        Some(e) => EmbeddingSource::Encoder(e),
        None => EmbeddingSource::CacheOnly,
    }
}

fn emit<T: Serialize + Display>(report: &T, args: &ReportArgs) -> Result<()> {
    let json = serde_json::to_string_pretty(report)? + "\n";
    if let Some(out) = &args.out {
        write_file(out, json.as_bytes())?;
    }
    if args.json {
        print!("{json}");
    } else {
        print!("{report}");
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn load_table(path: &Path, model: Option<&str>) -> Result<ScoreTable> {
    Ok(match model {
        Some(m) => load_scores_as(path, m)?,
        None => load_scores(path)?,
    })
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn generate(ctx: &Ctx, args: &GenerateArgs) -> Result<()> {
    let manifest = ctx.manifest(&args.manifest)?;
    let mut cfg = ctx
        .config
        .generation
        .clone()
        .ok_or_else(|| usage("generation needs a [generation] section in --config"))?;
    if let Some(c) = args.concurrency {
        cfg.concurrency = c as usize;
    }
    let client = GenerationClient::new(cfg)?;
    let models: Vec<&str> = args.models.iter().map(String::as_str).collect();
    let summary = runtime()?.block_on(client.generate_layout(&manifest, &models))?;
    eprintln!(
        "generated {} image(s), {} already present, {} failed",
        summary.written,
        summary.existing,
        summary.failures.len()
    );
    if !summary.is_complete() {
        for f in &summary.failures {
            eprintln!("  {}/{}/{}: {}", f.model_id, f.prompt_id, f.seed, f.error);
        }
        bail!("layout incomplete: {} image(s) failed", summary.failures.len());
    }
    Ok(())
}

fn encode(ctx: &Ctx, args: &EncodeArgs) -> Result<()> {
    let manifest = ctx.manifest(&args.manifest)?;
    let enc = ctx
        .encoder(&args.encoder)?
        .ok_or_else(|| usage("encode needs --model-file"))?;
    let models: Vec<&str> = if args.models.is_empty() {
        manifest.model_ids().collect()
    } else {
        args.models.iter().map(String::as_str).collect()
    };
    let total = models.len() * manifest.prompts.len();
    let layout = manifest.layout();
    let mut failures = Vec::new();
    let mut done = 0;
    for model in &models {
        if manifest.model(model).is_none() {
            return Err(usage(format!("unknown model `{model}`")));
        }
        for prompt in manifest.prompt_ids() {
            done += 1;
            match prompt_embeddings(&manifest, model, prompt, EmbeddingSource::Encoder(&enc)) {
                Ok(v) => eprintln!(
                    "[{done}/{total}] {model}/{prompt}: {} vectors -> {}",
                    v.len(),
                    layout.cache_path(model, prompt).display()
                ),
                Err(e) => {
                    eprintln!("[{done}/{total}] {model}/{prompt}: FAILED");
                    failures.push(format!("{model}: {e}"));
                }
            }
        }
    }
    if !failures.is_empty() {
        bail!("{} prompt(s) failed to encode:\n{}", failures.len(), failures.join("\n"));
    }
    Ok(())
}

fn score(ctx: &Ctx, args: &ScoreArgs) -> Result<()> {
    let manifest = ctx.manifest(&args.manifest)?;
    let enc = ctx.encoder(&args.encoder)?;
    let table = score_experiment(&manifest, &args.model, source(&enc), ctx.jobs(&args.jobs))?;
    let out = args
        .out
        .clone()
        .or_else(|| {
            ctx.config
                .out_dir
                .as_ref()
                .map(|d| d.join(format!("{}.csv", args.model)))
        })
        .unwrap_or_else(|| manifest.layout().scores_path(&args.model));
    if out.as_os_str() == "-" {
        print!("{}", String::from_utf8(table.to_csv())?);
    } else {
        persist_scores(&table, &out)?;
        let scores = table.scores();
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        eprintln!(
            "scored {} prompt(s) for {}, mean {mean:.2} -> {}",
            table.len(),
            args.model,
            out.display()
        );
    }
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let a = load_table(&args.a, args.a_model.as_deref())?;
    let b = load_table(&args.b, args.b_model.as_deref())?;
    if a.model_id() == b.model_id() {
        return Err(usage(format!(
            "both tables are named `{}`; pass --a-model/--b-model",
            a.model_id()
        )));
    }
    emit(&compare_models(&a, &b)?, &args.report)
}

fn sensitivity(ctx: &Ctx, args: &SensitivityArgs) -> Result<()> {
    let manifest = ctx.manifest(&args.manifest)?;
    let enc = ctx.encoder(&args.encoder)?;
    let mut prompts: Vec<&str> = manifest.prompt_ids().collect();
    if let Some(n) = args.prompts {
        if n == 0 || n > prompts.len() {
            return Err(usage(format!(
                "--prompts {n} is outside 1..={}",
                prompts.len()
            )));
        }
        prompts.truncate(n);
    }
    let runs = load_prompt_runs(&manifest, &args.model, &prompts, source(&enc), ctx.jobs(&args.jobs))?;
    emit(&sensitivity_analysis(&runs, &args.grid.0)?, &args.report)
}

fn agreement(ctx: &Ctx, args: &AgreementArgs) -> Result<()> {
    let manifest = match (&args.manifest.manifest, &ctx.config.manifest) {
        (None, None) => None,
        _ => Some(ctx.manifest(&args.manifest)?),
    };
    let layout = manifest.as_ref().map(|m| m.layout());
    let default_scores = |i: usize| -> Result<PathBuf> {
        let m = manifest
            .as_ref()
            .ok_or_else(|| usage("--a/--b are required without --manifest"))?;
        let model = m
            .models
            .get(i)
            .ok_or_else(|| usage("the manifest has fewer than two models; pass --a and --b"))?;
        Ok(m.layout().scores_path(&model.model_id))
    };
    let a_path = match &args.a {
        Some(p) => p.clone(),
        None => default_scores(0)?,
    };
    let b_path = match &args.b {
        Some(p) => p.clone(),
        None => default_scores(1)?,
    };
    let annotations = args
        .annotations
        .clone()
        .or_else(|| layout.map(|l| l.annotations_path()))
        .ok_or_else(|| usage("--annotations is required without --manifest"))?;
    if !annotations.is_file() {
        bail!("no annotation store at {}", annotations.display());
    }
    let records = read_records(&annotations)?;
    let a = load_scores(&a_path)?;
    let b = load_scores(&b_path)?;
    emit(&compute_agreement(&records, &a, &b)?, &args.report)
}

fn serve(ctx: &Ctx, args: &ServeArgs) -> Result<()> {
    let manifest = ctx.manifest(&args.manifest)?;
    let mut cfg = ServiceConfig::new(manifest);
    if let Some(p) = &args.annotations {
        cfg.annotations_path = p.clone();
    }
    if let Some(p) = &args.a {
        cfg.score_paths[0] = p.clone();
    }
    if let Some(p) = &args.b {
        cfg.score_paths[1] = p.clone();
    }
    cfg.ui_dir = args.ui_dir.clone();
    cfg.cors_origin = args.cors_origin.clone();
    let addr = format!("{}:{}", args.bind, args.port);
    runtime()?.block_on(async move {
        let app = scs_service::router(cfg)?;
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        eprintln!("annotation service listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(p) => CliConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => CliConfig::default(),
    };
    let level = match cli.verbose {
        0 => config
            .verbosity
            .as_deref()
            .and_then(|v| v.parse().ok())
            .unwrap_or(log::LevelFilter::Warn),
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    let ctx = Ctx { config };
    match &cli.command {
        Command::Generate(a) => generate(&ctx, a),
        Command::Encode(a) => encode(&ctx, a),
        Command::Score(a) => score(&ctx, a),
        Command::Compare(a) => compare(a),
        Command::Sensitivity(a) => sensitivity(&ctx, a),
        Command::Agreement(a) => agreement(&ctx, a),
        Command::Serve(a) => serve(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(u) = e.downcast_ref::<UsageError>() {
                eprintln!("error: {u}");
                eprintln!("run `scs --help` for usage");
                return ExitCode::from(2);
            }
            eprintln!("error: {e}");
            for cause in e.chain().skip(1) {
                eprintln!("  caused by: {cause}");
            }
            ExitCode::from(1)
        }
    }
}
