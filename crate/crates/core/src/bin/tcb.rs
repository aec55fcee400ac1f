use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcb_core::analysis::{curves_to_csv, read_ratings_csv};
use tcb_core::annotation::{self, AnnotationService, Pool, DEFAULT_PORT};
use tcb_core::assertion::{AssertionGenerator, AssertionSet};
use tcb_core::cache::{JsonlCache, VectorCache};
use tcb_core::config::{Config, EmbeddingBackend};
use tcb_core::corpus::{load_corpus, Category, ManifestKind};
use tcb_core::pipeline::*;
use tcb_core::providers::{
    ChatClient, EmbeddingProvider, HttpEmbeddingClient, PrecomputedEmbeddings, Throttled, EMBED_KEY_ENV,
    LLM_KEY_ENV, VLM_KEY_ENV,
};
use tcb_core::synthesis::{default_exemplars, mark_reviewed, synthesize_prompts, DraftPrompt};
use tcb_core::verifier::{Aggregation, IndexMode, VideoEvaluation, Verifier};
use tcb_core::{Error, Result};

#[derive(Parser)]
#[command(name = "tcb", version, about = "Temporal compositionality evaluation harness")]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode videos into cached, resampled frame directories.
    Extract(ExtractArgs),
    /// Generate frame-indexed assertions for every corpus prompt.
    Assert(AssertArgs),
    /// Ask the judge model every assertion of every extracted video.
    Verify(VerifyArgs),
    /// Aggregate verdicts into completion ratios and scores.
    Score(ScoreArgs),
    /// Frame consistency: embedding similarity, EPE or ATE.
    Consistency(ConsistencyArgs),
    /// Curves, motion statistics and correlation with human ratings.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
    /// Serve the rating collection API or export collected ratings.
    #[command(subcommand)]
    Annotate(AnnotateCommand),
    /// Combine score reports into one table.
    Report(ReportArgs),
    /// Draft new transition prompts with the text generator.
    Synthesize(SynthesizeArgs),
    /// Mark drafted prompts as reviewed.
    Review(ReviewArgs),
}

#[derive(Args)]
struct LlmFlags {
    /// Chat completion base URL.
    #[arg(long)]
    llm_url: Option<String>,
    #[arg(long)]
    llm_model: Option<String>,
}

#[derive(Args)]
struct VlmFlags {
    #[arg(long)]
    vlm_url: Option<String>,
    #[arg(long)]
    vlm_model: Option<String>,
}

#[derive(Args)]
struct EmbedFlags {
    /// Directory of precomputed vectors (sets the precomputed backend).
    #[arg(long)]
    encoder_dir: Option<PathBuf>,
    /// Remote embedding endpoint (sets the http backend).
    #[arg(long, conflicts_with = "encoder_dir")]
    embed_url: Option<String>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    videos: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    fps: Option<f64>,
    /// Frames per video after equal-gap resampling.
    #[arg(long, conflicts_with = "native")]
    frames: Option<usize>,
    /// Keep every decoded frame instead of resampling.
    #[arg(long)]
    native: bool,
    /// Decoder binary.
    #[arg(long)]
    decoder: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    T2v,
    I2v,
}

impl From<KindArg> for ManifestKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::T2v => ManifestKind::T2V,
            KindArg::I2v => ManifestKind::I2V,
        }
    }
}

#[derive(Args)]
struct AssertArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "t2v")]
    kind: KindArg,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    assertions: PathBuf,
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Map 16-frame indices onto each video's own length (default).
    #[arg(long, conflicts_with = "resample_first")]
    remap: bool,
    /// Resample each video to 16 frames before verification.
    #[arg(long)]
    resample_first: bool,
    #[arg(long)]
    max_in_flight: Option<usize>,
    #[command(flatten)]
    vlm: VlmFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    T2v,
    I2v,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefArg {
    Consecutive,
    Groundtruth,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    verdicts: PathBuf,
    /// Corpus supplying each prompt's category.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "t2v")]
    kind: KindArg,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Per-video embeddings (`<video id>.json`, ground truth under `gt/`).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long = "ref", value_enum, default_value = "consecutive")]
    reference: RefArg,
    /// Model name recorded in the report.
    #[arg(long, default_value = "model")]
    model: String,
    /// Count each prompt once, by its best replicate.
    #[arg(long)]
    per_prompt_best: bool,
    #[arg(long)]
    w1: Option<f64>,
    #[arg(long)]
    w2: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Consecutive,
    Framewise,
    Epe,
    Ate,
}

#[derive(Args)]
struct ConsistencyArgs {
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Extracted frames (consecutive, framewise).
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Flow directories per video (epe).
    #[arg(long)]
    flows: Option<PathBuf>,
    /// Track CSV files per video (ate).
    #[arg(long)]
    tracks: Option<PathBuf>,
    /// Reference frames, flows or tracks, keyed by prompt id.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Also write per-video embeddings for `score --mode i2v`.
    #[arg(long)]
    save_embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    embed: EmbedFlags,
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Mean caption-similarity and consecutive-frame curves as CSV.
    Curves {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, value_enum, default_value = "t2v")]
        kind: KindArg,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        embed: EmbedFlags,
    },
    /// Mean flow magnitude over moving pixels, per video.
    Dynamics {
        #[arg(long)]
        flows: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank correlation of report metrics with human ratings.
    Correlate {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum AnnotateCommand {
    Serve {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Built UI bundle served at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        /// Directory served at `/media/` (defaults to the pool's directory).
        #[arg(long)]
        media: Option<PathBuf>,
        #[arg(long)]
        journal: Option<PathBuf>,
    },
    Export {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        journal: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long, num_args = 1.., required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthesizeArgs {
    #[arg(long)]
    category: Category,
    #[arg(long)]
    count: usize,
    /// Seed prompts; the built-in examples for the category when omitted.
    #[arg(long)]
    exemplar: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    llm: LlmFlags,
}

#[derive(Args)]
struct ReviewArgs {
    #[arg(long)]
    drafts: PathBuf,
    #[arg(long, num_args = 1.., required = true)]
    accept: Vec<String>,
}

/// Whether a stage finished with degraded verdicts.
enum Outcome {
    Done,
    Partial,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Partial) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn apply_llm(cfg: &mut Config, f: &LlmFlags) {
    if let Some(u) = &f.llm_url {
        cfg.providers.llm.base_url = u.clone();
    }
    if let Some(m) = &f.llm_model {
        cfg.providers.llm.model = m.clone();
    }
}

fn apply_vlm(cfg: &mut Config, f: &VlmFlags) {
    if let Some(u) = &f.vlm_url {
        cfg.providers.vlm.base_url = u.clone();
    }
    if let Some(m) = &f.vlm_model {
        cfg.providers.vlm.model = m.clone();
    }
}

fn apply_embed(cfg: &mut Config, f: &EmbedFlags) {
    if let Some(d) = &f.encoder_dir {
        cfg.providers.embedding.backend = EmbeddingBackend::Precomputed;
        cfg.providers.embedding.dir = Some(d.clone());
    }
    if let Some(u) = &f.embed_url {
        cfg.providers.embedding.backend = EmbeddingBackend::Http;
        cfg.providers.embedding.base_url = u.clone();
    }
}

fn llm_client(cfg: &Config) -> Result<Throttled<ChatClient>> {
    let p = &cfg.providers.llm;
    let client = ChatClient::from_env(&p.base_url, &p.model, LLM_KEY_ENV, p.timeout())?;
    Ok(Throttled::new(client, p.rate_per_minute))
}

fn embedding_provider(cfg: &Config) -> Result<Box<dyn EmbeddingProvider>> {
    let e = &cfg.providers.embedding;
    Ok(match e.backend {
        EmbeddingBackend::Precomputed => {
            let dir = e.dir.as_ref().ok_or_else(|| {
                Error::validation("precomputed embeddings need a directory: pass `--encoder-dir DIR` or set providers.embedding.dir")
            })?;
            Box::new(PrecomputedEmbeddings::open(dir)?)
        }
        EmbeddingBackend::Http => Box::new(HttpEmbeddingClient::new(
            &e.base_url,
            &e.model,
            std::env::var(EMBED_KEY_ENV).ok(),
            std::time::Duration::from_secs(e.timeout_secs),
        )?),
    })
}

fn vector_cache() -> Result<VectorCache> {
    VectorCache::open(&cache_root().join("embeddings.bin"))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<Outcome> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Extract(a) => {
            if let Some(f) = a.fps {
                cfg.constants.fps = f;
            }
            if let Some(n) = a.frames {
                cfg.constants.frames = n;
            }
            if let Some(d) = a.decoder {
                cfg.providers.decoder = d;
            }
            cfg.validate()?;
            let count = (!a.native).then_some(cfg.constants.frames);
            let index = extract_stage(&a.videos, &a.out, &cfg, count)?;
            log::info!("extracted {} videos into {}", index.videos.len(), a.out.display());
        }
        Command::Assert(a) => {
            apply_llm(&mut cfg, &a.llm);
            let corpus = load_corpus(&a.corpus, a.kind.into())?;
            let llm = llm_client(&cfg)?;
            let cache = JsonlCache::open(&cache_root().join("assertions.jsonl"))?;
            let generator = AssertionGenerator {
                llm: &llm,
                retry: cfg.constants.retry(),
                cache: &cache,
            };
            let sets = assert_stage(&corpus, &generator)?;
            write_jsonl(&a.out, &sets, &cfg)?;
        }
        Command::Verify(a) => {
            apply_vlm(&mut cfg, &a.vlm);
            if let Some(n) = a.max_in_flight {
                cfg.constants.max_in_flight = n;
            }
            let sets: Vec<AssertionSet> = read_jsonl(&a.assertions, "assert")?;
            let index = FramesIndex::read(&a.frames)?;
            let p = &cfg.providers.vlm;
            let judge = Throttled::new(
                ChatClient::from_env(&p.base_url, &p.model, VLM_KEY_ENV, p.timeout())?,
                p.rate_per_minute,
            );
            let cache = JsonlCache::open(&cache_root().join("verdicts.jsonl"))?;
            let mut verifier = Verifier::new(&judge, &cache);
            verifier.retry = cfg.constants.retry();
            verifier.max_in_flight = cfg.constants.max_in_flight;
            verifier.index_mode = if a.resample_first {
                IndexMode::ResampleFirst
            } else {
                IndexMode::Remap
            };
            let evals = verify_stage(&sets, &a.frames, &index, &verifier, cfg.constants.fps)?;
            write_jsonl(&a.out, &evals, &cfg)?;
            let degraded: usize = evals.iter().map(|e| e.degraded_count()).sum();
            if degraded > 0 {
                eprintln!("warning: {degraded} verdict(s) degraded to No after judge failures");
                return Ok(Outcome::Partial);
            }
        }
        Command::Score(a) => {
            if let Some(w) = a.w1 {
                cfg.constants.w1 = w;
            }
            if let Some(w) = a.w2 {
                cfg.constants.w2 = w;
            }
            cfg.validate()?;
            let evals: Vec<VideoEvaluation> = read_jsonl(&a.verdicts, "verify")?;
            let corpus = load_corpus(&a.corpus, a.kind.into())?;
            let opts = ScoreOptions {
                model: &a.model,
                mode: match a.mode {
                    ModeArg::T2v => ScoreMode::T2v,
                    ModeArg::I2v => ScoreMode::I2v,
                },
                aggregation: if a.per_prompt_best {
                    Aggregation::PerPromptBest
                } else {
                    Aggregation::PerVideo
                },
                embeddings: a.embeddings.as_deref(),
                reference: match a.reference {
                    RefArg::Consecutive => RefMode::Consecutive,
                    RefArg::Groundtruth => RefMode::Groundtruth,
                },
            };
            let report = score_stage(&evals, &corpus.categories(), &opts, &cfg)?;
            write_json(&a.out, &report)?;
            if report.report.degraded_verdicts > 0 {
                return Ok(Outcome::Partial);
            }
        }
        Command::Consistency(a) => {
            apply_embed(&mut cfg, &a.embed);
            let missing = |flag: &str| Error::validation(format!("this metric needs `{flag}`"));
            let (metric, rows) = match a.metric {
                MetricArg::Consecutive | MetricArg::Framewise => {
                    let frames = a.frames.as_deref().ok_or_else(|| missing("--frames DIR"))?;
                    let index = FramesIndex::read(frames)?;
                    let provider = embedding_provider(&cfg)?;
                    let cache = vector_cache()?;
                    if let Some(dir) = &a.save_embeddings {
                        embed_stage(frames, &index, provider.as_ref(), &cache, dir, cfg.constants.fps)?;
                    }
                    if matches!(a.metric, MetricArg::Consecutive) {
                        let rows = embedding_consistency_stage(frames, &index, None, provider.as_ref(), &cache, &cfg)?;
                        (ConsistencyMetric::Consecutive, rows)
                    } else {
                        let ref_dir = a.reference.as_deref().ok_or_else(|| missing("--ref GROUND_TRUTH_FRAMES"))?;
                        let ref_index = FramesIndex::read(ref_dir)?;
                        let rows = embedding_consistency_stage(
                            frames,
                            &index,
                            Some((ref_dir, &ref_index)),
                            provider.as_ref(),
                            &cache,
                            &cfg,
                        )?;
                        (ConsistencyMetric::Framewise, rows)
                    }
                }
                MetricArg::Epe => {
                    let flows = a.flows.as_deref().ok_or_else(|| missing("--flows DIR"))?;
                    let reference = a.reference.as_deref().ok_or_else(|| missing("--ref FLOWS_DIR"))?;
                    (ConsistencyMetric::Epe, epe_stage(flows, reference)?)
                }
                MetricArg::Ate => {
                    let tracks = a.tracks.as_deref().ok_or_else(|| missing("--tracks DIR"))?;
                    let reference = a.reference.as_deref().ok_or_else(|| missing("--ref TRACKS_DIR"))?;
                    (ConsistencyMetric::Ate, ate_stage(tracks, reference)?)
                }
            };
            write_json(&a.out, &ConsistencyFile::new(&cfg, metric, rows)?)?;
        }
        Command::Analyze(AnalyzeCommand::Curves {
            corpus,
            kind,
            frames,
            out,
            embed,
        }) => {
            apply_embed(&mut cfg, &embed);
            let corpus = load_corpus(&corpus, kind.into())?;
            let index = FramesIndex::read(&frames)?;
            let provider = embedding_provider(&cfg)?;
            let curves = curves_stage(&corpus, &frames, &index, provider.as_ref(), &vector_cache()?, cfg.constants.fps)?;
            write_text(Some(&out), &curves_to_csv(&curves)?)?;
        }
        Command::Analyze(AnalyzeCommand::Dynamics { flows, threshold, out }) => {
            if let Some(t) = threshold {
                cfg.constants.dynamics_threshold = t;
            }
            let rows = dynamics_stage(&flows, cfg.constants.dynamics_threshold)?;
            write_json(&out, &serde_json::json!({ "config": cfg.echo(), "videos": rows }))?;
        }
        Command::Analyze(AnalyzeCommand::Correlate { ratings, reports, out }) => {
            let ratings = read_ratings_csv(fs::File::open(&ratings).map_err(|_| Error::MissingArtifact {
                path: ratings.clone(),
                producer: "annotate export",
            })?)?;
            let reports = reports
                .iter()
                .map(|p| read_json::<ReportFile>(p, "score"))
                .collect::<Result<Vec<_>>>()?;
            write_json(&out, &correlate_stage(&ratings, &reports, &cfg)?)?;
        }
        Command::Annotate(AnnotateCommand::Serve {
            pool,
            port,
            host,
            ui,
            media,
            journal,
        }) => {
            let journal = journal.unwrap_or_else(|| annotation::journal_path_for(&pool));
            let media = media.or_else(|| pool.parent().map(Path::to_path_buf));
            let service = Arc::new(AnnotationService::open(Pool::read(&pool)?, &journal)?);
            let app = annotation::router(service, ui.as_deref(), media.as_deref());
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("annotation service listening on http://{}", listener.local_addr()?);
                annotation::serve(listener, app).await
            })?;
        }
        Command::Annotate(AnnotateCommand::Export { pool, journal, out }) => {
            let journal = journal.unwrap_or_else(|| annotation::journal_path_for(&pool));
            let service = AnnotationService::open(Pool::read(&pool)?, &journal)?;
            write_text(out.as_deref(), &service.export_csv()?)?;
        }
        Command::Report(a) => {
            let reports = a
                .inputs
                .iter()
                .map(|p| read_json::<ReportFile>(p, "score"))
                .collect::<Result<Vec<_>>>()?;
            let format = match a.format {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Json => ReportFormat::Json,
            };
            write_text(a.out.as_deref(), &report_stage(&reports, format)?)?;
        }
        Command::Synthesize(a) => {
            apply_llm(&mut cfg, &a.llm);
            let exemplars = if a.exemplar.is_empty() {
                default_exemplars(a.category)
            } else {
                a.exemplar.clone()
            };
            let llm = llm_client(&cfg)?;
            let outcome = synthesize_prompts(a.category, &llm, a.count, &exemplars, &cfg.constants.retry())?;
            for r in &outcome.rejected {
                eprintln!("dropped draft ({}): {}", r.reason, r.text);
            }
            if outcome.drafts.len() < a.count {
                eprintln!("warning: {} of {} drafts passed the lexical check", outcome.drafts.len(), a.count);
            }
            write_jsonl(&a.out, &outcome.drafts, &cfg)?;
        }
        Command::Review(a) => {
            let mut drafts: Vec<DraftPrompt> = read_jsonl(&a.drafts, "synthesize")?;
            let n = mark_reviewed(&mut drafts, &a.accept)?;
            write_jsonl(&a.drafts, &drafts, &cfg)?;
            eprintln!("marked {n} draft(s) reviewed");
        }
    }
    Ok(Outcome::Done)
}
