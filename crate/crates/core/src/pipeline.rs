//! Stage functions behind the `tcb` command line. Each stage reads the
//! artifacts of earlier stages, writes its own, and embeds the effective
//! configuration so outputs can be traced back to their settings.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    aggregate_ratings, attribute_curves, consecutive_curve, correlate_metric, dynamics_degree,
    inter_annotator_correlation, mean_curve, CorrelationReport, CorrelationResult, CurveSeries, DynamicsDegree,
    HumanRating, Question,
};
use crate::assertion::{AssertionGenerator, AssertionSet};
use crate::cache::VectorCache;
use crate::config::Config;
use crate::consistency::{
    align_flows, ate, consecutive_consistency, embed_frames, epe, framewise_consistency, tc_score_i2v,
    EmbeddingSequence, FlowField, Trajectory,
};
use crate::corpus::{Category, CorpusManifest};
use crate::error::{Error, Result};
use crate::providers::EmbeddingProvider;
use crate::verifier::{aggregate_report, reports_to_csv, Aggregation, ModelReport, VideoEvaluation, Verifier};
use crate::video_io::{cache_frames, decode_video, extract_frames, load_frame_dir, Decoder, FrameSequence};

pub const FRAMES_INDEX: &str = "index.json";
pub const CACHE_DIR_ENV: &str = "TCB_CACHE_DIR";

/// Cache root: `TCB_CACHE_DIR` when set, else `.tcb-cache`.
pub fn cache_root() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".tcb-cache"))
}

fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        })
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<T> {
    require(path, producer)?;
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn provenance_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

/// Writes one record per line plus a `<file>.config.json` sidecar holding
/// the effective configuration.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T], config: &Config) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    write_json(&provenance_path(path), &serde_json::json!({ "config": config.echo() }))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, producer: &'static str) -> Result<Vec<T>> {
    require(path, producer)?;
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path.display().to_string(), n + 1, e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub video_id: String,
    pub prompt_id: String,
    /// Frame directory relative to the index.
    pub dir: String,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesIndex {
    pub config: serde_json::Value,
    pub videos: Vec<FrameEntry>,
}

impl FramesIndex {
    pub fn read(frames_dir: &Path) -> Result<Self> {
        read_json(&frames_dir.join(FRAMES_INDEX), "extract")
    }

    pub fn load(&self, frames_dir: &Path, entry: &FrameEntry, fps: f64) -> Result<FrameSequence> {
        load_frame_dir(&frames_dir.join(&entry.dir), fps, &entry.video_id)
    }
}

/// Video files are named `<prompt id>__<replicate>.<ext>`; without the
/// separator the whole stem is the prompt id.
pub fn prompt_id_from_stem(stem: &str) -> &str {
    stem.split_once("__").map(|(p, _)| p).unwrap_or(stem)
}

fn list_inputs(dir: &Path) -> Result<Vec<PathBuf>> {
    require(dir, "extract (input directory)")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            !p.file_name()
                .map(|n| n.to_string_lossy().starts_with('.'))
                .unwrap_or(true)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Decodes every video (or frame directory) in `videos_dir` to `count`
/// frames, or to all decoded frames when `count` is `None`, and writes the
/// frame cache plus `index.json` under `out`.
pub fn extract_stage(videos_dir: &Path, out: &Path, config: &Config, count: Option<usize>) -> Result<FramesIndex> {
    let decoder = Decoder {
        program: config.providers.decoder.clone(),
    };
    let fps = config.constants.fps;
    fs::create_dir_all(out)?;
    let inputs = list_inputs(videos_dir)?;
    if inputs.is_empty() {
        return Err(Error::validation(format!("no videos found in {}", videos_dir.display())));
    }
    let mut videos = inputs
        .par_iter()
        .map(|path| {
            let seq = match count {
                Some(n) => extract_frames(path, fps, n, &decoder)?,
                None => decode_video(path, fps, &decoder)?,
            };
            let dir = cache_frames(&seq, out)?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            Ok(FrameEntry {
                prompt_id: prompt_id_from_stem(&stem).to_string(),
                video_id: stem,
                dir: dir
                    .strip_prefix(out)
                    .unwrap_or(&dir)
                    .to_string_lossy()
                    .into_owned(),
                frames: seq.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let index = FramesIndex {
        config: config.echo(),
        videos,
    };
    write_json(&out.join(FRAMES_INDEX), &index)?;
    Ok(index)
}

/// Generates an assertion set for every corpus prompt, in corpus order.
pub fn assert_stage(corpus: &CorpusManifest, generator: &AssertionGenerator) -> Result<Vec<AssertionSet>> {
    corpus.prompts.par_iter().map(|p| generator.generate(p)).collect()
}

/// Verifies every indexed video against its prompt's assertions.
pub fn verify_stage(
    sets: &[AssertionSet],
    frames_dir: &Path,
    index: &FramesIndex,
    verifier: &Verifier,
    fps: f64,
) -> Result<Vec<VideoEvaluation>> {
    let by_prompt: HashMap<&str, &AssertionSet> = sets.iter().map(|s| (s.prompt_id.as_str(), s)).collect();
    index
        .videos
        .iter()
        .map(|entry| {
            let set = by_prompt.get(entry.prompt_id.as_str()).ok_or_else(|| {
                Error::validation(format!(
                    "video `{}`: no assertions for prompt `{}` (run `tcb assert` over a corpus containing it)",
                    entry.video_id, entry.prompt_id
                ))
            })?;
            let seq = index.load(frames_dir, entry, fps)?;
            let verdicts = verifier.verify_video(set, &seq)?;
            VideoEvaluation::from_verdicts(&entry.prompt_id, &entry.video_id, verdicts, set)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    T2v,
    I2v,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefMode {
    /// Each frame against the next one.
    #[default]
    Consecutive,
    /// Each frame against the ground-truth frame at the same index.
    Groundtruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub prompt_id: String,
    pub video_id: String,
    pub tc: u8,
    pub tc_score: f64,
    pub pass_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
    pub degraded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config: serde_json::Value,
    pub mode: ScoreMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<RefMode>,
    pub report: ModelReport,
    pub videos: Vec<VideoSummary>,
}

pub fn embedding_path(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.json"))
}

pub fn ground_truth_embedding_path(dir: &Path, prompt_id: &str) -> PathBuf {
    dir.join("gt").join(format!("{prompt_id}.json"))
}

pub struct ScoreOptions<'a> {
    pub model: &'a str,
    pub mode: ScoreMode,
    pub aggregation: Aggregation,
    pub embeddings: Option<&'a Path>,
    pub reference: RefMode,
}

/// Aggregates verdicts into a report. In image-to-video mode each video's
/// score blends its pass rate with mapped frame consistency.
pub fn score_stage(
    evals: &[VideoEvaluation],
    categories: &HashMap<String, Category>,
    opts: &ScoreOptions,
    config: &Config,
) -> Result<ReportFile> {
    let mut evals = evals.to_vec();
    let mut pass_rates = Vec::with_capacity(evals.len());
    for e in &mut evals {
        pass_rates.push(e.tc_score);
        if opts.mode == ScoreMode::T2v {
            continue;
        }
        let dir = opts.embeddings.ok_or_else(|| {
            Error::validation(
                "`score --mode i2v` needs frame embeddings: pass `--embeddings DIR` \
                 (write them with `tcb consistency --metric consecutive --save-embeddings DIR`)",
            )
        })?;
        let seq = EmbeddingSequence::read(&require_path(&embedding_path(dir, &e.video_id))?)?.into_embeddings()?;
        let range = config.constants.range()?;
        let cs = match opts.reference {
            RefMode::Consecutive => consecutive_consistency(&seq, &range)?,
            RefMode::Groundtruth => {
                let gt = EmbeddingSequence::read(&require_path(&ground_truth_embedding_path(dir, &e.prompt_id))?)?
                    .into_embeddings()?;
                framewise_consistency(&seq, &gt, &range)?
            }
        };
        e.tc_score = tc_score_i2v(e.tc_score, &cs, &config.constants.weights()?)?;
        e.consistency = Some(cs.mean_mapped);
    }
    let report = aggregate_report(opts.model, &evals, categories, opts.aggregation)?;
    let videos = evals
        .iter()
        .zip(pass_rates)
        .map(|(e, pass_rate)| VideoSummary {
            prompt_id: e.prompt_id.clone(),
            video_id: e.video_id.clone(),
            tc: e.tc,
            tc_score: e.tc_score,
            pass_rate,
            consistency: e.consistency,
            degraded: e.degraded_count(),
        })
        .collect();
    Ok(ReportFile {
        config: config.echo(),
        mode: opts.mode,
        reference: (opts.mode == ScoreMode::I2v).then_some(opts.reference),
        report,
        videos,
    })
}

fn require_path(path: &Path) -> Result<PathBuf> {
    require(path, "consistency --save-embeddings")?;
    Ok(path.to_path_buf())
}

/// Embeds every indexed video and writes `<dir>/<video id>.json`.
pub fn embed_stage(
    frames_dir: &Path,
    index: &FramesIndex,
    provider: &dyn EmbeddingProvider,
    cache: &VectorCache,
    out: &Path,
    fps: f64,
) -> Result<()> {
    fs::create_dir_all(out)?;
    index.videos.par_iter().try_for_each(|entry| {
        let seq = index.load(frames_dir, entry, fps)?;
        let embeds = embed_frames(&seq, provider, cache)?;
        EmbeddingSequence::from_embeddings(&embeds).write(&embedding_path(out, &entry.video_id))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsistencyMetric {
    Consecutive,
    Framewise,
    Epe,
    Ate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub video_id: String,
    pub prompt_id: String,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub raw: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyFile {
    pub config: serde_json::Value,
    pub metric: ConsistencyMetric,
    pub videos: Vec<ConsistencyRow>,
    pub mean: f64,
}

impl ConsistencyFile {
    pub fn new(config: &Config, metric: ConsistencyMetric, videos: Vec<ConsistencyRow>) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::validation("no videos to measure"));
        }
        let mean = videos.iter().map(|r| r.value).sum::<f64>() / videos.len() as f64;
        Ok(Self {
            config: config.echo(),
            metric,
            videos,
            mean,
        })
    }
}

/// Mean mapped similarity per video, against the next frame or the
/// ground-truth video of the same prompt (indexed under `reference`).
pub fn embedding_consistency_stage(
    frames_dir: &Path,
    index: &FramesIndex,
    reference: Option<(&Path, &FramesIndex)>,
    provider: &dyn EmbeddingProvider,
    cache: &VectorCache,
    config: &Config,
) -> Result<Vec<ConsistencyRow>> {
    let range = config.constants.range()?;
    let fps = config.constants.fps;
    index
        .videos
        .par_iter()
        .map(|entry| {
            let embeds = embed_frames(&index.load(frames_dir, entry, fps)?, provider, cache)?;
            let score = match reference {
                None => consecutive_consistency(&embeds, &range)?,
                Some((ref_dir, ref_index)) => {
                    let gt = ref_index
                        .videos
                        .iter()
                        .find(|v| v.video_id == entry.prompt_id || v.prompt_id == entry.prompt_id)
                        .ok_or_else(|| {
                            Error::validation(format!("no ground-truth video for prompt `{}`", entry.prompt_id))
                        })?;
                    let gt_embeds = embed_frames(&ref_index.load(ref_dir, gt, fps)?, provider, cache)?;
                    framewise_consistency(&embeds, &gt_embeds, &range)?
                }
            };
            Ok(ConsistencyRow {
                video_id: entry.video_id.clone(),
                prompt_id: entry.prompt_id.clone(),
                value: score.mean_mapped,
                raw: score.raw_similarities,
            })
        })
        .collect()
}

/// Reads every `*.flow` file in `dir`, ordered by name.
pub fn read_flow_dir(dir: &Path) -> Result<Vec<FlowField>> {
    require(dir, "an external flow estimator")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "flow"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::validation(format!("no .flow files in {}", dir.display())));
    }
    paths.iter().map(|p| FlowField::read(p)).collect()
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    require(dir, "an external flow estimator")?;
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    names.sort();
    Ok(names)
}

/// EPE per video: `flows/<video id>/*.flow` against `reference/<prompt id>/*.flow`,
/// with reference flows resized to the generated resolution.
pub fn epe_stage(flows: &Path, reference: &Path) -> Result<Vec<ConsistencyRow>> {
    subdirs(flows)?
        .into_iter()
        .map(|video_id| {
            let prompt_id = prompt_id_from_stem(&video_id).to_string();
            let gen = read_flow_dir(&flows.join(&video_id))?;
            let refs = read_flow_dir(&reference.join(&prompt_id))?;
            let (w, h) = (gen[0].width, gen[0].height);
            let value = epe(&gen, &align_flows(&refs, w, h))?;
            Ok(ConsistencyRow {
                video_id,
                prompt_id,
                value,
                raw: Vec::new(),
            })
        })
        .collect()
}

/// ATE per video: `tracks/<video id>.csv` against `reference/<prompt id>.csv`.
pub fn ate_stage(tracks: &Path, reference: &Path) -> Result<Vec<ConsistencyRow>> {
    require(tracks, "an external point tracker")?;
    let mut files: Vec<PathBuf> = fs::read_dir(tracks)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let video_id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let prompt_id = prompt_id_from_stem(&video_id).to_string();
            let ref_path = reference.join(format!("{prompt_id}.csv"));
            require(&ref_path, "an external point tracker")?;
            let value = ate(&Trajectory::read_csv(&path)?, &Trajectory::read_csv(&ref_path)?)?;
            Ok(ConsistencyRow {
                video_id,
                prompt_id,
                value,
                raw: Vec::new(),
            })
        })
        .collect()
}

/// Mean start-state and end-state caption curves over attribute videos,
/// and the mean consecutive-frame curve over all videos.
pub fn curves_stage(
    corpus: &CorpusManifest,
    frames_dir: &Path,
    index: &FramesIndex,
    provider: &dyn EmbeddingProvider,
    cache: &VectorCache,
    fps: f64,
) -> Result<Vec<CurveSeries>> {
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut consecutive = Vec::new();
    for entry in &index.videos {
        let prompt = corpus
            .get(&entry.prompt_id)
            .ok_or_else(|| Error::validation(format!("video `{}`: prompt `{}` is not in the corpus", entry.video_id, entry.prompt_id)))?;
        let embeds = embed_frames(&index.load(frames_dir, entry, fps)?, provider, cache)?;
        if prompt.category == Category::Attribute {
            let (s, e) = attribute_curves(prompt, &embeds, provider)?;
            starts.push(s);
            ends.push(e);
        }
        consecutive.push(consecutive_curve(&embeds)?);
    }
    let mut out = Vec::new();
    if !starts.is_empty() {
        out.push(mean_curve("start_state", &starts)?);
        out.push(mean_curve("end_state", &ends)?);
    }
    out.push(mean_curve("consecutive", &consecutive)?);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsRow {
    pub video_id: String,
    #[serde(flatten)]
    pub degree: DynamicsDegree,
}

/// Dynamics degree of every `flows/<video id>/` directory.
pub fn dynamics_stage(flows: &Path, threshold: f64) -> Result<Vec<DynamicsRow>> {
    subdirs(flows)?
        .into_iter()
        .map(|video_id| {
            let degree = dynamics_degree(&read_flow_dir(&flows.join(&video_id))?, threshold)?;
            Ok(DynamicsRow { video_id, degree })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanAgreement {
    pub q1: CorrelationResult,
    pub q2: CorrelationResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFile {
    pub config: serde_json::Value,
    pub metrics: Vec<CorrelationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human: Option<HumanAgreement>,
    pub videos: usize,
    pub discarded: Vec<String>,
    pub completion_rate: f64,
}

/// Correlates report metrics (`tc_score`, and `tc` / `consistency` when
/// present) with the retained mean ratings. Inter-annotator agreement is
/// added when at least two annotators share videos.
pub fn correlate_stage(ratings: &[HumanRating], reports: &[ReportFile], config: &Config) -> Result<CorrelationFile> {
    let summary = aggregate_ratings(ratings, &config.constants.divisive_rule(), &config.constants.thresholds())?;
    let mut columns: BTreeMap<&str, BTreeMap<String, f64>> = BTreeMap::new();
    for r in reports {
        for v in &r.videos {
            columns.entry("tc_score").or_default().insert(v.video_id.clone(), v.tc_score);
            columns.entry("tc").or_default().insert(v.video_id.clone(), v.tc as f64);
            if let Some(c) = v.consistency {
                columns.entry("consistency").or_default().insert(v.video_id.clone(), c);
            }
        }
    }
    let metrics = columns
        .iter()
        .map(|(name, scores)| correlate_metric(name, scores, &summary))
        .collect::<Result<Vec<_>>>()?;
    let human = match (
        inter_annotator_correlation(ratings, Question::Q1),
        inter_annotator_correlation(ratings, Question::Q2),
    ) {
        (Ok(q1), Ok(q2)) => Some(HumanAgreement { q1, q2 }),
        _ => None,
    };
    Ok(CorrelationFile {
        config: config.echo(),
        metrics,
        human,
        videos: summary.videos.len(),
        discarded: summary.discarded.clone(),
        completion_rate: summary.completion_rate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Renders several score reports as one table.
pub fn report_stage(reports: &[ReportFile], format: ReportFormat) -> Result<String> {
    let models: Vec<ModelReport> = reports.iter().map(|r| r.report.clone()).collect();
    match format {
        ReportFormat::Csv => reports_to_csv(&models),
        ReportFormat::Json => Ok(serde_json::to_string_pretty(&models)? + "\n"),
    }
}
