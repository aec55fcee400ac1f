//! Attribute-existence and consistency curves, motion statistics, human
//! rating aggregation and rank correlation against those ratings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::consistency::{cosine_similarity, EmbeddingVector, FlowField};
use crate::corpus::{Category, TransitionPrompt};
use crate::error::{Error, Result};
use crate::providers::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSeries {
    pub label: String,
    pub values: Vec<f64>,
}

impl CurveSeries {
    /// Sign of `last - first`: 1 rising, -1 falling, 0 flat.
    pub fn trend(&self) -> i8 {
        match (self.values.first(), self.values.last()) {
            (Some(a), Some(b)) if b > a => 1,
            (Some(a), Some(b)) if b < a => -1,
            _ => 0,
        }
    }
}

/// Captions `a {start} {object}` and `a {end} {object}`.
pub fn attribute_captions(prompt: &TransitionPrompt) -> (String, String) {
    (
        format!("a {} {}", prompt.start_value, prompt.transition_object),
        format!("a {} {}", prompt.end_value, prompt.transition_object),
    )
}

/// Per-frame similarity to the start-state and end-state captions.
pub fn attribute_curves(
    prompt: &TransitionPrompt,
    embeds: &[EmbeddingVector],
    provider: &dyn EmbeddingProvider,
) -> Result<(CurveSeries, CurveSeries)> {
    if prompt.category != Category::Attribute {
        return Err(Error::validation(format!(
            "prompt `{}` is {}, attribute curves need an attribute transition",
            prompt.id, prompt.category
        )));
    }
    let (start_caption, end_caption) = attribute_captions(prompt);
    let fp = provider.fingerprint();
    let start = EmbeddingVector::normalized(provider.embed_text(&start_caption)?, fp)?;
    let end = EmbeddingVector::normalized(provider.embed_text(&end_caption)?, fp)?;
    let curve = |caption: &EmbeddingVector, label: String| -> Result<CurveSeries> {
        Ok(CurveSeries {
            label,
            values: embeds
                .iter()
                .map(|e| cosine_similarity(e, caption))
                .collect::<Result<_>>()?,
        })
    };
    Ok((curve(&start, start_caption)?, curve(&end, end_caption)?))
}

pub fn consecutive_curve(embeds: &[EmbeddingVector]) -> Result<CurveSeries> {
    Ok(CurveSeries {
        label: "consecutive".into(),
        values: embeds
            .windows(2)
            .map(|w| cosine_similarity(&w[0], &w[1]))
            .collect::<Result<_>>()?,
    })
}

/// Index-wise mean of equally long curves.
pub fn mean_curve(label: &str, curves: &[CurveSeries]) -> Result<CurveSeries> {
    let len = curves
        .first()
        .map(|c| c.values.len())
        .ok_or_else(|| Error::validation("no curves to average"))?;
    if curves.iter().any(|c| c.values.len() != len) {
        return Err(Error::shape("curves differ in length"));
    }
    let values = (0..len)
        .map(|i| curves.iter().map(|c| c.values[i]).sum::<f64>() / curves.len() as f64)
        .collect();
    Ok(CurveSeries {
        label: label.to_string(),
        values,
    })
}

/// CSV with an `index` column (1-based) and one column per series.
pub fn curves_to_csv(curves: &[CurveSeries]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["index".to_string()];
    header.extend(curves.iter().map(|c| c.label.clone()));
    w.write_record(&header)?;
    let len = curves.iter().map(|c| c.values.len()).max().unwrap_or(0);
    for i in 0..len {
        let mut row = vec![(i + 1).to_string()];
        row.extend(
            curves
                .iter()
                .map(|c| c.values.get(i).map(|v| format!("{v:.6}")).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| Error::validation(e.to_string()))?).expect("utf-8"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDegree {
    pub value: f64,
    /// 1-based indices of flow fields whose pixels were all static.
    pub all_static_frames: Vec<usize>,
}

/// Mean over frames of the mean flow magnitude over moving pixels
/// (magnitude above `static_threshold`). An all-static frame counts as 0.
pub fn dynamics_degree(flows: &[FlowField], static_threshold: f64) -> Result<DynamicsDegree> {
    if flows.is_empty() {
        return Err(Error::validation("dynamics degree of an empty flow list"));
    }
    let mut total = 0.0;
    let mut all_static_frames = Vec::new();
    for (k, f) in flows.iter().enumerate() {
        let (sum, count) = (0..f.u.len())
            .map(|i| f.magnitude(i))
            .filter(|&m| m > static_threshold)
            .fold((0.0, 0usize), |(s, c), m| (s + m, c + 1));
        if count == 0 {
            all_static_frames.push(k + 1);
        } else {
            total += sum / count as f64;
        }
    }
    Ok(DynamicsDegree {
        value: total / flows.len() as f64,
        all_static_frames,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanRating {
    pub video_id: String,
    pub annotator_id: String,
    /// Transition completion, 1..=5.
    pub q1: u8,
    /// Overall text-video alignment, 1..=5.
    pub q2: u8,
}

impl HumanRating {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q1", self.q1), ("q2", self.q2)] {
            if !(1..=5).contains(&v) {
                return Err(Error::validation(format!("{name} must be within 1..=5, got {v}")));
            }
        }
        Ok(())
    }
}

pub const RATINGS_HEADER: [&str; 4] = ["video_id", "annotator_id", "q1", "q2"];

pub fn read_ratings_csv(reader: impl Read) -> Result<Vec<HumanRating>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != RATINGS_HEADER {
        return Err(Error::validation(format!(
            "ratings CSV header must be {}, found {}",
            RATINGS_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: HumanRating = row?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Writes the ratings CSV sorted by video id, then annotator id.
pub fn write_ratings_csv(ratings: &[HumanRating], writer: impl Write) -> Result<()> {
    let mut sorted: Vec<&HumanRating> = ratings.iter().collect();
    sorted.sort_by(|a, b| (&a.video_id, &a.annotator_id).cmp(&(&b.video_id, &b.annotator_id)));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RATINGS_HEADER)?;
    for r in sorted {
        w.write_record([r.video_id.as_str(), r.annotator_id.as_str(), &r.q1.to_string(), &r.q2.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// A video is divisive when, on either question, its highest and lowest
/// ratings are at least `max_spread` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivisiveRule {
    pub max_spread: u8,
}

impl Default for DivisiveRule {
    fn default() -> Self {
        Self { max_spread: 3 }
    }
}

impl DivisiveRule {
    pub fn is_divisive(&self, ratings: &[&HumanRating]) -> bool {
        let spread = |f: fn(&HumanRating) -> u8| {
            let max = ratings.iter().map(|r| f(r)).max().unwrap_or(0);
            let min = ratings.iter().map(|r| f(r)).min().unwrap_or(0);
            max - min
        };
        spread(|r| r.q1) >= self.max_spread || spread(|r| r.q2) >= self.max_spread
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingThresholds {
    /// Mean Q1 strictly above this counts as a completed transition.
    pub completion: f64,
    /// Mean Q1 at or above this admits the video to consistency analysis.
    pub consistency: f64,
}

impl Default for RatingThresholds {
    fn default() -> Self {
        Self {
            completion: 3.66,
            consistency: 3.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRating {
    pub video_id: String,
    pub annotators: usize,
    pub mean_q1: f64,
    pub mean_q2: f64,
    pub completion: bool,
    pub consistency_eligible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSummary {
    pub videos: Vec<VideoRating>,
    pub discarded: Vec<String>,
}

impl RatingSummary {
    pub fn get(&self, video_id: &str) -> Option<&VideoRating> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    /// Percentage of retained videos flagged as completed.
    pub fn completion_rate(&self) -> f64 {
        if self.videos.is_empty() {
            return 0.0;
        }
        self.videos.iter().filter(|v| v.completion).count() as f64 / self.videos.len() as f64 * 100.0
    }
}

pub fn aggregate_ratings(
    ratings: &[HumanRating],
    rule: &DivisiveRule,
    thresholds: &RatingThresholds,
) -> Result<RatingSummary> {
    let mut by_video: BTreeMap<&str, Vec<&HumanRating>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for r in ratings {
        r.validate()?;
        if !seen.insert((r.video_id.as_str(), r.annotator_id.as_str())) {
            return Err(Error::validation(format!(
                "duplicate rating for video `{}` by annotator `{}`",
                r.video_id, r.annotator_id
            )));
        }
        by_video.entry(&r.video_id).or_default().push(r);
    }
    let mut videos = Vec::new();
    let mut discarded = Vec::new();
    for (video_id, rs) in by_video {
        if rule.is_divisive(&rs) {
            discarded.push(video_id.to_string());
            continue;
        }
        let n = rs.len() as f64;
        let mean_q1 = rs.iter().map(|r| r.q1 as f64).sum::<f64>() / n;
        let mean_q2 = rs.iter().map(|r| r.q2 as f64).sum::<f64>() / n;
        videos.push(VideoRating {
            video_id: video_id.to_string(),
            annotators: rs.len(),
            mean_q1,
            mean_q2,
            completion: mean_q1 > thresholds.completion,
            consistency_eligible: mean_q1 >= thresholds.consistency,
        });
    }
    Ok(RatingSummary { videos, discarded })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub spearman_rho: f64,
    pub kendall_tau: f64,
    pub n: usize,
}

/// 1-based ranks with ties given the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Kendall's tau-b: `(C - D) / sqrt((n0 - n1)(n0 - n2))`.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i].total_cmp(&x[j]) as i8;
            let dy = y[i].total_cmp(&y[j]) as i8;
            if dx == 0 {
                ties_x += 1;
            }
            if dy == 0 {
                ties_y += 1;
            }
            match dx * dy {
                1 => concordant += 1,
                -1 => discordant += 1,
                _ => {}
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    Some(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

/// Spearman's rho on average ranks and Kendall's tau-b.
pub fn rank_correlation(metric: &[f64], human: &[f64]) -> Result<CorrelationResult> {
    if metric.len() != human.len() {
        return Err(Error::shape(format!(
            "{} metric scores vs {} human scores",
            metric.len(),
            human.len()
        )));
    }
    if metric.len() < 2 {
        return Err(Error::validation("rank correlation needs at least 2 pairs"));
    }
    if metric.iter().chain(human).any(|v| !v.is_finite()) {
        return Err(Error::validation("rank correlation over non-finite values"));
    }
    let undefined = || Error::validation("rank correlation undefined: one list has zero variance");
    let rho = pearson(&average_ranks(metric), &average_ranks(human)).ok_or_else(undefined)?;
    let tau = kendall_tau_b(metric, human).ok_or_else(undefined)?;
    Ok(CorrelationResult {
        spearman_rho: rho,
        kendall_tau: tau,
        n: metric.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Question {
    Q1,
    Q2,
}

impl Question {
    pub fn score(&self, r: &HumanRating) -> f64 {
        match self {
            Question::Q1 => r.q1 as f64,
            Question::Q2 => r.q2 as f64,
        }
    }
}

/// Mean correlation over annotator pairs, each pair restricted to the
/// videos both rated. Pairs with fewer than two shared videos or with a
/// constant rating list are skipped; `n` counts the shared videos used.
pub fn inter_annotator_correlation(ratings: &[HumanRating], question: Question) -> Result<CorrelationResult> {
    let mut by_annotator: BTreeMap<&str, HashMap<&str, f64>> = BTreeMap::new();
    for r in ratings {
        by_annotator
            .entry(&r.annotator_id)
            .or_default()
            .insert(&r.video_id, question.score(r));
    }
    let annotators: Vec<(&str, &HashMap<&str, f64>)> = by_annotator.iter().map(|(k, v)| (*k, v)).collect();
    let mut pairs = Vec::new();
    let mut n = 0;
    for i in 0..annotators.len() {
        for j in i + 1..annotators.len() {
            let (a, b) = (annotators[i].1, annotators[j].1);
            let mut shared: Vec<&str> = a.keys().filter(|v| b.contains_key(*v)).copied().collect();
            if shared.len() < 2 {
                continue;
            }
            shared.sort_unstable();
            let xs: Vec<f64> = shared.iter().map(|v| a[v]).collect();
            let ys: Vec<f64> = shared.iter().map(|v| b[v]).collect();
            if let Ok(c) = rank_correlation(&xs, &ys) {
                n += c.n;
                pairs.push(c);
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::validation("no annotator pair shares two or more videos with varying ratings"));
    }
    Ok(mean_correlation(&pairs, n))
}

pub fn mean_correlation(results: &[CorrelationResult], n: usize) -> CorrelationResult {
    let k = results.len() as f64;
    CorrelationResult {
        spearman_rho: results.iter().map(|c| c.spearman_rho).sum::<f64>() / k,
        kendall_tau: results.iter().map(|c| c.kendall_tau).sum::<f64>() / k,
        n,
    }
}

/// Correlations of one metric against both rating questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: String,
    pub q1: CorrelationResult,
    pub q2: CorrelationResult,
}

/// Pairs per-video metric values with retained mean ratings by video id.
pub fn correlate_metric(metric_name: &str, scores: &BTreeMap<String, f64>, summary: &RatingSummary) -> Result<CorrelationReport> {
    let mut m = Vec::new();
    let mut q1 = Vec::new();
    let mut q2 = Vec::new();
    for v in &summary.videos {
        if let Some(&s) = scores.get(&v.video_id) {
            m.push(s);
            q1.push(v.mean_q1);
            q2.push(v.mean_q2);
        }
    }
    Ok(CorrelationReport {
        metric: metric_name.to_string(),
        q1: rank_correlation(&m, &q1)?,
        q2: rank_correlation(&m, &q2)?,
    })
}
