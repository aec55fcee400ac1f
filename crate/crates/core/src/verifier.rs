//! Judge-based verification of assertions and the completion metrics built
//! on the verdicts: per-video TC, model-level TCR and TC-Score.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assertion::{Assertion, AssertionSet};
use crate::cache::{cache_key, sha256_hex, JsonlCache};
use crate::corpus::Category;
use crate::error::{Error, Result};
use crate::providers::{RateLimiter, RetryPolicy, VisionJudge};
use crate::video_io::{compose_horizontal, remap_index, resample_equal_gaps, FrameSequence, CANONICAL_FRAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub assertion_id: String,
    pub answer: Answer,
    pub raw_response: String,
    #[serde(default)]
    pub degraded: bool,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.answer == Answer::Yes
    }
}

/// Reads the answer from the first word of the reply, ignoring case and
/// surrounding punctuation.
pub fn parse_answer(raw: &str) -> Option<Answer> {
    let first = raw
        .split_whitespace()
        .next()?
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_ascii_lowercase();
    match first.as_str() {
        "yes" => Some(Answer::Yes),
        "no" => Some(Answer::No),
        _ => None,
    }
}

pub const ANSWER_SUFFIX: &str = "Answer with Yes or No only.";
pub const REPROMPT_SUFFIX: &str = "Reply with exactly one word: Yes or No.";

pub fn judge_prompt(frames: usize, question: &str) -> String {
    let preamble = if frames == 1 {
        "The image shows 1 video frame.".to_string()
    } else {
        format!("The image shows {frames} video frames in temporal order, left to right.")
    };
    format!("{preamble} {} {ANSWER_SUFFIX}", question.trim())
}

/// How assertions authored for 16 frames are applied to other lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexMode {
    /// Map each index linearly onto the video's own frame count.
    #[default]
    Remap,
    /// Resample the video to 16 frames first and use indices as written.
    ResampleFirst,
}

pub struct Verifier<'a> {
    pub judge: &'a dyn VisionJudge,
    pub retry: RetryPolicy,
    pub cache: &'a JsonlCache<String>,
    pub index_mode: IndexMode,
    pub limiter: Option<&'a RateLimiter>,
    pub max_in_flight: usize,
}

impl<'a> Verifier<'a> {
    pub fn new(judge: &'a dyn VisionJudge, cache: &'a JsonlCache<String>) -> Self {
        Self {
            judge,
            retry: RetryPolicy::default(),
            cache,
            index_mode: IndexMode::Remap,
            limiter: None,
            max_in_flight: 4,
        }
    }

    fn ask_cached(&self, key: &str, png: &[u8], prompt: &str) -> Result<String> {
        if let Some(hit) = self.cache.get(key) {
            return Ok(hit);
        }
        if let Some(l) = self.limiter {
            l.acquire();
        }
        self.retry.run(self.judge.model_name(), || self.judge.ask(png, prompt))
    }

    /// Verifies one assertion against a sequence whose indices already match
    /// the assertion's index space after remapping. Provider failures and
    /// unparsable replies produce a degraded `No`.
    pub fn verify_assertion(&self, assertion: &Assertion, seq: &FrameSequence) -> Result<Verdict> {
        let k = seq.len();
        let indices: Vec<usize> = assertion
            .frame_indices
            .iter()
            .map(|&i| remap_index(i, k))
            .collect();
        let composite = compose_horizontal(seq, &indices)?;
        let png = composite.to_png()?;
        let prompt = judge_prompt(composite.member_indices.len(), &assertion.question);
        let image_hash = sha256_hex(composite.image.as_raw());
        let model = self.judge.model_name();
        let key = cache_key(&[&image_hash, &sha256_hex(prompt.as_bytes()), model]);

        let degraded = |raw: String| Verdict {
            assertion_id: assertion.id.clone(),
            answer: Answer::No,
            raw_response: raw,
            degraded: true,
        };

        let raw = match self.ask_cached(&key, &png, &prompt) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("assertion {}: judge failed, scoring No: {e}", assertion.id);
                return Ok(degraded(e.to_string()));
            }
        };
        if let Some(answer) = parse_answer(&raw) {
            self.cache.insert(&key, raw.clone())?;
            return Ok(Verdict {
                assertion_id: assertion.id.clone(),
                answer,
                raw_response: raw,
                degraded: false,
            });
        }

        let reprompt = format!("{prompt} {REPROMPT_SUFFIX}");
        let rkey = cache_key(&[&image_hash, &sha256_hex(reprompt.as_bytes()), model]);
        match self.ask_cached(&rkey, &png, &reprompt) {
            Ok(raw2) => match parse_answer(&raw2) {
                Some(answer) => {
                    self.cache.insert(&rkey, raw2.clone())?;
                    Ok(Verdict {
                        assertion_id: assertion.id.clone(),
                        answer,
                        raw_response: raw2,
                        degraded: false,
                    })
                }
                None => Ok(degraded(raw2)),
            },
            Err(e) => Ok(degraded(format!("{raw}\n{e}"))),
        }
    }

    /// Verifies every assertion of a set against one video, in set order.
    pub fn verify_video(&self, set: &AssertionSet, seq: &FrameSequence) -> Result<Vec<Verdict>> {
        let seq = match self.index_mode {
            IndexMode::ResampleFirst if seq.len() != CANONICAL_FRAMES => {
                resample_equal_gaps(seq, CANONICAL_FRAMES)?
            }
            _ => seq.clone(),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.max_in_flight.max(1))
            .build()
            .map_err(|e| Error::validation(e.to_string()))?;
        pool.install(|| {
            set.assertions
                .par_iter()
                .map(|a| self.verify_assertion(a, &seq))
                .collect()
        })
    }
}

fn verdict_map(verdicts: &[Verdict]) -> HashMap<&str, &Verdict> {
    verdicts.iter().map(|v| (v.assertion_id.as_str(), v)).collect()
}

/// 1 when every completion and consistency verdict is Yes, else 0.
pub fn compute_tc(verdicts: &[Verdict], set: &AssertionSet) -> Result<u8> {
    let by_id = verdict_map(verdicts);
    let mut all = true;
    for a in set.assertions.iter().filter(|a| a.dimension.decides_completion()) {
        let v = by_id
            .get(a.id.as_str())
            .ok_or_else(|| Error::validation(format!("missing verdict for assertion {}", a.id)))?;
        all &= v.passed();
    }
    Ok(all as u8)
}

/// Percentage of completed transitions.
pub fn compute_tcr(tcs: &[u8]) -> Result<f64> {
    if tcs.is_empty() {
        return Err(Error::validation("TCR of an empty video list"));
    }
    let done = tcs.iter().filter(|&&t| t == 1).count();
    Ok(done as f64 / tcs.len() as f64 * 100.0)
}

/// Pass rate over all assertions in all three dimensions.
pub fn compute_tc_score_t2v(verdicts: &[Verdict], set: &AssertionSet) -> Result<f64> {
    if set.assertions.is_empty() {
        return Err(Error::validation("TC-Score with no assertions"));
    }
    let by_id = verdict_map(verdicts);
    let mut yes = 0usize;
    for a in &set.assertions {
        let v = by_id
            .get(a.id.as_str())
            .ok_or_else(|| Error::validation(format!("missing verdict for assertion {}", a.id)))?;
        yes += v.passed() as usize;
    }
    Ok(yes as f64 / set.assertions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEvaluation {
    pub prompt_id: String,
    pub video_id: String,
    pub verdicts: Vec<Verdict>,
    pub tc: u8,
    pub tc_score: f64,
    /// Mapped frame consistency, present for image-to-video scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<f64>,
}

impl VideoEvaluation {
    pub fn from_verdicts(prompt_id: &str, video_id: &str, verdicts: Vec<Verdict>, set: &AssertionSet) -> Result<Self> {
        let tc = compute_tc(&verdicts, set)?;
        let tc_score = compute_tc_score_t2v(&verdicts, set)?;
        Ok(Self {
            prompt_id: prompt_id.to_string(),
            video_id: video_id.to_string(),
            verdicts,
            tc,
            tc_score,
            consistency: None,
        })
    }

    pub fn degraded_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.degraded).count()
    }
}

/// How replicate videos of one prompt enter the ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    /// Every video counts once.
    #[default]
    PerVideo,
    /// Each prompt counts once, represented by its best replicate.
    PerPromptBest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub tcr: f64,
    pub mean_tc_score: f64,
    pub videos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub aggregation: Aggregation,
    pub categories: BTreeMap<Category, GroupStats>,
    pub overall: GroupStats,
    pub degraded_verdicts: usize,
    pub total_verdicts: usize,
}

fn group_stats(evals: &[&VideoEvaluation]) -> Result<GroupStats> {
    let tcs: Vec<u8> = evals.iter().map(|e| e.tc).collect();
    Ok(GroupStats {
        tcr: compute_tcr(&tcs)?,
        mean_tc_score: evals.iter().map(|e| e.tc_score).sum::<f64>() / evals.len() as f64,
        videos: evals.len(),
    })
}

fn best_per_prompt(evals: &[VideoEvaluation]) -> Vec<&VideoEvaluation> {
    let mut best: BTreeMap<&str, &VideoEvaluation> = BTreeMap::new();
    for e in evals {
        best.entry(e.prompt_id.as_str())
            .and_modify(|cur| {
                let better = (e.tc, e.tc_score) > (cur.tc, cur.tc_score)
                    || ((e.tc, e.tc_score) == (cur.tc, cur.tc_score) && e.video_id < cur.video_id);
                if better {
                    *cur = e;
                }
            })
            .or_insert(e);
    }
    best.into_values().collect()
}

/// Per-category and overall TCR / mean TC-Score. Overall values are taken
/// over all units directly, not as a mean of the category values.
pub fn aggregate_report(
    model: &str,
    evals: &[VideoEvaluation],
    categories: &HashMap<String, Category>,
    aggregation: Aggregation,
) -> Result<ModelReport> {
    if evals.is_empty() {
        return Err(Error::validation("no evaluations to aggregate"));
    }
    let units: Vec<&VideoEvaluation> = match aggregation {
        Aggregation::PerVideo => evals.iter().collect(),
        Aggregation::PerPromptBest => best_per_prompt(evals),
    };
    let mut by_cat: BTreeMap<Category, Vec<&VideoEvaluation>> = BTreeMap::new();
    for e in &units {
        let cat = categories
            .get(&e.prompt_id)
            .ok_or_else(|| Error::validation(format!("unknown prompt id `{}`", e.prompt_id)))?;
        by_cat.entry(*cat).or_default().push(e);
    }
    let categories = by_cat
        .iter()
        .map(|(c, v)| Ok((*c, group_stats(v)?)))
        .collect::<Result<_>>()?;
    Ok(ModelReport {
        model: model.to_string(),
        aggregation,
        categories,
        overall: group_stats(&units)?,
        degraded_verdicts: evals.iter().map(|e| e.degraded_count()).sum(),
        total_verdicts: evals.iter().map(|e| e.verdicts.len()).sum(),
    })
}

pub const REPORT_CSV_HEADER: [&str; 9] = [
    "model",
    "attribute_tcr",
    "attribute_tc_score",
    "object_tcr",
    "object_tc_score",
    "background_tcr",
    "background_tc_score",
    "overall_tcr",
    "overall_tc_score",
];

/// One CSV table row per model, in the column order of the results table.
pub fn reports_to_csv(reports: &[ModelReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPORT_CSV_HEADER)?;
    for r in reports {
        let mut row = vec![r.model.clone()];
        for cat in Category::ALL {
            match r.categories.get(&cat) {
                Some(s) => {
                    row.push(format!("{:.2}", s.tcr));
                    row.push(format!("{:.4}", s.mean_tc_score));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        row.push(format!("{:.2}", r.overall.tcr));
        row.push(format!("{:.4}", r.overall.mean_tc_score));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assertion::{parse_assertion_text, templates, Dimension};
    use crate::providers::mock::FnJudge;
    use crate::video_io::solid;

    fn set_from(text: &str) -> AssertionSet {
        AssertionSet {
            prompt_id: "p".into(),
            assertions: parse_assertion_text(text).unwrap(),
            generator_fingerprint: "t".into(),
            raw_text: None,
        }
    }

    fn verdicts(set: &AssertionSet, yes: &[bool]) -> Vec<Verdict> {
        set.assertions
            .iter()
            .zip(yes)
            .map(|(a, &y)| Verdict {
                assertion_id: a.id.clone(),
                answer: if y { Answer::Yes } else { Answer::No },
                raw_response: String::new(),
                degraded: false,
            })
            .collect()
    }

    fn sixteen() -> FrameSequence {
        FrameSequence::new((0..16).map(|i| solid(8, 6, [i * 10, 0, 0])).collect(), 8.0, "v").unwrap()
    }

    #[test]
    fn answer_parse_rule() {
        assert_eq!(parse_answer("Yes."), Some(Answer::Yes));
        assert_eq!(parse_answer("no, the chameleon is still brown"), Some(Answer::No));
        assert_eq!(parse_answer("  YES"), Some(Answer::Yes));
        assert_eq!(parse_answer("**No**"), Some(Answer::No));
        assert_eq!(parse_answer("I think yes"), None);
        assert_eq!(parse_answer(""), None);
    }

    #[test]
    fn judge_prompt_framing() {
        assert_eq!(
            judge_prompt(2, "Do Frame 1 and Frame 6 show the same chameleon?"),
            "The image shows 2 video frames in temporal order, left to right. Do Frame 1 and Frame 6 show the same chameleon? Answer with Yes or No only."
        );
    }

    #[test]
    fn tc_ignores_other_objects() {
        let set = set_from(templates::EXEMPLAR_RELATION);
        // 4 completion + 2 consistency yes, one other No
        let v = verdicts(&set, &[true, true, true, true, true, true, false, true]);
        assert_eq!(compute_tc(&v, &set).unwrap(), 1);
        let v = verdicts(&set, &[true, false, true, true, true, true, true, true]);
        assert_eq!(compute_tc(&v, &set).unwrap(), 0);
    }

    #[test]
    fn tc_vacuous_consistency_for_background() {
        let set = set_from(templates::EXEMPLAR_BACKGROUND);
        let v = verdicts(&set, &[true, true, true, true, false, false]);
        assert_eq!(compute_tc(&v, &set).unwrap(), 1);
    }

    #[test]
    fn missing_in_scope_verdict_is_an_error() {
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let mut v = verdicts(&set, &[true; 6]);
        v.remove(4);
        assert!(compute_tc(&v, &set).is_err());
    }

    #[test]
    fn tcr_examples() {
        assert_eq!(compute_tcr(&[1, 0]).unwrap(), 50.0);
        assert_eq!(compute_tcr(&[0, 0, 0]).unwrap(), 0.0);
        let mut v = vec![0u8; 34];
        v[3] = 1;
        v[20] = 1;
        assert!((compute_tcr(&v).unwrap() - 200.0 / 34.0).abs() < 1e-12);
        assert!(compute_tcr(&[]).is_err());
    }

    #[test]
    fn tc_score_examples() {
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let v = verdicts(&set, &[true, true, false, true, true, false]);
        assert!((compute_tc_score_t2v(&v, &set).unwrap() - 4.0 / 6.0).abs() < 1e-9);
        let v = verdicts(&set, &[true; 6]);
        assert_eq!(compute_tc_score_t2v(&v, &set).unwrap(), 1.0);
        let empty = AssertionSet { assertions: vec![], ..set };
        assert!(compute_tc_score_t2v(&[], &empty).is_err());
    }

    #[test]
    fn verify_parses_and_caches() {
        let judge = FnJudge::scripted(
            vec![("brown".into(), "Yes.".into()), ("bright green".into(), "no, the chameleon is still brown".into())],
            "Yes",
        );
        let cache = JsonlCache::in_memory();
        let mut verifier = Verifier::new(&judge, &cache);
        verifier.retry = RetryPolicy::immediate(3);
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let seq = sixteen();
        let v = verifier.verify_assertion(&set.assertions[0], &seq).unwrap();
        assert_eq!((v.answer, v.degraded), (Answer::Yes, false));
        let v = verifier.verify_assertion(&set.assertions[1], &seq).unwrap();
        assert_eq!(v.answer, Answer::No);
        let calls = judge.call_count();
        verifier.verify_assertion(&set.assertions[0], &seq).unwrap();
        assert_eq!(judge.call_count(), calls, "second call served from cache");
    }

    #[test]
    fn timeouts_fail_closed() {
        let judge = FnJudge::new("flaky", |_, _| Err(Error::validation("timeout")));
        let cache = JsonlCache::in_memory();
        let mut verifier = Verifier::new(&judge, &cache);
        verifier.retry = RetryPolicy::immediate(3);
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let v = verifier.verify_assertion(&set.assertions[0], &sixteen()).unwrap();
        assert_eq!((v.answer, v.degraded), (Answer::No, true));
        assert_eq!(judge.call_count(), 3);
        assert!(cache.is_empty());
    }

    #[test]
    fn unparsable_reply_gets_one_reprompt() {
        let judge = FnJudge::new("chatty", |_, prompt| {
            Ok(if prompt.contains(REPROMPT_SUFFIX) { "Yes" } else { "Well, it depends." }.to_string())
        });
        let cache = JsonlCache::in_memory();
        let verifier = Verifier::new(&judge, &cache);
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let v = verifier.verify_assertion(&set.assertions[0], &sixteen()).unwrap();
        assert_eq!((v.answer, v.degraded), (Answer::Yes, false));
        assert_eq!(judge.call_count(), 2);

        let stubborn = FnJudge::new("stubborn", |_, _| Ok("Maybe".into()));
        let verifier = Verifier::new(&stubborn, &cache);
        let v = verifier.verify_assertion(&set.assertions[0], &sixteen()).unwrap();
        assert_eq!((v.answer, v.degraded), (Answer::No, true));
    }

    #[test]
    fn remapped_composites_for_29_frames() {
        use std::sync::Mutex;
        let seen = std::sync::Arc::new(Mutex::new(Vec::new()));
        let seen2 = seen.clone();
        let judge = FnJudge::new("probe", move |png, _| {
            let img = image::load_from_memory(png).unwrap().to_rgb8();
            seen2.lock().unwrap().push(img.get_pixel(0, 0)[0]);
            Ok("Yes".into())
        });
        let cache = JsonlCache::in_memory();
        let verifier = Verifier::new(&judge, &cache);
        let seq = FrameSequence::new((0..29).map(|i| solid(4, 4, [i as u8, 0, 0])).collect(), 8.0, "s1").unwrap();
        let a = Assertion {
            id: "q1".into(),
            dimension: Dimension::Completion,
            frame_indices: vec![16],
            question: "Is it green?".into(),
        };
        verifier.verify_assertion(&a, &seq).unwrap();
        assert_eq!(seen.lock().unwrap()[0], 28, "frame 16 maps to frame 29");
    }

    #[test]
    fn flat_mean_not_mean_of_means() {
        let set = set_from(templates::EXEMPLAR_ATTRIBUTE);
        let mk = |p: &str, v: &str, tc: u8| VideoEvaluation {
            prompt_id: p.into(),
            video_id: v.into(),
            verdicts: verdicts(&set, &[true; 6]),
            tc,
            tc_score: tc as f64,
            consistency: None,
        };
        let evals = vec![mk("a1", "a1_0", 1), mk("a1", "a1_1", 0), mk("b1", "b1_0", 0), mk("b1", "b1_1", 0)];
        let cats: HashMap<String, Category> =
            [("a1".into(), Category::Attribute), ("b1".into(), Category::Background)].into();
        let r = aggregate_report("m", &evals, &cats, Aggregation::PerVideo).unwrap();
        assert_eq!(r.overall.tcr, 25.0);
        assert_eq!(r.categories[&Category::Attribute].tcr, 50.0);
        let best = aggregate_report("m", &evals, &cats, Aggregation::PerPromptBest).unwrap();
        assert_eq!(best.overall.videos, 2);
        assert_eq!(best.overall.tcr, 50.0);

        let unknown = vec![mk("zz", "zz_0", 1)];
        assert!(aggregate_report("m", &unknown, &cats, Aggregation::PerVideo).is_err());
        let single = vec![mk("a1", "a1_0", 1)];
        assert_eq!(aggregate_report("m", &single, &cats, Aggregation::PerVideo).unwrap().overall.tcr, 100.0);
    }

    #[test]
    fn csv_has_table_columns() {
        let r = ModelReport {
            model: "toy".into(),
            aggregation: Aggregation::PerVideo,
            categories: [(Category::Attribute, GroupStats { tcr: 50.0, mean_tc_score: 0.75, videos: 2 })].into(),
            overall: GroupStats { tcr: 50.0, mean_tc_score: 0.75, videos: 2 },
            degraded_verdicts: 0,
            total_verdicts: 12,
        };
        let csv = reports_to_csv(&[r]).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), REPORT_CSV_HEADER.join(","));
        assert_eq!(lines.next().unwrap(), "toy,50.00,0.7500,,,,,50.00,0.7500");
    }
}
