//! Index-assertion pairs: generation through a text model, parsing of the
//! exemplar layout, rendering back to it, and validation.

pub mod templates;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::cache::{cache_key, sha256_hex, JsonlCache};
use crate::corpus::{Category, TransitionPrompt};
use crate::error::{Error, Result};
use crate::providers::{RetryPolicy, TextGenerator};
use crate::video_io::{CANONICAL_FRAMES, MAX_COMPOSITE_MEMBERS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Completion,
    Consistency,
    Other,
}

impl Dimension {
    pub fn header(&self) -> &'static str {
        match self {
            Dimension::Completion => "Transition Completion",
            Dimension::Consistency => "Transition object consistency",
            Dimension::Other => "Other objects",
        }
    }

    /// Whether verdicts in this dimension decide transition completion.
    pub fn decides_completion(&self) -> bool {
        matches!(self, Dimension::Completion | Dimension::Consistency)
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Completion => "completion",
            Dimension::Consistency => "consistency",
            Dimension::Other => "other",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assertion {
    pub id: String,
    pub dimension: Dimension,
    /// 1-based, ascending, in the canonical 16-frame space.
    pub frame_indices: Vec<usize>,
    pub question: String,
}

impl Assertion {
    pub fn validate(&self) -> Result<(), String> {
        let n = self.frame_indices.len();
        if n == 0 || n > MAX_COMPOSITE_MEMBERS {
            return Err(format!("{}: {n} frame indices (allowed 1..={MAX_COMPOSITE_MEMBERS})", self.id));
        }
        if !self.frame_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("{}: frame indices not strictly ascending", self.id));
        }
        if let Some(bad) = self
            .frame_indices
            .iter()
            .find(|&&i| i == 0 || i > CANONICAL_FRAMES)
        {
            return Err(format!("{}: frame index {bad} outside 1..={CANONICAL_FRAMES}", self.id));
        }
        let q = self.question.trim();
        if q.is_empty() || !q.ends_with('?') {
            return Err(format!("{}: question must be non-empty and end with '?'", self.id));
        }
        if self.dimension == Dimension::Consistency && n != 2 {
            return Err(format!("{}: consistency checks compare exactly 2 frames", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertionSet {
    pub prompt_id: String,
    pub assertions: Vec<Assertion>,
    pub generator_fingerprint: String,
    /// Raw generator output, kept for audit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
}

impl AssertionSet {
    pub fn of(&self, dim: Dimension) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(move |a| a.dimension == dim)
    }

    pub fn count(&self, dim: Dimension) -> usize {
        self.of(dim).count()
    }

    pub fn get(&self, id: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.id == id)
    }

    /// Checks per-assertion invariants and dimension coverage for a prompt
    /// of the given category.
    pub fn validate(&self, category: Category) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for a in &self.assertions {
            a.validate()?;
            if !seen.insert(a.id.as_str()) {
                return Err(format!("duplicate assertion id {}", a.id));
            }
        }
        if self.count(Dimension::Completion) == 0 {
            return Err("no transition-completion assertions".into());
        }
        let single_at = |idx: usize| {
            self.of(Dimension::Completion)
                .any(|a| a.frame_indices == [idx])
        };
        if !single_at(1) || !single_at(CANONICAL_FRAMES) {
            return Err(format!(
                "completion checks must include single-frame checks at frames 1 and {CANONICAL_FRAMES}"
            ));
        }
        if self.count(Dimension::Consistency) == 0 && category != Category::Background {
            return Err(format!("{category} prompts need transition-object consistency checks"));
        }
        Ok(())
    }

    /// Renders in the exemplar layout understood by [`parse_assertion_text`].
    pub fn render(&self) -> String {
        render_assertions(&self.assertions)
    }
}

pub fn render_assertions(assertions: &[Assertion]) -> String {
    let mut out = String::new();
    for dim in [Dimension::Completion, Dimension::Consistency, Dimension::Other] {
        out.push_str(&format!("- Check \"{}\"\n\n", dim.header()));
        let members: Vec<&Assertion> = assertions.iter().filter(|a| a.dimension == dim).collect();
        if members.is_empty() {
            out.push_str("None\n\n");
        }
        for a in members {
            let idx: Vec<String> = a.frame_indices.iter().map(|i| i.to_string()).collect();
            out.push_str(&format!("Input: Frame {}\n\nQ: {}\n\n", idx.join(", "), a.question));
        }
    }
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

fn assertion_id(n: usize) -> String {
    format!("q{n}")
}

fn header_dimension(line: &str) -> Option<Result<Dimension, String>> {
    let rest = line.trim().strip_prefix("- Check")?;
    let lower = rest.to_lowercase();
    Some(if lower.contains("completion") {
        Ok(Dimension::Completion)
    } else if lower.contains("consistency") {
        Ok(Dimension::Consistency)
    } else if lower.contains("other") {
        Ok(Dimension::Other)
    } else {
        Err(format!("unrecognised check header `{}`", line.trim()))
    })
}

fn parse_indices(spec: &str) -> Result<Vec<usize>, String> {
    let body = spec.trim();
    let body = body
        .strip_prefix("Frames")
        .or_else(|| body.strip_prefix("Frame"))
        .or_else(|| body.strip_prefix("frames"))
        .or_else(|| body.strip_prefix("frame"))
        .unwrap_or(body);
    let mut out = Vec::new();
    for tok in body.split([',', ';']).flat_map(|t| t.split(" and ")) {
        let tok = tok.trim().trim_start_matches("Frame").trim();
        if tok.is_empty() {
            continue;
        }
        let n: usize = tok
            .parse()
            .map_err(|_| format!("cannot parse frame index `{tok}`"))?;
        out.push(n);
    }
    if out.is_empty() {
        return Err(format!("no frame indices in `{}`", spec.trim()));
    }
    Ok(out)
}

/// Parses text in the exemplar layout into assertions with ids `q1..qN`.
///
/// Lines before the first `- Check` header (the description and the
/// transition-object summary) are skipped. `None` bodies yield no
/// assertions for that section.
pub fn parse_assertion_text(raw: &str) -> Result<Vec<Assertion>> {
    let err = |line: usize, msg: String| Error::parse("assertion text", line, msg);
    let mut current: Option<Dimension> = None;
    let mut saw_header = false;
    let mut pending: Option<(usize, Vec<usize>)> = None;
    let mut out = Vec::new();

    for (i, line) in raw.lines().enumerate() {
        let lineno = i + 1;
        let t = line.trim().trim_end_matches("\\\\").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(dim) = header_dimension(t) {
            if let Some((at, _)) = pending.take() {
                return Err(err(at, "Input line without a following question".into()));
            }
            current = Some(dim.map_err(|m| err(lineno, m))?);
            saw_header = true;
            continue;
        }
        if let Some(spec) = t.strip_prefix("Input:") {
            if current.is_none() {
                return Err(err(lineno, "Input line before any `- Check` header".into()));
            }
            if let Some((at, _)) = pending.take() {
                return Err(err(at, "Input line without a following question".into()));
            }
            let idx = parse_indices(spec).map_err(|m| err(lineno, m))?;
            pending = Some((lineno, idx));
            continue;
        }
        if let Some(q) = t.strip_prefix("Q:") {
            let Some(dim) = current else {
                return Err(err(lineno, "question before any `- Check` header".into()));
            };
            let Some((_, mut frame_indices)) = pending.take() else {
                return Err(err(lineno, "question without a preceding Input line".into()));
            };
            frame_indices.sort_unstable();
            frame_indices.dedup();
            out.push(Assertion {
                id: assertion_id(out.len() + 1),
                dimension: dim,
                frame_indices,
                question: q.trim().to_string(),
            });
            continue;
        }
        // description, summary lines and `None` markers carry no assertions
    }
    if let Some((at, _)) = pending {
        return Err(err(at, "Input line without a following question".into()));
    }
    if !saw_header {
        return Err(err(1, "no `- Check` section header found".into()));
    }
    Ok(out)
}

/// Cache key: prompt text digest, template version and model name.
pub fn generation_key(prompt_text: &str, model: &str) -> String {
    cache_key(&[
        &sha256_hex(prompt_text.as_bytes()),
        templates::TEMPLATE_VERSION,
        model,
    ])
}

pub struct AssertionGenerator<'a> {
    pub llm: &'a dyn TextGenerator,
    pub retry: RetryPolicy,
    pub cache: &'a JsonlCache<AssertionSet>,
}

impl AssertionGenerator<'_> {
    pub fn fingerprint(&self) -> String {
        format!("{}+{}", self.llm.model_name(), templates::TEMPLATE_VERSION)
    }

    /// Generates (or recalls from cache) the assertion set for one prompt.
    pub fn generate(&self, prompt: &TransitionPrompt) -> Result<AssertionSet> {
        let key = generation_key(&prompt.text, self.llm.model_name());
        if let Some(mut cached) = self.cache.get(&key) {
            cached.prompt_id = prompt.id.clone();
            return Ok(cached);
        }
        let user = templates::user_message(&prompt.text);
        let raw = self
            .retry
            .run(self.llm.model_name(), || self.llm.complete(templates::SYSTEM_INSTRUCTION, &user))?;
        let assertions = parse_assertion_text(&raw).map_err(|e| {
            Error::validation(format!("prompt `{}`: {e}\n--- raw output ---\n{raw}", prompt.id))
        })?;
        let set = AssertionSet {
            prompt_id: prompt.id.clone(),
            assertions,
            generator_fingerprint: self.fingerprint(),
            raw_text: Some(raw.clone()),
        };
        set.validate(prompt.category).map_err(|e| {
            Error::validation(format!("prompt `{}`: {e}\n--- raw output ---\n{raw}", prompt.id))
        })?;
        self.cache.insert(&key, set.clone())?;
        Ok(set)
    }
}

/// Convenience wrapper using an in-memory cache.
pub fn generate_assertions(prompt: &TransitionPrompt, llm: &dyn TextGenerator) -> Result<AssertionSet> {
    let cache = JsonlCache::in_memory();
    AssertionGenerator {
        llm,
        retry: RetryPolicy::default(),
        cache: &cache,
    }
    .generate(prompt)
}
