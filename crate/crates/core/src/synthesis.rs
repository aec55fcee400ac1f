//! Draft transition prompts from a text generator. Drafts are never added
//! to a corpus automatically; a reviewer marks them accepted.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Category;
use crate::error::{Error, Result};
use crate::providers::{RetryPolicy, TextGenerator};

pub const ATTRIBUTE_INSTRUCTION: &str = "Generate some concise prompts that describe scenarios where an object's attribute, such as lighting, color, material, shape, or texture, changes as time proceeds. The prompt should describe transitions that could happen within a few seconds in a video. The described transition should also be realistic and could happen in the real world. Here are some examples:";

pub const RELATION_INSTRUCTION: &str = "Generate some concise prompts that describe scenarios where objects' binding relations change due to some actions or motions. Two objects are bound to each other if they are physically interacting with each other. For example, in \"a man passes a ball from left hand to right hand\" the ball is bound to the man's left hand at first. Then, the binding relation changes from ball and left hand to ball and right hand. The prompt should describe motions that could happen within a few seconds in a video. Consider a wide range of subjects not limited to humans or one's occupation, such as animals or common objects. Here are more examples:";

pub const BACKGROUND_INSTRUCTION: &str = "Generate some concise prompts that describe scenarios where a foreground object remains relatively static and the background changes as time proceeds. The prompt should describe transitions that could happen within a few seconds in a video, whether it is a normal-speed video or a timelapse video. Here are some examples:";

pub fn instruction(category: Category) -> &'static str {
    match category {
        Category::Attribute => ATTRIBUTE_INSTRUCTION,
        Category::ObjectRelation => RELATION_INSTRUCTION,
        Category::Background => BACKGROUND_INSTRUCTION,
    }
}

pub fn default_exemplars(category: Category) -> Vec<String> {
    let list: [&str; 3] = match category {
        Category::Attribute => [
            "A chameleon's skin changes from brown to bright green.",
            "A leaf changing color from vibrant green to rich autumn red.",
            "A car transitioning from silver to matte black.",
        ],
        Category::ObjectRelation => [
            "A man picking an apple from a tree and placing it in a basket.",
            "A bird picking up a twig and placing it in its nest.",
            "A child placing a toy car on a toy track.",
        ],
        Category::Background => [
            "A cityscape transitioning from day to night.",
            "A forest changing from summer greenery to autumn foliage.",
            "A bench by a lake from foggy morning to sunny afternoon.",
        ],
    };
    list.iter().map(|s| s.to_string()).collect()
}

pub fn user_message(category: Category, exemplars: &[String], count: usize) -> String {
    let mut msg = String::from(instruction(category));
    msg.push_str("\n\n");
    for e in exemplars {
        msg.push_str(e);
        msg.push('\n');
    }
    msg.push_str(&format!("\nWrite {count} new prompts, one per line, without numbering."));
    msg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftPrompt {
    pub id: String,
    pub category: Category,
    pub text: String,
    pub start_term: String,
    pub end_term: String,
    pub reviewed: bool,
}

static FROM_TO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bfrom\s+(.+?)\s+(?:to|into)\s+(.+?)[.!]?$").unwrap());
static DESTINATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^(.*\S)\s+(?:to|into|onto|on|in|inside|under|over)\s+(.+?)[.!]?$").unwrap());
static LIST_MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s*").unwrap());

fn content_words(s: &str) -> usize {
    const SKIP: [&str; 8] = ["a", "an", "the", "its", "his", "her", "their", "it"];
    s.split_whitespace()
        .filter(|w| !SKIP.contains(&w.to_ascii_lowercase().as_str()))
        .count()
}

/// Extracts a (start, end) term pair or explains why the draft fails.
///
/// Attribute and background drafts need a `from X to Y` phrase. Relation
/// drafts need a destination phrase (`… on/in/into/to Y`) preceded by a
/// subject and bound object.
pub fn lexical_terms(category: Category, text: &str) -> std::result::Result<(String, String), String> {
    let text = text.trim();
    match category {
        Category::Attribute | Category::Background => {
            let c = FROM_TO
                .captures(text)
                .ok_or_else(|| "no `from … to …` phrase naming start and end states".to_string())?;
            let start = c[1].trim().to_string();
            let end = c[2].trim().to_string();
            if category == Category::Background {
                let subject = &text[..c.get(0).unwrap().start()];
                if content_words(subject) == 0 {
                    return Err("no foreground object named before the transition".into());
                }
            }
            Ok((start, end))
        }
        Category::ObjectRelation => {
            if let Some(c) = FROM_TO.captures(text) {
                return Ok((c[1].trim().to_string(), c[2].trim().to_string()));
            }
            let c = DESTINATION
                .captures(text)
                .ok_or_else(|| "no destination phrase for the new binding".to_string())?;
            if content_words(&c[1]) < 2 {
                return Err("no subject and bound object before the destination".into());
            }
            Ok((c[1].trim().to_string(), c[2].trim().to_string()))
        }
    }
}

fn clean_line(line: &str) -> String {
    let s = LIST_MARKER.replace(line, "");
    s.trim().trim_matches('"').trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub drafts: Vec<DraftPrompt>,
    pub rejected: Vec<Rejection>,
}

fn id_prefix(category: Category) -> &'static str {
    match category {
        Category::Attribute => "attr",
        Category::ObjectRelation => "rel",
        Category::Background => "bg",
    }
}

/// Asks the generator for `count` drafts. Lines failing the lexical check
/// are dropped and reported; at most `count` drafts are kept.
pub fn synthesize_prompts(
    category: Category,
    llm: &dyn TextGenerator,
    count: usize,
    exemplars: &[String],
    retry: &RetryPolicy,
) -> Result<SynthesisOutcome> {
    if exemplars.is_empty() {
        return Err(Error::validation("prompt synthesis needs at least one exemplar"));
    }
    let mut outcome = SynthesisOutcome {
        drafts: Vec::new(),
        rejected: Vec::new(),
    };
    if count == 0 {
        return Ok(outcome);
    }
    let msg = user_message(category, exemplars, count);
    let raw = retry.run(llm.model_name(), || llm.complete("", &msg))?;
    for line in raw.lines().map(clean_line).filter(|l| !l.is_empty()) {
        if outcome.drafts.len() == count {
            break;
        }
        match lexical_terms(category, &line) {
            Ok((start_term, end_term)) => outcome.drafts.push(DraftPrompt {
                id: format!("{}-draft-{:03}", id_prefix(category), outcome.drafts.len() + 1),
                category,
                text: line,
                start_term,
                end_term,
                reviewed: false,
            }),
            Err(reason) => outcome.rejected.push(Rejection { text: line, reason }),
        }
    }
    Ok(outcome)
}

/// Marks the listed drafts as reviewed; unknown ids are an error.
pub fn mark_reviewed(drafts: &mut [DraftPrompt], ids: &[String]) -> Result<usize> {
    for id in ids {
        let d = drafts
            .iter_mut()
            .find(|d| &d.id == id)
            .ok_or_else(|| Error::validation(format!("no draft with id `{id}`")))?;
        d.reviewed = true;
    }
    Ok(ids.len())
}
