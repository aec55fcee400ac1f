//! Benchmark corpus: transition prompts, their start/end scene graphs, and
//! ground-truth video metadata for the image-to-video split.
//!
//! On disk a corpus is a UTF-8 JSON-lines file (one [`TransitionPrompt`] per
//! line, with an optional `ground_truth` sub-record) plus a sidecar
//! `<file>.meta.json` carrying the corpus name and version.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum ground-truth clip length in seconds (exclusive).
pub const MAX_CLIP_SECONDS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Attribute,
    ObjectRelation,
    Background,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::Attribute,
        Category::ObjectRelation,
        Category::Background,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Attribute => "attribute",
            Category::ObjectRelation => "object_relation",
            Category::Background => "background",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "attribute" => Ok(Category::Attribute),
            "object_relation" | "relation" | "object" => Ok(Category::ObjectRelation),
            "background" => Ok(Category::Background),
            other => Err(Error::validation(format!("unknown category `{other}`"))),
        }
    }
}

/// Scene graph at one point in time: objects, attribute bindings and
/// object-object interaction edges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneState {
    pub objects: Vec<String>,
    /// `(object, attribute)` bindings.
    #[serde(default)]
    pub attributes: Vec<(String, String)>,
    /// `(object, object)` interaction edges.
    #[serde(default)]
    pub relations: Vec<(String, String)>,
}

impl SceneState {
    pub fn validate(&self) -> Result<(), String> {
        if self.objects.is_empty() {
            return Err("scene state has no objects".into());
        }
        if self.attributes.is_empty() && self.relations.is_empty() {
            return Err("scene state has neither attribute bindings nor relations".into());
        }
        let objects: BTreeSet<&str> = self.objects.iter().map(String::as_str).collect();
        for (obj, attr) in &self.attributes {
            if !objects.contains(obj.as_str()) {
                return Err(format!("attribute `{attr}` bound to unknown object `{obj}`"));
            }
        }
        for (a, b) in &self.relations {
            for end in [a, b] {
                if !objects.contains(end.as_str()) {
                    return Err(format!("relation ({a}, {b}) names unknown object `{end}`"));
                }
            }
        }
        if has_duplicates(&self.attributes) {
            return Err("duplicate attribute binding".into());
        }
        if has_duplicates(&self.relations) {
            return Err("duplicate relation edge".into());
        }
        Ok(())
    }
}

fn has_duplicates<T: Ord>(items: &[T]) -> bool {
    let mut seen = BTreeSet::new();
    items.iter().any(|i| !seen.insert(i))
}

/// Ground-truth clip reference for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthMeta {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub prompt_id: String,
    pub video_source_id: String,
    pub start_time: f64,
    pub end_time: f64,
}

impl GroundTruthMeta {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.start_time >= 0.0 && self.start_time < self.end_time) {
            return Err(format!(
                "ground truth times must satisfy 0 <= start < end (got {} .. {})",
                self.start_time, self.end_time
            ));
        }
        if self.end_time - self.start_time >= MAX_CLIP_SECONDS {
            return Err(format!(
                "ground truth clip is {:.2}s long, limit is {MAX_CLIP_SECONDS}s",
                self.end_time - self.start_time
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionPrompt {
    pub id: String,
    pub category: Category,
    pub text: String,
    pub start_state: SceneState,
    pub end_state: SceneState,
    pub transition_object: String,
    pub start_value: String,
    pub end_value: String,
    #[serde(default)]
    pub distractors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthMeta>,
}

/// What changed between the start and end scene graph.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct StateDiff<'a> {
    pub removed_attributes: Vec<&'a (String, String)>,
    pub added_attributes: Vec<&'a (String, String)>,
    pub removed_relations: Vec<&'a (String, String)>,
    pub added_relations: Vec<&'a (String, String)>,
}

pub fn diff_states<'a>(start: &'a SceneState, end: &'a SceneState) -> StateDiff<'a> {
    fn minus<'a>(a: &'a [(String, String)], b: &'a [(String, String)]) -> Vec<&'a (String, String)> {
        let other: BTreeSet<&(String, String)> = b.iter().collect();
        a.iter().filter(|x| !other.contains(x)).collect()
    }
    StateDiff {
        removed_attributes: minus(&start.attributes, &end.attributes),
        added_attributes: minus(&end.attributes, &start.attributes),
        removed_relations: minus(&start.relations, &end.relations),
        added_relations: minus(&end.relations, &start.relations),
    }
}

fn edge_partner<'a>(edge: &'a (String, String), object: &str) -> Option<&'a str> {
    if edge.0 == object {
        Some(edge.1.as_str())
    } else if edge.1 == object {
        Some(edge.0.as_str())
    } else {
        None
    }
}

impl TransitionPrompt {
    /// Classifies the scene-graph change. Exactly one binding change on the
    /// transition object is an attribute transition, or a background shift
    /// when foreground distractors are present; exactly one relation edge
    /// swapped around the transition object is an object-relation change.
    pub fn classify(&self) -> Result<Category, String> {
        let d = diff_states(&self.start_state, &self.end_state);
        let attr_changed = !d.removed_attributes.is_empty() || !d.added_attributes.is_empty();
        let rel_changed = !d.removed_relations.is_empty() || !d.added_relations.is_empty();
        match (attr_changed, rel_changed) {
            (true, false) => {
                if d.removed_attributes.len() != 1 || d.added_attributes.len() != 1 {
                    return Err(format!(
                        "expected exactly one attribute binding to change, found -{} +{}",
                        d.removed_attributes.len(),
                        d.added_attributes.len()
                    ));
                }
                let (from, to) = (d.removed_attributes[0], d.added_attributes[0]);
                if from.0 != self.transition_object || to.0 != self.transition_object {
                    return Err(format!(
                        "changed binding is on `{}`/`{}`, not on transition object `{}`",
                        from.0, to.0, self.transition_object
                    ));
                }
                if from.1 != self.start_value || to.1 != self.end_value {
                    return Err(format!(
                        "binding changes `{}` -> `{}` but start/end values are `{}` -> `{}`",
                        from.1, to.1, self.start_value, self.end_value
                    ));
                }
                if self.distractors.is_empty() {
                    Ok(Category::Attribute)
                } else {
                    Ok(Category::Background)
                }
            }
            (false, true) => {
                if d.removed_relations.len() != 1 || d.added_relations.len() != 1 {
                    return Err(format!(
                        "expected exactly one relation edge to change, found -{} +{}",
                        d.removed_relations.len(),
                        d.added_relations.len()
                    ));
                }
                let from = edge_partner(d.removed_relations[0], &self.transition_object);
                let to = edge_partner(d.added_relations[0], &self.transition_object);
                match (from, to) {
                    (Some(from), Some(to)) => {
                        if from != self.start_value || to != self.end_value {
                            return Err(format!(
                                "relation moves `{from}` -> `{to}` but start/end values are `{}` -> `{}`",
                                self.start_value, self.end_value
                            ));
                        }
                        Ok(Category::ObjectRelation)
                    }
                    _ => Err(format!(
                        "changed relation edges do not involve transition object `{}`",
                        self.transition_object
                    )),
                }
            }
            (true, true) => Err("both attribute bindings and relations change".into()),
            (false, false) => Err("start and end states are identical".into()),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        self.start_state.validate().map_err(|e| format!("start_state: {e}"))?;
        self.end_state.validate().map_err(|e| format!("end_state: {e}"))?;
        let derived = self.classify()?;
        if derived != self.category {
            return Err(format!(
                "declared category {} but scene graphs describe {}",
                self.category, derived
            ));
        }
        let text = self.text.to_lowercase();
        for value in [&self.start_value, &self.end_value] {
            if !text.contains(&value.to_lowercase()) {
                return Err(format!("text does not mention `{value}`"));
            }
        }
        if let Some(gt) = &self.ground_truth {
            gt.validate()?;
            if !gt.prompt_id.is_empty() && gt.prompt_id != self.id {
                return Err(format!("ground truth references prompt `{}`", gt.prompt_id));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ManifestKind {
    T2V,
    I2V,
}

impl std::str::FromStr for ManifestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T2V" => Ok(ManifestKind::T2V),
            "I2V" => Ok(ManifestKind::I2V),
            other => Err(Error::validation(format!("unknown manifest kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub name: ManifestKind,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub name: ManifestKind,
    pub version: String,
    pub prompts: Vec<TransitionPrompt>,
    pub ground_truth: Vec<GroundTruthMeta>,
}

impl CorpusManifest {
    pub fn category_counts(&self) -> BTreeMap<Category, usize> {
        let mut counts: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
        for p in &self.prompts {
            *counts.entry(p.category).or_default() += 1;
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&TransitionPrompt> {
        self.prompts.iter().find(|p| p.id == id)
    }

    pub fn categories(&self) -> HashMap<String, Category> {
        self.prompts.iter().map(|p| (p.id.clone(), p.category)).collect()
    }

    pub fn ground_truth_for(&self, prompt_id: &str) -> Option<&GroundTruthMeta> {
        self.ground_truth.iter().find(|g| g.prompt_id == prompt_id)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// Loads and validates a corpus file. Identical duplicate records are
/// collapsed; conflicting records sharing an id are rejected.
pub fn load_corpus(path: &Path, kind: ManifestKind) -> Result<CorpusManifest> {
    let display = path.display().to_string();
    let file = fs::File::open(path)?;
    let mut prompts: Vec<TransitionPrompt> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();

    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let prompt: TransitionPrompt = serde_json::from_str(&line)
            .map_err(|e| Error::parse(&display, lineno + 1, format!("malformed record: {e}")))?;
        if let Some(&existing) = index.get(&prompt.id) {
            if prompts[existing] == prompt {
                continue;
            }
            return Err(Error::validation(format!(
                "prompt `{}`: conflicting duplicate id (line {})",
                prompt.id,
                lineno + 1
            )));
        }
        prompt
            .validate()
            .map_err(|e| Error::validation(format!("prompt `{}`: {e}", prompt.id)))?;
        index.insert(prompt.id.clone(), prompts.len());
        prompts.push(prompt);
    }

    if prompts.is_empty() {
        return Err(Error::validation("empty corpus"));
    }

    let version = match fs::read_to_string(sidecar_path(path)) {
        Ok(text) => {
            let meta: CorpusMeta = serde_json::from_str(&text)?;
            if meta.name != kind {
                return Err(Error::validation(format!(
                    "sidecar declares a {:?} corpus but {:?} was requested",
                    meta.name, kind
                )));
            }
            meta.version
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => "unversioned".to_string(),
        Err(e) => return Err(e.into()),
    };

    let mut ground_truth = Vec::new();
    for p in prompts.iter_mut() {
        match p.ground_truth.take() {
            Some(mut gt) => {
                gt.prompt_id = p.id.clone();
                ground_truth.push(gt);
            }
            None if kind == ManifestKind::I2V => {
                return Err(Error::validation(format!(
                    "prompt `{}`: I2V manifest requires ground-truth metadata",
                    p.id
                )))
            }
            None => {}
        }
    }

    Ok(CorpusManifest {
        name: kind,
        version,
        prompts,
        ground_truth,
    })
}

/// Writes the corpus file and its sidecar.
pub fn save_corpus(path: &Path, manifest: &CorpusManifest) -> Result<()> {
    let gt: HashMap<&str, &GroundTruthMeta> = manifest
        .ground_truth
        .iter()
        .map(|g| (g.prompt_id.as_str(), g))
        .collect();
    let mut out = fs::File::create(path)?;
    for p in &manifest.prompts {
        let mut record = p.clone();
        if let Some(g) = gt.get(p.id.as_str()) {
            let mut g = (*g).clone();
            g.prompt_id.clear();
            record.ground_truth = Some(g);
        } else if let Some(g) = record.ground_truth.as_mut() {
            g.prompt_id.clear();
        }
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    let meta = CorpusMeta {
        name: manifest.name,
        version: manifest.version.clone(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
        items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    pub fn chameleon() -> TransitionPrompt {
        TransitionPrompt {
            id: "attr-001".into(),
            category: Category::Attribute,
            text: "A chameleon changing from brown to bright green.".into(),
            start_state: SceneState {
                objects: vec!["chameleon".into()],
                attributes: pairs(&[("chameleon", "brown")]),
                relations: vec![],
            },
            end_state: SceneState {
                objects: vec!["chameleon".into()],
                attributes: pairs(&[("chameleon", "bright green")]),
                relations: vec![],
            },
            transition_object: "chameleon".into(),
            start_value: "brown".into(),
            end_value: "bright green".into(),
            distractors: vec![],
            ground_truth: None,
        }
    }

    pub fn ball() -> TransitionPrompt {
        TransitionPrompt {
            id: "rel-001".into(),
            category: Category::ObjectRelation,
            text: "A man passing a ball from his left hand to his right hand.".into(),
            start_state: SceneState {
                objects: vec!["ball".into(), "left hand".into(), "right hand".into()],
                attributes: vec![],
                relations: pairs(&[("ball", "left hand")]),
            },
            end_state: SceneState {
                objects: vec!["ball".into(), "left hand".into(), "right hand".into()],
                attributes: vec![],
                relations: pairs(&[("ball", "right hand")]),
            },
            transition_object: "ball".into(),
            start_value: "left hand".into(),
            end_value: "right hand".into(),
            distractors: vec!["man".into()],
            ground_truth: None,
        }
    }

    pub fn bench() -> TransitionPrompt {
        TransitionPrompt {
            id: "bg-001".into(),
            category: Category::Background,
            text: "A bench by a lake from foggy morning to sunny afternoon.".into(),
            start_state: SceneState {
                objects: vec!["background".into(), "bench".into(), "lake".into()],
                attributes: pairs(&[("background", "foggy morning")]),
                relations: pairs(&[("bench", "lake")]),
            },
            end_state: SceneState {
                objects: vec!["background".into(), "bench".into(), "lake".into()],
                attributes: pairs(&[("background", "sunny afternoon")]),
                relations: pairs(&[("bench", "lake")]),
            },
            transition_object: "background".into(),
            start_value: "foggy morning".into(),
            end_value: "sunny afternoon".into(),
            distractors: vec!["bench".into(), "lake".into()],
            ground_truth: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn write_lines(dir: &Path, name: &str, prompts: &[TransitionPrompt]) -> PathBuf {
        let path = dir.join(name);
        let mut f = fs::File::create(&path).unwrap();
        for p in prompts {
            writeln!(f, "{}", serde_json::to_string(p).unwrap()).unwrap();
        }
        path
    }

    #[test]
    fn fixtures_classify_into_their_declared_category() {
        for p in [chameleon(), ball(), bench()] {
            assert_eq!(p.classify().unwrap(), p.category, "{}", p.id);
            p.validate().unwrap();
        }
    }

    #[test]
    fn relation_change_must_touch_transition_object() {
        let mut p = ball();
        p.transition_object = "man".into();
        assert!(p.classify().is_err());
    }

    #[test]
    fn text_must_mention_both_values() {
        let mut p = chameleon();
        p.text = "A chameleon turns bright green.".into();
        let err = p.validate().unwrap_err();
        assert!(err.contains("brown"), "{err}");
    }

    #[test]
    fn binding_to_unknown_object_is_rejected() {
        let mut p = chameleon();
        p.end_state.attributes.push(("lizard".into(), "green".into()));
        assert!(p.validate().unwrap_err().contains("unknown object"));
    }

    #[test]
    fn empty_file_is_an_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        fs::write(&path, "").unwrap();
        let err = load_corpus(&path, ManifestKind::T2V).unwrap_err();
        assert!(err.to_string().contains("empty corpus"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&chameleon()).unwrap();
        fs::write(&path, format!("{good}\n{{not json\n")).unwrap();
        match load_corpus(&path, ManifestKind::T2V).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn i2v_requires_ground_truth_per_prompt() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = chameleon();
        a.ground_truth = Some(GroundTruthMeta {
            prompt_id: String::new(),
            video_source_id: "abc123".into(),
            start_time: 1.0,
            end_time: 5.5,
        });
        let b = ball();
        let path = write_lines(dir.path(), "i2v.jsonl", &[a, b]);
        let err = load_corpus(&path, ManifestKind::I2V).unwrap_err().to_string();
        assert!(err.contains("rel-001"), "{err}");
    }

    #[test]
    fn overlong_ground_truth_is_rejected() {
        let gt = GroundTruthMeta {
            prompt_id: String::new(),
            video_source_id: "x".into(),
            start_time: 2.0,
            end_time: 22.0,
        };
        assert!(gt.validate().is_err());
    }

    #[test]
    fn duplicates_collapse_and_conflicts_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "dup.jsonl", &[chameleon(), chameleon(), ball()]);
        let m = load_corpus(&path, ManifestKind::T2V).unwrap();
        assert_eq!(m.prompts.len(), 2);

        let mut other = ball();
        other.id = "attr-001".into();
        let path = write_lines(dir.path(), "conflict.jsonl", &[chameleon(), other]);
        assert!(load_corpus(&path, ManifestKind::T2V).is_err());
    }

    #[test]
    fn save_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let prompts = vec![chameleon(), ball(), bench()];
        let ground_truth = prompts
            .iter()
            .enumerate()
            .map(|(i, p)| GroundTruthMeta {
                prompt_id: p.id.clone(),
                video_source_id: format!("yt{i}"),
                start_time: i as f64,
                end_time: i as f64 + 4.0,
            })
            .collect();
        let manifest = CorpusManifest {
            name: ManifestKind::I2V,
            version: "1.0".into(),
            prompts,
            ground_truth,
        };
        let path = dir.path().join("i2v.jsonl");
        save_corpus(&path, &manifest).unwrap();
        let loaded = load_corpus(&path, ManifestKind::I2V).unwrap();
        assert_eq!(loaded, manifest);
        assert_eq!(
            loaded.category_counts().values().copied().collect::<Vec<_>>(),
            vec![1, 1, 1]
        );
        assert!(load_corpus(&path, ManifestKind::T2V).is_err(), "sidecar kind mismatch");
    }
}
