mod common;

use serde_json::json;

use common::{attribute_record, write_corpus};
use tcb_core::corpus::{load_corpus, save_corpus, sidecar_path, Category, ManifestKind};

fn relation(i: usize) -> serde_json::Value {
    let (obj, from, to) = ("cup", format!("shelf {i}"), format!("table {i}"));
    json!({
        "id": format!("rel-{i:03}"),
        "category": "object_relation",
        "text": format!("A hand moves a cup from the {from} to the {to}."),
        "start_state": {"objects": [obj, &from, &to], "relations": [[obj, &from]]},
        "end_state": {"objects": [obj, &from, &to], "relations": [[obj, &to]]},
        "transition_object": obj,
        "start_value": from,
        "end_value": to,
    })
}

fn background(i: usize, with_gt: bool) -> serde_json::Value {
    let mut r = json!({
        "id": format!("bg-{i:03}"),
        "category": "background",
        "text": format!("A lighthouse {i} on a cliff from dawn to dusk."),
        "start_state": {"objects": ["lighthouse", "sky"], "attributes": [["sky", "dawn"]]},
        "end_state": {"objects": ["lighthouse", "sky"], "attributes": [["sky", "dusk"]]},
        "transition_object": "sky",
        "start_value": "dawn",
        "end_value": "dusk",
        "distractors": ["lighthouse"],
    });
    if with_gt {
        r["ground_truth"] = json!({"video_source_id": format!("yt-{i}"), "start_time": 1.0, "end_time": 9.5});
    }
    r
}

fn full_corpus() -> Vec<serde_json::Value> {
    let mut records = Vec::new();
    for i in 1..=50 {
        records.push(attribute_record(
            &format!("attr-{i:03}"),
            "leaf",
            "green",
            "red",
            &format!("Leaf {i} changing from green to red."),
        ));
        records.push(relation(i));
        records.push(background(i, false));
    }
    records
}

#[test]
fn loads_a_150_prompt_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t2v.jsonl");
    write_corpus(&path, &full_corpus());
    std::fs::write(sidecar_path(&path), r#"{"name":"T2V","version":"1.0"}"#).unwrap();

    let corpus = load_corpus(&path, ManifestKind::T2V).unwrap();
    assert_eq!(corpus.prompts.len(), 150);
    assert_eq!(corpus.version, "1.0");
    for cat in Category::ALL {
        assert_eq!(corpus.category_counts()[&cat], 50, "{cat}");
    }

    let copy = dir.path().join("copy.jsonl");
    save_corpus(&copy, &corpus).unwrap();
    assert_eq!(load_corpus(&copy, ManifestKind::T2V).unwrap(), corpus);

    let err = load_corpus(&path, ManifestKind::I2V).unwrap_err().to_string();
    assert!(err.contains("T2V"), "{err}");
}

#[test]
fn image_to_video_corpus_needs_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("i2v.jsonl");
    write_corpus(&path, &[background(1, true), background(2, true)]);
    let corpus = load_corpus(&path, ManifestKind::I2V).unwrap();
    assert_eq!(corpus.ground_truth.len(), 2);
    assert_eq!(corpus.ground_truth_for("bg-002").unwrap().video_source_id, "yt-2");

    write_corpus(&path, &[background(1, true), background(2, false)]);
    let err = load_corpus(&path, ManifestKind::I2V).unwrap_err().to_string();
    assert!(err.contains("bg-002"), "{err}");
}

#[test]
fn rejects_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");

    std::fs::write(&path, "").unwrap();
    assert!(load_corpus(&path, ManifestKind::T2V).unwrap_err().to_string().contains("empty corpus"));

    std::fs::write(&path, "{\"id\": \"x\"\n").unwrap();
    let err = load_corpus(&path, ManifestKind::T2V).unwrap_err().to_string();
    assert!(err.contains(":1:") || err.contains("line 1"), "{err}");

    let mut wrong = attribute_record("a1", "leaf", "green", "red", "A leaf from green to red.");
    wrong["category"] = json!("background");
    write_corpus(&path, &[wrong]);
    let err = load_corpus(&path, ManifestKind::T2V).unwrap_err().to_string();
    assert!(err.contains("declared category"), "{err}");

    let a = attribute_record("a1", "leaf", "green", "red", "A leaf from green to red.");
    let b = attribute_record("a1", "leaf", "green", "red", "Another leaf from green to red.");
    write_corpus(&path, &[a.clone(), a.clone()]);
    assert_eq!(load_corpus(&path, ManifestKind::T2V).unwrap().prompts.len(), 1);
    write_corpus(&path, &[a, b]);
    assert!(load_corpus(&path, ManifestKind::T2V).unwrap_err().to_string().contains("conflicting"));
}
