//! Fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde_json::json;

use tcb_core::assertion::templates::{EXEMPLAR_ATTRIBUTE, EXEMPLAR_BACKGROUND, EXEMPLAR_RELATION};
use tcb_core::providers::mock::FnJudge;

pub const ATTRIBUTE_TEXT: &str = "A chameleon changing from brown to bright green.";
pub const RELATION_TEXT: &str = "A man passing a ball from his left hand to his right hand.";
pub const BACKGROUND_TEXT: &str = "A bench by a lake from foggy morning to sunny afternoon.";

pub fn attribute_record(id: &str, object: &str, from: &str, to: &str, text: &str) -> serde_json::Value {
    json!({
        "id": id,
        "category": "attribute",
        "text": text,
        "start_state": {"objects": [object], "attributes": [[object, from]]},
        "end_state": {"objects": [object], "attributes": [[object, to]]},
        "transition_object": object,
        "start_value": from,
        "end_value": to,
    })
}

pub fn relation_record(id: &str) -> serde_json::Value {
    let objects = ["ball", "left hand", "right hand", "man"];
    json!({
        "id": id,
        "category": "object_relation",
        "text": RELATION_TEXT,
        "start_state": {"objects": objects, "relations": [["ball", "left hand"]]},
        "end_state": {"objects": objects, "relations": [["ball", "right hand"]]},
        "transition_object": "ball",
        "start_value": "left hand",
        "end_value": "right hand",
        "distractors": ["man"],
    })
}

pub fn background_record(id: &str) -> serde_json::Value {
    json!({
        "id": id,
        "category": "background",
        "text": BACKGROUND_TEXT,
        "start_state": {"objects": ["bench", "lake"], "attributes": [["lake", "foggy morning"]]},
        "end_state": {"objects": ["bench", "lake"], "attributes": [["lake", "sunny afternoon"]]},
        "transition_object": "lake",
        "start_value": "foggy morning",
        "end_value": "sunny afternoon",
        "distractors": ["bench"],
    })
}

pub fn write_corpus(path: &Path, records: &[serde_json::Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// The three exemplar prompts, one per category.
pub fn toy_corpus(path: &Path) {
    write_corpus(
        path,
        &[
            attribute_record("attr-001", "chameleon", "brown", "bright green", ATTRIBUTE_TEXT),
            relation_record("rel-001"),
            background_record("bg-001"),
        ],
    );
}

/// LLM replies for the toy corpus: each prompt answered with its exemplar.
pub fn toy_replies() -> Vec<(String, String)> {
    vec![
        (ATTRIBUTE_TEXT.to_string(), EXEMPLAR_ATTRIBUTE.to_string()),
        (RELATION_TEXT.to_string(), EXEMPLAR_RELATION.to_string()),
        (BACKGROUND_TEXT.to_string(), EXEMPLAR_BACKGROUND.to_string()),
    ]
}

/// Writes `frames` as `dir/0001.png`, `dir/0002.png`, ...
pub fn write_frame_dir(dir: &Path, frames: &[RgbImage]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, f) in frames.iter().enumerate() {
        f.save(dir.join(format!("{:04}.png", i + 1))).unwrap();
    }
}

pub fn solid(w: u32, h: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(w, h, Rgb(rgb))
}

/// `n` frames blending linearly from `from` to `to`.
pub fn gradient(n: usize, from: [u8; 3], to: [u8; 3]) -> Vec<RgbImage> {
    (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1).max(1) as f64;
            let c = [0, 1, 2].map(|k| (from[k] as f64 + (to[k] as f64 - from[k] as f64) * t).round() as u8);
            solid(8, 8, c)
        })
        .collect()
}

/// One attribute case for the colour-probe judge.
#[derive(Clone)]
pub struct ColourCase {
    pub object: &'static str,
    pub from: (&'static str, [u8; 3]),
    pub to: (&'static str, [u8; 3]),
}

impl ColourCase {
    pub fn text(&self) -> String {
        format!("A {} changing from {} to {}.", self.object, self.from.0, self.to.0)
    }

    /// Assertion text in the attribute exemplar layout.
    pub fn assertions(&self) -> String {
        let (o, a, b) = (self.object, self.from.0, self.to.0);
        format!(
            "{text}\n\nTransition object: {o}, start: {a}, end: {b}\n\nother objects: None\n\n\
             - Check \"Transition Completion\"\n\n\
             Input: Frame 1\n\nQ: Is there a {a} {o}?\n\n\
             Input: Frame 16\n\nQ: Is there a {b} {o}?\n\n\
             Input: Frame 9\n\nQ: Is there a {o} with its color in between {a} and {b}?\n\n\
             Input: Frame 1, 5, 9, 13, 16\n\nQ: Has the {o} changed color from {a} to {b}?\n\n\
             - Check \"Transition object consistency\"\n\n\
             Input: Frame 1, 6\n\nQ: Aside from color difference, do Frame 1 and Frame 6 show the same {o}?\n\n\
             - Check \"Other objects\"\n\nNone",
            text = self.text()
        )
    }
}

pub fn colour_cases() -> Vec<ColourCase> {
    let c = |object, from, fc, to, tc| ColourCase {
        object,
        from: (from, fc),
        to: (to, tc),
    };
    vec![
        c("chameleon", "brown", [120, 72, 30], "green", [40, 200, 60]),
        c("leaf", "green", [30, 160, 40], "red", [200, 30, 30]),
        c("car", "silver", [190, 190, 200], "black", [15, 15, 15]),
        c("kettle", "grey", [128, 128, 128], "red", [220, 40, 20]),
        c("balloon", "yellow", [240, 220, 30], "blue", [30, 60, 230]),
        c("lamp", "white", [250, 250, 250], "orange", [240, 140, 20]),
        c("cake", "pale", [240, 220, 180], "brown", [110, 60, 20]),
        c("sky", "blue", [60, 120, 230], "purple", [110, 40, 140]),
        c("apple", "green", [90, 200, 60], "red", [200, 20, 30]),
        c("shirt", "white", [245, 245, 245], "pink", [240, 120, 170]),
    ]
}

fn member_means(png: &[u8], members: usize) -> Vec<[f64; 3]> {
    let img = image::load_from_memory(png).unwrap().to_rgb8();
    let w = img.width() / members as u32;
    (0..members as u32)
        .map(|m| {
            let mut sum = [0.0; 3];
            let mut n = 0.0;
            for y in 0..img.height() {
                for x in m * w..(m + 1) * w {
                    let p = img.get_pixel(x, y);
                    for k in 0..3 {
                        sum[k] += p[k] as f64;
                    }
                    n += 1.0;
                }
            }
            sum.map(|s| s / n)
        })
        .collect()
}

/// Position of `c` along the segment `a -> b`, clamped to [0, 1].
fn progress(c: [f64; 3], a: [u8; 3], b: [u8; 3]) -> f64 {
    let d: Vec<f64> = (0..3).map(|k| b[k] as f64 - a[k] as f64).collect();
    let num: f64 = (0..3).map(|k| (c[k] - a[k] as f64) * d[k]).sum();
    let den: f64 = d.iter().map(|x| x * x).sum();
    (num / den).clamp(0.0, 1.0)
}

/// A judge that reads colours off the composite: single-frame colour
/// questions compare the frame with the named endpoint colours, change
/// questions require monotone progress from start to end.
pub fn colour_probe_judge(cases: Vec<ColourCase>) -> FnJudge {
    let by_object: HashMap<&'static str, ColourCase> = cases.into_iter().map(|c| (c.object, c)).collect();
    FnJudge::new("colour-probe", move |png, prompt| {
        let members = prompt
            .strip_prefix("The image shows ")
            .and_then(|s| s.split_whitespace().next())
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap_or(1);
        let case = by_object
            .values()
            .find(|c| prompt.contains(&format!(" {}", c.object)))
            .expect("question names a known object");
        let t: Vec<f64> = member_means(png, members)
            .into_iter()
            .map(|m| progress(m, case.from.1, case.to.1))
            .collect();
        let yes = if prompt.contains("same") {
            true
        } else if prompt.contains("changed") {
            t.windows(2).all(|w| w[1] >= w[0] - 1e-9) && t[0] < 0.25 && t[t.len() - 1] > 0.75
        } else if prompt.contains("in between") {
            (0.25..=0.75).contains(&t[0])
        } else if prompt.contains(&format!("a {} {}", case.from.0, case.object)) {
            t[0] < 0.25
        } else {
            t[0] > 0.75
        };
        Ok(if yes { "Yes".into() } else { "No".into() })
    })
}
