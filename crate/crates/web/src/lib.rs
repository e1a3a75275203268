//! Browser bindings: generate a synthetic walk, inspect a BVH clip as joint
//! positions, and score one clip against another.

use pose2motion::bvh::{parse_bvh, write_bvh};
use pose2motion::fixtures::{generate_fixture_corpus, FixtureSkeleton, FixtureSpec};
use pose2motion::metrics::{evaluate_clip, ClipMetrics, Reference};
use pose2motion::motion::{forward_kinematics, DEFAULT_CONTACT_EPS};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
pub struct JointInfo {
    pub name: String,
    pub parent: Option<usize>,
}

#[derive(Serialize)]
pub struct Inspection {
    pub joints: Vec<JointInfo>,
    pub end_effectors: Vec<usize>,
    pub feet: Vec<usize>,
    pub frame_rate: f64,
    /// `positions[t][j]`, in heights, with the root path added back.
    pub positions: Vec<Vec<[f64; 3]>>,
}

fn kind(name: &str) -> Result<FixtureSkeleton, String> {
    match name {
        "biped8" => Ok(FixtureSkeleton::Biped8),
        "biped12" => Ok(FixtureSkeleton::Biped12),
        "biped11" => Ok(FixtureSkeleton::Biped11),
        other => Err(format!("unknown skeleton {other:?}; expected biped8, biped12 or biped11")),
    }
}

pub fn walk(skeleton: &str, frames: usize, seed: u64) -> Result<String, String> {
    if !(4..=2000).contains(&frames) {
        return Err(format!("frame count must lie in 4..=2000, got {frames}"));
    }
    let k = kind(skeleton)?;
    let spec = FixtureSpec { source: k, source_clips: 1, target_clips: 1, source_frames: frames, ..Default::default() };
    let corpus = generate_fixture_corpus(&spec, seed).map_err(|e| e.to_string())?;
    corpus.source[0].bvh().map_err(|e| e.to_string())
}

pub fn inspect(bvh: &str) -> Result<Inspection, String> {
    let (sk, m) = parse_bvh(bvh).map_err(|e| e.to_string())?;
    let pos = forward_kinematics(&sk, &m).map_err(|e| e.to_string())?;
    let o = m.origin;
    let positions = (0..pos.frames())
        .map(|t| pos.frame(t).iter().map(|p| [p[0] + o[0], p[1] + o[1], p[2] + o[2]]).collect())
        .collect();
    Ok(Inspection {
        joints: sk.joints().iter().map(|j| JointInfo { name: j.name.clone(), parent: j.parent }).collect(),
        end_effectors: sk.end_effectors().to_vec(),
        feet: sk.feet().to_vec(),
        frame_rate: m.frame_rate,
        positions,
    })
}

/// Scores `candidate` against `reference`, both on the same skeleton.
pub fn compare(candidate: &str, reference: &str) -> Result<ClipMetrics, String> {
    let (sk, a) = parse_bvh(candidate).map_err(|e| format!("candidate: {e}"))?;
    let (rk, b) = parse_bvh(reference).map_err(|e| format!("reference: {e}"))?;
    if !sk.matches(&rk, 1e-5) {
        return Err("the two clips use different skeletons".into());
    }
    if a.len() != b.len() {
        return Err(format!("frame counts differ: {} vs {}", a.len(), b.len()));
    }
    evaluate_clip("candidate", &sk, &a, Reference::Truth(&b), DEFAULT_CONTACT_EPS).map_err(|e| e.to_string())
}

/// Round-trips a clip through the parser and writer.
pub fn normalize(bvh: &str) -> Result<String, String> {
    let (sk, m) = parse_bvh(bvh).map_err(|e| e.to_string())?;
    write_bvh(&sk, &m).map_err(|e| e.to_string())
}

fn js<T: Serialize>(v: Result<T, String>) -> Result<String, JsError> {
    let v = v.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = generateWalk)]
pub fn generate_walk(skeleton: &str, frames: usize, seed: u32) -> Result<String, JsError> {
    walk(skeleton, frames, seed as u64).map_err(|e| JsError::new(&e))
}

/// JSON with joints, sets and per-frame positions.
#[wasm_bindgen(js_name = inspectBvh)]
pub fn inspect_bvh(bvh: &str) -> Result<String, JsError> {
    js(inspect(bvh))
}

/// JSON with the five clip metrics; `null` where a metric does not apply.
#[wasm_bindgen(js_name = compareBvh)]
pub fn compare_bvh(candidate: &str, reference: &str) -> Result<String, JsError> {
    js(compare(candidate, reference))
}

#[wasm_bindgen(js_name = normalizeBvh)]
pub fn normalize_bvh(bvh: &str) -> Result<String, JsError> {
    normalize(bvh).map_err(|e| JsError::new(&e))
}
