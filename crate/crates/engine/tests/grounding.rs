mod common;

use serde_json::json;

use common::*;
use searchpix_core::{CandidateSource, EvidenceLog, TargetHypothesis, Task};
use searchpix_engine::gateway::mock::ScriptEntry;
use searchpix_engine::grounding::{bind_target, generate_fallback_candidates};
use searchpix_engine::{Gateway, PromptCatalog, RunConfig, Session, Variant};

const SCOPE: &str = "qa_1.ground";
const ENTITY: &str = "Apple Watch SE 3";

fn h() -> TargetHypothesis {
    let mut h = TargetHypothesis::new(ENTITY, "smartwatch");
    h.key_cues = vec!["rounded square face".into()];
    h
}

fn appearance() -> ScriptEntry {
    e(
        "appearance",
        json!({"visual_description": "A compact smartwatch.", "shape": "flat", "color": "silver", "distinctive_features": ["digital crown", "sport band"]}),
    )
}

fn score(sup: u8, con: u8) -> ScriptEntry {
    e(
        "score_candidate",
        json!({"support_score": sup, "contradiction_score": con, "confidence": 0.5, "reason": "r"}),
    )
}

fn ref_match(m: u8) -> ScriptEntry {
    e("ref_match", json!({"match_score": m, "reason": "r"}))
}

struct Fixture {
    _dir: tempfile::TempDir,
    gw: Gateway,
    scene: String,
}

fn fixture(script: Vec<ScriptEntry>, refs: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let scene = write_png(dir.path(), "scene.png", 400, 300, [20, 20, 20]);
    let mut names = Vec::new();
    for i in 0..refs {
        let name = format!("ref{i}.png");
        write_png(dir.path(), &name, 32, 32, [200, 200, 200]);
        names.push(name);
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let gw = gateway_with_refs(dir.path(), SCOPE, script, ENTITY, &refs);
    Fixture { _dir: dir, gw, scene }
}

fn run(
    f: &Fixture,
    cfg: &RunConfig,
) -> (
    searchpix_engine::Result<searchpix_engine::BindResult>,
    Vec<String>,
) {
    let cat = PromptCatalog::builtin();
    let mut s = Session::new(&f.gw, &cat, cfg, SCOPE, Some(Task::Ground), "Which watch?");
    let scene = f.gw.fetch_image(&f.scene).unwrap();
    let r = bind_target(&mut s, &scene, &h(), &EvidenceLog::new());
    let ids = s
        .trace
        .events_of("llm_request")
        .map(|e| e.data["prompt_id"].as_str().unwrap().to_string())
        .collect();
    (r, ids)
}

#[test]
fn full_pipeline_with_references() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [120, 40, 300, 400], "confidence": 0.8, "reason": "r"}),
        ),
        e(
            "detect",
            json!({"detections": [
                {"label": "watch", "bbox": [121, 40, 300, 300]},
                {"label": "phone", "bbox": [10, 10, 60, 60]},
                {"label": "cup", "bbox": [320, 200, 390, 290]}
            ]}),
        ),
        e(
            "saliency",
            json!({"scores": [
                {"id": "candidate_1", "saliency_score": 0.9},
                {"id": "candidate_2", "saliency_score": 0.2},
                {"id": "candidate_3", "saliency_score": 0.6}
            ]}),
        ),
        // pool: direct(clamped to y2=300) first; watch duplicate dropped; cup; phone
        score(4, 1),
        ref_match(2),
        ref_match(3),
        score(2, 0),
        ref_match(1),
        ref_match(0),
        score(4, 0),
        ref_match(0),
        ref_match(0),
        e(
            "joint_rank",
            json!({"best_candidate_id": "candidate_1", "runner_up_candidate_id": "candidate_2", "confidence": 0.7, "reason": "r"}),
        ),
    ];
    let f = fixture(script, 2);
    let cfg = RunConfig::default();
    let (r, ids) = run(&f, &cfg);
    let r = r.unwrap();
    assert_eq!(r.pool.len(), 3);
    assert_eq!(r.pool[0].source, CandidateSource::Direct);
    assert_eq!(r.pool[0].bbox.to_array(), [120.0, 40.0, 300.0, 300.0]);
    assert_eq!(r.pool[1].label, "cup");
    assert_eq!(r.pool[2].label, "phone");
    // 4 - 1 + 0.5*3 + 1 = 5.5
    assert_eq!(r.scores["candidate_1"].fused, 5.5);
    assert_eq!(r.scores["candidate_1"].match_score, Some(3));
    assert_eq!(r.scores["candidate_2"].fused, 2.5);
    assert_eq!(r.scores["candidate_3"].fused, 4.0);
    assert_eq!(r.best.candidate_id, "candidate_1");
    assert_eq!(r.runner_up.unwrap().candidate_id, "candidate_3");
    assert!(!r.repaired);
    assert_eq!(ids.iter().filter(|i| *i == "score_candidate").count(), 3);
    assert_eq!(ids.iter().filter(|i| *i == "ref_match").count(), 6);
}

#[test]
fn direct_only_skips_fallback_and_scoring() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [10, 10, 50, 50], "confidence": 0.8, "reason": "r"}),
        ),
    ];
    let f = fixture(script, 0);
    let cfg = RunConfig::default().with_variant(Variant::DirectOnly);
    let (r, ids) = run(&f, &cfg);
    let r = r.unwrap();
    assert_eq!(r.best.source, CandidateSource::Direct);
    assert_eq!(ids, ["appearance", "direct_ground"]);
}

#[test]
fn direct_only_without_direct_uses_emergency_candidate() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": null, "confidence": 0.1, "reason": "not found"}),
        ),
        e(
            "detect",
            json!({"detections": [
                {"label": "a", "bbox": [0, 0, 10, 10]},
                {"label": "b", "bbox": [50, 50, 90, 90]}
            ]}),
        ),
        e(
            "saliency",
            json!({"scores": [
                {"id": "candidate_1", "saliency_score": 0.1},
                {"id": "candidate_2", "saliency_score": 0.8}
            ]}),
        ),
    ];
    let f = fixture(script, 0);
    let cfg = RunConfig::default().with_variant(Variant::DirectOnly);
    let (r, ids) = run(&f, &cfg);
    let r = r.unwrap();
    assert_eq!(r.pool.len(), 1);
    assert_eq!(r.best.label, "b");
    assert!(!ids.contains(&"score_candidate".to_string()));
}

#[test]
fn saliency_reask_then_uniform() {
    let script = vec![
        e(
            "detect",
            json!({"detections": [
                {"label": "a", "bbox": [0, 0, 10, 10]},
                {"label": "b", "bbox": [50, 50, 90, 90]}
            ]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.1}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_2", "saliency_score": 0.1}]}),
        ),
    ];
    let f = fixture(script, 0);
    let (cat, cfg) = (PromptCatalog::builtin(), RunConfig::default());
    let mut s = Session::new(&f.gw, &cat, &cfg, SCOPE, None, "q");
    let scene = f.gw.fetch_image(&f.scene).unwrap();
    let c = generate_fallback_candidates(&mut s, &scene, 8).unwrap();
    assert!(c.iter().all(|c| c.saliency == Some(0.5)));
    assert_eq!(c[0].label, "a");
}

#[test]
fn saliency_sorts_descending() {
    let script = vec![
        e(
            "detect",
            json!({"detections": [
                {"label": "a", "bbox": [0, 0, 10, 10]},
                {"label": "b", "bbox": [20, 20, 30, 30]},
                {"label": "c", "bbox": [40, 40, 50, 50]}
            ]}),
        ),
        e(
            "saliency",
            json!({"scores": [
                {"id": "candidate_1", "saliency_score": 0.9},
                {"id": "candidate_2", "saliency_score": 0.2},
                {"id": "candidate_3", "saliency_score": 0.6}
            ]}),
        ),
    ];
    let f = fixture(script, 0);
    let (cat, cfg) = (PromptCatalog::builtin(), RunConfig::default());
    let mut s = Session::new(&f.gw, &cat, &cfg, SCOPE, None, "q");
    let scene = f.gw.fetch_image(&f.scene).unwrap();
    let c = generate_fallback_candidates(&mut s, &scene, 8).unwrap();
    let ids: Vec<&str> = c.iter().map(|c| c.candidate_id.as_str()).collect();
    assert_eq!(ids, ["candidate_1", "candidate_3", "candidate_2"]);
}

#[test]
fn max_boxes_one() {
    let script = vec![
        e(
            "detect",
            json!({"detections": [
                {"label": "a", "bbox": [0, 0, 10, 10]},
                {"label": "b", "bbox": [20, 20, 30, 30]}
            ]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.9}]}),
        ),
    ];
    let f = fixture(script, 0);
    let (cat, cfg) = (PromptCatalog::builtin(), RunConfig::default());
    let mut s = Session::new(&f.gw, &cat, &cfg, SCOPE, None, "q");
    let scene = f.gw.fetch_image(&f.scene).unwrap();
    assert_eq!(generate_fallback_candidates(&mut s, &scene, 1).unwrap().len(), 1);
}

#[test]
fn visual_repair_keeps_better_pass() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [10, 10, 50, 50], "confidence": 0.3, "reason": "r"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "person", "bbox": [200, 20, 300, 200]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.9}]}),
        ),
        score(1, 4),
        score(1, 4),
        e(
            "joint_rank",
            json!({"best_candidate_id": "candidate_1", "runner_up_candidate_id": "", "confidence": 0.3, "reason": "r"}),
        ),
        e("visual_repair", hyp("Momo", "person")),
        e(
            "direct_ground",
            json!({"bbox": [200, 20, 300, 200], "confidence": 0.9, "reason": "r"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "person", "bbox": [200, 20, 300, 200]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.9}]}),
        ),
        score(4, 0),
    ];
    let f = fixture(script, 0);
    let (r, _) = run(&f, &RunConfig::default());
    let r = r.unwrap();
    assert!(r.repaired);
    assert_eq!(r.hypothesis_used.entity_name, "Momo");
    assert_eq!(r.pool.len(), 1);
    assert_eq!(r.best_scores().fused, 5.0);
}

#[test]
fn visual_repair_worse_pass_keeps_original() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [10, 10, 50, 50], "confidence": 0.3, "reason": "r"}),
        ),
        e("detect", json!({"detections": []})),
        score(0, 1),
        e("visual_repair", hyp("Other", "object")),
        e(
            "direct_ground",
            json!({"bbox": null, "confidence": 0.0, "reason": "r"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "x", "bbox": [100, 100, 150, 150]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.5}]}),
        ),
        score(0, 3),
    ];
    let f = fixture(script, 0);
    let (r, ids) = run(&f, &RunConfig::default());
    let r = r.unwrap();
    assert_eq!(ids.iter().filter(|i| *i == "score_candidate").count(), 2);
    assert!(!r.repaired);
    assert_eq!(r.hypothesis_used.entity_name, ENTITY);
    // 0 - 1 + 1 (direct bonus) = 0 against -3 for the repaired pass
    assert_eq!(r.best_scores().fused, 0.0);
}

#[test]
fn no_repair_above_threshold() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [10, 10, 50, 50], "confidence": 0.3, "reason": "r"}),
        ),
        e("detect", json!({"detections": []})),
        score(2, 0),
    ];
    let f = fixture(script, 0);
    let (r, ids) = run(&f, &RunConfig::default());
    assert_eq!(r.unwrap().best_scores().fused, 3.0);
    assert!(!ids.contains(&"visual_repair".to_string()));
}

#[test]
fn nothing_found_is_no_candidates() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": null, "confidence": 0.0, "reason": "r"}),
        ),
        e("detect", json!({"detections": []})),
    ];
    let f = fixture(script, 0);
    let (r, _) = run(&f, &RunConfig::default());
    assert_eq!(r.unwrap_err().code(), "no-candidates");
}

#[test]
fn score_clamped_and_schema_failure_zeroed() {
    let script = vec![
        appearance(),
        e(
            "direct_ground",
            json!({"bbox": [10, 10, 50, 50], "confidence": 0.3, "reason": "r"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "x", "bbox": [100, 100, 150, 150]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.5}]}),
        ),
        score(9, 0),
        e("score_candidate", json!("nonsense")),
        e("score_candidate", json!("still nonsense")),
        e(
            "joint_rank",
            json!({"best_candidate_id": "candidate_9", "runner_up_candidate_id": "", "confidence": 0.3, "reason": "r"}),
        ),
    ];
    let f = fixture(script, 0);
    let (r, _) = run(&f, &RunConfig::default());
    let r = r.unwrap();
    assert_eq!(r.scores["candidate_1"].support, 5);
    assert_eq!(r.scores["candidate_2"].support, 0);
    assert_eq!(r.pool.len(), 2);
    assert!(r.joint.is_none());
}
