mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use serde_json::json;

use common::*;
use searchpix_core::Task;
use searchpix_engine::agent::{
    force_answer, replay_budget, resolve_hidden_target, run_search_loop, verify_hypothesis,
};
use searchpix_engine::gateway::mock::{FixtureImageSearch, FixtureSearch, GeometricSegmenter};
use searchpix_engine::{Gateway, PromptCatalog, RunConfig, Session, ToolError};

const Q: &str = "Which product does the brand ambassador hold?";

fn session<'a>(gw: &'a Gateway, cat: &'a PromptCatalog, cfg: &'a RunConfig) -> Session<'a> {
    Session::new(gw, cat, cfg, "qa_1.ground", Some(Task::Ground), Q)
}

fn cfg(max_rounds: u32) -> RunConfig {
    RunConfig {
        max_rounds,
        ..RunConfig::default()
    }
}

fn verified(score: f64) -> serde_json::Value {
    json!({"is_consistent": score >= 3.0, "consistency_score": score, "issues": [], "followup_queries": []})
}

#[test]
fn search_then_answer() {
    let script = vec![
        e(
            "decompose",
            json!({"sub_questions": ["Who is the NE:AR brand ambassador in 2025?"]}),
        ),
        e("agent_round", search("NE:AR brand ambassador 2025")),
        e("agent_round", answer("Apple Watch SE 3")),
        e("final_target", hyp("Apple Watch SE 3", "smartwatch")),
        e("verify", verified(4.5)),
    ];
    let mut results = HashMap::new();
    results.insert(
        "NE:AR brand ambassador 2025".to_string(),
        vec![result("a"), result("b"), result("c")],
    );
    let gw = gateway("qa_1.ground", script, results);
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let r = resolve_hidden_target(&mut s, Q).unwrap();
    assert_eq!(r.hypothesis.entity_name, "Apple Watch SE 3");
    assert_eq!(r.hypothesis.visual_category, "smartwatch");
    assert_eq!(r.evidence.len(), 1);
    assert_eq!(r.evidence.items()[0].results.len(), 3);
    assert!(!r.forced);
    assert_eq!(r.sub_questions.len(), 1);
    let replay = replay_budget(s.trace.events());
    assert_eq!((replay.searches, replay.answers), (1, 1));
}

#[test]
fn single_round_prompt_demands_answer() {
    let script = vec![
        e("decompose", json!({"sub_questions": [Q]})),
        e("agent_round", answer("X")),
        e("final_target", hyp("X", "object")),
        e("verify", verified(4.0)),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(1));
    let mut s = session(&gw, &cat, &cfg);
    resolve_hidden_target(&mut s, Q).unwrap();
    let prompt = s
        .trace
        .events_of("llm_request")
        .find(|e| e.data["prompt_id"] == "agent_round")
        .unwrap()
        .data["prompt"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(prompt.contains("Interaction round 1 of 1."));
    assert!(prompt.contains("If this is interaction round 1, you MUST use ANSWER."));
}

#[test]
fn think_flood_hits_action_cap() {
    let t = 5;
    let mut script = vec![e("decompose", json!({"sub_questions": [Q]}))];
    script.extend((0..2 * t + 2).map(|_| e("agent_round", think())));
    script.push(e(
        "force_answer",
        json!({"entity_name": "Guess", "visual_category": "object", "confidence": 0.3, "remaining_ambiguities": ["a", "b"]}),
    ));
    script.push(e("final_target", hyp("Guess", "object")));
    script.push(e("verify", verified(3.5)));
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(t));
    let mut s = session(&gw, &cat, &cfg);
    let r = resolve_hidden_target(&mut s, Q).unwrap();
    assert!(r.forced);
    assert_eq!(r.hypothesis.entity_name, "Guess");
    let replay = replay_budget(s.trace.events());
    assert_eq!(replay.total_actions, 2 * t + 2);
    assert_eq!(replay.max_consecutive_thinks, 1);
    assert_eq!(replay.thinks, 1);
    // every rejection restates the constraint
    let restated = s
        .trace
        .events_of("llm_request")
        .filter(|e| e.data["prompt"].as_str().unwrap().contains("Constraint reminder"))
        .count();
    assert_eq!(restated as u32, 2 * t);
}

#[test]
fn loop_without_answer_returns_none() {
    let script = vec![
        e("agent_round", think()),
        e("agent_round", think()),
        e("agent_round", think()),
        e("agent_round", think()),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(1));
    let mut s = session(&gw, &cat, &cfg);
    let (state, h) = run_search_loop(&mut s, Q, &[Q.to_string()], 1).unwrap();
    assert!(h.is_none());
    assert_eq!(state.total_actions, 4);
}

#[test]
fn duplicate_search_consumes_round_from_cache() {
    let script = vec![e("agent_round", search("same")), e("agent_round", search("same"))];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(2));
    let mut s = session(&gw, &cat, &cfg);
    let (state, h) = run_search_loop(&mut s, Q, &[Q.to_string()], 2).unwrap();
    assert!(h.is_none());
    assert_eq!(state.round, 2);
    assert_eq!(state.evidence.len(), 2);
    assert_eq!(gw.stats().search_calls, 1);
    assert_eq!(gw.stats().search_cache_hits, 1);
}

#[test]
fn decompose_truncates_and_defaults() {
    let script = vec![
        e("decompose", json!({"sub_questions": ["a", "b", "c", "d", "e"]})),
        e("decompose", json!({"sub_questions": []})),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let subs = searchpix_engine::agent::decompose_question(&mut s, Q).unwrap();
    assert_eq!(subs, ["a", "b", "c"]);
    assert_eq!(s.trace.warnings().count(), 1);
    let subs = searchpix_engine::agent::decompose_question(&mut s, Q).unwrap();
    assert_eq!(subs, [Q]);
}

#[test]
fn final_target_replaces_intermediate_clue() {
    let script = vec![
        e(
            "decompose",
            json!({"sub_questions": ["Which event?", "Who walked it?"]}),
        ),
        e("agent_round", search("2025 fashion show")),
        e("agent_round", answer("2025 fashion show")),
        e(
            "final_target",
            json!({"entity_name": "Momo (TWICE member)", "visual_category": "person", "entity_type": "person", "key_cues": ["long dark hair"], "confidence": 0.7}),
        ),
        e("verify", verified(4.0)),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let r = resolve_hidden_target(&mut s, Q).unwrap();
    assert_eq!(r.loop_answer.unwrap().entity_name, "2025 fashion show");
    assert_eq!(r.hypothesis.entity_name, "Momo (TWICE member)");
    let ft_prompt = s
        .trace
        .events_of("llm_request")
        .find(|e| e.data["prompt_id"] == "final_target")
        .unwrap()
        .data["prompt"]
        .as_str()
        .unwrap()
        .to_string();
    assert!(ft_prompt.contains("Current answer: 2025 fashion show"));
}

#[test]
fn repair_with_followups_grows_evidence() {
    let script = vec![
        e("decompose", json!({"sub_questions": [Q]})),
        e("agent_round", search("q0")),
        e("agent_round", answer("Series 11")),
        e("final_target", hyp("Series 11", "smartwatch")),
        e(
            "verify",
            json!({"is_consistent": false, "consistency_score": 2.0, "issues": ["too generic"], "followup_queries": ["q1", "q2"]}),
        ),
        e("repair", hyp("Apple Watch SE 3", "smartwatch")),
        e("verify", verified(4.5)),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let r = resolve_hidden_target(&mut s, Q).unwrap();
    assert_eq!(r.hypothesis.entity_name, "Apple Watch SE 3");
    assert_eq!(r.evidence.len(), 3);
    let rounds: Vec<u32> = r.evidence.items().iter().map(|i| i.round).collect();
    assert_eq!(rounds, [1, 2, 3]);
    assert_eq!(r.repair_cycles, 1);
}

#[test]
fn two_failed_cycles_pick_best_score() {
    let bad = |score: f64| json!({"is_consistent": false, "consistency_score": score, "issues": [], "followup_queries": []});
    let script = vec![
        e("decompose", json!({"sub_questions": [Q]})),
        e("agent_round", answer("A")),
        e("final_target", hyp("A", "object")),
        e("verify", bad(2.0)),
        e("repair", hyp("B", "object")),
        e("verify", bad(2.5)),
        e("repair", hyp("C", "object")),
        e("verify", bad(1.0)),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let r = resolve_hidden_target(&mut s, Q).unwrap();
    assert_eq!(r.hypothesis.entity_name, "B");
    assert_eq!(r.repair_cycles, 2);
    assert_eq!(r.verification.unwrap().consistency_score, 2.5);
}

#[test]
fn verify_clamps_score() {
    let script = vec![e(
        "verify",
        json!({"is_consistent": true, "consistency_score": 9.0}),
    )];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let h = searchpix_core::TargetHypothesis::new("X", "object");
    let r = verify_hypothesis(&mut s, Q, &h, &Default::default())
        .unwrap()
        .unwrap();
    assert_eq!(r.consistency_score, 5.0);
    assert_eq!(s.trace.warnings().count(), 1);
}

#[test]
fn force_answer_schema_failure_degrades() {
    let script = vec![
        e("agent_round", search("last query")),
        e("force_answer", json!("garbage")),
        e("force_answer", json!({"no": "name"})),
    ];
    let gw = gateway("qa_1.ground", script, HashMap::new());
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(1));
    let mut s = session(&gw, &cat, &cfg);
    let (state, _) = run_search_loop(&mut s, Q, &[Q.to_string()], 1).unwrap();
    let h = force_answer(&mut s, Q, &state.evidence).unwrap();
    assert_eq!(h.entity_name, "last query");
    assert_eq!(h.confidence, 0.0);
    assert_eq!(h.visual_category, "object");
}

#[test]
fn llm_unreachable_propagates_with_trace() {
    let llm = FnLlm::new(|_: &searchpix_engine::ChatRequest| Err(ToolError::LlmUnreachable("down".into())));
    let gw = Gateway::with_backends(
        Box::new(llm),
        Box::new(FixtureSearch::from_map(HashMap::new())),
        Box::new(FixtureImageSearch::from_dir("/nonexistent").unwrap()),
        Box::new(GeometricSegmenter),
    );
    let (cat, cfg) = (PromptCatalog::builtin(), cfg(5));
    let mut s = session(&gw, &cat, &cfg);
    let err = resolve_hidden_target(&mut s, Q).unwrap_err();
    assert_eq!(err.code(), "llm-unreachable");
    assert_eq!(s.trace.events_of("tool_error").count(), 1);
}

fn random_reply(choice: u8, n: usize) -> String {
    match choice % 5 {
        0 => search(&format!("query {n}")).to_string(),
        1 | 2 => think().to_string(),
        3 => answer("Entity").to_string(),
        _ => "not json at all".to_string(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn budgets_hold_under_random_scripts(choices in proptest::collection::vec(any::<u8>(), 1..40), t in 1u32..6) {
        let mut i = 0usize;
        let llm = FnLlm::new(move |req: &searchpix_engine::ChatRequest| {
            let out = match req.prompt_id.as_str() {
                "decompose" => json!({"sub_questions": ["s"]}).to_string(),
                "agent_round" => {
                    let c = choices[i % choices.len()];
                    i += 1;
                    random_reply(c, i)
                }
                "verify" => verified(4.0).to_string(),
                _ => hyp("Entity", "object").to_string(),
            };
            Ok(out)
        });
        let gw = Gateway::with_backends(
            Box::new(llm),
            Box::new(FixtureSearch::from_map(HashMap::new())),
            Box::new(FixtureImageSearch::from_dir("/nonexistent").unwrap()),
            Box::new(GeometricSegmenter),
        );
        let (cat, cfg) = (PromptCatalog::builtin(), cfg(t));
        let mut s = session(&gw, &cat, &cfg);
        let r = resolve_hidden_target(&mut s, Q).unwrap();
        prop_assert!(!r.hypothesis.entity_name.is_empty());
        let replay = replay_budget(s.trace.events());
        prop_assert!(replay.searches + replay.answers <= t);
        prop_assert!(replay.answers <= 1);
        prop_assert!(replay.max_consecutive_thinks <= 1);
        prop_assert!(replay.total_actions <= 2 * t + 2);
        prop_assert!(r.evidence.len() as u32 <= t);
        let rounds: Vec<u32> = r.evidence.items().iter().map(|i| i.round).collect();
        prop_assert!(rounds.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(r.forced, replay.answers == 0);
    }
}
