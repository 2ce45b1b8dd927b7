//! Hidden-target resolution: decompose the question, run the bounded
//! SEARCH/THINK/ANSWER loop, normalize onto the visible target, then
//! verify and repair.

use serde::Serialize;
use serde_json::json;

use searchpix_core::{AgentAction, EvidenceLog, TargetHypothesis};

use crate::error::Result;
use crate::prompts;
use crate::session::Session;
use crate::structured::{Decomposition, VerificationReply};
use crate::trace::TraceEvent;

pub const MAX_SUB_QUESTIONS: usize = 3;

const THINK_CONSTRAINT: &str = "\n\nConstraint reminder: you already used THINK. \
You may use at most one THINK before you must SEARCH with a different query or ANSWER. \
Respond with SEARCH or ANSWER now.";

/// Loop bookkeeping; `round` counts SEARCH and ANSWER actions only.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoopState {
    pub round: u32,
    pub max_rounds: u32,
    pub consecutive_thinks: u32,
    pub total_actions: u32,
    pub evidence: EvidenceLog,
    pub last_action: Option<AgentAction>,
}

impl LoopState {
    pub fn new(max_rounds: u32) -> Self {
        Self {
            max_rounds,
            ..Self::default()
        }
    }

    pub fn action_cap(&self) -> u32 {
        2 * self.max_rounds + 2
    }

    fn exhausted(&self) -> bool {
        self.round >= self.max_rounds || self.total_actions >= self.action_cap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub is_consistent: bool,
    pub consistency_score: f64,
    pub issues: Vec<String>,
    pub followup_queries: Vec<String>,
}

impl VerificationReport {
    pub fn needs_repair(&self, tau_verify: f64) -> bool {
        !self.is_consistent || self.consistency_score < tau_verify
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    pub hypothesis: TargetHypothesis,
    pub evidence: EvidenceLog,
    pub sub_questions: Vec<String>,
    /// Answer given inside the loop, if any.
    pub loop_answer: Option<TargetHypothesis>,
    pub forced: bool,
    pub verification: Option<VerificationReport>,
    pub repair_cycles: u32,
}

fn join_list(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".to_string()
    } else {
        items.join("; ")
    }
}

fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Normalize a model-produced hypothesis; `None` if it stays invalid.
fn accept_hypothesis(s: &mut Session, mut h: TargetHypothesis, stage: &str) -> Option<TargetHypothesis> {
    for note in h.normalize() {
        s.warn(format!("{stage}: {note}"));
    }
    match h.validate() {
        Ok(()) => Some(h),
        Err(e) => {
            s.warn(format!("{stage}: {e}"));
            None
        }
    }
}

pub fn decompose_question(s: &mut Session, q: &str) -> Result<Vec<String>> {
    let reply = s.ask::<Decomposition>(prompts::DECOMPOSE, &[("question", q)], vec![]);
    let mut subs: Vec<String> = match reply {
        Ok(d) => d
            .sub_questions
            .into_iter()
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect(),
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("decompose: {e}; using the question itself"));
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    if subs.len() > MAX_SUB_QUESTIONS {
        s.warn(format!(
            "decompose: {} sub-questions truncated to {MAX_SUB_QUESTIONS}",
            subs.len()
        ));
        subs.truncate(MAX_SUB_QUESTIONS);
    }
    if subs.is_empty() {
        subs.push(q.to_string());
    }
    s.event("decomposition", json!({ "sub_questions": subs }));
    Ok(subs)
}

fn log_action(s: &mut Session, state: &LoopState, action: &str, accepted: bool, note: Option<String>) {
    s.event(
        "agent_action",
        json!({
            "action": action,
            "accepted": accepted,
            "round": state.round,
            "total_actions": state.total_actions,
            "note": note,
        }),
    );
}

/// Run the action loop. Returns the state (with evidence) and the answer,
/// if the agent gave one before a budget ran out.
pub fn run_search_loop(
    s: &mut Session,
    q: &str,
    sub_questions: &[String],
    max_rounds: u32,
) -> Result<(LoopState, Option<TargetHypothesis>)> {
    let mut state = LoopState::new(max_rounds.max(1));
    let subs = numbered(sub_questions);
    let mut restate = false;
    while !state.exhausted() {
        let round_num = (state.round + 1).to_string();
        let max = state.max_rounds.to_string();
        let evidence = state.evidence.render();
        let mut prompt = s.render(
            prompts::AGENT_ROUND,
            &[
                ("question", q),
                ("sub_questions", &subs),
                ("evidence", &evidence),
                ("round_num", &round_num),
                ("max_rounds", &max),
            ],
        )?;
        if restate {
            prompt.push_str(THINK_CONSTRAINT);
        }
        let reply = s.chat::<AgentAction>(prompts::AGENT_ROUND, prompt, vec![]);
        state.total_actions += 1;
        let action = match reply {
            Ok(a) => a,
            Err(e) if e.is_schema_violation() => {
                log_action(s, &state, "INVALID", false, Some(e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        match &action {
            AgentAction::Think { .. } if state.consecutive_thinks >= 1 => {
                restate = true;
                log_action(
                    s,
                    &state,
                    "THINK",
                    false,
                    Some("consecutive THINK rejected".into()),
                );
                continue;
            }
            AgentAction::Think { reasoning } => {
                state.consecutive_thinks += 1;
                let note = Some(reasoning.clone());
                log_action(s, &state, "THINK", true, note);
            }
            AgentAction::Search { query } if query.trim().is_empty() => {
                log_action(s, &state, "SEARCH", false, Some("empty query".into()));
                continue;
            }
            AgentAction::Search { query } => {
                state.round += 1;
                state.consecutive_thinks = 0;
                restate = false;
                let item = s.search_evidence(state.round, query.trim())?;
                state.evidence.push(item)?;
                log_action(s, &state, "SEARCH", true, Some(query.clone()));
            }
            AgentAction::Answer(h) => {
                let Some(h) = accept_hypothesis(s, h.clone(), "answer") else {
                    log_action(s, &state, "ANSWER", false, Some("invalid hypothesis".into()));
                    continue;
                };
                state.round += 1;
                state.consecutive_thinks = 0;
                log_action(s, &state, "ANSWER", true, Some(h.entity_name.clone()));
                state.last_action = Some(AgentAction::Answer(h.clone()));
                return Ok((state, Some(h)));
            }
        }
        state.last_action = Some(action);
    }
    s.event(
        "loop_exhausted",
        json!({"round": state.round, "total_actions": state.total_actions}),
    );
    Ok((state, None))
}

fn minimal_hypothesis(evidence: &EvidenceLog, q: &str) -> TargetHypothesis {
    let name = evidence
        .items()
        .last()
        .map(|i| i.query.clone())
        .unwrap_or_else(|| q.to_string());
    TargetHypothesis::new(name, "object")
}

pub fn force_answer(s: &mut Session, q: &str, evidence: &EvidenceLog) -> Result<TargetHypothesis> {
    let ev = evidence.render();
    let reply = s.ask::<TargetHypothesis>(
        prompts::FORCE_ANSWER,
        &[("question", q), ("evidence", &ev)],
        vec![],
    );
    let h = match reply {
        Ok(h) => accept_hypothesis(s, h, "force_answer"),
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("force_answer: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(h.unwrap_or_else(|| {
        s.warn("force_answer: using minimal fallback hypothesis");
        minimal_hypothesis(evidence, q)
    }))
}

/// Map the current answer onto the entity that is actually visible. The
/// current answer, when present, is appended to the evidence text.
pub fn resolve_final_target(
    s: &mut Session,
    q: &str,
    evidence: &EvidenceLog,
    current: Option<&TargetHypothesis>,
) -> Result<TargetHypothesis> {
    let mut ev = evidence.render();
    if let Some(h) = current {
        ev.push_str(&format!(
            "\nCurrent answer: {} ({})",
            h.entity_name, h.visual_category
        ));
    }
    let reply = s.ask::<TargetHypothesis>(
        prompts::FINAL_TARGET,
        &[("question", q), ("evidence", &ev)],
        vec![],
    );
    let h = match reply {
        Ok(h) => accept_hypothesis(s, h, "final_target"),
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("final_target: {e}"));
            None
        }
        Err(e) => return Err(e),
    };
    Ok(h.or_else(|| current.cloned())
        .unwrap_or_else(|| minimal_hypothesis(evidence, q)))
}

/// `None` when the verifier reply is unusable; the caller then accepts
/// the hypothesis as is.
pub fn verify_hypothesis(
    s: &mut Session,
    q: &str,
    h: &TargetHypothesis,
    evidence: &EvidenceLog,
) -> Result<Option<VerificationReport>> {
    let ev = evidence.render();
    let cues = join_list(&h.key_cues);
    let reply = s.ask::<VerificationReply>(
        prompts::VERIFY,
        &[
            ("question", q),
            ("entity_name", &h.entity_name),
            ("visual_category", &h.visual_category),
            ("entity_type", h.entity_type.as_str()),
            ("key_cues", &cues),
            ("evidence", &ev),
        ],
        vec![],
    );
    let r = match reply {
        Ok(r) => r,
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("verify: {e}; hypothesis accepted unverified"));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let mut score = r.consistency_score;
    if !score.is_finite() || !(0.0..=5.0).contains(&score) {
        s.warn(format!("verify: consistency_score {score} clamped to [0,5]"));
        score = if score.is_finite() {
            score.clamp(0.0, 5.0)
        } else {
            0.0
        };
    }
    let mut followups: Vec<String> = r
        .followup_queries
        .into_iter()
        .map(|f| f.trim().to_string())
        .filter(|f| !f.is_empty())
        .collect();
    if followups.len() > s.config.max_followups {
        s.warn(format!(
            "verify: {} followups truncated to {}",
            followups.len(),
            s.config.max_followups
        ));
        followups.truncate(s.config.max_followups);
    }
    let mut report = VerificationReport {
        is_consistent: r.is_consistent,
        consistency_score: score,
        issues: r.issues,
        followup_queries: followups,
    };
    if !report.needs_repair(s.config.thresholds.verify) {
        report.followup_queries.clear();
    }
    s.event("verification", json!(report));
    Ok(Some(report))
}

/// Run the report's followup searches (appended to `evidence`), then ask
/// for a better hypothesis. `None` when the reply is unusable.
pub fn repair_hypothesis(
    s: &mut Session,
    q: &str,
    h: &TargetHypothesis,
    report: &VerificationReport,
    evidence: &mut EvidenceLog,
) -> Result<Option<TargetHypothesis>> {
    for query in report.followup_queries.iter().take(s.config.max_followups) {
        let item = s.search_evidence(evidence.last_round() + 1, query)?;
        evidence.push(item)?;
    }
    let ev = evidence.render();
    let issues = if report.issues.is_empty() {
        "(none stated)".to_string()
    } else {
        report
            .issues
            .iter()
            .map(|i| format!("- {i}"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let reply = s.ask::<TargetHypothesis>(
        prompts::REPAIR,
        &[
            ("question", q),
            ("entity_name", &h.entity_name),
            ("issues", &issues),
            ("evidence", &ev),
        ],
        vec![],
    );
    match reply {
        Ok(h) => Ok(accept_hypothesis(s, h, "repair")),
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("repair: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Full resolution pipeline for one question.
pub fn resolve_hidden_target(s: &mut Session, q: &str) -> Result<Resolution> {
    let sub_questions = decompose_question(s, q)?;
    let (state, loop_answer) = run_search_loop(s, q, &sub_questions, s.config.max_rounds)?;
    let mut evidence = state.evidence;
    let forced = loop_answer.is_none();
    let answer = match &loop_answer {
        Some(h) => h.clone(),
        None => force_answer(s, q, &evidence)?,
    };
    let mut current = resolve_final_target(s, q, &evidence, Some(&answer))?;

    let tau = s.config.thresholds.verify;
    let mut best: Option<(TargetHypothesis, VerificationReport)> = None;
    let mut cycles = 0;
    let (hypothesis, verification) = loop {
        let Some(report) = verify_hypothesis(s, q, &current, &evidence)? else {
            break (current, None);
        };
        if !report.needs_repair(tau) {
            break (current, Some(report));
        }
        if best
            .as_ref()
            .is_none_or(|(_, r)| report.consistency_score > r.consistency_score)
        {
            best = Some((current.clone(), report.clone()));
        }
        if cycles >= s.config.max_repair_cycles {
            let (h, r) = best.take().expect("set above");
            break (h, Some(r));
        }
        cycles += 1;
        match repair_hypothesis(s, q, &current, &report, &mut evidence)? {
            Some(h) => current = h,
            None => {
                let (h, r) = best.take().expect("set above");
                break (h, Some(r));
            }
        }
    };
    s.event(
        "resolution",
        json!({"hypothesis": hypothesis, "forced": forced, "repair_cycles": cycles}),
    );
    Ok(Resolution {
        hypothesis,
        evidence,
        sub_questions,
        loop_answer,
        forced,
        verification,
        repair_cycles: cycles,
    })
}

/// Action counts recovered from a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BudgetReplay {
    pub searches: u32,
    pub answers: u32,
    pub thinks: u32,
    pub rejected: u32,
    pub total_actions: u32,
    pub max_consecutive_thinks: u32,
}

/// Replay the `agent_action` events of a trace.
pub fn replay_budget<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> BudgetReplay {
    let mut r = BudgetReplay::default();
    let mut run = 0;
    for e in events.into_iter().filter(|e| e.kind == "agent_action") {
        r.total_actions += 1;
        if e.data["accepted"] != json!(true) {
            r.rejected += 1;
            continue;
        }
        match e.data["action"].as_str() {
            Some("THINK") => {
                r.thinks += 1;
                run += 1;
                r.max_consecutive_thinks = r.max_consecutive_thinks.max(run);
            }
            Some("SEARCH") => {
                r.searches += 1;
                run = 0;
            }
            Some("ANSWER") => {
                r.answers += 1;
                run = 0;
            }
            _ => {}
        }
    }
    r
}
