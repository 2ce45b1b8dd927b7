//! Binding a resolved hypothesis to one box in the image: direct grounding,
//! fallback detection with saliency ranking, per-candidate scoring,
//! reference matching, joint ranking, score fusion and visual repair.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use searchpix_core::render::{compose_candidate_overview, crop_padded, encode_png, highlight_region};
use searchpix_core::{
    box_iou, candidate_id, AppearanceProfile, BBox, Candidate, CandidateScores, CandidateSource, EvidenceLog,
    TargetHypothesis,
};

use crate::config::FusionWeights;
use crate::error::{Result, ToolError};
use crate::gateway::{FetchedImage, PromptImage};
use crate::prompts;
use crate::session::Session;
use crate::structured::{
    clamp_score_0_5, DetectionReply, DirectGroundReply, JointRankReply, RefMatchReply, SaliencyReply,
    ScoreReply,
};

const UNIFORM_SALIENCY: f64 = 0.5;
pub const DIRECT_ID: &str = "direct";

/// Model judgement of one candidate before fusion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Judgement {
    pub support: u8,
    pub contradiction: u8,
    pub match_score: Option<u8>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JointRank {
    pub best: String,
    pub runner_up: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BindResult {
    pub best: Candidate,
    pub runner_up: Option<Candidate>,
    pub scores: BTreeMap<String, CandidateScores>,
    pub repaired: bool,
    pub hypothesis_used: TargetHypothesis,
    pub pool: Vec<Candidate>,
    pub joint: Option<JointRank>,
}

impl BindResult {
    pub fn best_scores(&self) -> &CandidateScores {
        &self.scores[&self.best.candidate_id]
    }
}

fn cue_text(h: &TargetHypothesis) -> String {
    if h.key_cues.is_empty() {
        "(none)".to_string()
    } else {
        h.key_cues.join(", ")
    }
}

fn describe(profile: &AppearanceProfile) -> String {
    let mut out = profile.visual_description.clone();
    if !profile.shape.is_empty() {
        out.push_str(&format!("\nShape: {}", profile.shape));
    }
    if !profile.color.is_empty() {
        out.push_str(&format!("\nColor: {}", profile.color));
    }
    if !profile.distinctive_features.is_empty() {
        out.push_str(&format!(
            "\nDistinctive features: {}",
            profile.distinctive_features.join(", ")
        ));
    }
    out
}

pub fn fmt_box(b: &BBox) -> String {
    let [x1, y1, x2, y2] = b.to_array();
    format!("[{x1}, {y1}, {x2}, {y2}]")
}

fn png_of(img: &image::RgbImage) -> Arc<Vec<u8>> {
    Arc::new(encode_png(img))
}

fn reference_images(refs: &[FetchedImage]) -> Vec<PromptImage> {
    refs.iter()
        .enumerate()
        .map(|(i, r)| PromptImage::new(format!("reference_{}", i + 1), r.png.clone()))
        .collect()
}

/// Appearance profile from one `"<entity> appearance"` search. Degrades to
/// the bare entity name when the reply is unusable.
pub fn summarize_appearance(
    s: &mut Session,
    entity_name: &str,
    evidence: &EvidenceLog,
) -> Result<AppearanceProfile> {
    let query = format!("{entity_name} appearance");
    let results = match s.search_text(&query) {
        Ok(r) => r,
        Err(e @ ToolError::SearchUnreachable(_)) => {
            s.warn(format!("appearance search failed: {e}"));
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    let mut text = String::new();
    for (i, r) in results.iter().enumerate() {
        text.push_str(&format!("{}. {} ({})\n", i + 1, r.title, r.url));
        if !r.snippet.is_empty() {
            text.push_str(&format!("   {}\n", r.snippet));
        }
    }
    if !evidence.is_empty() {
        text.push_str("\nEarlier evidence:\n");
        text.push_str(&evidence.render());
    }
    if text.trim().is_empty() {
        text = "(no results)".to_string();
    }
    let degraded = AppearanceProfile {
        visual_description: entity_name.to_string(),
        ..AppearanceProfile::default()
    };
    let reply = s.ask::<AppearanceProfile>(
        prompts::APPEARANCE,
        &[("entity_name", entity_name), ("search_evidence", text.trim_end())],
        vec![],
    );
    let profile = match reply {
        Ok(p) if !p.visual_description.trim().is_empty() => p,
        Ok(_) => {
            s.warn("appearance: empty visual_description; degraded profile");
            degraded
        }
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("appearance: {e}; degraded profile"));
            degraded
        }
        Err(e) => return Err(e),
    };
    s.event("appearance", json!(profile));
    Ok(profile)
}

/// Parse and clamp a model box; `None` (with a warning) if unusable.
fn model_box(s: &mut Session, raw: &[f64], width: u32, height: u32, stage: &str) -> Option<BBox> {
    let parsed = BBox::from_slice(raw).and_then(|b| b.clamp_to(width, height));
    match parsed {
        Ok(b) => {
            if !BBox::from_slice(raw).is_ok_and(|o| o == b) {
                s.warn(format!("{stage}: box {raw:?} clamped to {}", fmt_box(&b)));
            }
            Some(b)
        }
        Err(e) => {
            s.warn(format!("{stage}: box {raw:?} rejected: {e}"));
            None
        }
    }
}

pub fn direct_ground(
    s: &mut Session,
    scene: &FetchedImage,
    h: &TargetHypothesis,
    profile: &AppearanceProfile,
    refs: &[FetchedImage],
) -> Result<Option<(Candidate, f64)>> {
    let mut images = vec![PromptImage::new("scene", scene.png.clone())];
    images.extend(reference_images(refs));
    let question = s.question.clone();
    let cues = cue_text(h);
    let desc = describe(profile);
    let reply = s.ask::<DirectGroundReply>(
        prompts::DIRECT_GROUND,
        &[
            ("reference_text", &question),
            ("entity_name", &h.entity_name),
            ("visual_category", &h.visual_category),
            ("key_cues", &cues),
            ("visual_description", &desc),
        ],
        images,
    );
    let reply = match reply {
        Ok(r) => r,
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("direct_ground: {e}"));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let Some(raw) = reply.bbox else {
        s.event("direct_ground", json!({"bbox": null, "reason": reply.reason}));
        return Ok(None);
    };
    let Some(bbox) = model_box(s, &raw, scene.width(), scene.height(), "direct_ground") else {
        return Ok(None);
    };
    s.event(
        "direct_ground",
        json!({"bbox": bbox, "confidence": reply.confidence}),
    );
    Ok(Some((
        Candidate {
            candidate_id: DIRECT_ID.to_string(),
            bbox,
            source: CandidateSource::Direct,
            label: h.entity_name.clone(),
            saliency: None,
        },
        reply.confidence.clamp(0.0, 1.0),
    )))
}

fn saliency_complete(reply: &SaliencyReply, ids: &[String]) -> bool {
    ids.iter()
        .all(|id| reply.scores.iter().filter(|e| &e.id == id).count() == 1)
}

/// Detection plus saliency ranking. Candidates keep their detection ids
/// and are sorted by saliency, highest first.
pub fn generate_fallback_candidates(
    s: &mut Session,
    scene: &FetchedImage,
    max_boxes: usize,
) -> Result<Vec<Candidate>> {
    let max_boxes = max_boxes.max(1);
    let scene_img = vec![PromptImage::new("scene", scene.png.clone())];
    let mb = max_boxes.to_string();
    let reply = s.ask::<DetectionReply>(prompts::DETECT, &[("max_boxes", &mb)], scene_img.clone());
    let detections = match reply {
        Ok(r) => r.detections,
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("detect: {e}; no fallback candidates"));
            return Ok(Vec::new());
        }
        Err(e) => return Err(e),
    };
    let mut cands = Vec::new();
    for d in detections {
        if cands.len() == max_boxes {
            s.warn(format!("detect: more than {max_boxes} boxes; extras dropped"));
            break;
        }
        if let Some(bbox) = model_box(s, &d.bbox, scene.width(), scene.height(), "detect") {
            cands.push(Candidate {
                candidate_id: candidate_id(cands.len()),
                bbox,
                source: CandidateSource::Detection,
                label: d.label,
                saliency: None,
            });
        }
    }
    if cands.is_empty() {
        return Ok(cands);
    }

    let ids: Vec<String> = cands.iter().map(|c| c.candidate_id.clone()).collect();
    let list = cands
        .iter()
        .map(|c| format!("{}: {} {}", c.candidate_id, c.label, fmt_box(&c.bbox)))
        .collect::<Vec<_>>()
        .join("\n");
    let mut scores = None;
    for attempt in 0..2 {
        match s.ask::<SaliencyReply>(prompts::SALIENCY, &[("candidate_list", &list)], scene_img.clone()) {
            Ok(r) if saliency_complete(&r, &ids) => {
                scores = Some(r);
                break;
            }
            Ok(_) => s.warn(format!(
                "saliency: ids missing or repeated (attempt {})",
                attempt + 1
            )),
            Err(e) if e.is_schema_violation() => s.warn(format!("saliency: {e}")),
            Err(e) => return Err(e),
        }
    }
    match scores {
        Some(r) => {
            for c in &mut cands {
                let v = r
                    .scores
                    .iter()
                    .find(|e| e.id == c.candidate_id)
                    .map_or(UNIFORM_SALIENCY, |e| e.saliency_score);
                c.saliency = Some(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        None => {
            s.warn("saliency: falling back to uniform 0.5 scores");
            for c in &mut cands {
                c.saliency = Some(UNIFORM_SALIENCY);
            }
        }
    }
    // stable: equal saliency keeps detection order
    cands.sort_by(|a, b| b.saliency.unwrap_or(0.0).total_cmp(&a.saliency.unwrap_or(0.0)));
    s.event("fallback_candidates", json!(cands));
    Ok(cands)
}

/// Assemble the pool: direct first (when allowed), then fallbacks (when
/// allowed), dropping any later candidate overlapping a kept one by more
/// than `dedup_iou`, then renumbering `candidate_1..n`.
///
/// With fallbacks disabled and no direct box, the top fallback forms a pool
/// of one. With the direct candidate excluded and no fallbacks at all, the
/// direct candidate is used anyway.
pub fn build_candidate_pool(
    direct: Option<&Candidate>,
    fallback: &[Candidate],
    weights: &FusionWeights,
    dedup_iou: f64,
) -> Result<Vec<Candidate>> {
    let mut raw: Vec<&Candidate> = Vec::new();
    if let Some(d) = direct.filter(|_| weights.include_direct_candidate) {
        raw.push(d);
    }
    if weights.use_fallback {
        raw.extend(fallback);
    } else if raw.is_empty() {
        raw.extend(fallback.first());
    }
    if raw.is_empty() {
        raw.extend(direct);
    }
    let mut pool: Vec<Candidate> = Vec::new();
    for c in raw {
        if pool.iter().all(|k| box_iou(&k.bbox, &c.bbox) <= dedup_iou) {
            pool.push(c.clone());
        }
    }
    if pool.is_empty() {
        return Err(ToolError::NoCandidates);
    }
    for (i, c) in pool.iter_mut().enumerate() {
        c.candidate_id = candidate_id(i);
    }
    Ok(pool)
}

/// Support, contradiction and confidence for one candidate. Images: the
/// highlighted scene, the padded crop, then references.
pub fn score_candidate(
    s: &mut Session,
    scene: &FetchedImage,
    cand: &Candidate,
    h: &TargetHypothesis,
    profile: &AppearanceProfile,
    refs: &[FetchedImage],
    crop_png: &Arc<Vec<u8>>,
) -> Result<Judgement> {
    let highlighted = highlight_region(&scene.image, &cand.bbox, &s.config.render)?;
    let highlighted = png_of(&highlighted);
    s.trace_image("score_highlight", &highlighted);
    let mut images = vec![
        PromptImage::new("highlighted", highlighted),
        PromptImage::new("crop", crop_png.clone()),
    ];
    images.extend(reference_images(refs));
    let question = s.question.clone();
    let cues = cue_text(h);
    let desc = describe(profile);
    let reply = s.ask::<ScoreReply>(
        prompts::SCORE_CANDIDATE,
        &[
            ("reference_text", &question),
            ("entity_name", &h.entity_name),
            ("visual_category", &h.visual_category),
            ("key_cues", &cues),
            ("candidate_id", &cand.candidate_id),
            ("visual_description", &desc),
        ],
        images,
    );
    let r = match reply {
        Ok(r) => r,
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("score_candidate {}: {e}; zero scores", cand.candidate_id));
            return Ok(Judgement::default());
        }
        Err(e) => return Err(e),
    };
    let (support, c1) = clamp_score_0_5(r.support_score);
    let (contradiction, c2) = clamp_score_0_5(r.contradiction_score);
    if c1 || c2 {
        s.warn(format!(
            "score_candidate {}: scores ({}, {}) clamped to ({support}, {contradiction})",
            cand.candidate_id, r.support_score, r.contradiction_score
        ));
    }
    let confidence = if r.confidence.is_finite() {
        r.confidence.clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(Judgement {
        support,
        contradiction,
        match_score: None,
        confidence,
    })
}

/// Best match score of a candidate crop over the references; `None` if no
/// reference produced a usable reply.
pub fn match_reference(
    s: &mut Session,
    entity_name: &str,
    refs: &[FetchedImage],
    cand: &Candidate,
    crop_png: &Arc<Vec<u8>>,
) -> Result<Option<u8>> {
    let mut best: Option<u8> = None;
    for (i, r) in refs.iter().enumerate() {
        let images = vec![
            PromptImage::new(format!("reference_{}", i + 1), r.png.clone()),
            PromptImage::new("crop", crop_png.clone()),
        ];
        match s.ask::<RefMatchReply>(prompts::REF_MATCH, &[("entity_name", entity_name)], images) {
            Ok(reply) => {
                let (m, clamped) = clamp_score_0_5(reply.match_score);
                if clamped {
                    s.warn(format!(
                        "ref_match {}: {} clamped to {m}",
                        cand.candidate_id, reply.match_score
                    ));
                }
                best = Some(best.map_or(m, |b| b.max(m)));
            }
            Err(e) if e.is_schema_violation() => {
                s.warn(format!(
                    "ref_match {} reference {}: {e}; skipped",
                    cand.candidate_id,
                    i + 1
                ));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(best)
}

/// One joint ranking over the whole pool; skipped for singleton pools.
#[allow(clippy::too_many_arguments)]
pub fn joint_rank(
    s: &mut Session,
    scene: &FetchedImage,
    pool: &[Candidate],
    crops: &[Arc<Vec<u8>>],
    h: &TargetHypothesis,
    profile: &AppearanceProfile,
    refs: &[FetchedImage],
) -> Result<Option<JointRank>> {
    if pool.len() < 2 {
        return Ok(None);
    }
    let (overview, order) = compose_candidate_overview(&scene.image, pool, &s.config.render)?;
    let overview = png_of(&overview);
    s.trace_image("overview", &overview);
    let mut images = vec![PromptImage::new("overview", overview)];
    for id in &order {
        let idx = pool
            .iter()
            .position(|c| &c.candidate_id == id)
            .expect("order from pool");
        images.push(PromptImage::new(id.clone(), crops[idx].clone()));
    }
    images.extend(reference_images(refs));
    let lines = pool
        .iter()
        .map(|c| {
            let src = match c.source {
                CandidateSource::Direct => "direct grounding",
                CandidateSource::Detection => "detection",
            };
            format!("{}: {} {} ({src})", c.candidate_id, c.label, fmt_box(&c.bbox))
        })
        .collect::<Vec<_>>()
        .join("\n");
    let question = s.question.clone();
    let cues = cue_text(h);
    let desc = describe(profile);
    let order_text = order.join(", ");
    let reply = s.ask::<JointRankReply>(
        prompts::JOINT_RANK,
        &[
            ("candidate_order", &order_text),
            ("reference_text", &question),
            ("entity_name", &h.entity_name),
            ("visual_category", &h.visual_category),
            ("key_cues", &cues),
            ("visual_description", &desc),
            ("candidate_lines", &lines),
        ],
        images,
    );
    let r = match reply {
        Ok(r) => r,
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("joint_rank: {e}; ranking ignored"));
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let in_pool = |id: &str| pool.iter().any(|c| c.candidate_id == id);
    if !in_pool(&r.best_candidate_id) {
        s.warn(format!(
            "joint_rank: best id {:?} not in pool; ranking ignored",
            r.best_candidate_id
        ));
        return Ok(None);
    }
    let runner_up = Some(r.runner_up_candidate_id).filter(|id| in_pool(id) && *id != r.best_candidate_id);
    let jr = JointRank {
        best: r.best_candidate_id,
        runner_up,
    };
    s.event("joint_rank", json!(jr));
    Ok(Some(jr))
}

/// The fused score of one candidate under `w`.
pub fn fuse(w: &FusionWeights, j: &Judgement, source: CandidateSource) -> f64 {
    let mut f = w.w_sup * f64::from(j.support);
    if w.support_only {
        return f;
    }
    if w.use_contradiction {
        f -= w.w_con * f64::from(j.contradiction);
    }
    if w.use_ref_match {
        f += w.w_ref * f64::from(j.match_score.unwrap_or(0));
    }
    if w.use_direct_bonus && source == CandidateSource::Direct {
        f += w.w_dir;
    }
    f
}

/// Pool indices ordered best first, plus the per-candidate scores. Ties on
/// the fused score go to the joint-rank best, then higher confidence, then
/// lower pool index.
pub fn rank_candidates(
    pool: &[Candidate],
    judgements: &[Judgement],
    joint: Option<&JointRank>,
    w: &FusionWeights,
) -> (Vec<usize>, Vec<CandidateScores>) {
    let scores: Vec<CandidateScores> = pool
        .iter()
        .zip(judgements)
        .map(|(c, j)| CandidateScores {
            support: j.support,
            contradiction: j.contradiction,
            match_score: j.match_score,
            confidence: j.confidence,
            fused: fuse(w, j, c.source),
        })
        .collect();
    let is_joint_best = |i: usize| joint.is_some_and(|jr| jr.best == pool[i].candidate_id);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .fused
            .total_cmp(&scores[a].fused)
            .then_with(|| is_joint_best(b).cmp(&is_joint_best(a)))
            .then_with(|| scores[b].confidence.total_cmp(&scores[a].confidence))
            .then_with(|| a.cmp(&b))
    });
    (order, scores)
}

pub fn select_best(
    pool: &[Candidate],
    judgements: &[Judgement],
    joint: Option<&JointRank>,
    w: &FusionWeights,
    hypothesis: &TargetHypothesis,
) -> BindResult {
    let (order, scores) = rank_candidates(pool, judgements, joint, w);
    BindResult {
        best: pool[order[0]].clone(),
        runner_up: order.get(1).map(|&i| pool[i].clone()),
        scores: pool
            .iter()
            .zip(scores)
            .map(|(c, sc)| (c.candidate_id.clone(), sc))
            .collect(),
        repaired: false,
        hypothesis_used: hypothesis.clone(),
        pool: pool.to_vec(),
        joint: joint.cloned(),
    }
}

fn repair_needed(r: &BindResult, s: &Session) -> bool {
    let b = r.best_scores();
    b.fused < s.config.thresholds.repair || b.contradiction >= s.config.thresholds.repair_contradiction
}

/// Ask for a hypothesis consistent with what is visible. `None` keeps the
/// current one.
pub fn visual_repair(
    s: &mut Session,
    h: &TargetHypothesis,
    result: &BindResult,
) -> Result<Option<TargetHypothesis>> {
    let candidates = result
        .pool
        .iter()
        .map(|c| format!("{}: {} {}", c.candidate_id, c.label, fmt_box(&c.bbox)))
        .collect::<Vec<_>>()
        .join("\n");
    let scores = result
        .pool
        .iter()
        .map(|c| {
            let sc = &result.scores[&c.candidate_id];
            let m = sc.match_score.map_or("n/a".to_string(), |m| m.to_string());
            format!(
                "{}: support {}, contradiction {}, match {m}, fused {:.2}",
                c.candidate_id, sc.support, sc.contradiction, sc.fused
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let question = s.question.clone();
    let reply = s.ask::<TargetHypothesis>(
        prompts::VISUAL_REPAIR,
        &[
            ("question", &question),
            ("entity_name", &h.entity_name),
            ("visual_category", &h.visual_category),
            ("candidate_summary", &candidates),
            ("score_summary", &scores),
        ],
        vec![],
    );
    match reply {
        Ok(mut nh) => {
            for note in nh.normalize() {
                s.warn(format!("visual_repair: {note}"));
            }
            match nh.validate() {
                Ok(()) => Ok(Some(nh)),
                Err(e) => {
                    s.warn(format!("visual_repair: {e}"));
                    Ok(None)
                }
            }
        }
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("visual_repair: {e}"));
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

/// Everything from direct grounding to selection for one hypothesis.
fn grounding_pass(
    s: &mut Session,
    scene: &FetchedImage,
    h: &TargetHypothesis,
    profile: &AppearanceProfile,
    refs: &[FetchedImage],
) -> Result<BindResult> {
    let w = s.config.effective_weights();
    let direct = direct_ground(s, scene, h, profile, refs)?;
    let direct_conf = direct.as_ref().map_or(0.0, |d| d.1);
    let direct = direct.map(|d| d.0);

    if !w.use_fallback {
        // direct-only: no scoring, no ranking
        let single = match &direct {
            Some(d) => d.clone(),
            None => {
                s.warn("direct-only: no direct box; using the top fallback candidate");
                let fb = generate_fallback_candidates(s, scene, s.config.max_boxes)?;
                fb.into_iter().next().ok_or(ToolError::NoCandidates)?
            }
        };
        let pool = build_candidate_pool(Some(&single), &[], &w, s.config.thresholds.dedup_iou)?;
        let j = Judgement {
            confidence: if single.source == CandidateSource::Direct {
                direct_conf
            } else {
                single.saliency.unwrap_or(0.0)
            },
            ..Judgement::default()
        };
        return Ok(select_best(&pool, &[j], None, &w, h));
    }

    let fallback = generate_fallback_candidates(s, scene, s.config.max_boxes)?;
    let pool = build_candidate_pool(direct.as_ref(), &fallback, &w, s.config.thresholds.dedup_iou)?;
    if !w.include_direct_candidate && pool.iter().any(|c| c.source == CandidateSource::Direct) {
        s.warn("no fallback candidates; direct candidate kept despite exclusion");
    }
    s.event("pool", json!(pool));

    let mut crops = Vec::with_capacity(pool.len());
    for c in &pool {
        let (crop, _) = crop_padded(&scene.image, &c.bbox, &s.config.render)?;
        let png = png_of(&crop);
        s.trace_image("crop", &png);
        crops.push(png);
    }
    let mut judgements = Vec::with_capacity(pool.len());
    for (c, crop) in pool.iter().zip(&crops) {
        let mut j = score_candidate(s, scene, c, h, profile, refs, crop)?;
        if w.use_ref_match && !refs.is_empty() {
            j.match_score = match_reference(s, &h.entity_name, refs, c, crop)?;
        }
        judgements.push(j);
    }
    let joint = joint_rank(s, scene, &pool, &crops, h, profile, refs)?;
    let result = select_best(&pool, &judgements, joint.as_ref(), &w, h);
    s.event(
        "selection",
        json!({"best": result.best.candidate_id, "scores": result.scores}),
    );
    Ok(result)
}

/// Bind `h` to a box in `scene`, with at most one visual repair.
pub fn bind_target(
    s: &mut Session,
    scene: &FetchedImage,
    h: &TargetHypothesis,
    evidence: &EvidenceLog,
) -> Result<BindResult> {
    let profile = summarize_appearance(s, &h.entity_name, evidence)?;
    let refs = s.search_images(&h.entity_name, s.config.k_ref);
    let first = grounding_pass(s, scene, h, &profile, &refs)?;
    if !s.config.effective_weights().use_fallback || !repair_needed(&first, s) {
        return Ok(first);
    }
    s.event(
        "visual_repair_triggered",
        json!({"best_fused": first.best_scores().fused, "contradiction": first.best_scores().contradiction}),
    );
    let Some(new_h) = visual_repair(s, h, &first)? else {
        return Ok(first);
    };
    let second = match grounding_pass(s, scene, &new_h, &profile, &refs) {
        Ok(r) => r,
        Err(ToolError::NoCandidates) => {
            s.warn("visual repair pass found no candidates; original kept");
            return Ok(first);
        }
        Err(e) => return Err(e),
    };
    let keep_second = second.best_scores().fused > first.best_scores().fused;
    s.event(
        "visual_repair_outcome",
        json!({"original": first.best_scores().fused, "repaired": second.best_scores().fused, "kept": if keep_second { "repaired" } else { "original" }}),
    );
    Ok(if keep_second {
        BindResult {
            repaired: true,
            ..second
        }
    } else {
        first
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    fn cand(i: usize, b: [f64; 4], source: CandidateSource) -> Candidate {
        Candidate {
            candidate_id: candidate_id(i),
            bbox: BBox::from_slice(&b).unwrap(),
            source,
            label: "x".into(),
            saliency: None,
        }
    }

    fn j(support: u8, contradiction: u8, m: Option<u8>, confidence: f64) -> Judgement {
        Judgement {
            support,
            contradiction,
            match_score: m,
            confidence,
        }
    }

    fn h() -> TargetHypothesis {
        TargetHypothesis::new("e", "object")
    }

    #[test]
    fn fused_example_and_ablation_flip() {
        let pool = [
            cand(0, [0.0, 0.0, 10.0, 10.0], CandidateSource::Direct),
            cand(1, [20.0, 20.0, 30.0, 30.0], CandidateSource::Detection),
        ];
        let js = [j(4, 1, Some(3), 0.5), j(4, 0, Some(0), 0.5)];
        let full = FusionWeights::default();
        let r = select_best(&pool, &js, None, &full, &h());
        assert_eq!(r.scores["candidate_1"].fused, 5.5);
        assert_eq!(r.scores["candidate_2"].fused, 4.0);
        assert_eq!(r.best.candidate_id, "candidate_1");

        let mut w = full.clone();
        w.use_direct_bonus = false;
        w.use_ref_match = false;
        let r = select_best(&pool, &js, None, &w, &h());
        assert_eq!(r.scores["candidate_1"].fused, 3.0);
        assert_eq!(r.best.candidate_id, "candidate_2");
    }

    #[test]
    fn tie_rules() {
        let pool = [
            cand(0, [0.0, 0.0, 10.0, 10.0], CandidateSource::Detection),
            cand(1, [20.0, 20.0, 30.0, 30.0], CandidateSource::Detection),
            cand(2, [40.0, 40.0, 50.0, 50.0], CandidateSource::Detection),
        ];
        let w = FusionWeights::default();
        let js = [j(3, 0, None, 0.2), j(3, 0, None, 0.2), j(3, 0, None, 0.9)];
        let jr = JointRank {
            best: "candidate_2".into(),
            runner_up: None,
        };
        assert_eq!(
            select_best(&pool, &js, Some(&jr), &w, &h()).best.candidate_id,
            "candidate_2"
        );
        assert_eq!(
            select_best(&pool, &js, None, &w, &h()).best.candidate_id,
            "candidate_3"
        );
        let even = [j(3, 0, None, 0.2); 3];
        let r = select_best(&pool, &even, None, &w, &h());
        assert_eq!(r.best.candidate_id, "candidate_1");
        assert_eq!(r.runner_up.unwrap().candidate_id, "candidate_2");
    }

    #[test]
    fn pool_dedup_and_variants() {
        let direct = Candidate {
            candidate_id: DIRECT_ID.into(),
            ..cand(0, [0.0, 0.0, 100.0, 100.0], CandidateSource::Direct)
        };
        let fb = [
            cand(0, [0.0, 0.0, 100.0, 97.0], CandidateSource::Detection), // IoU 0.97
            cand(1, [200.0, 0.0, 300.0, 100.0], CandidateSource::Detection),
        ];
        let w = FusionWeights::default();
        let p = build_candidate_pool(Some(&direct), &fb, &w, 0.9).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].source, CandidateSource::Direct);
        assert_eq!(p[0].candidate_id, "candidate_1");
        assert_eq!(p[1].bbox, fb[1].bbox);

        let ndc = Variant::NoDirectCand.apply(&w);
        let p = build_candidate_pool(Some(&direct), &fb, &ndc, 0.9).unwrap();
        assert!(p.iter().all(|c| c.source == CandidateSource::Detection));
        assert_eq!(p.len(), 2);

        let d_only = Variant::DirectOnly.apply(&w);
        let p = build_candidate_pool(None, &fb, &d_only, 0.9).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].bbox, fb[0].bbox);

        assert_eq!(
            build_candidate_pool(None, &[], &w, 0.9).unwrap_err(),
            ToolError::NoCandidates
        );
    }

    #[test]
    fn support_only_ignores_other_terms() {
        let w = Variant::SupportOnly.apply(&FusionWeights::default());
        assert_eq!(fuse(&w, &j(2, 5, Some(5), 0.0), CandidateSource::Direct), 2.0);
    }
}
