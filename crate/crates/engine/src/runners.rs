//! Per-task runners and the batch driver.

use std::time::Instant;

use serde_json::json;

use searchpix_core::render::{crop_padded, encode_png, highlight_region};
use searchpix_core::{
    BinaryMask, EvidenceItem, EvidenceLog, Payload, PredictionRecord, TargetHypothesis, Task, TaskSample,
};

use crate::agent::resolve_hidden_target;
use crate::config::RunConfig;
use crate::error::{Result, ToolError};
use crate::gateway::{FetchedImage, Gateway, PromptImage};
use crate::grounding::{bind_target, BindResult};
use crate::prompts::{self, PromptCatalog};
use crate::session::Session;
use crate::structured::SelectionReply;
use crate::trace::Trace;

/// Result of one sample: the record plus its trace.
#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub record: PredictionRecord,
    pub trace: Trace,
    pub bind: Option<BindResult>,
}

impl SampleOutcome {
    /// Errors that stop a sample rather than degrade it.
    pub fn fatal_error(&self) -> Option<&str> {
        self.record.error.as_deref().filter(|code| {
            !matches!(
                *code,
                "no-candidates" | "segmenter-unreachable" | "segmenter-bad-mask"
            )
        })
    }
}

pub struct Engine {
    pub gateway: Gateway,
    pub catalog: PromptCatalog,
    pub config: RunConfig,
    /// Record per-sample wall time in prediction records.
    pub timings: bool,
}

impl Engine {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let gateway = Gateway::from_config(&config.tools)?;
        Self::with_gateway(config, gateway)
    }

    pub fn with_gateway(config: RunConfig, gateway: Gateway) -> Result<Self> {
        let catalog = match &config.prompt_dir {
            Some(dir) => PromptCatalog::with_overrides(dir)?,
            None => PromptCatalog::builtin(),
        };
        Ok(Self {
            gateway,
            catalog,
            config,
            timings: false,
        })
    }

    fn session(&self, sample: &TaskSample) -> Session<'_> {
        Session::new(
            &self.gateway,
            &self.catalog,
            &self.config,
            format!("{}.{}", sample.qa_id, sample.task),
            Some(sample.task),
            sample.question.clone(),
        )
    }

    pub fn run_sample(&self, sample: &TaskSample) -> SampleOutcome {
        let start = Instant::now();
        let mut out = match sample.task {
            Task::Ground => run_searchground(self, sample),
            Task::Seg => run_searchseg(self, sample),
            Task::Vqa => run_searchvqa(self, sample),
        };
        out.record.trace_ref = format!("traces/{}/events.jsonl", sample.qa_id);
        if self.timings {
            out.record.wall_ms = Some(start.elapsed().as_millis() as u64);
        }
        out
    }

    /// Run every sample, at most `workers` at a time; output order follows
    /// input order.
    pub fn run_all(&self, samples: &[TaskSample]) -> Vec<SampleOutcome> {
        #[cfg(feature = "parallel")]
        if self.config.workers > 1 {
            use rayon::prelude::*;
            if let Ok(pool) = rayon::ThreadPoolBuilder::new()
                .num_threads(self.config.workers)
                .build()
            {
                return pool.install(|| samples.par_iter().map(|s| self.run_sample(s)).collect());
            }
        }
        self.run_all_seq(samples)
    }

    pub fn run_all_seq(&self, samples: &[TaskSample]) -> Vec<SampleOutcome> {
        samples.iter().map(|s| self.run_sample(s)).collect()
    }
}

fn load_scene(s: &mut Session, sample: &TaskSample) -> Result<FetchedImage> {
    let scene = s.fetch_image(&sample.image.uri)?;
    if (scene.width(), scene.height()) != (sample.image.width, sample.image.height) {
        s.warn(format!(
            "image {} decodes to {}x{}, metadata says {}x{}",
            sample.image.image_id,
            scene.width(),
            scene.height(),
            sample.image.width,
            sample.image.height
        ));
    }
    Ok(scene)
}

struct Bound {
    hypothesis: TargetHypothesis,
    evidence: EvidenceLog,
    bind: std::result::Result<BindResult, ToolError>,
    scene: FetchedImage,
}

/// Resolution followed by binding. Errors before binding are returned;
/// binding errors are carried so the hypothesis survives.
fn resolve_and_bind(s: &mut Session, sample: &TaskSample) -> Result<Bound> {
    let scene = load_scene(s, sample)?;
    let q = sample.question.clone();
    let res = resolve_hidden_target(s, &q)?;
    let bind = bind_target(s, &scene, &res.hypothesis, &res.evidence);
    Ok(Bound {
        hypothesis: res.hypothesis,
        evidence: res.evidence,
        bind,
        scene,
    })
}

fn finish(s: Session, mut record: PredictionRecord, bind: Option<BindResult>) -> SampleOutcome {
    record.tool_counts = s.counts;
    SampleOutcome {
        record,
        trace: s.trace,
        bind,
    }
}

fn failed(mut s: Session, sample: &TaskSample, payload: Payload, e: ToolError) -> SampleOutcome {
    s.event(
        "sample_error",
        json!({"code": e.code(), "message": e.to_string()}),
    );
    let mut record = PredictionRecord::new(&sample.qa_id, payload);
    record.error = Some(e.code().to_string());
    finish(s, record, None)
}

fn bound_record(sample: &TaskSample, payload: Payload, b: &Bound) -> PredictionRecord {
    let mut record = PredictionRecord::new(&sample.qa_id, payload);
    record.hypothesis = Some(
        b.bind
            .as_ref()
            .map_or_else(|_| b.hypothesis.clone(), |r| r.hypothesis_used.clone()),
    );
    record.evidence = b.evidence.items().to_vec();
    record
}

pub fn run_searchground(engine: &Engine, sample: &TaskSample) -> SampleOutcome {
    let mut s = engine.session(sample);
    let b = match resolve_and_bind(&mut s, sample) {
        Ok(b) => b,
        Err(e) => return failed(s, sample, Payload::Ground(None), e),
    };
    match &b.bind {
        Ok(r) => {
            let record = bound_record(sample, Payload::Ground(Some(r.best.bbox)), &b);
            let bind = b.bind.ok();
            finish(s, record, bind)
        }
        Err(e) => {
            s.event(
                "sample_error",
                json!({"code": e.code(), "message": e.to_string()}),
            );
            let mut record = bound_record(sample, Payload::Ground(None), &b);
            record.error = Some(e.code().to_string());
            finish(s, record, None)
        }
    }
}

pub fn run_searchseg(engine: &Engine, sample: &TaskSample) -> SampleOutcome {
    let mut s = engine.session(sample);
    let b = match resolve_and_bind(&mut s, sample) {
        Ok(b) => b,
        Err(e) => return failed(s, sample, Payload::Seg(None), e),
    };
    let r = match &b.bind {
        Ok(r) => r.clone(),
        Err(e) => {
            s.event(
                "sample_error",
                json!({"code": e.code(), "message": e.to_string()}),
            );
            let mut record = bound_record(sample, Payload::Seg(None), &b);
            record.error = Some(e.code().to_string());
            return finish(s, record, None);
        }
    };
    s.counts.segment_calls += 1;
    let (mask, error) = match engine.gateway.segment_box(&b.scene, &r.best.bbox) {
        Ok(m) => {
            s.event("segment", json!({"bbox": r.best.bbox, "area": m.area()}));
            (m, None)
        }
        Err(e) => {
            s.event(
                "sample_error",
                json!({"code": e.code(), "message": e.to_string()}),
            );
            s.warn(format!("segmenter failed: {e}; empty mask recorded"));
            (
                BinaryMask::zeros(b.scene.height(), b.scene.width()),
                Some(e.code().to_string()),
            )
        }
    };
    let mut record = bound_record(sample, Payload::Seg(Some(mask.to_rle())), &b);
    record.bound_bbox = Some(r.best.bbox);
    record.error = error;
    finish(s, record, Some(r))
}

/// Identify what an option text refers to; degrades to the text itself.
pub fn resolve_option(s: &mut Session, option_text: &str) -> Result<TargetHypothesis> {
    if option_text.trim().is_empty() {
        return Err(ToolError::Precondition("empty option text".into()));
    }
    let degraded = TargetHypothesis::new(option_text.trim(), "object");
    match s.ask::<TargetHypothesis>(prompts::OPTION_RESOLVE, &[("text", option_text)], vec![]) {
        Ok(mut h) => {
            for note in h.normalize() {
                s.warn(format!("option_resolve: {note}"));
            }
            if let Err(e) = h.validate() {
                s.warn(format!("option_resolve: {e}; degraded hypothesis"));
                return Ok(degraded);
            }
            Ok(h)
        }
        Err(e) if e.is_schema_violation() => {
            s.warn(format!("option_resolve: {e}; degraded hypothesis"));
            Ok(degraded)
        }
        Err(e) => Err(e),
    }
}

fn argmax(v: &[f64]) -> Option<usize> {
    // first maximum wins
    v.iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .fold(None, |best: Option<(usize, f64)>, (i, &x)| match best {
            Some((_, bx)) if bx >= x => best,
            _ => Some((i, x)),
        })
        .map(|(i, _)| i)
}

fn selected(reply: &SelectionReply, n: usize) -> Option<usize> {
    if let Some(scores) = reply.option_scores.as_ref().filter(|s| s.len() == n) {
        return argmax(scores);
    }
    usize::try_from(reply.selected_index).ok().filter(|&i| i < n)
}

fn option_info(i: usize, h: &TargetHypothesis, item: Option<&EvidenceItem>) -> String {
    let mut line = format!("Option {i}: {} ({})", h.entity_name, h.visual_category);
    if !h.key_cues.is_empty() {
        line.push_str(&format!("; cues: {}", h.key_cues.join(", ")));
    }
    if let Some(item) = item {
        for r in item.results.iter().take(2) {
            line.push_str(&format!("\n  - {}: {}", r.title, r.snippet));
        }
    }
    line
}

fn vqa_inner(s: &mut Session, sample: &TaskSample) -> Result<(usize, TargetHypothesis, Vec<EvidenceItem>)> {
    let options = sample
        .options
        .clone()
        .filter(|o| !o.is_empty())
        .ok_or_else(|| ToolError::Precondition("vqa sample without options".into()))?;
    let scene = load_scene(s, sample)?;
    let highlighted = highlight_region(&scene.image, &sample.gt_bbox, &s.config.render)?;
    let highlighted = std::sync::Arc::new(encode_png(&highlighted));
    let (crop, _) = crop_padded(&scene.image, &sample.gt_bbox, &s.config.render)?;
    let crop = std::sync::Arc::new(encode_png(&crop));
    s.trace_image("highlight", &highlighted);
    s.trace_image("crop", &crop);

    let mut hyps = Vec::with_capacity(options.len());
    let mut evidence: Vec<EvidenceItem> = Vec::new();
    let mut info = Vec::new();
    for (i, opt) in options.iter().enumerate() {
        let h = resolve_option(s, opt)?;
        let item = if s.config.vqa_search {
            let round = evidence.len() as u32 + 1;
            match s.search_evidence(round, &h.entity_name) {
                Ok(item) => Some(item),
                Err(e @ ToolError::SearchUnreachable(_)) => {
                    s.warn(format!("option search failed: {e}"));
                    None
                }
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        info.push(option_info(i, &h, item.as_ref()));
        evidence.extend(item);
        hyps.push(h);
    }
    let options_text = options
        .iter()
        .enumerate()
        .map(|(i, o)| format!("{i}. {o}"))
        .collect::<Vec<_>>()
        .join("\n");
    let entity_info = info.join("\n");
    let images = vec![
        PromptImage::new("highlighted", highlighted),
        PromptImage::new("crop", crop),
    ];
    let n = options.len();
    let mut choice = None;
    for attempt in 0..2 {
        match s.ask::<SelectionReply>(
            prompts::GROUNDED_SELECT,
            &[("options_text", &options_text), ("entity_info", &entity_info)],
            images.clone(),
        ) {
            Ok(r) => match selected(&r, n) {
                Some(i) => {
                    choice = Some(i);
                    break;
                }
                None => s.warn(format!(
                    "grounded_select: index {} out of range 0..{n} (attempt {})",
                    r.selected_index,
                    attempt + 1
                )),
            },
            Err(e) if e.is_schema_violation() => s.warn(format!("grounded_select: {e}")),
            Err(e) => return Err(e),
        }
    }
    let idx = choice.unwrap_or_else(|| {
        s.warn("grounded_select: no valid index; defaulting to 0");
        0
    });
    s.event("selection", json!({"selected_index": idx}));
    Ok((idx, hyps.swap_remove(idx), evidence))
}

pub fn run_searchvqa(engine: &Engine, sample: &TaskSample) -> SampleOutcome {
    let mut s = engine.session(sample);
    match vqa_inner(&mut s, sample) {
        Ok((idx, h, evidence)) => {
            let mut record = PredictionRecord::new(&sample.qa_id, Payload::Vqa(Some(idx)));
            record.hypothesis = Some(h);
            record.evidence = evidence;
            finish(s, record, None)
        }
        Err(e) => failed(s, sample, Payload::Vqa(None), e),
    }
}
