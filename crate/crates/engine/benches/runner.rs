use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use serde_json::json;

use searchpix_core::render::encode_png;
use searchpix_core::{BBox, BinaryMask, ImageRef, Task, TaskSample};
use searchpix_engine::gateway::mock::{FixtureImageSearch, FixtureSearch, GeometricSegmenter};
use searchpix_engine::gateway::LlmBackend;
use searchpix_engine::{ChatRequest, Engine, Gateway, RunConfig};

/// Answers every prompt with a fixed valid reply after a simulated delay.
struct CannedLlm {
    latency: Duration,
}

impl LlmBackend for CannedLlm {
    fn complete(&self, _scope: &str, req: &ChatRequest) -> searchpix_engine::Result<String> {
        std::thread::sleep(self.latency);
        let hyp =
            json!({"entity_name": "Aurora X1 Speaker", "visual_category": "speaker", "confidence": 0.8});
        let v = match req.prompt_id.as_str() {
            "decompose" => json!({"sub_questions": ["Which speaker?"]}),
            "agent_round" => {
                let mut h = hyp.clone();
                h["action"] = json!("ANSWER");
                h
            }
            "verify" => {
                json!({"is_consistent": true, "consistency_score": 4.0, "issues": [], "followup_queries": []})
            }
            "appearance" => json!({"visual_description": "teal speaker", "distinctive_features": ["grille"]}),
            "direct_ground" => json!({"bbox": [40, 30, 160, 200], "confidence": 0.8, "reason": "r"}),
            "detect" => json!({"detections": [
                {"label": "speaker", "bbox": [40, 30, 160, 200]},
                {"label": "lamp", "bbox": [180, 20, 250, 120]},
                {"label": "cup", "bbox": [10, 210, 70, 250]}
            ]}),
            "saliency" => json!({"scores": [
                {"id": "candidate_1", "saliency_score": 0.9},
                {"id": "candidate_2", "saliency_score": 0.5},
                {"id": "candidate_3", "saliency_score": 0.2}
            ]}),
            "score_candidate" => {
                json!({"support_score": 4, "contradiction_score": 1, "confidence": 0.6, "reason": "r"})
            }
            "joint_rank" => {
                json!({"best_candidate_id": "candidate_1", "runner_up_candidate_id": "candidate_2", "confidence": 0.6, "reason": "r"})
            }
            _ => hyp,
        };
        Ok(v.to_string())
    }
}

fn setup(dir: &std::path::Path, n: usize, latency: Duration) -> (Engine, Engine, Vec<TaskSample>) {
    let path = dir.join("scene.png");
    std::fs::write(
        &path,
        encode_png(&image::RgbImage::from_pixel(256, 256, image::Rgb([60, 60, 60]))),
    )
    .unwrap();
    let gt = BBox::new(40.0, 30.0, 160.0, 200.0).unwrap();
    let samples = (0..n)
        .map(|i| TaskSample {
            qa_id: format!("qa_{i}"),
            task: Task::Ground,
            image: ImageRef {
                image_id: "scene".into(),
                uri: path.display().to_string(),
                width: 256,
                height: 256,
            },
            question: "Which speaker launched in spring 2025?".into(),
            gt_bbox: gt,
            gt_mask: Arc::new(BinaryMask::from_box(256, 256, &gt)),
            options: None,
            answer_index: None,
            category: "PRODUCT".into(),
            target_name: "Aurora X1 Speaker".into(),
            target_aliases: vec![],
        })
        .collect();
    let engine = |workers| {
        let gw = Gateway::with_backends(
            Box::new(CannedLlm { latency }),
            Box::new(FixtureSearch::from_map(HashMap::new())),
            Box::new(FixtureImageSearch::from_dir(dir).unwrap()),
            Box::new(GeometricSegmenter),
        );
        Engine::with_gateway(
            RunConfig {
                workers,
                ..RunConfig::default()
            },
            gw,
        )
        .unwrap()
    };
    (engine(8), engine(1), samples)
}

fn runner(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    let mut g = c.benchmark_group("run_ground_16");
    g.sample_size(10);
    for (label, latency) in [
        ("no_latency", Duration::ZERO),
        ("1ms_latency", Duration::from_millis(1)),
    ] {
        let (par, seq, samples) = setup(dir.path(), 16, latency);
        g.bench_function(format!("run_all_8_workers/{label}"), |b| {
            b.iter(|| par.run_all(&samples))
        });
        g.bench_function(format!("run_all_seq/{label}"), |b| {
            b.iter(|| seq.run_all_seq(&samples))
        });
    }
    g.finish();
}

criterion_group!(benches, runner);
criterion_main!(benches);
