use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use searchpix_core::eval::evaluate;
use searchpix_core::exec::{map_collect, map_collect_seq};
use searchpix_core::{BBox, BinaryMask, ImageRef, Payload, PredictionRecord, Task, TaskSample};

const SIDE: u32 = 256;

fn corpus(n: usize) -> (Vec<TaskSample>, Vec<PredictionRecord>) {
    let mut samples = Vec::with_capacity(n);
    let mut preds = Vec::with_capacity(n);
    for i in 0..n {
        let o = (i % 64) as f64;
        let gt = BBox::new(o, o, o + 120.0, o + 150.0).unwrap();
        let pred = BBox::new(o + 10.0, o, o + 140.0, o + 130.0).unwrap();
        let qa_id = format!("qa_{i}");
        samples.push(TaskSample {
            qa_id: qa_id.clone(),
            task: Task::Seg,
            image: ImageRef {
                image_id: format!("img_{i}"),
                uri: String::new(),
                width: SIDE,
                height: SIDE,
            },
            question: String::new(),
            gt_bbox: gt,
            gt_mask: Arc::new(BinaryMask::from_box(SIDE, SIDE, &gt)),
            options: None,
            answer_index: None,
            category: ["PRODUCT", "Vehicles", "Anime"][i % 3].into(),
            target_name: "target".into(),
            target_aliases: vec![],
        });
        let mut r = PredictionRecord::new(
            qa_id,
            Payload::Seg(Some(BinaryMask::from_box(SIDE, SIDE, &pred).to_rle())),
        );
        r.bound_bbox = Some(pred);
        preds.push(r);
    }
    (samples, preds)
}

fn overlaps(c: &mut Criterion) {
    let mut g = c.benchmark_group("mask_overlap");
    for n in [64usize, 512] {
        let (samples, preds) = corpus(n);
        let pairs: Vec<(&TaskSample, &PredictionRecord)> = samples.iter().zip(&preds).collect();
        let overlap = |(s, p): &(&TaskSample, &PredictionRecord)| {
            let Payload::Seg(Some(rle)) = &p.payload else {
                unreachable!()
            };
            rle.decode().unwrap().intersection_union(&s.gt_mask).unwrap()
        };
        g.bench_with_input(BenchmarkId::new("parallel", n), &pairs, |b, pairs| {
            b.iter(|| map_collect(pairs, overlap))
        });
        g.bench_with_input(BenchmarkId::new("sequential", n), &pairs, |b, pairs| {
            b.iter(|| map_collect_seq(pairs, overlap))
        });
    }
    g.finish();
}

fn report(c: &mut Criterion) {
    let (samples, preds) = corpus(512);
    c.bench_function("evaluate_512_seg", |b| {
        b.iter(|| evaluate(&preds, &samples, serde_json::Value::Null).unwrap())
    });
}

criterion_group!(benches, overlaps, report);
criterion_main!(benches);
