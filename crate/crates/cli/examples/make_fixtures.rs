//! Regenerates `fixtures/`: the validator dataset, the end-to-end dataset
//! with its mock tool directory, and the golden outputs of a mock run.
//!
//! cargo run -p searchpix-cli --example make_fixtures [-- OUT_DIR]

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde_json::{json, Value};

use searchpix_core::render::encode_png;
use searchpix_core::{BBox, BinaryMask, DatasetBundle, EvidenceRecord, ImageRecord, ObjectRecord, QaItem};

fn bbox(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3]).expect("valid box")
}

fn image(id: &str, uri: &str, w: u32, h: u32, category: &str) -> ImageRecord {
    ImageRecord {
        image_id: id.into(),
        uri: uri.into(),
        width: w,
        height: h,
        category: category.into(),
        source_url: format!("https://example.org/{id}"),
        access_date: "2025-06-01".into(),
    }
}

fn object(id: &str, img: &ImageRecord, name: &str, aliases: &[&str], b: [f64; 4]) -> ObjectRecord {
    let bbox = bbox(b);
    ObjectRecord {
        object_id: id.into(),
        image_id: img.image_id.clone(),
        name: name.into(),
        category: img.category.clone(),
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
        bbox,
        mask: BinaryMask::from_box(img.height, img.width, &bbox).to_rle(),
        visual_features: String::new(),
    }
}

fn evidence(id: &str, obj: &ObjectRecord, hops: u32) -> EvidenceRecord {
    EvidenceRecord {
        evidence_id: id.into(),
        object_id: obj.object_id.clone(),
        resolved_entity: obj.name.clone(),
        urls: vec![format!("https://example.org/evidence/{id}")],
        access_dates: vec!["2025-06-01".into()],
        visual_category: "object".into(),
        image_checkable_cues: vec![],
        hops,
    }
}

fn qa(id: &str, obj: &str, question: &str, options: Option<(&[&str], usize)>) -> QaItem {
    QaItem {
        qa_id: id.into(),
        object_id: obj.into(),
        question: question.into(),
        hop_count: 2,
        options: options.map(|(o, _)| o.iter().map(|s| s.to_string()).collect()),
        answer_index: options.map(|(_, a)| a),
    }
}

/// 3 images, 5 objects, 6 QA (4 with options): 16 task samples.
fn validator_bundle() -> DatasetBundle {
    let i1 = image("img_1", "images/img_1.png", 320, 240, "PRODUCT");
    let i2 = image("img_2", "images/img_2.png", 300, 200, "Celebrities");
    let i3 = image("img_3", "images/img_3.png", 256, 256, "Vehicles");
    let objects = vec![
        object(
            "obj_1",
            &i1,
            "Aurora X1 Speaker",
            &["Aurora X1"],
            [40.0, 30.0, 140.0, 150.0],
        ),
        object("obj_2", &i1, "Nimbus Desk Lamp", &[], [20.0, 20.0, 120.0, 120.0]),
        object(
            "obj_3",
            &i2,
            "Mara Quinn",
            &["M. Quinn"],
            [120.0, 20.0, 200.0, 190.0],
        ),
        object("obj_4", &i3, "Velo GT Concept", &[], [10.0, 100.0, 240.0, 220.0]),
        object("obj_5", &i3, "Velo Scout", &[], [150.0, 10.0, 250.0, 90.0]),
    ];
    let opts: &[&str] = &[
        "Aurora X1 Speaker",
        "Nimbus Desk Lamp",
        "Halo Router",
        "Vector Kettle",
    ];
    let people: &[&str] = &["Lena Park", "Mara Quinn", "Ines Ruiz", "Tomas Berg"];
    let cars: &[&str] = &["Velo Scout", "Velo GT Concept", "Arc Roadster", "Kite EV"];
    let qa = vec![
        qa(
            "qa_1",
            "obj_1",
            "Which speaker did the brand launch at its 2025 spring event?",
            Some((opts, 0)),
        ),
        qa(
            "qa_2",
            "obj_2",
            "Which lamp won the 2025 design award the speaker's maker sponsored?",
            None,
        ),
        qa(
            "qa_3",
            "obj_3",
            "Who is the 2025 ambassador of the brand shown on the billboard?",
            Some((people, 1)),
        ),
        qa(
            "qa_4",
            "obj_4",
            "Which concept car debuted at the show the brand hosted in 2025?",
            Some((cars, 1)),
        ),
        qa(
            "qa_5",
            "obj_5",
            "Which model replaced the brand's 2023 compact SUV?",
            Some((cars, 0)),
        ),
        qa(
            "qa_6",
            "obj_3",
            "Who hosted the launch of the speaker released in spring 2025?",
            None,
        ),
    ];
    DatasetBundle {
        evidence: objects
            .iter()
            .enumerate()
            .map(|(i, o)| evidence(&format!("ev_{}", i + 1), o, (i as u32 % 3) + 1))
            .collect(),
        images: vec![i1, i2, i3],
        objects,
        qa,
        base_dir: PathBuf::new(),
    }
}

fn scene(w: u32, h: u32, boxes: &[([u32; 4], [u8; 3])]) -> Vec<u8> {
    let mut img = RgbImage::from_pixel(w, h, Rgb([235, 235, 230]));
    for (b, c) in boxes {
        for y in b[1]..b[3] {
            for x in b[0]..b[2] {
                img.put_pixel(x, y, Rgb(*c));
            }
        }
    }
    encode_png(&img)
}

const SPEAKER: &str = "Aurora X1 Speaker";
const PERSON: &str = "Mara Quinn";
const WRONG_PERSON: &str = "Lena Park";

fn e(prompt_id: &str, response: Value) -> Value {
    json!({"prompt_id": prompt_id, "response": response})
}

fn hyp(name: &str, category: &str, kind: &str, cues: &[&str]) -> Value {
    json!({"entity_name": name, "visual_category": category, "entity_type": kind, "key_cues": cues, "confidence": 0.8})
}

fn with_action(mut v: Value, action: &str) -> Value {
    v["action"] = json!(action);
    v
}

fn verified() -> Value {
    json!({"is_consistent": true, "consistency_score": 4.5, "issues": [], "followup_queries": []})
}

fn score(sup: u8, con: u8) -> Value {
    e(
        "score_candidate",
        json!({"support_score": sup, "contradiction_score": con, "confidence": 0.7, "reason": "visible cues"}),
    )
}

fn ref_match(m: u8) -> Value {
    e(
        "ref_match",
        json!({"match_score": m, "reason": "reference comparison"}),
    )
}

/// Resolution steps shared by ground and seg transcripts.
fn resolution(sub: &str, query: &str, h: &Value) -> Vec<Value> {
    vec![
        e("decompose", json!({"sub_questions": [sub]})),
        e("agent_round", json!({"action": "SEARCH", "query": query})),
        e("agent_round", with_action(h.clone(), "ANSWER")),
        e("final_target", h.clone()),
        e("verify", verified()),
    ]
}

fn appearance(desc: &str, features: &[&str]) -> Value {
    e(
        "appearance",
        json!({"visual_description": desc, "shape": "compact", "color": "mixed", "distinctive_features": features}),
    )
}

/// qa_1: the speaker; direct box is exact and the one detection duplicates it.
fn speaker_script() -> Vec<Value> {
    let h = hyp(SPEAKER, "speaker", "product", &["fabric grille", "teal body"]);
    let mut s = resolution(
        "Which speaker launched at the 2025 spring event?",
        "2025 spring event speaker launch",
        &h,
    );
    s.extend([
        appearance(
            "A cylindrical smart speaker in teal fabric.",
            &["fabric grille", "light ring"],
        ),
        e(
            "direct_ground",
            json!({"bbox": [40, 30, 100, 110], "confidence": 0.85, "reason": "teal speaker left of centre"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "speaker", "bbox": [41, 30, 100, 110]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.9}]}),
        ),
        score(5, 0),
        ref_match(4),
    ]);
    s
}

/// qa_2: the person; the direct box clips the left quarter of the target.
fn person_script(name: &str) -> Vec<Value> {
    let h = hyp(name, "person", "person", &["red jacket"]);
    let mut s = resolution("Who is the brand's 2025 ambassador?", "brand ambassador 2025", &h);
    s.extend([
        appearance("A woman in a red jacket.", &["red jacket", "short hair"]),
        e("direct_ground", json!({"bbox": [140, 20, 200, 170], "confidence": 0.8, "reason": "person on the right"})),
        e("detect", json!({"detections": [
            {"label": "person", "bbox": [140, 20, 200, 170]},
            {"label": "sign", "bbox": [10, 10, 60, 60]}
        ]})),
        e("saliency", json!({"scores": [
            {"id": "candidate_1", "saliency_score": 0.8},
            {"id": "candidate_2", "saliency_score": 0.3}
        ]})),
        score(4, 0),
        ref_match(4),
        score(1, 3),
        ref_match(0),
        e("joint_rank", json!({"best_candidate_id": "candidate_1", "runner_up_candidate_id": "candidate_2", "confidence": 0.8, "reason": "jacket matches"})),
    ]);
    s
}

/// qa_2 seg: the agent settles on the wrong person, who stands left of the target.
fn wrong_person_script() -> Vec<Value> {
    let h = hyp(WRONG_PERSON, "person", "person", &["red jacket"]);
    let mut s = resolution("Who is the brand's 2025 ambassador?", "brand ambassador 2025", &h);
    s.extend([
        appearance("A woman in a red jacket.", &["red jacket"]),
        e(
            "direct_ground",
            json!({"bbox": [120, 20, 140, 170], "confidence": 0.6, "reason": "left edge figure"}),
        ),
        e(
            "detect",
            json!({"detections": [{"label": "person", "bbox": [120, 20, 140, 170]}]}),
        ),
        e(
            "saliency",
            json!({"scores": [{"id": "candidate_1", "saliency_score": 0.6}]}),
        ),
        score(3, 1),
    ]);
    s
}

fn vqa_script(options: &[(&str, &str, &str)], selected: usize) -> Vec<Value> {
    let mut s: Vec<Value> = options
        .iter()
        .map(|(name, cat, kind)| e("option_resolve", hyp(name, cat, kind, &[])))
        .collect();
    s.push(e(
        "grounded_select",
        json!({"selected_index": selected, "confidence": 0.7, "reason": "highlighted region"}),
    ));
    s
}

fn result(title: &str, snippet: &str) -> Value {
    json!({"title": title, "url": format!("https://example.org/{}", title.to_lowercase().replace(' ', "-")), "snippet": snippet, "access_date": "2025-06-01"})
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) {
    std::fs::create_dir_all(path.parent().expect("parent")).expect("mkdir");
    std::fs::write(path, bytes).expect("write");
}

fn write_json(path: &Path, v: &Value) {
    let mut s = serde_json::to_string_pretty(v).expect("json");
    s.push('\n');
    write(path, s);
}

fn e2e(root: &Path) {
    let a = image("img_a", "images/img_a.png", 200, 160, "PRODUCT");
    let b = image("img_b", "images/img_b.png", 240, 180, "Celebrities");
    write(
        &root.join(&a.uri),
        scene(200, 160, &[([40, 30, 100, 110], [30, 140, 140])]),
    );
    write(
        &root.join(&b.uri),
        scene(
            240,
            180,
            &[
                ([120, 20, 140, 170], [60, 60, 160]),
                ([140, 20, 200, 170], [200, 40, 40]),
            ],
        ),
    );
    let oa = object("obj_a", &a, SPEAKER, &["Aurora X1"], [40.0, 30.0, 100.0, 110.0]);
    let ob = object("obj_b", &b, PERSON, &["M. Quinn"], [120.0, 20.0, 200.0, 170.0]);
    let products: &[&str] = &["Nimbus Desk Lamp", SPEAKER, "Halo Router", "Vector Kettle"];
    let people: &[&str] = &[WRONG_PERSON, "Ines Ruiz", PERSON, "Tomas Berg"];
    let bundle = DatasetBundle {
        evidence: vec![evidence("ev_a", &oa, 2), evidence("ev_b", &ob, 2)],
        images: vec![a, b],
        qa: vec![
            qa(
                "qa_1",
                "obj_a",
                "Which speaker did the brand launch at its 2025 spring event?",
                Some((products, 1)),
            ),
            qa(
                "qa_2",
                "obj_b",
                "Who is the 2025 ambassador of the brand on the poster?",
                Some((people, 2)),
            ),
        ],
        objects: vec![oa, ob],
        base_dir: PathBuf::new(),
    };
    std::fs::create_dir_all(root).expect("mkdir");
    bundle.write(root.join("dataset.json")).expect("dataset");

    let mock = root.join("mock");
    let scripts = [
        ("qa_1.ground", speaker_script()),
        ("qa_1.seg", speaker_script()),
        ("qa_2.ground", person_script(PERSON)),
        ("qa_2.seg", wrong_person_script()),
        (
            "qa_1.vqa",
            vqa_script(
                &[
                    ("Nimbus Desk Lamp", "lamp", "product"),
                    (SPEAKER, "speaker", "product"),
                    ("Halo Router", "router", "product"),
                    ("Vector Kettle", "kettle", "product"),
                ],
                1,
            ),
        ),
        (
            "qa_2.vqa",
            vqa_script(
                &[
                    (WRONG_PERSON, "person", "person"),
                    ("Ines Ruiz", "person", "person"),
                    (PERSON, "person", "person"),
                    ("Tomas Berg", "person", "person"),
                ],
                0,
            ),
        ),
    ];
    for (scope, script) in scripts {
        write_json(
            &mock.join("llm").join(format!("{scope}.json")),
            &Value::Array(script.to_vec()),
        );
    }
    write_json(
        &mock.join("search.json"),
        &json!({
            "2025 spring event speaker launch": [
                result("Spring launch recap", "The Aurora X1 Speaker headlined the 2025 spring event."),
                result("Aurora X1 review", "A teal fabric smart speaker with a light ring.")
            ],
            "brand ambassador 2025": [
                result("New ambassador named", "Mara Quinn fronts the 2025 campaign in a red jacket.")
            ],
            "Aurora X1 Speaker appearance": [
                result("Aurora X1 design", "Cylindrical body, teal fabric, top light ring.")
            ],
            "Mara Quinn appearance": [
                result("Campaign look", "Short hair and a red jacket.")
            ]
        }),
    );
    write(
        &mock.join("refs/aurora_1.png"),
        scene(32, 32, &[([4, 4, 28, 28], [30, 140, 140])]),
    );
    write(
        &mock.join("refs/quinn_1.png"),
        scene(32, 32, &[([8, 2, 24, 30], [200, 40, 40])]),
    );
    write_json(
        &mock.join("image_search.json"),
        &json!({SPEAKER: ["refs/aurora_1.png"], PERSON: ["refs/quinn_1.png"]}),
    );

    let golden = root.join("golden");
    let s = |p: &Path| p.display().to_string();
    let dataset = root.join("dataset.json");
    let pred = golden.join("predictions.jsonl");
    let code = searchpix_cli::dispatch([
        "searchpix".to_string(),
        "run".into(),
        "--dataset".into(),
        s(&dataset),
        "--task".into(),
        "all".into(),
        "--out".into(),
        s(&pred),
        "--mock".into(),
        s(&mock),
        "--workers".into(),
        "1".into(),
    ]);
    assert_eq!(code, 0, "golden run failed");
    let code = searchpix_cli::dispatch([
        "searchpix".to_string(),
        "score".into(),
        "--dataset".into(),
        s(&dataset),
        "--pred".into(),
        s(&pred),
        "--report".into(),
        s(&golden.join("report.json")),
        "--by-category".into(),
    ]);
    assert_eq!(code, 0, "golden score failed");
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    std::fs::create_dir_all(root.join("validator")).expect("mkdir");
    let root = root.canonicalize().expect("fixture root");
    validator_bundle()
        .write(root.join("validator/dataset.json"))
        .expect("validator dataset");
    e2e(&root.join("e2e"));
    println!("fixtures written to {}", root.display());
}
