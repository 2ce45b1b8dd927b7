//! Benchmark corpus: loading, integrity checks and task-view expansion.
//!
//! On disk a corpus is one JSON document with four arrays:
//! `images`, `objects`, `evidence`, `qa`. Each QA item expands into a
//! grounding sample and a segmentation sample, plus a multiple-choice
//! sample when it carries options.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{box_iou, BBox};
use crate::mask::{mask_bbox, BinaryMask, Rle};
use crate::types::ImageRef;

pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
    pub category: String,
    #[serde(default)]
    pub source_url: String,
    #[serde(default)]
    pub access_date: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: String,
    pub image_id: String,
    pub name: String,
    pub category: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub bbox: BBox,
    pub mask: Rle,
    #[serde(default)]
    pub visual_features: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecord {
    pub evidence_id: String,
    pub object_id: String,
    pub resolved_entity: String,
    pub urls: Vec<String>,
    #[serde(default)]
    pub access_dates: Vec<String>,
    #[serde(default)]
    pub visual_category: String,
    #[serde(default)]
    pub image_checkable_cues: Vec<String>,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub qa_id: String,
    pub object_id: String,
    pub question: String,
    #[serde(default)]
    pub hop_count: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_index: Option<usize>,
}

impl QaItem {
    /// Whether this item yields a multiple-choice sample.
    pub fn has_options(&self) -> bool {
        self.options.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    #[serde(default)]
    pub images: Vec<ImageRecord>,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
    #[serde(default)]
    pub evidence: Vec<EvidenceRecord>,
    #[serde(default)]
    pub qa: Vec<QaItem>,
    /// Directory relative image URIs resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetCounts {
    pub images: usize,
    pub objects: usize,
    pub qa: usize,
    pub task_samples: usize,
    pub vqa_samples: usize,
}

impl fmt::Display for DatasetCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "images={} objects={} qa={} task_samples={} vqa_samples={}",
            self.images, self.objects, self.qa, self.task_samples, self.vqa_samples
        )
    }
}

impl DatasetBundle {
    pub fn counts(&self) -> DatasetCounts {
        let vqa = self.qa.iter().filter(|q| q.has_options()).count();
        DatasetCounts {
            images: self.images.len(),
            objects: self.objects.len(),
            qa: self.qa.len(),
            task_samples: 2 * self.qa.len() + vqa,
            vqa_samples: vqa,
        }
    }

    /// Canonical serialization: pretty JSON, fields in declaration order,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_canonical_json()).map_err(|e| Error::io(path, e))
    }

    pub fn image(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn resolve_uri(&self, uri: &str) -> String {
        if uri.contains("://") || Path::new(uri).is_absolute() || self.base_dir.as_os_str().is_empty() {
            uri.to_string()
        } else {
            self.base_dir.join(uri).display().to_string()
        }
    }

    /// First dangling reference in the image → object → evidence/qa chain.
    fn first_broken_link(&self) -> Option<String> {
        let images: HashSet<&str> = self.images.iter().map(|i| i.image_id.as_str()).collect();
        let objects: HashSet<&str> = self.objects.iter().map(|o| o.object_id.as_str()).collect();
        self.objects
            .iter()
            .find(|o| !images.contains(o.image_id.as_str()))
            .map(|o| o.image_id.clone())
            .or_else(|| {
                self.evidence
                    .iter()
                    .find(|e| !objects.contains(e.object_id.as_str()))
                    .map(|e| e.object_id.clone())
            })
            .or_else(|| {
                self.qa
                    .iter()
                    .find(|q| !objects.contains(q.object_id.as_str()))
                    .map(|q| q.object_id.clone())
            })
    }
}

/// Parse a corpus document without checking references.
pub fn parse_dataset(text: &str) -> Result<DatasetBundle> {
    serde_json::from_str(text).map_err(|e| Error::MalformedDataset(e.to_string()))
}

/// Read and parse a corpus file; relative image URIs resolve against the
/// file's directory. References are not checked.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut bundle = parse_dataset(&text)?;
    bundle.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(bundle)
}

/// Read a corpus and require every cross-reference to resolve.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let bundle = read_dataset(path)?;
    if let Some(id) = bundle.first_broken_link() {
        return Err(Error::BrokenChain(id));
    }
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    /// Minimum IoU between an object's box and its mask's bounding box.
    pub box_mask_tau: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self { box_mask_tau: 0.5 }
    }
}

/// One failed integrity check: a code plus the id it concerns.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Violation {
    pub code: String,
    pub id: String,
}

impl Violation {
    fn new(code: &str, id: impl Into<String>) -> Self {
        Self {
            code: code.to_string(),
            id: id.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.code, self.id)
    }
}

fn duplicates<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    let mut dup = Vec::new();
    for id in ids {
        if !seen.insert(id) && !dup.contains(&id) {
            dup.push(id);
        }
    }
    dup
}

/// Run every integrity check. An empty result means the bundle is clean.
pub fn validate_dataset(bundle: &DatasetBundle, opts: &ValidationOptions) -> Vec<Violation> {
    let mut out = Vec::new();

    let tables: [(&str, Vec<&str>); 4] = [
        (
            "image",
            bundle.images.iter().map(|i| i.image_id.as_str()).collect(),
        ),
        (
            "object",
            bundle.objects.iter().map(|o| o.object_id.as_str()).collect(),
        ),
        (
            "evidence",
            bundle.evidence.iter().map(|e| e.evidence_id.as_str()).collect(),
        ),
        ("qa", bundle.qa.iter().map(|q| q.qa_id.as_str()).collect()),
    ];
    for (_, ids) in &tables {
        for id in duplicates(ids.iter().copied()) {
            out.push(Violation::new("duplicate-id", id));
        }
    }

    let images: HashMap<&str, &ImageRecord> =
        bundle.images.iter().map(|i| (i.image_id.as_str(), i)).collect();
    let objects: HashSet<&str> = bundle.objects.iter().map(|o| o.object_id.as_str()).collect();

    for img in &bundle.images {
        if img.width == 0 || img.height == 0 {
            out.push(Violation::new("bad-image-size", &img.image_id));
        }
    }

    for obj in &bundle.objects {
        let Some(img) = images.get(obj.image_id.as_str()) else {
            out.push(Violation::new("broken-chain", &obj.image_id));
            continue;
        };
        if !obj.bbox.is_inside(img.width, img.height) {
            out.push(Violation::new("bbox-out-of-bounds", &obj.object_id));
        }
        if obj.mask.height != img.height || obj.mask.width != img.width {
            out.push(Violation::new("mask-size-mismatch", &obj.object_id));
        }
        let mask = match obj.mask.decode() {
            Ok(m) => m,
            Err(_) => {
                out.push(Violation::new("rle-length-mismatch", &obj.object_id));
                continue;
            }
        };
        match mask_bbox(&mask) {
            Err(_) => out.push(Violation::new("empty-mask", &obj.object_id)),
            Ok(mb) => {
                if box_iou(&obj.bbox, &mb) < opts.box_mask_tau {
                    out.push(Violation::new("box-mask-mismatch", &obj.object_id));
                }
            }
        }
    }

    for ev in &bundle.evidence {
        if !objects.contains(ev.object_id.as_str()) {
            out.push(Violation::new("broken-chain", &ev.object_id));
        }
        if ev.urls.is_empty() {
            out.push(Violation::new("evidence-without-urls", &ev.evidence_id));
        }
        if !(1..=3).contains(&ev.hops) {
            out.push(Violation::new("bad-hops", &ev.evidence_id));
        }
    }

    for qa in &bundle.qa {
        if !objects.contains(qa.object_id.as_str()) {
            out.push(Violation::new("broken-chain", &qa.object_id));
        }
        match (&qa.options, qa.answer_index) {
            (None, None) => {}
            (Some(_), None) | (None, Some(_)) => {
                out.push(Violation::new("options-answer-mismatch", &qa.qa_id))
            }
            (Some(opts), Some(idx)) => {
                if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&opts.len()) {
                    out.push(Violation::new("bad-option-count", &qa.qa_id));
                }
                if idx >= opts.len() {
                    out.push(Violation::new("bad-answer-index", &qa.qa_id));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ground,
    Seg,
    Vqa,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Ground, Task::Seg, Task::Vqa];

    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Ground => "ground",
            Task::Seg => "seg",
            Task::Vqa => "vqa",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ground" => Ok(Task::Ground),
            "seg" => Ok(Task::Seg),
            "vqa" => Ok(Task::Vqa),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskFilter {
    #[default]
    All,
    Only(Task),
}

impl TaskFilter {
    pub fn admits(&self, task: Task) -> bool {
        match self {
            TaskFilter::All => true,
            TaskFilter::Only(t) => *t == task,
        }
    }
}

/// One item in one task view, with everything needed to run and score it.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub qa_id: String,
    pub task: Task,
    pub image: ImageRef,
    pub question: String,
    pub gt_bbox: BBox,
    pub gt_mask: Arc<BinaryMask>,
    pub options: Option<Vec<String>>,
    pub answer_index: Option<usize>,
    /// Benchmark category of the source image (table column).
    pub category: String,
    /// Ground-truth entity name and aliases, used by the failure taxonomy.
    pub target_name: String,
    pub target_aliases: Vec<String>,
}

/// Expand QA items into task samples ordered by `(qa_id, task)`.
pub fn expand_samples(bundle: &DatasetBundle, filter: TaskFilter) -> Result<Vec<TaskSample>> {
    let mut qa: Vec<&QaItem> = bundle.qa.iter().collect();
    qa.sort_by(|a, b| a.qa_id.cmp(&b.qa_id));
    let mut masks: BTreeMap<&str, Arc<BinaryMask>> = BTreeMap::new();
    let mut out = Vec::new();
    for item in qa {
        let obj = bundle
            .object(&item.object_id)
            .ok_or_else(|| Error::BrokenChain(item.object_id.clone()))?;
        let img = bundle
            .image(&obj.image_id)
            .ok_or_else(|| Error::BrokenChain(obj.image_id.clone()))?;
        let mask = match masks.get(obj.object_id.as_str()) {
            Some(m) => m.clone(),
            None => {
                let m = Arc::new(obj.mask.decode()?);
                masks.insert(obj.object_id.as_str(), m.clone());
                m
            }
        };
        for task in Task::ALL {
            if !filter.admits(task) || (task == Task::Vqa && !item.has_options()) {
                continue;
            }
            let vqa = task == Task::Vqa;
            out.push(TaskSample {
                qa_id: item.qa_id.clone(),
                task,
                image: ImageRef {
                    image_id: img.image_id.clone(),
                    uri: bundle.resolve_uri(&img.uri),
                    width: img.width,
                    height: img.height,
                },
                question: item.question.clone(),
                gt_bbox: obj.bbox,
                gt_mask: mask.clone(),
                options: if vqa { item.options.clone() } else { None },
                answer_index: if vqa { item.answer_index } else { None },
                category: img.category.clone(),
                target_name: obj.name.clone(),
                target_aliases: obj.aliases.clone(),
            });
        }
    }
    Ok(out)
}
