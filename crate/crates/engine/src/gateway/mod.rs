//! Narrow interfaces to the external tools: a vision-capable chat model,
//! text search, reference-image search, and a box-promptable segmenter.
//!
//! [`Gateway`] owns one backend per tool plus the shared caches. Backends
//! are chosen per endpoint string: `mock:<dir>` selects the fixture-driven
//! implementations in [`mock`], anything else is treated as an HTTP base URL.

pub mod http;
pub mod mock;
pub mod remote;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use image::RgbImage;
use serde::{de::DeserializeOwned, Serialize};
use sha2::{Digest, Sha256};

use searchpix_core::render::decode_image;
use searchpix_core::{BBox, BinaryMask, Rle, SearchResult};

use crate::config::{Endpoint, ToolConfig};
use crate::error::{Result, ToolError};

/// An image attached to a chat request, already PNG-encoded.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptImage {
    pub label: String,
    pub png: Arc<Vec<u8>>,
}

impl PromptImage {
    pub fn new(label: impl Into<String>, png: Arc<Vec<u8>>) -> Self {
        Self {
            label: label.into(),
            png,
        }
    }

    pub fn digest(&self) -> String {
        sha256_hex(&self.png)
    }
}

/// One chat turn. Images are sent in the order given, which is the order
/// the prompt text refers to them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub prompt_id: String,
    pub rendered_prompt: String,
    pub images: Vec<PromptImage>,
}

impl ChatRequest {
    pub fn text(prompt_id: &str, prompt: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.to_string(),
            rendered_prompt: prompt.into(),
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<PromptImage>) -> Self {
        self.images = images;
        self
    }

    fn cache_key(&self, model: &str) -> String {
        let mut h = Sha256::new();
        for part in [model, &self.prompt_id, &self.rendered_prompt] {
            h.update(part.as_bytes());
            h.update([0]);
        }
        for img in &self.images {
            h.update(img.label.as_bytes());
            h.update(&img.png[..]);
        }
        hex(&h.finalize())
    }
}

pub trait LlmBackend: Send + Sync {
    /// Raw reply text. `scope` identifies the calling sample and task so
    /// scripted backends can keep independent transcripts.
    fn complete(&self, scope: &str, req: &ChatRequest) -> Result<String>;
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchResult>>;
}

pub trait ImageSearchBackend: Send + Sync {
    /// Up to `k` image locations (paths or URLs) showing `entity`.
    fn find_images(&self, entity: &str, k: usize) -> Result<Vec<String>>;
}

pub trait SegmentBackend: Send + Sync {
    fn segment(&self, width: u32, height: u32, png: &[u8], bbox: &BBox) -> Result<Rle>;
}

/// A decoded image together with the PNG bytes used to send it to tools.
#[derive(Debug, Clone)]
pub struct FetchedImage {
    pub uri: String,
    pub image: Arc<RgbImage>,
    pub png: Arc<Vec<u8>>,
}

impl FetchedImage {
    pub fn width(&self) -> u32 {
        self.image.width()
    }

    pub fn height(&self) -> u32 {
        self.image.height()
    }
}

/// Snapshot of gateway-level counters. Cache hits are not backend calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub llm_calls: u64,
    pub llm_cache_hits: u64,
    pub search_calls: u64,
    pub search_cache_hits: u64,
    pub image_search_calls: u64,
    pub image_fetches: u64,
    pub image_cache_hits: u64,
    pub segment_calls: u64,
    pub network_calls: u64,
}

#[derive(Default)]
struct Counters {
    llm_calls: AtomicU64,
    llm_cache_hits: AtomicU64,
    search_calls: AtomicU64,
    search_cache_hits: AtomicU64,
    image_search_calls: AtomicU64,
    image_fetches: AtomicU64,
    image_cache_hits: AtomicU64,
    segment_calls: AtomicU64,
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

/// Keyed store kept in memory and, when a directory is given, mirrored to
/// one JSON file per key.
pub struct Cache<V> {
    mem: Mutex<HashMap<String, V>>,
    dir: Option<PathBuf>,
}

impl<V: Clone + Serialize + DeserializeOwned> Cache<V> {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self {
            mem: Mutex::default(),
            dir,
        }
    }

    fn file(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{key}.json")))
    }

    pub fn get(&self, key: &str) -> Option<V> {
        if let Some(v) = self.mem.lock().unwrap_or_else(|p| p.into_inner()).get(key) {
            return Some(v.clone());
        }
        let text = std::fs::read_to_string(self.file(key)?).ok()?;
        let v: V = serde_json::from_str(&text).ok()?;
        self.mem
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key.to_string(), v.clone());
        Some(v)
    }

    pub fn put(&self, key: &str, value: V) {
        if let Some(path) = self.file(key) {
            // a failed write only costs a future cache miss
            let _ = path
                .parent()
                .map(std::fs::create_dir_all)
                .transpose()
                .ok()
                .and_then(|_| serde_json::to_string(&value).ok())
                .map(|text| std::fs::write(&path, text));
        }
        self.mem
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(key.to_string(), value);
    }

    pub fn len(&self) -> usize {
        self.mem.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Gateway {
    llm: Box<dyn LlmBackend>,
    search: Box<dyn SearchBackend>,
    image_search: Box<dyn ImageSearchBackend>,
    segmenter: Box<dyn SegmentBackend>,
    model: String,
    chat_cache: Option<Cache<String>>,
    search_cache: Cache<Vec<SearchResult>>,
    images: Mutex<HashMap<String, FetchedImage>>,
    transport: Option<Arc<http::HttpTransport>>,
    network: Arc<AtomicU64>,
    counters: Counters,
}

impl Gateway {
    /// Build backends from endpoint strings. Chat replies are cached only
    /// when `cache_dir` is set; scripted transcripts must see every call.
    pub fn from_config(cfg: &ToolConfig) -> Result<Self> {
        cfg.validate()?;
        let network = Arc::new(AtomicU64::new(0));
        let endpoints = [
            Endpoint::parse(&cfg.llm_endpoint),
            Endpoint::parse(&cfg.search_endpoint),
            Endpoint::parse(&cfg.image_search_endpoint),
            Endpoint::parse(&cfg.segment_endpoint),
        ];
        let transport = endpoints
            .iter()
            .any(|e| matches!(e, Endpoint::Http(_)))
            .then(|| Arc::new(http::HttpTransport::new(cfg, network.clone())));
        let need_http = |url: &str| -> Result<Arc<http::HttpTransport>> {
            transport
                .clone()
                .ok_or_else(|| ToolError::Config(format!("no transport for {url}")))
        };
        let [llm_ep, search_ep, image_ep, seg_ep] = endpoints;

        let llm: Box<dyn LlmBackend> = match llm_ep {
            Endpoint::Mock(dir) => Box::new(mock::ScriptedLlm::from_dir(dir)),
            Endpoint::Http(url) => Box::new(remote::HttpLlm::new(need_http(&url)?, url, &cfg.model)),
            Endpoint::Unset => unreachable!("validated"),
        };
        let search: Box<dyn SearchBackend> = match search_ep {
            Endpoint::Mock(dir) => Box::new(mock::FixtureSearch::from_dir(dir)?),
            Endpoint::Http(url) => Box::new(remote::HttpSearch::new(need_http(&url)?, url)),
            Endpoint::Unset => unreachable!("validated"),
        };
        let image_search: Box<dyn ImageSearchBackend> = match image_ep {
            Endpoint::Mock(dir) => Box::new(mock::FixtureImageSearch::from_dir(dir)?),
            Endpoint::Http(url) => Box::new(remote::HttpImageSearch::new(need_http(&url)?, url)),
            Endpoint::Unset => unreachable!("validated"),
        };
        let segmenter: Box<dyn SegmentBackend> = match seg_ep {
            Endpoint::Mock(_) => Box::new(mock::GeometricSegmenter),
            Endpoint::Http(url) => Box::new(remote::HttpSegmenter::new(need_http(&url)?, url)),
            Endpoint::Unset => unreachable!("validated"),
        };

        let mut gw = Self::with_backends(llm, search, image_search, segmenter);
        gw.model = cfg.model.clone();
        gw.transport = transport;
        gw.network = network;
        if let Some(dir) = &cfg.cache_dir {
            gw.chat_cache = Some(Cache::new(Some(dir.join("chat"))));
            gw.search_cache = Cache::new(Some(dir.join("search")));
        }
        Ok(gw)
    }

    pub fn with_backends(
        llm: Box<dyn LlmBackend>,
        search: Box<dyn SearchBackend>,
        image_search: Box<dyn ImageSearchBackend>,
        segmenter: Box<dyn SegmentBackend>,
    ) -> Self {
        Self {
            llm,
            search,
            image_search,
            segmenter,
            model: "default".to_string(),
            chat_cache: None,
            search_cache: Cache::new(None),
            images: Mutex::default(),
            transport: None,
            network: Arc::new(AtomicU64::new(0)),
            counters: Counters::default(),
        }
    }

    /// Fixture-driven gateway over `dir` with the geometric segmenter.
    pub fn mock(dir: impl AsRef<Path>) -> Result<Self> {
        Self::from_config(&ToolConfig::all_mock(dir))
    }

    /// Network attempts made so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.network.load(Ordering::SeqCst)
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        GatewayStats {
            llm_calls: get(&c.llm_calls),
            llm_cache_hits: get(&c.llm_cache_hits),
            search_calls: get(&c.search_calls),
            search_cache_hits: get(&c.search_cache_hits),
            image_search_calls: get(&c.image_search_calls),
            image_fetches: get(&c.image_fetches),
            image_cache_hits: get(&c.image_cache_hits),
            segment_calls: get(&c.segment_calls),
            network_calls: self.network_calls(),
        }
    }

    pub fn chat(&self, scope: &str, req: &ChatRequest) -> Result<String> {
        if req.rendered_prompt.trim().is_empty() {
            return Err(ToolError::Precondition("empty prompt".into()));
        }
        let key = self.chat_cache.as_ref().map(|_| req.cache_key(&self.model));
        if let (Some(cache), Some(key)) = (&self.chat_cache, &key) {
            if let Some(hit) = cache.get(key) {
                bump(&self.counters.llm_cache_hits);
                return Ok(hit);
            }
        }
        bump(&self.counters.llm_calls);
        let text = self.llm.complete(scope, req)?;
        if let (Some(cache), Some(key)) = (&self.chat_cache, key) {
            cache.put(&key, text.clone());
        }
        Ok(text)
    }

    /// Text search, cached by exact query and `k`. Returns the results and
    /// whether they came from the cache.
    pub fn search_text(&self, query: &str, k: usize) -> Result<(Vec<SearchResult>, bool)> {
        if query.trim().is_empty() {
            return Err(ToolError::Precondition("empty search query".into()));
        }
        let key = sha256_hex(format!("search\0{k}\0{query}").as_bytes());
        if let Some(hit) = self.search_cache.get(&key) {
            bump(&self.counters.search_cache_hits);
            return Ok((hit, true));
        }
        bump(&self.counters.search_calls);
        let mut results = self.search.search(query, k)?;
        results.truncate(k);
        self.search_cache.put(&key, results.clone());
        Ok((results, false))
    }

    pub fn find_reference_images(&self, entity: &str, k: usize) -> Result<Vec<String>> {
        if entity.trim().is_empty() {
            return Err(ToolError::Precondition("empty entity name".into()));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        bump(&self.counters.image_search_calls);
        let mut uris = self.image_search.find_images(entity, k)?;
        uris.truncate(k);
        Ok(uris)
    }

    /// Load and decode an image by path or URL, cached by `uri`.
    pub fn fetch_image(&self, uri: &str) -> Result<FetchedImage> {
        if let Some(hit) = self.images.lock().unwrap_or_else(|p| p.into_inner()).get(uri) {
            bump(&self.counters.image_cache_hits);
            return Ok(hit.clone());
        }
        bump(&self.counters.image_fetches);
        let bytes = if uri.starts_with("http://") || uri.starts_with("https://") {
            let transport = self.transport.as_ref().ok_or_else(|| {
                ToolError::FetchFailed(format!("{uri}: remote fetch disabled in mock mode"))
            })?;
            transport
                .get_bytes(uri)
                .map_err(|e| ToolError::FetchFailed(format!("{uri}: {e}")))?
        } else {
            let path = uri.strip_prefix("file://").unwrap_or(uri);
            std::fs::read(path).map_err(|e| ToolError::FetchFailed(format!("{uri}: {e}")))?
        };
        let image = decode_image(&bytes).map_err(|e| ToolError::ImageDecode(format!("{uri}: {e}")))?;
        // re-encode so every image sent to tools is byte-stable PNG
        let png = searchpix_core::render::encode_png(&image);
        let fetched = FetchedImage {
            uri: uri.to_string(),
            image: Arc::new(image),
            png: Arc::new(png),
        };
        self.images
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .insert(uri.to_string(), fetched.clone());
        Ok(fetched)
    }

    /// Box-prompted mask for an image, checked against the image size.
    pub fn segment_box(&self, image: &FetchedImage, bbox: &BBox) -> Result<BinaryMask> {
        let (w, h) = (image.width(), image.height());
        if !bbox.is_inside(w, h) {
            return Err(ToolError::Precondition(format!(
                "box {:?} not clamped to {w}x{h}",
                bbox.to_array()
            )));
        }
        bump(&self.counters.segment_calls);
        let rle = self.segmenter.segment(w, h, &image.png, bbox)?;
        check_mask(&rle, w, h)
    }
}

/// Decode a segmenter reply and require the image's shape and a nonempty
/// foreground.
pub fn check_mask(rle: &Rle, width: u32, height: u32) -> Result<BinaryMask> {
    if (rle.height, rle.width) != (height, width) {
        return Err(ToolError::SegmenterBadMask(format!(
            "mask is {}x{}, image is {height}x{width}",
            rle.height, rle.width
        )));
    }
    let mask = rle
        .decode()
        .map_err(|e| ToolError::SegmenterBadMask(e.to_string()))?;
    if mask.is_empty() {
        return Err(ToolError::SegmenterBadMask("empty mask".into()));
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    struct CountingSearch(AtomicU64);
    impl SearchBackend for CountingSearch {
        fn search(&self, query: &str, _k: usize) -> Result<Vec<SearchResult>> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Ok(vec![SearchResult {
                title: query.to_string(),
                url: "https://example.org".into(),
                snippet: String::new(),
                access_date: String::new(),
            }])
        }
    }

    fn gateway_with(search: Box<dyn SearchBackend>) -> Gateway {
        Gateway::with_backends(
            Box::new(mock::ScriptedLlm::default()),
            search,
            Box::new(mock::FixtureImageSearch::from_dir("/nonexistent").unwrap()),
            Box::new(mock::GeometricSegmenter),
        )
    }

    #[test]
    fn repeated_query_hits_cache() {
        let gw = gateway_with(Box::new(CountingSearch(AtomicU64::new(0))));
        let (_, cached) = gw.search_text("q", 5).unwrap();
        assert!(!cached);
        let (r, cached) = gw.search_text("q", 5).unwrap();
        assert!(cached);
        assert_eq!(r.len(), 1);
        assert_eq!(gw.stats().search_calls, 1);
        assert_eq!(gw.stats().search_cache_hits, 1);
        assert_eq!(gw.network_calls(), 0);
    }

    #[test]
    fn empty_query_is_precondition_error() {
        let gw = gateway_with(Box::new(mock::FixtureSearch::from_map(HashMap::new())));
        assert_eq!(gw.search_text("  ", 5).unwrap_err().code(), "precondition-failed");
        assert!(gw.find_reference_images("x", 0).unwrap().is_empty());
    }

    #[test]
    fn fetch_image_decodes_and_caches() {
        let dir = tempfile::tempdir().unwrap();
        let img = RgbImage::new(7, 5);
        let path = dir.path().join("a.png");
        std::fs::write(&path, searchpix_core::render::encode_png(&img)).unwrap();
        std::fs::write(dir.path().join("bad.png"), b"not a png").unwrap();
        let gw = gateway_with(Box::new(mock::FixtureSearch::from_map(HashMap::new())));
        let uri = path.display().to_string();
        let a = gw.fetch_image(&uri).unwrap();
        assert_eq!((a.width(), a.height()), (7, 5));
        gw.fetch_image(&uri).unwrap();
        assert_eq!(gw.stats().image_cache_hits, 1);
        let bad = dir.path().join("bad.png").display().to_string();
        assert_eq!(gw.fetch_image(&bad).unwrap_err().code(), "image-decode-failed");
        assert_eq!(gw.fetch_image("/missing.png").unwrap_err().code(), "fetch-failed");
    }

    #[test]
    fn segment_box_validates_shape() {
        let gw = gateway_with(Box::new(mock::FixtureSearch::from_map(HashMap::new())));
        let img = FetchedImage {
            uri: "x".into(),
            image: Arc::new(RgbImage::new(4, 4)),
            png: Arc::new(Vec::new()),
        };
        let m = gw
            .segment_box(&img, &BBox::new(0.0, 0.0, 2.0, 2.0).unwrap())
            .unwrap();
        assert_eq!(m.area(), 4);
        let wrong = BinaryMask::zeros(3, 4).to_rle();
        assert_eq!(check_mask(&wrong, 4, 4).unwrap_err().code(), "segmenter-bad-mask");
        let empty = BinaryMask::zeros(4, 4).to_rle();
        assert_eq!(check_mask(&empty, 4, 4).unwrap_err().code(), "segmenter-bad-mask");
    }

    #[test]
    fn disk_cache_survives_new_instance() {
        let dir = tempfile::tempdir().unwrap();
        let a: Cache<String> = Cache::new(Some(dir.path().to_path_buf()));
        a.put("k", "v".into());
        let b: Cache<String> = Cache::new(Some(dir.path().to_path_buf()));
        assert_eq!(b.get("k").as_deref(), Some("v"));
        assert!(b.get("other").is_none());
    }
}
