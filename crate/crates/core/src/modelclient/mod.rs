//! Role-typed model backends: captioner, text embedder, image embedder and
//! object detector.
//!
//! Every backend speaks the same small protocol ([`ModelBackend`]). The
//! [`MockBackend`] is a pure function of its inputs and fixture file, so
//! whole pipeline runs are bit-reproducible; the [`HttpBackend`] talks to an
//! inference service over JSON.

mod http;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use http::HttpBackend;
pub use mock::{DetectionFixture, FixtureDetection, FixtureImage, MockBackend, DEFAULT_MOCK_DIM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionStyle {
    Short,
    Long,
}

impl CaptionStyle {
    pub const ALL: [CaptionStyle; 2] = [CaptionStyle::Short, CaptionStyle::Long];

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionStyle::Short => "short",
            CaptionStyle::Long => "long",
        }
    }
}

impl FromStr for CaptionStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "short" => Ok(CaptionStyle::Short),
            "long" => Ok(CaptionStyle::Long),
            other => Err(Error::invalid(format!("unknown caption style {other:?}"))),
        }
    }
}

impl fmt::Display for CaptionStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Conditioning prefix sent with each caption request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StylePrefixes {
    pub short: String,
    pub long: String,
}

impl Default for StylePrefixes {
    fn default() -> Self {
        Self {
            short: "caption briefly:".into(),
            long: "caption in detail:".into(),
        }
    }
}

impl StylePrefixes {
    pub fn validate(&self) -> Result<()> {
        if self.short.trim().is_empty() || self.long.trim().is_empty() {
            return Err(Error::invalid("caption prefixes must be non-empty"));
        }
        if self.short == self.long {
            return Err(Error::invalid("short and long caption prefixes must differ"));
        }
        Ok(())
    }

    pub fn get(&self, style: CaptionStyle) -> &str {
        match style {
            CaptionStyle::Short => &self.short,
            CaptionStyle::Long => &self.long,
        }
    }
}

/// Pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox(pub [f64; 4]);

impl BoundingBox {
    pub fn x(&self) -> f64 {
        self.0[0]
    }
    pub fn y(&self) -> f64 {
        self.0[1]
    }
    pub fn w(&self) -> f64 {
        self.0[2]
    }
    pub fn h(&self) -> f64 {
        self.0[3]
    }

    pub fn full(width: u32, height: u32) -> Self {
        BoundingBox([0.0, 0.0, width as f64, height as f64])
    }

    pub fn covers(&self, width: u32, height: u32) -> bool {
        *self == Self::full(width, height)
    }

    pub fn validate(&self, width: u32, height: u32) -> std::result::Result<(), String> {
        let [x, y, w, h] = self.0;
        if !self.0.iter().all(|v| v.is_finite()) {
            return Err("box has non-finite coordinates".into());
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(format!("box {:?} has non-positive size", self.0));
        }
        if x < 0.0 || y < 0.0 || x + w > width as f64 || y + h > height as f64 {
            return Err(format!("box {:?} exceeds {width}x{height} image", self.0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Image the detection belongs to.
    pub image: String,
    pub class: String,
    pub score: f64,
    pub bbox: BoundingBox,
    /// Size of the source image, needed to crop.
    pub image_size: (u32, u32),
}

impl Detection {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0,1]", self.score));
        }
        self.bbox.validate(self.image_size.0, self.image_size.1)
    }
}

/// What the image embedder is asked to embed.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageInput {
    /// A whole image by reference (local path for HTTP backends).
    Ref(String),
    /// Encoded image bytes.
    Bytes(Vec<u8>),
    /// A detector box cut out of a referenced image and padded to a square.
    Crop {
        image_ref: String,
        bbox: BoundingBox,
        image_size: (u32, u32),
    },
}

impl ImageInput {
    /// A crop spanning the whole image is the image itself.
    pub fn crop(image_ref: &str, bbox: BoundingBox, image_size: (u32, u32)) -> Self {
        if bbox.covers(image_size.0, image_size.1) {
            ImageInput::Ref(image_ref.to_string())
        } else {
            ImageInput::Crop {
                image_ref: image_ref.to_string(),
                bbox,
                image_size,
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            ImageInput::Ref(r) => r.clone(),
            ImageInput::Bytes(b) => format!("<{} bytes>", b.len()),
            ImageInput::Crop { image_ref, bbox, .. } => format!("{image_ref}@{:?}", bbox.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub dim: usize,
    pub roles: Vec<String>,
}

pub trait ModelBackend: Send + Sync {
    fn caption(&self, image_ref: &str, style: CaptionStyle, prefix: &str) -> Result<String>;

    /// One unit-norm vector per text, in input order.
    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;

    /// One unit-norm vector per image, in input order.
    fn embed_image(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>>;

    fn detect(&self, image_ref: &str) -> Result<Vec<Detection>>;

    fn info(&self) -> Result<BackendInfo>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Mock embedding dimension.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Mock detector fixture file.
    #[serde(default)]
    pub detections: Option<PathBuf>,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_batch() -> usize {
    32
}
fn default_dim() -> usize {
    DEFAULT_MOCK_DIM
}

impl Default for BackendDescriptor {
    fn default() -> Self {
        Self::mock()
    }
}

impl BackendDescriptor {
    pub fn mock() -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_retries(),
            batch_size: default_batch(),
            dim: default_dim(),
            detections: None,
        }
    }

    pub fn http(endpoint: &str) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.to_string()),
            ..Self::mock()
        }
    }

    /// `mock` or an `http(s)://` URL, as accepted by `--backend`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "mock" => Ok(Self::mock()),
            url if url.starts_with("http://") || url.starts_with("https://") => Ok(Self::http(url)),
            other => Err(Error::invalid(format!("backend must be `mock` or an http URL, got {other:?}"))),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => Err(Error::invalid("http backend needs an endpoint")),
            BackendKind::Mock if self.dim == 0 => Err(Error::invalid("mock dim must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn connect(&self) -> Result<Box<dyn ModelBackend>> {
        self.validate()?;
        Ok(match self.kind {
            BackendKind::Mock => {
                let mut mock = MockBackend::new(self.dim);
                if let Some(path) = &self.detections {
                    mock = mock.with_fixture(DetectionFixture::load(path)?);
                }
                Box::new(mock)
            }
            BackendKind::Http => Box::new(HttpBackend::new(self)?),
        })
    }
}

/// Outcome of one attempt inside [`with_retries`].
#[derive(Debug)]
pub enum Attempt {
    Retryable(String),
    Fatal(String),
}

/// Runs `op` up to `max_retries + 1` times, retrying only retryable
/// failures. The final error names `item` and the number of attempts.
pub fn with_retries<T>(max_retries: u32, item: &str, mut op: impl FnMut() -> Result<T, Attempt>) -> Result<T> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match op() {
            Ok(v) => return Ok(v),
            Err(Attempt::Retryable(message)) if attempts <= max_retries => {
                tracing::warn!(item, attempts, %message, "retrying backend call");
            }
            Err(Attempt::Retryable(message)) | Err(Attempt::Fatal(message)) => {
                return Err(Error::Backend {
                    item: item.to_string(),
                    attempts,
                    message,
                })
            }
        }
    }
}

pub(crate) fn normalize(v: &mut [f32]) -> std::result::Result<(), String> {
    let norm = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err("vector has zero or non-finite norm".into());
    }
    for x in v {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}
