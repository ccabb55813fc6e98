use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{normalize, BackendInfo, BoundingBox, CaptionStyle, Detection, ImageInput, ModelBackend};
use crate::error::{Error, Result};

pub const DEFAULT_MOCK_DIM: usize = 512;

const DETERMINERS: &[&str] = &["a", "the", "one", "a", "the"];
const ADJECTIVES: &[&str] = &[
    "red", "small", "large", "wooden", "white", "old", "bright", "green", "tall", "quiet", "blue", "yellow", "busy",
    "empty", "shiny", "striped", "young", "brown", "round", "narrow",
];
const NOUNS: &[&str] = &[
    "dog", "cat", "bench", "clock", "table", "street", "woman", "man", "bicycle", "window", "kitchen", "tree",
    "horse", "boat", "pizza", "chair", "lamp", "field", "train", "umbrella", "bird", "plate", "car", "door",
];
const VERBS: &[&str] = &[
    "sits", "stands", "rests", "waits", "leans", "appears", "stays", "lies", "hangs", "shines",
];
const PARTICIPLES: &[&str] = &["sleeping", "waiting", "standing", "resting", "parked", "smiling"];
const PREPOSITIONS: &[&str] = &["on", "near", "beside", "behind", "under", "in", "by", "across"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureDetection {
    pub cls: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureImage {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub detections: Vec<FixtureDetection>,
}

/// Detector outputs keyed by image reference, so tests fully control what
/// the mock detector returns.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetectionFixture(pub BTreeMap<String, FixtureImage>);

impl DetectionFixture {
    pub fn load(path: &Path) -> Result<Self> {
        crate::shards::read_json(path)
    }
}

/// Deterministic stand-in for all four model roles.
#[derive(Debug, Clone)]
pub struct MockBackend {
    dim: usize,
    fixture: DetectionFixture,
}

fn seeded(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

fn noun_phrase(rng: &mut ChaCha8Rng, adjectives: usize, out: &mut Vec<String>) {
    out.push(pick(rng, DETERMINERS).into());
    for _ in 0..adjectives {
        out.push(pick(rng, ADJECTIVES).into());
    }
    out.push(pick(rng, NOUNS).into());
}

/// A sentence of exactly `len` words (4..=15).
fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    let mut w = Vec::with_capacity(len);
    match len {
        4 | 5 => {
            noun_phrase(rng, len - 3, &mut w);
            w.push(pick(rng, PARTICIPLES).into());
        }
        6..=8 => {
            let extra = len - 6;
            noun_phrase(rng, extra.div_ceil(2), &mut w);
            w.push(pick(rng, VERBS).into());
            w.push(pick(rng, PREPOSITIONS).into());
            noun_phrase(rng, extra / 2, &mut w);
        }
        _ => {
            let extra = len - 9;
            let (a, b, c) = (extra.div_ceil(3), (extra + 1) / 3, extra / 3);
            noun_phrase(rng, a, &mut w);
            w.push(pick(rng, VERBS).into());
            w.push(pick(rng, PREPOSITIONS).into());
            noun_phrase(rng, b, &mut w);
            w.push("with".into());
            noun_phrase(rng, c, &mut w);
        }
    }
    debug_assert_eq!(w.len(), len);
    let mut s = w.join(" ");
    if let Some(first) = s.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    s.push('.');
    s
}

impl MockBackend {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            fixture: DetectionFixture::default(),
        }
    }

    pub fn with_fixture(mut self, fixture: DetectionFixture) -> Self {
        self.fixture = fixture;
        self
    }

    fn unit_vector(&self, mut rng: ChaCha8Rng) -> Vec<f32> {
        let mut v: Vec<f32> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        normalize(&mut v).expect("gaussian vector is non-zero");
        v
    }

    fn image_rng(image: &ImageInput) -> ChaCha8Rng {
        match image {
            ImageInput::Ref(r) => seeded(&[b"image-ref", r.as_bytes()]),
            ImageInput::Bytes(b) => seeded(&[b"image-bytes", b]),
            ImageInput::Crop { image_ref, bbox, .. } => {
                let coords: Vec<u8> = bbox.0.iter().flat_map(|v| v.to_bits().to_le_bytes()).collect();
                seeded(&[b"image-crop", image_ref.as_bytes(), &coords])
            }
        }
    }
}

impl ModelBackend for MockBackend {
    /// Short captions are one 4–8 word sentence; long captions are two
    /// sentences totalling 15–25 words.
    fn caption(&self, image_ref: &str, style: CaptionStyle, _prefix: &str) -> Result<String> {
        let mut rng = seeded(&[b"caption", image_ref.as_bytes(), style.as_str().as_bytes()]);
        Ok(match style {
            CaptionStyle::Short => {
                let len = rng.random_range(4..=8);
                sentence(&mut rng, len)
            }
            CaptionStyle::Long => {
                let total: usize = rng.random_range(15..=25);
                let first = total.div_ceil(2);
                let a = sentence(&mut rng, first);
                let b = sentence(&mut rng, total - first);
                format!("{a} {b}")
            }
        })
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(Error::invalid("embed_text needs at least one text"));
        }
        Ok(texts
            .iter()
            .map(|t| self.unit_vector(seeded(&[b"text", t.as_bytes()])))
            .collect())
    }

    fn embed_image(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Err(Error::invalid("embed_image needs at least one image"));
        }
        Ok(images.iter().map(|i| self.unit_vector(Self::image_rng(i))).collect())
    }

    fn detect(&self, image_ref: &str) -> Result<Vec<Detection>> {
        let Some(entry) = self.fixture.0.get(image_ref) else {
            return Ok(Vec::new());
        };
        entry
            .detections
            .iter()
            .map(|d| {
                let det = Detection {
                    image: image_ref.to_string(),
                    class: d.cls.clone(),
                    score: d.score,
                    bbox: BoundingBox(d.bbox),
                    image_size: (entry.width, entry.height),
                };
                det.validate().map_err(|reason| Error::Invalid(format!("detection for {image_ref}: {reason}")))?;
                Ok(det)
            })
            .collect()
    }

    fn info(&self) -> Result<BackendInfo> {
        Ok(BackendInfo {
            dim: self.dim,
            roles: ["caption", "embed_text", "embed_image", "detect"]
                .map(String::from)
                .to_vec(),
        })
    }
}
