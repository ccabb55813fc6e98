use std::io::Cursor;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use image::{DynamicImage, GenericImage, ImageFormat};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use super::{
    normalize, with_retries, Attempt, BackendDescriptor, BackendInfo, BoundingBox, CaptionStyle, Detection,
    ImageInput, ModelBackend,
};
use crate::error::{Error, Result};

/// Client for an inference service speaking the JSON protocol:
///
/// | route             | request                          | response                          |
/// |-------------------|----------------------------------|-----------------------------------|
/// | `POST /caption`   | `{image_b64, style, prefix}`     | `{caption}`                       |
/// | `POST /embed_text`| `{texts}`                        | `{vectors, dim}`                  |
/// | `POST /embed_image`| `{images_b64}`                  | `{vectors, dim}`                  |
/// | `POST /detect`    | `{image_b64}`                    | `{detections: [{cls, score, box}]}` |
/// | `GET /info`       |                                  | `{dim, roles}`                    |
pub struct HttpBackend {
    agent: Agent,
    base: String,
    max_retries: u32,
    batch_size: usize,
}

#[derive(Serialize)]
struct CaptionRequest<'a> {
    image_b64: String,
    style: &'a str,
    prefix: &'a str,
}

#[derive(Deserialize)]
struct CaptionResponse {
    caption: String,
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct EmbedImageRequest {
    images_b64: Vec<String>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f32>>,
    dim: usize,
}

#[derive(Serialize)]
struct DetectRequest {
    image_b64: String,
}

#[derive(Deserialize)]
struct WireDetection {
    cls: String,
    score: f64,
    #[serde(rename = "box")]
    bbox: [f64; 4],
}

#[derive(Deserialize)]
struct DetectResponse {
    detections: Vec<WireDetection>,
}

fn read_image(image_ref: &str) -> Result<Vec<u8>> {
    let path = Path::new(image_ref);
    if !path.is_file() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Cuts `bbox` out of the image and centers it on a black square canvas,
/// returned as PNG bytes.
pub fn crop_to_square_png(image_ref: &str, bbox: BoundingBox) -> Result<Vec<u8>> {
    let img = image::open(image_ref).map_err(|e| Error::invalid(format!("{image_ref}: {e}")))?;
    bbox.validate(img.width(), img.height())
        .map_err(|r| Error::invalid(format!("{image_ref}: {r}")))?;
    let x = bbox.x().floor() as u32;
    let y = bbox.y().floor() as u32;
    let w = ((bbox.x() + bbox.w()).ceil() as u32).min(img.width()) - x;
    let h = ((bbox.y() + bbox.h()).ceil() as u32).min(img.height()) - y;
    let crop = img.crop_imm(x, y, w.max(1), h.max(1)).to_rgb8();
    let side = crop.width().max(crop.height());
    let mut canvas = image::RgbImage::new(side, side);
    canvas
        .copy_from(&crop, (side - crop.width()) / 2, (side - crop.height()) / 2)
        .map_err(|e| Error::invalid(format!("{image_ref}: {e}")))?;
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb8(canvas)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid(format!("{image_ref}: {e}")))?;
    Ok(out.into_inner())
}

fn image_bytes(input: &ImageInput) -> Result<Vec<u8>> {
    match input {
        ImageInput::Ref(r) => read_image(r),
        ImageInput::Bytes(b) => Ok(b.clone()),
        ImageInput::Crop { image_ref, bbox, .. } => crop_to_square_png(image_ref, *bbox),
    }
}

impl HttpBackend {
    pub fn new(desc: &BackendDescriptor) -> Result<Self> {
        let base = desc
            .endpoint
            .as_deref()
            .ok_or_else(|| Error::invalid("http backend needs an endpoint"))?
            .trim_end_matches('/')
            .to_string();
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(desc.timeout()))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            agent,
            base,
            max_retries: desc.max_retries,
            batch_size: desc.batch_size.max(1),
        })
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, route: &str, item: &str, body: Option<&Req>) -> Result<Resp> {
        let url = format!("{}{route}", self.base);
        with_retries(self.max_retries, item, || {
            let sent = match body {
                Some(b) => self.agent.post(&url).send_json(b),
                None => self.agent.get(&url).call(),
            };
            let mut resp = sent.map_err(|e| Attempt::Retryable(format!("{route}: {e}")))?;
            let status = resp.status().as_u16();
            if status >= 500 || status == 429 {
                return Err(Attempt::Retryable(format!("{route}: HTTP {status}")));
            }
            if status >= 400 {
                return Err(Attempt::Fatal(format!("{route}: HTTP {status}")));
            }
            resp.body_mut()
                .read_json::<Resp>()
                .map_err(|e| Attempt::Fatal(format!("{route}: bad response body: {e}")))
        })
    }

    fn check_vectors(&self, item: &str, expected: usize, resp: EmbedResponse) -> Result<Vec<Vec<f32>>> {
        let bad = |message: String| Error::Backend {
            item: item.to_string(),
            attempts: 1,
            message,
        };
        if resp.vectors.len() != expected {
            return Err(bad(format!("expected {expected} vectors, got {}", resp.vectors.len())));
        }
        let mut out = resp.vectors;
        for v in &mut out {
            if v.len() != resp.dim {
                return Err(bad(format!("vector of length {} but dim is {}", v.len(), resp.dim)));
            }
            normalize(v).map_err(bad)?;
        }
        Ok(out)
    }
}

fn batch_label(kind: &str, start: usize, len: usize) -> String {
    format!("{kind}[{start}..{}]", start + len)
}

impl ModelBackend for HttpBackend {
    fn caption(&self, image_ref: &str, style: CaptionStyle, prefix: &str) -> Result<String> {
        let req = CaptionRequest {
            image_b64: B64.encode(read_image(image_ref)?),
            style: style.as_str(),
            prefix,
        };
        let resp: CaptionResponse = self.call("/caption", image_ref, Some(&req))?;
        let caption = resp.caption.trim().to_string();
        if caption.is_empty() {
            return Err(Error::Backend {
                item: image_ref.to_string(),
                attempts: 1,
                message: "empty caption".into(),
            });
        }
        Ok(caption)
    }

    fn embed_text(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        if texts.is_empty() {
            return Err(Error::invalid("embed_text needs at least one text"));
        }
        let mut out = Vec::with_capacity(texts.len());
        for (i, chunk) in texts.chunks(self.batch_size).enumerate() {
            let label = batch_label("texts", i * self.batch_size, chunk.len());
            let resp: EmbedResponse = self.call("/embed_text", &label, Some(&EmbedTextRequest { texts: chunk }))?;
            out.extend(self.check_vectors(&label, chunk.len(), resp)?);
        }
        Ok(out)
    }

    fn embed_image(&self, images: &[ImageInput]) -> Result<Vec<Vec<f32>>> {
        if images.is_empty() {
            return Err(Error::invalid("embed_image needs at least one image"));
        }
        let mut out = Vec::with_capacity(images.len());
        for (i, chunk) in images.chunks(self.batch_size).enumerate() {
            let label = match chunk {
                [one] => one.label(),
                _ => batch_label("images", i * self.batch_size, chunk.len()),
            };
            let images_b64 = chunk
                .iter()
                .map(|im| image_bytes(im).map(|b| B64.encode(b)))
                .collect::<Result<Vec<_>>>()?;
            let resp: EmbedResponse = self.call("/embed_image", &label, Some(&EmbedImageRequest { images_b64 }))?;
            out.extend(self.check_vectors(&label, chunk.len(), resp)?);
        }
        Ok(out)
    }

    fn detect(&self, image_ref: &str) -> Result<Vec<Detection>> {
        let bytes = read_image(image_ref)?;
        let (width, height) = image::ImageReader::new(Cursor::new(&bytes))
            .with_guessed_format()
            .map_err(|e| Error::io(image_ref, e))?
            .into_dimensions()
            .map_err(|e| Error::invalid(format!("{image_ref}: {e}")))?;
        let resp: DetectResponse = self.call("/detect", image_ref, Some(&DetectRequest { image_b64: B64.encode(&bytes) }))?;
        resp.detections
            .into_iter()
            .map(|d| {
                let det = Detection {
                    image: image_ref.to_string(),
                    class: d.cls,
                    score: d.score,
                    bbox: BoundingBox(d.bbox),
                    image_size: (width, height),
                };
                det.validate()
                    .map_err(|reason| Error::Invalid(format!("detection for {image_ref}: {reason}")))?;
                Ok(det)
            })
            .collect()
    }

    fn info(&self) -> Result<BackendInfo> {
        self.call::<(), BackendInfo>("/info", "info", None)
    }
}
