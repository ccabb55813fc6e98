use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use recap_core::modelclient::{BoundingBox, ImageInput};
use recap_core::{BackendDescriptor, CaptionStyle, Error, ModelBackend};

#[derive(Debug, Clone)]
struct Request {
    method: String,
    path: String,
    body: Value,
}

type Handler = dyn Fn(usize, &Request) -> (u16, String) + Send + Sync;

/// One-request-per-connection HTTP server; the handler sees the running
/// request index so it can script failures.
struct Server {
    url: String,
    log: Arc<Mutex<Vec<Request>>>,
}

fn serve(mut stream: std::net::TcpStream, seen: &Mutex<Vec<Request>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    let req = Request {
        method,
        path,
        body: serde_json::from_slice(&body).unwrap_or(Value::Null),
    };
    let index = {
        let mut l = seen.lock().unwrap();
        l.push(req.clone());
        l.len() - 1
    };
    let (status, text) = handler(index, &req);
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

impl Server {
    fn start(handler: impl Fn(usize, &Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&log);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let (seen, handler) = (Arc::clone(&seen), Arc::clone(&handler));
                thread::spawn(move || serve(stream, &seen, handler.as_ref()));
            }
        });
        Server { url, log }
    }

    fn requests(&self) -> Vec<Request> {
        self.log.lock().unwrap().clone()
    }

    fn backend(&self, retries: u32, batch: usize) -> Box<dyn ModelBackend> {
        let mut d = BackendDescriptor::http(&self.url);
        d.max_retries = retries;
        d.batch_size = batch;
        d.timeout_ms = 2_000;
        d.connect().unwrap()
    }
}

fn png(dir: &std::path::Path, w: u32, h: u32) -> String {
    let path = dir.join(format!("img{w}x{h}.png"));
    image::RgbImage::from_pixel(w, h, image::Rgb([200, 10, 10])).save(&path).unwrap();
    path.to_string_lossy().into_owned()
}

fn vectors(n: usize, dim: usize) -> String {
    let v: Vec<Vec<f32>> = (0..n).map(|i| (0..dim).map(|j| (i + j + 1) as f32).collect()).collect();
    json!({ "vectors": v, "dim": dim }).to_string()
}

#[test]
fn caption_request_shape() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), 8, 8);
    let s = Server::start(|_, _| (200, json!({"caption": "  a red square \n"}).to_string()));
    let cap = s.backend(0, 4).caption(&img, CaptionStyle::Long, "describe:").unwrap();
    assert_eq!(cap, "a red square");
    let reqs = s.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!((reqs[0].method.as_str(), reqs[0].path.as_str()), ("POST", "/caption"));
    assert_eq!(reqs[0].body["style"], "long");
    assert_eq!(reqs[0].body["prefix"], "describe:");
    let bytes = B64.decode(reqs[0].body["image_b64"].as_str().unwrap()).unwrap();
    assert_eq!(bytes, std::fs::read(&img).unwrap());
}

#[test]
fn embed_text_batches_and_normalizes() {
    let s = Server::start(|_, req| (200, vectors(req.body["texts"].as_array().unwrap().len(), 3)));
    let texts: Vec<String> = (0..5).map(|i| format!("t{i}")).collect();
    let out = s.backend(0, 2).embed_text(&texts).unwrap();
    assert_eq!(out.len(), 5);
    for v in &out {
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    let sizes: Vec<usize> = s.requests().iter().map(|r| r.body["texts"].as_array().unwrap().len()).collect();
    assert_eq!(sizes, vec![2, 2, 1]);
    assert!(s.requests().iter().all(|r| r.path == "/embed_text"));
    assert_eq!(s.requests()[2].body["texts"][0], "t4");
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let s = Server::start(|i, _| if i < 2 { (503, "{}".into()) } else { (200, vectors(1, 4)) });
    let out = s.backend(2, 8).embed_text(&["x".into()]).unwrap();
    assert_eq!(out.len(), 1);
    assert_eq!(s.requests().len(), 3);
}

#[test]
fn retries_exhausted_reports_attempts() {
    let s = Server::start(|_, _| (500, "{}".into()));
    let err = s.backend(3, 8).embed_text(&["x".into()]).unwrap_err();
    assert_eq!(s.requests().len(), 4);
    match err {
        Error::Backend { attempts, item, .. } => {
            assert_eq!(attempts, 4);
            assert_eq!(item, "texts[0..1]");
        }
        other => panic!("{other:?}"),
    }
    assert!(!Error::Backend {
        item: String::new(),
        attempts: 1,
        message: String::new()
    }
    .is_validation());
}

#[test]
fn rate_limit_is_retryable() {
    let s = Server::start(|i, _| if i == 0 { (429, "{}".into()) } else { (200, vectors(1, 2)) });
    s.backend(1, 8).embed_text(&["x".into()]).unwrap();
    assert_eq!(s.requests().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let s = Server::start(|_, _| (400, "{}".into()));
    let err = s.backend(5, 8).embed_text(&["x".into()]).unwrap_err();
    assert_eq!(s.requests().len(), 1);
    assert!(matches!(err, Error::Backend { attempts: 1, .. }));
}

#[test]
fn malformed_body_is_fatal() {
    let s = Server::start(|_, _| (200, "{\"vectors\": 3}".into()));
    assert!(s.backend(3, 8).embed_text(&["x".into()]).is_err());
    assert_eq!(s.requests().len(), 1);
}

#[test]
fn wrong_vector_count_is_rejected() {
    let s = Server::start(|_, _| (200, vectors(1, 3)));
    let err = s.backend(0, 8).embed_text(&["a".into(), "b".into()]).unwrap_err();
    assert!(err.to_string().contains("expected 2 vectors"), "{err}");
}

#[test]
fn timeouts_are_retried() {
    let s = Server::start(|i, _| {
        if i == 0 {
            thread::sleep(Duration::from_millis(800));
        }
        (200, vectors(1, 2))
    });
    let mut d = BackendDescriptor::http(&s.url);
    d.timeout_ms = 300;
    d.max_retries = 1;
    d.connect().unwrap().embed_text(&["x".into()]).unwrap();
    assert_eq!(s.requests().len(), 2);
}

#[test]
fn detect_maps_boxes_and_image_size() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), 64, 48);
    let s = Server::start(|_, _| {
        (200, json!({"detections": [{"cls": "dog", "score": 0.9, "box": [4.0, 6.0, 20.0, 10.0]}]}).to_string())
    });
    let dets = s.backend(0, 8).detect(&img).unwrap();
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].class, "dog");
    assert_eq!(dets[0].image_size, (64, 48));
    assert_eq!(dets[0].bbox, BoundingBox([4.0, 6.0, 20.0, 10.0]));
    assert_eq!(s.requests()[0].path, "/detect");
}

#[test]
fn out_of_bounds_detection_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), 16, 16);
    let s = Server::start(|_, _| (200, json!({"detections": [{"cls": "dog", "score": 0.9, "box": [10.0, 10.0, 20.0, 20.0]}]}).to_string()));
    assert!(s.backend(0, 8).detect(&img).unwrap_err().is_validation());
}

#[test]
fn crops_are_sent_as_square_png() {
    let dir = tempfile::tempdir().unwrap();
    let img = png(dir.path(), 40, 30);
    let s = Server::start(|_, req| (200, vectors(req.body["images_b64"].as_array().unwrap().len(), 2)));
    let crop = ImageInput::crop(&img, BoundingBox([2.0, 3.0, 10.0, 6.0]), (40, 30));
    s.backend(0, 8).embed_image(&[crop]).unwrap();
    let sent = B64.decode(s.requests()[0].body["images_b64"][0].as_str().unwrap()).unwrap();
    let decoded = image::load_from_memory(&sent).unwrap();
    assert_eq!((decoded.width(), decoded.height()), (10, 10));
}

#[test]
fn info_uses_get() {
    let s = Server::start(|_, _| (200, json!({"dim": 512, "roles": ["caption"]}).to_string()));
    let info = s.backend(0, 8).info().unwrap();
    assert_eq!(info.dim, 512);
    assert_eq!(s.requests()[0].method, "GET");
    assert_eq!(s.requests()[0].path, "/info");
}

#[test]
fn missing_image_is_an_input_error() {
    let s = Server::start(|_, _| (200, "{}".into()));
    let err = s.backend(0, 8).caption("/no/such/file.png", CaptionStyle::Short, "").unwrap_err();
    assert!(matches!(err, Error::MissingInput(_)));
    assert!(s.requests().is_empty());
}
