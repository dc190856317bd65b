//! HTTP clients against a canned local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;

use zsad::encoder::EmbedderBackend;
use zsad::grounding::DetectorBackend;
use zsad::http::{DetectorSettings, EmbedderSettings, GeneratorSettings, HttpDetector, HttpEmbedder, HttpGenerator};
use zsad::prompt_bank::PromptGeneratorBackend;
use zsad::{BoundingBox, Error, ImageBuffer};

/// A request seen by the server: path, authorization header, JSON body.
type Seen = Arc<Mutex<Vec<(String, Option<String>, Value)>>>;

/// Serves `replies` in order, one per connection, then stops.
fn serve(replies: Vec<(u16, String)>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen: Seen = Arc::default();
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_owned();
            let (mut length, mut auth) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push((path, auth, serde_json::from_slice(&buf).unwrap_or(Value::Null)));
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen)
}

fn image() -> ImageBuffer {
    ImageBuffer::new(10, 20, 3, vec![7; 600]).unwrap()
}

#[test]
fn generator_sends_instruction_and_reads_text() {
    let (base, seen) = serve(vec![(200, r#"{"choices":[{"text":"1. a\n2. b"}]}"#.into())]);
    let settings = GeneratorSettings { endpoint: format!("{base}/v1/completions"), max_retries: 0, ..GeneratorSettings::default() };
    let g = HttpGenerator::new(settings, Some("secret".into()));
    assert_eq!(g.complete("List 2 captions").unwrap(), "1. a\n2. b");
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "/v1/completions");
    assert_eq!(seen[0].1.as_deref(), Some("Bearer secret"));
    assert_eq!(seen[0].2["prompt"], "List 2 captions");
}

#[test]
fn generator_retries_after_server_error() {
    let (base, seen) = serve(vec![
        (500, "{}".into()),
        (200, r#"{"choices":[{"message":{"content":"ok"}}]}"#.into()),
    ]);
    let settings = GeneratorSettings { endpoint: base, max_retries: 1, ..GeneratorSettings::default() };
    assert_eq!(HttpGenerator::new(settings, None).complete("x").unwrap(), "ok");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn generator_gives_up_with_backend_unavailable() {
    let (base, _) = serve(vec![(503, "{}".into())]);
    let settings = GeneratorSettings { endpoint: base, max_retries: 0, ..GeneratorSettings::default() };
    assert!(matches!(HttpGenerator::new(settings, None).complete("x"), Err(Error::BackendUnavailable(_))));
}

#[test]
fn detector_clamps_boxes_and_appends_query_dot() {
    let reply = r#"{"detections":[
        {"box":[2.4,1.6,5.0,4.0],"confidence":0.8,"phrase":"bottle"},
        {"box":[-3,-2,10,30],"confidence":0.5},
        {"box":[50,50,5,5],"confidence":0.9}
    ]}"#;
    let (base, seen) = serve(vec![(200, reply.into())]);
    let d = HttpDetector::new(DetectorSettings { endpoint: base, ..DetectorSettings::default() });
    let dets = d.detect(&image(), "bottle").unwrap();
    assert_eq!(dets.len(), 2);
    assert_eq!(dets[0].bbox, BoundingBox::new(2, 2, 5, 4));
    assert_eq!(dets[1].bbox, BoundingBox::new(0, 0, 7, 10));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "/detect");
    assert_eq!(seen[0].2["query"], "bottle.");
    assert_eq!(seen[0].2["width"], 20);
    assert_eq!(seen[0].2["height"], 10);
}

#[test]
fn embedder_routes_text_and_image() {
    let (base, seen) = serve(vec![
        (200, r#"{"embedding":[0.6,0.8]}"#.into()),
        (200, r#"{"embedding":[1.0,0.0]}"#.into()),
        (200, r#"{"vector":[1.0]}"#.into()),
    ]);
    let e = HttpEmbedder::new(EmbedderSettings { endpoint: base, dim: 2, ..EmbedderSettings::default() });
    assert_eq!(e.embed_text("a photo").unwrap(), vec![0.6, 0.8]);
    assert_eq!(e.embed_image(&image()).unwrap(), vec![1.0, 0.0]);
    assert!(matches!(e.embed_text("x"), Err(Error::BackendUnavailable(_))));
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].0, "/embed/text");
    assert_eq!(seen[0].2["text"], "a photo");
    assert_eq!(seen[1].0, "/embed/image");
    assert_eq!(seen[1].2["channels"], 3);
}
