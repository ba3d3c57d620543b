use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use trustel::speech::{HttpAdapterConfig, HttpAsr, HttpTts, SpeechError, Synthesizer, Transcriber, VoiceConfig};
use trustel_core::audio::{decode_wav, encode_wav, AudioClip};

#[derive(Default)]
struct Seen {
    auth: Vec<Option<String>>,
    clips: Vec<AudioClip>,
    texts: Vec<serde_json::Value>,
}

/// Stub speech service: transcripts by clip length, 503 for a 3-sample
/// clip, 400 for a 4-sample clip.
fn stub(seen: Arc<Mutex<Seen>>) -> Router {
    let s1 = seen.clone();
    let s2 = seen;
    Router::new()
        .route(
            "/transcribe",
            post(move |headers: HeaderMap, body: Bytes| {
                let seen = s1.clone();
                async move {
                    let clip = decode_wav(&body).unwrap();
                    let n = clip.samples.len();
                    let mut g = seen.lock().unwrap();
                    g.auth.push(headers.get("authorization").map(|v| v.to_str().unwrap().to_owned()));
                    g.clips.push(clip);
                    match n {
                        3 => Err(StatusCode::SERVICE_UNAVAILABLE),
                        4 => Err(StatusCode::BAD_REQUEST),
                        5 => Ok(Json(serde_json::json!({ "text": "  " }))),
                        _ => Ok(Json(serde_json::json!({ "text": format!("{n} muestras"), "confidence": 1.7 }))),
                    }
                }
            }),
        )
        .route(
            "/synthesize",
            post(move |Json(req): Json<serde_json::Value>| {
                let seen = s2.clone();
                async move {
                    let len = req["text"].as_str().unwrap().len();
                    let rate = req["sample_rate"].as_u64().unwrap() as u32;
                    seen.lock().unwrap().texts.push(req);
                    encode_wav(&AudioClip::new(vec![7; len], rate))
                }
            }),
        )
}

fn serve_stub() -> (SocketAddr, Arc<Mutex<Seen>>) {
    let seen = Arc::new(Mutex::new(Seen::default()));
    let app = stub(seen.clone());
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    (addr, seen)
}

#[test]
fn http_adapters_speak_the_stub_protocol() {
    let (addr, seen) = serve_stub();
    // SAFETY: set before any adapter reads it; no other test in this binary
    // touches the environment.
    unsafe { std::env::set_var("TRUSTEL_TEST_SPEECH_TOKEN", "tok") };
    let cfg = HttpAdapterConfig { base_url: format!("http://{addr}/"), token_env: "TRUSTEL_TEST_SPEECH_TOKEN".into(), timeout_ms: 5_000 };
    let asr = HttpAsr::new(&cfg);

    let clip = AudioClip::new(vec![1; 10], 16_000);
    let r = asr.transcribe(&clip).unwrap();
    assert_eq!((r.text.as_str(), r.confidence, r.failed), ("10 muestras", 1.0, false));
    assert!(asr.transcribe(&AudioClip::new(vec![1; 5], 16_000)).unwrap().failed);
    assert!(matches!(asr.transcribe(&AudioClip::new(vec![1; 3], 16_000)), Err(SpeechError::AdapterUnavailable(_))));
    assert!(matches!(asr.transcribe(&AudioClip::new(vec![1; 4], 16_000)), Err(SpeechError::BadResponse(_))));
    assert!(matches!(asr.transcribe(&AudioClip::new(vec![], 16_000)), Err(SpeechError::EmptyClip)));

    let tts = HttpTts::new(&cfg);
    let voice = VoiceConfig { sample_rate: 8_000, ..VoiceConfig::default() };
    let audio = tts.synthesize("hola", &voice).unwrap();
    assert_eq!(audio, AudioClip::new(vec![7; 4], 8_000));
    assert!(matches!(tts.synthesize("", &voice), Err(SpeechError::EmptyText)));

    let g = seen.lock().unwrap();
    assert_eq!(g.clips[0], clip);
    assert_eq!(g.clips.len(), 4);
    assert!(g.auth.iter().all(|a| a.as_deref() == Some("Bearer tok")));
    assert_eq!(g.texts[0]["voice"], voice.name);
}

#[test]
fn unreachable_service_is_unavailable() {
    let cfg = HttpAdapterConfig { base_url: "http://127.0.0.1:9".into(), token_env: "TRUSTEL_UNSET_TOKEN".into(), timeout_ms: 2_000 };
    let r = HttpAsr::new(&cfg).transcribe(&AudioClip::new(vec![1; 10], 16_000));
    assert!(matches!(r, Err(SpeechError::AdapterUnavailable(_))));
}
