//! HTTP provider against a local OpenAI-style server.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use gem_core::providers::{Embedder, Generator, HttpProvider, ProviderConfig, ProviderError};
use gem_core::{Engine, EngineConfig};
use serde_json::{json, Value};

#[derive(Default)]
struct Script {
    /// Requests answered with this status before behaving normally.
    fail_first: usize,
    fail_status: u16,
    /// Embedding width for each successive embeddings call.
    dims: Vec<usize>,
    /// Question lines returned by the chat endpoint.
    question_lines: usize,
}

#[derive(Clone)]
struct Mock {
    script: Arc<Script>,
    requests: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
    embed_calls: Arc<AtomicUsize>,
}

fn vector(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.1; dim];
    for (i, b) in text.bytes().enumerate() {
        v[(i + b as usize) % dim] += 1.0;
    }
    v
}

fn gate(mock: &Mock, headers: &HeaderMap) -> Result<(), (StatusCode, String)> {
    mock.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .map(|h| h.to_str().unwrap().to_string()),
    );
    let n = mock.requests.fetch_add(1, Ordering::SeqCst);
    if n < mock.script.fail_first {
        let status = StatusCode::from_u16(mock.script.fail_status).unwrap();
        return Err((status, "scripted failure".into()));
    }
    Ok(())
}

async fn embeddings(
    State(mock): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    gate(&mock, &headers)?;
    let call = mock.embed_calls.fetch_add(1, Ordering::SeqCst);
    let dims = &mock.script.dims;
    let dim = if dims.is_empty() { 8 } else { dims[call.min(dims.len() - 1)] };
    let inputs = body["input"].as_array().unwrap();
    // reversed on purpose: the client must reorder by index
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": vector(t.as_str().unwrap(), dim)}))
        .collect();
    Ok(Json(json!({ "data": data })))
}

async fn chat(
    State(mock): State<Mock>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> Result<Json<Value>, (StatusCode, String)> {
    gate(&mock, &headers)?;
    let prompt = body["messages"][0]["content"].as_str().unwrap();
    let reply = if prompt.starts_with("Write exactly") {
        (1..=mock.script.question_lines)
            .map(|i| format!("{i}. What is point {i}?"))
            .collect::<Vec<_>>()
            .join("\n")
    } else if prompt.starts_with("Summarize") {
        "alpha beta gamma delta epsilon zeta eta theta iota kappa".to_string()
    } else if prompt.contains("Options:") {
        "B".to_string()
    } else {
        "  Paris.  ".to_string()
    };
    Ok(Json(json!({"choices": [{"message": {"role": "assistant", "content": reply}}]})))
}

/// Serve on an ephemeral port from a background runtime.
fn serve(script: Script) -> (String, Mock) {
    let mock = Mock {
        script: Arc::new(script),
        requests: Arc::default(),
        auth: Arc::default(),
        embed_calls: Arc::default(),
    };
    let app = Router::new()
        .route("/v1/embeddings", post(embeddings))
        .route("/v1/chat/completions", post(chat))
        .with_state(mock.clone());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    (format!("http://{addr}/v1"), mock)
}

fn config(endpoint: &str) -> ProviderConfig {
    ProviderConfig {
        backoff_ms: 1,
        timeout_secs: 5,
        batch_size: 3,
        ..ProviderConfig::http(endpoint, "test-model")
    }
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("text number {i}")).collect()
}

#[test]
fn embeddings_keep_input_order_across_batches() {
    let (url, mock) = serve(Script::default());
    let p = HttpProvider::new(config(&url)).unwrap();
    let input = texts(7);
    let out = p.embed(&input).unwrap();
    assert_eq!(out.len(), 7);
    for (t, e) in input.iter().zip(&out) {
        assert_eq!(e.values(), vector(t, 8).as_slice());
    }
    assert_eq!(mock.embed_calls.load(Ordering::SeqCst), 3);
    assert_eq!(Embedder::id(&p), "http:test-model");
}

#[test]
fn bearer_token_comes_from_environment() {
    let (url, mock) = serve(Script::default());
    std::env::set_var("GEM_HTTP_TEST_KEY", "sekret");
    let mut c = config(&url);
    c.api_key_env = Some("GEM_HTTP_TEST_KEY".into());
    HttpProvider::new(c).unwrap().embed(&texts(1)).unwrap();
    HttpProvider::new(config(&url)).unwrap().embed(&texts(1)).unwrap();
    let auth = mock.auth.lock().unwrap().clone();
    assert_eq!(auth, vec![Some("Bearer sekret".to_string()), None]);
}

#[test]
fn transient_failures_are_retried() {
    for status in [503, 429] {
        let (url, mock) = serve(Script {
            fail_first: 2,
            fail_status: status,
            ..Script::default()
        });
        let out = HttpProvider::new(config(&url)).unwrap().embed(&texts(2)).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(mock.requests.load(Ordering::SeqCst), 3);
    }
}

#[test]
fn retries_are_bounded() {
    let (url, mock) = serve(Script {
        fail_first: usize::MAX,
        fail_status: 500,
        ..Script::default()
    });
    let mut c = config(&url);
    c.retry_count = 2;
    let err = HttpProvider::new(c).unwrap().embed(&texts(5)).unwrap_err();
    match err {
        ProviderError::Request { batch, attempts, message } => {
            assert_eq!(batch, vec![0, 1, 2]);
            assert_eq!(attempts, 3);
            assert!(message.contains("500"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(mock.requests.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_fail_without_retry() {
    let (url, mock) = serve(Script {
        fail_first: usize::MAX,
        fail_status: 400,
        ..Script::default()
    });
    let err = HttpProvider::new(config(&url)).unwrap().embed(&texts(1)).unwrap_err();
    assert!(matches!(err, ProviderError::Request { attempts: 1, .. }), "{err:?}");
    assert_eq!(mock.requests.load(Ordering::SeqCst), 1);
}

#[test]
fn unreachable_endpoint_reports_batch() {
    let mut c = config("http://127.0.0.1:9/v1");
    c.retry_count = 1;
    let err = HttpProvider::new(c).unwrap().embed(&texts(4)).unwrap_err();
    assert!(matches!(err, ProviderError::Request { attempts: 2, ref batch, .. } if batch == &[0, 1, 2]));
}

#[test]
fn dimension_change_is_an_error() {
    let (url, _) = serve(Script {
        dims: vec![8, 8, 5],
        ..Script::default()
    });
    let p = HttpProvider::new(config(&url)).unwrap();
    p.embed(&texts(6)).unwrap();
    let err = p.embed(&texts(1)).unwrap_err();
    assert!(matches!(err, ProviderError::DimensionMismatch { expected: 8, got: 5 }));
}

#[test]
fn generation_endpoints() {
    let (url, _) = serve(Script {
        question_lines: 2,
        ..Script::default()
    });
    let p = HttpProvider::new(config(&url)).unwrap();
    let qs = p.generate_questions("Some passage.", 4).unwrap();
    assert_eq!(qs.len(), 4);
    assert_eq!(qs[0], "What is point 1?");
    assert!(p.generate_questions("Some passage.", 0).unwrap().is_empty());

    let summary = p.summarize(&["one".into(), "two".into()], 4).unwrap();
    assert_eq!(summary, "alpha beta gamma delta");

    let options = vec!["London".to_string(), "Paris".to_string(), "Rome".to_string()];
    let ctx = vec!["The capital is Paris.".to_string()];
    assert_eq!(p.answer("Capital?", &ctx, Some(&options)).unwrap(), "Paris");
    assert_eq!(p.answer("Capital?", &ctx, None).unwrap(), "Paris.");
}

#[test]
fn engine_builds_through_http_providers() {
    let (url, _) = serve(Script {
        question_lines: 3,
        ..Script::default()
    });
    let provider = config(&url);
    let engine = Engine::new(EngineConfig {
        chunk_tokens: 12,
        questions: 3,
        num_components: 1,
        embedder: provider.clone(),
        generator: provider,
        ..EngineConfig::default()
    })
    .unwrap();
    let text = "Rivers carry silt to the delta every spring season. ".repeat(6);
    let built = engine.build(&text).unwrap();
    let g = &built.graph;
    assert_eq!(g.meta.embedder_id, "http:test-model");
    assert!(g.nodes.iter().all(|n| n.base_embedding.dim() == 8));
    assert!(g.chunk_ids().iter().all(|&i| g.nodes[i].questions.len() == 3));
    assert_eq!(g.summary_ids().len(), 1);
    let r = engine.retrieve(g, "Where does silt go?").unwrap();
    assert!(!r.node_ids.is_empty());
}
