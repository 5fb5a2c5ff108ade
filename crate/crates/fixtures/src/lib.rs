//! Localhost HTTP fixtures used by the test suites.
//!
//! Each fixture runs its own tokio runtime on a background thread, so it can be
//! driven from plain `#[test]` functions as well as from async tests. Servers
//! bind `127.0.0.1:0` and shut down when the fixture is dropped.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// One request as seen by a fixture handler.
#[derive(Debug, Clone)]
pub struct Call {
    /// 0-based arrival index across the fixture's lifetime.
    pub index: usize,
    pub method: String,
    pub path: String,
    pub body: Value,
}

impl Call {
    /// Content of the first chat message, or "" for non-chat bodies.
    pub fn prompt(&self) -> &str {
        self.body
            .pointer("/messages/0/content")
            .and_then(Value::as_str)
            .unwrap_or("")
    }
}

/// What a handler wants the fixture to send back.
#[derive(Debug, Clone)]
pub enum Reply {
    /// 200 with a chat-completions body carrying this assistant text.
    Chat(String),
    /// Arbitrary status and JSON body.
    Json(u16, Value),
    /// Arbitrary status with a plain-text body.
    Status(u16, String),
}

impl Reply {
    pub fn chat(text: impl Into<String>) -> Self {
        Reply::Chat(text.into())
    }
}

type Handler = dyn Fn(&Call) -> Reply + Send + Sync;

struct Shared {
    handler: Box<Handler>,
    latency: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    log: Mutex<Vec<Call>>,
}

/// A scripted HTTP server on localhost.
pub struct Fixture {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Fixture {
    pub fn spawn<F>(handler: F) -> Self
    where
        F: Fn(&Call) -> Reply + Send + Sync + 'static,
    {
        Self::spawn_with_latency(Duration::ZERO, handler)
    }

    /// Every request is held for `latency` before the handler runs, which makes
    /// overlapping requests observable through [`Fixture::peak_in_flight`].
    pub fn spawn_with_latency<F>(latency: Duration, handler: F) -> Self
    where
        F: Fn(&Call) -> Reply + Send + Sync + 'static,
    {
        let shared = Arc::new(Shared {
            handler: Box::new(handler),
            latency,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            log: Mutex::new(Vec::new()),
        });
        let (stop_tx, stop_rx) = oneshot::channel::<()>();
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(4)
                .enable_all()
                .build()
                .expect("fixture runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                    .await
                    .expect("bind fixture");
                addr_tx
                    .send(listener.local_addr().expect("local addr"))
                    .expect("send addr");
                let app = Router::new().fallback(serve).with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = stop_rx.await;
                    })
                    .await
                    .expect("fixture server");
            });
        });
        let addr = addr_rx.recv().expect("fixture address");
        Fixture {
            addr,
            shared,
            stop: Some(stop_tx),
            thread: Some(thread),
        }
    }

    /// Replies with the prompt text unchanged.
    pub fn echo() -> Self {
        Self::spawn(|call| Reply::Chat(call.prompt().to_string()))
    }

    /// `http://127.0.0.1:<port>`, without a trailing slash.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn calls(&self) -> usize {
        self.shared.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.shared.peak.load(Ordering::SeqCst)
    }

    /// All requests received so far, in arrival order.
    pub fn log(&self) -> Vec<Call> {
        self.shared.log.lock().unwrap().clone()
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn serve(State(shared): State<Arc<Shared>>, method: Method, uri: Uri, body: Bytes) -> Response {
    let index = shared.calls.fetch_add(1, Ordering::SeqCst);
    let now = shared.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    shared.peak.fetch_max(now, Ordering::SeqCst);
    if !shared.latency.is_zero() {
        tokio::time::sleep(shared.latency).await;
    }
    let body = serde_json::from_slice(&body).unwrap_or(Value::Null);
    let call = Call {
        index,
        method: method.to_string(),
        path: uri.path().to_string(),
        body,
    };
    shared.log.lock().unwrap().push(call.clone());
    let reply = (shared.handler)(&call);
    shared.in_flight.fetch_sub(1, Ordering::SeqCst);
    match reply {
        Reply::Chat(text) => axum::Json(chat_body(&text)).into_response(),
        Reply::Json(code, v) => (status(code), axum::Json(v)).into_response(),
        Reply::Status(code, text) => (status(code), text).into_response(),
    }
}

fn status(code: u16) -> StatusCode {
    StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
}

/// A minimal chat-completions response body.
pub fn chat_body(text: &str) -> Value {
    json!({
        "id": "fixture",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }]
    })
}
