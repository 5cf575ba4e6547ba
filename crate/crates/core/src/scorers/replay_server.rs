//! Local HTTP server that answers oracle (or remote-scorer) requests from
//! recorded fixtures. Used by tests and by `triage serve-replay`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

type Handler = dyn Fn(&Value) -> (u16, Value) + Send + Sync;

/// Per-request statistics shared with the serving thread.
#[derive(Debug, Default)]
pub struct ServerStats {
    requests: AtomicUsize,
    per_key: Mutex<BTreeMap<(String, u8), usize>>,
}

impl ServerStats {
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Number of requests per (video_id, myth_index).
    pub fn per_key(&self) -> BTreeMap<(String, u8), usize> {
        self.per_key.lock().expect("stats poisoned").clone()
    }

    /// Keys requested more than once.
    pub fn duplicates(&self) -> Vec<(String, u8)> {
        self.per_key().into_iter().filter(|(_, n)| *n > 1).map(|(k, _)| k).collect()
    }
}

pub struct ReplayServer {
    url: String,
    stats: Arc<ServerStats>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ReplayServer {
    /// Serve `handler` on `addr` (e.g. `127.0.0.1:0`).
    pub fn start<F>(addr: &str, handler: F) -> std::io::Result<Self>
    where
        F: Fn(&Value) -> (u16, Value) + Send + Sync + 'static,
    {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let host = addr.rsplit_once(':').map(|(h, _)| h).unwrap_or("127.0.0.1");
        let url = format!("http://{host}:{port}/");
        let stats = Arc::new(ServerStats::default());
        let stop = Arc::new(AtomicBool::new(false));
        let handler: Arc<Handler> = Arc::new(handler);

        let thread = {
            let stats = Arc::clone(&stats);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || serve(server, handler, stats, stop))
        };
        Ok(Self { url, stats, stop, thread: Some(thread) })
    }

    /// Serve oracle fixtures keyed by (video_id, myth_index). Unknown keys get 404.
    pub fn oracle(addr: &str, fixtures: BTreeMap<(String, u8), Value>) -> std::io::Result<Self> {
        Self::start(addr, move |body| {
            let key = request_key(body);
            match key.and_then(|k| fixtures.get(&k)) {
                Some(resp) => (200, resp.clone()),
                None => (404, json!({"error": "no fixture for request"})),
            }
        })
    }

    /// Like [`ReplayServer::oracle`], but the first `n` requests get HTTP 503.
    pub fn flaky_oracle(addr: &str, fixtures: BTreeMap<(String, u8), Value>, n: usize) -> std::io::Result<Self> {
        let failures = AtomicUsize::new(0);
        Self::start(addr, move |body| {
            if failures.fetch_add(1, Ordering::SeqCst) < n {
                return (503, json!({"error": "try again"}));
            }
            match request_key(body).and_then(|k| fixtures.get(&k)) {
                Some(resp) => (200, resp.clone()),
                None => (404, json!({"error": "no fixture for request"})),
            }
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn shutdown(mut self) {
        self.stop_thread();
    }

    fn stop_thread(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ReplayServer {
    fn drop(&mut self) {
        self.stop_thread();
    }
}

fn request_key(body: &Value) -> Option<(String, u8)> {
    let id = body.get("video_id")?.as_str()?.to_string();
    let idx = u8::try_from(body.get("myth_index")?.as_u64()?).ok()?;
    Some((id, idx))
}

fn serve(server: tiny_http::Server, handler: Arc<Handler>, stats: Arc<ServerStats>, stop: Arc<AtomicBool>) {
    let json_header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    while !stop.load(Ordering::SeqCst) {
        let mut request = match server.recv_timeout(Duration::from_millis(20)) {
            Ok(Some(r)) => r,
            Ok(None) => continue,
            Err(_) => break,
        };
        stats.requests.fetch_add(1, Ordering::SeqCst);
        let mut body = String::new();
        let parsed = request
            .as_reader()
            .read_to_string(&mut body)
            .ok()
            .and_then(|_| serde_json::from_str::<Value>(&body).ok());
        let (status, reply) = match parsed {
            Some(v) => {
                if let Some(key) = request_key(&v) {
                    *stats.per_key.lock().expect("stats poisoned").entry(key).or_default() += 1;
                }
                handler(&v)
            }
            None => (400, json!({"error": "request body is not JSON"})),
        };
        let response = tiny_http::Response::from_string(reply.to_string())
            .with_status_code(status)
            .with_header(json_header.clone());
        let _ = request.respond(response);
    }
}
