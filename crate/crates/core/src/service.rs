//! JSON-over-HTTP search endpoint backed by an immutable index.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Instant;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::retrieval::{EmbeddingIndex, Hit};

#[derive(Debug, Deserialize)]
struct SearchRequest {
    query: String,
    k: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultItem {
    pub doc_id: String,
    pub score: f32,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResponse {
    pub results: Vec<ResultItem>,
    pub latency_ms: f64,
}

/// Index and encoder shared by all request handlers.
pub struct SearchService<E> {
    index: EmbeddingIndex,
    encoder: E,
}

impl<E: SentenceEncoder> SearchService<E> {
    /// Fails when the index was built with a different encoder.
    pub fn new(index: EmbeddingIndex, encoder: E) -> Result<Self> {
        index.check_encoder(&encoder.fingerprint())?;
        Ok(Self { index, encoder })
    }

    pub fn index(&self) -> &EmbeddingIndex {
        &self.index
    }

    pub fn search(&self, query: &str, k: usize) -> Result<Vec<Hit>> {
        self.index.search_text(&self.encoder, query, k)
    }

    /// Answers one request body; returns the HTTP status and a JSON body.
    pub fn handle(&self, body: &[u8]) -> (u16, String) {
        let start = Instant::now();
        let req: SearchRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return (400, error_body(&format!("malformed request: {e}"))),
        };
        if req.k < 1 {
            return (400, error_body("k must be at least 1"));
        }
        let k = req.k as usize;
        match self.search(&req.query, k) {
            Ok(hits) => {
                let results = hits
                    .into_iter()
                    .map(|h| ResultItem {
                        text: self.index.corpus().entries()[h.position].1.clone(),
                        doc_id: h.doc_id,
                        score: h.score,
                    })
                    .collect();
                let resp = SearchResponse {
                    results,
                    latency_ms: start.elapsed().as_secs_f64() * 1e3,
                };
                (200, serde_json::to_string(&resp).expect("response serializes"))
            }
            Err(e @ Error::Input(_)) => (400, error_body(&e.to_string())),
            Err(e) => (500, error_body(&e.to_string())),
        }
    }
}

fn error_body(msg: &str) -> String {
    serde_json::json!({ "error": msg }).to_string()
}

fn respond(req: Request, status: u16, body: String) {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_string(body).with_status_code(status).with_header(header);
    if let Err(e) = req.respond(resp) {
        warn!("failed to send response: {e}");
    }
}

fn dispatch<E: SentenceEncoder>(svc: &SearchService<E>, mut req: Request) {
    let path_ok = matches!(req.url(), "/" | "/search");
    if !path_ok {
        return respond(req, 404, error_body("not found"));
    }
    if req.method() != &Method::Post {
        return respond(req, 405, error_body("use POST"));
    }
    let mut body = Vec::new();
    if let Err(e) = req.as_reader().read_to_end(&mut body) {
        return respond(req, 400, error_body(&format!("unreadable body: {e}")));
    }
    let (status, out) = svc.handle(&body);
    respond(req, status, out);
}

/// A running server. Dropping it does not stop it; call [`Running::stop`].
pub struct Running {
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    addr: SocketAddr,
}

impl Running {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop(self) {
        self.server.unblock();
        for _ in 1..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers {
            let _ = w.join();
        }
    }

    /// Blocks until every worker exits.
    pub fn wait(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves with `threads` workers.
pub fn start<E: SentenceEncoder + Send + 'static>(
    service: SearchService<E>,
    addr: &str,
    threads: usize,
) -> Result<Running> {
    let server = Server::http(addr).map_err(|e| Error::config(format!("cannot bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::config("server is not bound to an IP address"))?;
    let server = Arc::new(server);
    let service = Arc::new(service);
    let workers = (0..threads.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let service = Arc::clone(&service);
            std::thread::spawn(move || {
                for req in server.incoming_requests() {
                    dispatch(&service, req);
                }
            })
        })
        .collect();
    info!("serving {} documents on http://{bound}", service.index().len());
    Ok(Running {
        server,
        workers,
        addr: bound,
    })
}
