//! Serves the mock backend over the wire protocol, so remote-client code and
//! external adapters can be checked against a known-good implementation.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::mock::MockBackend;
use super::wire::{self, DetectRequest, DetectResponse, EmbedImageRequest, EmbedResponse, EmbedTextRequest, ErrorResponse};
use super::BackendError;
use crate::types::Embedding;

/// A routed reply: status code and JSON body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn ok<T: Serialize>(value: &T) -> Reply {
        Reply { status: 200, body: serde_json::to_string(value).expect("response serializes") }
    }

    fn error(status: u16, message: impl Into<String>) -> Reply {
        let body = serde_json::to_string(&ErrorResponse { error: message.into() }).expect("error serializes");
        Reply { status, body }
    }
}

fn backend_reply(e: BackendError) -> Reply {
    match e {
        BackendError::InvalidInput(_) | BackendError::Io { .. } => Reply::error(400, e.to_string()),
        BackendError::ContextOverflow(_) => Reply::error(413, e.to_string()),
        _ => Reply::error(500, e.to_string()),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| Reply::error(400, format!("invalid request body: {e}")))
}

fn embed_reply(result: Result<Embedding, BackendError>) -> Reply {
    match result {
        Ok(e) => Reply::ok(&EmbedResponse { dim: e.dim(), vector: e.values().to_vec() }),
        Err(e) => backend_reply(e),
    }
}

/// Route one request. Pure apart from reading `path` image payloads.
pub fn route(backend: &MockBackend, method: &str, path: &str, body: &str) -> Reply {
    let post = |f: &dyn Fn() -> Result<Reply, Reply>| {
        if method != "POST" {
            return Reply::error(405, format!("{path} only accepts POST"));
        }
        f().unwrap_or_else(|r| r)
    };
    match path {
        wire::HEALTHZ => Reply::ok(&serde_json::json!({
            "status": "ok",
            "capabilities": ["embed_text", "embed_image", "detect", "generate"],
            "embedding_dim": backend.config().embedding_dim,
        })),
        wire::EMBED_TEXT => post(&|| {
            let req: EmbedTextRequest = parse(body)?;
            Ok(embed_reply(backend.embed_text_str(&req.text)))
        }),
        wire::EMBED_IMAGE => post(&|| {
            let req: EmbedImageRequest = parse(body)?;
            let bytes = req.image.bytes().map_err(backend_reply)?;
            Ok(embed_reply(backend.embed_image_bytes(&bytes)))
        }),
        wire::DETECT => post(&|| {
            let req: DetectRequest = parse(body)?;
            let bytes = req.image.bytes().map_err(backend_reply)?;
            let found = backend.detect_bytes(&bytes, &req.query).map_err(backend_reply)?;
            Ok(Reply::ok(&DetectResponse { detections: found.iter().map(Into::into).collect() }))
        }),
        wire::GENERATE => post(&|| {
            let req: wire::GenerateBody = parse(body)?;
            if req.max_new_tokens == 0 {
                return Err(Reply::error(400, "max_new_tokens must be at least 1"));
            }
            for seg in &req.segments {
                if let wire::WireSegment::Image(p) = seg {
                    p.source().map_err(backend_reply)?;
                }
            }
            Ok(Reply::ok(&wire::GenerateResponse { text: backend.generate_from_texts(req.texts()) }))
        }),
        other => Reply::error(404, format!("no route for {other}")),
    }
}

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until the workers exit (they never do unless shut down).
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Bind `addr` (port 0 picks a free port) and serve with `workers` threads.
pub fn spawn(backend: MockBackend, addr: &str, workers: usize) -> Result<ServerHandle, BackendError> {
    let server = Server::http(addr).map_err(|e| BackendError::Transport(format!("binding {addr}: {e}")))?;
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| BackendError::Transport("server is not bound to an IP address".into()))?;
    let server = Arc::new(server);
    let backend = Arc::new(backend);
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let backend = Arc::clone(&backend);
            std::thread::spawn(move || {
                while let Ok(mut request) = server.recv() {
                    let mut body = String::new();
                    let reply = match request.as_reader().read_to_string(&mut body) {
                        Ok(_) => {
                            let method = match request.method() {
                                Method::Post => "POST",
                                Method::Get => "GET",
                                _ => "OTHER",
                            };
                            route(&backend, method, request.url(), &body)
                        }
                        Err(e) => Reply::error(400, format!("unreadable body: {e}")),
                    };
                    log::debug!("{} {} -> {}", request.method(), request.url(), reply.status);
                    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
                    let response = Response::from_string(reply.body).with_status_code(reply.status).with_header(header);
                    if let Err(e) = request.respond(response) {
                        log::warn!("failed to send response: {e}");
                    }
                }
            })
        })
        .collect();
    Ok(ServerHandle { server, addr, workers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockConfig;

    fn mock() -> MockBackend {
        MockBackend::new(MockConfig::new(5))
    }

    #[test]
    fn routes_and_error_shapes() {
        let m = mock();
        let r = route(&m, "POST", wire::EMBED_TEXT, r#"{"text":"0.52 sec QTc"}"#);
        assert_eq!(r.status, 200);
        let e: EmbedResponse = serde_json::from_str(&r.body).unwrap();
        assert_eq!(e.dim, 64);
        assert_eq!(e.vector.len(), 64);

        for (method, path, body, status) in [
            ("POST", wire::EMBED_TEXT, "{}", 400),
            ("POST", wire::EMBED_TEXT, r#"{"text":""}"#, 400),
            ("GET", wire::EMBED_TEXT, "", 405),
            ("POST", "/v2/nothing", "{}", 404),
            ("POST", wire::EMBED_IMAGE, "{}", 400),
            ("POST", wire::EMBED_IMAGE, r#"{"image_b64":"%%%"}"#, 400),
            ("POST", wire::DETECT, r#"{"path":"/definitely/missing.png","query":"Edema"}"#, 400),
            ("POST", wire::GENERATE, r#"{"segments":[],"max_new_tokens":0}"#, 400),
        ] {
            let r = route(&m, method, path, body);
            assert_eq!(r.status, status, "{method} {path} {body}");
            let err: ErrorResponse = serde_json::from_str(&r.body).unwrap();
            assert!(!err.error.is_empty());
        }
    }

    #[test]
    fn generate_route_echoes() {
        let body = r#"{"segments":[{"type":"text","text":"Q1"},{"type":"text","text":"yes"},{"type":"image","path":"q.png"},{"type":"text","text":"Qq"}],"max_new_tokens":20}"#;
        let r = route(&mock(), "POST", wire::GENERATE, body);
        assert_eq!(r.status, 200);
        assert_eq!(r.body, r#"{"text":"yes"}"#);
    }
}
