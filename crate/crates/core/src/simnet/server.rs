//! Mock model server for a synthetic family.

use std::io::Read;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::family::SyntheticFamily;
use super::markov::generate_response;
use crate::interrogator::{GenerateRequest, GenerateResponse, ModelDescriptor, ModelEndpoint};
use crate::{Error, Result};

/// Upper bound on `max_tokens` accepted per request.
pub const MAX_TOKENS_LIMIT: usize = 4096;
const MAX_BODY_BYTES: u64 = 1 << 20;
const DEFAULT_WORKERS: usize = 8;

/// Running server; stops when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
    requests: Arc<AtomicUsize>,
    descriptors: Vec<ModelDescriptor>,
}

pub fn serve(family: Arc<SyntheticFamily>, bind: &str) -> Result<ServerHandle> {
    serve_with_workers(family, bind, DEFAULT_WORKERS)
}

pub fn serve_with_workers(
    family: Arc<SyntheticFamily>,
    bind: &str,
    workers: usize,
) -> Result<ServerHandle> {
    let server = Arc::new(Server::http(bind).map_err(|e| Error::Server(format!("{bind}: {e}")))?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Server(format!("{bind} is not an IP address")))?;
    let requests = Arc::new(AtomicUsize::new(0));
    let descriptors = family
        .models()
        .into_iter()
        .map(|(m, kind)| ModelDescriptor {
            model_id: m.model_id().to_string(),
            kind,
        })
        .collect();

    let workers = (0..workers.max(1))
        .map(|_| {
            let (server, family, requests) =
                (Arc::clone(&server), Arc::clone(&family), Arc::clone(&requests));
            std::thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    requests.fetch_add(1, Ordering::Relaxed);
                    handle(&family, request);
                }
            })
        })
        .collect();
    Ok(ServerHandle {
        addr,
        server,
        workers,
        requests,
        descriptors,
    })
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests received so far, valid or not.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    /// Endpoint list for every model, bases first.
    pub fn endpoints(&self) -> Vec<ModelEndpoint> {
        self.descriptors
            .iter()
            .map(|d| ModelEndpoint {
                model_id: d.model_id.clone(),
                kind: d.kind,
                base_url: format!("{}/models/{}", self.base_url(), d.model_id),
                auth_token: None,
            })
            .collect()
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }

    pub fn shutdown(self) {}
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

fn handle(family: &SyntheticFamily, mut request: Request) {
    let (status, body) = route(family, &mut request);
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn error_body(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

fn route(family: &SyntheticFamily, request: &mut Request) -> (u16, String) {
    let path = request.url().split('?').next().unwrap_or("").to_string();
    let parts: Vec<&str> = path.trim_matches('/').split('/').collect();
    match (request.method(), parts.as_slice()) {
        (Method::Get, ["models"]) => {
            let list: Vec<ModelDescriptor> = family
                .models()
                .into_iter()
                .map(|(m, kind)| ModelDescriptor {
                    model_id: m.model_id().to_string(),
                    kind,
                })
                .collect();
            (200, serde_json::to_string(&list).expect("descriptors serialize"))
        }
        (Method::Post, ["models", id, "generate"]) => {
            let Some(model) = family.model(id) else {
                return (404, error_body(format!("unknown model `{id}`")));
            };
            let mut body = String::new();
            if let Err(e) = request
                .as_reader()
                .take(MAX_BODY_BYTES)
                .read_to_string(&mut body)
            {
                return (400, error_body(e));
            }
            let req: GenerateRequest = match serde_json::from_str(&body) {
                Ok(req) => req,
                Err(e) => return (400, error_body(e)),
            };
            if req.max_tokens == 0 || req.max_tokens > MAX_TOKENS_LIMIT {
                return (400, error_body(format!("max_tokens must be in 1..={MAX_TOKENS_LIMIT}")));
            }
            match generate_response(model, &req.prompt, req.max_tokens, req.seed) {
                Ok(text) => (
                    200,
                    serde_json::to_string(&GenerateResponse { text }).expect("response serializes"),
                ),
                Err(e) => (400, error_body(e)),
            }
        }
        (_, ["models", _, "generate"]) | (_, ["models"]) => (405, error_body("method not allowed")),
        _ => (404, error_body("not found")),
    }
}
