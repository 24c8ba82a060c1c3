//! Local HTTP surface for dashboards and the CLI. Reads come from the hub's
//! snapshot and the journal file; writes only set control flags or drop a
//! directive file, so the loop thread stays the sole owner of its state.

use std::io::{self, Read, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::mpsc::RecvTimeoutError;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::Utc;
use serde::Serialize;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::control::{ledger_totals, Event, Hub};
use crate::directives::{submit_file, InboxError};
use crate::engine::journal::{journal_tail, JournalLine};

pub const TOKEN_ENV: &str = "AUTOLAB_API_TOKEN";
pub const DEFAULT_CYCLES_TAIL: usize = 20;
pub const MAX_CYCLES_TAIL: usize = 1000;
const MAX_BODY: u64 = 64 * 1024;
const HEARTBEAT: Duration = Duration::from_secs(15);

#[derive(Clone)]
pub struct ApiContext {
    pub hub: Arc<Hub>,
    pub workspace: PathBuf,
    pub journal: PathBuf,
    pub token: Option<String>,
}

/// A buffered reply. `/events` is the one streaming route and bypasses it.
#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    fn json(status: u16, v: impl Serialize) -> Self {
        Reply {
            status,
            body: serde_json::to_string_pretty(&v).expect("serializable"),
        }
    }

    fn error(status: u16, msg: impl Into<String>) -> Self {
        Reply::json(status, json!({"error": msg.into()}))
    }
}

fn query_param<'a>(query: &'a str, key: &str) -> Option<&'a str> {
    query.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=').unwrap_or((kv, ""));
        (k == key).then_some(v)
    })
}

fn truthy(v: &str) -> bool {
    matches!(v, "" | "1" | "true" | "yes")
}

/// Constant-time enough for a local bearer token.
fn token_ok(expected: &Option<String>, header: Option<&str>) -> bool {
    let Some(expected) = expected else { return true };
    let Some(got) = header.and_then(|h| h.strip_prefix("Bearer ")) else {
        return false;
    };
    got.len() == expected.len() && got.bytes().zip(expected.bytes()).fold(0u8, |acc, (a, b)| acc | (a ^ b)) == 0
}

/// Route a non-streaming request.
pub fn route(ctx: &ApiContext, method: &str, url: &str, auth: Option<&str>, body: &str) -> Reply {
    if !token_ok(&ctx.token, auth) {
        return Reply::error(401, "missing or wrong bearer token");
    }
    let (path, query) = url.split_once('?').unwrap_or((url, ""));
    match (method, path) {
        ("GET", "/status") => Reply::json(200, ctx.hub.snapshot().status),
        ("GET", "/memory") => Reply::json(200, ctx.hub.snapshot().memory),
        ("GET", "/ledger") => {
            let ledger = ctx.hub.snapshot().ledger;
            let total = ledger.total();
            Reply::json(
                200,
                json!({
                    "pricing": ledger.pricing,
                    "phases": ledger_totals(&ledger),
                    "total": {"calls": total.calls, "usd": total.usd},
                }),
            )
        }
        ("GET", "/cycles") => {
            let n = match query_param(query, "tail").map(str::parse::<usize>) {
                None => DEFAULT_CYCLES_TAIL,
                Some(Ok(n)) => n.min(MAX_CYCLES_TAIL),
                Some(Err(_)) => return Reply::error(400, "tail must be a non-negative integer"),
            };
            let lines: Vec<JournalLine> = journal_tail(&ctx.journal, n)
                .iter()
                .filter_map(|l| JournalLine::parse(l))
                .collect();
            Reply::json(200, lines)
        }
        ("POST", "/directive") => {
            let text = match serde_json::from_str::<serde_json::Value>(body) {
                Ok(v) if v.get("text").is_some() => v["text"].as_str().unwrap_or_default().to_string(),
                _ => body.to_string(),
            };
            match submit_file(&ctx.workspace, &text) {
                Ok(path) => Reply::json(201, json!({"accepted": true, "path": path})),
                Err(InboxError::Invalid(e)) => Reply::error(400, e.to_string()),
                Err(e @ InboxError::Pending(_)) => Reply::error(409, e.to_string()),
                Err(e) => Reply::error(500, e.to_string()),
            }
        }
        ("POST", "/pause") => {
            ctx.hub.control.pause();
            control_event(ctx, "pause");
            Reply::json(200, json!({"paused": true}))
        }
        ("POST", "/resume") => {
            ctx.hub.control.resume();
            control_event(ctx, "resume");
            Reply::json(200, json!({"paused": false}))
        }
        ("POST", "/stop") => {
            let from_body = serde_json::from_str::<serde_json::Value>(body)
                .ok()
                .and_then(|v| v.get("kill_active").and_then(|k| k.as_bool()));
            let kill = from_body.unwrap_or_else(|| query_param(query, "kill_active").is_some_and(truthy));
            ctx.hub.control.stop(kill);
            control_event(ctx, if kill { "stop+kill" } else { "stop" });
            Reply::json(202, json!({"stopping": true, "kill_active": kill}))
        }
        (_, "/status" | "/memory" | "/ledger" | "/cycles" | "/events" | "/directive" | "/pause" | "/resume" | "/stop") => {
            Reply::error(405, format!("{method} not allowed on {path}"))
        }
        _ => Reply::error(404, format!("no route for {path}")),
    }
}

fn control_event(ctx: &ApiContext, action: &str) {
    log::info!("api: {action}");
    ctx.hub.publish(&Event::Control {
        at: Utc::now(),
        action: action.to_string(),
    });
}

/// Line-delimited JSON events until the client goes away or `max` lines
/// were sent. Idle connections get a heartbeat line.
fn stream_events(ctx: &ApiContext, req: Request, max: Option<usize>) {
    let rx = ctx.hub.subscribe();
    let mut w = req.into_writer();
    let head = "HTTP/1.1 200 OK\r\nContent-Type: application/x-ndjson\r\nCache-Control: no-cache\r\nTransfer-Encoding: chunked\r\nConnection: close\r\n\r\n";
    if w.write_all(head.as_bytes()).and_then(|_| w.flush()).is_err() {
        return;
    }
    let mut sent = 0usize;
    while max.is_none_or(|m| sent < m) {
        let line = match rx.recv_timeout(HEARTBEAT) {
            Ok(l) => {
                sent += 1;
                l
            }
            Err(RecvTimeoutError::Timeout) => json!({"type": "heartbeat", "at": Utc::now()}).to_string(),
            Err(RecvTimeoutError::Disconnected) => break,
        };
        if write_chunk(&mut w, &format!("{line}\n")).is_err() {
            return;
        }
    }
    let _ = w.write_all(b"0\r\n\r\n").and_then(|_| w.flush());
}

fn write_chunk(w: &mut impl Write, data: &str) -> io::Result<()> {
    write!(w, "{:x}\r\n{data}\r\n", data.len())?;
    w.flush()
}

fn handle(ctx: &ApiContext, mut req: Request) {
    let method = req.method().to_string().to_uppercase();
    let url = req.url().to_string();
    let auth = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let path = url.split('?').next().unwrap_or("");
    if path == "/events" && *req.method() == Method::Get {
        if !token_ok(&ctx.token, auth.as_deref()) {
            let r = Reply::error(401, "missing or wrong bearer token");
            let _ = req.respond(to_response(r));
            return;
        }
        let max = url
            .split_once('?')
            .and_then(|(_, q)| query_param(q, "max"))
            .and_then(|v| v.parse().ok());
        stream_events(ctx, req, max);
        return;
    }
    let mut body = String::new();
    if req.as_reader().take(MAX_BODY).read_to_string(&mut body).is_err() {
        let _ = req.respond(to_response(Reply::error(400, "body must be UTF-8 text")));
        return;
    }
    let reply = route(ctx, &method, &url, auth.as_deref(), &body);
    let _ = req.respond(to_response(reply));
}

fn to_response(r: Reply) -> Response<io::Cursor<Vec<u8>>> {
    Response::from_string(r.body)
        .with_status_code(r.status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

pub struct ApiServer {
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
    addr: SocketAddr,
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("refusing to serve on non-loopback {0} without {TOKEN_ENV}")]
    Unprotected(String),
    #[error("cannot bind {0}: {1}")]
    Bind(String, String),
}

impl ApiServer {
    /// Bind and serve on a background thread, one thread per request.
    pub fn start(bind: &str, ctx: ApiContext) -> Result<Self, ApiError> {
        let server = Server::http(bind).map_err(|e| ApiError::Bind(bind.to_string(), e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| ApiError::Bind(bind.to_string(), "not an IP listener".into()))?;
        if !addr.ip().is_loopback() && ctx.token.is_none() {
            return Err(ApiError::Unprotected(bind.to_string()));
        }
        let server = Arc::new(server);
        let s = server.clone();
        let thread = thread::spawn(move || {
            for req in s.incoming_requests() {
                let ctx = ctx.clone();
                thread::spawn(move || handle(&ctx, req));
            }
        });
        log::info!("api listening on http://{addr}");
        Ok(ApiServer {
            server,
            thread: Some(thread),
            addr,
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ApiServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
