//! Static file server with single-range `Range` support, confined to one
//! directory.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server, StatusCode};

use crate::error::{Error, Result};

pub struct StoreServer {
    server: Arc<Server>,
    addr: SocketAddr,
    thread: Option<JoinHandle<()>>,
}

impl StoreServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, file: &str) -> String {
        format!("http://{}/{}", self.addr, file)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for StoreServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Starts serving `root` on `addr` (port 0 picks a free port).
pub fn serve_directory(root: &Path, addr: &str) -> Result<StoreServer> {
    let root = root.canonicalize()?;
    let server = Arc::new(Server::http(addr).map_err(|e| Error::Http(e.to_string()))?);
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Http("server is not bound to an IP address".into()))?;
    let worker = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for request in worker.incoming_requests() {
            let _ = handle(&root, request);
        }
    });
    Ok(StoreServer {
        server,
        addr: bound,
        thread: Some(thread),
    })
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn status(request: Request, code: u16, extra: Vec<Header>) -> std::io::Result<()> {
    let mut resp = Response::empty(StatusCode(code));
    for h in extra {
        resp.add_header(h);
    }
    request.respond(resp)
}

/// Maps a URL path onto a file under `root`, or `None` if it would escape.
pub(crate) fn resolve(root: &Path, url: &str) -> Option<PathBuf> {
    let path = url.split(['?', '#']).next().unwrap_or("");
    if path.contains('\\') || path.contains('\0') || path.contains('%') {
        return None;
    }
    let rel = Path::new(path.trim_start_matches('/'));
    if rel.as_os_str().is_empty() || rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

/// Parses a single `bytes=` range against a resource of `len` bytes into an
/// inclusive `(start, end)`. `Ok(None)` means serve the whole resource.
pub(crate) fn parse_range(value: &str, len: u64) -> std::result::Result<Option<(u64, u64)>, ()> {
    let spec = value.trim().strip_prefix("bytes=").ok_or(())?;
    if spec.contains(',') {
        return Ok(None);
    }
    let (a, b) = spec.split_once('-').ok_or(())?;
    let (a, b) = (a.trim(), b.trim());
    let range = if a.is_empty() {
        let n: u64 = b.parse().map_err(|_| ())?;
        if n == 0 || len == 0 {
            return Err(());
        }
        (len.saturating_sub(n), len - 1)
    } else {
        let start: u64 = a.parse().map_err(|_| ())?;
        let end = if b.is_empty() { len.saturating_sub(1) } else { b.parse::<u64>().map_err(|_| ())?.min(len.saturating_sub(1)) };
        if start >= len || end < start {
            return Err(());
        }
        (start, end)
    };
    Ok(Some(range))
}

fn handle(root: &Path, request: Request) -> std::io::Result<()> {
    let head = match request.method() {
        Method::Get => false,
        Method::Head => true,
        _ => return status(request, 405, vec![header("Allow", "GET, HEAD")]),
    };
    let Some(path) = resolve(root, request.url()) else {
        return status(request, 403, vec![]);
    };
    let canonical = match path.canonicalize() {
        Ok(p) if p.starts_with(root) && p.is_file() => p,
        Ok(_) => return status(request, 403, vec![]),
        Err(_) => return status(request, 404, vec![]),
    };
    let mut file = File::open(&canonical)?;
    let len = file.metadata()?.len();
    let range = request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Range"))
        .map(|h| parse_range(h.value.as_str(), len));
    let common = vec![
        header("Accept-Ranges", "bytes"),
        header("Access-Control-Allow-Origin", "*"),
        header("Access-Control-Expose-Headers", "Content-Range, Content-Length"),
        header("Content-Type", "application/octet-stream"),
    ];
    let (code, start, count, mut headers) = match range {
        Some(Err(())) => {
            let mut h = common;
            h.push(header("Content-Range", &format!("bytes */{len}")));
            return status(request, 416, h);
        }
        Some(Ok(Some((s, e)))) => {
            let mut h = common;
            h.push(header("Content-Range", &format!("bytes {s}-{e}/{len}")));
            (206, s, e - s + 1, h)
        }
        _ => (200, 0, len, common),
    };
    if head {
        headers.push(header("Content-Length", &count.to_string()));
        let mut resp = Response::empty(StatusCode(code));
        for h in headers {
            resp.add_header(h);
        }
        return request.respond(resp);
    }
    file.seek(SeekFrom::Start(start))?;
    let resp = Response::new(StatusCode(code), headers, file.take(count), Some(count as usize), None);
    request.respond(resp)
}
