//! Read-only static server for a validated bundle, with single byte-range
//! support for partial fetches of meshes and images.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::Response;
use axum::Router;
use histo3d::error::{Error, Result};
use histo3d::scene::validate_bundle;

pub fn serve(root: &Path, host: &str, port: u16) -> Result<()> {
    let bundle = validate_bundle(root)?;
    log::info!(
        "bundle {} valid: {} tumors, {} feature tables",
        bundle.sample_id,
        bundle.tumors.len(),
        bundle.features.organ.len() + bundle.features.tumor.len()
    );
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Error::InvalidParameter {
            name: "host",
            reason: format!("{host}:{port}: {e}"),
        })?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::Stage(format!("runtime: {e}")))?;
    let app = Router::new().fallback(handle).with_state(Arc::new(root.to_path_buf()));
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::Stage(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Error::Stage(e.to_string()))?;
        // tests and scripts read the bound port from this line
        println!("serving {} on http://{local}/", root.display());
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::Stage(format!("server: {e}")))
    })
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => "application/json",
        Some("csv") => "text/csv; charset=utf-8",
        Some("png") => "image/png",
        Some("stl") => "model/stl",
        Some("html") => "text/html; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request path onto a file below `root`; `None` for anything that
/// could escape it.
fn resolve(root: &Path, uri_path: &str) -> Option<PathBuf> {
    let mut out = root.to_path_buf();
    for part in uri_path.split('/').filter(|p| !p.is_empty()) {
        if part == "." || part == ".." || part.contains('\\') || part.contains('%') || part.starts_with('.') {
            return None;
        }
        out.push(part);
    }
    Some(out)
}

#[derive(Debug, PartialEq, Eq)]
enum RangeRequest {
    Full,
    /// Inclusive byte range.
    Partial(u64, u64),
    Unsatisfiable,
}

/// Interprets a `Range` header against a body of `len` bytes. Multi-range
/// and malformed headers fall back to the full body.
fn parse_range(header: Option<&str>, len: u64) -> RangeRequest {
    let Some(spec) = header.and_then(|h| h.trim().strip_prefix("bytes=")) else {
        return RangeRequest::Full;
    };
    if spec.contains(',') {
        return RangeRequest::Full;
    }
    let Some((a, b)) = spec.split_once('-') else {
        return RangeRequest::Full;
    };
    let (a, b) = (a.trim(), b.trim());
    let range = match (a.is_empty(), b.is_empty()) {
        (true, true) => return RangeRequest::Full,
        // suffix: last n bytes
        (true, false) => match b.parse::<u64>() {
            Ok(0) => return RangeRequest::Unsatisfiable,
            Ok(n) => (len.saturating_sub(n), len.saturating_sub(1)),
            Err(_) => return RangeRequest::Full,
        },
        (false, _) => {
            let Ok(start) = a.parse::<u64>() else {
                return RangeRequest::Full;
            };
            let end = if b.is_empty() {
                len.saturating_sub(1)
            } else {
                match b.parse::<u64>() {
                    Ok(e) if e >= start => e.min(len.saturating_sub(1)),
                    _ => return RangeRequest::Full,
                }
            };
            (start, end)
        }
    };
    if len == 0 || range.0 >= len {
        RangeRequest::Unsatisfiable
    } else {
        RangeRequest::Partial(range.0, range.1)
    }
}

fn status(code: StatusCode) -> Response {
    let mut r = Response::new(Body::from(code.canonical_reason().unwrap_or("").to_string()));
    *r.status_mut() = code;
    r
}

async fn handle(State(root): State<Arc<PathBuf>>, req: Request) -> Response {
    if req.method() != Method::GET && req.method() != Method::HEAD {
        let mut r = status(StatusCode::METHOD_NOT_ALLOWED);
        r.headers_mut().insert(header::ALLOW, HeaderValue::from_static("GET, HEAD"));
        return r;
    }
    let Some(path) = resolve(&root, req.uri().path()) else {
        return status(StatusCode::NOT_FOUND);
    };
    let bytes = match tokio::fs::metadata(&path).await {
        Ok(m) if m.is_file() => match tokio::fs::read(&path).await {
            Ok(b) => b,
            Err(_) => return status(StatusCode::NOT_FOUND),
        },
        _ => return status(StatusCode::NOT_FOUND),
    };
    let len = bytes.len() as u64;
    let range = parse_range(req.headers().get(header::RANGE).and_then(|v| v.to_str().ok()), len);
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type(&path)));
    headers.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    let (code, body) = match range {
        RangeRequest::Full => (StatusCode::OK, bytes),
        RangeRequest::Partial(s, e) => {
            let v = format!("bytes {s}-{e}/{len}");
            headers.insert(header::CONTENT_RANGE, HeaderValue::from_str(&v).expect("ascii"));
            (StatusCode::PARTIAL_CONTENT, bytes[s as usize..=e as usize].to_vec())
        }
        RangeRequest::Unsatisfiable => {
            let v = format!("bytes */{len}");
            headers.insert(header::CONTENT_RANGE, HeaderValue::from_str(&v).expect("ascii"));
            (StatusCode::RANGE_NOT_SATISFIABLE, Vec::new())
        }
    };
    let mut r = Response::new(Body::from(body));
    *r.status_mut() = code;
    *r.headers_mut() = headers;
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        use RangeRequest::*;
        assert_eq!(parse_range(None, 100), Full);
        assert_eq!(parse_range(Some("bytes=0-9"), 100), Partial(0, 9));
        assert_eq!(parse_range(Some("bytes=90-"), 100), Partial(90, 99));
        assert_eq!(parse_range(Some("bytes=-10"), 100), Partial(90, 99));
        assert_eq!(parse_range(Some("bytes=-500"), 100), Partial(0, 99));
        assert_eq!(parse_range(Some("bytes=50-5000"), 100), Partial(50, 99));
        assert_eq!(parse_range(Some("bytes=100-"), 100), Unsatisfiable);
        assert_eq!(parse_range(Some("bytes=9-3"), 100), Full);
        assert_eq!(parse_range(Some("bytes=0-1,5-6"), 100), Full);
        assert_eq!(parse_range(Some("items=0-1"), 100), Full);
    }

    #[test]
    fn paths_stay_inside_the_root() {
        let root = Path::new("/b");
        assert_eq!(resolve(root, "/models/organ.stl"), Some(PathBuf::from("/b/models/organ.stl")));
        assert_eq!(resolve(root, "/../etc/passwd"), None);
        assert_eq!(resolve(root, "/.histo3d/scene.stamp"), None);
        assert_eq!(resolve(root, "/a/%2e%2e/x"), None);
    }
}
