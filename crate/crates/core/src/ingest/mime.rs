//! Just enough MIME to pull image attachments out of camera mail and
//! multipart uploads.

use base64::Engine;
use chrono::{DateTime, Utc};
use thiserror::Error;

const MAX_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MimeError {
    #[error("multipart body without a boundary parameter")]
    MissingBoundary,
    #[error("boundary {0:?} never appears in the body")]
    BoundaryNotFound(String),
    #[error("multipart nesting deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("bad base64 content: {0}")]
    Base64(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Headers(Vec<(String, String)>);

impl Headers {
    pub fn get(&self, name: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// A leaf part with its transfer encoding already undone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MimePart {
    pub headers: Headers,
    pub content_type: String,
    pub filename: Option<String>,
    pub name: Option<String>,
    pub body: Vec<u8>,
}

impl MimePart {
    pub fn is_image(&self) -> bool {
        if self.content_type.starts_with("image/") {
            return true;
        }
        self.filename.as_deref().is_some_and(|f| {
            let f = f.to_ascii_lowercase();
            [".jpg", ".jpeg", ".png"].iter().any(|ext| f.ends_with(ext))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedMessage {
    pub headers: Headers,
    pub parts: Vec<MimePart>,
}

impl ParsedMessage {
    pub fn subject(&self) -> String {
        self.headers.get("Subject").unwrap_or_default().to_string()
    }

    pub fn date(&self) -> Option<DateTime<Utc>> {
        let raw = self.headers.get("Date")?;
        DateTime::parse_from_rfc2822(raw)
            .or_else(|_| DateTime::parse_from_rfc3339(raw))
            .ok()
            .map(|d| d.with_timezone(&Utc))
    }

    /// First text/plain leaf, lossily decoded.
    pub fn text_body(&self) -> String {
        self.parts
            .iter()
            .find(|p| p.content_type == "text/plain" && p.filename.is_none())
            .map(|p| String::from_utf8_lossy(&p.body).into_owned())
            .unwrap_or_default()
    }

    pub fn first_image(&self) -> Option<&MimePart> {
        self.parts.iter().find(|p| p.is_image())
    }
}

/// Splits a header block from its body. Accepts CRLF or bare LF.
fn split_head(raw: &[u8]) -> (&[u8], &[u8]) {
    let mut i = 0;
    while i < raw.len() {
        let line_end = raw[i..].iter().position(|b| *b == b'\n').map(|p| i + p);
        let Some(end) = line_end else { return (raw, &[]) };
        let line = &raw[i..end];
        if line.is_empty() || line == b"\r" {
            return (&raw[..i], &raw[end + 1..]);
        }
        i = end + 1;
    }
    (raw, &[])
}

pub fn parse_headers(block: &[u8]) -> Headers {
    let text = String::from_utf8_lossy(block);
    let mut out: Vec<(String, String)> = Vec::new();
    for line in text.split('\n') {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.starts_with([' ', '\t']) {
            if let Some((_, v)) = out.last_mut() {
                v.push(' ');
                v.push_str(line.trim());
            }
            continue;
        }
        if let Some((k, v)) = line.split_once(':') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Headers(out)
}

/// Splits `type/sub; k=v; k2="v 2"` into the lowercased type and its
/// parameters (keys lowercased, quotes removed).
pub fn parse_header_value(value: &str) -> (String, Vec<(String, String)>) {
    let mut pieces = split_params(value).into_iter();
    let head = pieces.next().unwrap_or_default().trim().to_ascii_lowercase();
    let params = pieces
        .filter_map(|p| {
            let (k, v) = p.split_once('=')?;
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v);
            Some((k.trim().to_ascii_lowercase(), v.replace("\\\"", "\"")))
        })
        .collect();
    (head, params)
}

fn split_params(value: &str) -> Vec<String> {
    let mut out = vec![String::new()];
    let mut quoted = false;
    let mut prev = '\0';
    for c in value.chars() {
        match c {
            '"' if prev != '\\' => quoted = !quoted,
            ';' if !quoted => {
                out.push(String::new());
                prev = c;
                continue;
            }
            _ => {}
        }
        out.last_mut().expect("non-empty").push(c);
        prev = c;
    }
    out
}

fn param<'a>(params: &'a [(String, String)], key: &str) -> Option<&'a str> {
    params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn decode_body(encoding: &str, body: &[u8]) -> Result<Vec<u8>, MimeError> {
    match encoding.to_ascii_lowercase().as_str() {
        "base64" => {
            let compact: Vec<u8> = body.iter().copied().filter(|b| !b.is_ascii_whitespace()).collect();
            base64::engine::general_purpose::STANDARD
                .decode(&compact)
                .map_err(|e| MimeError::Base64(e.to_string()))
        }
        "quoted-printable" => Ok(quoted_printable::decode(body, quoted_printable::ParseMode::Robust)
            .unwrap_or_else(|_| body.to_vec())),
        _ => Ok(body.to_vec()),
    }
}

/// Splits a multipart body on `boundary`, ignoring preamble and epilogue.
pub fn split_multipart<'a>(body: &'a [u8], boundary: &str) -> Result<Vec<&'a [u8]>, MimeError> {
    let delim = format!("--{boundary}");
    let delim = delim.as_bytes();
    let mut starts = Vec::new();
    let mut i = 0;
    while i + delim.len() <= body.len() {
        let at_line_start = i == 0 || body[i - 1] == b'\n';
        if at_line_start && body[i..].starts_with(delim) {
            starts.push(i);
            i += delim.len();
        } else {
            i += 1;
        }
    }
    if starts.is_empty() {
        return Err(MimeError::BoundaryNotFound(boundary.to_string()));
    }
    let mut parts = Vec::new();
    for w in 0..starts.len() {
        let after = starts[w] + delim.len();
        if body[after..].starts_with(b"--") {
            break;
        }
        // skip the rest of the delimiter line
        let content_start = body[after..].iter().position(|b| *b == b'\n').map_or(body.len(), |p| after + p + 1);
        let end = starts.get(w + 1).copied().unwrap_or(body.len());
        let mut content = &body[content_start.min(end)..end];
        // the line break before the next delimiter belongs to the delimiter
        if let Some(c) = content.strip_suffix(b"\n") {
            content = c.strip_suffix(b"\r").unwrap_or(c);
        }
        parts.push(content);
    }
    Ok(parts)
}

fn collect(raw: &[u8], depth: usize, out: &mut Vec<MimePart>) -> Result<Headers, MimeError> {
    if depth > MAX_DEPTH {
        return Err(MimeError::TooDeep);
    }
    let (head, body) = split_head(raw);
    let headers = parse_headers(head);
    let (content_type, ct_params) =
        parse_header_value(headers.get("Content-Type").unwrap_or("text/plain"));
    if content_type.starts_with("multipart/") {
        let boundary = param(&ct_params, "boundary").ok_or(MimeError::MissingBoundary)?;
        for part in split_multipart(body, boundary)? {
            collect(part, depth + 1, out)?;
        }
        return Ok(headers);
    }
    let (_, cd_params) = parse_header_value(headers.get("Content-Disposition").unwrap_or_default());
    let encoding = headers.get("Content-Transfer-Encoding").unwrap_or("7bit").trim().to_string();
    out.push(MimePart {
        filename: param(&cd_params, "filename").or_else(|| param(&ct_params, "name")).map(str::to_string),
        name: param(&cd_params, "name").map(str::to_string),
        content_type,
        body: decode_body(&encoding, body)?,
        headers: headers.clone(),
    });
    Ok(headers)
}

/// Parses a full RFC 5322 message, flattening nested multiparts into leaves.
pub fn parse_message(raw: &[u8]) -> Result<ParsedMessage, MimeError> {
    let mut parts = Vec::new();
    let headers = collect(raw, 0, &mut parts)?;
    Ok(ParsedMessage { headers, parts })
}

/// Parses a `multipart/form-data` body given the request's Content-Type.
pub fn parse_form_data(content_type: &str, body: &[u8]) -> Result<Vec<MimePart>, MimeError> {
    let (_, params) = parse_header_value(content_type);
    let boundary = param(&params, "boundary").ok_or(MimeError::MissingBoundary)?;
    let mut out = Vec::new();
    for part in split_multipart(body, boundary)? {
        collect(part, 1, &mut out)?;
    }
    Ok(out)
}
