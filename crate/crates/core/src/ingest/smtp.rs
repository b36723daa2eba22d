//! Minimal SMTP receiver: HELO/EHLO, MAIL FROM, RCPT TO, DATA, RSET, NOOP,
//! QUIT. One message and one recipient per session, no TLS or AUTH.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::mime::{self, MimeError};

pub const DEFAULT_SMTP_PORT: u16 = 2525;
pub const DEFAULT_MAX_MESSAGE_BYTES: usize = 10 * 1024 * 1024;
const MAX_COMMAND_LINE: usize = 1000;
const MAX_ERRORS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attachment {
    pub filename: Option<String>,
    pub content_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MailEnvelope {
    pub sender: String,
    pub recipient: String,
    pub subject: String,
    pub body: String,
    pub date: Option<DateTime<Utc>>,
    pub attachments: Vec<Attachment>,
}

impl MailEnvelope {
    /// Local part of the sender address; `None` when it is empty.
    pub fn camera_id(&self) -> Option<&str> {
        let local = self.sender.rsplit_once('@').map_or(self.sender.as_str(), |(l, _)| l).trim();
        (!local.is_empty()).then_some(local)
    }

    pub fn first_image(&self) -> Option<&Attachment> {
        self.attachments.iter().find(|a| a.content_type.starts_with("image/")).or_else(|| {
            self.attachments.iter().find(|a| {
                a.filename.as_deref().is_some_and(|f| {
                    let f = f.to_ascii_lowercase();
                    f.ends_with(".jpg") || f.ends_with(".jpeg") || f.ends_with(".png")
                })
            })
        })
    }

    pub fn from_message(sender: String, recipient: String, raw: &[u8]) -> Result<Self, MimeError> {
        let msg = mime::parse_message(raw)?;
        let attachments = msg
            .parts
            .iter()
            .filter(|p| p.filename.is_some() || p.is_image())
            .map(|p| Attachment {
                filename: p.filename.clone(),
                content_type: p.content_type.clone(),
                bytes: p.body.clone(),
            })
            .collect();
        Ok(MailEnvelope {
            sender,
            recipient,
            subject: msg.subject(),
            body: msg.text_body(),
            date: msg.date(),
            attachments,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SmtpConfig {
    pub hostname: String,
    pub max_message_bytes: usize,
    pub idle_timeout: Duration,
}

impl Default for SmtpConfig {
    fn default() -> Self {
        SmtpConfig {
            hostname: "biopay.local".into(),
            max_message_bytes: DEFAULT_MAX_MESSAGE_BYTES,
            idle_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reply {
    pub code: u16,
    pub lines: Vec<String>,
}

impl Reply {
    fn new(code: u16, text: impl Into<String>) -> Self {
        Reply { code, lines: vec![text.into()] }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.lines.iter().enumerate() {
            let sep = if i + 1 == self.lines.len() { ' ' } else { '-' };
            out += &format!("{}{}{}\r\n", self.code, sep, l);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Connected,
    Greeted,
    Mail,
    Rcpt,
    Data,
    Delivered,
    Closed,
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct LineOutcome {
    pub reply: Option<Reply>,
    pub close: bool,
}

/// Protocol state machine with no I/O; feed it lines without terminators
/// stripped and write back whatever it replies.
#[derive(Debug)]
pub struct SmtpSession {
    config: SmtpConfig,
    phase: Phase,
    sender: Option<String>,
    recipient: Option<String>,
    data: Vec<u8>,
    oversized: bool,
    errors: u32,
    envelope: Option<MailEnvelope>,
}

impl SmtpSession {
    pub fn new(config: SmtpConfig) -> Self {
        SmtpSession {
            config,
            phase: Phase::Connected,
            sender: None,
            recipient: None,
            data: Vec::new(),
            oversized: false,
            errors: 0,
            envelope: None,
        }
    }

    pub fn greeting(&self) -> Reply {
        Reply::new(220, format!("{} ESMTP ready", self.config.hostname))
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn in_data(&self) -> bool {
        self.phase == Phase::Data
    }

    pub fn take_envelope(&mut self) -> Option<MailEnvelope> {
        self.envelope.take()
    }

    fn reply(r: Reply) -> LineOutcome {
        LineOutcome { reply: Some(r), close: false }
    }

    fn abort(&mut self, r: Reply) -> LineOutcome {
        self.phase = Phase::Closed;
        LineOutcome { reply: Some(r), close: true }
    }

    fn error(&mut self, r: Reply) -> LineOutcome {
        self.errors += 1;
        if self.errors >= MAX_ERRORS {
            return self.abort(Reply::new(421, "too many errors, closing connection"));
        }
        Self::reply(r)
    }

    /// `line` is one raw line including its terminator, if any.
    pub fn feed_line(&mut self, line: &[u8]) -> LineOutcome {
        match self.phase {
            Phase::Closed => LineOutcome { reply: None, close: true },
            Phase::Data => self.data_line(line),
            _ => self.command_line(line),
        }
    }

    /// Called when the peer sent a line longer than the command limit.
    pub fn line_too_long(&mut self) -> LineOutcome {
        if self.phase == Phase::Data {
            self.oversized = true;
            return LineOutcome::default();
        }
        self.error(Reply::new(500, "line too long"))
    }

    fn data_line(&mut self, line: &[u8]) -> LineOutcome {
        let bare = strip_eol(line);
        if bare == b"." {
            return self.finish_data();
        }
        if self.oversized {
            return LineOutcome::default();
        }
        let content = bare.strip_prefix(b".").unwrap_or(bare);
        if self.data.len() + content.len() + 2 > self.config.max_message_bytes {
            self.oversized = true;
            self.data = Vec::new();
            return LineOutcome::default();
        }
        self.data.extend_from_slice(content);
        self.data.extend_from_slice(b"\r\n");
        LineOutcome::default()
    }

    fn finish_data(&mut self) -> LineOutcome {
        if self.oversized {
            return self.abort(Reply::new(552, "message exceeds size limit"));
        }
        let sender = self.sender.take().unwrap_or_default();
        let recipient = self.recipient.take().unwrap_or_default();
        let raw = std::mem::take(&mut self.data);
        match MailEnvelope::from_message(sender, recipient, &raw) {
            Ok(env) => {
                self.envelope = Some(env);
                self.phase = Phase::Delivered;
                Self::reply(Reply::new(250, "message accepted"))
            }
            Err(e) => self.abort(Reply::new(554, format!("unparseable message: {e}"))),
        }
    }

    fn command_line(&mut self, line: &[u8]) -> LineOutcome {
        let text = String::from_utf8_lossy(strip_eol(line)).into_owned();
        let (verb, arg) = match text.split_once(' ') {
            Some((v, a)) => (v.to_ascii_uppercase(), a.trim().to_string()),
            None => (text.trim().to_ascii_uppercase(), String::new()),
        };
        match verb.as_str() {
            "HELO" | "EHLO" => {
                if arg.is_empty() {
                    return self.error(Reply::new(501, "domain required"));
                }
                if matches!(self.phase, Phase::Mail | Phase::Rcpt) {
                    self.sender = None;
                    self.recipient = None;
                }
                if self.phase != Phase::Delivered {
                    self.phase = Phase::Greeted;
                }
                let host = self.config.hostname.clone();
                if verb == "EHLO" {
                    Self::reply(Reply {
                        code: 250,
                        lines: vec![host, format!("SIZE {}", self.config.max_message_bytes), "8BITMIME".into()],
                    })
                } else {
                    Self::reply(Reply::new(250, host))
                }
            }
            "MAIL" => {
                if self.phase != Phase::Greeted {
                    let why = if self.phase == Phase::Delivered {
                        "one message per session"
                    } else {
                        "bad sequence of commands"
                    };
                    return self.abort(Reply::new(503, why));
                }
                let Some(rest) = strip_keyword(&arg, "FROM:") else {
                    return self.error(Reply::new(501, "syntax: MAIL FROM:<address>"));
                };
                let Some((addr, params)) = parse_path(rest) else {
                    return self.error(Reply::new(501, "bad sender address"));
                };
                let declared = params
                    .split_whitespace()
                    .find_map(|p| p.to_ascii_uppercase().strip_prefix("SIZE=").and_then(|n| n.parse::<usize>().ok()));
                if declared.is_some_and(|n| n > self.config.max_message_bytes) {
                    return self.abort(Reply::new(552, "message exceeds size limit"));
                }
                self.sender = Some(addr);
                self.phase = Phase::Mail;
                Self::reply(Reply::new(250, "sender ok"))
            }
            "RCPT" => match self.phase {
                Phase::Mail => {
                    let Some(rest) = strip_keyword(&arg, "TO:") else {
                        return self.error(Reply::new(501, "syntax: RCPT TO:<address>"));
                    };
                    match parse_path(rest) {
                        Some((addr, _)) if !addr.is_empty() => {
                            self.recipient = Some(addr);
                            self.phase = Phase::Rcpt;
                            Self::reply(Reply::new(250, "recipient ok"))
                        }
                        _ => self.error(Reply::new(501, "bad recipient address")),
                    }
                }
                Phase::Rcpt => Self::reply(Reply::new(452, "too many recipients")),
                _ => self.abort(Reply::new(503, "bad sequence of commands")),
            },
            "DATA" => {
                if self.phase != Phase::Rcpt {
                    return self.abort(Reply::new(503, "bad sequence of commands"));
                }
                self.phase = Phase::Data;
                self.data.clear();
                self.oversized = false;
                Self::reply(Reply::new(354, "end data with <CR><LF>.<CR><LF>"))
            }
            "RSET" => {
                self.sender = None;
                self.recipient = None;
                if matches!(self.phase, Phase::Mail | Phase::Rcpt) {
                    self.phase = Phase::Greeted;
                }
                Self::reply(Reply::new(250, "ok"))
            }
            "NOOP" => Self::reply(Reply::new(250, "ok")),
            "QUIT" => {
                self.phase = Phase::Closed;
                LineOutcome { reply: Some(Reply::new(221, "bye")), close: true }
            }
            _ => self.error(Reply::new(500, "command not recognized")),
        }
    }
}

fn strip_eol(line: &[u8]) -> &[u8] {
    let line = line.strip_suffix(b"\n").unwrap_or(line);
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn strip_keyword<'a>(arg: &'a str, kw: &str) -> Option<&'a str> {
    let head = arg.get(..kw.len())?;
    head.eq_ignore_ascii_case(kw).then(|| arg[kw.len()..].trim_start())
}

/// `<addr> PARAMS` → (addr, params). Bare addresses are tolerated.
fn parse_path(s: &str) -> Option<(String, String)> {
    if let Some(rest) = s.strip_prefix('<') {
        let (addr, params) = rest.split_once('>')?;
        if addr.contains(['<', ' ']) {
            return None;
        }
        return Some((addr.to_string(), params.trim().to_string()));
    }
    let mut it = s.splitn(2, ' ');
    let addr = it.next()?.to_string();
    if addr.is_empty() {
        return None;
    }
    Some((addr, it.next().unwrap_or_default().trim().to_string()))
}

/// Reads one line of at most `limit` bytes. Returns the bytes read and
/// whether the line overflowed (the remainder is discarded).
fn read_line_limited<R: BufRead>(reader: &mut R, limit: usize) -> io::Result<(Vec<u8>, bool)> {
    let mut line = Vec::new();
    let mut overflow = false;
    loop {
        let buf = reader.fill_buf()?;
        if buf.is_empty() {
            return Ok((line, overflow));
        }
        let (chunk, done) = match buf.iter().position(|b| *b == b'\n') {
            Some(p) => (&buf[..=p], true),
            None => (buf, false),
        };
        let n = chunk.len();
        if !overflow {
            if line.len() + n > limit {
                overflow = true;
                line.clear();
            } else {
                line.extend_from_slice(chunk);
            }
        }
        reader.consume(n);
        if done {
            return Ok((line, overflow));
        }
    }
}

/// Runs one session over a byte stream. Returns the envelope when a message
/// was accepted before the session ended.
pub fn smtp_receive<R: BufRead, W: Write>(
    mut reader: R,
    mut writer: W,
    config: &SmtpConfig,
) -> io::Result<Option<MailEnvelope>> {
    let mut session = SmtpSession::new(config.clone());
    writer.write_all(session.greeting().render().as_bytes())?;
    writer.flush()?;
    let mut envelope = None;
    loop {
        let limit = if session.in_data() { config.max_message_bytes + 2 } else { MAX_COMMAND_LINE };
        let (line, overflow) = read_line_limited(&mut reader, limit)?;
        if line.is_empty() && !overflow {
            break; // peer hung up
        }
        let outcome = if overflow { session.line_too_long() } else { session.feed_line(&line) };
        if let Some(env) = session.take_envelope() {
            envelope = Some(env);
        }
        if let Some(reply) = outcome.reply {
            writer.write_all(reply.render().as_bytes())?;
            writer.flush()?;
        }
        if outcome.close {
            break;
        }
    }
    Ok(envelope)
}

#[derive(Debug, Default)]
pub struct ServerStats {
    pub sessions: AtomicU64,
    pub messages: AtomicU64,
    pub session_panics: AtomicU64,
    pub io_errors: AtomicU64,
}

pub type EnvelopeHandler = Arc<dyn Fn(MailEnvelope) + Send + Sync>;

/// Blocking TCP listener, one thread per connection. A misbehaving session
/// (including a panicking handler) only ends that connection.
pub struct SmtpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    stats: Arc<ServerStats>,
    accept: Option<JoinHandle<()>>,
}

impl SmtpServer {
    pub fn bind(addr: &str, config: SmtpConfig, handler: EnvelopeHandler) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        Self::spawn(listener, config, handler)
    }

    pub fn spawn(listener: TcpListener, config: SmtpConfig, handler: EnvelopeHandler) -> io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(ServerStats::default());
        let (stop2, stats2) = (stop.clone(), stats.clone());
        let accept = thread::Builder::new().name("smtp-accept".into()).spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let stream = match conn {
                    Ok(s) => s,
                    Err(e) => {
                        warn!(error = %e, "smtp accept failed");
                        continue;
                    }
                };
                let (config, handler, stats) = (config.clone(), handler.clone(), stats2.clone());
                let spawned = thread::Builder::new()
                    .name("smtp-session".into())
                    .spawn(move || serve_connection(stream, &config, &handler, &stats));
                if let Err(e) = spawned {
                    warn!(error = %e, "could not spawn smtp session thread");
                }
            }
        })?;
        Ok(SmtpServer { addr, stop, stats, accept: Some(accept) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ServerStats {
        &self.stats
    }

    pub fn is_running(&self) -> bool {
        self.accept.as_ref().is_some_and(|h| !h.is_finished())
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for SmtpServer {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

fn serve_connection(stream: TcpStream, config: &SmtpConfig, handler: &EnvelopeHandler, stats: &ServerStats) {
    stats.sessions.fetch_add(1, Ordering::Relaxed);
    let _ = stream.set_read_timeout(Some(config.idle_timeout));
    let _ = stream.set_write_timeout(Some(config.idle_timeout));
    let peer = stream.peer_addr().ok();
    let Ok(read_half) = stream.try_clone() else {
        stats.io_errors.fetch_add(1, Ordering::Relaxed);
        return;
    };
    let result = panic::catch_unwind(AssertUnwindSafe(|| {
        let envelope = smtp_receive(BufReader::new(read_half), &stream, config)?;
        if let Some(env) = envelope {
            stats.messages.fetch_add(1, Ordering::Relaxed);
            handler(env);
        }
        Ok::<_, io::Error>(())
    }));
    match result {
        Ok(Ok(())) => {}
        Ok(Err(e)) => {
            stats.io_errors.fetch_add(1, Ordering::Relaxed);
            debug!(?peer, error = %e, "smtp session ended with i/o error");
        }
        Err(_) => {
            stats.session_panics.fetch_add(1, Ordering::Relaxed);
            warn!(?peer, "smtp session panicked");
        }
    }
}
