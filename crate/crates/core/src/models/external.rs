//! Scoring over newline-delimited JSON.
//!
//! ```text
//! client -> {"type":"hello","version":1}
//! server -> {"type":"ready","n_classes":K,"m":M,"t":T}
//! client -> {"type":"score","id":1,"batch":B,"x":[B*M*T floats, sample-major]}
//! server -> {"type":"logits","id":1,"y":[B*K floats]}
//!         | {"type":"error","id":1,"msg":"..."}
//! ```
//!
//! One message per line; request ids are strictly increasing per connection.
//! The transport is either a child process (stdin/stdout) or a TCP socket.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::{score_batch, Scorer};
use crate::error::{Error, Result};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello { version: u32 },
    Ready { n_classes: usize, m: usize, t: usize },
    Score { id: u64, batch: usize, x: Vec<f64> },
    Logits { id: u64, y: Vec<f64> },
    Error { id: u64, msg: String },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Child process speaking the protocol on stdin/stdout.
    Command { program: String, args: Vec<String> },
    /// `host:port`.
    Tcp(String),
}

impl std::str::FromStr for Endpoint {
    type Err = Error;

    /// `external:<program> [args...]` or `tcp:<host>:<port>`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let cmd = s
            .strip_prefix("external:")
            .ok_or_else(|| Error::config("scorer", format!("{s:?} is neither external:<cmd> nor tcp:<addr>")))?;
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::config("scorer", "empty external command"))?;
        Ok(Endpoint::Command {
            program,
            args: parts.collect(),
        })
    }
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Endpoint::Command { program, args } if args.is_empty() => write!(f, "external:{program}"),
            Endpoint::Command { program, args } => write!(f, "external:{program} {}", args.join(" ")),
            Endpoint::Tcp(addr) => write!(f, "tcp:{addr}"),
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    child: Option<Child>,
    broken: Option<String>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self> {
        let (reader, writer, child): (Box<dyn std::io::Read + Send>, Box<dyn Write + Send>, Option<Child>) =
            match endpoint {
                Endpoint::Command { program, args } => {
                    let mut child = Command::new(program)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(|e| Error::HandshakeFailed(format!("cannot launch {program}: {e}")))?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
                Endpoint::Tcp(addr) => {
                    let stream = TcpStream::connect(addr)
                        .map_err(|e| Error::HandshakeFailed(format!("cannot connect to {addr}: {e}")))?;
                    let read_half = stream
                        .try_clone()
                        .map_err(|e| Error::HandshakeFailed(e.to_string()))?;
                    (Box::new(read_half), Box::new(stream), None)
                }
            };
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Connection {
            writer,
            lines: rx,
            next_id: 1,
            child,
            broken: None,
        })
    }

    fn send(&mut self, msg: &Message) -> Result<()> {
        let line = msg.to_line();
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::ExternalScorerFailure(format!("write failed: {e}")))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Message> {
        let line = match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => return Err(Error::ExternalScorerFailure(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::ExternalScorerFailure("scorer closed the connection".into()))
            }
        };
        serde_json::from_str(&line).map_err(|e| Error::ProtocolViolation(format!("{e}: {line:.200}")))
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// [`Scorer`] backed by an external process or socket. Requests are
/// serialized over a single connection.
pub struct ExternalScorer {
    endpoint: Endpoint,
    conn: Mutex<Connection>,
    n_classes: usize,
    shape: (usize, usize),
    timeout: Duration,
}

impl ExternalScorer {
    /// Connect and handshake. If `expected` is given as `(K, M, T)` the
    /// advertised metadata must match it.
    pub fn connect(endpoint: Endpoint, expected: Option<(usize, usize, usize)>, timeout: Duration) -> Result<Self> {
        let mut conn = Connection::open(&endpoint)?;
        conn.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })
        .map_err(|e| Error::HandshakeFailed(e.to_string()))?;
        let (n_classes, m, t) = match conn.recv(timeout) {
            Ok(Message::Ready { n_classes, m, t }) => (n_classes, m, t),
            Ok(Message::Error { msg, .. }) => return Err(Error::HandshakeFailed(msg)),
            Ok(other) => return Err(Error::HandshakeFailed(format!("expected ready, got {other:?}"))),
            Err(e) => return Err(Error::HandshakeFailed(e.to_string())),
        };
        if n_classes == 0 || m == 0 || t == 0 {
            return Err(Error::HandshakeFailed(format!(
                "degenerate metadata K={n_classes} M={m} T={t}"
            )));
        }
        if let Some(exp) = expected {
            if exp != (n_classes, m, t) {
                return Err(Error::HandshakeFailed(format!(
                    "scorer advertises (K, M, T) = {:?}, dataset needs {exp:?}",
                    (n_classes, m, t)
                )));
            }
        }
        Ok(ExternalScorer {
            endpoint,
            conn: Mutex::new(conn),
            n_classes,
            shape: (m, t),
            timeout,
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }
}

impl Scorer for ExternalScorer {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn id(&self) -> String {
        self.endpoint.to_string()
    }

    fn max_concurrency(&self) -> Option<usize> {
        Some(1)
    }

    fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(why) = &conn.broken {
            return Err(Error::ExternalScorerFailure(format!("connection unusable: {why}")));
        }
        let b = inputs.dim().0;
        let id = conn.next_id;
        conn.next_id += 1;
        let request = Message::Score {
            id,
            batch: b,
            x: inputs.iter().copied().collect(),
        };
        let result = conn.send(&request).and_then(|_| match conn.recv(self.timeout)? {
            Message::Logits { id: rid, y } if rid == id => {
                if y.len() != b * self.n_classes {
                    return Err(Error::ProtocolViolation(format!(
                        "response {id} carries {} values, expected {}",
                        y.len(),
                        b * self.n_classes
                    )));
                }
                Ok(Array2::from_shape_vec((b, self.n_classes), y).expect("length checked"))
            }
            Message::Error { msg, .. } => Err(Error::ExternalScorerFailure(msg)),
            other => Err(Error::ProtocolViolation(format!("unexpected reply to request {id}: {other:?}"))),
        });
        if let Err(e) = &result {
            // a timed-out or garbled exchange leaves the stream out of sync
            if !matches!(e, Error::ExternalScorerFailure(_)) || conn.child.is_some() {
                conn.broken = Some(e.to_string());
            }
        }
        result
    }
}

/// Serve any [`Scorer`] over the protocol until the input closes.
///
/// Malformed lines and failed requests produce error frames; the connection
/// stays open.
pub fn serve<R: BufRead, W: Write>(scorer: &dyn Scorer, input: R, mut output: W) -> std::io::Result<()> {
    serve_limited(scorer, input, &mut output, None)
}

/// Like [`serve`], but returns (closing the connection) after answering
/// `max_requests` score requests.
pub fn serve_limited<R: BufRead, W: Write>(
    scorer: &dyn Scorer,
    input: R,
    mut output: W,
    max_requests: Option<usize>,
) -> std::io::Result<()> {
    let (m, t) = scorer.input_shape();
    let k = scorer.n_classes();
    let mut last_id = 0u64;
    let mut answered = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Message>(&line) {
            Ok(Message::Hello { version }) if version == PROTOCOL_VERSION => Message::Ready { n_classes: k, m, t },
            Ok(Message::Hello { version }) => Message::Error {
                id: 0,
                msg: format!("unsupported protocol version {version}"),
            },
            Ok(Message::Score { id, batch, x }) => {
                if max_requests.is_some_and(|n| answered >= n) {
                    return Ok(());
                }
                answered += 1;
                if id <= last_id {
                    Message::Error {
                        id,
                        msg: format!("id {id} not greater than previous {last_id}"),
                    }
                } else {
                    last_id = id;
                    match ndarray::Array3::from_shape_vec((batch, m, t), x) {
                        Err(e) => Message::Error {
                            id,
                            msg: format!("bad batch shape: {e}"),
                        },
                        Ok(arr) => match score_batch(scorer, arr.view()) {
                            Ok(y) => Message::Logits {
                                id,
                                y: y.iter().copied().collect(),
                            },
                            Err(e) => Message::Error { id, msg: e.to_string() },
                        },
                    }
                }
            }
            Ok(other) => Message::Error {
                id: 0,
                msg: format!("unexpected message {other:?}"),
            },
            Err(e) => Message::Error {
                id: 0,
                msg: format!("malformed request: {e}"),
            },
        };
        output.write_all(reply.to_line().as_bytes())?;
        output.flush()?;
    }
    Ok(())
}

/// Reference scorer for protocol tests: logit `k` is the mean of channel
/// `k mod M`.
pub struct ChannelMeanScorer {
    pub n_classes: usize,
    pub shape: (usize, usize),
}

impl Scorer for ChannelMeanScorer {
    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn input_shape(&self) -> (usize, usize) {
        self.shape
    }

    fn id(&self) -> String {
        "channel-mean".into()
    }

    fn score(&self, inputs: ArrayView3<'_, f64>) -> Result<Array2<f64>> {
        let b = inputs.dim().0;
        let means = inputs.mean_axis(Axis(2)).expect("T > 0");
        let m = self.shape.0;
        Ok(Array2::from_shape_fn((b, self.n_classes), |(i, k)| means[[i, k % m]]))
    }
}
