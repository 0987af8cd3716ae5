//! Evaluator backed by an out-of-process model speaking NDJSON.
//!
//! One JSON object per line in each direction. The connection opens with
//! `{"id":0,"op":"handshake","version":1}` and expects
//! `{"id":0,"version":1,"classes":K}` (optionally `"capabilities":["score_batch"]`).
//! Score requests carry the image as row-major floats; replies are matched
//! to requests by id, so an adapter may answer pipelined requests in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{check_class, EvalError, GameEvaluator, Result};
use crate::imaging::{AmplitudeImage, RegionLabelMap};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalOptions {
    /// Longest wait for any reply group.
    pub timeout: Duration,
    /// Use `score_batch` when the adapter advertises it.
    pub use_batch: bool,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        ExternalOptions { timeout: Duration::from_secs(30), use_batch: true }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    next_id: u64,
    broken: Option<String>,
}

pub struct ExternalEvaluator {
    label: String,
    version: u64,
    classes: usize,
    batch: bool,
    opts: ExternalOptions,
    conn: Mutex<Connection>,
    child: Mutex<Option<Child>>,
}

impl std::fmt::Debug for ExternalEvaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEvaluator")
            .field("label", &self.label)
            .field("classes", &self.classes)
            .field("batch", &self.batch)
            .finish()
    }
}

fn spawn_line_reader(reader: impl Read + Send + 'static) -> Receiver<std::io::Result<String>> {
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(reader).lines() {
            let stop = line.is_err();
            if tx.send(line).is_err() || stop {
                break;
            }
        }
    });
    rx
}

impl Connection {
    fn send(&mut self, msg: &Value) -> Result<()> {
        let mut line = serde_json::to_vec(msg).expect("requests serialize");
        line.push(b'\n');
        self.writer.write_all(&line)?;
        Ok(())
    }

    fn recv(&mut self, deadline: Instant, timeout: Duration) -> Result<Value> {
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(left) {
                Ok(line) => line?,
                Err(RecvTimeoutError::Timeout) => return Err(EvalError::Timeout(timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(EvalError::Closed),
            };
            if line.trim().is_empty() {
                continue;
            }
            return serde_json::from_str(&line).map_err(|e| EvalError::Malformed(format!("{e}: {line}")));
        }
    }

    /// Sends every request, then waits for all replies; results follow request order.
    fn exchange(&mut self, requests: Vec<Value>, timeout: Duration) -> Result<Vec<Value>> {
        if let Some(why) = &self.broken {
            return Err(EvalError::Malformed(format!("connection unusable after earlier failure: {why}")));
        }
        let out = self.exchange_inner(requests, timeout);
        if let Err(e) = &out {
            self.broken = Some(e.to_string());
        }
        out
    }

    fn exchange_inner(&mut self, requests: Vec<Value>, timeout: Duration) -> Result<Vec<Value>> {
        let mut slots: HashMap<u64, usize> = HashMap::with_capacity(requests.len());
        let n = requests.len();
        for (k, mut req) in requests.into_iter().enumerate() {
            let id = self.next_id;
            self.next_id += 1;
            req["id"] = json!(id);
            self.send(&req)?;
            slots.insert(id, k);
        }
        self.writer.flush()?;

        let deadline = Instant::now() + timeout;
        let mut replies: Vec<Option<Value>> = vec![None; n];
        let mut pending = n;
        while pending > 0 {
            let reply = self.recv(deadline, timeout)?;
            let id = reply_id(&reply)?;
            let k = slots.remove(&id).ok_or(EvalError::IdMismatch { got: id })?;
            replies[k] = Some(reply);
            pending -= 1;
        }
        Ok(replies.into_iter().map(|r| r.expect("every slot filled")).collect())
    }
}

fn reply_id(reply: &Value) -> Result<u64> {
    reply
        .get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| EvalError::Malformed(format!("reply without an integer id: {reply}")))
}

fn remote_error(reply: &Value) -> Option<EvalError> {
    reply.get("error").map(|e| EvalError::Remote(e.as_str().map_or_else(|| e.to_string(), str::to_owned)))
}

fn parse_scores(v: Option<&Value>, classes: usize) -> Result<Vec<f64>> {
    let arr = v
        .and_then(Value::as_array)
        .ok_or_else(|| EvalError::Malformed("reply has no scores array".into()))?;
    if arr.len() != classes {
        return Err(EvalError::Arity { expected: classes, got: arr.len() });
    }
    arr.iter()
        .map(|s| match s.as_f64() {
            Some(x) if x.is_finite() => Ok(x),
            Some(_) | None if s.is_null() || s.is_number() => Err(EvalError::NonFinite),
            _ => Err(EvalError::Malformed(format!("score {s} is not a number"))),
        })
        .collect()
}

impl ExternalEvaluator {
    /// Handshakes over an arbitrary byte stream pair.
    pub fn from_streams(
        reader: impl Read + Send + 'static,
        writer: impl Write + Send + 'static,
        label: impl Into<String>,
        opts: ExternalOptions,
    ) -> Result<Self> {
        let mut conn = Connection {
            writer: Box::new(writer),
            lines: spawn_line_reader(reader),
            next_id: 1,
            broken: None,
        };
        conn.send(&json!({"id": 0, "op": "handshake", "version": PROTOCOL_VERSION}))?;
        conn.writer.flush()?;
        let reply = conn.recv(Instant::now() + opts.timeout, opts.timeout)?;
        if let Some(e) = remote_error(&reply) {
            return Err(e);
        }
        let id = reply_id(&reply)?;
        if id != 0 {
            return Err(EvalError::IdMismatch { got: id });
        }
        let version = reply
            .get("version")
            .and_then(Value::as_u64)
            .ok_or_else(|| EvalError::Malformed(format!("handshake reply without version: {reply}")))?;
        if version != PROTOCOL_VERSION {
            return Err(EvalError::VersionMismatch { expected: PROTOCOL_VERSION, got: version });
        }
        let classes = reply
            .get("classes")
            .and_then(Value::as_u64)
            .filter(|&k| k >= 2)
            .ok_or_else(|| EvalError::Malformed(format!("handshake needs classes >= 2: {reply}")))? as usize;
        let batch = reply
            .get("capabilities")
            .and_then(Value::as_array)
            .is_some_and(|caps| caps.iter().any(|c| c == "score_batch"));
        Ok(ExternalEvaluator {
            label: label.into(),
            version,
            classes,
            batch,
            opts,
            conn: Mutex::new(conn),
            child: Mutex::new(None),
        })
    }

    /// Starts `command[0]` with `command[1..]` and talks over its stdin/stdout.
    pub fn spawn(command: &[String], opts: ExternalOptions) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| EvalError::Malformed("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        match Self::from_streams(stdout, stdin, format!("external:{}", command.join(" ")), opts) {
            Ok(eval) => {
                *eval.child.lock().expect("child lock") = Some(child);
                Ok(eval)
            }
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn connect_tcp(addr: impl ToSocketAddrs + std::fmt::Display, opts: ExternalOptions) -> Result<Self> {
        let label = format!("tcp:{addr}");
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        Self::from_streams(reader, stream, label, opts)
    }

    pub fn protocol_version(&self) -> u64 {
        self.version
    }

    pub fn supports_batch(&self) -> bool {
        self.batch
    }

    fn score_request(input: &AmplitudeImage, class: usize) -> Value {
        json!({"op": "score", "h": input.height(), "w": input.width(), "data": input.data(), "class": class})
    }

    fn exchange(&self, requests: Vec<Value>) -> Result<Vec<Value>> {
        self.conn.lock().expect("connection lock").exchange(requests, self.opts.timeout)
    }

    fn scores_for_class(&self, input: &AmplitudeImage, class: usize) -> Result<Vec<f64>> {
        let reply = self.exchange(vec![Self::score_request(input, class)])?.pop().expect("one reply");
        if let Some(e) = remote_error(&reply) {
            return Err(e);
        }
        parse_scores(reply.get("scores"), self.classes)
    }
}

impl GameEvaluator for ExternalEvaluator {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn class_count(&self) -> usize {
        self.classes
    }

    fn scores(&self, input: &AmplitudeImage, _labels: &RegionLabelMap) -> Result<Vec<f64>> {
        self.scores_for_class(input, 0)
    }

    fn score(&self, input: &AmplitudeImage, _labels: &RegionLabelMap, class: usize) -> Result<f64> {
        check_class(class, self.classes)?;
        Ok(self.scores_for_class(input, class)?[class])
    }

    fn scores_batch(&self, inputs: &[AmplitudeImage], _labels: &RegionLabelMap, class: usize) -> Result<Vec<Vec<f64>>> {
        check_class(class, self.classes)?;
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        if self.batch && self.opts.use_batch {
            let (h, w) = inputs[0].shape();
            if inputs.iter().all(|x| x.shape() == (h, w)) {
                let images: Vec<&[f64]> = inputs.iter().map(AmplitudeImage::data).collect();
                let req = json!({"op": "score_batch", "h": h, "w": w, "images": images, "class": class});
                let reply = self.exchange(vec![req])?.pop().expect("one reply");
                if let Some(e) = remote_error(&reply) {
                    return Err(e);
                }
                let rows = reply
                    .get("scores")
                    .and_then(Value::as_array)
                    .ok_or_else(|| EvalError::Malformed("batch reply has no scores array".into()))?;
                if rows.len() != inputs.len() {
                    return Err(EvalError::Arity { expected: inputs.len(), got: rows.len() });
                }
                return rows
                    .iter()
                    .enumerate()
                    .map(|(index, row)| {
                        parse_scores(Some(row), self.classes).map_err(|e| EvalError::Item { index, source: Box::new(e) })
                    })
                    .collect();
            }
        }
        let requests = inputs.iter().map(|x| Self::score_request(x, class)).collect();
        self.exchange(requests)?
            .iter()
            .enumerate()
            .map(|(index, reply)| {
                let item = |e| EvalError::Item { index, source: Box::new(e) };
                if let Some(e) = remote_error(reply) {
                    return Err(item(e));
                }
                parse_scores(reply.get("scores"), self.classes).map_err(item)
            })
            .collect()
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Ok(conn) = self.conn.get_mut() {
            // closing the adapter's stdin asks it to exit
            conn.writer = Box::new(std::io::sink());
        }
        if let Some(mut child) = self.child.get_mut().ok().and_then(Option::take) {
            for _ in 0..50 {
                if let Ok(Some(_)) = child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}
