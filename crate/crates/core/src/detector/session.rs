use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};

use super::protocol::{truncate, Message, MAX_LINE_BYTES};
use super::{Detector, Handshake, ProtocolError};
use crate::error::Result;
use crate::types::{DetectionVector, ImageTensor};

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub handshake_timeout: Duration,
    pub request_timeout: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self { handshake_timeout: Duration::from_secs(60), request_timeout: Duration::from_secs(120) }
    }
}

enum LineEvent {
    Line(String),
    TooLong,
    Eof,
    Failed(std::io::Error),
}

fn read_lines<R: Read>(stdout: R, tx: mpsc::Sender<LineEvent>) {
    let mut reader = BufReader::new(stdout);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let limit = MAX_LINE_BYTES as u64 + 1;
        let event = match reader.by_ref().take(limit).read_until(b'\n', &mut buf) {
            Ok(0) => LineEvent::Eof,
            Ok(_) if buf.last() != Some(&b'\n') && buf.len() > MAX_LINE_BYTES => LineEvent::TooLong,
            Ok(_) => {
                while matches!(buf.last(), Some(b'\n' | b'\r')) {
                    buf.pop();
                }
                if buf.is_empty() {
                    continue;
                }
                match String::from_utf8(std::mem::take(&mut buf)) {
                    Ok(s) => LineEvent::Line(s),
                    Err(e) => LineEvent::Failed(std::io::Error::new(std::io::ErrorKind::InvalidData, e)),
                }
            }
            Err(e) => LineEvent::Failed(e),
        };
        let stop = !matches!(event, LineEvent::Line(_));
        if tx.send(event).is_err() || stop {
            return;
        }
    }
}

/// A protocol session with one detector child process.
///
/// One request is in flight at a time. Any protocol violation marks the
/// session dead; later calls fail fast with [`ProtocolError::SessionDead`].
pub struct DetectorHandle {
    command: String,
    child: Child,
    stdin: Option<BufWriter<ChildStdin>>,
    lines: Receiver<LineEvent>,
    handshake: Handshake,
    next_id: u64,
    options: SessionOptions,
    dead: Option<String>,
}

impl std::fmt::Debug for DetectorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DetectorHandle")
            .field("command", &self.command)
            .field("pid", &self.child.id())
            .field("next_id", &self.next_id)
            .field("dead", &self.dead)
            .finish()
    }
}

impl DetectorHandle {
    /// Starts `argv` and waits for its handshake line. Child stderr is
    /// passed through.
    pub fn spawn(argv: &[String], options: SessionOptions) -> Result<Self, ProtocolError> {
        let (program, args) = argv.split_first().ok_or_else(|| ProtocolError::Spawn {
            command: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command line"),
        })?;
        let command = argv.join(" ");
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| ProtocolError::Spawn { command: command.clone(), source })?;
        let stdin = child.stdin.take().map(BufWriter::new);
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, lines) = mpsc::channel();
        thread::Builder::new().name("detector-stdout".into()).spawn(move || read_lines(stdout, tx))?;

        let mut handle = Self {
            command,
            child,
            stdin,
            lines,
            handshake: Handshake::new(vec!["?".into()], false, serde_json::Value::Null),
            next_id: 0,
            options,
            dead: None,
        };
        handle.handshake = handle.read_handshake()?;
        debug!("detector `{}` handshake: {:?}", handle.command, handle.handshake);
        Ok(handle)
    }

    /// `count` independent sessions of the same command.
    pub fn spawn_pool(argv: &[String], count: usize, options: SessionOptions) -> Result<Vec<Self>, ProtocolError> {
        (0..count.max(1)).map(|_| Self::spawn(argv, options)).collect()
    }

    fn read_handshake(&mut self) -> Result<Handshake, ProtocolError> {
        let timeout = self.options.handshake_timeout;
        let line = self.next_line(timeout).map_err(|e| match e {
            ProtocolError::Timeout { .. } => ProtocolError::HandshakeTimeout(timeout),
            other => other,
        })?;
        match Message::parse(&line)? {
            Message::Handshake(h) => {
                h.validate()?;
                Ok(h)
            }
            other => Err(ProtocolError::UnexpectedMessage { expected: "handshake", got: other.kind().into() }),
        }
    }

    fn next_line(&mut self, timeout: Duration) -> Result<String, ProtocolError> {
        match self.lines.recv_timeout(timeout) {
            Ok(LineEvent::Line(l)) => Ok(l),
            Ok(LineEvent::TooLong) => Err(ProtocolError::LineTooLong(MAX_LINE_BYTES)),
            Ok(LineEvent::Failed(e)) => Err(ProtocolError::Io(e)),
            Ok(LineEvent::Eof) | Err(RecvTimeoutError::Disconnected) => Err(ProtocolError::ChildExited(self.exit_status())),
            Err(RecvTimeoutError::Timeout) => Err(ProtocolError::Timeout { id: self.next_id, after: timeout }),
        }
    }

    fn exit_status(&mut self) -> String {
        // give a closing child a moment to be reaped
        let deadline = Instant::now() + Duration::from_millis(500);
        loop {
            match self.child.try_wait() {
                Ok(Some(status)) => return status.to_string(),
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                Ok(None) => return "stdout closed, process still running".into(),
                Err(e) => return e.to_string(),
            }
        }
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    pub fn is_dead(&self) -> bool {
        self.dead.is_some()
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    fn send(&mut self, line: &str) -> Result<(), ProtocolError> {
        let stdin = self.stdin.as_mut().ok_or_else(|| ProtocolError::SessionDead("stdin closed".into()))?;
        stdin.write_all(line.as_bytes())?;
        stdin.write_all(b"\n")?;
        stdin.flush()?;
        Ok(())
    }

    fn request(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>, ProtocolError> {
        let id = self.next_id;
        self.next_id += 1;
        let line = Message::infer(id, image)?.to_line();
        self.send(&line).map_err(|e| match e {
            ProtocolError::Io(io) if io.kind() == std::io::ErrorKind::BrokenPipe => ProtocolError::ChildExited(self.exit_status()),
            other => other,
        })?;
        let reply = self.next_line(self.options.request_timeout).map_err(|e| match e {
            ProtocolError::Timeout { after, .. } => ProtocolError::Timeout { id, after },
            other => other,
        })?;
        match Message::parse(&reply)? {
            Message::Detections { id: got, detections } => {
                if got != id {
                    return Err(ProtocolError::IdMismatch { expected: id, got });
                }
                let c = self.handshake.class_count();
                detections.into_iter().map(|d| d.into_vector(c)).collect()
            }
            Message::Error { id: got, message } => {
                if got.is_some_and(|g| g != id) {
                    return Err(ProtocolError::IdMismatch { expected: id, got: got.unwrap_or_default() });
                }
                Err(ProtocolError::Remote { id: got, message })
            }
            other => Err(ProtocolError::UnexpectedMessage {
                expected: "detections",
                got: format!("{} ({})", other.kind(), truncate(&reply, 120)),
            }),
        }
    }
}

impl Detector for DetectorHandle {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn infer(&mut self, image: &ImageTensor) -> Result<Vec<DetectionVector>> {
        if let Some(reason) = &self.dead {
            return Err(ProtocolError::SessionDead(reason.clone()).into());
        }
        match self.request(image) {
            Ok(d) => Ok(d),
            Err(e) => {
                // an adapter-reported failure leaves the stream in sync
                if !matches!(e, ProtocolError::Remote { .. }) {
                    self.dead = Some(e.to_string());
                }
                Err(e.into())
            }
        }
    }
}

impl Drop for DetectorHandle {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) => thread::sleep(Duration::from_millis(10)),
                Err(_) => break,
            }
        }
        warn!("detector `{}` did not exit after stdin closed; killing", self.command);
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}
