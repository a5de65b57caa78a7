use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use super::{BridgeMessage, PROTOCOL_VERSION};
use crate::bank::MemoryBank;
use crate::error::{Error, Result};
use crate::tracker::{Prediction, Tracker};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Where the tracker server lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Child process speaking the protocol on stdin/stdout.
    Command(Vec<String>),
    /// `host:port`, optionally written as `tcp://host:port`.
    Tcp(String),
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        let looks_like_addr = !s.contains(char::is_whitespace)
            && s.rsplit_once(':')
                .is_some_and(|(host, port)| !host.is_empty() && port.parse::<u16>().is_ok());
        if looks_like_addr {
            return Ok(Endpoint::Tcp(s.to_string()));
        }
        let argv: Vec<String> = s.split_whitespace().map(str::to_owned).collect();
        if argv.is_empty() {
            return Err(Error::config("empty bridge endpoint"));
        }
        Ok(Endpoint::Command(argv))
    }
}

/// Client side of the bridge: a [`Tracker`] answered by a remote server.
pub struct RemoteTracker {
    video_id: String,
    video_length: usize,
    capacity: usize,
    timeout: Duration,
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    closed: bool,
}

impl RemoteTracker {
    pub fn connect(
        endpoint: &Endpoint,
        video_id: &str,
        video_length: usize,
        capacity: usize,
        timeout: Duration,
    ) -> Result<Self> {
        match endpoint {
            Endpoint::Command(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                let mut tracker =
                    Self::over(stdout, stdin, video_id, video_length, capacity, timeout);
                tracker.child = Some(child);
                tracker.handshake()?;
                Ok(tracker)
            }
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()?
                    .next()
                    .ok_or_else(|| Error::config(format!("cannot resolve {addr}")))?;
                let stream = TcpStream::connect_timeout(&sock, timeout)?;
                stream.set_nodelay(true)?;
                let reader = stream.try_clone()?;
                let mut tracker =
                    Self::over(reader, stream, video_id, video_length, capacity, timeout);
                tracker.handshake()?;
                Ok(tracker)
            }
        }
    }

    /// Wraps an already-open byte stream pair and performs the handshake.
    pub fn from_streams<R, W>(
        reader: R,
        writer: W,
        video_id: &str,
        video_length: usize,
        capacity: usize,
        timeout: Duration,
    ) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let mut tracker = Self::over(reader, writer, video_id, video_length, capacity, timeout);
        tracker.handshake()?;
        Ok(tracker)
    }

    fn over<R, W>(
        reader: R,
        writer: W,
        video_id: &str,
        video_length: usize,
        capacity: usize,
        timeout: Duration,
    ) -> Self
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        // reader thread so responses can be awaited with a deadline
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            video_id: video_id.to_string(),
            video_length,
            capacity,
            timeout,
            writer: Box::new(writer),
            lines: rx,
            child: None,
            closed: false,
        }
    }

    fn handshake(&mut self) -> Result<()> {
        let init = BridgeMessage::Init {
            version: PROTOCOL_VERSION.into(),
            video_id: self.video_id.clone(),
            video_length: self.video_length,
            capacity: self.capacity,
        };
        match self.request(&init)? {
            BridgeMessage::PredictResult { .. } => Ok(()),
            other => Err(Error::Protocol(format!(
                "unexpected handshake reply {other:?}"
            ))),
        }
    }

    /// Sends one request and waits for its response line.
    pub fn request(&mut self, message: &BridgeMessage) -> Result<BridgeMessage> {
        writeln!(self.writer, "{}", message.to_line())?;
        self.writer.flush()?;
        let line = match self.lines.recv_timeout(self.timeout) {
            Ok(line) => line?,
            Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Protocol("server closed the connection".into()))
            }
        };
        let reply: BridgeMessage = serde_json::from_str(&line)
            .map_err(|e| Error::Protocol(format!("malformed response {line:?}: {e}")))?;
        match reply {
            BridgeMessage::Error { code, message } => Err(Error::Remote { code, message }),
            other => Ok(other),
        }
    }

    /// Sends `close` and waits for a child server to exit.
    pub fn close(mut self) -> Result<Option<std::process::ExitStatus>> {
        self.closed = true;
        self.request(&BridgeMessage::Close {})?;
        match self.child.take() {
            Some(mut child) => Ok(Some(child.wait()?)),
            None => Ok(None),
        }
    }
}

impl Tracker for RemoteTracker {
    fn video_id(&self) -> &str {
        &self.video_id
    }

    fn video_length(&self) -> usize {
        self.video_length
    }

    fn begin_episode(&mut self, capacity: usize) -> Result<()> {
        if capacity != self.capacity {
            return Err(Error::config(format!(
                "bridge initialized for capacity {}, environment uses {capacity}",
                self.capacity
            )));
        }
        self.request(&BridgeMessage::Reset {})?;
        Ok(())
    }

    fn predict(&mut self, t: usize, bank: &MemoryBank) -> Result<Prediction> {
        let reply = self.request(&BridgeMessage::Predict {
            t,
            bank: bank.frames(),
        })?;
        match reply {
            BridgeMessage::PredictResult { q, predicted_empty } => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::Protocol(format!(
                        "quality {q} outside [0, 1] at t={t}"
                    )));
                }
                Ok(Prediction::inferred(q, predicted_empty))
            }
            other => Err(Error::Protocol(format!(
                "expected predict_result, got {other:?}"
            ))),
        }
    }

    fn supports_counterfactual(&self) -> bool {
        false
    }
}

impl Drop for RemoteTracker {
    fn drop(&mut self) {
        if !self.closed {
            let _ = writeln!(self.writer, "{}", BridgeMessage::Close {}.to_line());
            let _ = self.writer.flush();
        }
        if let Some(mut child) = self.child.take() {
            let _ = self.lines.recv_timeout(Duration::from_millis(200));
            if !matches!(child.try_wait(), Ok(Some(_))) {
                let _ = child.kill();
            }
            let _ = child.wait();
        }
    }
}
