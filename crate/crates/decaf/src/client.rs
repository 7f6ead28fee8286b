//! Segmenter client speaking the NDJSON protocol to a child process.

use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use decaf_core::segmenter::{check_prompt, FrameMask, Point, Segmenter, SegmenterError, VideoDims};

use crate::protocol::{points_to_wire, to_line, Request, Response, PROTOCOL_VERSION};
use crate::server::OracleServer;

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(30);
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(600);

/// A line-oriented duplex channel to a segmenter.
pub trait Transport {
    fn send(&mut self, line: &str) -> Result<(), SegmenterError>;

    /// Next line, without its newline.
    fn recv(&mut self, timeout: Duration) -> Result<String, SegmenterError>;
}

/// Runs `command` through `sh -c` and talks to it over stdin/stdout.
pub struct ChildTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl ChildTransport {
    pub fn spawn(command: &str) -> Result<Self, SegmenterError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SegmenterError::Transport(format!("cannot launch {command:?}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self { child, stdin, lines })
    }
}

impl Transport for ChildTransport {
    fn send(&mut self, line: &str) -> Result<(), SegmenterError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| SegmenterError::Transport("segmenter input closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| SegmenterError::Transport(format!("write to segmenter failed: {e}")))
    }

    fn recv(&mut self, timeout: Duration) -> Result<String, SegmenterError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(SegmenterError::Transport(format!("read from segmenter failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(SegmenterError::Timeout),
            Err(RecvTimeoutError::Disconnected) => {
                let status = self.child.try_wait().ok().flatten();
                Err(SegmenterError::Transport(match status {
                    Some(s) => format!("segmenter exited ({s})"),
                    None => "segmenter closed its output".into(),
                }))
            }
        }
    }
}

impl Drop for ChildTransport {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Oracle server driven in-process through its wire format.
#[derive(Debug, Default)]
pub struct InProcessTransport {
    server: OracleServer,
    pending: VecDeque<String>,
    /// Every line sent and received, prefixed with `> ` or `< `.
    pub transcript: Vec<String>,
    /// Requests sent while earlier replies were still unread.
    pub overlapping_requests: usize,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Transport for InProcessTransport {
    fn send(&mut self, line: &str) -> Result<(), SegmenterError> {
        if !self.pending.is_empty() {
            self.overlapping_requests += 1;
        }
        self.transcript.push(format!("> {line}"));
        for r in self.server.handle_line(line) {
            self.pending.push_back(to_line(&r));
        }
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<String, SegmenterError> {
        let line = self
            .pending
            .pop_front()
            .ok_or_else(|| SegmenterError::Transport("segmenter closed its output".into()))?;
        self.transcript.push(format!("< {line}"));
        Ok(line)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Idle,
    Prompted,
    Propagating,
    /// The stream is out of sync after a timeout or transport failure.
    Broken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoMeta {
    /// Frames locator passed to the segmenter.
    pub frames: String,
    pub dims: VideoDims,
}

/// One segmenter session. Requests are strictly sequential.
pub struct SegmenterClient<T: Transport> {
    transport: T,
    dims: VideoDims,
    state: SessionState,
    timeout: Duration,
}

impl<T: Transport> SegmenterClient<T> {
    /// Sends `init` and waits for `ready`.
    pub fn start(transport: T, meta: &VideoMeta, handshake: Duration) -> Result<Self, SegmenterError> {
        let mut client = Self {
            transport,
            dims: meta.dims,
            state: SessionState::Idle,
            timeout: REQUEST_TIMEOUT,
        };
        client.send(&Request::Init {
            format_version: PROTOCOL_VERSION,
            frames: meta.frames.clone(),
            num_frames: meta.dims.frames,
            height: meta.dims.height,
            width: meta.dims.width,
        })?;
        match client.recv(handshake)? {
            Response::Ready {
                format_version,
                num_frames,
                height,
                width,
            } => {
                if format_version != PROTOCOL_VERSION {
                    return Err(SegmenterError::Remote {
                        code: crate::protocol::codes::UNSUPPORTED_VERSION.into(),
                        message: format!("segmenter speaks format_version {format_version}"),
                    });
                }
                let echoed = VideoDims {
                    frames: num_frames,
                    height,
                    width,
                };
                if echoed != meta.dims {
                    return Err(SegmenterError::Protocol(format!(
                        "ready echoed {num_frames}x{height}x{width}, expected {}x{}x{}",
                        meta.dims.frames, meta.dims.height, meta.dims.width
                    )));
                }
                Ok(client)
            }
            other => Err(unexpected("ready", &other)),
        }
    }

    pub fn with_request_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn into_transport(self) -> T {
        self.transport
    }

    fn send(&mut self, req: &Request) -> Result<(), SegmenterError> {
        self.transport.send(&to_line(req)).inspect_err(|_| {
            self.state = SessionState::Broken;
        })
    }

    fn recv(&mut self, timeout: Duration) -> Result<Response, SegmenterError> {
        let line = self.transport.recv(timeout).inspect_err(|_| {
            self.state = SessionState::Broken;
        })?;
        serde_json::from_str(&line).map_err(|e| {
            self.state = SessionState::Broken;
            SegmenterError::Protocol(format!("unparseable reply {line:?}: {e}"))
        })
    }

    fn usable(&self) -> Result<(), SegmenterError> {
        if self.state == SessionState::Broken {
            return Err(SegmenterError::State("session is broken".into()));
        }
        Ok(())
    }

    fn frame_mask(&self, frame: usize, rle: &crate::protocol::RleJson, confidence: f64) -> Result<FrameMask, SegmenterError> {
        let mask = rle
            .decode()
            .map_err(|e| SegmenterError::Protocol(format!("bad mask for frame {frame}: {e}")))?;
        if mask.dims() != (self.dims.height, self.dims.width) {
            return Err(SegmenterError::Protocol(format!(
                "mask for frame {frame} is {}x{}, expected {}x{}",
                mask.height(),
                mask.width(),
                self.dims.height,
                self.dims.width
            )));
        }
        if !confidence.is_finite() {
            return Err(SegmenterError::Protocol(format!(
                "non-finite confidence for frame {frame}"
            )));
        }
        Ok(FrameMask {
            frame,
            mask,
            confidence,
        })
    }
}

fn unexpected(wanted: &str, got: &Response) -> SegmenterError {
    match got {
        Response::Error { code, message } => SegmenterError::Remote {
            code: code.clone(),
            message: message.clone(),
        },
        other => SegmenterError::Protocol(format!("expected {wanted}, got {}", to_line(other))),
    }
}

impl<T: Transport> Segmenter for SegmenterClient<T> {
    fn dims(&self) -> VideoDims {
        self.dims
    }

    fn prompt(&mut self, frame: usize, points: &[Point]) -> Result<FrameMask, SegmenterError> {
        self.usable()?;
        check_prompt(self.dims, frame, points)?;
        self.send(&Request::Prompt {
            frame,
            points: points_to_wire(points),
            labels: None,
        })?;
        match self.recv(self.timeout)? {
            Response::Mask {
                frame: f,
                rle,
                confidence,
            } if f == frame => {
                let fm = self.frame_mask(f, &rle, confidence)?;
                self.state = SessionState::Prompted;
                Ok(fm)
            }
            Response::Error { code, message } => Err(SegmenterError::Remote { code, message }),
            other => {
                self.state = SessionState::Broken;
                Err(unexpected(&format!("mask for frame {frame}"), &other))
            }
        }
    }

    fn propagate(&mut self, frames: &[usize]) -> Result<Vec<FrameMask>, SegmenterError> {
        self.usable()?;
        if self.state != SessionState::Prompted {
            return Err(SegmenterError::State("propagate before prompt".into()));
        }
        self.send(&Request::Propagate {
            frames: frames.to_vec(),
        })?;
        self.state = SessionState::Propagating;
        let mut out = Vec::with_capacity(frames.len());
        let result = loop {
            match self.recv(self.timeout) {
                Ok(Response::Mask {
                    frame,
                    rle,
                    confidence,
                }) => {
                    if out.len() >= frames.len() || frames[out.len()] != frame {
                        break Err(SegmenterError::Protocol(format!(
                            "unexpected mask for frame {frame} during propagation"
                        )));
                    }
                    match self.frame_mask(frame, &rle, confidence) {
                        Ok(fm) => out.push(fm),
                        Err(e) => break Err(e),
                    }
                }
                Ok(Response::Done) if out.len() == frames.len() => break Ok(()),
                Ok(Response::Done) => {
                    break Err(SegmenterError::Protocol(format!(
                        "propagation ended after {} of {} frames",
                        out.len(),
                        frames.len()
                    )))
                }
                Ok(Response::Error { code, message }) => break Err(SegmenterError::Remote { code, message }),
                Ok(other) => break Err(unexpected("mask or done", &other)),
                Err(e) => break Err(e),
            }
        };
        match result {
            Ok(()) => {
                self.state = SessionState::Idle;
                Ok(out)
            }
            Err(e) => {
                // partial results are dropped; a remote error leaves the stream in sync
                if self.state != SessionState::Broken {
                    self.state = if matches!(e, SegmenterError::Remote { .. }) {
                        SessionState::Idle
                    } else {
                        SessionState::Broken
                    };
                }
                Err(e)
            }
        }
    }
}
