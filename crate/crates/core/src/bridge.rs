//! The controller as a TCP service speaking newline-delimited JSON.
//!
//! Each connection gets its own controller. The server greets with a hello
//! line, then answers every observation line with exactly one reply line: a
//! command, an `{"error": ...}` for a line it cannot parse, or a
//! `{"reset": ...}` when the step index fails to increase (the session state
//! is then discarded). See `PROTOCOL.md` at the repository root.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, ControllerState, Observation, Phase};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec2};
use crate::rng::{stream, Stream};
use crate::sim::{CommandSource, StepReport};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_PORT: u16 = 7025;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_millis(200);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FishFrame {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotFrame {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationFrame {
    pub step: u64,
    pub time_s: f64,
    pub fish: FishFrame,
    pub robot: RobotFrame,
}

impl ObservationFrame {
    pub fn from_observation(step: u64, time_s: f64, obs: &Observation) -> Self {
        Self {
            step,
            time_s,
            fish: FishFrame {
                x: obs.fish.x,
                y: obs.fish.y,
                heading: obs.fish_heading,
            },
            robot: RobotFrame {
                x: obs.robot.position.x,
                y: obs.robot.position.y,
                heading: obs.robot.heading,
            },
        }
    }

    pub fn observation(&self) -> Result<Observation> {
        let fish = Vec2::try_new(self.fish.x, self.fish.y)?;
        let robot = Vec2::try_new(self.robot.x, self.robot.y)?;
        if !self.robot.heading.is_finite() {
            return Err(Error::InvalidInput("robot heading is not finite".into()));
        }
        Ok(Observation {
            robot: Pose::new(robot, self.robot.heading),
            fish,
            fish_heading: self.fish.heading,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetFrame {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandFrame {
    pub step: u64,
    pub target: TargetFrame,
    pub speed_factor: f64,
    pub phase: Phase,
    pub carefulness: f64,
    pub approach_idx: usize,
    pub avoid_score: f64,
    pub follow_score: f64,
}

impl CommandFrame {
    pub fn report(&self) -> StepReport {
        StepReport {
            command: crate::controller::MotionCommand {
                target: Vec2::new(self.target.x, self.target.y),
                speed_factor: self.speed_factor,
            },
            phase: self.phase,
            carefulness: self.carefulness,
            avoid_score: self.avoid_score,
            follow_score: self.follow_score,
            approach_idx: self.approach_idx,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub hello: String,
    pub protocol: u32,
    pub mode: String,
    pub param_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResetInfo {
    pub step: u64,
    pub reason: String,
}

/// Any line the server can send after the hello.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Command(CommandFrame),
    Error { error: String },
    Reset { reset: ResetInfo },
}

/// Controller settings shared by every session of a server.
#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub controller: ControllerConfig,
    /// Seed of each session's controller stream.
    pub seed: u64,
}

/// One connection's controller.
pub struct Session {
    config: ServerConfig,
    state: ControllerState,
    last_step: Option<u64>,
}

impl Session {
    pub fn new(config: ServerConfig) -> Self {
        let state = ControllerState::new(&config.controller, stream(config.seed, Stream::Controller));
        Self {
            config,
            state,
            last_step: None,
        }
    }

    fn reset(&mut self) {
        self.state = ControllerState::new(&self.config.controller, stream(self.config.seed, Stream::Controller));
        self.last_step = None;
    }

    /// Reply to one request line.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        let frame: ObservationFrame = match serde_json::from_str(line) {
            Ok(f) => f,
            Err(e) => {
                return Reply::Error {
                    error: format!("malformed frame: {e}"),
                }
            }
        };
        let obs = match frame.observation() {
            Ok(o) => o,
            Err(e) => return Reply::Error { error: e.to_string() },
        };
        if let Some(last) = self.last_step {
            if frame.step <= last {
                self.reset();
                return Reply::Reset {
                    reset: ResetInfo {
                        step: frame.step,
                        reason: format!("step {} after {last}; session state discarded", frame.step),
                    },
                };
            }
        }
        self.last_step = Some(frame.step);
        let cmd = self.state.step(&obs, &self.config.controller);
        Reply::Command(CommandFrame {
            step: frame.step,
            target: TargetFrame {
                x: cmd.target.x,
                y: cmd.target.y,
            },
            speed_factor: cmd.speed_factor,
            phase: self.state.phase,
            carefulness: self.state.carefulness,
            approach_idx: self.state.approach_index,
            avoid_score: self.state.scores.avoidance,
            follow_score: self.state.scores.follow,
        })
    }
}

fn hello(config: &ServerConfig) -> Hello {
    Hello {
        hello: "leadsim-bridge".into(),
        protocol: PROTOCOL_VERSION,
        mode: config.controller.mode.label().into(),
        param_hash: config.controller.params.hash(),
    }
}

fn serve_connection(stream: TcpStream, config: ServerConfig) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut line = serde_json::to_string(&hello(&config))?;
    line.push('\n');
    writer.write_all(line.as_bytes())?;

    let mut session = Session::new(config);
    let mut reader = BufReader::new(stream);
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            return Ok(());
        }
        let request = buf.trim_end_matches(['\n', '\r']);
        if request.is_empty() {
            continue;
        }
        let mut reply = serde_json::to_string(&session.handle_line(request))?;
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
    }
}

/// A running server; dropping the handle does not stop it, call [`ServerHandle::shutdown`].
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves sessions on a background thread.
pub fn spawn_server(addr: impl ToSocketAddrs, config: ServerConfig) -> Result<ServerHandle> {
    config.controller.validate()?;
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    info!("bridge listening on {local}");
    let thread = thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    debug!("session from {peer}");
                    let cfg = config.clone();
                    thread::spawn(move || {
                        if stream.set_nonblocking(false).is_err() {
                            return;
                        }
                        if let Err(e) = serve_connection(stream, cfg) {
                            warn!("session {peer} ended: {e}");
                        }
                    });
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
                Err(e) => {
                    warn!("accept failed: {e}");
                    thread::sleep(Duration::from_millis(50));
                }
            }
        }
    });
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

/// Synchronous client for one session.
pub struct BridgeClient {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    timeout: Duration,
    pub hello: Hello,
}

impl BridgeClient {
    pub fn connect(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let line = read_reply_line(&mut reader, timeout)?;
        let hello: Hello =
            serde_json::from_str(&line).map_err(|e| Error::Protocol(format!("bad hello {line:?}: {e}")))?;
        if hello.protocol != PROTOCOL_VERSION {
            return Err(Error::Protocol(format!("unsupported protocol {}", hello.protocol)));
        }
        Ok(Self {
            writer,
            reader,
            timeout,
            hello,
        })
    }

    /// Sends one raw line and returns the server's reply.
    pub fn request_raw(&mut self, line: &str) -> Result<Reply> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        let reply = read_reply_line(&mut self.reader, self.timeout)?;
        serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("bad reply {reply:?}: {e}")))
    }

    /// Writes many frames before reading any reply.
    pub fn burst(&mut self, frames: &[ObservationFrame]) -> Result<Vec<Reply>> {
        let mut payload = String::new();
        for f in frames {
            payload.push_str(&serde_json::to_string(f)?);
            payload.push('\n');
        }
        self.writer.write_all(payload.as_bytes())?;
        (0..frames.len())
            .map(|_| {
                let reply = read_reply_line(&mut self.reader, self.timeout)?;
                serde_json::from_str(&reply).map_err(|e| Error::Protocol(format!("bad reply {reply:?}: {e}")))
            })
            .collect()
    }

    /// One observation in, one command out.
    pub fn client_step(&mut self, frame: &ObservationFrame) -> Result<CommandFrame> {
        match self.request_raw(&serde_json::to_string(frame)?)? {
            Reply::Command(c) if c.step == frame.step => Ok(c),
            Reply::Command(c) => Err(Error::Protocol(format!(
                "reply for step {} to step {}",
                c.step, frame.step
            ))),
            Reply::Error { error } => Err(Error::Protocol(error)),
            Reply::Reset { reset } => Err(Error::Protocol(format!("session reset: {}", reset.reason))),
        }
    }
}

fn read_reply_line(reader: &mut BufReader<TcpStream>, timeout: Duration) -> Result<String> {
    let mut line = String::new();
    match reader.read_line(&mut line) {
        Ok(0) => Err(Error::Io(std::io::Error::new(
            ErrorKind::ConnectionAborted,
            "bridge closed the connection",
        ))),
        Ok(_) => Ok(line.trim_end().to_string()),
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            Err(Error::Timeout(timeout.as_millis() as u64))
        }
        Err(e) => Err(e.into()),
    }
}

impl CommandSource for BridgeClient {
    fn command(&mut self, step: usize, time_s: f64, obs: &Observation) -> Result<StepReport> {
        let frame = ObservationFrame::from_observation(step as u64, time_s, obs);
        Ok(self.client_step(&frame)?.report())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ModeKind;
    use crate::params::Params;

    fn config() -> ServerConfig {
        ServerConfig {
            controller: ControllerConfig::new(ModeKind::Fixed { carefulness: 0.0 }, Params::canonical()),
            seed: 1,
        }
    }

    fn frame(step: u64) -> String {
        format!(
            r#"{{"step":{step},"time_s":0.0,"fish":{{"x":60.0,"y":50.0,"heading":1.5707963267948966}},"robot":{{"x":50.0,"y":50.0,"heading":0.0}}}}"#
        )
    }

    #[test]
    fn session_echoes_step() {
        let mut s = Session::new(config());
        match s.handle_line(&frame(0)) {
            Reply::Command(c) => {
                assert_eq!(c.step, 0);
                assert_eq!(c.phase, Phase::Approach);
                assert!((c.target.x - 54.0).abs() < 1e-12);
                assert!((c.speed_factor - 1.2).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn garbage_then_valid() {
        let mut s = Session::new(config());
        assert!(matches!(s.handle_line("not json"), Reply::Error { .. }));
        assert!(matches!(s.handle_line(&frame(0)), Reply::Command(_)));
    }

    #[test]
    fn repeated_step_resets() {
        let mut s = Session::new(config());
        s.handle_line(&frame(3));
        assert!(matches!(s.handle_line(&frame(3)), Reply::Reset { .. }));
        // fresh session afterwards
        match s.handle_line(&frame(0)) {
            Reply::Command(c) => assert_eq!(c.approach_idx, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn reply_wire_shapes() {
        let e = serde_json::to_string(&Reply::Error { error: "x".into() }).unwrap();
        assert_eq!(e, r#"{"error":"x"}"#);
        let back: Reply = serde_json::from_str(&e).unwrap();
        assert_eq!(back, Reply::Error { error: "x".into() });
    }
}
