//! Localhost session service.
//!
//! A client connects over TCP, sends [`wire::Hello`] naming the participant and
//! the streaming mode, and then drives the experiment with Command messages.
//! The server streams composited frames at a fixed tick rate, acknowledges or
//! rejects every command, and sends State and Instruction messages as the
//! phase changes. One session runs at a time; a second connection receives a
//! `busy` Error and is closed.
//!
//! Each session writes a JSON-lines log to the output directory as commands
//! arrive, and on completion a session record (`<stem>.record.json`) and a
//! one-row CSV (`<stem>.csv`) in the analysis schema.

pub mod client;
pub mod wire;

use crate::analysis;
use crate::compositor::{composite, CompositeMode};
use crate::experiment::{
    instruction_text, ExperimentConfig, ExperimentError, LogWriter, Session, TaskPhase,
};
use crate::raster::render_stereo;
use crate::scene::{build_scene, Scene};
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};
use wire::{
    ClientMessage, ErrorCode, ErrorReport, FrameMeta, Hello, ServerMessage, StateSnapshot,
    WireError, WireMessage,
};

pub use client::Client;

/// Environment variable consulted for the listening port.
pub const PORT_ENV: &str = "DICHOPTIC_PORT";
pub const DEFAULT_PORT: u16 = 7878;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub experiment: ExperimentConfig,
    /// 0 picks a free port.
    pub port: u16,
    pub tick_rate: f64,
    /// Per-eye render size.
    pub width: usize,
    pub height: usize,
    pub out_dir: PathBuf,
    /// How long a new connection may take to send Hello.
    pub hello_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentConfig::default(),
            port: DEFAULT_PORT,
            tick_rate: 30.0,
            width: 512,
            height: 512,
            out_dir: PathBuf::from("."),
            hello_timeout: Duration::from_secs(10),
        }
    }
}

pub struct Server {
    listener: TcpListener,
    config: Arc<ServiceConfig>,
    scene: Arc<Scene>,
    active: Arc<AtomicBool>,
    stop: Arc<AtomicBool>,
}

/// A server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stop accepting connections and wait for the accept loop to exit.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop.store(true, Ordering::SeqCst);
        self.thread
            .take()
            .expect("joined once")
            .join()
            .expect("server thread panicked")
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
    }
}

impl Server {
    pub fn bind(config: ServiceConfig) -> io::Result<Server> {
        config
            .experiment
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        if !(config.tick_rate > 0.0 && config.tick_rate.is_finite())
            || config.width == 0
            || config.height == 0
        {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "tick rate and frame size must be positive",
            ));
        }
        let scene = build_scene(&config.experiment.scene)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        std::fs::create_dir_all(&config.out_dir)?;
        let listener = TcpListener::bind(("127.0.0.1", config.port))?;
        listener.set_nonblocking(true)?;
        Ok(Server {
            listener,
            config: Arc::new(config),
            scene: Arc::new(scene),
            active: Arc::new(AtomicBool::new(false)),
            stop: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Run the accept loop on a background thread.
    pub fn spawn(self) -> io::Result<ServerHandle> {
        let addr = self.local_addr()?;
        let stop = self.stop.clone();
        let thread = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    /// Accept connections until stopped. Sessions run on their own threads.
    pub fn run(self) -> io::Result<()> {
        let mut sessions: Vec<JoinHandle<()>> = Vec::new();
        while !self.stop.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    if self.active.swap(true, Ordering::SeqCst) {
                        refuse(stream);
                        continue;
                    }
                    let config = self.config.clone();
                    let scene = self.scene.clone();
                    let active = self.active.clone();
                    sessions.retain(|h| !h.is_finished());
                    sessions.push(thread::spawn(move || {
                        // Errors here mean the client went away; the server carries on.
                        let _ = run_connection(stream, &config, &scene);
                        active.store(false, Ordering::SeqCst);
                    }));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(10))
                }
                Err(e) => return Err(e),
            }
        }
        for h in sessions {
            let _ = h.join();
        }
        Ok(())
    }
}

fn refuse(mut stream: TcpStream) {
    let msg = ServerMessage::Error(ErrorReport {
        code: ErrorCode::Busy,
        message: "a session is already active".into(),
        client_seq: None,
    });
    let _ = msg.to_wire(1).write_to(&mut stream);
    let _ = stream.shutdown(Shutdown::Both);
}

enum Incoming {
    Message(WireMessage),
    /// Description and, when the header was readable, the client seq.
    Malformed(String, Option<u64>),
    Closed,
}

fn spawn_reader(mut stream: TcpStream) -> Receiver<Incoming> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || loop {
        let item = match WireMessage::read_from(&mut stream) {
            Ok(Some(m)) => Incoming::Message(m),
            Ok(None) => Incoming::Closed,
            Err(WireError::Malformed(e)) => Incoming::Malformed(e, None),
            Err(e @ WireError::UnknownKind { seq, .. }) => {
                Incoming::Malformed(e.to_string(), Some(seq))
            }
            Err(_) => Incoming::Closed,
        };
        let closed = matches!(item, Incoming::Closed);
        if tx.send(item).is_err() || closed {
            break;
        }
    });
    rx
}

struct Outbox {
    stream: TcpStream,
    seq: u64,
}

impl Outbox {
    fn send(&mut self, msg: &ServerMessage) -> io::Result<()> {
        self.seq += 1;
        msg.to_wire(self.seq).write_to(&mut self.stream)
    }

    fn error(
        &mut self,
        code: ErrorCode,
        message: impl Into<String>,
        client_seq: Option<u64>,
    ) -> io::Result<()> {
        self.send(&ServerMessage::Error(ErrorReport {
            code,
            message: message.into(),
            client_seq,
        }))
    }
}

fn valid_participant_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

/// Create `<dir>/<id>.jsonl`, or `<id>-2.jsonl` and so on if taken.
fn create_log(dir: &Path, id: &str) -> io::Result<(PathBuf, File)> {
    for k in 1.. {
        let stem = if k == 1 {
            id.to_string()
        } else {
            format!("{id}-{k}")
        };
        let path = dir.join(format!("{stem}.jsonl"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => return Ok((path, f)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!("unbounded loop")
}

fn wait_for_hello(
    rx: &Receiver<Incoming>,
    out: &mut Outbox,
    timeout: Duration,
) -> io::Result<Option<(Hello, CompositeMode)>> {
    let deadline = Instant::now() + timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        let item = match rx.recv_timeout(left) {
            Ok(item) => item,
            Err(RecvTimeoutError::Timeout) => {
                out.error(ErrorCode::Unexpected, "no Hello received", None)?;
                return Ok(None);
            }
            Err(RecvTimeoutError::Disconnected) => return Ok(None),
        };
        let msg = match item {
            Incoming::Closed => return Ok(None),
            Incoming::Malformed(e, seq) => {
                out.error(ErrorCode::Malformed, e, seq)?;
                continue;
            }
            Incoming::Message(m) => m,
        };
        match ClientMessage::from_wire(&msg) {
            Ok(ClientMessage::Hello(hello)) => {
                if !valid_participant_id(&hello.participant_id) {
                    out.error(
                        ErrorCode::Malformed,
                        "participant_id must be 1-64 characters of [A-Za-z0-9_-]",
                        Some(msg.seq),
                    )?;
                    continue;
                }
                match wire::parse_stream_mode(&hello.mode) {
                    Ok(mode) => {
                        out.send(&ServerMessage::Ack {
                            client_seq: msg.seq,
                        })?;
                        return Ok(Some((hello, mode)));
                    }
                    Err(e) => out.error(ErrorCode::Malformed, e, Some(msg.seq))?,
                }
            }
            Ok(ClientMessage::Command(_)) => out.error(
                ErrorCode::Unexpected,
                "send Hello before commands",
                Some(msg.seq),
            )?,
            Err(e) => out.error(ErrorCode::Malformed, e.to_string(), Some(msg.seq))?,
        }
    }
}

struct Live {
    session: Session,
    log: LogWriter<BufWriter<File>>,
    log_path: PathBuf,
    record_path: Option<PathBuf>,
    last_client_seq: Option<u64>,
    last_command_seq: Option<u64>,
}

impl Live {
    fn snapshot(&self) -> StateSnapshot {
        let (l, r) = self
            .session
            .t2_alphas()
            .unwrap_or(self.session.t2_current());
        StateSnapshot {
            phase: self.session.phase(),
            opacity: self.session.opacity(),
            t1_alpha: self.session.t1_alpha(),
            t2_left_alpha: l,
            t2_right_alpha: r,
            last_command_seq: self.last_command_seq,
            log_path: Some(self.log_path.display().to_string()),
            record_path: self.record_path.as_ref().map(|p| p.display().to_string()),
        }
    }

    /// Handle one client message. Returns true once the session is done.
    fn handle(
        &mut self,
        msg: WireMessage,
        t: f64,
        out: &mut Outbox,
        out_dir: &Path,
    ) -> io::Result<bool> {
        if let Some(prev) = self.last_client_seq {
            if msg.seq <= prev {
                out.error(
                    ErrorCode::Malformed,
                    format!("seq {} does not follow {prev}", msg.seq),
                    Some(msg.seq),
                )?;
                return Ok(false);
            }
        }
        self.last_client_seq = Some(msg.seq);
        let command = match ClientMessage::from_wire(&msg) {
            Ok(ClientMessage::Command(c)) => c,
            Ok(ClientMessage::Hello(_)) => {
                out.error(
                    ErrorCode::Unexpected,
                    "session already started",
                    Some(msg.seq),
                )?;
                return Ok(false);
            }
            Err(e) => {
                out.error(ErrorCode::Malformed, e.to_string(), Some(msg.seq))?;
                return Ok(false);
            }
        };
        let before = self.session.phase();
        match self.session.apply_command(command, t) {
            Ok(_) => {}
            Err(e @ ExperimentError::IllegalCommand { .. }) => {
                out.error(ErrorCode::IllegalCommand, e.to_string(), Some(msg.seq))?;
                return Ok(false);
            }
            Err(e) => {
                out.error(ErrorCode::Internal, e.to_string(), Some(msg.seq))?;
                return Ok(false);
            }
        }
        let logged = *self
            .session
            .accepted_commands()
            .last()
            .expect("command was accepted");
        self.log.append(&logged)?;
        self.last_command_seq = Some(msg.seq);
        out.send(&ServerMessage::Ack {
            client_seq: msg.seq,
        })?;

        let phase = self.session.phase();
        if phase == TaskPhase::Done {
            self.finish(out_dir)?;
            out.send(&ServerMessage::State(self.snapshot()))?;
            return Ok(true);
        }
        out.send(&ServerMessage::State(self.snapshot()))?;
        if phase != before {
            if let Some(text) = instruction_text(phase) {
                out.send(&ServerMessage::Instruction(text.to_string()))?;
            }
        }
        Ok(false)
    }

    fn finish(&mut self, out_dir: &Path) -> io::Result<()> {
        let record = self
            .session
            .export()
            .map_err(|e| io::Error::other(e.to_string()))?;
        let stem = self
            .log_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(self.session.participant_id())
            .to_string();
        let record_path = out_dir.join(format!("{stem}.record.json"));
        std::fs::write(&record_path, record.to_json() + "\n")?;
        std::fs::write(
            out_dir.join(format!("{stem}.csv")),
            analysis::write_csv(&[record.to_participant_row()]),
        )?;
        self.record_path = Some(record_path);
        Ok(())
    }
}

fn run_connection(stream: TcpStream, config: &ServiceConfig, scene: &Scene) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(Duration::from_secs(5)))?;
    let rx = spawn_reader(stream.try_clone()?);
    let mut out = Outbox {
        stream: stream.try_clone()?,
        seq: 0,
    };
    let result = serve_session(&rx, &mut out, config, scene);
    let _ = stream.shutdown(Shutdown::Both);
    result
}

fn serve_session(
    rx: &Receiver<Incoming>,
    out: &mut Outbox,
    config: &ServiceConfig,
    scene: &Scene,
) -> io::Result<()> {
    let Some((hello, mode)) = wait_for_hello(rx, out, config.hello_timeout)? else {
        return Ok(());
    };
    let session = Session::new(hello.participant_id.clone(), &config.experiment)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let (log_path, file) = create_log(&config.out_dir, &hello.participant_id)?;
    let log = LogWriter::new(BufWriter::new(file), &session.log_header())?;
    let mut live = Live {
        session,
        log,
        log_path,
        record_path: None,
        last_client_seq: None,
        last_command_seq: None,
    };

    let start = Instant::now();
    out.send(&ServerMessage::Instruction(
        instruction_text(TaskPhase::Briefing)
            .unwrap_or_default()
            .to_string(),
    ))?;
    out.send(&ServerMessage::State(live.snapshot()))?;

    let period = Duration::from_secs_f64(1.0 / config.tick_rate);
    let mut next_tick = start;
    let mut frame_index = 0u64;
    loop {
        // Commands arriving before the tick are applied in arrival order.
        loop {
            let wait = next_tick.saturating_duration_since(Instant::now());
            let item = match rx.recv_timeout(wait) {
                Ok(item) => item,
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Ok(()),
            };
            match item {
                Incoming::Closed => return Ok(()),
                Incoming::Malformed(e, seq) => out.error(ErrorCode::Malformed, e, seq)?,
                Incoming::Message(msg) => {
                    let t = start.elapsed().as_secs_f64();
                    if live.handle(msg, t, out, &config.out_dir)? {
                        return Ok(());
                    }
                }
            }
        }

        let t = start.elapsed().as_secs_f64();
        let opacity = live.session.opacity();
        let frame = render_stereo(
            scene,
            &config.experiment.rig,
            opacity,
            t,
            config.width,
            config.height,
        );
        let image = composite(&frame, mode).remove(0).image;
        let png = image
            .encode_png()
            .map_err(|e| io::Error::other(e.to_string()))?;
        out.send(&ServerMessage::Frame {
            meta: FrameMeta {
                frame_index,
                t,
                phase: live.session.phase(),
                opacity,
                mode: mode.as_str().to_string(),
                width: image.width,
                height: image.height,
            },
            png,
        })?;
        frame_index += 1;

        // Missed ticks are dropped, not made up.
        next_tick += period;
        let now = Instant::now();
        if next_tick < now {
            next_tick = now + period;
        }
    }
}
