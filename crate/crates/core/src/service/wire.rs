//! Byte layout of service messages.
//!
//! Every message on the socket, in either direction, is
//!
//! ```text
//! offset  size  field
//! 0       4     length, big-endian u32: bytes that follow (kind + seq + payload)
//! 4       1     kind
//! 5       8     seq, big-endian u64
//! 13      n     payload (length - 9 bytes)
//! ```
//!
//! | kind | direction | payload |
//! |------|-----------|---------|
//! | `0x01` Hello       | client to server | JSON [`Hello`] |
//! | `0x02` Command     | client to server | one byte, the command code (1..=8) |
//! | `0x10` Frame       | server to client | u16 BE meta length, JSON [`FrameMeta`], PNG image |
//! | `0x11` State       | server to client | JSON [`StateSnapshot`] |
//! | `0x12` Instruction | server to client | UTF-8 text |
//! | `0x13` Ack         | server to client | u64 BE seq of the client message acknowledged |
//! | `0x14` Error       | server to client | JSON [`ErrorReport`] |
//!
//! Example: a client `Confirm` (code 7) with seq 3 is the 14 bytes
//! `00 00 00 0a 02 00 00 00 00 00 00 00 03 07`; the server answers with an
//! Ack such as `00 00 00 11 13 00 00 00 00 00 00 00 05 00 00 00 00 00 00 00 03`
//! (server seq 5, acknowledging client seq 3).
//!
//! Each side numbers its own messages; seq strictly increases per connection.

use crate::compositor::{CompositeMode, Image, ImageError};
use crate::experiment::{Command, TaskPhase};
use crate::raster::OpacityState;
use serde::{Deserialize, Serialize};
use std::io::{self, Read, Write};
use thiserror::Error;

/// Bytes of kind plus seq.
pub const HEADER_LEN: usize = 9;
/// Largest accepted value of the length prefix.
pub const MAX_MESSAGE_LEN: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Kind {
    Hello = 0x01,
    Command = 0x02,
    Frame = 0x10,
    State = 0x11,
    Instruction = 0x12,
    Ack = 0x13,
    Error = 0x14,
}

impl Kind {
    pub const ALL: [Kind; 7] = [
        Kind::Hello,
        Kind::Command,
        Kind::Frame,
        Kind::State,
        Kind::Instruction,
        Kind::Ack,
        Kind::Error,
    ];

    pub fn from_byte(b: u8) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| *k as u8 == b)
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Io(#[from] io::Error),
    /// The message was consumed whole; the stream is still in sync.
    #[error("malformed message: {0}")]
    Malformed(String),
    /// A complete message with a kind byte this side does not know.
    #[error("unknown kind 0x{kind:02x} (seq {seq})")]
    UnknownKind { kind: u8, seq: u64 },
    /// The length prefix cannot be trusted; the stream must be dropped.
    #[error("message length {0} exceeds limit")]
    TooLong(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: Kind,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl WireMessage {
    pub fn new(kind: Kind, seq: u64, payload: Vec<u8>) -> Self {
        Self { kind, seq, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = (HEADER_LEN + self.payload.len()) as u32;
        let mut out = Vec::with_capacity(4 + len as usize);
        out.extend_from_slice(&len.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(&self.encode())?;
        w.flush()
    }

    /// Read one message. Returns `Ok(None)` on a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Option<WireMessage>, WireError> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_be_bytes(len);
        if len > MAX_MESSAGE_LEN {
            return Err(WireError::TooLong(len));
        }
        let mut body = vec![0u8; len as usize];
        r.read_exact(&mut body)?;
        if body.len() < HEADER_LEN {
            return Err(WireError::Malformed(format!(
                "length {len} is shorter than the {HEADER_LEN}-byte header"
            )));
        }
        let seq = u64::from_be_bytes(body[1..9].try_into().expect("8 bytes"));
        let kind = Kind::from_byte(body[0]).ok_or(WireError::UnknownKind { kind: body[0], seq })?;
        Ok(Some(WireMessage {
            kind,
            seq,
            payload: body.split_off(HEADER_LEN),
        }))
    }
}

/// Session parameters sent by the client before anything else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub participant_id: String,
    /// `anaglyph` or `sbs`.
    pub mode: String,
}

/// Describes the image in a Frame message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    pub frame_index: u64,
    /// Scene time the frame was rendered at, seconds since session start.
    pub t: f64,
    pub phase: TaskPhase,
    pub opacity: OpacityState,
    pub mode: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub phase: TaskPhase,
    pub opacity: OpacityState,
    pub t1_alpha: Option<f64>,
    /// Per-eye values currently being adjusted (T2) or confirmed.
    pub t2_left_alpha: f64,
    pub t2_right_alpha: f64,
    /// Seq of the last client command applied.
    pub last_command_seq: Option<u64>,
    pub log_path: Option<String>,
    pub record_path: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Another session is running; the connection is closed.
    Busy,
    Malformed,
    IllegalCommand,
    /// A message that is valid but not expected right now.
    Unexpected,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub code: ErrorCode,
    pub message: String,
    /// Seq of the client message that caused the error, when known.
    pub client_seq: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServerMessage {
    Frame { meta: FrameMeta, png: Vec<u8> },
    State(StateSnapshot),
    Instruction(String),
    Ack { client_seq: u64 },
    Error(ErrorReport),
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("wire payloads serialize")
}

fn from_json<'a, T: Deserialize<'a>>(bytes: &'a [u8]) -> Result<T, WireError> {
    serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))
}

impl ServerMessage {
    pub fn kind(&self) -> Kind {
        match self {
            ServerMessage::Frame { .. } => Kind::Frame,
            ServerMessage::State(_) => Kind::State,
            ServerMessage::Instruction(_) => Kind::Instruction,
            ServerMessage::Ack { .. } => Kind::Ack,
            ServerMessage::Error(_) => Kind::Error,
        }
    }

    pub fn to_wire(&self, seq: u64) -> WireMessage {
        let payload = match self {
            ServerMessage::Frame { meta, png } => {
                let meta = json(meta);
                let mut p = Vec::with_capacity(2 + meta.len() + png.len());
                p.extend_from_slice(&(meta.len() as u16).to_be_bytes());
                p.extend_from_slice(&meta);
                p.extend_from_slice(png);
                p
            }
            ServerMessage::State(s) => json(s),
            ServerMessage::Instruction(text) => text.as_bytes().to_vec(),
            ServerMessage::Ack { client_seq } => client_seq.to_be_bytes().to_vec(),
            ServerMessage::Error(e) => json(e),
        };
        WireMessage::new(self.kind(), seq, payload)
    }

    pub fn from_wire(msg: &WireMessage) -> Result<ServerMessage, WireError> {
        let p = &msg.payload;
        Ok(match msg.kind {
            Kind::Frame => {
                if p.len() < 2 {
                    return Err(WireError::Malformed("frame payload too short".into()));
                }
                let n = u16::from_be_bytes([p[0], p[1]]) as usize;
                if p.len() < 2 + n {
                    return Err(WireError::Malformed("frame meta overruns payload".into()));
                }
                ServerMessage::Frame {
                    meta: from_json(&p[2..2 + n])?,
                    png: p[2 + n..].to_vec(),
                }
            }
            Kind::State => ServerMessage::State(from_json(p)?),
            Kind::Instruction => ServerMessage::Instruction(
                String::from_utf8(p.clone()).map_err(|e| WireError::Malformed(e.to_string()))?,
            ),
            Kind::Ack => {
                let bytes: [u8; 8] = p
                    .as_slice()
                    .try_into()
                    .map_err(|_| WireError::Malformed("ack payload must be 8 bytes".into()))?;
                ServerMessage::Ack {
                    client_seq: u64::from_be_bytes(bytes),
                }
            }
            Kind::Error => ServerMessage::Error(from_json(p)?),
            Kind::Hello | Kind::Command => {
                return Err(WireError::Malformed(format!(
                    "{:?} is a client message",
                    msg.kind
                )))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClientMessage {
    Hello(Hello),
    Command(Command),
}

impl ClientMessage {
    pub fn to_wire(&self, seq: u64) -> WireMessage {
        match self {
            ClientMessage::Hello(h) => WireMessage::new(Kind::Hello, seq, json(h)),
            ClientMessage::Command(c) => WireMessage::new(Kind::Command, seq, vec![c.code()]),
        }
    }

    pub fn from_wire(msg: &WireMessage) -> Result<ClientMessage, WireError> {
        match msg.kind {
            Kind::Hello => Ok(ClientMessage::Hello(from_json(&msg.payload)?)),
            Kind::Command => match msg.payload.as_slice() {
                [code] => Command::from_code(*code)
                    .map(ClientMessage::Command)
                    .ok_or_else(|| WireError::Malformed(format!("unknown command code {code}"))),
                other => Err(WireError::Malformed(format!(
                    "command payload must be 1 byte, got {}",
                    other.len()
                ))),
            },
            other => Err(WireError::Malformed(format!(
                "{other:?} is a server message"
            ))),
        }
    }
}

/// Modes a client may request for streamed frames.
pub fn parse_stream_mode(mode: &str) -> Result<CompositeMode, String> {
    match mode.parse::<CompositeMode>()? {
        CompositeMode::SplitFiles => {
            Err("split mode cannot be streamed; use anaglyph or sbs".into())
        }
        m => Ok(m),
    }
}

/// Decode the image carried by a Frame message.
pub fn decode_frame_image(png: &[u8]) -> Result<Image, ImageError> {
    Image::decode_png(png)
}
