//! Blocking client for the session service, used by tests and scripted runs.

use super::wire::{ClientMessage, Hello, ServerMessage, WireError, WireMessage};
use crate::experiment::Command;
use std::io;
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

pub struct Client {
    stream: TcpStream,
    seq: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> io::Result<Client> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(10)))?;
        Ok(Client { stream, seq: 0 })
    }

    /// Seq used for the most recent message sent.
    pub fn last_seq(&self) -> u64 {
        self.seq
    }

    pub fn send(&mut self, msg: &ClientMessage) -> io::Result<u64> {
        self.seq += 1;
        msg.to_wire(self.seq).write_to(&mut self.stream)?;
        Ok(self.seq)
    }

    /// Send arbitrary bytes, for exercising malformed input.
    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        use std::io::Write;
        self.stream.write_all(bytes)?;
        self.stream.flush()
    }

    /// Send a frame with an arbitrary kind byte and payload under the next seq.
    pub fn send_frame(&mut self, kind: u8, payload: &[u8]) -> io::Result<u64> {
        self.seq += 1;
        let len = (1 + 8 + payload.len()) as u32;
        let mut bytes = Vec::with_capacity(4 + len as usize);
        bytes.extend_from_slice(&len.to_be_bytes());
        bytes.push(kind);
        bytes.extend_from_slice(&self.seq.to_be_bytes());
        bytes.extend_from_slice(payload);
        self.send_raw(&bytes)?;
        Ok(self.seq)
    }

    pub fn hello(&mut self, participant_id: &str, mode: &str) -> io::Result<u64> {
        self.send(&ClientMessage::Hello(Hello {
            participant_id: participant_id.into(),
            mode: mode.into(),
        }))
    }

    pub fn command(&mut self, command: Command) -> io::Result<u64> {
        self.send(&ClientMessage::Command(command))
    }

    /// Next message from the server, `None` once the server closes the connection.
    pub fn recv(&mut self) -> Result<Option<(u64, ServerMessage)>, WireError> {
        match WireMessage::read_from(&mut self.stream)? {
            None => Ok(None),
            Some(w) => Ok(Some((w.seq, ServerMessage::from_wire(&w)?))),
        }
    }

    /// Read until a message satisfies `pred`, returning it and everything skipped.
    pub fn recv_until(
        &mut self,
        mut pred: impl FnMut(&ServerMessage) -> bool,
    ) -> Result<(ServerMessage, Vec<ServerMessage>), WireError> {
        let mut skipped = Vec::new();
        loop {
            match self.recv()? {
                Some((_, m)) if pred(&m) => return Ok((m, skipped)),
                Some((_, m)) => skipped.push(m),
                None => {
                    return Err(WireError::Io(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "server closed the connection",
                    )))
                }
            }
        }
    }

    /// Wait for the reply to client message `seq`: its Ack or Error.
    pub fn reply_to(&mut self, seq: u64) -> Result<(ServerMessage, Vec<ServerMessage>), WireError> {
        self.recv_until(|m| match m {
            ServerMessage::Ack { client_seq } => *client_seq == seq,
            ServerMessage::Error(e) => e.client_seq == Some(seq),
            _ => false,
        })
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(std::net::Shutdown::Both);
    }
}
