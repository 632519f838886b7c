use std::io::{self, BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpStream};
use std::time::Duration;

use super::wire::{read_message, write_message, Message, WireError};

/// Minimal blocking client for tests, benchmarks and `serve --bots`.
pub struct BotClient {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
    next_seq: u64,
    pub player: Option<u64>,
}

impl BotClient {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: BufWriter::new(stream),
            next_seq: 0,
            player: None,
        })
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> io::Result<()> {
        self.reader.get_ref().set_read_timeout(timeout)
    }

    pub fn send(&mut self, m: &Message) -> io::Result<()> {
        write_message(&mut self.writer, m)?;
        self.writer.flush()
    }

    /// Writes raw bytes, for exercising malformed traffic.
    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    /// Next message, or `None` once the server closed the connection.
    pub fn recv(&mut self) -> Result<Option<Message>, WireError> {
        read_message(&mut self.reader)
    }

    pub fn request_join(&mut self) -> io::Result<()> {
        self.send(&Message::Join)
    }

    /// Sends an input with the next client sequence number and returns it.
    pub fn send_input(&mut self, name: &str, payload: &[u8]) -> io::Result<u64> {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.send(&Message::Input {
            client_seq: seq,
            name: name.to_string(),
            payload: payload.to_vec(),
        })?;
        Ok(seq)
    }

    pub fn leave(&mut self) -> io::Result<()> {
        self.player = None;
        self.send(&Message::Leave)
    }

    pub fn close(&self) {
        let _ = self.reader.get_ref().shutdown(Shutdown::Both);
    }
}
