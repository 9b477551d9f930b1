//! Line-oriented byte-stream transports.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use crate::error::{Error, Result};

/// Sends and receives newline-delimited messages.
pub trait Transport: Send {
    fn send(&mut self, line: &str) -> Result<()>;
    /// Next line, or `Ok(None)` on timeout.
    fn recv(&mut self, timeout: Duration) -> Result<Option<String>>;
}

/// In-process transport: one end of a pair of channels.
pub struct Loopback {
    tx: Sender<String>,
    rx: Receiver<String>,
}

/// Two connected loopback ends.
pub fn loopback_pair() -> (Loopback, Loopback) {
    let (a_tx, a_rx) = channel();
    let (b_tx, b_rx) = channel();
    (Loopback { tx: a_tx, rx: b_rx }, Loopback { tx: b_tx, rx: a_rx })
}

impl Transport for Loopback {
    fn send(&mut self, line: &str) -> Result<()> {
        self.tx
            .send(line.to_string())
            .map_err(|_| Error::Io(std::io::Error::new(ErrorKind::BrokenPipe, "loopback peer closed")))
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<String>> {
        match self.rx.recv_timeout(timeout) {
            Ok(l) => Ok(Some(l)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(Error::Io(std::io::Error::new(
                ErrorKind::UnexpectedEof,
                "loopback peer closed",
            ))),
        }
    }
}

/// A TCP connection carrying one JSON object per line.
pub struct Tcp {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    pending: String,
}

impl Tcp {
    pub fn new(stream: TcpStream) -> Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Tcp {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            pending: String::new(),
        })
    }

    pub fn connect<A: ToSocketAddrs>(addr: A, timeout: Duration) -> Result<Self> {
        let mut last = None;
        for a in addr.to_socket_addrs()? {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => return Tcp::new(s),
                Err(e) => last = Some(e),
            }
        }
        Err(Error::Io(last.unwrap_or_else(|| std::io::Error::new(ErrorKind::NotFound, "no address"))))
    }

    /// Accepts `count` connections on `listener`.
    pub fn accept(listener: &TcpListener, count: usize) -> Result<Vec<Self>> {
        (0..count).map(|_| Tcp::new(listener.accept()?.0)).collect()
    }
}

impl Transport for Tcp {
    fn send(&mut self, line: &str) -> Result<()> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        self.writer.flush()?;
        Ok(())
    }

    fn recv(&mut self, timeout: Duration) -> Result<Option<String>> {
        self.reader.get_ref().set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        match self.reader.read_line(&mut self.pending) {
            Ok(0) => Err(Error::Io(std::io::Error::new(ErrorKind::UnexpectedEof, "connection closed"))),
            Ok(_) => {
                if !self.pending.ends_with('\n') {
                    return Ok(None);
                }
                let line = std::mem::take(&mut self.pending);
                Ok(Some(line.trim_end().to_string()))
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }
}
