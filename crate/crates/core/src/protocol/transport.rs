//! In-process byte pipe with optional pacing. Sockets need no wrapper:
//! `std::net::TcpStream` is already a `Read + Write` byte stream.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::{Duration, Instant};

/// Maps "`bytes` more bytes, starting `elapsed` seconds after the pipe was
/// opened" to the elapsed time at which they have been delivered.
pub type Pacer = Box<dyn FnMut(usize, f64) -> f64 + Send>;

pub struct PipeWriter {
    tx: Sender<Vec<u8>>,
    pacer: Option<Pacer>,
    opened: Instant,
    busy_until: f64,
}

pub struct PipeReader {
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    offset: usize,
}

/// Unidirectional in-memory byte stream. With a pacer, each write blocks
/// until the pacer says the bytes have crossed the link.
pub fn memory_pipe(pacer: Option<Pacer>) -> (PipeWriter, PipeReader) {
    let (tx, rx) = channel();
    (
        PipeWriter {
            tx,
            pacer,
            opened: Instant::now(),
            busy_until: 0.0,
        },
        PipeReader {
            rx,
            pending: Vec::new(),
            offset: 0,
        },
    )
}

impl PipeWriter {
    /// Constant-rate pacing in bytes per second.
    pub fn constant_rate(rate: f64) -> Pacer {
        Box::new(move |bytes, start| start + bytes as f64 / rate)
    }
}

impl Write for PipeWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if let Some(pacer) = &mut self.pacer {
            let now = self.opened.elapsed().as_secs_f64();
            let start = now.max(self.busy_until);
            let done = pacer(buf.len(), start);
            if !done.is_finite() {
                return Err(io::Error::new(
                    io::ErrorKind::TimedOut,
                    "link has no capacity left",
                ));
            }
            self.busy_until = done;
            let wait = done - self.opened.elapsed().as_secs_f64();
            if wait > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(wait));
            }
        }
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "receiver dropped"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for PipeReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.offset >= self.pending.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.pending = chunk;
                    self.offset = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.offset);
        buf[..n].copy_from_slice(&self.pending[self.offset..self.offset + n]);
        self.offset += n;
        Ok(n)
    }
}
