//! Deadline-bounded progressive transmission: truncation, block framing with
//! stop signals, client and server state machines, byte-stream transports
//! and a threaded client/server pipeline.

mod client;
mod framing;
mod pipeline;
mod transport;

pub use client::{blocks, client_send, ClientState};
pub use framing::{
    decode_prefix, stop_frame, Completion, Frame, ReceivedImage, StreamParser, DEFAULT_BLOCK_SIZE,
    MAX_BLOCK_SIZE, STOP_FRAME_LEN, STOP_MAGIC,
};
pub use pipeline::{spawn_client, spawn_server, ServedImage, ThreadedClientConfig};
pub use transport::{memory_pipe, Pacer, PipeReader, PipeWriter};

use std::collections::VecDeque;
use std::io::Read;

use crate::codec::{dequantize_channel, Codec, CodecError};
use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transport: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid protocol configuration: {0}")]
    Config(String),
    #[error("worker thread failed: {0}")]
    Worker(String),
}

/// `z` if it fits in `budget` bytes, otherwise its first `budget` bytes.
pub fn truncate(z: &[u8], budget: usize) -> &[u8] {
    if z.len() <= budget {
        z
    } else {
        &z[..budget]
    }
}

/// `t_d = t_i + T + t^f_{i+1}`: the instant the next image's first encoded
/// feature is ready.
pub fn compute_deadline(t_i: f64, period: f64, next_encode_latency: f64) -> f64 {
    t_i + period + next_encode_latency
}

/// `[1, M, h, w]` latent with channels `1..=K'` dequantized and the rest zero.
pub fn assemble_latent(
    received: &ReceivedImage,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<Tensor, ProtocolError> {
    let plane = height * width;
    if received.channels.len() > channels {
        return Err(ProtocolError::Config(format!(
            "{} channels received for an {channels}-channel latent",
            received.channels.len()
        )));
    }
    let mut data = vec![0.0; channels * plane];
    for (c, q) in received.channels.iter().enumerate() {
        if q.symbols.len() != plane {
            return Err(ProtocolError::Config(format!(
                "channel {} has {} symbols, expected {plane}",
                q.channel_index,
                q.symbols.len()
            )));
        }
        data[c * plane..(c + 1) * plane].copy_from_slice(&dequantize_channel(q));
    }
    Tensor::from_vec(&[1, channels, height, width], data)
        .map_err(|e| ProtocolError::Config(e.to_string()))
}

/// Blocking receiver over any byte stream.
pub struct ServerReceiver<R> {
    reader: R,
    parser: StreamParser,
    ready: VecDeque<ReceivedImage>,
    done: bool,
}

impl<R: Read> ServerReceiver<R> {
    pub fn new(reader: R, codec: Codec) -> Self {
        Self {
            reader,
            parser: StreamParser::new(codec),
            ready: VecDeque::new(),
            done: false,
        }
    }

    /// Next complete or stopped image; `None` once the stream has ended.
    pub fn receive(&mut self) -> Result<Option<ReceivedImage>, ProtocolError> {
        let mut buf = [0u8; 512];
        while self.ready.is_empty() && !self.done {
            let n = self.reader.read(&mut buf)?;
            if n == 0 {
                self.done = true;
                self.ready.extend(self.parser.finish());
            } else {
                self.ready.extend(self.parser.push(&buf[..n]));
            }
        }
        Ok(self.ready.pop_front())
    }
}

/// Reads one image from `reader` (until completion or its stop signal).
pub fn server_receive<R: Read>(
    reader: R,
    codec: Codec,
) -> Result<Option<ReceivedImage>, ProtocolError> {
    ServerReceiver::new(reader, codec).receive()
}
