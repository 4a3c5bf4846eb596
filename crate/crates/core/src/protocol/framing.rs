//! Block framing on top of the image wire format, and the incremental
//! receiver.
//!
//! The byte stream is a sequence of frames:
//!
//! ```text
//! block frame: len (1 byte, 1..=254) | len bytes of the serialized image
//! stop frame:  0xFF 'S' 'T' 'O' 'P' | image_id (u32, big-endian)
//! ```
//!
//! A block never spans two images. Because a length byte is at most 254, the
//! escape byte 0xFF at a frame boundary can only start a stop frame.

use crate::codec::{
    parse_header, parse_segment, Codec, CodecError, QuantizedChannel, HEADER_LEN, MAGIC,
};

pub const DEFAULT_BLOCK_SIZE: usize = 64;
pub const MAX_BLOCK_SIZE: usize = 254;
pub const STOP_MAGIC: [u8; 5] = [0xFF, b'S', b'T', b'O', b'P'];
pub const STOP_FRAME_LEN: usize = STOP_MAGIC.len() + 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Frame {
    Block(Vec<u8>),
    Stop { image_id: u32 },
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        match self {
            Frame::Block(payload) => {
                assert!(
                    !payload.is_empty() && payload.len() <= MAX_BLOCK_SIZE,
                    "block payload must hold 1..=254 bytes"
                );
                let mut out = Vec::with_capacity(payload.len() + 1);
                out.push(payload.len() as u8);
                out.extend_from_slice(payload);
                out
            }
            Frame::Stop { image_id } => stop_frame(*image_id).to_vec(),
        }
    }

    pub fn wire_len(&self) -> usize {
        match self {
            Frame::Block(p) => p.len() + 1,
            Frame::Stop { .. } => STOP_FRAME_LEN,
        }
    }
}

pub fn stop_frame(image_id: u32) -> [u8; STOP_FRAME_LEN] {
    let mut out = [0u8; STOP_FRAME_LEN];
    out[..5].copy_from_slice(&STOP_MAGIC);
    out[5..].copy_from_slice(&image_id.to_be_bytes());
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Completion {
    Complete,
    Truncated,
}

/// Server-side view of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedImage {
    pub image_id: u32,
    /// Image bytes received, header included.
    pub raw: Vec<u8>,
    /// Fully decoded leading channels `1..=K'`.
    pub channels: Vec<QuantizedChannel>,
    pub status: Completion,
}

impl ReceivedImage {
    /// `K'`, the number of usable leading channels.
    pub fn usable_channels(&self) -> usize {
        self.channels.len()
    }
}

/// Decodes the leading channels of a (possibly truncated) image byte stream.
/// Stops at the first segment that is incomplete, out of order or fails to
/// decode.
pub fn decode_prefix(codec: &Codec, raw: &[u8]) -> Vec<QuantizedChannel> {
    let Ok((header, mut rest)) = parse_header(raw) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for expected in 1..=header.channel_count {
        let Ok(Some((segment, tail))) = parse_segment(rest) else {
            break;
        };
        if segment.channel_index != expected {
            break;
        }
        match codec.decode_channel(&segment) {
            Ok(q) => out.push(q),
            Err(_) => break,
        }
        rest = tail;
    }
    out
}

/// Declared total size of an image from its header and segment headers, once
/// enough bytes are present to know it.
fn declared_size(raw: &[u8]) -> Result<Option<usize>, CodecError> {
    let (header, mut rest) = parse_header(raw)?;
    let mut size = HEADER_LEN;
    for _ in 0..header.channel_count {
        match parse_segment(rest)? {
            Some((segment, tail)) => {
                size += segment.wire_len();
                rest = tail;
            }
            None => return Ok(None),
        }
    }
    Ok(Some(size))
}

#[derive(Debug, PartialEq)]
enum State {
    Idle,
    Receiving {
        raw: Vec<u8>,
    },
    /// Malformed image: drop blocks until a stop frame or a new header.
    Discarding,
}

/// Incremental server-side parser. Feed it arbitrary byte chunks; it returns
/// images as they complete or are stopped.
#[derive(Debug)]
pub struct StreamParser {
    codec: Codec,
    buffer: Vec<u8>,
    state: State,
    discarded: usize,
}

impl StreamParser {
    pub fn new(codec: Codec) -> Self {
        Self {
            codec,
            buffer: Vec::new(),
            state: State::Idle,
            discarded: 0,
        }
    }

    /// Images dropped because of malformed headers.
    pub fn discarded_images(&self) -> usize {
        self.discarded
    }

    pub fn push(&mut self, bytes: &[u8]) -> Vec<ReceivedImage> {
        self.buffer.extend_from_slice(bytes);
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < self.buffer.len() {
            let lead = self.buffer[pos];
            if lead == STOP_MAGIC[0] {
                if self.buffer.len() - pos < STOP_FRAME_LEN {
                    break;
                }
                let frame = &self.buffer[pos..pos + STOP_FRAME_LEN];
                if frame[..5] != STOP_MAGIC {
                    // not a stop frame: skip the stray byte
                    pos += 1;
                    continue;
                }
                let image_id = u32::from_be_bytes([frame[5], frame[6], frame[7], frame[8]]);
                pos += STOP_FRAME_LEN;
                out.extend(self.on_stop(image_id));
            } else if lead == 0 {
                pos += 1;
            } else {
                let len = lead as usize;
                if self.buffer.len() - pos < len + 1 {
                    break;
                }
                let payload = self.buffer[pos + 1..pos + 1 + len].to_vec();
                pos += len + 1;
                out.extend(self.on_block(&payload));
            }
        }
        self.buffer.drain(..pos);
        out
    }

    /// Ends the stream: a partially received image is reported as truncated.
    pub fn finish(&mut self) -> Option<ReceivedImage> {
        self.buffer.clear();
        match std::mem::replace(&mut self.state, State::Idle) {
            State::Receiving { raw } => {
                let image_id = parse_header(&raw).map(|(h, _)| h.image_id).unwrap_or(0);
                Some(self.finalize(image_id, raw, Completion::Truncated))
            }
            _ => None,
        }
    }

    fn on_stop(&mut self, image_id: u32) -> Option<ReceivedImage> {
        match std::mem::replace(&mut self.state, State::Idle) {
            State::Receiving { raw } => Some(self.finalize(image_id, raw, Completion::Truncated)),
            State::Idle => Some(self.finalize(image_id, Vec::new(), Completion::Truncated)),
            State::Discarding => None,
        }
    }

    fn on_block(&mut self, payload: &[u8]) -> Option<ReceivedImage> {
        let starts_image = payload.len() >= 3 && payload[..3] == MAGIC;
        let mut raw = match std::mem::replace(&mut self.state, State::Idle) {
            State::Receiving { raw } => raw,
            State::Idle => Vec::new(),
            State::Discarding if starts_image => Vec::new(),
            State::Discarding => {
                self.state = State::Discarding;
                return None;
            }
        };
        raw.extend_from_slice(payload);
        if raw.len() < HEADER_LEN {
            self.state = State::Receiving { raw };
            return None;
        }
        match declared_size(&raw) {
            Err(_) => {
                log::warn!("discarding image with malformed header");
                self.discarded += 1;
                self.state = State::Discarding;
                None
            }
            Ok(Some(size)) if raw.len() >= size => {
                raw.truncate(size);
                let image_id = parse_header(&raw).map(|(h, _)| h.image_id).unwrap_or(0);
                Some(self.finalize(image_id, raw, Completion::Complete))
            }
            Ok(_) => {
                self.state = State::Receiving { raw };
                None
            }
        }
    }

    fn finalize(&self, image_id: u32, raw: Vec<u8>, status: Completion) -> ReceivedImage {
        let channels = decode_prefix(&self.codec, &raw);
        ReceivedImage {
            image_id,
            raw,
            channels,
            status,
        }
    }
}
