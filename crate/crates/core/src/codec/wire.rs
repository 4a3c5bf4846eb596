//! Image wire format. All integers are big-endian.
//!
//! ```text
//! offset  size  field
//! 0       3     magic "PNC" (0x50 0x4E 0x43)
//! 3       1     version (1)
//! 4       4     image_id
//! 8       1     channel_count
//! then per channel, in importance order:
//!         1     channel_index (1-based)
//!         1     mode (0 = huffman, 1 = raw6)
//!         4     bit_length (payload bits, padding excluded)
//!         n     payload, n = ceil(bit_length / 8)
//! ```

use super::CodecError;

pub const MAGIC: [u8; 3] = *b"PNC";
pub const VERSION: u8 = 1;
/// Image header bytes before the first channel.
pub const HEADER_LEN: usize = 9;
/// Per-channel header bytes before its payload.
pub const CHANNEL_HEADER_LEN: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentMode {
    Huffman = 0,
    Raw6 = 1,
}

impl TryFrom<u8> for SegmentMode {
    type Error = CodecError;

    fn try_from(v: u8) -> Result<Self, CodecError> {
        match v {
            0 => Ok(SegmentMode::Huffman),
            1 => Ok(SegmentMode::Raw6),
            other => Err(CodecError::Parse(format!("unknown segment mode {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelSegment {
    pub channel_index: u8,
    pub mode: SegmentMode,
    pub bit_length: u32,
    pub payload: Vec<u8>,
}

impl ChannelSegment {
    /// Bytes on the wire including the channel header.
    pub fn wire_len(&self) -> usize {
        CHANNEL_HEADER_LEN + self.payload.len()
    }

    fn payload_len(bit_length: u32) -> usize {
        (bit_length as usize).div_ceil(8)
    }
}

/// One image as transmitted: header plus channel segments in importance
/// order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedImage {
    pub image_id: u32,
    pub segments: Vec<ChannelSegment>,
}

impl EncodedImage {
    pub fn total_size(&self) -> usize {
        HEADER_LEN
            + self
                .segments
                .iter()
                .map(ChannelSegment::wire_len)
                .sum::<usize>()
    }

    /// Byte offset just past channel `k` (1-based), i.e. the stream length
    /// needed to receive the first `k` channels. `k = 0` gives the header.
    pub fn prefix_len(&self, k: usize) -> usize {
        HEADER_LEN
            + self.segments[..k.min(self.segments.len())]
                .iter()
                .map(ChannelSegment::wire_len)
                .sum::<usize>()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CodecError> {
        let count = u8::try_from(self.segments.len())
            .map_err(|_| CodecError::Config("more than 255 channels".into()))?;
        let mut out = Vec::with_capacity(self.total_size());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.image_id.to_be_bytes());
        out.push(count);
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 && s.channel_index <= self.segments[i - 1].channel_index {
                return Err(CodecError::Config(
                    "segments must be in ascending channel order".into(),
                ));
            }
            if s.payload.len() != ChannelSegment::payload_len(s.bit_length) {
                return Err(CodecError::Config(format!(
                    "channel {}: {} payload bytes for {} bits",
                    s.channel_index,
                    s.payload.len(),
                    s.bit_length
                )));
            }
            out.push(s.channel_index);
            out.push(s.mode as u8);
            out.extend_from_slice(&s.bit_length.to_be_bytes());
            out.extend_from_slice(&s.payload);
        }
        Ok(out)
    }

    /// Parses a complete image; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let (header, mut rest) = parse_header(bytes)?;
        let mut segments = Vec::with_capacity(header.channel_count as usize);
        for _ in 0..header.channel_count {
            let (segment, tail) = parse_segment(rest)?
                .ok_or_else(|| CodecError::Parse("stream ends inside a channel".into()))?;
            segments.push(segment);
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(CodecError::Parse(format!("{} trailing bytes", rest.len())));
        }
        Ok(Self {
            image_id: header.image_id,
            segments,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageHeader {
    pub image_id: u32,
    pub channel_count: u8,
}

/// Validates and splits off the 9-byte image header.
pub fn parse_header(bytes: &[u8]) -> Result<(ImageHeader, &[u8]), CodecError> {
    if bytes.len() < HEADER_LEN {
        return Err(CodecError::Parse("image header truncated".into()));
    }
    if bytes[..3] != MAGIC {
        return Err(CodecError::Parse("bad magic".into()));
    }
    if bytes[3] != VERSION {
        return Err(CodecError::Parse(format!(
            "unsupported version {}",
            bytes[3]
        )));
    }
    let image_id = u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    Ok((
        ImageHeader {
            image_id,
            channel_count: bytes[8],
        },
        &bytes[HEADER_LEN..],
    ))
}

/// Parses one channel segment. `Ok(None)` if `bytes` ends before the segment
/// does.
pub fn parse_segment(bytes: &[u8]) -> Result<Option<(ChannelSegment, &[u8])>, CodecError> {
    if bytes.len() < CHANNEL_HEADER_LEN {
        return Ok(None);
    }
    let mode = SegmentMode::try_from(bytes[1])?;
    let bit_length = u32::from_be_bytes([bytes[2], bytes[3], bytes[4], bytes[5]]);
    let n = ChannelSegment::payload_len(bit_length);
    let end = CHANNEL_HEADER_LEN + n;
    if bytes.len() < end {
        return Ok(None);
    }
    Ok(Some((
        ChannelSegment {
            channel_index: bytes[0],
            mode,
            bit_length,
            payload: bytes[CHANNEL_HEADER_LEN..end].to_vec(),
        },
        &bytes[end..],
    )))
}
