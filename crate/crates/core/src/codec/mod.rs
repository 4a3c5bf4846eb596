//! 64-level feature quantization, per-channel canonical Huffman coding and
//! the image wire format.

mod bits;
mod huffman;
mod wire;

pub use bits::{pack_raw6, unpack_raw6, BitReader, BitWriter};
pub use huffman::{build_huffman_tables, parse_tables, write_tables, HuffmanTable, ALPHABET};
pub use wire::{
    parse_header, parse_segment, ChannelSegment, EncodedImage, ImageHeader, SegmentMode,
    CHANNEL_HEADER_LEN, HEADER_LEN, MAGIC, VERSION,
};

use crate::nn::Tensor;

/// Number of quantization levels; symbols are `0..LEVELS`.
pub const LEVELS: u8 = 64;
const STEP: f64 = (LEVELS - 1) as f64;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CodecError {
    #[error("value {0} outside the clip range [0, 1]")]
    OutOfRange(f64),
    #[error("huffman table: {0}")]
    Table(String),
    #[error("decode failed: {0}")]
    Decode(String),
    #[error("malformed image stream: {0}")]
    Parse(String),
    #[error("invalid codec configuration: {0}")]
    Config(String),
}

/// One latent channel as 6-bit symbols. `channel_index` counts from 1 in
/// importance order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedChannel {
    pub channel_index: u8,
    pub symbols: Vec<u8>,
}

/// Round-half-up of `value * 63`.
pub fn quantize_value(value: f64) -> Result<u8, CodecError> {
    if !(0.0..=1.0).contains(&value) {
        return Err(CodecError::OutOfRange(value));
    }
    Ok((value * STEP + 0.5).floor() as u8)
}

pub fn dequantize_value(symbol: u8) -> f64 {
    symbol as f64 / STEP
}

pub fn quantize_channel(channel_index: u8, values: &[f64]) -> Result<QuantizedChannel, CodecError> {
    let symbols = values
        .iter()
        .map(|&v| quantize_value(v))
        .collect::<Result<_, _>>()?;
    Ok(QuantizedChannel {
        channel_index,
        symbols,
    })
}

pub fn dequantize_channel(q: &QuantizedChannel) -> Vec<f64> {
    q.symbols.iter().map(|&s| dequantize_value(s)).collect()
}

/// Splits a `[M, h, w]` or `[1, M, h, w]` latent into quantized channels
/// `1..=M`.
pub fn quantize_latent(latent: &Tensor) -> Result<Vec<QuantizedChannel>, CodecError> {
    let shape = latent.shape();
    let (m, plane) = match shape {
        [m, h, w] => (*m, h * w),
        [1, m, h, w] => (*m, h * w),
        _ => {
            return Err(CodecError::Config(format!(
                "latent must be [M, h, w] or [1, M, h, w], got {shape:?}"
            )))
        }
    };
    if m > u8::MAX as usize {
        return Err(CodecError::Config(format!(
            "{m} channels exceed the wire limit"
        )));
    }
    latent
        .data()
        .chunks(plane.max(1))
        .take(m)
        .enumerate()
        .map(|(c, values)| quantize_channel(c as u8 + 1, values))
        .collect()
}

/// Per-channel tables plus the channel plane size; encodes whole latents into
/// [`EncodedImage`]s and decodes segments back.
#[derive(Clone, Debug, PartialEq)]
pub struct Codec {
    tables: Vec<HuffmanTable>,
    plane: usize,
}

impl Codec {
    /// `tables[i]` must code channel `i + 1`.
    pub fn new(tables: Vec<HuffmanTable>, height: usize, width: usize) -> Result<Self, CodecError> {
        for (i, t) in tables.iter().enumerate() {
            if t.channel_index() as usize != i + 1 {
                return Err(CodecError::Config(format!(
                    "table {} is for channel {}",
                    i + 1,
                    t.channel_index()
                )));
            }
        }
        if height * width == 0 {
            return Err(CodecError::Config("empty channel plane".into()));
        }
        Ok(Self {
            tables,
            plane: height * width,
        })
    }

    pub fn tables(&self) -> &[HuffmanTable] {
        &self.tables
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    /// Symbols per channel (`h * w`).
    pub fn plane(&self) -> usize {
        self.plane
    }

    /// Huffman or raw-6 payload for one channel, whichever is smaller
    /// (Huffman on ties).
    pub fn encode_channel(&self, q: &QuantizedChannel) -> Result<ChannelSegment, CodecError> {
        let table = self.table(q.channel_index)?;
        if q.symbols.len() != self.plane {
            return Err(CodecError::Config(format!(
                "channel has {} symbols, expected {}",
                q.symbols.len(),
                self.plane
            )));
        }
        let (payload, bit_length) = table.encode(&q.symbols)?;
        let (raw, raw_bits) = pack_raw6(&q.symbols)?;
        let (mode, payload, bit_length) = if raw.len() < payload.len() {
            (SegmentMode::Raw6, raw, raw_bits)
        } else {
            (SegmentMode::Huffman, payload, bit_length)
        };
        Ok(ChannelSegment {
            channel_index: q.channel_index,
            mode,
            bit_length,
            payload,
        })
    }

    pub fn decode_channel(&self, segment: &ChannelSegment) -> Result<QuantizedChannel, CodecError> {
        let symbols = match segment.mode {
            SegmentMode::Huffman => self.table(segment.channel_index)?.decode(
                &segment.payload,
                segment.bit_length,
                self.plane,
            )?,
            SegmentMode::Raw6 => unpack_raw6(&segment.payload, segment.bit_length, self.plane)?,
        };
        Ok(QuantizedChannel {
            channel_index: segment.channel_index,
            symbols,
        })
    }

    /// Quantizes and entropy-codes every channel of `latent` in order.
    pub fn encode_latent(
        &self,
        image_id: u32,
        latent: &Tensor,
    ) -> Result<EncodedImage, CodecError> {
        let channels = quantize_latent(latent)?;
        if channels.len() != self.tables.len() {
            return Err(CodecError::Config(format!(
                "latent has {} channels, codec {}",
                channels.len(),
                self.tables.len()
            )));
        }
        let segments = channels
            .iter()
            .map(|q| self.encode_channel(q))
            .collect::<Result<_, _>>()?;
        Ok(EncodedImage { image_id, segments })
    }

    fn table(&self, channel_index: u8) -> Result<&HuffmanTable, CodecError> {
        (channel_index as usize)
            .checked_sub(1)
            .and_then(|i| self.tables.get(i))
            .ok_or_else(|| CodecError::Table(format!("no table for channel {channel_index}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantizer_anchors() {
        assert_eq!(quantize_value(0.0).unwrap(), 0);
        assert_eq!(quantize_value(1.0).unwrap(), 63);
        assert_eq!(quantize_value(0.5).unwrap(), 32);
        assert_eq!(dequantize_value(0), 0.0);
        assert_eq!(dequantize_value(63), 1.0);
        assert!(matches!(
            quantize_value(-0.01),
            Err(CodecError::OutOfRange(_))
        ));
        assert!(quantize_value(f64::NAN).is_err());
    }

    #[test]
    fn every_symbol_survives_a_round_trip() {
        for s in 0..LEVELS {
            assert_eq!(quantize_value(dequantize_value(s)).unwrap(), s);
        }
    }

    #[test]
    fn quantization_error_is_at_most_half_a_step() {
        for i in 0..=10_000 {
            let v = i as f64 / 10_000.0;
            let back = dequantize_value(quantize_value(v).unwrap());
            assert!((back - v).abs() <= 0.5 / 63.0 + 1e-15);
        }
    }

    #[test]
    fn latent_split_keeps_channel_order() {
        let mut data = vec![0.0; 2 * 4];
        data[4..].fill(1.0);
        let z = Tensor::from_vec(&[1, 2, 2, 2], data).unwrap();
        let q = quantize_latent(&z).unwrap();
        assert_eq!(q[0].channel_index, 1);
        assert_eq!(q[0].symbols, vec![0; 4]);
        assert_eq!(q[1].channel_index, 2);
        assert_eq!(q[1].symbols, vec![63; 4]);
    }

    #[test]
    fn codec_picks_raw6_for_incompressible_channels() {
        let uniform = HuffmanTable::from_frequencies(1, &[1; 64]).unwrap();
        let skewed = {
            let mut f = [1u64; 64];
            f[0] = 10_000;
            HuffmanTable::from_frequencies(2, &f).unwrap()
        };
        let codec = Codec::new(vec![uniform, skewed], 4, 4).unwrap();
        // channel 2's table penalises every symbol but 0
        let spread: Vec<u8> = (0..16).map(|i| (i * 4) as u8).collect();
        let seg = codec
            .encode_channel(&QuantizedChannel {
                channel_index: 2,
                symbols: spread.clone(),
            })
            .unwrap();
        assert_eq!(seg.mode, SegmentMode::Raw6);
        assert_eq!(seg.payload.len(), 12);
        assert_eq!(codec.decode_channel(&seg).unwrap().symbols, spread);
        let zeros = codec
            .encode_channel(&QuantizedChannel {
                channel_index: 2,
                symbols: vec![0; 16],
            })
            .unwrap();
        assert_eq!(zeros.mode, SegmentMode::Huffman);
        assert_eq!(zeros.bit_length, 16);
    }

    #[test]
    fn codec_rejects_misordered_tables() {
        let t = HuffmanTable::from_frequencies(2, &[1; 64]).unwrap();
        assert!(Codec::new(vec![t], 2, 2).is_err());
    }
}
