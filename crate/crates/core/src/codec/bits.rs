use super::{CodecError, LEVELS};

/// MSB-first bit packer; the final partial byte is zero-padded.
#[derive(Default, Debug)]
pub struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends the low `len` bits of `code`, most significant first.
    pub fn write(&mut self, code: u64, len: u8) {
        for i in (0..len).rev() {
            let bit = (code >> i) & 1;
            if self.bits.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if bit == 1 {
                let last = self.bytes.len() - 1;
                self.bytes[last] |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.bits
    }

    pub fn finish(self) -> (Vec<u8>, u64) {
        (self.bytes, self.bits)
    }
}

pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    end: u64,
}

impl<'a> BitReader<'a> {
    /// Reads at most `bit_length` bits; fails if the bytes are too short.
    pub fn new(bytes: &'a [u8], bit_length: u64) -> Result<Self, CodecError> {
        if bit_length > bytes.len() as u64 * 8 {
            return Err(CodecError::Decode(format!(
                "{bit_length} bits declared but only {} bytes present",
                bytes.len()
            )));
        }
        Ok(Self {
            bytes,
            pos: 0,
            end: bit_length,
        })
    }

    pub fn read_bit(&mut self) -> Option<u8> {
        if self.pos >= self.end {
            return None;
        }
        let byte = self.bytes[(self.pos / 8) as usize];
        let bit = (byte >> (7 - self.pos % 8)) & 1;
        self.pos += 1;
        Some(bit)
    }

    pub fn read(&mut self, len: u8) -> Option<u64> {
        let mut v = 0;
        for _ in 0..len {
            v = (v << 1) | self.read_bit()? as u64;
        }
        Some(v)
    }

    pub fn remaining(&self) -> u64 {
        self.end - self.pos
    }
}

/// Packs 6-bit symbols without entropy coding: `ceil(6n / 8)` bytes.
pub fn pack_raw6(symbols: &[u8]) -> Result<(Vec<u8>, u32), CodecError> {
    let mut w = BitWriter::new();
    for &s in symbols {
        if s >= LEVELS {
            return Err(CodecError::Table(format!("symbol {s} is not 6-bit")));
        }
        w.write(s as u64, 6);
    }
    let (bytes, bits) = w.finish();
    Ok((bytes, bits as u32))
}

pub fn unpack_raw6(payload: &[u8], bit_length: u32, count: usize) -> Result<Vec<u8>, CodecError> {
    if bit_length as u64 != count as u64 * 6 {
        return Err(CodecError::Decode(format!(
            "raw6 segment of {bit_length} bits cannot hold {count} symbols"
        )));
    }
    let mut r = BitReader::new(payload, bit_length as u64)?;
    (0..count)
        .map(|_| {
            r.read(6)
                .map(|v| v as u8)
                .ok_or_else(|| CodecError::Decode("raw6 stream ended early".into()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_with_zero_padding() {
        let mut w = BitWriter::new();
        w.write(0b1, 1);
        w.write(0b01, 2);
        w.write(0b11111, 5);
        w.write(0b1, 1);
        let (bytes, bits) = w.finish();
        assert_eq!(bits, 9);
        assert_eq!(bytes, vec![0b1011_1111, 0b1000_0000]);
        let mut r = BitReader::new(&bytes, bits).unwrap();
        assert_eq!(r.read(3), Some(0b101));
        assert_eq!(r.read(6), Some(0b111111));
        assert_eq!(r.read_bit(), None);
    }

    #[test]
    fn raw6_is_three_quarters_of_bytes() {
        for n in [4usize, 64, 256, 1024] {
            let symbols: Vec<u8> = (0..n).map(|i| (i % 64) as u8).collect();
            let (packed, bits) = pack_raw6(&symbols).unwrap();
            assert_eq!(packed.len() * 4, n * 3);
            assert_eq!(unpack_raw6(&packed, bits, n).unwrap(), symbols);
        }
    }

    #[test]
    fn short_payload_is_an_error() {
        assert!(BitReader::new(&[0u8], 9).is_err());
        let (packed, bits) = pack_raw6(&[1, 2, 3, 4]).unwrap();
        assert!(unpack_raw6(&packed[..2], bits, 4).is_err());
    }
}
