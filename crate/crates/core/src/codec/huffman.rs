//! Canonical per-channel Huffman tables.
//!
//! Table file format (UTF-8 text, `#` starts a comment line):
//!
//! ```text
//! pnc-huffman-tables 1
//! 1: 6 6 5 ... (64 code lengths, symbol 0 first; 0 = no codeword)
//! 2: ...
//! ```
//!
//! Codewords are rebuilt canonically from the lengths: symbols sorted by
//! `(length, symbol)` receive consecutive codes.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use super::bits::{BitReader, BitWriter};
use super::{CodecError, QuantizedChannel};

/// Symbols per table.
pub const ALPHABET: usize = 64;
const MAX_CODE_LEN: u8 = 63;
const FILE_HEADER: &str = "pnc-huffman-tables 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HuffmanTable {
    channel_index: u8,
    lengths: Vec<u8>,
    codes: Vec<u64>,
    /// Symbols in canonical order.
    sorted: Vec<u8>,
    /// Per code length: first canonical code, index into `sorted`, count.
    first_code: Vec<u64>,
    first_index: Vec<usize>,
    count: Vec<usize>,
}

impl HuffmanTable {
    /// Optimal code lengths for `frequencies` (one entry per symbol, at most
    /// 64). Zero-frequency symbols get no codeword. Ties merge the node with
    /// the smaller symbol (leaves) or earlier creation (internal) first.
    pub fn from_frequencies(channel_index: u8, frequencies: &[u64]) -> Result<Self, CodecError> {
        if frequencies.len() > ALPHABET {
            return Err(CodecError::Table(format!(
                "{} symbols exceed the 64-symbol alphabet",
                frequencies.len()
            )));
        }
        let active: Vec<usize> = (0..frequencies.len())
            .filter(|&s| frequencies[s] > 0)
            .collect();
        let mut lengths = vec![0u8; frequencies.len()];
        match active.len() {
            0 => {
                return Err(CodecError::Table(
                    "no symbol has a nonzero frequency".into(),
                ))
            }
            1 => lengths[active[0]] = 1,
            _ => {
                let mut parent: Vec<usize> = vec![usize::MAX; ALPHABET + active.len()];
                let mut heap = BinaryHeap::new();
                for &s in &active {
                    heap.push(Reverse((frequencies[s] as u128, s)));
                }
                let mut next = ALPHABET;
                while heap.len() > 1 {
                    let Reverse((wa, a)) = heap.pop().expect("two nodes");
                    let Reverse((wb, b)) = heap.pop().expect("two nodes");
                    parent[a] = next;
                    parent[b] = next;
                    heap.push(Reverse((wa + wb, next)));
                    next += 1;
                }
                for &s in &active {
                    let mut depth = 0u32;
                    let mut node = s;
                    while parent[node] != usize::MAX {
                        node = parent[node];
                        depth += 1;
                    }
                    if depth > MAX_CODE_LEN as u32 {
                        return Err(CodecError::Table(format!("code length {depth} too long")));
                    }
                    lengths[s] = depth as u8;
                }
            }
        }
        Self::from_lengths(channel_index, &lengths)
    }

    /// Canonical table from explicit code lengths (0 = symbol absent).
    pub fn from_lengths(channel_index: u8, lengths: &[u8]) -> Result<Self, CodecError> {
        if lengths.len() > ALPHABET {
            return Err(CodecError::Table(format!(
                "{} code lengths given",
                lengths.len()
            )));
        }
        let max = lengths.iter().copied().max().unwrap_or(0);
        if max == 0 {
            return Err(CodecError::Table("table has no codewords".into()));
        }
        if max > MAX_CODE_LEN {
            return Err(CodecError::Table(format!("code length {max} too long")));
        }
        let kraft: u128 = lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 1u128 << (max - l))
            .sum();
        if kraft > 1u128 << max {
            return Err(CodecError::Table(
                "code lengths violate the Kraft inequality".into(),
            ));
        }
        let mut sorted: Vec<u8> = (0..lengths.len() as u8)
            .filter(|&s| lengths[s as usize] > 0)
            .collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));
        let levels = max as usize + 1;
        let mut codes = vec![0u64; lengths.len()];
        let mut first_code = vec![0u64; levels];
        let mut first_index = vec![0usize; levels];
        let mut count = vec![0usize; levels];
        let mut code = 0u64;
        let mut prev = lengths[sorted[0] as usize];
        for (i, &s) in sorted.iter().enumerate() {
            let len = lengths[s as usize];
            code <<= len - prev;
            prev = len;
            if count[len as usize] == 0 {
                first_code[len as usize] = code;
                first_index[len as usize] = i;
            }
            count[len as usize] += 1;
            codes[s as usize] = code;
            code += 1;
        }
        Ok(Self {
            channel_index,
            lengths: lengths.to_vec(),
            codes,
            sorted,
            first_code,
            first_index,
            count,
        })
    }

    pub fn channel_index(&self) -> u8 {
        self.channel_index
    }

    /// Code length per symbol; 0 means the symbol has no codeword.
    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    /// `(code, length)` of `symbol`, if it has one.
    pub fn codeword(&self, symbol: u8) -> Option<(u64, u8)> {
        let len = *self.lengths.get(symbol as usize)?;
        (len > 0).then(|| (self.codes[symbol as usize], len))
    }

    pub fn kraft_sum(&self) -> f64 {
        self.lengths
            .iter()
            .filter(|&&l| l > 0)
            .map(|&l| 0.5f64.powi(l as i32))
            .sum()
    }

    /// Mean code length under `frequencies` (normalised internally).
    pub fn expected_length(&self, frequencies: &[f64]) -> f64 {
        let total: f64 = frequencies.iter().sum();
        frequencies
            .iter()
            .zip(&self.lengths)
            .map(|(f, &l)| f * l as f64)
            .sum::<f64>()
            / total
    }

    /// Bit-packed codewords and the exact bit count (padding excluded).
    pub fn encode(&self, symbols: &[u8]) -> Result<(Vec<u8>, u32), CodecError> {
        if symbols.is_empty() {
            return Err(CodecError::Table("cannot encode an empty channel".into()));
        }
        let mut w = BitWriter::new();
        for &s in symbols {
            let (code, len) = self.codeword(s).ok_or_else(|| {
                CodecError::Table(format!(
                    "symbol {s} has no codeword in table {}",
                    self.channel_index
                ))
            })?;
            w.write(code, len);
        }
        let (bytes, bits) = w.finish();
        let bits = u32::try_from(bits)
            .map_err(|_| CodecError::Table("segment longer than 2^32 bits".into()))?;
        Ok((bytes, bits))
    }

    /// Decodes exactly `count` symbols that must consume exactly
    /// `bit_length` bits.
    pub fn decode(
        &self,
        payload: &[u8],
        bit_length: u32,
        count: usize,
    ) -> Result<Vec<u8>, CodecError> {
        if count == 0 {
            return Err(CodecError::Decode(
                "channel must hold at least one symbol".into(),
            ));
        }
        let mut r = BitReader::new(payload, bit_length as u64)?;
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            out.push(self.decode_symbol(&mut r)?);
        }
        if r.remaining() != 0 {
            return Err(CodecError::Decode(format!(
                "{} bits left after {count} symbols",
                r.remaining()
            )));
        }
        Ok(out)
    }

    fn decode_symbol(&self, r: &mut BitReader<'_>) -> Result<u8, CodecError> {
        let mut code = 0u64;
        for len in 1..self.count.len() {
            let bit = r
                .read_bit()
                .ok_or_else(|| CodecError::Decode("stream ends inside a codeword".into()))?;
            code = (code << 1) | bit as u64;
            let n = self.count[len];
            if n > 0 && code >= self.first_code[len] && code - self.first_code[len] < n as u64 {
                return Ok(
                    self.sorted[self.first_index[len] + (code - self.first_code[len]) as usize]
                );
            }
        }
        Err(CodecError::Decode("bit pattern is not a codeword".into()))
    }
}

/// One table per channel `1..=channels`, built from add-one-smoothed symbol
/// counts so that every symbol is encodable.
pub fn build_huffman_tables(
    corpus: &[QuantizedChannel],
    channels: usize,
) -> Result<Vec<HuffmanTable>, CodecError> {
    if channels == 0 || channels > u8::MAX as usize {
        return Err(CodecError::Config(format!(
            "cannot build {channels} tables"
        )));
    }
    let mut counts = vec![[1u64; ALPHABET]; channels];
    let mut seen = vec![false; channels];
    for q in corpus {
        let c = (q.channel_index as usize)
            .checked_sub(1)
            .filter(|&c| c < channels)
            .ok_or_else(|| {
                CodecError::Config(format!("corpus channel {} out of range", q.channel_index))
            })?;
        seen[c] = true;
        for &s in &q.symbols {
            let slot = counts[c]
                .get_mut(s as usize)
                .ok_or_else(|| CodecError::Config(format!("symbol {s} is not 6-bit")))?;
            *slot += 1;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(CodecError::Config(format!(
            "no corpus samples for channel {}",
            missing + 1
        )));
    }
    counts
        .iter()
        .enumerate()
        .map(|(c, f)| HuffmanTable::from_frequencies(c as u8 + 1, f))
        .collect()
}

pub fn write_tables(tables: &[HuffmanTable]) -> String {
    let mut out = String::from(FILE_HEADER);
    out.push('\n');
    for t in tables {
        let _ = write!(out, "{}:", t.channel_index);
        for l in &t.lengths {
            let _ = write!(out, " {l}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_tables(text: &str) -> Result<Vec<HuffmanTable>, CodecError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    if lines.next() != Some(FILE_HEADER) {
        return Err(CodecError::Parse(format!(
            "table file must start with `{FILE_HEADER}`"
        )));
    }
    lines
        .map(|line| {
            let (index, rest) = line
                .split_once(':')
                .ok_or_else(|| CodecError::Parse(format!("missing `:` in `{line}`")))?;
            let index: u8 = index
                .trim()
                .parse()
                .map_err(|_| CodecError::Parse(format!("bad channel index in `{line}`")))?;
            let lengths = rest
                .split_whitespace()
                .map(|v| v.parse::<u8>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CodecError::Parse(format!("bad code length in `{line}`")))?;
            if lengths.len() != ALPHABET {
                return Err(CodecError::Parse(format!(
                    "channel {index}: {} code lengths, expected {ALPHABET}",
                    lengths.len()
                )));
            }
            HuffmanTable::from_lengths(index, &lengths)
        })
        .collect()
}
