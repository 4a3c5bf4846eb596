//! Quantize a latent, build per-channel canonical Huffman tables and round
//! trip it through the wire format.
//!
//! cargo run --example huffman_codec

use pnc::codec::{build_huffman_tables, quantize_latent, Codec, EncodedImage, SegmentMode};
use pnc::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, h, w) = (4, 8, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    // Later channels are increasingly concentrated near zero.
    let latent = |rng: &mut ChaCha8Rng| {
        let data = (0..m * h * w)
            .map(|i| {
                rng.gen_range(0.0..1.0f64)
                    .powi(1 + (i / (h * w)) as i32 * 2)
            })
            .collect();
        Tensor::from_vec(&[1, m, h, w], data)
    };

    let mut corpus = Vec::new();
    for _ in 0..200 {
        corpus.extend(quantize_latent(&latent(&mut rng)?)?);
    }
    let tables = build_huffman_tables(&corpus, m)?;
    let codec = Codec::new(tables, h, w)?;

    let z = latent(&mut rng)?;
    let encoded = codec.encode_latent(42, &z)?;
    let bytes = encoded.to_bytes()?;
    println!(
        "image 42: {} bytes on the wire (8-bit raw would be {})",
        bytes.len(),
        m * h * w
    );
    for (k, seg) in encoded.segments.iter().enumerate() {
        let mode = if seg.mode == SegmentMode::Raw6 {
            "raw6"
        } else {
            "huffman"
        };
        println!(
            "  channel {}  {:>3} bytes  {mode}  prefix through here {} bytes",
            seg.channel_index,
            seg.wire_len(),
            encoded.prefix_len(k + 1)
        );
    }

    let back = EncodedImage::from_bytes(&bytes)?;
    let original = quantize_latent(&z)?;
    for (seg, q) in back.segments.iter().zip(&original) {
        assert_eq!(&codec.decode_channel(seg)?, q);
    }
    println!("decoded symbols match exactly");
    Ok(())
}
