//! Stream an encoded image in framed blocks, preempt it partway and decode the
//! usable channel prefix on the receiving side.
//!
//! cargo run --example progressive_stream

use pnc::codec::{Codec, HuffmanTable};
use pnc::nn::Tensor;
use pnc::protocol::{client_send, decode_prefix, truncate, StreamParser};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (m, h, w) = (4, 8, 8);
    let tables = (1..=m as u8)
        .map(|c| HuffmanTable::from_frequencies(c, &[1; 64]))
        .collect::<Result<Vec<_>, _>>()?;
    let codec = Codec::new(tables, h, w)?;
    let latent = Tensor::from_vec(
        &[1, m, h, w],
        (0..m * h * w).map(|i| (i % 64) as f64 / 63.0).collect(),
    )?;
    let image = codec.encode_latent(7, &latent)?;
    let bytes = image.to_bytes()?;
    println!("serialized image: {} bytes", bytes.len());

    for budget in [
        0,
        image.prefix_len(1),
        image.prefix_len(2) + 10,
        bytes.len(),
    ] {
        let k = decode_prefix(&codec, truncate(&bytes, budget)).len();
        println!("  budget {budget:>3} B -> {k} usable channels");
    }

    let mut wire = Vec::new();
    let state = client_send(&image, &mut wire, 32, |s| s.bytes_sent >= 100)?;
    println!(
        "client sent {} of {} bytes in {} blocks, stop frame: {}",
        state.bytes_sent, state.total_size, state.blocks_sent, state.stop_sent
    );

    let mut parser = StreamParser::new(codec);
    for received in parser.push(&wire) {
        println!(
            "server: image {} {:?}, {} bytes, K' = {}",
            received.image_id,
            received.status,
            received.raw.len(),
            received.usable_channels()
        );
    }
    Ok(())
}
