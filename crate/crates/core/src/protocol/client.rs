use std::io::Write;

use super::framing::{Completion, Frame, MAX_BLOCK_SIZE};
use super::ProtocolError;
use crate::codec::EncodedImage;

/// Sender-side progress for one image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientState {
    pub image_id: u32,
    /// Image payload bytes written (framing excluded).
    pub bytes_sent: usize,
    pub total_size: usize,
    pub blocks_sent: usize,
    pub status: Completion,
    pub stop_sent: bool,
    /// Set when the transport failed; the image is then truncated at the
    /// last fully written block.
    pub transport_error: Option<String>,
}

/// Splits a serialized image into block payloads of at most `block_size`.
pub fn blocks(bytes: &[u8], block_size: usize) -> impl Iterator<Item = &[u8]> {
    bytes.chunks(block_size)
}

/// Streams `image` in blocks, consulting `preempt` before each block. When
/// it fires, a stop frame is written and the image ends truncated.
pub fn client_send<W: Write>(
    image: &EncodedImage,
    transport: &mut W,
    block_size: usize,
    mut preempt: impl FnMut(&ClientState) -> bool,
) -> Result<ClientState, ProtocolError> {
    if block_size == 0 || block_size > MAX_BLOCK_SIZE {
        return Err(ProtocolError::Config(format!(
            "block size must be within 1..={MAX_BLOCK_SIZE}"
        )));
    }
    let bytes = image.to_bytes()?;
    let mut state = ClientState {
        image_id: image.image_id,
        bytes_sent: 0,
        total_size: bytes.len(),
        blocks_sent: 0,
        status: Completion::Truncated,
        stop_sent: false,
        transport_error: None,
    };
    for block in blocks(&bytes, block_size) {
        if preempt(&state) {
            let stop = Frame::Stop {
                image_id: image.image_id,
            }
            .encode();
            match transport.write_all(&stop).and_then(|_| transport.flush()) {
                Ok(()) => state.stop_sent = true,
                Err(e) => state.transport_error = Some(e.to_string()),
            }
            return Ok(state);
        }
        if let Err(e) = transport.write_all(&Frame::Block(block.to_vec()).encode()) {
            state.transport_error = Some(e.to_string());
            return Ok(state);
        }
        state.bytes_sent += block.len();
        state.blocks_sent += 1;
    }
    if let Err(e) = transport.flush() {
        state.transport_error = Some(e.to_string());
        return Ok(state);
    }
    state.status = Completion::Complete;
    Ok(state)
}
