//! Threaded client and server roles connected by single-producer,
//! single-consumer queues.
//!
//! Client: encode -> entropy-code -> send. The send role owns the transport
//! and, before every block, checks whether the next image's encoded data is
//! already queued; if so it stops the current image.
//! Server: receive -> inference.

use std::io::{Read, Write};
use std::sync::mpsc::{channel, TryRecvError};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::client::{client_send, ClientState};
use super::framing::{Completion, ReceivedImage};
use super::{ProtocolError, ServerReceiver};
use crate::codec::{Codec, EncodedImage};
use crate::nn::Tensor;

#[derive(Clone, Debug)]
pub struct ThreadedClientConfig {
    /// Capture period `T`.
    pub period: Duration,
    pub block_size: usize,
    pub images: u32,
}

/// Starts the client roles. `encode(i)` produces the latent of image `i`;
/// it is called at `i * period` after start.
pub fn spawn_client<W, F>(
    mut encode: F,
    codec: Codec,
    mut transport: W,
    config: ThreadedClientConfig,
) -> JoinHandle<Result<Vec<ClientState>, ProtocolError>>
where
    W: Write + Send + 'static,
    F: FnMut(u32) -> Result<Tensor, String> + Send + 'static,
{
    thread::spawn(move || {
        let (latent_tx, latent_rx) = channel::<(u32, Tensor)>();
        let (coded_tx, coded_rx) = channel::<EncodedImage>();
        let period = config.period;
        let count = config.images;
        let encoder = thread::spawn(move || -> Result<(), ProtocolError> {
            let start = Instant::now();
            for i in 0..count {
                let due = period * i;
                if let Some(wait) = due.checked_sub(start.elapsed()) {
                    thread::sleep(wait);
                }
                let latent = encode(i).map_err(ProtocolError::Worker)?;
                if latent_tx.send((i, latent)).is_err() {
                    break;
                }
            }
            Ok(())
        });
        let entropy = thread::spawn(move || -> Result<(), ProtocolError> {
            for (id, latent) in latent_rx {
                let image = codec.encode_latent(id, &latent)?;
                if coded_tx.send(image).is_err() {
                    break;
                }
            }
            Ok(())
        });
        let mut states = Vec::new();
        let mut pending: Option<EncodedImage> = None;
        loop {
            let image = match pending.take() {
                Some(img) => img,
                None => match coded_rx.recv() {
                    Ok(img) => img,
                    Err(_) => break,
                },
            };
            let state = client_send(&image, &mut transport, config.block_size, |_| {
                if pending.is_none() {
                    match coded_rx.try_recv() {
                        Ok(next) => pending = Some(next),
                        Err(TryRecvError::Empty | TryRecvError::Disconnected) => {}
                    }
                }
                pending.is_some()
            })?;
            let failed = state.transport_error.is_some();
            states.push(state);
            if failed {
                break;
            }
        }
        drop(transport);
        drop(coded_rx);
        for worker in [encoder, entropy] {
            worker
                .join()
                .map_err(|_| ProtocolError::Worker("client role panicked".into()))??;
        }
        Ok(states)
    })
}

/// Server-side outcome for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ServedImage {
    pub image_id: u32,
    pub usable_channels: usize,
    pub status: Completion,
    pub prediction: usize,
}

/// Starts the receive and inference roles. Finishes when the transport
/// reaches end of stream.
pub fn spawn_server<R, F>(
    transport: R,
    codec: Codec,
    mut classify: F,
) -> JoinHandle<Result<Vec<ServedImage>, ProtocolError>>
where
    R: Read + Send + 'static,
    F: FnMut(&ReceivedImage) -> usize + Send + 'static,
{
    thread::spawn(move || {
        let (tx, rx) = channel::<ReceivedImage>();
        let receiver = thread::spawn(move || -> Result<(), ProtocolError> {
            let mut rx_stream = ServerReceiver::new(transport, codec);
            while let Some(image) = rx_stream.receive()? {
                if tx.send(image).is_err() {
                    break;
                }
            }
            Ok(())
        });
        let served: Vec<ServedImage> = rx
            .iter()
            .map(|image| ServedImage {
                image_id: image.image_id,
                usable_channels: image.usable_channels(),
                status: image.status,
                prediction: classify(&image),
            })
            .collect();
        receiver
            .join()
            .map_err(|_| ProtocolError::Worker("receive role panicked".into()))??;
        Ok(served)
    })
}
