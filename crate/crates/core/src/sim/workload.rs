use crate::codec::{Codec, EncodedImage};
use crate::nn::{AutoEncoder, Tensor};
use crate::protocol::{assemble_latent, decode_prefix, Completion, ReceivedImage};
use crate::train::Teacher;

use super::SimError;

const CHUNK: usize = 64;

/// One image ready for transmission: its encoded stream and the class
/// probabilities the server would compute from each channel prefix.
#[derive(Clone, Debug)]
pub struct PreparedImage {
    pub image_id: u32,
    pub label: usize,
    /// Quantized latent `[1, M, h, w]` as the encoder emits it.
    pub latent: Tensor,
    pub encoded: EncodedImage,
    /// `probabilities[k]` for `k = 0..=M` received channels.
    pub probabilities: Vec<Vec<f64>>,
    pub error: Option<String>,
}

impl PreparedImage {
    pub fn failed(image_id: u32, label: usize, error: String) -> Self {
        Self {
            image_id,
            label,
            latent: Tensor::zeros(&[1, 1]),
            encoded: EncodedImage {
                image_id,
                segments: Vec::new(),
            },
            probabilities: Vec::new(),
            error: Some(error),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Workload {
    pub codec: Codec,
    pub channels: usize,
    pub images: Vec<PreparedImage>,
}

impl Workload {
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Mean serialized size in bytes over images that encoded successfully.
    pub fn mean_encoded_size(&self) -> f64 {
        let sizes: Vec<usize> = self
            .images
            .iter()
            .filter(|p| p.error.is_none())
            .map(|p| p.encoded.total_size())
            .collect();
        if sizes.is_empty() {
            0.0
        } else {
            sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
        }
    }
}

/// 1-based rank of `label` under `probs`, ties broken toward the lower
/// class index.
pub fn class_rank(probs: &[f64], label: usize) -> usize {
    let p = probs[label];
    1 + probs
        .iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < label))
        .count()
}

pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (j, &q) in probs.iter().enumerate() {
        if q > probs[best] {
            best = j;
        }
    }
    best
}

/// Encodes every image and precomputes the server's output for each
/// received-channel count `0..=M`. Failures become per-image errors.
pub fn prepare_workload(
    ae: &AutoEncoder,
    teacher: &Teacher,
    codec: &Codec,
    images: &Tensor,
    labels: &[usize],
    ids: &[u32],
) -> Result<Workload, SimError> {
    let n = images.batch();
    if labels.len() != n || ids.len() != n {
        return Err(SimError::Config(format!(
            "{n} images but {} labels and {} ids",
            labels.len(),
            ids.len()
        )));
    }
    let channels = ae.channels();
    let (h, w) = match ae.latent_shape() {
        [_, h, w] => (*h, *w),
        other => {
            return Err(SimError::Config(format!(
                "unexpected latent shape {other:?}"
            )))
        }
    };
    if codec.channels() != channels || codec.plane() != h * w {
        return Err(SimError::Config(format!(
            "codec covers {} channels of {} symbols; model emits {channels} of {}",
            codec.channels(),
            codec.plane(),
            h * w
        )));
    }
    let mut prepared = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let batch = crate::train::gather(images, &idx);
        let z = ae.encode(&batch)?;
        for (j, i) in idx.iter().copied().enumerate() {
            match codec.encode_latent(ids[i], &z.item(j)) {
                Ok(encoded) => prepared.push(PreparedImage {
                    image_id: ids[i],
                    label: labels[i],
                    latent: z.item(j),
                    encoded,
                    probabilities: Vec::with_capacity(channels + 1),
                    error: None,
                }),
                Err(e) => prepared.push(PreparedImage::failed(ids[i], labels[i], e.to_string())),
            }
        }
    }
    for k in 0..=channels {
        let ok: Vec<usize> = (0..n).filter(|&i| prepared[i].error.is_none()).collect();
        for chunk in ok.chunks(CHUNK) {
            let mut latents = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let p = &prepared[i];
                let bytes = p.encoded.to_bytes()?;
                let raw = &bytes[..p.encoded.prefix_len(k)];
                let received = ReceivedImage {
                    image_id: p.image_id,
                    raw: raw.to_vec(),
                    channels: decode_prefix(codec, raw),
                    status: if k == channels {
                        Completion::Complete
                    } else {
                        Completion::Truncated
                    },
                };
                latents.push(assemble_latent(&received, channels, h, w)?);
            }
            let refs: Vec<&Tensor> = latents.iter().collect();
            let probs = teacher.predict_proba(&ae.decode(&Tensor::stack(&refs)?)?)?;
            let classes = probs.item_len();
            for (j, &i) in chunk.iter().enumerate() {
                prepared[i]
                    .probabilities
                    .push(probs.data()[j * classes..(j + 1) * classes].to_vec());
            }
        }
    }
    Ok(Workload {
        codec: codec.clone(),
        channels,
        images: prepared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_with_ties_prefers_lower_index() {
        let p = [0.1, 0.3, 0.3, 0.2, 0.1];
        assert_eq!(class_rank(&p, 1), 1);
        assert_eq!(class_rank(&p, 2), 2);
        assert_eq!(class_rank(&p, 3), 3);
        assert_eq!(class_rank(&p, 0), 4);
        assert_eq!(class_rank(&p, 4), 5);
        assert_eq!(argmax(&p), 1);
    }
}
