use serde::{Deserialize, Serialize};

use super::metrics::top_n_accuracy;
use super::EvalError;
use crate::protocol::{decode_prefix, truncate};
use crate::sim::Workload;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub model: String,
    pub limit_bytes: usize,
    pub accuracy: f64,
    pub mean_channels: f64,
    /// Mean bytes actually kept after truncation.
    pub mean_bytes: f64,
}

/// Truncates every image's stream to each limit, decodes the prefix and
/// scores the server's output.
pub fn sweep_accuracy_vs_size(
    model: &str,
    workload: &Workload,
    size_limits: &[usize],
    top_n: usize,
) -> Result<Vec<SweepPoint>, EvalError> {
    let images: Vec<_> = workload
        .images
        .iter()
        .filter(|p| p.error.is_none())
        .collect();
    if images.is_empty() {
        return Err(EvalError::Input("workload has no encodable image".into()));
    }
    let streams = images
        .iter()
        .map(|p| p.encoded.to_bytes())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| EvalError::Input(e.to_string()))?;
    let labels: Vec<usize> = images.iter().map(|p| p.label).collect();
    let mut out = Vec::with_capacity(size_limits.len());
    for &limit in size_limits {
        let mut preds = Vec::with_capacity(images.len());
        let mut channels = 0usize;
        let mut kept = 0usize;
        for (p, bytes) in images.iter().zip(&streams) {
            let prefix = truncate(bytes, limit);
            let k = decode_prefix(&workload.codec, prefix).len();
            channels += k;
            kept += prefix.len();
            preds.push(p.probabilities[k].clone());
        }
        let n = images.len() as f64;
        out.push(SweepPoint {
            model: model.to_string(),
            limit_bytes: limit,
            accuracy: top_n_accuracy(&preds, &labels, top_n)?,
            mean_channels: channels as f64 / n,
            mean_bytes: kept as f64 / n,
        });
    }
    Ok(out)
}

/// Evenly spaced limits from 0 to the largest encoded size over all
/// workloads (inclusive).
pub fn default_size_limits(workloads: &[&Workload], points: usize) -> Vec<usize> {
    let max = workloads
        .iter()
        .flat_map(|w| w.images.iter())
        .map(|p| p.encoded.total_size())
        .max()
        .unwrap_or(0);
    let points = points.max(2);
    (0..points)
        .map(|i| (max * i).div_ceil(points - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Codec, HuffmanTable};
    use crate::nn::Tensor;
    use crate::sim::PreparedImage;

    fn workload() -> Workload {
        let tables = (1..=3u8)
            .map(|c| HuffmanTable::from_frequencies(c, &[1; 64]).unwrap())
            .collect();
        let codec = Codec::new(tables, 2, 2).unwrap();
        let images = (0..4)
            .map(|i| {
                let latent = Tensor::full(&[1, 3, 2, 2], 0.5);
                PreparedImage {
                    image_id: i,
                    label: 1,
                    encoded: codec.encode_latent(i, &latent).unwrap(),
                    latent,
                    probabilities: (0..=3)
                        .map(|k| {
                            if k >= 2 {
                                vec![0.2, 0.8]
                            } else {
                                vec![0.9, 0.1]
                            }
                        })
                        .collect(),
                    error: None,
                }
            })
            .collect();
        Workload {
            codec,
            channels: 3,
            images,
        }
    }

    #[test]
    fn limits_bracket_zero_and_full() {
        let w = workload();
        let full = w.images[0].encoded.total_size();
        let curve = sweep_accuracy_vs_size(
            "pnc",
            &w,
            &[0, w.images[0].encoded.prefix_len(2), full, full * 2],
            1,
        )
        .unwrap();
        assert_eq!(curve[0].accuracy, 0.0);
        assert_eq!(curve[0].mean_channels, 0.0);
        assert_eq!(curve[1].accuracy, 1.0);
        assert_eq!(curve[1].mean_channels, 2.0);
        assert_eq!(curve[2].mean_channels, 3.0);
        assert_eq!(curve[3].mean_bytes, full as f64);
    }

    #[test]
    fn default_limits_reach_the_largest_image() {
        let w = workload();
        let limits = default_size_limits(&[&w], 5);
        assert_eq!(limits.len(), 5);
        assert_eq!(limits[0], 0);
        assert_eq!(*limits.last().unwrap(), w.images[0].encoded.total_size());
    }
}
