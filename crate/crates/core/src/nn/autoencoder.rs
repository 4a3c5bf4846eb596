use rand::Rng;

use super::{Activation, Gradients, LayerSpec, NnError, Sequential, Tape, Tensor};

/// Zeroes bottleneck channels `keep..` of every batch item in place.
///
/// The channel axis is axis 1 for both `[n, M]` and `[n, M, h, w]` latents.
pub fn apply_taildrop(z: &mut Tensor, keep: usize) {
    let shape = z.shape().to_vec();
    let channels = shape[1];
    let plane: usize = shape[2..].iter().product();
    if keep >= channels {
        return;
    }
    for n in 0..shape[0] {
        let start = (n * channels + keep) * plane;
        let end = (n + 1) * channels * plane;
        z.data_mut()[start..end].fill(0.0);
    }
}

/// Encoder/decoder pair with an ordered bottleneck of `channels` feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct AutoEncoder {
    pub encoder: Sequential,
    pub decoder: Sequential,
    input_shape: Vec<usize>,
    latent_shape: Vec<usize>,
}

/// Retained forward state of an [`AutoEncoder`].
#[derive(Debug, Default, Clone)]
pub struct AeTape {
    encoder: Tape,
    decoder: Tape,
    keep: Option<usize>,
}

impl AeTape {
    pub fn new() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl AeGradients {
    pub fn add_assign(&mut self, other: &AeGradients) {
        self.encoder.add_assign(&other.encoder);
        self.decoder.add_assign(&other.decoder);
    }

    pub fn scale(&mut self, factor: f64) {
        self.encoder.scale(factor);
        self.decoder.scale(factor);
    }

    pub fn flat(&self) -> Vec<Tensor> {
        self.encoder
            .0
            .iter()
            .chain(&self.decoder.0)
            .cloned()
            .collect()
    }
}

impl AutoEncoder {
    /// `input_shape` is the per-item shape (without the batch axis).
    pub fn new(
        input_shape: &[usize],
        encoder: &[LayerSpec],
        decoder: &[LayerSpec],
        rng: &mut impl Rng,
    ) -> Result<Self, NnError> {
        let encoder = Sequential::new(encoder, rng)?;
        let decoder = Sequential::new(decoder, rng)?;
        Self::from_parts(input_shape, encoder, decoder)
    }

    pub fn from_parts(
        input_shape: &[usize],
        encoder: Sequential,
        decoder: Sequential,
    ) -> Result<Self, NnError> {
        let mut probe = vec![1];
        probe.extend_from_slice(input_shape);
        let latent = encoder.output_shape(&probe)?;
        let out = decoder.output_shape(&latent)?;
        if out != probe {
            return Err(NnError::Shape(format!(
                "decoder output {out:?} does not match input {probe:?}"
            )));
        }
        if let Some(last) = decoder.layers().last() {
            if !matches!(
                last.spec.activation,
                Activation::Clip { .. } | Activation::None
            ) {
                return Err(NnError::Config(
                    "final decoder layer must be clip-by-value or linear".into(),
                ));
            }
        }
        Ok(Self {
            encoder,
            decoder,
            input_shape: input_shape.to_vec(),
            latent_shape: latent[1..].to_vec(),
        })
    }

    /// Number of bottleneck channels `M`.
    pub fn channels(&self) -> usize {
        self.latent_shape[0]
    }

    /// Per-item latent shape `[M, h, w]` (or `[M]` for dense bottlenecks).
    pub fn latent_shape(&self) -> &[usize] {
        &self.latent_shape
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    fn check_keep(&self, keep: Option<usize>) -> Result<(), NnError> {
        match keep {
            Some(k) if k == 0 || k > self.channels() => Err(NnError::Config(format!(
                "taildrop keeps {k} channels; must be within 1..={}",
                self.channels()
            ))),
            _ => Ok(()),
        }
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor, NnError> {
        self.decoder.forward(z)
    }

    /// Full pass; `keep = Some(K)` zeroes channels `K+1..=M` before decoding.
    pub fn forward(&self, x: &Tensor, keep: Option<usize>) -> Result<Tensor, NnError> {
        self.check_keep(keep)?;
        let mut z = self.encode(x)?;
        if let Some(k) = keep {
            apply_taildrop(&mut z, k);
        }
        self.decode(&z)
    }

    pub fn forward_tape(
        &self,
        x: &Tensor,
        keep: Option<usize>,
        tape: &mut AeTape,
    ) -> Result<Tensor, NnError> {
        self.check_keep(keep)?;
        let mut z = self.encoder.forward_tape(x, &mut tape.encoder)?;
        if let Some(k) = keep {
            apply_taildrop(&mut z, k);
        }
        tape.keep = keep;
        self.decoder.forward_tape(&z, &mut tape.decoder)
    }

    /// Gradients of both halves given `dL/d(output)`, plus `dL/d(input)`.
    pub fn backward(
        &self,
        tape: &AeTape,
        grad_out: &Tensor,
    ) -> Result<(AeGradients, Tensor), NnError> {
        if tape.encoder.is_empty() || tape.decoder.is_empty() {
            return Err(NnError::MissingForward);
        }
        let (decoder, mut dz) = self.decoder.backward(&tape.decoder, grad_out)?;
        if let Some(k) = tape.keep {
            // dropped channels were replaced by constants
            apply_taildrop(&mut dz, k);
        }
        let (encoder, dx) = self.encoder.backward(&tape.encoder, &dz)?;
        Ok((AeGradients { encoder, decoder }, dx))
    }
}
