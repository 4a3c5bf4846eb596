use rand::Rng;

use super::{Layer, LayerSpec, NnError, Tensor};

/// Parameter gradients, flat and aligned with [`Sequential::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &[&Tensor]) -> Self {
        Gradients(params.iter().map(|p| Tensor::zeros(p.shape())).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in &mut self.0 {
            t.scale(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.iter().all(Tensor::all_finite)
    }
}

/// Intermediates retained by a forward pass for the matching backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    records: Vec<(Tensor, Tensor)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

/// A feed-forward stack of layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(specs: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        let layers = specs
            .iter()
            .map(|s| Layer::init(*s, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| std::iter::once(&l.weight).chain(l.bias.as_ref()))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| std::iter::once(&mut l.weight).chain(l.bias.as_mut()))
            .collect()
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let mut shape = input.to_vec();
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(shape)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        let mut x = input.clone();
        for layer in &self.layers {
            let act = layer.spec.activation;
            x = layer.affine(&x)?.map(|v| act.apply(v));
        }
        Ok(x)
    }

    /// Forward pass that records what [`Sequential::backward`] needs.
    pub fn forward_tape(&self, input: &Tensor, tape: &mut Tape) -> Result<Tensor, NnError> {
        tape.clear();
        let mut x = input.clone();
        for layer in &self.layers {
            let pre = layer.affine(&x)?;
            let act = layer.spec.activation;
            let out = pre.map(|v| act.apply(v));
            tape.records.push((x, pre));
            x = out;
        }
        Ok(x)
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, tape: &Tape, grad_out: &Tensor) -> Result<(Gradients, Tensor), NnError> {
        let (grads, dx) = self.backward_impl(tape, grad_out, true)?;
        Ok((Gradients(grads), dx))
    }

    /// Input gradient only; parameters are treated as constants.
    pub fn backward_input(&self, tape: &Tape, grad_out: &Tensor) -> Result<Tensor, NnError> {
        Ok(self.backward_impl(tape, grad_out, false)?.1)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        grad_out: &Tensor,
        want_params: bool,
    ) -> Result<(Vec<Tensor>, Tensor), NnError> {
        if tape.records.len() != self.layers.len() || tape.is_empty() {
            return Err(NnError::MissingForward);
        }
        let mut grads: Vec<Vec<Tensor>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (layer, (input, pre)) in self.layers.iter().zip(&tape.records).rev() {
            if g.shape() != pre.shape() {
                return Err(NnError::Shape(format!(
                    "upstream gradient {:?} does not match layer output {:?}",
                    g.shape(),
                    pre.shape()
                )));
            }
            let act = layer.spec.activation;
            if act != super::Activation::None {
                for (gv, &p) in g.data_mut().iter_mut().zip(pre.data()) {
                    *gv *= act.derivative(p);
                }
            }
            let (dx, pg) = layer.affine_backward(input, &g, want_params);
            grads.push(pg);
            g = dx;
        }
        grads.reverse();
        Ok((grads.into_iter().flatten().collect(), g))
    }
}
