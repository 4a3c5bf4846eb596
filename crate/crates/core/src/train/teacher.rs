use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::softmax_cross_entropy;
use super::{TeacherConfig, TrainError};
use crate::nn::{
    softmax, Activation, AdamState, Checkpoint, LayerSpec, NnError, Sequential, Tape, Tensor,
};

/// Frozen target classifier `h(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    pub net: Sequential,
    pub classes: usize,
}

impl Teacher {
    pub fn new(
        image_shape: [usize; 3],
        classes: usize,
        widths: [usize; 2],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, TrainError> {
        let [c, h, w] = image_shape;
        let flat = widths[1] * h.div_ceil(4) * w.div_ceil(4);
        let net = Sequential::new(
            &[
                LayerSpec::conv(c, widths[0], 3, 2, Activation::Relu),
                LayerSpec::conv(widths[0], widths[1], 3, 2, Activation::Relu),
                LayerSpec::dense(flat, classes, Activation::None),
            ],
            rng,
        )?;
        Ok(Self { net, classes })
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.net.forward(x)
    }

    /// Class probabilities, one row per batch item.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor, NnError> {
        Ok(softmax(&self.net.forward(x)?))
    }

    /// Logits with a tape for input-gradient backpropagation.
    pub fn logits_tape(&self, x: &Tensor, tape: &mut Tape) -> Result<Tensor, NnError> {
        self.net.forward_tape(x, tape)
    }

    /// `dL/dx` through the frozen network. Parameters get no gradient.
    pub fn input_gradient(&self, tape: &Tape, grad_logits: &Tensor) -> Result<Tensor, NnError> {
        self.net.backward_input(tape, grad_logits)
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64, NnError> {
        let probs = self.predict_proba(x)?;
        Ok(argmax_accuracy(&probs, labels))
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        ckpt.insert_sequential("teacher", &self.net);
        ckpt.metadata
            .insert("teacher.classes".into(), serde_json::json!(self.classes));
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, NnError> {
        let net = ckpt.sequential("teacher")?;
        let classes = ckpt
            .metadata
            .get("teacher.classes")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NnError::Checkpoint("missing teacher.classes".into()))?
            as usize;
        Ok(Self { net, classes })
    }
}

/// Fraction of rows whose argmax equals the label.
pub fn argmax_accuracy(probs: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let classes = probs.item_len();
    let hits = probs
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    hits as f64 / labels.len() as f64
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Outcome of teacher training.
#[derive(Clone, Debug)]
pub struct TeacherReport {
    pub epochs: usize,
    pub train_accuracy: f64,
}

/// Trains the classifier with Adam on hard labels until the training
/// accuracy reaches `config.target_accuracy`.
pub fn train_teacher(
    images: &Tensor,
    labels: &[usize],
    classes: usize,
    config: &TeacherConfig,
    seed: u64,
) -> Result<(Teacher, TeacherReport), TrainError> {
    let n = images.batch();
    if n == 0 || n != labels.len() {
        return Err(TrainError::Config(
            "teacher needs a non-empty labelled set".into(),
        ));
    }
    if labels.iter().any(|&l| l >= classes) {
        return Err(TrainError::Config("label out of range".into()));
    }
    let shape = images.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut teacher = Teacher::new(
        [shape[1], shape[2], shape[3]],
        classes,
        config.widths,
        &mut rng,
    )?;
    let mut adam = AdamState::new(&teacher.net.params(), config.learning_rate);
    let mut order: Vec<usize> = (0..n).collect();
    let mut tape = Tape::new();
    let mut accuracy = 0.0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch = gather(images, chunk);
            let logits = teacher.net.forward_tape(&batch, &mut tape)?;
            let targets = one_hot(chunk.iter().map(|&i| labels[i]), classes);
            let (_, grad) = softmax_cross_entropy(&targets, &logits);
            let (grads, _) = teacher.net.backward(&tape, &grad)?;
            adam.step(teacher.net.params_mut(), &grads.0)?;
        }
        accuracy = teacher.accuracy(images, labels)?;
        log::debug!("teacher epoch {epoch}: train accuracy {accuracy:.4}");
        if accuracy >= config.target_accuracy {
            return Ok((
                teacher,
                TeacherReport {
                    epochs: epoch,
                    train_accuracy: accuracy,
                },
            ));
        }
    }
    Err(TrainError::NotConverged {
        accuracy,
        epochs: config.max_epochs,
    })
}

/// Rows `indices` of a batched tensor.
pub fn gather(x: &Tensor, indices: &[usize]) -> Tensor {
    let per = x.item_len();
    let mut data = Vec::with_capacity(indices.len() * per);
    for &i in indices {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = indices.len();
    Tensor::from_vec(&shape, data).expect("gathered rows match shape")
}

fn one_hot(labels: impl Iterator<Item = usize>, classes: usize) -> Tensor {
    let mut data = Vec::new();
    let mut n = 0;
    for l in labels {
        let mut row = vec![0.0; classes];
        row[l] = 1.0;
        data.extend(row);
        n += 1;
    }
    Tensor::from_vec(&[n, classes], data).expect("one-hot shape")
}
