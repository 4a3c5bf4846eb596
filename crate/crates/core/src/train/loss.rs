//! Reconstruction and distillation objectives for a given kept-channel count.

use super::teacher::{argmax, Teacher};
use crate::nn::{softmax, AeGradients, AeTape, AutoEncoder, NnError, Tape, Tensor};

/// Mean squared error over every element, and its gradient w.r.t. `pred`.
pub fn mse(pred: &Tensor, target: &Tensor) -> (f64, Tensor) {
    let n = pred.len().max(1) as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, &t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    (loss / n, grad)
}

/// Batch-mean cross-entropy `-sum_i p_i log q_i` with `q = softmax(logits)`,
/// and its gradient w.r.t. the logits, `(q - p) / n`.
pub fn softmax_cross_entropy(targets: &Tensor, logits: &Tensor) -> (f64, Tensor) {
    let n = logits.batch().max(1) as f64;
    let classes = logits.item_len();
    let mut grad = softmax(logits);
    let mut loss = 0.0;
    for (row, (q_row, p_row)) in logits.data().chunks(classes).zip(
        grad.data_mut()
            .chunks_mut(classes)
            .zip(targets.data().chunks(classes)),
    ) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for ((q, &p), &l) in q_row.iter_mut().zip(p_row).zip(row) {
            if p > 0.0 {
                loss -= p * (l - log_z);
            }
            *q = (*q - p) / n;
        }
    }
    (loss / n, grad)
}

/// `||x - g(Concat[f(x)_[1:K]; 0])||^2` (element mean) and AE gradients.
pub fn reconstruction_loss(
    ae: &AutoEncoder,
    x: &Tensor,
    keep: usize,
) -> Result<(f64, AeGradients), NnError> {
    let mut tape = AeTape::new();
    let y = ae.forward_tape(x, Some(keep), &mut tape)?;
    let (loss, grad) = mse(&y, x);
    let (grads, _) = ae.backward(&tape, &grad)?;
    Ok((loss, grads))
}

/// Result of one distillation evaluation.
#[derive(Clone, Debug)]
pub struct DistillOutcome {
    pub loss: f64,
    pub grads: AeGradients,
    /// Items whose reconstruction keeps the teacher's top-1 decision.
    pub agreements: usize,
}

/// `CE(h(x), h(g(Concat[f(x)_[1:K]; 0])))` with the teacher frozen.
///
/// `soft_targets` are the teacher's probabilities on the original inputs.
pub fn distill_loss(
    ae: &AutoEncoder,
    teacher: &Teacher,
    x: &Tensor,
    soft_targets: &Tensor,
    keep: usize,
) -> Result<DistillOutcome, NnError> {
    let mut ae_tape = AeTape::new();
    let recon = ae.forward_tape(x, Some(keep), &mut ae_tape)?;
    let mut t_tape = Tape::new();
    let logits = teacher.logits_tape(&recon, &mut t_tape)?;
    let (loss, grad_logits) = softmax_cross_entropy(soft_targets, &logits);
    let grad_recon = teacher.input_gradient(&t_tape, &grad_logits)?;
    let (grads, _) = ae.backward(&ae_tape, &grad_recon)?;
    let classes = logits.item_len();
    let agreements = logits
        .data()
        .chunks(classes)
        .zip(soft_targets.data().chunks(classes))
        .filter(|(l, p)| argmax(l) == argmax(p))
        .count();
    Ok(DistillOutcome {
        loss,
        grads,
        agreements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradients;
    use crate::nn::{Activation, LayerSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // linear decoder so reconstructions never sit exactly on a teacher ReLU kink
    fn toy_ae(rng: &mut ChaCha8Rng) -> AutoEncoder {
        let clip = Activation::Clip { lo: 0.0, hi: 1.0 };
        AutoEncoder::new(
            &[1, 4, 4],
            &[LayerSpec::conv(1, 3, 3, 2, clip)],
            &[
                LayerSpec::conv(3, 2, 3, 1, Activation::None),
                LayerSpec::upsample_conv(2, 1, 3, Activation::None),
            ],
            rng,
        )
        .unwrap()
    }

    fn images(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::from_vec(
            &[n, 1, 4, 4],
            (0..n * 16).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn perfect_reconstruction_has_zero_loss() {
        let x = Tensor::from_vec(&[1, 2], vec![0.3, 0.7]).unwrap();
        let (loss, grad) = mse(&x, &x);
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn reconstruction_loss_matches_straight_line_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ae = toy_ae(&mut rng);
        let x = images(&mut rng, 2);
        for keep in 1..=3 {
            let (loss, _) = reconstruction_loss(&ae, &x, keep).unwrap();
            // independent re-evaluation: encode, zero the tail by index, decode
            let mut z = ae.encoder.forward(&x).unwrap();
            let plane = 4;
            for n in 0..2 {
                for c in keep..3 {
                    for j in 0..plane {
                        z.data_mut()[(n * 3 + c) * plane + j] = 0.0;
                    }
                }
            }
            let y = ae.decoder.forward(&z).unwrap();
            let direct: f64 = y
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / y.len() as f64;
            assert!(
                (loss - direct).abs() < 1e-14,
                "K={keep}: {loss} vs {direct}"
            );
        }
        let (full, _) = reconstruction_loss(&ae, &x, 3).unwrap();
        let plain = mse(&ae.forward(&x, None).unwrap(), &x).0;
        assert_eq!(full, plain);
    }

    #[test]
    fn cross_entropy_three_class_direct_sum() {
        let logits = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 0.5]).unwrap();
        let p = [0.2, 0.5, 0.3];
        let targets = Tensor::from_vec(&[1, 3], p.to_vec()).unwrap();
        let (loss, _) = softmax_cross_entropy(&targets, &logits);
        let z: f64 = [1.0f64, 2.0, 0.5].iter().map(|v| v.exp()).sum();
        let q = [1.0f64.exp() / z, 2.0f64.exp() / z, 0.5f64.exp() / z];
        let direct: f64 = p.iter().zip(&q).map(|(pi, qi)| -pi * qi.ln()).sum();
        assert!((loss - direct).abs() < 1e-12);
    }

    #[test]
    fn identical_inputs_give_teacher_self_entropy() {
        let logits = Tensor::from_vec(&[1, 4], vec![0.1, -0.4, 1.3, 0.0]).unwrap();
        let p = softmax(&logits);
        let (loss, grad) = softmax_cross_entropy(&p, &logits);
        let entropy: f64 = p.data().iter().map(|q| -q * q.ln()).sum();
        assert!((loss - entropy).abs() < 1e-12);
        assert!(grad.data().iter().all(|g| g.abs() < 1e-15));
        // any other prediction costs more
        let other = Tensor::from_vec(&[1, 4], vec![0.3, -0.4, 1.0, 0.2]).unwrap();
        assert!(softmax_cross_entropy(&p, &other).0 > loss);
    }

    #[test]
    fn distill_gradients_match_finite_differences_and_teacher_is_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let ae = toy_ae(&mut rng);
        let teacher = Teacher::new([1, 4, 4], 3, [2, 2], &mut rng).unwrap();
        let before = crate::nn::param_checksum(&teacher.net.params());
        let x = images(&mut rng, 2);
        let soft = teacher.predict_proba(&x).unwrap();
        for keep in 1..=3 {
            let out = distill_loss(&ae, &teacher, &x, &soft, keep).unwrap();
            let mut params: Vec<Tensor> = ae.params().into_iter().cloned().collect();
            let analytic = out.grads.flat();
            let report = check_gradients(&mut params, &analytic, 1e-5, 1, |p| {
                let mut probe = ae.clone();
                for (dst, src) in probe.params_mut().into_iter().zip(p) {
                    *dst = src.clone();
                }
                distill_loss(&probe, &teacher, &x, &soft, keep)
                    .unwrap()
                    .loss
            });
            assert!(report.passes(1e-4), "K={keep}: {report:?}");
        }
        assert_eq!(crate::nn::param_checksum(&teacher.net.params()), before);
    }
}
