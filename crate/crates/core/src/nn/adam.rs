use super::{NnError, Tensor};

/// Adam optimizer state (Kingma & Ba update rule with bias correction).
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor], learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<(), NnError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(NnError::Shape(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(NnError::Shape(format!(
                    "adam: param {:?} vs grad {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / c1;
                let v_hat = *vv / c2;
                *pv -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar(0.7);
        let mut adam = AdamState::new(&[&p], 0.01);
        adam.step(vec![&mut p], &[scalar(0.0)]).unwrap();
        assert_eq!(p.data()[0], 0.7);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let mut p = scalar(-2.0);
        let mut adam = AdamState::new(&[&p], 0.0);
        for _ in 0..3 {
            adam.step(vec![&mut p], &[scalar(5.0)]).unwrap();
        }
        assert_eq!(p.data()[0], -2.0);
    }

    #[test]
    fn hand_computed_two_steps() {
        // g = 1 twice, lr = 0.1:
        // t=1: m=0.1, v=0.001, m_hat=1, v_hat=1 -> p -= 0.1 / (1 + 1e-8)
        // t=2: m=0.19, v=0.001999, m_hat=1, v_hat=1 -> same decrement again
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(&[&p], 0.1);
        adam.step(vec![&mut p], &[scalar(1.0)]).unwrap();
        let step = 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - (1.0 - step)).abs() < 1e-12);
        adam.step(vec![&mut p], &[scalar(1.0)]).unwrap();
        assert!((p.data()[0] - (1.0 - 2.0 * step)).abs() < 1e-12);
        assert_eq!(adam.steps(), 2);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let mut p = scalar(1.0);
        let mut adam = AdamState::new(&[&p], 0.1);
        let bad = Tensor::zeros(&[2]);
        assert!(adam.step(vec![&mut p], &[bad]).is_err());
    }
}
