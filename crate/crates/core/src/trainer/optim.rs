use crate::tensor::{ParamGroup, ParamStore};

/// Adam with one learning rate for the encoder and one for the head.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(
        store: &ParamStore,
        lr_encoder: f64,
        lr_head: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let zeros = || store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        Self {
            lr_encoder,
            lr_head,
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let lr = match p.group {
                ParamGroup::Encoder => self.lr_encoder,
                ParamGroup::Head => self.lr_head,
            };
            let grad = p.grad.data().to_vec();
            for (((w, g), m), v) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn first_step_moves_by_learning_rate_per_group() {
        let mut s = ParamStore::new();
        s.push(
            "e",
            Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(),
            ParamGroup::Encoder,
        );
        s.push("h", Tensor::scalar(1.0), ParamGroup::Head);
        for p in s.iter_mut() {
            p.grad.data_mut().fill(0.5);
        }
        s.iter_mut().next().unwrap().grad.data_mut()[1] = -2.0;
        let mut adam = Adam::new(&s, 1e-4, 1e-3, 0.9, 0.999, 1e-8);
        adam.step(&mut s);
        let e = s.get(0).value.data();
        assert!((e[0] - (1.0 - 1e-4)).abs() < 1e-10);
        assert!((e[1] - (1.0 + 1e-4)).abs() < 1e-10);
        assert!((s.get(1).value.item() - (1.0 - 1e-3)).abs() < 1e-10);
        assert_eq!(adam.steps_taken(), 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut s = ParamStore::new();
        s.push("x", Tensor::scalar(3.0), ParamGroup::Head);
        let mut adam = Adam::new(&s, 0.1, 0.1, 0.9, 0.999, 1e-8);
        for _ in 0..500 {
            let x = s.get(0).value.item();
            s.iter_mut().next().unwrap().grad = Tensor::scalar(2.0 * (x - 1.0));
            adam.step(&mut s);
        }
        assert!((s.get(0).value.item() - 1.0).abs() < 1e-2);
    }
}
