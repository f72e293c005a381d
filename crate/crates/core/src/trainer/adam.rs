use dualgan_tensor::{ParamSet, Scalar, Tensor};

/// Adam with bias correction and no weight decay. Moment tensors are kept
/// in the parameter precision; each element update is computed in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.shapes().into_iter().map(Tensor::zeros).collect::<Vec<_>>();
        Self { beta1, beta2, eps, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.tensor_mut(i);
            for (((p, m), v), g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                let g = g.as_f64();
                let m_new = self.beta1 * m.as_f64() + (1.0 - self.beta1) * g;
                let v_new = self.beta2 * v.as_f64() + (1.0 - self.beta2) * g * g;
                *m = T::lit(m_new);
                *v = T::lit(v_new);
                let step = lr * (m_new / bc1) / ((v_new / bc2).sqrt() + self.eps);
                *p = T::lit(p.as_f64() - step);
            }
        }
    }
}
