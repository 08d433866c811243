//! Adam with bias-corrected moment estimates.

use super::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// `sizes` lists the length of every parameter buffer, in the order
    /// they will be passed to [`Adam::step`].
    pub fn new(sizes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every buffer in `params` with the matching gradient.
    /// Moments are kept in `f64` whatever the parameter precision.
    pub fn step<T: Scalar>(&mut self, lr: f64, params: &mut [&mut [T]], grads: &[&[T]]) {
        assert_eq!(params.len(), self.m.len(), "parameter buffer count");
        assert_eq!(grads.len(), self.m.len(), "gradient buffer count");
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            assert_eq!(p.len(), m.len(), "parameter buffer length");
            assert_eq!(g.len(), m.len(), "gradient buffer length");
            for i in 0..m.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                let update = lr * m_hat / (v_hat.sqrt() + self.eps);
                p[i] = T::from_f64(p[i].as_f64() - update);
            }
        }
    }
}
