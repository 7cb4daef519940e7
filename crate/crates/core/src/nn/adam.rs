use super::{Gradients, Network, Scalar};

/// Bias-corrected Adam. Moments are kept in `f64` regardless of the
/// parameter type.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam { lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Updates flat parameter arrays in place.
    pub fn update<T: Scalar>(&mut self, params: &mut [&mut [T]], grads: &[Vec<T>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter array");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.len(), g.len());
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] = T::from_f64(p[i].as_f64() - self.lr * mhat / (vhat.sqrt() + self.epsilon));
            }
        }
    }

    /// Applies one step to every trainable array of `net`.
    pub fn step<T: Scalar>(&mut self, net: &mut Network<T>, grads: &Gradients<T>) {
        let mut params: Vec<&mut [T]> = net.trainable_mut().into_iter().map(|t| t.values.as_mut_slice()).collect();
        self.update(&mut params, &grads.arrays);
    }
}
