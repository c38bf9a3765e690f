//! Adam optimizer over flat parameter lists.

use ndarray::Array2;

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn for_params(lr: f64, params: &[&Array2<f64>]) -> Self {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.dim()).collect();
        Self::new(lr, &shapes)
    }

    /// One update. `params` and `grads` must match the construction order.
    pub fn step(&mut self, params: &mut [&mut Array2<f64>], grads: &[Array2<f64>]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = &grads[i];
            self.m[i] = &self.m[i] * self.beta1 + g * (1.0 - self.beta1);
            self.v[i] = &self.v[i] * self.beta2 + &(g * g) * (1.0 - self.beta2);
            let m_hat = &self.m[i] / bc1;
            let v_hat = &self.v[i] / bc2;
            let update = m_hat / (v_hat.mapv(f64::sqrt) + self.eps);
            *params[i] -= &(update * self.lr);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn descends_a_quadratic() {
        // minimize (x - 3)^2
        let mut x = array![[0.0]];
        let mut opt = Adam::new(0.1, &[(1, 1)]);
        for _ in 0..500 {
            let g = array![[2.0 * (x[(0, 0)] - 3.0)]];
            opt.step(&mut [&mut x], &[g]);
        }
        assert!((x[(0, 0)] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut x = array![[1.5, -2.0]];
        let before = x.clone();
        let mut opt = Adam::new(0.1, &[(1, 2)]);
        for _ in 0..10 {
            opt.step(&mut [&mut x], &[Array2::zeros((1, 2))]);
        }
        assert_eq!(x, before);
    }
}
