//! Adam optimizer aligned to a parameter store's tensor order.

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::model::ParamStore;

#[derive(Clone, Debug)]
pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    steps: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    /// Zero-state optimizer shaped after a store's parameters.
    pub fn new(learning_rate: f64, params: &ParamStore) -> Self {
        let zeros: Vec<ArrayD<f32>> = params
            .values()
            .iter()
            .map(|p| ArrayD::zeros(p.raw_dim()))
            .collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Rebuild from checkpointed state.
    pub fn from_state(
        learning_rate: f64,
        steps: u64,
        m: Vec<ArrayD<f32>>,
        v: Vec<ArrayD<f32>>,
    ) -> Self {
        assert_eq!(m.len(), v.len(), "moment vectors must align");
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps,
            m,
            v,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[ArrayD<f32>], &[ArrayD<f32>]) {
        (&self.m, &self.v)
    }

    /// One update over all parameters. A `None` gradient (parameter not on
    /// the loss path) leaves that tensor and its moments untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<ArrayD<f32>>]) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Training(format!(
                "optimizer built for {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let t = self.steps as i32;
        let correct1 = (1.0 - self.beta1.powi(t)) as f32;
        let correct2 = (1.0 - self.beta2.powi(t)) as f32;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let (lr, eps) = (self.learning_rate as f32, self.epsilon as f32);
        for ((param, grad), (m, v)) in params
            .values_mut()
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            let Some(grad) = grad else { continue };
            if grad.shape() != param.shape() {
                return Err(Error::Training(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    grad.shape(),
                    param.shape()
                )));
            }
            ndarray::Zip::from(param)
                .and(grad)
                .and(m)
                .and(v)
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / correct1;
                    let v_hat = *v / correct2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn store_of(v: &[f32]) -> ParamStore {
        let mut s = ParamStore::new();
        s.push("x", ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With a fresh state, bias correction makes the first update
        // exactly lr * sign(grad) for any nonzero gradient.
        let mut s = store_of(&[1.0, -2.0]);
        let mut opt = Adam::new(0.1, &s);
        let g = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5, -3.0]).unwrap();
        opt.step(&mut s, &[Some(g)]).unwrap();
        let x = s.get("x");
        let tol = 1e-5;
        assert!((x[[0]] - 0.9).abs() < tol, "{}", x[[0]]);
        assert!((x[[1]] + 1.9).abs() < tol, "{}", x[[1]]);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut s = store_of(&[5.0]);
        let mut opt = Adam::new(0.05, &s);
        for _ in 0..2000 {
            let x = s.get("x")[[0]];
            let g = ArrayD::from_elem(IxDyn(&[1]), 2.0 * x);
            opt.step(&mut s, &[Some(g)]).unwrap();
        }
        assert!(s.get("x")[[0]].abs() < 1e-2);
    }

    #[test]
    fn missing_gradient_freezes_the_tensor() {
        let mut s = store_of(&[1.0]);
        let mut opt = Adam::new(0.1, &s);
        opt.step(&mut s, &[None]).unwrap();
        assert_eq!(s.get("x")[[0]], 1.0);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut s = store_of(&[1.0]);
        let mut opt = Adam::new(0.1, &s);
        let g = ArrayD::zeros(IxDyn(&[2]));
        assert!(opt.step(&mut s, &[Some(g)]).is_err());
        assert!(opt.step(&mut s, &[]).is_err());
    }
}
