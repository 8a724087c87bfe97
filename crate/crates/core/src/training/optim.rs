use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

/// Linear warmup from 0 to `peak_lr`, then linear decay to 0 at
/// `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub peak_lr: f64,
}

impl Schedule {
    pub fn new(total_steps: usize, warmup_fraction: f64, peak_lr: f64) -> Schedule {
        let warmup_steps = ((warmup_fraction * total_steps as f64).round() as usize).max(1);
        Schedule {
            total_steps,
            warmup_steps,
            peak_lr,
        }
    }

    pub fn lr_at(&self, t: usize) -> Result<f64> {
        let s = self.total_steps;
        if t > s {
            return Err(Error::Schedule { step: t, total: s });
        }
        let w = self.warmup_steps;
        Ok(if t <= w {
            self.peak_lr * t as f64 / w as f64
        } else {
            self.peak_lr * (s - t) as f64 / (s - w) as f64
        })
    }
}

/// Bias-corrected Adam without weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Updates applied so far.
    pub step: usize,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Adam {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update from the gradients held in `params`. Nothing is
    /// modified if any gradient is non-finite.
    pub fn update(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        if let Some(bad) = params.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(bad.name.clone()));
        }
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let w = p.value.data_mut();
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }

    /// Moment tensors named `adam.m.<param>` and `adam.v.<param>`.
    pub fn state_tensors(&self, params: &ParamStore) -> Vec<(String, Tensor)> {
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        let m = names
            .iter()
            .zip(&self.m)
            .map(|(n, t)| (format!("adam.m.{n}"), t.clone()));
        let v = names
            .iter()
            .zip(&self.v)
            .map(|(n, t)| (format!("adam.v.{n}"), t.clone()));
        m.chain(v).collect()
    }

    /// Restores moments saved by [`state_tensors`](Self::state_tensors).
    pub fn from_state(params: &ParamStore, step: usize, tensors: &[(String, Tensor)]) -> Result<Adam> {
        let mut adam = Adam::new(params);
        adam.step = step;
        let lookup = |name: String, shape: &[usize]| {
            tensors
                .iter()
                .find(|(n, _)| *n == name)
                .filter(|(_, t)| t.shape() == shape)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Config(format!("optimizer state `{name}` missing or misshapen")))
        };
        for (i, p) in params.iter().enumerate() {
            adam.m[i] = lookup(format!("adam.m.{}", p.name), p.value.shape())?;
            adam.v[i] = lookup(format!("adam.v.{}", p.name), p.value.shape())?;
        }
        Ok(adam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = Schedule::new(1000, 0.002, 1.0);
        assert_eq!(s.warmup_steps, 2);
        assert_eq!(s.lr_at(2).unwrap(), 1.0);
        assert_eq!(s.lr_at(1000).unwrap(), 0.0);
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert!((s.lr_at(500).unwrap() - 500.0 / 998.0).abs() < 1e-15);
        assert!((s.lr_at(500).unwrap() - 0.5010).abs() < 1e-4);
        assert!(matches!(
            s.lr_at(1001),
            Err(Error::Schedule {
                step: 1001,
                total: 1000
            })
        ));
        assert_eq!(Schedule::new(10, 0.0, 1.0).warmup_steps, 1);
    }

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::vector(vec![x]));
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(3.0);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, 0.1).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data(), [3.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::vector(vec![1.0, 1.0, 1.0]));
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![0.3, -20.0, 1e-3]);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, 0.01).unwrap();
        let w = s.iter().next().unwrap().value.data().to_vec();
        assert!((w[0] - 0.99).abs() < 1e-6);
        assert!((w[1] - 1.01).abs() < 1e-6);
        assert!((w[2] - 0.99).abs() < 1e-4);
    }

    #[test]
    fn quadratic_bowl() {
        let mut s = scalar_store(5.0);
        let mut adam = Adam::new(&s);
        for _ in 0..2000 {
            let x = s.iter().next().unwrap().value.data()[0];
            s.iter_mut().next().unwrap().grad = Tensor::vector(vec![2.0 * x]);
            adam.update(&mut s, 0.1).unwrap();
        }
        assert!(s.iter().next().unwrap().value.data()[0].abs() < 1e-3);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = scalar_store(1.0);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![f64::NAN]);
        let mut adam = Adam::new(&s);
        let err = adam.update(&mut s, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref n) if n == "x"));
        assert_eq!(adam.step, 0);
        assert_eq!(s.iter().next().unwrap().value.data(), [1.0]);
    }

    #[test]
    fn state_round_trip() {
        let mut s = scalar_store(1.0);
        s.iter_mut().next().unwrap().grad = Tensor::vector(vec![0.5]);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, 0.1).unwrap();
        let back = Adam::from_state(&s, adam.step, &adam.state_tensors(&s)).unwrap();
        assert_eq!(back, adam);
        assert!(Adam::from_state(&s, 1, &[]).is_err());
    }
}
