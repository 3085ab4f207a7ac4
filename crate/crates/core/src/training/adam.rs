use crate::error::{Error, Result};
use crate::models::ModelParams;

/// Bias-corrected Adam over one or more networks updated together.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the populated `grad`s, then clears them.
    /// The same nets must be passed in the same order on every call.
    pub fn step(&mut self, nets: &mut [&mut ModelParams], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::validation(format!("learning rate must be positive, got {lr}")));
        }
        let tensors: Vec<_> = nets.iter_mut().flat_map(|n| n.entries_mut().iter_mut()).collect();
        if let Some((name, _)) = tensors.iter().find(|(_, t)| t.grad.is_none()) {
            return Err(Error::validation(format!("missing gradient for {name}")));
        }
        if self.m.is_empty() {
            self.m = tensors.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.v = self.m.clone();
        } else if self.m.len() != tensors.len() {
            return Err(Error::validation("optimizer reused with a different parameter set"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, t)) in tensors.into_iter().enumerate() {
            let g = t.grad.take().expect("checked above");
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn scalar_model(v: f64) -> ModelParams {
        ModelParams::from_entries(vec![
            ("P.enc1.weight".into(), Tensor::new(&[1, 1, 1, 1], vec![v]).unwrap()),
            ("P.enc1.bias".into(), Tensor::zeros(&[1])),
            ("P.out.weight".into(), Tensor::zeros(&[1, 1, 1, 1])),
            ("P.out.bias".into(), Tensor::zeros(&[1])),
        ])
        .unwrap()
    }

    fn set_grads(p: &mut ModelParams, g: f64) {
        for (_, t) in p.entries_mut() {
            let n = t.numel();
            t.grad = Some(vec![g; n]);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_model(1.5);
        let before = p.clone();
        let mut opt = Adam::default();
        set_grads(&mut p, 0.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.entries()[0].1.data(), before.entries()[0].1.data());
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar_model(1.0);
        let mut opt = Adam::default();
        set_grads(&mut p, 5.0);
        opt.step(&mut [&mut p], 0.01).unwrap();
        assert!((p.entries()[0].1.data()[0] - 0.99).abs() < 1e-9);
        assert!(p.entries()[0].1.grad.is_none());
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = scalar_model(1.0);
        assert!(Adam::default().step(&mut [&mut p], 0.01).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = scalar_model(0.0);
        let mut opt = Adam::default();
        for _ in 0..200 {
            let tape = Tape::new();
            let b = p.bind(&tape).unwrap();
            let w = b.vars()[0];
            let three = tape.constant(&Tensor::scalar(3.0)).unwrap();
            let loss = w.sub(three).unwrap().square().unwrap().sum().unwrap();
            tape.backward(loss).unwrap();
            p.collect_grads(&tape, &b).unwrap();
            opt.step(&mut [&mut p], 0.1).unwrap();
        }
        let v = p.entries()[0].1.data()[0];
        assert!((v - 3.0).abs() < 0.05, "{v}");
    }
}
