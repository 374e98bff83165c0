use super::tensor::Tensor;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(params: &[&Tensor], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One update at learning rate `lr`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer tracks {} tensors, got {} params / {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "param {:?} grad {:?} moment {:?}",
                    p.shape(),
                    g.shape(),
                    m.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
pub fn cosine_lr(step: u64, total_steps: u64, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total_steps {
        return Err(Error::OutOfRange(format!("step {step} beyond {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(lr_max);
    }
    let frac = step as f64 / total_steps as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut opt = AdamW::new(&[&p], 0.0);
        opt.step(&mut [&mut p], &[Tensor::zeros(&[3])], 0.1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_closed_form() {
        let mut p = Tensor::scalar(1.0);
        let mut opt = AdamW::new(&[&p], 0.0);
        opt.step(&mut [&mut p], &[Tensor::scalar(1.0)], 0.1).unwrap();
        // m̂ = v̂ = 1 after bias correction
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.item() - want).abs() < 1e-15);
        assert!((p.item() - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decoupled_decay_exact() {
        let mut p = Tensor::new(vec![2], vec![3.0, -1.5]).unwrap();
        let mut opt = AdamW::new(&[&p], 0.01);
        opt.step(&mut [&mut p], &[Tensor::zeros(&[2])], 0.1).unwrap();
        let f = 1.0 - 0.1 * 0.01;
        assert_eq!(p.data(), &[3.0 * f, -1.5 * f]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::zeros(&[2]);
        let mut opt = AdamW::new(&[&p], 0.0);
        assert!(matches!(
            opt.step(&mut [&mut p], &[Tensor::zeros(&[3])], 0.1),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0, 100, 2e-4, 1e-6).unwrap(), 2e-4);
        assert!((cosine_lr(100, 100, 2e-4, 1e-6).unwrap() - 1e-6).abs() < 1e-18);
        let mid = cosine_lr(50, 100, 2e-4, 1e-6).unwrap();
        assert!((mid - (2e-4 + 1e-6) / 2.0).abs() < 1e-15);
        assert!(matches!(cosine_lr(101, 100, 2e-4, 0.0), Err(Error::OutOfRange(_))));
    }
}
