use crate::error::{Error, Result};

use super::net::Param;

/// Adam with decoupled weight decay:
/// p ← p − lr·(m̂ / (√v̂ + ε) + wd·p).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamW {
    pub fn new(params: &[Param], lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// One update. Nothing is modified if any gradient is non-finite.
    pub fn update(&mut self, params: &mut [Param], grads: &[&[f32]]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Training(format!(
                "optimizer tracks {} buffers but got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.len() != p.value.len() {
                return Err(Error::Training(format!("gradient length mismatch for '{}'", p.name)));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Training(format!("non-finite gradient for parameter '{}'", p.name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g[i] as f64;
                let mi = self.beta1 * m[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let step = (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                *w = (*w as f64 * decay - self.lr * step) as f32;
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau for a metric where lower is better.
#[derive(Debug, Clone, PartialEq)]
pub struct Plateau {
    pub patience: usize,
    pub factor: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(patience: usize, factor: f64) -> Result<Self> {
        if patience == 0 || !(factor > 0.0 && factor < 1.0) {
            return Err(Error::param(format!(
                "plateau patience must be positive and factor in (0, 1), got {patience} and {factor}"
            )));
        }
        Ok(Self {
            patience,
            factor,
            best: None,
            bad_epochs: 0,
        })
    }

    /// Report one epoch's metric. Returns the lr multiplier to apply.
    pub fn observe(&mut self, metric: f64) -> Option<f64> {
        match self.best {
            Some(b) if metric >= b => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.patience {
                    self.bad_epochs = 0;
                    return Some(self.factor);
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one(v: f32) -> Vec<Param> {
        vec![Param {
            name: "p".into(),
            value: Tensor::full(&[1], v),
        }]
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = one(0.7);
        let mut opt = AdamW::new(&p, 0.1, (0.9, 0.999), 0.0);
        opt.update(&mut p, &[&[0.0]]).unwrap();
        assert_eq!(p[0].value.item(), 0.7);
    }

    #[test]
    fn first_step_by_hand() {
        let mut p = one(1.0);
        let mut opt = AdamW::new(&p, 0.1, (0.9, 0.999), 0.0);
        opt.update(&mut p, &[&[1.0]]).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p[0].value.item() as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn decay_only_step() {
        let mut p = one(2.0);
        let mut opt = AdamW::new(&p, 0.1, (0.9, 0.999), 0.1);
        opt.update(&mut p, &[&[0.0]]).unwrap();
        assert_eq!(p[0].value.item(), (2.0f64 * (1.0 - 0.01)) as f32);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut p = one(1.0);
        let mut opt = AdamW::new(&p, 0.1, (0.9, 0.999), 0.0);
        match opt.update(&mut p, &[&[f32::NAN]]) {
            Err(Error::Training(msg)) => assert!(msg.contains("'p'")),
            other => panic!("{other:?}"),
        }
        assert_eq!(p[0].value.item(), 1.0);
        assert_eq!(opt.step, 0);
    }

    #[test]
    fn plateau_traces() {
        let mut s = Plateau::new(3, 0.1).unwrap();
        let events: Vec<_> = [1.0, 1.0, 1.0, 1.0].iter().map(|m| s.observe(*m)).collect();
        assert_eq!(events, [None, None, None, Some(0.1)]);

        let mut s = Plateau::new(3, 0.1).unwrap();
        assert!([5.0, 4.0, 3.0, 2.0, 1.0].iter().all(|m| s.observe(*m).is_none()));

        let mut s = Plateau::new(3, 0.1).unwrap();
        let lr: f64 = [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]
            .iter()
            .filter_map(|m| s.observe(*m))
            .product();
        assert!((lr - 0.01).abs() < 1e-15);
    }
}
