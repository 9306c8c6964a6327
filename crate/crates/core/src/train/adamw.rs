//! AdamW with decoupled weight decay and per-group learning rates.

use crate::numeric::{LrGroup, ParamStore, Scalar, Tensor};

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, p)| Tensor::zeros(p.tensor.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. `grads[i]` belongs to the i-th parameter of `store`;
    /// parameters without a gradient are left untouched, decay included.
    /// All gradients are checked for finiteness before anything changes.
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
        lr: impl Fn(LrGroup) -> f64,
        cfg: &AdamWConfig,
    ) -> Result<(), TrainError> {
        for ((_, p), g) in store.iter().zip(grads) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(TrainError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = grads.get(i).and_then(Option::as_ref) else {
                continue;
            };
            let param = store.get_mut(id);
            let lr = lr(param.lr_group);
            let decay = T::lit(1.0 - lr * cfg.weight_decay);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, x) in param.tensor.data_mut().iter_mut().enumerate() {
                let gk = g.data()[k];
                m[k] = T::lit(cfg.beta1) * m[k] + T::lit(1.0 - cfg.beta1) * gk;
                v[k] = T::lit(cfg.beta2) * v[k] + T::lit(1.0 - cfg.beta2) * gk * gk;
                let mhat = m[k] / T::lit(bc1);
                let vhat = v[k] / T::lit(bc2);
                *x = *x * decay - T::lit(lr) * mhat / (vhat.sqrt() + T::lit(cfg.eps));
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Option<Tensor<T>>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flatten().flat_map(|g| g.data().iter()).map(|x| x.as_f64().powi(2)).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(wd: f64) -> AdamWConfig {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    fn one_param(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::<f64>::new();
        s.register("x", Tensor::vector(values.to_vec()), LrGroup::Other).unwrap();
        s
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let mut s = one_param(&[0.5, -2.0]);
        let mut opt = AdamW::new(&s);
        for _ in 0..5 {
            opt.step(&mut s, &[Some(Tensor::zeros(&[2]))], |_| 0.1, &cfg(0.0)).unwrap();
        }
        assert_eq!(s.tensors()[0].data(), &[0.5, -2.0]);
    }

    #[test]
    fn missing_gradient_skips_decay() {
        let mut s = one_param(&[0.5]);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[None], |_| 0.1, &cfg(0.5)).unwrap();
        assert_eq!(s.tensors()[0].data(), &[0.5]);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn two_steps_match_hand_computation() {
        // x0 = 1.0, g1 = 0.5, g2 = -0.25, lr = 0.01, wd = 0.1
        // step 1: x <- 1.0 * (1 - 0.001) = 0.999
        //   m = 0.05, v = 0.00025, mhat = 0.5, vhat = 0.25
        //   x <- 0.999 - 0.01 * 0.5 / (0.5 + 1e-8)
        // step 2: decay, m = 0.045 - 0.025 = 0.02, v = 0.00024975 + 0.0000625
        //   mhat = 0.02 / 0.19, vhat = v / (1 - 0.999^2)
        let mut s = one_param(&[1.0]);
        let mut opt = AdamW::new(&s);
        opt.step(&mut s, &[Some(Tensor::vector(vec![0.5]))], |_| 0.01, &cfg(0.1)).unwrap();
        let x1 = 0.999 - 0.01 * 0.5 / (0.5 + 1e-8);
        assert!((s.tensors()[0].data()[0] - x1).abs() < 1e-12);
        opt.step(&mut s, &[Some(Tensor::vector(vec![-0.25]))], |_| 0.01, &cfg(0.1)).unwrap();
        let m = 0.02;
        let v = 0.999 * 0.00025 + 0.001 * 0.0625;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.999f64 * 0.999);
        let x2 = x1 * 0.999 - 0.01 * mhat / (vhat.sqrt() + 1e-8);
        assert!((s.tensors()[0].data()[0] - x2).abs() < 1e-12);
    }

    #[test]
    fn group_rates_are_applied() {
        let mut s = ParamStore::<f64>::new();
        s.register("a", Tensor::vector(vec![1.0]), LrGroup::Vision).unwrap();
        s.register("b", Tensor::vector(vec![1.0]), LrGroup::Graph).unwrap();
        let mut opt = AdamW::new(&s);
        let g = || Some(Tensor::vector(vec![1.0]));
        opt.step(&mut s, &[g(), g()], |grp| if grp == LrGroup::Vision { 0.1 } else { 0.2 }, &cfg(0.0)).unwrap();
        let t = s.tensors();
        assert!((t[0].data()[0] - 0.9).abs() < 1e-6);
        assert!((t[1].data()[0] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = one_param(&[1.0]);
        let mut opt = AdamW::new(&s);
        let err = opt.step(&mut s, &[Some(Tensor::vector(vec![f64::NAN]))], |_| 0.1, &cfg(0.0)).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient(ref n) if n == "x"));
        assert_eq!(opt.t, 0);
        assert_eq!(s.tensors()[0].data(), &[1.0]);
    }

    #[test]
    fn quadratic_decreases_monotonically_after_warmup() {
        let train = super::super::TrainConfig {
            warmup_iters: 20,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut s = one_param(&[3.0]);
        let mut opt = AdamW::new(&s);
        let mut xs = Vec::new();
        for step in 1..=200u64 {
            let x = s.tensors()[0].data()[0];
            let lr = |_| 0.02 * super::super::lr_at(step, LrGroup::Other, &train, 200) / train.peak_lr.other;
            opt.step(&mut s, &[Some(Tensor::vector(vec![2.0 * x]))], lr, &cfg(0.0)).unwrap();
            xs.push(s.tensors()[0].data()[0].abs());
        }
        for w in xs[20..].windows(2) {
            assert!(w[1] < w[0], "{w:?}");
        }
        assert!(xs[199] < 3.0);
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g: Vec<Option<Tensor<f64>>> = vec![Some(Tensor::vector(vec![3.0, 4.0])), None];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        let d = g[0].as_ref().unwrap().data();
        assert!((d[0] - 0.6).abs() < 1e-12 && (d[1] - 0.8).abs() < 1e-12);
    }
}
