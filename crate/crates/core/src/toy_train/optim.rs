use super::model::TwoTower;

/// Adam with decoupled weight decay. The decay step is `p -= lr · wd · p`, so
/// a zero learning rate leaves every parameter bit-identical.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn step(&mut self, model: &mut TwoTower, grads: &TwoTower, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let state = self.m.iter_mut().zip(self.v.iter_mut());
        for ((p, &g), (m, v)) in model.params_mut().zip(grads.params()).zip(state) {
            *p -= lr * self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// Linear warmup over `warmup` steps, then cosine decay to zero at `total`.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = total.saturating_sub(warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    base * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let (total, warmup, base) = (100, 10, 1e-3);
        assert!((learning_rate(0, total, warmup, base) - 1e-4).abs() < 1e-15);
        assert_eq!(learning_rate(9, total, warmup, base), base);
        assert_eq!(learning_rate(10, total, warmup, base), base);
        assert!(learning_rate(99, total, warmup, base) < 1e-6);
        let lrs: Vec<f64> = (10..100).map(|s| learning_rate(s, total, warmup, base)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_lr_is_a_null_update() {
        let mut model = TwoTower::new(3, 4, &[5], 2, 0);
        let before = model.clone();
        let mut grads = model.zeros_like();
        grads.params_mut().enumerate().for_each(|(i, g)| *g = i as f64 - 7.0);
        let mut opt = AdamW::new(model.params().count(), 0.05);
        for _ in 0..3 {
            opt.step(&mut model, &grads, 0.0);
        }
        assert_eq!(model, before);
    }

    #[test]
    fn decay_alone_shrinks() {
        let mut model = TwoTower::new(3, 4, &[5], 2, 0);
        let before = model.clone();
        let grads = model.zeros_like();
        let mut opt = AdamW::new(model.params().count(), 0.5);
        opt.step(&mut model, &grads, 0.1);
        for (a, b) in model.params().zip(before.params()) {
            assert!((a - b * 0.95).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }
}
