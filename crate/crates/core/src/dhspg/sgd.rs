use super::LrSchedule;

/// Heavy-ball SGD: `m ← β·m + ∇f`, `x ← x − α_t·m`.
#[derive(Clone, Debug)]
pub struct MomentumSgd {
    lr: LrSchedule,
    momentum: f64,
    steps_per_epoch: usize,
    buf: Vec<f64>,
    t: usize,
}

impl MomentumSgd {
    pub fn new(lr: LrSchedule, momentum: f64, n_params: usize, steps_per_epoch: usize) -> Self {
        Self {
            lr,
            momentum,
            steps_per_epoch: steps_per_epoch.max(1),
            buf: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.at(self.t, self.steps_per_epoch)
    }

    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) -> f64 {
        let lr = self.lr();
        for ((xi, m), g) in x.iter_mut().zip(&mut self.buf).zip(grad) {
            *m = self.momentum * *m + g;
            *xi -= lr * *m;
        }
        self.t += 1;
        lr
    }
}
