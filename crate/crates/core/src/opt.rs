//! Adaptive-moment descent without a momentum term: parameters move by
//! lr * g / (sqrt(v_hat) + eps) with v an exponential average of g^2.

use crate::numkit::Mat;

pub struct AdaMoment {
    lr: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    second_moment: Vec<Mat>,
}

impl AdaMoment {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        AdaMoment {
            lr,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            second_moment: shapes.iter().map(|&(r, c)| Mat::zeros(r, c)).collect(),
        }
    }

    pub fn apply(&mut self, params: &mut [Mat], grads: &[Mat]) {
        assert_eq!(params.len(), self.second_moment.len());
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let correction = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.second_moment.iter_mut())
        {
            for k in 0..p.data().len() {
                let gv = g.data()[k];
                let vk = self.beta2 * v.data()[k] + (1.0 - self.beta2) * gv * gv;
                v.data_mut()[k] = vk;
                let v_hat = vk / correction;
                p.data_mut()[k] -= self.lr * gv / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Early-stopping counter: tracks the best value seen and how long ago.
pub struct Patience {
    best: f64,
    epochs_since_best: usize,
    limit: usize,
    minimize: bool,
}

impl Patience {
    pub fn minimizing(limit: usize) -> Self {
        Patience {
            best: f64::INFINITY,
            epochs_since_best: 0,
            limit,
            minimize: true,
        }
    }

    pub fn maximizing(limit: usize) -> Self {
        Patience {
            best: f64::NEG_INFINITY,
            epochs_since_best: 0,
            limit,
            minimize: false,
        }
    }

    /// Record a value; true when it improves on the best so far.
    pub fn observe(&mut self, value: f64) -> bool {
        let improved = if self.minimize {
            value < self.best
        } else {
            value > self.best
        };
        if improved {
            self.best = value;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        improved
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn exhausted(&self) -> bool {
        self.epochs_since_best >= self.limit
    }
}
