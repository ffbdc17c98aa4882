use core::f64::consts::PI;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::train::TrainConfig;

/// Linear warmup from 0 to `lr_max`, then cosine decay to `lr_min` at
/// `steps`. The endpoints are returned exactly.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let (w, n) = (cfg.warmup_steps, cfg.steps);
    if step == w {
        return cfg.lr_max;
    }
    if step < w {
        return cfg.lr_max * step as f64 / w as f64;
    }
    if step >= n {
        return cfg.lr_min;
    }
    let progress = (step - w) as f64 / (n - w) as f64;
    cfg.lr_min + (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * progress).cos()) / 2.0
}
