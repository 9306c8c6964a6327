//! Per-group learning rates: linear warmup, then cosine decay.

use std::f64::consts::PI;

use crate::numeric::LrGroup;

use super::TrainConfig;

/// Learning rate for optimizer step `step` (1-based) of `total_steps`.
/// Ramps linearly from 0 to the group's peak at `warmup_iters`, then
/// follows a half cosine down to `final_lr` at `total_steps`.
pub fn lr_at(step: u64, group: LrGroup, cfg: &TrainConfig, total_steps: u64) -> f64 {
    let peak = cfg.peak_lr.get(group);
    let warm = cfg.warmup_iters.max(1);
    if step <= warm {
        return peak * step as f64 / warm as f64;
    }
    let span = total_steps.saturating_sub(warm);
    if span == 0 {
        return cfg.final_lr;
    }
    let progress = ((step - warm) as f64 / span as f64).min(1.0);
    cfg.final_lr + (peak - cfg.final_lr) * 0.5 * (1.0 + (PI * progress).cos())
}
