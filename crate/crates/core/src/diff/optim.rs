use std::f64::consts::PI;

use crate::canvas::Canvas;
use crate::error::{Error, Result};

use super::params::{ParamLayout, ParamVector};
use super::render::{loss_and_grad, Scene};

/// Cosine-annealed learning rate: `base_lr` at step 0, zero at `total - 1`.
pub fn cosine_lr(step: usize, total: usize, base_lr: f64) -> Result<f64> {
    if total < 2 {
        return Err(Error::Invalid(format!("cosine schedule needs at least 2 steps, got {total}")));
    }
    if step >= total {
        return Err(Error::Invalid(format!("step {step} beyond schedule of {total}")));
    }
    let t = step as f64 / (total - 1) as f64;
    Ok(base_lr * 0.5 * (1.0 + (PI * t).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::LengthMismatch {
            expected: params.len(),
            actual: grads.len().min(state.m.len()),
        });
    }
    if let Some(g) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::param("gradient", *g, "must be finite"));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub iterations: usize,
    pub base_lr: f64,
    /// Early stop when the best loss improved by less than `min_rel_improvement`
    /// (relative) over the last `patience` iterations.
    pub patience: usize,
    pub min_rel_improvement: f64,
    pub adam: AdamConfig,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            iterations: 30,
            base_lr: 0.02,
            patience: 5,
            min_rel_improvement: 1e-4,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIterations,
    EarlyStop,
}

/// Loss at every evaluated iterate, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossTrace {
    pub losses: Vec<f64>,
    pub stop: StopReason,
}

impl LossTrace {
    pub fn initial(&self) -> f64 {
        self.losses[0]
    }

    pub fn best(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Minimum loss seen up to and including each iteration.
    pub fn running_min(&self) -> Vec<f64> {
        self.losses
            .iter()
            .scan(f64::INFINITY, |m, &l| {
                *m = m.min(l);
                Some(*m)
            })
            .collect()
    }
}

/// Adam with a cosine schedule. Parameters are clamped into the scene's
/// bounds before the first evaluation and after every step. Returns the
/// best iterate seen, so its loss equals `trace.best()`.
pub fn optimize_strokes(
    init: &ParamVector,
    layout: &ParamLayout,
    scene: &Scene,
    target: &Canvas,
    cfg: &OptimConfig,
) -> Result<(ParamVector, LossTrace)> {
    if cfg.iterations == 0 {
        return Err(Error::Invalid("iterations must be positive".into()));
    }
    if !(cfg.base_lr >= 0.0) || !cfg.base_lr.is_finite() {
        return Err(Error::param("base_lr", cfg.base_lr, "must be finite and >= 0"));
    }
    let mut params = init.clone();
    layout.clamp(&mut params, &scene.bounds);
    let mut adam = AdamState::new(params.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut best_hist = Vec::with_capacity(cfg.iterations);
    let mut best = (f64::INFINITY, params.clone());
    let mut stop = StopReason::MaxIterations;

    for it in 0..cfg.iterations {
        let (loss, grad) = loss_and_grad(&params, layout, scene, target)?;
        if !loss.is_finite() {
            return Err(Error::param("loss", loss, "must be finite"));
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, params.clone());
        }
        best_hist.push(best.0);
        if best.0 == 0.0 {
            stop = StopReason::EarlyStop;
            break;
        }
        if cfg.patience > 0 && it >= cfg.patience {
            let earlier = best_hist[it - cfg.patience];
            if (earlier - best.0) / earlier < cfg.min_rel_improvement {
                stop = StopReason::EarlyStop;
                break;
            }
        }
        if it + 1 == cfg.iterations {
            break;
        }
        let lr = cosine_lr(it, cfg.iterations, cfg.base_lr)?;
        adam_step(&mut params.0, &grad, &mut adam, lr, &cfg.adam)?;
        layout.clamp(&mut params, &scene.bounds);
    }
    Ok((best.1, LossTrace { losses, stop }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brush::{Stamp, TextureBank};
    use crate::diff::{render_stamps, Compositing, RenderSettings};

    #[test]
    fn cosine_schedule_values() {
        assert_eq!(cosine_lr(0, 30, 0.02).unwrap(), 0.02);
        assert!(cosine_lr(29, 30, 0.02).unwrap().abs() < 1e-18);
        assert!((cosine_lr(15, 31, 0.02).unwrap() - 0.01).abs() < 1e-15);
        assert!(cosine_lr(0, 1, 0.02).is_err());
        assert!(cosine_lr(30, 30, 0.02).is_err());
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[1.0, -3.0, 0.0], &mut s, 0.1, &AdamConfig::default()).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] - 1.1).abs() < 1e-7);
        assert_eq!(p[2], 1.0);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0, 0.0], &mut s, 0.1, &AdamConfig::default()).is_err());
    }

    #[test]
    fn recovers_perturbed_stamp_and_returns_best() {
        let textures = TextureBank::new();
        let bg = Canvas::new(32, 32, [1.0; 3]);
        let truth = vec![Stamp::gaussian(15.0, 17.0, 4.0, 3.0, 0.3, [0.2, 0.3, 0.6])];
        let scene = Scene::new(&bg, &textures);
        let target = render_stamps(&truth, &scene).unwrap();
        let start = vec![Stamp::gaussian(17.5, 15.0, 5.0, 4.0, 0.0, [0.4, 0.4, 0.4])];
        let layout = ParamLayout::new(32, 32, start).unwrap();
        let cfg = OptimConfig { iterations: 60, base_lr: 0.03, ..Default::default() };
        let (best, trace) = optimize_strokes(&layout.encode(), &layout, &scene, &target, &cfg).unwrap();
        assert!(trace.best() < 0.1 * trace.initial(), "{:?}", trace.losses);
        let check = crate::diff::loss_of(&best, &layout, &scene, &target).unwrap();
        assert_eq!(check, trace.best());
    }

    #[test]
    fn optimal_start_stops_early() {
        let textures = TextureBank::new();
        let bg = Canvas::new(16, 16, [0.0; 3]);
        let stamps = vec![Stamp::hard_round(8.0, 8.0, 4.0, 1.0, [1.0, 0.5, 0.25])];
        let scene = Scene::new(&bg, &textures).with_settings(RenderSettings {
            compositing: Compositing::Over,
            soften: 1.0,
        });
        let target = render_stamps(&stamps, &scene).unwrap();
        let layout = ParamLayout::new(16, 16, stamps).unwrap();
        let (best, trace) =
            optimize_strokes(&layout.encode(), &layout, &scene, &target, &OptimConfig::default()).unwrap();
        assert_eq!(trace.stop, StopReason::EarlyStop);
        assert_eq!(trace.losses, vec![0.0]);
        assert_eq!(best, layout.encode());
    }
}
