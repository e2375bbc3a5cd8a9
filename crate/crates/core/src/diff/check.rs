//! Randomized comparison of analytic and finite-difference gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::brush::{Stamp, TextureBank};
use crate::canvas::Canvas;
use crate::error::Result;

use super::params::ParamLayout;
use super::render::{finite_diff_grad, grad_loss, Scene};

/// Knobs of [`gradient_suite`]. The defaults are the acceptance setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub scenes: usize,
    pub size: usize,
    pub max_stamps: usize,
    /// Central-difference step in normalized units.
    pub eps: f64,
    pub rel_tol: f64,
    /// Below this magnitude a gradient is compared absolutely.
    pub abs_tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            scenes: 100,
            size: 32,
            max_stamps: 8,
            eps: 1e-4,
            rel_tol: 1e-3,
            abs_tol: 1e-6,
        }
    }
}

/// Worst coordinate of the whole run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradMismatch {
    pub scene: usize,
    pub stamp: usize,
    pub param: &'static str,
    pub analytic: f64,
    pub numeric: f64,
    /// Relative error, or absolute error for tiny gradients, divided by
    /// the matching tolerance. Above 1 is a failure.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub scenes: usize,
    pub coordinates: usize,
    pub failures: usize,
    pub worst: Option<GradMismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.coordinates > 0
    }
}

/// Error of one coordinate relative to its tolerance.
pub fn gradient_error_ratio(analytic: f64, numeric: f64, cfg: &GradCheckConfig) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    let diff = (analytic - numeric).abs();
    if scale < cfg.abs_tol {
        diff / cfg.abs_tol
    } else {
        diff / scale / cfg.rel_tol
    }
}

/// One random Gaussian scene: stamps, background color and target image.
pub fn random_gaussian_scene(rng: &mut impl Rng, size: usize, max_stamps: usize) -> (Vec<Stamp>, Canvas, Canvas) {
    let n = rng.gen_range(1..=max_stamps.max(1));
    let s = size as f64;
    let stamps = (0..n)
        .map(|_| {
            Stamp::gaussian(
                rng.gen_range(0.2 * s..0.8 * s),
                rng.gen_range(0.2 * s..0.8 * s),
                rng.gen_range(0.05 * s..0.2 * s),
                rng.gen_range(0.05 * s..0.2 * s),
                rng.gen_range(-3.0..3.0),
                // away from the color bounds so that probes stay valid
                [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)],
            )
        })
        .collect();
    let background = Canvas::new(size, size, [rng.gen(), rng.gen(), rng.gen()]);
    let target = Canvas::from_data(size, size, (0..size * size * 3).map(|_| rng.gen()).collect())
        .expect("buffer matches dims");
    (stamps, background, target)
}

/// Compare analytic gradients against central differences on randomized
/// Gaussian scenes rendered with the weighted-sum blend.
pub fn gradient_suite(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let textures = TextureBank::new();
    let mut report = GradCheckReport {
        scenes: cfg.scenes,
        coordinates: 0,
        failures: 0,
        worst: None,
    };
    for scene_idx in 0..cfg.scenes {
        let (stamps, background, target) = random_gaussian_scene(&mut rng, cfg.size, cfg.max_stamps);
        let layout = ParamLayout::new(cfg.size, cfg.size, stamps)?;
        let scene = Scene::new(&background, &textures);
        let p = layout.encode();
        let an = grad_loss(&p, &layout, &scene, &target)?;
        let fd = finite_diff_grad(&p, &layout, &scene, &target, cfg.eps)?;
        for (k, (&a, &f)) in an.iter().zip(&fd).enumerate() {
            report.coordinates += 1;
            let ratio = gradient_error_ratio(a, f, cfg);
            if !(ratio <= 1.0) {
                report.failures += 1;
            }
            if report.worst.as_ref().map_or(true, |w| !(ratio <= w.ratio)) {
                let slot = layout.slots()[k];
                report.worst = Some(GradMismatch {
                    scene: scene_idx,
                    stamp: slot.stamp,
                    param: slot.param.name(),
                    analytic: a,
                    numeric: f,
                    ratio,
                });
            }
        }
    }
    Ok(report)
}
