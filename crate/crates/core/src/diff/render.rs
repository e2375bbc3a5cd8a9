use crate::brush::{composite_weighted_sum, AlphaGrad, BlendAccum, Stamp, StampSampler, TextureBank};
use crate::canvas::{Canvas, Rect, Rgb};
use crate::error::{Error, Result};

use super::params::{Param, ParamBounds, ParamLayout, ParamVector};

/// How stamps are combined during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Compositing {
    /// Order-independent alpha-weighted mean (see `composite_weighted_sum`).
    #[default]
    WeightedSum,
    /// Sequential alpha-over in stamp order.
    Over,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    pub compositing: Compositing,
    /// Edge width of hard-round disks in pixels.
    pub soften: f64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            compositing: Compositing::WeightedSum,
            soften: 1.0,
        }
    }
}

impl RenderSettings {
    /// Weighted-sum blending when every stamp is Gaussian, alpha-over in
    /// order as soon as a tip stamp is involved.
    pub fn for_stamps(stamps: &[Stamp]) -> Self {
        let all_gaussian = stamps.iter().all(|s| matches!(s.shape, crate::brush::StampShape::Gaussian { .. }));
        RenderSettings {
            compositing: if all_gaussian { Compositing::WeightedSum } else { Compositing::Over },
            ..RenderSettings::default()
        }
    }
}

/// Everything besides the parameters that a render depends on.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub background: &'a Canvas,
    pub textures: &'a TextureBank,
    pub settings: RenderSettings,
    pub bounds: ParamBounds,
}

impl<'a> Scene<'a> {
    pub fn new(background: &'a Canvas, textures: &'a TextureBank) -> Self {
        Scene {
            background,
            textures,
            settings: RenderSettings::default(),
            bounds: ParamBounds::default(),
        }
    }

    pub fn with_settings(mut self, settings: RenderSettings) -> Self {
        self.settings = settings;
        self
    }
}

/// Loss gradient with respect to one stamp, in pixel units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StampGrad {
    pub x: f64,
    pub y: f64,
    pub size: [f64; 2],
    pub theta: f64,
    pub pressure: f64,
    pub color: Rgb,
}

impl StampGrad {
    fn add_alpha(&mut self, g_alpha: f64, d: &AlphaGrad) {
        self.x += g_alpha * d.x;
        self.y += g_alpha * d.y;
        self.size[0] += g_alpha * d.size[0];
        self.size[1] += g_alpha * d.size[1];
        self.theta += g_alpha * d.theta;
        self.pressure += g_alpha * d.pressure;
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::X => self.x,
            Param::Y => self.y,
            Param::Radius | Param::SigmaX => self.size[0],
            Param::SigmaY => self.size[1],
            Param::Theta => self.theta,
            Param::Pressure => self.pressure,
            Param::Red => self.color[0],
            Param::Green => self.color[1],
            Param::Blue => self.color[2],
        }
    }
}

/// Mean over pixels of the squared RGB error summed over channels.
pub fn loss_mse(image: &Canvas, target: &Canvas) -> Result<f64> {
    image.ensure_same_dims(target)?;
    let n = (image.width() * image.height()) as f64;
    if n == 0.0 {
        return Err(Error::Invalid("empty image".into()));
    }
    let sum: f64 = image
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / n)
}

fn samplers<'a>(stamps: &[Stamp], scene: &Scene<'a>) -> Result<Vec<(StampSampler<'a>, Rect)>> {
    let (w, h) = scene.background.dims();
    stamps
        .iter()
        .map(|s| {
            let smp = StampSampler::new(s, scene.textures, scene.settings.soften)?;
            let rect = smp.support().clip(w, h);
            Ok((smp, rect))
        })
        .collect()
}

fn pixels(r: Rect) -> impl Iterator<Item = (i64, i64)> {
    (r.y..r.bottom()).flat_map(move |py| (r.x..r.right()).map(move |px| (px, py)))
}

#[inline]
fn center(px: i64, py: i64) -> (f64, f64) {
    (px as f64 + 0.5, py as f64 + 0.5)
}

/// Render explicit stamps with the scene's compositing mode.
pub fn render_stamps(stamps: &[Stamp], scene: &Scene) -> Result<Canvas> {
    let smps = samplers(stamps, scene)?;
    let (w, h) = scene.background.dims();
    match scene.settings.compositing {
        Compositing::WeightedSum => {
            let maps: Vec<_> = smps
                .iter()
                .zip(stamps)
                .map(|((smp, _), s)| (smp.alpha_map_clipped(w, h), s.color))
                .collect();
            composite_weighted_sum(&maps, scene.background)
        }
        Compositing::Over => {
            let mut canvas = scene.background.clone();
            for ((smp, _), s) in smps.iter().zip(stamps) {
                crate::brush::composite_over(&mut canvas, &smp.alpha_map_clipped(w, h), s.color)?;
            }
            Ok(canvas)
        }
    }
}

/// Render a parameter vector. Free parameters outside the valid optimization
/// ranges are rejected.
pub fn render_diff(params: &ParamVector, layout: &ParamLayout, scene: &Scene) -> Result<Canvas> {
    check_layout(layout, scene)?;
    let stamps = layout.decode_checked(params, &scene.bounds)?;
    render_stamps(&stamps, scene)
}

fn check_layout(layout: &ParamLayout, scene: &Scene) -> Result<()> {
    let dims = scene.background.dims();
    if (layout.width(), layout.height()) != dims {
        return Err(Error::DimensionMismatch {
            expected: (layout.width(), layout.height()),
            actual: dims,
        });
    }
    Ok(())
}

/// Loss of explicit stamps against `target` and its gradient per stamp.
pub fn loss_and_grad_stamps(
    stamps: &[Stamp],
    scene: &Scene,
    target: &Canvas,
) -> Result<(f64, Vec<StampGrad>)> {
    scene.background.ensure_same_dims(target)?;
    let smps = samplers(stamps, scene)?;
    match scene.settings.compositing {
        Compositing::WeightedSum => weighted_sum_backward(stamps, &smps, scene.background, target),
        Compositing::Over => over_backward(stamps, &smps, scene.background, target),
    }
}

fn output_grad(out: &Canvas, target: &Canvas) -> (f64, Vec<f64>) {
    let n = (out.width() * out.height()) as f64;
    let mut loss = 0.0;
    let g = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    (loss / n, g)
}

fn weighted_sum_backward(
    stamps: &[Stamp],
    smps: &[(StampSampler, Rect)],
    bg: &Canvas,
    target: &Canvas,
) -> Result<(f64, Vec<StampGrad>)> {
    let (w, h) = bg.dims();
    let mut acc = vec![BlendAccum::default(); w * h];
    for ((smp, rect), s) in smps.iter().zip(stamps) {
        for (px, py) in pixels(*rect) {
            let (u, v) = center(px, py);
            let a = smp.alpha(u, v);
            if a != 0.0 {
                acc[py as usize * w + px as usize].add(a, &s.color);
            }
        }
    }
    let mut out = bg.clone();
    for (i, a) in acc.iter().enumerate() {
        if a.sum > 0.0 {
            out.set_pixel(i % w, i / w, a.resolve(&bg.pixel(i % w, i / w)));
        }
    }
    let (loss, g_out) = output_grad(&out, target);

    let mut grads = vec![StampGrad::default(); stamps.len()];
    for (((smp, rect), s), grad) in smps.iter().zip(stamps).zip(grads.iter_mut()) {
        for (px, py) in pixels(*rect) {
            let (u, v) = center(px, py);
            let (a, da) = smp.alpha_grad(u, v);
            let idx = py as usize * w + px as usize;
            let cell = &acc[idx];
            let b = bg.pixel(px as usize, py as usize);
            let g = &g_out[3 * idx..3 * idx + 3];
            let mut g_alpha = 0.0;
            if cell.sum > 0.0 {
                let m = cell.mean();
                let t = cell.coverage;
                let dt = cell.coverage_partial(a);
                for c in 0..3 {
                    g_alpha += g[c] * (t * (s.color[c] - m[c]) / cell.sum + dt * (m[c] - b[c]));
                    grad.color[c] += g[c] * t * a / cell.sum;
                }
            } else {
                // no stamp covers the pixel: the blend starts as c_i over bg
                for c in 0..3 {
                    g_alpha += g[c] * (s.color[c] - b[c]);
                }
            }
            grad.add_alpha(g_alpha, &da);
        }
    }
    Ok((loss, grads))
}

fn over_backward(
    stamps: &[Stamp],
    smps: &[(StampSampler, Rect)],
    bg: &Canvas,
    target: &Canvas,
) -> Result<(f64, Vec<StampGrad>)> {
    let w = bg.width();
    let mut canvas = bg.clone();
    // pixel values under each stamp just before it was composited
    let mut before: Vec<Vec<f64>> = Vec::with_capacity(stamps.len());
    for ((smp, rect), s) in smps.iter().zip(stamps) {
        let mut saved = Vec::with_capacity(rect.w * rect.h * 3);
        for (px, py) in pixels(*rect) {
            let (x, y) = (px as usize, py as usize);
            let hp = canvas.pixel(x, y);
            saved.extend_from_slice(&hp);
            let (u, v) = center(px, py);
            let a = smp.alpha(u, v);
            if a != 0.0 {
                let mut o = [0.0; 3];
                for c in 0..3 {
                    o[c] = (a * s.color[c] + (1.0 - a) * hp[c]).clamp(0.0, 1.0);
                }
                canvas.set_pixel(x, y, o);
            }
        }
        before.push(saved);
    }
    let (loss, mut g) = output_grad(&canvas, target);

    let mut grads = vec![StampGrad::default(); stamps.len()];
    for i in (0..stamps.len()).rev() {
        let (smp, rect) = &smps[i];
        let color = stamps[i].color;
        for (k, (px, py)) in pixels(*rect).enumerate() {
            let (u, v) = center(px, py);
            let (a, da) = smp.alpha_grad(u, v);
            let idx = 3 * (py as usize * w + px as usize);
            let hp = &before[i][3 * k..3 * k + 3];
            let mut g_alpha = 0.0;
            for c in 0..3 {
                g_alpha += g[idx + c] * (color[c] - hp[c]);
                grads[i].color[c] += g[idx + c] * a;
                g[idx + c] *= 1.0 - a;
            }
            grads[i].add_alpha(g_alpha, &da);
        }
    }
    Ok((loss, grads))
}

/// Loss and analytic gradient in normalized parameter units.
pub fn loss_and_grad(
    params: &ParamVector,
    layout: &ParamLayout,
    scene: &Scene,
    target: &Canvas,
) -> Result<(f64, Vec<f64>)> {
    check_layout(layout, scene)?;
    let stamps = layout.decode_checked(params, &scene.bounds)?;
    let (loss, per_stamp) = loss_and_grad_stamps(&stamps, scene, target)?;
    let grad = layout
        .slots()
        .iter()
        .map(|slot| per_stamp[slot.stamp].get(slot.param) * layout.scale(slot.param))
        .collect();
    Ok((loss, grad))
}

/// Analytic gradient of the MSE loss in normalized parameter units.
pub fn grad_loss(
    params: &ParamVector,
    layout: &ParamLayout,
    scene: &Scene,
    target: &Canvas,
) -> Result<Vec<f64>> {
    loss_and_grad(params, layout, scene, target).map(|(_, g)| g)
}

/// Loss of a parameter vector.
pub fn loss_of(params: &ParamVector, layout: &ParamLayout, scene: &Scene, target: &Canvas) -> Result<f64> {
    loss_mse(&render_diff(params, layout, scene)?, target)
}

/// Central-difference gradient with step `eps` in normalized units.
pub fn finite_diff_grad(
    params: &ParamVector,
    layout: &ParamLayout,
    scene: &Scene,
    target: &Canvas,
    eps: f64,
) -> Result<Vec<f64>> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::param("eps", eps, "must be positive"));
    }
    let mut probe = params.clone();
    (0..params.len())
        .map(|k| {
            let x0 = params.0[k];
            probe.0[k] = x0 + eps;
            let up = loss_of(&probe, layout, scene, target)?;
            probe.0[k] = x0 - eps;
            let down = loss_of(&probe, layout, scene, target)?;
            probe.0[k] = x0;
            Ok((up - down) / (2.0 * eps))
        })
        .collect()
}
