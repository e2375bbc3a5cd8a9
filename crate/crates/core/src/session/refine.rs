use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::brush::{render_painter, Stamp, TextureBank};
use crate::canvas::{Canvas, Rect};
use crate::diff::{loss_mse, optimize_strokes, OptimConfig, ParamLayout, RenderSettings, Scene};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineStatus {
    Pending,
    Done,
    /// The region or the stroke was edited first; the result is discarded.
    Superseded,
    Failed,
}

/// A background refinement of one history entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineJob {
    pub job_id: u64,
    pub stroke_id: u64,
    pub crop: Rect,
    pub status: RefineStatus,
    /// Committed stamps once `Done`.
    pub result: Option<Vec<Stamp>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JobEvent {
    pub job_id: u64,
    pub stroke_id: u64,
    pub status: RefineStatus,
}

/// Bounding box of the stamp centers padded by the largest nominal radius.
pub(super) fn crop_for(stamps: &[Stamp], width: usize, height: usize) -> Result<Rect> {
    let first = stamps.first().ok_or_else(|| Error::Invalid("entry has no stamps".into()))?;
    let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
    let mut pad: f64 = 0.0;
    for s in stamps {
        x0 = x0.min(s.x);
        y0 = y0.min(s.y);
        x1 = x1.max(s.x);
        y1 = y1.max(s.y);
        pad = pad.max(s.nominal_radius());
    }
    let crop = Rect::covering(x0, y0, x1, y1).pad(pad.ceil() as i64).clip(width, height);
    if crop.is_empty() {
        return Err(Error::Invalid("stroke lies outside the canvas".into()));
    }
    Ok(crop)
}

/// Immutable inputs of one worker.
pub(super) struct RefineInput {
    pub stamps: Vec<Stamp>,
    pub crop: Rect,
    /// Canvas crop before the entry was painted.
    pub background: Canvas,
    pub target: Canvas,
    pub textures: Arc<TextureBank>,
    pub optim: OptimConfig,
    pub delay: Duration,
}

/// Optimize the stamps inside the crop. Returns the original stamps when
/// the optimized ones do not lower the displayed crop loss.
pub(super) fn run(input: RefineInput) -> Result<Vec<Stamp>> {
    if !input.delay.is_zero() {
        std::thread::sleep(input.delay);
    }
    let (dx, dy) = (input.crop.x as f64, input.crop.y as f64);
    let local: Vec<Stamp> = input.stamps.iter().map(|s| s.translated(-dx, -dy)).collect();
    let scene = Scene::new(&input.background, &input.textures).with_settings(RenderSettings::for_stamps(&local));
    let layout = ParamLayout::new(input.crop.w, input.crop.h, local.clone())?;
    let (best, _) = optimize_strokes(&layout.encode(), &layout, &scene, &input.target, &input.optim)?;
    let refined = layout.decode(&best)?;

    let display = |stamps: &[Stamp]| -> Result<f64> {
        let mut c = input.background.clone();
        render_painter(&mut c, stamps, &input.textures, 0.0)?;
        loss_mse(&c, &input.target)
    };
    if display(&refined)? < display(&local)? {
        Ok(refined.iter().map(|s| s.translated(dx, dy)).collect())
    } else {
        Ok(input.stamps)
    }
}
