//! Recorded tablet strokes and their expansion into stamp sequences.
//!
//! A stroke is walked along a uniform Catmull-Rom spline through its samples
//! (end samples duplicated to complete the first and last windows) in chords
//! of at most [`WALK_STEP`] pixels. A stamp is emitted each time the travelled
//! chord distance since the previous stamp reaches `tau = 0.05 * r`, where `r`
//! is the pressure radius at the current walk position; the stamp is placed
//! exactly at that distance along the chord. Each stamp's angle is
//! `atan2(dy, dx)` of the displacement from the previous stamp (y grows
//! downwards, so an upward stroke has `theta = -pi/2`); the first stamp sits
//! on the first sample with `theta = 0`.

use serde::{Deserialize, Serialize};

use crate::brush::{
    radius_from_pressure, render_painter, smooth_pressure, BrushMode, PressureConfig, Stamp,
    TextureBank,
};
use crate::canvas::{Canvas, Rect, Rgb};
use crate::error::{Error, Result};

/// Maximum chord length of one step of the spline walk, in pixels.
pub const WALK_STEP: f64 = 0.25;
/// Stamp spacing as a fraction of the current radius.
pub const SPACING_FACTOR: f64 = 0.05;
/// Modal-pressure fraction above which a session is treated as mouse input.
pub const MOUSE_MODAL_THRESHOLD: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabletSample {
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
    /// Milliseconds since the stroke started.
    pub t: f64,
}

impl TabletSample {
    pub fn new(x: f64, y: f64, pressure: f64, t: f64) -> Self {
        TabletSample { x, y, pressure, t }
    }
}

/// One recorded stroke: brush metadata plus ordered tablet samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeRecord {
    pub tool: BrushMode,
    pub base_size: f64,
    pub color: Rgb,
    /// Whether the 0.7/0.3 pressure filter is applied.
    pub smoothing: bool,
    pub samples: Vec<TabletSample>,
}

impl StrokeRecord {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyStroke);
        }
        if !(self.base_size > 0.0) || !self.base_size.is_finite() {
            return Err(Error::param("base_size", self.base_size, "must be positive"));
        }
        for &c in &self.color {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::param("color", c, "channels must lie in [0, 1]"));
            }
        }
        let mut prev_t = f64::NEG_INFINITY;
        for s in &self.samples {
            if !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::param("sample position", s.x, "must be finite"));
            }
            if !(0.0..=1.0).contains(&s.pressure) {
                return Err(Error::param("sample pressure", s.pressure, "must lie in [0, 1]"));
            }
            if !(s.t >= prev_t) {
                return Err(Error::param("sample time", s.t, "timestamps must be nondecreasing"));
            }
            prev_t = s.t;
        }
        Ok(())
    }

    /// Per-sample pressure after the optional jitter filter, seeded with the
    /// first raw sample.
    pub fn effective_pressures(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.samples.len());
        let mut prev = None;
        for s in &self.samples {
            let p = match (self.smoothing, prev) {
                (true, Some(prev)) => smooth_pressure(prev, s.pressure)?,
                _ => s.pressure,
            };
            out.push(p);
            prev = Some(p);
        }
        Ok(out)
    }

    /// Bounding box of the sample positions.
    pub fn sample_bounds(&self) -> Option<Rect> {
        let first = self.samples.first()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for s in &self.samples {
            x0 = x0.min(s.x);
            y0 = y0.min(s.y);
            x1 = x1.max(s.x);
            y1 = y1.max(s.y);
        }
        Some(Rect::covering(x0, y0, x1, y1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlPoint {
    pub x: f64,
    pub y: f64,
    pub pressure: f64,
}

impl ControlPoint {
    fn lerp(&self, other: &ControlPoint, f: f64) -> ControlPoint {
        ControlPoint {
            x: self.x + (other.x - self.x) * f,
            y: self.y + (other.y - self.y) * f,
            pressure: self.pressure + (other.pressure - self.pressure) * f,
        }
    }

    fn dist(&self, other: &ControlPoint) -> f64 {
        (other.x - self.x).hypot(other.y - self.y)
    }
}

/// Four-sample window; the curve runs from `controls[1]` to `controls[2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineSegment {
    pub controls: [ControlPoint; 4],
}

/// Uniform Catmull-Rom in offset form around `p1`, so equal controls give
/// exactly `p1`.
#[inline]
fn catmull_rom_1d(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let d0 = p0 - p1;
    let d2 = p2 - p1;
    let d3 = p3 - p1;
    let c1 = 0.5 * (d2 - d0);
    let c2 = d0 + 2.0 * d2 - 0.5 * d3;
    let c3 = -0.5 * d0 - 1.5 * d2 + 0.5 * d3;
    p1 + t * (c1 + t * (c2 + t * c3))
}

/// Position and pressure on the segment at `t ∈ [0, 1]`; pressure uses the
/// same basis and is clamped to `[0, 1]`.
pub fn eval_catmull_rom(seg: &SplineSegment, t: f64) -> Result<ControlPoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", t, "must lie in [0, 1]"));
    }
    Ok(eval_unchecked(seg, t))
}

fn eval_unchecked(seg: &SplineSegment, t: f64) -> ControlPoint {
    let [p0, p1, p2, p3] = seg.controls;
    if t == 0.0 {
        return p1;
    }
    if t == 1.0 {
        return p2;
    }
    ControlPoint {
        x: catmull_rom_1d(p0.x, p1.x, p2.x, p3.x, t),
        y: catmull_rom_1d(p0.y, p1.y, p2.y, p3.y, t),
        pressure: catmull_rom_1d(p0.pressure, p1.pressure, p2.pressure, p3.pressure, t)
            .clamp(0.0, 1.0),
    }
}

fn segment_length_estimate(seg: &SplineSegment) -> f64 {
    const N: usize = 16;
    let mut prev = seg.controls[1];
    let mut len = 0.0;
    for k in 1..=N {
        let p = eval_unchecked(seg, k as f64 / N as f64);
        len += prev.dist(&p);
        prev = p;
    }
    len
}

/// Expand a stroke into stamps following the spacing and angle rules.
pub fn plan_stamps(stroke: &StrokeRecord, cfg: &PressureConfig) -> Result<Vec<Stamp>> {
    stroke.validate()?;
    let pressures = stroke.effective_pressures()?;
    let ctrl: Vec<ControlPoint> = stroke
        .samples
        .iter()
        .zip(&pressures)
        .map(|(s, &p)| ControlPoint {
            x: s.x,
            y: s.y,
            pressure: p,
        })
        .collect();

    let make = |pt: &ControlPoint, theta: f64| -> Result<Stamp> {
        let r = radius_from_pressure(pt.pressure, cfg)?;
        Ok(Stamp::with_mode(
            &stroke.tool,
            pt.x,
            pt.y,
            r,
            theta,
            pt.pressure,
            stroke.color,
        ))
    };

    let mut stamps = vec![make(&ctrl[0], 0.0)?];
    let n = ctrl.len();
    let mut last = ctrl[0];
    let mut prev = ctrl[0];
    let mut travelled = 0.0;
    for i in 0..n.saturating_sub(1) {
        let seg = SplineSegment {
            controls: [
                ctrl[i.saturating_sub(1)],
                ctrl[i],
                ctrl[i + 1],
                ctrl[(i + 2).min(n - 1)],
            ],
        };
        let steps = ((segment_length_estimate(&seg) / WALK_STEP).ceil() as usize).max(1);
        for k in 1..=steps {
            let next = eval_unchecked(&seg, k as f64 / steps as f64);
            loop {
                let chord = prev.dist(&next);
                let tau = SPACING_FACTOR * radius_from_pressure(prev.pressure, cfg)?;
                let remaining = tau - travelled;
                if chord > 0.0 && chord >= remaining {
                    let pt = prev.lerp(&next, remaining / chord);
                    let theta = (pt.y - last.y).atan2(pt.x - last.x);
                    stamps.push(make(&pt, theta)?);
                    last = pt;
                    prev = pt;
                    travelled = 0.0;
                } else {
                    travelled += chord;
                    prev = next;
                    break;
                }
            }
        }
    }
    Ok(stamps)
}

/// Display-render a stroke: alpha-over of its planned stamps in order.
pub fn render_stroke(
    canvas: &mut Canvas,
    stroke: &StrokeRecord,
    cfg: &PressureConfig,
    textures: &TextureBank,
) -> Result<()> {
    let stamps = plan_stamps(stroke, cfg)?;
    render_painter(canvas, &stamps, textures, 0.0)
}

/// Whether the session looks like mouse input: more than
/// [`MOUSE_MODAL_THRESHOLD`] of all samples share one exact pressure value.
pub fn is_mouse_session(session: &[StrokeRecord]) -> bool {
    is_mouse_session_with(session, MOUSE_MODAL_THRESHOLD)
}

pub fn is_mouse_session_with(session: &[StrokeRecord], threshold: f64) -> bool {
    let mut values: Vec<u64> = session
        .iter()
        .flat_map(|s| s.samples.iter().map(|p| p.pressure.to_bits()))
        .collect();
    if values.is_empty() {
        return false;
    }
    values.sort_unstable();
    let mut modal = 0usize;
    let mut run = 0usize;
    for (i, v) in values.iter().enumerate() {
        run = if i > 0 && values[i - 1] == *v { run + 1 } else { 1 };
        modal = modal.max(run);
    }
    modal as f64 / values.len() as f64 > threshold
}
