//! Intent providers, the greedy next-stroke proposer and Euler sampling of
//! stroke-parameter velocity fields.

use std::f64::consts::PI;

use crate::brush::{BrushMode, Stamp, StampShape};
use crate::canvas::{Canvas, Mask};
use crate::error::{Error, Result};

/// Estimates the intended final image from the current canvas.
pub trait IntentProvider: Send + Sync {
    fn intent(&self, canvas: &Canvas) -> Result<Canvas>;
}

/// Intent is a fixed reference image.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOracle {
    reference: Canvas,
}

impl ReferenceOracle {
    pub fn new(reference: Canvas) -> Self {
        ReferenceOracle { reference }
    }

    pub fn reference(&self) -> &Canvas {
        &self.reference
    }
}

impl IntentProvider for ReferenceOracle {
    fn intent(&self, canvas: &Canvas) -> Result<Canvas> {
        intent_reference(canvas, &self.reference)
    }
}

pub fn intent_reference(canvas: &Canvas, reference: &Canvas) -> Result<Canvas> {
    canvas.ensure_same_dims(reference)?;
    Ok(reference.clone())
}

/// Stroke parameters `(x, y, p, r, theta, R, G, B)` scaled to `[0, 1]`:
/// positions by canvas extent, radius by the canvas diagonal and theta from
/// `[-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrokeVector8(pub [f64; 8]);

impl StrokeVector8 {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const PRESSURE: usize = 2;
    pub const RADIUS: usize = 3;
    pub const THETA: usize = 4;
    pub const COLOR: usize = 5;

    pub fn from_stamp(stamp: &Stamp, width: usize, height: usize) -> Self {
        let diag = (width as f64).hypot(height as f64);
        let (p, r) = match stamp.shape {
            StampShape::Tip { radius, pressure, .. } => (pressure, radius),
            StampShape::Gaussian { sigma_x, sigma_y } => (1.0, sigma_x.max(sigma_y) * 2.0),
        };
        StrokeVector8([
            stamp.x / width as f64,
            stamp.y / height as f64,
            p,
            r / diag,
            (stamp.theta + PI) / (2.0 * PI),
            stamp.color[0],
            stamp.color[1],
            stamp.color[2],
        ])
    }

    pub fn to_stamp(&self, mode: &BrushMode, width: usize, height: usize) -> Stamp {
        let a = &self.0;
        let diag = (width as f64).hypot(height as f64);
        Stamp::with_mode(
            mode,
            a[Self::X] * width as f64,
            a[Self::Y] * height as f64,
            a[Self::RADIUS] * diag,
            a[Self::THETA] * 2.0 * PI - PI,
            a[Self::PRESSURE],
            [a[5], a[6], a[7]],
        )
    }

    pub fn clamped(&self) -> Self {
        StrokeVector8(self.0.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn is_normalized(&self) -> bool {
        self.0.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Straight-line interpolant and its velocity at time `t`.
pub fn fm_pair(src: &StrokeVector8, tar: &StrokeVector8, t: f64) -> Result<(StrokeVector8, [f64; 8])> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::param("t", t, "must lie in [0, 1]"));
    }
    let mut at = [0.0; 8];
    let mut ut = [0.0; 8];
    for i in 0..8 {
        ut[i] = tar.0[i] - src.0[i];
        at[i] = (1.0 - t) * src.0[i] + t * tar.0[i];
    }
    Ok((StrokeVector8(at), ut))
}

/// `v(a, context, t)`; `context` is an opaque conditioning vector.
pub trait VelocityField: Sync {
    fn velocity(&self, a: &[f64; 8], context: &[f64], t: f64) -> [f64; 8];
}

impl<F> VelocityField for F
where
    F: Fn(&[f64; 8], &[f64], f64) -> [f64; 8] + Sync,
{
    fn velocity(&self, a: &[f64; 8], context: &[f64], t: f64) -> [f64; 8] {
        self(a, context, t)
    }
}

/// Constant velocity `target - source`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StraightLineField {
    pub source: StrokeVector8,
    pub target: StrokeVector8,
}

impl VelocityField for StraightLineField {
    fn velocity(&self, _a: &[f64; 8], _context: &[f64], _t: f64) -> [f64; 8] {
        let mut v = [0.0; 8];
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = self.target.0[i] - self.source.0[i];
        }
        v
    }
}

pub const DEFAULT_EULER_STEPS: usize = 10;

/// Forward Euler from `t = 0` to `t = 1` without clamping.
pub fn euler_integrate_raw(
    a0: &[f64; 8],
    field: &dyn VelocityField,
    context: &[f64],
    steps: usize,
) -> Result<[f64; 8]> {
    if steps == 0 {
        return Err(Error::Invalid("steps must be at least 1".into()));
    }
    let h = 1.0 / steps as f64;
    let mut a = *a0;
    for k in 0..steps {
        let v = field.velocity(&a, context, k as f64 * h);
        if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
            return Err(Error::param("velocity", *bad, "must be finite"));
        }
        for i in 0..8 {
            a[i] += h * v[i];
        }
    }
    Ok(a)
}

/// Forward Euler, clamped to `[0, 1]^8` once at the end.
pub fn euler_integrate(
    a0: &StrokeVector8,
    field: &dyn VelocityField,
    context: &[f64],
    steps: usize,
) -> Result<StrokeVector8> {
    euler_integrate_raw(&a0.0, field, context, steps).map(|a| StrokeVector8(a).clamped())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposerConfig {
    /// Radius at progress 0, in pixels.
    pub r_max: f64,
    /// Radius at progress 1, in pixels.
    pub r_min: f64,
    pub pressure: f64,
}

impl Default for ProposerConfig {
    fn default() -> Self {
        ProposerConfig {
            r_max: 6.0,
            r_min: 2.0,
            pressure: 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Proposal {
    Stroke(StrokeVector8),
    /// No residual left to paint.
    Complete,
}

/// Squared RGB residual per pixel.
pub fn residual(canvas: &Canvas, intent: &Canvas) -> Result<Vec<f64>> {
    canvas.ensure_same_dims(intent)?;
    Ok(canvas
        .data()
        .chunks_exact(3)
        .zip(intent.data().chunks_exact(3))
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum())
        .collect())
}

/// Orientation of the intent luminance gradient at a pixel, by central
/// differences clamped at the border. Zero gradient gives 0.
pub fn gradient_orientation(intent: &Canvas, x: usize, y: usize) -> f64 {
    let (w, h) = intent.dims();
    let lum = |x: usize, y: usize| {
        let c = intent.pixel(x, y);
        0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
    };
    let gx = lum((x + 1).min(w - 1), y) - lum(x.saturating_sub(1), y);
    let gy = lum(x, (y + 1).min(h - 1)) - lum(x, y.saturating_sub(1));
    if gx == 0.0 && gy == 0.0 {
        0.0
    } else {
        gy.atan2(gx)
    }
}

/// Greedy proposal at the largest residual (first in row-major order on
/// ties), restricted to `mask` when given.
pub fn propose_next_stroke(
    canvas: &Canvas,
    intent: &Canvas,
    _history: &[Stamp],
    mask: Option<&Mask>,
    progress: f64,
    cfg: &ProposerConfig,
) -> Result<Proposal> {
    let res = residual(canvas, intent)?;
    let (w, h) = canvas.dims();
    if let Some(m) = mask {
        if m.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                actual: m.dims(),
            });
        }
        if m.is_empty() {
            return Err(Error::EmptyMask);
        }
    }
    if !(0.0..=1.0).contains(&progress) {
        return Err(Error::param("progress", progress, "must lie in [0, 1]"));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, &r) in res.iter().enumerate() {
        if mask.is_some_and(|m| !m.get(i % w, i / w)) {
            continue;
        }
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    let (idx, value) = best.expect("mask is nonempty");
    if value == 0.0 {
        return Ok(Proposal::Complete);
    }
    let (x, y) = (idx % w, idx / w);
    let diag = (w as f64).hypot(h as f64);
    let radius = cfg.r_max - (cfg.r_max - cfg.r_min) * progress;
    let theta = gradient_orientation(intent, x, y);
    let c = intent.pixel(x, y);
    Ok(Proposal::Stroke(StrokeVector8([
        (x as f64 + 0.5) / w as f64,
        (y as f64 + 0.5) / h as f64,
        cfg.pressure,
        radius / diag,
        (theta + PI) / (2.0 * PI),
        c[0],
        c[1],
        c[2],
    ])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64) -> StrokeVector8 {
        StrokeVector8([x, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7])
    }

    #[test]
    fn oracle_returns_reference() {
        let r = Canvas::new(3, 2, [0.4; 3]);
        let o = ReferenceOracle::new(r.clone());
        assert_eq!(o.intent(&Canvas::new(3, 2, [0.0; 3])).unwrap(), r);
        assert!(o.intent(&Canvas::new(2, 2, [0.0; 3])).is_err());
    }

    #[test]
    fn fm_pair_endpoints() {
        let (a, b) = (v(0.2), v(0.9));
        let (a0, u) = fm_pair(&a, &b, 0.0).unwrap();
        assert_eq!(a0, a);
        assert!((u[0] - 0.7).abs() < 1e-15 && u[1] == 0.0);
        assert_eq!(fm_pair(&a, &b, 1.0).unwrap().0, b);
        assert!(fm_pair(&a, &b, 1.5).is_err());
    }

    #[test]
    fn euler_constant_and_straight_line() {
        let c = [0.01, -0.02, 0.0, 0.05, 0.1, -0.1, 0.2, 0.0];
        let field = move |_: &[f64; 8], _: &[f64], _: f64| c;
        for steps in [1, 3, 7, 10, 64] {
            let out = euler_integrate_raw(&v(0.3).0, &field, &[], steps).unwrap();
            for i in 0..8 {
                assert!((out[i] - (v(0.3).0[i] + c[i])).abs() < 1e-13);
            }
        }
        let line = StraightLineField { source: v(0.1), target: v(0.8) };
        let end = euler_integrate(&v(0.1), &line, &[], 10).unwrap();
        assert!((end.0[0] - 0.8).abs() < 1e-15);
        assert!(euler_integrate(&v(0.1), &line, &[], 0).is_err());
        let bad = |_: &[f64; 8], _: &[f64], _: f64| [f64::NAN; 8];
        assert!(euler_integrate(&v(0.1), &bad, &[], 2).is_err());
    }

    #[test]
    fn euler_linear_field_error_halves() {
        let decay = |a: &[f64; 8], _: &[f64], _: f64| a.map(|x| -x);
        let a0 = [1.0, 0.5, 0.25, 0.8, 0.3, 0.6, 0.9, 0.1];
        let err = |n| {
            let out = euler_integrate_raw(&a0, &decay, &[], n).unwrap();
            (0..8).map(|i| (out[i] - a0[i] * (-1.0f64).exp()).abs()).fold(0.0, f64::max)
        };
        for n in [4, 8, 16] {
            assert!(err(2 * n) <= 0.6 * err(n));
        }
    }

    #[test]
    fn proposer_targets_residual() {
        let canvas = Canvas::new(16, 16, [1.0; 3]);
        let mut intent = canvas.clone();
        for y in 5..9 {
            for x in 10..14 {
                intent.set_pixel(x, y, [0.9, 0.1, 0.1]);
            }
        }
        let cfg = ProposerConfig::default();
        let Proposal::Stroke(s) = propose_next_stroke(&canvas, &intent, &[], None, 0.0, &cfg).unwrap() else {
            panic!("expected a stroke");
        };
        assert_eq!(((s.0[0] * 16.0) as usize, (s.0[1] * 16.0) as usize), (10, 5));
        assert_eq!(&s.0[5..], &[0.9, 0.1, 0.1]);
        assert_eq!(
            propose_next_stroke(&intent, &intent, &[], None, 0.5, &cfg).unwrap(),
            Proposal::Complete
        );
        let left = Mask::from_fn(16, 16, |x, _| x < 8);
        let mut off = intent.clone();
        off.set_pixel(2, 2, [0.5; 3]);
        let Proposal::Stroke(m) = propose_next_stroke(&canvas, &off, &[], Some(&left), 1.0, &cfg).unwrap() else {
            panic!("expected a stroke");
        };
        assert_eq!(((m.0[0] * 16.0) as usize, (m.0[1] * 16.0) as usize), (2, 2));
        assert!((m.0[3] * 16f64.hypot(16.0) - cfg.r_min).abs() < 1e-12);
    }

    #[test]
    fn stamp_round_trip() {
        let s = Stamp::hard_round(12.0, 7.0, 3.0, 0.6, [0.1, 0.2, 0.3]);
        let a = StrokeVector8::from_stamp(&s, 32, 16);
        assert!(a.is_normalized());
        let back = a.to_stamp(&BrushMode::HardRound, 32, 16);
        assert!((back.x - 12.0).abs() < 1e-12 && (back.y - 7.0).abs() < 1e-12);
        assert!((back.nominal_radius() - 3.0).abs() < 1e-12);
        assert!(back.theta.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn proposal_inside_mask_and_deterministic(seed in 0u64..1000, x0 in 0usize..12, y0 in 0usize..12) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let canvas = Canvas::new(12, 12, [0.5; 3]);
            let intent = Canvas::from_data(12, 12, (0..432).map(|_| rng.gen()).collect()).unwrap();
            let mask = Mask::from_fn(12, 12, |x, y| x.abs_diff(x0) + y.abs_diff(y0) <= 3);
            let cfg = ProposerConfig::default();
            let p = propose_next_stroke(&canvas, &intent, &[], Some(&mask), 0.3, &cfg).unwrap();
            prop_assert_eq!(p, propose_next_stroke(&canvas, &intent, &[], Some(&mask), 0.3, &cfg).unwrap());
            if let Proposal::Stroke(s) = p {
                prop_assert!(mask.contains_point(s.0[0] * 12.0, s.0[1] * 12.0));
                prop_assert!(s.is_normalized());
            }
        }
    }
}
