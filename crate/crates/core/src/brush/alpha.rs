use super::texture::{Texture, TextureBank};
use super::{Stamp, StampShape, Tip, OPACITY_EXPONENT};
use crate::canvas::Rect;
use crate::error::{Error, Result};

/// Gaussian support ends on the ellipse at this many standard deviations.
pub const GAUSSIAN_CUTOFF_SIGMAS: f64 = 4.0;
/// Inside this many standard deviations the Gaussian profile is untouched;
/// between here and the cutoff a C2 smootherstep window brings it to zero.
pub const GAUSSIAN_TAPER_START: f64 = 3.0;

const Q_TAPER: f64 = GAUSSIAN_TAPER_START * GAUSSIAN_TAPER_START;
const Q_CUTOFF: f64 = GAUSSIAN_CUTOFF_SIGMAS * GAUSSIAN_CUTOFF_SIGMAS;

/// Dense alpha values over a pixel rectangle of the canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaMap {
    rect: Rect,
    values: Vec<f64>,
}

impl AlphaMap {
    pub fn new(rect: Rect, values: Vec<f64>) -> Result<Self> {
        if values.len() != rect.w * rect.h {
            return Err(Error::LengthMismatch {
                expected: rect.w * rect.h,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param("alpha", *v, "must lie in [0, 1]"));
        }
        Ok(AlphaMap { rect, values })
    }

    /// A constant map covering `rect`.
    pub fn uniform(rect: Rect, alpha: f64) -> Result<Self> {
        AlphaMap::new(rect, vec![alpha; rect.w * rect.h])
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Alpha at canvas pixel (`px`, `py`); zero outside the map.
    pub fn get(&self, px: i64, py: i64) -> f64 {
        let (lx, ly) = (px - self.rect.x, py - self.rect.y);
        if lx < 0 || ly < 0 || lx >= self.rect.w as i64 || ly >= self.rect.h as i64 {
            0.0
        } else {
            self.values[ly as usize * self.rect.w + lx as usize]
        }
    }
}

/// Partial derivatives of a stamp's alpha at one pixel. `size` holds
/// `[d/d radius, 0]` for tip stamps and `[d/d sigma_x, d/d sigma_y]` for
/// Gaussian stamps.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AlphaGrad {
    pub x: f64,
    pub y: f64,
    pub size: [f64; 2],
    pub theta: f64,
    pub pressure: f64,
}

#[derive(Debug, Clone, Copy)]
enum Profile<'a> {
    Disk {
        radius: f64,
        soften: f64,
        pressure: f64,
        opacity: f64,
    },
    Textured {
        texture: &'a Texture,
        radius: f64,
        pressure: f64,
        opacity: f64,
        // texels per canvas pixel
        scale: f64,
    },
    Gaussian {
        sigma_x: f64,
        sigma_y: f64,
    },
}

/// Prepared evaluator for one stamp's alpha profile.
#[derive(Debug, Clone, Copy)]
pub struct StampSampler<'a> {
    x: f64,
    y: f64,
    cos: f64,
    sin: f64,
    profile: Profile<'a>,
    support: Rect,
}

impl<'a> StampSampler<'a> {
    /// `soften` is the edge width (pixels) of the hard-round disk; zero gives
    /// the binary display disk.
    pub fn new(stamp: &Stamp, textures: &'a TextureBank, soften: f64) -> Result<Self> {
        let texture = match &stamp.shape {
            StampShape::Tip {
                tip: Tip::Texture(id),
                ..
            } => Some(textures.get(id)?),
            _ => None,
        };
        Self::with_texture(stamp, texture, soften)
    }

    fn with_texture(stamp: &Stamp, texture: Option<&'a Texture>, soften: f64) -> Result<Self> {
        stamp.validate()?;
        if !(soften >= 0.0) || !soften.is_finite() {
            return Err(Error::param("soften", soften, "must be >= 0"));
        }
        let (sin, cos) = stamp.theta.sin_cos();
        let (profile, half_w, half_h) = match stamp.shape {
            StampShape::Tip {
                tip: Tip::HardRound,
                radius,
                pressure,
            } => {
                let reach = radius + 0.5 * soften;
                (
                    Profile::Disk {
                        radius,
                        soften,
                        pressure,
                        opacity: pressure.powf(OPACITY_EXPONENT),
                    },
                    reach,
                    reach,
                )
            }
            StampShape::Tip {
                tip: Tip::Texture(ref id),
                radius,
                pressure,
            } => {
                let texture = texture.ok_or_else(|| Error::MissingTexture(id.0.clone()))?;
                let (tw, th) = (texture.width() as f64, texture.height() as f64);
                let scale = tw.max(th) / (2.0 * radius);
                // one texel of zero padding contributes through bilinear sampling
                let reach = ((0.5 * tw + 1.0).powi(2) + (0.5 * th + 1.0).powi(2)).sqrt() / scale;
                (
                    Profile::Textured {
                        texture,
                        radius,
                        pressure,
                        opacity: pressure.powf(OPACITY_EXPONENT),
                        scale,
                    },
                    reach,
                    reach,
                )
            }
            StampShape::Gaussian { sigma_x, sigma_y } => {
                let hw = GAUSSIAN_CUTOFF_SIGMAS
                    * (sigma_x * sigma_x * cos * cos + sigma_y * sigma_y * sin * sin).sqrt();
                let hh = GAUSSIAN_CUTOFF_SIGMAS
                    * (sigma_x * sigma_x * sin * sin + sigma_y * sigma_y * cos * cos).sqrt();
                (Profile::Gaussian { sigma_x, sigma_y }, hw, hh)
            }
        };
        let support = Rect::covering(
            stamp.x - half_w,
            stamp.y - half_h,
            stamp.x + half_w,
            stamp.y + half_h,
        );
        Ok(StampSampler {
            x: stamp.x,
            y: stamp.y,
            cos,
            sin,
            profile,
            support,
        })
    }

    /// Pixel rectangle outside of which alpha is exactly zero (unclipped).
    pub fn support(&self) -> Rect {
        self.support
    }

    /// Alpha at the canvas point (`u`, `v`).
    #[inline]
    pub fn alpha(&self, u: f64, v: f64) -> f64 {
        self.eval::<false>(u, v).0
    }

    /// Alpha at (`u`, `v`) and its derivatives in the stamp parameters.
    #[inline]
    pub fn alpha_grad(&self, u: f64, v: f64) -> (f64, AlphaGrad) {
        self.eval::<true>(u, v)
    }

    /// Alpha at the center of canvas pixel (`px`, `py`).
    #[inline]
    pub fn alpha_at_pixel(&self, px: i64, py: i64) -> f64 {
        self.alpha(px as f64 + 0.5, py as f64 + 0.5)
    }

    pub fn alpha_map(&self) -> AlphaMap {
        self.alpha_map_in(self.support)
    }

    /// Alpha map restricted to a `width × height` canvas.
    pub fn alpha_map_clipped(&self, width: usize, height: usize) -> AlphaMap {
        self.alpha_map_in(self.support.clip(width, height))
    }

    fn alpha_map_in(&self, rect: Rect) -> AlphaMap {
        let mut values = Vec::with_capacity(rect.w * rect.h);
        for j in 0..rect.h as i64 {
            for i in 0..rect.w as i64 {
                values.push(self.alpha_at_pixel(rect.x + i, rect.y + j));
            }
        }
        AlphaMap { rect, values }
    }

    #[inline]
    fn eval<const GRAD: bool>(&self, u: f64, v: f64) -> (f64, AlphaGrad) {
        let du = u - self.x;
        let dv = v - self.y;
        let mut g = AlphaGrad::default();
        match self.profile {
            Profile::Disk {
                radius,
                soften,
                pressure,
                opacity,
            } => {
                let d = (du * du + dv * dv).sqrt();
                let (b, db_dd) = disk_profile(d, radius, soften);
                let a = b * opacity;
                if GRAD {
                    if d > 0.0 && db_dd != 0.0 {
                        g.x = -opacity * db_dd * du / d;
                        g.y = -opacity * db_dd * dv / d;
                    }
                    g.size[0] = -opacity * db_dd;
                    g.pressure = OPACITY_EXPONENT * pressure.powf(OPACITY_EXPONENT - 1.0) * b;
                }
                (a, g)
            }
            Profile::Textured {
                texture,
                radius,
                pressure,
                opacity,
                scale,
            } => {
                let lu = self.cos * du + self.sin * dv;
                let lv = -self.sin * du + self.cos * dv;
                let tx = lu * scale + 0.5 * texture.width() as f64 - 0.5;
                let ty = lv * scale + 0.5 * texture.height() as f64 - 0.5;
                let (t, gx, gy) = texture.sample_bilinear(tx, ty);
                let a = t * opacity;
                if GRAD {
                    let (c, s) = (self.cos, self.sin);
                    g.x = opacity * scale * (-gx * c + gy * s);
                    g.y = opacity * scale * (-gx * s - gy * c);
                    g.theta = opacity * scale * (gx * lv - gy * lu);
                    g.size[0] = -opacity * scale / radius * (gx * lu + gy * lv);
                    g.pressure = OPACITY_EXPONENT * pressure.powf(OPACITY_EXPONENT - 1.0) * t;
                }
                (a, g)
            }
            Profile::Gaussian { sigma_x, sigma_y } => {
                let ur = self.cos * du + self.sin * dv;
                let vr = -self.sin * du + self.cos * dv;
                let (sx2, sy2) = (sigma_x * sigma_x, sigma_y * sigma_y);
                let q = ur * ur / sx2 + vr * vr / sy2;
                if q >= Q_CUTOFF {
                    return (0.0, g);
                }
                let (a, da_dq) = gaussian_profile(q);
                if GRAD {
                    let dq_dur = 2.0 * ur / sx2;
                    let dq_dvr = 2.0 * vr / sy2;
                    let (c, s) = (self.cos, self.sin);
                    g.x = da_dq * (dq_dur * -c + dq_dvr * s);
                    g.y = da_dq * (dq_dur * -s + dq_dvr * -c);
                    g.theta = da_dq * (dq_dur * vr - dq_dvr * ur);
                    g.size[0] = da_dq * (-2.0 * ur * ur / (sx2 * sigma_x));
                    g.size[1] = da_dq * (-2.0 * vr * vr / (sy2 * sigma_y));
                }
                (a, g)
            }
        }
    }
}

/// Disk coverage at distance `d` and its derivative in `d`.
#[inline]
fn disk_profile(d: f64, radius: f64, soften: f64) -> (f64, f64) {
    if soften == 0.0 {
        return (if d <= radius { 1.0 } else { 0.0 }, 0.0);
    }
    let t = (d - (radius - 0.5 * soften)) / soften;
    if t <= 0.0 {
        (1.0, 0.0)
    } else if t >= 1.0 {
        (0.0, 0.0)
    } else {
        let b = 1.0 - t * t * (3.0 - 2.0 * t);
        (b, -6.0 * t * (1.0 - t) / soften)
    }
}

/// Tapered Gaussian `exp(-q/2) * w(q)` for `q < Q_CUTOFF`, with its derivative in `q`.
#[inline]
fn gaussian_profile(q: f64) -> (f64, f64) {
    let e = (-0.5 * q).exp();
    if q <= Q_TAPER {
        return (e, -0.5 * e);
    }
    let span = Q_CUTOFF - Q_TAPER;
    let t = (q - Q_TAPER) / span;
    let w = 1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
    let dw = -30.0 * t * t * (1.0 - t) * (1.0 - t) / span;
    (e * w, e * (dw - 0.5 * w))
}

fn expect_shape(stamp: &Stamp, want_gaussian: bool, want_hard: bool) -> Result<()> {
    let ok = match &stamp.shape {
        StampShape::Gaussian { .. } => want_gaussian,
        StampShape::Tip {
            tip: Tip::HardRound,
            ..
        } => !want_gaussian && want_hard,
        StampShape::Tip {
            tip: Tip::Texture(_),
            ..
        } => !want_gaussian && !want_hard,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Invalid(format!(
            "stamp has brush mode {:?}",
            stamp.mode()
        )))
    }
}

/// Alpha map of a hard-round stamp with an edge falloff of `soften` pixels.
pub fn stamp_alpha_hard_round(stamp: &Stamp, soften: f64) -> Result<AlphaMap> {
    expect_shape(stamp, false, true)?;
    Ok(StampSampler::with_texture(stamp, None, soften)?.alpha_map())
}

/// Alpha map of a textured-tip stamp warped by `(x, y, radius, theta)`.
pub fn stamp_alpha_textured(texture: &Texture, stamp: &Stamp) -> Result<AlphaMap> {
    expect_shape(stamp, false, false)?;
    if let StampShape::Tip {
        tip: Tip::Texture(id),
        ..
    } = &stamp.shape
    {
        if id != texture.id() {
            return Err(Error::MissingTexture(id.0.clone()));
        }
    }
    Ok(StampSampler::with_texture(stamp, Some(texture), 0.0)?.alpha_map())
}

/// Alpha map of an anisotropic Gaussian stamp.
pub fn stamp_alpha_gaussian(stamp: &Stamp) -> Result<AlphaMap> {
    expect_shape(stamp, true, false)?;
    Ok(StampSampler::with_texture(stamp, None, 0.0)?.alpha_map())
}
