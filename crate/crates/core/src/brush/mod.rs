//! Brush parameterizations, pressure dynamics, alpha synthesis and compositing.
//!
//! Three brush modes share one stamp record: the two tip modes (a procedural
//! hard disk and a warped grayscale texture) carry `(radius, pressure)`,
//! while the anisotropic Gaussian carries `(sigma_x, sigma_y)` instead.
//!
//! Geometry conventions used throughout the crate:
//! * pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`;
//! * `y` grows downwards, so `theta = atan2(dy, dx)` is clockwise on screen;
//! * a stamp rotated by `theta` evaluates its profile at the offset
//!   `(du, dv)` rotated by `-theta`, i.e. the local x axis points along
//!   `(cos theta, sin theta)`.

mod alpha;
mod composite;
mod texture;

pub use alpha::{
    stamp_alpha_gaussian, stamp_alpha_hard_round, stamp_alpha_textured, AlphaGrad, AlphaMap, StampSampler,
    GAUSSIAN_CUTOFF_SIGMAS, GAUSSIAN_TAPER_START,
};
pub(crate) use composite::BlendAccum;
pub use composite::{
    composite_over, composite_weighted_sum, render_painter,
};
pub use texture::{Texture, TextureBank, TextureId};

use std::f64::consts::LN_10;

use serde::{Deserialize, Serialize};

use crate::canvas::Rgb;
use crate::error::{Error, Result};

/// Weight of the previous smoothed value in the pressure filter.
pub const SMOOTHING_PREV: f64 = 0.7;
/// Weight of the raw sample in the pressure filter.
pub const SMOOTHING_CURRENT: f64 = 0.3;

/// Exponent of the pressure-to-opacity power curve.
pub const OPACITY_EXPONENT: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BrushMode {
    HardRound,
    BrushTip { texture: TextureId },
    Gaussian2d,
}

impl BrushMode {
    pub fn is_tip(&self) -> bool {
        !matches!(self, BrushMode::Gaussian2d)
    }
}

/// Tip used by the two tip-based modes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tip {
    HardRound,
    Texture(TextureId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StampShape {
    Tip {
        tip: Tip,
        radius: f64,
        pressure: f64,
    },
    Gaussian {
        sigma_x: f64,
        sigma_y: f64,
    },
}

/// One rendered brush instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Stamp {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub color: Rgb,
    pub shape: StampShape,
}

impl Stamp {
    pub fn hard_round(x: f64, y: f64, radius: f64, pressure: f64, color: Rgb) -> Self {
        Stamp {
            x,
            y,
            theta: 0.0,
            color,
            shape: StampShape::Tip {
                tip: Tip::HardRound,
                radius,
                pressure,
            },
        }
    }

    pub fn textured(
        texture: TextureId,
        x: f64,
        y: f64,
        radius: f64,
        theta: f64,
        pressure: f64,
        color: Rgb,
    ) -> Self {
        Stamp {
            x,
            y,
            theta,
            color,
            shape: StampShape::Tip {
                tip: Tip::Texture(texture),
                radius,
                pressure,
            },
        }
    }

    pub fn gaussian(x: f64, y: f64, sigma_x: f64, sigma_y: f64, theta: f64, color: Rgb) -> Self {
        Stamp {
            x,
            y,
            theta,
            color,
            shape: StampShape::Gaussian { sigma_x, sigma_y },
        }
    }

    /// Build a stamp of the given brush mode. `size` is the tip radius; a
    /// Gaussian stamp uses `sigma = size / 2` on both axes and ignores
    /// `pressure`.
    pub fn with_mode(
        mode: &BrushMode,
        x: f64,
        y: f64,
        size: f64,
        theta: f64,
        pressure: f64,
        color: Rgb,
    ) -> Self {
        match mode {
            BrushMode::HardRound => Stamp {
                theta,
                ..Stamp::hard_round(x, y, size, pressure, color)
            },
            BrushMode::BrushTip { texture } => {
                Stamp::textured(texture.clone(), x, y, size, theta, pressure, color)
            }
            BrushMode::Gaussian2d => Stamp::gaussian(x, y, size * 0.5, size * 0.5, theta, color),
        }
    }

    pub fn mode(&self) -> BrushMode {
        match &self.shape {
            StampShape::Tip {
                tip: Tip::HardRound,
                ..
            } => BrushMode::HardRound,
            StampShape::Tip {
                tip: Tip::Texture(id),
                ..
            } => BrushMode::BrushTip {
                texture: id.clone(),
            },
            StampShape::Gaussian { .. } => BrushMode::Gaussian2d,
        }
    }

    /// Radius of the visible footprint: the tip radius, or `2 * max(sigma)`.
    pub fn nominal_radius(&self) -> f64 {
        match self.shape {
            StampShape::Tip { radius, .. } => radius,
            StampShape::Gaussian { sigma_x, sigma_y } => 2.0 * sigma_x.max(sigma_y),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x.is_finite() {
            return Err(Error::param("x", self.x, "must be finite"));
        }
        if !self.y.is_finite() {
            return Err(Error::param("y", self.y, "must be finite"));
        }
        if !self.theta.is_finite() {
            return Err(Error::param("theta", self.theta, "must be finite"));
        }
        for &c in &self.color {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::param("color", c, "channels must lie in [0, 1]"));
            }
        }
        match self.shape {
            StampShape::Tip {
                radius, pressure, ..
            } => {
                if !(radius > 0.0) || !radius.is_finite() {
                    return Err(Error::param("radius", radius, "must be positive"));
                }
                if !(0.0..=1.0).contains(&pressure) {
                    return Err(Error::param("pressure", pressure, "must lie in [0, 1]"));
                }
            }
            StampShape::Gaussian { sigma_x, sigma_y } => {
                if !(sigma_x > 0.0) || !sigma_x.is_finite() {
                    return Err(Error::param("sigma_x", sigma_x, "must be positive"));
                }
                if !(sigma_y > 0.0) || !sigma_y.is_finite() {
                    return Err(Error::param("sigma_y", sigma_y, "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Stamp {
        Stamp {
            x: self.x + dx,
            y: self.y + dy,
            ..self.clone()
        }
    }
}

/// Radius bounds for the pressure curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PressureConfig {
    r_min: f64,
    r_max: f64,
}

impl PressureConfig {
    pub fn new(r_min: f64, r_max: f64) -> Result<Self> {
        if !(r_min > 0.0) || !r_min.is_finite() {
            return Err(Error::param("r_min", r_min, "must be positive"));
        }
        if !(r_max >= r_min) || !r_max.is_finite() {
            return Err(Error::param("r_max", r_max, "must be >= r_min"));
        }
        Ok(PressureConfig { r_min, r_max })
    }

    /// Bounds for a stroke of nominal size `base_size`: `[ratio * base, base]`.
    pub fn from_base_size(base_size: f64, min_ratio: f64) -> Result<Self> {
        PressureConfig::new(base_size * min_ratio, base_size)
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }
}

fn check_pressure(name: &'static str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::param(name, p, "pressure must lie in [0, 1]"));
    }
    Ok(())
}

/// Logarithmic pressure-to-radius curve, `r_min` at `p = 0` up to `r_max` at `p = 1`.
pub fn radius_from_pressure(p: f64, cfg: &PressureConfig) -> Result<f64> {
    check_pressure("pressure", p)?;
    Ok(radius_from_pressure_unchecked(p, cfg))
}

pub(crate) fn radius_from_pressure_unchecked(p: f64, cfg: &PressureConfig) -> f64 {
    // ln(10)/LN_10 can land one ulp above 1
    (cfg.r_min + (cfg.r_max - cfg.r_min) * (9.0 * p).ln_1p() / LN_10).min(cfg.r_max)
}

/// Opacity scale `p^2.5`.
pub fn opacity_from_pressure(p: f64) -> Result<f64> {
    check_pressure("pressure", p)?;
    Ok(p.powf(OPACITY_EXPONENT))
}

/// One step of the jitter filter: `0.7 * prev + 0.3 * raw`.
pub fn smooth_pressure(prev_smoothed: f64, raw: f64) -> Result<f64> {
    check_pressure("prev_smoothed", prev_smoothed)?;
    check_pressure("raw", raw)?;
    // Convex combination; clamp guards the last ulp.
    Ok((SMOOTHING_PREV * prev_smoothed + SMOOTHING_CURRENT * raw).clamp(0.0, 1.0))
}
