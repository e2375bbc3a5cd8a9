use std::f64::consts::PI;

use crate::brush::{Stamp, StampShape};
use crate::error::{Error, Result};

/// A free stamp parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    X,
    Y,
    Radius,
    Pressure,
    SigmaX,
    SigmaY,
    Theta,
    Red,
    Green,
    Blue,
}

impl Param {
    pub const TIP: [Param; 8] = [
        Param::X,
        Param::Y,
        Param::Radius,
        Param::Theta,
        Param::Pressure,
        Param::Red,
        Param::Green,
        Param::Blue,
    ];
    pub const GAUSSIAN: [Param; 8] = [
        Param::X,
        Param::Y,
        Param::SigmaX,
        Param::SigmaY,
        Param::Theta,
        Param::Red,
        Param::Green,
        Param::Blue,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Param::X => "x",
            Param::Y => "y",
            Param::Radius => "radius",
            Param::Pressure => "pressure",
            Param::SigmaX => "sigma_x",
            Param::SigmaY => "sigma_y",
            Param::Theta => "theta",
            Param::Red => "red",
            Param::Green => "green",
            Param::Blue => "blue",
        }
    }

    /// Parameters a stamp of this shape carries.
    pub fn for_stamp(stamp: &Stamp) -> &'static [Param] {
        match stamp.shape {
            StampShape::Tip { .. } => &Param::TIP,
            StampShape::Gaussian { .. } => &Param::GAUSSIAN,
        }
    }
}

/// Valid ranges enforced after every optimizer step (pixel units).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBounds {
    pub min_pressure: f64,
    pub min_size: f64,
    /// Fraction of the canvas extent a center may sit outside the canvas.
    pub position_margin: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            min_pressure: 0.01,
            min_size: 0.5,
            position_margin: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub stamp: usize,
    pub param: Param,
}

/// Flat optimizer vector in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps optimizer slots to stamp parameters. Parameters without a slot are
/// frozen at their template value.
///
/// Normalization: positions by canvas width/height, radius and sigmas by the
/// canvas diagonal, theta by pi; pressure and colors are stored raw.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    width: usize,
    height: usize,
    template: Vec<Stamp>,
    slots: Vec<Slot>,
}

impl ParamLayout {
    /// Every parameter of every stamp is free.
    pub fn new(width: usize, height: usize, stamps: Vec<Stamp>) -> Result<Self> {
        Self::with_free(width, height, stamps, |_, _| true)
    }

    /// Only parameters for which `free(stamp_index, param)` holds get a slot.
    pub fn with_free(
        width: usize,
        height: usize,
        stamps: Vec<Stamp>,
        free: impl Fn(usize, Param) -> bool,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("canvas must be non-empty".into()));
        }
        for s in &stamps {
            s.validate()?;
        }
        let slots = stamps
            .iter()
            .enumerate()
            .flat_map(|(i, s)| {
                Param::for_stamp(s)
                    .iter()
                    .filter(|p| free(i, **p))
                    .map(move |&param| Slot { stamp: i, param })
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(ParamLayout {
            width,
            height,
            template: stamps,
            slots,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    pub fn template(&self) -> &[Stamp] {
        &self.template
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    /// Pixel units per normalized unit.
    pub fn scale(&self, param: Param) -> f64 {
        match param {
            Param::X => self.width as f64,
            Param::Y => self.height as f64,
            Param::Radius | Param::SigmaX | Param::SigmaY => self.diagonal(),
            Param::Theta => PI,
            Param::Pressure | Param::Red | Param::Green | Param::Blue => 1.0,
        }
    }

    /// Normalized vector of the template stamps.
    pub fn encode(&self) -> ParamVector {
        self.encode_stamps(&self.template)
            .expect("template matches its own layout")
    }

    /// Normalized vector of `stamps`, which must have the template's shapes.
    pub fn encode_stamps(&self, stamps: &[Stamp]) -> Result<ParamVector> {
        if stamps.len() != self.template.len() {
            return Err(Error::LengthMismatch {
                expected: self.template.len(),
                actual: stamps.len(),
            });
        }
        self.slots
            .iter()
            .map(|slot| {
                let v = read(&stamps[slot.stamp], slot.param).ok_or_else(|| {
                    Error::Invalid(format!(
                        "stamp {} has no parameter {}",
                        slot.stamp,
                        slot.param.name()
                    ))
                })?;
                Ok(v / self.scale(slot.param))
            })
            .collect::<Result<Vec<_>>>()
            .map(ParamVector)
    }

    /// Denormalize into stamps without range checks beyond stamp validity.
    pub fn decode(&self, params: &ParamVector) -> Result<Vec<Stamp>> {
        if params.len() != self.slots.len() {
            return Err(Error::LengthMismatch {
                expected: self.slots.len(),
                actual: params.len(),
            });
        }
        let mut stamps = self.template.clone();
        for (slot, v) in self.slots.iter().zip(&params.0) {
            write(&mut stamps[slot.stamp], slot.param, v * self.scale(slot.param));
        }
        Ok(stamps)
    }

    /// Denormalize and reject any free parameter outside `bounds`.
    pub fn decode_checked(&self, params: &ParamVector, bounds: &ParamBounds) -> Result<Vec<Stamp>> {
        let stamps = self.decode(params)?;
        for (slot, v) in self.slots.iter().zip(&params.0) {
            let (lo, hi) = self.normalized_range(slot.param, bounds);
            if !(*v >= lo && *v <= hi) {
                return Err(Error::param(
                    slot.param.name(),
                    v * self.scale(slot.param),
                    "outside the valid optimization range",
                ));
            }
        }
        Ok(stamps)
    }

    fn normalized_range(&self, param: Param, b: &ParamBounds) -> (f64, f64) {
        match param {
            Param::X | Param::Y => (-b.position_margin, 1.0 + b.position_margin),
            Param::Radius | Param::SigmaX | Param::SigmaY => {
                (b.min_size / self.diagonal(), f64::INFINITY)
            }
            Param::Theta => (-1.0, 1.0),
            Param::Pressure => (b.min_pressure, 1.0),
            Param::Red | Param::Green | Param::Blue => (0.0, 1.0),
        }
    }

    /// Project onto the valid ranges; angles wrap into `[-pi, pi]`.
    pub fn clamp(&self, params: &mut ParamVector, bounds: &ParamBounds) {
        for (slot, v) in self.slots.iter().zip(params.0.iter_mut()) {
            if slot.param == Param::Theta {
                if !(-1.0..=1.0).contains(v) {
                    *v = (*v + 1.0).rem_euclid(2.0) - 1.0;
                }
                continue;
            }
            let (lo, hi) = self.normalized_range(slot.param, bounds);
            *v = v.clamp(lo, hi);
        }
    }
}

fn read(stamp: &Stamp, param: Param) -> Option<f64> {
    Some(match (param, &stamp.shape) {
        (Param::X, _) => stamp.x,
        (Param::Y, _) => stamp.y,
        (Param::Theta, _) => stamp.theta,
        (Param::Red, _) => stamp.color[0],
        (Param::Green, _) => stamp.color[1],
        (Param::Blue, _) => stamp.color[2],
        (Param::Radius, StampShape::Tip { radius, .. }) => *radius,
        (Param::Pressure, StampShape::Tip { pressure, .. }) => *pressure,
        (Param::SigmaX, StampShape::Gaussian { sigma_x, .. }) => *sigma_x,
        (Param::SigmaY, StampShape::Gaussian { sigma_y, .. }) => *sigma_y,
        _ => return None,
    })
}

fn write(stamp: &mut Stamp, param: Param, v: f64) {
    match (param, &mut stamp.shape) {
        (Param::X, _) => stamp.x = v,
        (Param::Y, _) => stamp.y = v,
        (Param::Theta, _) => stamp.theta = v,
        (Param::Red, _) => stamp.color[0] = v,
        (Param::Green, _) => stamp.color[1] = v,
        (Param::Blue, _) => stamp.color[2] = v,
        (Param::Radius, StampShape::Tip { radius, .. }) => *radius = v,
        (Param::Pressure, StampShape::Tip { pressure, .. }) => *pressure = v,
        (Param::SigmaX, StampShape::Gaussian { sigma_x, .. }) => *sigma_x = v,
        (Param::SigmaY, StampShape::Gaussian { sigma_y, .. }) => *sigma_y = v,
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stamps() -> Vec<Stamp> {
        vec![
            Stamp::gaussian(3.0, 4.0, 1.5, 2.5, 0.3, [0.1, 0.2, 0.3]),
            Stamp::hard_round(10.0, 2.0, 4.0, 0.7, [0.9, 0.8, 0.7]),
        ]
    }

    #[test]
    fn layout_covers_each_parameter_once() {
        let l = ParamLayout::new(16, 12, stamps()).unwrap();
        assert_eq!(l.len(), 16);
        let mut seen = std::collections::HashSet::new();
        for s in l.slots() {
            assert!(seen.insert((s.stamp, s.param)));
        }
    }

    #[test]
    fn encode_decode_bijection() {
        let l = ParamLayout::new(16, 12, stamps()).unwrap();
        let v = l.encode();
        assert!((v.0[0] - 3.0 / 16.0).abs() < 1e-15);
        assert!((v.0[4] - 0.3 / PI).abs() < 1e-15);
        let back = l.decode(&v).unwrap();
        for (a, b) in back.iter().zip(stamps()) {
            assert!((a.x - b.x).abs() < 1e-12 && (a.y - b.y).abs() < 1e-12);
            assert!((a.theta - b.theta).abs() < 1e-12);
            assert!((a.nominal_radius() - b.nominal_radius()).abs() < 1e-12);
        }
        assert_eq!(l.encode_stamps(&back).unwrap().0.len(), v.len());
    }

    #[test]
    fn frozen_parameters_keep_template() {
        let l = ParamLayout::with_free(16, 12, stamps(), |i, p| i == 1 && p == Param::Red).unwrap();
        assert_eq!(l.len(), 1);
        let out = l.decode(&ParamVector(vec![0.25])).unwrap();
        assert_eq!(out[1].color, [0.25, 0.8, 0.7]);
        assert_eq!(out[0], stamps()[0]);
    }

    #[test]
    fn clamp_and_checked_decode() {
        let l = ParamLayout::new(10, 10, stamps()).unwrap();
        let b = ParamBounds::default();
        let mut v = l.encode();
        v.0[5] = 1.7; // red of stamp 0
        v.0[4] = 1.5; // theta of stamp 0 (normalized)
        v.0[8] = -0.5; // x of stamp 1
        v.0[12] = 0.0; // pressure of stamp 1
        assert!(l.decode_checked(&v, &b).is_err());
        l.clamp(&mut v, &b);
        assert_eq!(v.0[5], 1.0);
        assert!((v.0[4] + 0.5).abs() < 1e-15);
        assert_eq!(v.0[8], -0.1);
        assert_eq!(v.0[12], 0.01);
        assert!(l.decode_checked(&v, &b).is_ok());
    }
}
