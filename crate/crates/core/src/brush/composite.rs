use super::alpha::{AlphaMap, StampSampler};
use super::texture::TextureBank;
use super::Stamp;
use crate::canvas::{Canvas, Rgb};
use crate::error::{Error, Result};

fn check_color(color: &Rgb) -> Result<()> {
    for &c in color {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::param("color", c, "channels must lie in [0, 1]"));
        }
    }
    Ok(())
}

/// Alpha-over: `h <- a * c + (1 - a) * h`. Parts of the map outside the
/// canvas are clipped; pixels with `a == 0` are left untouched.
pub fn composite_over(canvas: &mut Canvas, alpha: &AlphaMap, color: Rgb) -> Result<()> {
    check_color(&color)?;
    let r = alpha.rect().clip(canvas.width(), canvas.height());
    for py in r.y..r.bottom() {
        for px in r.x..r.right() {
            let a = alpha.get(px, py);
            if a == 0.0 {
                continue;
            }
            let (x, y) = (px as usize, py as usize);
            let h = canvas.pixel(x, y);
            let mut out = [0.0; 3];
            for c in 0..3 {
                out[c] = (a * color[c] + (1.0 - a) * h[c]).clamp(0.0, 1.0);
            }
            canvas.set_pixel(x, y, out);
        }
    }
    Ok(())
}

/// Order-independent blend used during optimization.
///
/// Per pixel, with `S = sum a_i` and coverage `T = 1 - prod (1 - a_i)`:
/// `out = T * (sum a_i c_i) / S + (1 - T) * bg`. Stamp colors enter through
/// their alpha-weighted mean, so every stamp covering a pixel keeps a nonzero
/// color gradient no matter how many stamps sit in front of it. A single
/// stamp (or spatially disjoint stamps) reproduces alpha-over exactly.
pub fn composite_weighted_sum(stamps: &[(AlphaMap, Rgb)], background: &Canvas) -> Result<Canvas> {
    let (w, h) = background.dims();
    let mut acc = vec![BlendAccum::default(); w * h];
    for (alpha, color) in stamps {
        check_color(color)?;
        let r = alpha.rect().clip(w, h);
        for py in r.y..r.bottom() {
            for px in r.x..r.right() {
                let a = alpha.get(px, py);
                if a != 0.0 {
                    acc[py as usize * w + px as usize].add(a, color);
                }
            }
        }
    }
    let mut out = background.clone();
    for (i, a) in acc.iter().enumerate() {
        if a.sum > 0.0 {
            let (x, y) = (i % w, i / w);
            out.set_pixel(x, y, a.resolve(&background.pixel(x, y)));
        }
    }
    Ok(out)
}

/// Running per-pixel state of the weighted-sum blend.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct BlendAccum {
    /// sum of alphas
    pub sum: f64,
    /// sum of alpha-weighted colors
    pub weighted: Rgb,
    /// coverage 1 - prod(1 - a)
    pub coverage: f64,
    /// product of (1 - a) over stamps with a < 1
    pub open_product: f64,
    /// number of stamps with a == 1
    pub opaque: u32,
}

impl BlendAccum {
    #[inline]
    pub fn add(&mut self, a: f64, color: &Rgb) {
        if self.sum == 0.0 {
            self.open_product = 1.0;
        }
        self.sum += a;
        for c in 0..3 {
            self.weighted[c] += a * color[c];
        }
        self.coverage += a * (1.0 - self.coverage);
        if a >= 1.0 {
            self.opaque += 1;
        } else {
            self.open_product *= 1.0 - a;
        }
    }

    #[inline]
    pub fn mean(&self) -> Rgb {
        [
            self.weighted[0] / self.sum,
            self.weighted[1] / self.sum,
            self.weighted[2] / self.sum,
        ]
    }

    #[inline]
    pub fn resolve(&self, bg: &Rgb) -> Rgb {
        let m = self.mean();
        let t = self.coverage;
        let mut out = [0.0; 3];
        for c in 0..3 {
            out[c] = (t * m[c] + (1.0 - t) * bg[c]).clamp(0.0, 1.0);
        }
        out
    }

    /// `d coverage / d a_i` = product of `(1 - a_j)` over the other stamps.
    #[inline]
    pub fn coverage_partial(&self, a: f64) -> f64 {
        if a >= 1.0 {
            if self.opaque == 1 {
                self.open_product
            } else {
                0.0
            }
        } else if self.opaque > 0 {
            0.0
        } else {
            self.open_product / (1.0 - a)
        }
    }
}

/// Painter's-algorithm display render: alpha-over every stamp in order.
pub fn render_painter(
    canvas: &mut Canvas,
    stamps: &[Stamp],
    textures: &TextureBank,
    soften: f64,
) -> Result<()> {
    for s in stamps {
        let smp = StampSampler::new(s, textures, soften)?;
        let map = smp.alpha_map_clipped(canvas.width(), canvas.height());
        composite_over(canvas, &map, s.color)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::Rect;

    #[test]
    fn over_full_and_zero_alpha() {
        let mut c = Canvas::new(4, 3, [0.2, 0.4, 0.6]);
        let full = c.bounds();
        let before = c.clone();
        composite_over(&mut c, &AlphaMap::uniform(full, 0.0).unwrap(), [1.0; 3]).unwrap();
        assert_eq!(c, before);
        composite_over(&mut c, &AlphaMap::uniform(full, 1.0).unwrap(), [0.9, 0.1, 0.3]).unwrap();
        assert_eq!(c, Canvas::new(4, 3, [0.9, 0.1, 0.3]));
    }

    #[test]
    fn over_half_alpha() {
        let mut c = Canvas::new(1, 1, [0.2; 3]);
        let full = c.bounds();
        composite_over(&mut c, &AlphaMap::uniform(full, 0.5).unwrap(), [0.8; 3]).unwrap();
        assert!((c.pixel(0, 0)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn over_clips_off_canvas() {
        let mut c = Canvas::new(3, 3, [0.0; 3]);
        let map = AlphaMap::uniform(Rect::new(-2, -2, 3, 3), 1.0).unwrap();
        composite_over(&mut c, &map, [1.0; 3]).unwrap();
        assert_eq!(c.pixel(0, 0), [1.0; 3]);
        assert_eq!(c.pixel(1, 0), [0.0; 3]);
        assert!(composite_over(&mut c, &map, [1.5, 0.0, 0.0]).is_err());
    }

    #[test]
    fn weighted_sum_examples() {
        let bg = Canvas::new(2, 2, [0.1, 0.2, 0.3]);
        assert_eq!(composite_weighted_sum(&[], &bg).unwrap(), bg);
        let one = AlphaMap::uniform(bg.bounds(), 1.0).unwrap();
        let color = [0.9, 0.5, 0.0];
        let single = composite_weighted_sum(&[(one.clone(), color)], &bg).unwrap();
        assert_eq!(single, Canvas::new(2, 2, color));
        let two = composite_weighted_sum(&[(one.clone(), color), (one, color)], &bg).unwrap();
        assert_eq!(two, single);
    }

    #[test]
    fn weighted_sum_single_stamp_matches_over() {
        let bg = Canvas::new(3, 1, [0.2, 0.6, 0.4]);
        let map = AlphaMap::new(bg.bounds(), vec![0.0, 0.35, 1.0]).unwrap();
        let color = [0.7, 0.1, 0.9];
        let ws = composite_weighted_sum(&[(map.clone(), color)], &bg).unwrap();
        let mut over = bg.clone();
        composite_over(&mut over, &map, color).unwrap();
        for (a, b) in ws.data().iter().zip(over.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_sum_mixes_overlapping_colors_by_alpha() {
        let bg = Canvas::new(1, 1, [0.0; 3]);
        let full = AlphaMap::uniform(bg.bounds(), 1.0).unwrap();
        let out = composite_weighted_sum(&[(full.clone(), [1.0, 0.0, 0.0]), (full, [0.0, 0.0, 1.0])], &bg).unwrap();
        assert_eq!(out.pixel(0, 0), [0.5, 0.0, 0.5]);
    }

    #[test]
    fn weighted_sum_zero_alpha_is_background() {
        let bg = Canvas::new(3, 3, [0.5; 3]);
        let zero = AlphaMap::uniform(bg.bounds(), 0.0).unwrap();
        assert_eq!(composite_weighted_sum(&[(zero, [1.0; 3])], &bg).unwrap(), bg);
    }
}
