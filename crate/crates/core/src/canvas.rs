//! Raster containers: linear-RGB canvases, integer rectangles and region masks.

use crate::error::{Error, Result};

/// Linear RGB triple, each channel in `[0, 1]`.
pub type Rgb = [f64; 3];

/// Axis-aligned pixel rectangle. `x`/`y` may be negative for stamps that hang
/// off the canvas; use [`Rect::clip`] before indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: i64,
    pub y: i64,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: i64, y: i64, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    /// Smallest rectangle of whole pixels covering the box `[x0,x1]×[y0,y1]`.
    pub fn covering(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let ix0 = x0.floor() as i64;
        let iy0 = y0.floor() as i64;
        let ix1 = x1.ceil() as i64;
        let iy1 = y1.ceil() as i64;
        Rect {
            x: ix0,
            y: iy0,
            w: (ix1 - ix0).max(0) as usize,
            h: (iy1 - iy0).max(0) as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn right(&self) -> i64 {
        self.x + self.w as i64
    }

    pub fn bottom(&self) -> i64 {
        self.y + self.h as i64
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        Rect {
            x: x0,
            y: y0,
            w: (x1 - x0).max(0) as usize,
            h: (y1 - y0).max(0) as usize,
        }
    }

    pub fn union(&self, other: &Rect) -> Rect {
        if self.is_empty() {
            return *other;
        }
        if other.is_empty() {
            return *self;
        }
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        let x1 = self.right().max(other.right());
        let y1 = self.bottom().max(other.bottom());
        Rect {
            x: x0,
            y: y0,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        }
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        !self.intersect(other).is_empty()
    }

    /// Clip to a `width × height` raster.
    pub fn clip(&self, width: usize, height: usize) -> Rect {
        self.intersect(&Rect::new(0, 0, width, height))
    }

    pub fn pad(&self, by: i64) -> Rect {
        Rect {
            x: self.x - by,
            y: self.y - by,
            w: (self.w as i64 + 2 * by).max(0) as usize,
            h: (self.h as i64 + 2 * by).max(0) as usize,
        }
    }
}

/// H×W linear-RGB raster, row-major, interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Canvas {
    pub fn new(width: usize, height: usize, fill: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&fill);
        }
        Canvas {
            width,
            height,
            data,
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::LengthMismatch {
                expected: width * height * 3,
                actual: data.len(),
            });
        }
        Ok(Canvas {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    pub fn ensure_same_dims(&self, other: &Canvas) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.dims(),
                actual: other.dims(),
            });
        }
        Ok(())
    }

    /// Copy out `rect` (clipped to the canvas).
    pub fn crop(&self, rect: Rect) -> Canvas {
        let r = rect.clip(self.width, self.height);
        let mut out = Canvas::new(r.w, r.h, [0.0; 3]);
        for row in 0..r.h {
            let src = ((r.y as usize + row) * self.width + r.x as usize) * 3;
            let dst = row * r.w * 3;
            out.data[dst..dst + r.w * 3].copy_from_slice(&self.data[src..src + r.w * 3]);
        }
        out
    }

    /// Write `patch` with its top-left corner at (`x`, `y`), clipping to the canvas.
    pub fn paste(&mut self, patch: &Canvas, x: i64, y: i64) {
        let target = Rect::new(x, y, patch.width, patch.height).clip(self.width, self.height);
        for row in 0..target.h {
            let py = (target.y - y) as usize + row;
            let px = (target.x - x) as usize;
            let src = (py * patch.width + px) * 3;
            let dst = ((target.y as usize + row) * self.width + target.x as usize) * 3;
            self.data[dst..dst + target.w * 3]
                .copy_from_slice(&patch.data[src..src + target.w * 3]);
        }
    }

    /// Bounding box of pixels that differ bit-wise from `other`.
    pub fn diff_bounds(&self, other: &Canvas) -> Option<Rect> {
        if self.dims() != other.dims() {
            return Some(self.bounds());
        }
        let mut acc: Option<Rect> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                let i = (y * self.width + x) * 3;
                if (0..3).any(|c| self.data[i + c].to_bits() != other.data[i + c].to_bits()) {
                    let px = Rect::new(x as i64, y as i64, 1, 1);
                    acc = Some(acc.map_or(px, |a| a.union(&px)));
                }
            }
        }
        acc
    }

    /// Rec. 709 luminance of every pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect()
    }
}

/// Binary region mask (lasso selections, semantic regions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Mask::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.bits[y * width + x] = f(x, y);
            }
        }
        m
    }

    /// Rasterize a closed polygon (auto-closed) with the even-odd rule,
    /// sampling at pixel centers.
    pub fn from_polygon(width: usize, height: usize, vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Invalid(format!(
                "lasso polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices.len();
        Ok(Mask::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut inside = false;
            let mut j = n - 1;
            for i in 0..n {
                let [xi, yi] = vertices[i];
                let [xj, yj] = vertices[j];
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            inside
        }))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    /// Whether the pixel containing the continuous point (`x`, `y`) is selected.
    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        if !(x >= 0.0 && y >= 0.0) {
            return false;
        }
        let (ix, iy) = (x.floor() as usize, y.floor() as usize);
        ix < self.width && iy < self.height && self.get(ix, iy)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn bounding_box(&self) -> Option<Rect> {
        let mut acc: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    acc = Some(match acc {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        acc.map(|(x0, y0, x1, y1)| {
            Rect::new(x0 as i64, y0 as i64, x1 - x0 + 1, y1 - y0 + 1)
        })
    }

    pub fn crop(&self, rect: Rect) -> Mask {
        let r = rect.clip(self.width, self.height);
        Mask::from_fn(r.w, r.h, |x, y| {
            self.get(r.x as usize + x, r.y as usize + y)
        })
    }

    /// Selected pixel coordinates in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| self.get(x, y).then_some((x, y)))
        })
    }
}
