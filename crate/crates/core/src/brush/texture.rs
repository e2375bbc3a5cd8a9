use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content hash (hex SHA-256) identifying a brush tip texture.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TextureId(pub String);

impl fmt::Display for TextureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Grayscale tip texture with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    id: TextureId,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Texture {
    /// Texture from raw values; the id hashes dimensions and value bits.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid("texture must be non-empty".into()));
        }
        if values.len() != width * height {
            return Err(Error::LengthMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::param("texture value", *v, "must lie in [0, 1]"));
        }
        let mut h = Sha256::new();
        h.update(b"raw-texture");
        h.update((width as u64).to_le_bytes());
        h.update((height as u64).to_le_bytes());
        for v in &values {
            h.update(v.to_le_bytes());
        }
        Ok(Texture {
            id: TextureId(hex::encode(h.finalize())),
            width,
            height,
            values,
        })
    }

    /// Decode a grayscale PNG (8 or 16 bit; RGB input is reduced to Rec. 709
    /// luminance). Values are used as coverage directly, without sRGB decoding.
    /// The id is the SHA-256 of the file bytes.
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
        let rgb = img.to_rgb32f();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let values = rgb
            .pixels()
            .map(|p| {
                let [r, g, b] = p.0;
                if r == g && g == b {
                    r as f64
                } else {
                    (0.2126 * r as f64 + 0.7152 * g as f64 + 0.0722 * b as f64).clamp(0.0, 1.0)
                }
            })
            .collect::<Vec<_>>();
        let mut t = Texture::new(w, h, values)?;
        t.id = TextureId(hex::encode(Sha256::digest(bytes)));
        Ok(t)
    }

    pub fn id(&self) -> &TextureId {
        &self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Texel value with zero padding outside the raster.
    #[inline]
    pub fn texel(&self, i: i64, j: i64) -> f64 {
        if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
            0.0
        } else {
            self.values[j as usize * self.width + i as usize]
        }
    }

    /// Bilinear sample at continuous texel-center coordinates, returning the
    /// value and its partial derivatives in `(tx, ty)`.
    #[inline]
    pub fn sample_bilinear(&self, tx: f64, ty: f64) -> (f64, f64, f64) {
        let i0 = tx.floor();
        let j0 = ty.floor();
        let fx = tx - i0;
        let fy = ty - j0;
        let (i0, j0) = (i0 as i64, j0 as i64);
        let t00 = self.texel(i0, j0);
        let t10 = self.texel(i0 + 1, j0);
        let t01 = self.texel(i0, j0 + 1);
        let t11 = self.texel(i0 + 1, j0 + 1);
        let top = t00 + (t10 - t00) * fx;
        let bottom = t01 + (t11 - t01) * fx;
        let v = top + (bottom - top) * fy;
        let dx = (1.0 - fy) * (t10 - t00) + fy * (t11 - t01);
        let dy = bottom - top;
        (v, dx, dy)
    }
}

/// Loaded tip textures keyed by content hash.
#[derive(Debug, Clone, Default)]
pub struct TextureBank {
    textures: BTreeMap<TextureId, Arc<Texture>>,
}

impl TextureBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, texture: Texture) -> TextureId {
        let id = texture.id.clone();
        self.textures.insert(id.clone(), Arc::new(texture));
        id
    }

    pub fn get(&self, id: &TextureId) -> Result<&Texture> {
        self.textures
            .get(id)
            .map(|t| t.as_ref())
            .ok_or_else(|| Error::MissingTexture(id.0.clone()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &TextureId> {
        self.textures.keys()
    }

    pub fn len(&self) -> usize {
        self.textures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.textures.is_empty()
    }
}
