use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Rgb as PixelRgb};

use crate::canvas::{Canvas, Rect};
use crate::error::{Error, Result};

/// sRGB electro-optical transfer function: encoded value to linear light.
pub fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// Inverse of [`srgb_to_linear`].
pub fn linear_to_srgb(l: f64) -> f64 {
    if l <= 0.0031308 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PngDepth {
    #[default]
    Eight,
    Sixteen,
}

/// Decode an 8- or 16-bit grayscale/RGB PNG (alpha is dropped) into linear RGB.
pub fn import_image(bytes: &[u8]) -> Result<Canvas> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => img
            .to_rgb8()
            .into_raw()
            .into_iter()
            .map(|v| srgb_to_linear(v as f64 / 255.0))
            .collect(),
        DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_)
        | DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .into_raw()
            .into_iter()
            .map(|v| srgb_to_linear(v as f64 / 65535.0))
            .collect(),
        other => {
            return Err(Error::Image(format!(
                "unsupported PNG color type {:?}",
                other.color()
            )))
        }
    };
    Canvas::from_data(w, h, data)
}

fn encode_png(img: DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Encode linear RGB as an sRGB PNG. Values are clamped to `[0, 1]`.
pub fn export_image(canvas: &Canvas, depth: PngDepth) -> Result<Vec<u8>> {
    let (w, h) = (canvas.width() as u32, canvas.height() as u32);
    if w == 0 || h == 0 {
        return Err(Error::Invalid("cannot encode an empty image".into()));
    }
    let enc = |v: &f64| linear_to_srgb(v.clamp(0.0, 1.0));
    let img = match depth {
        PngDepth::Eight => {
            let raw = canvas.data().iter().map(|v| (enc(v) * 255.0).round() as u8).collect();
            DynamicImage::ImageRgb8(ImageBuffer::<PixelRgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
        PngDepth::Sixteen => {
            let raw = canvas.data().iter().map(|v| (enc(v) * 65535.0).round() as u16).collect();
            DynamicImage::ImageRgb16(ImageBuffer::<PixelRgb<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))
        }
    };
    encode_png(img)
}

/// 8-bit PNG of the part of `canvas` inside `rect`.
pub fn export_tile(canvas: &Canvas, rect: Rect) -> Result<Vec<u8>> {
    export_image(&canvas.crop(rect), PngDepth::Eight)
}
