use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb as PixelRgb};

use crate::error::{Error, Result};
use crate::sequencer::{AttentionMap, LabelMap, NormalMap, OrderTable};

fn png_error(e: impl std::fmt::Display) -> Error {
    Error::Image(e.to_string())
}

/// Raw palette indices (or gray levels) of an indexed or grayscale PNG.
pub fn decode_labels_png(bytes: &[u8]) -> Result<LabelMap> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(png_error)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Image("label image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_error)?;
    match info.color_type {
        png::ColorType::Indexed | png::ColorType::Grayscale => {}
        other => return Err(Error::Image(format!("label image must be indexed or grayscale, got {other:?}"))),
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let bits = info.bit_depth as usize;
    let mut ids = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for x in 0..w {
            let id = match bits {
                16 => u16::from_be_bytes([row[2 * x], row[2 * x + 1]]) as u32,
                8 => row[x] as u32,
                b => {
                    let per_byte = 8 / b;
                    let byte = row[x / per_byte];
                    let shift = 8 - b * (x % per_byte + 1);
                    ((byte >> shift) & ((1u8 << b) - 1)) as u32
                }
            };
            ids.push(id);
        }
    }
    LabelMap::new(w, h, ids)
}

/// 8-bit indexed PNG with a gray palette; ids must be below 256.
pub fn encode_labels_png(labels: &LabelMap) -> Result<Vec<u8>> {
    let (w, h) = labels.dims();
    let data = labels
        .ids()
        .iter()
        .map(|&id| u8::try_from(id).map_err(|_| Error::Invalid(format!("label {id} does not fit a palette index"))))
        .collect::<Result<Vec<u8>>>()?;
    let palette: Vec<u8> = (0..=255u8).flat_map(|v| [v, v, v]).collect();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(palette);
        let mut writer = enc.write_header().map_err(png_error)?;
        writer.write_image_data(&data).map_err(png_error)?;
    }
    Ok(out)
}

// Mid-gray in 8 bits is 128/255, about 0.0068 away from the origin.
const DEGENERATE_NORMAL: f64 = 0.02;

/// Normals stored as `(n + 1) / 2` per channel; decoded and renormalized.
/// A vector within 8-bit quantization of zero decodes to `(0, 0, 1)`.
pub fn decode_normals_png(bytes: &[u8]) -> Result<NormalMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            let v = p.0.map(|c| 2.0 * c as f64 / 65535.0 - 1.0);
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len < DEGENERATE_NORMAL {
                [0.0, 0.0, 1.0]
            } else {
                v.map(|c| c / len)
            }
        })
        .collect();
    NormalMap::new(w, h, data)
}

/// 16-bit RGB PNG in the `(n + 1) / 2` encoding.
pub fn encode_normals_png(normals: &NormalMap) -> Result<Vec<u8>> {
    let (w, h) = normals.dims();
    let raw = normals
        .data()
        .iter()
        .flat_map(|n| n.map(|c| (((c + 1.0) * 0.5).clamp(0.0, 1.0) * 65535.0).round() as u16))
        .collect();
    let img = ImageBuffer::<PixelRgb<u16>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgb16(img).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Grayscale attention, min-max scaled to `[0, 1]`; a constant map becomes
/// all ones.
pub fn decode_attention_png(bytes: &[u8]) -> Result<AttentionMap> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw: Vec<f64> = img.pixels().map(|p| p.0[0] as f64 / 65535.0).collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let data = if hi > lo {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; raw.len()]
    };
    AttentionMap::new(w, h, data)
}

/// 16-bit grayscale PNG; values are clamped to `[0, 1]`.
pub fn encode_attention_png(attn: &AttentionMap) -> Result<Vec<u8>> {
    let (w, h) = attn.dims();
    let raw = attn
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let img = ImageBuffer::<Luma<u16>, _>::from_raw(w as u32, h as u32, raw).expect("sized buffer");
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(img).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Decode the three rasters and the order table and check them against each
/// other.
pub fn load_maps(
    label_png: &[u8],
    normal_png: &[u8],
    attention_png: &[u8],
    order_table: &str,
) -> Result<(LabelMap, NormalMap, AttentionMap, OrderTable)> {
    let labels = decode_labels_png(label_png)?;
    let normals = decode_normals_png(normal_png)?;
    let attn = decode_attention_png(attention_png)?;
    let table = OrderTable::parse(order_table)?;
    for dims in [normals.dims(), attn.dims()] {
        if dims != labels.dims() {
            return Err(Error::DimensionMismatch {
                expected: labels.dims(),
                actual: dims,
            });
        }
    }
    labels.check_against(&table)?;
    Ok((labels, normals, attn, table))
}
