#![allow(dead_code)]

use std::path::PathBuf;

use copaint::io::{encode_attention_png, encode_labels_png, encode_normals_png, export_image, PngDepth};
use copaint::sequencer::{AttentionMap, LabelMap, NormalMap};
use copaint::Canvas;

pub const PORTRAIT_SIZE: usize = 128;

pub const PORTRAIT_ORDER: &str = "\
# coarse to fine
0 background
4 torso
3 neck
1 hair
2 face
5 eyes
6 mouth
9 frame ignore
";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/portrait")
}

pub struct Portrait {
    pub target: Canvas,
    pub labels: LabelMap,
    pub normals: NormalMap,
    pub attention: AttentionMap,
}

/// Encoded files in the order target, labels, normals, attention, order table.
pub const PORTRAIT_FILES: [&str; 5] = ["target.png", "labels.png", "normals.png", "attention.png", "order.txt"];

fn inside(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> bool {
    let (a, b) = ((u - cx) / rx, (v - cy) / ry);
    a * a + b * b <= 1.0
}

/// Normal of an ellipsoid cap with the given footprint.
fn dome(u: f64, v: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> [f64; 3] {
    let (a, b) = ((u - cx) / rx, (v - cy) / ry);
    let z = (1.0 - a * a - b * b).max(0.05).sqrt();
    unit([a, b, z])
}

fn unit(n: [f64; 3]) -> [f64; 3] {
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    [n[0] / len, n[1] / len, n[2] / len]
}

fn label_at(u: f64, v: f64) -> u32 {
    let s = PORTRAIT_SIZE as f64;
    if u < 2.0 || v < 2.0 || u > s - 2.0 || v > s - 2.0 {
        9
    } else if inside(u, v, 53.0, 54.0, 5.0, 3.0) || inside(u, v, 75.0, 54.0, 5.0, 3.0) {
        5
    } else if inside(u, v, 64.0, 76.0, 9.0, 3.0) {
        6
    } else if inside(u, v, 64.0, 58.0, 26.0, 33.0) {
        2
    } else if inside(u, v, 64.0, 50.0, 33.0, 38.0) && v < 80.0 {
        1
    } else if (54.0..74.0).contains(&u) && (85.0..106.0).contains(&v) {
        3
    } else if v > 100.0 && (u - 64.0).abs() < 20.0 + (v - 100.0) * 1.5 {
        4
    } else {
        0
    }
}

fn normal_at(label: u32, u: f64, v: f64) -> [f64; 3] {
    match label {
        1 => unit([0.5 * (u * 0.5).sin(), 0.3 * (v * 0.3).cos(), 1.0]),
        2 | 5 | 6 => dome(u, v, 64.0, 58.0, 28.0, 35.0),
        3 => unit([(u - 64.0) / 14.0, 0.0, 1.0]),
        4 => unit([(u - 64.0) / 70.0 + 0.25 * (u * 0.4).sin(), -0.2, 1.0]),
        _ => [0.0, 0.0, 1.0],
    }
}

fn albedo(label: u32, u: f64, v: f64) -> [f64; 3] {
    let s = PORTRAIT_SIZE as f64;
    match label {
        0 => {
            let t = v / s;
            [0.35 + 0.2 * t, 0.45 + 0.1 * t, 0.6 - 0.1 * t]
        }
        1 => {
            let streak = 0.5 + 0.5 * (u * 0.7 + v * 0.15).sin();
            [0.12 + 0.08 * streak, 0.06 + 0.04 * streak, 0.03]
        }
        2 => [0.8, 0.55, 0.42],
        3 => [0.68, 0.45, 0.34],
        4 => [0.1, 0.35 + 0.1 * (u * 0.2).sin(), 0.2],
        5 => [0.05, 0.05, 0.08],
        6 => [0.6, 0.12, 0.12],
        _ => [0.9, 0.9, 0.85],
    }
}

/// Procedural head-and-shoulders image with matching guidance maps.
pub fn generate_portrait() -> Portrait {
    let n = PORTRAIT_SIZE;
    let light = unit([-0.4, -0.5, 0.77]);
    let mut ids = Vec::with_capacity(n * n);
    let mut normals = Vec::with_capacity(n * n);
    let mut attention = Vec::with_capacity(n * n);
    let mut target = Canvas::new(n, n, [0.0; 3]);
    for y in 0..n {
        for x in 0..n {
            let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
            let label = label_at(u, v);
            let nrm = normal_at(label, u, v);
            let shade = 0.35 + 0.65 * (nrm[0] * light[0] + nrm[1] * light[1] + nrm[2] * light[2]).max(0.0);
            let a = albedo(label, u, v);
            target.set_pixel(x, y, [a[0] * shade, a[1] * shade, a[2] * shade]);
            let face = (-((u - 64.0).powi(2) + (v - 60.0).powi(2)) / (2.0 * 25.0f64.powi(2))).exp();
            let eyes = [53.0, 75.0]
                .iter()
                .map(|cx| (-((u - cx).powi(2) + (v - 54.0).powi(2)) / 32.0).exp())
                .sum::<f64>();
            attention.push(0.05 + 0.6 * face + 0.35 * eyes.min(1.0));
            ids.push(label);
            normals.push(nrm);
        }
    }
    Portrait {
        target,
        labels: LabelMap::new(n, n, ids).unwrap(),
        normals: NormalMap::new(n, n, normals).unwrap(),
        attention: AttentionMap::new(n, n, attention).unwrap(),
    }
}

/// Encoded fixture files, in `PORTRAIT_FILES` order.
pub fn encode_portrait(p: &Portrait) -> [Vec<u8>; 5] {
    [
        export_image(&p.target, PngDepth::Eight).unwrap(),
        encode_labels_png(&p.labels).unwrap(),
        encode_normals_png(&p.normals).unwrap(),
        encode_attention_png(&p.attention).unwrap(),
        PORTRAIT_ORDER.as_bytes().to_vec(),
    ]
}
