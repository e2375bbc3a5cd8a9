//! Image similarity metrics.
//!
//! `mse` here is the mean over pixels *and* channels, so PSNR for images in
//! `[0, 1]` is `10 log10(1 / mse)`. SSIM runs on Rec. 709 luminance of the
//! linear RGB values with an 11-tap Gaussian window (sigma 1.5) and the usual
//! constants `k1 = 0.01`, `k2 = 0.03`, averaged over the valid region.

use serde::{Serialize, Serializer};

use crate::canvas::Canvas;
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "finite_or_inf")]
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Canvas, b: &Canvas) -> Result<f64> {
    a.ensure_same_dims(b)?;
    if a.data().is_empty() {
        return Err(Error::Invalid("empty image".into()));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; identical images give `f64::INFINITY`.
pub fn psnr(a: &Canvas, b: &Canvas) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { -10.0 * m.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

// separable valid-region filter
fn filter(img: &[f64], width: usize, height: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = width - SSIM_WINDOW + 1;
    let oh = height - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * width + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of the two images' luminance.
pub fn ssim(a: &Canvas, b: &Canvas) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let k = gaussian_window();
    let x = a.luminance();
    let y = b.luminance();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(&x, w, h, &k);
    let my = filter(&y, w, h, &k);
    let mxx = filter(&prod(&x, &x), w, h, &k);
    let myy = filter(&prod(&y, &y), w, h, &k);
    let mxy = filter(&prod(&x, &y), w, h, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let cxy = mxy[i] - mx[i] * my[i];
            ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2))
                / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn report(a: &Canvas, b: &Canvas) -> Result<MetricReport> {
    Ok(MetricReport {
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
        mse: mse(a, b)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, seed: u64) -> Canvas {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Canvas::from_data(w, h, (0..w * h * 3).map(|_| rng.gen()).collect()).unwrap()
    }

    // direct 2-D windowed SSIM with the window weights recomputed inline
    fn ssim_brute(a: &Canvas, b: &Canvas) -> f64 {
        let (w, h) = a.dims();
        let x = a.luminance();
        let y = b.luminance();
        let mut wts = vec![vec![0.0; 11]; 11];
        let mut tot = 0.0;
        for (j, row) in wts.iter_mut().enumerate() {
            for (i, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                tot += *v;
            }
        }
        let mut acc = 0.0;
        let mut count = 0.0;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let p = (oy + j) * w + ox + i;
                        mx += wts[j][i] / tot * x[p];
                        my += wts[j][i] / tot * y[p];
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for j in 0..11 {
                    for i in 0..11 {
                        let p = (oy + j) * w + ox + i;
                        let wt = wts[j][i] / tot;
                        vx += wt * (x[p] - mx) * (x[p] - mx);
                        vy += wt * (y[p] - my) * (y[p] - my);
                        cxy += wt * (x[p] - mx) * (y[p] - my);
                    }
                }
                let (c1, c2) = (1e-4, 9e-4);
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1.0;
            }
        }
        acc / count
    }

    #[test]
    fn psnr_values() {
        let a = Canvas::new(4, 4, [0.0; 3]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &Canvas::new(4, 4, [1.0; 3])).unwrap(), 0.0);
        assert!((psnr(&a, &Canvas::new(4, 4, [0.1; 3])).unwrap() - 20.0).abs() < 1e-12);
        assert!(psnr(&a, &Canvas::new(3, 4, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_flat_pair_and_identity() {
        let a = Canvas::new(16, 16, [0.2; 3]);
        let b = Canvas::new(16, 16, [0.8; 3]);
        let expect = (0.32 + 1e-4) / (0.68 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        let r = random(20, 17, 3);
        assert!((ssim(&r, &r).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Canvas::new(10, 20, [0.0; 3]), &Canvas::new(10, 20, [0.0; 3])).is_err());
    }

    #[test]
    fn ssim_matches_brute_force() {
        let a = random(19, 14, 1);
        let b = random(19, 14, 2);
        assert!((ssim(&a, &b).unwrap() - ssim_brute(&a, &b)).abs() < 1e-10);
    }

    #[test]
    fn report_serializes_infinity() {
        let a = Canvas::new(12, 12, [0.5; 3]);
        let json = serde_json::to_string(&report(&a, &a).unwrap()).unwrap();
        assert_eq!(json, r#"{"psnr":"inf","ssim":1.0,"mse":0.0}"#);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
            let a = random(12, 13, s1);
            let b = random(12, 13, s2);
            let ab = ssim(&a, &b).unwrap();
            prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn psnr_decreases_with_noise_amplitude(seed in 0u64..1000, amp in 0.01f64..0.2) {
            let base = Canvas::new(8, 8, [0.5; 3]);
            let noise = random(8, 8, seed);
            let noisy = |k: f64| {
                let d = base.data().iter().zip(noise.data()).map(|(b, n)| b + k * (2.0 * n - 1.0)).collect();
                Canvas::from_data(8, 8, d).unwrap()
            };
            prop_assert!(psnr(&base, &noisy(amp)).unwrap() > psnr(&base, &noisy(amp * 1.5)).unwrap());
        }
    }
}
