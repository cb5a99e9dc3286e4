//! Full-reference image quality metrics.

use crate::error::{Error, Result};
use crate::tensor::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

/// PSNR in dB over all channels jointly, peak 1. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

fn luminance(x: &Image) -> Vec<f64> {
    let (c, h, w) = x.chw();
    let mut out = vec![0.0; h * w];
    for ci in 0..c {
        for (o, v) in out.iter_mut().zip(x.plane(ci)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= c as f64);
    out
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable valid-mode filtering: `(h, w) -> (h - 10, w - 10)`.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - WINDOW + 1, w - WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xx in 0..ow {
            rows[y * ow + xx] = (0..WINDOW).map(|i| k[i] * x[y * w + xx + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..WINDOW).map(|i| k[i] * rows[(y + i) * ow + xx]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11x11 Gaussian windows of the channel-mean
/// luminance, with `K1 = 0.01`, `K2 = 0.03` and dynamic range 1.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_shape(a, b)?;
    let (_, h, w) = a.chw();
    if h < WINDOW || w < WINDOW {
        return Err(Error::Precondition(format!("ssim: {h}x{w} is smaller than the {WINDOW}x{WINDOW} window")));
    }
    let (x, y) = (luminance(a), luminance(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&prod(&x, &x), h, w, &k);
    let syy = filter_valid(&prod(&y, &y), h, w, &k);
    let sxy = filter_valid(&prod(&x, &y), h, w, &k);
    let n = mx.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cxy = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    fn noise(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut s = seed ^ 0x5555;
        Tensor::from_fn(c, h, w, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn psnr_examples() {
        let x = noise(3, 8, 8, 1);
        assert_eq!(psnr(&x, &x).unwrap(), f64::INFINITY);
        let a = Tensor::full(&[3, 4, 4], 0.5);
        let b = Tensor::full(&[3, 4, 4], 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let y = noise(3, 8, 8, 2);
        let m: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / 192.0;
        assert_eq!(psnr(&x, &y).unwrap(), 10.0 * (1.0 / m).log10());
        assert!(psnr(&x, &Tensor::zeros(&[3, 8, 9])).is_err());
    }

    #[test]
    fn ssim_examples() {
        let x = noise(3, 16, 20, 3);
        assert_eq!(ssim(&x, &x).unwrap(), 1.0);
        let half = Tensor::from_fn(3, 32, 32, |_, _, c| if c < 16 { 0.0 } else { 1.0 });
        let inv = half.map(|v| 1.0 - v);
        assert!(ssim(&half, &inv).unwrap() < 0.1);
        assert!(ssim(&Tensor::zeros(&[1, 10, 20]), &Tensor::zeros(&[1, 10, 20])).is_err());
    }

    #[test]
    fn window_is_normalized() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ssim_is_symmetric(s1 in any::<u64>(), s2 in any::<u64>()) {
            let (a, b) = (noise(3, 14, 13, s1), noise(3, 14, 13, s2));
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn psnr_decreases_with_offset(e in 0.001f64..0.2, d in 0.001f64..0.1) {
            let x = Tensor::full(&[3, 4, 4], 0.3);
            let p1 = psnr(&x, &x.map(|v| v + e)).unwrap();
            let p2 = psnr(&x, &x.map(|v| v + e + d)).unwrap();
            prop_assert!(p2 < p1);
        }
    }
}
