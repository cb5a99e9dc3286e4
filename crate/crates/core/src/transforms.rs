//! Parameter-free signal transforms: orthonormal Haar DWT, Fourier
//! amplitude/phase split, and Sobel gradients.

use std::cell::RefCell;
use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::conv;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One Haar analysis level. All four subbands share the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletLevel {
    pub low: Tensor,
    pub hl: Tensor,
    pub lh: Tensor,
    pub hh: Tensor,
}

impl WaveletLevel {
    pub fn shape(&self) -> &[usize] {
        self.low.shape()
    }

    fn check(&self) -> Result<()> {
        let s = self.low.shape();
        for (name, t) in [("HL", &self.hl), ("LH", &self.lh), ("HH", &self.hh)] {
            if t.shape() != s {
                return Err(Error::Shape(format!(
                    "subband {name} has shape {:?}, L has {s:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Multi-level decomposition; `levels[0]` is the finest level, the last entry
/// holds the coarsest low band.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub levels: Vec<WaveletLevel>,
}

impl WaveletPyramid {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest_low(&self) -> &Tensor {
        &self.levels.last().expect("non-empty pyramid").low
    }
}

/// Amplitude (modulus) and phase (argument) of a per-channel 2-D spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierPair {
    pub amplitude: Tensor,
    pub phase: Tensor,
}

fn check_finite(x: &Tensor, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(format!("{what}: input contains non-finite values")))
    }
}

pub fn dwt2(x: &Tensor) -> Result<WaveletLevel> {
    let (_, h, w) = x.chw();
    if h % 2 != 0 {
        return Err(Error::Precondition(format!("dwt2: height {h} is odd")));
    }
    if w % 2 != 0 {
        return Err(Error::Precondition(format!("dwt2: width {w} is odd")));
    }
    check_finite(x, "dwt2")?;
    let stacked = haar_forward_stacked(x);
    let c = x.channels();
    Ok(WaveletLevel {
        low: stacked.channel_slice(0, c),
        hl: stacked.channel_slice(c, 2 * c),
        lh: stacked.channel_slice(2 * c, 3 * c),
        hh: stacked.channel_slice(3 * c, 4 * c),
    })
}

pub fn idwt2(level: &WaveletLevel) -> Result<Tensor> {
    level.check()?;
    let stacked = Tensor::concat_channels(&[&level.low, &level.hl, &level.lh, &level.hh])?;
    Ok(haar_inverse_stacked(&stacked))
}

pub fn decompose(x: &Tensor, depth: usize) -> Result<WaveletPyramid> {
    if depth == 0 {
        return Err(Error::Precondition("decompose: depth must be at least 1".into()));
    }
    let (_, h, w) = x.chw();
    let m = 1usize << depth;
    if h % m != 0 || w % m != 0 {
        return Err(Error::Precondition(format!(
            "decompose: {h}x{w} is not divisible by 2^{depth} = {m}"
        )));
    }
    let mut levels = Vec::with_capacity(depth);
    let mut cur = x.clone();
    for _ in 0..depth {
        let lvl = dwt2(&cur)?;
        cur = lvl.low.clone();
        levels.push(lvl);
    }
    Ok(WaveletPyramid { levels })
}

pub fn reconstruct(p: &WaveletPyramid) -> Result<Tensor> {
    let last = p
        .levels
        .last()
        .ok_or_else(|| Error::Precondition("reconstruct: empty pyramid".into()))?;
    let mut cur = last.low.clone();
    for (i, lvl) in p.levels.iter().enumerate().rev() {
        if cur.shape() != lvl.hl.shape() {
            return Err(Error::Shape(format!(
                "reconstruct: level {} expects low band {:?}, got {:?}",
                i + 1,
                lvl.hl.shape(),
                cur.shape()
            )));
        }
        cur = idwt2(&WaveletLevel { low: cur, hl: lvl.hl.clone(), lh: lvl.lh.clone(), hh: lvl.hh.clone() })?;
    }
    Ok(cur)
}

/// `[c, h, w] -> [4c, h/2, w/2]` with channel blocks `L, HL, LH, HH`.
pub(crate) fn haar_forward_stacked(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[4 * c, h2, w2]);
    let plane = h2 * w2;
    for ci in 0..c {
        let src = x.plane(ci);
        let data = out.data_mut();
        for y in 0..h2 {
            for xx in 0..w2 {
                let a = src[(2 * y) * w + 2 * xx];
                let b = src[(2 * y) * w + 2 * xx + 1];
                let cc = src[(2 * y + 1) * w + 2 * xx];
                let d = src[(2 * y + 1) * w + 2 * xx + 1];
                let o = y * w2 + xx;
                data[ci * plane + o] = (a + b + cc + d) * 0.5;
                data[(c + ci) * plane + o] = (a - b + cc - d) * 0.5;
                data[(2 * c + ci) * plane + o] = (a + b - cc - d) * 0.5;
                data[(3 * c + ci) * plane + o] = (a - b - cc + d) * 0.5;
            }
        }
    }
    out
}

/// Inverse of [`haar_forward_stacked`].
pub(crate) fn haar_inverse_stacked(s: &Tensor) -> Tensor {
    let (c4, h2, w2) = s.chw();
    let c = c4 / 4;
    let (h, w) = (2 * h2, 2 * w2);
    let mut out = Tensor::zeros(&[c, h, w]);
    let data = s.data();
    let plane = h2 * w2;
    for ci in 0..c {
        let dst = out.plane_mut(ci);
        for y in 0..h2 {
            for xx in 0..w2 {
                let o = y * w2 + xx;
                let l = data[ci * plane + o];
                let hl = data[(c + ci) * plane + o];
                let lh = data[(2 * c + ci) * plane + o];
                let hh = data[(3 * c + ci) * plane + o];
                dst[(2 * y) * w + 2 * xx] = (l + hl + lh + hh) * 0.5;
                dst[(2 * y) * w + 2 * xx + 1] = (l - hl + lh - hh) * 0.5;
                dst[(2 * y + 1) * w + 2 * xx] = (l + hl - lh - hh) * 0.5;
                dst[(2 * y + 1) * w + 2 * xx + 1] = (l - hl - lh + hh) * 0.5;
            }
        }
    }
    out
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// In-place 2-D FFT of one `h x w` plane. `inverse` applies the `1/(hw)`
/// normalisation.
fn fft2_plane(buf: &mut [Complex64], h: usize, w: usize, inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let (row, col) = if inverse {
            (p.plan_fft_inverse(w), p.plan_fft_inverse(h))
        } else {
            (p.plan_fft_forward(w), p.plan_fft_forward(h))
        };
        row.process(buf);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                column[y] = buf[y * w + x];
            }
            col.process(&mut column);
            for y in 0..h {
                buf[y * w + x] = column[y];
            }
        }
    });
    if inverse {
        let n = (h * w) as f64;
        for v in buf.iter_mut() {
            *v /= n;
        }
    }
}

/// Per-channel 2-D DFT of a complex map given as separate real/imaginary
/// tensors.
pub(crate) fn fft2_complex(re: &Tensor, im: &Tensor, inverse: bool) -> (Tensor, Tensor) {
    let (c, h, w) = re.chw();
    let mut out_re = Tensor::zeros(&[c, h, w]);
    let mut out_im = Tensor::zeros(&[c, h, w]);
    let mut buf = vec![Complex64::new(0.0, 0.0); h * w];
    for ci in 0..c {
        for ((b, &r), &i) in buf.iter_mut().zip(re.plane(ci)).zip(im.plane(ci)) {
            *b = Complex64::new(r, i);
        }
        fft2_plane(&mut buf, h, w, inverse);
        for (b, r) in buf.iter().zip(out_re.plane_mut(ci)) {
            *r = b.re;
        }
        for (b, i) in buf.iter().zip(out_im.plane_mut(ci)) {
            *i = b.im;
        }
    }
    (out_re, out_im)
}

/// Forward DFT of a real map, `[c, h, w] -> [2c, h, w]` (real parts, then
/// imaginary parts).
///
/// Bins that are their own conjugate mirror (`ky in {0, h/2}` and
/// `kx in {0, w/2}`) are real for real input; their imaginary parts are
/// written as exact `+0.0` so the phase there is exactly `0` or `pi`.
pub(crate) fn fft2_real(x: &Tensor) -> Tensor {
    let (c, h, w) = x.chw();
    let zeros = Tensor::zeros(&[c, h, w]);
    let (re, mut im) = fft2_complex(x, &zeros, false);
    let ys: Vec<usize> = if h % 2 == 0 && h > 1 { vec![0, h / 2] } else { vec![0] };
    let xs: Vec<usize> = if w % 2 == 0 && w > 1 { vec![0, w / 2] } else { vec![0] };
    for ci in 0..c {
        for &y in &ys {
            for &xx in &xs {
                im.set(ci, y, xx, 0.0);
            }
        }
    }
    Tensor::concat_channels(&[&re, &im]).expect("matching shapes")
}

pub(crate) fn wrap_phase(a: f64) -> f64 {
    if a == -PI {
        PI
    } else {
        a
    }
}

pub fn fourier_split(x: &Tensor) -> Result<FourierPair> {
    check_finite(x, "fourier_split")?;
    let c = x.channels();
    let s = fft2_real(x);
    let re = s.channel_slice(0, c);
    let im = s.channel_slice(c, 2 * c);
    Ok(FourierPair {
        amplitude: re.zip_map(&im, f64::hypot),
        phase: im.zip_map(&re, |y, x| wrap_phase(y.atan2(x))),
    })
}

pub fn fourier_merge(f: &FourierPair) -> Result<Tensor> {
    if f.amplitude.shape() != f.phase.shape() {
        return Err(Error::Shape(format!(
            "fourier_merge: amplitude {:?} vs phase {:?}",
            f.amplitude.shape(),
            f.phase.shape()
        )));
    }
    let re = f.amplitude.zip_map(&f.phase, |a, p| a * p.cos());
    let im = f.amplitude.zip_map(&f.phase, |a, p| a * p.sin());
    Ok(fft2_complex(&re, &im, true).0)
}

/// Depthwise `[c, 1, 3, 3]` Sobel kernels for the x and y derivatives.
pub(crate) fn sobel_kernels(c: usize) -> (Tensor, Tensor) {
    const KX: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    const KY: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    let rep = |k: &[f64; 9]| {
        Tensor::new(&[c, 1, 3, 3], (0..c).flat_map(|_| k.iter().copied()).collect()).expect("shape")
    };
    (rep(&KX), rep(&KY))
}

/// Per-channel Sobel gradient magnitude with reflect padding.
pub fn sobel_grad(x: &Tensor) -> Result<Tensor> {
    let (_, h, w) = x.chw();
    if h < 3 || w < 3 {
        return Err(Error::Precondition(format!(
            "sobel_grad: {h}x{w} is smaller than the 3x3 kernel"
        )));
    }
    Ok(sobel_unchecked(x))
}

/// Sobel magnitude without the size check; reflect padding degenerates
/// gracefully on 1- and 2-pixel axes.
pub(crate) fn sobel_unchecked(x: &Tensor) -> Tensor {
    let (gx, gy) = sobel_xy(x);
    gx.zip_map(&gy, f64::hypot)
}

/// Horizontal and vertical Sobel responses. Each response is evaluated as a
/// sum of differences of mirrored taps, so flat regions give exact zeros.
pub(crate) fn sobel_xy(x: &Tensor) -> (Tensor, Tensor) {
    let (c, h, w) = x.chw();
    let mut gx = Tensor::zeros(&[c, h, w]);
    let mut gy = Tensor::zeros(&[c, h, w]);
    let ry: Vec<[usize; 3]> = (0..h as isize)
        .map(|y| [conv::reflect_index(y - 1, h), y as usize, conv::reflect_index(y + 1, h)])
        .collect();
    let rx: Vec<[usize; 3]> = (0..w as isize)
        .map(|x| [conv::reflect_index(x - 1, w), x as usize, conv::reflect_index(x + 1, w)])
        .collect();
    for ci in 0..c {
        let p = x.plane(ci);
        let at = |y: usize, x: usize| p[y * w + x];
        let mut vx = vec![0.0; h * w];
        let mut vy = vec![0.0; h * w];
        for (y, [y0, y1, y2]) in ry.iter().copied().enumerate() {
            for (xx, [x0, x1, x2]) in rx.iter().copied().enumerate() {
                vx[y * w + xx] = (at(y0, x2) - at(y0, x0)) + 2.0 * (at(y1, x2) - at(y1, x0)) + (at(y2, x2) - at(y2, x0));
                vy[y * w + xx] = (at(y2, x0) - at(y0, x0)) + 2.0 * (at(y2, x1) - at(y0, x1)) + (at(y2, x2) - at(y0, x2));
            }
        }
        gx.plane_mut(ci).copy_from_slice(&vx);
        gy.plane_mut(ci).copy_from_slice(&vy);
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lcg_tensor(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
        let mut s = seed;
        Tensor::from_fn(c, h, w, |_, _, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    /// Direct O(N^2) DFT used as an oracle for the FFT path.
    fn naive_dft(x: &[f64], h: usize, w: usize) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); h * w];
        for ky in 0..h {
            for kx in 0..w {
                let (mut re, mut im) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let t = -2.0 * PI * ((ky * y) as f64 / h as f64 + (kx * xx) as f64 / w as f64);
                        re += x[y * w + xx] * t.cos();
                        im += x[y * w + xx] * t.sin();
                    }
                }
                out[ky * w + kx] = (re, im);
            }
        }
        out
    }

    #[test]
    fn dwt_of_constant_has_no_detail() {
        let x = Tensor::full(&[3, 4, 6], 0.3);
        let l = dwt2(&x).unwrap();
        assert!(l.low.data().iter().all(|&v| (v - 0.6).abs() < 1e-15));
        for t in [&l.hl, &l.lh, &l.hh] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dwt_two_by_two_direct_values() {
        let x = Tensor::new(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let l = dwt2(&x).unwrap();
        assert_eq!(l.low.data(), &[5.0]);
        assert_eq!(l.hl.data(), &[-1.0]);
        assert_eq!(l.lh.data(), &[-2.0]);
        assert_eq!(l.hh.data(), &[0.0]);
        let back = idwt2(&l).unwrap();
        assert_eq!(back.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn idwt_of_constant_low() {
        let one = |v| Tensor::full(&[2, 3, 3], v);
        let lvl = WaveletLevel { low: one(1.4), hl: one(0.0), lh: one(0.0), hh: one(0.0) };
        let x = idwt2(&lvl).unwrap();
        assert_eq!(x.shape(), &[2, 6, 6]);
        assert!(x.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn odd_axes_are_named() {
        let e = dwt2(&Tensor::zeros(&[1, 3, 4])).unwrap_err().to_string();
        assert!(e.contains("height"), "{e}");
        let e = dwt2(&Tensor::zeros(&[1, 4, 5])).unwrap_err().to_string();
        assert!(e.contains("width"), "{e}");
    }

    #[test]
    fn idwt_rejects_mismatched_subbands() {
        let lvl = WaveletLevel {
            low: Tensor::zeros(&[1, 2, 2]),
            hl: Tensor::zeros(&[1, 2, 2]),
            lh: Tensor::zeros(&[1, 2, 3]),
            hh: Tensor::zeros(&[1, 2, 2]),
        };
        assert!(matches!(idwt2(&lvl), Err(Error::Shape(_))));
    }

    #[test]
    fn decompose_shapes_and_depth_one() {
        let x = lcg_tensor(3, 256, 256, 1);
        let p = decompose(&x, 3).unwrap();
        assert_eq!(p.levels[2].low.shape(), &[3, 32, 32]);
        assert_eq!(p.levels[0].hh.shape(), &[3, 128, 128]);
        let single = decompose(&x, 1).unwrap();
        assert_eq!(single.levels[0], dwt2(&x).unwrap());
        assert_eq!(reconstruct(&single).unwrap(), idwt2(&single.levels[0]).unwrap());
        assert!(decompose(&lcg_tensor(1, 12, 16, 2), 3).is_err());
    }

    #[test]
    fn reconstruct_of_constant_coarse_band() {
        let mut p = decompose(&Tensor::zeros(&[3, 16, 16]), 3).unwrap();
        p.levels[2].low = Tensor::full(&[3, 2, 2], 8.0 * 0.25);
        let x = reconstruct(&p).unwrap();
        assert!(x.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn reconstruct_rejects_broken_chain() {
        let mut p = decompose(&Tensor::zeros(&[1, 8, 8]), 2).unwrap();
        p.levels[1].low = Tensor::zeros(&[1, 3, 3]);
        assert!(reconstruct(&p).is_err());
    }

    #[test]
    fn fourier_constant_image() {
        let n = 6;
        let x = Tensor::full(&[1, n, n], 0.4);
        let f = fourier_split(&x).unwrap();
        assert!((f.amplitude.at(0, 0, 0) - 0.4 * (n * n) as f64).abs() < 1e-12);
        assert_eq!(f.phase.at(0, 0, 0), 0.0);
        for (i, &a) in f.amplitude.data().iter().enumerate().skip(1) {
            assert!(a < 1e-12, "bin {i} amplitude {a}");
        }
        let merged = fourier_merge(&f).unwrap();
        assert!(merged.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x = lcg_tensor(2, 6, 8, 3);
        let f = fourier_split(&x).unwrap();
        for c in 0..2 {
            let want = naive_dft(x.plane(c), 6, 8);
            for (i, &(re, im)) in want.iter().enumerate() {
                let (y, xx) = (i / 8, i % 8);
                assert!((f.amplitude.at(c, y, xx) - re.hypot(im)).abs() < 1e-10);
                if re.hypot(im) > 1e-9 {
                    let d = (f.phase.at(c, y, xx) - im.atan2(re)).rem_euclid(2.0 * PI);
                    assert!(d < 1e-9 || 2.0 * PI - d < 1e-9);
                }
            }
        }
    }

    #[test]
    fn self_conjugate_bins_have_exact_real_phase() {
        let x = lcg_tensor(1, 8, 8, 4).map(|v| v - 0.5);
        let f = fourier_split(&x).unwrap();
        for &(y, xx) in &[(0, 0), (0, 4), (4, 0), (4, 4)] {
            let p = f.phase.at(0, y, xx);
            assert!(p == 0.0 || p == PI, "phase {p}");
        }
    }

    #[test]
    fn amplitude_is_shift_invariant_phase_is_not() {
        let x = lcg_tensor(1, 8, 8, 5);
        let shifted = Tensor::from_fn(1, 8, 8, |c, y, xx| x.at(c, (y + 3) % 8, (xx + 1) % 8));
        let a = fourier_split(&x).unwrap();
        let b = fourier_split(&shifted).unwrap();
        assert!(a.amplitude.max_abs_diff(&b.amplitude) < 1e-10);
        assert!(a.phase.max_abs_diff(&b.phase) > 1e-3);
    }

    #[test]
    fn merge_is_linear_in_amplitude() {
        let x = lcg_tensor(2, 4, 4, 6);
        let mut f = fourier_split(&x).unwrap();
        let base = fourier_merge(&f).unwrap();
        f.amplitude.scale_inplace(2.0);
        let doubled = fourier_merge(&f).unwrap();
        let want = base.map(|v| 2.0 * v);
        assert!(doubled.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn merge_rejects_shape_mismatch() {
        let f = FourierPair { amplitude: Tensor::zeros(&[1, 2, 2]), phase: Tensor::zeros(&[1, 2, 3]) };
        assert!(fourier_merge(&f).is_err());
    }

    #[test]
    fn sobel_constant_ramp_and_small_input() {
        let c = Tensor::full(&[2, 5, 5], 0.7);
        assert!(sobel_grad(&c).unwrap().data().iter().all(|&v| v == 0.0));
        let ramp = Tensor::from_fn(1, 6, 7, |_, _, x| x as f64);
        let g = sobel_grad(&ramp).unwrap();
        for y in 0..6 {
            for x in 1..6 {
                assert_eq!(g.at(0, y, x), 8.0);
            }
        }
        assert!(sobel_grad(&Tensor::zeros(&[1, 2, 5])).is_err());
    }

    #[test]
    fn sobel_impulse_matches_direct_convolution() {
        let mut x = Tensor::zeros(&[1, 7, 7]);
        x.set(0, 3, 3, 1.0);
        let g = sobel_grad(&x).unwrap();
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        for y in 0..7 {
            for xx in 0..7 {
                let (mut gx, mut gy) = (0.0, 0.0);
                for dy in 0..3 {
                    for dx in 0..3 {
                        let sy = conv::reflect_index(y as isize + dy as isize - 1, 7);
                        let sx = conv::reflect_index(xx as isize + dx as isize - 1, 7);
                        let v = x.at(0, sy, sx);
                        gx += kx[dy][dx] * v;
                        gy += kx[dx][dy] * v;
                    }
                }
                assert_eq!(g.at(0, y, xx), (gx * gx + gy * gy).sqrt());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn pyramid_round_trip(seed in any::<u64>(), depth in 1usize..=4, c in 1usize..=3) {
            let x = lcg_tensor(c, 32, 48, seed);
            let p = decompose(&x, depth).unwrap();
            prop_assert!(reconstruct(&p).unwrap().max_abs_diff(&x) < 1e-5);
            for lvl in &p.levels {
                prop_assert!(lvl.low.min() >= 0.0);
            }
        }

        #[test]
        fn haar_level_preserves_energy(seed in any::<u64>()) {
            let x = lcg_tensor(2, 8, 10, seed).map(|v| v - 0.3);
            let l = dwt2(&x).unwrap();
            let e = l.low.sum_sq() + l.hl.sum_sq() + l.lh.sum_sq() + l.hh.sum_sq();
            prop_assert!((e - x.sum_sq()).abs() <= 1e-6 * x.sum_sq());
        }

        #[test]
        fn subband_round_trip(seed in any::<u64>()) {
            let mk = |s| lcg_tensor(2, 3, 5, s).map(|v| 4.0 * v - 2.0);
            let lvl = WaveletLevel { low: mk(seed), hl: mk(seed ^ 1), lh: mk(seed ^ 2), hh: mk(seed ^ 3) };
            let again = dwt2(&idwt2(&lvl).unwrap()).unwrap();
            prop_assert!(again.low.max_abs_diff(&lvl.low) < 1e-5);
            prop_assert!(again.hh.max_abs_diff(&lvl.hh) < 1e-5);
        }

        #[test]
        fn fourier_round_trip(seed in any::<u64>(), h in 1usize..10, w in 1usize..10) {
            let x = lcg_tensor(3, h, w, seed).map(|v| 3.0 * v - 1.0);
            let f = fourier_split(&x).unwrap();
            prop_assert!(f.amplitude.min() >= 0.0);
            prop_assert!(fourier_merge(&f).unwrap().max_abs_diff(&x) < 1e-5);
        }
    }
}
