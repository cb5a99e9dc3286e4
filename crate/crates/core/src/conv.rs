//! Direct 2-D convolution kernels with explicit padding.
//!
//! Every convolution here is stride 1 with odd square kernels and "same"
//! output size. Inputs are padded into a scratch buffer first so the inner
//! loops run over contiguous rows.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Reflect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same(kernel: usize) -> Self {
        Self { kernel, dilation: 1, groups: 1, padding: Padding::Zero }
    }

    pub fn pointwise() -> Self {
        Self::same(1)
    }

    pub fn depthwise(kernel: usize, channels: usize) -> Self {
        Self { groups: channels, ..Self::same(kernel) }
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel / 2)
    }
}

/// Mirror index without edge repetition (`d c b | a b c d | c b a`),
/// folding repeatedly when the pad exceeds the axis length.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

pub fn pad(x: &Tensor, p: usize, mode: Padding) -> Tensor {
    let (c, h, w) = x.chw();
    if p == 0 {
        return x.clone();
    }
    let (ph, pw) = (h + 2 * p, w + 2 * p);
    match mode {
        Padding::Zero => {
            let mut out = Tensor::zeros(&[c, ph, pw]);
            for ci in 0..c {
                let src = x.plane(ci);
                let dst = out.plane_mut(ci);
                for y in 0..h {
                    dst[(y + p) * pw + p..(y + p) * pw + p + w].copy_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
            out
        }
        Padding::Reflect => {
            let xs: Vec<usize> = (0..pw).map(|j| reflect_index(j as isize - p as isize, w)).collect();
            Tensor::from_fn(c, ph, pw, |ci, y, j| {
                x.at(ci, reflect_index(y as isize - p as isize, h), xs[j])
            })
        }
    }
}

/// Adjoint of [`pad`]: folds a gradient on the padded grid back onto the
/// original grid.
pub fn unpad(g: &Tensor, p: usize, mode: Padding, h: usize, w: usize) -> Tensor {
    let (c, ph, pw) = g.chw();
    if p == 0 {
        return g.clone();
    }
    let mut out = Tensor::zeros(&[c, h, w]);
    match mode {
        Padding::Zero => {
            for ci in 0..c {
                let src = g.plane(ci);
                let dst = out.plane_mut(ci);
                for y in 0..h {
                    dst[y * w..(y + 1) * w].copy_from_slice(&src[(y + p) * pw + p..(y + p) * pw + p + w]);
                }
            }
        }
        Padding::Reflect => {
            let xs: Vec<usize> = (0..pw).map(|j| reflect_index(j as isize - p as isize, w)).collect();
            for ci in 0..c {
                let src = g.plane(ci);
                let dst = out.plane_mut(ci);
                for y in 0..ph {
                    let sy = reflect_index(y as isize - p as isize, h);
                    for (j, &sx) in xs.iter().enumerate() {
                        dst[sy * w + sx] += src[y * pw + j];
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dims(x: &Tensor, weight: &Tensor, spec: &ConvSpec) -> (usize, usize, usize, usize, usize) {
    let (ci, h, w) = x.chw();
    let ws = weight.shape();
    assert_eq!(ws.len(), 4, "conv weight must be [out, in/groups, k, k]");
    assert_eq!(ws[2], spec.kernel);
    assert_eq!(ci % spec.groups, 0, "input channels not divisible by groups");
    assert_eq!(ws[1] * spec.groups, ci, "weight expects {} input channels, got {ci}", ws[1] * spec.groups);
    assert_eq!(ws[0] % spec.groups, 0, "output channels not divisible by groups");
    (ci, h, w, ws[0], ws[1])
}

/// Forward convolution. Returns the output and the padded input, which the
/// backward pass reuses.
pub fn conv2d_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> (Tensor, Tensor) {
    let (_, h, w, co, cig) = dims(x, weight, spec);
    let k = spec.kernel;
    let d = spec.dilation;
    let p = spec.pad();
    let xp = pad(x, p, spec.padding);
    let pw = w + 2 * p;
    let cog = co / spec.groups;
    let wd = weight.data();
    let mut out = Tensor::zeros(&[co, h, w]);
    for o in 0..co {
        let g = o / cog;
        let plane = out.plane_mut(o);
        if let Some(b) = bias {
            plane.fill(b.data()[o]);
        }
        for i in 0..cig {
            let src = xp.plane(g * cig + i);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = wd[((o * cig + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let row = (y + ky * d) * pw + kx * d;
                        axpy(&mut plane[y * w..(y + 1) * w], wv, &src[row..row + w]);
                    }
                }
            }
        }
    }
    (out, xp)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Option<Tensor>,
    pub bias: Option<Tensor>,
}

pub fn conv2d_backward(
    grad: &Tensor,
    xp: &Tensor,
    weight: &Tensor,
    spec: &ConvSpec,
    in_hw: (usize, usize),
    need: (bool, bool, bool),
) -> ConvGrads {
    let (co, h, w) = grad.chw();
    let (cin, _, pw) = xp.chw();
    let k = spec.kernel;
    let d = spec.dilation;
    let p = spec.pad();
    let cig = cin / spec.groups;
    let cog = co / spec.groups;
    let wd = weight.data();

    let input = need.0.then(|| {
        let mut gp = Tensor::zeros(xp.shape());
        for o in 0..co {
            let g = o / cog;
            let gplane = grad.plane(o);
            for i in 0..cig {
                let dst = gp.plane_mut(g * cig + i);
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wd[((o * cig + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let row = (y + ky * d) * pw + kx * d;
                            axpy(&mut dst[row..row + w], wv, &gplane[y * w..(y + 1) * w]);
                        }
                    }
                }
            }
        }
        unpad(&gp, p, spec.padding, in_hw.0, in_hw.1)
    });

    let weight_grad = need.1.then(|| {
        let mut gw = Tensor::zeros(weight.shape());
        let gwd = gw.data_mut();
        for o in 0..co {
            let g = o / cog;
            let gplane = grad.plane(o);
            for i in 0..cig {
                let src = xp.plane(g * cig + i);
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0;
                        for y in 0..h {
                            let row = (y + ky * d) * pw + kx * d;
                            acc += dot(&gplane[y * w..(y + 1) * w], &src[row..row + w]);
                        }
                        gwd[((o * cig + i) * k + ky) * k + kx] = acc;
                    }
                }
            }
        }
        gw
    });

    let bias = need.2.then(|| {
        let data = (0..co).map(|o| grad.plane(o).iter().sum()).collect();
        Tensor::new(&[co], data).expect("bias shape")
    });

    ConvGrads { input, weight: weight_grad, bias }
}
