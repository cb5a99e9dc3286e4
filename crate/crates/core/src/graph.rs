//! Reverse-mode automatic differentiation over per-image computation graphs.
//!
//! A [`Graph`] records every operation applied during one forward pass. Nodes
//! are appended in evaluation order, so walking them backwards is a valid
//! topological order for gradient propagation. A graph built with
//! [`Graph::inference`] records values only.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::conv::{self, ConvSpec, Padding};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::transforms;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct BackCtx<'a> {
    grad: &'a Tensor,
    inputs: Vec<&'a Tensor>,
    output: &'a Tensor,
    need: Vec<bool>,
}

type BackwardFn = Box<dyn Fn(&BackCtx) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    requires_grad: bool,
    backward: Option<BackwardFn>,
    param: Option<ParamId>,
}

pub struct Graph<'p> {
    nodes: Vec<Node>,
    record: bool,
    params: Option<&'p ParamStore>,
    param_vars: HashMap<ParamId, Var>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.iter().find(|&&(p, _)| p == id).and_then(|&(_, n)| self.grads[n].as_ref())
    }

    /// Gradients of every parameter that took part in the graph.
    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().filter_map(|&(id, n)| self.grads[n].as_ref().map(|g| (id, g)))
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != 3 || b.len() != 3 {
        return (a == b).then(|| a.to_vec());
    }
    (0..3)
        .map(|i| match (a[i], b[i]) {
            (x, y) if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn broadcast_to(t: &Tensor, shape: &[usize]) -> Tensor {
    if t.shape() == shape {
        return t.clone();
    }
    let s = t.shape();
    Tensor::from_fn(shape[0], shape[1], shape[2], |c, y, x| {
        t.at(if s[0] == 1 { 0 } else { c }, if s[1] == 1 { 0 } else { y }, if s[2] == 1 { 0 } else { x })
    })
}

/// Sums a broadcast gradient back down to `shape`.
fn reduce_to(g: &Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let (c, h, w) = g.chw();
    let mut out = Tensor::zeros(shape);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (oc, oy, ox) = (
                    if shape[0] == 1 { 0 } else { ci },
                    if shape[1] == 1 { 0 } else { y },
                    if shape[2] == 1 { 0 } else { x },
                );
                let v = out.at(oc, oy, ox) + g.at(ci, y, x);
                out.set(oc, oy, ox, v);
            }
        }
    }
    out
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<'p> Graph<'p> {
    /// A graph that records backward closures.
    pub fn new(params: &'p ParamStore) -> Self {
        Self { nodes: Vec::new(), record: true, params: Some(params), param_vars: HashMap::new() }
    }

    /// A value-only graph for inference.
    pub fn inference(params: &'p ParamStore) -> Self {
        Self { record: false, ..Self::new(params) }
    }

    /// A graph without a parameter store, for parameter-free computations.
    pub fn standalone(record: bool) -> Graph<'static> {
        Graph { nodes: Vec::new(), record, params: None, param_vars: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_leaf(t, false, None)
    }

    /// A leaf that receives a gradient even though it is not a stored parameter.
    pub fn variable(&mut self, t: Tensor) -> Var {
        let record = self.record;
        self.push_leaf(t, record, None)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let value = self.params.expect("graph has no parameter store").get(id).clone();
        let record = self.record;
        let v = self.push_leaf(value, record, Some(id));
        self.param_vars.insert(id, v);
        v
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool, param: Option<ParamId>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), requires_grad, backward: None, param });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        value: Tensor,
        parents: &[Var],
        backward: impl Fn(&BackCtx) -> Vec<Option<Tensor>> + 'static,
    ) -> Var {
        let requires_grad = self.record && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward: Option<BackwardFn> = requires_grad.then(|| Box::new(backward) as BackwardFn);
        self.nodes.push(Node {
            value,
            parents: if requires_grad { parents.to_vec() } else { Vec::new() },
            requires_grad,
            backward,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Back-propagates from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[i].take() else { continue };
            let ctx = BackCtx {
                grad: &g,
                inputs: node.parents.iter().map(|p| &self.nodes[p.0].value).collect(),
                output: &node.value,
                need: node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect(),
            };
            let pg = bw(&ctx);
            debug_assert_eq!(pg.len(), node.parents.len());
            for (p, pgrad) in node.parents.iter().zip(pg) {
                let Some(pgrad) = pgrad else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pgrad),
                    slot => *slot = Some(pgrad),
                }
            }
            // Intermediate gradients are released once consumed; leaves keep theirs.
            grads[i] = if node.backward.is_some() && node.param.is_none() { None } else { Some(g) };
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, i)))
            .collect();
        Gradients { grads, params }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    /// `base ^ exponent` with `base > 0`.
    pub fn pow(&mut self, base: Var, exponent: Var) -> Var {
        self.binary(
            base,
            exponent,
            |b, e| b.powf(e),
            |b, e, g| {
                let v = b.powf(e);
                (g * e * b.powf(e - 1.0), g * v * b.ln())
            },
        )
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
        df: fn(f64, f64, f64) -> (f64, f64),
    ) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let shape = broadcast_shape(&sa, &sb)
            .unwrap_or_else(|| panic!("cannot broadcast {sa:?} with {sb:?}"));
        let ta = broadcast_to(self.value(a), &shape);
        let tb = broadcast_to(self.value(b), &shape);
        let out = ta.zip_map(&tb, f);
        self.push(out, &[a, b], move |ctx| {
            let ta = broadcast_to(ctx.inputs[0], &shape);
            let tb = broadcast_to(ctx.inputs[1], &shape);
            let n = ctx.grad.len();
            let mut ga = Vec::with_capacity(n);
            let mut gb = Vec::with_capacity(n);
            for i in 0..n {
                let (da, db) = df(ta.data()[i], tb.data()[i], ctx.grad.data()[i]);
                ga.push(da);
                gb.push(db);
            }
            let ga = Tensor::new(&shape, ga).expect("shape");
            let gb = Tensor::new(&shape, gb).expect("shape");
            vec![
                ctx.need[0].then(|| reduce_to(&ga, &sa)),
                ctx.need[1].then(|| reduce_to(&gb, &sb)),
            ]
        })
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        self.push(out, &[a], move |ctx| {
            let x = ctx.inputs[0].data();
            let y = ctx.output.data();
            let g = ctx.grad.data();
            let data = (0..g.len()).map(|i| g[i] * df(x[i], y[i])).collect();
            vec![Some(Tensor::new(ctx.grad.shape(), data).expect("shape"))]
        })
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v * k);
        self.push(out, &[a], move |ctx| vec![Some(ctx.grad.map(|g| g * k))])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|v| v + k);
        self.push(out, &[a], |ctx| vec![Some(ctx.grad.clone())])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, |_, y| y * (1.0 - y))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * sigmoid(x), |x, _| {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, |x, _| 1.0 / x)
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, |x, _| if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, &[a], move |ctx| {
            let x = ctx.inputs[0];
            vec![Some(ctx.grad.zip_map(x, |g, v| if v >= lo && v <= hi { g } else { 0.0 }))]
        })
    }

    // ---- reductions ----

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len() as f64;
        let out = Tensor::scalar(t.mean());
        self.push(out, &[a], move |ctx| {
            let g = ctx.grad.data()[0] / n;
            vec![Some(Tensor::full(ctx.inputs[0].shape(), g))]
        })
    }

    /// Spatial average per channel: `[c, h, w] -> [c, 1, 1]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (c, h, w) = t.chw();
        let n = (h * w) as f64;
        let out = Tensor::from_fn(c, 1, 1, |ci, _, _| t.plane(ci).iter().sum::<f64>() / n);
        self.push(out, &[a], move |ctx| {
            let g = ctx.grad;
            vec![Some(Tensor::from_fn(c, h, w, |ci, _, _| g.data()[ci] / n))]
        })
    }

    // ---- structural ----

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let vals: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat_channels(&vals).expect("concat");
        let sizes: Vec<usize> = vals.iter().map(|t| t.channels()).collect();
        self.push(out, parts, move |ctx| {
            let mut c0 = 0;
            sizes
                .iter()
                .enumerate()
                .map(|(i, &c)| {
                    let r = ctx.need[i].then(|| ctx.grad.channel_slice(c0, c0 + c));
                    c0 += c;
                    r
                })
                .collect()
        })
    }

    pub fn slice_channels(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let t = self.value(a);
        let (c, h, w) = t.chw();
        let out = t.channel_slice(c0, c1);
        self.push(out, &[a], move |ctx| {
            let mut g = Tensor::zeros(&[c, h, w]);
            g.data_mut()[c0 * h * w..c1 * h * w].copy_from_slice(ctx.grad.data());
            vec![Some(g)]
        })
    }

    /// Splits `[k*c, h, w]` into `k` equal channel groups.
    pub fn chunk(&mut self, a: Var, k: usize) -> Vec<Var> {
        let c = self.value(a).channels();
        assert_eq!(c % k, 0, "cannot chunk {c} channels into {k}");
        let step = c / k;
        (0..k).map(|i| self.slice_channels(a, i * step, (i + 1) * step)).collect()
    }

    // ---- convolution ----

    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let (_, h, w) = self.value(x).chw();
        let (out, _) = conv::conv2d_forward(self.value(x), self.value(weight), bias.map(|b| self.value(b)), &spec);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        self.push(out, &parents, move |ctx| {
            let xp = conv::pad(ctx.inputs[0], spec.pad(), spec.padding);
            let need_b = ctx.need.get(2).copied().unwrap_or(false);
            let g = conv::conv2d_backward(ctx.grad, &xp, ctx.inputs[1], &spec, (h, w), (ctx.need[0], ctx.need[1], need_b));
            let mut r = vec![g.input, g.weight];
            if ctx.inputs.len() == 3 {
                r.push(g.bias);
            }
            r
        })
    }

    pub fn pad(&mut self, x: Var, p: usize, mode: Padding) -> Var {
        let (_, h, w) = self.value(x).chw();
        let out = conv::pad(self.value(x), p, mode);
        self.push(out, &[x], move |ctx| vec![Some(conv::unpad(ctx.grad, p, mode, h, w))])
    }

    // ---- transforms ----

    /// One Haar analysis level: `[c, h, w] -> [4c, h/2, w/2]` ordered
    /// `L, HL, LH, HH`.
    pub fn dwt(&mut self, x: Var) -> Var {
        let out = transforms::haar_forward_stacked(self.value(x));
        // The orthonormal Haar matrix is its own inverse transpose.
        self.push(out, &[x], |ctx| vec![Some(transforms::haar_inverse_stacked(ctx.grad))])
    }

    /// Inverse of [`Graph::dwt`]: `[4c, h, w] -> [c, 2h, 2w]`.
    pub fn idwt(&mut self, x: Var) -> Var {
        let out = transforms::haar_inverse_stacked(self.value(x));
        self.push(out, &[x], |ctx| vec![Some(transforms::haar_forward_stacked(ctx.grad))])
    }

    /// Unnormalised 2-D DFT of a real map: `[c, h, w] -> [2c, h, w]` holding
    /// real parts then imaginary parts.
    pub fn fft2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let out = transforms::fft2_real(self.value(x));
        self.push(out, &[x], move |ctx| {
            // d/dx of (Re, Im) of F x is Re(conj(F)^T g) = Re(N * ifft(g)).
            let (re, im) = split_complex(ctx.grad, c);
            let (r, _) = transforms::fft2_complex(&re, &im, true);
            let mut gx = r;
            gx.scale_inplace((h * w) as f64);
            vec![Some(gx)]
        })
    }

    /// Real part of the inverse DFT (with `1/(hw)` scaling) of a stacked
    /// `[2c, h, w]` spectrum.
    pub fn ifft2_real(&mut self, spectrum: Var) -> Var {
        let (c2, h, w) = self.value(spectrum).chw();
        let c = c2 / 2;
        let (re, im) = split_complex(self.value(spectrum), c);
        let (out, _) = transforms::fft2_complex(&re, &im, true);
        self.push(out, &[spectrum], move |ctx| {
            let zeros = Tensor::zeros(&[c, h, w]);
            let (mut gr, mut gi) = transforms::fft2_complex(ctx.grad, &zeros, false);
            let n = (h * w) as f64;
            gr.scale_inplace(1.0 / n);
            gi.scale_inplace(1.0 / n);
            vec![Some(Tensor::concat_channels(&[&gr, &gi]).expect("shape"))]
        })
    }

    /// `sqrt(a^2 + b^2)`; the subgradient at the origin is zero.
    pub fn hypot(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), f64::hypot);
        self.push(out, &[a, b], |ctx| {
            let (a, b, m) = (ctx.inputs[0], ctx.inputs[1], ctx.output);
            let n = m.len();
            let mut ga = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for i in 0..n {
                let mv = m.data()[i];
                if mv > 0.0 {
                    ga[i] = ctx.grad.data()[i] * a.data()[i] / mv;
                    gb[i] = ctx.grad.data()[i] * b.data()[i] / mv;
                }
            }
            vec![
                ctx.need[0].then(|| Tensor::new(m.shape(), ga).expect("shape")),
                ctx.need[1].then(|| Tensor::new(m.shape(), gb).expect("shape")),
            ]
        })
    }

    /// `atan2(im, re)` in `(-pi, pi]`.
    pub fn atan2(&mut self, im: Var, re: Var) -> Var {
        let out = self.value(im).zip_map(self.value(re), |y, x| {
            let a = y.atan2(x);
            if a == -PI { PI } else { a }
        });
        self.push(out, &[im, re], |ctx| {
            let (y, x) = (ctx.inputs[0], ctx.inputs[1]);
            let n = y.len();
            let mut gy = vec![0.0; n];
            let mut gx = vec![0.0; n];
            for i in 0..n {
                let (yv, xv) = (y.data()[i], x.data()[i]);
                let r2 = xv * xv + yv * yv;
                if r2 > 0.0 {
                    gy[i] = ctx.grad.data()[i] * xv / r2;
                    gx[i] = -ctx.grad.data()[i] * yv / r2;
                }
            }
            vec![
                ctx.need[0].then(|| Tensor::new(y.shape(), gy).expect("shape")),
                ctx.need[1].then(|| Tensor::new(y.shape(), gx).expect("shape")),
            ]
        })
    }

    /// `amplitude * exp(i phase)` stacked as `[2c, h, w]`.
    pub fn polar(&mut self, amplitude: Var, phase: Var) -> Var {
        let (a, p) = (self.value(amplitude), self.value(phase));
        let re = a.zip_map(p, |a, p| a * p.cos());
        let im = a.zip_map(p, |a, p| a * p.sin());
        let out = Tensor::concat_channels(&[&re, &im]).expect("shape");
        self.push(out, &[amplitude, phase], |ctx| {
            let (a, p) = (ctx.inputs[0], ctx.inputs[1]);
            let c = a.channels();
            let (gr, gi) = split_complex(ctx.grad, c);
            let n = a.len();
            let mut ga = vec![0.0; n];
            let mut gp = vec![0.0; n];
            for i in 0..n {
                let (av, pv) = (a.data()[i], p.data()[i]);
                let (s, co) = pv.sin_cos();
                let (r, m) = (gr.data()[i], gi.data()[i]);
                ga[i] = r * co + m * s;
                gp[i] = av * (m * co - r * s);
            }
            vec![
                ctx.need[0].then(|| Tensor::new(a.shape(), ga).expect("shape")),
                ctx.need[1].then(|| Tensor::new(a.shape(), gp).expect("shape")),
            ]
        })
    }

    /// Scaled dot-product attention over spatial tokens.
    ///
    /// `q`, `k` are `[d, h, w]` and `v` is `[dv, h, w]`; each of the `h*w`
    /// positions is a token. Returns `[dv, h, w]`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Var {
        let (d, h, w) = self.value(q).chw();
        let dv = self.value(v).channels();
        let scale = 1.0 / (d as f64).sqrt();
        let attn = attention_weights(self.value(q), self.value(k));
        let out = attention_apply(&attn, self.value(v), h, w);
        let n = h * w;
        self.push(out, &[q, k, v], move |ctx| {
            let (qt, kt, vt) = (ctx.inputs[0], ctx.inputs[1], ctx.inputs[2]);
            let g = ctx.grad;
            let attn = attention_weights(qt, kt);
            // dA[i][j] = sum_c g[c][i] v[c][j]
            let mut da = vec![0.0; n * n];
            for c in 0..dv {
                let gp = g.plane(c);
                let vp = vt.plane(c);
                for i in 0..n {
                    let gi = gp[i];
                    if gi == 0.0 {
                        continue;
                    }
                    let row = &mut da[i * n..(i + 1) * n];
                    for (r, &vj) in row.iter_mut().zip(vp) {
                        *r += gi * vj;
                    }
                }
            }
            let gv = ctx.need[2].then(|| {
                let mut gv = Tensor::zeros(&[dv, h, w]);
                for c in 0..dv {
                    let gp = g.plane(c);
                    let dst = gv.plane_mut(c);
                    for i in 0..n {
                        let gi = gp[i];
                        for (dj, &aij) in dst.iter_mut().zip(&attn[i * n..(i + 1) * n]) {
                            *dj += aij * gi;
                        }
                    }
                }
                gv
            });
            // Softmax Jacobian, then the 1/sqrt(d) logit scale.
            let mut dl = vec![0.0; n * n];
            for i in 0..n {
                let a = &attn[i * n..(i + 1) * n];
                let dai = &da[i * n..(i + 1) * n];
                let s: f64 = a.iter().zip(dai).map(|(x, y)| x * y).sum();
                for j in 0..n {
                    dl[i * n + j] = a[j] * (dai[j] - s) * scale;
                }
            }
            let gq = ctx.need[0].then(|| {
                let mut gq = Tensor::zeros(&[d, h, w]);
                for c in 0..d {
                    let kp = kt.plane(c);
                    let dst = gq.plane_mut(c);
                    for i in 0..n {
                        dst[i] = dl[i * n..(i + 1) * n].iter().zip(kp).map(|(x, y)| x * y).sum();
                    }
                }
                gq
            });
            let gk = ctx.need[1].then(|| {
                let mut gk = Tensor::zeros(&[d, h, w]);
                for c in 0..d {
                    let qp = qt.plane(c);
                    let dst = gk.plane_mut(c);
                    for i in 0..n {
                        let qi = qp[i];
                        for (dj, &l) in dst.iter_mut().zip(&dl[i * n..(i + 1) * n]) {
                            *dj += l * qi;
                        }
                    }
                }
                gk
            });
            vec![gq, gk, gv]
        })
    }

    /// Sobel gradient magnitude per channel with reflect padding.
    pub fn sobel(&mut self, x: Var) -> Var {
        let (c, h, w) = self.value(x).chw();
        let (gx, gy) = transforms::sobel_xy(self.value(x));
        let stacked = Tensor::concat_channels(&[&gx, &gy]).expect("matching shapes");
        let both = self.push(stacked, &[x], move |ctx| {
            let (kx, ky) = transforms::sobel_kernels(c);
            let spec = ConvSpec::depthwise(3, c).padding(Padding::Reflect);
            let xp = Tensor::zeros(&[c, h + 2, w + 2]);
            let adj = |g: &Tensor, k: &Tensor| {
                conv::conv2d_backward(g, &xp, k, &spec, (h, w), (true, false, false)).input.expect("input grad")
            };
            let (g0, g1) = split_complex(ctx.grad, c);
            let mut gi = adj(&g0, &kx);
            gi.add_assign(&adj(&g1, &ky));
            vec![Some(gi)]
        });
        let gx = self.slice_channels(both, 0, c);
        let gy = self.slice_channels(both, c, 2 * c);
        self.hypot(gx, gy)
    }
}

fn split_complex(t: &Tensor, c: usize) -> (Tensor, Tensor) {
    (t.channel_slice(0, c), t.channel_slice(c, 2 * c))
}

/// Row-stochastic attention matrix `softmax(q^T k / sqrt(d))`, `n x n`
/// row-major over tokens.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Vec<f64> {
    let (d, h, w) = q.chw();
    let n = h * w;
    let scale = 1.0 / (d as f64).sqrt();
    let mut logits = vec![0.0; n * n];
    for c in 0..d {
        let qp = q.plane(c);
        let kp = k.plane(c);
        for i in 0..n {
            let qi = qp[i] * scale;
            let row = &mut logits[i * n..(i + 1) * n];
            for (r, &kj) in row.iter_mut().zip(kp) {
                *r += qi * kj;
            }
        }
    }
    for i in 0..n {
        let row = &mut logits[i * n..(i + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for r in row.iter_mut() {
            *r = (*r - m).exp();
            s += *r;
        }
        for r in row.iter_mut() {
            *r /= s;
        }
    }
    logits
}

pub fn attention_apply(attn: &[f64], v: &Tensor, h: usize, w: usize) -> Tensor {
    let dv = v.channels();
    let n = h * w;
    let mut out = Tensor::zeros(&[dv, h, w]);
    for c in 0..dv {
        let vp = v.plane(c);
        let dst = out.plane_mut(c);
        for i in 0..n {
            dst[i] = attn[i * n..(i + 1) * n].iter().zip(vp).map(|(a, b)| a * b).sum();
        }
    }
    out
}
