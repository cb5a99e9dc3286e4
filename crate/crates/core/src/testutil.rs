//! Helpers shared by unit tests.

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub fn sample(c: usize, h: usize, w: usize, seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut s = seed ^ 0x2545_F491_4F6C_DD1D;
    Tensor::from_fn(c, h, w, |_, _, _| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        lo + (hi - lo) * ((s >> 11) as f64 / (1u64 << 53) as f64)
    })
}

/// Scalar objective: mean of `y` weighted by a fixed random field.
pub fn weighted_mean(g: &mut Graph, y: Var, seed: u64) -> Var {
    let s = g.value(y).shape().to_vec();
    let w = g.constant(sample(s[0], s[1], s[2], seed, -1.0, 1.0));
    let p = g.mul(y, w);
    g.mean(p)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients over every entry of `ids`.
pub fn param_grad_error(store: &mut ParamStore, ids: &[ParamId], build: impl Fn(&mut Graph) -> Var) -> f64 {
    let analytic: Vec<Tensor> = {
        let mut g = Graph::new(store);
        let y = build(&mut g);
        let gr = g.backward(y);
        ids.iter().map(|&id| gr.param(id).cloned().unwrap_or_else(|| Tensor::zeros(store.get(id).shape()))).collect()
    };
    let eval = |store: &ParamStore| {
        let mut g = Graph::inference(store);
        let y = build(&mut g);
        g.value(y).data()[0]
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, &id) in ids.iter().enumerate() {
        for j in 0..store.get(id).len() {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(store);
            store.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(store);
            store.get_mut(id).data_mut()[j] = orig;
            let num = (up - down) / (2.0 * h);
            let an = analytic[k].data()[j];
            worst = worst.max((num - an).abs() / (1e-6 + num.abs().max(an.abs())));
        }
    }
    worst
}
