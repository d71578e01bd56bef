//! Dense layers and a small SiLU MLP operating on invariant vectors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{join, ParamSet, Tensor};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Tensor,
    pub b: Option<Tensor>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, bias: bool, rng: &mut R) -> Self {
        Self {
            w: Tensor::uniform(&[n_out, n_in], n_in, rng),
            b: bias.then(|| Tensor::zeros(&[n_out])),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.cols()
    }

    pub fn n_out(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.w.matvec(x);
        if let Some(b) = &self.b {
            for (yi, bi) in y.iter_mut().zip(&b.data) {
                *yi += bi;
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`, returns the input cotangent.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Dense) -> Vec<f64> {
        grad.w.add_outer(gy, x, 1.0);
        if let Some(gb) = grad.b.as_mut() {
            for (a, b) in gb.data.iter_mut().zip(gy) {
                *a += b;
            }
        }
        self.w.matvec_t(gy)
    }
}

impl ParamSet for Dense {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
        if let Some(b) = &self.b {
            f(&join(prefix, "b"), b);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
        if let Some(b) = &mut self.b {
            f(&join(prefix, "b"), b);
        }
    }
}

/// Dense layers with SiLU between them and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Per-layer inputs and pre-activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// `n_in -> hidden -> ... -> n_out` with `hidden.len()` hidden layers.
    pub fn new<R: Rng + ?Sized>(n_in: usize, hidden: &[usize], n_out: usize, rng: &mut R) -> Self {
        let mut dims = vec![n_in];
        dims.extend_from_slice(hidden);
        dims.push(n_out);
        let layers = dims.windows(2).map(|d| Dense::new(d[0], d[1], true, rng)).collect();
        Self { layers }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("nonempty").n_out()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, MlpCache) {
        let mut cache = MlpCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            cache.inputs.push(h);
            h = if i < last { z.iter().map(|v| silu(*v)).collect() } else { z.clone() };
            cache.pre.push(z);
        }
        (h, cache)
    }

    pub fn backward(&self, cache: &MlpCache, gy: &[f64], grad: &mut Mlp) -> Vec<f64> {
        let last = self.layers.len() - 1;
        let mut g = gy.to_vec();
        for i in (0..self.layers.len()).rev() {
            if i < last {
                for (gi, zi) in g.iter_mut().zip(&cache.pre[i]) {
                    *gi *= silu_grad(*zi);
                }
            }
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i]);
        }
        g
    }

    /// Sets the final layer to zero so the output is identically zero.
    pub fn zero_output(&mut self) {
        let l = self.layers.last_mut().expect("nonempty");
        l.w.data.iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = &mut l.b {
            b.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

impl ParamSet for Mlp {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.layers.visit(prefix, f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.layers.visit_mut(prefix, f);
    }
}
