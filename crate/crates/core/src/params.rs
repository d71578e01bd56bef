//! Named parameter tensors, traversal, and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape");
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    /// Centered uniform with variance `1 / fan_in` (half-width `sqrt(3 / fan_in)`).
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let a = (3.0 / fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        Self::from_vec(shape, (0..n).map(|_| rng.gen_range(-a..a)).collect())
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![v; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// `W x` for a 2-D tensor.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        debug_assert_eq!(x.len(), c);
        (0..r)
            .map(|i| self.data[i * c..(i + 1) * c].iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `W^T g` for a 2-D tensor.
    pub fn matvec_t(&self, g: &[f64]) -> Vec<f64> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; c];
        for i in 0..r {
            let gi = g[i];
            if gi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(&self.data[i * c..(i + 1) * c]) {
                *o += w * gi;
            }
        }
        out
    }

    /// `self += g x^T`.
    pub fn add_outer(&mut self, g: &[f64], x: &[f64], scale: f64) {
        let c = self.cols();
        for (i, gi) in g.iter().enumerate() {
            let s = gi * scale;
            if s == 0.0 {
                continue;
            }
            for (w, xj) in self.data[i * c..(i + 1) * c].iter_mut().zip(x) {
                *w += s * xj;
            }
        }
    }
}

/// A structured parameter container that can be walked in a fixed order.
pub trait ParamSet {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamSet for Tensor {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(prefix, self);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(prefix, self);
    }
}

impl<T: ParamSet> ParamSet for Vec<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl<T: ParamSet> ParamSet for Option<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        if let Some(p) = self {
            p.visit(prefix, f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        if let Some(p) = self {
            p.visit_mut(prefix, f);
        }
    }
}

impl<T: ParamSet> ParamSet for BTreeMap<String, T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, p) in self {
            p.visit(&join(prefix, k), f);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (k, p) in self.iter_mut() {
            p.visit_mut(&join(prefix, k), f);
        }
    }
}

pub fn zeros_like<P: ParamSet + Clone>(p: &P) -> P {
    let mut z = p.clone();
    z.visit_mut("", &mut |_, t| t.data.iter_mut().for_each(|v| *v = 0.0));
    z
}

pub fn num_params<P: ParamSet>(p: &P) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, t| n += t.len());
    n
}

pub fn flatten<P: ParamSet>(p: &P) -> Vec<f64> {
    let mut out = Vec::new();
    p.visit("", &mut |_, t| out.extend_from_slice(&t.data));
    out
}

pub fn unflatten<P: ParamSet>(p: &mut P, flat: &[f64]) -> Result<()> {
    if flat.len() != num_params(p) {
        return Err(Error::ShapeMismatch(format!(
            "flat vector has {} entries, parameters have {}",
            flat.len(),
            num_params(p)
        )));
    }
    let mut off = 0;
    p.visit_mut("", &mut |_, t| {
        let n = t.len();
        t.data.copy_from_slice(&flat[off..off + n]);
        off += n;
    });
    Ok(())
}

pub fn named<P: ParamSet>(p: &P) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    p.visit("", &mut |name, t| {
        out.insert(name.to_string(), t.clone());
    });
    out
}

/// Overwrites every tensor of `p` from `map`; shapes must agree.
pub fn load_named<P: ParamSet>(p: &mut P, map: &BTreeMap<String, Tensor>) -> Result<()> {
    let mut err = None;
    p.visit_mut("", &mut |name, t| {
        if err.is_some() {
            return;
        }
        match map.get(name) {
            Some(src) if src.shape == t.shape && src.data.len() == t.data.len() => {
                t.data.copy_from_slice(&src.data)
            }
            Some(src) => {
                err = Some(Error::Checkpoint(format!(
                    "{name}: shape {:?} does not match {:?}",
                    src.shape, t.shape
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing parameter {name}"))),
        }
    });
    err.map_or(Ok(()), Err)
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        let g = flatten(grads);
        if self.m.len() != g.len() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut i = 0;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        params.visit_mut("", &mut |_, t| {
            for p in t.data.iter_mut() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
                i += 1;
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip_and_names() {
        let mut p: BTreeMap<String, Tensor> = BTreeMap::new();
        p.insert("b".into(), Tensor::from_vec(&[2], vec![1.0, 2.0]));
        p.insert("a".into(), Tensor::from_vec(&[1, 2], vec![3.0, 4.0]));
        assert_eq!(flatten(&p), vec![3.0, 4.0, 1.0, 2.0]);
        let mut q = zeros_like(&p);
        unflatten(&mut q, &flatten(&p)).unwrap();
        assert_eq!(p, q);
        let names: Vec<_> = named(&p).into_keys().collect();
        assert_eq!(names, vec!["a", "b"]);
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut p = Tensor::from_vec(&[2], vec![3.0, -2.0]);
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let g = Tensor::from_vec(&[2], p.data.iter().map(|x| 2.0 * x).collect());
            opt.step(&mut p, &g);
        }
        assert!(p.data.iter().all(|x| x.abs() < 1e-2));
    }
}
