use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So3Features};
use crate::nn::{sigmoid, Dense, Mlp, MlpCache};
use crate::params::{join, ParamSet, Tensor};
use crate::so2::norm::{affine_for, norm_ln_backward, norm_ln_forward, visit_affine, visit_affine_mut, NormLnCache};
use crate::so2::{Affine, LN_EPS};

fn check_layout(expected: &IrrepsLayout, got: &IrrepsLayout, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::LayoutMismatch(format!("{what} expects {expected}, got {got}")));
    }
    Ok(())
}

/// Degree-diagonal channel mixing (self-interaction), with a bias on the
/// scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So3Linear {
    pub in_layout: IrrepsLayout,
    pub out_layout: IrrepsLayout,
    /// `(degree, [out_mult, in_mult])` for degrees present in both layouts.
    pub weights: Vec<(usize, Tensor)>,
    pub bias: Option<Tensor>,
}

impl So3Linear {
    pub fn init<R: Rng + ?Sized>(in_layout: &IrrepsLayout, out_layout: &IrrepsLayout, rng: &mut R) -> Self {
        let weights = out_layout
            .entries()
            .iter()
            .filter(|(l, _)| in_layout.contains(*l))
            .map(|&(l, cout)| {
                let cin = in_layout.mult(l);
                (l, Tensor::uniform(&[cout, cin], cin, rng))
            })
            .collect();
        let bias = out_layout.contains(0).then(|| Tensor::zeros(&[out_layout.mult(0)]));
        Self {
            in_layout: in_layout.clone(),
            out_layout: out_layout.clone(),
            weights,
            bias,
        }
    }

    pub fn forward(&self, x: &So3Features) -> Result<So3Features> {
        check_layout(&self.in_layout, x.layout(), "self-interaction")?;
        let mut y = So3Features::zeros(&self.out_layout)?;
        for (l, w) in &self.weights {
            let n = 2 * l + 1;
            let (cout, cin) = (w.rows(), w.cols());
            let src = x.block(*l);
            let dst = y.block_mut(*l);
            for o in 0..cout {
                for i in 0..cin {
                    let a = w.data[o * cin + i];
                    for k in 0..n {
                        dst[o * n + k] += a * src[i * n + k];
                    }
                }
            }
        }
        if let Some(b) = &self.bias {
            for (d, bv) in y.block_mut(0).iter_mut().zip(&b.data) {
                *d += bv;
            }
        }
        Ok(y)
    }

    pub fn backward(&self, x: &So3Features, gy: &So3Features, grad: &mut So3Linear) -> Result<So3Features> {
        let mut gx = So3Features::zeros(&self.in_layout)?;
        for ((l, w), (_, gw)) in self.weights.iter().zip(grad.weights.iter_mut()) {
            let n = 2 * l + 1;
            let (cout, cin) = (w.rows(), w.cols());
            let src = x.block(*l);
            let g = gy.block(*l);
            let dst = gx.block_mut(*l);
            for o in 0..cout {
                for i in 0..cin {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += g[o * n + k] * src[i * n + k];
                        dst[i * n + k] += w.data[o * cin + i] * g[o * n + k];
                    }
                    gw.data[o * cin + i] += acc;
                }
            }
        }
        if let Some(gb) = &mut grad.bias {
            for (a, b) in gb.data.iter_mut().zip(gy.block(0)) {
                *a += b;
            }
        }
        Ok(gx)
    }
}

impl ParamSet for So3Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, w) in &self.weights {
            f(&join(prefix, &format!("l{l}")), w);
        }
        if let Some(b) = &self.bias {
            f(&join(prefix, "b"), b);
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, w) in &mut self.weights {
            f(&join(prefix, &format!("l{l}")), w);
        }
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "b"), b);
        }
    }
}

/// Gate on SO(3) features: an MLP of the degree-0 channels produces new
/// scalars and one sigmoid gate per channel of every higher degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So3Gate {
    pub layout: IrrepsLayout,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct So3GateCache {
    mlp: MlpCache,
    gates: Vec<f64>,
}

impl So3Gate {
    pub fn init<R: Rng + ?Sized>(layout: &IrrepsLayout, hidden: Option<usize>, rng: &mut R) -> Result<Self> {
        let c0 = layout.mult(0);
        if c0 == 0 {
            return Err(Error::LayoutMismatch("gate needs degree-0 channels".into()));
        }
        let n_gates: usize = layout.entries().iter().filter(|e| e.0 > 0).map(|e| e.1).sum();
        let h = hidden.unwrap_or(c0);
        let mut mlp = Mlp::new(c0, &[h, h], c0 + n_gates, rng);
        if let Some(b) = &mut mlp.layers.last_mut().expect("layers").b {
            b.data.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(Self {
            layout: layout.clone(),
            mlp,
        })
    }

    pub fn forward_cached(&self, x: &So3Features) -> Result<(So3Features, So3GateCache)> {
        check_layout(&self.layout, x.layout(), "gate")?;
        let c0 = self.layout.mult(0);
        let (h, mlp) = self.mlp.forward_cached(x.block(0));
        let mut y = So3Features::zeros(&self.layout)?;
        y.block_mut(0).copy_from_slice(&h[..c0]);
        let gates: Vec<f64> = h[c0..].iter().map(|v| sigmoid(*v)).collect();
        let mut k = 0;
        for (l, mult, _) in self.layout.blocks().filter(|b| b.0 > 0) {
            let n = 2 * l + 1;
            let src = x.block(l);
            let dst = y.block_mut(l);
            for c in 0..mult {
                for q in 0..n {
                    dst[c * n + q] = gates[k] * src[c * n + q];
                }
                k += 1;
            }
        }
        Ok((y, So3GateCache { mlp, gates }))
    }

    pub fn forward(&self, x: &So3Features) -> Result<So3Features> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, x: &So3Features, cache: &So3GateCache, gy: &So3Features, grad: &mut So3Gate) -> Result<So3Features> {
        let c0 = self.layout.mult(0);
        let mut gx = So3Features::zeros(&self.layout)?;
        let mut gh = vec![0.0; self.mlp.n_out()];
        gh[..c0].copy_from_slice(gy.block(0));
        let mut k = 0;
        for (l, mult, _) in self.layout.blocks().filter(|b| b.0 > 0) {
            let n = 2 * l + 1;
            let src = x.block(l);
            let g = gy.block(l);
            let dst = gx.block_mut(l);
            for c in 0..mult {
                let s = cache.gates[k];
                let mut dot = 0.0;
                for q in 0..n {
                    dot += g[c * n + q] * src[c * n + q];
                    dst[c * n + q] = s * g[c * n + q];
                }
                gh[c0 + k] = dot * s * (1.0 - s);
                k += 1;
            }
        }
        let g0 = self.mlp.backward(&cache.mlp, &gh, &mut grad.mlp);
        gx.block_mut(0).copy_from_slice(&g0);
        Ok(gx)
    }
}

impl ParamSet for So3Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mlp.visit(&join(prefix, "mlp"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

/// Norm-based layer norm per degree; degree 0 is the standard layer norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So3LayerNorm {
    pub layout: IrrepsLayout,
    pub degrees: Vec<Affine>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct So3LnCache {
    caches: Vec<NormLnCache>,
}

impl So3LayerNorm {
    pub fn new(layout: &IrrepsLayout) -> Self {
        Self {
            layout: layout.clone(),
            degrees: affine_for(layout),
            eps: LN_EPS,
        }
    }

    pub fn forward_cached(&self, x: &So3Features) -> Result<(So3Features, So3LnCache)> {
        check_layout(&self.layout, x.layout(), "layer norm")?;
        let mut y = So3Features::zeros(&self.layout)?;
        let mut caches = Vec::with_capacity(self.degrees.len());
        for aff in &self.degrees {
            let l = aff.index;
            let (out, c) = norm_ln_forward(x.block(l), 2 * l + 1, aff, self.eps);
            y.block_mut(l).copy_from_slice(&out);
            caches.push(c);
        }
        Ok((y, So3LnCache { caches }))
    }

    pub fn forward(&self, x: &So3Features) -> Result<So3Features> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn backward(&self, x: &So3Features, cache: &So3LnCache, gy: &So3Features, grad: &mut So3LayerNorm) -> Result<So3Features> {
        let mut gx = So3Features::zeros(&self.layout)?;
        for ((aff, c), gaff) in self.degrees.iter().zip(&cache.caches).zip(grad.degrees.iter_mut()) {
            let l = aff.index;
            let g = norm_ln_backward(x.block(l), c, aff, gy.block(l), gaff, self.eps);
            gx.block_mut(l).copy_from_slice(&g);
        }
        Ok(gx)
    }
}

impl ParamSet for So3LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_affine(&self.degrees, prefix, "l", f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_affine_mut(&mut self.degrees, prefix, "l", f);
    }
}

pub fn equivariant_layernorm_so3(x: &So3Features, ln: &So3LayerNorm) -> Result<So3Features> {
    ln.forward(x)
}

/// One learned row of degree-0 channels per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub elements: Vec<u32>,
    pub table: Tensor,
}

impl Embedding {
    pub fn init<R: Rng + ?Sized>(elements: &[u32], width: usize, rng: &mut R) -> Self {
        Self {
            elements: elements.to_vec(),
            table: Tensor::uniform(&[elements.len(), width], width, rng),
        }
    }

    pub fn row(&self, z: u32) -> Result<usize> {
        self.elements.iter().position(|&e| e == z).ok_or(Error::UnknownElement(z))
    }

    /// Features in `layout` with only the degree-0 block filled.
    pub fn node_embed(&self, z: u32, layout: &IrrepsLayout) -> Result<So3Features> {
        let r = self.row(z)?;
        let w = self.table.cols();
        if layout.mult(0) != w {
            return Err(Error::LayoutMismatch(format!(
                "embedding width {w} does not match {} scalars",
                layout.mult(0)
            )));
        }
        let mut h = So3Features::zeros(layout)?;
        h.block_mut(0).copy_from_slice(&self.table.data[r * w..(r + 1) * w]);
        Ok(h)
    }

    pub fn backward(&self, z: u32, gh: &So3Features, grad: &mut Embedding) -> Result<()> {
        let r = self.row(z)?;
        let w = self.table.cols();
        for (a, b) in grad.table.data[r * w..(r + 1) * w].iter_mut().zip(gh.block(0)) {
            *a += b;
        }
        Ok(())
    }
}

impl ParamSet for Embedding {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "table"), &self.table);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "table"), &mut self.table);
    }
}

/// Gaussian radial basis, centers `cutoff (k + 1) / K`, width `cutoff / K`,
/// times the envelope `(cos(pi r / cutoff) + 1) / 2`.
pub fn rbf(r: f64, cutoff: f64, k: usize) -> Result<Vec<f64>> {
    if !(r > 0.0 && r <= cutoff) {
        return Err(Error::DistanceOutOfRange(r));
    }
    let width = cutoff / k as f64;
    let env = 0.5 * ((PI * r / cutoff).cos() + 1.0);
    Ok((0..k)
        .map(|i| {
            let c = cutoff * (i + 1) as f64 / k as f64;
            let t = (r - c) / width;
            env * (-t * t).exp()
        })
        .collect())
}

/// Per-degree channel-wise inner products, degrees ascending.
pub fn degree_inner_products(hi: &So3Features, hj: &So3Features) -> Result<Vec<f64>> {
    check_layout(hi.layout(), hj.layout(), "inner product")?;
    let mut out = Vec::with_capacity(hi.layout().num_channels());
    for (l, mult, _) in hi.layout().blocks() {
        let n = 2 * l + 1;
        let (a, b) = (hi.block(l), hj.block(l));
        for c in 0..mult {
            out.push((0..n).map(|q| a[c * n + q] * b[c * n + q]).sum());
        }
    }
    Ok(out)
}

/// Accumulates the VJP of [`degree_inner_products`] into `gi` and `gj`.
pub fn degree_inner_products_vjp(hi: &So3Features, hj: &So3Features, gs: &[f64], gi: &mut So3Features, gj: &mut So3Features) {
    let mut k = 0;
    for (l, mult, _) in hi.layout().blocks() {
        let n = 2 * l + 1;
        let (a, b) = (hi.block(l), hj.block(l));
        let ga = gi.block_mut(l);
        for c in 0..mult {
            for q in 0..n {
                ga[c * n + q] += gs[k + c] * b[c * n + q];
            }
        }
        let gb = gj.block_mut(l);
        for c in 0..mult {
            for q in 0..n {
                gb[c * n + q] += gs[k + c] * a[c * n + q];
            }
        }
        k += mult;
    }
}

/// `MLP(Linear(s) * Linear(rbf))`, element-wise product of two projections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEmbed {
    pub lin_s: Dense,
    pub lin_r: Dense,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct PairEmbedCache {
    ps: Vec<f64>,
    pr: Vec<f64>,
    mlp: MlpCache,
}

impl PairEmbed {
    pub fn init<R: Rng + ?Sized>(n_s: usize, n_r: usize, width: usize, n_out: usize, rng: &mut R) -> Self {
        Self {
            lin_s: Dense::new(n_s, width, true, rng),
            lin_r: Dense::new(n_r, width, true, rng),
            mlp: Mlp::new(width, &[width], n_out, rng),
        }
    }

    pub fn forward_cached(&self, s: &[f64], rb: &[f64]) -> (Vec<f64>, PairEmbedCache) {
        let ps = self.lin_s.forward(s);
        let pr = self.lin_r.forward(rb);
        let q: Vec<f64> = ps.iter().zip(&pr).map(|(a, b)| a * b).collect();
        let (y, mlp) = self.mlp.forward_cached(&q);
        (y, PairEmbedCache { ps, pr, mlp })
    }

    pub fn forward(&self, s: &[f64], rb: &[f64]) -> Vec<f64> {
        self.forward_cached(s, rb).0
    }

    /// Returns the cotangent of `s`; the radial input is treated as data.
    pub fn backward(&self, s: &[f64], rb: &[f64], cache: &PairEmbedCache, gy: &[f64], grad: &mut PairEmbed) -> Vec<f64> {
        let gq = self.mlp.backward(&cache.mlp, gy, &mut grad.mlp);
        let gps: Vec<f64> = gq.iter().zip(&cache.pr).map(|(g, b)| g * b).collect();
        let gpr: Vec<f64> = gq.iter().zip(&cache.ps).map(|(g, a)| g * a).collect();
        self.lin_r.backward(rb, &gpr, &mut grad.lin_r);
        self.lin_s.backward(s, &gps, &mut grad.lin_s)
    }
}

impl ParamSet for PairEmbed {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.lin_s.visit(&join(prefix, "lin_s"), f);
        self.lin_r.visit(&join(prefix, "lin_r"), f);
        self.mlp.visit(&join(prefix, "mlp"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.lin_s.visit_mut(&join(prefix, "lin_s"), f);
        self.lin_r.visit_mut(&join(prefix, "lin_r"), f);
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

/// SO(3) layout with `mults[l]` channels at degree `l` (the last entry
/// repeats for higher degrees).
pub fn tapered_layout(l_max: usize, mults: &[usize]) -> IrrepsLayout {
    let entries = (0..=l_max)
        .map(|l| (l, mults[l.min(mults.len() - 1)]))
        .collect();
    IrrepsLayout::new(Group::So3, entries).expect("valid layout")
}
