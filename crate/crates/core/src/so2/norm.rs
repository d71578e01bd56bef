use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irreps::{IrrepsLayout, So2Features};
use crate::params::{join, ParamSet, Tensor};

pub const LN_EPS: f64 = 1e-8;

/// Per-index affine parameters of a norm-based layer norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub index: usize,
    pub g: Tensor,
    pub b: Tensor,
}

pub(crate) fn affine_for(layout: &IrrepsLayout) -> Vec<Affine> {
    layout
        .entries()
        .iter()
        .map(|&(i, mult)| Affine {
            index: i,
            g: Tensor::filled(&[mult], 1.0),
            b: Tensor::zeros(&[mult]),
        })
        .collect()
}

pub(crate) fn visit_affine(a: &[Affine], prefix: &str, tag: &str, f: &mut dyn FnMut(&str, &Tensor)) {
    for x in a {
        let p = join(prefix, &format!("{tag}{}", x.index));
        f(&join(&p, "g"), &x.g);
        f(&join(&p, "b"), &x.b);
    }
}

pub(crate) fn visit_affine_mut(a: &mut [Affine], prefix: &str, tag: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
    for x in a {
        let p = join(prefix, &format!("{tag}{}", x.index));
        f(&join(&p, "g"), &mut x.g);
        f(&join(&p, "b"), &mut x.b);
    }
}

/// Standardization of a set of values across channels, recorded for the VJP.
#[derive(Debug, Clone)]
pub(crate) struct Standardized {
    pub z: Vec<f64>,
    sigma: f64,
    clamped: bool,
}

/// `z = (v - mean) / max(std, eps)` with the population standard deviation.
pub(crate) fn standardize(v: &[f64], eps: f64) -> Standardized {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
    let s = var.sqrt();
    let (sigma, clamped) = if s > eps { (s, false) } else { (eps, true) };
    Standardized {
        z: v.iter().map(|x| (x - mu) / sigma).collect(),
        sigma,
        clamped,
    }
}

pub(crate) fn standardize_vjp(st: &Standardized, gz: &[f64]) -> Vec<f64> {
    let n = gz.len() as f64;
    let mean_g = gz.iter().sum::<f64>() / n;
    if st.clamped {
        return gz.iter().map(|g| (g - mean_g) / st.sigma).collect();
    }
    let mean_gz = gz.iter().zip(&st.z).map(|(g, z)| g * z).sum::<f64>() / n;
    gz.iter()
        .zip(&st.z)
        .map(|(g, z)| (g - mean_g - z * mean_gz) / st.sigma)
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct NormLnCache {
    width: usize,
    norms: Vec<f64>,
    st: Standardized,
    a: Vec<f64>,
}

/// Layer norm over `mult` channels of `width`-dim vectors stored
/// contiguously. Width 1 is the standard layer norm; larger widths keep
/// each channel's direction and replace its norm with the standardized,
/// affinely transformed norm.
pub(crate) fn norm_ln_forward(x: &[f64], width: usize, aff: &Affine, eps: f64) -> (Vec<f64>, NormLnCache) {
    let mult = x.len() / width;
    let mut y = vec![0.0; x.len()];
    if width == 1 {
        let st = standardize(x, eps);
        let a: Vec<f64> = (0..mult).map(|c| aff.g.data[c] * st.z[c] + aff.b.data[c]).collect();
        y.copy_from_slice(&a);
        return (
            y,
            NormLnCache {
                width,
                norms: Vec::new(),
                st,
                a,
            },
        );
    }
    let norms: Vec<f64> = (0..mult)
        .map(|c| x[c * width..(c + 1) * width].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let st = standardize(&norms, eps);
    let mut a = Vec::with_capacity(mult);
    for c in 0..mult {
        let ac = aff.g.data[c] * st.z[c] + aff.b.data[c];
        let nd = norms[c].max(eps);
        for k in 0..width {
            y[c * width + k] = ac * x[c * width + k] / nd;
        }
        a.push(ac);
    }
    (y, NormLnCache { width, norms, st, a })
}

pub(crate) fn norm_ln_backward(
    x: &[f64],
    cache: &NormLnCache,
    aff: &Affine,
    gy: &[f64],
    grad: &mut Affine,
    eps: f64,
) -> Vec<f64> {
    let width = cache.width;
    let mult = x.len() / width;
    if width == 1 {
        let mut gz = vec![0.0; mult];
        for c in 0..mult {
            grad.g.data[c] += gy[c] * cache.st.z[c];
            grad.b.data[c] += gy[c];
            gz[c] = gy[c] * aff.g.data[c];
        }
        return standardize_vjp(&cache.st, &gz);
    }
    let mut gx = vec![0.0; x.len()];
    let mut gz = vec![0.0; mult];
    for c in 0..mult {
        let xc = &x[c * width..(c + 1) * width];
        let gc = &gy[c * width..(c + 1) * width];
        let nd = cache.norms[c].max(eps);
        let ga: f64 = xc.iter().zip(gc).map(|(a, b)| a * b).sum::<f64>() / nd;
        grad.g.data[c] += ga * cache.st.z[c];
        grad.b.data[c] += ga;
        gz[c] = ga * aff.g.data[c];
        // through the direction u = x / max(|x|, eps)
        let ac = cache.a[c];
        if cache.norms[c] > eps {
            let u_dot: f64 = ga;
            for k in 0..width {
                let u = xc[k] / nd;
                gx[c * width + k] = ac * (gc[k] - u * u_dot) / nd;
            }
        } else {
            for k in 0..width {
                gx[c * width + k] = ac * gc[k] / eps;
            }
        }
    }
    let gn = standardize_vjp(&cache.st, &gz);
    for c in 0..mult {
        let n = cache.norms[c];
        if n > 0.0 {
            for k in 0..width {
                gx[c * width + k] += gn[c] * x[c * width + k] / n;
            }
        }
    }
    gx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So2LayerNorm {
    pub layout: IrrepsLayout,
    pub orders: Vec<Affine>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct So2LnCache {
    caches: Vec<NormLnCache>,
}

impl So2LayerNorm {
    /// `g = 1`, `b = 0`.
    pub fn new(layout: &IrrepsLayout) -> Self {
        Self {
            layout: layout.clone(),
            orders: affine_for(layout),
            eps: LN_EPS,
        }
    }

    pub fn forward_cached(&self, x: &So2Features) -> Result<(So2Features, So2LnCache)> {
        if x.layout() != &self.layout {
            return Err(Error::LayoutMismatch(format!(
                "layer norm expects {}, got {}",
                self.layout,
                x.layout()
            )));
        }
        let mut out = So2Features::zeros(&self.layout)?;
        let mut caches = Vec::with_capacity(self.orders.len());
        for aff in &self.orders {
            let m = aff.index;
            let width = if m == 0 { 1 } else { 2 };
            let (y, c) = norm_ln_forward(x.block(m), width, aff, self.eps);
            out.block_mut(m).copy_from_slice(&y);
            caches.push(c);
        }
        Ok((out, So2LnCache { caches }))
    }

    pub fn backward(
        &self,
        x: &So2Features,
        cache: &So2LnCache,
        gy: &So2Features,
        grad: &mut So2LayerNorm,
    ) -> Result<So2Features> {
        let mut gx = So2Features::zeros(&self.layout)?;
        for ((aff, c), gaff) in self.orders.iter().zip(&cache.caches).zip(grad.orders.iter_mut()) {
            let m = aff.index;
            let g = norm_ln_backward(x.block(m), c, aff, gy.block(m), gaff, self.eps);
            gx.block_mut(m).copy_from_slice(&g);
        }
        Ok(gx)
    }
}

impl ParamSet for So2LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        visit_affine(&self.orders, prefix, "m", f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        visit_affine_mut(&mut self.orders, prefix, "m", f);
    }
}

/// Standard layer norm at `m = 0`; norm-based layer norm at `m > 0`.
pub fn so2_layernorm(x: &So2Features, ln: &So2LayerNorm) -> Result<So2Features> {
    Ok(ln.forward_cached(x)?.0)
}
