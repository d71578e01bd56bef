use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gate::{GateCache, So2Gate};
use super::linear::{so2_linear, so2_linear_vjp, So2LinearWeights};
use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So2Features};
use crate::params::{join, ParamSet, Tensor};

/// Per-order channel concatenation `a || b`.
pub fn concat_channels(a: &So2Features, b: &So2Features) -> Result<So2Features> {
    if a.layout() != b.layout() {
        return Err(Error::LayoutMismatch(format!("{} vs {}", a.layout(), b.layout())));
    }
    let entries = a.layout().entries().iter().map(|&(m, c)| (m, 2 * c)).collect();
    let layout = IrrepsLayout::new(Group::So2, entries)?;
    let mut out = So2Features::zeros(&layout)?;
    for &(m, _) in a.layout().entries() {
        let (xa, xb) = (a.block(m), b.block(m));
        let dst = out.block_mut(m);
        dst[..xa.len()].copy_from_slice(xa);
        dst[xa.len()..].copy_from_slice(xb);
    }
    Ok(out)
}

/// Inverse of [`concat_channels`] (and its VJP).
pub fn split_channels(x: &So2Features, half: &IrrepsLayout) -> Result<(So2Features, So2Features)> {
    let mut a = So2Features::zeros(half)?;
    let mut b = So2Features::zeros(half)?;
    for &(m, _) in half.entries() {
        let src = x.block(m);
        let n = a.block(m).len();
        a.block_mut(m).copy_from_slice(&src[..n]);
        b.block_mut(m).copy_from_slice(&src[n..]);
    }
    Ok((a, b))
}

/// `Linear(Gate(Linear(m_i || m_j)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So2Ffn {
    pub layout: IrrepsLayout,
    pub lin1: So2LinearWeights,
    pub gate: So2Gate,
    pub lin2: So2LinearWeights,
}

#[derive(Debug, Clone)]
pub struct FfnCache {
    cat: So2Features,
    h1: So2Features,
    gate: GateCache,
    h2: So2Features,
}

impl So2Ffn {
    pub fn init<R: Rng + ?Sized>(
        layout: &IrrepsLayout,
        hidden: &IrrepsLayout,
        gate_width: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let cat_layout = IrrepsLayout::new(
            Group::So2,
            layout.entries().iter().map(|&(m, c)| (m, 2 * c)).collect(),
        )?;
        let lin1 = So2LinearWeights::init(&cat_layout, hidden, rng)?;
        let gate = So2Gate::init(hidden, hidden.mult(0), gate_width, rng)?;
        let lin2 = So2LinearWeights::init(&gate.out_layout(), layout, rng)?;
        Ok(Self {
            layout: layout.clone(),
            lin1,
            gate,
            lin2,
        })
    }

    pub fn forward_cached(&self, mi: &So2Features, mj: &So2Features) -> Result<(So2Features, FfnCache)> {
        if mi.layout() != &self.layout {
            return Err(Error::LayoutMismatch(format!("ffn expects {}, got {}", self.layout, mi.layout())));
        }
        let cat = concat_channels(mi, mj)?;
        let h1 = so2_linear(&cat, &self.lin1)?;
        let (h2, gate) = self.gate.forward_cached(&h1)?;
        let y = so2_linear(&h2, &self.lin2)?;
        Ok((y, FfnCache { cat, h1, gate, h2 }))
    }

    pub fn backward(&self, cache: &FfnCache, gy: &So2Features, grad: &mut So2Ffn) -> Result<(So2Features, So2Features)> {
        let g2 = so2_linear_vjp(&cache.h2, &self.lin2, gy, &mut grad.lin2)?;
        let g1 = self.gate.backward(&cache.h1, &cache.gate, &g2, &mut grad.gate)?;
        let gc = so2_linear_vjp(&cache.cat, &self.lin1, &g1, &mut grad.lin1)?;
        split_channels(&gc, &self.layout)
    }
}

impl ParamSet for So2Ffn {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.lin1.visit(&join(prefix, "lin1"), f);
        self.gate.visit(&join(prefix, "gate"), f);
        self.lin2.visit(&join(prefix, "lin2"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.lin1.visit_mut(&join(prefix, "lin1"), f);
        self.gate.visit_mut(&join(prefix, "gate"), f);
        self.lin2.visit_mut(&join(prefix, "lin2"), f);
    }
}

pub fn so2_ffn(mi: &So2Features, mj: &So2Features, params: &So2Ffn) -> Result<So2Features> {
    Ok(params.forward_cached(mi, mj)?.0)
}
