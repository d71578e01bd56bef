use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So2Features};
use crate::nn::{sigmoid, Mlp, MlpCache};
use crate::params::{join, ParamSet, Tensor};

/// Gate activation whose scalars come from every `m = 0` channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So2Gate {
    pub in_layout: IrrepsLayout,
    pub out0: usize,
    pub mlp: Mlp,
}

#[derive(Debug, Clone)]
pub struct GateCache {
    mlp: MlpCache,
    gates: Vec<f64>,
}

impl So2Gate {
    /// MLP with two hidden layers of width `hidden` (defaults to the `m = 0`
    /// channel count when `None`).
    pub fn init<R: Rng + ?Sized>(
        in_layout: &IrrepsLayout,
        out0: usize,
        hidden: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if in_layout.group() != Group::So2 {
            return Err(Error::LayoutMismatch(format!("{in_layout} is not an SO(2) layout")));
        }
        let c0 = in_layout.mult(0);
        if c0 == 0 {
            return Err(Error::LayoutMismatch("gate needs m = 0 channels".into()));
        }
        let n_gates: usize = in_layout.entries().iter().filter(|e| e.0 > 0).map(|e| e.1).sum();
        let h = hidden.unwrap_or(c0);
        let mut mlp = Mlp::new(c0, &[h, h], out0 + n_gates, rng);
        if let Some(b) = &mut mlp.layers.last_mut().expect("layers").b {
            b.data.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(Self {
            in_layout: in_layout.clone(),
            out0,
            mlp,
        })
    }

    pub fn out_layout(&self) -> IrrepsLayout {
        let mut entries: Vec<(usize, usize)> =
            self.in_layout.entries().iter().copied().filter(|e| e.0 > 0).collect();
        if self.out0 > 0 {
            entries.insert(0, (0, self.out0));
        }
        IrrepsLayout::new(Group::So2, entries).expect("valid layout")
    }

    fn check(&self, x: &So2Features) -> Result<()> {
        if x.layout() != &self.in_layout {
            return Err(Error::LayoutMismatch(format!(
                "gate expects {}, got {}",
                self.in_layout,
                x.layout()
            )));
        }
        let n_gates: usize = self.in_layout.entries().iter().filter(|e| e.0 > 0).map(|e| e.1).sum();
        if self.mlp.n_out() != self.out0 + n_gates || self.mlp.n_in() != self.in_layout.mult(0) {
            return Err(Error::ShapeMismatch("gate MLP width".into()));
        }
        Ok(())
    }

    pub fn forward_cached(&self, x: &So2Features) -> Result<(So2Features, GateCache)> {
        self.check(x)?;
        let (h, mlp_cache) = self.mlp.forward_cached(x.block(0));
        let mut out = So2Features::zeros(&self.out_layout())?;
        if self.out0 > 0 {
            out.block_mut(0).copy_from_slice(&h[..self.out0]);
        }
        let gates: Vec<f64> = h[self.out0..].iter().map(|v| sigmoid(*v)).collect();
        let mut k = 0;
        for &(m, mult) in self.in_layout.entries() {
            if m == 0 {
                continue;
            }
            let src = x.block(m);
            let dst = out.block_mut(m);
            for c in 0..mult {
                dst[2 * c] = gates[k] * src[2 * c];
                dst[2 * c + 1] = gates[k] * src[2 * c + 1];
                k += 1;
            }
        }
        Ok((out, GateCache { mlp: mlp_cache, gates }))
    }

    pub fn backward(
        &self,
        x: &So2Features,
        cache: &GateCache,
        gy: &So2Features,
        grad: &mut So2Gate,
    ) -> Result<So2Features> {
        let mut gx = So2Features::zeros(&self.in_layout)?;
        let mut gh = vec![0.0; self.mlp.n_out()];
        if self.out0 > 0 {
            gh[..self.out0].copy_from_slice(gy.block(0));
        }
        let mut k = 0;
        for &(m, mult) in self.in_layout.entries() {
            if m == 0 {
                continue;
            }
            let src = x.block(m);
            let g = gy.block(m);
            let dst = gx.block_mut(m);
            for c in 0..mult {
                let s = cache.gates[k];
                let dot = g[2 * c] * src[2 * c] + g[2 * c + 1] * src[2 * c + 1];
                gh[self.out0 + k] = dot * s * (1.0 - s);
                dst[2 * c] = s * g[2 * c];
                dst[2 * c + 1] = s * g[2 * c + 1];
                k += 1;
            }
        }
        let g0 = self.mlp.backward(&cache.mlp, &gh, &mut grad.mlp);
        gx.block_mut(0).copy_from_slice(&g0);
        Ok(gx)
    }
}

impl ParamSet for So2Gate {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mlp.visit(&join(prefix, "mlp"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mlp.visit_mut(&join(prefix, "mlp"), f);
    }
}

/// `m = 0` channels become the first `out0` MLP outputs; every `m > 0`
/// channel is scaled by the sigmoid of its own MLP output.
pub fn so2_gate(x: &So2Features, gate: &So2Gate) -> Result<So2Features> {
    Ok(gate.forward_cached(x)?.0)
}
