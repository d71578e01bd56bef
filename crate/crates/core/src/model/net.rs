use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Geometry, MoleculeGraph};
use super::layers::*;
use crate::error::{Error, Result};
use crate::frame::{from_local, from_local_vjp, to_local, to_local_vjp};
use crate::irreps::{Group, IrrepsLayout, So2Features, So3Features};
use crate::params::{join, ParamSet, Tensor};
use crate::so2::*;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Node features (SO(3)); the pair track uses its local layout.
    pub hidden: IrrepsLayout,
    /// Hidden layout of the off-diagonal feed-forward (SO(2)); defaults to
    /// the local layout of `hidden`.
    #[serde(default)]
    pub ffn_hidden: Option<IrrepsLayout>,
    pub m_max: usize,
    pub v: usize,
    pub tp_channels: usize,
    pub layers: usize,
    /// Bohr.
    pub cutoff: f64,
    pub rbf_k: usize,
    pub pair_width: usize,
    pub elements: Vec<u32>,
    /// Orbital degrees per element, in matrix order.
    pub basis: BTreeMap<u32, Vec<usize>>,
    pub seed: u64,
}

pub fn default_basis() -> BTreeMap<u32, Vec<usize>> {
    let mut b = BTreeMap::new();
    b.insert(1, vec![0, 0, 1]);
    for z in [6, 7, 8, 9] {
        b.insert(z, vec![0, 0, 0, 1, 1, 2]);
    }
    b
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: IrrepsLayout::parse("8x0e+8x1e+4x2e+4x3e+2x4e").expect("valid"),
            ffn_hidden: None,
            m_max: 4,
            v: 3,
            tp_channels: 4,
            layers: 3,
            cutoff: 15.0,
            rbf_k: 32,
            pair_width: 16,
            elements: vec![1, 6, 7, 8, 9],
            basis: default_basis(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Default widths with the hidden degrees truncated or extended to `l_max`.
    pub fn with_lmax(mut self, l_max: usize) -> Self {
        self.hidden = tapered_layout(l_max, &[8, 8, 4, 4, 2]);
        self.m_max = self.m_max.min(l_max);
        self
    }

    pub fn local_layout(&self) -> Result<IrrepsLayout> {
        self.hidden.to_local_layout()
    }

    pub fn ffn_layout(&self) -> Result<IrrepsLayout> {
        match &self.ffn_hidden {
            Some(l) => Ok(l.clone()),
            None => self.local_layout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.group() != Group::So3 || self.hidden.mult(0) == 0 {
            return Err(Error::LayoutMismatch(format!(
                "hidden layout {} needs degree-0 channels",
                self.hidden
            )));
        }
        if let Some(f) = &self.ffn_hidden {
            if f.group() != Group::So2 || f.mult(0) == 0 {
                return Err(Error::LayoutMismatch(format!("ffn layout {f} needs m = 0 channels")));
            }
        }
        if self.v < 2 || self.layers == 0 || self.tp_channels == 0 || self.rbf_k == 0 || self.pair_width == 0 {
            return Err(Error::Dimension("v >= 2 and positive layer, channel and basis counts required".into()));
        }
        if !(self.cutoff > 0.0 && self.cutoff.is_finite()) {
            return Err(Error::DistanceOutOfRange(self.cutoff));
        }
        for z in &self.elements {
            if !self.basis.contains_key(z) {
                return Err(Error::UnknownElement(*z));
            }
        }
        Ok(())
    }

    pub fn tp_layout(&self) -> IrrepsLayout {
        IrrepsLayout::uniform(Group::So2, self.m_max, self.tp_channels)
    }
}

/// Parameters of one interaction block (both tracks).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Degrees read by the message branch; the first layer sees only the
    /// scalar embedding channels.
    pub input: IrrepsLayout,
    pub si_in: So3Linear,
    pub gate_in: So3Gate,
    pub msg_lin: So2LinearWeights,
    pub msg_gate: So2Gate,
    pub msg_scale: PairEmbed,
    pub si_out: So3Linear,
    pub gate_out: So3Gate,
    pub ln: So3LayerNorm,
    pub tp_pre: Vec<So2LinearWeights>,
    pub tp: TpWeights,
    pub tp_post: So2LinearWeights,
    pub ffn: So2Ffn,
    pub pair_ln: So2LayerNorm,
}

impl LayerParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, input: &IrrepsLayout, rng: &mut R) -> Result<Self> {
        let hidden = &cfg.hidden;
        let local = cfg.local_layout()?;
        let n0 = local.mult(0);
        let tp_layout = cfg.tp_layout();
        Ok(Self {
            input: input.clone(),
            si_in: So3Linear::init(input, input, rng),
            gate_in: So3Gate::init(input, None, rng)?,
            msg_lin: So2LinearWeights::init(&input.to_local_layout()?, &local, rng)?,
            msg_gate: So2Gate::init(&local, n0, None, rng)?,
            msg_scale: PairEmbed::init(hidden.num_channels(), cfg.rbf_k, cfg.pair_width, n0, rng),
            si_out: So3Linear::init(hidden, hidden, rng),
            gate_out: So3Gate::init(hidden, None, rng)?,
            ln: So3LayerNorm::new(hidden),
            tp_pre: (0..cfg.v)
                .map(|_| So2LinearWeights::init(&local, &tp_layout, rng))
                .collect::<Result<_>>()?,
            tp: TpWeights::init(cfg.m_max, cfg.v, cfg.tp_channels, rng),
            tp_post: So2LinearWeights::init(&tp_layout, &local, rng)?,
            ffn: So2Ffn::init(&local, &cfg.ffn_layout()?, None, rng)?,
            pair_ln: So2LayerNorm::new(&local),
        })
    }
}

impl ParamSet for LayerParams {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.si_in.visit(&join(p, "si_in"), f);
        self.gate_in.visit(&join(p, "gate_in"), f);
        self.msg_lin.visit(&join(p, "msg_lin"), f);
        self.msg_gate.visit(&join(p, "msg_gate"), f);
        self.msg_scale.visit(&join(p, "msg_scale"), f);
        self.si_out.visit(&join(p, "si_out"), f);
        self.gate_out.visit(&join(p, "gate_out"), f);
        self.ln.visit(&join(p, "ln"), f);
        self.tp_pre.visit(&join(p, "tp_pre"), f);
        self.tp.visit(&join(p, "tp"), f);
        self.tp_post.visit(&join(p, "tp_post"), f);
        self.ffn.visit(&join(p, "ffn"), f);
        self.pair_ln.visit(&join(p, "pair_ln"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.si_in.visit_mut(&join(p, "si_in"), f);
        self.gate_in.visit_mut(&join(p, "gate_in"), f);
        self.msg_lin.visit_mut(&join(p, "msg_lin"), f);
        self.msg_gate.visit_mut(&join(p, "msg_gate"), f);
        self.msg_scale.visit_mut(&join(p, "msg_scale"), f);
        self.si_out.visit_mut(&join(p, "si_out"), f);
        self.gate_out.visit_mut(&join(p, "gate_out"), f);
        self.ln.visit_mut(&join(p, "ln"), f);
        self.tp_pre.visit_mut(&join(p, "tp_pre"), f);
        self.tp.visit_mut(&join(p, "tp"), f);
        self.tp_post.visit_mut(&join(p, "tp_post"), f);
        self.ffn.visit_mut(&join(p, "ffn"), f);
        self.pair_ln.visit_mut(&join(p, "pair_ln"), f);
    }
}

/// Output of the two tracks: node features (global frame) and pair
/// features (each in its own edge frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub nodes: Vec<So3Features>,
    pub pairs: Vec<So2Features>,
}

/// Scales channel `k` of order `m` by `sigma[n0 - n_m + k]`: the same
/// factor for a given (degree, channel) at every order.
fn scale_orders(u: &So2Features, sigma: &[f64]) -> So2Features {
    let n0 = sigma.len();
    let mut out = u.clone();
    for &(m, mult) in u.layout().entries() {
        let w = if m == 0 { 1 } else { 2 };
        let base = n0 - mult;
        for (k, v) in out.block_mut(m).iter_mut().enumerate() {
            *v *= sigma[base + k / w];
        }
    }
    out
}

fn scale_orders_vjp(u: &So2Features, sigma: &[f64], g: &So2Features, gsigma: &mut [f64]) -> So2Features {
    let n0 = sigma.len();
    let mut gu = g.clone();
    for &(m, mult) in u.layout().entries() {
        let w = if m == 0 { 1 } else { 2 };
        let base = n0 - mult;
        let ub = u.block(m);
        for (k, v) in gu.block_mut(m).iter_mut().enumerate() {
            gsigma[base + k / w] += *v * ub[k];
            *v *= sigma[base + k / w];
        }
    }
    gu
}

#[derive(Debug, Clone)]
struct EdgeCache {
    s: Vec<f64>,
    scale: PairEmbedCache,
    sigma: Vec<f64>,
    t: So2Features,
    u1: So2Features,
    gate: GateCache,
    u2: So2Features,
}

#[derive(Debug, Clone)]
struct NodeCache {
    t: So2Features,
    p: Vec<So2Features>,
    y: So2Features,
}

#[derive(Debug, Clone)]
struct PairCache {
    ffn: FfnCache,
    pre_ln: So2Features,
    ln: So2LnCache,
}

#[derive(Debug, Clone)]
pub struct LayerCache {
    h_in: Vec<So3Features>,
    a1: Vec<So3Features>,
    gate_in: Vec<So3GateCache>,
    edges: Vec<EdgeCache>,
    agg: Vec<So3Features>,
    b1: Vec<So3Features>,
    gate_out: Vec<So3GateCache>,
    pre_ln: Vec<So3Features>,
    ln: Vec<So3LnCache>,
    nodes: Vec<NodeCache>,
    pairs: Vec<PairCache>,
}

/// Keeps the blocks of `x` named by `layout` (same multiplicities).
fn restrict(x: &So3Features, layout: &IrrepsLayout) -> Result<So3Features> {
    if x.layout() == layout {
        return Ok(x.clone());
    }
    let mut out = So3Features::zeros(layout)?;
    for &(l, mult) in layout.entries() {
        if x.layout().mult(l) != mult {
            return Err(Error::LayoutMismatch(format!("{} does not contain {layout}", x.layout())));
        }
        out.block_mut(l).copy_from_slice(x.block(l));
    }
    Ok(out)
}

/// Zero-pads `x` into `layout`; adjoint of [`restrict`].
fn pad(x: &So3Features, layout: &IrrepsLayout) -> Result<So3Features> {
    if x.layout() == layout {
        return Ok(x.clone());
    }
    let mut out = So3Features::zeros(layout)?;
    for &(l, _) in x.layout().entries() {
        out.block_mut(l).copy_from_slice(x.block(l));
    }
    Ok(out)
}

fn zeros3(layout: &IrrepsLayout, n: usize) -> Result<Vec<So3Features>> {
    (0..n).map(|_| So3Features::zeros(layout)).collect()
}

impl LayerParams {
    fn forward(
        &self,
        graph: &MoleculeGraph,
        geom: &Geometry,
        rbfs: &[Vec<f64>],
        h: &[So3Features],
        x: &[So2Features],
    ) -> Result<(Vec<So3Features>, Vec<So2Features>, LayerCache)> {
        let n = graph.num_nodes();
        let layout = h[0].layout().clone();

        // message passing
        let a1 = h
            .iter()
            .map(|hi| self.si_in.forward(&restrict(hi, &self.input)?))
            .collect::<Result<Vec<_>>>()?;
        let mut a = Vec::with_capacity(n);
        let mut gate_in = Vec::with_capacity(n);
        for v in &a1 {
            let (y, c) = self.gate_in.forward_cached(v)?;
            a.push(y);
            gate_in.push(c);
        }
        let mut agg = zeros3(&layout, n)?;
        let mut edges = Vec::with_capacity(graph.edges.len());
        for (e, ed) in graph.edges.iter().enumerate() {
            let frame = &geom.edge_frames[e];
            let s = degree_inner_products(&h[ed.i], &h[ed.j])?;
            let (sigma, scale) = self.msg_scale.forward_cached(&s, &rbfs[e]);
            let t = to_local(frame, &a[ed.j])?;
            let u1 = so2_linear(&t, &self.msg_lin)?;
            let (u2, gate) = self.msg_gate.forward_cached(&u1)?;
            let u3 = scale_orders(&u2, &sigma);
            // edges are sorted by (i, j): ascending-j accumulation per node
            agg[ed.i].axpy(1.0, &from_local(frame, &u3)?);
            edges.push(EdgeCache {
                s,
                scale,
                sigma,
                t,
                u1,
                gate,
                u2,
            });
        }
        let b1 = agg.iter().map(|v| self.si_out.forward(v)).collect::<Result<Vec<_>>>()?;
        let mut pre_ln = Vec::with_capacity(n);
        let mut gate_out = Vec::with_capacity(n);
        for (i, v) in b1.iter().enumerate() {
            let (mut y, c) = self.gate_out.forward_cached(v)?;
            y.axpy(1.0, &h[i]);
            pre_ln.push(y);
            gate_out.push(c);
        }
        let mut h_ln = Vec::with_capacity(n);
        let mut ln = Vec::with_capacity(n);
        for v in &pre_ln {
            let (y, c) = self.ln.forward_cached(v)?;
            h_ln.push(y);
            ln.push(c);
        }

        // node update
        let mut h_out = Vec::with_capacity(n);
        let mut nodes = Vec::with_capacity(n);
        for i in 0..n {
            let frame = &geom.node_frames[i];
            let t = to_local(frame, &h_ln[i])?;
            let p = self.tp_pre.iter().map(|w| so2_linear(&t, w)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&So2Features> = p.iter().collect();
            let y = so2_tp_contract(&refs, &self.tp)?;
            let z = so2_linear(&y, &self.tp_post)?;
            let mut out = from_local(frame, &z)?;
            out.axpy(1.0, &h_ln[i]);
            h_out.push(out);
            nodes.push(NodeCache { t, p, y });
        }

        // off-diagonal track
        let mut x_out = Vec::with_capacity(x.len());
        let mut pairs = Vec::with_capacity(x.len());
        for (e, ed) in graph.edges.iter().enumerate() {
            let frame = &geom.edge_frames[e];
            let mi = to_local(frame, &h_out[ed.i])?;
            let mj = to_local(frame, &h_out[ed.j])?;
            let (f, ffn) = self.ffn.forward_cached(&mi, &mj)?;
            let mut pre = x[e].clone();
            pre.axpy(1.0, &f);
            let (y, lnc) = self.pair_ln.forward_cached(&pre)?;
            x_out.push(y);
            pairs.push(PairCache { ffn, pre_ln: pre, ln: lnc });
        }

        let cache = LayerCache {
            h_in: h.to_vec(),
            a1,
            gate_in,
            edges,
            agg,
            b1,
            gate_out,
            pre_ln,
            ln,
            nodes,
            pairs,
        };
        Ok((h_out, x_out, cache))
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        graph: &MoleculeGraph,
        geom: &Geometry,
        rbfs: &[Vec<f64>],
        c: &LayerCache,
        gh_out: &[So3Features],
        gx_out: &[So2Features],
        grad: &mut LayerParams,
    ) -> Result<(Vec<So3Features>, Vec<So2Features>)> {
        let n = graph.num_nodes();
        let layout = c.h_in[0].layout().clone();
        let mut gh_out: Vec<So3Features> = gh_out.to_vec();

        // off-diagonal track
        let mut gx_in = Vec::with_capacity(gx_out.len());
        for (e, ed) in graph.edges.iter().enumerate() {
            let frame = &geom.edge_frames[e];
            let pc = &c.pairs[e];
            let gpre = self.pair_ln.backward(&pc.pre_ln, &pc.ln, &gx_out[e], &mut grad.pair_ln)?;
            let (gmi, gmj) = self.ffn.backward(&pc.ffn, &gpre, &mut grad.ffn)?;
            gh_out[ed.i].axpy(1.0, &to_local_vjp(frame, &gmi)?);
            gh_out[ed.j].axpy(1.0, &to_local_vjp(frame, &gmj)?);
            gx_in.push(gpre);
        }

        // node update
        let mut gh_ln = gh_out.clone();
        for i in 0..n {
            let frame = &geom.node_frames[i];
            let nc = &c.nodes[i];
            let gz = from_local_vjp(frame, &gh_out[i])?;
            let gy = so2_linear_vjp(&nc.y, &self.tp_post, &gz, &mut grad.tp_post)?;
            let refs: Vec<&So2Features> = nc.p.iter().collect();
            let gp = so2_tp_contract_vjp(&refs, &self.tp, &gy, &mut grad.tp)?;
            let mut gt = So2Features::zeros(nc.t.layout())?;
            for ((w, gw), g) in self.tp_pre.iter().zip(grad.tp_pre.iter_mut()).zip(&gp) {
                gt.axpy(1.0, &so2_linear_vjp(&nc.t, w, g, gw)?);
            }
            gh_ln[i].axpy(1.0, &to_local_vjp(frame, &gt)?);
        }

        // layer norm and skip
        let mut gpre = Vec::with_capacity(n);
        for i in 0..n {
            gpre.push(self.ln.backward(&c.pre_ln[i], &c.ln[i], &gh_ln[i], &mut grad.ln)?);
        }
        let mut gh_in = gpre.clone();

        // message passing
        let mut gagg = Vec::with_capacity(n);
        for i in 0..n {
            let gb1 = self.gate_out.backward(&c.b1[i], &c.gate_out[i], &gpre[i], &mut grad.gate_out)?;
            gagg.push(self.si_out.backward(&c.agg[i], &gb1, &mut grad.si_out)?);
        }
        let mut ga = zeros3(&self.input, n)?;
        for (e, ed) in graph.edges.iter().enumerate() {
            let frame = &geom.edge_frames[e];
            let ec = &c.edges[e];
            let gu3 = from_local_vjp(frame, &gagg[ed.i])?;
            let mut gsigma = vec![0.0; ec.sigma.len()];
            let gu2 = scale_orders_vjp(&ec.u2, &ec.sigma, &gu3, &mut gsigma);
            let gu1 = self.msg_gate.backward(&ec.u1, &ec.gate, &gu2, &mut grad.msg_gate)?;
            let gt = so2_linear_vjp(&ec.t, &self.msg_lin, &gu1, &mut grad.msg_lin)?;
            ga[ed.j].axpy(1.0, &to_local_vjp(frame, &gt)?);
            let gs = self.msg_scale.backward(&ec.s, &rbfs[e], &ec.scale, &gsigma, &mut grad.msg_scale);
            let (hi, hj) = (&c.h_in[ed.i], &c.h_in[ed.j]);
            if ed.i == ed.j {
                return Err(Error::Dimension("self edge".into()));
            }
            let (lo, hi_idx) = (ed.i.min(ed.j), ed.i.max(ed.j));
            let (left, right) = gh_in.split_at_mut(hi_idx);
            let (gi, gj) = if ed.i == lo {
                (&mut left[lo], &mut right[0])
            } else {
                (&mut right[0], &mut left[lo])
            };
            degree_inner_products_vjp(hi, hj, &gs, gi, gj);
        }
        for i in 0..n {
            let ga1 = self.gate_in.backward(&c.a1[i], &c.gate_in[i], &ga[i], &mut grad.gate_in)?;
            let hr = restrict(&c.h_in[i], &self.input)?;
            let g = self.si_in.backward(&hr, &ga1, &mut grad.si_in)?;
            gh_in[i].axpy(1.0, &pad(&g, &layout)?);
        }
        Ok((gh_in, gx_in))
    }
}

/// Every learned tensor of the network (expansion weights live with the
/// matrix assembly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub embed: Embedding,
    pub pair_embed: PairEmbed,
    pub layers: Vec<LayerParams>,
}

impl NetParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let local = cfg.local_layout()?;
        let scalars = IrrepsLayout::new(Group::So3, vec![(0, cfg.hidden.mult(0))])?;
        Ok(Self {
            embed: Embedding::init(&cfg.elements, cfg.hidden.mult(0), rng),
            pair_embed: PairEmbed::init(cfg.hidden.num_channels(), cfg.rbf_k, cfg.pair_width, local.mult(0), rng),
            layers: (0..cfg.layers)
                .map(|k| {
                    let input = if k == 0 { scalars.clone() } else { cfg.hidden.clone() };
                    LayerParams::init(cfg, &input, rng)
                })
                .collect::<Result<_>>()?,
        })
    }
}

impl ParamSet for NetParams {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.embed.visit(&join(p, "embed"), f);
        self.pair_embed.visit(&join(p, "pair_embed"), f);
        self.layers.visit(&join(p, "layers"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.embed.visit_mut(&join(p, "embed"), f);
        self.pair_embed.visit_mut(&join(p, "pair_embed"), f);
        self.layers.visit_mut(&join(p, "layers"), f);
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    h0: Vec<So3Features>,
    s0: Vec<Vec<f64>>,
    pair0: Vec<PairEmbedCache>,
    rbfs: Vec<Vec<f64>>,
    layers: Vec<LayerCache>,
}

pub fn edge_rbfs(cfg: &ModelConfig, graph: &MoleculeGraph) -> Result<Vec<Vec<f64>>> {
    graph.edges.iter().map(|e| rbf(e.dist, cfg.cutoff, cfg.rbf_k)).collect()
}

/// Both tracks through every layer.
pub fn forward_cached(
    cfg: &ModelConfig,
    params: &NetParams,
    graph: &MoleculeGraph,
    geom: &Geometry,
) -> Result<(Features, ForwardCache)> {
    let hidden = &cfg.hidden;
    let local = cfg.local_layout()?;
    let rbfs = edge_rbfs(cfg, graph)?;
    let h0 = graph
        .atoms
        .iter()
        .map(|a| params.embed.node_embed(a.z, hidden))
        .collect::<Result<Vec<_>>>()?;
    let mut s0 = Vec::with_capacity(graph.edges.len());
    let mut pair0 = Vec::with_capacity(graph.edges.len());
    let mut x = Vec::with_capacity(graph.edges.len());
    for (e, ed) in graph.edges.iter().enumerate() {
        let s = degree_inner_products(&h0[ed.i], &h0[ed.j])?;
        let (y, c) = params.pair_embed.forward_cached(&s, &rbfs[e]);
        let mut xe = So2Features::zeros(&local)?;
        xe.block_mut(0).copy_from_slice(&y);
        x.push(xe);
        s0.push(s);
        pair0.push(c);
    }
    let mut h = h0.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let (h2, x2, c) = lp.forward(graph, geom, &rbfs, &h, &x)?;
        h = h2;
        x = x2;
        layers.push(c);
    }
    Ok((
        Features { nodes: h, pairs: x },
        ForwardCache {
            h0,
            s0,
            pair0,
            rbfs,
            layers,
        },
    ))
}

/// Accumulates parameter gradients for output cotangents `g`.
pub fn backward(
    params: &NetParams,
    graph: &MoleculeGraph,
    geom: &Geometry,
    cache: &ForwardCache,
    g: &Features,
    grad: &mut NetParams,
) -> Result<()> {
    let mut gh = g.nodes.clone();
    let mut gx = g.pairs.clone();
    for (l, lp) in params.layers.iter().enumerate().rev() {
        let (a, b) = lp.backward(graph, geom, &cache.rbfs, &cache.layers[l], &gh, &gx, &mut grad.layers[l])?;
        gh = a;
        gx = b;
    }
    for (e, ed) in graph.edges.iter().enumerate() {
        let gs = params.pair_embed.backward(&cache.s0[e], &cache.rbfs[e], &cache.pair0[e], gx[e].block(0), &mut grad.pair_embed);
        let (mut gi, mut gj) = (So3Features::zeros(gh[0].layout())?, So3Features::zeros(gh[0].layout())?);
        degree_inner_products_vjp(&cache.h0[ed.i], &cache.h0[ed.j], &gs, &mut gi, &mut gj);
        gh[ed.i].axpy(1.0, &gi);
        gh[ed.j].axpy(1.0, &gj);
    }
    for (i, a) in graph.atoms.iter().enumerate() {
        params.embed.backward(a.z, &gh[i], &mut grad.embed)?;
    }
    Ok(())
}
