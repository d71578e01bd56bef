use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layout::{BlockMatrix, OrbitalLayout};
use crate::cg::{expansion, expansion_vjp};
use crate::error::{Error, Result};
use crate::frame::{from_local, from_local_vjp};
use crate::irreps::{IrrepsLayout, So2Features, So3Features};
use crate::linalg::Matrix;
use crate::model::{Geometry, MoleculeGraph};
use crate::params::{ParamSet, Tensor};

/// Per-(element, orbital pair, coupled degree) channel weights of the
/// expansion. Keys: `d.Z.s.t.lL` for on-site blocks, `o.Zi.Zj.s.t.lL` for
/// pair blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionWeights {
    pub blocks: BTreeMap<String, Tensor>,
}

fn diag_prefix(z: u32, s: usize, t: usize) -> String {
    format!("d.{z}.{s}.{t}")
}

fn off_prefix(zi: u32, zj: u32, s: usize, t: usize) -> String {
    format!("o.{zi}.{zj}.{s}.{t}")
}

impl ExpansionWeights {
    pub fn init<R: Rng + ?Sized>(
        elements: &[u32],
        basis: &BTreeMap<u32, Vec<usize>>,
        hidden: &IrrepsLayout,
        rng: &mut R,
    ) -> Result<Self> {
        let mut blocks = BTreeMap::new();
        let mut add = |prefix: String, ls: usize, lt: usize, rng: &mut R| -> Result<()> {
            let mut any = false;
            for l3 in ls.abs_diff(lt)..=ls + lt {
                let mult = hidden.mult(l3);
                if mult > 0 {
                    blocks.insert(format!("{prefix}.l{l3}"), Tensor::uniform(&[mult], mult, rng));
                    any = true;
                }
            }
            if any {
                Ok(())
            } else {
                Err(Error::LayoutMismatch(format!(
                    "features {hidden} cannot couple orbitals of degree {ls} and {lt}"
                )))
            }
        };
        for &zi in elements {
            let oi = basis.get(&zi).ok_or(Error::UnknownElement(zi))?;
            for (s, &ls) in oi.iter().enumerate() {
                for (t, &lt) in oi.iter().enumerate() {
                    add(diag_prefix(zi, s, t), ls, lt, rng)?;
                }
            }
            for &zj in elements {
                let oj = basis.get(&zj).ok_or(Error::UnknownElement(zj))?;
                for (s, &ls) in oi.iter().enumerate() {
                    for (t, &lt) in oj.iter().enumerate() {
                        add(off_prefix(zi, zj, s, t), ls, lt, rng)?;
                    }
                }
            }
        }
        Ok(Self { blocks })
    }

    fn get(&self, prefix: &str, ls: usize, lt: usize) -> Result<BTreeMap<usize, Vec<f64>>> {
        let mut out = BTreeMap::new();
        for l3 in ls.abs_diff(lt)..=ls + lt {
            if let Some(t) = self.blocks.get(&format!("{prefix}.l{l3}")) {
                out.insert(l3, t.data.clone());
            }
        }
        if out.is_empty() {
            return Err(Error::Checkpoint(format!("no expansion weights for {prefix}")));
        }
        Ok(out)
    }

    fn add_grad(&mut self, prefix: &str, g: &BTreeMap<usize, Vec<f64>>) {
        for (l3, v) in g {
            if let Some(t) = self.blocks.get_mut(&format!("{prefix}.l{l3}")) {
                t.data.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
        }
    }
}

impl ParamSet for ExpansionWeights {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.blocks.visit(p, f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.blocks.visit_mut(p, f);
    }
}

fn check(graph: &MoleculeGraph, geom: &Geometry, nodes: &[So3Features], pairs: &[So2Features], layout: &OrbitalLayout) -> Result<()> {
    if nodes.len() != graph.num_nodes() || layout.num_atoms() != graph.num_nodes() {
        return Err(Error::Dimension("node count differs from the orbital layout".into()));
    }
    if pairs.len() != graph.edges.len() || geom.edge_frames.len() != graph.edges.len() {
        return Err(Error::Dimension("pair features or frames do not match the edges".into()));
    }
    Ok(())
}

/// On-site blocks from node features, pair blocks from pair features rotated
/// back to the global frame, then `(H + H^T) / 2`. Pairs beyond the cutoff
/// stay zero.
pub fn assemble(
    nodes: &[So3Features],
    pairs: &[So2Features],
    graph: &MoleculeGraph,
    geom: &Geometry,
    layout: &OrbitalLayout,
    weights: &ExpansionWeights,
) -> Result<BlockMatrix> {
    check(graph, geom, nodes, pairs, layout)?;
    let mut h = BlockMatrix::zeros(layout.clone());
    for (i, atom) in graph.atoms.iter().enumerate() {
        for (s, &ls) in layout.orbitals(i).iter().enumerate() {
            for (t, &lt) in layout.orbitals(i).iter().enumerate() {
                let w = weights.get(&diag_prefix(atom.z, s, t), ls, lt)?;
                h.add_block(i, s, i, t, &expansion(&nodes[i], &w, ls, lt)?);
            }
        }
    }
    for (e, ed) in graph.edges.iter().enumerate() {
        let g = from_local(&geom.edge_frames[e], &pairs[e])?;
        let (zi, zj) = (graph.atoms[ed.i].z, graph.atoms[ed.j].z);
        for (s, &ls) in layout.orbitals(ed.i).iter().enumerate() {
            for (t, &lt) in layout.orbitals(ed.j).iter().enumerate() {
                let w = weights.get(&off_prefix(zi, zj, s, t), ls, lt)?;
                h.add_block(ed.i, s, ed.j, t, &expansion(&g, &w, ls, lt)?);
            }
        }
    }
    Ok(h.symmetrized())
}

/// VJP of [`assemble`]: cotangents for node features, local pair features
/// and (accumulated into `grad`) the expansion weights.
#[allow(clippy::too_many_arguments)]
pub fn assemble_vjp(
    nodes: &[So3Features],
    pairs: &[So2Features],
    graph: &MoleculeGraph,
    geom: &Geometry,
    layout: &OrbitalLayout,
    weights: &ExpansionWeights,
    g_h: &Matrix,
    grad: &mut ExpansionWeights,
) -> Result<(Vec<So3Features>, Vec<So2Features>)> {
    check(graph, geom, nodes, pairs, layout)?;
    let ga = BlockMatrix::new(layout.clone(), g_h.clone())?.symmetrized();
    let mut g_nodes = Vec::with_capacity(nodes.len());
    for (i, atom) in graph.atoms.iter().enumerate() {
        let mut gf = So3Features::zeros(nodes[i].layout())?;
        for (s, &ls) in layout.orbitals(i).iter().enumerate() {
            for (t, &lt) in layout.orbitals(i).iter().enumerate() {
                let prefix = diag_prefix(atom.z, s, t);
                let w = weights.get(&prefix, ls, lt)?;
                let mut gw: BTreeMap<usize, Vec<f64>> = w.iter().map(|(k, v)| (*k, vec![0.0; v.len()])).collect();
                expansion_vjp(&nodes[i], &w, ls, lt, &ga.block(i, s, i, t), &mut gf, &mut gw)?;
                grad.add_grad(&prefix, &gw);
            }
        }
        g_nodes.push(gf);
    }
    let mut g_pairs = Vec::with_capacity(pairs.len());
    for (e, ed) in graph.edges.iter().enumerate() {
        let frame = &geom.edge_frames[e];
        let g = from_local(frame, &pairs[e])?;
        let mut gg = So3Features::zeros(g.layout())?;
        let (zi, zj) = (graph.atoms[ed.i].z, graph.atoms[ed.j].z);
        for (s, &ls) in layout.orbitals(ed.i).iter().enumerate() {
            for (t, &lt) in layout.orbitals(ed.j).iter().enumerate() {
                let prefix = off_prefix(zi, zj, s, t);
                let w = weights.get(&prefix, ls, lt)?;
                let mut gw: BTreeMap<usize, Vec<f64>> = w.iter().map(|(k, v)| (*k, vec![0.0; v.len()])).collect();
                expansion_vjp(&g, &w, ls, lt, &ga.block(ed.i, s, ed.j, t), &mut gg, &mut gw)?;
                grad.add_grad(&prefix, &gw);
            }
        }
        g_pairs.push(from_local_vjp(frame, &gg)?);
    }
    Ok((g_nodes, g_pairs))
}
