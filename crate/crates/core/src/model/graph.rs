use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::rotation::{norm, sub, Rotation, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub z: u32,
    /// Bohr.
    pub pos: Vec3,
}

/// Molecule file contents. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hamiltonian: Option<Vec<Vec<f64>>>,
}

impl Molecule {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self {
            atoms,
            overlap: None,
            hamiltonian: None,
        }
    }

    pub fn atomic_numbers(&self) -> Vec<u32> {
        self.atoms.iter().map(|a| a.z).collect()
    }

    /// Positions rotated about the origin; matrices dropped.
    pub fn rotated(&self, g: &Rotation) -> Self {
        Self::new(
            self.atoms
                .iter()
                .map(|a| Atom {
                    z: a.z,
                    pos: g.apply(a.pos),
                })
                .collect(),
        )
    }

    pub fn translated(&self, t: Vec3) -> Self {
        Self::new(
            self.atoms
                .iter()
                .map(|a| Atom {
                    z: a.z,
                    pos: [a.pos[0] + t[0], a.pos[1] + t[1], a.pos[2] + t[2]],
                })
                .collect(),
        )
    }

    /// Atom `k` of the result is atom `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&k| self.atoms[k].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// `(pos_j - pos_i) / dist`.
    pub dir: Vec3,
    pub dist: f64,
}

/// Directed edges for every ordered pair within the cutoff, sorted by
/// `(i, j)`.
#[derive(Debug, Clone)]
pub struct MoleculeGraph {
    pub atoms: Vec<Atom>,
    pub cutoff: f64,
    pub edges: Vec<Edge>,
    /// Edge indices leaving each node, ascending in `j`.
    pub out_edges: Vec<Vec<usize>>,
}

impl MoleculeGraph {
    pub fn new(molecule: &Molecule, cutoff: f64) -> Result<Self> {
        if molecule.atoms.is_empty() {
            return Err(Error::Dimension("molecule has no atoms".into()));
        }
        let n = molecule.atoms.len();
        let mut edges = Vec::new();
        let mut out_edges = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // relative vector only, so translations cancel exactly
                let d = sub(molecule.atoms[j].pos, molecule.atoms[i].pos);
                let dist = norm(d);
                if dist == 0.0 {
                    return Err(Error::DistanceOutOfRange(dist));
                }
                if dist <= cutoff {
                    out_edges[i].push(edges.len());
                    edges.push(Edge {
                        i,
                        j,
                        dir: [d[0] / dist, d[1] / dist, d[2] / dist],
                        dist,
                    });
                }
            }
        }
        Ok(Self {
            atoms: molecule.atoms.clone(),
            cutoff,
            edges,
            out_edges,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.atoms.len()
    }

    /// Index of edge `(i, j)`, if within the cutoff.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.out_edges[i].iter().copied().find(|&e| self.edges[e].j == j)
    }

    /// Closest neighbour of `i`; equal distances go to the smaller index.
    pub fn nearest(&self, i: usize) -> Option<usize> {
        let mut best: Option<(f64, usize)> = None;
        for &e in &self.out_edges[i] {
            let ed = &self.edges[e];
            if best.map_or(true, |(d, _)| ed.dist < d) {
                best = Some((ed.dist, e));
            }
        }
        best.map(|(_, e)| e)
    }
}

/// Cached frames: one per edge direction and one per node (towards its
/// nearest neighbour, identity when isolated).
#[derive(Debug, Clone)]
pub struct Geometry {
    pub edge_frames: Vec<Frame>,
    pub node_frames: Vec<Frame>,
    /// Edge index used for each node frame.
    pub nearest: Vec<Option<usize>>,
}

impl Geometry {
    pub fn new(graph: &MoleculeGraph, l_max: usize) -> Result<Self> {
        let edge_frames = graph
            .edges
            .iter()
            .map(|e| Frame::from_direction(e.dir, l_max))
            .collect::<Result<Vec<_>>>()?;
        let nearest: Vec<Option<usize>> = (0..graph.num_nodes()).map(|i| graph.nearest(i)).collect();
        let node_frames = nearest
            .iter()
            .map(|nn| match nn {
                Some(e) => edge_frames[*e].clone(),
                None => Frame::identity(l_max),
            })
            .collect();
        Ok(Self {
            edge_frames,
            node_frames,
            nearest,
        })
    }

    /// Perturbs every cached Wigner matrix (negative control for audits).
    #[doc(hidden)]
    pub fn corrupt_caches(&mut self) {
        for f in self.edge_frames.iter_mut().chain(self.node_frames.iter_mut()) {
            f.corrupt_cache();
        }
    }
}
