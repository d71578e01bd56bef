use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rotation::{wigner_d_all, Rotation};

/// Orbital degrees per atom, with row offsets into the dense matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitalLayout {
    atoms: Vec<Vec<usize>>,
    atom_offsets: Vec<usize>,
    orbital_offsets: Vec<Vec<usize>>,
    dim: usize,
}

impl OrbitalLayout {
    pub fn from_atoms(atoms: Vec<Vec<usize>>) -> Self {
        let mut atom_offsets = Vec::with_capacity(atoms.len());
        let mut orbital_offsets = Vec::with_capacity(atoms.len());
        let mut off = 0;
        for orbitals in &atoms {
            atom_offsets.push(off);
            let mut o = Vec::with_capacity(orbitals.len());
            for &l in orbitals {
                o.push(off);
                off += 2 * l + 1;
            }
            orbital_offsets.push(o);
        }
        Self {
            atoms,
            atom_offsets,
            orbital_offsets,
            dim: off,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn orbitals(&self, atom: usize) -> &[usize] {
        &self.atoms[atom]
    }

    pub fn atoms(&self) -> &[Vec<usize>] {
        &self.atoms
    }

    /// Row of component `m` (index into `-l..=l`) of orbital `s` on `atom`.
    pub fn row(&self, atom: usize, s: usize, m: usize) -> usize {
        self.orbital_offsets[atom][s] + m
    }

    pub fn orbital_range(&self, atom: usize, s: usize) -> Range<usize> {
        let o = self.orbital_offsets[atom][s];
        o..o + 2 * self.atoms[atom][s] + 1
    }

    pub fn atom_range(&self, atom: usize) -> Range<usize> {
        let end = self.atom_offsets.get(atom + 1).copied().unwrap_or(self.dim);
        self.atom_offsets[atom]..end
    }

    /// Atom owning matrix row `r`.
    pub fn atom_of(&self, r: usize) -> usize {
        self.atom_offsets.partition_point(|&o| o <= r) - 1
    }

    pub fn l_max(&self) -> usize {
        self.atoms.iter().flatten().copied().max().unwrap_or(0)
    }
}

impl Serialize for OrbitalLayout {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.atoms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrbitalLayout {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Self::from_atoms(Vec::<Vec<usize>>::deserialize(d)?))
    }
}

pub fn build_orbital_layout(atomic_numbers: &[u32], basis: &BTreeMap<u32, Vec<usize>>) -> Result<OrbitalLayout> {
    let atoms = atomic_numbers
        .iter()
        .map(|z| basis.get(z).cloned().ok_or(Error::UnknownElement(*z)))
        .collect::<Result<Vec<_>>>()?;
    Ok(OrbitalLayout::from_atoms(atoms))
}

/// Dense symmetric matrix addressed by orbital blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMatrix {
    pub layout: OrbitalLayout,
    pub matrix: Matrix,
}

impl BlockMatrix {
    pub fn new(layout: OrbitalLayout, matrix: Matrix) -> Result<Self> {
        if matrix.rows != layout.dim() || matrix.cols != layout.dim() {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for a layout of dimension {}",
                matrix.rows,
                matrix.cols,
                layout.dim()
            )));
        }
        Ok(Self { layout, matrix })
    }

    pub fn zeros(layout: OrbitalLayout) -> Self {
        let n = layout.dim();
        Self {
            layout,
            matrix: Matrix::zeros(n, n),
        }
    }

    pub fn identity(layout: OrbitalLayout) -> Self {
        let n = layout.dim();
        Self {
            layout,
            matrix: Matrix::identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn block(&self, a: usize, s: usize, b: usize, t: usize) -> Matrix {
        let (rs, cs) = (self.layout.orbital_range(a, s), self.layout.orbital_range(b, t));
        let mut out = Matrix::zeros(rs.len(), cs.len());
        for (i, r) in rs.clone().enumerate() {
            for (j, c) in cs.clone().enumerate() {
                out.set(i, j, self.matrix.get(r, c));
            }
        }
        out
    }

    pub fn add_block(&mut self, a: usize, s: usize, b: usize, t: usize, block: &Matrix) {
        let (r0, c0) = (self.layout.row(a, s, 0), self.layout.row(b, t, 0));
        for i in 0..block.rows {
            for j in 0..block.cols {
                *self.matrix.at_mut(r0 + i, c0 + j) += block.get(i, j);
            }
        }
    }

    pub fn symmetrized(&self) -> Self {
        let t = self.matrix.transpose();
        Self {
            layout: self.layout.clone(),
            matrix: self.matrix.add(&t).scale(0.5),
        }
    }
}

/// Conjugates every orbital sub-block: `D^{l_s}(g) H_st D^{l_t}(g)^T`.
pub fn block_rotate(h: &BlockMatrix, g: &Rotation) -> BlockMatrix {
    let d = wigner_d_all(h.layout.l_max(), g);
    let lay = &h.layout;
    let mut out = BlockMatrix::zeros(lay.clone());
    for a in 0..lay.num_atoms() {
        for (s, &ls) in lay.orbitals(a).iter().enumerate() {
            for b in 0..lay.num_atoms() {
                for (t, &lt) in lay.orbitals(b).iter().enumerate() {
                    let blk = h.block(a, s, b, t);
                    let r = d[ls].matmul(&blk).matmul(&d[lt].transpose());
                    out.add_block(a, s, b, t, &r);
                }
            }
        }
    }
    out
}
