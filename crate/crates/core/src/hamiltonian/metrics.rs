use serde::{Deserialize, Serialize};

use super::eigen::{generalized_eigensolve, symmetric_eigen};
use super::layout::BlockMatrix;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Eigenvalues closer than this are treated as one degenerate cluster.
pub const DEGENERACY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae_diag: f64,
    pub mae_offdiag: f64,
    pub mae_all: f64,
    pub mae_eps: f64,
    pub cosine_psi: f64,
}

fn column(m: &Matrix, k: usize) -> Vec<f64> {
    (0..m.rows).map(|r| m.get(r, k)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn abs_cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = (dot(a, a) * dot(b, b)).sqrt();
    if d == 0.0 {
        return 0.0;
    }
    (dot(a, b).abs() / d).min(1.0)
}

/// Euclidean orthonormal basis of the span of `cols` (two Gram-Schmidt passes).
fn orthonormalize(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(cols.len());
    for c in cols {
        let mut v = c.clone();
        for _ in 0..2 {
            for u in &q {
                let p = dot(u, &v);
                v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = dot(&v, &v).sqrt();
        if n > 0.0 {
            v.iter_mut().for_each(|x| *x /= n);
            q.push(v);
        }
    }
    q
}

/// Cosines of the principal angles between two column spans, descending.
pub fn principal_cosines(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>> {
    let (qa, qb) = (orthonormalize(a), orthonormalize(b));
    let (p, r) = (qa.len(), qb.len());
    let mut m = Matrix::zeros(p, r);
    for i in 0..p {
        for j in 0..r {
            m.set(i, j, dot(&qa[i], &qb[j]));
        }
    }
    let (ev, _) = symmetric_eigen(&m.transpose().matmul(&m))?;
    let mut cos: Vec<f64> = ev.iter().map(|e| e.max(0.0).sqrt().min(1.0)).collect();
    cos.reverse();
    Ok(cos)
}

/// Mean over occupied columns of |cos|, with degenerate clusters of the
/// reference spectrum compared as subspaces.
pub fn occupied_cosine(c_pred: &Matrix, c_true: &Matrix, eps_true: &[f64], n_occ: usize) -> Result<f64> {
    let n = eps_true.len();
    let mut total = 0.0;
    let mut k = 0;
    while k < n_occ {
        let mut end = k + 1;
        while end < n && eps_true[end] - eps_true[end - 1] < DEGENERACY_TOL {
            end += 1;
        }
        let counted = end.min(n_occ) - k;
        if end - k == 1 {
            total += abs_cosine(&column(c_pred, k), &column(c_true, k));
        } else {
            let a: Vec<Vec<f64>> = (k..end).map(|c| column(c_pred, c)).collect();
            let b: Vec<Vec<f64>> = (k..end).map(|c| column(c_true, c)).collect();
            if a == b {
                total += counted as f64;
            } else {
                let cos = principal_cosines(&a, &b)?;
                total += cos.iter().take(counted).sum::<f64>();
            }
        }
        k = end;
    }
    Ok(total / n_occ as f64)
}

pub fn metrics(h_pred: &BlockMatrix, h_true: &BlockMatrix, s: &BlockMatrix, n_occ: usize) -> Result<Metrics> {
    if h_pred.layout != h_true.layout || s.layout != h_true.layout {
        return Err(Error::Dimension("matrix layouts differ".into()));
    }
    let n = h_true.dim();
    if n_occ == 0 || n_occ > n {
        return Err(Error::Dimension(format!("n_occ = {n_occ} outside 1..={n}")));
    }
    let lay = &h_true.layout;
    let (mut sd, mut nd, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for r in 0..n {
        let ar = lay.atom_of(r);
        for c in 0..n {
            let d = (h_pred.matrix.get(r, c) - h_true.matrix.get(r, c)).abs();
            if lay.atom_of(c) == ar {
                sd += d;
                nd += 1;
            } else {
                so += d;
                no += 1;
            }
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let (ep, cp) = generalized_eigensolve(&h_pred.matrix, &s.matrix)?;
    let (et, ct) = generalized_eigensolve(&h_true.matrix, &s.matrix)?;
    let mae_eps = ep.iter().zip(&et).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
    Ok(Metrics {
        mae_diag: mean(sd, nd),
        mae_offdiag: mean(so, no),
        mae_all: mean(sd + so, nd + no),
        mae_eps,
        cosine_psi: occupied_cosine(&cp, &ct, &et, n_occ)?,
    })
}
