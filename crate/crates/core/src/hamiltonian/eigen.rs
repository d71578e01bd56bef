use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Lower-triangular `L` with `S = L L^T`.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    let n = s.rows;
    if s.cols != n {
        return Err(Error::Dimension(format!("{}x{} is not square", s.rows, s.cols)));
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite(j));
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / d);
        }
    }
    Ok(l)
}

/// Solves `L X = B` for lower-triangular `L`.
fn forward_solve(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        for i in 0..n {
            let mut v = x.get(i, c);
            for k in 0..i {
                v -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
    }
    x
}

/// Solves `L^T X = B` for lower-triangular `L`.
fn backward_solve_t(l: &Matrix, b: &Matrix) -> Matrix {
    let n = l.rows;
    let mut x = b.clone();
    for c in 0..b.cols {
        for i in (0..n).rev() {
            let mut v = x.get(i, c);
            for k in i + 1..n {
                v -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, v / l.get(i, i));
        }
    }
    x
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvalues come
/// back ascending with eigenvectors as the columns of `V`.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows;
    if a.cols != n {
        return Err(Error::Dimension(format!("{}x{} is not square", a.rows, a.cols)));
    }
    let mut a = a.add(&a.transpose()).scale(0.5);
    let mut v = Matrix::identity(n);
    let total: f64 = a.data.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += a.get(p, q) * a.get(p, q);
            }
        }
        if off.sqrt() <= 1e-15 * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a.get(k, p), a.get(k, q));
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let (apk, aqk) = (a.get(p, k), a.get(q, k));
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).total_cmp(&a.get(j, j)).then(i.cmp(&j)));
    let eps = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vs = Matrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        for r in 0..n {
            vs.set(r, c, v.get(r, i));
        }
    }
    Ok((eps, vs))
}

/// `H C = S C diag(eps)` via Cholesky reduction and Jacobi; columns of `C`
/// are S-orthonormal.
pub fn generalized_eigensolve(h: &Matrix, s: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if h.rows != s.rows || h.cols != s.cols || h.rows != h.cols {
        return Err(Error::Dimension(format!(
            "H is {}x{}, S is {}x{}",
            h.rows, h.cols, s.rows, s.cols
        )));
    }
    let l = cholesky(s)?;
    let y = forward_solve(&l, h);
    let a = forward_solve(&l, &y.transpose());
    let (eps, v) = symmetric_eigen(&a)?;
    Ok((eps, backward_solve_t(&l, &v)))
}
