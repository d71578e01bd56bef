//! Proper 3D rotations and their real-basis Wigner-D matrices.
//!
//! `wigner_d(l, R)` is the matrix with `Y(R r) = D(R) Y(r)` for the real
//! harmonics in [`crate::harmonics`]. The primary construction is the
//! real-basis recursion of Ivanic and Ruedenberg seeded with `D^1 = R`
//! (the degree-one harmonics are `(x, y, z)` up to scale), which needs no
//! Euler angles and stays accurate near gimbal lock. The complex route
//! `U D_complex U^dagger` is kept alongside it for the block-diagonal
//! identity and as a cross-check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::harmonics::to_polar_coords;
use crate::irreps::{So3Features, DEFAULT_INDEX_CAP};
use crate::linalg::Matrix;

pub type Vec3 = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn normalize(a: Vec3) -> Result<Vec3> {
    let n = norm(a);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroDirection);
    }
    Ok([a[0] / n, a[1] / n, a[2] / n])
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates orthogonality and `det = +1` to 1e-12.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = Rotation { m };
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| m[k][i] * m[k][j]).sum();
                err = err.max((v - if i == j { 1.0 } else { 0.0 }).abs());
            }
        }
        let det = r.det();
        if err > 1e-12 || (det - 1.0).abs() > 1e-12 {
            return Err(Error::ShapeMismatch(format!(
                "not a proper rotation (orthogonality error {err:e}, det {det})"
            )));
        }
        Ok(r)
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        self.m
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn about_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn about_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    /// Active ZYZ composition `R_z(alpha) R_y(beta) R_z(gamma)`.
    pub fn from_euler(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self::about_z(alpha)
            .compose(&Self::about_y(beta))
            .compose(&Self::about_z(gamma))
    }

    /// ZYZ angles with `beta` in `[0, pi]`; at gimbal lock `gamma = 0`.
    pub fn to_euler(&self) -> (f64, f64, f64) {
        let m = &self.m;
        let beta = m[2][2].clamp(-1.0, 1.0).acos();
        let sb = (m[0][2].powi(2) + m[1][2].powi(2)).sqrt();
        if sb > 1e-9 {
            let alpha = m[1][2].atan2(m[0][2]);
            let gamma = m[2][1].atan2(-m[2][0]);
            (alpha, beta, gamma)
        } else if m[2][2] > 0.0 {
            (m[1][0].atan2(m[0][0]), 0.0, 0.0)
        } else {
            (-m[1][0].atan2(-m[0][0]), PI, 0.0)
        }
    }

    /// Right-handed rotation by `angle` about the unit `axis` (Rodrigues).
    pub fn about_axis(axis: Vec3, angle: f64) -> Result<Self> {
        let k = normalize(axis)?;
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let [x, y, z] = k;
        Ok(Rotation {
            m: [
                [c + x * x * t, x * y * t - z * s, x * z * t + y * s],
                [y * x * t + z * s, c + y * y * t, y * z * t - x * s],
                [z * x * t - y * s, z * y * t + x * s, c + z * z * t],
            ],
        })
    }

    /// Uniform (Haar) sample via Shoemake's subgroup construction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.gen();
        let u2: f64 = rng.gen();
        let u3: f64 = rng.gen();
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let (w, x, y, z) = (
            b * (2.0 * PI * u3).cos(),
            a * (2.0 * PI * u2).sin(),
            a * (2.0 * PI * u2).cos(),
            b * (2.0 * PI * u3).sin(),
        );
        Rotation {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - z * w),
                    2.0 * (x * z + y * w),
                ],
                [
                    2.0 * (x * y + z * w),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - x * w),
                ],
                [
                    2.0 * (x * z - y * w),
                    2.0 * (y * z + x * w),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    /// `self * other` (apply `other` first).
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.m[i][k] * other.m[k][j]).sum();
            }
        }
        Rotation { m }
    }

    pub fn inverse(&self) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[j][i];
            }
        }
        Rotation { m }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        let m = &self.m;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    pub fn max_abs_diff(&self, other: &Rotation) -> f64 {
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                e = e.max((self.m[i][j] - other.m[i][j]).abs());
            }
        }
        e
    }
}

impl Serialize for Rotation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.m.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Rotation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = <[[f64; 3]; 3]>::deserialize(d)?;
        Rotation::from_matrix(m).map_err(serde::de::Error::custom)
    }
}

fn check_cap(l: usize) -> Result<()> {
    if l > DEFAULT_INDEX_CAP {
        return Err(Error::DegreeOverCap {
            degree: l,
            cap: DEFAULT_INDEX_CAP,
        });
    }
    Ok(())
}

/// Real Wigner-D matrix of degree `l`, `(2l+1) x (2l+1)`, rows and columns
/// ordered `m = -l..=l`.
pub fn wigner_d(l: usize, r: &Rotation) -> Result<Matrix> {
    check_cap(l)?;
    Ok(wigner_d_all(l, r).pop().expect("at least degree 0"))
}

/// `D(R) x` applied channel by channel to every degree.
pub fn rotate_features(x: &So3Features, r: &Rotation) -> Result<So3Features> {
    let top = x.layout().max_index();
    check_cap(top)?;
    let ds = wigner_d_all(top, r);
    let mut out = x.clone();
    for (l, mult, _) in x.layout().blocks() {
        let n = 2 * l + 1;
        let src = x.block(l);
        let dst = out.block_mut(l);
        for c in 0..mult {
            dst[c * n..(c + 1) * n].copy_from_slice(&ds[l].matvec(&src[c * n..(c + 1) * n]));
        }
    }
    Ok(out)
}

/// `[D^0, D^1, ..., D^{l_max}]` from a single recursion pass.
pub fn wigner_d_all(l_max: usize, r: &Rotation) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(Matrix::identity(1));
    if l_max == 0 {
        return out;
    }
    let r1 = Matrix::from_rows(&r.m.iter().map(|row| row.to_vec()).collect::<Vec<_>>());
    out.push(r1.clone());
    for l in 2..=l_max {
        let next = ir_step(l, &r1, &out[l - 1]);
        out.push(next);
    }
    out
}

fn ir_step(l: usize, r1: &Matrix, prev: &Matrix) -> Matrix {
    let li = l as i64;
    let n = 2 * l + 1;
    let r = |i: i64, j: i64| r1.get((i + 1) as usize, (j + 1) as usize);
    let pm = |a: i64, b: i64| prev.get((a + li - 1) as usize, (b + li - 1) as usize);
    let p = |i: i64, a: i64, b: i64| -> f64 {
        if b == li {
            r(i, 1) * pm(a, li - 1) - r(i, -1) * pm(a, -li + 1)
        } else if b == -li {
            r(i, 1) * pm(a, -li + 1) + r(i, -1) * pm(a, li - 1)
        } else {
            r(i, 0) * pm(a, b)
        }
    };
    let mut out = Matrix::zeros(n, n);
    for m in -li..=li {
        for k in -li..=li {
            let d0 = if m == 0 { 1.0 } else { 0.0 };
            let denom = if k.abs() < li {
                ((li + k) * (li - k)) as f64
            } else {
                ((2 * li) * (2 * li - 1)) as f64
            };
            let am = m.abs();
            let u = (((li + m) * (li - m)) as f64 / denom).sqrt();
            let v = 0.5
                * ((1.0 + d0) * ((li + am - 1) * (li + am)) as f64 / denom).sqrt()
                * (1.0 - 2.0 * d0);
            let w = -0.5 * (((li - am - 1) * (li - am)) as f64 / denom).max(0.0).sqrt() * (1.0 - d0);

            let mut val = 0.0;
            if u != 0.0 {
                val += u * p(0, m, k);
            }
            if v != 0.0 {
                let vv = if m == 0 {
                    p(1, 1, k) + p(-1, -1, k)
                } else if m > 0 {
                    let d1: f64 = if m == 1 { 1.0 } else { 0.0 };
                    p(1, m - 1, k) * (1.0 + d1).sqrt() - p(-1, -m + 1, k) * (1.0 - d1)
                } else {
                    let d1: f64 = if m == -1 { 1.0 } else { 0.0 };
                    p(1, m + 1, k) * (1.0 - d1) + p(-1, -m - 1, k) * (1.0 + d1).sqrt()
                };
                val += v * vv;
            }
            if w != 0.0 {
                let ww = if m > 0 {
                    p(1, m + 1, k) + p(-1, -m - 1, k)
                } else {
                    p(1, m - 1, k) - p(-1, -m + 1, k)
                };
                val += w * ww;
            }
            out.set((m + li) as usize, (k + li) as usize, val);
        }
    }
    out
}

/// Unitary change of basis with `Y_real = U Y_complex`, where the complex
/// harmonics follow the usual Condon-Shortley convention.
pub fn change_of_basis(l: usize) -> Vec<Complex64> {
    let n = 2 * l + 1;
    let li = l as i64;
    let idx = |m: i64| (m + li) as usize;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = vec![Complex64::new(0.0, 0.0); n * n];
    u[idx(0) * n + idx(0)] = Complex64::new(1.0, 0.0);
    for m in 1..=li {
        let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
        u[idx(m) * n + idx(m)] = Complex64::new(sign * h, 0.0);
        u[idx(m) * n + idx(-m)] = Complex64::new(h, 0.0);
        u[idx(-m) * n + idx(-m)] = Complex64::new(0.0, h);
        u[idx(-m) * n + idx(m)] = Complex64::new(0.0, -sign * h);
    }
    u
}

fn factorial(n: i64) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Wigner small-d `d^l_{m' m}(beta)`.
pub fn small_d(l: usize, mp: i64, m: i64, beta: f64) -> f64 {
    let li = l as i64;
    let (s, c) = (beta / 2.0).sin_cos();
    let pref = (factorial(li + mp) * factorial(li - mp) * factorial(li + m) * factorial(li - m)).sqrt();
    let kmin = 0.max(m - mp);
    let kmax = (li + m).min(li - mp);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let sign = if (k - m + mp) % 2 == 0 { 1.0 } else { -1.0 };
        let den = factorial(li + m - k) * factorial(k) * factorial(li - k - mp) * factorial(k - m + mp);
        sum += sign / den
            * c.powi((2 * li - 2 * k + m - mp) as i32)
            * s.powi((2 * k - m + mp) as i32);
    }
    pref * sum
}

/// Complex-basis representation matrix with `Y_c(R r) = D_c(R) Y_c(r)`,
/// given ZYZ angles of the rotation written in the harmonics' polar frame:
/// entries `exp(i m alpha) d_{m m'}(beta) exp(i m' gamma)`.
pub fn wigner_d_complex_euler(l: usize, alpha: f64, beta: f64, gamma: f64) -> Vec<Complex64> {
    let n = 2 * l + 1;
    let li = l as i64;
    let mut d = vec![Complex64::new(0.0, 0.0); n * n];
    for m in -li..=li {
        for mp in -li..=li {
            let phase = Complex64::from_polar(1.0, m as f64 * alpha + mp as f64 * gamma);
            d[(m + li) as usize * n + (mp + li) as usize] = phase * small_d(l, m, mp, beta);
        }
    }
    d
}

fn conjugate_into_real(l: usize, dc: &[Complex64]) -> Matrix {
    let n = 2 * l + 1;
    let u = change_of_basis(l);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    acc += u[i * n + a] * dc[a * n + b] * u[j * n + b].conj();
                }
            }
            out.set(i, j, acc.re);
        }
    }
    out
}

/// Same matrix as [`wigner_d`], built as `U D_complex U^dagger` from Euler
/// angles. Loses accuracy when the rotation is within ~1e-8 of gimbal lock.
pub fn wigner_d_complex_route(l: usize, r: &Rotation) -> Result<Matrix> {
    check_cap(l)?;
    // rotation expressed in the harmonics' polar coordinates
    let cols: Vec<Vec3> = (0..3)
        .map(|j| {
            let mut e = [0.0; 3];
            e[[2, 0, 1][j]] = 1.0;
            to_polar_coords(r.apply(e))
        })
        .collect();
    let mut pm = [[0.0; 3]; 3];
    for (j, col) in cols.iter().enumerate() {
        for i in 0..3 {
            pm[i][j] = col[i];
        }
    }
    let (a, b, g) = Rotation { m: pm }.to_euler();
    Ok(conjugate_into_real(l, &wigner_d_complex_euler(l, a, b, g)))
}

/// `U diag(exp(i m alpha)) U^dagger`: the real representation of a rotation
/// by `alpha` about the polar axis, via the complex basis.
pub fn axial_wigner_d_complex_route(l: usize, alpha: f64) -> Matrix {
    conjugate_into_real(l, &wigner_d_complex_euler(l, alpha, 0.0, 0.0))
}

/// Component order `(0, -1, +1, -2, +2, ...)` that makes axial rotations
/// block diagonal.
pub fn aligned_order(l: usize) -> Vec<usize> {
    let mut order = vec![l];
    for m in 1..=l {
        order.push(l - m);
        order.push(l + m);
    }
    order
}

/// Permutes rows and columns of `d` into [`aligned_order`].
pub fn to_aligned_basis(l: usize, d: &Matrix) -> Matrix {
    let order = aligned_order(l);
    let n = order.len();
    let mut out = Matrix::zeros(n, n);
    for (i, &oi) in order.iter().enumerate() {
        for (j, &oj) in order.iter().enumerate() {
            out.set(i, j, d.get(oi, oj));
        }
    }
    out
}

/// `diag(1, R_1(alpha), ..., R_l(alpha))` in the aligned basis, with `R_m`
/// the SO(2) matrix acting on `(x_{-m}, x_{+m})`.
pub fn block_diagonal_form(l: usize, alpha: f64) -> Matrix {
    let n = 2 * l + 1;
    let mut out = Matrix::zeros(n, n);
    out.set(0, 0, 1.0);
    for m in 1..=l {
        let r = crate::harmonics::so2_rotation_matrix(m, alpha);
        let o = 2 * m - 1;
        for i in 0..2 {
            for j in 0..2 {
                out.set(o + i, o + j, r[i][j]);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::real_spherical_harmonics;
    use crate::rng::stream;

    fn random_unit(rng: &mut impl Rng) -> Vec3 {
        normalize(Rotation::random(rng).apply([0.3, -0.5, 0.81])).unwrap()
    }

    #[test]
    fn euler_identity_and_z_axis() {
        assert!(Rotation::from_euler(0.0, 0.0, 0.0).max_abs_diff(&Rotation::IDENTITY) < 1e-16);
        let r = Rotation::from_euler(0.7, 0.0, 0.0);
        let z = r.apply([0.0, 0.0, 1.0]);
        assert!(norm(sub(z, [0.0, 0.0, 1.0])) < 1e-16);
    }

    #[test]
    fn euler_round_trip() {
        let mut rng = stream(1, "euler");
        for _ in 0..200 {
            let a = rng.gen_range(-PI..PI);
            let b = rng.gen_range(0.01..PI - 0.01);
            let g = rng.gen_range(-PI..PI);
            let r = Rotation::from_euler(a, b, g);
            let (a2, b2, g2) = r.to_euler();
            assert!(Rotation::from_euler(a2, b2, g2).max_abs_diff(&r) < 1e-12);
        }
        for r in [Rotation::about_z(0.4), Rotation::about_z(0.4).compose(&Rotation::about_y(PI))] {
            let (a, b, g) = r.to_euler();
            assert!(Rotation::from_euler(a, b, g).max_abs_diff(&r) < 1e-12);
        }
    }

    #[test]
    fn random_rotations_are_proper() {
        let mut rng = stream(2, "rot");
        for _ in 0..100 {
            let r = Rotation::random(&mut rng);
            assert!(Rotation::from_matrix(r.matrix()).is_ok());
        }
    }

    #[test]
    fn identity_gives_identity() {
        for l in 0..=8 {
            let d = wigner_d(l, &Rotation::IDENTITY).unwrap();
            assert!(d.max_abs_diff(&Matrix::identity(2 * l + 1)) < 1e-15);
        }
        assert!(matches!(
            wigner_d(9, &Rotation::IDENTITY),
            Err(Error::DegreeOverCap { degree: 9, .. })
        ));
    }

    #[test]
    fn harmonic_equivariance() {
        let mut rng = stream(3, "sh-eq");
        for _ in 0..50 {
            let r = Rotation::random(&mut rng);
            let d = random_unit(&mut rng);
            let y = real_spherical_harmonics(8, d).unwrap();
            let yr = real_spherical_harmonics(8, r.apply(d)).unwrap();
            let ds = wigner_d_all(8, &r);
            for l in 0..=8 {
                let rotated = ds[l].matvec(y.block(l));
                for (a, b) in rotated.iter().zip(yr.block(l)) {
                    assert!((a - b).abs() < 1e-12, "l={l}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn orthogonal_and_homomorphic() {
        let mut rng = stream(4, "hom");
        for _ in 0..30 {
            let r1 = Rotation::random(&mut rng);
            let r2 = Rotation::random(&mut rng);
            for l in 0..=6 {
                let d1 = wigner_d(l, &r1).unwrap();
                let d2 = wigner_d(l, &r2).unwrap();
                let d12 = wigner_d(l, &r1.compose(&r2)).unwrap();
                assert!(d1.orthogonality_error() < 1e-12);
                assert!(d12.max_abs_diff(&d1.matmul(&d2)) < 1e-11);
            }
        }
    }

    #[test]
    fn complex_route_agrees_with_recursion() {
        let mut rng = stream(5, "complex");
        for _ in 0..30 {
            let r = Rotation::random(&mut rng);
            for l in 0..=6 {
                let a = wigner_d(l, &r).unwrap();
                let b = wigner_d_complex_route(l, &r).unwrap();
                assert!(a.max_abs_diff(&b) < 1e-10, "l={l}: {}", a.max_abs_diff(&b));
            }
        }
    }

    #[test]
    fn axial_rotation_is_block_diagonal() {
        let mut rng = stream(6, "axial");
        for _ in 0..50 {
            let alpha = rng.gen_range(-PI..PI);
            let r = Rotation::about_axis([0.0, 1.0, 0.0], alpha).unwrap();
            for l in 0..=6 {
                let expect = block_diagonal_form(l, alpha);
                let via_recursion = to_aligned_basis(l, &wigner_d(l, &r).unwrap());
                let via_complex = to_aligned_basis(l, &axial_wigner_d_complex_route(l, alpha));
                assert!(via_recursion.max_abs_diff(&expect) < 1e-12);
                assert!(via_complex.max_abs_diff(&expect) < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_json_is_row_major() {
        let r = Rotation::about_z(PI / 2.0);
        let v = serde_json::to_value(r).unwrap();
        assert!((v[1][0].as_f64().unwrap() - 1.0).abs() < 1e-15);
        let back: Rotation = serde_json::from_value(v).unwrap();
        assert!(back.max_abs_diff(&r) < 1e-16);
        assert!(serde_json::from_str::<Rotation>("[[1,0,0],[0,1,0],[0,0,2]]").is_err());
    }
}
