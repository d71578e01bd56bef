//! Real spherical harmonics and real circular harmonics.
//!
//! Spherical harmonics are orthonormal over the unit sphere, carry no
//! Condon-Shortley phase, and use the frame target axis `v = y` as their
//! polar axis. Azimuth is measured from `z` towards `x`, which makes the
//! relabelling `(x, y, z) -> (z, x, y)` a proper rotation onto the usual
//! z-polar convention. With that choice the pair `(Y_{l,-m}, Y_{l,m})` is
//! proportional to `(sin m phi, cos m phi)`, the same ordering as the
//! circular harmonics `B^m`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So2Features, So3Features};

pub const UNIT_TOLERANCE: f64 = 1e-12;

/// Maps a global vector to the z-polar coordinates the harmonics are
/// written in.
#[inline]
pub(crate) fn to_polar_coords(v: [f64; 3]) -> [f64; 3] {
    [v[2], v[0], v[1]]
}

fn norm_factor(l: usize, m: usize) -> f64 {
    // (l-m)!/(l+m)! as a running product keeps this exact for small l
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Single-channel layout `1x0e+1x1e+...+1x{l_max}e`.
pub fn sh_layout(l_max: usize) -> IrrepsLayout {
    IrrepsLayout::uniform(Group::So3, l_max, 1)
}

pub fn real_spherical_harmonics(l_max: usize, direction: [f64; 3]) -> Result<So3Features> {
    let n = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if (n - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NotUnit(n));
    }
    Ok(sh_unchecked(l_max, direction))
}

pub(crate) fn sh_unchecked(l_max: usize, direction: [f64; 3]) -> So3Features {
    let [x, y, z] = to_polar_coords(direction);
    let layout = sh_layout(l_max);
    let mut out = So3Features::zeros(&layout).expect("so3 layout");

    // cos_m + i sin_m = (x + i y)^m
    let mut cs = vec![(1.0f64, 0.0f64); l_max + 1];
    for m in 1..=l_max {
        let (c, s) = cs[m - 1];
        cs[m] = (c * x - s * y, c * y + s * x);
    }

    // q[l] = P_l^m(z) / sin^m(theta) for the current m
    let mut q = vec![0.0; l_max + 1];
    let mut qmm = 1.0;
    for m in 0..=l_max {
        if m > 0 {
            qmm *= (2 * m - 1) as f64;
        }
        q[m] = qmm;
        if m < l_max {
            q[m + 1] = (2 * m + 1) as f64 * z * qmm;
        }
        for l in (m + 2)..=l_max {
            q[l] = ((2 * l - 1) as f64 * z * q[l - 1] - (l + m - 1) as f64 * q[l - 2])
                / (l - m) as f64;
        }
        for l in m..=l_max {
            let block = out.block_mut(l);
            if m == 0 {
                block[l] = norm_factor(l, 0) * q[l];
            } else {
                let a = std::f64::consts::SQRT_2 * norm_factor(l, m) * q[l];
                block[l + m] = a * cs[m].0;
                block[l - m] = a * cs[m].1;
            }
        }
    }
    out
}

/// Single-channel layout `1x0m+1x1m+...+1x{m_max}m`.
pub fn ch_layout(m_max: usize) -> IrrepsLayout {
    IrrepsLayout::uniform(Group::So2, m_max, 1)
}

/// `B^0 = [1]`, `B^m(delta) = [sin m delta, cos m delta]`.
pub fn circular_harmonics(m_max: usize, angle: f64) -> So2Features {
    let mut out = So2Features::zeros(&ch_layout(m_max)).expect("so2 layout");
    out.block_mut(0)[0] = 1.0;
    for m in 1..=m_max {
        let (s, c) = (m as f64 * angle).sin_cos();
        let b = out.block_mut(m);
        b[0] = s;
        b[1] = c;
    }
    out
}

/// The 2x2 SO(2) representation matrix at order `m > 0`, acting on
/// `(x_{-m}, x_{+m})`: `[[cos, sin], [-sin, cos]]` of `m * angle`.
pub fn so2_rotation_matrix(m: usize, angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = (m as f64 * angle).sin_cos();
    [[c, s], [-s, c]]
}

/// Applies the order-wise SO(2) rotation to every channel of `x`.
pub fn rotate_so2(x: &So2Features, angle: f64) -> So2Features {
    let mut out = x.clone();
    for &(m, mult) in x.layout().entries() {
        if m == 0 {
            continue;
        }
        let r = so2_rotation_matrix(m, angle);
        let b = out.block_mut(m);
        for c in 0..mult {
            let (xm, xp) = (b[2 * c], b[2 * c + 1]);
            b[2 * c] = r[0][0] * xm + r[0][1] * xp;
            b[2 * c + 1] = r[1][0] * xm + r[1][1] * xp;
        }
    }
    out
}
