//! Multiply-count scaling of the SO(3) tensor product, the frame rotation
//! plus SO(2) linear that replaces it, and the SO(2) tensor product.
//!
//! Counts come from running each kernel once with an [`OpCounter`], so they
//! are exact and deterministic. Sizes are regressed as `log(count)` against
//! `log(n + 1)`, where `n + 1` is the number of degrees (or orders) carried.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cg::{escn_so2_linear, so3_tensor_product, PathWeights};
use crate::counter::{Kernel, OpCounter};
use crate::error::Result;
use crate::frame::{from_local_counted, to_local_counted, Frame};
use crate::harmonics::real_spherical_harmonics;
use crate::irreps::{Group, IrrepsLayout, So3Features};
use crate::rng::{normal_vec, stream};
use crate::so2::{enumerate_tp_paths, so2_linear_counted, TpWeights};

pub const SLOPE_SIZES: [usize; 7] = [2, 3, 4, 5, 6, 7, 8];
pub const SO2_TP_SIZES: [usize; 9] = [2, 3, 4, 5, 6, 7, 8, 9, 10];

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn problem(l_max: usize, seed: u64) -> Result<(So3Features, PathWeights, [f64; 3])> {
    let mut rng = stream(seed, "bench");
    let layout = IrrepsLayout::uniform(Group::So3, l_max, 1);
    let x = So3Features::from_vec(&layout, normal_vec(&mut rng, layout.dim()))?;
    let w = PathWeights::random(l_max, l_max, l_max, 1, &mut rng);
    let d = normal_vec(&mut rng, 3);
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    Ok((x, w, [d[0] / n, d[1] / n, d[2] / n]))
}

/// Single-channel SO(3) tensor product over every path with degrees `0..=l_max`.
pub fn so3_tp_multiplies(l_max: usize) -> Result<u64> {
    let (x, w, dir) = problem(l_max, 0)?;
    let sh = real_spherical_harmonics(l_max, dir)?;
    let mut counter = OpCounter::new();
    so3_tensor_product(&x, &sh, &w, &mut counter)?;
    Ok(counter.get(Kernel::So3Tp))
}

/// The same map computed as rotate, SO(2) linear, rotate back.
pub fn escn_multiplies(l_max: usize) -> Result<u64> {
    let (x, w, dir) = problem(l_max, 0)?;
    let frame = Frame::from_direction(dir, l_max)?;
    let lin = escn_so2_linear(&w, l_max)?;
    let mut counter = OpCounter::new();
    let local = to_local_counted(&frame, &x, &mut counter)?;
    let y = so2_linear_counted(&local, &lin, &mut counter)?;
    from_local_counted(&frame, &y, &mut counter)?;
    Ok(counter.get(Kernel::FrameRotation) + counter.get(Kernel::So2Linear))
}

/// Single-channel `v`-fold SO(2) tensor product with orders `0..=m_max`.
pub fn so2_tp_multiplies(m_max: usize, v: usize) -> u64 {
    TpWeights::zeros(m_max, v, 1).multiply_count()
}

/// Path count by exhaustive search over every order tuple and sign pattern,
/// independent of the constructive enumeration. A chain whose final order is
/// negative is folded onto its conjugate.
pub fn brute_force_path_count(m_max: usize, v: usize) -> usize {
    let mut seen = BTreeSet::new();
    let base = m_max + 1;
    for code in 0..base.pow(v as u32) {
        let orders: Vec<i64> = (0..v).map(|k| (code / base.pow(k as u32) % base) as i64).collect();
        'signs: for bits in 0..1u32 << v {
            let mut chain = Vec::with_capacity(v);
            let mut q = 0i64;
            for (k, &m) in orders.iter().enumerate() {
                let negative = bits >> k & 1 == 1;
                if m == 0 && negative {
                    continue 'signs;
                }
                let next = if negative { q - m } else { q + m };
                if next.abs() > m_max as i64 || (m > 0 && q != 0 && next == 0) {
                    continue 'signs;
                }
                chain.push(if negative { -m } else { m });
                q = next;
            }
            if q == 0 && orders.iter().any(|&m| m > 0) {
                continue;
            }
            if q < 0 {
                chain.iter_mut().for_each(|m| *m = -*m);
            }
            seen.insert(chain);
        }
    }
    seen.len()
}

/// Median wall-clock milliseconds of the SO(3) tensor product and of the
/// rotate, SO(2) linear, rotate back route at `l_max`.
pub fn kernel_timings(l_max: usize, repeats: usize) -> Result<(f64, f64)> {
    let (x, w, dir) = problem(l_max, 0)?;
    let sh = real_spherical_harmonics(l_max, dir)?;
    let lin = escn_so2_linear(&w, l_max)?;
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let mut tp = Vec::with_capacity(repeats);
    let mut rot = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        so3_tensor_product(&x, &sh, &w, &mut OpCounter::new())?;
        tp.push(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        let frame = Frame::from_direction(dir, l_max)?;
        let mut c = OpCounter::new();
        let y = so2_linear_counted(&to_local_counted(&frame, &x, &mut c)?, &lin, &mut c)?;
        from_local_counted(&frame, &y, &mut c)?;
        rot.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(tp), median(rot)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub kernel: String,
    pub sizes: Vec<usize>,
    pub counts: Vec<u64>,
    /// Added to each size before taking the log.
    pub offset: usize,
    pub slope: f64,
    /// Slope with the other offset (0 <-> 1).
    pub alt_slope: f64,
}

impl Series {
    pub fn new(kernel: &str, sizes: &[usize], counts: Vec<u64>, offset: usize) -> Self {
        let fit = |off: usize| {
            let xs: Vec<f64> = sizes.iter().map(|&n| (n + off) as f64).collect();
            let ys: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            loglog_slope(&xs, &ys)
        };
        Self {
            kernel: kernel.to_string(),
            sizes: sizes.to_vec(),
            slope: fit(offset),
            alt_slope: fit(1 - offset.min(1)),
            counts,
            offset,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    pub so3_tp: Series,
    pub rotation_so2_linear: Series,
    pub so2_tp_paths: Series,
    pub so2_tp_multiplies: Series,
}

/// Runs every series: SO(3) kernels over `l_sizes`, the `v`-fold SO(2)
/// tensor product over `m_sizes`.
pub fn complexity(l_sizes: &[usize], m_sizes: &[usize], v: usize) -> Result<Complexity> {
    let tp = l_sizes.iter().map(|&l| so3_tp_multiplies(l)).collect::<Result<Vec<_>>>()?;
    let rot = l_sizes.iter().map(|&l| escn_multiplies(l)).collect::<Result<Vec<_>>>()?;
    let paths = m_sizes.iter().map(|&m| enumerate_tp_paths(m, v).len() as u64).collect();
    let mults = m_sizes.iter().map(|&m| so2_tp_multiplies(m, v)).collect();
    Ok(Complexity {
        so3_tp: Series::new("so3_tp", l_sizes, tp, 1),
        rotation_so2_linear: Series::new("rotation_so2_linear", l_sizes, rot, 1),
        so2_tp_paths: Series::new("so2_tp_paths", m_sizes, paths, 0),
        so2_tp_multiplies: Series::new("so2_tp", m_sizes, mults, 0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_agrees_with_enumeration() {
        for m in 0..=4 {
            for v in 2..=3 {
                assert_eq!(brute_force_path_count(m, v), enumerate_tp_paths(m, v).len());
            }
        }
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [2.0, 3.0, 5.0, 9.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 7.0 * x.powf(2.5)).collect();
        assert!((loglog_slope(&xs, &ys) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn slopes_in_expected_ranges() {
        let c = complexity(&SLOPE_SIZES, &SO2_TP_SIZES, 2).unwrap();
        for s in [&c.so3_tp, &c.rotation_so2_linear, &c.so2_tp_paths, &c.so2_tp_multiplies] {
            println!("{} {:?} {:.3} {:.3}", s.kernel, s.counts, s.slope, s.alt_slope);
        }
        assert!((5.0..=6.5).contains(&c.so3_tp.slope));
        assert!((2.5..=3.5).contains(&c.rotation_so2_linear.slope));
        assert!((1.7..=2.3).contains(&c.so2_tp_multiplies.slope));
    }
}
