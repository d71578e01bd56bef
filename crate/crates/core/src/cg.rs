//! Real-basis Clebsch-Gordan coefficients, the reference SO(3) tensor
//! product, the SO(2)-linear weights equivalent to it, and the expansion of
//! irreps into matrix sub-blocks.
//!
//! Complex coefficients are computed exactly with Racah's formula and
//! conjugated into the real basis by the same `U_l` used for Wigner-D, so
//! `sum_{m1 m2} C[m1,m2,m3] C[m1,m2,m3'] = delta` with constant 1.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counter::{Kernel, OpCounter};
use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So3Features};
use crate::linalg::Matrix;
use crate::rotation::change_of_basis;
use crate::so2::So2LinearWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct CgTable {
    pub l1: usize,
    pub l2: usize,
    pub l3: usize,
    data: Vec<f64>,
}

impl CgTable {
    /// Indices are `m + l` for each degree.
    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        let n2 = 2 * self.l2 + 1;
        let n3 = 2 * self.l3 + 1;
        self.data[(i1 * n2 + i2) * n3 + i3]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (2 * self.l1 + 1, 2 * self.l2 + 1, 2 * self.l3 + 1)
    }
}

pub fn triangle(l1: usize, l2: usize, l3: usize) -> bool {
    l3 >= l1.abs_diff(l2) && l3 <= l1 + l2
}

fn fact(n: i64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, k| acc * BigInt::from(k))
}

/// `<j1 m1 j2 m2 | J M>` with the Condon-Shortley phase.
fn complex_cg(j1: i64, m1: i64, j2: i64, m2: i64, j: i64, m: i64) -> f64 {
    if m1 + m2 != m || m1.abs() > j1 || m2.abs() > j2 || m.abs() > j {
        return 0.0;
    }
    let pre = BigRational::new(
        BigInt::from(2 * j + 1) * fact(j + j1 - j2) * fact(j - j1 + j2) * fact(j1 + j2 - j),
        fact(j1 + j2 + j + 1),
    ) * BigRational::from_integer(
        fact(j + m) * fact(j - m) * fact(j1 - m1) * fact(j1 + m1) * fact(j2 - m2) * fact(j2 + m2),
    );
    let kmin = 0.max(j2 - j - m1).max(j1 + m2 - j);
    let kmax = (j1 + j2 - j).min(j1 - m1).min(j2 + m2);
    let mut sum = BigRational::zero();
    for k in kmin..=kmax {
        let den = fact(k)
            * fact(j1 + j2 - j - k)
            * fact(j1 - m1 - k)
            * fact(j2 + m2 - k)
            * fact(j - j2 + m1 + k)
            * fact(j - j1 - m2 + k);
        let term = BigRational::new(BigInt::one(), den);
        if k % 2 == 0 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    if sum.is_zero() {
        return 0.0;
    }
    let sign = if sum.is_negative() { -1.0 } else { 1.0 };
    // sum^2 * pre is an exact rational; one rounding at the end
    let sq = &sum * &sum * pre;
    sign * sq.to_f64().expect("finite").sqrt()
}

fn build_table(l1: usize, l2: usize, l3: usize) -> CgTable {
    let (n1, n2, n3) = (2 * l1 + 1, 2 * l2 + 1, 2 * l3 + 1);
    let (i1, i2, i3) = (l1 as i64, l2 as i64, l3 as i64);
    let mut cc = vec![0.0; n1 * n2 * n3];
    for a in 0..n1 {
        for b in 0..n2 {
            let (m1, m2) = (a as i64 - i1, b as i64 - i2);
            let m3 = m1 + m2;
            if m3.abs() <= i3 {
                cc[(a * n2 + b) * n3 + (m3 + i3) as usize] = complex_cg(i1, m1, i2, m2, i3, m3);
            }
        }
    }
    let (u1, u2, u3) = (change_of_basis(l1), change_of_basis(l2), change_of_basis(l3));
    let mut re = vec![0.0; n1 * n2 * n3];
    let mut im = vec![0.0; n1 * n2 * n3];
    for r1 in 0..n1 {
        for r2 in 0..n2 {
            for r3 in 0..n3 {
                let mut acc = Complex64::new(0.0, 0.0);
                for a in 0..n1 {
                    let ua = u1[r1 * n1 + a].conj();
                    if ua == Complex64::new(0.0, 0.0) {
                        continue;
                    }
                    for b in 0..n2 {
                        let ub = u2[r2 * n2 + b].conj();
                        if ub == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for c in 0..n3 {
                            let v = cc[(a * n2 + b) * n3 + c];
                            if v != 0.0 {
                                acc += u3[r3 * n3 + c] * ua * ub * v;
                            }
                        }
                    }
                }
                re[(r1 * n2 + r2) * n3 + r3] = acc.re;
                im[(r1 * n2 + r2) * n3 + r3] = acc.im;
            }
        }
    }
    // the result is either purely real or purely imaginary
    let re_max = re.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let im_max = im.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut data = if re_max >= im_max { re } else { im };
    for v in &mut data {
        if v.abs() < 1e-15 {
            *v = 0.0;
        }
    }
    CgTable { l1, l2, l3, data }
}

type Cache = Mutex<HashMap<(usize, usize, usize), Arc<CgTable>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Memoized real CG table. Built while holding the cache lock, so
/// concurrent first use never duplicates work.
pub fn cg_table(l1: usize, l2: usize, l3: usize) -> Result<Arc<CgTable>> {
    if !triangle(l1, l2, l3) {
        return Err(Error::Triangle(l1, l2, l3));
    }
    let mut guard = cache().lock().unwrap_or_else(|e| e.into_inner());
    Ok(guard
        .entry((l1, l2, l3))
        .or_insert_with(|| Arc::new(build_table(l1, l2, l3)))
        .clone())
}

/// Per-path, per-channel weights `h_{l_i, l_f, l_o}` for the SO(3) tensor
/// product with a spherical-harmonic filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathWeights {
    pub channels: usize,
    pub lo_max: usize,
    pub paths: BTreeMap<(usize, usize, usize), Vec<f64>>,
}

impl PathWeights {
    pub fn new(channels: usize, lo_max: usize) -> Self {
        Self {
            channels,
            lo_max,
            paths: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, li: usize, lf: usize, lo: usize, w: Vec<f64>) -> Result<()> {
        if !triangle(li, lf, lo) {
            return Err(Error::Triangle(li, lf, lo));
        }
        if w.len() != self.channels {
            return Err(Error::ShapeMismatch(format!(
                "path weight has {} channels, expected {}",
                w.len(),
                self.channels
            )));
        }
        if lo > self.lo_max {
            self.lo_max = lo;
        }
        self.paths.insert((li, lf, lo), w);
        Ok(())
    }

    /// Every triangle-valid path with `l_i <= li_max`, `l_f <= lf_max`,
    /// `l_o <= lo_max`, weights standard normal.
    pub fn random<R: Rng + ?Sized>(
        li_max: usize,
        lf_max: usize,
        lo_max: usize,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut pw = Self::new(channels, lo_max);
        for li in 0..=li_max {
            for lf in 0..=lf_max {
                for lo in 0..=lo_max {
                    if triangle(li, lf, lo) {
                        let w = crate::rng::normal_vec(rng, channels);
                        pw.paths.insert((li, lf, lo), w);
                    }
                }
            }
        }
        pw
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for w in z.paths.values_mut() {
            w.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }
}

/// Full CG contraction `f^{lo}_c = sum_{li,lf} h_c sum_{mi,mf} C x^{li}_{c,mi} Y^{lf}_{mf}`.
///
/// `x` must have the same multiplicity at every degree; the output carries
/// that multiplicity at every degree `0..=weights.lo_max`.
pub fn so3_tensor_product(
    x: &So3Features,
    sh: &So3Features,
    weights: &PathWeights,
    counter: &mut OpCounter,
) -> Result<So3Features> {
    let ch = weights.channels;
    for &(l, mult) in x.layout().entries() {
        if mult != ch {
            return Err(Error::LayoutMismatch(format!(
                "degree {l} has {mult} channels, weights have {ch}"
            )));
        }
    }
    let out_layout = IrrepsLayout::uniform(Group::So3, weights.lo_max, ch);
    let mut out = So3Features::zeros(&out_layout)?;
    let mut mults = 0u64;
    for (&(li, lf, lo), h) in &weights.paths {
        if !x.layout().contains(li) || !sh.layout().contains(lf) {
            continue;
        }
        let table = cg_table(li, lf, lo)?;
        let (ni, nf, no) = table.shape();
        let xb = x.block(li);
        let yb = &sh.block(lf)[..nf];
        for c in 0..ch {
            let xc = &xb[c * ni..(c + 1) * ni];
            let mut acc = vec![0.0; no];
            for a in 0..ni {
                for b in 0..nf {
                    let p = xc[a] * yb[b];
                    mults += 1;
                    for (o, acc_o) in acc.iter_mut().enumerate() {
                        *acc_o += table.get(a, b, o) * p;
                    }
                    mults += no as u64;
                }
            }
            let dst = &mut out.block_mut(lo)[c * no..(c + 1) * no];
            for (d, v) in dst.iter_mut().zip(&acc) {
                *d += h[c] * v;
            }
            mults += no as u64;
        }
    }
    counter.add(Kernel::So3Tp, mults);
    Ok(out)
}

/// SO(2)-linear weights for one `(l_i, l_o)` pair at one order: `w1` acts
/// like the real part, `w2` like the imaginary part. At `m = 0` only `w1`
/// is used.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderWeights {
    pub m: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// `w_m = sum_{l_f} h_{l_i,l_f,l_o} c_m` with the filter taken at the target
/// axis, where only `m_f = 0` survives and `Y_{l_f,0} = sqrt((2 l_f + 1) / 4 pi)`.
/// Returns one entry per `m = 0..=min(l_i, l_o)`, each per channel.
pub fn escn_weights_from_paths(weights: &PathWeights, li: usize, lo: usize) -> Result<Vec<OrderWeights>> {
    let ch = weights.channels;
    let top = li.min(lo);
    let mut out: Vec<OrderWeights> = (0..=top)
        .map(|m| OrderWeights {
            m,
            w1: vec![0.0; ch],
            w2: vec![0.0; ch],
        })
        .collect();
    for (&(pi, lf, po), h) in &weights.paths {
        if pi != li || po != lo {
            continue;
        }
        let table = cg_table(li, lf, lo)?;
        let y0 = ((2 * lf + 1) as f64 / (4.0 * std::f64::consts::PI)).sqrt();
        for (m, ow) in out.iter_mut().enumerate() {
            let (c1, c2) = if m == 0 {
                (table.get(li, lf, lo), 0.0)
            } else {
                (table.get(li + m, lf, lo + m), table.get(li + m, lf, lo - m))
            };
            for c in 0..ch {
                ow.w1[c] += h[c] * c1 * y0;
                ow.w2[c] += h[c] * c2 * y0;
            }
        }
    }
    Ok(out)
}

/// Assembles [`escn_weights_from_paths`] for every `(l_i, l_o)` into one
/// SO(2) linear map between the local layouts of degrees `0..=li_max` and
/// `0..=weights.lo_max`. Channels stay independent, so each order's matrix
/// is diagonal in the channel index.
pub fn escn_so2_linear(weights: &PathWeights, li_max: usize) -> Result<So2LinearWeights> {
    let ch = weights.channels;
    let lo_max = weights.lo_max;
    let in_local = IrrepsLayout::uniform(Group::So3, li_max, ch).to_local_layout()?;
    let out_local = IrrepsLayout::uniform(Group::So3, lo_max, ch).to_local_layout()?;
    let mut lin = So2LinearWeights::zeros(&in_local, &out_local)?;
    for li in 0..=li_max {
        for lo in 0..=lo_max {
            for ow in escn_weights_from_paths(weights, li, lo)? {
                let m = ow.m;
                let Some(order) = lin.order_mut(m) else { continue };
                let cols = order.w1.cols();
                for c in 0..ch {
                    let row = (lo - m) * ch + c;
                    let col = (li - m) * ch + c;
                    order.w1.data[row * cols + col] = ow.w1[c];
                    if let Some(w2) = &mut order.w2 {
                        w2.data[row * cols + col] = ow.w2[c];
                    }
                }
            }
        }
    }
    Ok(lin)
}

/// `B[m1, m2] = sum_{l3} sum_{m3} C[m1, m2, m3] (sum_c w^{l3}_c f^{l3}_{c, m3})`.
/// Degrees missing from `feature` or `w` contribute zero.
pub fn expansion(feature: &So3Features, w: &BTreeMap<usize, Vec<f64>>, l1: usize, l2: usize) -> Result<Matrix> {
    let (n1, n2) = (2 * l1 + 1, 2 * l2 + 1);
    let mut out = Matrix::zeros(n1, n2);
    for l3 in l1.abs_diff(l2)..=(l1 + l2) {
        let (Some(wl), true) = (w.get(&l3), feature.layout().contains(l3)) else {
            continue;
        };
        let mult = feature.layout().mult(l3);
        if wl.len() != mult {
            return Err(Error::ShapeMismatch(format!(
                "expansion weight for degree {l3} has {} entries, feature has {mult} channels",
                wl.len()
            )));
        }
        let n3 = 2 * l3 + 1;
        let mut f = vec![0.0; n3];
        let fb = feature.block(l3);
        for c in 0..mult {
            for k in 0..n3 {
                f[k] += wl[c] * fb[c * n3 + k];
            }
        }
        let table = cg_table(l1, l2, l3)?;
        for a in 0..n1 {
            for b in 0..n2 {
                let mut s = 0.0;
                for (k, fk) in f.iter().enumerate() {
                    s += table.get(a, b, k) * fk;
                }
                *out.at_mut(a, b) += s;
            }
        }
    }
    Ok(out)
}

/// VJP of [`expansion`] given the block cotangent `g`; accumulates into
/// `grad_feature` and `grad_w` (same shapes as the primal arguments).
pub fn expansion_vjp(
    feature: &So3Features,
    w: &BTreeMap<usize, Vec<f64>>,
    l1: usize,
    l2: usize,
    g: &Matrix,
    grad_feature: &mut So3Features,
    grad_w: &mut BTreeMap<usize, Vec<f64>>,
) -> Result<()> {
    for l3 in l1.abs_diff(l2)..=(l1 + l2) {
        let (Some(wl), true) = (w.get(&l3), feature.layout().contains(l3)) else {
            continue;
        };
        let table = cg_table(l1, l2, l3)?;
        let gf = decompose_one(&table, g);
        let mult = feature.layout().mult(l3);
        let n3 = 2 * l3 + 1;
        let fb = feature.block(l3);
        let gw = grad_w
            .get_mut(&l3)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing gradient slot for degree {l3}")))?;
        let gb = grad_feature.block_mut(l3);
        for c in 0..mult {
            let mut dot = 0.0;
            for k in 0..n3 {
                dot += gf[k] * fb[c * n3 + k];
                gb[c * n3 + k] += wl[c] * gf[k];
            }
            gw[c] += dot;
        }
    }
    Ok(())
}

fn decompose_one(table: &CgTable, block: &Matrix) -> Vec<f64> {
    let (n1, n2, n3) = table.shape();
    let mut f = vec![0.0; n3];
    for a in 0..n1 {
        for b in 0..n2 {
            let v = block.get(a, b);
            for (k, fk) in f.iter_mut().enumerate() {
                *fk += table.get(a, b, k) * v;
            }
        }
    }
    f
}

/// Inverse of [`expansion`] on its range: projects a block onto each
/// coupled degree, `f^{l3}[m3] = sum_{m1 m2} C[m1, m2, m3] B[m1, m2]`.
pub fn decomposition(block: &Matrix, l1: usize, l2: usize) -> Result<BTreeMap<usize, Vec<f64>>> {
    if block.rows != 2 * l1 + 1 || block.cols != 2 * l2 + 1 {
        return Err(Error::ShapeMismatch(format!(
            "block is {}x{}, expected {}x{}",
            block.rows,
            block.cols,
            2 * l1 + 1,
            2 * l2 + 1
        )));
    }
    let mut out = BTreeMap::new();
    for l3 in l1.abs_diff(l2)..=(l1 + l2) {
        let table = cg_table(l1, l2, l3)?;
        out.insert(l3, decompose_one(&table, block));
    }
    Ok(out)
}
