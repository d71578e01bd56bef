use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counter::{Kernel, OpCounter};
use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So2Features};
use crate::params::{join, ParamSet, Tensor};

/// One chained product `prod_k x_k^{(m_k)}` with `x` conjugated where the
/// sign is `-1`. The output order is the final signed partial sum.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct So2TpPath {
    pub orders: Vec<usize>,
    pub signs: Vec<i8>,
    pub m_out: usize,
}

impl So2TpPath {
    pub fn arity(&self) -> usize {
        self.orders.len()
    }

    /// Multiplies per channel: the chain of complex/real products plus the
    /// weight.
    pub fn multiply_count(&self) -> u64 {
        let mut n = 0;
        let mut acc_complex = self.orders[0] > 0;
        for &m in &self.orders[1..] {
            n += match (acc_complex, m > 0) {
                (true, true) => 4,
                (false, false) => 1,
                _ => 2,
            };
            acc_complex |= m > 0;
        }
        n + if self.m_out > 0 { 2 } else { 1 }
    }
}

/// All chains of `v` orders in `0..=m_max` with signs, such that every
/// signed partial sum stays within `[-m_max, m_max]`, no step cancels a
/// nonzero partial sum to zero, and the final sum is positive (or every
/// order is zero). A zero order always carries sign `+1`, and a chain with
/// a negative final sum is the conjugate of one listed here.
pub fn enumerate_tp_paths(m_max: usize, v: usize) -> Vec<So2TpPath> {
    fn rec(m_max: i64, v: usize, q: i64, orders: &mut Vec<usize>, signs: &mut Vec<i8>, out: &mut Vec<So2TpPath>) {
        if orders.len() == v {
            if q > 0 || orders.iter().all(|&m| m == 0) {
                out.push(So2TpPath {
                    orders: orders.clone(),
                    signs: signs.clone(),
                    m_out: q as usize,
                });
            }
            return;
        }
        for m in 0..=m_max {
            let choices: &[i8] = if m == 0 { &[1] } else { &[-1, 1] };
            for &s in choices {
                let next = q + i64::from(s) * m;
                if next.abs() > m_max || (m > 0 && q != 0 && next == 0) {
                    continue;
                }
                orders.push(m as usize);
                signs.push(s);
                rec(m_max, v, next, orders, signs, out);
                orders.pop();
                signs.pop();
            }
        }
    }
    if v < 2 {
        return Vec::new();
    }
    let mut out = Vec::new();
    rec(m_max as i64, v, 0, &mut Vec::new(), &mut Vec::new(), &mut out);
    out.sort();
    out.dedup();
    out
}

#[inline]
fn read(block: &[f64], m: usize, c: usize) -> Complex64 {
    if m == 0 {
        Complex64::new(block[c], 0.0)
    } else {
        Complex64::new(block[2 * c + 1], block[2 * c])
    }
}

#[inline]
fn write(block: &mut [f64], m: usize, c: usize, z: Complex64, accumulate: bool) {
    if m == 0 {
        if accumulate {
            block[c] += z.re;
        } else {
            block[c] = z.re;
        }
    } else if accumulate {
        block[2 * c] += z.im;
        block[2 * c + 1] += z.re;
    } else {
        block[2 * c] = z.im;
        block[2 * c + 1] = z.re;
    }
}

fn pair_check(len1: usize, m1: usize, len2: usize, m2: usize, sign: i8, m_max: usize) -> Result<(usize, usize)> {
    let w1 = if m1 == 0 { 1 } else { 2 };
    let w2 = if m2 == 0 { 1 } else { 2 };
    let c = len1 / w1;
    if len2 / w2 != c || len1 % w1 != 0 || len2 % w2 != 0 {
        return Err(Error::ShapeMismatch("tp operands need matching channel counts".into()));
    }
    let m_o = match sign {
        1 => m1 + m2,
        -1 if m1 > m2 => m1 - m2,
        -1 => return Err(Error::InvalidOrder(format!("m1 = {m1} must exceed m2 = {m2} for the difference path"))),
        _ => return Err(Error::InvalidOrder(format!("sign must be +1 or -1, got {sign}"))),
    };
    if m_o > m_max {
        return Err(Error::InvalidOrder(format!("output order {m_o} exceeds {m_max}")));
    }
    Ok((c, m_o))
}

/// Channel-wise product of an order-`m1` and an order-`m2` block:
/// `x1 x2` at `m1 + m2` for `sign = +1`, `x1 conj(x2)` at `m1 - m2` for
/// `sign = -1` (requires `m1 > m2`). Returns the block and its order.
pub fn so2_tp_pair(x1: &[f64], m1: usize, x2: &[f64], m2: usize, sign: i8, m_max: usize) -> Result<(Vec<f64>, usize)> {
    let (c, m_o) = pair_check(x1.len(), m1, x2.len(), m2, sign, m_max)?;
    let mut out = vec![0.0; if m_o == 0 { c } else { 2 * c }];
    for ch in 0..c {
        let a = read(x1, m1, ch);
        let b = read(x2, m2, ch);
        let z = if sign > 0 { a * b } else { a * b.conj() };
        write(&mut out, m_o, ch, z, false);
    }
    Ok((out, m_o))
}

/// VJP of [`so2_tp_pair`]: cotangents of both operands.
pub fn so2_tp_pair_vjp(
    x1: &[f64],
    m1: usize,
    x2: &[f64],
    m2: usize,
    sign: i8,
    m_max: usize,
    gy: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (c, m_o) = pair_check(x1.len(), m1, x2.len(), m2, sign, m_max)?;
    let mut g1 = vec![0.0; x1.len()];
    let mut g2 = vec![0.0; x2.len()];
    for ch in 0..c {
        let a = read(x1, m1, ch);
        let b = read(x2, m2, ch);
        let gz = read(gy, m_o, ch);
        let qa = gz.conj() * if sign > 0 { b } else { b.conj() };
        write(&mut g1, m1, ch, qa.conj(), false);
        let qb = gz.conj() * a;
        write(&mut g2, m2, ch, if sign > 0 { qb.conj() } else { qb }, false);
    }
    Ok((g1, g2))
}

/// Paths with one weight per (path, channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpWeights {
    pub m_max: usize,
    pub v: usize,
    pub channels: usize,
    pub paths: Vec<So2TpPath>,
    pub w: Tensor,
}

impl TpWeights {
    pub fn zeros(m_max: usize, v: usize, channels: usize) -> Self {
        let paths = enumerate_tp_paths(m_max, v);
        let w = Tensor::zeros(&[paths.len(), channels]);
        Self {
            m_max,
            v,
            channels,
            paths,
            w,
        }
    }

    pub fn init<R: Rng + ?Sized>(m_max: usize, v: usize, channels: usize, rng: &mut R) -> Self {
        let mut t = Self::zeros(m_max, v, channels);
        let fan = t.paths.len().max(1);
        t.w = Tensor::uniform(&[t.paths.len(), channels], fan, rng);
        t
    }

    pub fn layout(&self) -> IrrepsLayout {
        IrrepsLayout::uniform(Group::So2, self.m_max, self.channels)
    }

    pub fn multiply_count(&self) -> u64 {
        self.paths.iter().map(So2TpPath::multiply_count).sum::<u64>() * self.channels as u64
    }
}

impl ParamSet for TpWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "w"), &self.w);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w"), &mut self.w);
    }
}

fn contract_check(features: &[&So2Features], weights: &TpWeights) -> Result<IrrepsLayout> {
    if features.len() != weights.v {
        return Err(Error::ShapeMismatch(format!(
            "{} feature sets for arity {}",
            features.len(),
            weights.v
        )));
    }
    let layout = weights.layout();
    for f in features {
        if f.layout() != &layout {
            return Err(Error::LayoutMismatch(format!("tp expects {layout}, got {}", f.layout())));
        }
    }
    Ok(layout)
}

/// `out^{(m_o)}_c = sum_{paths -> m_o} w_{p,c} prod_k x_k^{(m_k)}_c` with
/// conjugation where a sign is negative.
pub fn so2_tp_contract(features: &[&So2Features], weights: &TpWeights) -> Result<So2Features> {
    let layout = contract_check(features, weights)?;
    let mut out = So2Features::zeros(&layout)?;
    for (p, path) in weights.paths.iter().enumerate() {
        for c in 0..weights.channels {
            let mut z = Complex64::new(weights.w.data[p * weights.channels + c], 0.0);
            for (k, (&m, &s)) in path.orders.iter().zip(&path.signs).enumerate() {
                let f = read(features[k].block(m), m, c);
                z *= if s > 0 { f } else { f.conj() };
            }
            write(out.block_mut(path.m_out), path.m_out, c, z, true);
        }
    }
    Ok(out)
}

pub fn so2_tp_contract_counted(features: &[&So2Features], weights: &TpWeights, counter: &mut OpCounter) -> Result<So2Features> {
    let out = so2_tp_contract(features, weights)?;
    counter.add(Kernel::So2Tp, weights.multiply_count());
    Ok(out)
}

/// Returns one cotangent per input feature set and accumulates weight
/// gradients into `grad`.
pub fn so2_tp_contract_vjp(
    features: &[&So2Features],
    weights: &TpWeights,
    gy: &So2Features,
    grad: &mut TpWeights,
) -> Result<Vec<So2Features>> {
    let layout = contract_check(features, weights)?;
    let mut gx: Vec<So2Features> = (0..weights.v)
        .map(|_| So2Features::zeros(&layout))
        .collect::<Result<_>>()?;
    let v = weights.v;
    let mut factors = vec![Complex64::new(0.0, 0.0); v];
    let mut prefix = vec![Complex64::new(1.0, 0.0); v + 1];
    let mut suffix = vec![Complex64::new(1.0, 0.0); v + 1];
    for (p, path) in weights.paths.iter().enumerate() {
        for c in 0..weights.channels {
            for k in 0..v {
                let m = path.orders[k];
                let f = read(features[k].block(m), m, c);
                factors[k] = if path.signs[k] > 0 { f } else { f.conj() };
            }
            for k in 0..v {
                prefix[k + 1] = prefix[k] * factors[k];
            }
            for k in (0..v).rev() {
                suffix[k] = suffix[k + 1] * factors[k];
            }
            let gz = read(gy.block(path.m_out), path.m_out, c);
            let w = weights.w.data[p * weights.channels + c];
            grad.w.data[p * weights.channels + c] += (gz.conj() * prefix[v]).re;
            for k in 0..v {
                let q = gz.conj() * prefix[k] * suffix[k + 1] * w;
                let m = path.orders[k];
                let ga = if path.signs[k] > 0 { q.conj() } else { q };
                write(gx[k].block_mut(m), m, c, ga, true);
            }
        }
    }
    Ok(gx)
}
