use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::counter::{Kernel, OpCounter};
use crate::error::{Error, Result};
use crate::irreps::{Group, IrrepsLayout, So2Features};
use crate::params::{join, ParamSet, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderLinear {
    pub m: usize,
    pub w1: Tensor,
    /// Absent at `m = 0`.
    pub w2: Option<Tensor>,
}

/// Independent weights per order. Orders of the output layout that the
/// input lacks produce zeros and carry no weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct So2LinearWeights {
    pub in_layout: IrrepsLayout,
    pub out_layout: IrrepsLayout,
    pub orders: Vec<OrderLinear>,
}

fn check_so2(l: &IrrepsLayout) -> Result<()> {
    if l.group() != Group::So2 {
        return Err(Error::LayoutMismatch(format!("{l} is not an SO(2) layout")));
    }
    Ok(())
}

impl So2LinearWeights {
    pub fn zeros(in_layout: &IrrepsLayout, out_layout: &IrrepsLayout) -> Result<Self> {
        check_so2(in_layout)?;
        check_so2(out_layout)?;
        let orders = out_layout
            .entries()
            .iter()
            .filter(|(m, _)| in_layout.contains(*m))
            .map(|&(m, cout)| {
                let cin = in_layout.mult(m);
                OrderLinear {
                    m,
                    w1: Tensor::zeros(&[cout, cin]),
                    w2: (m > 0).then(|| Tensor::zeros(&[cout, cin])),
                }
            })
            .collect();
        Ok(Self {
            in_layout: in_layout.clone(),
            out_layout: out_layout.clone(),
            orders,
        })
    }

    /// Centered uniform init with variance `1 / fan_in`.
    pub fn init<R: Rng + ?Sized>(in_layout: &IrrepsLayout, out_layout: &IrrepsLayout, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(in_layout, out_layout)?;
        for o in &mut w.orders {
            let cin = o.w1.cols();
            // the pair of real matrices acts as one complex matrix
            let fan = if o.m > 0 { 2 * cin } else { cin };
            o.w1 = Tensor::uniform(&o.w1.shape.clone(), fan, rng);
            if let Some(w2) = &mut o.w2 {
                *w2 = Tensor::uniform(&w2.shape.clone(), fan, rng);
            }
        }
        Ok(w)
    }

    /// `w1 = I`, `w2 = 0` on every order (requires equal layouts).
    pub fn identity(layout: &IrrepsLayout) -> Result<Self> {
        let mut w = Self::zeros(layout, layout)?;
        for o in &mut w.orders {
            let c = o.w1.rows();
            for i in 0..c {
                o.w1.data[i * c + i] = 1.0;
            }
        }
        Ok(w)
    }

    pub fn order(&self, m: usize) -> Option<&OrderLinear> {
        self.orders.iter().find(|o| o.m == m)
    }

    pub fn order_mut(&mut self, m: usize) -> Option<&mut OrderLinear> {
        self.orders.iter_mut().find(|o| o.m == m)
    }

    /// Multiplies counted for one application.
    pub fn multiply_count(&self) -> u64 {
        self.orders
            .iter()
            .map(|o| {
                let n = (o.w1.rows() * o.w1.cols()) as u64;
                if o.m == 0 {
                    n
                } else {
                    4 * n
                }
            })
            .sum()
    }
}

impl ParamSet for So2LinearWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        for o in &self.orders {
            let p = join(prefix, &format!("m{}", o.m));
            f(&join(&p, "w1"), &o.w1);
            if let Some(w2) = &o.w2 {
                f(&join(&p, "w2"), w2);
            }
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for o in &mut self.orders {
            let p = join(prefix, &format!("m{}", o.m));
            f(&join(&p, "w1"), &mut o.w1);
            if let Some(w2) = &mut o.w2 {
                f(&join(&p, "w2"), w2);
            }
        }
    }
}

/// Splits an order block into `(x_{-m}, x_{+m})` component vectors.
pub(crate) fn split_pairs(block: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = block.len() / 2;
    let mut neg = Vec::with_capacity(n);
    let mut pos = Vec::with_capacity(n);
    for c in 0..n {
        neg.push(block[2 * c]);
        pos.push(block[2 * c + 1]);
    }
    (neg, pos)
}

pub(crate) fn join_pairs(neg: &[f64], pos: &[f64], out: &mut [f64]) {
    for c in 0..neg.len() {
        out[2 * c] = neg[c];
        out[2 * c + 1] = pos[c];
    }
}

/// `m = 0`: `z = W x`. `m > 0`: `z_- = w1 x_- + w2 x_+`,
/// `z_+ = -w2 x_- + w1 x_+`, i.e. `z = (w1 + i w2) x` on `x_+ + i x_-`.
pub fn so2_linear(x: &So2Features, w: &So2LinearWeights) -> Result<So2Features> {
    if x.layout() != &w.in_layout {
        return Err(Error::LayoutMismatch(format!(
            "input {} vs weights {}",
            x.layout(),
            w.in_layout
        )));
    }
    let mut out = So2Features::zeros(&w.out_layout)?;
    for o in &w.orders {
        let xb = x.block(o.m);
        if o.m == 0 {
            let z = o.w1.matvec(xb);
            out.block_mut(0).copy_from_slice(&z);
        } else {
            let w2 = o.w2.as_ref().expect("w2 at m > 0");
            let (xn, xp) = split_pairs(xb);
            let a = o.w1.matvec(&xn);
            let b = w2.matvec(&xp);
            let c = w2.matvec(&xn);
            let d = o.w1.matvec(&xp);
            let zn: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b).collect();
            let zp: Vec<f64> = d.iter().zip(&c).map(|(d, c)| d - c).collect();
            join_pairs(&zn, &zp, out.block_mut(o.m));
        }
    }
    Ok(out)
}

pub fn so2_linear_counted(x: &So2Features, w: &So2LinearWeights, counter: &mut OpCounter) -> Result<So2Features> {
    let out = so2_linear(x, w)?;
    counter.add(Kernel::So2Linear, w.multiply_count());
    Ok(out)
}

/// Accumulates weight gradients into `grad` and returns the input cotangent.
pub fn so2_linear_vjp(
    x: &So2Features,
    w: &So2LinearWeights,
    gy: &So2Features,
    grad: &mut So2LinearWeights,
) -> Result<So2Features> {
    if gy.layout() != &w.out_layout {
        return Err(Error::LayoutMismatch("cotangent layout".into()));
    }
    let mut gx = So2Features::zeros(&w.in_layout)?;
    for (o, go) in w.orders.iter().zip(grad.orders.iter_mut()) {
        let xb = x.block(o.m);
        let gb = gy.block(o.m);
        if o.m == 0 {
            go.w1.add_outer(gb, xb, 1.0);
            gx.block_mut(0).copy_from_slice(&o.w1.matvec_t(gb));
        } else {
            let w2 = o.w2.as_ref().expect("w2");
            let (xn, xp) = split_pairs(xb);
            let (gn, gp) = split_pairs(gb);
            go.w1.add_outer(&gn, &xn, 1.0);
            go.w1.add_outer(&gp, &xp, 1.0);
            let gw2 = go.w2.as_mut().expect("w2 grad");
            gw2.add_outer(&gn, &xp, 1.0);
            gw2.add_outer(&gp, &xn, -1.0);
            let a = o.w1.matvec_t(&gn);
            let b = w2.matvec_t(&gp);
            let c = w2.matvec_t(&gn);
            let d = o.w1.matvec_t(&gp);
            let xn_bar: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a - b).collect();
            let xp_bar: Vec<f64> = c.iter().zip(&d).map(|(c, d)| c + d).collect();
            join_pairs(&xn_bar, &xp_bar, gx.block_mut(o.m));
        }
    }
    Ok(gx)
}
