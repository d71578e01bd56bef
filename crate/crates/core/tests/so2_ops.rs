use std::collections::BTreeSet;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use so2frames::gradcheck::max_probe_error;
use so2frames::harmonics::rotate_so2;
use so2frames::irreps::{Group, IrrepsLayout, So2Features};
use so2frames::params::{flatten, unflatten, zeros_like, ParamSet};
use so2frames::rng::{normal_vec, stream};
use so2frames::so2::*;

const TRIALS: usize = 200;

fn layout(s: &str) -> IrrepsLayout {
    IrrepsLayout::parse(s).unwrap()
}

fn random(l: &IrrepsLayout, rng: &mut impl Rng) -> So2Features {
    So2Features::from_vec(l, normal_vec(rng, l.dim())).unwrap()
}

fn complex_view(x: &So2Features, m: usize) -> Vec<Complex64> {
    x.block(m)
        .chunks(if m == 0 { 1 } else { 2 })
        .map(|p| if m == 0 { Complex64::new(p[0], 0.0) } else { Complex64::new(p[1], p[0]) })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst FD probe error of `<gy, f(params)>` with respect to the parameters.
fn param_error<P: ParamSet + Clone>(
    p: &P,
    f: impl Fn(&P) -> Vec<f64>,
    gy: &[f64],
    grad: &P,
    rng: &mut impl Rng,
) -> f64 {
    let flat = flatten(p);
    let g = |v: &[f64]| {
        let mut q = p.clone();
        unflatten(&mut q, v).unwrap();
        f(&q)
    };
    max_probe_error(&g, &flat, gy, &flatten(grad), 20, rng)
}

fn randomize<P: ParamSet>(p: &mut P, rng: &mut impl Rng) {
    p.visit_mut("", &mut |_, t| t.data = normal_vec(rng, t.len()));
}

// ---------------------------------------------------------------- linear

#[test]
fn linear_identity() {
    let l = layout("3x0m+2x1m+2x2m");
    let mut rng = stream(1, "lin-id");
    let x = random(&l, &mut rng);
    let w = So2LinearWeights::identity(&l).unwrap();
    assert_eq!(so2_linear(&x, &w).unwrap(), x);
}

#[test]
fn linear_matches_complex_matvec() {
    let lin = layout("3x0m+4x1m+2x2m");
    let lout = layout("2x0m+3x1m+1x2m");
    let mut rng = stream(2, "lin-cx");
    for _ in 0..50 {
        let mut w = So2LinearWeights::zeros(&lin, &lout).unwrap();
        randomize(&mut w, &mut rng);
        let x = random(&lin, &mut rng);
        let y = so2_linear(&x, &w).unwrap();
        for o in &w.orders {
            let xc = complex_view(&x, o.m);
            let yc = complex_view(&y, o.m);
            for (i, yi) in yc.iter().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for (j, xj) in xc.iter().enumerate() {
                    let k = i * xc.len() + j;
                    let wij = Complex64::new(o.w1.data[k], o.w2.as_ref().map_or(0.0, |t| t.data[k]));
                    acc += wij * xj;
                }
                assert!((acc - yi).norm() < 1e-13);
            }
        }
    }
}

#[test]
fn linear_equivariance_and_linearity() {
    let l = layout("3x0m+2x1m+2x2m+1x3m");
    let mut rng = stream(3, "lin-eq");
    let mut w = So2LinearWeights::init(&l, &l, &mut rng).unwrap();
    randomize(&mut w, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let x = random(&l, &mut rng);
        let phi = rng.gen_range(-PI..PI);
        let a = so2_linear(&rotate_so2(&x, phi), &w).unwrap();
        let b = rotate_so2(&so2_linear(&x, &w).unwrap(), phi);
        worst = worst.max(a.max_abs_diff(&b));
    }
    assert!(worst < 1e-13, "{worst}");
    let x = random(&l, &mut rng);
    let y = random(&l, &mut rng);
    let mut comb = x.scaled(2.0);
    comb.axpy(-3.0, &y);
    let mut expect = so2_linear(&x, &w).unwrap().scaled(2.0);
    expect.axpy(-3.0, &so2_linear(&y, &w).unwrap());
    assert!(so2_linear(&comb, &w).unwrap().max_abs_diff(&expect) < 1e-13);
}

#[test]
fn linear_vjp() {
    let lin = layout("3x0m+2x1m+2x2m");
    let lout = layout("2x0m+3x1m+1x2m");
    let mut rng = stream(4, "lin-vjp");
    let w = So2LinearWeights::init(&lin, &lout, &mut rng).unwrap();
    let x = random(&lin, &mut rng);
    let gy = random(&lout, &mut rng);
    let mut grad = zeros_like(&w);
    let gx = so2_linear_vjp(&x, &w, &gy, &mut grad).unwrap();
    let f = |v: &[f64]| so2_linear(&So2Features::from_vec(&lin, v.to_vec()).unwrap(), &w).unwrap().into_vec();
    assert!(max_probe_error(&f, x.data(), gy.data(), gx.data(), 20, &mut rng) < 1e-5);
    let fp = |p: &So2LinearWeights| so2_linear(&x, p).unwrap().into_vec();
    assert!(param_error(&w, fp, gy.data(), &grad, &mut rng) < 1e-5);
}

#[test]
fn linear_shape_mismatch() {
    let mut rng = stream(5, "lin-err");
    let w = So2LinearWeights::init(&layout("2x0m+1x1m"), &layout("2x0m+1x1m"), &mut rng).unwrap();
    assert!(so2_linear(&random(&layout("3x0m+1x1m"), &mut rng), &w).is_err());
}

// ------------------------------------------------------------------ gate

#[test]
fn gate_with_zero_mlp_halves_every_channel() {
    let l = layout("3x0m+2x1m+1x2m");
    let mut rng = stream(6, "gate-half");
    let mut g = So2Gate::init(&l, 3, None, &mut rng).unwrap();
    g.mlp.zero_output();
    let x = random(&l, &mut rng);
    let y = so2_gate(&x, &g).unwrap();
    for m in 1..=2 {
        for (a, b) in y.block(m).iter().zip(x.block(m)) {
            assert_eq!(*a, 0.5 * b);
        }
    }
}

#[test]
fn gate_equivariance_and_vjp() {
    let l = layout("3x0m+2x1m+2x2m");
    let mut rng = stream(7, "gate");
    let mut g = So2Gate::init(&l, 3, Some(5), &mut rng).unwrap();
    randomize(&mut g, &mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let x = random(&l, &mut rng);
        let phi = rng.gen_range(-PI..PI);
        let a = so2_gate(&rotate_so2(&x, phi), &g).unwrap();
        let b = rotate_so2(&so2_gate(&x, &g).unwrap(), phi);
        worst = worst.max(a.max_abs_diff(&b));
    }
    assert!(worst < 1e-14, "{worst}");

    let x = random(&l, &mut rng);
    let (y, cache) = g.forward_cached(&x).unwrap();
    let gy = random(y.layout(), &mut rng);
    let mut grad = zeros_like(&g);
    let gx = g.backward(&x, &cache, &gy, &mut grad).unwrap();
    let f = |v: &[f64]| so2_gate(&So2Features::from_vec(&l, v.to_vec()).unwrap(), &g).unwrap().into_vec();
    assert!(max_probe_error(&f, x.data(), gy.data(), gx.data(), 20, &mut rng) < 1e-5);
    let fp = |p: &So2Gate| so2_gate(&x, p).unwrap().into_vec();
    assert!(param_error(&g, fp, gy.data(), &grad, &mut rng) < 1e-5);
}

/// Least-squares fit of the gate's last layer, with the hidden layers held
/// fixed, to a target that depends on the `m = 0` component of a degree-1
/// feature. The SO(2) gate sees that component; a gate fed only degree-0
/// scalars (constant across the samples here) cannot.
#[test]
fn gate_expressivity() {
    use nalgebra::{DMatrix, DVector};
    let mut rng = stream(8, "expressive");
    let n = 30;
    let scalar = 0.7;
    let axial: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let target: Vec<f64> = axial.iter().map(|a| (2.0 * a).sin() + 0.3 * a * a).collect();

    // local m=0 channels: [degree-0 scalar, degree-1 axial component]
    let l = layout("2x0m+1x1m");
    let g = So2Gate::init(&l, 1, Some(48), &mut rng).unwrap();
    let fit = |inputs: &dyn Fn(usize) -> Vec<f64>| -> f64 {
        let last = g.mlp.layers.len() - 1;
        let feats: Vec<Vec<f64>> = (0..n)
            .map(|s| {
                let mut h = inputs(s);
                for layer in &g.mlp.layers[..last] {
                    h = layer.forward(&h).into_iter().map(so2frames::nn::silu).collect();
                }
                h.push(1.0);
                h
            })
            .collect();
        let k = feats[0].len();
        let a = DMatrix::from_fn(n, k, |i, j| feats[i][j]);
        let b = DVector::from_vec(target.clone());
        let sol = a.clone().svd(true, true).solve(&b, 1e-12).unwrap();
        let r = a * sol - b;
        (r.norm_squared() / n as f64).sqrt()
    };
    let so2_err = fit(&|s| vec![scalar, axial[s]]);
    let so3_err = fit(&|_| vec![scalar, 0.0]);
    assert!(so2_err < 1e-6, "so2 gate error {so2_err}");
    assert!(so3_err > 1e-2, "scalar-only gate error {so3_err}");
}

// ------------------------------------------------------------ layer norm

#[test]
fn layernorm_standardizes_signed_norms() {
    let l = layout("5x0m+4x1m+3x2m");
    let mut rng = stream(9, "ln");
    let ln = So2LayerNorm::new(&l);
    let x = random(&l, &mut rng);
    let y = so2_layernorm(&x, &ln).unwrap();
    for &(m, mult) in l.entries() {
        let vals: Vec<f64> = if m == 0 {
            y.block(0).to_vec()
        } else {
            // output keeps the input direction, so the signed norm is the
            // projection onto it
            (0..mult)
                .map(|c| {
                    let xv = &x.block(m)[2 * c..2 * c + 2];
                    let yv = &y.block(m)[2 * c..2 * c + 2];
                    dot(xv, yv) / dot(xv, xv).sqrt()
                })
                .collect()
        };
        let mean = vals.iter().sum::<f64>() / mult as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / mult as f64;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
    }
}

#[test]
fn layernorm_scale_invariance_and_equivariance() {
    let l = layout("5x0m+4x1m+3x2m");
    let mut rng = stream(10, "ln-inv");
    let mut ln = So2LayerNorm::new(&l);
    randomize(&mut ln, &mut rng);
    for _ in 0..TRIALS {
        let x = random(&l, &mut rng);
        let c = 10f64.powf(rng.gen_range(-3.0..3.0));
        let base = so2_layernorm(&x, &ln).unwrap();
        assert!(so2_layernorm(&x.scaled(c), &ln).unwrap().max_abs_diff(&base) < 1e-12);
        let phi = rng.gen_range(-PI..PI);
        let a = so2_layernorm(&rotate_so2(&x, phi), &ln).unwrap();
        assert!(a.max_abs_diff(&rotate_so2(&base, phi)) < 1e-13);
    }
}

#[test]
fn layernorm_vjp() {
    let l = layout("5x0m+4x1m+3x2m");
    let mut rng = stream(11, "ln-vjp");
    let mut ln = So2LayerNorm::new(&l);
    randomize(&mut ln, &mut rng);
    let x = random(&l, &mut rng);
    let (_, cache) = ln.forward_cached(&x).unwrap();
    let gy = random(&l, &mut rng);
    let mut grad = zeros_like(&ln);
    let gx = ln.backward(&x, &cache, &gy, &mut grad).unwrap();
    let f = |v: &[f64]| so2_layernorm(&So2Features::from_vec(&l, v.to_vec()).unwrap(), &ln).unwrap().into_vec();
    assert!(max_probe_error(&f, x.data(), gy.data(), gx.data(), 20, &mut rng) < 1e-5);
    let fp = |p: &So2LayerNorm| so2_layernorm(&x, p).unwrap().into_vec();
    assert!(param_error(&ln, fp, gy.data(), &grad, &mut rng) < 1e-5);
}

// ----------------------------------------------------------- tensor product

#[test]
fn tp_pair_with_unit_scalar_is_identity() {
    let mut rng = stream(12, "tp-unit");
    let x1 = normal_vec(&mut rng, 6);
    let (y, m) = so2_tp_pair(&x1, 2, &[1.0, 1.0, 1.0], 0, 1, 4).unwrap();
    assert_eq!(m, 2);
    assert_eq!(y, x1);
}

#[test]
fn tp_pair_matches_complex_products() {
    let mut rng = stream(13, "tp-cx");
    for _ in 0..TRIALS {
        let m1 = rng.gen_range(0..=4usize);
        let m2 = rng.gen_range(0..=4usize);
        let c = 3;
        let x1 = normal_vec(&mut rng, if m1 == 0 { c } else { 2 * c });
        let x2 = normal_vec(&mut rng, if m2 == 0 { c } else { 2 * c });
        let view = |x: &[f64], m: usize, k: usize| {
            if m == 0 {
                Complex64::new(x[k], 0.0)
            } else {
                Complex64::new(x[2 * k + 1], x[2 * k])
            }
        };
        if m1 + m2 <= 4 {
            let (y, mo) = so2_tp_pair(&x1, m1, &x2, m2, 1, 4).unwrap();
            for k in 0..c {
                let z = view(&x1, m1, k) * view(&x2, m2, k);
                assert!((view(&y, mo, k) - z).norm() < 1e-14);
            }
        }
        if m1 > m2 {
            let (y, mo) = so2_tp_pair(&x1, m1, &x2, m2, -1, 4).unwrap();
            assert_eq!(mo, m1 - m2);
            for k in 0..c {
                let z = view(&x1, m1, k) * view(&x2, m2, k).conj();
                assert!((view(&y, mo, k) - z).norm() < 1e-14);
            }
        } else {
            assert!(so2_tp_pair(&x1, m1, &x2, m2, -1, 4).is_err());
        }
    }
    assert!(so2_tp_pair(&[1.0, 0.0], 1, &[1.0, 0.0], 1, 1, 1).is_err());
}

#[test]
fn tp_pair_equivariance_bilinearity_vjp() {
    let mut rng = stream(14, "tp-eq");
    let rot = |x: &[f64], m: usize, phi: f64| {
        let l = IrrepsLayout::new(Group::So2, vec![(m, x.len() / if m == 0 { 1 } else { 2 })]).unwrap();
        rotate_so2(&So2Features::from_vec(&l, x.to_vec()).unwrap(), phi).into_vec()
    };
    for _ in 0..TRIALS {
        let (m1, m2) = (rng.gen_range(1..=4usize), rng.gen_range(0..=3usize));
        let sign = if m1 > m2 && rng.gen_bool(0.5) { -1 } else { 1 };
        if sign > 0 && m1 + m2 > 6 {
            continue;
        }
        let x1 = normal_vec(&mut rng, 4);
        let x2 = normal_vec(&mut rng, if m2 == 0 { 2 } else { 4 });
        let phi = rng.gen_range(-PI..PI);
        let (y, mo) = so2_tp_pair(&x1, m1, &x2, m2, sign, 6).unwrap();
        let (yr, _) = so2_tp_pair(&rot(&x1, m1, phi), m1, &rot(&x2, m2, phi), m2, sign, 6).unwrap();
        let expect = rot(&y, mo, phi);
        for (a, b) in yr.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-13);
        }
        let x3 = normal_vec(&mut rng, 4);
        let comb: Vec<f64> = x1.iter().zip(&x3).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
        let (yc, _) = so2_tp_pair(&comb, m1, &x2, m2, sign, 6).unwrap();
        let (y3, _) = so2_tp_pair(&x3, m1, &x2, m2, sign, 6).unwrap();
        for k in 0..yc.len() {
            assert!((yc[k] - (2.0 * y[k] - 0.5 * y3[k])).abs() < 1e-13);
        }
    }
    for (m1, m2, sign) in [(2usize, 1usize, -1i8), (1, 2, 1), (3, 0, -1), (0, 0, 1)] {
        let n1 = if m1 == 0 { 3 } else { 6 };
        let n2 = if m2 == 0 { 3 } else { 6 };
        let x: Vec<f64> = normal_vec(&mut rng, n1 + n2);
        let f = |v: &[f64]| so2_tp_pair(&v[..n1], m1, &v[n1..], m2, sign, 4).unwrap().0;
        let y = f(&x);
        let gy = normal_vec(&mut rng, y.len());
        let (g1, g2) = so2_tp_pair_vjp(&x[..n1], m1, &x[n1..], m2, sign, 4, &gy).unwrap();
        let gx: Vec<f64> = g1.into_iter().chain(g2).collect();
        assert!(max_probe_error(&f, &x, &gy, &gx, 20, &mut rng) < 1e-5);
    }
}

/// Independent brute force: every order tuple and sign pattern, with signs
/// of zero orders normalized, partial sums bounded, no cancelling step, and
/// conjugate chains identified.
fn brute_force_paths(m_max: usize, v: usize) -> BTreeSet<(Vec<usize>, Vec<i8>, usize)> {
    let mut out = BTreeSet::new();
    let n = (m_max + 1).pow(v as u32);
    for code in 0..n {
        let orders: Vec<usize> = (0..v).map(|k| code / (m_max + 1).pow(k as u32) % (m_max + 1)).collect();
        for sbits in 0..(1u32 << v) {
            let mut signs: Vec<i8> = (0..v).map(|k| if sbits >> k & 1 == 1 { -1 } else { 1 }).collect();
            if orders.iter().zip(&signs).any(|(&m, &s)| m == 0 && s < 0) {
                continue;
            }
            let mut q = 0i64;
            let mut ok = true;
            for k in 0..v {
                let next = q + i64::from(signs[k]) * orders[k] as i64;
                if next.unsigned_abs() as usize > m_max || (orders[k] > 0 && q != 0 && next == 0) {
                    ok = false;
                }
                q = next;
            }
            if !ok {
                continue;
            }
            if q < 0 {
                for (s, &m) in signs.iter_mut().zip(&orders) {
                    if m > 0 {
                        *s = -*s;
                    }
                }
                q = -q;
            }
            if q == 0 && orders.iter().any(|&m| m > 0) {
                continue;
            }
            out.insert((orders.clone(), signs, q as usize));
        }
    }
    out
}

/// The pairwise selection rules read literally: `m1 + m2`, `m1 - m2` with
/// `m1 > m2`, `m2 - m1` with `m2 > m1`, orders in `0..=m_max`, output at most
/// `m_max`; difference rules with a zero operand coincide with the sum rule.
fn pairwise_rule_count(m_max: usize) -> usize {
    let mut set = BTreeSet::new();
    for m1 in 0..=m_max {
        for m2 in 0..=m_max {
            if m1 + m2 <= m_max {
                set.insert((m1, m2, 1i8, 1i8));
            }
            if m1 > m2 {
                set.insert((m1, m2, 1, if m2 == 0 { 1 } else { -1 }));
            }
            if m2 > m1 {
                set.insert((m1, m2, if m1 == 0 { 1 } else { -1 }, 1));
            }
        }
    }
    set.len()
}

#[test]
fn path_enumeration_is_exhaustive() {
    let p = enumerate_tp_paths(0, 2);
    assert_eq!(p.len(), 1);
    assert_eq!((p[0].orders.clone(), p[0].m_out), (vec![0, 0], 0));
    for m_max in 0..=4 {
        for v in 2..=3 {
            let got: BTreeSet<_> = enumerate_tp_paths(m_max, v)
                .into_iter()
                .map(|p| (p.orders, p.signs, p.m_out))
                .collect();
            assert_eq!(got, brute_force_paths(m_max, v), "m_max={m_max} v={v}");
        }
        assert_eq!(enumerate_tp_paths(m_max, 2).len(), pairwise_rule_count(m_max));
    }
    let counts: Vec<usize> = (0..=4).map(|m| enumerate_tp_paths(m, 2).len()).collect();
    assert_eq!(counts, vec![1, 3, 8, 16, 27]);
}

#[test]
fn contract_scalar_path() {
    let mut w = TpWeights::zeros(0, 2, 2);
    w.w.data = vec![1.0, 1.0];
    let l = w.layout();
    let a = So2Features::from_vec(&l, vec![2.0, -1.0]).unwrap();
    let b = So2Features::from_vec(&l, vec![3.0, 4.0]).unwrap();
    let y = so2_tp_contract(&[&a, &b], &w).unwrap();
    assert_eq!(y.data(), &[6.0, -4.0]);
    assert!(so2_tp_contract(&[&a], &w).is_err());
}

#[test]
fn contract_equivariance_and_vjp() {
    let mut rng = stream(15, "contract");
    for v in [2, 3] {
        let mut w = TpWeights::init(3, v, 2, &mut rng);
        randomize(&mut w, &mut rng);
        let l = w.layout();
        let mut worst: f64 = 0.0;
        for _ in 0..TRIALS {
            let xs: Vec<So2Features> = (0..v).map(|_| random(&l, &mut rng)).collect();
            let refs: Vec<&So2Features> = xs.iter().collect();
            let phi = rng.gen_range(-PI..PI);
            let rot: Vec<So2Features> = xs.iter().map(|x| rotate_so2(x, phi)).collect();
            let rrefs: Vec<&So2Features> = rot.iter().collect();
            let a = so2_tp_contract(&rrefs, &w).unwrap();
            let b = rotate_so2(&so2_tp_contract(&refs, &w).unwrap(), phi);
            worst = worst.max(a.max_abs_diff(&b));
        }
        assert!(worst < 1e-12, "v={v}: {worst}");

        let xs: Vec<So2Features> = (0..v).map(|_| random(&l, &mut rng)).collect();
        let refs: Vec<&So2Features> = xs.iter().collect();
        let gy = random(&l, &mut rng);
        let mut grad = zeros_like(&w);
        let gxs = so2_tp_contract_vjp(&refs, &w, &gy, &mut grad).unwrap();
        let d = l.dim();
        let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
        let gflat: Vec<f64> = gxs.iter().flat_map(|x| x.data().to_vec()).collect();
        let f = |vv: &[f64]| {
            let fs: Vec<So2Features> = (0..v)
                .map(|k| So2Features::from_vec(&l, vv[k * d..(k + 1) * d].to_vec()).unwrap())
                .collect();
            let r: Vec<&So2Features> = fs.iter().collect();
            so2_tp_contract(&r, &w).unwrap().into_vec()
        };
        assert!(max_probe_error(&f, &flat, gy.data(), &gflat, 20, &mut rng) < 1e-5);
        let fp = |p: &TpWeights| so2_tp_contract(&refs, p).unwrap().into_vec();
        assert!(param_error(&w, fp, gy.data(), &grad, &mut rng) < 1e-5);
    }
}

// ------------------------------------------------------------------- ffn

fn ffn(rng: &mut impl Rng) -> (IrrepsLayout, So2Ffn) {
    let a = layout("3x0m+2x1m+2x2m");
    let f = layout("4x0m+3x1m+2x2m");
    let mut p = So2Ffn::init(&a, &f, None, rng).unwrap();
    randomize(&mut p, rng);
    (a, p)
}

#[test]
fn ffn_zero_inputs() {
    let mut rng = stream(16, "ffn-zero");
    let (a, p) = ffn(&mut rng);
    let z = So2Features::zeros(&a).unwrap();
    let y = so2_ffn(&z, &z, &p).unwrap();
    for m in 1..=2 {
        assert!(y.block(m).iter().all(|v| *v == 0.0));
    }
    // m = 0 is the MLP's response to zero, pushed through the output linear
    let h0 = p.gate.mlp.forward(&[0.0; 4]);
    let expect = p.lin2.order(0).unwrap().w1.matvec(&h0[..4]);
    for (a, b) in y.block(0).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn ffn_equivariance_swap_and_vjp() {
    let mut rng = stream(17, "ffn");
    let (a, p) = ffn(&mut rng);
    let mut worst: f64 = 0.0;
    for _ in 0..TRIALS {
        let mi = random(&a, &mut rng);
        let mj = random(&a, &mut rng);
        let phi = rng.gen_range(-PI..PI);
        let lhs = so2_ffn(&rotate_so2(&mi, phi), &rotate_so2(&mj, phi), &p).unwrap();
        let rhs = rotate_so2(&so2_ffn(&mi, &mj, &p).unwrap(), phi);
        worst = worst.max(lhs.max_abs_diff(&rhs));
    }
    assert!(worst < 1e-12, "{worst}");

    let mi = random(&a, &mut rng);
    let mj = random(&a, &mut rng);
    let y = so2_ffn(&mi, &mj, &p).unwrap();
    assert!(y.max_abs_diff(&so2_ffn(&mj, &mi, &p).unwrap()) > 1e-6);

    let (_, cache) = p.forward_cached(&mi, &mj).unwrap();
    let gy = random(&a, &mut rng);
    let mut grad = zeros_like(&p);
    let (gi, gj) = p.backward(&cache, &gy, &mut grad).unwrap();
    let d = a.dim();
    let flat: Vec<f64> = mi.data().iter().chain(mj.data()).copied().collect();
    let gflat: Vec<f64> = gi.data().iter().chain(gj.data()).copied().collect();
    let f = |v: &[f64]| {
        let x = So2Features::from_vec(&a, v[..d].to_vec()).unwrap();
        let y = So2Features::from_vec(&a, v[d..].to_vec()).unwrap();
        so2_ffn(&x, &y, &p).unwrap().into_vec()
    };
    assert!(max_probe_error(&f, &flat, gy.data(), &gflat, 20, &mut rng) < 1e-5);
    let fp = |q: &So2Ffn| so2_ffn(&mi, &mj, q).unwrap().into_vec();
    assert!(param_error(&p, fp, gy.data(), &grad, &mut rng) < 1e-5);
}
