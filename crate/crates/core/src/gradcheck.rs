//! Directional finite-difference checks for vector-Jacobian products.

use rand::Rng;

use crate::rng::normal_vec;

pub const FD_STEP: f64 = 1e-6;

/// Relative error between `<gy, (f(x + h d) - f(x - h d)) / 2h>` and the
/// analytic `<gx, d>` for one random unit direction `d`, so the step in `x`
/// has length `FD_STEP`. The denominator is floored at `1e-6` so exactly-zero
/// directional derivatives do not blow up.
pub fn probe<F, R>(f: &F, x: &[f64], gy: &[f64], gx: &[f64], rng: &mut R) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    let mut d = normal_vec(rng, x.len());
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    d.iter_mut().for_each(|v| *v /= norm);
    directional(f, x, gy, gx, &d)
}

pub fn directional<F>(f: &F, x: &[f64], gy: &[f64], gx: &[f64], d: &[f64]) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let h = FD_STEP;
    let xp: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + h * b).collect();
    let xm: Vec<f64> = x.iter().zip(d).map(|(a, b)| a - h * b).collect();
    let yp = f(&xp);
    let ym = f(&xm);
    let fd: f64 = yp
        .iter()
        .zip(&ym)
        .zip(gy)
        .map(|((a, b), g)| (a - b) / (2.0 * h) * g)
        .sum();
    let an: f64 = gx.iter().zip(d).map(|(a, b)| a * b).sum();
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

/// Worst relative error over `n` random probes.
pub fn max_probe_error<F, R>(f: &F, x: &[f64], gy: &[f64], gx: &[f64], n: usize, rng: &mut R) -> f64
where
    F: Fn(&[f64]) -> Vec<f64>,
    R: Rng + ?Sized,
{
    (0..n).map(|_| probe(f, x, gy, gx, rng)).fold(0.0, f64::max)
}
