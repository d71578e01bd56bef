//! Local frames: canonicalizing rotations onto the target axis and the
//! SO(3) <-> SO(2) feature maps they induce.

use std::f64::consts::PI;

use rand::Rng;

use crate::counter::{Kernel, OpCounter};
use crate::error::{Error, Result};
use crate::harmonics::rotate_so2;
use crate::irreps::{Group, IrrepsLayout, So2Features, So3Features};
use crate::linalg::Matrix;
use crate::rotation::{cross, dot, norm, normalize, wigner_d_all, Rotation, Vec3};

/// The fixed target axis every frame maps its reference direction onto.
pub const TARGET_AXIS: Vec3 = [0.0, 1.0, 0.0];

/// Axis used for the half-turn when the reference is anti-parallel to the
/// target.
pub const ANTIPODAL_AXIS: Vec3 = [1.0, 0.0, 0.0];

pub const DEFAULT_FRAME_LMAX: usize = 4;

#[derive(Debug, Clone)]
pub struct Frame {
    reference: Vec3,
    h: Rotation,
    l_max: usize,
    d_inv: Vec<Matrix>,
    d: Vec<Matrix>,
}

/// Minimal-angle rotation taking unit `a` onto unit `b`.
fn align(a: Vec3, b: Vec3) -> Rotation {
    let k = cross(a, b);
    let s = norm(k);
    let c = dot(a, b);
    if s < 1e-15 {
        if c > 0.0 {
            return Rotation::IDENTITY;
        }
        return Rotation::about_axis(ANTIPODAL_AXIS, PI).expect("unit axis");
    }
    Rotation::about_axis(k, s.atan2(c)).expect("nonzero axis")
}

impl Frame {
    /// Frame for `direction` (normalized internally; zero length is an
    /// error) with Wigner matrices cached up to `l_max`.
    pub fn from_direction(direction: Vec3, l_max: usize) -> Result<Self> {
        let r = normalize(direction)?;
        let h_inv = align(r, TARGET_AXIS);
        Ok(Self::from_rotation(r, h_inv.inverse(), l_max))
    }

    /// Frame whose rotation is `h` itself. `reference` is recorded as given.
    pub fn from_rotation(reference: Vec3, h: Rotation, l_max: usize) -> Self {
        let d = wigner_d_all(l_max, &h);
        let d_inv = d.iter().map(Matrix::transpose).collect();
        Frame {
            reference,
            h,
            l_max,
            d_inv,
            d,
        }
    }

    pub fn identity(l_max: usize) -> Self {
        Self::from_rotation(TARGET_AXIS, Rotation::IDENTITY, l_max)
    }

    pub fn reference(&self) -> Vec3 {
        self.reference
    }

    pub fn rotation(&self) -> &Rotation {
        &self.h
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// `D^l(h^{-1})`
    pub fn wigner_inv(&self, l: usize) -> &Matrix {
        &self.d_inv[l]
    }

    /// `D^l(h)`
    pub fn wigner(&self, l: usize) -> &Matrix {
        &self.d[l]
    }

    /// Test hook: perturbs the cached matrices so they no longer represent
    /// the frame rotation.
    #[doc(hidden)]
    pub fn corrupt_cache(&mut self) {
        for l in 1..=self.l_max {
            let n = 2 * l + 1;
            for mats in [&mut self.d_inv, &mut self.d] {
                let v = mats[l].get(0, n - 1);
                mats[l].set(0, n - 1, v + 1e-3);
            }
        }
    }

    fn check(&self, layout: &IrrepsLayout) -> Result<()> {
        if layout.max_index() > self.l_max {
            return Err(Error::LayoutMismatch(format!(
                "degree {} beyond frame cache l_max {}",
                layout.max_index(),
                self.l_max
            )));
        }
        Ok(())
    }
}

pub fn frame_from_direction(direction: Vec3) -> Result<Frame> {
    Frame::from_direction(direction, DEFAULT_FRAME_LMAX)
}

/// Recovers the SO(3) layout whose local layout is `local`.
pub fn global_layout(local: &IrrepsLayout) -> Result<IrrepsLayout> {
    if local.group() != Group::So2 {
        return Err(Error::LayoutMismatch("expected an SO(2) layout".into()));
    }
    let top = local.max_index();
    let mut entries = Vec::new();
    for l in 0..=top {
        let here = local.mult(l);
        let above = if l < top { local.mult(l + 1) } else { 0 };
        if here < above {
            return Err(Error::LayoutMismatch(format!(
                "{local} is not the local layout of any SO(3) layout"
            )));
        }
        if here > above {
            entries.push((l, here - above));
        }
    }
    IrrepsLayout::new(Group::So3, entries)
}

/// Channel offset of degree `l` inside local order `m`.
fn channel_base(layout: &IrrepsLayout, m: usize, l: usize) -> usize {
    layout
        .entries()
        .iter()
        .filter(|e| e.0 >= m && e.0 < l)
        .map(|e| e.1)
        .sum()
}

fn rotate_into(
    frame: &Frame,
    x: &So3Features,
    mats: &[Matrix],
    counter: Option<&mut OpCounter>,
) -> Result<So2Features> {
    frame.check(x.layout())?;
    let local = x.layout().to_local_layout()?;
    let mut out = So2Features::zeros(&local)?;
    let mut mults = 0u64;
    for (l, mult, _) in x.layout().blocks() {
        let n = 2 * l + 1;
        let d = &mats[l];
        let block = x.block(l);
        for c in 0..mult {
            let y = d.matvec(&block[c * n..(c + 1) * n]);
            mults += (n * n) as u64;
            for m in 0..=l {
                let ch = channel_base(x.layout(), m, l) + c;
                let dst = out.block_mut(m);
                if m == 0 {
                    dst[ch] = y[l];
                } else {
                    dst[2 * ch] = y[l - m];
                    dst[2 * ch + 1] = y[l + m];
                }
            }
        }
    }
    if let Some(ctr) = counter {
        ctr.add(Kernel::FrameRotation, mults);
    }
    Ok(out)
}

fn rotate_out(
    frame: &Frame,
    x: &So2Features,
    mats: &[Matrix],
    counter: Option<&mut OpCounter>,
) -> Result<So3Features> {
    let layout = global_layout(x.layout())?;
    frame.check(&layout)?;
    let mut out = So3Features::zeros(&layout)?;
    let mut mults = 0u64;
    for (l, mult, _) in layout.blocks() {
        let n = 2 * l + 1;
        let d = &mats[l];
        for c in 0..mult {
            let mut y = vec![0.0; n];
            for m in 0..=l {
                let ch = channel_base(&layout, m, l) + c;
                let src = x.block(m);
                if m == 0 {
                    y[l] = src[ch];
                } else {
                    y[l - m] = src[2 * ch];
                    y[l + m] = src[2 * ch + 1];
                }
            }
            let z = d.matvec(&y);
            mults += (n * n) as u64;
            out.block_mut(l)[c * n..(c + 1) * n].copy_from_slice(&z);
        }
    }
    if let Some(ctr) = counter {
        ctr.add(Kernel::FrameRotation, mults);
    }
    Ok(out)
}

/// Rotates by `D(h^{-1})` per degree and regroups by order `m`; order `m`
/// carries the channels of every degree `l >= m`, ascending in `l`.
pub fn to_local(frame: &Frame, x: &So3Features) -> Result<So2Features> {
    rotate_into(frame, x, &frame.d_inv, None)
}

pub fn to_local_counted(frame: &Frame, x: &So3Features, counter: &mut OpCounter) -> Result<So2Features> {
    rotate_into(frame, x, &frame.d_inv, Some(counter))
}

/// Exact inverse of [`to_local`]. Being orthogonal, it is also its
/// transpose, so it doubles as the VJP of `to_local`.
pub fn from_local(frame: &Frame, x: &So2Features) -> Result<So3Features> {
    rotate_out(frame, x, &frame.d, None)
}

pub fn from_local_counted(frame: &Frame, x: &So2Features, counter: &mut OpCounter) -> Result<So3Features> {
    rotate_out(frame, x, &frame.d, Some(counter))
}

/// VJP of [`from_local`]: maps an SO(3) cotangent back to the local one.
pub fn from_local_vjp(frame: &Frame, grad: &So3Features) -> Result<So2Features> {
    to_local(frame, grad)
}

/// VJP of [`to_local`].
pub fn to_local_vjp(frame: &Frame, grad: &So2Features) -> Result<So3Features> {
    from_local(frame, grad)
}

/// Max deviation between the stabilizer-averaged map
/// `(1/K) sum_g (h g) phi((h g)^{-1} x)` over `k` random stabilizer angles
/// and the single canonical term `h phi(h^{-1} x)`.
pub fn frame_average_check<F, R>(
    phi: F,
    direction: Vec3,
    x: &So3Features,
    k: usize,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn(&So2Features) -> So2Features,
    R: Rng + ?Sized,
{
    if k < 1 {
        return Err(Error::EmptySample);
    }
    let frame = Frame::from_direction(direction, x.layout().max_index())?;
    let local = to_local(&frame, x)?;
    let single = from_local(&frame, &phi(&local))?;

    let mut acc: Option<So2Features> = None;
    for _ in 0..k {
        let angle = rng.gen_range(0.0..2.0 * PI);
        let y = rotate_so2(&phi(&rotate_so2(&local, -angle)), angle);
        match acc.as_mut() {
            Some(a) => a.axpy(1.0, &y),
            None => acc = Some(y),
        }
    }
    let avg = acc.expect("k >= 1").scaled(1.0 / k as f64);
    let averaged = from_local(&frame, &avg)?;
    Ok(averaged.max_abs_diff(&single))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonics::real_spherical_harmonics;
    use crate::rng::{normal_vec, stream};
    use crate::rotation::sub;

    fn layout() -> IrrepsLayout {
        IrrepsLayout::parse("2x0e+3x1e+1x2e+2x3e+1x4e").unwrap()
    }

    fn random_features(rng: &mut impl Rng) -> So3Features {
        let l = layout();
        So3Features::from_vec(&l, normal_vec(rng, l.dim())).unwrap()
    }

    fn random_dir(rng: &mut impl Rng) -> Vec3 {
        normalize(normal_vec(rng, 3).try_into().unwrap()).unwrap()
    }

    #[test]
    fn target_direction_gives_identity() {
        let f = frame_from_direction(TARGET_AXIS).unwrap();
        assert_eq!(f.rotation().max_abs_diff(&Rotation::IDENTITY), 0.0);
    }

    #[test]
    fn antipodal_direction_uses_half_turn() {
        let f = frame_from_direction([0.0, -1.0, 0.0]).unwrap();
        let back = f.rotation().inverse().apply([0.0, -1.0, 0.0]);
        assert!(norm(sub(back, TARGET_AXIS)) < 1e-15);
        let half = Rotation::about_axis(ANTIPODAL_AXIS, PI).unwrap();
        assert!(f.rotation().max_abs_diff(&half) < 1e-15);
    }

    #[test]
    fn random_directions_map_to_target() {
        let mut rng = stream(1, "frame");
        for _ in 0..500 {
            let r = random_dir(&mut rng);
            let f = frame_from_direction(r).unwrap();
            let v = f.rotation().inverse().apply(r);
            assert!(norm(sub(v, TARGET_AXIS)) < 1e-13);
            let f2 = frame_from_direction([2.0 * r[0], 2.0 * r[1], 2.0 * r[2]]).unwrap();
            assert!(f.rotation().max_abs_diff(f2.rotation()) < 1e-15);
        }
        assert!(matches!(frame_from_direction([0.0; 3]), Err(Error::ZeroDirection)));
    }

    #[test]
    fn identity_frame_regroups_only() {
        let mut rng = stream(2, "regroup");
        let x = random_features(&mut rng);
        let f = Frame::identity(4);
        let local = to_local(&f, &x).unwrap();
        assert_eq!(local.layout().to_string(), "9x0m+7x1m+4x2m+3x3m+1x4m");
        // degree 1, channel 0 lands at order-1 channel 0
        assert_eq!(local.block(1)[0], x.block(1)[0]);
        assert_eq!(local.block(1)[1], x.block(1)[2]);
        assert_eq!(local.block(0)[2], x.block(1)[1]);
        assert_eq!(from_local(&f, &local).unwrap(), x);
    }

    #[test]
    fn round_trip_and_isometry() {
        let mut rng = stream(3, "round");
        for _ in 0..100 {
            let x = random_features(&mut rng);
            let f = Frame::from_direction(random_dir(&mut rng), 4).unwrap();
            let local = to_local(&f, &x).unwrap();
            assert!((local.norm() - x.norm()).abs() < 1e-12);
            assert!(from_local(&f, &local).unwrap().max_abs_diff(&x) < 1e-13);
        }
        let z = So2Features::zeros(&layout().to_local_layout().unwrap()).unwrap();
        let f = Frame::from_direction([1.0, 2.0, 3.0], 4).unwrap();
        assert_eq!(from_local(&f, &z).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn own_harmonics_are_axial() {
        let mut rng = stream(4, "axial");
        for _ in 0..50 {
            let r = random_dir(&mut rng);
            let f = Frame::from_direction(r, 6).unwrap();
            let local = to_local(&f, &real_spherical_harmonics(6, r).unwrap()).unwrap();
            for m in 1..=6 {
                assert!(local.block(m).iter().all(|v| v.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn stabilizer_rotation_is_so2_rotation() {
        let mut rng = stream(5, "stab");
        for _ in 0..50 {
            let x = random_features(&mut rng);
            let f = Frame::from_direction(random_dir(&mut rng), 4).unwrap();
            let phi = rng.gen_range(-PI..PI);
            let g = Rotation::about_axis(TARGET_AXIS, phi).unwrap();
            let inner = f.rotation().compose(&g).compose(&f.rotation().inverse());
            let f_g = Frame::from_rotation(TARGET_AXIS, inner, 4);
            // global rotation that acts as g inside the frame
            let rotated = from_local(&f_g, &to_local(&Frame::identity(4), &x).unwrap()).unwrap();
            let lhs = to_local(&f, &rotated).unwrap();
            let rhs = rotate_so2(&to_local(&f, &x).unwrap(), phi);
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn global_equivariance_chain() {
        let mut rng = stream(6, "chain");
        for _ in 0..50 {
            let x = random_features(&mut rng);
            let r = random_dir(&mut rng);
            let g = Rotation::random(&mut rng);
            let gx = from_local(&Frame::from_rotation(r, g, 4), &to_local(&Frame::identity(4), &x).unwrap()).unwrap();
            let f = Frame::from_direction(r, 4).unwrap();
            let fg = Frame::from_direction(g.apply(r), 4).unwrap();
            let lhs = from_local(&fg, &to_local(&fg, &gx).unwrap()).unwrap();
            let base = from_local(&f, &to_local(&f, &x).unwrap()).unwrap();
            let rhs = from_local(&Frame::from_rotation(r, g, 4), &to_local(&Frame::identity(4), &base).unwrap()).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-11);
        }
    }

    #[test]
    fn frame_average_identity_and_negative_control() {
        let mut rng = stream(7, "avg");
        let x = random_features(&mut rng);
        let r = random_dir(&mut rng);
        let dev = frame_average_check(|y| y.clone(), r, &x, 64, &mut rng).unwrap();
        assert!(dev < 1e-13);
        let bad = |y: &So2Features| {
            let mut out = y.clone();
            for &(m, mult) in y.layout().entries() {
                if m > 0 {
                    for c in 0..mult {
                        let v = out.block(m)[2 * c];
                        out.block_mut(m)[2 * c] = v * v;
                    }
                }
            }
            out
        };
        assert!(frame_average_check(bad, r, &x, 64, &mut rng).unwrap() > 1e-3);
        assert!(matches!(
            frame_average_check(|y| y.clone(), r, &x, 0, &mut rng),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn global_layout_inverts_local_layout() {
        for s in ["1x0e", "1x1e", "3x0e+1x2e", "8x0e+8x1e+4x2e+4x3e+2x4e"] {
            let l = IrrepsLayout::parse(s).unwrap();
            assert_eq!(global_layout(&l.to_local_layout().unwrap()).unwrap(), l);
        }
        assert!(global_layout(&IrrepsLayout::parse("1x0m+2x1m").unwrap()).is_err());
    }
}
