//! The SO(3) tensor product with a spherical-harmonic filter, computed
//! directly and as rotate -> SO(2) linear -> rotate back.

use so2frames::cg::{escn_so2_linear, so3_tensor_product, PathWeights};
use so2frames::counter::{Kernel, OpCounter};
use so2frames::frame::{from_local, to_local, Frame};
use so2frames::harmonics::real_spherical_harmonics;
use so2frames::irreps::{Group, IrrepsLayout, So3Features};
use so2frames::rng::{normal_vec, stream};
use so2frames::rotation::normalize;
use so2frames::so2::so2_linear;

const L: usize = 4;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = stream(1, "example.escn");
    let layout = IrrepsLayout::uniform(Group::So3, L, 2);
    let mut worst: f64 = 0.0;
    let mut counter = OpCounter::new();
    for _ in 0..100 {
        let x = So3Features::from_vec(&layout, normal_vec(&mut rng, layout.dim()))?;
        let w = PathWeights::random(L, L, L, 2, &mut rng);
        let v = normal_vec(&mut rng, 3);
        let dir = normalize([v[0], v[1], v[2]])?;

        let direct = so3_tensor_product(&x, &real_spherical_harmonics(L, dir)?, &w, &mut counter)?;
        let frame = Frame::from_direction(dir, L)?;
        let lin = escn_so2_linear(&w, L)?;
        let routed = from_local(&frame, &so2_linear(&to_local(&frame, &x)?, &lin)?)?;
        worst = worst.max(routed.max_abs_diff(&direct) / direct.max_abs());
    }
    println!("100 random triples, l <= {L}: max relative error {worst:.2e}");
    println!("SO(3) tensor product multiplies (100 calls): {}", counter.get(Kernel::So3Tp));
    Ok(())
}
