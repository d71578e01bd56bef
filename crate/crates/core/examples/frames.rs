//! Local frames: rotate features so an edge points along the polar axis,
//! and show that axis rotations act block-diagonally on each degree.

use std::f64::consts::PI;

use so2frames::frame::{from_local, to_local, Frame};
use so2frames::irreps::{IrrepsLayout, So3Features};
use so2frames::rng::{normal_vec, stream};
use so2frames::rotation::{block_diagonal_form, to_aligned_basis, wigner_d, Rotation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let layout = IrrepsLayout::parse("2x0e+2x1e+1x2e+1x3e")?;
    let mut rng = stream(0, "example.frames");
    let x = So3Features::from_vec(&layout, normal_vec(&mut rng, layout.dim()))?;

    let frame = Frame::from_direction([0.3, -0.8, 0.52], layout.max_index())?;
    let local = to_local(&frame, &x)?;
    let back = from_local(&frame, &local)?;
    println!("local layout      {}", local.layout());
    println!("round trip error  {:.2e}", back.max_abs_diff(&x));

    println!("\naxis rotation by 0.7 rad, aligned basis, deviation from diag(1, R1, ..., Rl):");
    for l in 0..=6 {
        let d = to_aligned_basis(l, &wigner_d(l, &Rotation::about_y(0.7))?);
        println!("  l = {l}  {:.2e}", d.max_abs_diff(&block_diagonal_form(l, 0.7)));
    }
    println!("\nhalf turn about y leaves the polar axis fixed: {:?}", Rotation::about_y(PI).apply([0.0, 1.0, 0.0]));
    Ok(())
}
