//! Predicts a Hamiltonian for a sampled molecule and checks the block
//! rotation law under a few random rotations.

use so2frames::hamiltonian::block_rotate;
use so2frames::harness::sample_molecule;
use so2frames::model::{Model, ModelConfig};
use so2frames::rng::stream;
use so2frames::rotation::Rotation;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = Model::init(ModelConfig { layers: 2, ..ModelConfig::default() })?;
    let mol = sample_molecule(5, 5, &[1, 6, 8], 1.8, 1000)?;
    let h = model.predict(&mol)?;
    println!("{} atoms, {} orbitals, |H|max = {:.3}", mol.atoms.len(), h.dim(), h.matrix.max_abs());

    let mut rng = stream(5, "example.rotations");
    for _ in 0..5 {
        let g = Rotation::random(&mut rng);
        let hr = model.predict(&mol.rotated(&g))?;
        println!("block rotation deviation {:.2e}", hr.matrix.max_abs_diff(&block_rotate(&h, &g).matrix));
    }
    Ok(())
}
