//! Fits the demo model to a synthetic water-like target and prints the loss
//! averaged over windows of 100 steps.
//!
//!     cargo run --release --example fit_demo -- [seed] [steps]

use so2frames::hamiltonian::{gen_synthetic_target, OverlapKind};
use so2frames::model::{demo_config, demo_molecule, fit_demo, Model, DEMO_LR, DEMO_STEPS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(0);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(DEMO_STEPS);

    let mol = demo_molecule();
    let cfg = demo_config(seed);
    let (target, _) = gen_synthetic_target(&mol, &cfg, seed, OverlapKind::Identity)?;
    let mut model = Model::init(cfg)?;
    let losses = fit_demo(&mut model, &mol, &target.matrix, steps, DEMO_LR)?;

    for (w, chunk) in losses.chunks(100).enumerate() {
        let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
        println!("steps {:>5}..{:<5} mean MAE {mean:.4e}", w * 100, w * 100 + chunk.len());
    }
    println!("final MAE {:.4e}", losses.last().copied().unwrap_or(f64::NAN));
    Ok(())
}
