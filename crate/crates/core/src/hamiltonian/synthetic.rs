use rand::Rng;

use super::layout::BlockMatrix;
use crate::error::Result;
use crate::model::{Model, ModelConfig, Molecule};
use crate::rng::stream;

/// Overlap style for [`gen_synthetic_target`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapKind {
    Identity,
    /// `B + λI` with `B` from a second reference network and
    /// `λ = ‖B‖_F + 1`, so every eigenvalue is at least 1.
    Shifted,
}

fn reference(config: &ModelConfig, seed: u64, name: &str) -> Result<Model> {
    let mut cfg = config.clone();
    cfg.seed = stream(seed, name).gen();
    Model::init(cfg)
}

/// `(H, S)` produced by frozen random reference networks shaped like
/// `config`. Both inherit the block rotation law and exact symmetry from
/// the assembly; `λ` depends only on the Frobenius norm, which rotation
/// preserves.
pub fn gen_synthetic_target(
    molecule: &Molecule,
    config: &ModelConfig,
    seed: u64,
    overlap: OverlapKind,
) -> Result<(BlockMatrix, BlockMatrix)> {
    let h = reference(config, seed, "target.h")?.predict(molecule)?;
    let s = match overlap {
        OverlapKind::Identity => BlockMatrix::identity(h.layout.clone()),
        OverlapKind::Shifted => {
            let mut b = reference(config, seed, "target.s")?.predict(molecule)?;
            let lambda = b.matrix.data.iter().map(|v| v * v).sum::<f64>().sqrt() + 1.0;
            for k in 0..b.dim() {
                *b.matrix.at_mut(k, k) += lambda;
            }
            b
        }
    };
    Ok((h, s))
}
