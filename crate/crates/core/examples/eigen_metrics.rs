//! Solves H C = S C diag(eps) for a synthetic target and scores a
//! perturbed prediction with the matrix and orbital metrics.

use so2frames::hamiltonian::{gen_synthetic_target, generalized_eigensolve, metrics, OverlapKind};
use so2frames::harness::sample_molecule;
use so2frames::linalg::Matrix;
use so2frames::model::ModelConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mol = sample_molecule(6, 4, &[1, 8], 1.8, 1000)?;
    let (h, s) = gen_synthetic_target(&mol, &ModelConfig::default(), 6, OverlapKind::Shifted)?;
    let (eps, c) = generalized_eigensolve(&h.matrix, &s.matrix)?;
    let residual = h.matrix.matmul(&c).max_abs_diff(&s.matrix.matmul(&c).matmul(&Matrix::diag(&eps)));
    let ortho = c.transpose().matmul(&s.matrix).matmul(&c).max_abs_diff(&Matrix::identity(c.cols));
    println!("N = {}  residual {residual:.2e}  S-orthonormality {ortho:.2e}", h.dim());
    println!("lowest eigenvalues {:.4?}", &eps[..4]);

    let mut pred = h.clone();
    for (k, v) in pred.matrix.data.iter_mut().enumerate() {
        *v += 1e-3 * ((k * 7919 % 13) as f64 - 6.0);
    }
    let pred = pred.symmetrized();
    let m = metrics(&pred, &h, &s, h.dim() / 2)?;
    println!("{}", serde_json::to_string_pretty(&m)?);
    Ok(())
}
