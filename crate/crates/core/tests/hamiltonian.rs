use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use so2frames::frame::{from_local, to_local};
use so2frames::hamiltonian::io::{from_binary, from_json, load_matrix, save_matrix, to_binary, to_json};
use so2frames::hamiltonian::*;
use so2frames::irreps::{IrrepsLayout, So2Features, So3Features};
use so2frames::linalg::Matrix;
use so2frames::model::*;
use so2frames::params::{zeros_like, ParamSet};
use so2frames::rng::{normal_vec, stream};
use so2frames::rotation::{rotate_features, Rotation};

fn water() -> Molecule {
    demo_molecule()
}

fn random_symmetric(n: usize, rng: &mut impl Rng) -> Matrix {
    let a = Matrix::from_vec(n, n, normal_vec(rng, n * n));
    a.add(&a.transpose()).scale(0.5)
}

fn random_spd(n: usize, rng: &mut impl Rng) -> Matrix {
    let a = Matrix::from_vec(n, n, normal_vec(rng, n * n));
    let mut s = a.matmul(&a.transpose()).scale(1.0 / n as f64);
    for k in 0..n {
        *s.at_mut(k, k) += 0.5;
    }
    s
}

fn random_block(layout: &OrbitalLayout, rng: &mut impl Rng) -> BlockMatrix {
    BlockMatrix::new(layout.clone(), random_symmetric(layout.dim(), rng)).unwrap()
}

fn water_layout() -> OrbitalLayout {
    build_orbital_layout(&[8, 1, 1], &default_basis()).unwrap()
}

fn column(m: &Matrix, k: usize) -> Vec<f64> {
    (0..m.rows).map(|r| m.get(r, k)).collect()
}

#[test]
fn layout_dimensions() {
    let mut one = BTreeMap::new();
    one.insert(1, vec![0]);
    assert_eq!(build_orbital_layout(&[1], &one).unwrap().dim(), 1);
    let l = water_layout();
    assert_eq!(l.dim(), 24);
    assert_eq!(l.atom_range(0), 0..14);
    assert_eq!(l.atom_range(1), 14..19);
    assert_eq!(l.orbital_range(0, 5), 9..14);
    assert!(matches!(build_orbital_layout(&[2], &default_basis()), Err(so2frames::error::Error::UnknownElement(2))));
}

#[test]
fn layout_offsets_are_contiguous() {
    let l = build_orbital_layout(&[6, 1, 9, 1, 7], &default_basis()).unwrap();
    let mut next = 0;
    for a in 0..l.num_atoms() {
        for s in 0..l.orbitals(a).len() {
            let r = l.orbital_range(a, s);
            assert_eq!(r.start, next);
            assert_eq!(r.len(), 2 * l.orbitals(a)[s] + 1);
            next = r.end;
            for row in r {
                assert_eq!(l.atom_of(row), a);
            }
        }
    }
    assert_eq!(next, l.dim());
}

#[test]
fn relabeling_permutes_offsets() {
    let zs = [8, 1, 6, 1];
    let perm = [2, 0, 3, 1];
    let a = build_orbital_layout(&zs, &default_basis()).unwrap();
    let pz: Vec<u32> = perm.iter().map(|&p| zs[p]).collect();
    let b = build_orbital_layout(&pz, &default_basis()).unwrap();
    assert_eq!(a.dim(), b.dim());
    for (new, &old) in perm.iter().enumerate() {
        assert_eq!(a.orbitals(old), b.orbitals(new));
        assert_eq!(a.atom_range(old).len(), b.atom_range(new).len());
    }
}

fn pair_layout(cfg: &ModelConfig) -> IrrepsLayout {
    cfg.local_layout().unwrap()
}

fn random_inputs(cfg: &ModelConfig, graph: &MoleculeGraph, rng: &mut impl Rng) -> (Vec<So3Features>, Vec<So2Features>) {
    let nodes = (0..graph.num_nodes())
        .map(|_| So3Features::from_vec(&cfg.hidden, normal_vec(rng, cfg.hidden.dim())).unwrap())
        .collect();
    let pl = pair_layout(cfg);
    let pairs = graph
        .edges
        .iter()
        .map(|_| So2Features::from_vec(&pl, normal_vec(rng, pl.dim())).unwrap())
        .collect();
    (nodes, pairs)
}

#[test]
fn assemble_zero_inputs_give_zero_matrix() {
    let cfg = demo_config(0);
    let model = Model::init(cfg.clone()).unwrap();
    let p = model.prepare(&water()).unwrap();
    let nodes = vec![So3Features::zeros(&cfg.hidden).unwrap(); 3];
    let pairs = vec![So2Features::zeros(&pair_layout(&cfg)).unwrap(); p.graph.edges.len()];
    let h = assemble(&nodes, &pairs, &p.graph, &p.geom, &p.layout, &zeros_like(&model.expansion)).unwrap();
    assert_eq!(h.matrix.max_abs(), 0.0);
}

#[test]
fn assemble_is_symmetric_and_block_equivariant() {
    let cfg = demo_config(1);
    let model = Model::init(cfg.clone()).unwrap();
    let mol = water();
    let p = model.prepare(&mol).unwrap();
    let mut rng = stream(2, "assemble");
    let (nodes, pairs) = random_inputs(&cfg, &p.graph, &mut rng);
    let h = assemble(&nodes, &pairs, &p.graph, &p.geom, &p.layout, &model.expansion).unwrap();
    assert!(h.matrix.symmetry_error() < 1e-12);
    for _ in 0..5 {
        let g = Rotation::random(&mut rng);
        let q = model.prepare(&mol.rotated(&g)).unwrap();
        let rn: Vec<So3Features> = nodes.iter().map(|x| rotate_features(x, &g).unwrap()).collect();
        let rp: Vec<So2Features> = pairs
            .iter()
            .enumerate()
            .map(|(e, x)| {
                let global = rotate_features(&from_local(&p.geom.edge_frames[e], x).unwrap(), &g).unwrap();
                to_local(&q.geom.edge_frames[e], &global).unwrap()
            })
            .collect();
        let hr = assemble(&rn, &rp, &q.graph, &q.geom, &q.layout, &model.expansion).unwrap();
        assert!(hr.matrix.max_abs_diff(&block_rotate(&h, &g).matrix) < 1e-10);
    }
}

#[test]
fn assemble_leaves_distant_pairs_zero() {
    let cfg = ModelConfig { cutoff: 3.0, ..demo_config(0) };
    let model = Model::init(cfg).unwrap();
    let mol = Molecule::new(vec![Atom { z: 1, pos: [0.0; 3] }, Atom { z: 1, pos: [0.0, 0.0, 1.4] }, Atom { z: 8, pos: [0.0, 0.0, 9.0] }]);
    let h = model.predict(&mol).unwrap();
    for r in h.layout.atom_range(0).chain(h.layout.atom_range(1)) {
        for c in h.layout.atom_range(2) {
            assert_eq!(h.matrix.get(r, c), 0.0);
        }
    }
    assert!(h.matrix.get(0, 5) != 0.0);
}

#[test]
fn block_rotate_identity_and_scalar_layouts() {
    let mut rng = stream(3, "rotate");
    let l = water_layout();
    let h = random_block(&l, &mut rng);
    assert!(block_rotate(&h, &Rotation::IDENTITY).matrix.max_abs_diff(&h.matrix) < 1e-15);
    let s_only = OrbitalLayout::from_atoms(vec![vec![0, 0], vec![0], vec![0, 0, 0]]);
    let hs = random_block(&s_only, &mut rng);
    for _ in 0..5 {
        let g = Rotation::random(&mut rng);
        assert_eq!(block_rotate(&hs, &g).matrix, hs.matrix);
    }
}

#[test]
fn block_rotate_composes() {
    let mut rng = stream(4, "rotate");
    let h = random_block(&water_layout(), &mut rng);
    for _ in 0..10 {
        let (g1, g2) = (Rotation::random(&mut rng), Rotation::random(&mut rng));
        let two = block_rotate(&block_rotate(&h, &g1), &g2);
        let one = block_rotate(&h, &g2.compose(&g1));
        assert!(two.matrix.max_abs_diff(&one.matrix) < 1e-11);
    }
}

#[test]
fn eigensolve_diagonal_case() {
    let h = Matrix::diag(&[3.0, 1.0, 2.0]);
    let (eps, c) = generalized_eigensolve(&h, &Matrix::identity(3)).unwrap();
    assert_eq!(eps, vec![1.0, 2.0, 3.0]);
    for (k, row) in [1, 2, 0].iter().enumerate() {
        assert_eq!(c.get(*row, k).abs(), 1.0);
    }
}

#[test]
fn cholesky_rejects_indefinite_overlap() {
    let s = Matrix::diag(&[1.0, -1.0]);
    assert!(matches!(cholesky(&s), Err(so2frames::error::Error::NotPositiveDefinite(1))));
    assert!(generalized_eigensolve(&Matrix::identity(2), &s).is_err());
}

fn residuals(h: &Matrix, s: &Matrix, eps: &[f64], c: &Matrix) -> (f64, f64) {
    let hc = h.matmul(c);
    let scd = s.matmul(c).matmul(&Matrix::diag(eps));
    let ortho = c.transpose().matmul(s).matmul(c).max_abs_diff(&Matrix::identity(c.cols));
    (hc.max_abs_diff(&scd), ortho)
}

#[test]
fn eigensolve_random_pairs() {
    let mut rng = stream(5, "eigen");
    for trial in 0..50 {
        let n = 1 + (trial * 13) % 64;
        let h = random_symmetric(n, &mut rng);
        let s = random_spd(n, &mut rng);
        let (eps, c) = generalized_eigensolve(&h, &s).unwrap();
        assert!(eps.windows(2).all(|w| w[0] <= w[1]));
        let (res, ortho) = residuals(&h, &s, &eps, &c);
        assert!(res < 1e-8, "n={n} residual {res:e}");
        assert!(ortho < 1e-8, "n={n} orthonormality {ortho:e}");
    }
}

#[test]
fn symmetric_eigen_matches_nalgebra() {
    let mut rng = stream(6, "eigen");
    for n in [2, 7, 24, 40] {
        let a = random_symmetric(n, &mut rng);
        let (eps, _) = symmetric_eigen(&a).unwrap();
        let mut ours = eps.clone();
        ours.sort_by(f64::total_cmp);
        let mut theirs: Vec<f64> = DMatrix::from_row_slice(n, n, &a.data).symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn spectrum_is_rotation_invariant() {
    let mut rng = stream(7, "eigen");
    let model = Model::init(demo_config(3)).unwrap();
    let (h, s) = gen_synthetic_target(&water(), &model.config, 9, OverlapKind::Shifted).unwrap();
    let (eps, _) = generalized_eigensolve(&h.matrix, &s.matrix).unwrap();
    for _ in 0..5 {
        let g = Rotation::random(&mut rng);
        let (er, _) = generalized_eigensolve(&block_rotate(&h, &g).matrix, &block_rotate(&s, &g).matrix).unwrap();
        let worst = eps.iter().zip(&er).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9);
    }
}

#[test]
fn metrics_fixed_point_and_shift() {
    let mut rng = stream(8, "metrics");
    let l = water_layout();
    let h = random_block(&l, &mut rng);
    let s = BlockMatrix::new(l.clone(), random_spd(l.dim(), &mut rng)).unwrap();
    let m = metrics(&h, &h, &s, 5).unwrap();
    assert_eq!((m.mae_diag, m.mae_offdiag, m.mae_all, m.mae_eps, m.cosine_psi), (0.0, 0.0, 0.0, 0.0, 1.0));

    // With S = I, adding 0.25 I shifts every eigenvalue and keeps the vectors.
    let eye = BlockMatrix::identity(l.clone());
    let mut shifted = h.clone();
    for k in 0..l.dim() {
        *shifted.matrix.at_mut(k, k) += 0.25;
    }
    let m = metrics(&shifted, &h, &eye, 5).unwrap();
    assert!((m.mae_eps - 0.25).abs() < 1e-12);
    assert!((m.cosine_psi - 1.0).abs() < 1e-12);
    assert_eq!(m.mae_offdiag, 0.0);
    let diag_entries: usize = (0..3).map(|a| l.atom_range(a).len().pow(2)).sum();
    assert!((m.mae_diag - 0.25 * 24.0 / diag_entries as f64).abs() < 1e-15);
    assert!((m.mae_all - 0.25 / 24.0).abs() < 1e-15);
}

#[test]
fn metrics_two_by_two_closed_form() {
    // [[a, b], [b, d]]: eigenvalues (a + d)/2 -+ sqrt(((a - d)/2)^2 + b^2),
    // lower eigenvector along (b, lambda - a).
    let layout = OrbitalLayout::from_atoms(vec![vec![0], vec![0]]);
    let eig = |a: f64, b: f64, d: f64| {
        let (mid, r) = ((a + d) / 2.0, (((a - d) / 2.0).powi(2) + b * b).sqrt());
        let lo = mid - r;
        let n = (b * b + (lo - a).powi(2)).sqrt();
        ([lo, mid + r], [b / n, (lo - a) / n])
    };
    let (t, p) = ((1.0, 0.5, -1.0), (1.2, 0.3, -0.7));
    let ht = BlockMatrix::new(layout.clone(), Matrix::from_rows(&[vec![t.0, t.1], vec![t.1, t.2]])).unwrap();
    let hp = BlockMatrix::new(layout.clone(), Matrix::from_rows(&[vec![p.0, p.1], vec![p.1, p.2]])).unwrap();
    let m = metrics(&hp, &ht, &BlockMatrix::identity(layout), 1).unwrap();
    let ((et, vt), (ep, vp)) = (eig(t.0, t.1, t.2), eig(p.0, p.1, p.2));
    let mae_eps = ((et[0] - ep[0]).abs() + (et[1] - ep[1]).abs()) / 2.0;
    let cos = (vt[0] * vp[0] + vt[1] * vp[1]).abs();
    assert!((m.mae_eps - mae_eps).abs() < 1e-14);
    assert!((m.cosine_psi - cos).abs() < 1e-12);
    assert!((m.mae_diag - (0.2 + 0.3) / 2.0).abs() < 1e-15);
    assert!((m.mae_offdiag - 0.2).abs() < 1e-15);
}

#[test]
fn degenerate_clusters_compare_subspaces() {
    // Any rotation inside a degenerate pair leaves the cosine at 1.
    let c_true = Matrix::identity(3);
    let (a, b) = (0.6f64, 0.8f64);
    let c_pred = Matrix::from_rows(&[vec![a, -b, 0.0], vec![b, a, 0.0], vec![0.0, 0.0, 1.0]]);
    let cos = occupied_cosine(&c_pred, &c_true, &[1.0, 1.0, 2.0], 2).unwrap();
    assert!((cos - 1.0).abs() < 1e-14);
    // Without the degeneracy the same columns score |cos| per column.
    let cos = occupied_cosine(&c_pred, &c_true, &[1.0, 1.5, 2.0], 2).unwrap();
    assert!((cos - a).abs() < 1e-14);
    let p = principal_cosines(&[column(&c_pred, 0)], &[column(&c_true, 1)]).unwrap();
    assert!((p[0] - b).abs() < 1e-14);
}

#[test]
fn metrics_reject_mismatched_inputs() {
    let l = water_layout();
    let h = BlockMatrix::identity(l.clone());
    let other = BlockMatrix::identity(OrbitalLayout::from_atoms(vec![vec![0]]));
    assert!(metrics(&h, &other, &h, 1).is_err());
    assert!(metrics(&h, &h, &h, 0).is_err());
    assert!(metrics(&h, &h, &h, 25).is_err());
}

#[test]
fn matrix_files_round_trip() {
    let mut rng = stream(10, "io");
    let h = random_block(&water_layout(), &mut rng);
    assert_eq!(from_json(&to_json(&h).unwrap()).unwrap(), h);
    assert_eq!(from_binary(&to_binary(&h.matrix)).unwrap(), h.matrix);
    let dir = tempfile::tempdir().unwrap();
    let (pj, pb) = (dir.path().join("h.json"), dir.path().join("h.bin"));
    save_matrix(&pj, &h).unwrap();
    save_matrix(&pb, &h).unwrap();
    assert_eq!(load_matrix(&pj, None).unwrap(), h);
    assert_eq!(load_matrix(&pb, Some(&h.layout)).unwrap(), h);
    assert!(load_matrix(&pb, None).is_err());
    let mut bad = to_binary(&h.matrix);
    bad.pop();
    assert!(from_binary(&bad).is_err());
}

#[test]
fn synthetic_targets_are_deterministic_equivariant_and_spd() {
    let cfg = demo_config(0);
    let mol = water();
    let (h1, s1) = gen_synthetic_target(&mol, &cfg, 11, OverlapKind::Shifted).unwrap();
    let (h2, s2) = gen_synthetic_target(&mol, &cfg, 11, OverlapKind::Shifted).unwrap();
    assert_eq!(h1.matrix.data, h2.matrix.data);
    assert_eq!(s1.matrix.data, s2.matrix.data);
    let (h3, _) = gen_synthetic_target(&mol, &cfg, 12, OverlapKind::Identity).unwrap();
    assert!(h3.matrix.max_abs_diff(&h1.matrix) > 1e-3);
    assert!(h1.matrix.symmetry_error() < 1e-12 && s1.matrix.symmetry_error() < 1e-12);
    assert!(cholesky(&s1.matrix).is_ok());

    let mut rng = stream(12, "target");
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let g = Rotation::random(&mut rng);
        let (hr, sr) = gen_synthetic_target(&mol.rotated(&g), &cfg, 11, OverlapKind::Shifted).unwrap();
        worst = worst.max(hr.matrix.max_abs_diff(&block_rotate(&h1, &g).matrix));
        worst = worst.max(sr.matrix.max_abs_diff(&block_rotate(&s1, &g).matrix));
    }
    assert!(worst < 1e-10, "{worst:e}");
}

#[test]
fn expansion_weights_cover_every_orbital_pair() {
    let model = Model::init(demo_config(0)).unwrap();
    let mut keys = Vec::new();
    model.expansion.visit("", &mut |k, _| keys.push(k.to_string()));
    assert!(keys.contains(&"d.8.5.5.l4".to_string()));
    assert!(keys.contains(&"o.1.8.2.5.l1".to_string()));
    let sparse = IrrepsLayout::parse("4x0e+4x2e").unwrap();
    assert!(ExpansionWeights::init(&[1], &default_basis(), &sparse, &mut stream(0, "x")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eigensolve_residual_bounds(seed in any::<u64>(), n in 1usize..=64) {
        let mut rng = stream(seed, "prop.eigen");
        let h = random_symmetric(n, &mut rng);
        let s = random_spd(n, &mut rng);
        let (eps, c) = generalized_eigensolve(&h, &s).unwrap();
        let (res, ortho) = residuals(&h, &s, &eps, &c);
        prop_assert!(res < 1e-8 && ortho < 1e-8);
    }

    #[test]
    fn metrics_fixed_point(seed in any::<u64>(), n_occ in 1usize..=24) {
        let mut rng = stream(seed, "prop.metrics");
        let l = water_layout();
        let h = random_block(&l, &mut rng);
        let s = BlockMatrix::new(l.clone(), random_spd(l.dim(), &mut rng)).unwrap();
        let m = metrics(&h, &h, &s, n_occ).unwrap();
        prop_assert_eq!((m.mae_all, m.mae_eps, m.cosine_psi), (0.0, 0.0, 1.0));
    }

    #[test]
    fn assembly_stays_symmetric(seed in any::<u64>()) {
        let cfg = demo_config(seed);
        let model = Model::init(cfg.clone()).unwrap();
        let p = model.prepare(&water()).unwrap();
        let (nodes, pairs) = random_inputs(&cfg, &p.graph, &mut stream(seed, "prop.assemble"));
        let h = assemble(&nodes, &pairs, &p.graph, &p.geom, &p.layout, &model.expansion).unwrap();
        prop_assert!(h.matrix.symmetry_error() < 1e-12);
    }
}
