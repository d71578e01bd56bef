//! Command implementations behind the `so2frames` binary: synthetic data,
//! equivariance audits, operation-count benchmarks, the fit demo,
//! prediction and metrics. Each command returns a [`RunReport`].

mod cli;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

pub use cli::{main_with, run, Cli, Command, Global};
pub use report::{Bound, Check, RunReport};

use crate::bench::{brute_force_path_count, complexity, kernel_timings};
use crate::error::{Error, Result};
use crate::frame::from_local;
use crate::hamiltonian::io::{load_matrix, matrix_from_rows, matrix_rows, save_matrix};
use crate::hamiltonian::{
    block_rotate, build_orbital_layout, gen_synthetic_target, metrics, BlockMatrix, Metrics, OrbitalLayout, OverlapKind,
};
use crate::model::{assemble_prepared, fit_demo, Atom, Features, Model, ModelConfig, Molecule, Prepared};
use crate::rng::stream;
use crate::rotation::{rotate_features, Rotation};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SO2FRAMES_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Dimension(format!("{THREADS_ENV}={v} is not a thread count")))?;
        // A second call (tests) finds the pool already built; that is fine.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn read_molecule(path: &Path) -> Result<Molecule> {
    Ok(serde_json::from_str(&read_text(path)?)?)
}

pub fn write_molecule(path: &Path, m: &Molecule) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(m)?)?;
    Ok(())
}

fn config_value(cfg: &ModelConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// Uniform positions in a cube sized for `n` atoms at spacing `min_dist`,
/// elements drawn from `elements`. Each atom gets `max_tries` attempts.
pub fn sample_molecule(seed: u64, n: usize, elements: &[u32], min_dist: f64, max_tries: usize) -> Result<Molecule> {
    if !(min_dist > 0.0) || elements.is_empty() || n == 0 {
        return Err(Error::Dimension("need n >= 1, elements and min_dist > 0".into()));
    }
    let mut rng = stream(seed, "gen.positions");
    let side = min_dist * 1.6 * (n as f64).cbrt();
    let mut atoms: Vec<Atom> = Vec::with_capacity(n);
    while atoms.len() < n {
        let mut placed = false;
        for _ in 0..max_tries {
            let pos = [rng.gen_range(0.0..side), rng.gen_range(0.0..side), rng.gen_range(0.0..side)];
            let clear = atoms
                .iter()
                .all(|a| (0..3).map(|k| (a.pos[k] - pos[k]).powi(2)).sum::<f64>().sqrt() >= min_dist);
            if clear {
                let z = elements[rng.gen_range(0..elements.len())];
                atoms.push(Atom { z, pos });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SamplingFailed(max_tries));
        }
    }
    Ok(Molecule::new(atoms))
}

pub struct GenOptions {
    pub atoms: usize,
    pub elements: Vec<u32>,
    pub min_dist: f64,
    pub overlap: OverlapKind,
    pub max_tries: usize,
}

/// Samples a molecule and attaches synthetic `(H, S)` targets to it.
pub fn cmd_gen(cfg: &ModelConfig, opts: &GenOptions, out: Option<&Path>) -> Result<(Molecule, RunReport)> {
    let mut mol = sample_molecule(cfg.seed, opts.atoms, &opts.elements, opts.min_dist, opts.max_tries)?;
    let (h, s) = gen_synthetic_target(&mol, cfg, cfg.seed, opts.overlap)?;
    mol.hamiltonian = Some(matrix_rows(&h.matrix));
    mol.overlap = Some(matrix_rows(&s.matrix));

    let mut report = RunReport::new(
        "gen",
        cfg.seed,
        json!({ "model": config_value(cfg), "atoms": opts.atoms, "elements": opts.elements, "min_dist": opts.min_dist }),
    );
    let mut closest = f64::INFINITY;
    for (i, a) in mol.atoms.iter().enumerate() {
        for b in &mol.atoms[i + 1..] {
            closest = closest.min((0..3).map(|k| (a.pos[k] - b.pos[k]).powi(2)).sum::<f64>().sqrt());
        }
    }
    if mol.atoms.len() > 1 {
        report.push(Check::within("min_pair_distance", closest, opts.min_dist, f64::INFINITY));
    }
    report.push(Check::info("orbitals", h.dim() as f64));
    report.push(Check::below("symmetry_error", h.matrix.symmetry_error(), 1e-12));
    if let Some(p) = out {
        write_molecule(p, &mol)?;
        report.files.push(p.display().to_string());
    }
    Ok((mol, report))
}

fn prepare(model: &Model, mol: &Molecule, corrupt: bool) -> Result<Prepared> {
    let mut p = model.prepare(mol)?;
    if corrupt {
        p.geom.corrupt_caches();
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Deviation {
    node: f64,
    pair: f64,
    block: f64,
}

struct Reference {
    prepared: Prepared,
    features: Features,
    matrix: BlockMatrix,
}

fn deviation(model: &Model, mol: &Molecule, r: &Reference, g: &Rotation, corrupt: bool) -> Result<Deviation> {
    let (base, f, h) = (&r.prepared, &r.features, &r.matrix);
    let q = prepare(model, &mol.rotated(g), corrupt)?;
    let fq = model.features(&q)?;
    let hq = assemble_prepared(model, &q, &fq)?;
    let mut d = Deviation::default();
    for (a, b) in f.nodes.iter().zip(&fq.nodes) {
        d.node = d.node.max(rotate_features(a, g)?.max_abs_diff(b));
    }
    for (e, (a, b)) in f.pairs.iter().zip(&fq.pairs).enumerate() {
        let want = rotate_features(&from_local(&base.geom.edge_frames[e], a)?, g)?;
        d.pair = d.pair.max(want.max_abs_diff(&from_local(&q.geom.edge_frames[e], b)?));
    }
    d.block = hq.matrix.max_abs_diff(&block_rotate(h, g).matrix);
    Ok(d)
}

pub struct EquivOptions {
    pub trials: usize,
    pub tolerance: f64,
    /// Perturbs every cached Wigner matrix before evaluating; the audit
    /// must then fail.
    pub corrupt_caches: bool,
}

/// Node-track, pair-track and block-level equivariance over random rotations.
pub fn cmd_check_equiv(model: &Model, mol: &Molecule, opts: &EquivOptions) -> Result<RunReport> {
    let seed = model.config.seed;
    let prepared = prepare(model, mol, opts.corrupt_caches)?;
    let features = model.features(&prepared)?;
    let matrix = assemble_prepared(model, &prepared, &features)?;
    let base = Reference { prepared, features, matrix };
    let mut rng = stream(seed, "check-equiv.rotations");
    let rotations: Vec<Rotation> = (0..opts.trials).map(|_| Rotation::random(&mut rng)).collect();
    let ident = deviation(model, mol, &base, &Rotation::IDENTITY, opts.corrupt_caches)?;
    let devs = rotations
        .par_iter()
        .map(|g| deviation(model, mol, &base, g, opts.corrupt_caches))
        .collect::<Result<Vec<_>>>()?;
    let worst = devs.iter().fold(Deviation::default(), |a, d| Deviation {
        node: a.node.max(d.node),
        pair: a.pair.max(d.pair),
        block: a.block.max(d.block),
    });
    let mut report = RunReport::new(
        "check-equiv",
        seed,
        json!({ "model": config_value(&model.config), "atoms": mol.atoms.len(), "trials": opts.trials, "tolerance": opts.tolerance }),
    );
    report.push(Check::equals("identity_deviation", ident.node.max(ident.pair).max(ident.block), 0.0));
    report.push(Check::below("node_track_deviation", worst.node, opts.tolerance));
    report.push(Check::below("pair_track_deviation", worst.pair, opts.tolerance));
    report.push(Check::below("block_deviation", worst.block, opts.tolerance));
    Ok(report)
}

pub struct BenchOptions {
    pub l_sizes: Vec<usize>,
    pub m_sizes: Vec<usize>,
    pub v: usize,
    pub repeats: usize,
}

/// Multiply-count regressions; wall-clock medians go to `timing_ms` only.
pub fn cmd_bench(opts: &BenchOptions, seed: u64) -> Result<RunReport> {
    let c = complexity(&opts.l_sizes, &opts.m_sizes, opts.v)?;
    let mut report = RunReport::new(
        "bench",
        seed,
        json!({ "l_sizes": opts.l_sizes, "m_sizes": opts.m_sizes, "v": opts.v, "repeats": opts.repeats }),
    );
    report.push(Check::within("so3_tp_slope", c.so3_tp.slope, 5.0, 6.5));
    report.push(Check::info("so3_tp_slope_log_l", c.so3_tp.alt_slope));
    report.push(Check::within("rotation_so2_linear_slope", c.rotation_so2_linear.slope, 2.5, 3.5));
    report.push(Check::info("rotation_so2_linear_slope_log_l", c.rotation_so2_linear.alt_slope));
    let v = opts.v as f64;
    report.push(Check::within("so2_tp_path_slope", c.so2_tp_paths.slope, v - 0.3, v + 0.3));
    report.push(Check::info("so2_tp_multiply_slope", c.so2_tp_multiplies.slope));
    for s in [&c.so3_tp, &c.rotation_so2_linear, &c.so2_tp_paths, &c.so2_tp_multiplies] {
        for (n, count) in s.sizes.iter().zip(&s.counts) {
            report.push(Check::info(&format!("{}[{n}]", s.kernel), *count as f64));
        }
    }
    for v in 2..=3 {
        for m in 0..=4 {
            let got = crate::so2::enumerate_tp_paths(m, v).len() as f64;
            report.push(Check::equals(&format!("paths_v{v}_m{m}"), got, brute_force_path_count(m, v) as f64));
        }
    }
    for &l in &opts.l_sizes {
        let (tp, rot) = kernel_timings(l, opts.repeats)?;
        report.timing_ms.insert(format!("so3_tp[{l}]"), tp);
        report.timing_ms.insert(format!("rotation_so2_linear[{l}]"), rot);
    }
    Ok(report)
}

pub struct FitOptions {
    pub steps: usize,
    pub lr: f64,
}

/// Number of 100-step windows whose mean loss did not drop below the
/// previous window's.
pub fn nonmonotone_windows(losses: &[f64], window: usize) -> usize {
    let means: Vec<f64> = losses
        .chunks_exact(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect();
    means.windows(2).filter(|w| w[1] >= w[0]).count()
}

/// Fits a fresh model to the molecule's stored Hamiltonian, or to a
/// synthetic target when it carries none. Writes the checkpoint to `out`
/// and the loss trajectory next to it as CSV.
pub fn cmd_fit(cfg: &ModelConfig, mol: &Molecule, opts: &FitOptions, out: Option<&Path>) -> Result<(Model, RunReport)> {
    let mut model = Model::init(cfg.clone())?;
    let target = match &mol.hamiltonian {
        Some(rows) => matrix_from_rows(rows)?,
        None => gen_synthetic_target(mol, cfg, cfg.seed, OverlapKind::Identity)?.0.matrix,
    };
    let t = Instant::now();
    let losses = fit_demo(&mut model, mol, &target, opts.steps, opts.lr)?;
    let elapsed = t.elapsed().as_secs_f64() * 1e3;

    let mut report = RunReport::new(
        "fit",
        cfg.seed,
        json!({ "model": config_value(cfg), "steps": opts.steps, "lr": opts.lr }),
    );
    report.push(Check::info("initial_mae", losses[0]));
    report.push(Check::below("final_mae", *losses.last().expect("non-empty"), 1e-3));
    if opts.steps >= 200 {
        report.push(Check::equals("nonmonotone_windows", nonmonotone_windows(&losses[..opts.steps], 100) as f64, 0.0));
    }
    report.timing_ms.insert("fit".into(), elapsed);
    if let Some(p) = out {
        model.save(p)?;
        let csv = csv_path(p);
        let mut s = String::from("step,loss\n");
        for (k, l) in losses.iter().enumerate() {
            s.push_str(&format!("{k},{l:e}\n"));
        }
        fs::write(&csv, s)?;
        report.files.push(p.display().to_string());
        report.files.push(csv.display().to_string());
    }
    Ok((model, report))
}

pub fn csv_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("csv")
}

/// Writes the predicted matrix (JSON, or binary for a `.bin` path).
pub fn cmd_predict(model: &Model, mol: &Molecule, out: &Path) -> Result<(BlockMatrix, RunReport)> {
    let h = model.predict(mol)?;
    save_matrix(out, &h)?;
    let mut report = RunReport::new("predict", model.config.seed, json!({ "model": config_value(&model.config) }));
    report.push(Check::info("orbitals", h.dim() as f64));
    report.push(Check::below("symmetry_error", h.matrix.symmetry_error(), 1e-12));
    report.files.push(out.display().to_string());
    Ok((h, report))
}

/// A matrix file, or the `hamiltonian` (and `overlap`, if any) of a
/// molecule file. Molecule matrices take their layout from `basis`; binary
/// files need `layout`.
pub fn load_hamiltonian(
    path: &Path,
    layout: Option<&OrbitalLayout>,
    basis: &BTreeMap<u32, Vec<usize>>,
) -> Result<(BlockMatrix, Option<BlockMatrix>)> {
    if !path.extension().is_some_and(|e| e == "bin") {
        let v: serde_json::Value = serde_json::from_str(&read_text(path)?)?;
        if v.get("atoms").is_some() {
            let mol: Molecule = serde_json::from_value(v)?;
            let rows = mol
                .hamiltonian
                .as_ref()
                .ok_or_else(|| Error::MatrixFile(format!("{}: molecule has no hamiltonian", path.display())))?;
            let layout = build_orbital_layout(&mol.atomic_numbers(), basis)?;
            let h = BlockMatrix::new(layout.clone(), matrix_from_rows(rows)?)?;
            let s = match &mol.overlap {
                Some(rows) => Some(BlockMatrix::new(layout, matrix_from_rows(rows)?)?),
                None => None,
            };
            return Ok((h, s));
        }
    }
    Ok((load_matrix(path, layout)?, None))
}

pub struct MetricsOptions {
    pub n_occ: Option<usize>,
}

/// Default occupied count: half the orbitals, rounded up.
pub fn default_occupied(n: usize) -> usize {
    n.div_ceil(2).max(1)
}

pub fn metrics_report(pred: &BlockMatrix, truth: &BlockMatrix, s: &BlockMatrix, n_occ: usize) -> Result<(Metrics, RunReport)> {
    let m = metrics(pred, truth, s, n_occ)?;
    let mut report = RunReport::new("metrics", 0, json!({ "orbitals": truth.dim(), "n_occ": n_occ }));
    report.push(Check::info("mae_diag", m.mae_diag));
    report.push(Check::info("mae_offdiag", m.mae_offdiag));
    report.push(Check::info("mae_all", m.mae_all));
    report.push(Check::info("mae_eps", m.mae_eps));
    report.push(Check::info("cosine_psi", m.cosine_psi));
    Ok((m, report))
}

/// Compares two matrix (or molecule) files. The overlap comes from
/// `overlap`, else from a molecule reference file, else the identity.
pub fn cmd_metrics(
    pred: &Path,
    truth: &Path,
    overlap: Option<&Path>,
    basis: &BTreeMap<u32, Vec<usize>>,
    opts: &MetricsOptions,
) -> Result<(Metrics, RunReport)> {
    let is_bin = |p: &Path| p.extension().is_some_and(|e| e == "bin");
    let ((p, _), (t, ts)) = if is_bin(truth) {
        let p = load_hamiltonian(pred, None, basis)?;
        let t = load_hamiltonian(truth, Some(&p.0.layout), basis)?;
        (p, t)
    } else {
        let t = load_hamiltonian(truth, None, basis)?;
        let p = load_hamiltonian(pred, Some(&t.0.layout), basis)?;
        (p, t)
    };
    if p.layout != t.layout {
        return Err(Error::Dimension("prediction and reference layouts differ".into()));
    }
    let s = match (overlap, ts) {
        (Some(path), _) => load_matrix(path, Some(&t.layout))?,
        (None, Some(s)) => s,
        (None, None) => BlockMatrix::identity(t.layout.clone()),
    };
    let n_occ = opts.n_occ.unwrap_or_else(|| default_occupied(t.dim()));
    metrics_report(&p, &t, &s, n_occ)
}
