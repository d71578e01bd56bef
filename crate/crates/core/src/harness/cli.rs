use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::*;
use crate::model::{demo_config, demo_molecule, DEMO_LR, DEMO_STEPS};

#[derive(Debug, Parser)]
#[command(name = "so2frames", version, about = "SO(2)-frame Hamiltonian networks: data, audits, benchmarks, fitting")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Feature degree cap (bench: largest L in the sweep).
    #[arg(long, global = true)]
    pub lmax: Option<usize>,
    /// Order cap of the SO(2) ops (bench: largest M in the sweep).
    #[arg(long, global = true)]
    pub mmax: Option<usize>,
    /// Tensor-product arity.
    #[arg(long, global = true)]
    pub v: Option<usize>,
    #[arg(long, global = true)]
    pub layers: Option<usize>,
    #[arg(long, global = true, value_name = "BOHR")]
    pub cutoff: Option<f64>,
    /// Model config JSON; flags above override its fields.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a molecule and attach synthetic H and S targets.
    Gen {
        #[arg(long, default_value_t = 5)]
        atoms: usize,
        /// Comma-separated atomic numbers (default: the config's elements).
        #[arg(long, value_delimiter = ',')]
        elements: Option<Vec<u32>>,
        #[arg(long, default_value_t = 1.8, value_name = "BOHR")]
        min_dist: f64,
        /// Use a shifted non-identity overlap instead of S = I.
        #[arg(long)]
        shifted_overlap: bool,
        #[arg(long, default_value_t = 1000)]
        max_tries: usize,
    },
    /// Node, pair and block equivariance under random rotations.
    CheckEquiv {
        /// Molecule JSON (default: a sampled 5-atom molecule).
        molecule: Option<PathBuf>,
        /// Model checkpoint (default: a fresh model from the seed).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, hide = true)]
        corrupt_caches: bool,
    },
    /// Multiply-count scaling of the SO(3) and SO(2) kernels.
    Bench {
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Adam on the MAE to the molecule's Hamiltonian (or a synthetic one).
    Fit {
        /// Molecule JSON (default: the built-in triatomic).
        molecule: Option<PathBuf>,
        #[arg(long, default_value_t = DEMO_STEPS)]
        steps: usize,
        #[arg(long, default_value_t = DEMO_LR)]
        lr: f64,
    },
    /// Write the predicted Hamiltonian of a molecule.
    Predict {
        molecule: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare a predicted matrix against a reference.
    Metrics {
        pred: PathBuf,
        /// Matrix file or molecule JSON with a `hamiltonian`.
        truth: PathBuf,
        #[arg(long)]
        overlap: Option<PathBuf>,
        /// Occupied orbitals (default: half the basis, rounded up).
        #[arg(long)]
        n_occ: Option<usize>,
    },
}

fn model_config(g: &Global, fallback: ModelConfig) -> Result<ModelConfig> {
    let mut cfg = match &g.config {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => fallback,
    };
    if let Some(l) = g.lmax {
        cfg = cfg.with_lmax(l);
    }
    if let Some(m) = g.mmax {
        cfg.m_max = m;
    }
    if let Some(v) = g.v {
        cfg.v = v;
    }
    if let Some(n) = g.layers {
        cfg.layers = n;
    }
    if let Some(c) = g.cutoff {
        cfg.cutoff = c;
    }
    cfg.seed = g.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(g: &Global, checkpoint: Option<&Path>) -> Result<Model> {
    match checkpoint {
        Some(p) => Model::load(p),
        None => Model::init(model_config(g, ModelConfig::default())?),
    }
}

fn require_out(g: &Global) -> Result<&Path> {
    g.out
        .as_deref()
        .ok_or_else(|| Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidInput, "--out PATH is required")))
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<RunReport> {
    let g = &cli.global;
    match &cli.command {
        Command::Gen {
            atoms,
            elements,
            min_dist,
            shifted_overlap,
            max_tries,
        } => {
            let cfg = model_config(g, ModelConfig::default())?;
            let opts = GenOptions {
                atoms: *atoms,
                elements: elements.clone().unwrap_or_else(|| cfg.elements.clone()),
                min_dist: *min_dist,
                overlap: if *shifted_overlap { OverlapKind::Shifted } else { OverlapKind::Identity },
                max_tries: *max_tries,
            };
            Ok(cmd_gen(&cfg, &opts, Some(require_out(g)?))?.1)
        }
        Command::CheckEquiv {
            molecule,
            checkpoint,
            trials,
            tol,
            corrupt_caches,
        } => {
            let model = load_model(g, checkpoint.as_deref())?;
            let mol = match molecule {
                Some(p) => read_molecule(p)?,
                None => sample_molecule(g.seed, 5, &model.config.elements, 1.8, 1000)?,
            };
            let opts = EquivOptions {
                trials: *trials,
                tolerance: *tol,
                corrupt_caches: *corrupt_caches,
            };
            cmd_check_equiv(&model, &mol, &opts)
        }
        Command::Bench { repeats } => {
            let opts = BenchOptions {
                l_sizes: (2..=g.lmax.unwrap_or(8)).collect(),
                m_sizes: (2..=g.mmax.unwrap_or(10)).collect(),
                v: g.v.unwrap_or(2),
                repeats: *repeats,
            };
            cmd_bench(&opts, g.seed)
        }
        Command::Fit { molecule, steps, lr } => {
            let cfg = model_config(g, demo_config(g.seed))?;
            let mol = match molecule {
                Some(p) => read_molecule(p)?,
                None => demo_molecule(),
            };
            Ok(cmd_fit(&cfg, &mol, &FitOptions { steps: *steps, lr: *lr }, g.out.as_deref())?.1)
        }
        Command::Predict { molecule, checkpoint } => {
            let model = load_model(g, checkpoint.as_deref())?;
            Ok(cmd_predict(&model, &read_molecule(molecule)?, require_out(g)?)?.1)
        }
        Command::Metrics {
            pred,
            truth,
            overlap,
            n_occ,
        } => {
            let cfg = model_config(g, ModelConfig::default())?;
            let (_, mut report) = cmd_metrics(pred, truth, overlap.as_deref(), &cfg.basis, &MetricsOptions { n_occ: *n_occ })?;
            report.seed = g.seed;
            Ok(report)
        }
    }
}

/// Parses `args`, runs the command, prints the report and returns the exit
/// code: 0 when every check passes, 1 on a failed check or a diverged fit,
/// 2 on usage and I/O errors.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 2;
    }
    match run(&cli) {
        Ok(report) => {
            let text = if cli.global.json {
                report.to_json() + "\n"
            } else {
                report.to_human()
            };
            // A closed pipe (e.g. `| head`) is not an error worth a panic.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            if report.all_pass() {
                0
            } else {
                1
            }
        }
        Err(e @ Error::NonFiniteLoss { .. }) => {
            eprintln!("error: {e}");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
