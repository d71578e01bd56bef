//! The two-track network: node features through SO(2)-frame message passing
//! and tensor-product updates, pair features through a frame-local
//! feed-forward, and the matrix read-out.

mod graph;
mod layers;
mod net;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use graph::{Atom, Edge, Geometry, Molecule, MoleculeGraph};
pub use layers::{
    degree_inner_products, degree_inner_products_vjp, equivariant_layernorm_so3, rbf, tapered_layout, Embedding,
    PairEmbed, PairEmbedCache, So3Gate, So3GateCache, So3LayerNorm, So3Linear, So3LnCache,
};
pub use net::{backward, default_basis, edge_rbfs, forward_cached, Features, ForwardCache, LayerParams, ModelConfig, NetParams};

use crate::error::{Error, Result};
use crate::hamiltonian::{assemble, assemble_vjp, build_orbital_layout, BlockMatrix, ExpansionWeights, OrbitalLayout};
use crate::linalg::Matrix;
use crate::params::{join, load_named, named, zeros_like, Adam, ParamSet, Tensor};
use crate::rng::stream;

/// Network parameters plus expansion weights, with the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub net: NetParams,
    pub expansion: ExpansionWeights,
}

impl ParamSet for Model {
    fn visit(&self, p: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.net.visit(&join(p, "net"), f);
        self.expansion.visit(&join(p, "expansion"), f);
    }
    fn visit_mut(&mut self, p: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.net.visit_mut(&join(p, "net"), f);
        self.expansion.visit_mut(&join(p, "expansion"), f);
    }
}

/// Graph, cached frames and orbital layout for one molecule.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graph: MoleculeGraph,
    pub geom: Geometry,
    pub layout: OrbitalLayout,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    params: std::collections::BTreeMap<String, Tensor>,
}

/// Matrix read-out of already computed features.
pub fn assemble_prepared(model: &Model, p: &Prepared, f: &Features) -> Result<BlockMatrix> {
    assemble(&f.nodes, &f.pairs, &p.graph, &p.geom, &p.layout, &model.expansion)
}

/// Mean absolute difference over all entries.
pub fn mae(a: &Matrix, b: &Matrix) -> f64 {
    let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum();
    s / a.data.len().max(1) as f64
}

impl Model {
    /// Parameters drawn from the `init` stream of `config.seed`.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(config.seed, "init");
        let net = NetParams::init(&config, &mut rng)?;
        let mut rng = stream(config.seed, "expansion");
        let expansion = ExpansionWeights::init(&config.elements, &config.basis, &config.hidden, &mut rng)?;
        Ok(Self { config, net, expansion })
    }

    pub fn prepare(&self, molecule: &Molecule) -> Result<Prepared> {
        let graph = MoleculeGraph::new(molecule, self.config.cutoff)?;
        let geom = Geometry::new(&graph, self.config.hidden.max_index())?;
        let layout = build_orbital_layout(&molecule.atomic_numbers(), &self.config.basis)?;
        Ok(Prepared { graph, geom, layout })
    }

    pub fn features(&self, p: &Prepared) -> Result<Features> {
        Ok(forward_cached(&self.config, &self.net, &p.graph, &p.geom)?.0)
    }

    pub fn predict_prepared(&self, p: &Prepared) -> Result<BlockMatrix> {
        assemble_prepared(self, p, &self.features(p)?)
    }

    pub fn predict(&self, molecule: &Molecule) -> Result<BlockMatrix> {
        self.predict_prepared(&self.prepare(molecule)?)
    }

    /// Gradient of `sum(g_h * H)` with respect to every parameter.
    pub fn matrix_vjp(&self, p: &Prepared, g_h: &Matrix) -> Result<Model> {
        let (f, cache) = forward_cached(&self.config, &self.net, &p.graph, &p.geom)?;
        let mut grad = zeros_like(self);
        let (g_nodes, g_pairs) = assemble_vjp(
            &f.nodes,
            &f.pairs,
            &p.graph,
            &p.geom,
            &p.layout,
            &self.expansion,
            g_h,
            &mut grad.expansion,
        )?;
        let g = Features {
            nodes: g_nodes,
            pairs: g_pairs,
        };
        backward(&self.net, &p.graph, &p.geom, &cache, &g, &mut grad.net)?;
        Ok(grad)
    }

    /// MAE against `target` and its gradient.
    pub fn loss_and_grad(&self, p: &Prepared, target: &Matrix) -> Result<(f64, Model)> {
        let h = self.predict_prepared(p)?;
        let n = h.matrix.data.len() as f64;
        let loss = mae(&h.matrix, target);
        let g = Matrix::from_vec(
            h.matrix.rows,
            h.matrix.cols,
            h.matrix
                .data
                .iter()
                .zip(&target.data)
                .map(|(a, b)| {
                    let d = a - b;
                    if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
        Ok((loss, self.matrix_vjp(p, &g)?))
    }

    pub fn to_checkpoint_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Checkpoint {
            config: self.config.clone(),
            params: named(self),
        })?)
    }

    pub fn from_checkpoint_json(s: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(s)?;
        let mut m = Model::init(c.config)?;
        load_named(&mut m, &c.params)?;
        let mut extra = c.params.keys().filter(|k| !named(&m).contains_key(*k));
        if let Some(k) = extra.next() {
            return Err(Error::Checkpoint(format!("unexpected parameter {k}")));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}

/// Learning rate and step budget of the fit demo.
pub const DEMO_LR: f64 = 2e-3;
pub const DEMO_STEPS: usize = 2000;

/// Bent triatomic used by the fit demo. The two O-H distances differ so the
/// oxygen's nearest-neighbour frame is not decided by a rounding tie.
pub fn demo_molecule() -> Molecule {
    Molecule::new(vec![
        Atom { z: 8, pos: [0.0, 0.0, 0.0] },
        Atom { z: 1, pos: [1.43, 1.11, 0.0] },
        Atom { z: 1, pos: [-1.38, 1.16, 0.1] },
    ])
}

/// One-layer model used by the fit demo: wider channels than the default
/// hidden layout keep the per-degree norms well separated, a short radial
/// basis keeps the parameter count small.
pub fn demo_config(seed: u64) -> ModelConfig {
    ModelConfig {
        hidden: crate::irreps::IrrepsLayout::parse("8x0e+8x1e+6x2e+6x3e+6x4e").expect("static layout"),
        tp_channels: 4,
        layers: 1,
        rbf_k: 8,
        pair_width: 8,
        seed,
        ..ModelConfig::default()
    }
}

/// Adam on the MAE to `target`. Entry `k` of the result is the loss before
/// step `k`; the last entry is the loss after the final step.
pub fn fit_demo(model: &mut Model, molecule: &Molecule, target: &Matrix, steps: usize, lr: f64) -> Result<Vec<f64>> {
    let p = model.prepare(molecule)?;
    if target.rows != p.layout.dim() || target.cols != p.layout.dim() {
        return Err(Error::Dimension(format!(
            "target is {}x{}, layout has dimension {}",
            target.rows,
            target.cols,
            p.layout.dim()
        )));
    }
    let mut adam = Adam::new(lr);
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grad) = model.loss_and_grad(&p, target)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, loss });
        }
        losses.push(loss);
        adam.step(model, &grad);
    }
    let last = mae(&model.predict_prepared(&p)?.matrix, target);
    if !last.is_finite() {
        return Err(Error::NonFiniteLoss { step: steps, loss: last });
    }
    losses.push(last);
    Ok(losses)
}
