//! SO(2)-equivariant building blocks: linear, gate, layer norm, tensor
//! product, and the off-diagonal feed-forward composition. Each op exposes
//! an explicit VJP.

mod ffn;
mod gate;
mod linear;
pub(crate) mod norm;
mod tp;

pub use ffn::{concat_channels, so2_ffn, split_channels, FfnCache, So2Ffn};
pub use gate::{so2_gate, GateCache, So2Gate};
pub use linear::{so2_linear, so2_linear_counted, so2_linear_vjp, OrderLinear, So2LinearWeights};
pub use norm::{so2_layernorm, Affine, So2LayerNorm, So2LnCache, LN_EPS};
pub use tp::{
    enumerate_tp_paths, so2_tp_contract, so2_tp_contract_counted, so2_tp_contract_vjp, so2_tp_pair,
    so2_tp_pair_vjp, So2TpPath, TpWeights,
};
