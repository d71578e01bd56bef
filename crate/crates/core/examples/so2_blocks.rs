//! The SO(2) building blocks on local features, each checked for
//! commuting with a rotation about the polar axis.

use so2frames::harmonics::rotate_so2;
use so2frames::irreps::{IrrepsLayout, So2Features};
use so2frames::rng::{normal_vec, stream};
use so2frames::so2::{so2_gate, so2_layernorm, so2_linear, so2_tp_contract, So2Gate, So2LayerNorm, So2LinearWeights, TpWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = stream(2, "example.so2");
    let layout = IrrepsLayout::parse("4x0m+4x1m+4x2m+4x3m")?;
    let x = So2Features::from_vec(&layout, normal_vec(&mut rng, layout.dim()))?;
    let y = So2Features::from_vec(&layout, normal_vec(&mut rng, layout.dim()))?;
    let angle = 1.234;
    let rot = |f: &So2Features| rotate_so2(f, angle);

    let lin = So2LinearWeights::init(&layout, &layout, &mut rng)?;
    let gate = So2Gate::init(&layout, 4, None, &mut rng)?;
    let ln = So2LayerNorm::new(&layout);
    let tp = TpWeights::init(3, 2, 4, &mut rng);

    let report = |name: &str, a: So2Features, b: So2Features| println!("{name:<10} {:.2e}", a.max_abs_diff(&b));
    report("linear", so2_linear(&rot(&x), &lin)?, rot(&so2_linear(&x, &lin)?));
    report("gate", so2_gate(&rot(&x), &gate)?, rot(&so2_gate(&x, &gate)?));
    report("layernorm", so2_layernorm(&rot(&x), &ln)?, rot(&so2_layernorm(&x, &ln)?));
    report(
        "tensor",
        so2_tp_contract(&[&rot(&x), &rot(&y)], &tp)?,
        rot(&so2_tp_contract(&[&x, &y], &tp)?),
    );
    println!("tensor-product paths for m <= 3, two inputs: {}", tp.paths.len());
    Ok(())
}
