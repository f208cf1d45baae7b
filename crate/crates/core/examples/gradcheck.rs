//! Finite-difference check of a small network's gradients in f64.

use caspian::model::{class_indicators, Caspian, ModelConfig};
use caspian::nn::gradcheck::{grad_check, projection_weights, random_tensor, DEFAULT_EPS};
use caspian::nn::{var, Tensor, Var};

fn main() -> caspian::Result<()> {
    let cfg = ModelConfig {
        height: 16,
        width: 16,
        filters: 4,
        depth: 2,
        cardinality: 2,
        group_width: 1,
        blocks: 1,
        ..ModelConfig::desk()
    };
    let arch = Caspian::new(&cfg)?;
    let mut inputs: Vec<Tensor<f64>> = arch.init_params(1).cast::<f64>().entries().iter().map(|e| e.tensor.clone()).collect();
    let x = random_tensor([1, 16, 16, 1], 2).map(|v| (v * 1.5).round().clamp(-1.0, 1.0));
    let ind = class_indicators(&x);
    inputs.push(x.clone());

    // Zero weight where the output sits on the relu floor.
    let params: Vec<Var<f64>> = inputs[..inputs.len() - 1].iter().cloned().map(Var::constant).collect();
    let y = arch.forward_parts(&params, &Var::constant(x), Some(&ind))?;
    let proj = projection_weights(y.shape(), 3).zip_map(y.value(), |p, v| if v < 1e-3 { 0.0 } else { p });

    let wrt = vec![true; inputs.len()];
    let report = grad_check(
        |v| {
            let (p, xin) = v.split_at(v.len() - 1);
            var::weighted_sum(&arch.forward_parts(p, &xin[0], Some(&ind))?, &proj)
        },
        &inputs,
        &wrt,
        DEFAULT_EPS,
    )?;
    println!(
        "{} parameters, {} coordinates checked, max relative error {:.2e}",
        arch.param_count(),
        report.coordinates,
        report.max_rel_error
    );
    Ok(())
}
