//! Compares the hand-written backward pass with central differences on a
//! tiny model.

use arnmt::model::{loss_and_grad, ModelDims, ModelParams};
use arnmt::numerics::grad_check;

fn main() -> arnmt::Result<()> {
    let dims = ModelDims {
        src_vocab: 7,
        tgt_vocab: 6,
        embed_dim: 4,
        hidden_dim: 5,
        attention_dim: 3,
    };
    let (src, tgt) = ([4u32, 6, 5], [5u32, 4, 2]);
    let params = ModelParams::init_scaled(dims, 3, 1.0);
    let mut grads = params.zeros_like();
    let loss = loss_and_grad(&src, &tgt, &params, &mut grads)?;
    let flat = params.to_flat();
    let mut probe = params.clone();
    let check = grad_check(
        |x| {
            probe.set_flat(x).expect("same length");
            let mut scratch = probe.zeros_like();
            loss_and_grad(&src, &tgt, &probe, &mut scratch).expect("valid ids")
        },
        &flat,
        &grads.to_flat(),
        1e-5,
    )?;
    println!("loss {loss:.6}, {} parameters", flat.len());
    println!(
        "max relative error {:.3e} at index {} (analytic {:.6e}, numeric {:.6e})",
        check.max_rel_error, check.worst_index, check.analytic, check.numeric
    );
    Ok(())
}
