//! Encodes a short source sentence and prints attention weights and the
//! output distribution for the first decoder steps.

use arnmt::model::{attend, decoder_step, encode, init_decoder, ModelDims, ModelParams};

fn main() -> arnmt::Result<()> {
    let dims = ModelDims::new(10, 10).with_sizes(6, 8);
    let params = ModelParams::init_scaled(dims, 5, 0.5);
    let src = [4, 7, 9, 5];
    let h = encode(&src, &params)?;
    let mut state = init_decoder(&h, &params)?;
    for (step, next_token) in [6u32, 8, 2].into_iter().enumerate() {
        let att = attend(&state, &h, &params)?;
        let (next, probs) = decoder_step(&state, &h, &params)?;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
        println!("step {step}: alpha [{}] (sum {:.12})", fmt(&att.alpha), att.alpha.iter().sum::<f64>());
        println!("        p(y) [{}] (sum {:.12})", fmt(&probs), probs.iter().sum::<f64>());
        state = next;
        state.last_token = next_token;
    }
    Ok(())
}
