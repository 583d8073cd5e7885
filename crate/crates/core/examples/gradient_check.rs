//! Finite-difference check of masked attention gradients in f64, plus a look
//! at the zero gradients behind masked cells.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use zipstream::encoder::{attention_backward, masked_attention, AttentionParams};
use zipstream::sched::SplitMix64;
use zipstream::{build_mask, LeftContext, MaskSpec, Matrix};

fn loss(y: &Matrix<f64>, p: &AttentionParams<f64>, mask: &zipstream::AttentionMask, g: &Matrix<f64>) -> f64 {
    let out = masked_attention(y, p, mask).unwrap().output;
    out.as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum()
}

fn main() -> zipstream::Result<()> {
    let mut rng = SplitMix64::new(0);
    let (len, dim) = (8, 8);
    let params = AttentionParams::<f64>::seeded(dim, 2, 4, &mut rng);
    let random = |rng: &mut SplitMix64| {
        Matrix::from_vec(len, dim, (0..len * dim).map(|_| rng.uniform(-1.0, 1.0)).collect())
    };
    let y = random(&mut rng)?;
    let g = random(&mut rng)?;
    let mask = build_mask(len, len, &MaskSpec::new(2, LeftContext::Frames(2), 1)?);

    let fwd = masked_attention(&y, &params, &mask)?;
    let grads = attention_backward(&g, &fwd, &params)?;

    let eps = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..y.as_slice().len() {
        let (mut a, mut b) = (y.clone(), y.clone());
        a.as_mut_slice()[k] += eps;
        b.as_mut_slice()[k] -= eps;
        let numeric = (loss(&a, &params, &mask, &g) - loss(&b, &params, &mask, &g)) / (2.0 * eps);
        let analytic = grads.input.as_slice()[k];
        worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8));
    }
    println!("input gradient: worst elementwise relative error {worst:.2e}");

    println!("score gradient, head 0 (x marks masked cells):");
    for t in 0..len {
        let row: Vec<String> = (0..len)
            .map(|s| {
                if mask.get(t, s) {
                    format!("{:+.3}", grads.scores[0][(t, s)])
                } else {
                    format!("{:>6}", if grads.scores[0][(t, s)] == 0.0 { "x" } else { "!" })
                }
            })
            .collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
