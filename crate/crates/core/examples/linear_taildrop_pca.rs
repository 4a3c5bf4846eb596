//! A linear autoencoder trained with stochastic taildrop orders its code by
//! variance: the first K encoder rows span the top-K principal subspace.
//!
//! cargo run --example linear_taildrop_pca

use pnc::nn::Tensor;
use pnc::train::{linear_autoencoder, Objective, TaildropConfig, TaildropTrainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (dim, m, n) = (6, 3, 800);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Axis-aligned data with decreasing spread, so the principal axes are e_1, e_2, ...
    let spread = [3.0, 2.0, 1.2, 0.5, 0.3, 0.1];
    let data: Vec<f64> = (0..n)
        .flat_map(|_| spread.map(|s| s * rng.gen_range(-1.0..1.0)))
        .collect();
    let x = Tensor::from_vec(&[n, dim], data)?;

    let ae = linear_autoencoder(dim, m, &mut rng)?;
    let mut trainer = TaildropTrainer::new(ae, &TaildropConfig::uniform(m), 0.01, 5)?;
    let rows: Vec<usize> = (0..n).collect();
    for step in 0..3000 {
        let outcome = trainer.step(&x, &rows, Objective::Reconstruction)?;
        if step % 1000 == 0 {
            let loss = outcome.evaluations.iter().map(|e| e.1).sum::<f64>() / m as f64;
            println!("step {step:>4}  loss {loss:.4}");
        }
    }

    let w = &trainer.ae.encoder.layers()[0].weight;
    println!("encoder rows, normalized (row k should point along axis k):");
    for k in 0..m {
        let row = &w.data()[k * dim..(k + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let shown: Vec<String> = row.iter().map(|v| format!("{:+.2}", v / norm)).collect();
        println!("  K={}  [{}]", k + 1, shown.join(" "));
    }
    Ok(())
}
