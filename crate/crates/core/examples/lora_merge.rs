//! Fold a trained LoRA update into the frozen weight and compare paths.

use talklora::adapters::{lora_forward, lora_merge, AdapterConfig, FrozenLinear, LoraAdapter};
use talklora::linalg::{Matrix, RngState};

fn main() -> talklora::Result<()> {
    let mut rng = RngState::new(1);
    let (d, k) = (16, 12);
    let cfg = AdapterConfig::new(4, 1).with_alpha(8.0);
    let layer = FrozenLinear::new(Matrix::from_fn(k, d, |_, _| rng.normal() / 4.0));
    let mut ad = LoraAdapter::new(d, k, &cfg, &mut rng)?;
    // stand-in for training: B starts at zero
    ad.b = Matrix::from_fn(k, 4, |_, _| rng.normal());

    let merged = lora_merge(&layer, &ad, &cfg)?;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x = rng.normal_vec(d, 1.0);
        let a = lora_forward(&layer, &ad, &x, &cfg)?;
        let b = merged.matvec(&x)?;
        for (p, q) in a.iter().zip(&b) {
            worst = worst.max((p - q).abs());
        }
    }
    println!("scale alpha/r = {}", cfg.scale());
    println!("max |adapter path - merged path| over 50 inputs: {worst:.3e}");
    Ok(())
}
