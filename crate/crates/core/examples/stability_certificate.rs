//! Empirical routing-stability certificate for one TalkLoRA layer, with
//! and without a spectral clip on C.

use talklora::adapters::{clip_spectral_norm, AdapterConfig, TalkLoraLayer};
use talklora::analysis::stability_certificate;
use talklora::linalg::{Matrix, RngState};

fn main() -> talklora::Result<()> {
    let mut rng = RngState::new(3);
    let cfg = AdapterConfig::new(8, 4);
    let mut tl = TalkLoraLayer::new_owned(16, 16, &cfg, &mut rng)?;
    tl.c = Matrix::from_fn(4, 4, |_, _| rng.normal());
    tl.router = Matrix::from_fn(4, 8, |_, _| rng.normal());

    let raw = stability_certificate(&tl, &cfg, 10_000, 0.1, &mut rng)?;
    println!("unclipped: ||C||={:.3} alpha={:.3} beta={:.3}", raw.c_norm, raw.alpha, raw.beta);
    println!("  max ratio {:.4} vs bound {:.4}, assumptions hold: {}", raw.max_observed_ratio, raw.bound, raw.assumptions_hold);

    let before = clip_spectral_norm(&mut tl.c, 1.0);
    let cert = stability_certificate(&tl, &cfg, 10_000, 0.1, &mut rng)?;
    println!("clipped from {before:.3}: ||C||={:.6}", cert.c_norm);
    println!(
        "  max ratio {:.4} vs bound {:.4}, violations {}, verdict {}",
        cert.max_observed_ratio, cert.bound, cert.violations, cert.verdict
    );
    Ok(())
}
