//! Same input, same projections: gates of MoELoRA (router on x) against
//! TalkLoRA (router on the communicated low-rank codes).

use talklora::adapters::{
    moelora_forward, talklora_forward, AdapterConfig, FrozenLinear, MoeLoraLayer,
    SharedProjectionStore, TalkLoraLayer,
};
use talklora::linalg::{Matrix, RngState};

fn main() -> talklora::Result<()> {
    let mut rng = RngState::new(2);
    let (d, n) = (8, 4);
    let cfg = AdapterConfig::new(8, n);
    let layer = FrozenLinear::new(Matrix::identity(d));
    let moe = MoeLoraLayer::new(d, d, &cfg, &mut rng)?;
    let mut tl = TalkLoraLayer::new_owned(d, d, &cfg, &mut rng)?;
    tl.router = Matrix::from_fn(n, 8, |_, _| rng.normal());
    let store = SharedProjectionStore::default();

    let x = rng.normal_vec(d, 1.0);
    let (_, t_moe) = moelora_forward(&layer, &moe, &x, &cfg)?;
    println!("MoELoRA gates:           {:.3?}", t_moe.gates);
    for (label, c) in [
        ("TalkLoRA, C = I", Matrix::identity(n)),
        ("TalkLoRA, C = 0.5*ones", Matrix::from_fn(n, n, |_, _| 0.5)),
        ("TalkLoRA, random C", Matrix::from_fn(n, n, |_, _| rng.normal())),
    ] {
        tl.c = c;
        let (_, t) = talklora_forward(&layer, &tl, &store, &x, &cfg)?;
        println!("{label:<24} {:.3?}", t.gates);
    }
    Ok(())
}
