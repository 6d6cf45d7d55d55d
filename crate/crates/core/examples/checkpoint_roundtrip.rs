//! Save a randomized TalkLoRA stack, reload it, then corrupt one byte.

use talklora::adapters::{build_adapter_stack, AdapterConfig, AdapterMethod, FrozenModel, ProjectionTag};
use talklora::autodiff::randomize_parameters;
use talklora::cli::{bit_identical, decode, encode, read_header, Checkpoint};
use talklora::linalg::RngState;

fn main() -> talklora::Result<()> {
    let mut rng = RngState::new(4);
    let model = FrozenModel::random(3, 8, 8, ProjectionTag::Q, &mut rng)?;
    let cfg = AdapterConfig::new(4, 2);
    let mut stack = build_adapter_stack(&model.geometry(), AdapterMethod::TalkLora, &cfg, &[ProjectionTag::Q], &rng.fork(1))?;
    randomize_parameters(&mut stack, 1.0, &mut rng);
    let ckpt = Checkpoint { stack, frozen: Some(model), run_config: None };

    let bytes = encode(&ckpt)?;
    let (header, _) = read_header(&bytes)?;
    println!("{} bytes, {} tensors", bytes.len(), header.tensors.len());
    for t in header.tensors.iter().take(4) {
        println!("  {:<22} {}x{} crc32={:08x}", t.name, t.rows, t.cols, t.crc32);
    }
    let back = decode(&bytes)?;
    println!("bit identical after reload: {}", bit_identical(&ckpt, &back));

    let mut bad = bytes.clone();
    let i = bad.len() - 1;
    bad[i] ^= 0x80;
    match decode(&bad) {
        Ok(_) => println!("corruption NOT detected"),
        Err(e) => println!("corrupted copy rejected: {e}"),
    }
    Ok(())
}
