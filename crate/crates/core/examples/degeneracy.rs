//! The talking module reduces to independent experts when C is diagonal.

use talklora::adapters::{AdapterConfig, TalkLoraLayer};
use talklora::analysis::degeneracy_check;
use talklora::linalg::RngState;

fn main() -> talklora::Result<()> {
    let mut rng = RngState::new(9);
    let tl = TalkLoraLayer::new_owned(12, 12, &AdapterConfig::new(8, 4), &mut rng)?;
    let r = degeneracy_check(&tl, 100, &mut rng)?;
    println!("C = I pass-through:        max diff {:e} -> {}", r.identity_max_diff, r.identity_exact);
    println!("diagonal C isolation:      max leak {:e} -> {}", r.diagonal_max_leak, r.diagonal_isolated);
    println!("off-diagonal interaction:  min influence {:.3e} -> {}", r.offdiag_min_influence, r.offdiag_witnessed);
    Ok(())
}
