//! Trainable-parameter budgets on the bundled model geometries.

use talklora::adapters::{AdapterConfig, AdapterMethod, ProjectionTag};
use talklora::analysis::{count_params, ModelGeometry};

fn main() -> talklora::Result<()> {
    let targets = ProjectionTag::parse_set("QKVUD")?;
    let rows = [
        ("llama3-8b", AdapterMethod::Lora, 32, 1),
        ("llama3-8b", AdapterMethod::MoeLora, 32, 4),
        ("llama3-8b", AdapterMethod::TalkLora, 32, 4),
        ("llama3-8b", AdapterMethod::TalkLora, 16, 4),
        ("llama2-7b", AdapterMethod::Lora, 32, 1),
        ("qwen2.5-7b", AdapterMethod::TalkLora, 16, 4),
    ];
    println!("{:<11} {:<9} {:>3} {:>12} {:>8}", "model", "method", "r", "trainable", "percent");
    for (name, method, r, n) in rows {
        let geom = ModelGeometry::builtin(name)?;
        let b = count_params(&geom, method, &AdapterConfig::new(r, n), &targets)?;
        println!("{name:<11} {:<9} {r:>3} {:>12} {:>7.3}%", method.to_string(), b.trainable, b.percent);
    }

    let geom = ModelGeometry::builtin("llama3-8b")?;
    let shared = count_params(&geom, AdapterMethod::TalkLora, &AdapterConfig::new(32, 4), &targets)?;
    let unshared = count_params(
        &geom,
        AdapterMethod::TalkLora,
        &AdapterConfig::new(32, 4).with_share_b(false),
        &targets,
    )?;
    println!("\nTalkLoRA r=32 breakdown (shared B): {:?}", shared.breakdown);
    println!("without sharing B: {} trainable", unshared.trainable);
    Ok(())
}
