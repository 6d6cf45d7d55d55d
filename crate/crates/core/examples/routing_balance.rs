//! Mean routing entropy on a four-cluster task, with and without the
//! talking module, averaged over seeds.

use talklora::adapters::AdapterConfig;
use talklora::analysis::routing_load;
use talklora::cli::{build_run, streams, RunConfig};
use talklora::linalg::RngState;
use talklora::tasks::{train, MapKind, TrainConfig};

fn entropy_after_training(talking: bool, clip: Option<f64>, seed: u64) -> talklora::Result<f64> {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.adapter = AdapterConfig::new(8, 4).with_talking(talking).with_spectral_clip(clip);
    cfg.task.clusters = 4;
    cfg.task.noise_std = 0.3;
    cfg.task.map = MapKind::Random;
    cfg.task.samples_per_cluster = 200;
    cfg.train = TrainConfig { epochs: 80, ..TrainConfig::default() };
    let (model, mut stack, task) = build_run(&cfg)?;
    let mut rng = RngState::new(seed).fork(streams::TRAIN);
    train(&mut stack, &model, &task.data, &cfg.train, cfg.loss, &mut rng)?;
    Ok(routing_load(&stack, &model, &task.data.eval)?.mean_entropy())
}

fn main() -> talklora::Result<()> {
    let seeds = 0..5u64;
    println!("ln 4 = {:.4}", 4f64.ln());
    for (label, talking, clip) in [
        ("talking off", false, None),
        ("TalkLoRA, ||C|| <= 1", true, Some(1.0)),
        ("TalkLoRA, unclipped", true, None),
    ] {
        let mut hs = Vec::new();
        for s in seeds.clone() {
            hs.push(entropy_after_training(talking, clip, s)?);
        }
        let mean = hs.iter().sum::<f64>() / hs.len() as f64;
        println!("{label:<22} mean entropy {mean:.4}  per seed {hs:.3?}");
    }
    Ok(())
}
