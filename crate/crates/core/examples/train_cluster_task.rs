//! Train TalkLoRA on the single-cluster identity task and write the run
//! artifacts under `runs/example`.

use talklora::cli::{cmd_train, RunConfig};

fn main() -> talklora::Result<()> {
    let cfg = RunConfig {
        output_dir: "runs/example".into(),
        ..RunConfig::default()
    };
    let out = cmd_train(&cfg)?;
    println!("{} steps, final eval loss {:.3e}", out.steps, out.final_eval_loss);
    for p in [&out.loss_csv, &out.routing_csv, &out.log_json, &out.checkpoint] {
        println!("wrote {}", p.display());
    }
    Ok(())
}
