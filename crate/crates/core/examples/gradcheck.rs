//! Analytic gradients against central differences for every family.

use talklora::cli::{cmd_gradcheck, GradcheckConfig};

fn main() -> talklora::Result<()> {
    let gc = GradcheckConfig::default();
    let summary = cmd_gradcheck(&gc)?;
    for c in &summary.cases {
        let worst = c.report.worst.map(|(h, k)| format!("{h}[{k}]")).unwrap_or_default();
        println!(
            "{:<9} share_b={:<5} talking={:<5} scalars={:>4} max_rel={:.2e} at {worst}",
            c.method.to_string(),
            c.share_b,
            c.talking,
            c.report.scalars_checked,
            c.report.max_relative_error,
        );
    }
    println!("passed: {}", summary.passed);
    Ok(())
}
