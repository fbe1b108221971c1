//! End-to-end supervised training on a reduced synthetic benchmark.
//!
//!     cargo run --release --example train_supervised -- 100

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::pipeline::{format_trace, run_seed, Mode, ProbeConfig, TrainConfig};

fn main() -> bhygnn::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(60, |s| s.parse().expect("epochs"));
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 150,
        edges_per_class: 75,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        mode: Mode::Supervised,
        epochs,
        ..TrainConfig::default()
    };
    let r = run_seed(&h, &cfg, &ProbeConfig::default())?;
    let trace = format_trace(&r.run.trace);
    for line in trace.lines().step_by((epochs / 10).max(1)) {
        println!("{line}");
    }
    println!(
        "best epoch {}: train {:.3} val {:.3} test {:.3}",
        r.report.best_epoch, r.report.train, r.report.val, r.report.test
    );
    Ok(())
}
