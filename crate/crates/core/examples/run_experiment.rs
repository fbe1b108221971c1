//! Several seeds of supervised training, summarized as mean and standard
//! deviation per split. Seeds run on `BHYGNN_THREADS` worker threads.

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::pipeline::{run_experiment, worker_threads, Mode, ProbeConfig, TrainConfig};

fn main() -> bhygnn::Result<()> {
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 100,
        edges_per_class: 50,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        mode: Mode::Supervised,
        epochs: 40,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..4).collect();
    println!(
        "{} seeds on {} threads",
        seeds.len(),
        worker_threads().min(seeds.len())
    );
    let report = run_experiment(&h, &cfg, &ProbeConfig::default(), &seeds, |r| {
        println!("seed {} finished: test {:.3}", r.seed, r.report.test);
        Ok(())
    });
    print!("{}", report.to_text());
    Ok(())
}
