//! Self-supervised training over primal and dual views, with the frozen
//! encoder probed periodically to pick the best checkpoint.
//!
//!     cargo run --release --example train_ssl_probe -- 50

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::pipeline::{embed, probe, train_ssl, Model, ProbeConfig, TrainConfig};

fn main() -> bhygnn::Result<()> {
    let epochs = std::env::args()
        .nth(1)
        .map_or(30, |s| s.parse().expect("epochs"));
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 150,
        edges_per_class: 75,
        ..SyntheticSpec::default()
    })?;
    let cfg = TrainConfig {
        epochs,
        select_every: 10,
        ..TrainConfig::default()
    };
    let labels = h.labels().unwrap().to_vec();
    let splits = cfg.splits(h.num_nodes())?;
    let probe_cfg = ProbeConfig::default();

    let mut hook = |epoch: usize, model: &Model| {
        let r = probe(&embed(model, &h)?, &labels, &splits, &probe_cfg)?;
        println!(
            "epoch {epoch:>4}: probe val {:.3} test {:.3}",
            r.val, r.test
        );
        Ok(Some(r.val))
    };
    // Training itself only sees the unlabeled copy.
    let run = train_ssl(&h.clone().without_labels(), &cfg, Some(&mut hook))?;
    let last = run.trace.last().unwrap();
    println!(
        "final loss {:.3} (contrastive {:.4}); selected epoch {}",
        last.loss.total,
        last.loss.similarity().map_or(f64::NAN, |s| -s),
        run.best_epoch
    );
    Ok(())
}
