//! Generates the default synthetic benchmark and writes it to a directory.
//!
//!     cargo run --release --example generate_synthetic -- /tmp/chsbm 7

use std::path::PathBuf;

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::io::save_dataset;

fn main() -> bhygnn::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "chsbm".into()));
    let seed = args
        .next()
        .map_or(0, |s| s.parse().expect("seed must be an integer"));

    let spec = SyntheticSpec {
        seed,
        ..SyntheticSpec::default()
    };
    let h = generate_chsbm(&spec)?;
    save_dataset(&h, &dir)?;
    spec.write_provenance(&dir.join("provenance.txt"))?;

    let r = h.homophily()?;
    println!(
        "{} nodes, {} edges, {} incidences -> {}",
        h.num_nodes(),
        h.num_edges(),
        h.num_incidences(),
        dir.display()
    );
    println!("mean h(v) {:.4}  mean h(e) {:.4}", r.mean_node, r.mean_edge);
    Ok(())
}
