//! Saves a trained encoder in the BHG1 format, reloads it into a fresh model
//! and checks that the embeddings match bit for bit.

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::io::write_features;
use bhygnn::pipeline::{embed, train_ssl, Model, TrainConfig};

fn main() -> bhygnn::Result<()> {
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 50,
        edges_per_class: 25,
        feature_dim: 20,
        ..SyntheticSpec::default()
    })?
    .without_labels()
    .ensure_edge_features();
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let run = train_ssl(&h, &cfg, None)?;

    let dir = std::env::temp_dir().join("bhygnn-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| bhygnn::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("model.bhg");
    run.model.save(&path)?;

    let mut fresh = Model::for_hypergraph(&h, &TrainConfig { seed: 1, ..cfg })?;
    println!(
        "before load, embeddings equal: {}",
        embed(&fresh, &h)? == embed(&run.model, &h)?
    );
    fresh.load(&path)?;
    let z = embed(&fresh, &h)?;
    println!(
        "after load,  embeddings equal: {}",
        z == embed(&run.model, &h)?
    );
    println!(
        "{} parameters, checksum {:016x}",
        fresh.store.num_values(),
        fresh.store.checksum()
    );
    write_features(&dir.join("embeddings.txt"), &z)?;
    println!("wrote {}", dir.display());
    Ok(())
}
