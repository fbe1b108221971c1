//! Node and edge homophily of a small hand-built hypergraph and of the
//! synthetic benchmark, under both node rules.

use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::{HomophilyReport, Hypergraph, NodeHomophily};

fn show(name: &str, h: &Hypergraph) -> bhygnn::Result<()> {
    println!("{name}");
    for rule in [NodeHomophily::EdgeAveraged, NodeHomophily::CoMembers] {
        let r = h.homophily_with(rule)?;
        println!(
            "  {rule:?}: mean h(v) {:.4}, mean h(e) {:.4}, h(v) histogram {:?}",
            r.mean_node,
            r.mean_edge,
            HomophilyReport::histogram(&r.per_node, 5)
        );
    }
    Ok(())
}

fn main() -> bhygnn::Result<()> {
    let toy = Hypergraph::from_edges(6, vec![vec![0, 1, 2], vec![2, 3], vec![3, 4, 5]])?
        .with_labels(vec![0, 0, 1, 1, 1, 0])?;
    show("toy", &toy)?;
    show(
        "synthetic (seed 0)",
        &generate_chsbm(&SyntheticSpec::default())?,
    )?;
    Ok(())
}
