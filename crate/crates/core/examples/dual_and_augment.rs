//! The dual view of a hypergraph and the four augmentation operators.

use bhygnn::augment::{apply, AugmentationKind, AugmentationSpec};
use bhygnn::nn::Tensor;
use bhygnn::Hypergraph;

fn describe(h: &Hypergraph) -> String {
    format!("{} nodes, edges {:?}", h.num_nodes(), h.edges())
}

fn main() -> bhygnn::Result<()> {
    let x = Tensor::from_vec(6, 2, (0..12).map(f64::from).collect())?;
    let h = Hypergraph::new(
        6,
        vec![vec![0, 1, 2], vec![1, 3], vec![2, 3, 4, 5]],
        x,
        None,
        None,
    )?;
    println!("primal: {}", describe(&h));

    let dual = h.dual();
    println!("dual:   {}", describe(&dual.hypergraph));
    println!(
        "        dual edge k is primal node {:?}",
        dual.node_of_dual_edge
    );
    let back = dual.hypergraph.dual().hypergraph;
    println!("dual of dual equals primal: {}", back.same_structure(&h));

    for kind in AugmentationKind::ALL {
        let out = apply(&h, &AugmentationSpec::new(kind, 0.34, 42))?;
        println!("{kind:?}: {}", describe(&out.hypergraph));
        if kind == AugmentationKind::DropNodes {
            println!("    kept nodes {:?}", out.kept_nodes);
        }
    }
    Ok(())
}
