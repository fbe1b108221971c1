//! Seeded stochastic hypergraph augmentations.
//!
//! Each operator selects `round(p · count)` items uniformly without
//! replacement from a [`Rng`] seeded with `spec.seed`, so a spec applied to
//! the same input always produces the same output.

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::nn::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AugmentationKind {
    MaskNodeAttrs,
    PerturbHyperedges,
    DropHyperedges,
    DropNodes,
}

impl AugmentationKind {
    /// The operators in the order views cycle through them.
    pub const ALL: [AugmentationKind; 4] = [
        AugmentationKind::MaskNodeAttrs,
        AugmentationKind::PerturbHyperedges,
        AugmentationKind::DropHyperedges,
        AugmentationKind::DropNodes,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentationSpec {
    pub kind: AugmentationKind,
    pub ratio: f64,
    /// Standard deviation of the noise added to masked rows.
    pub noise_std: f64,
    /// Fraction of a perturbed edge's members to remove.
    pub member_removal_fraction: f64,
    pub seed: u64,
}

impl AugmentationSpec {
    pub fn new(kind: AugmentationKind, ratio: f64, seed: u64) -> Self {
        AugmentationSpec {
            kind,
            ratio,
            noise_std: 1.0,
            member_removal_fraction: 1.0 / 3.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::Config(format!(
                "augmentation ratio {} not in [0, 1]",
                self.ratio
            )));
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std {} must be positive",
                self.noise_std
            )));
        }
        if !(self.member_removal_fraction > 0.0 && self.member_removal_fraction < 1.0) {
            return Err(Error::Config(format!(
                "member_removal_fraction {} not in (0, 1)",
                self.member_removal_fraction
            )));
        }
        Ok(())
    }

    fn expect(&self, kind: AugmentationKind) -> Result<()> {
        self.validate()?;
        if self.kind != kind {
            return Err(Error::Precondition(format!(
                "{:?} spec passed to the {kind:?} operator",
                self.kind
            )));
        }
        Ok(())
    }
}

/// An augmented hypergraph and, for each of its nodes, the input node it
/// came from.
#[derive(Clone, Debug)]
pub struct Augmented {
    pub hypergraph: Hypergraph,
    pub kept_nodes: Vec<usize>,
}

/// Number of items an operator with ratio `p` selects out of `count`.
pub fn selection_size(p: f64, count: usize) -> usize {
    ((p * count as f64).round() as usize).min(count)
}

/// Applies whichever operator `spec.kind` names.
pub fn apply(h: &Hypergraph, spec: &AugmentationSpec) -> Result<Augmented> {
    let identity = || (0..h.num_nodes()).collect();
    Ok(match spec.kind {
        AugmentationKind::MaskNodeAttrs => Augmented {
            hypergraph: mask_node_attrs(h, spec)?,
            kept_nodes: identity(),
        },
        AugmentationKind::PerturbHyperedges => Augmented {
            hypergraph: perturb_hyperedges(h, spec)?,
            kept_nodes: identity(),
        },
        AugmentationKind::DropHyperedges => Augmented {
            hypergraph: drop_hyperedges(h, spec)?,
            kept_nodes: identity(),
        },
        AugmentationKind::DropNodes => drop_nodes(h, spec)?,
    })
}

/// Adds Gaussian noise to the feature rows of a random subset of nodes.
pub fn mask_node_attrs(h: &Hypergraph, spec: &AugmentationSpec) -> Result<Hypergraph> {
    spec.expect(AugmentationKind::MaskNodeAttrs)?;
    let mut rng = Rng::new(spec.seed);
    let chosen = rng.choose(h.num_nodes(), selection_size(spec.ratio, h.num_nodes()));
    let mut x = h.node_features().clone();
    for v in chosen {
        for xi in x.row_mut(v) {
            *xi += spec.noise_std * rng.normal();
        }
    }
    h.clone().with_node_features(x)
}

/// Removes members from a random subset of edges. Edges with a single
/// member are left alone and no edge is ever emptied.
pub fn perturb_hyperedges(h: &Hypergraph, spec: &AugmentationSpec) -> Result<Hypergraph> {
    spec.expect(AugmentationKind::PerturbHyperedges)?;
    let mut rng = Rng::new(spec.seed);
    let chosen = rng.choose(h.num_edges(), selection_size(spec.ratio, h.num_edges()));
    let mut edges = h.edges().to_vec();
    for j in chosen {
        let size = edges[j].len();
        if size < 2 {
            continue;
        }
        let remove = ((spec.member_removal_fraction * size as f64 + 1e-9).floor() as usize)
            .clamp(1, size - 1);
        let mut drop = rng.choose(size, remove);
        drop.sort_unstable();
        let mut k = 0;
        edges[j] = edges[j]
            .iter()
            .enumerate()
            .filter(|&(i, _)| {
                if k < drop.len() && drop[k] == i {
                    k += 1;
                    false
                } else {
                    true
                }
            })
            .map(|(_, &v)| v)
            .collect();
    }
    Hypergraph::new(
        h.num_nodes(),
        edges,
        h.node_features().clone(),
        h.edge_features().cloned(),
        h.labels().map(<[usize]>::to_vec),
    )
}

/// Deletes a random subset of edges, keeping the rest in order.
pub fn drop_hyperedges(h: &Hypergraph, spec: &AugmentationSpec) -> Result<Hypergraph> {
    spec.expect(AugmentationKind::DropHyperedges)?;
    if spec.ratio == 1.0 && h.num_edges() > 0 {
        log::warn!("dropping every hyperedge leaves no structure");
    }
    let mut rng = Rng::new(spec.seed);
    let mut dropped = vec![false; h.num_edges()];
    for j in rng.choose(h.num_edges(), selection_size(spec.ratio, h.num_edges())) {
        dropped[j] = true;
    }
    let kept: Vec<usize> = (0..h.num_edges()).filter(|&j| !dropped[j]).collect();
    Hypergraph::new(
        h.num_nodes(),
        kept.iter().map(|&j| h.edge(j).to_vec()).collect(),
        h.node_features().clone(),
        h.edge_features().map(|t| t.select_rows(&kept)),
        h.labels().map(<[usize]>::to_vec),
    )
}

/// Deletes a random subset of nodes with all their incidences, re-indexing
/// survivors densely in their original order. Edges left empty are deleted.
pub fn drop_nodes(h: &Hypergraph, spec: &AugmentationSpec) -> Result<Augmented> {
    spec.expect(AugmentationKind::DropNodes)?;
    let mut rng = Rng::new(spec.seed);
    let n = h.num_nodes();
    let mut dropped = vec![false; n];
    for v in rng.choose(n, selection_size(spec.ratio, n)) {
        dropped[v] = true;
    }
    remove_nodes(h, &dropped)
}

/// Removes the nodes flagged in `dropped`.
pub fn remove_nodes(h: &Hypergraph, dropped: &[bool]) -> Result<Augmented> {
    let mut new_id = vec![usize::MAX; h.num_nodes()];
    let mut kept_nodes = Vec::new();
    for v in 0..h.num_nodes() {
        if !dropped[v] {
            new_id[v] = kept_nodes.len();
            kept_nodes.push(v);
        }
    }
    let mut edges = Vec::with_capacity(h.num_edges());
    let mut kept_edges = Vec::with_capacity(h.num_edges());
    for (j, e) in h.edges().iter().enumerate() {
        let members: Vec<usize> = e
            .iter()
            .filter(|&&v| !dropped[v])
            .map(|&v| new_id[v])
            .collect();
        if !members.is_empty() {
            edges.push(members);
            kept_edges.push(j);
        }
    }
    let hypergraph = Hypergraph::new(
        kept_nodes.len(),
        edges,
        h.node_features().select_rows(&kept_nodes),
        h.edge_features()
            .map(|t: &Tensor| t.select_rows(&kept_edges)),
        h.labels()
            .map(|y| kept_nodes.iter().map(|&v| y[v]).collect()),
    )?;
    Ok(Augmented {
        hypergraph,
        kept_nodes,
    })
}
