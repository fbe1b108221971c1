//! Hypergraph data model: incidence, degrees, duality and homophily.

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Nodes, hyperedges (as sorted member lists) and their features.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    num_nodes: usize,
    edges: Vec<Vec<usize>>,
    node_features: Tensor,
    edge_features: Option<Tensor>,
    labels: Option<Vec<usize>>,
}

impl Hypergraph {
    /// Validates and builds a hypergraph. Every edge must be non-empty,
    /// sorted, duplicate-free and within `0..num_nodes`.
    pub fn new(
        num_nodes: usize,
        edges: Vec<Vec<usize>>,
        node_features: Tensor,
        edge_features: Option<Tensor>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        for (j, e) in edges.iter().enumerate() {
            if e.is_empty() {
                return Err(Error::InvalidHypergraph(format!("edge {j} is empty")));
            }
            if e.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidHypergraph(format!(
                    "edge {j} is not sorted and duplicate-free"
                )));
            }
            if let Some(&v) = e.last().filter(|&&v| v >= num_nodes) {
                return Err(Error::InvalidHypergraph(format!(
                    "edge {j} references node {v} but there are {num_nodes} nodes"
                )));
            }
        }
        if node_features.rows() != num_nodes {
            return Err(Error::InvalidHypergraph(format!(
                "{} node feature rows for {num_nodes} nodes",
                node_features.rows()
            )));
        }
        if let Some(xe) = &edge_features {
            if xe.rows() != edges.len() {
                return Err(Error::InvalidHypergraph(format!(
                    "{} edge feature rows for {} edges",
                    xe.rows(),
                    edges.len()
                )));
            }
        }
        if let Some(y) = &labels {
            if y.len() != num_nodes {
                return Err(Error::InvalidHypergraph(format!(
                    "{} labels for {num_nodes} nodes",
                    y.len()
                )));
            }
        }
        Ok(Hypergraph {
            num_nodes,
            edges,
            node_features,
            edge_features,
            labels,
        })
    }

    /// Structure only: node features are an `N × 0` matrix.
    pub fn from_edges(num_nodes: usize, edges: Vec<Vec<usize>>) -> Result<Self> {
        Hypergraph::new(num_nodes, edges, Tensor::zeros(num_nodes, 0), None, None)
    }

    /// Like [`Hypergraph::new`] but sorts and deduplicates each edge first.
    pub fn from_unsorted(
        num_nodes: usize,
        mut edges: Vec<Vec<usize>>,
        node_features: Tensor,
    ) -> Result<Self> {
        for e in &mut edges {
            e.sort_unstable();
            e.dedup();
        }
        Hypergraph::new(num_nodes, edges, node_features, None, None)
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    pub fn edge(&self, j: usize) -> &[usize] {
        &self.edges[j]
    }

    pub fn node_features(&self) -> &Tensor {
        &self.node_features
    }

    pub fn edge_features(&self) -> Option<&Tensor> {
        self.edge_features.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .map(|y| y.iter().copied().max().map_or(0, |m| m + 1))
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.num_nodes {
            return Err(Error::InvalidHypergraph(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.num_nodes
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn with_node_features(mut self, x: Tensor) -> Result<Self> {
        if x.rows() != self.num_nodes {
            return Err(Error::InvalidHypergraph(format!(
                "{} node feature rows for {} nodes",
                x.rows(),
                self.num_nodes
            )));
        }
        self.node_features = x;
        Ok(self)
    }

    pub fn with_edge_features(mut self, x: Option<Tensor>) -> Result<Self> {
        if let Some(t) = &x {
            if t.rows() != self.edges.len() {
                return Err(Error::InvalidHypergraph(format!(
                    "{} edge feature rows for {} edges",
                    t.rows(),
                    self.edges.len()
                )));
            }
        }
        self.edge_features = x;
        Ok(self)
    }

    /// Fills in member-mean edge features when none are present.
    pub fn ensure_edge_features(self) -> Self {
        if self.edge_features.is_some() {
            return self;
        }
        let xe = self.synthesize_edge_features();
        Hypergraph {
            edge_features: Some(xe),
            ..self
        }
    }

    /// All `(node, edge)` incidences, ordered by edge then node.
    pub fn incidence_pairs(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(j, e)| e.iter().map(move |&v| (v, j)))
            .collect()
    }

    pub fn num_incidences(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// `(node degrees, edge degrees)`.
    pub fn degrees(&self) -> (Vec<usize>, Vec<usize>) {
        let mut dv = vec![0; self.num_nodes];
        for e in &self.edges {
            for &v in e {
                dv[v] += 1;
            }
        }
        (dv, self.edges.iter().map(Vec::len).collect())
    }

    /// For each node, the sorted list of edges containing it.
    pub fn node_memberships(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_nodes];
        for (j, e) in self.edges.iter().enumerate() {
            for &v in e {
                m[v].push(j);
            }
        }
        m
    }

    /// Row `j` is the mean of the node feature rows of edge `j`'s members.
    pub fn synthesize_edge_features(&self) -> Tensor {
        let d = self.node_features.cols();
        let mut out = Tensor::zeros(self.edges.len(), d);
        for (j, e) in self.edges.iter().enumerate() {
            let row = out.row_mut(j);
            for &v in e {
                for (o, x) in row.iter_mut().zip(self.node_features.row(v)) {
                    *o += x;
                }
            }
            let n = e.len() as f64;
            row.iter_mut().for_each(|o| *o /= n);
        }
        out
    }

    /// The dual hypergraph: edges become nodes and nodes become edges.
    ///
    /// Dual node `j` is edge `j`, with this graph's edge features (synthesized
    /// if absent). Dual edge `k` is the set of edges containing node
    /// `node_of_dual_edge[k]`, with that node's features. Nodes of degree
    /// zero have no dual edge. The dual carries no labels.
    pub fn dual(&self) -> Dual {
        let memberships = self.node_memberships();
        let mut edges = Vec::with_capacity(self.num_nodes);
        let mut kept = Vec::with_capacity(self.num_nodes);
        for (v, m) in memberships.into_iter().enumerate() {
            if !m.is_empty() {
                edges.push(m);
                kept.push(v);
            }
        }
        let node_features = self
            .edge_features
            .clone()
            .unwrap_or_else(|| self.synthesize_edge_features());
        let edge_features = self.node_features.select_rows(&kept);
        let hypergraph = Hypergraph {
            num_nodes: self.edges.len(),
            edges,
            node_features,
            edge_features: Some(edge_features),
            labels: None,
        };
        Dual {
            hypergraph,
            node_of_dual_edge: kept,
        }
    }

    /// Same node count and edge lists.
    pub fn same_structure(&self, other: &Hypergraph) -> bool {
        self.num_nodes == other.num_nodes && self.edges == other.edges
    }

    /// Nodes that belong to no edge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let (dv, _) = self.degrees();
        dv.iter()
            .enumerate()
            .filter(|(_, &d)| d == 0)
            .map(|(v, _)| v)
            .collect()
    }

    pub fn homophily(&self) -> Result<HomophilyReport> {
        self.homophily_with(NodeHomophily::default())
    }

    pub fn homophily_with(&self, rule: NodeHomophily) -> Result<HomophilyReport> {
        let y = self.labels.as_ref().ok_or(Error::LabelsRequired)?;
        let classes = y.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; classes];
        let per_edge: Vec<f64> = self
            .edges
            .iter()
            .map(|e| {
                counts.iter_mut().for_each(|c| *c = 0);
                for &v in e {
                    counts[y[v]] += 1;
                }
                *counts.iter().max().expect("non-empty edge") as f64 / e.len() as f64
            })
            .collect();
        let memberships = self.node_memberships();
        let per_node: Vec<f64> = match rule {
            NodeHomophily::EdgeAveraged => memberships
                .iter()
                .enumerate()
                .map(|(v, m)| {
                    if m.is_empty() {
                        return 0.0;
                    }
                    let total: f64 = m
                        .iter()
                        .map(|&j| {
                            let e = &self.edges[j];
                            e.iter().filter(|&&u| y[u] == y[v]).count() as f64 / e.len() as f64
                        })
                        .sum();
                    total / m.len() as f64
                })
                .collect(),
            NodeHomophily::CoMembers => {
                let mut mark = vec![usize::MAX; self.num_nodes];
                memberships
                    .iter()
                    .enumerate()
                    .map(|(v, m)| {
                        let (mut same, mut total) = (0usize, 0usize);
                        mark[v] = v;
                        for &j in m {
                            for &u in &self.edges[j] {
                                if mark[u] != v {
                                    mark[u] = v;
                                    total += 1;
                                    same += usize::from(y[u] == y[v]);
                                }
                            }
                        }
                        if total == 0 {
                            0.0
                        } else {
                            same as f64 / total as f64
                        }
                    })
                    .collect()
            }
        };
        Ok(HomophilyReport::new(per_node, per_edge))
    }
}

/// How per-node homophily `h(v)` is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NodeHomophily {
    /// Mean over the edges containing `v` of the fraction of members sharing
    /// `v`'s label, `v` included. This matches the averages reported for
    /// the synthetic benchmark.
    #[default]
    EdgeAveraged,
    /// Fraction of distinct co-members (excluding `v`) that share `v`'s label.
    CoMembers,
}

/// The dual hypergraph and the primal node behind each dual edge.
#[derive(Clone, Debug)]
pub struct Dual {
    pub hypergraph: Hypergraph,
    pub node_of_dual_edge: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomophilyReport {
    pub per_node: Vec<f64>,
    pub per_edge: Vec<f64>,
    pub mean_node: f64,
    pub mean_edge: f64,
}

impl HomophilyReport {
    fn new(per_node: Vec<f64>, per_edge: Vec<f64>) -> Self {
        let mean = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                v.iter().sum::<f64>() / v.len() as f64
            }
        };
        HomophilyReport {
            mean_node: mean(&per_node),
            mean_edge: mean(&per_edge),
            per_node,
            per_edge,
        }
    }

    /// Counts of values in `bins` equal-width bins over `[0, 1]`.
    pub fn histogram(values: &[f64], bins: usize) -> Vec<usize> {
        let mut h = vec![0; bins];
        for &v in values {
            let b = ((v * bins as f64) as usize).min(bins - 1);
            h[b] += 1;
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path() -> Hypergraph {
        Hypergraph::from_edges(3, vec![vec![0, 1], vec![1, 2]]).unwrap()
    }

    #[test]
    fn incidence_examples() {
        assert_eq!(
            path().incidence_pairs(),
            vec![(0, 0), (1, 0), (1, 1), (2, 1)]
        );
        assert!(Hypergraph::from_edges(2, vec![])
            .unwrap()
            .incidence_pairs()
            .is_empty());
        assert_eq!(
            Hypergraph::from_edges(1, vec![vec![0]])
                .unwrap()
                .incidence_pairs(),
            vec![(0, 0)]
        );
    }

    #[test]
    fn degree_examples() {
        assert_eq!(path().degrees(), (vec![1, 2, 1], vec![2, 2]));
        let iso = Hypergraph::from_edges(4, vec![vec![0, 1], vec![1, 2]]).unwrap();
        assert_eq!(iso.degrees().0[3], 0);
        let star = Hypergraph::from_edges(5, vec![(0..5).collect()]).unwrap();
        assert_eq!(star.degrees(), (vec![1; 5], vec![5]));
    }

    #[test]
    fn validation_errors() {
        assert!(Hypergraph::from_edges(3, vec![vec![]]).is_err());
        assert!(Hypergraph::from_edges(3, vec![vec![1, 0]]).is_err());
        assert!(Hypergraph::from_edges(3, vec![vec![1, 1]]).is_err());
        assert!(Hypergraph::from_edges(3, vec![vec![0, 5]]).is_err());
        assert!(Hypergraph::new(3, vec![], Tensor::zeros(2, 1), None, None).is_err());
        assert!(Hypergraph::new(3, vec![], Tensor::zeros(3, 1), None, Some(vec![0])).is_err());
    }

    #[test]
    fn homophily_co_member_example() {
        let h = path().with_labels(vec![0, 0, 1]).unwrap();
        let r = h.homophily_with(NodeHomophily::CoMembers).unwrap();
        assert_eq!(r.per_node, vec![1.0, 0.5, 0.0]);
        assert_eq!(r.per_edge, vec![1.0, 0.5]);
        assert_eq!(r.mean_edge, 0.75);
    }

    #[test]
    fn homophily_edge_averaged_example() {
        let h = path().with_labels(vec![0, 0, 1]).unwrap();
        let r = h.homophily().unwrap();
        assert_eq!(r.per_node, vec![1.0, 0.75, 0.5]);
        assert_eq!(r.per_edge, vec![1.0, 0.5]);
    }

    #[test]
    fn homophily_uniform_labels_and_missing_labels() {
        let h = path().with_labels(vec![2, 2, 2]).unwrap();
        for rule in [NodeHomophily::EdgeAveraged, NodeHomophily::CoMembers] {
            let r = h.homophily_with(rule).unwrap();
            assert!(r.per_node.iter().all(|&x| x == 1.0));
            assert!(r.per_edge.iter().all(|&x| x == 1.0));
        }
        assert!(matches!(path().homophily(), Err(Error::LabelsRequired)));
        let iso = Hypergraph::from_edges(4, vec![vec![0, 1]])
            .unwrap()
            .with_labels(vec![0, 1, 0, 0])
            .unwrap();
        assert_eq!(iso.homophily().unwrap().per_node[3], 0.0);
        assert_eq!(
            iso.homophily_with(NodeHomophily::CoMembers)
                .unwrap()
                .per_node[3],
            0.0
        );
    }

    #[test]
    fn dual_examples() {
        let d = path().dual().hypergraph;
        assert_eq!(d.num_nodes(), 2);
        assert_eq!(d.edges(), &[vec![0], vec![0, 1], vec![1]]);
        let single = Hypergraph::from_edges(3, vec![vec![0, 1, 2]])
            .unwrap()
            .dual()
            .hypergraph;
        assert_eq!(single.num_nodes(), 1);
        assert_eq!(single.edges(), &[vec![0], vec![0], vec![0]]);
    }

    #[test]
    fn dual_drops_isolated_nodes() {
        let h = Hypergraph::from_edges(4, vec![vec![0, 2], vec![2]]).unwrap();
        let d = h.dual();
        assert_eq!(d.node_of_dual_edge, vec![0, 2]);
        assert_eq!(d.hypergraph.edges(), &[vec![0], vec![0, 1]]);
    }

    #[test]
    fn synthesized_edge_features() {
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let h = Hypergraph::new(2, vec![vec![0, 1]], x, None, None).unwrap();
        assert_eq!(h.synthesize_edge_features().row(0), &[0.5, 0.5]);

        let x = Tensor::from_rows(&[vec![2.0, 3.0], vec![2.0, 3.0]]).unwrap();
        let h = Hypergraph::new(2, vec![vec![0, 1]], x, None, None).unwrap();
        assert_eq!(h.synthesize_edge_features().row(0), &[2.0, 3.0]);

        let h = Hypergraph::new(3, vec![vec![0, 1, 2]], Tensor::identity(3), None, None).unwrap();
        for &v in h.synthesize_edge_features().row(0) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    fn arb_hypergraph() -> impl Strategy<Value = Hypergraph> {
        (1usize..30).prop_flat_map(|n| {
            let edge = proptest::collection::btree_set(0..n, 1..=n.min(6));
            (Just(n), proptest::collection::vec(edge, 0..20)).prop_map(|(n, es)| {
                let edges = es.into_iter().map(|s| s.into_iter().collect()).collect();
                Hypergraph::from_edges(n, edges).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn degree_sums_match_incidences(h in arb_hypergraph()) {
            let (dv, de) = h.degrees();
            let n = h.incidence_pairs().len();
            prop_assert_eq!(dv.iter().sum::<usize>(), n);
            prop_assert_eq!(de.iter().sum::<usize>(), n);
        }

        #[test]
        fn dual_incidence_is_transpose(h in arb_hypergraph()) {
            let d = h.dual();
            let mut pairs: Vec<(usize, usize)> = d.hypergraph
                .incidence_pairs()
                .into_iter()
                .map(|(dn, de)| (d.node_of_dual_edge[de], dn))
                .collect();
            pairs.sort_unstable_by_key(|&(v, e)| (e, v));
            prop_assert_eq!(pairs, h.incidence_pairs());
        }

        #[test]
        fn homophily_bounds(h in arb_hypergraph(), seed in any::<u64>()) {
            let labels = (0..h.num_nodes()).map(|i| (crate::rng::mix(seed ^ i as u64) % 3) as usize).collect();
            let h = h.with_labels(labels).unwrap();
            for rule in [NodeHomophily::EdgeAveraged, NodeHomophily::CoMembers] {
                let r = h.homophily_with(rule).unwrap();
                prop_assert!(r.per_node.iter().all(|&x| (0.0..=1.0).contains(&x)));
                for (e, &x) in h.edges().iter().zip(&r.per_edge) {
                    prop_assert!(x <= 1.0 && x >= 1.0 / e.len() as f64);
                }
            }
        }
    }
}
