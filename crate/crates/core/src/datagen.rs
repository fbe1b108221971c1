//! Synthetic heterophilic hypergraphs from a contextual hypergraph
//! stochastic block model, plus train/val/test splits.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::io::write_text;
use crate::nn::Tensor;
use crate::rng::Rng;

const STRUCTURE_STREAM: u64 = 1;
const FEATURE_STREAM: u64 = 2;
const MAX_MINORITY_ATTEMPTS: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub nodes_per_class: usize,
    pub edges_per_class: usize,
    pub edge_size: usize,
    pub majority_count: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 4,
            nodes_per_class: 500,
            edges_per_class: 250,
            edge_size: 15,
            majority_count: 5,
            feature_dim: 100,
            noise_std: 0.6,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn num_nodes(&self) -> usize {
        self.num_classes * self.nodes_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Infeasible(m));
        let minority = self.edge_size.saturating_sub(self.majority_count);
        if self.num_classes == 0 || self.nodes_per_class == 0 {
            return fail("need at least one class and one node per class".into());
        }
        if self.edge_size == 0 {
            return fail("edge_size must be positive".into());
        }
        if self.majority_count == 0 || self.majority_count > self.edge_size {
            return fail(format!(
                "majority_count {} must be in 1..={}",
                self.majority_count, self.edge_size
            ));
        }
        if self.majority_count > self.nodes_per_class {
            return fail(format!(
                "majority_count {} exceeds nodes_per_class {}",
                self.majority_count, self.nodes_per_class
            ));
        }
        let others = self.num_classes - 1;
        if minority > others * self.nodes_per_class {
            return fail(format!(
                "{minority} minority members but only {} nodes outside each class",
                others * self.nodes_per_class
            ));
        }
        if minority > others * self.majority_count {
            return fail(format!(
                "{minority} minority members cannot be spread over {others} classes \
                 without one outnumbering the {} majority members",
                self.majority_count
            ));
        }
        if self.feature_dim < self.num_classes {
            return fail(format!(
                "feature_dim {} is smaller than num_classes {}",
                self.feature_dim, self.num_classes
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!(
                "noise_std {} must be finite and non-negative",
                self.noise_std
            ));
        }
        Ok(())
    }

    /// `key=value` lines describing the spec, for provenance files.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "generator=chsbm").unwrap();
        writeln!(s, "num_classes={}", self.num_classes).unwrap();
        writeln!(s, "nodes_per_class={}", self.nodes_per_class).unwrap();
        writeln!(s, "edges_per_class={}", self.edges_per_class).unwrap();
        writeln!(s, "edge_size={}", self.edge_size).unwrap();
        writeln!(s, "majority_count={}", self.majority_count).unwrap();
        writeln!(s, "feature_dim={}", self.feature_dim).unwrap();
        writeln!(s, "sigma={}", self.noise_std).unwrap();
        writeln!(s, "seed={}", self.seed).unwrap();
        s
    }

    pub fn write_provenance(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_key_values())
    }
}

/// Generates a labeled hypergraph with contextual node features.
///
/// Nodes `c·P .. (c+1)·P` belong to class `c`. Each class owns
/// `edges_per_class` edges made of `majority_count` members of that class
/// and `edge_size − majority_count` members drawn from the pooled other
/// classes. A minority draw is redrawn if any single minority class would
/// outnumber the majority, so the edge's majority class is always `c`.
pub fn generate_chsbm(spec: &SyntheticSpec) -> Result<Hypergraph> {
    spec.validate()?;
    let p = spec.nodes_per_class;
    let labels: Vec<usize> = (0..spec.num_nodes()).map(|v| v / p).collect();
    let mut rng = Rng::stream(spec.seed, &[STRUCTURE_STREAM]);
    let minority = spec.edge_size - spec.majority_count;
    let pool_size = (spec.num_classes - 1) * p;
    let mut edges = Vec::with_capacity(spec.num_classes * spec.edges_per_class);
    let mut per_class = vec![0usize; spec.num_classes];
    for c in 0..spec.num_classes {
        for _ in 0..spec.edges_per_class {
            let mut e: Vec<usize> = rng
                .choose(p, spec.majority_count)
                .into_iter()
                .map(|i| c * p + i)
                .collect();
            let mut attempts = 0;
            let others = loop {
                attempts += 1;
                if attempts > MAX_MINORITY_ATTEMPTS {
                    return Err(Error::Infeasible(format!(
                        "no balanced minority draw after {MAX_MINORITY_ATTEMPTS} attempts"
                    )));
                }
                // Pool index i maps to the i-th node outside class c.
                let draw: Vec<usize> = rng
                    .choose(pool_size, minority)
                    .into_iter()
                    .map(|i| if i < c * p { i } else { i + p })
                    .collect();
                per_class.iter_mut().for_each(|n| *n = 0);
                for &v in &draw {
                    per_class[labels[v]] += 1;
                }
                if per_class.iter().all(|&n| n <= spec.majority_count) {
                    break draw;
                }
            };
            e.extend(others);
            e.sort_unstable();
            edges.push(e);
        }
    }
    let mut feature_rng = Rng::stream(spec.seed, &[FEATURE_STREAM]);
    let x = contextual_features(&labels, spec.feature_dim, spec.noise_std, &mut feature_rng)?;
    Hypergraph::new(spec.num_nodes(), edges, x, None, Some(labels))
}

/// Row `v` is the one-hot of `labels[v]` padded to `feature_dim`, plus
/// independent `N(0, sigma²)` noise on every coordinate.
pub fn contextual_features(
    labels: &[usize],
    feature_dim: usize,
    sigma: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    if let Some(&c) = labels.iter().find(|&&c| c >= feature_dim) {
        return Err(Error::Precondition(format!(
            "class {c} does not fit in {feature_dim} feature columns"
        )));
    }
    let mut x = Tensor::zeros(labels.len(), feature_dim);
    for (v, &y) in labels.iter().enumerate() {
        let row = x.row_mut(v);
        for xi in row.iter_mut() {
            *xi = sigma * rng.normal();
        }
        row[y] += 1.0;
    }
    Ok(x)
}

/// A partition of node ids into train, validation and test sets.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// Shuffles `0..n` and cuts it into `round(r_train·n)`, `round(r_val·n)` and
/// the remainder.
pub fn make_splits(n: usize, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r))
        || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios {ratios:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let train = (ratios[0] * n as f64).round() as usize;
    let val = ((ratios[1] * n as f64).round() as usize).min(n - train);
    let mut ids: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut ids);
    let test = ids.split_off(train + val);
    let val_ids = ids.split_off(train);
    Ok(Splits {
        train: ids,
        val: val_ids,
        test,
    })
}
