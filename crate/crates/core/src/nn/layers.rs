use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tape::{PoolRows, Segments, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Affine map `x W + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Stack of affine layers with ReLU between consecutive layers (none after
/// the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {cols}",
                self.in_dim()
            )));
        }
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelConfig {
    pub tau: f64,
    pub hard: bool,
}

impl Default for GumbelConfig {
    fn default() -> Self {
        GumbelConfig {
            tau: 1.0,
            hard: true,
        }
    }
}

/// Gumbel-Softmax over the columns of `logits` with fresh standard Gumbel
/// noise.
pub fn gumbel_softmax(tape: &mut Tape, logits: Var, cfg: GumbelConfig, rng: &mut Rng) -> Var {
    let (r, c) = tape.value(logits).shape();
    let noise = (0..r * c).map(|_| rng.gumbel()).collect();
    let noise = Tensor::from_vec(r, c, noise).expect("sized");
    gumbel_softmax_with_noise(tape, logits, noise, cfg)
}

/// Gumbel-Softmax with caller-supplied noise `g`: per row
/// `softmax((logits + g) / tau)`; in hard mode the forward value is the
/// one-hot row argmax and the gradient is that of the soft sample.
pub fn gumbel_softmax_with_noise(
    tape: &mut Tape,
    logits: Var,
    noise: Tensor,
    cfg: GumbelConfig,
) -> Var {
    assert!(cfg.tau > 0.0, "Gumbel temperature must be positive");
    let g = tape.constant(noise);
    let perturbed = tape.add(logits, g);
    let scaled = tape.scale(perturbed, 1.0 / cfg.tau);
    let soft = tape.row_softmax(scaled);
    if !cfg.hard {
        return soft;
    }
    let sv = tape.value(soft);
    let mut hard = Tensor::zeros(sv.rows(), sv.cols());
    for (r, c) in sv.argmax_rows().into_iter().enumerate() {
        hard.set(r, c, 1.0);
    }
    tape.straight_through(soft, hard)
}

/// Smallest standard deviation used when sampling.
pub const MIN_STD: f64 = 1e-8;

/// `mu + sigma * rho` with `sigma = max(exp(log_var / 2), MIN_STD)` and
/// `rho ~ N(0, I)` drawn from `rng`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_var: Var, rng: &mut Rng) -> Var {
    let (r, c) = tape.value(mu).shape();
    assert_eq!(
        tape.value(log_var).shape(),
        (r, c),
        "reparameterize: shapes"
    );
    let rho = (0..r * c).map(|_| rng.normal()).collect();
    let rho = tape.constant(Tensor::from_vec(r, c, rho).expect("sized"));
    let half = tape.scale(log_var, 0.5);
    let sigma = tape.exp(half);
    let sigma = tape.clamp(sigma, MIN_STD, f64::INFINITY);
    let noise = tape.mul(sigma, rho);
    tape.add(mu, noise)
}

/// Closed-form `KL(N(mu, exp(log_var)) || N(0, I))` summed over entries.
pub fn gaussian_kl(mu: &Tensor, log_var: &Tensor) -> Result<f64> {
    if mu.shape() != log_var.shape() {
        return Err(Error::Shape("gaussian_kl: mu and log_var differ".into()));
    }
    if !mu.is_finite() || !log_var.is_finite() {
        return Err(Error::Precondition("gaussian_kl: non-finite input".into()));
    }
    Ok(mu
        .data()
        .iter()
        .zip(log_var.data())
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum())
}

/// Multi-head attention pooling of a set of rows into one row.
///
/// Each head `i` maps rows through its own key and value MLPs (one hidden
/// layer of width `head_dim`), scores keys against a learned query
/// `theta_i`, and returns the softmax-weighted sum of values; heads are
/// concatenated. The first layer of all key and value MLPs is stored as one
/// `in_dim × 2·heads·head_dim` matrix (keys first, then values).
///
/// The key output layer has no bias: a per-head constant added to every
/// score cancels in the softmax. Scores are computed as
/// `relu(h_K) · (W_K theta)` and values are pooled before their output
/// layer, which gives the same result without forming per-row keys or
/// values.
#[derive(Clone, Debug)]
pub struct SetAttention {
    pub heads: usize,
    pub head_dim: usize,
    pub in_dim: usize,
    pub kv_in: Linear,
    pub key_out: ParamId,
    pub value_out: ParamId,
    pub value_out_bias: ParamId,
    pub query: ParamId,
}

impl SetAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let width = heads * head_dim;
        let kv_in = Linear::new(store, &format!("{name}.kv_in"), in_dim, 2 * width, rng);
        let blocks = |store: &mut ParamStore, tag: &str, rng: &mut Rng| {
            let mut t = Tensor::zeros(width, head_dim);
            for h in 0..heads {
                let bound = (6.0 / (2 * head_dim) as f64).sqrt();
                for r in 0..head_dim {
                    for c in 0..head_dim {
                        t.set(h * head_dim + r, c, (2.0 * rng.uniform() - 1.0) * bound);
                    }
                }
            }
            store.add(format!("{name}.{tag}"), t)
        };
        let key_out = blocks(store, "key_out.weight", rng);
        let value_out = blocks(store, "value_out.weight", rng);
        let value_out_bias = store.add(format!("{name}.value_out.bias"), Tensor::zeros(1, width));
        let bound = (6.0 / (head_dim + 1) as f64).sqrt();
        let q = (0..width)
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        let query = store.add(format!("{name}.query"), Tensor::column(q));
        SetAttention {
            heads,
            head_dim,
            in_dim,
            kv_in,
            key_out,
            value_out,
            value_out_bias,
            query,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    /// Pools rows `[first[i_j] ‖ second[k_j]]` (indices from `rows`)
    /// without materializing them: the first-layer weight is split into the
    /// blocks acting on `first` and on `second`. Returns one row per
    /// segment.
    pub fn pool_pairs(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        first: Var,
        second: Var,
        gates: Var,
        rows: Rc<PoolRows>,
    ) -> Var {
        let split = tape.value(first).cols();
        assert_eq!(
            split + tape.value(second).cols(),
            self.in_dim,
            "pool_pairs: widths"
        );
        let w = tape.param(store, self.kv_in.weight);
        let b = tape.param(store, self.kv_in.bias);
        let w_top = tape.slice_rows(w, 0, split);
        let w_bot = tape.slice_rows(w, split, self.in_dim);
        let p1 = tape.matmul(first, w_top);
        let p2 = tape.matmul(second, w_bot);
        let p2 = tape.add_row(p2, b);
        self.pool_projected(tape, store, p1, p2, gates, rows)
    }

    fn pool_projected(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        p1: Var,
        p2: Var,
        gates: Var,
        rows: Rc<PoolRows>,
    ) -> Var {
        let d = self.head_dim;
        let kw = tape.param(store, self.key_out);
        let q = tape.param(store, self.query);
        let per_head: Vec<Var> = (0..self.heads)
            .map(|h| {
                let w = tape.slice_rows(kw, h * d, (h + 1) * d);
                let t = tape.slice_rows(q, h * d, (h + 1) * d);
                tape.matmul(w, t)
            })
            .collect();
        let u = tape.concat_rows(&per_head);
        let pooled = tape.set_pool(p1, p2, u, gates, self.heads, rows);
        let vw = tape.param(store, self.value_out);
        let vb = tape.param(store, self.value_out_bias);
        let v = tape.block_matmul(pooled, vw, self.heads);
        tape.add_row(v, vb)
    }

    /// Attention over one set `s` (c × in_dim), returning 1 × heads·head_dim.
    pub fn forward_set(&self, tape: &mut Tape, store: &ParamStore, s: Var) -> Result<Var> {
        let (c, d) = tape.value(s).shape();
        if c == 0 {
            return Err(Error::Precondition(
                "set attention over an empty set".into(),
            ));
        }
        if d != self.in_dim {
            return Err(Error::Shape(format!(
                "set attention expects {} columns, got {d}",
                self.in_dim
            )));
        }
        let pre = self.kv_in.forward(tape, store, s);
        let zero = tape.constant(Tensor::zeros(1, 2 * self.out_dim()));
        let gates = tape.constant(Tensor::filled(c, 1, 1.0));
        let rows = PoolRows::new(
            (0..c).collect(),
            vec![0; c],
            Segments::from_groups(&[(0..c).collect()]),
        );
        Ok(self.pool_projected(tape, store, pre, zero, gates, Rc::new(rows)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_passes_input() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let mlp = Mlp::new(&mut store, "m", &[3, 3], &mut rng);
        *store.value_mut(mlp.layers[0].weight) = Tensor::identity(3);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, -1.0]]).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = mlp.forward(&mut tape, &store, xv).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn zero_weights_give_bias_rows() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(0);
        let mlp = Mlp::new(&mut store, "m", &[3, 2], &mut rng);
        *store.value_mut(mlp.layers[0].weight) = Tensor::zeros(3, 2);
        *store.value_mut(mlp.layers[0].bias) = Tensor::row_vector(vec![0.25, -4.0]);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::filled(4, 3, 7.0));
        let y = mlp.forward(&mut tape, &store, xv).unwrap();
        for r in 0..4 {
            assert_eq!(tape.value(y).row(r), &[0.25, -4.0]);
        }
    }

    #[test]
    fn mlp_shapes_and_mismatch() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(1);
        let mlp = Mlp::new(&mut store, "m", &[3, 8], &mut rng);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(5, 3));
        let y = mlp.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y).shape(), (5, 8));
        let bad = tape.constant(Tensor::zeros(5, 4));
        assert!(matches!(
            mlp.forward(&mut tape, &store, bad),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn kl_closed_form_values() {
        let z = Tensor::zeros(2, 3);
        assert_eq!(gaussian_kl(&z, &z).unwrap(), 0.0);
        let mu = Tensor::scalar(1.0);
        assert_eq!(gaussian_kl(&mu, &Tensor::scalar(0.0)).unwrap(), 0.5);
        assert!(gaussian_kl(&Tensor::scalar(f64::NAN), &Tensor::scalar(0.0)).is_err());
        assert!(gaussian_kl(&Tensor::zeros(1, 2), &Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn reparameterize_degenerate_variance_returns_mean() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::row_vector(vec![0.5, -3.0]));
        let lv = tape.constant(Tensor::filled(1, 2, -1e4));
        let h = reparameterize(&mut tape, mu, lv, &mut Rng::new(5));
        for (a, b) in tape.value(h).data().iter().zip([0.5, -3.0]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reparameterize_is_deterministic_per_seed() {
        let run = |seed| {
            let mut tape = Tape::new();
            let mu = tape.constant(Tensor::zeros(3, 2));
            let lv = tape.constant(Tensor::zeros(3, 2));
            let h = reparameterize(&mut tape, mu, lv, &mut Rng::new(seed));
            tape.value(h).clone()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn gumbel_low_temperature_is_argmax_of_perturbed_logits() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_rows(&[vec![0.1, 0.5, 0.2]]).unwrap());
        let noise = Tensor::from_rows(&[vec![0.9, 0.0, 0.1]]).unwrap();
        let cfg = GumbelConfig {
            tau: 1e-3,
            hard: false,
        };
        let y = gumbel_softmax_with_noise(&mut tape, logits, noise, cfg);
        let row = tape.value(y).row(0).to_vec();
        assert!((row[0] - 1.0).abs() < 1e-12 && row[1] < 1e-12 && row[2] < 1e-12);
    }

    #[test]
    fn gumbel_hard_rows_are_one_hot() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::filled(50, 3, 0.0));
        let y = gumbel_softmax(&mut tape, logits, GumbelConfig::default(), &mut Rng::new(2));
        for r in 0..50 {
            let row = tape.value(y).row(r);
            assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
            assert_eq!(row.iter().filter(|&&v| v == 0.0).count(), 2);
        }
    }

    #[test]
    fn set_attention_single_row_returns_value_row() {
        let mut store = ParamStore::new();
        let mut rng = Rng::new(3);
        let attn = SetAttention::new(&mut store, "a", 4, 2, 3, &mut rng);
        let s = Tensor::from_rows(&[vec![0.3, -0.2, 1.0, 0.7]]).unwrap();
        let mut tape = Tape::new();
        let sv = tape.constant(s);
        let out = attn.forward_set(&mut tape, &store, sv).unwrap();
        assert_eq!(tape.value(out).shape(), (1, 6));
        let pre = attn.kv_in.forward(&mut tape, &store, sv);
        let hidden = tape.relu(pre);
        let vh = tape.slice_cols(hidden, 6, 12);
        let vw = tape.param(&store, attn.value_out);
        let vb = tape.param(&store, attn.value_out_bias);
        let v = tape.block_matmul(vh, vw, 2);
        let v = tape.add_row(v, vb);
        for (a, b) in tape.value(out).data().iter().zip(tape.value(v).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn set_attention_rejects_empty_set() {
        let mut store = ParamStore::new();
        let attn = SetAttention::new(&mut store, "a", 4, 2, 3, &mut Rng::new(0));
        let mut tape = Tape::new();
        let s = tape.constant(Tensor::zeros(0, 4));
        assert!(attn.forward_set(&mut tape, &store, s).is_err());
    }
}
