//! Variational broadcast/receive action sampling, the broadcast hypergraph
//! convolution, the stacked encoder, readout and projection head.
//!
//! Within a layer, edges are updated first from the node rows each edge
//! *broadcast*-accepts, then nodes are updated from the edges whose message
//! they *receive*. Every incidence `(v, e)` carries a broadcast action and a
//! receive action in `[0, 1]`, sampled from Bernoulli probabilities
//! `sigmoid(H_v · H_e)` of latent codes produced by a small variational
//! network (the VBA-Net).
//!
//! Actions gate a multi-head softmax: a row with action `a_j` enters the
//! pool with weight `a_j exp(s_j) / Σ_k a_k exp(s_k)`. Each edge (node) also
//! owns a self row `[Z_e ‖ Z_e]` (`[Z_v ‖ Z_v]`) that is active only when
//! none of its incidences is, so every pool has at least one row.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::nn::layers::MIN_STD;
use crate::nn::{
    gumbel_softmax, reparameterize, GumbelConfig, Linear, Mlp, ParamStore, PoolRows, Segments,
    SetAttention, Tape, Tensor, Var,
};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub layers: usize,
    /// Dimension of the VBA-Net latent codes.
    pub latent_dim: usize,
    /// Width of the VBA-Net posterior trunk.
    pub vba_hidden: usize,
    pub proj_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden: 64,
            heads: 4,
            head_dim: 16,
            layers: 2,
            latent_dim: 16,
            vba_hidden: 32,
            proj_dim: 32,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("layers", self.layers),
            ("latent_dim", self.latent_dim),
            ("vba_hidden", self.vba_hidden),
            ("proj_dim", self.proj_dim),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.heads * self.head_dim != self.hidden {
            return Err(Error::Config(format!(
                "hidden ({}) must equal heads × head_dim ({} × {})",
                self.hidden, self.heads, self.head_dim
            )));
        }
        Ok(())
    }
}

/// Which input projections to use: the original hypergraph or its dual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    Primal,
    Dual,
}

/// How actions are produced from the probabilities `p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActionMode {
    /// Gumbel-Softmax samples over `[log p, log(1 − p)]`, with latent codes
    /// drawn by reparameterization.
    Sample(GumbelConfig),
    /// `a = p` with latent codes at their means. Deterministic.
    Expected,
    /// Every action is the given constant, latent codes at their means.
    Fixed(f64),
}

/// Posterior network producing Gaussian latent codes for one side.
#[derive(Clone, Debug)]
struct Posterior {
    trunk: Linear,
    mu: Linear,
    log_var: Linear,
}

impl Posterior {
    fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        Posterior {
            trunk: Linear::new(
                store,
                &format!("{name}.trunk"),
                cfg.hidden,
                cfg.vba_hidden,
                rng,
            ),
            mu: Linear::new(
                store,
                &format!("{name}.mu"),
                cfg.vba_hidden,
                cfg.latent_dim,
                rng,
            ),
            log_var: Linear::new(
                store,
                &format!("{name}.log_var"),
                cfg.vba_hidden,
                cfg.latent_dim,
                rng,
            ),
        }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> (Var, Var) {
        let h = self.trunk.forward(tape, store, z);
        let h = tape.relu(h);
        (
            self.mu.forward(tape, store, h),
            self.log_var.forward(tape, store, h),
        )
    }
}

/// One VBA-Net: node and edge posteriors whose latent codes meet in an
/// inner product per incidence.
#[derive(Clone, Debug)]
pub struct VbaNet {
    node: Posterior,
    edge: Posterior,
}

impl VbaNet {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        VbaNet {
            node: Posterior::new(store, &format!("{name}.node"), cfg, rng),
            edge: Posterior::new(store, &format!("{name}.edge"), cfg, rng),
        }
    }
}

/// Actions for every incidence, aligned with [`Hypergraph::incidence_pairs`].
#[derive(Clone, Copy, Debug)]
pub struct ActionSample {
    /// I×1 action values used for gating.
    pub actions: Var,
    /// I×1 soft actions (equal to `actions` outside hard sampling).
    pub soft_actions: Var,
    /// I×1 probabilities `sigmoid(H_v · H_e)`.
    pub probs: Var,
    pub mu_v: Var,
    pub log_var_v: Var,
    pub mu_e: Var,
    pub log_var_e: Var,
}

/// Index bookkeeping that depends only on a hypergraph's structure.
#[derive(Clone, Debug)]
pub struct IncidenceLayout {
    pub num_nodes: usize,
    pub num_edges: usize,
    pub inc_node: Rc<[usize]>,
    pub inc_edge: Rc<[usize]>,
    edge_rows: Rc<PoolRows>,
    node_rows: Rc<PoolRows>,
}

impl IncidenceLayout {
    pub fn new(h: &Hypergraph) -> Self {
        let (n, m) = (h.num_nodes(), h.num_edges());
        let pairs = h.incidence_pairs();
        let i = pairs.len();
        let inc_node: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let inc_edge: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();

        // Edge update: rows 0..I are incidences, row I+e is edge e's self row.
        // First half of each row indexes [Z_V; Z_E], second half Z_E.
        let edge_idx1: Vec<usize> = inc_node
            .iter()
            .copied()
            .chain((0..m).map(|e| n + e))
            .collect();
        let edge_idx2: Vec<usize> = inc_edge.iter().copied().chain(0..m).collect();
        let mut edge_groups = vec![Vec::new(); m];
        for (k, &e) in inc_edge.iter().enumerate() {
            edge_groups[e].push(k);
        }
        for (e, g) in edge_groups.iter_mut().enumerate() {
            g.push(i + e);
        }

        // Node update: row I+v is node v's self row. First half indexes
        // [Z_E'; Z_V], second half Z_V.
        let node_idx1: Vec<usize> = inc_edge
            .iter()
            .copied()
            .chain((0..n).map(|v| m + v))
            .collect();
        let node_idx2: Vec<usize> = inc_node.iter().copied().chain(0..n).collect();
        let mut node_groups = vec![Vec::new(); n];
        for (k, &v) in inc_node.iter().enumerate() {
            node_groups[v].push(k);
        }
        for (v, g) in node_groups.iter_mut().enumerate() {
            g.push(i + v);
        }

        IncidenceLayout {
            num_nodes: n,
            num_edges: m,
            inc_node,
            inc_edge,
            edge_rows: Rc::new(PoolRows::new(
                edge_idx1,
                edge_idx2,
                Segments::from_groups(&edge_groups),
            )),
            node_rows: Rc::new(PoolRows::new(
                node_idx1,
                node_idx2,
                Segments::from_groups(&node_groups),
            )),
        }
    }

    pub fn num_incidences(&self) -> usize {
        self.inc_node.len()
    }

    /// Gate column for the attention rows: the action values followed by
    /// one self-row gate per segment, 1 exactly when every action in the
    /// segment is 0.
    fn gates(&self, tape: &mut Tape, actions: Var, segments: &Segments) -> Var {
        let a = tape.value(actions);
        let self_gates: Vec<f64> = (0..segments.len())
            .map(|s| {
                let rows = segments.segment(s);
                let silent = rows[..rows.len() - 1].iter().all(|&k| a.get(k, 0) == 0.0);
                if silent {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let self_gates = tape.constant(Tensor::column(self_gates));
        tape.concat_rows(&[actions, self_gates])
    }
}

/// Samples actions for every incidence from node codes `z_v` (N×hidden) and
/// edge codes `z_e` (M×hidden).
pub fn vba_sample(
    tape: &mut Tape,
    store: &ParamStore,
    net: &VbaNet,
    z_v: Var,
    z_e: Var,
    layout: &IncidenceLayout,
    mode: ActionMode,
    rng: &mut Rng,
) -> ActionSample {
    let (mu_v, log_var_v) = net.node.forward(tape, store, z_v);
    let (mu_e, log_var_e) = net.edge.forward(tape, store, z_e);
    let (h_v, h_e) = match mode {
        ActionMode::Sample(_) => {
            let h_v = reparameterize(tape, mu_v, log_var_v, rng);
            let h_e = reparameterize(tape, mu_e, log_var_e, rng);
            (h_v, h_e)
        }
        ActionMode::Expected | ActionMode::Fixed(_) => (mu_v, mu_e),
    };
    let hv = tape.gather(h_v, layout.inc_node.clone());
    let he = tape.gather(h_e, layout.inc_edge.clone());
    let logits = tape.row_dot(hv, he);
    let probs = tape.sigmoid(logits);
    let (actions, soft_actions) = match mode {
        ActionMode::Sample(cfg) => {
            let on = tape.log_sigmoid(logits);
            let neg = tape.neg(logits);
            let off = tape.log_sigmoid(neg);
            let pair = tape.concat_cols(on, off);
            let soft_cfg = GumbelConfig { hard: false, ..cfg };
            let y = gumbel_softmax(tape, pair, soft_cfg, rng);
            let soft = tape.slice_cols(y, 0, 1);
            if cfg.hard {
                let hard = tape.value(soft).map(|a| if a >= 0.5 { 1.0 } else { 0.0 });
                (tape.straight_through(soft, hard), soft)
            } else {
                (soft, soft)
            }
        }
        ActionMode::Expected => (probs, probs),
        ActionMode::Fixed(value) => {
            let a = tape.constant(Tensor::filled(layout.num_incidences(), 1, value));
            (a, a)
        }
    };
    ActionSample {
        actions,
        soft_actions,
        probs,
        mu_v,
        log_var_v,
        mu_e,
        log_var_e,
    }
}

/// Per-layer quantities needed by the variational loss.
#[derive(Clone, Copy, Debug)]
pub struct LayerAux {
    pub broadcast: ActionSample,
    pub receive: ActionSample,
}

/// One broadcast hypergraph convolution.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub vba_broadcast: VbaNet,
    pub vba_receive: VbaNet,
    pub edge_attention: SetAttention,
    pub node_attention: SetAttention,
}

impl ConvLayer {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        ConvLayer {
            vba_broadcast: VbaNet::new(store, &format!("{name}.vba_b"), cfg, rng),
            vba_receive: VbaNet::new(store, &format!("{name}.vba_r"), cfg, rng),
            edge_attention: SetAttention::new(
                store,
                &format!("{name}.edge_attn"),
                2 * cfg.hidden,
                cfg.heads,
                cfg.head_dim,
                rng,
            ),
            node_attention: SetAttention::new(
                store,
                &format!("{name}.node_attn"),
                2 * cfg.hidden,
                cfg.heads,
                cfg.head_dim,
                rng,
            ),
        }
    }

    /// Returns updated `(Z_V', Z_E')` and the layer's action samples.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        layout: &IncidenceLayout,
        z_v: Var,
        z_e: Var,
        mode: ActionMode,
        rng_broadcast: &mut Rng,
        rng_receive: &mut Rng,
    ) -> (Var, Var, LayerAux) {
        let broadcast = vba_sample(
            tape,
            store,
            &self.vba_broadcast,
            z_v,
            z_e,
            layout,
            mode,
            rng_broadcast,
        );
        let gates = layout.gates(tape, broadcast.actions, &layout.edge_rows.segments);
        let both = tape.concat_rows(&[z_v, z_e]);
        let z_e_new =
            self.edge_attention
                .pool_pairs(tape, store, both, z_e, gates, layout.edge_rows.clone());

        let receive = vba_sample(
            tape,
            store,
            &self.vba_receive,
            z_v,
            z_e_new,
            layout,
            mode,
            rng_receive,
        );
        let gates = layout.gates(tape, receive.actions, &layout.node_rows.segments);
        let both = tape.concat_rows(&[z_e_new, z_v]);
        let z_v_new =
            self.node_attention
                .pool_pairs(tape, store, both, z_v, gates, layout.node_rows.clone());
        (z_v_new, z_e_new, LayerAux { broadcast, receive })
    }
}

/// Output of [`Encoder::encode`].
#[derive(Clone, Debug)]
pub struct Encoded {
    pub z_v: Var,
    pub z_e: Var,
    pub aux: Vec<LayerAux>,
}

/// Input projections for both views, shared convolution layers and the
/// projection head.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    primal_node_in: Linear,
    primal_edge_in: Linear,
    dual_node_in: Linear,
    dual_edge_in: Linear,
    pub layers: Vec<ConvLayer>,
    pub projection: Mlp,
}

impl Encoder {
    /// `node_dim` and `edge_dim` are the feature widths of the primal view;
    /// the dual view swaps them.
    pub fn new(
        store: &mut ParamStore,
        config: EncoderConfig,
        node_dim: usize,
        edge_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        let hd = config.hidden;
        let primal_node_in = Linear::new(store, "input.primal.node", node_dim, hd, rng);
        let primal_edge_in = Linear::new(store, "input.primal.edge", edge_dim, hd, rng);
        let dual_node_in = Linear::new(store, "input.dual.node", edge_dim, hd, rng);
        let dual_edge_in = Linear::new(store, "input.dual.edge", node_dim, hd, rng);
        let layers = (0..config.layers)
            .map(|l| ConvLayer::new(store, &format!("layer{l}"), &config, rng))
            .collect();
        let projection = Mlp::new(store, "projection", &[hd, hd, config.proj_dim], rng);
        Ok(Encoder {
            config,
            primal_node_in,
            primal_edge_in,
            dual_node_in,
            dual_edge_in,
            layers,
            projection,
        })
    }

    pub fn input_dims(&self, view: View) -> (usize, usize) {
        let (n, e) = self.inputs(view);
        (n.fan_in, e.fan_in)
    }

    fn inputs(&self, view: View) -> (&Linear, &Linear) {
        match view {
            View::Primal => (&self.primal_node_in, &self.primal_edge_in),
            View::Dual => (&self.dual_node_in, &self.dual_edge_in),
        }
    }

    /// Runs the full encoder on `h`, whose edge features must be present.
    /// Layer `l` draws broadcast randomness from `Rng::stream(seed, [l, 0])`
    /// and receive randomness from `Rng::stream(seed, [l, 1])`.
    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        view: View,
        h: &Hypergraph,
        layout: &IncidenceLayout,
        mode: ActionMode,
        seed: u64,
    ) -> Result<Encoded> {
        let xe = h
            .edge_features()
            .ok_or_else(|| Error::Precondition("encoder input needs edge features".into()))?;
        let (node_in, edge_in) = self.inputs(view);
        if h.node_features().cols() != node_in.fan_in || xe.cols() != edge_in.fan_in {
            return Err(Error::Shape(format!(
                "{view:?} view expects {}-dim node and {}-dim edge features, got {} and {}",
                node_in.fan_in,
                edge_in.fan_in,
                h.node_features().cols(),
                xe.cols()
            )));
        }
        if layout.num_nodes != h.num_nodes() || layout.num_edges != h.num_edges() {
            return Err(Error::Shape(
                "incidence layout belongs to another hypergraph".into(),
            ));
        }
        let xv = tape.constant(h.node_features().clone());
        let xe = tape.constant(xe.clone());
        let mut z_v = node_in.forward(tape, store, xv);
        let mut z_e = edge_in.forward(tape, store, xe);
        let mut aux = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut rb = Rng::stream(seed, &[l as u64, 0]);
            let mut rr = Rng::stream(seed, &[l as u64, 1]);
            let (v, e, a) = layer.forward(tape, store, layout, z_v, z_e, mode, &mut rb, &mut rr);
            z_v = v;
            z_e = e;
            aux.push(a);
        }
        Ok(Encoded { z_v, z_e, aux })
    }

    /// Projection head, used only for the contrastive objective.
    pub fn project(&self, tape: &mut Tape, store: &ParamStore, z: Var) -> Result<Var> {
        self.projection.forward(tape, store, z)
    }
}

/// Column-wise mean of node embeddings.
pub fn readout(tape: &mut Tape, z_v: Var) -> Result<Var> {
    if tape.value(z_v).rows() == 0 {
        return Err(Error::Precondition("readout over zero nodes".into()));
    }
    Ok(tape.mean_rows(z_v))
}

/// Standard deviation actually used when sampling from `log_var`.
pub fn sampling_std(log_var: f64) -> f64 {
    (0.5 * log_var).exp().max(MIN_STD)
}
