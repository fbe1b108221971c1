//! Training loops, embedding export, the frozen-encoder probe and
//! multi-seed experiments.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::augment::{apply, AugmentationKind, AugmentationSpec};
use crate::datagen::{make_splits, Splits};
use crate::encoder::{readout, ActionMode, Encoder, EncoderConfig, IncidenceLayout, View};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::io::write_text;
use crate::nn::{
    load_checkpoint, save_checkpoint, Adam, AdamConfig, GumbelConfig, Mlp, ParamStore, Tape,
    Tensor, Var,
};
use crate::objectives::{
    contrastive_loss, cross_entropy, variational_sum, LayerLoss, LossBreakdown, Reconstruction,
};
use crate::rng::{derive, Rng};

const INIT_STREAM: u64 = 0x1417;
const SPLIT_STREAM: u64 = 0x5917;
const AUG_STREAM: u64 = 0xA06;
const ENCODE_STREAM: u64 = 0xE4C;
const PROBE_STREAM: u64 = 0x9B0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Supervised,
    Ssl,
}

/// Where the contrastive loss compares the two views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContrastOn {
    /// After the projection head.
    Projected,
    /// Directly on the readouts.
    Readout,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub encoder: EncoderConfig,
    pub alpha: f64,
    pub lambda: f64,
    pub gumbel: GumbelConfig,
    pub recon: Reconstruction,
    pub contrast_on: ContrastOn,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub num_views: usize,
    pub p_mask: f64,
    pub p_pert: f64,
    pub p_drop_edge: f64,
    pub p_drop_node: f64,
    pub aug_noise_std: f64,
    pub member_removal_fraction: f64,
    pub split: [f64; 3],
    pub seed: u64,
    /// Epoch interval for best-checkpoint selection in self-supervised runs.
    pub select_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Ssl,
            encoder: EncoderConfig::default(),
            alpha: 0.1,
            lambda: 0.7,
            gumbel: GumbelConfig::default(),
            recon: Reconstruction::Hard,
            contrast_on: ContrastOn::Projected,
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 500,
            num_views: 4,
            p_mask: 0.2,
            p_pert: 0.2,
            p_drop_edge: 0.2,
            p_drop_node: 0.2,
            aug_noise_std: 1.0,
            member_removal_fraction: 1.0 / 3.0,
            split: [0.2, 0.2, 0.6],
            seed: 0,
            select_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        let unit = [
            ("p_mask", self.p_mask),
            ("p_pert", self.p_pert),
            ("p_drop_edge", self.p_drop_edge),
            ("p_drop_node", self.p_drop_node),
        ];
        if let Some((k, v)) = unit.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config(format!("{k} = {v} not in [0, 1]")));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(Error::Config(format!(
                "lambda = {} not in (0, 1]",
                self.lambda
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha = {} must be non-negative",
                self.alpha
            )));
        }
        if !(self.gumbel.tau > 0.0) {
            return Err(Error::Config(format!(
                "tau = {} must be positive",
                self.gumbel.tau
            )));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "lr must be positive and weight_decay non-negative".into(),
            ));
        }
        if self.num_views == 0 {
            return Err(Error::Config("num_views must be positive".into()));
        }
        if self.select_every == 0 {
            return Err(Error::Config("select_every must be positive".into()));
        }
        if !(self.aug_noise_std > 0.0) {
            return Err(Error::Config("aug_noise_std must be positive".into()));
        }
        if !(self.member_removal_fraction > 0.0 && self.member_removal_fraction < 1.0) {
            return Err(Error::Config(
                "member_removal_fraction must be in (0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    fn ratio(&self, kind: AugmentationKind) -> f64 {
        match kind {
            AugmentationKind::MaskNodeAttrs => self.p_mask,
            AugmentationKind::PerturbHyperedges => self.p_pert,
            AugmentationKind::DropHyperedges => self.p_drop_edge,
            AugmentationKind::DropNodes => self.p_drop_node,
        }
    }

    /// Augmentation for view `view` of `epoch`; `side` 0 is the primal
    /// hypergraph and 1 its dual. View `i` uses operator `i mod 4`.
    pub fn augmentation(&self, epoch: usize, view: usize, side: u64) -> AugmentationSpec {
        let kind = AugmentationKind::ALL[view % 4];
        AugmentationSpec {
            kind,
            ratio: self.ratio(kind),
            noise_std: self.aug_noise_std,
            member_removal_fraction: self.member_removal_fraction,
            seed: derive(self.seed, &[AUG_STREAM, epoch as u64, view as u64, side]),
        }
    }

    pub fn splits(&self, num_nodes: usize) -> Result<Splits> {
        make_splits(num_nodes, self.split, derive(self.seed, &[SPLIT_STREAM]))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            epochs: 300,
            lr: 1e-2,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

/// Encoder parameters plus, for supervised runs, the classifier.
#[derive(Clone, Debug)]
pub struct Model {
    pub store: ParamStore,
    pub encoder: Encoder,
    pub classifier: Option<Mlp>,
}

impl Model {
    /// Freshly initialized parameters for a hypergraph with the given
    /// primal node and edge feature widths. A classifier is added when
    /// `num_classes` is given.
    pub fn new(
        config: &EncoderConfig,
        node_dim: usize,
        edge_dim: usize,
        num_classes: Option<usize>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = Rng::stream(seed, &[INIT_STREAM]);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, config.clone(), node_dim, edge_dim, &mut rng)?;
        let classifier = num_classes.map(|c| {
            Mlp::new(
                &mut store,
                "classifier",
                &[config.hidden, config.hidden, c],
                &mut rng,
            )
        });
        Ok(Model {
            store,
            encoder,
            classifier,
        })
    }

    /// Builds a model shaped for `h` under `cfg`.
    pub fn for_hypergraph(h: &Hypergraph, cfg: &TrainConfig) -> Result<Self> {
        let node_dim = h.node_features().cols();
        let edge_dim = h.edge_features().map_or(node_dim, Tensor::cols);
        let classes = match cfg.mode {
            Mode::Supervised => Some(h.num_classes().ok_or(Error::LabelsRequired)?),
            Mode::Ssl => None,
        };
        Model::new(&cfg.encoder, node_dim, edge_dim, classes, cfg.seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.store, path)
    }

    /// Overwrites every parameter from a checkpoint file.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        load_checkpoint(path)?.restore_into(&mut self.store)
    }

    fn logits(&self, tape: &mut Tape, z_v: Var) -> Result<Var> {
        let clf = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::Precondition("model has no classifier".into()))?;
        clf.forward(tape, &self.store, z_v)
    }
}

/// One line of the metrics trace.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Header of self-supervised metrics traces.
pub const SSL_TRACE_HEADER: &str = "epoch,l_total,l_con,sum_vlb,sum_reg";
/// Header of supervised metrics traces.
pub const SUPERVISED_TRACE_HEADER: &str = "epoch,l_total,l_ce,sum_vlb,sum_reg,train_acc,val_acc";

/// Renders a trace as CSV. Reals use shortest round-trip formatting.
pub fn format_trace(records: &[EpochRecord]) -> String {
    let supervised = records.first().is_some_and(|r| r.loss.l_ce.is_some());
    let mut s = String::new();
    s.push_str(if supervised {
        SUPERVISED_TRACE_HEADER
    } else {
        SSL_TRACE_HEADER
    });
    s.push('\n');
    for r in records {
        let head = r.loss.l_ce.or(r.loss.l_con).unwrap_or(f64::NAN);
        write!(
            s,
            "{},{},{},{},{}",
            r.epoch,
            r.loss.total,
            head,
            r.loss.sum_vlb(),
            r.loss.sum_reg()
        )
        .unwrap();
        if supervised {
            let acc = |a: Option<f64>| a.map_or(String::new(), |v| v.to_string());
            write!(s, ",{},{}", acc(r.train_acc), acc(r.val_acc)).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn write_trace(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_text(path, &format_trace(records))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainRun {
    /// The selected model (best validation score when selection ran).
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    /// Epoch (1-based) of the selected model; 0 means the initial weights.
    pub best_epoch: usize,
    pub best_score: Option<f64>,
}

fn check_finite(epoch: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            epoch,
            what: what.to_string(),
        })
    }
}

fn accuracy(pred: &[usize], labels: &[usize], idx: &[usize]) -> f64 {
    if idx.is_empty() {
        return 0.0;
    }
    idx.iter().filter(|&&v| pred[v] == labels[v]).count() as f64 / idx.len() as f64
}

/// End-to-end training of encoder and classifier on the train split.
/// Returns the parameters from the epoch with the best validation accuracy
/// (earliest on ties).
pub fn train_supervised(h: &Hypergraph, cfg: &TrainConfig) -> Result<(TrainRun, Splits)> {
    cfg.validate()?;
    let labels = h.labels().ok_or(Error::LabelsRequired)?.to_vec();
    let h = h.clone().ensure_edge_features();
    let splits = cfg.splits(h.num_nodes())?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::EmptySplit(
            "supervised training needs train and validation nodes".into(),
        ));
    }
    let mut model = Model::for_hypergraph(
        &h,
        &TrainConfig {
            mode: Mode::Supervised,
            ..cfg.clone()
        },
    )?;
    let layout = IncidenceLayout::new(&h);
    let mut adam = Adam::new(&model.store, cfg.adam());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::NEG_INFINITY, 0usize, model.store.clone());
    for epoch in 1..=cfg.epochs {
        model.store.zero_grad();
        let mut tape = Tape::new();
        let seed = derive(cfg.seed, &[ENCODE_STREAM, epoch as u64]);
        let enc = model.encoder.encode(
            &mut tape,
            &model.store,
            View::Primal,
            &h,
            &layout,
            ActionMode::Sample(cfg.gumbel),
            seed,
        )?;
        let logits = model.logits(&mut tape, enc.z_v)?;
        let ce = cross_entropy(&mut tape, logits, &labels, &splits.train)?;
        let (var, terms) = variational_sum(&mut tape, &enc.aux, cfg.recon, cfg.lambda, cfg.alpha);
        let loss = match var {
            Some(v) => tape.add(ce, v),
            None => ce,
        };
        let layers: Vec<LayerLoss> = terms.iter().map(|t| t.values(&tape)).collect();
        let breakdown = LossBreakdown::supervised(tape.scalar(ce), layers, cfg.alpha);
        check_finite(epoch, "loss", tape.scalar(loss))?;
        let grads = tape.backward(loss);
        grads.accumulate(&tape, &mut model.store);
        drop(tape);
        check_finite(epoch, "gradient", model.store.grad_norm())?;
        adam.step(&mut model.store);

        let pred = predict(&model, &h, &layout)?;
        let train_acc = accuracy(&pred, &labels, &splits.train);
        let val_acc = accuracy(&pred, &labels, &splits.val);
        if val_acc > best.0 {
            best = (val_acc, epoch, model.store.clone());
        }
        log::debug!(
            "epoch {epoch}: loss {} train {train_acc:.4} val {val_acc:.4}",
            breakdown.total
        );
        trace.push(EpochRecord {
            epoch,
            loss: breakdown,
            train_acc: Some(train_acc),
            val_acc: Some(val_acc),
        });
    }
    let (score, best_epoch, store) = best;
    if cfg.epochs > 0 {
        model.store = store;
    }
    Ok((
        TrainRun {
            model,
            trace,
            best_epoch,
            best_score: (cfg.epochs > 0).then_some(score),
        },
        splits,
    ))
}

/// Deterministic class predictions with expected actions.
pub fn predict(model: &Model, h: &Hypergraph, layout: &IncidenceLayout) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let enc = model.encoder.encode(
        &mut tape,
        &model.store,
        View::Primal,
        h,
        layout,
        ActionMode::Expected,
        0,
    )?;
    let logits = model.logits(&mut tape, enc.z_v)?;
    Ok(tape.value(logits).argmax_rows())
}

/// Called during self-supervised training every `select_every` epochs and
/// after the last epoch with the current model. Returning a score enables
/// best-checkpoint selection (higher is better).
pub type SelectionHook<'a> = dyn FnMut(usize, &Model) -> Result<Option<f64>> + 'a;

/// Dual-view contrastive training. Labels of `h` are never read.
pub fn train_ssl(
    h: &Hypergraph,
    cfg: &TrainConfig,
    mut hook: Option<&mut SelectionHook<'_>>,
) -> Result<TrainRun> {
    cfg.validate()?;
    let primal = h.clone().ensure_edge_features();
    let dual = primal.dual().hypergraph;
    let mut model = Model::for_hypergraph(
        &primal,
        &TrainConfig {
            mode: Mode::Ssl,
            ..cfg.clone()
        },
    )?;
    let mut adam = Adam::new(&model.store, cfg.adam());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=cfg.epochs {
        model.store.zero_grad();
        let loss = ssl_epoch(&mut model, &primal, &dual, cfg, epoch)?;
        check_finite(epoch, "gradient", model.store.grad_norm())?;
        adam.step(&mut model.store);
        log::debug!("epoch {epoch}: loss {}", loss.total);
        trace.push(EpochRecord {
            epoch,
            loss,
            train_acc: None,
            val_acc: None,
        });
        if epoch % cfg.select_every == 0 || epoch == cfg.epochs {
            if let Some(hook) = hook.as_deref_mut() {
                if let Some(score) = hook(epoch, &model)? {
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, epoch, model.store.clone()));
                    }
                }
            }
        }
    }
    let (best_epoch, best_score) = match best {
        Some((score, epoch, store)) => {
            model.store = store;
            (epoch, Some(score))
        }
        None => (cfg.epochs, None),
    };
    Ok(TrainRun {
        model,
        trace,
        best_epoch,
        best_score,
    })
}

/// Forward and backward passes of one self-supervised epoch, accumulating
/// gradients into `model.store`.
///
/// The objective `−(1/D) Σ_i cos_i + α Σ_l mean_over_encodings(L_var^(l))`
/// is a sum of per-view terms, so each view is differentiated on its own
/// tape to bound memory.
pub fn ssl_epoch(
    model: &mut Model,
    primal: &Hypergraph,
    dual: &Hypergraph,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<LossBreakdown> {
    let d = cfg.num_views;
    let var_weight = 1.0 / (2 * d) as f64;
    let mut l_con = 0.0;
    let mut layers = vec![LayerLoss::default(); cfg.encoder.layers];
    for view in 0..d {
        let mut tape = Tape::new();
        let mut outputs = Vec::with_capacity(2);
        let mut var_total: Option<Var> = None;
        for (side, (graph, which)) in [(primal, View::Primal), (dual, View::Dual)]
            .into_iter()
            .enumerate()
        {
            let aug = apply(graph, &cfg.augmentation(epoch, view, side as u64))?.hypergraph;
            let layout = IncidenceLayout::new(&aug);
            let seed = derive(
                cfg.seed,
                &[ENCODE_STREAM, epoch as u64, view as u64, side as u64],
            );
            let enc = model.encoder.encode(
                &mut tape,
                &model.store,
                which,
                &aug,
                &layout,
                ActionMode::Sample(cfg.gumbel),
                seed,
            )?;
            let r = readout(&mut tape, enc.z_v)?;
            let z = match cfg.contrast_on {
                ContrastOn::Projected => model.encoder.project(&mut tape, &model.store, r)?,
                ContrastOn::Readout => r,
            };
            outputs.push(z);
            let (var, terms) = variational_sum(
                &mut tape,
                &enc.aux,
                cfg.recon,
                cfg.lambda,
                cfg.alpha * var_weight,
            );
            for (acc, t) in layers.iter_mut().zip(&terms) {
                acc.add(&t.values(&tape), var_weight);
            }
            if let Some(v) = var {
                var_total = Some(match var_total {
                    Some(s) => tape.add(s, v),
                    None => v,
                });
            }
        }
        let con = contrastive_loss(&mut tape, &[(outputs[0], outputs[1])])?;
        let con = tape.scale(con, 1.0 / d as f64);
        l_con += tape.scalar(con);
        let loss = match var_total {
            Some(v) => tape.add(con, v),
            None => con,
        };
        check_finite(epoch, "loss", tape.scalar(loss))?;
        let grads = tape.backward(loss);
        grads.accumulate(&tape, &mut model.store);
    }
    Ok(LossBreakdown::ssl(l_con, layers, cfg.alpha))
}

/// Node embeddings of `h`: deterministic encoding with expected actions,
/// no augmentation and no projection head.
pub fn embed(model: &Model, h: &Hypergraph) -> Result<Tensor> {
    let h = h.clone().ensure_edge_features();
    let layout = IncidenceLayout::new(&h);
    let mut tape = Tape::new();
    let enc = model.encoder.encode(
        &mut tape,
        &model.store,
        View::Primal,
        &h,
        &layout,
        ActionMode::Expected,
        0,
    )?;
    Ok(tape.value(enc.z_v).clone())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeReport {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    /// Probe epoch (1-based) with the best validation accuracy.
    pub best_epoch: usize,
}

/// Trains a two-layer MLP on frozen `embeddings` using only the train
/// split and reports accuracies at its best validation epoch. Features are
/// standardized with train-split statistics.
pub fn probe(
    embeddings: &Tensor,
    labels: &[usize],
    splits: &Splits,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{} labels for {n} embedding rows",
            labels.len()
        )));
    }
    for (name, s) in [
        ("train", &splits.train),
        ("val", &splits.val),
        ("test", &splits.test),
    ] {
        if s.is_empty() {
            return Err(Error::EmptySplit(format!("{name} split is empty")));
        }
        if let Some(&v) = s.iter().find(|&&v| v >= n) {
            return Err(Error::Shape(format!(
                "{name} split contains node {v} of {n}"
            )));
        }
    }
    if cfg.hidden == 0 {
        return Err(Error::Config("probe hidden width must be positive".into()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let x = standardize(embeddings, &splits.train);
    let mut rng = Rng::stream(cfg.seed, &[PROBE_STREAM]);
    let mut store = ParamStore::new();
    let mlp = Mlp::new(
        &mut store,
        "probe",
        &[x.cols(), cfg.hidden, classes],
        &mut rng,
    );
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut best = None::<ProbeReport>;
    for epoch in 1..=cfg.epochs {
        store.zero_grad();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let logits = mlp.forward(&mut tape, &store, xv)?;
        let loss = cross_entropy(&mut tape, logits, labels, &splits.train)?;
        tape.backward(loss).accumulate(&tape, &mut store);
        adam.step(&mut store);

        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let logits = mlp.forward(&mut tape, &store, xv)?;
        let pred = tape.value(logits).argmax_rows();
        let report = ProbeReport {
            train: accuracy(&pred, labels, &splits.train),
            val: accuracy(&pred, labels, &splits.val),
            test: accuracy(&pred, labels, &splits.test),
            best_epoch: epoch,
        };
        if best.as_ref().is_none_or(|b| report.val > b.val) {
            best = Some(report);
        }
    }
    best.ok_or_else(|| Error::Config("probe needs at least one epoch".into()))
}

fn standardize(x: &Tensor, rows: &[usize]) -> Tensor {
    let c = x.cols();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; c];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; c];
    for &r in rows {
        for ((s, v), m) in std.iter_mut().zip(x.row(r)).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std: Vec<f64> = std
        .into_iter()
        .map(|s| if s > 1e-24 { s.sqrt() } else { 1.0 })
        .collect();
    let mut out = x.clone();
    for r in 0..out.rows() {
        for ((o, m), s) in out.row_mut(r).iter_mut().zip(&mean).zip(&std) {
            *o = (*o - m) / s;
        }
    }
    out
}

/// Outcome of one seed of an experiment.
#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub report: ProbeReport,
    pub run: TrainRun,
    pub splits: Splits,
}

/// Trains with `cfg` and evaluates node classification.
///
/// Supervised runs report the classifier's own accuracies at the best
/// validation epoch. Self-supervised runs probe the frozen embeddings every
/// `select_every` epochs, keep the checkpoint with the best probe
/// validation accuracy and report that probe's accuracies.
pub fn run_seed(h: &Hypergraph, cfg: &TrainConfig, probe_cfg: &ProbeConfig) -> Result<SeedResult> {
    let labels = h.labels().ok_or(Error::LabelsRequired)?.to_vec();
    match cfg.mode {
        Mode::Supervised => {
            let (run, splits) = train_supervised(h, cfg)?;
            let hh = h.clone().ensure_edge_features();
            let pred = predict(&run.model, &hh, &IncidenceLayout::new(&hh))?;
            let report = ProbeReport {
                train: accuracy(&pred, &labels, &splits.train),
                val: accuracy(&pred, &labels, &splits.val),
                test: accuracy(&pred, &labels, &splits.test),
                best_epoch: run.best_epoch,
            };
            Ok(SeedResult {
                seed: cfg.seed,
                report,
                run,
                splits,
            })
        }
        Mode::Ssl => {
            let splits = cfg.splits(h.num_nodes())?;
            let probe_cfg = ProbeConfig {
                seed: cfg.seed,
                ..probe_cfg.clone()
            };
            let mut reports: Vec<(usize, ProbeReport)> = Vec::new();
            let mut hook = |epoch: usize, model: &Model| -> Result<Option<f64>> {
                let z = embed(model, h)?;
                let r = probe(&z, &labels, &splits, &probe_cfg)?;
                log::info!(
                    "seed {} epoch {epoch}: probe val {:.4} test {:.4}",
                    cfg.seed,
                    r.val,
                    r.test
                );
                reports.push((epoch, r));
                Ok(Some(r.val))
            };
            let unlabeled = h.clone().without_labels();
            let run = train_ssl(&unlabeled, cfg, Some(&mut hook))?;
            let report = reports
                .iter()
                .find(|(e, _)| *e == run.best_epoch)
                .map(|(_, r)| *r)
                .ok_or_else(|| {
                    Error::Precondition("no probe report for the selected epoch".into())
                })?;
            Ok(SeedResult {
                seed: cfg.seed,
                report,
                run,
                splits,
            })
        }
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    // Shifted by the first value so identical inputs give exactly zero spread.
    let x0 = values[0];
    let mean = x0 + values.iter().map(|v| v - x0).sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-seed accuracies and their summary across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub per_seed: Vec<ProbeReport>,
    pub failures: Vec<(u64, String)>,
    /// Whether any failure was a non-finite loss.
    pub diverged: bool,
}

impl ExperimentReport {
    pub fn summary(&self, pick: impl Fn(&ProbeReport) -> f64) -> (f64, f64) {
        mean_std(&self.per_seed.iter().map(pick).collect::<Vec<_>>())
    }

    pub fn best_test(&self) -> Option<f64> {
        self.per_seed.iter().map(|r| r.test).reduce(f64::max)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("seed,train,val,test,best_epoch\n");
        for (seed, r) in self.seeds.iter().zip(&self.per_seed) {
            writeln!(
                s,
                "{seed},{},{},{},{}",
                r.train, r.val, r.test, r.best_epoch
            )
            .unwrap();
        }
        for (name, f) in [
            (
                "train",
                (|r: &ProbeReport| r.train) as fn(&ProbeReport) -> f64,
            ),
            ("val", |r| r.val),
            ("test", |r| r.test),
        ] {
            let (m, sd) = self.summary(f);
            writeln!(s, "# {name} mean {m:.4} std {sd:.4}").unwrap();
        }
        for (seed, e) in &self.failures {
            writeln!(s, "# seed {seed} failed: {e}").unwrap();
        }
        s
    }
}

/// Worker threads used by `run_experiment`: `BHYGNN_THREADS` when set to a
/// positive integer, otherwise the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var("BHYGNN_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `run_seed` for every seed, calling `on_seed` after each one in seed
/// order. Seeds are spread over `worker_threads()` threads; each seed is
/// deterministic on its own so the results do not depend on the thread
/// count. Failed seeds are recorded and do not stop the others.
pub fn run_experiment(
    h: &Hypergraph,
    cfg: &TrainConfig,
    probe_cfg: &ProbeConfig,
    seeds: &[u64],
    mut on_seed: impl FnMut(&SeedResult) -> Result<()>,
) -> ExperimentReport {
    let threads = worker_threads().min(seeds.len()).max(1);
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<SeedResult>>>> =
        seeds.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let c = TrainConfig {
                    seed: seeds[i],
                    ..cfg.clone()
                };
                let r = run_seed(h, &c, probe_cfg);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    let mut report = ExperimentReport {
        seeds: Vec::new(),
        per_seed: Vec::new(),
        failures: Vec::new(),
        diverged: false,
    };
    for (&seed, slot) in seeds.iter().zip(slots) {
        let outcome = slot
            .into_inner()
            .unwrap()
            .unwrap_or_else(|| Err(Error::Precondition("seed did not run".into())));
        match outcome.and_then(|r| on_seed(&r).map(|_| r)) {
            Ok(r) => {
                report.seeds.push(seed);
                report.per_seed.push(r.report);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                report.diverged |= matches!(e, Error::Divergence { .. });
                report.failures.push((seed, e.to_string()));
            }
        }
    }
    report
}
