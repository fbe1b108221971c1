#![allow(dead_code)]

use bhygnn::encoder::{readout, ActionMode, EncoderConfig, IncidenceLayout, View};
use bhygnn::nn::{GumbelConfig, Tape, Tensor, Var};
use bhygnn::objectives::{contrastive_loss, cross_entropy, reg_loss, variational_sum, vlb_loss};
use bhygnn::pipeline::{ssl_epoch, Model, TrainConfig};
use bhygnn::{Hypergraph, Rng};

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared absolutely.
pub const FD_FLOOR: f64 = 1e-4;

pub const SOFT: GumbelConfig = GumbelConfig {
    tau: 1.0,
    hard: false,
};

/// Six nodes, three edges, three classes, random features.
pub fn toy() -> Hypergraph {
    let mut rng = Rng::new(11);
    let x = Tensor::from_vec(6, 3, (0..18).map(|_| rng.normal()).collect()).unwrap();
    Hypergraph::new(
        6,
        vec![vec![0, 1, 2], vec![2, 3, 4], vec![0, 4, 5]],
        x,
        None,
        Some(vec![0, 1, 2, 0, 1, 2]),
    )
    .unwrap()
    .ensure_edge_features()
}

pub fn small_config() -> TrainConfig {
    TrainConfig {
        encoder: EncoderConfig {
            hidden: 4,
            heads: 2,
            head_dim: 2,
            layers: 2,
            latent_dim: 3,
            vba_hidden: 4,
            proj_dim: 3,
        },
        gumbel: SOFT,
        alpha: 0.1,
        num_views: 2,
        ..TrainConfig::default()
    }
}

/// A model with every parameter jittered, so zero-initialized biases do not
/// park pre-activations exactly on a ReLU kink.
pub fn toy_model(h: &Hypergraph, cfg: &TrainConfig) -> Model {
    let edge_dim = h.edge_features().unwrap().cols();
    let mut m = Model::new(&cfg.encoder, h.node_features().cols(), edge_dim, Some(3), 5).unwrap();
    let mut rng = Rng::new(17);
    for p in m.store.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.1 * rng.normal();
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    CrossEntropy,
    Vlb,
    Reg,
    Contrastive,
    Supervised,
    SelfSupervised,
}

impl Term {
    pub const ALL: [Term; 6] = [
        Term::CrossEntropy,
        Term::Vlb,
        Term::Reg,
        Term::Contrastive,
        Term::Supervised,
        Term::SelfSupervised,
    ];
}

fn encode(
    tape: &mut Tape,
    model: &Model,
    h: &Hypergraph,
    view: View,
    seed: u64,
) -> bhygnn::encoder::Encoded {
    let layout = IncidenceLayout::new(h);
    model
        .encoder
        .encode(
            tape,
            &model.store,
            view,
            h,
            &layout,
            ActionMode::Sample(SOFT),
            seed,
        )
        .unwrap()
}

fn sum(tape: &mut Tape, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = tape.add(acc, v);
    }
    acc
}

/// Builds `term` on a fresh tape with fixed sampling noise.
fn build(term: Term, model: &Model, h: &Hypergraph, cfg: &TrainConfig) -> (Tape, Var) {
    let mut tape = Tape::new();
    let all: Vec<usize> = (0..h.num_nodes()).collect();
    let labels = h.labels().unwrap();
    let enc = encode(&mut tape, model, h, View::Primal, 7);
    let loss = match term {
        Term::CrossEntropy | Term::Supervised => {
            let logits = model
                .classifier
                .as_ref()
                .unwrap()
                .forward(&mut tape, &model.store, enc.z_v)
                .unwrap();
            let ce = cross_entropy(&mut tape, logits, labels, &all).unwrap();
            if term == Term::Supervised {
                let (var, _) =
                    variational_sum(&mut tape, &enc.aux, cfg.recon, cfg.lambda, cfg.alpha);
                tape.add(ce, var.unwrap())
            } else {
                ce
            }
        }
        Term::Vlb => {
            let parts: Vec<Var> = enc
                .aux
                .iter()
                .flat_map(|a| [a.broadcast, a.receive])
                .map(|s| vlb_loss(&mut tape, &s, cfg.recon))
                .collect();
            sum(&mut tape, &parts)
        }
        Term::Reg => {
            let parts: Vec<Var> = enc
                .aux
                .iter()
                .flat_map(|a| [a.broadcast, a.receive])
                .map(|s| reg_loss(&mut tape, s.probs, cfg.lambda))
                .collect();
            sum(&mut tape, &parts)
        }
        Term::Contrastive => {
            let dual = h.dual().hypergraph;
            let enc_d = encode(&mut tape, model, &dual, View::Dual, 8);
            let rp = readout(&mut tape, enc.z_v).unwrap();
            let rd = readout(&mut tape, enc_d.z_v).unwrap();
            let zp = model.encoder.project(&mut tape, &model.store, rp).unwrap();
            let zd = model.encoder.project(&mut tape, &model.store, rd).unwrap();
            contrastive_loss(&mut tape, &[(zp, zd)]).unwrap()
        }
        Term::SelfSupervised => unreachable!("evaluated through ssl_epoch"),
    };
    (tape, loss)
}

/// Loss value and the analytic gradient of every parameter value, in store
/// order.
pub fn analytic(term: Term, model: &Model, h: &Hypergraph, cfg: &TrainConfig) -> (f64, Vec<f64>) {
    let mut m = model.clone();
    m.store.zero_grad();
    let value = if term == Term::SelfSupervised {
        let dual = h.dual().hypergraph;
        ssl_epoch(&mut m, h, &dual, cfg, 1).unwrap().total
    } else {
        let (tape, loss) = build(term, &m, h, cfg);
        let grads = tape.backward(loss);
        grads.accumulate(&tape, &mut m.store);
        tape.scalar(loss)
    };
    let g = m
        .store
        .iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect();
    (value, g)
}

pub fn value(term: Term, model: &Model, h: &Hypergraph, cfg: &TrainConfig) -> f64 {
    if term == Term::SelfSupervised {
        let mut m = model.clone();
        let dual = h.dual().hypergraph;
        ssl_epoch(&mut m, h, &dual, cfg, 1).unwrap().total
    } else {
        let (tape, loss) = build(term, model, h, cfg);
        tape.scalar(loss)
    }
}

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters with non-zero analytic gradient.
    pub nonzero: usize,
    pub worst: f64,
    pub worst_name: String,
    pub failures: usize,
}

/// Central differences over every parameter value.
pub fn grad_check(term: Term, model: &Model, h: &Hypergraph, cfg: &TrainConfig) -> GradCheck {
    let (_, grads) = analytic(term, model, h, cfg);
    let mut out = GradCheck {
        checked: 0,
        nonzero: 0,
        worst: 0.0,
        worst_name: String::new(),
        failures: 0,
    };
    let mut k = 0;
    let names: Vec<(String, usize)> = model
        .store
        .iter()
        .map(|p| (p.name.clone(), p.value.len()))
        .collect();
    for (pi, (name, len)) in names.iter().enumerate() {
        for i in 0..*len {
            let mut m = model.clone();
            let id = m.store.find(name).unwrap();
            debug_assert_eq!(id.index(), pi);
            let orig = m.store.value(id).data()[i];
            m.store.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = value(term, &m, h, cfg);
            m.store.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = value(term, &m, h, cfg);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            if rel > out.worst {
                out.worst = rel;
                out.worst_name = format!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
            }
            if rel > FD_REL_TOL {
                if std::env::var("FD_DEBUG").is_ok() {
                    eprintln!("{name}[{i}] analytic {a:e} numeric {numeric:e}");
                }
                out.failures += 1;
            }
            if a != 0.0 {
                out.nonzero += 1;
            }
            out.checked += 1;
            k += 1;
        }
    }
    out
}
