//! Loss terms and the combined supervised and self-supervised objectives.
//!
//! Every term is minimized: the variational term is the negative evidence
//! lower bound and the contrastive term is the negative mean cosine
//! similarity.

use std::rc::Rc;

use crate::encoder::{ActionSample, LayerAux};
use crate::error::{Error, Result};
use crate::nn::{Tape, Var};

/// Probabilities are clamped into `[P_MIN, 1 − P_MIN]` before logarithms.
pub const P_MIN: f64 = 1e-7;

/// Which action values the Bernoulli reconstruction term scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reconstruction {
    /// The forward (possibly hard) action values.
    #[default]
    Hard,
    /// The relaxed Gumbel-Softmax sample, i.e. binary cross-entropy
    /// against soft targets.
    Soft,
}

/// Mean softmax cross-entropy of `logits` (N×C) over the nodes in `mask`.
pub fn cross_entropy(
    tape: &mut Tape,
    logits: Var,
    labels: &[usize],
    mask: &[usize],
) -> Result<Var> {
    if mask.is_empty() {
        return Err(Error::EmptySplit("cross-entropy over an empty mask".into()));
    }
    let (rows, classes) = tape.value(logits).shape();
    let mut targets = Vec::with_capacity(mask.len());
    for &v in mask {
        if v >= rows || v >= labels.len() {
            return Err(Error::Shape(format!("mask entry {v} outside {rows} rows")));
        }
        if labels[v] >= classes {
            return Err(Error::Shape(format!(
                "label {} of node {v} outside {classes} classes",
                labels[v]
            )));
        }
        targets.push((v, labels[v]));
    }
    Ok(tape.cross_entropy(logits, Rc::from(targets)))
}

/// Negative evidence lower bound of one action sample:
/// `−Σ [a ln p + (1 − a) ln(1 − p)] + KL(q(H_V) ‖ N(0, I)) + KL(q(H_E) ‖ N(0, I))`.
pub fn vlb_loss(tape: &mut Tape, sample: &ActionSample, recon: Reconstruction) -> Var {
    let a = match recon {
        Reconstruction::Hard => sample.actions,
        Reconstruction::Soft => sample.soft_actions,
    };
    let p = tape.clamp(sample.probs, P_MIN, 1.0 - P_MIN);
    let log_p = tape.log(p);
    let neg_p = tape.neg(p);
    let q = tape.add_scalar(neg_p, 1.0);
    let log_q = tape.log(q);
    let diff = tape.sub(log_p, log_q);
    let weighted = tape.mul(a, diff);
    let ll = tape.add(weighted, log_q);
    let ll = tape.sum(ll);
    let kl_v = tape.gaussian_kl(sample.mu_v, sample.log_var_v);
    let kl_e = tape.gaussian_kl(sample.mu_e, sample.log_var_e);
    let kl = tape.add(kl_v, kl_e);
    tape.sub(kl, ll)
}

/// `‖λM − M̂‖_F` over incidences, where `M̂` holds the probabilities.
pub fn reg_loss(tape: &mut Tape, probs: Var, lambda: f64) -> Var {
    let neg = tape.neg(probs);
    let diff = tape.add_scalar(neg, lambda);
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    tape.sqrt(total)
}

/// `−(1/D) Σ_i cos(z_primal_i, z_dual_i)`. A pair with a zero vector
/// contributes cosine 0.
pub fn contrastive_loss(tape: &mut Tape, pairs: &[(Var, Var)]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::Precondition("contrastive loss over no pairs".into()));
    }
    let mut acc: Option<Var> = None;
    for &(a, b) in pairs {
        if tape.value(a).norm() == 0.0 || tape.value(b).norm() == 0.0 {
            log::warn!("zero-norm embedding in contrastive pair; cosine taken as 0");
        }
        let c = tape.cosine(a, b);
        acc = Some(match acc {
            Some(s) => tape.add(s, c),
            None => c,
        });
    }
    Ok(tape.scale(acc.expect("non-empty"), -1.0 / pairs.len() as f64))
}

/// Tape handles of one layer's variational terms.
#[derive(Clone, Copy, Debug)]
pub struct LayerTerms {
    pub vlb_broadcast: Var,
    pub reg_broadcast: Var,
    pub vlb_receive: Var,
    pub reg_receive: Var,
    /// Sum of the four terms.
    pub total: Var,
}

impl LayerTerms {
    pub fn values(&self, tape: &Tape) -> LayerLoss {
        LayerLoss {
            vlb_broadcast: tape.scalar(self.vlb_broadcast),
            reg_broadcast: tape.scalar(self.reg_broadcast),
            vlb_receive: tape.scalar(self.vlb_receive),
            reg_receive: tape.scalar(self.reg_receive),
        }
    }
}

pub fn layer_terms(
    tape: &mut Tape,
    aux: &LayerAux,
    recon: Reconstruction,
    lambda: f64,
) -> LayerTerms {
    let vlb_broadcast = vlb_loss(tape, &aux.broadcast, recon);
    let reg_broadcast = reg_loss(tape, aux.broadcast.probs, lambda);
    let vlb_receive = vlb_loss(tape, &aux.receive, recon);
    let reg_receive = reg_loss(tape, aux.receive.probs, lambda);
    let s1 = tape.add(vlb_broadcast, reg_broadcast);
    let s2 = tape.add(vlb_receive, reg_receive);
    LayerTerms {
        vlb_broadcast,
        reg_broadcast,
        vlb_receive,
        reg_receive,
        total: tape.add(s1, s2),
    }
}

/// Sum over layers of the per-layer variational terms, scaled by `scale`.
pub fn variational_sum(
    tape: &mut Tape,
    aux: &[LayerAux],
    recon: Reconstruction,
    lambda: f64,
    scale: f64,
) -> (Option<Var>, Vec<LayerTerms>) {
    let terms: Vec<LayerTerms> = aux
        .iter()
        .map(|a| layer_terms(tape, a, recon, lambda))
        .collect();
    let mut acc: Option<Var> = None;
    for t in &terms {
        acc = Some(match acc {
            Some(s) => tape.add(s, t.total),
            None => t.total,
        });
    }
    (acc.map(|v| tape.scale(v, scale)), terms)
}

/// Scalar values of one layer's variational terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerLoss {
    pub vlb_broadcast: f64,
    pub reg_broadcast: f64,
    pub vlb_receive: f64,
    pub reg_receive: f64,
}

impl LayerLoss {
    pub fn total(&self) -> f64 {
        self.vlb_broadcast + self.reg_broadcast + self.vlb_receive + self.reg_receive
    }

    pub fn add(&mut self, other: &LayerLoss, weight: f64) {
        self.vlb_broadcast += weight * other.vlb_broadcast;
        self.reg_broadcast += weight * other.reg_broadcast;
        self.vlb_receive += weight * other.vlb_receive;
        self.reg_receive += weight * other.reg_receive;
    }
}

/// `L_sl = L_ce + α Σ_l L_var^(l)`.
pub fn total_supervised(l_ce: f64, per_layer_var: &[f64], alpha: f64) -> f64 {
    l_ce + alpha * per_layer_var.iter().sum::<f64>()
}

/// `L_ssl = L_con + α Σ_l L_var^(l)`.
pub fn total_ssl(l_con: f64, per_layer_var: &[f64], alpha: f64) -> f64 {
    l_con + alpha * per_layer_var.iter().sum::<f64>()
}

/// Every component of an objective, in the minimized sign convention.
#[derive(Clone, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_ce: Option<f64>,
    pub l_con: Option<f64>,
    pub layers: Vec<LayerLoss>,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn supervised(l_ce: f64, layers: Vec<LayerLoss>, alpha: f64) -> Self {
        let per: Vec<f64> = layers.iter().map(LayerLoss::total).collect();
        LossBreakdown {
            l_ce: Some(l_ce),
            l_con: None,
            total: total_supervised(l_ce, &per, alpha),
            layers,
            alpha,
        }
    }

    pub fn ssl(l_con: f64, layers: Vec<LayerLoss>, alpha: f64) -> Self {
        let per: Vec<f64> = layers.iter().map(LayerLoss::total).collect();
        LossBreakdown {
            l_ce: None,
            l_con: Some(l_con),
            total: total_ssl(l_con, &per, alpha),
            layers,
            alpha,
        }
    }

    pub fn sum_vlb(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.vlb_broadcast + l.vlb_receive)
            .sum()
    }

    pub fn sum_reg(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.reg_broadcast + l.reg_receive)
            .sum()
    }

    /// Total recomputed from the parts.
    pub fn recomputed_total(&self) -> f64 {
        let head = self.l_ce.or(self.l_con).unwrap_or(0.0);
        head + self.alpha * (self.sum_vlb() + self.sum_reg())
    }

    /// Per-layer evidence lower bounds, in the maximized convention.
    pub fn elbo(&self) -> Vec<(f64, f64)> {
        self.layers
            .iter()
            .map(|l| (-l.vlb_broadcast, -l.vlb_receive))
            .collect()
    }

    /// Mean cosine similarity, in the maximized convention.
    pub fn similarity(&self) -> Option<f64> {
        self.l_con.map(|c| -c)
    }
}
