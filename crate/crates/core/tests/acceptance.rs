//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Property criteria (1-7, 10, 11) must pass: any failure makes the target
//! exit non-zero. The two training benchmarks (8, 9) are reported with their
//! measured numbers and do not fail the target. Set
//! `BHYGNN_SKIP_BENCHMARKS=1` to skip them.

mod common;

use std::time::{Duration, Instant};

use bhygnn::augment::{apply, selection_size, AugmentationKind, AugmentationSpec};
use bhygnn::datagen::{generate_chsbm, SyntheticSpec};
use bhygnn::nn::{gaussian_kl, gumbel_softmax, GumbelConfig, Tape, Tensor, Var};
use bhygnn::objectives::contrastive_loss;
use bhygnn::pipeline::{
    embed, run_experiment, train_ssl, worker_threads, Mode, Model, ProbeConfig, TrainConfig,
};
use bhygnn::{Hypergraph, Rng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Random hypergraph on at most `max_n` nodes with every node covered.
fn random_hypergraph(rng: &mut Rng, max_n: usize, feature_dim: usize) -> Hypergraph {
    let n = 1 + rng.below(max_n);
    let m = 1 + rng.below(n + 5);
    let mut edges: Vec<Vec<usize>> = (0..m)
        .map(|_| {
            let k = 1 + rng.below(n.min(8));
            rng.choose(n, k)
        })
        .collect();
    let mut covered = vec![false; n];
    for e in &edges {
        for &v in e {
            covered[v] = true;
        }
    }
    for (v, c) in covered.iter().enumerate() {
        if !c {
            let j = rng.below(m);
            edges[j].push(v);
        }
    }
    let x = Tensor::from_vec(
        n,
        feature_dim,
        (0..n * feature_dim).map(|_| rng.normal()).collect(),
    )
    .unwrap();
    Hypergraph::from_unsorted(n, edges, x).unwrap()
}

fn dual_involution() -> Outcome {
    let mut rng = Rng::new(1);
    let mut failures = 0;
    for _ in 0..200 {
        let h = random_hypergraph(&mut rng, 50, 0);
        let back = h.dual().hypergraph.dual().hypergraph;
        if !back.same_structure(&h) {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("200 hypergraphs, {failures} failures"),
    )
}

fn homophily() -> Outcome {
    let t = Instant::now();
    let (mut he, mut hv) = (0.0, 0.0);
    for seed in 0..5 {
        let h = generate_chsbm(&SyntheticSpec {
            seed,
            ..SyntheticSpec::default()
        })
        .unwrap();
        let r = h.homophily().unwrap();
        he += r.mean_edge / 5.0;
        hv += r.mean_node / 5.0;
    }
    let el = t.elapsed();
    let pass =
        (0.31..=0.35).contains(&he) && (0.25..=0.31).contains(&hv) && el < Duration::from_secs(10);
    outcome(
        pass,
        format!("mean h(e) {he:.4}, mean h(v) {hv:.4}, {:.2}s", secs(el)),
    )
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let h = common::toy();
    let cfg = common::small_config();
    let model = common::toy_model(&h, &cfg);
    let mut pass = true;
    let mut parts = Vec::new();
    for term in common::Term::ALL {
        let r = common::grad_check(term, &model, &h, &cfg);
        pass &= r.failures == 0 && r.nonzero > 0;
        parts.push(format!("{term:?} worst {:.1e}", r.worst));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(60);
    outcome(pass, format!("{}; {:.1}s", parts.join(", "), secs(el)))
}

fn gumbel() -> Outcome {
    let n = 10_000;
    let p: f64 = 0.8;
    let row = [p.ln(), (1.0 - p).ln()];
    let logits = Tensor::from_vec(n, 2, row.iter().copied().cycle().take(2 * n).collect()).unwrap();
    let mut rng = Rng::new(2);
    let mut tape = Tape::new();
    let l = tape.constant(logits);
    let hard = gumbel_softmax(
        &mut tape,
        l,
        GumbelConfig {
            tau: 0.1,
            hard: true,
        },
        &mut rng,
    );
    let freq = (0..n).map(|r| tape.value(hard).get(r, 0)).sum::<f64>() / n as f64;
    let soft = gumbel_softmax(
        &mut tape,
        l,
        GumbelConfig {
            tau: 0.1,
            hard: false,
        },
        &mut rng,
    );
    let worst = (0..n)
        .map(|r| (tape.value(soft).row(r).iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    outcome(
        (freq - p).abs() <= 0.02 && worst <= 1e-12,
        format!("frequency {freq:.4}, worst soft row-sum error {worst:.1e}"),
    )
}

fn kl_oracle() -> Outcome {
    let mut rng = Rng::new(3);
    let samples = 100_000;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = 4;
        let mu: Vec<f64> = (0..d).map(|_| 3.0 * rng.uniform() - 1.5).collect();
        let lv: Vec<f64> = (0..d).map(|_| 2.0 * rng.uniform() - 1.5).collect();
        let exact = gaussian_kl(
            &Tensor::row_vector(mu.clone()),
            &Tensor::row_vector(lv.clone()),
        )
        .unwrap();
        // E_q[log q(x) - log p(x)] with x = mu + sigma * eps.
        let mut acc = 0.0;
        for _ in 0..samples {
            for k in 0..d {
                let eps = rng.normal();
                let x = mu[k] + (0.5 * lv[k]).exp() * eps;
                acc += -0.5 * lv[k] - 0.5 * eps * eps + 0.5 * x * x;
            }
        }
        let mc = acc / samples as f64;
        worst = worst.max((mc - exact).abs() / exact);
    }
    outcome(
        worst <= 0.02,
        format!("20 pairs, worst relative gap {:.3}%", 100.0 * worst),
    )
}

fn augmentation() -> Outcome {
    let mut rng = Rng::new(4);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let h = random_hypergraph(&mut rng, 40, 3);
        let kind = AugmentationKind::ALL[rng.below(4)];
        let p = 0.9 * rng.uniform();
        let spec = AugmentationSpec::new(kind, p, rng.next_u64());
        let out = match apply(&h, &spec) {
            Ok(o) => o,
            Err(e) => {
                failures.push(format!("case {case}: {e}"));
                continue;
            }
        };
        let g = &out.hypergraph;
        let valid = Hypergraph::new(
            g.num_nodes(),
            g.edges().to_vec(),
            g.node_features().clone(),
            g.edge_features().cloned(),
            g.labels().map(<[usize]>::to_vec),
        )
        .is_ok();
        let ok = valid
            && match kind {
                AugmentationKind::PerturbHyperedges => g
                    .edges()
                    .iter()
                    .zip(h.edges())
                    .all(|(a, b)| a.iter().all(|v| b.contains(v))),
                AugmentationKind::DropNodes => g
                    .edges()
                    .iter()
                    .all(|e| e.iter().all(|&v| v < g.num_nodes())),
                AugmentationKind::MaskNodeAttrs => {
                    let changed = (0..h.num_nodes())
                        .filter(|&v| h.node_features().row(v) != g.node_features().row(v))
                        .count();
                    changed == selection_size(p, h.num_nodes())
                }
                AugmentationKind::DropHyperedges => true,
            };
        if !ok {
            failures.push(format!("case {case}: {kind:?} p={p:.3}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "1000 cases, {} failures {}",
            failures.len(),
            failures.first().map_or("", |s| s)
        ),
    )
}

fn contrastive_bounds() -> Outcome {
    let mut rng = Rng::new(5);
    let (mut out_of_range, mut identical_gap, mut scale_gap) = (0usize, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let d = 1 + rng.below(8);
        let k = 1 + rng.below(5);
        let vecs: Vec<(Vec<f64>, Vec<f64>)> = (0..k)
            .map(|_| {
                let v = |rng: &mut Rng| (0..d).map(|_| rng.normal()).collect::<Vec<_>>();
                (v(&mut rng), v(&mut rng))
            })
            .collect();
        let loss = |pairs: &[(Vec<f64>, Vec<f64>)]| {
            let mut tape = Tape::new();
            let vars: Vec<(Var, Var)> = pairs
                .iter()
                .map(|(a, b)| {
                    (
                        tape.constant(Tensor::row_vector(a.clone())),
                        tape.constant(Tensor::row_vector(b.clone())),
                    )
                })
                .collect();
            let l = contrastive_loss(&mut tape, &vars).unwrap();
            tape.scalar(l)
        };
        let l = loss(&vecs);
        if !(-1.0..=1.0).contains(&l) {
            out_of_range += 1;
        }
        let same: Vec<_> = vecs.iter().map(|(a, _)| (a.clone(), a.clone())).collect();
        identical_gap = identical_gap.max((loss(&same) + 1.0).abs());
        let mut scaled = vecs.clone();
        scaled[0].0.iter_mut().for_each(|x| *x *= 10.0);
        scale_gap = scale_gap.max((loss(&scaled) - l).abs());
    }
    outcome(
        out_of_range == 0 && identical_gap < 1e-12 && scale_gap < 1e-12,
        format!(
            "1000 sets, {out_of_range} out of range, identical-pair gap {identical_gap:.1e}, scale gap {scale_gap:.1e}"
        ),
    )
}

fn benchmark(mode: Mode, floor: f64, limit: Option<Duration>) -> Outcome {
    let h = generate_chsbm(&SyntheticSpec::default()).unwrap();
    let cfg = TrainConfig {
        mode,
        ..TrainConfig::default()
    };
    let seeds: Vec<u64> = (0..5).collect();
    let t = Instant::now();
    let report = run_experiment(&h, &cfg, &ProbeConfig::default(), &seeds, |_| Ok(()));
    let el = t.elapsed();
    let best = report.best_test().unwrap_or(f64::NAN);
    let tests: Vec<String> = report
        .per_seed
        .iter()
        .map(|r| format!("{:.4}", r.test))
        .collect();
    let in_time = limit.is_none_or(|l| el < l);
    outcome(
        best >= floor && best > 0.25 && in_time && report.failures.is_empty(),
        format!(
            "best-of-5 test {best:.4} (per seed {}), {:.0}s on {} thread(s), {} failed seeds",
            tests.join(" "),
            secs(el),
            worker_threads().min(seeds.len()),
            report.failures.len()
        ),
    )
}

fn label_blindness() -> Outcome {
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 60,
        edges_per_class: 30,
        feature_dim: 16,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };
    let a = train_ssl(&h, &cfg, None).unwrap();
    let b = train_ssl(&h.clone().without_labels(), &cfg, None).unwrap();
    let identical = a
        .model
        .store
        .iter()
        .zip(b.model.store.iter())
        .all(|(x, y)| {
            x.value.data().iter().map(|v| v.to_bits()).eq(y
                .value
                .data()
                .iter()
                .map(|v| v.to_bits()))
        });
    outcome(
        identical && a.model.store.checksum() == b.model.store.checksum(),
        format!("{} parameters compared bitwise", a.model.store.num_values()),
    )
}

fn checkpoint_round_trip() -> Outcome {
    let h = generate_chsbm(&SyntheticSpec {
        nodes_per_class: 40,
        edges_per_class: 20,
        feature_dim: 12,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let run = train_ssl(&h, &cfg, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bhg");
    run.model.save(&path).unwrap();
    let mut fresh = Model::for_hypergraph(
        &h.clone().ensure_edge_features(),
        &TrainConfig { seed: 99, ..cfg },
    )
    .unwrap();
    fresh.load(&path).unwrap();
    let total = run.model.store.len();
    let restored = run
        .model
        .store
        .iter()
        .zip(fresh.store.iter())
        .filter(|(a, b)| a.name == b.name && a.value == b.value)
        .count();
    let before = embed(&run.model, &h).unwrap();
    let after = embed(&fresh, &h).unwrap();
    let same = before
        .data()
        .iter()
        .map(|v| v.to_bits())
        .eq(after.data().iter().map(|v| v.to_bits()));
    outcome(
        restored == total && same,
        format!("{restored}/{total} parameters restored, embeddings bit-identical: {same}"),
    )
}

fn main() {
    let skip_bench = std::env::var("BHYGNN_SKIP_BENCHMARKS").is_ok_and(|v| v == "1");
    let mut hard_failures = 0;
    let mut report = |n: usize, name: &str, required: bool, o: Option<Outcome>| match o {
        Some(o) => {
            let tag = if o.pass { "PASS" } else { "FAIL" };
            println!("criterion {n:>2} {tag} {name}: {}", o.detail);
            if required && !o.pass {
                hard_failures += 1;
            }
        }
        None => println!("criterion {n:>2} SKIP {name}: BHYGNN_SKIP_BENCHMARKS=1"),
    };
    report(1, "dual involution", true, Some(dual_involution()));
    report(2, "synthetic homophily", true, Some(homophily()));
    report(3, "finite-difference gradients", true, Some(gradients()));
    report(4, "gumbel-softmax statistics", true, Some(gumbel()));
    report(5, "gaussian KL oracle", true, Some(kl_oracle()));
    report(6, "augmentation invariants", true, Some(augmentation()));
    report(
        7,
        "contrastive loss bounds",
        true,
        Some(contrastive_bounds()),
    );
    let ssl = (!skip_bench).then(|| benchmark(Mode::Ssl, 0.40, Some(Duration::from_secs(30 * 60))));
    report(8, "ssl probe benchmark (>= 0.40, < 30 min)", false, ssl);
    let sup = (!skip_bench).then(|| benchmark(Mode::Supervised, 0.45, None));
    report(9, "supervised benchmark (>= 0.45)", false, sup);
    report(10, "label blindness", true, Some(label_blindness()));
    report(
        11,
        "checkpoint round trip",
        true,
        Some(checkpoint_round_trip()),
    );
    if hard_failures > 0 {
        eprintln!("{hard_failures} required criteria failed");
        std::process::exit(1);
    }
}
