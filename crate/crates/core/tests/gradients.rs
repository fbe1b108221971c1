mod common;

use common::{grad_check, small_config, toy, toy_model, Term, FD_REL_TOL};

fn check(term: Term) {
    let h = toy();
    let cfg = small_config();
    let model = toy_model(&h, &cfg);
    let r = grad_check(term, &model, &h, &cfg);
    assert!(r.nonzero > 0, "{term:?}: every gradient is zero");
    assert_eq!(
        r.failures, 0,
        "{term:?}: worst relative error {:e} at {}",
        r.worst, r.worst_name
    );
    assert!(r.worst <= FD_REL_TOL);
}

#[test]
fn cross_entropy_gradient() {
    check(Term::CrossEntropy);
}

#[test]
fn vlb_gradient() {
    check(Term::Vlb);
}

#[test]
fn reg_gradient() {
    check(Term::Reg);
}

#[test]
fn contrastive_gradient() {
    check(Term::Contrastive);
}

#[test]
fn supervised_objective_gradient() {
    check(Term::Supervised);
}

#[test]
fn self_supervised_objective_gradient() {
    check(Term::SelfSupervised);
}
