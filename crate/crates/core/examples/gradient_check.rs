//! Compares reverse-mode gradients of a set-attention pooling objective
//! against central finite differences.

use bhygnn::nn::{ParamStore, SetAttention, Tape, Tensor};
use bhygnn::Rng;

fn objective(
    att: &SetAttention,
    store: &ParamStore,
    x: &Tensor,
    target: &Tensor,
) -> (Tape, bhygnn::nn::Var) {
    let mut tape = Tape::new();
    let xs = tape.constant(x.clone());
    let t = tape.constant(target.clone());
    let pooled = att.forward_set(&mut tape, store, xs).expect("pool");
    let c = tape.cosine(pooled, t);
    (tape, c)
}

fn main() {
    let mut rng = Rng::new(3);
    let mut store = ParamStore::new();
    let att = SetAttention::new(&mut store, "att", 5, 2, 3, &mut rng);
    for p in store.iter_mut() {
        p.value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v += 0.1 * rng.normal());
    }
    let x = Tensor::from_vec(4, 5, (0..20).map(|_| rng.normal()).collect()).unwrap();
    let target = Tensor::from_vec(1, 6, (0..6).map(|_| rng.normal()).collect()).unwrap();

    let (tape, loss) = objective(&att, &store, &x, &target);
    tape.backward(loss).accumulate(&tape, &mut store);
    println!("loss {:.6}", tape.scalar(loss));

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    for name in names {
        let id = store.find(&name).unwrap();
        for i in 0..store.value(id).len() {
            let analytic = store.get(id).grad.data()[i];
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + step;
            let up = {
                let (t, l) = objective(&att, &store, &x, &target);
                t.scalar(l)
            };
            store.value_mut(id).data_mut()[i] = orig - step;
            let down = {
                let (t, l) = objective(&att, &store, &x, &target);
                t.scalar(l)
            };
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max(rel);
        }
        println!("{name:<28} checked");
    }
    println!(
        "worst relative error {worst:.2e} over {} values",
        store.num_values()
    );
}
