//! Shared fixtures and a finite-difference checker for model tests.

use std::sync::Arc;

use crate::corpus::{build_vocab, Dataset, LabeledExample, Vocabulary};
use crate::params::{Grads, ParamStore};

pub(crate) fn toy_examples() -> Vec<LabeledExample> {
    vec![
        LabeledExample::from_strs("flights from boston to denver", "O O B-FromCity O B-ToCity", "find_flight"),
        LabeledExample::from_strs("show flights to new york", "O O O B-ToCity I-ToCity", "find_flight"),
        LabeledExample::from_strs("what is the fare to boston", "O O O O O B-ToCity", "fare"),
        LabeledExample::from_strs("fare from denver", "O O B-FromCity", "fare"),
    ]
}

pub(crate) fn toy_vocab() -> Arc<Vocabulary> {
    Arc::new(build_vocab(&Dataset::labeled_only(toy_examples()), 1))
}

/// Compares `analytic` gradients with central differences of `value` on up to
/// `per_param` evenly spaced scalars of every parameter. Returns the worst
/// relative error.
pub(crate) fn grad_check<M>(
    model: &mut M,
    store: fn(&mut M) -> &mut ParamStore,
    analytic: impl Fn(&M, &mut Grads),
    value: impl Fn(&M) -> f64,
    per_param: usize,
) -> f64 {
    let mut grads = Grads::zeros_like(store(model));
    analytic(model, &mut grads);
    let ids: Vec<_> = store(model).iter().map(|(id, name, t)| (id, name.to_string(), t.len())).collect();
    let mut worst = 0.0f64;
    for (id, name, n) in ids {
        let stride = (n / per_param).max(1);
        for k in (0..n).step_by(stride) {
            let h = 1e-5;
            let orig = *store(model).scalar_mut(id, k);
            *store(model).scalar_mut(id, k) = orig + h;
            let up = value(model);
            *store(model).scalar_mut(id, k) = orig - h;
            let down = value(model);
            *store(model).scalar_mut(id, k) = orig;
            let num = (up - down) / (2.0 * h);
            let ana = grads.get(id)[k];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-4);
            assert!(
                rel < 1e-4,
                "{name}[{k}]: analytic {ana:.9} vs numeric {num:.9} (rel {rel:.2e})"
            );
            worst = worst.max(rel);
        }
    }
    worst
}
