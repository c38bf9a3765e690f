//! Independent oracles shared by the integration suites: a central
//! finite-difference gradient checker and a bag-of-words linear probe.

use ndarray::Array2;
use nrfe::autodiff::{Tape, Var};
use nrfe::dataio::{BinaryLabel, NewsItem};

/// Check analytic gradients of `f` with respect to every entry of every
/// input against central finite differences. `f` must be a pure function
/// of the leafed inputs returning a scalar loss Var.
pub fn grad_check<F>(inputs: &[Array2<f64>], f: F, tol: f64)
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |mats: &[Array2<f64>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
        let loss = f(&mut tape, &vars);
        tape.scalar(loss)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = f(&mut tape, &vars);
    let grads = tape.backward(loss);

    let h = 1e-6;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = &grads[vars[k].0];
        for i in 0..input.nrows() {
            for j in 0..input.ncols() {
                let mut plus = inputs.to_vec();
                plus[k][(i, j)] += h;
                let mut minus = inputs.to_vec();
                minus[k][(i, j)] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic[(i, j)];
                let rel = (a - fd).abs() / f64::max(1.0, f64::max(a.abs(), fd.abs()));
                assert!(
                    rel < tol,
                    "input {k} entry ({i},{j}): analytic {a} vs finite-difference {fd} (rel {rel})"
                );
            }
        }
    }
}

/// Train accuracy of an averaged perceptron over bag-of-words counts; a
/// model-free check that a corpus is linearly separable.
pub fn linear_probe_accuracy(items: &[NewsItem]) -> f64 {
    use std::collections::BTreeMap;
    let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
    for item in items {
        for tok in item.text.split_whitespace() {
            let next = vocab.len();
            vocab.entry(tok).or_insert(next);
        }
    }
    let dim = vocab.len() + 1; // plus bias
    let feats: Vec<Vec<f64>> = items
        .iter()
        .map(|item| {
            let mut x = vec![0.0; dim];
            x[dim - 1] = 1.0;
            for tok in item.text.split_whitespace() {
                x[vocab[tok]] += 1.0;
            }
            x
        })
        .collect();
    let ys: Vec<f64> = items
        .iter()
        .map(|i| match i.label {
            BinaryLabel::Real => 1.0,
            BinaryLabel::Fake => -1.0,
        })
        .collect();

    let mut w = vec![0.0; dim];
    let mut avg = vec![0.0; dim];
    for _ in 0..50 {
        for (x, &y) in feats.iter().zip(&ys) {
            let score: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
            if score * y <= 0.0 {
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += y * xi;
                }
            }
            for (ai, wi) in avg.iter_mut().zip(&w) {
                *ai += wi;
            }
        }
    }
    let correct = feats
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| {
            let score: f64 = avg.iter().zip(*x).map(|(wi, xi)| wi * xi).sum();
            score * y > 0.0
        })
        .count();
    correct as f64 / items.len() as f64
}
