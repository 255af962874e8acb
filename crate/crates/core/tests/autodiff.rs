mod common;

use proptest::prelude::*;
use sdenet::autodiff::{Graph, ParamStore, Sgd, Tensor};

#[test]
fn random_graphs_match_central_differences() {
    for seed in 0..100 {
        let err = common::gradient_check(seed);
        assert!(err < 1e-5, "graph {seed}: relative error {err:e}");
    }
}

#[test]
fn shared_subexpression_accumulates() {
    // y = x * x + x, dy/dx = 2x + 1
    let mut g = Graph::new();
    let x = g.input_with_grad("x");
    let sq = g.mul(x, x);
    let y = g.add(sq, x);
    let loss = g.sum(y);
    let xv = Tensor::matrix(1, 3, vec![-1.0, 0.5, 2.0]).unwrap();
    g.forward(&ParamStore::new(), &[("x", &xv)]).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.input("x").unwrap().data(), &[-1.0, 2.0, 5.0]);
}

#[test]
fn frozen_param_gets_no_gradient() {
    let mut params = ParamStore::new();
    let w = params.add("w", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let mut g = Graph::new();
    let x = g.input("x");
    let wn = g.frozen_param(w);
    let y = g.matmul(x, wn);
    let loss = g.sum(y);
    let xv = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
    g.forward(&params, &[("x", &xv)]).unwrap();
    let grads = g.backward(loss).unwrap();
    assert!(grads.param(w).is_none());
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::new();
    let x = g.input_with_grad("x");
    let y = g.tanh(x);
    let xv = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
    g.forward(&ParamStore::new(), &[("x", &xv)]).unwrap();
    assert!(g.backward(y).is_err());
}

#[test]
fn sgd_descends_a_quadratic() {
    let mut params = ParamStore::new();
    let w = params.add("w", Tensor::matrix(1, 2, vec![3.0, -2.0]).unwrap());
    let mut opt = Sgd::new(0.1, 0.9, 0.0).unwrap();
    for _ in 0..200 {
        let mut g = Graph::new();
        let wn = g.param(w);
        let sq = g.mul(wn, wn);
        let loss = g.sum(sq);
        g.forward(&params, &[]).unwrap();
        let grads = g.backward(loss).unwrap();
        opt.step(&mut params, &grads, &[w]).unwrap();
    }
    assert!(params.get(w).data().iter().all(|v| v.abs() < 1e-3));
}

#[test]
fn clipping_bounds_the_first_step() {
    let mut params = ParamStore::new();
    let w = params.add("w", Tensor::matrix(1, 2, vec![30.0, 40.0]).unwrap());
    let mut opt = Sgd::new(1.0, 0.0, 0.0).unwrap().with_max_grad_norm(Some(1.0)).unwrap();
    let mut g = Graph::new();
    let wn = g.param(w);
    let sq = g.mul(wn, wn);
    let loss = g.sum(sq);
    g.forward(&params, &[]).unwrap();
    let grads = g.backward(loss).unwrap();
    opt.step(&mut params, &grads, &[w]).unwrap();
    let moved = params.get(w).data();
    let norm = ((moved[0] - 30.0).powi(2) + (moved[1] - 40.0).powi(2)).sqrt();
    assert!((norm - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_for_any_seed(seed in any::<u64>()) {
        let err = common::gradient_check(seed);
        prop_assert!(err < 1e-5, "relative error {}", err);
    }

    #[test]
    fn softmax_rows_sum_to_one(data in prop::collection::vec(-50.0f64..50.0, 6)) {
        let mut g = Graph::new();
        let x = g.input("x");
        let p = g.softmax(x);
        let xv = Tensor::matrix(2, 3, data).unwrap();
        g.forward(&ParamStore::new(), &[("x", &xv)]).unwrap();
        let pv = g.value(p).unwrap();
        for i in 0..2 {
            prop_assert!((pv.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
