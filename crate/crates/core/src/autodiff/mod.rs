//! Dense-tensor reverse-mode differentiation and momentum SGD.

mod graph;
mod optim;
mod params;
mod tensor;

pub use graph::{
    log_sum_exp, sigmoid, softmax_row, softplus, Gradients, Graph, NodeId, SIGMOID_CLAMP,
};
pub use optim::Sgd;
pub use params::{Checkpoint, CheckpointEntry, ParamId, ParamStore, CHECKPOINT_FORMAT_VERSION};
pub use tensor::Tensor;

use rand::Rng;

/// Activation that follows a dense layer; decides the init scheme.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

/// Weight matrix `[fan_in, fan_out]` drawn uniformly: Kaiming bound `sqrt(6 / fan_in)`
/// ahead of ReLU, Xavier bound `sqrt(6 / (fan_in + fan_out))` otherwise.
pub fn init_weight<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, next: Activation) -> Tensor {
    let bound = match next {
        Activation::Relu => (6.0 / fan_in as f64).sqrt(),
        _ => (6.0 / (fan_in + fan_out) as f64).sqrt(),
    };
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("shape matches data length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_input(v: &[f64]) -> Tensor {
        Tensor::new(vec![1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn relu_sigmoid_values() {
        let mut g = Graph::new();
        let x = g.input("x");
        let r = g.relu(x);
        let s = g.sigmoid(x);
        g.forward(&ParamStore::new(), &[("x", &scalar_input(&[-1.0, 0.0, 2.0]))]).unwrap();
        assert_eq!(g.value(r).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(g.value(s).unwrap().data()[1], 0.5);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln3() {
        let mut g = Graph::new();
        let z = g.input("z");
        let y = g.input("y");
        let ce = g.softmax_cross_entropy(z, y);
        g.forward(
            &ParamStore::new(),
            &[("z", &scalar_input(&[0.0, 0.0, 0.0])), ("y", &Tensor::column(vec![1.0]))],
        )
        .unwrap();
        assert!((g.value(ce).unwrap().item() - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::scalar(3.0));
        let mut g = Graph::new();
        let x = g.param(id);
        let sq = g.mul(x, x);
        g.forward(&store, &[]).unwrap();
        let grads = g.backward(sq).unwrap();
        assert_eq!(grads.param(id).unwrap().item(), 6.0);
    }

    #[test]
    fn fan_out_gradients_add() {
        // loss = sum(W1 x) + sum(W2 x): dx = colsum(W1) + colsum(W2)
        let mut store = ParamStore::new();
        let w1 = store.add("w1", Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w2 = store.add("w2", Tensor::matrix(2, 2, vec![-1.0, 0.5, 0.25, 2.0]).unwrap());
        let mut g = Graph::new();
        let x = g.input_with_grad("x");
        let a = g.frozen_param(w1);
        let b = g.frozen_param(w2);
        let xa = g.matmul(x, a);
        let xb = g.matmul(x, b);
        let sa = g.sum(xa);
        let sb = g.sum(xb);
        let loss = g.add(sa, sb);
        g.forward(&store, &[("x", &scalar_input(&[0.3, -0.7]))]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.input("x").unwrap().data(), &[3.0 + -0.5, 7.0 + 2.25]);
        assert!(grads.param(w1).is_none());
    }

    #[test]
    fn backward_before_forward_is_state_error() {
        let mut g = Graph::new();
        let x = g.input_with_grad("x");
        let s = g.sum(x);
        assert!(matches!(g.backward(s), Err(crate::Error::State(_))));
    }

    #[test]
    fn shape_mismatch_names_the_op() {
        let mut g = Graph::new();
        let a = g.input("a");
        let b = g.input("b");
        let c = g.matmul(a, b);
        let _ = c;
        let err = g
            .forward(
                &ParamStore::new(),
                &[("a", &Tensor::zeros(&[2, 3])), ("b", &Tensor::zeros(&[2, 3]))],
            )
            .unwrap_err();
        match err {
            crate::Error::Shape { op, detail } => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("[2, 3]"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_forward_is_numeric_error() {
        let mut g = Graph::new();
        let a = g.input("a");
        let _ = g.scale(a, f64::INFINITY);
        let err = g.forward(&ParamStore::new(), &[("a", &Tensor::full(&[1, 1], 1.0))]);
        assert!(matches!(err, Err(crate::Error::Numeric { .. })));
    }

    #[test]
    fn kaiming_and_xavier_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = init_weight(&mut rng, 6, 4, Activation::Relu);
        assert!(w.data().iter().all(|v| v.abs() < 1.0));
        let w = init_weight(&mut rng, 6, 4, Activation::Sigmoid);
        let bound = (6.0f64 / 10.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() < bound));
        assert_eq!(w.shape(), &[6, 4]);
    }
}
