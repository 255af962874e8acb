mod common;

use common::{brownian_law, IncrementStats};
use sdenet::autodiff::{Graph, ParamStore, Tensor};
use sdenet::solver::{euler_maruyama_update, SolverConfig};

#[test]
fn pure_diffusion_has_variance_sigma_squared() {
    for sigma in [0.5, 1.0, 2.0] {
        for steps in [4, 6, 100] {
            let (check, z) = brownian_law(sigma, steps, 10_000, 11);
            assert!(check.within(3.0), "sigma {sigma} N {steps}: var {} se {}", check.var, check.std_err);
            let stats = IncrementStats::of(&z);
            assert!(
                stats.within_bounds(),
                "N {steps}: mean {} var {} lag1 {}",
                stats.mean,
                stats.var,
                stats.lag1
            );
        }
    }
}

#[test]
fn zero_diffusion_is_explicit_euler() {
    let solver = SolverConfig::new(2.0, 8).unwrap();
    let mut g = Graph::new();
    let x0 = g.input("x0");
    let z = g.input("z");
    let mut x = x0;
    for _ in 0..solver.steps {
        // dx/dt = -x
        let drift = g.scale(x, -1.0);
        x = euler_maruyama_update(&mut g, x, drift, None, z, solver.dt());
    }
    let x0v = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let zv = Tensor::matrix(1, 1, vec![123.0]).unwrap();
    g.forward(&ParamStore::new(), &[("x0", &x0v), ("z", &zv)]).unwrap();
    let expected = (1.0 - solver.dt()).powi(solver.steps as i32);
    assert_eq!(g.value(x).unwrap().item(), expected);
}

#[test]
fn gradient_through_shock_matches_differences() {
    // d/dg of sum(x + g * sqrt(dt) * z) is sqrt(dt) * sum(z).
    let dt: f64 = 0.25;
    let build = || {
        let mut g = Graph::new();
        let x = g.input("x");
        let gc = g.input_with_grad("g");
        let z = g.input("z");
        let drift = g.scale(x, 0.0);
        let next = euler_maruyama_update(&mut g, x, drift, Some(gc), z, dt);
        let sq = g.mul(next, next);
        let loss = g.sum(sq);
        (g, loss)
    };
    let xv = Tensor::matrix(2, 2, vec![0.3, -0.1, 0.7, 0.2]).unwrap();
    let zv = Tensor::matrix(2, 2, vec![1.1, -0.4, 0.25, 2.0]).unwrap();
    let gv = Tensor::column(vec![0.8, 1.3]);
    let (mut g, loss) = build();
    g.forward(&ParamStore::new(), &[("x", &xv), ("g", &gv), ("z", &zv)]).unwrap();
    let analytic = g.backward(loss).unwrap().input("g").unwrap().clone();
    let h = 1e-6;
    for i in 0..2 {
        let mut up = gv.clone();
        up.data_mut()[i] += h;
        let mut down = gv.clone();
        down.data_mut()[i] -= h;
        g.forward(&ParamStore::new(), &[("x", &xv), ("g", &up), ("z", &zv)]).unwrap();
        let fu = g.value(loss).unwrap().item();
        g.forward(&ParamStore::new(), &[("x", &xv), ("g", &down), ("z", &zv)]).unwrap();
        let fd = (fu - g.value(loss).unwrap().item()) / (2.0 * h);
        assert!(common::rel_err(analytic.data()[i], fd) < 1e-4);
    }
}
