mod common;

use proptest::prelude::*;
use sdenet::model::{ModelConfig, PathOptions, SdeNet, TaskOutput};
use sdenet::uncertainty::{self, ScoreMode};
use sdenet::Task;

fn opts(paths: usize, sigma_max: f64) -> PathOptions {
    PathOptions {
        paths,
        seed: 5,
        sigma_max,
        first_input: 0,
    }
}

#[test]
fn zero_diffusion_degenerates_to_residual_net() {
    for seed in 0..5 {
        let c = common::zero_diffusion_check(seed);
        assert!(c.matches_residual, "seed {seed}");
        assert!(c.paths_identical, "seed {seed}");
        assert!(c.epistemic_zero, "seed {seed}");
    }
}

#[test]
fn diffusion_makes_paths_differ() {
    let model = SdeNet::new(ModelConfig::classification(3, 2), 1).unwrap();
    let x = common::random_inputs(4, 3, 2, 1.0);
    let s = model.forward_paths(&x, opts(5, 1.0)).unwrap();
    assert!(s[0][0].final_state != s[0][1].final_state);
    assert!(uncertainty::epistemic_score(&s[0], model.task()).unwrap() > 0.0);
}

#[test]
fn forward_paths_is_reproducible() {
    let model = SdeNet::new(ModelConfig::regression(1), 3).unwrap();
    let x = common::random_inputs(6, 1, 4, 3.0);
    assert_eq!(model.forward_paths(&x, opts(4, 0.5)).unwrap(), model.forward_paths(&x, opts(4, 0.5)).unwrap());
}

#[test]
fn row_streams_do_not_depend_on_batch() {
    // Row i is keyed by first_input + i, so scoring a row alone matches scoring it in a batch.
    let model = SdeNet::new(ModelConfig::classification(2, 3), 9).unwrap();
    let x = common::random_inputs(5, 2, 1, 1.0);
    let all = model.forward_paths(&x, opts(3, 1.0)).unwrap();
    let row = x.select_rows(&[3]);
    let one = model
        .forward_paths(&row, PathOptions { first_input: 3, ..opts(3, 1.0) })
        .unwrap();
    assert_eq!(all[3], one[0]);
}

#[test]
fn regression_sigma_is_positive() {
    let model = SdeNet::new(ModelConfig::regression(1), 0).unwrap();
    let x = common::random_inputs(8, 1, 0, 5.0);
    for paths in model.forward_paths(&x, opts(3, 0.5)).unwrap() {
        for p in paths {
            match p.output {
                TaskOutput::Gaussian { sigma, .. } => assert!(sigma > 0.0),
                _ => panic!("regression model produced class probabilities"),
            }
        }
    }
}

#[test]
fn checkpoint_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let model = SdeNet::new(ModelConfig::classification(2, 2), 4).unwrap();
    let (ck, side) = (dir.path().join("m.json"), dir.path().join("m.config.json"));
    model.save(&ck, &side).unwrap();
    let back = SdeNet::load(&ck, &side).unwrap();
    let x = common::random_inputs(3, 2, 0, 1.0);
    assert_eq!(model.forward_paths(&x, opts(2, 1.0)).unwrap(), back.forward_paths(&x, opts(2, 1.0)).unwrap());
}

#[test]
fn max_prob_of_uniform_paths() {
    let model = SdeNet::new(ModelConfig::classification(2, 4), 0).unwrap();
    let x = common::random_inputs(3, 2, 0, 1.0);
    for s in uncertainty::score_batch(&model, &x, opts(3, 1.0), ScoreMode::MaxProb).unwrap() {
        assert!((0.25..=1.0).contains(&s));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn diffusion_stays_inside_bound(seed in 0u64..1000, scale in 0.1f64..100.0, bound in 0.01f64..20.0) {
        let model = SdeNet::new(ModelConfig::classification(3, 2), seed).unwrap();
        let x = common::random_inputs(6, 3, seed, scale);
        for g in model.diffusion_values(&x, bound).unwrap() {
            prop_assert!(g > 0.0 && g < bound, "g = {} bound = {}", g, bound);
        }
    }

    #[test]
    fn probabilities_sum_to_one(seed in 0u64..1000) {
        let model = SdeNet::new(ModelConfig::classification(2, 3), seed).unwrap();
        let x = common::random_inputs(2, 2, seed, 3.0);
        for paths in model.forward_paths(&x, opts(2, 1.0)).unwrap() {
            let r = uncertainty::report(&paths, Task::Classification { classes: 3 }).unwrap();
            let p = r.max_prob.unwrap();
            prop_assert!(p > 0.0 && p <= 1.0);
            prop_assert!(r.aleatoric >= 0.0 && r.aleatoric <= 3f64.ln() + 1e-12);
        }
    }
}

#[test]
fn larger_test_bound_raises_epistemic() {
    for seed in 0..3 {
        let model = SdeNet::new(ModelConfig::classification(3, 3), seed).unwrap();
        let x = common::random_inputs(20, 3, seed, 1.0);
        let mean_epistemic = |sigma: f64| {
            let s = uncertainty::score_batch(&model, &x, opts(10, sigma), ScoreMode::Epistemic).unwrap();
            s.iter().sum::<f64>() / s.len() as f64
        };
        let e: Vec<f64> = [0.5, 1.0, 2.0, 4.0].map(mean_epistemic).to_vec();
        assert!(e.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {e:?}");
    }
}

#[test]
fn scores_follow_input_permutation() {
    let model = SdeNet::new(ModelConfig::classification(2, 2), 8).unwrap();
    let x = common::random_inputs(6, 2, 3, 1.0);
    let order = [4, 2, 0, 5, 1, 3];
    let base = model.forward_paths(&x, opts(4, 1.0)).unwrap();
    for (i, &j) in order.iter().enumerate() {
        let row = x.select_rows(&[j]);
        let one = model
            .forward_paths(&row, PathOptions { first_input: j as u64, ..opts(4, 1.0) })
            .unwrap();
        assert_eq!(one[0], base[j], "row {i}");
    }
}
