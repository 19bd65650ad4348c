//! Gradient correctness, Laplace-vs-quadrature agreement, capacity, and
//! temperature scaling of the Bayesian network head.

mod common;

use banditlp::bayes::{
    fit_laplace, sigmoid, train_map, Activation, Head, Mlp, MlpSpec, TrainSchedule,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(input_dim: usize, hidden: Vec<usize>, head: Head) -> MlpSpec {
    MlpSpec {
        input_dim,
        hidden_layer_sizes: hidden,
        activation: Activation::Tanh,
        head,
        prior_variance: 1.0,
        noise_variance: 0.1,
        output_bias: true,
    }
}

/// The logistic line fixture: one weight, no bias, strong prior, so the
/// latent is exactly w*z and the exact posterior over w is a 1-D integral.
fn line_fixture() -> (Vec<(Vec<f64>, f64)>, MlpSpec) {
    let data: Vec<(Vec<f64>, f64)> = (0..20)
        .map(|i| {
            let z = (i as f64 - 9.5) / 4.75;
            (vec![z], f64::from(z > 0.0))
        })
        .collect();
    let spec = MlpSpec {
        input_dim: 1,
        hidden_layer_sizes: vec![],
        activation: Activation::Tanh,
        head: Head::Binary,
        prior_variance: 0.05,
        noise_variance: 0.1,
        output_bias: false,
    };
    (data, spec)
}

#[test]
fn finite_differences_confirm_the_analytic_gradient_for_both_heads() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for head in [Head::Binary, Head::Gaussian] {
        let spec = spec(3, vec![4, 3], head);
        let mut model = Mlp::init(spec, 11).unwrap();
        let data: Vec<(Vec<f64>, f64)> = (0..12)
            .map(|_| {
                let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
                let y = match head {
                    Head::Binary => f64::from(rng.random::<f64>() < 0.5),
                    Head::Gaussian => rng.random_range(-2.0..2.0),
                };
                (z, y)
            })
            .collect();

        let (loss, grad) = model.loss_and_grad(&data, data.len());
        assert!(
            (loss - model.loss(&data)).abs() < 1e-12,
            "full-batch loss_and_grad disagrees with loss for {head:?}"
        );

        let theta = model.params();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            plus[k] += h;
            model.set_params(&plus);
            let lp = model.loss(&data);
            let mut minus = theta.clone();
            minus[k] -= h;
            model.set_params(&minus);
            let lm = model.loss(&data);
            model.set_params(&theta);
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-4 * fd.abs().max(1e-3);
            assert!(
                (grad[k] - fd).abs() <= tol,
                "{head:?} param {k}: analytic {} vs central difference {fd}",
                grad[k]
            );
        }
    }
}

#[test]
fn laplace_variance_tracks_exact_quadrature_on_the_logistic_line() {
    let (data, spec) = line_fixture();
    let schedule = TrainSchedule {
        epochs: 1500,
        batch_size: 32,
        learning_rate: 0.2,
        seed: 5,
    };
    let (model, _) = train_map(spec, &data, &schedule).unwrap();
    let state = fit_laplace(&model, &data, 1.0).unwrap();

    let pairs: Vec<(f64, f64)> = data.iter().map(|(z, y)| (z[0], *y)).collect();
    let (_, var_w) = common::quadrature_weight_posterior(&pairs, 0.05);

    let z_star = 4.0;
    let lla = state.predictive_variance(&[z_star]);
    let exact = z_star * z_star * var_w;
    let rel = (lla - exact).abs() / exact;
    assert!(
        rel <= 0.25,
        "latent variance at z*={z_star}: laplace {lla} vs quadrature {exact} (rel {rel})"
    );
}

#[test]
fn variance_grows_far_from_the_data() {
    let (data, spec) = line_fixture();
    let schedule = TrainSchedule {
        epochs: 1500,
        batch_size: 32,
        learning_rate: 0.2,
        seed: 5,
    };
    let (model, _) = train_map(spec, &data, &schedule).unwrap();
    let state = fit_laplace(&model, &data, 1.0).unwrap();

    // Data lives in [-2, 2]; 10x the radius is far extrapolation.
    let near = state.predictive_variance(&[0.5]);
    let far = state.predictive_variance(&[20.0]);
    assert!(
        far > 4.0 * near,
        "far-query variance {far} should dwarf near-query variance {near}"
    );
}

#[test]
fn hidden_layers_separate_xor_where_a_linear_model_cannot() {
    let data: Vec<(Vec<f64>, f64)> = vec![
        (vec![0.0, 0.0], 0.0),
        (vec![0.0, 1.0], 1.0),
        (vec![1.0, 0.0], 1.0),
        (vec![1.0, 1.0], 0.0),
    ];
    let schedule = TrainSchedule {
        epochs: 4000,
        batch_size: 4,
        learning_rate: 0.4,
        seed: 3,
    };

    let wide = MlpSpec {
        prior_variance: 25.0,
        ..spec(2, vec![8], Head::Binary)
    };
    let (hidden_model, _) = train_map(wide, &data, &schedule).unwrap();
    let hidden_correct = data
        .iter()
        .filter(|(z, y)| (hidden_model.predict(z) > 0.5) == (*y > 0.5))
        .count();
    assert_eq!(hidden_correct, 4, "one hidden layer should memorize xor");

    let linear = MlpSpec {
        prior_variance: 25.0,
        ..spec(2, vec![], Head::Binary)
    };
    let (linear_model, _) = train_map(linear, &data, &schedule).unwrap();
    let linear_correct = data
        .iter()
        .filter(|(z, y)| (linear_model.predict(z) > 0.5) == (*y > 0.5))
        .count();
    assert!(
        linear_correct < 4,
        "a linear score cannot classify all four xor points"
    );
}

#[test]
fn draw_variance_scales_linearly_with_temperature() {
    let (data, spec) = line_fixture();
    let schedule = TrainSchedule {
        epochs: 1500,
        batch_size: 32,
        learning_rate: 0.2,
        seed: 5,
    };
    let (model, _) = train_map(spec, &data, &schedule).unwrap();
    let state = fit_laplace(&model, &data, 1.0).unwrap();
    let z_star = [2.0];
    let v = state.predictive_variance(&z_star);

    for tau in [0.5, 1.0, 2.0] {
        let tempered = state.with_temperature(tau).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9_000 + (tau * 10.0) as u64);
        let draws: Vec<f64> = (0..4000)
            .map(|_| tempered.predictive_sample(&z_star, &mut rng).sampled_value)
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        let expected = tau * v;
        assert!(
            (var - expected).abs() <= 0.12 * expected,
            "tau {tau}: empirical draw variance {var} vs tau*V {expected}"
        );
    }

    let frozen = state.with_temperature(0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10 {
        let d = frozen.predictive_sample(&z_star, &mut rng);
        assert_eq!(d.sampled_value, d.mean, "zero temperature must not sample");
        assert_eq!(d.output, sigmoid(d.sampled_value));
    }
}
