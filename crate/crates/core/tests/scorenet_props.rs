use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use scorewave::oracle::GmmPrior;
use scorewave::schedule::NoiseSchedule;
use scorewave::scorenet::{NetConfig, ScoreNet};
use scorewave::seed;
use scorewave::train::{
    batch_gradient, draw_batch, Adam, Example, OptimizerConfig, TrainConfig, Trainer,
};

fn randomized(config: NetConfig, s: u64) -> ScoreNet {
    let mut rng = seed::rng(s);
    let mut net = ScoreNet::new(config, &mut rng).unwrap();
    for p in net.params_mut() {
        *p = rng.random_range(-1.0..1.0);
    }
    net
}

fn example(net: &ScoreNet, rng: &mut seed::Rng) -> Example {
    let c = net.config();
    Example {
        x0: (0..c.x_dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        cond: (0..c.cond_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
        sigma: rng.random_range(5e-4f64.ln()..5f64.ln()).exp(),
        z: (0..c.x_dim).map(|_| StandardNormal.sample(rng)).collect(),
    }
}

fn small_config() -> impl Strategy<Value = NetConfig> {
    (
        1usize..=3,
        0usize..=2,
        prop::collection::vec(2usize..=6, 1..=3),
        2usize..=5,
        1usize..=4,
        0.3f64..2.0,
    )
        .prop_map(
            |(x_dim, cond_dim, hidden, embed_dim, n_pairs, data_std)| NetConfig {
                x_dim,
                cond_dim,
                hidden,
                embed_dim,
                n_pairs,
                data_std,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_matches_central_differences(config in small_config(), s in any::<u64>()) {
        prop_assume!(config.param_count() <= 500);
        let mut net = randomized(config, s);
        let ex = example(&net, &mut seed::rng(s ^ 1));
        let loss = |net: &ScoreNet| {
            let mut scratch = vec![0.0; net.n_params()];
            net.loss_and_grad(&ex.x0, &ex.cond, ex.sigma, &ex.z, &mut scratch).unwrap()
        };
        let mut grad = vec![0.0; net.n_params()];
        let l0 = net.loss_and_grad(&ex.x0, &ex.cond, ex.sigma, &ex.z, &mut grad).unwrap();
        let h = 1e-6;
        // Central differences carry roundoff of about eps |L| / h, so tiny
        // components are compared against a floor well above it.
        let floor = 1e-5 * l0.abs().max(1.0);
        for i in 0..net.n_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net);
            net.params_mut()[i] = orig - h;
            let down = loss(&net);
            net.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor);
            prop_assert!(rel < 1e-4, "param {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradient(config in small_config(), s in any::<u64>()) {
        let net = randomized(config, s);
        let ex = example(&net, &mut seed::rng(s));
        let fwd = net.forward(&ex.x0, &ex.cond, ex.sigma, true).unwrap();
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&fwd, &vec![0.0; ex.x0.len()], &mut grad).unwrap();
        prop_assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn update_is_invariant_to_batch_permutation(s in any::<u64>(), n in 2usize..40) {
        let net = randomized(NetConfig { hidden: vec![6, 6], embed_dim: 4, n_pairs: 3, ..Default::default() }, s);
        let mut rng = seed::rng(s);
        let batch: Vec<Example> = (0..n).map(|_| example(&net, &mut rng)).collect();
        let mut shuffled = batch.clone();
        shuffled.reverse();
        shuffled.rotate_left(n / 3);
        let (la, ga) = batch_gradient(&net, &batch).unwrap();
        let (lb, gb) = batch_gradient(&net, &shuffled).unwrap();
        prop_assert!((la - lb).abs() <= 1e-12 * la.abs().max(1.0));
        let scale = ga.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(1e-300);
        prop_assert!(ga.iter().zip(&gb).all(|(a, b)| (a - b).abs() <= 1e-12 * scale));

        let mask = net.decay_mask();
        let mut pa = net.params().to_vec();
        let mut pb = pa.clone();
        Adam::new(OptimizerConfig::default(), 10, pa.len()).unwrap().update(&mut pa, &ga, &mask);
        Adam::new(OptimizerConfig::default(), 10, pb.len()).unwrap().update(&mut pb, &gb, &mask);
        // Adam normalizes per coordinate, so compare against the step size.
        let lr = OptimizerConfig::default().learning_rate(0, 10);
        prop_assert!(pa.iter().zip(&pb).all(|(a, b)| (a - b).abs() <= 1e-6 * lr));
    }
}

#[test]
fn duplicated_example_gives_the_single_example_gradient() {
    let net = randomized(
        NetConfig {
            x_dim: 2,
            cond_dim: 1,
            hidden: vec![5, 4],
            embed_dim: 3,
            n_pairs: 2,
            data_std: 1.0,
        },
        4,
    );
    let ex = example(&net, &mut seed::rng(9));
    let (l1, g1) = batch_gradient(&net, std::slice::from_ref(&ex)).unwrap();
    let (l2, g2) = batch_gradient(&net, &[ex.clone(), ex]).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(g1, g2);
}

#[test]
fn wide_embedding_has_the_configured_width() {
    let net = ScoreNet::new(
        NetConfig {
            hidden: vec![8],
            embed_dim: 256,
            n_pairs: 32,
            ..Default::default()
        },
        &mut seed::rng(0),
    )
    .unwrap();
    assert_eq!(net.embedding().frequencies().len(), 32);
    for sigma in [5e-4, 0.05, 1.0, 5.0] {
        assert_eq!(net.sigma_embed(sigma).unwrap().len(), 256);
    }
}

/// Window-100 moving average of the loss trace at the 10% and 90% marks.
#[test]
fn smoothed_loss_falls_over_training() {
    let iterations = 3000;
    let net = ScoreNet::new(
        NetConfig {
            hidden: vec![32, 32, 32],
            embed_dim: 16,
            n_pairs: 16,
            ..Default::default()
        },
        &mut seed::rng(1),
    )
    .unwrap();
    let config = TrainConfig {
        iterations,
        batch_size: 64,
        optimizer: OptimizerConfig {
            peak_lr: 1e-3,
            start_lr: 8e-6,
            ..Default::default()
        },
    };
    let mut trainer = Trainer::new(net, NoiseSchedule::default(), config, 3).unwrap();
    let trace = trainer
        .run(&GmmPrior::two_mode_demo(), iterations, |_| {})
        .unwrap();
    let smooth = |end: usize| trace[end - 100..end].iter().sum::<f64>() / 100.0;
    let marks: Vec<f64> = (1..=9).map(|d| smooth(iterations * d / 10)).collect();
    assert!(marks[8] <= marks[0], "{marks:?}");
    assert!(trace.iter().all(|l| l.is_finite()));
}

#[test]
fn batches_depend_only_on_seed_and_iteration() {
    let prior = GmmPrior::two_mode_demo();
    let s = NoiseSchedule::default();
    let a = draw_batch(&prior, &s, 16, 8, 41).unwrap();
    let b = draw_batch(&prior, &s, 16, 8, 41).unwrap();
    let c = draw_batch(&prior, &s, 16, 8, 42).unwrap();
    assert!(a
        .iter()
        .zip(&b)
        .all(|(p, q)| p.x0 == q.x0 && p.sigma == q.sigma && p.z == q.z));
    assert!(a.iter().zip(&c).any(|(p, q)| p.sigma != q.sigma));
}
