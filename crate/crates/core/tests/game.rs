use admin_lab::apps::{ClassifierHead, CrossEntropyHook};
use admin_lab::diff::{Activation, Matrix, Mlp, OptimizerConfig};
use admin_lab::game::{
    admin_train, task_only_train, AdminConfig, Batch, Distance, Formulation, NoTask, PredictorBank,
    PredictorSpec,
};
use admin_lab::synth::Rng;
use admin_lab::Error;

/// Three Gaussian blobs in 6 dimensions with labels.
fn blobs(n: usize, rng: &mut Rng) -> admin_lab::Result<Batch> {
    let mut x = Matrix::zeros(n, 6);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = rng.index(3);
        for j in 0..6 {
            let center = if j % 3 == c { 2.0 } else { 0.0 };
            x[(i, j)] = center + rng.normal();
        }
        labels.push(c);
    }
    Ok(Batch {
        views: vec![x],
        labels: Some(labels),
    })
}

fn gaussian(n: usize, rng: &mut Rng) -> admin_lab::Result<Batch> {
    Ok(Batch::single(Matrix::from_vec(
        n,
        4,
        (0..n * 4).map(|_| rng.normal()).collect(),
    )?))
}

fn encoder(input: usize, d: usize) -> Mlp {
    Mlp::init(
        &[input, 16, d],
        Activation::Relu,
        Activation::Identity,
        &mut Rng::new(7, 2),
    )
    .unwrap()
}

fn bank(d: usize) -> PredictorBank {
    PredictorBank::new(d, PredictorSpec::two_layer(), &mut Rng::new(7, 3)).unwrap()
}

fn game(lambda: f64) -> AdminConfig {
    AdminConfig {
        formulation: Formulation::Margin,
        distance: Distance::L1,
        margin: 0.4,
        lambda,
        steps: 60,
        batch_size: 64,
        seed: 5,
        predictor: PredictorSpec::two_layer(),
        encoder_opt: OptimizerConfig::adam(1e-2),
        predictor_opt: OptimizerConfig::adam(1e-2),
        monitor_size: 128,
        ..AdminConfig::default()
    }
}

fn ce_hook(d: usize) -> CrossEntropyHook {
    CrossEntropyHook::new(
        ClassifierHead::init(d, 3, &mut Rng::new(7, 8)),
        OptimizerConfig::adam(1e-2),
    )
}

#[test]
fn zero_lambda_matches_task_only_training_bit_for_bit() {
    let cfg = game(0.0);
    let mut with_game = encoder(6, 4);
    let mut hook_a = ce_hook(4);
    admin_train(&mut with_game, &mut bank(4), &blobs, &mut hook_a, &cfg).unwrap();

    let mut alone = encoder(6, 4);
    let mut hook_b = ce_hook(4);
    task_only_train(&mut alone, &blobs, &mut hook_b, &cfg).unwrap();

    assert_eq!(with_game.params(), alone.params());
    assert_eq!(hook_a.head, hook_b.head);
}

#[test]
fn adversarial_term_changes_the_encoder() {
    let mut a = encoder(6, 4);
    admin_train(&mut a, &mut bank(4), &blobs, &mut ce_hook(4), &game(0.0)).unwrap();
    let mut b = encoder(6, 4);
    admin_train(&mut b, &mut bank(4), &blobs, &mut ce_hook(4), &game(5.0)).unwrap();
    assert_ne!(a.params(), b.params());
}

#[test]
fn same_seed_same_log() {
    let run = || {
        let mut enc = encoder(6, 4);
        let log = admin_train(&mut enc, &mut bank(4), &blobs, &mut ce_hook(4), &game(5.0)).unwrap();
        serde_json::to_string(&log).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn log_has_one_record_per_step_and_end_probes() {
    let cfg = AdminConfig {
        dcorr_every: 20,
        ..game(1.0)
    };
    let mut enc = encoder(6, 4);
    let log = admin_train(&mut enc, &mut bank(4), &blobs, &mut ce_hook(4), &cfg).unwrap();
    assert_eq!(log.steps.len(), 60);
    assert!(log.steps.iter().enumerate().all(|(i, r)| r.step == i + 1));
    let probed: Vec<usize> = log.probes.iter().map(|p| p.step).collect();
    assert_eq!(probed, vec![0, 20, 40, 60]);
    assert!(log.summary.is_some());
    assert!(!log.diverged());
}

#[test]
fn predictors_cannot_beat_unit_error_on_independent_coordinates() {
    // frozen identity encoder on independent Gaussians
    let mut enc = Mlp::new(vec![admin_lab::diff::DenseLayer::new(
        Matrix::identity(4),
        vec![0.0; 4],
        Activation::Identity,
    )
    .unwrap()])
    .unwrap();
    let cfg = AdminConfig {
        formulation: Formulation::Standardized,
        steps: 300,
        batch_size: 256,
        encoder_opt: OptimizerConfig::sgd(0.0, 0.0),
        predictor_opt: OptimizerConfig::adam(1e-2),
        predictor: PredictorSpec::two_layer(),
        ..AdminConfig::default()
    };
    let log = admin_train(&mut enc, &mut bank(4), &gaussian, &mut NoTask, &cfg).unwrap();
    let tail = log.steps[200..]
        .iter()
        .map(|r| r.predictor_loss)
        .sum::<f64>()
        / 100.0;
    assert!(tail > 0.9, "{tail}");
    assert_eq!(
        enc.params(),
        Matrix::identity(4)
            .data()
            .iter()
            .copied()
            .chain([0.0; 4])
            .collect::<Vec<_>>()
    );
}

#[test]
fn non_finite_input_stops_with_a_divergence_record() {
    let poisoned = |n: usize, rng: &mut Rng| -> admin_lab::Result<Batch> {
        let mut b = gaussian(n, rng)?;
        b.views[0][(0, 0)] = f64::NAN;
        Ok(b)
    };
    // the monitor batch is drawn first and must stay finite
    let source = |n: usize, rng: &mut Rng| {
        if n == 32 {
            gaussian(n, rng)
        } else {
            poisoned(n, rng)
        }
    };
    let cfg = AdminConfig {
        steps: 10,
        batch_size: 16,
        monitor_size: 32,
        ..AdminConfig::default()
    };
    let mut enc = encoder(4, 3);
    let log = admin_train(&mut enc, &mut bank(3), &source, &mut NoTask, &cfg).unwrap();
    assert!(log.diverged());
    assert_eq!(log.divergence.as_ref().unwrap().step, 1);
    assert!(log.steps.is_empty());
    assert!(log.clone().into_result().is_err());
}

#[test]
fn bank_width_must_match_encoder() {
    let mut enc = encoder(6, 4);
    let err = admin_train(&mut enc, &mut bank(3), &blobs, &mut NoTask, &game(1.0)).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn margin_game_needs_a_positive_margin() {
    let cfg = AdminConfig {
        margin: 0.0,
        ..game(1.0)
    };
    let mut enc = encoder(6, 4);
    let err = admin_train(&mut enc, &mut bank(4), &blobs, &mut NoTask, &cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn multi_view_batches_feed_every_view() {
    let two = |n: usize, rng: &mut Rng| -> admin_lab::Result<Batch> {
        let a = gaussian(n, rng)?.views.remove(0);
        let b = a.map(|v| v + 0.1);
        Ok(Batch {
            views: vec![a, b],
            labels: None,
        })
    };
    let cfg = AdminConfig {
        steps: 5,
        batch_size: 32,
        ..AdminConfig::default()
    };
    let mut enc = encoder(4, 3);
    let log = admin_train(&mut enc, &mut bank(3), &two, &mut NoTask, &cfg).unwrap();
    assert_eq!(log.steps.len(), 5);
    assert!(log.steps.iter().all(|r| r.encoder_adv_loss.is_finite()));
}
