use ndarray::array;
use noisylab_core::data::{generate_gaussian_mixture, split, GaussianMixtureSpec};
use noisylab_core::losses::{Objective, RegularizerConfig};
use noisylab_core::model::{evaluate, train, NetworkParams, TrainConfig};
use noisylab_core::noise::{apply_class_noise, downsample_balance, empirical_transition, symmetric_transition, BinaryNoiseRates};

fn spec(n: usize) -> GaussianMixtureSpec {
    GaussianMixtureSpec {
        means: array![[1.5, 0.0], [-1.5, 0.0]],
        shared_cov_scale: 1.0,
        class_priors: vec![0.5, 0.5],
        n_samples: n,
    }
}

fn quick_config(lambda: f64) -> TrainConfig {
    TrainConfig {
        epochs: 5,
        batch_size: 64,
        hidden: vec![16, 16],
        projection_dim: 4,
        objective: Objective {
            info_weight: if lambda > 0.0 { 1.0 } else { 0.0 },
            regularizer: RegularizerConfig { lambda, ..Default::default() },
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn generate_corrupt_train_and_evaluate() {
    let data = generate_gaussian_mixture(&spec(600), 1).unwrap();
    let (train_set, test_set) = split(&data, 0.25, 2).unwrap();
    let noisy = apply_class_noise(&train_set, &symmetric_transition(2, 0.2).unwrap(), 3).unwrap();
    let (params, trace) = train(&noisy, &test_set, &quick_config(0.0)).unwrap();
    assert_eq!(trace.records.len(), 6);
    assert!(params.is_finite());
    let acc = evaluate(&params, &test_set, true).unwrap();
    assert!(acc > 0.8, "clean test accuracy {acc}");
    assert!((trace.last().unwrap().clean_test_acc - acc).abs() < 1e-12);
}

#[test]
fn training_with_the_regularizer_is_deterministic_and_finite() {
    let data = generate_gaussian_mixture(&spec(300), 4).unwrap();
    let noisy = apply_class_noise(&data, &symmetric_transition(2, 0.4).unwrap(), 5).unwrap();
    let test = generate_gaussian_mixture(&spec(200), 6).unwrap();
    let (a, ta) = train(&noisy, &test, &quick_config(1.0)).unwrap();
    let (b, tb) = train(&noisy, &test, &quick_config(1.0)).unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert!(ta.records.iter().all(|r| r.loss_reg.is_finite() && r.loss_info.is_finite()));
}

#[test]
fn lambda_zero_and_one_share_epoch_zero() {
    let data = generate_gaussian_mixture(&spec(200), 7).unwrap();
    let noisy = apply_class_noise(&data, &symmetric_transition(2, 0.4).unwrap(), 8).unwrap();
    let (_, t0) = train(&noisy, &data, &quick_config(0.0)).unwrap();
    let (_, t1) = train(&noisy, &data, &quick_config(1.0)).unwrap();
    let (a, b) = (t0.records[0], t1.records[0]);
    assert_eq!(a.clean_test_acc, b.clean_test_acc);
    assert_eq!(a.noisy_train_acc, b.noisy_train_acc);
}

#[test]
fn model_round_trips_through_a_file() {
    let data = generate_gaussian_mixture(&spec(100), 9).unwrap();
    let noisy = apply_class_noise(&data, &symmetric_transition(2, 0.1).unwrap(), 10).unwrap();
    let (params, _) = train(&noisy, &data, &TrainConfig { epochs: 1, ..quick_config(0.0) }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    params.save(&path).unwrap();
    assert_eq!(NetworkParams::load(&path).unwrap(), params);
}

#[test]
fn downsampling_after_binary_noise_balances_noisy_classes() {
    let data = generate_gaussian_mixture(&spec(20_000), 11).unwrap();
    let rates = BinaryNoiseRates::new(0.4, 0.1).unwrap();
    let noisy = apply_class_noise(&data, &rates.transition().unwrap(), 12).unwrap();
    let down = downsample_balance(&noisy, 13).unwrap();
    let labels = down.noisy_labels().unwrap();
    let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
    assert!((ones / labels.len() as f64 - 0.5).abs() < 0.01);
    let before = empirical_transition(noisy.clean_labels(), noisy.noisy_labels().unwrap(), 2).unwrap().matrix;
    let after = empirical_transition(down.clean_labels(), labels, 2).unwrap().matrix;
    let gap = |t: &noisylab_core::noise::TransitionMatrix| (t.get(1, 0) - t.get(0, 1)).abs();
    assert!(gap(&after) < gap(&before));
}
