use ssgan_core::baselines::nn_d_train;
use ssgan_core::data::SynthConfig;
use ssgan_core::harness::{cmd_featurize, cmd_synth, cmd_train, load_training_data, prepare_cohort, ExperimentConfig};
use ssgan_core::losses::LossConfig;
use ssgan_core::network::{Checkpoint, NetworkConfig};
use ssgan_core::trainer::{init_models, train, TrainConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        seed: 5,
        synth: SynthConfig {
            symptoms: 10,
            relevant_symptoms: 3,
            cluster_symptoms: 3,
            labeled_positives: 15,
            negative_pool: 90,
            unlabeled: 150,
            test: 300,
            prevalence: 0.05,
            ..SynthConfig::default()
        },
        model: NetworkConfig {
            feature_dim: 32,
            latent_dim: 4,
            d_hidden: vec![8, 8, 6, 6, 4],
            g_hidden: vec![4, 6, 6, 8, 8],
            ..NetworkConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            batch_size: 12,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

#[test]
fn nn_d_baseline_and_degenerate_gan_path_agree() {
    let cfg = small();
    let data = prepare_cohort(&cfg).unwrap();
    let tc = cfg.train_config(0, &LossConfig::nn_d());

    let baseline = nn_d_train(&data.train, &cfg.model, &tc).unwrap();
    // the general trainer with every GAN term off, unlabeled data present
    let (d, g) = init_models(&cfg.model, tc.seed).unwrap();
    let general = train(d, g, &data.train, &tc).unwrap();

    assert_eq!(baseline.d.to_checkpoint().to_bytes(), general.d.to_checkpoint().to_bytes());
    assert_eq!(baseline.log.steps, general.log.steps);
}

#[test]
fn cli_train_matches_library_training() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("cohort");
    let feats = dir.path().join("features");
    cmd_synth(&cfg, &cohort).unwrap();
    cmd_featurize(
        cfg.synth.symptoms,
        &[cohort.join("labeled.jsonl"), cohort.join("unlabeled.jsonl")],
        None,
        &feats,
    )
    .unwrap();
    let run = dir.path().join("run");
    cmd_train(&cfg, "nn_d", &feats, &run).unwrap();

    let data = load_training_data(&feats, false).unwrap();
    let tc = cfg.train_config(0, &LossConfig::nn_d());
    let lib = nn_d_train(&data, &cfg.model, &tc).unwrap();
    let saved = Checkpoint::load(&run.join("discriminator.ckpt")).unwrap();
    assert_eq!(saved.to_bytes(), lib.d.to_checkpoint().to_bytes());
}

#[test]
fn prepared_training_features_are_normalized() {
    let data = prepare_cohort(&small()).unwrap();
    let u = data.train.unlabeled.as_ref().unwrap();
    for x in [&data.train.labeled, u, &data.test] {
        assert!(x.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    assert_eq!(data.train.labels.iter().filter(|&&y| y == 1).count(), 15);
    assert_eq!(data.test_labels.iter().filter(|&&y| y == 1).count(), 15);
}
