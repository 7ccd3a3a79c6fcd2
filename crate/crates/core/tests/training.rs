//! Short training runs on tiny synthetic data: determinism, freezing and
//! checkpoint output.

use reid_core::catalog::{patient_wise_split, ImageBank, Manifest, PreprocessSpec, Split};
use reid_core::mining::{mine_positive_pairs, MiningConfig, MiningMode};
use reid_core::nn::{trunk_spec, Checkpoint, EmbeddingNet, EmbeddingNetSpec, ParamStore, VerificationNet, VerificationNetSpec};
use reid_core::synthetic::{generate_in_memory, SyntheticSpec};
use reid_core::train::{train_reid, train_verification, ReidTrainConfig, VerifTrainConfig};

const RES: usize = 16;

fn data() -> (Manifest, Manifest, ImageBank) {
    let spec = SyntheticSpec {
        n_identities: 20,
        resolution: 32,
        ..SyntheticSpec::default()
    };
    let (m, bank) = generate_in_memory(&spec, &PreprocessSpec::new(RES)).unwrap();
    let split = patient_wise_split(&m, [0.5, 0.5, 0.0], 0).unwrap();
    (split.subset(&m, Split::Train), split.subset(&m, Split::Val), bank)
}

fn trunk_values(store: &ParamStore) -> Vec<f64> {
    store
        .spans_with_prefix("trunk.")
        .into_iter()
        .flat_map(|r| store.data()[r].to_vec())
        .collect()
}

fn verif_setup(train: &Manifest) -> (VerificationNet, ParamStore, VerifTrainConfig) {
    let spec = VerificationNetSpec {
        trunk: trunk_spec("micro").unwrap(),
        pool_grid: 2,
        input_resolution: RES,
    };
    let (net, store) = VerificationNet::new(&spec, 1).unwrap();
    let mut cfg = VerifTrainConfig::new(MiningConfig {
        mode: MiningMode::RNP,
        target_size: 2 * mine_positive_pairs(train).len(),
        seed: 2,
    });
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 3;
    (net, store, cfg)
}

#[test]
fn verification_training_is_deterministic_and_checkpoints_every_epoch() {
    let (train, val, bank) = data();
    let (net, store, mut cfg) = verif_setup(&train);
    let dir = tempfile::tempdir().unwrap();
    cfg.checkpoint_dir = Some(dir.path().to_owned());
    let (a, state) = train_verification(&net, store.clone(), &train, &val, &bank, &cfg).unwrap();
    cfg.checkpoint_dir = None;
    let (b, _) = train_verification(&net, store.clone(), &train, &val, &bank, &cfg).unwrap();
    assert_eq!(a.data(), b.data());
    assert_ne!(a.data(), store.data());
    assert_eq!(state.history.len(), 3);
    for e in 1..=3 {
        assert!(dir.path().join(format!("epoch_{e:03}.ckpt")).exists());
    }
    let best = Checkpoint::load(&dir.path().join("best.ckpt")).unwrap();
    let (_, restored) = best.into_model().unwrap();
    assert_eq!(restored.data(), a.data());
}

#[test]
fn frozen_trunk_keeps_its_initial_weights() {
    let (train, val, bank) = data();
    let (net, store, mut cfg) = verif_setup(&train);
    cfg.freeze_trunk = true;
    cfg.max_epochs = 2;
    let (trained, _) = train_verification(&net, store.clone(), &train, &val, &bank, &cfg).unwrap();
    assert_eq!(trunk_values(&trained), trunk_values(&store));
    assert_ne!(trained.data(), store.data());
}

#[test]
fn retrieval_training_unfreezes_the_trunk_only_in_the_second_phase() {
    let (train, _, bank) = data();
    let spec = EmbeddingNetSpec {
        trunk: trunk_spec("micro").unwrap(),
        pool_size: 2,
        reduce_channels: 4,
        hidden: 16,
        input_resolution: RES,
    };
    let (net, store) = EmbeddingNet::new(&spec, 3).unwrap();
    let mut cfg = ReidTrainConfig {
        phase1_epochs: 1,
        phase2_epochs: 0,
        batch_size: 8,
        ..ReidTrainConfig::default()
    };
    let (head_only, state) = train_reid(&net, store.clone(), &train, None, &bank, &cfg).unwrap();
    assert_eq!(trunk_values(&head_only), trunk_values(&store));
    assert_ne!(head_only.data(), store.data());
    let lr = &state.lr_trace;
    assert_eq!(lr.first().copied(), Some(cfg.lr_lower));

    cfg.phase2_epochs = 1;
    let (full, _) = train_reid(&net, store.clone(), &train, None, &bank, &cfg).unwrap();
    assert_ne!(trunk_values(&full), trunk_values(&store));
    let (again, _) = train_reid(&net, store, &train, None, &bank, &cfg).unwrap();
    assert_eq!(full.data(), again.data());
}
