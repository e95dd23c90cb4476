//! Golden-file check of the checkpoint format.
//!
//! `tests/data/golden.ckpt` holds a short sparsifying run stopped midway. Set
//! `SPLATSPA_BLESS=1` to regenerate it after an intentional format change, and
//! bump the format version when doing so.

use std::path::PathBuf;

use splatspa::io::checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_VERSION};
use splatspa::sparsify::SparsifierConfig;
use splatspa::train::{self, SparsifyScore, TrainMode, Trainer};
use splatspa::{scene, TrainConfig, TrainSchedule};

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden.ckpt")
}

fn golden_trainer() -> Trainer {
    let gt = scene::toy_scene(8, 8);
    let cloud = train::init_cloud(&gt, 6, 3).unwrap();
    let schedule = TrainSchedule {
        total_iters: 20,
        sparsify_start_iter: 4,
        prune_iter: 16,
        eval_every: 4,
        rng_seed: 3,
        ..TrainSchedule::toy(8, 8)
    };
    let mode = TrainMode::GaussianSpa {
        sparsifier: SparsifierConfig {
            interval: 2,
            ..SparsifierConfig::for_budget(2)
        },
        score: SparsifyScore::Magnitude,
    };
    let mut trainer = Trainer::new(cloud, gt, TrainConfig::default(), schedule, mode).unwrap();
    trainer.run_until(10).unwrap();
    trainer
}

#[test]
fn encoding_matches_golden_file() {
    let bytes = encode_checkpoint(&golden_trainer().checkpoint()).unwrap();
    if std::env::var_os("SPLATSPA_BLESS").is_some() {
        std::fs::write(golden_path(), &bytes).unwrap();
    }
    let golden = std::fs::read(golden_path()).expect("golden file present; run with SPLATSPA_BLESS=1 to create it");
    assert!(bytes == golden, "checkpoint encoding changed; bump the version and re-bless");
}

#[test]
fn golden_file_decodes_and_resumes() {
    let golden = std::fs::read(golden_path()).unwrap();
    assert_eq!(&golden[..8], b"SPLATSPA");
    assert_eq!(u32::from_le_bytes(golden[8..12].try_into().unwrap()), CHECKPOINT_VERSION);

    let model = decode_checkpoint(&golden).unwrap();
    assert_eq!(model.progress.iter, 10);
    assert_eq!(model.image_size, [8, 8]);
    assert_eq!(model.cloud.len(), 6);
    assert!(model.sparsifier.is_some());

    let gt = scene::toy_scene(8, 8);
    let mut resumed = Trainer::from_checkpoint(model, gt).unwrap();
    resumed.run().unwrap();
    let mut straight = golden_trainer();
    straight.run().unwrap();
    assert_eq!(resumed.checkpoint(), straight.checkpoint());
    assert_eq!(resumed.cloud.alive_count(), 2);
}
