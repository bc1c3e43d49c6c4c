use mmt_core::checkpoint::ModelCheckpoint;
use mmt_core::model::ModelConfig;
use mmt_core::sampler::{generate, GenSpec};
use mmt_core::synthetic::scale_corpus;
use mmt_core::train::{train, Dataset, TrainConfig};

fn tiny(max_steps: u64, validate_every: u64, learning_rate: f64, patience: usize) -> TrainConfig {
    TrainConfig {
        max_len: 16,
        batch_size: 2,
        learning_rate,
        warmup_steps: 0,
        validate_every,
        max_steps,
        patience,
        augment: false,
        model: ModelConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            feedforward_dim: 16,
            max_len: 16,
            dropout: 0.0,
            ..ModelConfig::desk()
        },
        ..TrainConfig::default()
    }
}

fn data() -> Dataset {
    let songs = scale_corpus(3, 4);
    Dataset {
        train: songs.clone(),
        valid: songs,
        test: Vec::new(),
    }
}

#[test]
fn patience_one_stops_one_validation_after_the_last_improvement() {
    // A zero learning rate keeps the validation loss fixed after the first check.
    let outcome = train(&tiny(200_000, 1000, 0.0, 1), &data(), None).unwrap();
    assert!(outcome.stopped_early);
    assert_eq!(outcome.log.last().unwrap().step, 2000);
    let validated: Vec<u64> = outcome.log.iter().filter(|r| r.valid_loss.is_some()).map(|r| r.step).collect();
    assert_eq!(validated, vec![1000, 2000]);
    assert_eq!(outcome.best.state.step, 1000);
}

#[test]
fn saved_checkpoint_generates_like_the_trained_model() {
    let outcome = train(&tiny(40, 20, 1e-2, 5), &data(), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    outcome.best.save(&path).unwrap();
    let loaded = ModelCheckpoint::load(&path).unwrap().model().unwrap();
    let spec = GenSpec { max_len: 16, ..GenSpec::unconditioned(4) };
    let a = generate(&outcome.best.model().unwrap(), &spec).unwrap();
    let b = generate(&loaded, &spec).unwrap();
    assert_eq!(a.sequence, b.sequence);
}
