//! Save mid-training, reload and continue: the resumed run matches an
//! uninterrupted one bit for bit.

use manifold_gain::harness::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use manifold_gain::harness::train::TrainState;
use manifold_gain::harness::{load_dataset, ExperimentConfig};
use manifold_gain::{build, Result};

fn main() -> Result<()> {
    let cfg = ExperimentConfig::default();
    let splits = load_dataset(&cfg.data)?;
    let (model, init) = build::<f32>(&cfg.model_spec()?, 4)?;

    let mut straight = TrainState::new(model.clone(), init.clone(), cfg.optimizer, 9);
    for _ in 0..4 {
        straight.run_epoch(&splits.train, &splits.val, cfg.batch_size)?;
    }

    let mut first = TrainState::new(model, init, cfg.optimizer, 9);
    for _ in 0..2 {
        first.run_epoch(&splits.train, &splits.val, cfg.batch_size)?;
    }
    let dir = std::env::temp_dir().join("manifold-gain-example");
    std::fs::create_dir_all(&dir).map_err(|e| manifold_gain::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("epoch2.ckpt");
    save_checkpoint(&path, &Checkpoint::from_state(&first))?;
    let mut resumed = load_checkpoint(&path)?.into_state()?;
    for _ in 0..2 {
        resumed.run_epoch(&splits.train, &splits.val, cfg.batch_size)?;
    }
    println!(
        "resumed at epoch {} -> {}; identical parameters: {}",
        2,
        resumed.epoch(),
        resumed.params == straight.params
    );
    Ok(())
}
