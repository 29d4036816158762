//! Stops a run after two epochs, resumes it from disk, and checks the
//! result against an uninterrupted run.
//!
//! ```text
//! cargo run --release --example checkpoint_resume
//! ```

use foveal::data::{Checkpoint, SynthConfig};
use foveal::run::{train_sequence, Dataset, RunConfig};

fn config(epochs: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synthetic = Some(SynthConfig {
        scenes: 40,
        ..Default::default()
    });
    cfg.foveation.mask_radius = 1.0;
    cfg.train.max_epochs = epochs;
    cfg.train.batch_size = 8;
    cfg
}

fn main() -> foveal::Result<()> {
    let data = Dataset::load(&config(5))?;
    let dir = tempfile::tempdir()?;

    let straight = train_sequence(&config(5), &data, &dir.path().join("straight"), false)?;
    let split = dir.path().join("split");
    train_sequence(&config(2), &data, &split, false)?;
    let resumed = train_sequence(&config(5), &data, &split, true)?;

    println!("epoch  straight     resumed");
    for (a, b) in straight.history.iter().zip(&resumed.history) {
        println!("{:>5}  {:.8}  {:.8}", a.epoch, a.train_loss, b.train_loss);
    }
    println!("final weights identical: {}", resumed.store.bitwise_eq(&straight.store));

    let ck = Checkpoint::load(&split.join("checkpoint"))?;
    println!(
        "checkpoint: {:?} model, best epoch {}, {} parameter tensors, classes {:?}",
        ck.model.family,
        ck.epoch,
        ck.store.params().len(),
        ck.classes
    );
    Ok(())
}
