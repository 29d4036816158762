//! Trains a high-level model on the synthetic corpus, then beam-decodes
//! one test scene and prints the highest-scoring scanpaths.
//!
//! ```text
//! cargo run --release --example beam_search -- [beam_width]
//! ```

use foveal::data::{Checkpoint, Split, SynthConfig};
use foveal::decode::beam_search;
use foveal::models::Model;
use foveal::run::{train_sequence, Dataset, RunConfig};
use foveal::train::TaskEncoder;

fn main() -> foveal::Result<()> {
    let width: usize = std::env::args().nth(1).and_then(|v| v.parse().ok()).unwrap_or(5);
    let mut cfg = RunConfig::default();
    cfg.synthetic = Some(SynthConfig::default());
    cfg.foveation.mask_radius = 1.0;
    cfg.train.max_epochs = 200;
    cfg.train.patience = 200;
    cfg.train.batch_size = 16;
    let data = Dataset::load(&cfg)?;
    let dir = tempfile::tempdir()?;
    let state = train_sequence(&cfg, &data, dir.path(), false)?;
    println!("trained {} epochs, best validation loss {:.3}", state.epoch, state.best_loss);

    let ck = Checkpoint::load(&dir.path().join("checkpoint"))?;
    let model = Model::build(&ck.model)?;
    let g = ck.model.grid;
    let enc = TaskEncoder::from_extras(ck.model.task_encoding, &ck.classes, &g, &ck.extras)?;
    let test = data.split(Split::Test);
    let rec = test.iter().find(|r| r.present()).expect("a target-present test trial");
    let source = data.features.source(rec.stem(), cfg.input_mode(), &g)?;
    let task = enc.encode(enc.class_index(&rec.task)?)?;
    let target = rec.bbox()?.expect("present trials carry a box");

    println!("{} / {}; target box {:?}", rec.name, rec.task, target);
    for (k, beam) in beam_search(&model, &ck.store, &source, &task, width, 7)?.iter().enumerate() {
        let cells: Vec<String> = beam
            .cells
            .iter()
            .map(|&c| {
                let mark = if g.overlaps(c, &target) { "*" } else { "" };
                format!("({},{}){mark}", c.row, c.col)
            })
            .collect();
        println!("#{k}  log p {:8.3}  {}", beam.log_prob, cells.join(" "));
    }
    Ok(())
}
