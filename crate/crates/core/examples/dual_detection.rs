//! Trains a dual fixation + detection model on the synthetic corpus and
//! prints search and per-step detection scores on the test split.
//!
//! ```text
//! cargo run --release --example dual_detection -- [a|b|c] [epochs]
//! ```

use foveal::data::SynthConfig;
use foveal::models::{DualArch, Family};
use foveal::run::{evaluate_checkpoint, train_sequence, Dataset, RunConfig};

fn main() -> foveal::Result<()> {
    let mut args = std::env::args().skip(1);
    let arch = match args.next().as_deref() {
        Some("b") => DualArch::B,
        Some("c") => DualArch::C,
        _ => DualArch::A,
    };
    let epochs = args.next().and_then(|v| v.parse().ok()).unwrap_or(150);

    let mut cfg = RunConfig {
        family: Family::Dual,
        architecture: Some(arch),
        synthetic: Some(SynthConfig {
            scenes: 120,
            ..Default::default()
        }),
        ..Default::default()
    };
    cfg.foveation.mask_radius = 1.0;
    cfg.train.max_epochs = epochs;
    cfg.train.patience = epochs;
    cfg.train.batch_size = 16;
    cfg.validate()?;

    let data = Dataset::load(&cfg)?;
    let dir = tempfile::tempdir()?;
    let state = train_sequence(&cfg, &data, dir.path(), false)?;
    let last = state.history.last().expect("at least one epoch");
    println!(
        "{arch:?}: {} epochs, L_fix {:.3}, L_det {:.3}",
        state.epoch,
        last.train_fix.unwrap_or(f64::NAN),
        last.train_det.unwrap_or(f64::NAN)
    );

    let ev = evaluate_checkpoint(&cfg, &data, &dir.path().join("checkpoint"), &dir.path().join("eval"))?;
    let m = &ev.report.macro_avg;
    println!("search accuracy {:.3} (random {:.3})", m.search_accuracy, ev.baseline.macro_avg.search_accuracy);
    if let Some(d) = &ev.report.detection {
        println!("detection accuracy {:.3}", d.overall.accuracy);
        println!("step    tp    fp    tn    fn");
        for (t, c) in d.per_step.iter().enumerate() {
            println!("{:>4} {:>5} {:>5} {:>5} {:>5}", t + 1, c.tp, c.fp, c.tn, c.fn_);
        }
    }
    Ok(())
}
