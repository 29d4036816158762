//! Prints the fixation masks and the resulting belief map along one
//! synthetic scanpath. `#` marks cells read from the full-resolution map.
//!
//! ```text
//! cargo run --example belief_maps -- [radius] [cumulative]
//! ```

use foveal::data::{generate, preprocess_all, PreprocessConfig, SynthConfig};
use foveal::foveation::{compose_belief, mask_sequence, FixationMask};

fn draw(m: &FixationMask) -> String {
    let mut out = String::new();
    for r in 0..m.rows {
        for c in 0..m.cols {
            let here = m.cell.row == r && m.cell.col == c;
            out.push(match (here, m.values[r * m.cols + c]) {
                (true, _) => '@',
                (false, true) => '#',
                (false, false) => '.',
            });
        }
        out.push('\n');
    }
    out
}

fn main() -> foveal::Result<()> {
    let mut args = std::env::args().skip(1);
    let radius: f64 = args.next().and_then(|v| v.parse().ok()).unwrap_or(2.0);
    let cumulative = args.next().is_some_and(|v| v == "cumulative" || v == "true");

    let cfg = SynthConfig {
        scenes: 8,
        ..Default::default()
    };
    let corpus = generate(&cfg)?;
    let g = cfg.grid;
    let (records, _) = preprocess_all(&corpus.records, &g, &PreprocessConfig::for_grid(&g))?;
    let rec = records.iter().find(|r| r.present()).expect("a target-present trial");
    let scene = &corpus.scenes[rec.stem()];
    println!("{} / {}  radius {radius}  cumulative {cumulative}", rec.name, rec.task);

    for (t, m) in mask_sequence(&rec.cells(&g), radius, cumulative, &g)?.iter().enumerate() {
        let belief = compose_belief(&scene.full, &scene.blurred, m)?;
        let energy: f64 = belief.data().iter().map(|v| v * v).sum();
        println!("t={t}  {} sharp cells  belief energy {energy:.3}", m.active());
        print!("{}", draw(m));
    }
    Ok(())
}
