//! Generates the synthetic search corpus, prints its composition and, with
//! an output directory, writes it in the on-disk dataset layout.
//!
//! ```text
//! cargo run --example synth_corpus -- [out_dir]
//! ```

use std::collections::BTreeMap;

use foveal::data::{generate, write_records, FeatureStore, SynthConfig};

fn main() -> foveal::Result<()> {
    let cfg = SynthConfig::default();
    let corpus = generate(&cfg)?;
    let g = cfg.grid;
    println!(
        "{} scenes on a {}×{} grid, {} feature channels",
        corpus.scenes.len(),
        g.rows,
        g.cols,
        cfg.channels()
    );

    let mut per_task: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for r in &corpus.records {
        let e = per_task.entry(r.task.as_str()).or_default();
        if r.present() {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
        e.2 += r.x.len();
    }
    println!("{:<8} {:>8} {:>7} {:>10}", "task", "present", "absent", "mean len");
    for (task, (p, a, len)) in &per_task {
        println!("{task:<8} {p:>8} {a:>7} {:>10.2}", *len as f64 / (p + a) as f64);
    }

    // Where the targets land.
    let mut counts = vec![0usize; g.cells()];
    for s in corpus.scenes.values() {
        if let Some(t) = s.target {
            counts[g.index(t)] += 1;
        }
    }
    println!("target cells:");
    for row in counts.chunks(g.cols) {
        println!("  {}", row.iter().map(|c| format!("{c:3}")).collect::<String>());
    }

    if let Some(out) = std::env::args().nth(1) {
        let out = std::path::PathBuf::from(out);
        corpus.write_features(&FeatureStore::new(out.join("features")))?;
        write_records(&out.join("scanpaths.json"), &corpus.records)?;
        println!("written to {}", out.display());
    }
    Ok(())
}
