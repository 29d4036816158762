//! Reads a COCO-Search18-style scanpath JSON, applies the length filter and
//! rescaling, and reports how the trials split by image.
//!
//! ```text
//! cargo run --example coco_schema -- [scanpaths.json]
//! ```
//!
//! Defaults to the twenty-trial fixture under `tests/fixtures`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use foveal::data::{assign_splits, preprocess_all, read_records, PreprocessConfig, Split, DEFAULT_RATIOS};
use foveal::encoding::GridSpec;

fn main() -> foveal::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/coco_search18_20.json"));
    let raw = read_records(&path)?;
    let g = GridSpec::default();
    let (mut kept, dropped) = preprocess_all(&raw, &g, &PreprocessConfig::default())?;
    println!("{}: {} trials, {} kept, {dropped} over the fixation limit", path.display(), raw.len(), kept.len());

    assign_splits(&mut kept, DEFAULT_RATIOS, 0)?;
    let mut table: BTreeMap<&str, [usize; 3]> = BTreeMap::new();
    for r in &kept {
        let s = r.split.unwrap_or(Split::Train);
        table.entry(r.task.as_str()).or_default()[s as usize] += 1;
    }
    println!("{:<10} {:>6} {:>6} {:>6}", "task", "train", "valid", "test");
    for (task, [tr, va, te]) in &table {
        println!("{task:<10} {tr:>6} {va:>6} {te:>6}");
    }

    if let Some(r) = kept.first() {
        println!("first trial on the {}×{} grid:", g.rows, g.cols);
        for (t, c) in r.cells(&g).iter().enumerate() {
            println!("  t={t}  ({:.1}, {:.1}) -> cell ({}, {})", r.x[t], r.y[t], c.row, c.col);
        }
    }
    Ok(())
}
