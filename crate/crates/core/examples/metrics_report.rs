//! Scores a handful of hand-made scanpaths on a 3×3 grid and prints the
//! resulting report as JSON.
//!
//! ```text
//! cargo run --example metrics_report
//! ```

use foveal::encoding::{BBox, Cell, GridSpec};
use foveal::metrics::{evaluate, EvalItem};

fn path(cells: &[(usize, usize)]) -> Vec<Cell> {
    cells.iter().map(|&(r, c)| Cell::new(r, c)).collect()
}

fn main() -> foveal::Result<()> {
    let g = GridSpec::with_cell_size(3, 3, 10);
    let target = BBox::new(21.0, 21.0, 8.0, 8.0)?;
    let c = (1, 1);
    let t = (2, 2);
    let trials = [
        ("mug", [c, t, t, t, t], [c, (1, 2), t, t, t]),
        ("mug", [c, (0, 0), c, t, t], [c, t, t, t, t]),
        ("key", [c, (2, 1), t, t, t], [c, (2, 1), t, t, t]),
        ("key", [c, (0, 1), (0, 2), (1, 2), (1, 1)], [c, (1, 0), (2, 0), (2, 1), t]),
    ];
    let items: Vec<EvalItem> = trials
        .iter()
        .map(|(class, predicted, human)| EvalItem {
            class: class.to_string(),
            predicted: path(predicted),
            human: Some(path(human)),
            present: true,
            bbox: Some(target),
            det_pred: None,
            det_label: None,
        })
        .collect();
    let report = evaluate(&items, &g, 5)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
