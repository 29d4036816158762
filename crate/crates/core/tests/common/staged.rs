//! Hand-staged scanpath sets whose metrics are known in closed form. Every
//! expected value is a dyadic rational, so comparisons are exact.

use foveal::encoding::{BBox, Cell, GridSpec};
use foveal::metrics::EvalItem;

/// 3×3 grid of 10 px cells; the target sits inside cell (0, 1) and the start is (1, 1).
pub fn grid() -> GridSpec {
    GridSpec::with_cell_size(3, 3, 10)
}

pub fn target() -> BBox {
    BBox::new(11.0, 1.0, 8.0, 8.0).unwrap()
}

pub fn path(cells: &[(usize, usize)]) -> Vec<Cell> {
    cells.iter().map(|&(r, c)| Cell::new(r, c)).collect()
}

pub fn item(class: &str, predicted: &[(usize, usize)], human: &[(usize, usize)]) -> EvalItem {
    EvalItem {
        class: class.into(),
        predicted: path(predicted),
        human: Some(path(human)),
        present: true,
        bbox: Some(target()),
        det_pred: None,
        det_label: None,
    }
}

pub fn staged() -> Vec<EvalItem> {
    let c = (1, 1);
    let t = (0, 1);
    vec![
        // Class a: model hits at 1 and 3, misses twice; humans hit at 2, 1, 4 and never.
        item("a", &[c, t, t, t, t], &[c, c, t, t, t]),
        item("a", &[c, c, c, t, t], &[c, t, t, t, t]),
        item("a", &[c, (1, 2), c, c, c], &[c, (1, 0), (1, 0), c, t]),
        item("a", &[c, (1, 0), c, (1, 2), c], &[c, c, c, c, c]),
        // Class b: one hit at 2, one path that never moves; humans identical.
        item("b", &[c, c, t, t, t], &[c, c, t, t, t]),
        item("b", &[c, c, c, c, c], &[c, c, c, c, c]),
        // Target-absent trials are excluded from the search metrics.
        EvalItem {
            present: false,
            bbox: None,
            ..item("a", &[c, t, t, t, t], &[c, t, t, t, t])
        },
    ]
}
