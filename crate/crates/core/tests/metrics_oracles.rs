mod common;

use common::staged::*;
use foveal::encoding::{BBox, Cell, GridSpec};
use foveal::metrics::{evaluate, search_accuracy, tfp_curve, Confusion, EvalItem, Scored};
use foveal::rng::stream;
use rand::Rng;

#[test]
fn per_class_metrics_match_hand_computation() {
    let report = evaluate(&staged(), &grid(), 5).unwrap();
    let a = &report.per_class["a"];
    assert_eq!(a.n, 4);
    assert_eq!(a.tfp, vec![0.0, 0.25, 0.25, 0.5, 0.5]);
    assert_eq!(a.search_accuracy, 0.5);
    assert_eq!(a.tfp_auc, 1.5);
    assert_eq!(a.human_tfp, Some(vec![0.0, 0.25, 0.5, 0.5, 0.75]));
    assert_eq!(a.probability_mismatch, Some(0.5));
    // Direct paths score 1; out-and-back detours of 20 and 40 px score 1/2 and 1/4.
    assert_eq!(a.scanpath_ratio, Some((1.0 + 1.0 + 0.5 + 0.25) / 4.0));

    let b = &report.per_class["b"];
    assert_eq!(b.n, 2);
    assert_eq!(b.tfp, vec![0.0, 0.0, 0.5, 0.5, 0.5]);
    assert_eq!(b.search_accuracy, 0.5);
    assert_eq!(b.tfp_auc, 1.5);
    assert_eq!(b.probability_mismatch, Some(0.0));
    // The motionless path has no ratio.
    assert_eq!(b.scanpath_ratio, Some(1.0));
}

#[test]
fn macro_average_is_the_mean_over_classes() {
    let report = evaluate(&staged(), &grid(), 5).unwrap();
    let m = &report.macro_avg;
    assert_eq!(m.n, 6);
    assert_eq!(m.tfp, vec![0.0, 0.125, 0.375, 0.5, 0.5]);
    assert_eq!(m.search_accuracy, 0.5);
    assert_eq!(m.tfp_auc, 1.5);
    assert_eq!(m.human_tfp, Some(vec![0.0, 0.125, 0.5, 0.5, 0.625]));
    assert_eq!(m.probability_mismatch, Some(0.25));
    assert_eq!(m.scanpath_ratio, Some((0.6875 + 1.0) / 2.0));
    assert!(report.detection.is_none());
}

#[test]
fn start_fixation_on_the_target_does_not_count() {
    let g = grid();
    let b = target();
    let cells = path(&[(0, 1), (1, 1), (1, 1)]);
    let p = [Scored { cells: &cells, bbox: &b }];
    assert_eq!(search_accuracy(&p, &g).unwrap(), 0.0);
    assert_eq!(tfp_curve(&p, &g, 3).unwrap(), vec![0.0; 3]);
}

#[test]
fn detection_confusion_is_tallied_per_step() {
    let mut items = staged();
    items[0].det_pred = Some(vec![0.9, 0.2, 0.6, 0.4]);
    items[0].det_label = Some(vec![1.0, 1.0, 0.0, 0.0]);
    items[6].det_pred = Some(vec![0.5, 0.1, 0.1, 0.7]);
    items[6].det_label = Some(vec![0.0, 0.0, 0.0, 0.0]);
    let det = evaluate(&items, &grid(), 5).unwrap().detection.unwrap();
    assert_eq!(det.confusion, Confusion { tp: 1, fp: 3, tn: 3, fn_: 1 });
    assert_eq!(det.overall.accuracy, 0.5);
    assert_eq!(det.overall.precision, Some(0.25));
    assert_eq!(det.overall.recall, Some(0.5));
    assert_eq!(det.per_step.len(), 4);
    assert_eq!(det.per_step[0], Confusion { tp: 1, fp: 1, tn: 0, fn_: 0 });
    assert_eq!(det.per_step[3], Confusion { tp: 0, fp: 1, tn: 1, fn_: 0 });
}

#[test]
fn final_tfp_equals_search_accuracy_on_random_sets() {
    let g = GridSpec::with_cell_size(4, 5, 8);
    let mut rng = stream(17, "metrics");
    for _ in 0..200 {
        let n = rng.random_range(1..30);
        let items: Vec<EvalItem> = (0..n)
            .map(|_| {
                let rand_path = |rng: &mut foveal::rng::Rng| -> Vec<Cell> {
                    (0..7).map(|_| Cell::new(rng.random_range(0..4), rng.random_range(0..5))).collect()
                };
                let predicted = rand_path(&mut rng);
                let human = rand_path(&mut rng);
                let (x, y) = (rng.random_range(0.0..36.0), rng.random_range(0.0..28.0));
                EvalItem {
                    class: format!("k{}", rng.random_range(0..3)),
                    predicted,
                    human: Some(human),
                    present: true,
                    bbox: Some(BBox::new(x, y, 3.0, 3.0).unwrap()),
                    det_pred: None,
                    det_label: None,
                }
            })
            .collect();
        let report = evaluate(&items, &g, 7).unwrap();
        for (class, m) in &report.per_class {
            assert_eq!(m.tfp[6], m.search_accuracy);
            let scored: Vec<Scored<'_>> = items
                .iter()
                .filter(|it| &it.class == class)
                .map(|it| Scored {
                    cells: &it.predicted,
                    bbox: it.bbox.as_ref().unwrap(),
                })
                .collect();
            assert_eq!(search_accuracy(&scored, &g).unwrap(), m.search_accuracy);
        }
        assert_eq!(report.macro_avg.tfp[6], report.macro_avg.search_accuracy);
    }
}
