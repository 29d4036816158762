//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod decoding;
pub mod lstm;
pub mod models;
pub mod staged;

use std::path::{Path, PathBuf};

use foveal::data::{read_records, FeatureStore, Variant};
use foveal::encoding::GridSpec;
use foveal::rng::stream;
use foveal::tensor::Tensor;
use rand::Rng;

pub const FIXTURE_CHANNELS: usize = 4;

/// Twenty trials in the COCO-Search18 JSON schema: sixteen of at most six
/// fixations and four longer ones that preprocessing must discard.
pub fn coco_fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/coco_search18_20.json")
}

/// Copies the fixture into `dir/scanpaths.json` and writes random full and
/// blurred feature maps for every image into `dir/features`.
pub fn write_coco_dataset(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::copy(coco_fixture(), dir.join("scanpaths.json")).unwrap();
    let g = GridSpec::default();
    let store = FeatureStore::new(dir.join("features"));
    for (i, r) in read_records(&coco_fixture()).unwrap().iter().enumerate() {
        let mut rng = stream(i as u64, "fixture");
        let full = Tensor::from_fn(&[g.rows, g.cols, FIXTURE_CHANNELS], |_| rng.random_range(0.0..1.0)).unwrap();
        let blurred = full.map(|v| 0.5 * v).unwrap();
        store.put(r.stem(), Variant::Full, &full).unwrap();
        store.put(r.stem(), Variant::Blurred, &blurred).unwrap();
    }
}
