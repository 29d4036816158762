use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::{BBox, Cell, GridSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

/// Whether the search target appears in the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    Present,
    Absent,
}

/// One viewing trial, with COCO-Search18 field names. Unknown fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanpathRecord {
    /// Image file name.
    pub name: String,
    /// Search target category.
    pub task: String,
    pub condition: Condition,
    /// Target box `[x, y, w, h]` in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    #[serde(rename = "Y")]
    pub y: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Set once the record has been rescaled, centre-prefixed and padded.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub processed: bool,
}

impl ScanpathRecord {
    pub fn present(&self) -> bool {
        self.condition == Condition::Present
    }

    pub fn bbox(&self) -> Result<Option<BBox>> {
        match (self.present(), self.bbox) {
            (true, Some([x, y, w, h])) => Ok(Some(BBox::new(x, y, w, h)?)),
            (true, None) => Err(Error::Data(format!("target-present trial on `{}` has no bbox", self.name))),
            (false, _) => Ok(None),
        }
    }

    /// Fixation cells on `g` (coordinates must already be in `g`'s pixel frame).
    pub fn cells(&self, g: &GridSpec) -> Vec<Cell> {
        self.x.iter().zip(&self.y).map(|(&x, &y)| g.pixel_to_cell(x, y)).collect()
    }

    /// Image name without its extension; keys the feature files.
    pub fn stem(&self) -> &str {
        Path::new(&self.name)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(&self.name)
    }
}

pub fn read_records(path: &Path) -> Result<Vec<ScanpathRecord>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read scanpaths {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_records(path: &Path, records: &[ScanpathRecord]) -> Result<()> {
    super::write_atomic(path, serde_json::to_string_pretty(records)?.as_bytes())
}

/// Distinct task names, sorted; the index of a task in this list is its class id.
pub fn class_names(records: &[ScanpathRecord]) -> Vec<String> {
    let mut v: Vec<String> = records.iter().map(|r| r.task.clone()).collect();
    v.sort();
    v.dedup();
    v
}
