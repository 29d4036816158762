use serde::{Deserialize, Serialize};

use super::ScanpathRecord;
use crate::encoding::GridSpec;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Pixel size of the images the raw coordinates refer to.
    pub source_w: f64,
    pub source_h: f64,
    /// Raw fixations kept at most; longer trials are discarded.
    pub max_saccades: usize,
    /// Length after prepending the centre and padding.
    pub length: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            source_w: 1680.0,
            source_h: 1050.0,
            max_saccades: 6,
            length: 7,
        }
    }
}

impl PreprocessConfig {
    /// Coordinates already given in the grid's image frame (synthetic corpora).
    pub fn for_grid(g: &GridSpec) -> Self {
        PreprocessConfig {
            source_w: g.img_w as f64,
            source_h: g.img_h as f64,
            ..Default::default()
        }
    }
}

/// Rescales to the grid's image size, prepends the centre fixation and pads
/// by repeating the last fixation. Returns `None` for trials with more than
/// `max_saccades` raw fixations. Already processed records pass through.
pub fn preprocess(rec: &ScanpathRecord, g: &GridSpec, cfg: &PreprocessConfig) -> Result<Option<ScanpathRecord>> {
    if rec.x.len() != rec.y.len() {
        return Err(Error::Data(format!(
            "`{}`: {} X vs {} Y coordinates",
            rec.name,
            rec.x.len(),
            rec.y.len()
        )));
    }
    if rec.x.is_empty() {
        return Err(Error::Data(format!("`{}`: empty fixation list", rec.name)));
    }
    rec.bbox()?;
    if rec.processed {
        if rec.x.len() != cfg.length {
            return Err(Error::Data(format!(
                "`{}` is marked processed but has {} fixations",
                rec.name,
                rec.x.len()
            )));
        }
        return Ok(Some(rec.clone()));
    }
    if rec.x.len() > cfg.max_saccades {
        return Ok(None);
    }
    let sx = g.img_w as f64 / cfg.source_w;
    let sy = g.img_h as f64 / cfg.source_h;
    let (cx, cy) = g.cell_center(g.center_cell());
    let mut x = vec![cx];
    let mut y = vec![cy];
    x.extend(rec.x.iter().map(|v| v * sx));
    y.extend(rec.y.iter().map(|v| v * sy));
    while x.len() < cfg.length {
        x.push(*x.last().expect("non-empty"));
        y.push(*y.last().expect("non-empty"));
    }
    let bbox = if rec.present() {
        rec.bbox.map(|[bx, by, bw, bh]| [bx * sx, by * sy, bw * sx, bh * sy])
    } else {
        None
    };
    Ok(Some(ScanpathRecord {
        x,
        y,
        bbox,
        processed: true,
        ..rec.clone()
    }))
}

/// Preprocesses every record, dropping discarded ones. Returns the kept records and the discard count.
pub fn preprocess_all(
    records: &[ScanpathRecord],
    g: &GridSpec,
    cfg: &PreprocessConfig,
) -> Result<(Vec<ScanpathRecord>, usize)> {
    let mut kept = Vec::with_capacity(records.len());
    let mut dropped = 0;
    for r in records {
        match preprocess(r, g, cfg)? {
            Some(p) => kept.push(p),
            None => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Condition;

    fn raw(n: usize) -> ScanpathRecord {
        ScanpathRecord {
            name: "a.jpg".into(),
            task: "cup".into(),
            condition: Condition::Absent,
            bbox: None,
            x: (0..n).map(|i| 100.0 * i as f64).collect(),
            y: (0..n).map(|i| 50.0 * i as f64).collect(),
            subject: None,
            split: None,
            processed: false,
        }
    }

    #[test]
    fn padding_and_discard() {
        let g = GridSpec::default();
        let cfg = PreprocessConfig::default();
        let p = preprocess(&raw(4), &g, &cfg).unwrap().unwrap();
        assert_eq!(p.x.len(), 7);
        assert_eq!(p.cells(&g)[0], g.center_cell());
        assert_eq!(p.x[4], p.x[5]);
        assert_eq!(p.x[4], p.x[6]);
        assert_eq!(p.x[1], 0.0);
        assert_eq!(p.x[2], 100.0 * (512.0 / 1680.0));
        assert!(preprocess(&raw(8), &g, &cfg).unwrap().is_none());
        let six = preprocess(&raw(6), &g, &cfg).unwrap().unwrap();
        assert_eq!(six.x[6], 500.0 * (512.0 / 1680.0));
        assert!(preprocess(&raw(0), &g, &cfg).is_err());
    }

    #[test]
    fn idempotent() {
        let g = GridSpec::default();
        let cfg = PreprocessConfig::default();
        let once = preprocess(&raw(3), &g, &cfg).unwrap().unwrap();
        let twice = preprocess(&once, &g, &cfg).unwrap().unwrap();
        assert_eq!(once, twice);
    }
}
