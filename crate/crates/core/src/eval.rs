//! Model predictions over a record set, turned into [`EvalItem`]s for the metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, InputMode};
use crate::decode::{beam_search, random_scanpath, Beam};
use crate::encoding::{detection_labels, Cell};
use crate::error::{Error, Result};
use crate::metrics::{first_hit, EvalItem};
use crate::models::Model;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::train::{Sample, TaskEncoder};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeOptions {
    pub beam_width: usize,
    pub length: usize,
    /// Score the earliest-hitting beam instead of the best one.
    pub any_beam: bool,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam_width: 20,
            length: 7,
            any_beam: false,
        }
    }
}

/// The beam scored for `s`: the best one, or under `any_beam` the best among
/// those reaching the target earliest.
fn pick(beams: Vec<Beam>, s: &Sample, opts: &DecodeOptions, model: &Model) -> Beam {
    let g = &model.config().grid;
    if opts.any_beam {
        if let Some(b) = s.bbox.as_ref() {
            let earliest = beams
                .iter()
                .enumerate()
                .filter_map(|(i, beam)| first_hit(&beam.cells, b, g).map(|t| (t, i)))
                .min();
            if let Some((_, i)) = earliest {
                return beams.into_iter().nth(i).expect("index in range");
            }
        }
    }
    beams.into_iter().next().expect("beam search returns at least one beam")
}

fn item(s: &Sample, encoder: &TaskEncoder, predicted: Vec<Cell>, det: Option<Vec<f64>>, g: &crate::encoding::GridSpec) -> Result<EvalItem> {
    let det_label = match det {
        Some(_) => Some(detection_labels(&predicted, s.bbox.as_ref(), s.present, g)?[1..].to_vec()),
        None => None,
    };
    Ok(EvalItem {
        class: encoder.classes[s.class].clone(),
        predicted,
        human: Some(s.cells.clone()),
        present: s.present,
        bbox: s.bbox,
        det_pred: det,
        det_label,
    })
}

/// Beam-decodes every sample in parallel.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    model: &Model,
    store: &ParamStore,
    features: &FeatureStore,
    input: InputMode,
    encoder: &TaskEncoder,
    samples: &[Sample],
    opts: &DecodeOptions,
) -> Result<Vec<EvalItem>> {
    let g = model.config().grid;
    samples
        .par_iter()
        .map(|s| {
            let source = features.source(&s.stem, input, &g)?;
            let task = encoder.encode(s.class)?;
            let beams = beam_search(model, store, &source, &task, opts.beam_width, opts.length)?;
            let beam = pick(beams, s, opts, model);
            let det = model.has_detection().then_some(beam.det);
            item(s, encoder, beam.cells, det, &g)
        })
        .collect()
}

/// Baseline predictions: each sample replays a random scanpath from `pool`.
pub fn random_baseline(samples: &[Sample], encoder: &TaskEncoder, pool: &[Vec<Cell>], rng: &mut Rng) -> Result<Vec<EvalItem>> {
    if pool.is_empty() {
        return Err(Error::Data("empty scanpath pool for the random baseline".into()));
    }
    samples
        .iter()
        .map(|s| item(s, encoder, random_scanpath(pool, rng)?.clone(), None, &encoder.grid))
        .collect()
}

/// Items whose prediction is the human scanpath itself.
pub fn human_items(samples: &[Sample], encoder: &TaskEncoder) -> Result<Vec<EvalItem>> {
    samples
        .iter()
        .map(|s| item(s, encoder, s.cells.clone(), None, &encoder.grid))
        .collect()
}
