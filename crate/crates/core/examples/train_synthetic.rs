//! Trains the high-level fixation model on a synthetic corpus and compares
//! test search accuracy with the random-scanpath baseline.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [batch] [label: gaussian|onehot]
//! ```

use foveal::data::{assign_splits, class_names, generate, preprocess_all, InputMode, PreprocessConfig, Split, SynthConfig, DEFAULT_RATIOS};
use foveal::encoding::LabelKind;
use foveal::eval::{predict, random_baseline, DecodeOptions};
use foveal::metrics::evaluate;
use foveal::models::{Model, ModelConfig};
use foveal::rng;
use foveal::train::{fit, Sample, SequenceObjective, TaskEncoder, TrainConfig, TrainState};

fn main() -> foveal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(200);
    let batch = args.get(2).and_then(|a| a.parse().ok()).unwrap_or(16);
    let label = match args.get(3).map(String::as_str) {
        Some("onehot") => LabelKind::OneHot,
        _ => LabelKind::Gaussian,
    };

    let synth = SynthConfig::default();
    let corpus = generate(&synth)?;
    let g = synth.grid;
    let (mut records, dropped) = preprocess_all(&corpus.records, &g, &PreprocessConfig::for_grid(&g))?;
    assign_splits(&mut records, DEFAULT_RATIOS, 0)?;
    let classes = class_names(&records);
    let of = |s: Split| records.iter().filter(|r| r.split == Some(s)).cloned().collect::<Vec<_>>();
    let (train, valid, test) = (of(Split::Train), of(Split::Valid), of(Split::Test));
    println!("{} records ({dropped} dropped): {} train, {} valid, {} test", records.len(), train.len(), valid.len(), test.len());

    let mut mc = ModelConfig::high_level(g, synth.channels(), classes.len());
    mc.label = label;
    let model = Model::build(&mc)?;
    let encoder = TaskEncoder::fit(mc.task_encoding, &classes, &train, &g)?;
    let features = corpus.feature_store();
    let input = InputMode::Blend {
        radius: 1.0,
        cumulative: false,
    };
    let samples = |rs: &[foveal::data::ScanpathRecord]| rs.iter().map(|r| Sample::from_record(r, &encoder)).collect::<foveal::Result<Vec<_>>>();
    let obj = SequenceObjective {
        model: &model,
        features: &features,
        input,
        encoder: &encoder,
        train: samples(&train)?,
        valid: samples(&valid)?,
    };
    let tc = TrainConfig {
        max_epochs: epochs,
        patience: epochs,
        batch_size: batch,
        ..Default::default()
    };
    let start = std::time::Instant::now();
    let init = model.init_store(&mut rng::stream(tc.seed, "init"))?;
    let state = fit(&obj, &tc, TrainState::new(init, tc.optimizer), |st| {
        let r = st.history.last().expect("one row per epoch");
        if r.epoch % 10 == 0 {
            println!("epoch {:4}  train {:.4}  valid {:.4}", r.epoch, r.train_loss, r.valid_loss);
        }
        Ok(())
    })?;
    println!("trained {} epochs in {:.1}s", state.epoch, start.elapsed().as_secs_f64());

    let opts = DecodeOptions::default();
    let test_samples = samples(&test)?;
    for (name, set) in [("train", &obj.train), ("test", &test_samples)] {
        let items = predict(&model, &state.store, &features, input, &encoder, set, &opts)?;
        let report = evaluate(&items, &g, opts.length)?;
        println!("{name} search accuracy {:.3}", report.macro_avg.search_accuracy);
    }
    let pool: Vec<_> = obj.train.iter().map(|s| s.cells.clone()).collect();
    let base = random_baseline(&test_samples, &encoder, &pool, &mut rng::stream(tc.seed, "baseline"))?;
    println!("random baseline {:.3}", evaluate(&base, &g, opts.length)?.macro_avg.search_accuracy);
    Ok(())
}
