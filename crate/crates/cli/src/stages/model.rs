use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use germap_core::counting::{detect, save_detections, Detection};
use germap_core::metrics::{evaluate as score, Aggregation, EvaluationReport};
use germap_core::raster::{load_tile_image, Mask};
use germap_core::scene_labels::{label_path, read_labeled_tiles, split_dataset, tile_path, MANIFEST_FILE};
use germap_core::segnet::{
    image_to_input, load_checkpoint, predict as run_model, save_checkpoint, train as fit, write_training_log, EpochLog,
    SegModel, TrainingSample,
};
use germap_core::{Period, TileCoord};
use serde::{Deserialize, Serialize};

use super::{create_file, relative, require, run_stage, scan_cache, tile_key, write_json, Status};
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

/// Which tiles went to training and which were held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub eval: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub status: Status,
    pub log: Vec<EpochLog>,
}

/// Trains on the labeled tiles in `cfg.paths.data` and writes the
/// checkpoint, `training_log.csv` and `split.json`.
pub fn train(cfg: &PipelineConfig, force: bool) -> Result<TrainSummary> {
    let data = &cfg.paths.data;
    require(&data.join(MANIFEST_FILE), "labeled tile manifest")?;
    let out = &cfg.paths.outputs;
    let settings = (&cfg.model, &cfg.train, &cfg.loss, cfg.seed);
    let ckpt = cfg.paths.checkpoint();
    let ckpt_rel = pathdiff(&ckpt, out);
    let manifest = Manifest::new("train", &settings, &[data], vec![ckpt_rel, "training_log.csv".into(), "split.json".into()])?;
    let mut log = Vec::new();
    let status = run_stage(out, manifest, force, || {
        let tiles = read_labeled_tiles(data)?;
        let (train_tiles, eval_tiles) = split_dataset(tiles, cfg.train.train_fraction, cfg.seed)?;
        let split = SplitFile {
            train: train_tiles.iter().map(|t| tile_key(&t.period, t.coord)).collect(),
            eval: eval_tiles.iter().map(|t| tile_key(&t.period, t.coord)).collect(),
        };
        let train_set: Vec<TrainingSample> = train_tiles.iter().map(TrainingSample::from_tile).collect();
        let eval_set: Vec<TrainingSample> = eval_tiles.iter().map(TrainingSample::from_tile).collect();
        let model = SegModel::new(cfg.model.clone())?;
        println!(
            "train: {} parameters, {} train / {} eval tiles, {} epochs",
            model.num_params(),
            train_set.len(),
            eval_set.len(),
            cfg.train.epochs
        );
        let outcome = fit(model, &train_set, &eval_set, &cfg.train.train_config(cfg.seed), &cfg.loss)?;
        save_checkpoint(&outcome.model, &ckpt)?;
        write_training_log(&outcome.log, create_file(&out.join("training_log.csv"))?)?;
        write_json(&out.join("split.json"), &split)?;
        if let Some(last) = outcome.log.last() {
            println!(
                "train: final loss {:.5}, eval ger F1 {}",
                last.train_loss,
                last.eval_f1_ger.map_or("n/a".into(), |f| format!("{f:.4}"))
            );
        }
        log = outcome.log;
        Ok(())
    })?;
    Ok(TrainSummary { status, log })
}

/// Path of `target` relative to `base` when it lies beneath it, otherwise
/// `target` unchanged (manifests then check it as given).
fn pathdiff(target: &Path, base: &Path) -> PathBuf {
    target.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| {
        std::path::absolute(target).unwrap_or_else(|_| target.to_path_buf())
    })
}

/// Where `predict` reads imagery from.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictInput {
    /// A labeled dataset (`manifest.csv`), optionally restricted to the
    /// held-out tiles of the last `train` run.
    Dataset { dir: PathBuf, eval_only: bool },
    /// An imagery cache, all tiles of one period.
    Cache { dir: PathBuf, period: Period },
}

/// Runs the checkpoint over the input tiles, writing masks under
/// `<outputs>/predictions/` and blobs to `<outputs>/detections.geojson`.
pub fn predict(cfg: &PipelineConfig, input: &PredictInput, force: bool) -> Result<Status> {
    let ckpt = cfg.paths.checkpoint();
    require(&ckpt, "model checkpoint")?;
    let out = &cfg.paths.outputs;
    let (input_dir, selector) = match input {
        PredictInput::Dataset { dir, eval_only } => {
            require(&dir.join(MANIFEST_FILE), "labeled tile manifest")?;
            if *eval_only {
                require(&cfg.paths.split(), "split file from `train`")?;
            }
            (dir.clone(), format!("dataset:{eval_only}"))
        }
        PredictInput::Cache { dir, period } => (dir.join(period.as_str()), format!("cache:{period}")),
    };
    require(&input_dir, "prediction input")?;
    let settings = (&selector, cfg.count.min_blob_px);
    let mut inputs: Vec<&Path> = vec![&ckpt, &input_dir];
    let split_path = cfg.paths.split();
    if matches!(input, PredictInput::Dataset { eval_only: true, .. }) {
        inputs.push(&split_path);
    }
    let manifest = Manifest::new("predict", &settings, &inputs, relative(&["detections.geojson", "predictions"]))?;
    run_stage(out, manifest, force, || {
        let model = load_checkpoint(&ckpt)?;
        let tiles: Vec<(Period, TileCoord, image::RgbImage)> = match input {
            PredictInput::Dataset { dir, eval_only } => {
                let keep: Option<BTreeSet<String>> = if *eval_only {
                    let text = std::fs::read_to_string(&split_path).map_err(|e| CliError::BadInput(e.to_string()))?;
                    let split: SplitFile =
                        serde_json::from_str(&text).map_err(|e| CliError::BadInput(format!("split.json: {e}")))?;
                    Some(split.eval.into_iter().collect())
                } else {
                    None
                };
                read_labeled_tiles(dir)?
                    .into_iter()
                    .filter(|t| keep.as_ref().is_none_or(|k| k.contains(&tile_key(&t.period, t.coord))))
                    .map(|t| (t.period, t.coord, t.image))
                    .collect()
            }
            PredictInput::Cache { dir, period } => scan_cache(dir, period)?
                .into_iter()
                .map(|t| Ok((period.clone(), t, load_tile_image(&tile_path(dir, period, t))?)))
                .collect::<Result<_>>()?,
        };
        let pred_dir = cfg.paths.predictions();
        if pred_dir.exists() {
            std::fs::remove_dir_all(&pred_dir).map_err(|e| CliError::output(&pred_dir, e))?;
        }
        let mut detections: Vec<Detection> = Vec::new();
        for (period, coord, img) in &tiles {
            let p = run_model(&model, &image_to_input(img))?;
            p.mask.save_png(&tile_path(&pred_dir, period, *coord))?;
            detections.extend(detect(&p.mask, *coord, period, cfg.count.min_blob_px));
        }
        save_detections(&detections, &cfg.paths.detections())?;
        println!("predict: {} tiles, {} detections", tiles.len(), detections.len());
        Ok(())
    })
}

/// Scores predicted masks against the labels of the same tiles. Every
/// predicted tile must have a label. Writes `evaluation.csv` and
/// `evaluation.json` (the latter adds per-class recall).
pub fn evaluate(cfg: &PipelineConfig, predictions: &Path, labels: &Path, aggregation: Aggregation) -> Result<EvaluationReport> {
    require(predictions, "prediction directory")?;
    require(labels, "label directory")?;
    let mut pairs: Vec<(Mask, Mask)> = Vec::new();
    let periods = std::fs::read_dir(predictions).map_err(|e| CliError::BadInput(e.to_string()))?;
    let mut period_names: Vec<String> = periods
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .collect();
    period_names.sort();
    for name in period_names {
        let period = Period::new(name);
        for t in scan_cache(predictions, &period)? {
            let truth_path = label_path(labels, &period, t);
            require(&truth_path, "label for predicted tile")?;
            pairs.push((Mask::load_png(&tile_path(predictions, &period, t))?, Mask::load_png(&truth_path)?));
        }
    }
    if pairs.is_empty() {
        return Err(CliError::BadInput(format!("no predicted masks under {}", predictions.display())));
    }
    let report = score(pairs.iter().map(|(p, t)| (p, t)), aggregation)?;
    let out = &cfg.paths.outputs;
    report.write_csv(create_file(&out.join("evaluation.csv"))?)?;
    write_json(&out.join("evaluation.json"), &report)?;
    let manifest = Manifest::new(
        "evaluate",
        &format!("{aggregation:?}"),
        &[predictions, labels],
        relative(&["evaluation.csv", "evaluation.json"]),
    )?;
    manifest.write(out)?;
    println!(
        "evaluate: {} tiles, ger F1 {:.4}, IoU {:.4}, mIoU {:.4}, pixel accuracy {:.4}",
        pairs.len(),
        report.ger().f1,
        report.ger().iou,
        report.miou,
        report.pixel_accuracy
    );
    Ok(report)
}
