use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clearseg_core::checkpoint::safetensors_bytes;
use clearseg_core::seg::{compute_miou, plan_windows, LabelMap, MIoUReport, IGNORE_INDEX};
use clearseg_core::stats::{layer_report, Branch, StatsRecord};
use clearseg_core::{AttnMode, SurgeryConfig, VitConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{existing, RunConfig, SCHEMA_VERSION};
use crate::error::{CliError, Result, StageExt};
use crate::io::{csv_bytes, fmt_f64, stem, write_atomic, write_json};
use crate::model::{with_pool, Model};

#[derive(Debug, Serialize)]
struct Manifest<'a, T: Serialize> {
    schema_version: u32,
    command: &'static str,
    tool_version: &'static str,
    config: &'a RunConfig,
    model: &'a VitConfig,
    classes: &'a [String],
    #[serde(flatten)]
    body: T,
}

fn manifest<'a, T: Serialize>(
    command: &'static str,
    cfg: &'a RunConfig,
    model: &'a Model,
    body: T,
) -> Manifest<'a, T> {
    Manifest {
        schema_version: SCHEMA_VERSION,
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        model: model.vit_config(),
        classes: &model.text.class_names,
        body,
    }
}

fn resolve_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if paths.is_empty() {
        return Err(CliError::Input("no input images given".into()));
    }
    paths.iter().map(|p| existing(p)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentEntry {
    pub image: PathBuf,
    pub output: PathBuf,
    pub logits: Option<PathBuf>,
    pub height: usize,
    pub width: usize,
    pub processed_height: usize,
    pub processed_width: usize,
    pub windows: usize,
    pub millis: u128,
}

#[derive(Debug, Serialize)]
struct SegmentBody<'a> {
    inputs: &'a [SegmentEntry],
    total_millis: u128,
}

/// One label-map PNG per input, at the input's resolution, plus `segment.json`.
pub fn run_segment(cfg: &RunConfig, images: &[PathBuf]) -> Result<Vec<SegmentEntry>> {
    let started = Instant::now();
    let inputs = resolve_inputs(images)?;
    let mut seen = HashSet::new();
    for p in &inputs {
        if !seen.insert(stem(p)) {
            return Err(CliError::Input(format!(
                "two inputs share the file stem `{}`; outputs would collide",
                stem(p)
            )));
        }
    }
    let model = Model::load(cfg)?;
    let entries = with_pool(cfg.jobs, || {
        inputs
            .par_iter()
            .map(|path| segment_one(cfg, &model, path))
            .collect::<Result<Vec<_>>>()
    })??;
    let body = SegmentBody {
        inputs: &entries,
        total_millis: started.elapsed().as_millis(),
    };
    write_json(
        &cfg.out_dir.join("segment.json"),
        &manifest("segment", cfg, &model, body),
    )?;
    Ok(entries)
}

fn segment_one(cfg: &RunConfig, model: &Model, path: &Path) -> Result<SegmentEntry> {
    let t0 = Instant::now();
    let img = model.prepare(path)?;
    let (ph, pw) = (img.pixels.shape()[1], img.pixels.shape()[2]);
    let windows = plan_windows(ph, pw, cfg.crop, cfg.stride)
        .stage("segmentation")?
        .windows
        .len();
    let seg = model.segment(&img, &cfg.surgery, cfg.crop, cfg.stride, img.original)?;
    let name = stem(path);
    let output = cfg.out_dir.join(format!("{name}.png"));
    let png = seg.label_map.to_png_bytes().stage("writing label map")?;
    write_atomic(&output, &png)?;
    let logits = if cfg.dump_logits {
        let p = cfg.out_dir.join(format!("{name}.logits.safetensors"));
        let bytes = safetensors_bytes(&[("logits".into(), seg.logits.clone())], None)
            .stage("writing logits")?;
        write_atomic(&p, &bytes)?;
        Some(p)
    } else {
        None
    };
    log::info!(
        "{} → {} ({windows} windows)",
        path.display(),
        output.display()
    );
    Ok(SegmentEntry {
        image: path.to_path_buf(),
        output,
        logits,
        height: img.original.0,
        width: img.original.1,
        processed_height: ph,
        processed_width: pw,
        windows,
        millis: t0.elapsed().as_millis(),
    })
}

/// Label maps for every pair, resized to the ground-truth resolution.
fn predict_pairs(
    cfg: &RunConfig,
    model: &Model,
    surgery: &SurgeryConfig,
    pairs: &[(PathBuf, PathBuf)],
    gts: &[LabelMap],
) -> Result<Vec<LabelMap>> {
    with_pool(cfg.jobs, || {
        pairs
            .par_iter()
            .zip(gts)
            .map(|((img, _), gt)| {
                let prepared = model.prepare(img)?;
                if prepared.original != (gt.height, gt.width) {
                    log::warn!(
                        "{}: image is {}×{}, ground truth {}×{}",
                        img.display(),
                        prepared.original.0,
                        prepared.original.1,
                        gt.height,
                        gt.width
                    );
                }
                let seg = model.segment(
                    &prepared,
                    surgery,
                    cfg.crop,
                    cfg.stride,
                    (gt.height, gt.width),
                )?;
                Ok(seg.label_map)
            })
            .collect::<Result<Vec<_>>>()
    })?
}

fn resolve_pairs(images: &[PathBuf], gts: &[PathBuf]) -> Result<Vec<(PathBuf, PathBuf)>> {
    if images.len() != gts.len() {
        return Err(CliError::Input(format!(
            "{} images but {} ground-truth maps",
            images.len(),
            gts.len()
        )));
    }
    if images.is_empty() {
        return Err(CliError::Input("no image/ground-truth pairs given".into()));
    }
    images
        .iter()
        .zip(gts)
        .map(|(i, g)| Ok((existing(i)?, existing(g)?)))
        .collect()
}

fn load_gts(pairs: &[(PathBuf, PathBuf)]) -> Result<Vec<LabelMap>> {
    pairs
        .iter()
        .map(|(_, g)| LabelMap::read_png(g).stage("reading ground truth"))
        .collect()
}

fn miou_of(preds: &[LabelMap], gts: &[LabelMap], classes: usize) -> Result<MIoUReport> {
    let refs: Vec<(&LabelMap, &LabelMap)> = preds.iter().zip(gts).collect();
    compute_miou(&refs, classes, IGNORE_INDEX).stage("evaluation")
}

/// Per-image report; `None` when every ground-truth pixel is ignored.
fn per_image_miou(pred: &LabelMap, gt: &LabelMap, classes: usize) -> Result<Option<MIoUReport>> {
    if gt.labels.iter().all(|&l| l == IGNORE_INDEX) {
        return Ok(None);
    }
    compute_miou(&[(pred, gt)], classes, IGNORE_INDEX)
        .map(Some)
        .stage("evaluation")
}

fn iou_fields(report: Option<&MIoUReport>, classes: usize) -> Vec<String> {
    let mut out = vec![report.map(|r| fmt_f64(r.miou)).unwrap_or_default()];
    for c in 0..classes {
        out.push(
            report
                .and_then(|r| r.per_class_iou[c])
                .map(fmt_f64)
                .unwrap_or_default(),
        );
    }
    out
}

#[derive(Debug, Serialize)]
struct EvalBody<'a> {
    pairs: Vec<BTreeMap<&'static str, &'a Path>>,
    per_image_csv: &'static str,
    report: &'a MIoUReport,
}

/// Aggregated report in `eval.json`, one row per pair in `per_image.csv`.
pub fn run_eval(cfg: &RunConfig, images: &[PathBuf], gts: &[PathBuf]) -> Result<MIoUReport> {
    let pairs = resolve_pairs(images, gts)?;
    let model = Model::load(cfg)?;
    let gt_maps = load_gts(&pairs)?;
    let preds = predict_pairs(cfg, &model, &cfg.surgery, &pairs, &gt_maps)?;
    let classes = model.text.num_classes();
    let report = miou_of(&preds, &gt_maps, classes)?;

    let mut header = vec!["image".to_string(), "gt".into(), "miou".into()];
    header.extend(model.text.class_names.iter().map(|n| format!("iou_{n}")));
    let mut rows = Vec::with_capacity(pairs.len());
    for ((img, gt), (p, g)) in pairs.iter().zip(preds.iter().zip(&gt_maps)) {
        let r = per_image_miou(p, g, classes)?;
        let mut row = vec![img.display().to_string(), gt.display().to_string()];
        row.extend(iou_fields(r.as_ref(), classes));
        rows.push(row);
    }
    write_atomic(
        &cfg.out_dir.join("per_image.csv"),
        &csv_bytes(&header, &rows)?,
    )?;
    let body = EvalBody {
        pairs: pairs
            .iter()
            .map(|(i, g)| BTreeMap::from([("image", i.as_path()), ("gt", g.as_path())]))
            .collect(),
        per_image_csv: "per_image.csv",
        report: &report,
    };
    write_json(
        &cfg.out_dir.join("eval.json"),
        &manifest("eval", cfg, &model, body),
    )?;
    log::info!("mIoU {:.4} over {} pairs", report.miou, pairs.len());
    Ok(report)
}

/// Arithmetic mean of per-image records, field by field.
pub fn average_records(per_image: &[Vec<StatsRecord>]) -> Result<Vec<StatsRecord>> {
    let first = per_image
        .first()
        .ok_or_else(|| CliError::Input("no statistics to average".into()))?;
    let n = per_image.len() as f64;
    let mut out = first.clone();
    for (i, rec) in out.iter_mut().enumerate() {
        let mut entropy = 0.0;
        let mut fro = 0.0;
        let mut max = 0.0;
        let mut means = vec![0.0; rec.channel_means.len()];
        for img in per_image {
            let r = &img[i];
            entropy += r.entropy;
            fro += r.fro_norm;
            max += r.max_value;
            for (m, v) in means.iter_mut().zip(&r.channel_means) {
                *m += v;
            }
        }
        rec.entropy = entropy / n;
        rec.fro_norm = fro / n;
        rec.max_value = max / n;
        rec.channel_means = means.into_iter().map(|m| m / n).collect();
    }
    Ok(out)
}

pub fn stats_csv(records: &[StatsRecord]) -> Result<Vec<u8>> {
    let d = records.first().map_or(0, |r| r.channel_means.len());
    let mut header: Vec<String> = ["layer", "branch", "entropy", "fro_norm", "max"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..d).map(|i| format!("channel_mean_{i}")));
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let mut row = vec![
                r.layer.to_string(),
                r.branch.as_str().to_string(),
                fmt_f64(r.entropy),
                fmt_f64(r.fro_norm),
                fmt_f64(r.max_value),
            ];
            row.extend(r.channel_means.iter().map(|v| fmt_f64(*v)));
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

#[derive(Debug, Serialize)]
struct StatsBody<'a> {
    inputs: &'a [PathBuf],
    branches: Vec<&'static str>,
    csv: &'static str,
}

/// Whole-image traced forward pass per input; mean statistics in `stats.csv`.
pub fn run_stats(cfg: &RunConfig, images: &[PathBuf]) -> Result<Vec<StatsRecord>> {
    let inputs = resolve_inputs(images)?;
    let model = Model::load(cfg)?;
    let per_image = with_pool(cfg.jobs, || {
        inputs
            .par_iter()
            .map(|path| {
                let img = model.prepare(path)?;
                let (_, traces) = model
                    .encoder
                    .encode_dense(&img.pixels, Some(&cfg.surgery), true)
                    .stage("encoding")?;
                let traces = traces.expect("tracing requested");
                layer_report(&traces, cfg.tokens).stage("statistics")
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let records = average_records(&per_image)?;
    write_atomic(&cfg.out_dir.join("stats.csv"), &stats_csv(&records)?)?;
    let body = StatsBody {
        inputs: &inputs,
        branches: Branch::ALL.iter().map(|b| b.as_str()).collect(),
        csv: "stats.csv",
    };
    write_json(
        &cfg.out_dir.join("stats.json"),
        &manifest("stats", cfg, &model, body),
    )?;
    Ok(records)
}

/// Cartesian sweep axes.
#[derive(Debug, Clone, Serialize)]
pub struct AblationGrid {
    pub attn_modes: Vec<AttnMode>,
    pub residual: Vec<bool>,
    pub ffn: Vec<bool>,
    pub alphas: Vec<f32>,
    pub betas: Vec<f32>,
}

impl AblationGrid {
    /// Configurations in attention-major order.
    pub fn configs(&self) -> Vec<SurgeryConfig> {
        let mut out = Vec::new();
        for &attn_mode in &self.attn_modes {
            for &keep_residual in &self.residual {
                for &keep_ffn in &self.ffn {
                    for &alpha in &self.alphas {
                        for &beta in &self.betas {
                            out.push(SurgeryConfig {
                                attn_mode,
                                keep_residual,
                                keep_ffn,
                                alpha,
                                residual_mask_beta: beta,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub surgery: SurgeryConfig,
    pub miou: f64,
}

#[derive(Debug, Serialize)]
struct AblateBody<'a> {
    grid: &'a AblationGrid,
    pairs: usize,
    csv: &'static str,
}

/// One mIoU row per grid configuration in `ablation.csv`, flushed as each finishes.
pub fn run_ablate(
    cfg: &RunConfig,
    images: &[PathBuf],
    gts: &[PathBuf],
    grid: &AblationGrid,
) -> Result<Vec<AblationRow>> {
    let configs = grid.configs();
    if configs.is_empty() {
        return Err(CliError::Input("empty ablation grid".into()));
    }
    for s in &configs {
        s.validate().map_err(|e| CliError::Input(e.to_string()))?;
    }
    let pairs = resolve_pairs(images, gts)?;
    let model = Model::load(cfg)?;
    let gt_maps = load_gts(&pairs)?;
    let classes = model.text.num_classes();
    let body = AblateBody {
        grid,
        pairs: pairs.len(),
        csv: "ablation.csv",
    };
    write_json(
        &cfg.out_dir.join("ablation.json"),
        &manifest("ablate", cfg, &model, body),
    )?;

    let path = cfg.out_dir.join("ablation.csv");
    let file = File::create(&path).map_err(|source| CliError::Io {
        path: path.clone(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let csv_err = |e: &dyn std::fmt::Display| CliError::Output {
        path: path.clone(),
        msg: e.to_string(),
    };
    let mut header = ["config", "attn", "residual", "ffn", "alpha", "beta", "miou"]
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>();
    header.extend(model.text.class_names.iter().map(|n| format!("iou_{n}")));
    w.write_record(&header).map_err(|e| csv_err(&e))?;
    w.flush().map_err(|e| csv_err(&e))?;

    let mut rows = Vec::with_capacity(configs.len());
    for (i, s) in configs.iter().enumerate() {
        let preds = predict_pairs(cfg, &model, s, &pairs, &gt_maps)?;
        let report = miou_of(&preds, &gt_maps, classes)?;
        let mut rec = vec![
            i.to_string(),
            s.attn_mode.as_str().to_string(),
            s.keep_residual.to_string(),
            s.keep_ffn.to_string(),
            s.alpha.to_string(),
            s.residual_mask_beta.to_string(),
        ];
        rec.extend(iou_fields(Some(&report), classes));
        w.write_record(&rec).map_err(|e| csv_err(&e))?;
        w.flush().map_err(|e| csv_err(&e))?;
        w.get_ref().sync_data().map_err(|e| csv_err(&e))?;
        log::info!("config {i} ({}): mIoU {:.4}", s.attn_mode, report.miou);
        rows.push(AblationRow {
            surgery: *s,
            miou: report.miou,
        });
    }
    w.into_inner()
        .map_err(|e| csv_err(&e))?
        .flush()
        .map_err(|e| csv_err(&e))?;
    Ok(rows)
}
