use serde::{Deserialize, Serialize};

use super::labels::LabelMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIoUReport {
    pub num_classes: usize,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    /// `confusion[gt][pred]` pixel counts.
    pub confusion: Vec<Vec<u64>>,
    pub ignored_pixels: u64,
}

fn check_label(v: u32, num_classes: usize, what: &str) -> Result<usize> {
    if (v as usize) < num_classes {
        Ok(v as usize)
    } else {
        Err(Error::Data(format!(
            "{what} label {v} is outside 0..{num_classes}"
        )))
    }
}

/// Confusion-matrix mIoU over all pairs; `ignore_index` pixels in the ground truth are skipped.
pub fn compute_miou(
    pairs: &[(&LabelMap, &LabelMap)],
    num_classes: usize,
    ignore_index: u32,
) -> Result<MIoUReport> {
    let mut confusion = vec![vec![0u64; num_classes]; num_classes];
    let mut ignored = 0u64;
    for (i, (pred, gt)) in pairs.iter().enumerate() {
        if (pred.height, pred.width) != (gt.height, gt.width) {
            return Err(Error::Dimension(format!(
                "pair {i}: prediction {}×{} vs ground truth {}×{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
            if g == ignore_index {
                ignored += 1;
                continue;
            }
            let g = check_label(g, num_classes, "ground-truth")?;
            let p = check_label(p, num_classes, "predicted")?;
            confusion[g][p] += 1;
        }
    }
    let per_class_iou: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            let tp = confusion[c][c];
            let fn_ = confusion[c].iter().sum::<u64>() - tp;
            let fp = (0..num_classes).map(|g| confusion[g][c]).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            (union > 0).then(|| tp as f64 / union as f64)
        })
        .collect();
    let valid: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::Data(
            "mean IoU is undefined: no evaluated pixels".into(),
        ));
    }
    let miou = valid.iter().sum::<f64>() / valid.len() as f64;
    Ok(MIoUReport {
        num_classes,
        per_class_iou,
        miou,
        confusion,
        ignored_pixels: ignored,
    })
}
