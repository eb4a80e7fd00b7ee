use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    /// Row-major: all windows of the first row band, then the next.
    pub windows: Vec<Window>,
    pub crop: usize,
    pub stride: usize,
}

/// Window offsets along one axis.
///
/// Regular offsets `0, s, 2s, …` are kept while they stay below the last
/// valid offset `size − crop`; the final regular one is replaced by
/// `size − crop` so the last window touches the edge. If that leaves a gap
/// (possible when `stride > crop / 2`), windows are inserted until the axis
/// is covered.
fn axis_offsets(size: usize, crop: usize, stride: usize) -> Vec<usize> {
    if size <= crop {
        return vec![0];
    }
    let last = size - crop;
    let regular = last / stride + 1;
    let mut offsets: Vec<usize> = (0..(regular - 1).max(1)).map(|i| i * stride).collect();
    offsets.push(last);
    let mut covered = Vec::with_capacity(offsets.len());
    for o in offsets {
        while let Some(&prev) = covered.last() {
            if prev + crop >= o {
                break;
            }
            covered.push(prev + stride.min(crop));
        }
        covered.push(o);
    }
    covered
}

pub fn plan_windows(height: usize, width: usize, crop: usize, stride: usize) -> Result<WindowPlan> {
    if height == 0 || width == 0 || crop == 0 || stride == 0 {
        return Err(Error::Input(format!(
            "cannot plan {crop}px windows with stride {stride} over a {height}×{width} image"
        )));
    }
    let rows = axis_offsets(height, crop, stride);
    let cols = axis_offsets(width, crop, stride);
    let mut windows = Vec::with_capacity(rows.len() * cols.len());
    for &top in &rows {
        for &left in &cols {
            windows.push(Window {
                top,
                left,
                height: crop.min(height),
                width: crop.min(width),
            });
        }
    }
    Ok(WindowPlan {
        windows,
        crop,
        stride,
    })
}
