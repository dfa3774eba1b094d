//! From raw counts to log-normalized projections and measurement weights.
//!
//! The fixed pipeline order is: median filter the counts and the open beam,
//! optionally clip the counts (the FDK treatment), take `ln(open/counts)`,
//! undo the per-view detector shifts, then derive weights from the same
//! filtered, shift-corrected counts and optionally threshold them (the MBIR
//! treatment). [`crate::pipeline`] wires the steps together.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[allow(unused_imports)]
use crate::prelude::*;
use crate::geometry::{ProjectionKind, ProjectionStack};
use crate::{par, Error, Result};

pub const DEFAULT_MEDIAN_WINDOW: usize = 7;
/// Counts below this are rejected by [`threshold_weights`].
pub const DEFAULT_THRESHOLD: f64 = 50.0;
/// Floor applied by [`clip_counts`] before FDK.
pub const DEFAULT_CLIP_FLOOR: f64 = 50.0;
/// Count substituted for zero (or smaller) counts inside the logarithm so
/// that every log value stays finite.
pub const LOG_COUNT_FLOOR: f64 = 0.5;

/// Diagonal measurement weights, laid out like a [`ProjectionStack`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub values: Vec<f64>,
    pub threshold_used: Option<f64>,
}

impl WeightSet {
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Data(format!("weight {i} is negative or non-finite")));
        }
        Ok(())
    }

    /// Zeros every weight whose `valid` flag is false.
    pub fn mask(&mut self, valid: &[bool]) -> Result<()> {
        if valid.len() != self.values.len() {
            return Err(Error::shape(self.values.len(), valid.len()));
        }
        for (w, &ok) in self.values.iter_mut().zip(valid) {
            if !ok {
                *w = 0.0;
            }
        }
        Ok(())
    }

    pub fn rejected_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().filter(|&&w| w == 0.0).count() as f64 / self.values.len() as f64
    }
}

/// Reflect-101 index: `… 2 1 | 0 1 2 … n−1 | n−2 …`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// `window × window` median of a row-major image with reflected borders.
pub fn median_filter(image: &[f64], rows: usize, cols: usize, window: usize) -> Result<Vec<f64>> {
    if image.len() != rows * cols {
        return Err(Error::shape(rows * cols, image.len()));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::Parameter(format!(
            "median window must be odd and >= 1, got {window}"
        )));
    }
    if window > rows.min(cols) {
        return Err(Error::Parameter(format!(
            "median window {window} exceeds image size {rows}x{cols}"
        )));
    }
    if window == 1 {
        return Ok(image.to_vec());
    }
    let half = (window / 2) as isize;
    let mid = window * window / 2;
    let mut buf = Vec::with_capacity(window * window);
    let mut out = vec![0.0; image.len()];
    for r in 0..rows {
        for c in 0..cols {
            buf.clear();
            for dr in -half..=half {
                let rr = reflect(r as isize + dr, rows);
                for dc in -half..=half {
                    buf.push(image[rr * cols + reflect(c as isize + dc, cols)]);
                }
            }
            let (_, m, _) = buf.select_nth_unstable_by(mid, f64::total_cmp);
            out[r * cols + c] = *m;
        }
    }
    Ok(out)
}

/// Applies [`median_filter`] to every view.
pub fn median_filter_stack(stack: &ProjectionStack, window: usize) -> Result<ProjectionStack> {
    stack.check_len()?;
    let rows = stack.geometry.detector_rows;
    let cols = stack.geometry.detector_cols;
    // Validate once so per-view failures cannot happen.
    median_filter(&stack.values[..rows * cols], rows, cols, window)?;
    let mut out = stack.clone();
    par::for_each_chunk_mut(&mut out.values, rows * cols, |view, img| {
        let filtered = median_filter(stack.view(view), rows, cols, window).expect("validated");
        img.copy_from_slice(&filtered);
    });
    Ok(out)
}

/// `g = ln(open / max(counts, LOG_COUNT_FLOOR))`.
pub fn normalize_and_log(counts: &ProjectionStack, open_beam: &ProjectionStack) -> Result<ProjectionStack> {
    counts.check_len()?;
    open_beam.check_len()?;
    if !counts.same_shape(open_beam) {
        return Err(Error::shape(
            format!("{} views", counts.n_views()),
            format!("{} open-beam views", open_beam.n_views()),
        ));
    }
    if let Some(i) = open_beam.values.iter().position(|&o| !(o > 0.0)) {
        return Err(Error::Data(format!("open-beam pixel {i} is not positive")));
    }
    if let Some(i) = counts.values.iter().position(|c| c.is_nan()) {
        return Err(Error::Data(format!("count {i} is NaN")));
    }
    let values = counts
        .values
        .iter()
        .zip(&open_beam.values)
        .map(|(&c, &o)| (o / c.max(LOG_COUNT_FLOOR)).ln())
        .collect();
    Ok(ProjectionStack {
        geometry: counts.geometry.clone(),
        kind: ProjectionKind::LogNormalized,
        values,
    })
}

/// Projections translated back onto the unshifted detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftCorrected {
    pub projections: ProjectionStack,
    /// False where the translation vacated a pixel; such pixels hold 0.
    pub valid: Vec<bool>,
}

/// Translates view `k` by `−shifts[k]`, undoing an acquisition that moved
/// the recorded image content by `shifts[k]`. The returned geometry has no
/// shifts.
pub fn apply_shift_correction(projections: &ProjectionStack, shifts: &[[i32; 2]]) -> Result<ShiftCorrected> {
    projections.check_len()?;
    let g = &projections.geometry;
    let (rows, cols) = (g.detector_rows, g.detector_cols);
    if shifts.len() != g.n_views() {
        return Err(Error::shape(
            format!("{} shifts", g.n_views()),
            shifts.len(),
        ));
    }
    if shifts
        .iter()
        .any(|s| s[0].unsigned_abs() as usize >= rows || s[1].unsigned_abs() as usize >= cols)
    {
        return Err(Error::Parameter("shift magnitude must be smaller than the image".into()));
    }
    let mut values = vec![0.0; projections.values.len()];
    let mut valid = vec![false; projections.values.len()];
    for (view, &[dr, dc]) in shifts.iter().enumerate() {
        let src = projections.view(view);
        let base = view * rows * cols;
        for r in 0..rows {
            let sr = r as isize + dr as isize;
            if sr < 0 || sr >= rows as isize {
                continue;
            }
            for c in 0..cols {
                let sc = c as isize + dc as isize;
                if sc < 0 || sc >= cols as isize {
                    continue;
                }
                values[base + r * cols + c] = src[sr as usize * cols + sc as usize];
                valid[base + r * cols + c] = true;
            }
        }
    }
    Ok(ShiftCorrected {
        projections: ProjectionStack {
            geometry: g.without_shifts(),
            kind: projections.kind,
            values,
        },
        valid,
    })
}

/// `W = λ`, elementwise.
pub fn weights_from_counts(counts: &ProjectionStack) -> Result<WeightSet> {
    if counts.kind != ProjectionKind::Counts {
        return Err(Error::Data("weights need a count stack".into()));
    }
    counts.validate()?;
    Ok(WeightSet {
        values: counts.values.clone(),
        threshold_used: None,
    })
}

/// Zeros every weight whose count is below `threshold`; counts at the
/// threshold are kept.
pub fn threshold_weights(weights: &WeightSet, threshold: f64) -> Result<WeightSet> {
    if !(threshold >= 0.0) {
        return Err(Error::Parameter("threshold must be nonnegative".into()));
    }
    Ok(WeightSet {
        values: weights
            .values
            .iter()
            .map(|&w| if w >= threshold { w } else { 0.0 })
            .collect(),
        threshold_used: Some(threshold),
    })
}

/// `counts ← max(counts, floor)`.
pub fn clip_counts(counts: &ProjectionStack, floor: f64) -> Result<ProjectionStack> {
    if !(floor > 0.0) {
        return Err(Error::Parameter("clip floor must be positive".into()));
    }
    let mut out = counts.clone();
    out.values.iter_mut().for_each(|c| *c = c.max(floor));
    Ok(out)
}
