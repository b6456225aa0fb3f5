//! Error metrics, safety statistics and overlay renderings.

use std::collections::BTreeMap;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::dataset::Domain;
use crate::error::{Error, Result};
use crate::types::{ImageFrame, SectionLayout, TraversabilityVector};

/// Overlay blend factor.
pub const OVERLAY_ALPHA: f32 = 0.45;
pub const GROUND_TRUTH_COLOR: [f32; 3] = [0.0, 1.0, 0.0];
pub const PREDICTION_COLOR: [f32; 3] = [1.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// A prediction counts as unsafe when it exceeds the target by more than this.
    pub unsafe_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae_all: f64,
    pub mae_per_domain: BTreeMap<String, f64>,
    pub unsafe_rate: f64,
    pub mean_unsafe_overshoot: f64,
    pub n_frames: usize,
    pub n_sections: usize,
    pub config: EvalConfig,
}

impl EvalReport {
    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

fn clamp01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

/// Metrics over aligned raw predictions, ground truth and domain labels.
/// Predictions are clamped to `[0, 1]` first.
pub fn compute_report(
    predictions: &[Vec<f64>],
    ground_truth: &[TraversabilityVector],
    domains: &[Domain],
    cfg: EvalConfig,
) -> Result<EvalReport> {
    if predictions.len() != ground_truth.len() || predictions.len() != domains.len() {
        return Err(Error::shape(
            format!("{} predictions and domains", ground_truth.len()),
            format!("{} predictions, {} domains", predictions.len(), domains.len()),
        ));
    }
    let first = ground_truth.first().ok_or_else(|| Error::Empty("nothing to evaluate".into()))?;
    let k = first.k();
    let mut abs_sum = 0.0;
    let mut unsafe_count = 0usize;
    let mut overshoot_sum = 0.0;
    let mut per_domain: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (i, ((pred, gt), domain)) in predictions.iter().zip(ground_truth).zip(domains).enumerate() {
        if pred.len() != k || gt.k() != k {
            return Err(Error::shape(
                format!("{k} sections"),
                format!("frame {i}: {} predicted, {} annotated", pred.len(), gt.k()),
            ));
        }
        let mut frame_abs = 0.0;
        for (&p, &t) in pred.iter().zip(gt.scores()) {
            let p = clamp01(p);
            frame_abs += (p - t).abs();
            if p > t + cfg.unsafe_tolerance {
                unsafe_count += 1;
            }
            overshoot_sum += (p - t).max(0.0);
        }
        abs_sum += frame_abs;
        let entry = per_domain.entry(domain.as_str().to_string()).or_default();
        entry.0 += frame_abs;
        entry.1 += 1;
    }
    let n_frames = predictions.len();
    let total = (n_frames * k) as f64;
    Ok(EvalReport {
        mae_all: abs_sum / total,
        mae_per_domain: per_domain
            .into_iter()
            .map(|(d, (sum, n))| (d, sum / (n * k) as f64))
            .collect(),
        unsafe_rate: unsafe_count as f64 / total,
        mean_unsafe_overshoot: overshoot_sum / total,
        n_frames,
        n_sections: k,
        config: cfg,
    })
}

/// First row below the non-traversable band for a score: `round((1 - t) * H)`.
pub fn cutoff_row(score: f64, height: usize) -> usize {
    (((1.0 - score.clamp(0.0, 1.0)) * height as f64).round() as usize).min(height)
}

fn blend_band(pixels: &mut Array3<f32>, cols: std::ops::Range<usize>, rows: usize, color: [f32; 3]) {
    for (c, &tint) in color.iter().enumerate() {
        for r in 0..rows {
            for x in cols.clone() {
                let v = &mut pixels[[c, r, x]];
                *v = (1.0 - OVERLAY_ALPHA) * *v + OVERLAY_ALPHA * tint;
            }
        }
    }
}

/// Draws the non-traversable region of every section: green for the ground
/// truth, then red for the prediction, each alpha-blended as
/// `out = (1 - a) * in + a * color`. The region spans the top rows down to the
/// cutoff (the part of the image beyond the first obstacle).
pub fn render_overlay(
    frame: &ImageFrame,
    ground_truth: &TraversabilityVector,
    prediction: &TraversabilityVector,
    layout: &SectionLayout,
) -> Result<ImageFrame> {
    let k = layout.k();
    if ground_truth.k() != k || prediction.k() != k {
        return Err(Error::shape(
            format!("{k} sections"),
            format!("{} ground truth, {} predicted", ground_truth.k(), prediction.k()),
        ));
    }
    if layout.width() != frame.width() {
        return Err(Error::shape(
            format!("layout width {}", layout.width()),
            format!("frame width {}", frame.width()),
        ));
    }
    let h = frame.height();
    let mut pixels = frame.pixels().clone();
    for (i, band) in layout.bands().enumerate() {
        blend_band(&mut pixels, band.clone(), cutoff_row(ground_truth.scores()[i], h), GROUND_TRUTH_COLOR);
        blend_band(&mut pixels, band, cutoff_row(prediction.scores()[i], h), PREDICTION_COLOR);
    }
    ImageFrame::new(pixels)
}
