//! Shared domain types: score vectors, frames, section geometry and poses.

use std::ops::Range;

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of vertical sections used when nothing else is configured.
pub const DEFAULT_SECTIONS: usize = 9;

/// Per-section traversability scores, each in `[0, 1]`.
///
/// 0 means the section is blocked right in front of the robot, 1 means it is
/// free up to the top of the image.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct TraversabilityVector(Vec<f64>);

impl TraversabilityVector {
    /// Validates the scores; rejects NaN and anything outside `[0, 1]`.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::config("traversability vector needs at least one section"));
        }
        if let Some((i, s)) = scores
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::OutOfRange(format!("score[{i}] = {s} is outside [0, 1]")));
        }
        Ok(Self(scores))
    }

    pub fn filled(k: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; k])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl<'de> Deserialize<'de> for TraversabilityVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = Vec::<f64>::deserialize(d)?;
        TraversabilityVector::new(raw).map_err(serde::de::Error::custom)
    }
}

/// Saturates raw network outputs into a valid score vector.
///
/// NaN inputs map to 0 (the conservative end).
pub fn clamp_scores(raw: &[f64]) -> TraversabilityVector {
    TraversabilityVector(
        raw.iter()
            .map(|&v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect(),
    )
}

/// A `C x H x W` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pixels: Array3<f32>,
}

impl ImageFrame {
    pub fn new(pixels: Array3<f32>) -> Result<Self> {
        let (c, h, w) = pixels.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::config(format!("degenerate frame {c}x{h}x{w}")));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::OutOfRange("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self { pixels })
    }

    /// Wraps pixels already known to be valid (e.g. produced by clipping).
    pub(crate) fn from_clipped(pixels: Array3<f32>) -> Self {
        debug_assert!(pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        Self { pixels }
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn pixels(&self) -> &Array3<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array3<f32> {
        self.pixels
    }
}

/// Column boundaries of `k` near-equal vertical bands across an image width.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionLayout {
    width: usize,
    boundaries: Vec<usize>,
}

impl SectionLayout {
    /// Boundary `i` is `round(i * width / k)`, so band widths differ by at most one column.
    pub fn new(width: usize, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::config("section count k must be positive"));
        }
        if width < k {
            return Err(Error::config(format!(
                "cannot split width {width} into {k} sections"
            )));
        }
        let boundaries = (0..=k).map(|i| (2 * i * width + k) / (2 * k)).collect();
        Ok(Self { width, boundaries })
    }

    pub fn k(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    /// Column range of section `i`.
    pub fn band(&self, i: usize) -> Range<usize> {
        self.boundaries[i]..self.boundaries[i + 1]
    }

    pub fn bands(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.boundaries.windows(2).map(|w| w[0]..w[1])
    }

    /// Section containing column `col`.
    pub fn section_of(&self, col: usize) -> Option<usize> {
        if col >= self.width {
            return None;
        }
        Some(self.boundaries.partition_point(|&b| b <= col) - 1)
    }
}

/// Splits `frame` into `k` vertical bands.
pub fn split_sections(frame: &ImageFrame, k: usize) -> Result<SectionLayout> {
    if k > 0 && frame.height() < k {
        return Err(Error::config(format!(
            "frame height {} is smaller than section count {k}",
            frame.height()
        )));
    }
    SectionLayout::new(frame.width(), k)
}

/// Planar robot pose attached to a frame. Yaw is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseStamped {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub frame_index: u64,
    pub timestamp: f64,
}

impl PoseStamped {
    pub fn new(x: f64, y: f64, yaw: f64, frame_index: u64, timestamp: f64) -> Self {
        Self {
            x,
            y,
            yaw: normalize_yaw(yaw),
            frame_index,
            timestamp,
        }
    }
}

/// Wraps an angle in degrees into `[-180, 180]`.
pub fn normalize_yaw(deg: f64) -> f64 {
    if (-180.0..=180.0).contains(&deg) {
        return deg;
    }
    let wrapped = (deg + 180.0).rem_euclid(360.0) - 180.0;
    if wrapped == -180.0 && deg > 0.0 {
        180.0
    } else {
        wrapped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame(h: usize, w: usize) -> ImageFrame {
        ImageFrame::new(Array3::zeros((3, h, w))).unwrap()
    }

    #[test]
    fn single_section_is_identity() {
        let l = split_sections(&frame(128, 227), 1).unwrap();
        assert_eq!(l.boundaries(), &[0, 227]);
    }

    #[test]
    fn width_227_into_nine() {
        let l = split_sections(&frame(128, 227), 9).unwrap();
        // Oracle: enumerate floor-based and round-based boundaries, both must give widths 25/26.
        let widths: Vec<usize> = l.bands().map(|b| b.len()).collect();
        assert_eq!(widths.iter().sum::<usize>(), 227);
        assert!(widths.iter().all(|&w| w == 25 || w == 26), "{widths:?}");
        let floor_widths: Vec<usize> = (0..9).map(|i| (i + 1) * 227 / 9 - i * 227 / 9).collect();
        assert_eq!(floor_widths.iter().sum::<usize>(), 227);
        assert_eq!(l.boundaries(), &[0, 25, 50, 76, 101, 126, 151, 177, 202, 227]);
    }

    #[test]
    fn exact_division() {
        let l = split_sections(&frame(18, 18), 9).unwrap();
        assert!(l.bands().all(|b| b.len() == 2));
    }

    #[test]
    fn rejects_bad_k() {
        assert!(matches!(split_sections(&frame(20, 20), 0), Err(Error::Config(_))));
        assert!(matches!(split_sections(&frame(20, 8), 9), Err(Error::Config(_))));
        assert!(matches!(split_sections(&frame(4, 20), 9), Err(Error::Config(_))));
    }

    #[test]
    fn clamp_examples() {
        assert_eq!(clamp_scores(&[0.2, 0.9]).scores(), &[0.2, 0.9]);
        assert_eq!(clamp_scores(&[-0.3, 1.7]).scores(), &[0.0, 1.0]);
        assert_eq!(clamp_scores(&[0.5000001]).scores(), &[0.5000001]);
    }

    #[test]
    fn vector_rejects_invalid() {
        assert!(TraversabilityVector::new(vec![0.5, f64::NAN]).is_err());
        assert!(TraversabilityVector::new(vec![1.01]).is_err());
        assert!(TraversabilityVector::new(vec![]).is_err());
        assert!(serde_json::from_str::<TraversabilityVector>("[0.2, 1.5]").is_err());
        let v: TraversabilityVector = serde_json::from_str("[0.2, 1.0]").unwrap();
        assert_eq!(v.k(), 2);
    }

    #[test]
    fn yaw_wraps() {
        assert_eq!(normalize_yaw(190.0), -170.0);
        assert_eq!(normalize_yaw(-190.0), 170.0);
        assert_eq!(normalize_yaw(540.0), 180.0);
        assert_eq!(PoseStamped::new(0.0, 0.0, 360.0, 0, 0.0).yaw, 0.0);
    }

    proptest! {
        #[test]
        fn bands_partition_width(w in 1usize..2000, k in 1usize..64) {
            prop_assume!(w >= k);
            let l = SectionLayout::new(w, k).unwrap();
            let mut covered = vec![0u8; w];
            for b in l.bands() {
                prop_assert!(!b.is_empty());
                for c in b { covered[c] += 1; }
            }
            prop_assert!(covered.iter().all(|&c| c == 1));
            let widths: Vec<usize> = l.bands().map(|b| b.len()).collect();
            prop_assert!(widths.iter().max().unwrap() - widths.iter().min().unwrap() <= 1);
            for c in 0..w {
                prop_assert!(l.band(l.section_of(c).unwrap()).contains(&c));
            }
        }

        #[test]
        fn clamp_idempotent(raw in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
            let once = clamp_scores(&raw);
            prop_assert_eq!(clamp_scores(once.scores()), once);
        }

        #[test]
        fn yaw_in_range(deg in -5000.0f64..5000.0) {
            let y = normalize_yaw(deg);
            prop_assert!((-180.0..=180.0).contains(&y));
            let d = (y - deg).rem_euclid(360.0);
            prop_assert!(d < 1e-9 || (360.0 - d) < 1e-9);
        }
    }
}
