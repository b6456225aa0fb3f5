//! Frame manifests, pose-based near-duplicate removal, annotation documents and splits.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{ImageFrame, PoseStamped, TraversabilityVector};

/// Domain label of a frame. `on_road` and `off_road` are the usual values,
/// but any label is accepted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Domain(pub String);

impl Domain {
    pub fn on_road() -> Self {
        Domain("on_road".into())
    }

    pub fn off_road() -> Self {
        Domain("off_road".into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    /// Path as written in the manifest; relative paths resolve against the manifest directory.
    pub image_path: String,
    pub pose: PoseStamped,
    pub domain: Domain,
}

/// One manifest line.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestLine {
    image_path: String,
    x: f64,
    y: f64,
    yaw: f64,
    frame_index: u64,
    timestamp: f64,
    domain: Domain,
}

impl From<&FrameRecord> for ManifestLine {
    fn from(r: &FrameRecord) -> Self {
        ManifestLine {
            image_path: r.image_path.clone(),
            x: r.pose.x,
            y: r.pose.y,
            yaw: r.pose.yaw,
            frame_index: r.pose.frame_index,
            timestamp: r.pose.timestamp,
            domain: r.domain.clone(),
        }
    }
}

impl From<ManifestLine> for FrameRecord {
    fn from(l: ManifestLine) -> Self {
        FrameRecord {
            image_path: l.image_path,
            pose: PoseStamped::new(l.x, l.y, l.yaw, l.frame_index, l.timestamp),
            domain: l.domain,
        }
    }
}

/// A parsed manifest: records in `frame_index` order plus the directory
/// relative image paths are resolved against.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub records: Vec<FrameRecord>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(&line).map_err(|source| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?;
            records.push(FrameRecord::from(parsed));
        }
        records.sort_by_key(|r| r.pose.frame_index);
        let base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { base_dir, records })
    }

    pub fn resolve(&self, record: &FrameRecord) -> PathBuf {
        let p = Path::new(&record.image_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

pub fn write_manifest(path: &Path, records: &[FrameRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&ManifestLine::from(r))?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Thresholds for pose-based frame selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// Yaw threshold, degrees.
    pub theta_th: f64,
    /// Displacement threshold, meters.
    pub dist_th: f64,
    pub comb_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            theta_th: 40.0,
            dist_th: 0.8,
            comb_threshold: 1.0,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("theta_th", self.theta_th),
            ("dist_th", self.dist_th),
            ("comb_threshold", self.comb_threshold),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Yaw difference normalized by `theta_th`, taking the short way around the circle.
pub fn angular_difference(theta_i: f64, theta_j: f64, theta_th: f64) -> Result<f64> {
    if !(theta_th > 0.0) {
        return Err(Error::config(format!("theta_th must be positive, got {theta_th}")));
    }
    let mut d = (theta_i - theta_j).abs();
    if d > 180.0 {
        d = 360.0 - d;
    }
    Ok(d / theta_th)
}

/// Planar displacement normalized by `dist_th`.
pub fn linear_displacement(p_i: &PoseStamped, p_j: &PoseStamped, dist_th: f64) -> Result<f64> {
    if !(dist_th > 0.0) {
        return Err(Error::config(format!("dist_th must be positive, got {dist_th}")));
    }
    Ok((p_i.x - p_j.x).hypot(p_i.y - p_j.y) / dist_th)
}

/// Combined normalized pose change between a candidate and a reference pose.
pub fn pose_change(candidate: &PoseStamped, reference: &PoseStamped, cfg: &SelectionConfig) -> Result<f64> {
    Ok(linear_displacement(candidate, reference, cfg.dist_th)?
        + angular_difference(candidate.yaw, reference.yaw, cfg.theta_th)?)
}

/// Greedy near-duplicate removal. The first record is kept; every later record is
/// kept when its pose change relative to the last kept record strictly exceeds
/// `comb_threshold`.
pub fn select_frames(records: &[FrameRecord], cfg: &SelectionConfig) -> Result<Vec<FrameRecord>> {
    cfg.validate()?;
    let mut selected: Vec<FrameRecord> = Vec::new();
    for r in records {
        let keep = match selected.last() {
            None => true,
            Some(last) => pose_change(&r.pose, &last.pose, cfg)? > cfg.comb_threshold,
        };
        if keep {
            selected.push(r.clone());
        }
    }
    Ok(selected)
}

/// Per-section cutoff lines, normalized by image height and measured from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    cutoff_y: Vec<f64>,
}

impl Annotation {
    pub fn new(cutoff_y: Vec<f64>) -> Result<Self> {
        if cutoff_y.is_empty() {
            return Err(Error::config("annotation needs at least one section"));
        }
        if let Some((i, c)) = cutoff_y
            .iter()
            .enumerate()
            .find(|(_, c)| !(0.0..=1.0).contains(*c))
        {
            return Err(Error::OutOfRange(format!("cutoff_y[{i}] = {c} is outside [0, 1]")));
        }
        Ok(Self { cutoff_y })
    }

    /// Inverse of [`annotation_to_scores`].
    pub fn from_scores(scores: &TraversabilityVector) -> Self {
        Self {
            cutoff_y: scores.scores().iter().map(|s| 1.0 - s).collect(),
        }
    }

    /// Builds an annotation from pixel rows, normalizing by the image height.
    pub fn from_pixel_rows(rows: &[f64], height: usize) -> Result<Self> {
        Self::new(rows.iter().map(|r| r / height as f64).collect())
    }

    pub fn k(&self) -> usize {
        self.cutoff_y.len()
    }

    pub fn cutoff_y(&self) -> &[f64] {
        &self.cutoff_y
    }
}

pub fn annotation_to_scores(a: &Annotation) -> TraversabilityVector {
    TraversabilityVector::new(a.cutoff_y.iter().map(|c| 1.0 - c).collect())
        .expect("cutoffs are validated to [0, 1]")
}

/// On-disk annotation document. Scores are always derived from `cutoff_y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub image_path: String,
    pub k: usize,
    pub cutoff_y: Vec<f64>,
    pub annotator_id: String,
    /// Unix seconds.
    pub created_at: u64,
}

impl AnnotationDoc {
    pub fn validate(&self) -> Result<Annotation> {
        if self.cutoff_y.len() != self.k {
            return Err(Error::shape(
                format!("{} cutoffs", self.k),
                format!("{} cutoffs", self.cutoff_y.len()),
            ));
        }
        Annotation::new(self.cutoff_y.clone())
    }

    pub fn scores(&self) -> Result<TraversabilityVector> {
        Ok(annotation_to_scores(&self.validate()?))
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// Annotation file for an image: `<dir>/<image file stem>.json`.
pub fn annotation_path(dir: &Path, image_path: &str) -> PathBuf {
    let stem = Path::new(image_path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image_path.replace(['/', '\\'], "_"));
    dir.join(format!("{stem}.json"))
}

pub fn read_annotation(path: &Path) -> Result<AnnotationDoc> {
    let bytes = fs::read(path)?;
    let doc: AnnotationDoc = serde_json::from_slice(&bytes)?;
    doc.validate()?;
    Ok(doc)
}

/// Validates and writes an annotation document atomically.
pub fn write_annotation(dir: &Path, doc: &AnnotationDoc) -> Result<PathBuf> {
    doc.validate()?;
    let path = annotation_path(dir, &doc.image_path);
    write_atomic(&path, &doc.to_json_bytes()?)?;
    Ok(path)
}

/// Writes via a temporary file in the destination directory followed by a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Seconds since the Unix epoch, honoring `SOURCE_DATE_EPOCH` for reproducible artifacts.
pub fn timestamp_now() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<u64>().ok())
    {
        return epoch;
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Deterministic shuffled split; the training side gets `floor(n * fraction)` items.
pub fn split_train_test<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let n = items.len();
    let n_train = (n as f64 * fraction + 1e-9).floor() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "fraction {fraction} leaves an empty side for {n} items"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// A labelled frame ready for training or evaluation.
#[derive(Debug, Clone)]
pub struct Sample {
    pub frame: ImageFrame,
    pub scores: Option<TraversabilityVector>,
    pub domain: Domain,
}

pub fn load_frame(path: &Path) -> Result<ImageFrame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut pixels = Array3::<f32>::zeros((3, h as usize, w as usize));
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            pixels[[c, y as usize, x as usize]] = p[c] as f32 / 255.0;
        }
    }
    Ok(ImageFrame::from_clipped(pixels))
}

pub fn frame_to_rgb8(frame: &ImageFrame) -> image::RgbImage {
    let px = frame.pixels();
    let (c, h, w) = px.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let mut rgb = [0u8; 3];
        for (ch, v) in rgb.iter_mut().enumerate() {
            let src = if c >= 3 { ch } else { 0 };
            *v = (px[[src, y as usize, x as usize]] * 255.0).round() as u8;
        }
        Rgb(rgb)
    })
}

pub fn save_frame(frame: &ImageFrame, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    frame_to_rgb8(frame).save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear resize so the shorter side equals `side`. Frames already at that size are returned as is.
pub fn resize_shortest_side(frame: ImageFrame, side: usize) -> ImageFrame {
    let (h, w) = (frame.height(), frame.width());
    if h.min(w) == side || side == 0 {
        return frame;
    }
    let (nh, nw) = if h <= w {
        (side, ((w as f64 * side as f64 / h as f64).round() as usize).max(1))
    } else {
        (((h as f64 * side as f64 / w as f64).round() as usize).max(1), side)
    };
    let px = frame.pixels();
    let c = px.dim().0.min(3);
    let buf: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let mut rgb = [0f32; 3];
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v = px[[ch.min(c - 1), y as usize, x as usize]];
        }
        Rgb(rgb)
    });
    let resized = image::imageops::resize(&buf, nw as u32, nh as u32, FilterType::Triangle);
    let mut out = Array3::<f32>::zeros((3, nh, nw));
    for (x, y, p) in resized.enumerate_pixels() {
        for ch in 0..3 {
            out[[ch, y as usize, x as usize]] = p[ch].clamp(0.0, 1.0);
        }
    }
    ImageFrame::from_clipped(out)
}

/// Loads every manifest frame that has an annotation (or all frames when
/// `annotations` is `None`, leaving scores empty).
pub fn load_samples(
    manifest: &Manifest,
    annotations: Option<&Path>,
    short_side: Option<usize>,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let scores = match annotations {
            Some(dir) => {
                let path = annotation_path(dir, &rec.image_path);
                if !path.exists() {
                    log::warn!("no annotation for {}, skipping", rec.image_path);
                    continue;
                }
                Some(read_annotation(&path)?.scores()?)
            }
            None => None,
        };
        let mut frame = load_frame(&manifest.resolve(rec))?;
        if let Some(side) = short_side {
            frame = resize_shortest_side(frame, side);
        }
        out.push(Sample {
            frame,
            scores,
            domain: rec.domain.clone(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn rec(i: u64, x: f64, y: f64, yaw: f64) -> FrameRecord {
        FrameRecord {
            image_path: format!("img_{i:05}.png"),
            pose: PoseStamped::new(x, y, yaw, i, i as f64 / 15.0),
            domain: Domain::off_road(),
        }
    }

    #[test]
    fn angular_examples() {
        assert_eq!(angular_difference(10.0, 10.0, 40.0).unwrap(), 0.0);
        assert_eq!(angular_difference(30.0, 10.0, 40.0).unwrap(), 0.5);
        assert_eq!(angular_difference(170.0, -170.0, 40.0).unwrap(), 0.5);
        assert!(angular_difference(1.0, 2.0, 0.0).is_err());
        assert!(angular_difference(1.0, 2.0, -4.0).is_err());
    }

    #[test]
    fn displacement_examples() {
        let o = PoseStamped::new(0.0, 0.0, 0.0, 0, 0.0);
        assert_eq!(linear_displacement(&o, &o, 0.8).unwrap(), 0.0);
        let a = PoseStamped::new(0.8, 0.0, 0.0, 1, 0.0);
        assert_eq!(linear_displacement(&a, &o, 0.8).unwrap(), 1.0);
        let b = PoseStamped::new(0.6, 0.8, 0.0, 2, 0.0);
        assert!((linear_displacement(&b, &o, 0.8).unwrap() - 1.25).abs() < 1e-12);
        assert!(linear_displacement(&b, &o, 0.0).is_err());
    }

    #[test]
    fn selection_examples() {
        let cfg = SelectionConfig::default();
        assert!(select_frames(&[], &cfg).unwrap().is_empty());
        let one = vec![rec(0, 1.0, 2.0, 3.0)];
        assert_eq!(select_frames(&one, &cfg).unwrap(), one);
        // dtheta = 20/40 = 0.5, dist = 1.0/0.8 = 1.25
        let two = vec![rec(0, 0.0, 0.0, 10.0), rec(1, 0.6, 0.8, 30.0)];
        assert_eq!(select_frames(&two, &cfg).unwrap().len(), 2);
        let still: Vec<_> = (0..100).map(|i| rec(i, 1.0, 1.0, 45.0)).collect();
        let sel = select_frames(&still, &cfg).unwrap();
        assert_eq!(sel.len(), 1);
        assert_eq!(sel[0].pose.frame_index, 0);
    }

    #[test]
    fn selection_tie_is_rejected() {
        let cfg = SelectionConfig::default();
        let tie = vec![rec(0, 0.0, 0.0, 0.0), rec(1, 0.8, 0.0, 0.0)];
        assert_eq!(select_frames(&tie, &cfg).unwrap().len(), 1);
    }

    #[test]
    fn selection_uses_last_selected_reference() {
        let cfg = SelectionConfig::default();
        // Each step moves 0.5 m: adjacent pairs never exceed 1, but the drift from
        // the last kept frame does every second step.
        let trace: Vec<_> = (0..5).map(|i| rec(i, 0.5 * i as f64, 0.0, 0.0)).collect();
        let idx: Vec<u64> = select_frames(&trace, &cfg)
            .unwrap()
            .iter()
            .map(|r| r.pose.frame_index)
            .collect();
        assert_eq!(idx, vec![0, 2, 4]);
    }

    #[test]
    fn annotation_examples() {
        let s = annotation_to_scores(&Annotation::new(vec![1.0, 0.0]).unwrap());
        assert_eq!(s.scores(), &[0.0, 1.0]);
        let a = Annotation::from_pixel_rows(&[32.0], 128).unwrap();
        assert_eq!(a.cutoff_y(), &[0.25]);
        assert_eq!(annotation_to_scores(&a).scores(), &[0.75]);
        assert!(Annotation::new(vec![1.2]).is_err());
        assert!(Annotation::new(vec![-0.1]).is_err());
    }

    #[test]
    fn split_of_922_frames_is_737_185() {
        let items: Vec<usize> = (0..922).collect();
        let (train, test) = split_train_test(&items, 0.8, 7).unwrap();
        assert_eq!((train.len(), test.len()), (737, 185));
    }

    #[test]
    fn split_is_deterministic_partition() {
        let items: Vec<usize> = (0..10).collect();
        let a = split_train_test(&items, 0.8, 3).unwrap();
        let b = split_train_test(&items, 0.8, 3).unwrap();
        assert_eq!(a, b);
        let (train, test) = a;
        assert_eq!(train.len() + test.len(), 10);
        assert!(train.iter().all(|t| !test.contains(t)));
        assert!(split_train_test(&items, 0.0, 3).is_err());
        assert!(split_train_test(&items, 1.0, 3).is_err());
        assert!(split_train_test(&items[..1], 0.5, 3).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let recs = vec![rec(1, 0.5, 0.25, -90.0), rec(0, 0.0, 0.0, 179.0)];
        write_manifest(&path, &recs).unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.records, vec![recs[1].clone(), recs[0].clone()]);
        assert_eq!(m.resolve(&m.records[0]), dir.path().join("img_00000.png"));
    }

    #[test]
    fn annotation_doc_io() {
        let dir = tempfile::tempdir().unwrap();
        let doc = AnnotationDoc {
            image_path: "images/f_001.png".into(),
            k: 3,
            cutoff_y: vec![0.0, 0.5, 1.0],
            annotator_id: "a".into(),
            created_at: 1,
        };
        let path = write_annotation(dir.path(), &doc).unwrap();
        assert_eq!(path, dir.path().join("f_001.json"));
        let back = read_annotation(&path).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.scores().unwrap().scores(), &[1.0, 0.5, 0.0]);
        let bad = AnnotationDoc { k: 2, ..doc.clone() };
        assert!(write_annotation(dir.path(), &bad).is_err());
    }

    #[test]
    fn frame_png_round_trip_and_resize() {
        let dir = tempfile::tempdir().unwrap();
        let mut px = Array3::<f32>::zeros((3, 8, 12));
        px[[0, 2, 3]] = 1.0;
        px[[1, 7, 11]] = 128.0 / 255.0;
        let f = ImageFrame::new(px).unwrap();
        let path = dir.path().join("f.png");
        save_frame(&f, &path).unwrap();
        let back = load_frame(&path).unwrap();
        assert_eq!(back, f);
        let r = resize_shortest_side(back, 4);
        assert_eq!((r.height(), r.width()), (4, 6));
    }

    /// Independent re-scan: walks indices, tracks the reference index explicitly and
    /// recomputes the normalized quantities inline.
    fn brute_force_select(trace: &[(f64, f64, f64)], cfg: &SelectionConfig) -> Vec<usize> {
        let mut kept = vec![];
        let mut reference: Option<usize> = None;
        for i in 0..trace.len() {
            let Some(j) = reference else {
                kept.push(i);
                reference = Some(i);
                continue;
            };
            let (xi, yi, ti) = trace[i];
            let (xj, yj, tj) = trace[j];
            let raw = (ti - tj).abs();
            let dtheta = if raw > 180.0 { 360.0 - raw } else { raw } / cfg.theta_th;
            let dist = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt() / cfg.dist_th;
            if dist + dtheta > cfg.comb_threshold {
                kept.push(i);
                reference = Some(i);
            }
        }
        kept
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn selection_matches_brute_force(seed in any::<u64>(), len in 0usize..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut x, mut y, mut yaw) = (0.0f64, 0.0f64, 0.0f64);
            let mut trace = vec![];
            for _ in 0..len {
                x += rng.gen_range(-0.3..0.3);
                y += rng.gen_range(-0.3..0.3);
                yaw = crate::types::normalize_yaw(yaw + rng.gen_range(-25.0..25.0));
                trace.push((x, y, yaw));
            }
            let recs: Vec<_> = trace.iter().enumerate().map(|(i, &(x, y, t))| rec(i as u64, x, y, t)).collect();
            let cfg = SelectionConfig::default();
            let got: Vec<usize> = select_frames(&recs, &cfg).unwrap().iter().map(|r| r.pose.frame_index as usize).collect();
            prop_assert_eq!(&got, &brute_force_select(&trace, &cfg));
            for w in got.windows(2) {
                prop_assert!(pose_change(&recs[w[1]].pose, &recs[w[0]].pose, &cfg).unwrap() > 1.0);
            }
        }

        #[test]
        fn angular_symmetric_and_bounded(a in -180.0f64..=180.0, b in -180.0f64..=180.0, th in 1.0f64..90.0) {
            let d1 = angular_difference(a, b, th).unwrap();
            prop_assert_eq!(d1, angular_difference(b, a, th).unwrap());
            prop_assert!(d1 <= 180.0 / th + 1e-12);
        }

        #[test]
        fn annotation_bijection(c in proptest::collection::vec(0.0f64..=1.0, 1..12)) {
            let a = Annotation::new(c.clone()).unwrap();
            let s = annotation_to_scores(&a);
            let back = Annotation::from_scores(&s);
            for (x, y) in back.cutoff_y().iter().zip(&c) {
                prop_assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
