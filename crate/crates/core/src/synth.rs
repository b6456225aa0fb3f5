//! Procedural scenes with exact traversability ground truth.
//!
//! A scene is a textured ground plane with axis-aligned rectangular obstacles
//! drawn on top. Two ground styles act as two visual domains: for a fixed
//! geometry seed they share obstacle layout (and therefore labels) but differ in
//! texture and color statistics.

use std::path::Path;

use ndarray::Array3;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, AnnotationDoc, Domain, FrameRecord};
use crate::error::{Error, Result};
use crate::types::{ImageFrame, PoseStamped, SectionLayout, TraversabilityVector};

pub const DEFAULT_HEIGHT: usize = 128;
pub const DEFAULT_WIDTH: usize = 227;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundStyle {
    AsphaltLike,
    GrassLike,
}

impl GroundStyle {
    pub fn domain(self) -> Domain {
        Domain(self.name().to_string())
    }

    pub fn name(self) -> &'static str {
        match self {
            GroundStyle::AsphaltLike => "asphalt_like",
            GroundStyle::GrassLike => "grass_like",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "asphalt_like" | "asphalt" | "on_road" => Ok(GroundStyle::AsphaltLike),
            "grass_like" | "grass" | "off_road" => Ok(GroundStyle::GrassLike),
            other => Err(Error::config(format!("unknown ground style {other:?}"))),
        }
    }

    /// Obstacle colors typical for the domain.
    fn palette(self) -> &'static [[f32; 3]] {
        match self {
            GroundStyle::AsphaltLike => &[
                [0.82, 0.12, 0.10],
                [0.95, 0.55, 0.08],
                [0.12, 0.25, 0.75],
                [0.92, 0.92, 0.90],
                [0.08, 0.08, 0.10],
                [0.85, 0.80, 0.15],
            ],
            GroundStyle::GrassLike => &[
                [0.40, 0.26, 0.13],
                [0.58, 0.57, 0.54],
                [0.16, 0.12, 0.09],
                [0.76, 0.70, 0.50],
                [0.30, 0.20, 0.25],
                [0.62, 0.42, 0.30],
            ],
        }
    }
}

/// Inclusive pixel rectangle with a flat fill color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub ground_style: GroundStyle,
    pub obstacles: Vec<Obstacle>,
    pub noise_level: f32,
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty(height: usize, width: usize, ground_style: GroundStyle, seed: u64) -> Self {
        Self {
            height,
            width,
            ground_style,
            obstacles: Vec::new(),
            noise_level: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("scene must have positive size"));
        }
        if !(self.noise_level >= 0.0) {
            return Err(Error::config("noise level must be non-negative"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.x0 > o.x1 || o.y0 > o.y1 || o.x1 >= self.width || o.y1 >= self.height {
                return Err(Error::config(format!("obstacle {i} {o:?} is outside the image")));
            }
            if o.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return Err(Error::config(format!("obstacle {i} color outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; used to derive independent per-scene seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `stream` derived from `base`.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0xA076_1D64_78BD_642F)))
}

fn hash_unit(seed: u64, a: u64, b: u64) -> f32 {
    let h = splitmix64(seed ^ splitmix64(a.wrapping_mul(0x1_0000_0001) ^ b.rotate_left(32)));
    (h >> 40) as f32 / (1u64 << 24) as f32
}

/// Ground color at a pixel. A pure function of style, seed and position.
pub fn ground_texture(style: GroundStyle, seed: u64, row: usize, col: usize) -> [f32; 3] {
    let speckle = hash_unit(seed, row as u64, col as u64) - 0.5;
    match style {
        GroundStyle::AsphaltLike => {
            let v = 0.44 + 0.10 * speckle;
            [v, v, v + 0.02]
        }
        GroundStyle::GrassLike => {
            // vertical blade streaks plus per-pixel speckle
            let streak = hash_unit(seed ^ 0x5EED, col as u64, (row / 4) as u64) - 0.5;
            let g = 0.50 + 0.12 * streak + 0.06 * speckle;
            [0.22 + 0.05 * streak, g, 0.14 + 0.03 * speckle]
        }
    }
}

/// Rasterizes the scene: ground texture, obstacles on top, then additive uniform noise clipped to `[0, 1]`.
pub fn render(spec: &SceneSpec) -> ImageFrame {
    let (h, w) = (spec.height, spec.width);
    let mut px = Array3::<f32>::zeros((3, h, w));
    for r in 0..h {
        for c in 0..w {
            let g = ground_texture(spec.ground_style, spec.seed, r, c);
            for ch in 0..3 {
                px[[ch, r, c]] = g[ch];
            }
        }
    }
    for o in &spec.obstacles {
        for r in o.y0..=o.y1.min(h - 1) {
            for c in o.x0..=o.x1.min(w - 1) {
                for ch in 0..3 {
                    px[[ch, r, c]] = o.color[ch];
                }
            }
        }
    }
    if spec.noise_level > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x4E01_5E));
        for v in px.iter_mut() {
            let n: f32 = rng.gen_range(-1.0f32..1.0);
            *v += spec.noise_level * n;
        }
    }
    px.mapv_inplace(|v| v.clamp(0.0, 1.0));
    ImageFrame::from_clipped(px)
}

/// Normalized cutoff line per section: `(bottom row + 1) / H` of the lowest
/// obstacle touching the section, 0 when the section is free.
pub fn ground_truth_cutoffs(spec: &SceneSpec, k: usize) -> Result<Vec<f64>> {
    let layout = SectionLayout::new(spec.width, k)?;
    Ok(layout
        .bands()
        .map(|band| {
            spec.obstacles
                .iter()
                .filter(|o| o.x0 < band.end && o.x1 >= band.start)
                .map(|o| o.y1.min(spec.height - 1))
                .max()
                .map_or(0.0, |row| (row + 1) as f64 / spec.height as f64)
        })
        .collect())
}

/// Per-section score `1 - (lowest obstacle row + 1) / H`; free sections score 1.
pub fn ground_truth(spec: &SceneSpec, k: usize) -> Result<TraversabilityVector> {
    TraversabilityVector::new(ground_truth_cutoffs(spec, k)?.into_iter().map(|c| 1.0 - c).collect())
}

/// Knobs for random scene generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub min_obstacles: usize,
    pub max_obstacles: usize,
    pub noise_level: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: DEFAULT_HEIGHT,
            width: DEFAULT_WIDTH,
            min_obstacles: 0,
            max_obstacles: 4,
            noise_level: 0.03,
        }
    }
}

/// Samples a scene. Geometry depends only on `seed`; colors depend on `seed` and `style`.
pub fn random_scene(cfg: &SceneConfig, style: GroundStyle, seed: u64) -> SceneSpec {
    let (h, w) = (cfg.height, cfg.width);
    let mut geo = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
    let mut look = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2 + style as u64));
    let count = geo.gen_range(cfg.min_obstacles..=cfg.max_obstacles.max(cfg.min_obstacles));
    let palette = style.palette();
    let mut obstacles = Vec::with_capacity(count);
    for _ in 0..count {
        let ow = ((w as f64 * geo.gen_range(0.08..0.40)).round() as usize).clamp(1, w);
        let x0 = geo.gen_range(0..=w - ow);
        let y1 = geo.gen_range((h as f64 * 0.15) as usize..h);
        let oh = ((h as f64 * geo.gen_range(0.08..0.45)).round() as usize).max(1);
        let y0 = y1.saturating_sub(oh - 1);
        let base = palette[look.gen_range(0..palette.len())];
        let shade: f32 = look.gen_range(0.85..1.15);
        let color = base.map(|c| (c * shade).clamp(0.0, 1.0));
        obstacles.push(Obstacle {
            x0,
            y0,
            x1: x0 + ow - 1,
            y1,
            color,
        });
    }
    SceneSpec {
        height: h,
        width: w,
        ground_style: style,
        obstacles,
        noise_level: cfg.noise_level,
        seed: derive_seed(seed, 3),
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub spec: SceneSpec,
    pub frame: ImageFrame,
    pub scores: TraversabilityVector,
    pub domain: Domain,
}

/// `n` scenes of one style; scene `i` uses geometry seed `derive_seed(seed, i)`.
pub fn generate_domain_set(
    n: usize,
    style: GroundStyle,
    seed: u64,
    cfg: &SceneConfig,
    k: usize,
) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::config("need at least one scene"));
    }
    (0..n as u64)
        .map(|i| {
            let spec = random_scene(cfg, style, derive_seed(seed, i));
            let scores = ground_truth(&spec, k)?;
            Ok(SyntheticSample {
                frame: render(&spec),
                scores,
                spec,
                domain: style.domain(),
            })
        })
        .collect()
}

/// Writes images, a manifest and annotation documents in the dataset formats.
/// Poses advance one meter per frame so frame selection keeps every frame.
pub fn export_dataset(dir: &Path, samples: &[SyntheticSample], k: usize, prefix: &str) -> Result<()> {
    let images = dir.join("images");
    let annotations = dir.join("annotations");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&annotations)?;
    let created_at = dataset::timestamp_now();
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = format!("images/{prefix}{i:05}.png");
        dataset::save_frame(&s.frame, &dir.join(&name))?;
        let cutoff_y = ground_truth_cutoffs(&s.spec, k)?;
        dataset::write_annotation(
            &annotations,
            &AnnotationDoc {
                image_path: name.clone(),
                k,
                cutoff_y,
                annotator_id: "synthworld".into(),
                created_at,
            },
        )?;
        records.push(FrameRecord {
            image_path: name,
            pose: PoseStamped::new(i as f64, 0.0, 0.0, i as u64, i as f64 / 15.0),
            domain: s.domain.clone(),
        });
    }
    dataset::write_manifest(&dir.join("manifest.jsonl"), &records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Oracle: boolean obstacle mask, then a per-column-band scan for the lowest blocked row.
    fn raster_oracle(spec: &SceneSpec, k: usize) -> Vec<f64> {
        let (h, w) = (spec.height, spec.width);
        let mut mask = vec![vec![false; w]; h];
        for o in &spec.obstacles {
            for row in mask.iter_mut().take(o.y1 + 1).skip(o.y0) {
                for cell in row.iter_mut().take(o.x1 + 1).skip(o.x0) {
                    *cell = true;
                }
            }
        }
        (0..k)
            .map(|i| {
                let (c0, c1) = (
                    ((i * w) as f64 / k as f64).round() as usize,
                    (((i + 1) * w) as f64 / k as f64).round() as usize,
                );
                let mut lowest = None;
                for (r, row) in mask.iter().enumerate() {
                    if row[c0..c1].iter().any(|&b| b) {
                        lowest = Some(r);
                    }
                }
                lowest.map_or(1.0, |r| 1.0 - (r + 1) as f64 / h as f64)
            })
            .collect()
    }

    #[test]
    fn empty_scene_is_ground_texture() {
        let spec = SceneSpec::empty(20, 30, GroundStyle::GrassLike, 9);
        let f = render(&spec);
        for r in 0..20 {
            for c in 0..30 {
                let g = ground_texture(GroundStyle::GrassLike, 9, r, c);
                for ch in 0..3 {
                    assert_eq!(f.pixels()[[ch, r, c]], g[ch]);
                }
            }
        }
        assert_eq!(ground_truth(&spec, 9).unwrap().scores(), &[1.0; 9]);
    }

    #[test]
    fn render_is_deterministic() {
        let spec = random_scene(&SceneConfig::default(), GroundStyle::AsphaltLike, 42);
        assert_eq!(render(&spec), render(&spec));
    }

    #[test]
    fn full_occlusion() {
        let mut spec = SceneSpec::empty(16, 18, GroundStyle::AsphaltLike, 1);
        spec.obstacles.push(Obstacle {
            x0: 0,
            y0: 0,
            x1: 17,
            y1: 15,
            color: [0.2, 0.4, 0.6],
        });
        let f = render(&spec);
        assert!(f.pixels().indexed_iter().all(|((ch, _, _), &v)| v == [0.2, 0.4, 0.6][ch]));
        assert_eq!(ground_truth(&spec, 9).unwrap().scores(), &[0.0; 9]);
        spec.noise_level = 0.05;
        let noisy = render(&spec);
        assert!(noisy
            .pixels()
            .indexed_iter()
            .all(|((ch, _, _), &v)| (v - [0.2, 0.4, 0.6][ch]).abs() <= 0.05 + 1e-6));
    }

    #[test]
    fn single_obstacle_example() {
        let mut spec = SceneSpec::empty(100, 90, GroundStyle::AsphaltLike, 0);
        spec.obstacles.push(Obstacle {
            x0: 30,
            y0: 10,
            x1: 59,
            y1: 39,
            color: [1.0, 0.0, 0.0],
        });
        let gt = ground_truth(&spec, 9).unwrap();
        let expected = raster_oracle(&spec, 9);
        assert_eq!(gt.scores(), expected.as_slice());
        for (i, s) in gt.scores().iter().enumerate() {
            let want = if (3..=5).contains(&i) { 0.60 } else { 1.0 };
            assert!((s - want).abs() < 1e-12, "section {i}: {s}");
        }
    }

    #[test]
    fn domains_share_geometry() {
        let cfg = SceneConfig {
            height: 32,
            width: 57,
            ..SceneConfig::default()
        };
        let a = generate_domain_set(20, GroundStyle::AsphaltLike, 5, &cfg, 9).unwrap();
        let b = generate_domain_set(20, GroundStyle::GrassLike, 5, &cfg, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.scores, y.scores);
            assert_ne!(x.frame, y.frame);
        }
    }

    #[test]
    fn domain_set_is_reproducible() {
        let cfg = SceneConfig {
            height: 24,
            width: 40,
            ..SceneConfig::default()
        };
        let checksum = |set: &[SyntheticSample]| {
            set.iter()
                .flat_map(|s| s.frame.pixels().iter().map(|v| v.to_bits() as u64))
                .fold(0u64, |acc, v| splitmix64(acc ^ v))
        };
        let a = generate_domain_set(200, GroundStyle::GrassLike, 77, &cfg, 9).unwrap();
        let b = generate_domain_set(200, GroundStyle::GrassLike, 77, &cfg, 9).unwrap();
        assert_eq!(checksum(&a), checksum(&b));
        assert!(generate_domain_set(0, GroundStyle::GrassLike, 77, &cfg, 9).is_err());
    }

    #[test]
    fn domain_appearance_separates() {
        let cfg = SceneConfig {
            height: 32,
            width: 57,
            ..SceneConfig::default()
        };
        let stats = |style| {
            let means: Vec<f64> = generate_domain_set(100, style, 11, &cfg, 9)
                .unwrap()
                .iter()
                .map(|s| {
                    let p = s.frame.pixels();
                    (p.index_axis(ndarray::Axis(0), 1).mean().unwrap()
                        - p.index_axis(ndarray::Axis(0), 0).mean().unwrap()) as f64
                })
                .collect();
            let n = means.len() as f64;
            let m = means.iter().sum::<f64>() / n;
            let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            (m, v, n)
        };
        let (ma, va, na) = stats(GroundStyle::AsphaltLike);
        let (mb, vb, nb) = stats(GroundStyle::GrassLike);
        let welch_t = (ma - mb).abs() / (va / na + vb / nb).sqrt();
        assert!(welch_t > 10.0, "t = {welch_t}");
    }

    #[test]
    fn export_round_trips_labels() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SceneConfig {
            height: 20,
            width: 27,
            ..SceneConfig::default()
        };
        let set = generate_domain_set(3, GroundStyle::AsphaltLike, 1, &cfg, 9).unwrap();
        export_dataset(dir.path(), &set, 9, "a_").unwrap();
        let m = dataset::Manifest::read(&dir.path().join("manifest.jsonl")).unwrap();
        let samples = dataset::load_samples(&m, Some(&dir.path().join("annotations")), None).unwrap();
        assert_eq!(samples.len(), 3);
        for (s, orig) in samples.iter().zip(&set) {
            assert_eq!(s.scores.as_ref().unwrap(), &orig.scores);
            let diff = (s.frame.pixels() - orig.frame.pixels()).mapv(f32::abs);
            assert!(diff.iter().all(|&d| d <= 0.5 / 255.0 + 1e-6));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn ground_truth_matches_raster(seed in any::<u64>(), k in 1usize..12) {
            let cfg = SceneConfig { height: 40, width: 61, max_obstacles: 6, ..SceneConfig::default() };
            let spec = random_scene(&cfg, GroundStyle::AsphaltLike, seed);
            spec.validate().unwrap();
            prop_assert_eq!(ground_truth(&spec, k).unwrap().into_inner(), raster_oracle(&spec, k));
        }
    }
}
